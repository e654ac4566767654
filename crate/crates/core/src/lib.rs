//! Imitation learning of stable camera motions for image-based visual
//! servoing.
//!
//! A camera observes four coplanar points and must bring their projections
//! to the desired image positions. Demonstrated motions are learned as
//! dynamical systems over the Cartesian error `eps = L⁺ e`:
//!
//! - [`rds`]: the classical law reshaped by a clocked regression term.
//! - [`clf`]: a regression flow corrected online by a learned Lyapunov function.
//! - [`fdm`]: a straight-line flow pushed through a learned diffeomorphism.
//!
//! [`vision`] simulates the camera and the servo loop, [`dataset`] builds
//! demonstrations and training sets, [`gmr`] is the mixture regression
//! shared by the first two methods, and [`harness`] runs experiments.

pub mod clf;
pub mod dataset;
pub mod error;
pub mod fdm;
pub mod gmr;
pub mod harness;
pub(crate) mod optim;
pub mod rds;
pub mod vision;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/visual-servoing.md")]
    mod visual_servoing {}
    #[doc = include_str!("../../../book/src/demonstrations.md")]
    mod demonstrations {}
    #[doc = include_str!("../../../book/src/mixture-regression.md")]
    mod mixture_regression {}
    #[doc = include_str!("../../../book/src/reshaped-dynamics.md")]
    mod reshaped_dynamics {}
    #[doc = include_str!("../../../book/src/clf-dm.md")]
    mod clf_dm {}
    #[doc = include_str!("../../../book/src/diffeomorphic-matching.md")]
    mod diffeomorphic_matching {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
