//! Synthetic velocity models, acoustic shot simulation and a UNet that
//! maps shot gathers back to velocity models.
//!
//! The modules follow the pipeline: [`geology`] draws models on a
//! [`grid::Grid2D`], [`wave`] simulates shot gathers over them, [`dataset`]
//! stores both on disk, and [`train`] fits a [`unet`] built on the
//! reverse-mode engine in [`nn`]. [`metrics`] scores predictions.

mod binio;
mod error;

pub mod dataset;
pub mod geology;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod train;
pub mod unet;
pub mod wave;

pub use error::{Error, Result};

// The book's code blocks run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/velocity-models.md")]
    mod velocity_models {}
    #[doc = include_str!("../../../book/src/wave-simulation.md")]
    mod wave_simulation {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/unet.md")]
    mod unet {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/determinism.md")]
    mod determinism {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
