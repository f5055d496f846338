//! Inverse design of self-occluding colored bar heightfields.
//!
//! A heightfield is a grid of square-footprint vertical bars, each with a
//! height and a uniform RGB color. Viewed from different directions the bars
//! occlude one another, so the apparent image changes with the viewpoint.
//! This crate renders such heightfields (both with a differentiable smooth
//! visibility model and with an exact hard-step model), computes analytic
//! gradients of an image-matching objective with respect to every bar height
//! and color, and optimizes the field so that its appearance from several
//! fixed viewing directions matches given target images. Optimized fields can
//! be exported as colored OBJ/MTL meshes suitable for full-color 3D printing.
//!
//! The main entry points are:
//!
//! - [`field::Heightfield`] and [`field::ViewSpec`] — the data model.
//! - [`render::render_view`] / [`render::render_hard`] — forward rendering.
//! - [`grad::backward`] — loss value plus analytic gradients.
//! - [`optim::optimize`] — the full design loop (Adam, coarse-to-fine,
//!   block coordinate descent, simulated annealing).
//! - [`optim::project_colors`] — post-optimization color projection onto
//!   per-bar vertical segments.
//! - [`io`] — config files, checkpoints, images, loss logs, mesh export.
//!
//! The `barcast` binary exposes the same functionality as subcommands; the
//! `examples/` directory holds one runnable example per major capability.

pub mod error;
pub mod experiments;
pub mod field;
pub mod grad;
pub mod heaviside;
pub mod img;
pub mod io;
pub mod loss;
pub mod optim;
pub mod render;

pub use error::{Error, Result};
