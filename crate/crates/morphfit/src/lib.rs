//! morphfit: an inverse-graphics toolkit for linear morphable face models.
//!
//! The crate covers the full analysis-by-synthesis loop on synthetic
//! assets:
//!
//! * [`model`] / [`synth`]: morphable-model container format, validation,
//!   and procedural generation of test models.
//! * [`decode`]: linear synthesis of geometry and albedo, vertex normals.
//! * [`scene`]: orthographic camera and spherical-harmonics shading.
//! * [`raster`] / [`render`]: deterministic rasterization and the
//!   differentiable renderer (frozen-visibility gradients).
//! * [`losses`]: masked pixel, perceptual, landmark and regularization
//!   losses with analytic adjoints, combined into one face loss.
//! * [`fitter`]: Adam-based parameter fitting against an image plus
//!   landmarks, and evaluation metrics.
//! * [`head`] / [`dataset`]: an embedding-to-parameters MLP head trained
//!   purely through the rendering loss, with a synthetic dataset
//!   generator.
//! * [`harness`]: reproducible command entry points with run manifests
//!   (used by the `morphfit` binary).
//!
//! See the `examples/` directory for one runnable walkthrough per
//! capability.

// Numeric kernels index in lockstep across several buffers; explicit
// indices keep the accumulation order obvious.
#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod decode;
pub mod error;
pub mod fitter;
pub mod harness;
pub mod head;
pub mod image;
pub mod losses;
pub mod math;
pub mod model;
pub mod optim;
pub mod params;
pub mod raster;
pub mod render;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use model::{load_model, save_model, validate_model, MorphableModel, ThetaDims};
pub use params::{FaceParams, ParamBlock};
pub use render::{gradcheck, render, render_backward, RenderOutput};
pub use synth::gen_synthetic_model;
