//! Add a word-described object into a user-drawn box of a generated or real
//! image by steering a denoising backend's latents and cross-attention.

pub mod backend;
pub mod coalesce;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod expansion;
pub mod io;
pub mod jobs;
pub mod layout;
pub mod pipeline;
pub mod refocus;
pub mod service;

pub use backend::{by_name, DenoiserBackend, ToyBackend};
pub use domain::{BinaryMask, EditSpec, GuidanceConfig, Image, Latent, PixelBox};
pub use error::{Error, ErrorBody, Result, Stage};
pub use jobs::{execute, BackendRef, JobArtifacts, JobRequest, Manifest};
pub use pipeline::{edit_generated, edit_real, generate_base, run_edit, EditOutputs};
