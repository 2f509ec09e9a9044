//! The denoiser contract the pipeline drives, and a small deterministic
//! implementation of it.
//!
//! # Binding a latent-diffusion stack
//!
//! An adapter for a real text-to-image model wraps four pieces of the stack:
//!
//! * the text encoder, returning the full `(N, D)` hidden states together with
//!   the prompt's tokens (without start, end and pad tokens);
//! * the denoising network plus scheduler, advancing one timestep per
//!   [`DenoiserBackend::denoise_step`] call. Cross-attention processors must
//!   capture the spatial softmax output of every exposed layer (heads averaged)
//!   and route it through the optional [`AttentionHook`] before the attention
//!   values are mixed, so edits to a row change the step's output;
//! * the autoencoder, exposed through [`DenoiserBackend::encode_image`] and
//!   [`DenoiserBackend::decode`];
//! * optionally an inversion routine and an autograd path from the latent to the
//!   captured attention, declared through [`BackendDescriptor::invertible`] and
//!   [`BackendDescriptor::differentiable`].
//!
//! The descriptor must name a refocus layer; for Stable Diffusion 1.x this is a
//! 32×32 cross-attention layer of the decoder. Run [`conformance::check`]
//! against any new adapter.

pub mod conformance;
pub mod toy;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, CrossAttentionMap, EmbeddingMatrix, Image, LayerId, Latent};
use crate::error::{Error, Result};

pub use toy::{ToyBackend, ToyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: LayerId,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub latent_shape: (usize, usize, usize),
    pub image_shape: (usize, usize),
    pub attention_layers: Vec<LayerSpec>,
    /// Layer whose object-token map drives attention refocusing.
    pub refocus_layer: LayerId,
    /// `(N, D)` of the text encoder.
    pub embedding_dims: (usize, usize),
    pub total_steps_supported: usize,
    pub differentiable: bool,
    pub invertible: bool,
    /// Backend-specific parameters recorded for reproducibility.
    #[serde(default)]
    pub params: serde_json::Value,
}

impl BackendDescriptor {
    pub fn layer(&self, id: LayerId) -> Option<&LayerSpec> {
        self.attention_layers.iter().find(|l| l.id == id)
    }

    pub fn layer_ids(&self) -> Vec<LayerId> {
        self.attention_layers.iter().map(|l| l.id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dims.0 < 4 {
            return Err(Error::Contract("encoder window must be at least 4".into()));
        }
        if self.layer(self.refocus_layer).is_none() {
            return Err(Error::Contract(format!(
                "refocus layer {:?} is not among the exposed layers",
                self.refocus_layer
            )));
        }
        Ok(())
    }
}

/// Output of [`DenoiserBackend::encode_text`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPrompt {
    pub embedding: EmbeddingMatrix,
    /// Actual tokens in order; `tokens.len() == embedding.actual_tokens()`.
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub next_latent: Latent,
    /// One map per exposed layer, after any hook edits.
    pub attention: Vec<CrossAttentionMap>,
}

/// Edits a cross-attention map in place before the backend consumes it.
pub trait AttentionHook {
    fn edit(&self, map: &mut CrossAttentionMap);
}

/// Energy per layer together with the gradient of their sum.
#[derive(Clone, Debug)]
pub struct EnergyGradient {
    pub energies: Vec<(LayerId, f64)>,
    pub gradient: Array3<f64>,
}

impl EnergyGradient {
    pub fn total(&self) -> f64 {
        self.energies.iter().map(|(_, e)| e).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.energies.is_empty() {
            0.0
        } else {
            self.total() / self.energies.len() as f64
        }
    }
}

/// Latents of one trajectory indexed by timestep, `0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory(Vec<Latent>);

impl Trajectory {
    /// Builds from latents listed in any order; timesteps must be exactly `0..=T`.
    pub fn from_latents(mut latents: Vec<Latent>) -> Result<Self> {
        latents.sort_by_key(Latent::timestep);
        for (i, l) in latents.iter().enumerate() {
            if l.timestep() != i {
                return Err(Error::Contract(format!(
                    "trajectory missing timestep {i}"
                )));
            }
        }
        Ok(Self(latents))
    }

    pub fn at(&self, t: usize) -> &Latent {
        &self.0[t]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn terminal(&self) -> &Latent {
        &self.0[0]
    }

    pub fn noise(&self) -> &Latent {
        &self.0[self.0.len() - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Latent> {
        self.0.iter()
    }
}

/// A diffusion stack the editing pipeline can drive.
pub trait DenoiserBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn encode_text(&self, prompt: &str) -> Result<EncodedPrompt>;

    /// Advances `latent` from its timestep `t` to `t - 1`.
    fn denoise_step(
        &self,
        latent: &Latent,
        embedding: &EmbeddingMatrix,
        hook: Option<&dyn AttentionHook>,
    ) -> Result<StepOutput>;

    /// Attention maps the next step would produce for `latent`.
    fn attention(&self, latent: &Latent, embedding: &EmbeddingMatrix) -> Result<Vec<CrossAttentionMap>> {
        Ok(self.denoise_step(latent, embedding, None)?.attention)
    }

    /// Gradient with respect to the latent of the summed containment energy of
    /// token `k` over `layers`. `mask` may be at any resolution; it is
    /// resampled to each layer's grid.
    fn energy_gradient(
        &self,
        _latent: &Latent,
        _embedding: &EmbeddingMatrix,
        _mask: &BinaryMask,
        _k: usize,
        _layers: &[LayerId],
    ) -> Result<EnergyGradient> {
        Err(Error::Capability("energy gradient"))
    }

    /// Maps a clean latent back to the noise it would be denoised from,
    /// returning every intermediate latent.
    fn invert(
        &self,
        _terminal: &Latent,
        _embedding: &EmbeddingMatrix,
        _total_steps: usize,
    ) -> Result<Trajectory> {
        Err(Error::Capability("inversion"))
    }

    fn encode_image(&self, image: &Image) -> Result<Latent>;

    fn decode(&self, latent: &Latent) -> Result<Image>;
}

/// Backend names accepted on the command line and by the service.
pub const BACKEND_NAMES: [&str; 2] = ["toy", "toy-forward"];

/// Instantiates a backend by name.
///
/// `toy-forward` is the toy model with gradients and inversion switched off,
/// standing in for a stack that can only run forward.
pub fn by_name(name: &str, seed: u64) -> Result<Box<dyn DenoiserBackend>> {
    match name {
        "toy" => Ok(Box::new(ToyBackend::new(ToyConfig {
            seed,
            ..ToyConfig::default()
        }))),
        "toy-forward" => Ok(Box::new(ToyBackend::new(ToyConfig {
            seed,
            differentiable: false,
            invertible: false,
            ..ToyConfig::default()
        }))),
        other => Err(Error::Config(format!(
            "unknown backend '{other}', expected one of {BACKEND_NAMES:?}"
        ))),
    }
}
