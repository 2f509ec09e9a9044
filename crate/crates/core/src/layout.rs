//! Keeps the added object inside the user box: backward guidance on the
//! object trajectory, latent injection into the edited trajectory, and
//! enhancement of the object token's cross-attention.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::backend::{AttentionHook, DenoiserBackend};
use crate::domain::{
    BinaryMask, CrossAttentionMap, EmbeddingMatrix, EnhanceScope, GuidanceConfig, LayerId, Latent,
};
use crate::error::{Error, Result};

/// Squared shortfall of the fraction of row `k`'s mass inside the mask.
pub fn energy(attn: &CrossAttentionMap, mask_gamma: &BinaryMask, k: usize) -> Result<f64> {
    if k >= attn.tokens() {
        return Err(Error::Contract(format!("token {k} outside the attention map")));
    }
    row_energy(attn.row(k), mask_gamma, k)
}

pub(crate) fn row_energy(row: ArrayView2<'_, f64>, mask: &BinaryMask, k: usize) -> Result<f64> {
    if row.dim() != mask.shape() {
        return Err(Error::Shape(format!(
            "attention {:?} vs mask {:?}",
            row.dim(),
            mask.shape()
        )));
    }
    let total: f64 = row.sum();
    if total <= 0.0 {
        return Err(Error::DegenerateAttention { token: k });
    }
    let inside: f64 = row
        .iter()
        .zip(mask.data().iter())
        .map(|(a, &m)| a * f64::from(m))
        .sum();
    Ok((1.0 - inside / total).powi(2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceState {
    pub latent: Latent,
    /// Mean energy over the guidance layers, recorded before every update and
    /// once after the last one.
    pub energy_history: Vec<f64>,
    pub iterations_used: usize,
}

impl GuidanceState {
    pub fn new(latent: Latent) -> Self {
        Self {
            latent,
            energy_history: Vec::new(),
            iterations_used: 0,
        }
    }
}

/// Layers used for guidance: the configured set, or every exposed layer.
pub fn guidance_layers(config: &GuidanceConfig, backend: &dyn DenoiserBackend) -> Vec<LayerId> {
    config
        .guidance_layers
        .clone()
        .unwrap_or_else(|| backend.descriptor().layer_ids())
}

/// Gradient descent on the latent against the summed containment energy.
/// Stops after `guidance_iters` updates or once the mean energy drops below
/// `guidance_energy_threshold`.
pub fn guidance_update(
    mut state: GuidanceState,
    backend: &dyn DenoiserBackend,
    e_w: &EmbeddingMatrix,
    mask: &BinaryMask,
    k: usize,
    config: &GuidanceConfig,
) -> Result<GuidanceState> {
    if k >= e_w.rows() {
        return Err(Error::Contract(format!("token {k} outside the embedding")));
    }
    let layers = guidance_layers(config, backend);
    let t = state.latent.timestep();
    loop {
        let eg = backend.energy_gradient(&state.latent, e_w, mask, k, &layers)?;
        let mean = eg.mean();
        if !mean.is_finite() {
            return Err(Error::GuidanceDiverged {
                history: state.energy_history,
            });
        }
        state.energy_history.push(mean);
        if state.iterations_used >= config.guidance_iters || mean < config.guidance_energy_threshold {
            break;
        }
        if eg.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::GuidanceDiverged {
                history: state.energy_history,
            });
        }
        let next = state.latent.data() - &(eg.gradient * config.guidance_lr);
        state.latent = Latent::new(next, t).map_err(|_| Error::GuidanceDiverged {
            history: state.energy_history.clone(),
        })?;
        state.iterations_used += 1;
    }
    Ok(state)
}

pub(crate) fn blend(base: &Latent, donor: &Latent, mask: &BinaryMask) -> Result<Latent> {
    if base.timestep() != donor.timestep() {
        return Err(Error::TrajectoryAlignment {
            left: base.timestep(),
            right: donor.timestep(),
        });
    }
    if base.shape() != donor.shape() {
        return Err(Error::Shape(format!(
            "latents {:?} vs {:?}",
            base.shape(),
            donor.shape()
        )));
    }
    if mask.shape() != base.spatial() {
        return Err(Error::Shape(format!(
            "mask {:?} vs latent grid {:?}",
            mask.shape(),
            base.spatial()
        )));
    }
    let mut out = base.data().clone();
    for ((i, j), &m) in mask.data().indexed_iter() {
        if m == 1 {
            out.slice_mut(ndarray::s![i, j, ..])
                .assign(&donor.data().slice(ndarray::s![i, j, ..]));
        }
    }
    Latent::new(out, base.timestep())
}

/// `(1 - M) ⊙ edited + M ⊙ object_traj`, with the mask on the latent grid.
pub fn inject_latent(edited: &Latent, object_traj: &Latent, mask: &BinaryMask) -> Result<Latent> {
    blend(edited, object_traj, mask)
}

/// Pre-softmax grid for the enhanced row: `max(avg(row), 1) · M`.
pub fn enhancement_logits(row: ArrayView2<'_, f64>, mask_gamma: &BinaryMask) -> Array2<f64> {
    let level = row.mean().unwrap_or(0.0).max(1.0);
    mask_gamma.as_f64() * level
}

#[derive(Clone, Debug)]
pub struct Enhancement {
    pub map: CrossAttentionMap,
    /// The mask was empty and the map is returned unchanged.
    pub skipped: bool,
}

/// Replaces row `k` by the softmax of [`enhancement_logits`]. Other rows are
/// untouched.
pub fn enhance_attention(
    attn: &CrossAttentionMap,
    mask_gamma: &BinaryMask,
    k: usize,
    scope: EnhanceScope,
) -> Result<Enhancement> {
    if mask_gamma.shape() != attn.spatial() {
        return Err(Error::Shape(format!(
            "mask {:?} vs attention {:?}",
            mask_gamma.shape(),
            attn.spatial()
        )));
    }
    if k >= attn.tokens() {
        return Err(Error::Contract(format!("token {k} outside the attention map")));
    }
    let mut map = attn.clone();
    if mask_gamma.is_empty() {
        return Ok(Enhancement { map, skipped: true });
    }
    let logits = enhancement_logits(attn.row(k), mask_gamma);
    let row = match scope {
        EnhanceScope::Row => softmax_all(&logits),
        EnhanceScope::Masked => softmax_masked(&logits, mask_gamma),
    };
    map.scores_mut().index_axis_mut(Axis(0), k).assign(&row);
    Ok(Enhancement { map, skipped: false })
}

fn softmax_all(logits: &Array2<f64>) -> Array2<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|v| (v - max).exp());
    let z = exp.sum();
    exp / z
}

fn softmax_masked(logits: &Array2<f64>, mask: &BinaryMask) -> Array2<f64> {
    let max = Zip::from(logits)
        .and(mask.data())
        .fold(f64::NEG_INFINITY, |a, &l, &m| if m == 1 { a.max(l) } else { a });
    let mut exp = Array2::zeros(logits.dim());
    Zip::from(&mut exp)
        .and(logits)
        .and(mask.data())
        .for_each(|e, &l, &m| {
            if m == 1 {
                *e = (l - max).exp();
            }
        });
    let z = exp.sum();
    exp / z
}

fn in_leading_fraction(t: usize, frac: f64, total: usize) -> bool {
    if t > total {
        return false;
    }
    ((total - t) as f64) < frac * total as f64 - 1e-9
}

/// True while `t` is within the first `latent_inject_frac` of the schedule.
pub fn should_inject_latent(t: usize, config: &GuidanceConfig) -> bool {
    in_leading_fraction(t, config.latent_inject_frac, config.total_steps)
}

/// True while `t` is within the first `attn_inject_frac` of the schedule.
pub fn should_inject_attention(t: usize, config: &GuidanceConfig) -> bool {
    in_leading_fraction(t, config.attn_inject_frac, config.total_steps)
}

/// Hook applying [`enhance_attention`] to token `k` on every layer, with the
/// mask pre-resampled per layer.
pub struct EnhanceHook {
    pub k: usize,
    pub scope: EnhanceScope,
    pub masks: Vec<(LayerId, BinaryMask)>,
}

impl EnhanceHook {
    pub fn new(k: usize, scope: EnhanceScope, mask: &BinaryMask, backend: &dyn DenoiserBackend) -> Result<Self> {
        let masks = backend
            .descriptor()
            .attention_layers
            .iter()
            .map(|l| {
                mask.resample((l.height, l.width), crate::domain::Resolution::Layer(l.id))
                    .map(|m| (l.id, m))
            })
            .collect::<Result<_>>()?;
        Ok(Self { k, scope, masks })
    }
}

impl AttentionHook for EnhanceHook {
    fn edit(&self, map: &mut CrossAttentionMap) {
        let Some((_, mask)) = self.masks.iter().find(|(id, _)| *id == map.layer) else {
            return;
        };
        if let Ok(e) = enhance_attention(map, mask, self.k, self.scope) {
            *map = e.map;
        }
    }
}
