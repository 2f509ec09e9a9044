//! Checks every backend implementation must pass before the pipeline can
//! rely on it.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::DenoiserBackend;
use crate::domain::{Latent, PixelBox};
use crate::error::{Error, Result};

/// Runs the shape, determinism, attention non-negativity and capability
/// declaration checks. Returns the names of the checks that passed.
pub fn check(backend: &dyn DenoiserBackend, seed: u64) -> Result<Vec<&'static str>> {
    let desc = backend.descriptor().clone();
    desc.validate()?;
    let mut passed = vec!["descriptor"];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = desc.total_steps_supported.min(10).max(1);
    let latent = Latent::new(
        Array3::from_shape_fn(desc.latent_shape, |_| rng.sample::<f64, _>(StandardNormal)),
        t,
    )?;
    let prompt = backend.encode_text("a small test prompt")?;
    if prompt.embedding.data().dim() != desc.embedding_dims {
        return Err(Error::Contract("embedding shape differs from descriptor".into()));
    }
    if prompt.tokens.len() != prompt.embedding.actual_tokens() {
        return Err(Error::Contract("token list disagrees with actual_tokens".into()));
    }

    let a = backend.denoise_step(&latent, &prompt.embedding, None)?;
    if a.next_latent.shape() != desc.latent_shape || a.next_latent.timestep() != t - 1 {
        return Err(Error::Contract("step output shape or timestep wrong".into()));
    }
    if a.attention.len() != desc.attention_layers.len() {
        return Err(Error::Contract("one attention map per layer expected".into()));
    }
    for (map, spec) in a.attention.iter().zip(&desc.attention_layers) {
        if map.layer != spec.id || map.spatial() != (spec.height, spec.width) {
            return Err(Error::Contract(format!("attention map for {:?} mis-shaped", spec.id)));
        }
        if map.tokens() != desc.embedding_dims.0 {
            return Err(Error::Contract("attention token count differs from N".into()));
        }
        if map.scores().iter().any(|v| *v < 0.0) {
            return Err(Error::Contract("negative attention".into()));
        }
    }
    passed.push("shapes");
    passed.push("attention_non_negative");

    let b = backend.denoise_step(&latent, &prompt.embedding, None)?;
    if a.next_latent != b.next_latent || a.attention != b.attention {
        return Err(Error::Contract("denoise_step is not deterministic".into()));
    }
    if backend.encode_text("a small test prompt")? != prompt {
        return Err(Error::Contract("encode_text is not deterministic".into()));
    }
    passed.push("determinism");

    let mask = PixelBox::new(0, 0, desc.image_shape.0 / 2, desc.image_shape.1 / 2)
        .to_mask(desc.image_shape)?;
    match backend.energy_gradient(&latent, &prompt.embedding, &mask, 1, &desc.layer_ids()) {
        Ok(g) if desc.differentiable => {
            if g.gradient.dim() != desc.latent_shape {
                return Err(Error::Contract("gradient shape differs from latent".into()));
            }
        }
        Err(Error::Capability(_)) if !desc.differentiable => {}
        Ok(_) => return Err(Error::Contract("undeclared differentiability".into())),
        Err(e) => return Err(e),
    }
    let clean = latent.clone().with_timestep(0);
    match backend.invert(&clean, &prompt.embedding, 3) {
        Ok(traj) if desc.invertible => {
            if traj.len() != 4 {
                return Err(Error::Contract("inversion trajectory must have T + 1 latents".into()));
            }
        }
        Err(Error::Capability(_)) if !desc.invertible => {}
        Ok(_) => return Err(Error::Contract("undeclared invertibility".into())),
        Err(e) => return Err(e),
    }
    passed.push("capabilities");

    let img = backend.decode(&a.next_latent)?;
    if img.spatial() != desc.image_shape {
        return Err(Error::Contract("decoded image size differs from descriptor".into()));
    }
    if backend.encode_image(&img)?.shape() != desc.latent_shape {
        return Err(Error::Contract("encoded latent shape differs from descriptor".into()));
    }
    passed.push("codec");
    Ok(passed)
}
