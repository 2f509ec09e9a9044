//! Deterministic, differentiable and exactly invertible stand-in for a
//! latent-diffusion stack.
//!
//! The latent's channels are split in two halves `(x1, x2)`. One step from `t`
//! to `t - 1` is an affine coupling:
//!
//! ```text
//! A      = spatial softmax of <proj_layer(e_n), smooth(x2)>   per layer, token n
//! f      = value_gain * sum_n w_n v_n,   w_n = token share of pooled A,
//!          v_n = first layer's query direction of token n
//! x1'    = decay * R1_t x1 + f(x2)
//! x2'    = decay * R2_t x2 + feedback_gain * s * tanh(x1' / s)
//! ```
//!
//! `R1_t`, `R2_t` are per-step rotations of channel pairs. Because `f` only
//! reads `x2` and the second update only reads `x1'`, the step inverts in
//! closed form. Attention depends smoothly on `x2`, so the containment energy
//! has an analytic gradient.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    AttentionHook, BackendDescriptor, DenoiserBackend, EncodedPrompt, EnergyGradient, LayerSpec,
    StepOutput, Trajectory,
};
use crate::domain::{
    BinaryMask, CrossAttentionMap, EmbeddingMatrix, Image, LayerId, Latent, Resolution,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    /// Latent grid side.
    pub latent_size: usize,
    /// Must be even.
    pub channels: usize,
    /// Image pixels per latent cell along each axis.
    pub image_scale: usize,
    /// Upsampling factors of the exposed attention layers.
    pub layer_factors: Vec<usize>,
    pub window: usize,
    pub embed_dim: usize,
    pub decay: f64,
    pub temperature: f64,
    pub value_gain: f64,
    pub feedback_gain: f64,
    /// Saturation scale of the feedback nonlinearity.
    pub feedback_scale: f64,
    /// Weight of the 3x3 box filter applied to x2 before attention.
    pub blur: f64,
    /// Amplitude, in radians, of the per-step channel-pair rotations.
    pub rotation: f64,
    pub color_scale: f64,
    /// Weight of the prompt-mean term mixed into every token, emulating a
    /// text encoder whose tokens see each other.
    pub context_mix: f64,
    pub total_steps_supported: usize,
    pub differentiable: bool,
    pub invertible: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latent_size: 16,
            channels: 4,
            image_scale: 32,
            layer_factors: vec![1, 2],
            window: 16,
            embed_dim: 8,
            decay: 0.97,
            temperature: 0.8,
            value_gain: 1.0,
            feedback_gain: 0.6,
            feedback_scale: 1.0,
            blur: 0.5,
            rotation: 0.05,
            color_scale: 16.0,
            context_mix: 0.25,
            total_steps_supported: 1000,
            differentiable: true,
            invertible: true,
        }
    }
}

struct Layer {
    spec: LayerSpec,
    factor: usize,
    /// `(half, D)`: maps a token embedding to its query direction in x2-space.
    mix: Array2<f64>,
}

pub struct ToyBackend {
    config: ToyConfig,
    descriptor: BackendDescriptor,
    layers: Vec<Layer>,
    /// `(half, D)`
    values: Array2<f64>,
    /// `(half, half)`
    /// `(3, C)` with orthonormal rows.
    color: Array2<f64>,
    cls: Array1<f64>,
    eos: Array1<f64>,
    pad: Array1<f64>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal))
}

fn normal_mat(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Gram-Schmidt on random rows.
fn orthonormal_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = normal_mat(rng, (rows, cols), 1.0);
    for i in 0..rows {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let rj = m.row(j).to_owned();
            m.row_mut(i).scaled_add(-proj, &rj);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        m.row_mut(i).mapv_inplace(|v| v / norm);
    }
    m
}

pub(crate) fn tokenize(prompt: &str) -> Vec<String> {
    prompt
        .split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

impl ToyBackend {
    pub fn new(config: ToyConfig) -> Self {
        assert!(config.channels >= 2 && config.channels % 2 == 0, "channels must be even");
        assert!(config.channels >= 3, "colorization needs at least 3 channels");
        assert!(!config.layer_factors.is_empty(), "at least one attention layer");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let half = config.channels / 2;
        let d = config.embed_dim;
        let size = config.latent_size;

        let layers: Vec<Layer> = config
            .layer_factors
            .iter()
            .enumerate()
            .map(|(i, &factor)| {
                let mix = normal_mat(&mut rng, (half, d), config.temperature / (d as f64).sqrt());
                Layer {
                    spec: LayerSpec {
                        id: LayerId(i),
                        height: size * factor,
                        width: size * factor,
                    },
                    factor,
                    mix,
                }
            })
            .collect();
        // Token values share the first layer's query directions and the
        // feedback is elementwise, so a token written into x1 raises its own
        // attention logits at the next step.
        let values = &layers[0].mix / config.temperature;
        let color = orthonormal_rows(&mut rng, 3, config.channels);
        let cls = normal_vec(&mut rng, d);
        let eos = normal_vec(&mut rng, d);
        let pad = normal_vec(&mut rng, d);

        // Prefer a native 32x32 layer for refocusing, else the finest one.
        let refocus_layer = layers
            .iter()
            .find(|l| (l.spec.height, l.spec.width) == (32, 32))
            .or_else(|| layers.iter().max_by_key(|l| l.spec.height * l.spec.width))
            .map(|l| l.spec.id)
            .expect("non-empty layers");

        let descriptor = BackendDescriptor {
            name: if config.invertible || config.differentiable {
                "toy".into()
            } else {
                "toy-forward".into()
            },
            latent_shape: (size, size, config.channels),
            image_shape: (size * config.image_scale, size * config.image_scale),
            attention_layers: layers.iter().map(|l| l.spec).collect(),
            refocus_layer,
            embedding_dims: (config.window, d),
            total_steps_supported: config.total_steps_supported,
            differentiable: config.differentiable,
            invertible: config.invertible,
            params: serde_json::to_value(&config).expect("serializable config"),
        };

        Self {
            config,
            descriptor,
            layers,
            values,
            color,
            cls,
            eos,
            pad,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn half(&self) -> usize {
        self.config.channels / 2
    }

    fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.config.seed);
        normal_vec(&mut rng, self.config.embed_dim)
    }

    fn check_latent(&self, latent: &Latent) -> Result<()> {
        if latent.shape() != self.descriptor.latent_shape {
            return Err(Error::Shape(format!(
                "latent {:?}, backend expects {:?}",
                latent.shape(),
                self.descriptor.latent_shape
            )));
        }
        Ok(())
    }

    fn check_embedding(&self, e: &EmbeddingMatrix) -> Result<()> {
        if e.data().dim() != self.descriptor.embedding_dims {
            return Err(Error::Shape(format!(
                "embedding {:?}, backend expects {:?}",
                e.data().dim(),
                self.descriptor.embedding_dims
            )));
        }
        Ok(())
    }

    fn angles(&self, t: usize) -> (f64, f64) {
        let phase = (self.config.seed % 997) as f64 * 0.013;
        let t = t as f64;
        let a = self.config.rotation;
        (a * (1.3 * t + phase).sin(), a * (0.7 * t + 2.0 * phase).cos())
    }

    /// 3x3 box average with zero padding, applied per channel. Symmetric, so
    /// it is its own adjoint.
    fn blur(x: &Array3<f64>) -> Array3<f64> {
        let (h, w, c) = x.dim();
        let mut out = Array3::zeros((h, w, c));
        for i in 0..h {
            for j in 0..w {
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if a < 0 || b < 0 || a >= h as i64 || b >= w as i64 {
                            continue;
                        }
                        for ch in 0..c {
                            out[[i, j, ch]] += x[[a as usize, b as usize, ch]] / 9.0;
                        }
                    }
                }
            }
        }
        out
    }

    /// `(1 - blur) x + blur * box3x3(x)`; symmetric like the box filter.
    fn smooth(&self, x: &Array3<f64>) -> Array3<f64> {
        let a = self.config.blur;
        if a == 0.0 {
            return x.clone();
        }
        Self::blur(x) * a + x * (1.0 - a)
    }

    /// Per-token query directions of one layer, `(N, half)`.
    fn projections(&self, layer: &Layer, e: &EmbeddingMatrix) -> Array2<f64> {
        e.data().dot(&layer.mix.t())
    }

    /// Logits at latent-cell resolution, `(N, H, W)`.
    fn cell_logits(proj: &Array2<f64>, blurred: &Array3<f64>) -> Array3<f64> {
        let (h, w, half) = blurred.dim();
        let flat = blurred
            .to_shape((h * w, half))
            .expect("contiguous")
            .to_owned();
        let logits = proj.dot(&flat.t());
        logits
            .into_shape_with_order((proj.nrows(), h, w))
            .expect("reshape logits")
    }

    /// Spatial softmax of cell logits replicated onto the layer grid.
    fn layer_scores(logits: &Array3<f64>, factor: usize) -> Array3<f64> {
        let (n, h, w) = logits.dim();
        let mut scores = Array3::zeros((n, h * factor, w * factor));
        let f2 = (factor * factor) as f64;
        for tok in 0..n {
            let row = logits.index_axis(Axis(0), tok);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exp = row.mapv(|v| (v - max).exp());
            let z = exp.sum() * f2;
            for i in 0..h * factor {
                for j in 0..w * factor {
                    scores[[tok, i, j]] = exp[[i / factor, j / factor]] / z;
                }
            }
        }
        scores
    }

    fn attention_maps(&self, x2: &Array3<f64>, e: &EmbeddingMatrix, t: usize) -> Vec<CrossAttentionMap> {
        let blurred = self.smooth(x2);
        self.layers
            .iter()
            .map(|layer| {
                let logits = Self::cell_logits(&self.projections(layer, e), &blurred);
                let scores = Self::layer_scores(&logits, layer.factor);
                CrossAttentionMap::new(layer.spec.id, t, scores).expect("softmax is non-negative")
            })
            .collect()
    }

    /// Coupling term added to `x1`, from (possibly edited) attention.
    fn value_field(&self, maps: &[CrossAttentionMap], e: &EmbeddingMatrix) -> Array3<f64> {
        let size = self.config.latent_size;
        let n = e.rows();
        let mut pooled = Array3::<f64>::zeros((n, size, size));
        for (map, layer) in maps.iter().zip(&self.layers) {
            let f = layer.factor;
            let sc = map.scores();
            for tok in 0..n {
                for i in 0..size * f {
                    for j in 0..size * f {
                        pooled[[tok, i / f, j / f]] += sc[[tok, i, j]];
                    }
                }
            }
        }
        let token_values = e.data().dot(&self.values.t()); // (N, half)
        let half = self.half();
        let mut field = Array3::zeros((size, size, half));
        for i in 0..size {
            for j in 0..size {
                let col = pooled.slice(s![.., i, j]);
                let total: f64 = col.sum();
                if total <= 0.0 {
                    continue;
                }
                for tok in 0..n {
                    let wgt = col[tok] / total;
                    for ch in 0..half {
                        field[[i, j, ch]] += self.config.value_gain * wgt * token_values[[tok, ch]];
                    }
                }
            }
        }
        field
    }

    fn rotate_pairs(v: &mut [f64], theta: f64) {
        let (sn, cs) = theta.sin_cos();
        for pair in v.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = cs * a - sn * b;
            pair[1] = sn * a + cs * b;
        }
    }

    fn feedback_term(&self, x1: &[f64]) -> Vec<f64> {
        let sc = self.config.feedback_scale;
        x1.iter()
            .map(|z| self.config.feedback_gain * sc * (z / sc).tanh())
            .collect()
    }

    fn split(&self, x: &Array3<f64>) -> (Array3<f64>, Array3<f64>) {
        let half = self.half();
        (
            x.slice(s![.., .., ..half]).to_owned(),
            x.slice(s![.., .., half..]).to_owned(),
        )
    }

    fn inverse_step(&self, next: &Latent, e: &EmbeddingMatrix) -> Result<Latent> {
        let t = next.timestep() + 1;
        let (a1, a2) = self.angles(t);
        let decay = self.config.decay;
        let half = self.half();
        let (x1n, x2n) = self.split(next.data());
        let size = self.config.latent_size;

        let mut x2 = Array3::zeros((size, size, half));
        for i in 0..size {
            for j in 0..size {
                let fb = self.feedback_term(x1n.slice(s![i, j, ..]).as_slice().expect("contiguous"));
                let mut v: Vec<f64> = (0..half).map(|c| (x2n[[i, j, c]] - fb[c]) / decay).collect();
                Self::rotate_pairs(&mut v, -a2);
                for c in 0..half {
                    x2[[i, j, c]] = v[c];
                }
            }
        }
        let maps = self.attention_maps(&x2, e, t);
        let field = self.value_field(&maps, e);
        let mut out = Array3::zeros(next.shape());
        for i in 0..size {
            for j in 0..size {
                let mut v: Vec<f64> = (0..half)
                    .map(|c| (x1n[[i, j, c]] - field[[i, j, c]]) / decay)
                    .collect();
                Self::rotate_pairs(&mut v, -a1);
                for c in 0..half {
                    out[[i, j, c]] = v[c];
                    out[[i, j, half + c]] = x2[[i, j, c]];
                }
            }
        }
        Latent::new(out, t)
    }
}

impl DenoiserBackend for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode_text(&self, prompt: &str) -> Result<EncodedPrompt> {
        let tokens = tokenize(prompt);
        let (n, d) = self.descriptor.embedding_dims;
        if tokens.len() + 2 > n {
            return Err(Error::Overflow {
                needed: tokens.len() + 2,
                window: n,
            });
        }
        let base: Vec<Array1<f64>> = tokens.iter().map(|t| self.token_vector(t)).collect();
        let mut mean = Array1::zeros(d);
        for b in &base {
            mean += b;
        }
        if !base.is_empty() {
            mean /= base.len() as f64;
        }
        let mut data = Array2::zeros((n, d));
        data.row_mut(0).assign(&self.cls);
        for (i, b) in base.iter().enumerate() {
            data.row_mut(i + 1).assign(&(b + &(&mean * self.config.context_mix)));
        }
        data.row_mut(tokens.len() + 1).assign(&self.eos);
        for r in tokens.len() + 2..n {
            data.row_mut(r).assign(&self.pad);
        }
        Ok(EncodedPrompt {
            embedding: EmbeddingMatrix::new(data, tokens.len())?,
            tokens,
        })
    }

    fn denoise_step(
        &self,
        latent: &Latent,
        embedding: &EmbeddingMatrix,
        hook: Option<&dyn AttentionHook>,
    ) -> Result<StepOutput> {
        self.check_latent(latent)?;
        self.check_embedding(embedding)?;
        let t = latent.timestep();
        if t == 0 {
            return Err(Error::TerminalState);
        }
        let (a1, a2) = self.angles(t);
        let decay = self.config.decay;
        let half = self.half();
        let size = self.config.latent_size;
        let (x1, x2) = self.split(latent.data());

        let mut maps = self.attention_maps(&x2, embedding, t);
        if let Some(hook) = hook {
            for m in &mut maps {
                hook.edit(m);
            }
        }
        let field = self.value_field(&maps, embedding);

        let mut out = Array3::zeros(latent.shape());
        for i in 0..size {
            for j in 0..size {
                let mut v1: Vec<f64> = x1.slice(s![i, j, ..]).to_vec();
                Self::rotate_pairs(&mut v1, a1);
                for c in 0..half {
                    v1[c] = decay * v1[c] + field[[i, j, c]];
                }
                let fb = self.feedback_term(&v1);
                let mut v2: Vec<f64> = x2.slice(s![i, j, ..]).to_vec();
                Self::rotate_pairs(&mut v2, a2);
                for c in 0..half {
                    out[[i, j, c]] = v1[c];
                    out[[i, j, half + c]] = decay * v2[c] + fb[c];
                }
            }
        }
        Ok(StepOutput {
            next_latent: Latent::new(out, t - 1)?,
            attention: maps,
        })
    }

    fn attention(&self, latent: &Latent, embedding: &EmbeddingMatrix) -> Result<Vec<CrossAttentionMap>> {
        self.check_latent(latent)?;
        self.check_embedding(embedding)?;
        let (_, x2) = self.split(latent.data());
        Ok(self.attention_maps(&x2, embedding, latent.timestep()))
    }

    fn energy_gradient(
        &self,
        latent: &Latent,
        embedding: &EmbeddingMatrix,
        mask: &BinaryMask,
        k: usize,
        layers: &[LayerId],
    ) -> Result<EnergyGradient> {
        if !self.config.differentiable {
            return Err(Error::Capability("energy gradient"));
        }
        self.check_latent(latent)?;
        self.check_embedding(embedding)?;
        if k >= embedding.rows() {
            return Err(Error::Contract(format!("token {k} outside the embedding")));
        }
        let size = self.config.latent_size;
        let half = self.half();
        let (_, x2) = self.split(latent.data());
        let blurred = self.smooth(&x2);

        let mut energies = Vec::with_capacity(layers.len());
        let mut grad_blur = Array3::<f64>::zeros((size, size, half));
        for id in layers {
            let layer = self
                .layers
                .iter()
                .find(|l| l.spec.id == *id)
                .ok_or_else(|| Error::Contract(format!("unknown layer {id:?}")))?;
            let f = layer.factor;
            let m = mask.resample((size * f, size * f), Resolution::Layer(*id))?;
            let proj = self.projections(layer, embedding);
            let logits = Self::cell_logits(&proj, &blurred);
            let scores = Self::layer_scores(&logits, f);
            let row = scores.index_axis(Axis(0), k);

            let total: f64 = row.sum();
            if total <= 0.0 {
                return Err(Error::DegenerateAttention { token: k });
            }
            let inside: f64 = row.iter().zip(m.data().iter()).map(|(a, &b)| a * f64::from(b)).sum();
            let ratio = inside / total;
            energies.push((*id, (1.0 - ratio).powi(2)));

            // dE/dA, then back through the softmax.
            let g_a = Array2::from_shape_fn(row.dim(), |(i, j)| {
                -2.0 * (1.0 - ratio) * (f64::from(m.data()[[i, j]]) - ratio) / total
            });
            let mean_g: f64 = row.iter().zip(g_a.iter()).map(|(a, g)| a * g).sum();
            let pk = proj.row(k);
            for i in 0..size * f {
                for j in 0..size * f {
                    let g_s = row[[i, j]] * (g_a[[i, j]] - mean_g);
                    for c in 0..half {
                        grad_blur[[i / f, j / f, c]] += g_s * pk[c];
                    }
                }
            }
        }
        let grad_x2 = self.smooth(&grad_blur);
        let mut gradient = Array3::zeros(latent.shape());
        gradient.slice_mut(s![.., .., half..]).assign(&grad_x2);
        Ok(EnergyGradient { energies, gradient })
    }

    fn invert(
        &self,
        terminal: &Latent,
        embedding: &EmbeddingMatrix,
        total_steps: usize,
    ) -> Result<Trajectory> {
        if !self.config.invertible {
            return Err(Error::Capability("inversion"));
        }
        self.check_latent(terminal)?;
        self.check_embedding(embedding)?;
        let mut latents = Vec::with_capacity(total_steps + 1);
        let mut cur = terminal.clone().with_timestep(0);
        latents.push(cur.clone());
        for _ in 0..total_steps {
            cur = self.inverse_step(&cur, embedding)?;
            latents.push(cur.clone());
        }
        Trajectory::from_latents(latents)
    }

    fn encode_image(&self, image: &Image) -> Result<Latent> {
        let (ih, iw) = image.spatial();
        if (ih, iw) != self.descriptor.image_shape {
            return Err(Error::Shape(format!(
                "image {ih}x{iw}, backend expects {:?}",
                self.descriptor.image_shape
            )));
        }
        let size = self.config.latent_size;
        let sc = self.config.image_scale;
        let px = image.data();
        let area = (sc * sc) as f64;
        let mut out = Array3::zeros(self.descriptor.latent_shape);
        for i in 0..size {
            for j in 0..size {
                let block = px.slice(s![i * sc..(i + 1) * sc, j * sc..(j + 1) * sc, ..]);
                let rgb = block.sum_axis(Axis(0)).sum_axis(Axis(0)) / area;
                let y = (rgb - 0.5) * self.config.color_scale;
                let x = self.color.t().dot(&y);
                out.slice_mut(s![i, j, ..]).assign(&x);
            }
        }
        Latent::new(out, 0)
    }

    fn decode(&self, latent: &Latent) -> Result<Image> {
        self.check_latent(latent)?;
        let sc = self.config.image_scale;
        let (h, w) = self.descriptor.image_shape;
        let cells = latent.data();
        let mut rgb = Array3::<f64>::zeros((self.config.latent_size, self.config.latent_size, 3));
        for i in 0..self.config.latent_size {
            for j in 0..self.config.latent_size {
                let y = self.color.dot(&cells.slice(s![i, j, ..]));
                for c in 0..3 {
                    rgb[[i, j, c]] = (0.5 + y[c] / self.config.color_scale).clamp(0.0, 1.0);
                }
            }
        }
        Image::new(Array3::from_shape_fn((h, w, 3), |(i, j, c)| rgb[[i / sc, j / sc, c]]))
    }
}
