//! Value types shared by every stage of the editing pipeline, plus mask
//! resampling between image, latent and attention-layer grids.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a cross-attention layer exposed by a backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerId(pub usize);

/// Diffusion state at one timestep: an `(H, W, C)` grid of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    data: Array3<f64>,
    timestep: usize,
}

impl Latent {
    pub fn new(data: Array3<f64>, timestep: usize) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent"));
        }
        Ok(Self { data, timestep })
    }

    pub fn zeros(shape: (usize, usize, usize), timestep: usize) -> Self {
        Self {
            data: Array3::zeros(shape),
            timestep,
        }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn with_timestep(mut self, timestep: usize) -> Self {
        self.timestep = timestep;
        self
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (h, w, _) = self.data.dim();
        (h, w)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Channel vector at a cell.
    pub fn cell(&self, i: usize, j: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![i, j, ..])
    }

    /// Bit-level digest of the grid and timestep, used for trajectory
    /// isolation checks and reproducibility manifests.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.timestep as u64).to_le_bytes());
        for d in self.data.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.data.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Per-token spatial attention scores of one layer at one timestep,
/// stored as `(tokens, H_layer, W_layer)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossAttentionMap {
    pub layer: LayerId,
    pub timestep: usize,
    scores: Array3<f64>,
}

impl CrossAttentionMap {
    pub fn new(layer: LayerId, timestep: usize, scores: Array3<f64>) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract(
                "attention scores must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            layer,
            timestep,
            scores,
        })
    }

    pub fn scores(&self) -> &Array3<f64> {
        &self.scores
    }

    pub(crate) fn scores_mut(&mut self) -> &mut Array3<f64> {
        &mut self.scores
    }

    pub fn tokens(&self) -> usize {
        self.scores.dim().0
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, h, w) = self.scores.dim();
        (h, w)
    }

    pub fn row(&self, k: usize) -> ArrayView2<'_, f64> {
        self.scores.index_axis(Axis(0), k)
    }
}

/// Which grid a mask lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "layer")]
pub enum Resolution {
    Full,
    Latent,
    Layer(LayerId),
}

/// A `{0,1}` grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    data: Array2<u8>,
    resolution: Resolution,
}

impl BinaryMask {
    pub fn new(data: Array2<u8>, resolution: Resolution) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Contract("mask entries must be 0 or 1".into()));
        }
        Ok(Self { data, resolution })
    }

    pub fn from_fn(
        shape: (usize, usize),
        resolution: Resolution,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        Self {
            data: Array2::from_shape_fn(shape, |(i, j)| f(i, j) as u8),
            resolution,
        }
    }

    pub fn zeros(shape: (usize, usize), resolution: Resolution) -> Self {
        Self {
            data: Array2::zeros(shape),
            resolution,
        }
    }

    pub fn ones(shape: (usize, usize), resolution: Resolution) -> Self {
        Self {
            data: Array2::ones(shape),
            resolution,
        }
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn with_resolution(mut self, resolution: Resolution) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[[i, j]] == 1
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.data[[i, j]] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Elementwise `a ⊆ b`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(&a, &b)| a <= b)
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// Majority-vote downsampling; ties map to 1. Source blocks are the
    /// floor-partition of the source grid, so non-integer ratios are allowed.
    pub fn downsample(&self, target: (usize, usize), resolution: Resolution) -> Result<Self> {
        let (sh, sw) = self.shape();
        let (th, tw) = target;
        if th == 0 || tw == 0 || th > sh || tw > sw {
            return Err(Error::Resolution {
                from: (sh, sw),
                to: target,
            });
        }
        if (th, tw) == (sh, sw) {
            return Ok(self.clone().with_resolution(resolution));
        }
        let data = Array2::from_shape_fn(target, |(i, j)| {
            let (r0, r1) = (i * sh / th, (i + 1) * sh / th);
            let (c0, c1) = (j * sw / tw, (j + 1) * sw / tw);
            let block = self.data.slice(ndarray::s![r0..r1, c0..c1]);
            let ones = block.iter().filter(|&&v| v == 1).count();
            (2 * ones >= block.len()) as u8
        });
        Ok(Self { data, resolution })
    }

    /// Nearest-neighbour upsampling to a larger grid.
    pub fn upsample(&self, target: (usize, usize), resolution: Resolution) -> Result<Self> {
        let (sh, sw) = self.shape();
        let (th, tw) = target;
        if th < sh || tw < sw {
            return Err(Error::Resolution {
                from: (sh, sw),
                to: target,
            });
        }
        let data = Array2::from_shape_fn(target, |(i, j)| self.data[[i * sh / th, j * sw / tw]]);
        Ok(Self { data, resolution })
    }

    /// Resample to any grid, down by majority vote or up by replication.
    /// Mixed directions (taller but narrower) go up first, then down.
    pub fn resample(&self, target: (usize, usize), resolution: Resolution) -> Result<Self> {
        let (sh, sw) = self.shape();
        let (th, tw) = target;
        if th <= sh && tw <= sw {
            self.downsample(target, resolution)
        } else if th >= sh && tw >= sw {
            self.upsample(target, resolution)
        } else {
            self.upsample((th.max(sh), tw.max(sw)), resolution)?
                .downsample(target, resolution)
        }
    }
}

/// Text embedding `(N, D)`; `actual_tokens` excludes start, end and pad rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
    actual_tokens: usize,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>, actual_tokens: usize) -> Result<Self> {
        let n = data.nrows();
        if actual_tokens + 2 > n {
            return Err(Error::Overflow {
                needed: actual_tokens + 2,
                window: n,
            });
        }
        Ok(Self {
            data,
            actual_tokens,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn actual_tokens(&self) -> usize {
        self.actual_tokens
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// User box in full-resolution pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl PixelBox {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    /// Name of the first offending field, if the box does not fit.
    pub fn invalid_field(&self, image: (usize, usize)) -> Option<&'static str> {
        let (h, w) = image;
        if self.height == 0 {
            Some("height")
        } else if self.width == 0 {
            Some("width")
        } else if self.top >= h {
            Some("top")
        } else if self.left >= w {
            Some("left")
        } else if self.top + self.height > h {
            Some("height")
        } else if self.left + self.width > w {
            Some("width")
        } else {
            None
        }
    }

    pub fn validate(&self, image: (usize, usize)) -> Result<()> {
        match self.invalid_field(image) {
            None => Ok(()),
            Some(field) => Err(Error::Config(format!(
                "box {self:?} does not fit a {}x{} image ({field})",
                image.0, image.1
            ))),
        }
    }

    pub fn to_mask(&self, image: (usize, usize)) -> Result<BinaryMask> {
        self.validate(image)?;
        Ok(BinaryMask::from_fn(image, Resolution::Full, |i, j| {
            i >= self.top
                && i < self.top + self.height
                && j >= self.left
                && j < self.left + self.width
        }))
    }
}

/// Row vs. masked-region normalization for attention enhancement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceScope {
    /// Softmax over every spatial position of the row.
    #[default]
    Row,
    /// Softmax over the masked cells only; cells outside the mask get 0.
    Masked,
}

/// Tunables of the editing pipeline. Field names double as config-file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub total_steps: usize,
    pub latent_inject_frac: f64,
    pub attn_inject_frac: f64,
    /// Fixed swap step; `None` draws one from `(0.3T, 0.5T)` with the job seed.
    pub inpaint_step: Option<usize>,
    pub cluster_count: usize,
    pub h1_threshold: f64,
    pub h2_threshold: f64,
    pub guidance_lr: f64,
    pub guidance_iters: usize,
    pub guidance_energy_threshold: f64,
    /// `None` means every layer the backend exposes.
    pub guidance_layers: Option<Vec<LayerId>>,
    pub inversion_inject_step: usize,
    /// Number of consecutive steps, starting at `inversion_inject_step`,
    /// that receive the inverted latent.
    pub inversion_inject_window: usize,
    /// `None` means 1% of the refocus layer's area.
    pub min_component_size: Option<usize>,
    pub split_connected_clusters: bool,
    pub enhance_scope: EnhanceScope,
    /// Skip the `(0.3T, 0.5T)` range check on the swap step.
    pub allow_any_inpaint_step: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            total_steps: 50,
            latent_inject_frac: 0.2,
            attn_inject_frac: 0.3,
            inpaint_step: Some(15),
            cluster_count: 6,
            h1_threshold: 0.35,
            h2_threshold: 5.0,
            guidance_lr: 40.0,
            guidance_iters: 5,
            guidance_energy_threshold: 0.05,
            guidance_layers: None,
            inversion_inject_step: 39,
            inversion_inject_window: 1,
            min_component_size: None,
            split_connected_clusters: false,
            enhance_scope: EnhanceScope::Row,
            allow_any_inpaint_step: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.total_steps;
        let bad = |m: String| Err(Error::Config(m));
        if t == 0 {
            return bad("total_steps must be positive".into());
        }
        for (name, f) in [
            ("latent_inject_frac", self.latent_inject_frac),
            ("attn_inject_frac", self.attn_inject_frac),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {f}"));
            }
        }
        if self.cluster_count < 2 {
            return bad("cluster_count must be at least 2".into());
        }
        if !(self.h1_threshold > 0.0 && self.h1_threshold < 1.0) {
            return bad(format!("h1_threshold must lie in (0, 1), got {}", self.h1_threshold));
        }
        if !(self.h2_threshold > 0.0) {
            return bad(format!("h2_threshold must be positive, got {}", self.h2_threshold));
        }
        if !self.guidance_lr.is_finite() || self.guidance_lr < 0.0 {
            return bad("guidance_lr must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.guidance_energy_threshold) {
            return bad("guidance_energy_threshold must lie in [0, 1]".into());
        }
        if self.inversion_inject_step == 0 || self.inversion_inject_step > t {
            return bad(format!(
                "inversion_inject_step must lie in [1, {t}], got {}",
                self.inversion_inject_step
            ));
        }
        if self.inversion_inject_window == 0 {
            return bad("inversion_inject_window must be at least 1".into());
        }
        match self.inpaint_step {
            Some(s) if s == 0 || s > t => {
                return bad(format!("inpaint_step must lie in [1, {t}], got {s}"));
            }
            Some(s) if !self.allow_any_inpaint_step && !self.inpaint_in_middle_range(s) => {
                return bad(format!(
                    "inpaint_step {s} outside the middle range [{}, {}] for T = {t}",
                    0.3 * t as f64,
                    0.5 * t as f64
                ));
            }
            Some(s) if self.attn_window_reaches(s) => {
                return bad(format!(
                    "inpaint_step {s} overlaps the attention injection window"
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Closed range `[0.3T, 0.5T]`, so the default step 15 at T = 50 passes.
    pub fn inpaint_in_middle_range(&self, step: usize) -> bool {
        let t = self.total_steps as f64;
        let s = step as f64;
        s >= 0.3 * t - 1e-9 && s <= 0.5 * t + 1e-9
    }

    fn attn_window_reaches(&self, step: usize) -> bool {
        let t = self.total_steps as f64;
        ((self.total_steps - step) as f64) < self.attn_inject_frac * t
    }
}

/// RGB image, `(H, W, 3)`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.dim().2 != 3 {
            return Err(Error::Shape(format!(
                "image must have 3 channels, got {}",
                data.dim().2
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self {
            data: data.mapv(|v| v.clamp(0.0, 1.0)),
        })
    }

    pub fn filled(shape: (usize, usize), rgb: [f64; 3]) -> Self {
        Self {
            data: Array3::from_shape_fn((shape.0, shape.1, 3), |(_, _, c)| rgb[c]),
        }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (h, w, _) = self.data.dim();
        (h, w)
    }

    /// 8-bit quantization, `round(255 v)`.
    pub fn to_u8(&self) -> Array3<u8> {
        self.data.mapv(|v| (v * 255.0).round() as u8)
    }

    pub fn from_u8(pixels: &Array3<u8>) -> Result<Self> {
        Self::new(pixels.mapv(|v| f64::from(v) / 255.0))
    }
}

/// One edit request: add `object_prompt` into `pixel_box` of the image
/// generated from `base_prompt` with `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    pub base_prompt: String,
    pub object_prompt: String,
    /// Position of the object noun among the object prompt's tokens;
    /// `None` picks the last non-article token.
    #[serde(default)]
    pub object_token_offset: Option<usize>,
    #[serde(rename = "box")]
    pub pixel_box: PixelBox,
    pub seed: u64,
    #[serde(default)]
    pub config: GuidanceConfig,
    #[serde(skip)]
    pub real_object_image: Option<Image>,
}

impl EditSpec {
    pub fn new(base_prompt: &str, object_prompt: &str, pixel_box: PixelBox, seed: u64) -> Self {
        Self {
            base_prompt: base_prompt.to_owned(),
            object_prompt: object_prompt.to_owned(),
            object_token_offset: None,
            pixel_box,
            seed,
            config: GuidanceConfig::default(),
            real_object_image: None,
        }
    }

    pub fn validate(&self, image: (usize, usize)) -> Result<()> {
        if self.object_prompt.trim().is_empty() {
            return Err(Error::Config("object prompt must not be empty".into()));
        }
        self.pixel_box.validate(image)?;
        self.config.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn full(data: Array2<u8>) -> BinaryMask {
        BinaryMask::new(data, Resolution::Full).unwrap()
    }

    #[test]
    fn downsample_constant_mask() {
        let m = BinaryMask::ones((64, 64), Resolution::Full);
        let d = m.downsample((32, 32), Resolution::Layer(LayerId(0))).unwrap();
        assert_eq!(d.shape(), (32, 32));
        assert_eq!(d.count(), 32 * 32);
    }

    #[test]
    fn downsample_majority_by_hand() {
        let m = full(array![
            [1, 1, 0, 0],
            [1, 1, 0, 0],
            [0, 0, 0, 0],
            [0, 0, 0, 0]
        ]);
        let d = m.downsample((2, 2), Resolution::Latent).unwrap();
        assert_eq!(d.data(), &array![[1, 0], [0, 0]]);
    }

    #[test]
    fn downsample_ties_go_to_one() {
        let m = full(array![[1, 0], [0, 1]]);
        let d = m.downsample((1, 1), Resolution::Latent).unwrap();
        assert_eq!(d.data(), &array![[1]]);
        let m = full(array![[1, 0], [0, 0]]);
        assert_eq!(m.downsample((1, 1), Resolution::Latent).unwrap().count(), 0);
    }

    #[test]
    fn downsample_box_area_preserved_within_border_ring() {
        let b = PixelBox::new(100, 120, 180, 200);
        let m = b.to_mask((512, 512)).unwrap();
        let d = m.downsample((32, 32), Resolution::Latent).unwrap();
        let scale = 32.0 / 512.0;
        let expected = (180.0 * scale) * (200.0 * scale);
        // One ring around a (180/16) x (200/16) rectangle.
        let ring = 2.0 * (180.0 * scale + 200.0 * scale) + 4.0;
        assert!((d.count() as f64 - expected).abs() <= ring);
    }

    #[test]
    fn downsample_rejects_larger_target() {
        let m = BinaryMask::ones((8, 8), Resolution::Full);
        assert!(matches!(
            m.downsample((16, 16), Resolution::Latent),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn downsample_identity_at_equal_resolution() {
        let m = full(array![[1, 0], [0, 1]]);
        let d = m.downsample((2, 2), Resolution::Full).unwrap();
        assert_eq!(d, m);
    }

    #[test]
    fn upsample_by_hand() {
        let m = full(array![[1]]);
        assert_eq!(m.upsample((2, 2), Resolution::Full).unwrap().count(), 4);
        let m = full(array![[1, 0], [0, 0]]);
        let u = m.upsample((4, 4), Resolution::Full).unwrap();
        assert_eq!(
            u.data(),
            &array![
                [1, 1, 0, 0],
                [1, 1, 0, 0],
                [0, 0, 0, 0],
                [0, 0, 0, 0]
            ]
        );
    }

    #[test]
    fn upsample_rejects_smaller_target() {
        let m = BinaryMask::ones((8, 8), Resolution::Full);
        assert!(m.upsample((4, 4), Resolution::Full).is_err());
    }

    proptest! {
        #[test]
        fn upsample_then_downsample_is_identity(bits in proptest::collection::vec(0u8..2, 32 * 32)) {
            let layer = Resolution::Layer(LayerId(1));
            let m = BinaryMask::new(Array2::from_shape_vec((32, 32), bits).unwrap(), layer).unwrap();
            let up = m.upsample((512, 512), Resolution::Full).unwrap();
            let back = up.downsample((32, 32), layer).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn downsample_keeps_binary_codomain(bits in proptest::collection::vec(0u8..2, 12 * 12), t in 1usize..12) {
            let m = BinaryMask::new(Array2::from_shape_vec((12, 12), bits).unwrap(), Resolution::Full).unwrap();
            let d = m.downsample((t, t), Resolution::Latent).unwrap();
            prop_assert!(d.data().iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn box_validation_names_field() {
        let b = PixelBox::new(10, 10, 100, 20);
        assert_eq!(b.invalid_field((64, 64)), Some("height"));
        assert_eq!(PixelBox::new(0, 70, 1, 1).invalid_field((64, 64)), Some("left"));
        assert_eq!(PixelBox::new(0, 0, 0, 1).invalid_field((64, 64)), Some("height"));
        assert!(PixelBox::new(0, 0, 64, 64).validate((64, 64)).is_ok());
    }

    #[test]
    fn default_config_is_valid() {
        GuidanceConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_inpaint_step_outside_middle_range() {
        let mut c = GuidanceConfig {
            inpaint_step: Some(30),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.allow_any_inpaint_step = true;
        c.validate().unwrap();
        c.inpaint_step = Some(40);
        // Still rejected: overlaps the attention injection window.
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_rejects_bad_thresholds() {
        for c in [
            GuidanceConfig {
                cluster_count: 1,
                ..Default::default()
            },
            GuidanceConfig {
                h1_threshold: 1.0,
                ..Default::default()
            },
            GuidanceConfig {
                h2_threshold: 0.0,
                ..Default::default()
            },
            GuidanceConfig {
                latent_inject_frac: 0.0,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_parses_from_toml_keys() {
        let c: GuidanceConfig = toml::from_str("cluster_count = 4\nh2_threshold = 2.5\n").unwrap();
        assert_eq!(c.cluster_count, 4);
        assert_eq!(c.h2_threshold, 2.5);
        assert_eq!(c.total_steps, 50);
        assert!(toml::from_str::<GuidanceConfig>("bogus = 1").is_err());
    }

    #[test]
    fn embedding_rejects_too_many_tokens() {
        assert!(EmbeddingMatrix::new(Array2::zeros((4, 2)), 3).is_err());
        assert!(EmbeddingMatrix::new(Array2::zeros((4, 2)), 2).is_ok());
    }

    #[test]
    fn latent_rejects_nan() {
        let mut a = Array3::zeros((2, 2, 1));
        a[[0, 0, 0]] = f64::NAN;
        assert!(Latent::new(a, 3).is_err());
    }
}
