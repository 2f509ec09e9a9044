//! End-to-end object insertion.
//!
//! Three trajectories start from the same seeded noise: the original one under
//! the base prompt, the object one under the object prompt (box-guided), and
//! the edited one under the coalesced embedding. The edited trajectory takes
//! the object latent inside the box early on, has its object attention
//! enhanced, and at the inpainting step swaps everything outside the grown
//! object mask back to the original trajectory.

use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::{DenoiserBackend, EncodedPrompt, Trajectory};
use crate::coalesce::{coalesce, default_object_offset, object_token_index};
use crate::domain::{BinaryMask, EditSpec, Image, LayerId, Latent, PixelBox, Resolution};
use crate::error::{Error, Result, Stage, StageExt};
use crate::expansion::{expand, pick_inpaint_step, swap_latent, ExpansionTrace};
use crate::layout::{
    guidance_update, inject_latent, should_inject_attention, should_inject_latent, EnhanceHook,
    GuidanceState,
};
use crate::refocus::{components, morph_cleanup, refocus, RefocusOutcome, RefocusParams};

/// Standard normal latent from a seed.
pub fn gaussian_noise(shape: (usize, usize, usize), timestep: usize, seed: u64) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal));
    Latent::new(data, timestep).expect("gaussian samples are finite")
}

fn check_steps(total_steps: usize, backend: &dyn DenoiserBackend) -> Result<()> {
    let max = backend.descriptor().total_steps_supported;
    if total_steps == 0 || total_steps > max {
        return Err(Error::Config(format!(
            "total_steps {total_steps} outside [1, {max}] supported by the backend"
        )));
    }
    Ok(())
}

/// Denoises seeded noise under `prompt` for `total_steps` steps.
pub fn generate_base(
    prompt: &str,
    seed: u64,
    total_steps: usize,
    backend: &dyn DenoiserBackend,
) -> Result<(Image, Trajectory)> {
    check_steps(total_steps, backend).stage(Stage::Config, None)?;
    let e = backend.encode_text(prompt).stage(Stage::Encode, None)?;
    let noise = gaussian_noise(backend.descriptor().latent_shape, total_steps, seed);
    let traj = denoise_all(noise, &e.embedding, backend, Stage::Original)?;
    let image = backend.decode(traj.terminal()).stage(Stage::Decode, None)?;
    Ok((image, traj))
}

fn denoise_all(
    start: Latent,
    embedding: &crate::domain::EmbeddingMatrix,
    backend: &dyn DenoiserBackend,
    stage: Stage,
) -> Result<Trajectory> {
    let mut latents = vec![start.clone()];
    let mut x = start;
    while x.timestep() > 0 {
        let t = x.timestep();
        x = backend
            .denoise_step(&x, embedding, None)
            .stage(stage, Some(t))?
            .next_latent;
        latents.push(x.clone());
    }
    Trajectory::from_latents(latents)
}

/// What happened at one step of the edited trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub t: usize,
    pub latent_injected: bool,
    pub attention_enhanced: bool,
    pub inversion_injected: bool,
    pub swapped: bool,
    /// Energy history of the object trajectory's guidance at this step.
    pub guidance_energy: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditTraces {
    pub steps: Vec<StepEvent>,
    pub inpaint_step: usize,
    /// Object token row in the object prompt's own embedding.
    pub object_token_alone: usize,
    /// Object token row in the coalesced embedding.
    pub object_token: usize,
    pub refocus: RefocusOutcome,
    pub expansion: ExpansionTrace,
    pub real_image: bool,
}

impl EditTraces {
    pub fn step(&self, t: usize) -> Option<&StepEvent> {
        self.steps.iter().find(|e| e.t == t)
    }
}

/// Object-token attention row of one layer at one step of the edited
/// trajectory, after any enhancement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    pub t: usize,
    pub layer: LayerId,
    pub row: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct EditOutputs {
    pub base_image: Image,
    pub edited_image: Image,
    /// The box mask, or the segmentation mask for real-image edits.
    pub edit_mask: BinaryMask,
    /// Refocused mask on the refocus layer's grid.
    pub refocused_mask: BinaryMask,
    /// Grown mask on the latent grid.
    pub expanded_mask: BinaryMask,
    /// Grown mask at image resolution.
    pub expanded_mask_full: BinaryMask,
    pub traces: EditTraces,
    pub original: Trajectory,
    /// Edited latents after every in-step modification, indexed by timestep.
    pub edited: Trajectory,
    pub inverted: Option<Trajectory>,
    pub object_attention: Vec<AttentionSnapshot>,
}

struct Prompts {
    base: EncodedPrompt,
    object: EncodedPrompt,
    coalesced: crate::domain::EmbeddingMatrix,
    k_alone: usize,
    k: usize,
}

fn encode_prompts(spec: &EditSpec, backend: &dyn DenoiserBackend) -> Result<Prompts> {
    let base = backend.encode_text(&spec.base_prompt)?;
    let object = backend.encode_text(&spec.object_prompt)?;
    let offset = match spec.object_token_offset {
        Some(o) if o < object.tokens.len() => o,
        Some(o) => {
            return Err(Error::Config(format!(
                "object token offset {o} but the object prompt has {} tokens",
                object.tokens.len()
            )))
        }
        None => default_object_offset(&object.tokens)
            .ok_or_else(|| Error::Config("object prompt has no tokens".into()))?,
    };
    let window = object.embedding.rows();
    let coalesced = coalesce(&base.embedding, &object.embedding)?;
    let k = object_token_index(base.embedding.actual_tokens(), offset, window)?;
    let k_alone = object_token_index(0, offset, window)?;
    Ok(Prompts {
        base,
        object,
        coalesced,
        k_alone,
        k,
    })
}

/// Runs the generated-image or the real-image variant depending on whether
/// the `EditSpec` carries an object image.
pub fn run_edit(spec: &EditSpec, backend: &dyn DenoiserBackend) -> Result<EditOutputs> {
    run_edit_traced(spec, backend, &mut Vec::new())
}

/// [`run_edit`] that appends each finished step of the edited trajectory to
/// `steps`, so a failed edit still leaves its partial trace behind.
pub fn run_edit_traced(
    spec: &EditSpec,
    backend: &dyn DenoiserBackend,
    steps: &mut Vec<StepEvent>,
) -> Result<EditOutputs> {
    if spec.real_object_image.is_some() {
        edit_real_traced(spec, backend, steps)
    } else {
        edit_generated_traced(spec, backend, steps)
    }
}

/// Adds `spec.object_prompt` into the box of the image generated from
/// `spec.base_prompt` and `spec.seed`.
pub fn edit_generated(spec: &EditSpec, backend: &dyn DenoiserBackend) -> Result<EditOutputs> {
    edit_generated_traced(spec, backend, &mut Vec::new())
}

fn edit_generated_traced(
    spec: &EditSpec,
    backend: &dyn DenoiserBackend,
    steps: &mut Vec<StepEvent>,
) -> Result<EditOutputs> {
    if spec.real_object_image.is_some() {
        return Err(Error::Config("use edit_real for specs with an object image".into()));
    }
    let desc = backend.descriptor();
    spec.validate(desc.image_shape).stage(Stage::Config, None)?;
    check_steps(spec.config.total_steps, backend).stage(Stage::Config, None)?;
    let box_mask = spec.pixel_box.to_mask(desc.image_shape).stage(Stage::Config, None)?;
    let prompts = encode_prompts(spec, backend).stage(Stage::Encode, None)?;
    let noise = gaussian_noise(desc.latent_shape, spec.config.total_steps, spec.seed);
    let object_start = ObjectStart::Guided(noise.clone());
    run_trajectories(spec, backend, &prompts, noise, box_mask, object_start, None, steps)
}

enum ObjectStart {
    Guided(Latent),
    Inverted(Trajectory),
}

fn run_trajectories(
    spec: &EditSpec,
    backend: &dyn DenoiserBackend,
    prompts: &Prompts,
    noise: Latent,
    edit_mask: BinaryMask,
    object_start: ObjectStart,
    real: Option<&Trajectory>,
    steps: &mut Vec<StepEvent>,
) -> Result<EditOutputs> {
    let desc = backend.descriptor();
    let cfg = &spec.config;
    let total = cfg.total_steps;
    let latent_mask = edit_mask
        .resample(
            (desc.latent_shape.0, desc.latent_shape.1),
            Resolution::Latent,
        )
        .stage(Stage::Config, None)?;
    let inpaint_step = pick_inpaint_step(cfg, spec.seed).stage(Stage::Config, None)?;

    // (a) original trajectory
    let original = denoise_all(noise.clone(), &prompts.base.embedding, backend, Stage::Original)?;

    // (b) object trajectory, guided into the box unless it comes from inversion
    let mut guidance_log: Vec<Vec<f64>> = vec![Vec::new(); total + 1];
    let object: Trajectory = match object_start {
        ObjectStart::Inverted(inv) => denoise_all(
            inv.noise().clone(),
            &prompts.object.embedding,
            backend,
            Stage::Object,
        )?,
        ObjectStart::Guided(start) => {
            let mut latents = Vec::with_capacity(total + 1);
            let mut x = start;
            while x.timestep() > 0 {
                let t = x.timestep();
                let state = guidance_update(
                    GuidanceState::new(x),
                    backend,
                    &prompts.object.embedding,
                    &edit_mask,
                    prompts.k_alone,
                    cfg,
                )
                .stage(Stage::Object, Some(t))?;
                guidance_log[t] = state.energy_history;
                x = state.latent;
                latents.push(x.clone());
                x = backend
                    .denoise_step(&x, &prompts.object.embedding, None)
                    .stage(Stage::Object, Some(t))?
                    .next_latent;
            }
            latents.push(x);
            Trajectory::from_latents(latents)?
        }
    };

    // (c) edited trajectory
    let hook = EnhanceHook::new(prompts.k, cfg.enhance_scope, &edit_mask, backend)
        .stage(Stage::Edited, None)?;
    let refocus_spec = desc
        .layer(desc.refocus_layer)
        .copied()
        .ok_or_else(|| Error::Contract("refocus layer missing".into()))
        .stage(Stage::Refocus, None)?;
    let inversion_window = |t: usize| {
        t <= cfg.inversion_inject_step && t + cfg.inversion_inject_window > cfg.inversion_inject_step
    };

    steps.clear();
    let mut edited = Vec::with_capacity(total + 1);
    let mut snapshots = Vec::new();
    let mut refocus_result: Option<(RefocusOutcome, BinaryMask, ExpansionTrace)> = None;
    let mut x = noise;
    while x.timestep() > 0 {
        let t = x.timestep();
        let mut event = StepEvent {
            t,
            guidance_energy: std::mem::take(&mut guidance_log[t]),
            ..Default::default()
        };
        if should_inject_latent(t, cfg) {
            x = inject_latent(&x, object.at(t), &latent_mask).stage(Stage::Edited, Some(t))?;
            event.latent_injected = true;
        }
        if let Some(inv) = real {
            if inversion_window(t) {
                x = inject_latent(&x, inv.at(t), &latent_mask).stage(Stage::Edited, Some(t))?;
                event.inversion_injected = true;
            }
        }
        if t == inpaint_step {
            let maps = backend
                .attention(&x, &prompts.coalesced)
                .stage(Stage::Refocus, Some(t))?;
            let map = maps
                .iter()
                .find(|m| m.layer == refocus_spec.id)
                .ok_or_else(|| Error::Contract("backend omitted the refocus layer".into()))
                .stage(Stage::Refocus, Some(t))?;
            let mask_gamma = edit_mask
                .resample(
                    (refocus_spec.height, refocus_spec.width),
                    Resolution::Layer(refocus_spec.id),
                )
                .stage(Stage::Refocus, Some(t))?;
            let outcome = refocus(
                map.row(prompts.k),
                &mask_gamma,
                &RefocusParams {
                    k: cfg.cluster_count,
                    h1: cfg.h1_threshold,
                    min_component_size: cfg.min_component_size,
                    split_connected: cfg.split_connected_clusters,
                    seed: spec.seed,
                },
            )
            .stage(Stage::Refocus, Some(t))?;
            let seed_mask = outcome
                .mask
                .upsample(desc.image_shape, Resolution::Full)
                .and_then(|m| m.resample(x.spatial(), Resolution::Latent))
                .stage(Stage::Expansion, Some(t))?;
            let (grown, trace) = expand(&seed_mask, &x, cfg.h2_threshold).stage(Stage::Expansion, Some(t))?;
            x = swap_latent(&x, original.at(t), &grown).stage(Stage::Expansion, Some(t))?;
            event.swapped = true;
            refocus_result = Some((outcome, grown, trace));
        }
        edited.push(x.clone());

        let use_hook = should_inject_attention(t, cfg);
        event.attention_enhanced = use_hook;
        let out = backend
            .denoise_step(
                &x,
                &prompts.coalesced,
                use_hook.then_some(&hook as &dyn crate::backend::AttentionHook),
            )
            .stage(Stage::Edited, Some(t))?;
        for map in &out.attention {
            snapshots.push(AttentionSnapshot {
                t,
                layer: map.layer,
                row: map.row(prompts.k).to_owned(),
            });
        }
        steps.push(event);
        x = out.next_latent;
    }
    edited.push(x);
    let edited = Trajectory::from_latents(edited)?;

    let (outcome, expanded_mask, expansion) = refocus_result
        .ok_or_else(|| Error::Config(format!("inpaint step {inpaint_step} never reached")))
        .stage(Stage::Refocus, None)?;
    let expanded_mask_full = expanded_mask
        .upsample(desc.image_shape, Resolution::Full)
        .stage(Stage::Expansion, None)?;
    let base_image = backend.decode(original.terminal()).stage(Stage::Decode, None)?;
    let edited_image = backend.decode(edited.terminal()).stage(Stage::Decode, None)?;

    Ok(EditOutputs {
        base_image,
        edited_image,
        edit_mask,
        refocused_mask: outcome.mask.clone(),
        expanded_mask,
        expanded_mask_full,
        traces: EditTraces {
            steps: steps.clone(),
            inpaint_step,
            object_token_alone: prompts.k_alone,
            object_token: prompts.k,
            refocus: outcome,
            expansion,
            real_image: real.is_some(),
        },
        original,
        edited,
        inverted: real.cloned(),
        object_attention: snapshots,
    })
}

/// Real-object variant: the object comes from a user image on a white
/// background, placed into the box, and the segmentation replaces the box mask.
pub fn edit_real(spec: &EditSpec, backend: &dyn DenoiserBackend) -> Result<EditOutputs> {
    edit_real_traced(spec, backend, &mut Vec::new())
}

fn edit_real_traced(
    spec: &EditSpec,
    backend: &dyn DenoiserBackend,
    steps: &mut Vec<StepEvent>,
) -> Result<EditOutputs> {
    let desc = backend.descriptor();
    let object_image = spec
        .real_object_image
        .as_ref()
        .ok_or_else(|| Error::Config("real-image edit needs an object image".into()))
        .stage(Stage::Config, None)?;
    spec.validate(desc.image_shape).stage(Stage::Config, None)?;
    check_steps(spec.config.total_steps, backend).stage(Stage::Config, None)?;
    if !desc.invertible {
        return Err(Error::Capability("inversion").at_stage(Stage::Inversion, None));
    }
    let prompts = encode_prompts(spec, backend).stage(Stage::Encode, None)?;

    let seg = segment_white_background(object_image, WHITE_THRESHOLD).stage(Stage::Segmentation, None)?;
    let (canvas, m_prime) =
        place_object(object_image, &seg, &spec.pixel_box, desc.image_shape).stage(Stage::Segmentation, None)?;
    let latent_m = m_prime
        .resample((desc.latent_shape.0, desc.latent_shape.1), Resolution::Latent)
        .stage(Stage::Segmentation, None)?;
    if latent_m.is_empty() {
        return Err(Error::Segmentation(
            "object mask vanishes on the latent grid; draw a larger box".into(),
        )
        .at_stage(Stage::Segmentation, None));
    }

    let z0 = backend.encode_image(&canvas).stage(Stage::Inversion, None)?;
    let inverted = backend
        .invert(&z0, &prompts.object.embedding, spec.config.total_steps)
        .stage(Stage::Inversion, None)?;
    let noise = gaussian_noise(desc.latent_shape, spec.config.total_steps, spec.seed);
    run_trajectories(
        spec,
        backend,
        &prompts,
        noise,
        m_prime,
        ObjectStart::Inverted(inverted.clone()),
        Some(&inverted),
        steps,
    )
}

pub const WHITE_THRESHOLD: f64 = 0.9;

/// Foreground is every pixel whose darkest channel is below `threshold`;
/// the largest 4-connected component is kept and its holes filled.
pub fn segment_white_background(image: &Image, threshold: f64) -> Result<BinaryMask> {
    let px = image.data();
    let raw = BinaryMask::from_fn(image.spatial(), Resolution::Full, |i, j| {
        px.slice(s![i, j, ..]).iter().fold(f64::INFINITY, |a, &b| a.min(b)) < threshold
    });
    let largest = components(&raw, true)
        .into_iter()
        .max_by_key(|c| c.cells.len())
        .ok_or_else(|| Error::Segmentation("no foreground below the white threshold".into()))?;
    let mut mask = BinaryMask::zeros(raw.shape(), Resolution::Full);
    for (i, j) in largest.cells {
        mask.set(i, j, true);
    }
    Ok(morph_cleanup(&mask, 0))
}

/// Crops the segmented object, scales it into the box preserving aspect
/// ratio (centred, nearest-neighbour), and returns the white canvas with the
/// object pasted plus the placed object mask.
pub fn place_object(
    image: &Image,
    seg: &BinaryMask,
    pixel_box: &PixelBox,
    canvas_shape: (usize, usize),
) -> Result<(Image, BinaryMask)> {
    pixel_box.validate(canvas_shape)?;
    if seg.shape() != image.spatial() {
        return Err(Error::Shape("segmentation and image differ in size".into()));
    }
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for ((i, j), &v) in seg.data().indexed_iter() {
        if v == 1 {
            r0 = r0.min(i);
            r1 = r1.max(i + 1);
            c0 = c0.min(j);
            c1 = c1.max(j + 1);
        }
    }
    if r0 == usize::MAX {
        return Err(Error::Segmentation("empty segmentation".into()));
    }
    let (oh, ow) = ((r1 - r0) as f64, (c1 - c0) as f64);
    let scale = (pixel_box.height as f64 / oh).min(pixel_box.width as f64 / ow);
    let ph = ((oh * scale).round() as usize).clamp(1, pixel_box.height);
    let pw = ((ow * scale).round() as usize).clamp(1, pixel_box.width);
    let top = pixel_box.top + (pixel_box.height - ph) / 2;
    let left = pixel_box.left + (pixel_box.width - pw) / 2;

    let mut canvas = Image::filled(canvas_shape, [1.0, 1.0, 1.0]).data().clone();
    let mut mask = BinaryMask::zeros(canvas_shape, Resolution::Full);
    let src = image.data();
    for i in 0..ph {
        for j in 0..pw {
            let si = r0 + ((i as f64 + 0.5) * oh / ph as f64) as usize;
            let sj = c0 + ((j as f64 + 0.5) * ow / pw as f64) as usize;
            let (si, sj) = (si.min(r1 - 1), sj.min(c1 - 1));
            if seg.get(si, sj) {
                mask.set(top + i, left + j, true);
                canvas
                    .slice_mut(s![top + i, left + j, ..])
                    .assign(&src.slice(s![si, sj, ..]));
            }
        }
    }
    Ok((Image::new(canvas)?, mask))
}

/// Lifecycle of an edit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }
}

/// One edit request and, once run, its outputs.
pub struct EditJob {
    pub spec: EditSpec,
    pub status: JobStatus,
    pub outputs: Option<EditOutputs>,
    pub error: Option<Error>,
    /// Steps of the edited trajectory that finished, kept on failure too.
    pub steps: Vec<StepEvent>,
    pub rng_seed: u64,
}

impl EditJob {
    pub fn new(spec: EditSpec) -> Self {
        let rng_seed = spec.seed;
        Self {
            spec,
            status: JobStatus::Queued,
            outputs: None,
            error: None,
            steps: Vec::new(),
            rng_seed,
        }
    }

    pub fn run(&mut self, backend: &dyn DenoiserBackend) {
        self.status = JobStatus::Running;
        match run_edit_traced(&self.spec, backend, &mut self.steps) {
            Ok(out) => {
                self.outputs = Some(out);
                self.status = JobStatus::Done;
            }
            Err(e) => {
                self.error = Some(e);
                self.status = JobStatus::Failed;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyBackend;

    #[test]
    fn noise_is_seeded() {
        assert_eq!(gaussian_noise((4, 4, 2), 5, 1), gaussian_noise((4, 4, 2), 5, 1));
        assert_ne!(gaussian_noise((4, 4, 2), 5, 1), gaussian_noise((4, 4, 2), 5, 2));
    }

    #[test]
    fn base_generation_is_deterministic() {
        let b = ToyBackend::new(Default::default());
        let (img1, traj) = generate_base("a lake", 3, 20, &b).unwrap();
        let (img2, _) = generate_base("a lake", 3, 20, &b).unwrap();
        assert_eq!(img1, img2);
        assert_eq!(traj.len(), 21);
        assert_eq!(traj.noise().timestep(), 20);
    }

    #[test]
    fn black_square_segments_exactly() {
        let mut px = Image::filled((20, 20), [1.0; 3]).data().clone();
        px.slice_mut(s![5..12, 3..9, ..]).fill(0.0);
        let m = segment_white_background(&Image::new(px).unwrap(), WHITE_THRESHOLD).unwrap();
        assert_eq!(m.count(), 42);
        assert!(m.get(5, 3) && m.get(11, 8) && !m.get(12, 8));
    }

    #[test]
    fn white_image_fails_segmentation() {
        let img = Image::filled((8, 8), [1.0; 3]);
        assert!(matches!(
            segment_white_background(&img, WHITE_THRESHOLD),
            Err(Error::Segmentation(_))
        ));
    }

    #[test]
    fn segmentation_keeps_largest_component_and_fills_holes() {
        let mut px = Image::filled((20, 20), [1.0; 3]).data().clone();
        px.slice_mut(s![2..10, 2..10, ..]).fill(0.2);
        px.slice_mut(s![5..7, 5..7, ..]).fill(1.0);
        px.slice_mut(s![15..17, 15..17, ..]).fill(0.0);
        let m = segment_white_background(&Image::new(px).unwrap(), WHITE_THRESHOLD).unwrap();
        assert_eq!(m.count(), 64);
    }

    #[test]
    fn placement_fits_inside_box() {
        let mut px = Image::filled((30, 60), [1.0; 3]).data().clone();
        px.slice_mut(s![10..20, 10..50, ..]).fill(0.1);
        let img = Image::new(px).unwrap();
        let seg = segment_white_background(&img, WHITE_THRESHOLD).unwrap();
        let b = PixelBox::new(20, 30, 40, 40);
        let (canvas, m) = place_object(&img, &seg, &b, (128, 128)).unwrap();
        assert!(m.is_subset_of(&b.to_mask((128, 128)).unwrap()));
        // 40x10 object scaled by 1.0 into a 40x40 box, centred vertically.
        assert_eq!(m.count(), 400);
        assert!(m.get(35, 30) && !m.get(34, 30));
        assert_eq!(canvas.data()[[0, 0, 0]], 1.0);
    }

    #[test]
    fn job_status_transitions() {
        use JobStatus::*;
        assert!(Queued.can_become(Running));
        assert!(Running.can_become(Done) && Running.can_become(Failed));
        assert!(!Queued.can_become(Done) && !Done.can_become(Running));
    }
}
