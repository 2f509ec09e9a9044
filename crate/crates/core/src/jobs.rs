//! Single entry point shared by the command line and the HTTP service: a job
//! request goes in, named artifacts and a reproducibility manifest come out.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{by_name, BackendDescriptor, DenoiserBackend};
use crate::domain::{EditSpec, Image};
use crate::error::{Error, Result, Stage};
use crate::io::{decode_png, heatmap_png, image_png, mask_png, sha256_hex};
use crate::pipeline::{generate_base, run_edit_traced, AttentionSnapshot, EditTraces, StepEvent};

pub const MANIFEST_VERSION: u32 = 1;

/// Which backend to build, by registered name and weight seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRef {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
}

impl BackendRef {
    pub fn new(name: &str, seed: u64) -> Self {
        Self {
            name: name.to_owned(),
            seed,
        }
    }

    pub fn build(&self) -> Result<Box<dyn DenoiserBackend>> {
        by_name(&self.name, self.seed)
    }
}

impl Default for BackendRef {
    fn default() -> Self {
        Self::new("toy", 0)
    }
}

fn default_steps() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobRequest {
    Generate {
        prompt: String,
        seed: u64,
        #[serde(default = "default_steps")]
        total_steps: usize,
    },
    /// Generated-image edit, or real-image edit when the `EditSpec` carries an
    /// object image.
    Edit { spec: EditSpec },
}

impl JobRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            JobRequest::Generate { .. } => "generate",
            JobRequest::Edit { spec } if spec.real_object_image.is_some() => "edit_real",
            JobRequest::Edit { .. } => "edit",
        }
    }
}

/// Everything needed to reproduce a job's outputs, plus their hashes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub kind: String,
    pub backend: BackendRef,
    pub descriptor: BackendDescriptor,
    pub request: JobRequest,
    /// Hash of the object image of a real-image edit, stored as `object.png`.
    pub object_image_sha256: Option<String>,
    pub inpaint_step: Option<usize>,
    /// SHA-256 of every artifact file, by file name.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    /// Canonical hash of the manifest itself.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

/// Outputs of a finished job.
#[derive(Clone, Debug)]
pub struct JobArtifacts {
    /// File name to bytes.
    pub files: BTreeMap<String, Vec<u8>>,
    pub manifest: Manifest,
    pub traces: Option<EditTraces>,
    pub attention: Vec<AttentionSnapshot>,
}

impl JobArtifacts {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    /// Grayscale overlay of the object token's map at step `t`, layer index
    /// `layer`.
    pub fn attention_png(&self, t: usize, layer: usize) -> Option<Result<Vec<u8>>> {
        self.attention
            .iter()
            .find(|s| s.t == t && s.layer.0 == layer)
            .map(|s| heatmap_png(&s.row))
    }

    /// Writes every file plus `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }
}

/// A failed job with whatever trace it produced before failing.
#[derive(Debug)]
pub struct JobFailure {
    pub error: Error,
    pub steps: Vec<StepEvent>,
}

impl From<Error> for JobFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            steps: Vec::new(),
        }
    }
}

/// Runs a job on a freshly built backend.
pub fn execute(request: &JobRequest, backend: &BackendRef) -> Result<JobArtifacts, JobFailure> {
    let model = backend.build()?;
    execute_with(request, backend, model.as_ref())
}

/// Runs a job on an existing backend instance built from `backend_ref`.
pub fn execute_with(
    request: &JobRequest,
    backend_ref: &BackendRef,
    backend: &dyn DenoiserBackend,
) -> Result<JobArtifacts, JobFailure> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut traces = None;
    let mut attention = Vec::new();
    let mut object_image_sha256 = None;
    let mut inpaint_step = None;
    match request {
        JobRequest::Generate {
            prompt,
            seed,
            total_steps,
        } => {
            let (image, _) = generate_base(prompt, *seed, *total_steps, backend)?;
            files.insert("base.png".into(), image_png(&image)?);
        }
        JobRequest::Edit { spec } => {
            // The object image is stored as 8-bit PNG; run on exactly those
            // pixels so a replay from disk reproduces the outputs.
            let mut spec = spec.clone();
            if let Some(img) = spec.real_object_image.take() {
                let bytes = image_png(&img)?;
                object_image_sha256 = Some(sha256_hex(&bytes));
                spec.real_object_image = Some(decode_png(&bytes)?);
                files.insert("object.png".into(), bytes);
            }
            let mut steps = Vec::new();
            let out = match run_edit_traced(&spec, backend, &mut steps) {
                Ok(out) => out,
                Err(error) => return Err(JobFailure { error, steps }),
            };
            let enc = |r: Result<Vec<u8>>| r.map_err(|e| e.at_stage(Stage::Decode, None));
            files.insert("base.png".into(), enc(image_png(&out.base_image))?);
            files.insert("edited.png".into(), enc(image_png(&out.edited_image))?);
            files.insert("edit_mask.png".into(), enc(mask_png(&out.edit_mask))?);
            files.insert("refocused_mask.png".into(), enc(mask_png(&out.refocused_mask))?);
            files.insert("expanded_mask.png".into(), enc(mask_png(&out.expanded_mask))?);
            files.insert(
                "expanded_mask_full.png".into(),
                enc(mask_png(&out.expanded_mask_full))?,
            );
            files.insert(
                "traces.json".into(),
                serde_json::to_vec_pretty(&out.traces).map_err(Error::from)?,
            );
            inpaint_step = Some(out.traces.inpaint_step);
            traces = Some(out.traces);
            attention = out.object_attention;
        }
    }
    let outputs = files
        .iter()
        .map(|(k, v)| (k.clone(), sha256_hex(v)))
        .collect();
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_owned(),
        kind: request.kind().to_owned(),
        backend: backend_ref.clone(),
        descriptor: backend.descriptor().clone(),
        request: request.clone(),
        object_image_sha256,
        inpaint_step,
        outputs,
    };
    Ok(JobArtifacts {
        files,
        manifest,
        traces,
        attention,
    })
}

/// Re-runs the job a manifest describes. `object_image` must be supplied for
/// real-image edits (it is stored next to the manifest as `object.png`).
pub fn replay(manifest: &Manifest, object_image: Option<Image>) -> Result<JobArtifacts> {
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "manifest version {} is not supported",
            manifest.format_version
        )));
    }
    let backend = manifest.backend.build()?;
    if backend.descriptor() != &manifest.descriptor {
        return Err(Error::Config(
            "backend descriptor differs from the one recorded in the manifest".into(),
        ));
    }
    let mut request = manifest.request.clone();
    if let JobRequest::Edit { spec } = &mut request {
        if manifest.object_image_sha256.is_some() {
            spec.real_object_image = Some(
                object_image.ok_or_else(|| Error::Config("real-image replay needs object.png".into()))?,
            );
        }
    }
    execute_with(&request, &manifest.backend, backend.as_ref()).map_err(|f| f.error)
}

/// Loads `manifest.json` (and `object.png` when present) from a job
/// directory and replays it.
pub fn replay_dir(dir: &Path) -> Result<JobArtifacts> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let object = match manifest.object_image_sha256 {
        Some(_) => Some(decode_png(&fs::read(dir.join("object.png"))?)?),
        None => None,
    };
    replay(&manifest, object)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PixelBox;

    #[test]
    fn generate_manifest_hashes_match_files() {
        let req = JobRequest::Generate {
            prompt: "a lake".into(),
            seed: 1,
            total_steps: 10,
        };
        let a = execute(&req, &BackendRef::default()).unwrap();
        assert_eq!(a.manifest.kind, "generate");
        assert_eq!(a.manifest.outputs["base.png"], sha256_hex(a.file("base.png").unwrap()));
        let back = replay(&a.manifest, None).unwrap();
        assert_eq!(back.manifest, a.manifest);
    }

    #[test]
    fn failed_edit_keeps_error_stage() {
        let mut spec = EditSpec::new("a lake", "a hat", PixelBox::new(0, 0, 600, 10), 1);
        spec.config.total_steps = 10;
        let f = execute(&JobRequest::Edit { spec }, &BackendRef::default()).unwrap_err();
        assert_eq!(f.error.stage(), Some(Stage::Config));
        assert_eq!(f.error.exit_code(), 2);
    }

    #[test]
    fn request_json_shape() {
        let req: JobRequest =
            serde_json::from_str(r#"{"kind":"generate","prompt":"a lake","seed":3}"#).unwrap();
        assert_eq!(
            req,
            JobRequest::Generate {
                prompt: "a lake".into(),
                seed: 3,
                total_steps: 50
            }
        );
    }

    #[test]
    fn unknown_backend_is_config_error() {
        let req = JobRequest::Generate {
            prompt: "x".into(),
            seed: 0,
            total_steps: 5,
        };
        let f = execute(&req, &BackendRef::new("nope", 0)).unwrap_err();
        assert_eq!(f.error.exit_code(), 2);
    }
}
