//! Directory-per-job store. Each job directory holds `request.json`,
//! `state.json` (replaced atomically on every transition), and once done the
//! artifacts plus `manifest.json`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorBody, Result};
use crate::jobs::{execute, BackendRef, JobArtifacts, JobRequest, Manifest};
use crate::pipeline::{JobStatus, StepEvent};

/// Environment variable naming the artifact root directory.
pub const ARTIFACT_ROOT_ENV: &str = "OBJECTADD_ARTIFACT_ROOT";
pub const DEFAULT_ARTIFACT_ROOT: &str = "objectadd-artifacts";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: String,
    pub state: JobStatus,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub backend: BackendRef,
    pub request: JobRequest,
    /// Artifact name to URI.
    pub artifacts: BTreeMap<String, String>,
    pub error: Option<ErrorBody>,
    /// Steps the edited trajectory finished before a failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partial_steps: Vec<StepEvent>,
    pub manifest: Option<Manifest>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Entry {
    record: JobRecord,
    artifacts: Option<Arc<JobArtifacts>>,
}

pub struct JobStore {
    root: PathBuf,
    jobs: RwLock<HashMap<String, Entry>>,
}

impl JobStore {
    /// Opens (creating if needed) a store rooted at `root`, reloading the
    /// records of earlier jobs. Jobs that were queued or running when the
    /// previous process stopped are marked failed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut jobs = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let state = entry?.path().join("state.json");
            let Ok(bytes) = fs::read(&state) else { continue };
            let Ok(mut record) = serde_json::from_slice::<JobRecord>(&bytes) else {
                continue;
            };
            if matches!(record.state, JobStatus::Queued | JobStatus::Running) {
                record.state = JobStatus::Failed;
                record.error = Some(ErrorBody {
                    kind: "interrupted".into(),
                    message: "service stopped before the job finished".into(),
                    stage: None,
                    step: None,
                    field: None,
                });
                write_atomic(&state, &serde_json::to_vec_pretty(&record)?)?;
            }
            jobs.insert(
                record.job_id.clone(),
                Entry {
                    record,
                    artifacts: None,
                },
            );
        }
        Ok(Self {
            root,
            jobs: RwLock::new(jobs),
        })
    }

    /// Store rooted at `$OBJECTADD_ARTIFACT_ROOT`, or `./objectadd-artifacts`.
    pub fn from_env() -> Result<Self> {
        let root = std::env::var_os(ARTIFACT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_ARTIFACT_ROOT));
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn persist(&self, record: &JobRecord) -> Result<()> {
        write_atomic(
            &self.job_dir(&record.job_id).join("state.json"),
            &serde_json::to_vec_pretty(record)?,
        )
    }

    /// Registers a queued job.
    pub fn create(&self, request: JobRequest, backend: BackendRef) -> Result<JobRecord> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.job_dir(&id);
        fs::create_dir_all(&dir)?;
        let ts = now_ms();
        let record = JobRecord {
            job_id: id.clone(),
            kind: request.kind().to_owned(),
            state: JobStatus::Queued,
            created_ms: ts,
            updated_ms: ts,
            backend,
            request,
            artifacts: BTreeMap::new(),
            error: None,
            partial_steps: Vec::new(),
            manifest: None,
        };
        if let JobRequest::Edit { spec } = &record.request {
            if let Some(img) = &spec.real_object_image {
                fs::write(dir.join("object_input.png"), crate::io::image_png(img)?)?;
            }
        }
        fs::write(dir.join("request.json"), serde_json::to_vec_pretty(&record.request)?)?;
        self.persist(&record)?;
        self.jobs.write().expect("store lock").insert(
            id,
            Entry {
                record: record.clone(),
                artifacts: None,
            },
        );
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.jobs.read().expect("store lock").get(id).map(|e| e.record.clone())
    }

    pub fn artifacts(&self, id: &str) -> Option<Arc<JobArtifacts>> {
        self.jobs
            .read()
            .expect("store lock")
            .get(id)
            .and_then(|e| e.artifacts.clone())
    }

    /// Moves a job to `next`, applying `update` to its record. Only
    /// queued -> running -> {done, failed} is allowed.
    pub fn transition(
        &self,
        id: &str,
        next: JobStatus,
        update: impl FnOnce(&mut JobRecord),
    ) -> Result<JobRecord> {
        let mut jobs = self.jobs.write().expect("store lock");
        let entry = jobs
            .get_mut(id)
            .ok_or_else(|| Error::Contract(format!("unknown job {id}")))?;
        if !entry.record.state.can_become(next) {
            return Err(Error::Contract(format!(
                "job {id} cannot go from {:?} to {next:?}",
                entry.record.state
            )));
        }
        let mut record = entry.record.clone();
        record.state = next;
        record.updated_ms = now_ms();
        update(&mut record);
        self.persist(&record)?;
        entry.record = record.clone();
        Ok(record)
    }

    fn attach(&self, id: &str, artifacts: Arc<JobArtifacts>) {
        if let Some(e) = self.jobs.write().expect("store lock").get_mut(id) {
            e.artifacts = Some(artifacts);
        }
    }

    /// Runs a queued job to completion on the calling thread.
    pub fn run(&self, id: &str) -> Result<JobRecord> {
        let record = self.transition(id, JobStatus::Running, |_| {})?;
        let mut request = record.request.clone();
        if let JobRequest::Edit { spec } = &mut request {
            let input = self.job_dir(id).join("object_input.png");
            if input.exists() {
                spec.real_object_image = Some(crate::io::load_png(&input)?);
            }
        }
        match execute(&request, &record.backend) {
            Ok(artifacts) => {
                artifacts.write_to(&self.job_dir(id))?;
                let links = artifact_links(id, &artifacts);
                let manifest = artifacts.manifest.clone();
                self.attach(id, Arc::new(artifacts));
                self.transition(id, JobStatus::Done, |r| {
                    r.artifacts = links;
                    r.manifest = Some(manifest);
                })
            }
            Err(failure) => self.transition(id, JobStatus::Failed, |r| {
                r.error = Some(failure.error.body());
                r.partial_steps = failure.steps;
            }),
        }
    }

    /// Reads an artifact of a finished job. Only names recorded in the
    /// manifest are served.
    pub fn read_artifact(&self, id: &str, name: &str) -> Result<Option<Vec<u8>>> {
        let Some(record) = self.get(id) else {
            return Ok(None);
        };
        let Some(manifest) = record.manifest else {
            return Ok(None);
        };
        if !manifest.outputs.contains_key(name) {
            return Ok(None);
        }
        if let Some(a) = self.artifacts(id) {
            if let Some(bytes) = a.file(name) {
                return Ok(Some(bytes.to_vec()));
            }
        }
        Ok(Some(fs::read(self.job_dir(id).join(name))?))
    }
}

fn artifact_links(id: &str, artifacts: &JobArtifacts) -> BTreeMap<String, String> {
    let mut links: BTreeMap<String, String> = artifacts
        .files
        .keys()
        .filter(|n| n.ends_with(".png"))
        .map(|n| {
            (
                n.trim_end_matches(".png").to_owned(),
                format!("/api/images/{id}?name={n}"),
            )
        })
        .collect();
    links.insert("image".into(), format!("/api/images/{id}"));
    if artifacts.traces.is_some() {
        links.insert("masks".into(), format!("/api/jobs/{id}/masks"));
        links.insert("attention".into(), format!("/api/jobs/{id}/attention/{{t}}/{{layer}}"));
    }
    links
}
