use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use objectadd::evaluation::{parse_case_file, read_external_fid, run_benchmark, ToyColorEmbedder};
use objectadd::io::load_png;
use objectadd::jobs::{execute, BackendRef, JobRequest, Manifest};
use objectadd::service::{serve, JobStore};
use objectadd::{EditSpec, Error, GuidanceConfig, PixelBox, Result};

#[derive(Parser)]
#[command(name = "objectadd", version, about = "Add an object into a box of a generated or real image")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Backend name (toy, toy-forward).
    #[arg(long, default_value = "toy")]
    backend: String,
    /// Seed of the backend's weights.
    #[arg(long, default_value_t = 0)]
    backend_seed: u64,
}

impl BackendArgs {
    fn backend_ref(&self) -> BackendRef {
        BackendRef::new(&self.backend, self.backend_seed)
    }
}

#[derive(Args)]
struct EditArgs {
    /// manifest.json of an earlier generate (or edit) run supplying prompt and seed.
    #[arg(long, conflicts_with_all = ["prompt", "seed"])]
    base_manifest: Option<PathBuf>,
    /// Base prompt, when no base manifest is given.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Box as x,y,w,h in pixels (x = left, y = top).
    #[arg(long = "box", value_name = "X,Y,W,H", conflicts_with = "case_file")]
    pixel_box: Option<String>,
    /// Five-line case file giving the box and the object prompt.
    #[arg(long)]
    case_file: Option<PathBuf>,
    /// Object prompt, e.g. "A hat".
    #[arg(long)]
    object: Option<String>,
    /// Position of the object word among the object prompt's tokens.
    #[arg(long)]
    object_token_offset: Option<usize>,
    /// TOML file with guidance settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a base image from a prompt and seed.
    Generate {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Add an object into a box of a generated image.
    Edit(EditArgs),
    /// Add the object shown in a white-background image into a box.
    EditReal {
        /// Object image on a white background (PNG).
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        edit: EditArgs,
    },
    /// Run the benchmark over a directory of case files.
    Eval {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV of case_id,fid computed elsewhere.
        #[arg(long)]
        external_fid: Option<PathBuf>,
        /// Text-image similarity adapter (toy-color or none).
        #[arg(long, default_value = "toy-color")]
        clip_adapter: String,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        /// Artifact root; defaults to $OBJECTADD_ARTIFACT_ROOT.
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

fn load_config(path: Option<&Path>) -> Result<Option<GuidanceConfig>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path)?;
    let config: GuidanceConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(Some(config))
}

fn parse_box(s: &str) -> Result<PixelBox> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("--box expects four non-negative integers, got {s:?}")))?;
    match nums.as_slice() {
        [x, y, w, h] => Ok(PixelBox::new(*y, *x, *h, *w)),
        _ => Err(Error::Config(format!("--box expects x,y,w,h, got {s:?}"))),
    }
}

fn build_spec(args: &EditArgs) -> Result<EditSpec> {
    let (prompt, seed, base_steps) = match &args.base_manifest {
        Some(path) => {
            let m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
            match m.request {
                JobRequest::Generate {
                    prompt,
                    seed,
                    total_steps,
                } => (prompt, seed, Some(total_steps)),
                JobRequest::Edit { spec } => (spec.base_prompt, spec.seed, Some(spec.config.total_steps)),
            }
        }
        None => {
            let prompt = args
                .prompt
                .clone()
                .ok_or_else(|| Error::Config("--prompt or --base-manifest is required".into()))?;
            (prompt, args.seed.unwrap_or(0), None)
        }
    };
    let (pixel_box, object) = match (&args.pixel_box, &args.case_file) {
        (Some(b), None) => {
            let object = args
                .object
                .clone()
                .ok_or_else(|| Error::Config("--object is required with --box".into()))?;
            (parse_box(b)?, object)
        }
        (None, Some(path)) => {
            let case = parse_case_file(&fs::read_to_string(path)?)?;
            (case.pixel_box, args.object.clone().unwrap_or(case.object_prompt))
        }
        _ => return Err(Error::Config("exactly one of --box or --case-file is required".into())),
    };
    let mut spec = EditSpec::new(&prompt, &object, pixel_box, seed);
    spec.object_token_offset = args.object_token_offset;
    match load_config(args.config.as_deref())? {
        Some(c) => spec.config = c,
        None => {
            if let Some(t) = base_steps {
                spec.config.total_steps = t;
            }
        }
    }
    Ok(spec)
}

fn run_job(request: JobRequest, backend: &BackendRef, out: &Path) -> Result<()> {
    let artifacts = execute(&request, backend).map_err(|f| f.error)?;
    artifacts.write_to(out)?;
    for (name, hash) in &artifacts.manifest.outputs {
        println!("{name}\t{hash}");
    }
    println!("manifest\t{}", out.join("manifest.json").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            prompt,
            seed,
            steps,
            out,
            backend,
        } => run_job(
            JobRequest::Generate {
                prompt,
                seed,
                total_steps: steps,
            },
            &backend.backend_ref(),
            &out,
        ),
        Command::Edit(args) => {
            let spec = build_spec(&args)?;
            run_job(JobRequest::Edit { spec }, &args.backend.backend_ref(), &args.out)
        }
        Command::EditReal { image, edit } => {
            let mut spec = build_spec(&edit)?;
            spec.real_object_image = Some(load_png(&image)?);
            run_job(JobRequest::Edit { spec }, &edit.backend.backend_ref(), &edit.out)
        }
        Command::Eval {
            cases,
            report,
            config,
            external_fid,
            clip_adapter,
            backend,
        } => {
            let config = load_config(config.as_deref())?.unwrap_or_default();
            let model = backend.backend_ref().build()?;
            let toy = ToyColorEmbedder;
            let adapter: Option<&dyn objectadd::evaluation::TextImageSimilarity> = match clip_adapter.as_str() {
                "toy-color" => Some(&toy),
                "none" => None,
                other => return Err(Error::Config(format!("unknown clip adapter {other:?}"))),
            };
            let mut r = run_benchmark(&cases, model.as_ref(), &config, adapter)?;
            if let Some(path) = external_fid {
                r.merge_external_fid(&read_external_fid(&fs::read_to_string(path)?)?);
            }
            r.write(&report)?;
            print!("{}", r.summary());
            Ok(())
        }
        Command::Serve {
            host,
            port,
            workers,
            root,
            backend,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Config(format!("bad address: {e}")))?;
            let store = match root {
                Some(r) => JobStore::open(r)?,
                None => JobStore::from_env()?,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(addr, store, backend.backend_ref(), workers))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(stage) = e.stage() {
                eprintln!("stage: {stage}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
