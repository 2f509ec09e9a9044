//! Consistency and text-alignment metrics, the five-line case format, and the
//! benchmark harness.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::backend::DenoiserBackend;
use crate::domain::{BinaryMask, EditSpec, GuidanceConfig, Image, PixelBox};
use crate::error::{Error, Result};
use crate::pipeline::edit_generated;

/// Mean over all pixels and channels of `|(1 - M) * a - (1 - M) * b|`, on
/// 0-255 images. Works for any channel count.
pub fn by_pixels(original: &Array3<u8>, edited: &Array3<u8>, mask: &BinaryMask) -> Result<f64> {
    if original.dim() != edited.dim() {
        return Err(Error::Shape(format!(
            "images {:?} and {:?} differ",
            original.dim(),
            edited.dim()
        )));
    }
    let (h, w, c) = original.dim();
    if mask.shape() != (h, w) {
        return Err(Error::Shape(format!("mask {:?} vs image {:?}", mask.shape(), (h, w))));
    }
    if h * w * c == 0 {
        return Err(Error::Shape("empty image".into()));
    }
    let mut total = 0.0;
    Zip::indexed(original).and(edited).for_each(|(i, j, _), &a, &b| {
        if !mask.get(i, j) {
            total += (f64::from(a) - f64::from(b)).abs();
        }
    });
    Ok(total / (h * w * c) as f64)
}

/// Text-image similarity used for the alignment metric.
pub trait TextImageSimilarity: Send + Sync {
    fn name(&self) -> &str;
    /// Human-readable description of the score's scale, copied into reports.
    fn scale(&self) -> &str;
    /// Similarity and whether the image or text carried no signal.
    fn similarity(&self, image: &Image, text: &str) -> Result<(f64, bool)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub score: f64,
    pub degenerate: bool,
}

/// Similarity between `M * edited` (outside pixels zeroed) and the object
/// word. `None` when no adapter is configured: the metric is absent, not zero.
pub fn clip_score(
    edited: &Image,
    mask: &BinaryMask,
    object_word: &str,
    embedder: Option<&dyn TextImageSimilarity>,
) -> Result<Option<ClipScore>> {
    let Some(embedder) = embedder else {
        return Ok(None);
    };
    if mask.shape() != edited.spatial() {
        return Err(Error::Shape(format!(
            "mask {:?} vs image {:?}",
            mask.shape(),
            edited.spatial()
        )));
    }
    let mut data = edited.data().clone();
    for ((i, j, _), v) in data.indexed_iter_mut() {
        if !mask.get(i, j) {
            *v = 0.0;
        }
    }
    let (score, degenerate) = embedder.similarity(&Image::new(data)?, object_word)?;
    Ok(Some(ClipScore {
        score,
        degenerate: degenerate || mask.is_empty(),
    }))
}

const PALETTE: [(&str, [f64; 3]); 8] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("gray", [0.5, 0.5, 0.5]),
];

/// Bag-of-colours stand-in for a CLIP model: the image becomes a histogram of
/// nearest palette colours over non-black pixels, the text a histogram of the
/// colour words it contains, and the score is 100 times their cosine.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToyColorEmbedder;

impl ToyColorEmbedder {
    fn image_vector(image: &Image) -> [f64; 8] {
        let mut hist = [0.0; 8];
        let (h, w) = image.spatial();
        let px = image.data();
        for i in 0..h {
            for j in 0..w {
                let p = [px[[i, j, 0]], px[[i, j, 1]], px[[i, j, 2]]];
                if p == [0.0; 3] {
                    continue;
                }
                let nearest = PALETTE
                    .iter()
                    .enumerate()
                    .map(|(n, (_, c))| (n, (0..3).map(|k| (c[k] - p[k]).powi(2)).sum::<f64>()))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(n, _)| n)
                    .expect("non-empty palette");
                hist[nearest] += 1.0;
            }
        }
        hist
    }

    fn text_vector(text: &str) -> [f64; 8] {
        let mut hist = [0.0; 8];
        for word in text.split_whitespace() {
            let word = word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            let word = if word == "grey" { "gray".to_owned() } else { word };
            if let Some(n) = PALETTE.iter().position(|(name, _)| *name == word) {
                hist[n] += 1.0;
            }
        }
        hist
    }
}

impl TextImageSimilarity for ToyColorEmbedder {
    fn name(&self) -> &str {
        "toy-color"
    }

    fn scale(&self) -> &str {
        "100 x cosine similarity of colour histograms"
    }

    fn similarity(&self, image: &Image, text: &str) -> Result<(f64, bool)> {
        let a = Self::image_vector(image);
        let b = Self::text_vector(text);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Ok((0.0, true));
        }
        Ok((100.0 * dot / (na * nb), false))
    }
}

/// Geometry and object prompt from a five-line case file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFile {
    #[serde(rename = "box")]
    pub pixel_box: PixelBox,
    pub object_prompt: String,
}

/// Parses the five-line case format: left (x), top (y), width, height, then
/// the object prompt. Lines are trimmed; trailing blank lines are ignored.
pub fn parse_case_file(text: &str) -> Result<CaseFile> {
    let mut lines: Vec<&str> = text.lines().map(str::trim).collect();
    while lines.len() > 5 && lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    if lines.len() > 5 {
        return Err(Error::Parse {
            line: 6,
            message: format!("expected five lines, found {}", lines.len()),
        });
    }
    for n in 0..5 {
        match lines.get(n) {
            None => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected five lines, found {}", lines.len()),
                })
            }
            Some(l) if l.is_empty() => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "empty line".into(),
                })
            }
            Some(_) => {}
        }
    }
    let number = |n: usize| -> Result<usize> {
        lines[n].parse::<usize>().map_err(|_| Error::Parse {
            line: n + 1,
            message: format!("expected a non-negative integer, found {:?}", lines[n]),
        })
    };
    let left = number(0)?;
    let top = number(1)?;
    let width = number(2)?;
    let height = number(3)?;
    for (n, v) in [(2, width), (3, height)] {
        if v == 0 {
            return Err(Error::Parse {
                line: n + 1,
                message: "box side must be positive".into(),
            });
        }
    }
    Ok(CaseFile {
        pixel_box: PixelBox::new(top, left, height, width),
        object_prompt: lines[4].to_owned(),
    })
}

/// Inverse of [`parse_case_file`].
pub fn format_case_file(case: &CaseFile) -> String {
    let b = &case.pixel_box;
    format!(
        "{}\n{}\n{}\n{}\n{}\n",
        b.left, b.top, b.width, b.height, case.object_prompt
    )
}

/// Companion `NNN.json` of a case file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub base_prompt: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub id: String,
    pub base_prompt: String,
    pub object_prompt: String,
    #[serde(rename = "box")]
    pub pixel_box: PixelBox,
    pub seed: u64,
}

impl BenchmarkCase {
    pub fn from_parts(id: &str, file: CaseFile, manifest: CaseManifest) -> Self {
        Self {
            id: id.to_owned(),
            base_prompt: manifest.base_prompt,
            object_prompt: file.object_prompt,
            pixel_box: file.pixel_box,
            seed: manifest.seed,
        }
    }

    pub fn to_spec(&self, config: &GuidanceConfig) -> EditSpec {
        let mut spec = EditSpec::new(&self.base_prompt, &self.object_prompt, self.pixel_box, self.seed);
        spec.config = config.clone();
        spec
    }
}

/// A case that could not be loaded or run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseError {
    pub id: String,
    pub message: String,
}

/// Loads every `NNN.txt` with its `NNN.json`, sorted by id. Unreadable
/// cases are returned separately so a run can continue past them.
pub fn load_cases(dir: &Path) -> Result<(Vec<BenchmarkCase>, Vec<CaseError>)> {
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    let mut cases = Vec::new();
    let mut errors = Vec::new();
    for id in ids {
        let load = || -> Result<BenchmarkCase> {
            let file = parse_case_file(&fs::read_to_string(dir.join(format!("{id}.txt")))?)?;
            let manifest: CaseManifest =
                serde_json::from_str(&fs::read_to_string(dir.join(format!("{id}.json")))?)?;
            Ok(BenchmarkCase::from_parts(&id, file, manifest))
        };
        match load() {
            Ok(c) => cases.push(c),
            Err(e) => errors.push(CaseError {
                id,
                message: e.to_string(),
            }),
        }
    }
    Ok((cases, errors))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub id: String,
    pub by_pixels: Option<f64>,
    pub clip_score: Option<f64>,
    pub clip_degenerate: Option<bool>,
    pub external_fid: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub by_pixels: Option<f64>,
    pub clip_score: Option<f64>,
    pub external_fid: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<CaseRow>,
    pub means: Aggregates,
    pub case_count: usize,
    pub failed_count: usize,
    pub backend: String,
    pub clip_adapter: Option<String>,
    pub clip_scale: Option<String>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricReport {
    pub fn new(rows: Vec<CaseRow>, backend: &str, adapter: Option<&dyn TextImageSimilarity>) -> Self {
        let mut report = Self {
            case_count: rows.len(),
            failed_count: rows.iter().filter(|r| r.error.is_some()).count(),
            rows,
            means: Aggregates::default(),
            backend: backend.to_owned(),
            clip_adapter: adapter.map(|a| a.name().to_owned()),
            clip_scale: adapter.map(|a| a.scale().to_owned()),
        };
        report.recompute_means();
        report
    }

    pub fn recompute_means(&mut self) {
        self.means = Aggregates {
            by_pixels: mean_of(self.rows.iter().map(|r| r.by_pixels)),
            clip_score: mean_of(self.rows.iter().map(|r| r.clip_score)),
            external_fid: mean_of(self.rows.iter().map(|r| r.external_fid)),
        };
    }

    /// Attaches externally computed FID values keyed by case id.
    pub fn merge_external_fid(&mut self, fid: &BTreeMap<String, f64>) {
        for row in &mut self.rows {
            if let Some(v) = fid.get(&row.id) {
                row.external_fid = Some(*v);
            }
        }
        self.recompute_means();
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "by_pixels", "clip_score", "clip_degenerate", "external_fid", "error"])
            .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                opt(r.by_pixels),
                opt(r.clip_score),
                r.clip_degenerate.map(|d| d.to_string()).unwrap_or_default(),
                opt(r.external_fid),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Contract(e.to_string()))
    }

    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        let mut s = format!(
            "backend: {}\ncases: {} ({} failed)\nBy Pixels (lower is better): {}\n",
            self.backend,
            self.case_count,
            self.failed_count,
            fmt(self.means.by_pixels)
        );
        match (&self.clip_adapter, &self.clip_scale) {
            (Some(name), Some(scale)) => s.push_str(&format!(
                "CLIP score [{name}, {scale}]: {}\n",
                fmt(self.means.clip_score)
            )),
            _ => s.push_str("CLIP score: n/a (no adapter)\n"),
        }
        s.push_str(&format!("FID (external): {}\n", fmt(self.means.external_fid)));
        s
    }

    /// Writes `report.json`, `report.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_vec_pretty(self)?)?;
        fs::write(dir.join("report.csv"), self.to_csv()?)?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Contract(format!("csv: {e}"))
}

/// Reads `case_id,fid` rows; a header row is optional.
pub fn read_external_fid(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                line: n + 1,
                message: "expected case_id,fid".into(),
            });
        }
        match rec[1].parse::<f64>() {
            Ok(v) => {
                out.insert(rec[0].to_owned(), v);
            }
            Err(_) if n == 0 => {}
            Err(_) => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("not a number: {:?}", &rec[1]),
                })
            }
        }
    }
    Ok(out)
}

/// Metrics for one generated edit against its base image.
pub fn score_case(
    case: &BenchmarkCase,
    backend: &dyn DenoiserBackend,
    config: &GuidanceConfig,
    adapter: Option<&dyn TextImageSimilarity>,
) -> Result<CaseRow> {
    let out = edit_generated(&case.to_spec(config), backend)?;
    let mask = case.pixel_box.to_mask(backend.descriptor().image_shape)?;
    let px = by_pixels(&out.base_image.to_u8(), &out.edited_image.to_u8(), &mask)?;
    let clip = clip_score(&out.edited_image, &mask, &case.object_prompt, adapter)?;
    Ok(CaseRow {
        id: case.id.clone(),
        by_pixels: Some(px),
        clip_score: clip.map(|c| c.score),
        clip_degenerate: clip.map(|c| c.degenerate),
        external_fid: None,
        error: None,
    })
}

/// Runs every case in `dir`; per-case failures are recorded and the run
/// continues. Errors only when no case could be parsed.
pub fn run_benchmark(
    dir: &Path,
    backend: &dyn DenoiserBackend,
    config: &GuidanceConfig,
    adapter: Option<&dyn TextImageSimilarity>,
) -> Result<MetricReport> {
    let (cases, load_errors) = load_cases(dir)?;
    if cases.is_empty() {
        return Err(Error::Config(format!(
            "no parseable case files in {}",
            dir.display()
        )));
    }
    let mut rows: Vec<CaseRow> = load_errors
        .into_iter()
        .map(|e| CaseRow {
            id: e.id,
            by_pixels: None,
            clip_score: None,
            clip_degenerate: None,
            external_fid: None,
            error: Some(e.message),
        })
        .collect();
    for case in &cases {
        rows.push(score_case(case, backend, config, adapter).unwrap_or_else(|e| CaseRow {
            id: case.id.clone(),
            by_pixels: None,
            clip_score: None,
            clip_degenerate: None,
            external_fid: None,
            error: Some(e.to_string()),
        }));
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(MetricReport::new(rows, &backend.descriptor().name, adapter))
}
