//! Dataset-scale orchestration: guidance (and distorted ground truth in train
//! mode) for every image, written as PNGs plus a JSON manifest.
//!
//! Output layout, relative to the output directory:
//!
//! ```text
//! guidance/<id>.png  guidance/<id>_valid.png
//! distorted/<id>.png distorted/<id>_valid.png        (train mode)
//! traces/<id>.jsonl  traces/<id>.distortion.jsonl    (train mode)
//! manifest.json
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compositor::{compose_guidance, ComposeOptions, ExcludeBy, Mode, RegionTrace};
use crate::dataset::{load_dataset, DatasetConfig, DatasetEntry, LoadedEntry, DEFAULT_CONFIG_NAME};
use crate::distortion::{distort_ground_truth, DistortionConfig};
use crate::error::{Error, Result};
use crate::retrieval::{
    retrieve_best, retrieve_best_bruteforce, RetrievalQuery, RetrievalResult, DEFAULT_SHAPE_WEIGHT, DEFAULT_THRESHOLD,
};
use crate::rng::{derive_seed, mix64, Rng};
use crate::segdb::{load_database, SegmentDatabase};
use crate::synthetic::random_blob;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset_root: PathBuf,
    /// Optional explicit dataset manifest; otherwise the root is scanned.
    pub dataset_manifest: Option<PathBuf>,
    pub db_path: PathBuf,
    pub mode: Mode,
    /// `None` disables the threshold (every region takes its best match).
    pub threshold: Option<f64>,
    pub shape_weight: f64,
    pub exclude_by: ExcludeBy,
    /// Its `seed` field is ignored; per-image seeds derive from `seed` below.
    pub distortion: DistortionConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; `None` uses all cores. Results do not depend on it.
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            dataset_manifest: None,
            db_path: PathBuf::from("segments.db"),
            mode: Mode::Test,
            threshold: Some(DEFAULT_THRESHOLD),
            shape_weight: DEFAULT_SHAPE_WEIGHT,
            exclude_by: ExcludeBy::SourceImage,
            distortion: DistortionConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            workers: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("threshold must be finite and >= 0, got {t}")));
            }
        }
        if !(self.shape_weight >= 0.0 && self.shape_weight.is_finite()) {
            return Err(Error::invalid(format!(
                "shape_weight must be finite and >= 0, got {}",
                self.shape_weight
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be positive"));
        }
        self.distortion.validate()
    }

    fn compose_options(&self) -> ComposeOptions {
        ComposeOptions {
            mode: self.mode,
            threshold: self.threshold,
            shape_weight: self.shape_weight,
            exclude_by: self.exclude_by,
        }
    }

    /// Distortion config for image `index`.
    fn distortion_for(&self, index: usize) -> DistortionConfig {
        DistortionConfig {
            seed: mix64(derive_seed(self.seed, index as u64)),
            ..self.distortion
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_ms: f64,
    pub compose_ms: f64,
    pub distort_ms: f64,
    pub write_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub ok: bool,
    pub error: Option<String>,
    /// Artifact paths relative to the output directory.
    pub guidance: Option<String>,
    pub validity: Option<String>,
    pub distorted: Option<String>,
    pub distorted_validity: Option<String>,
    pub trace: Option<String>,
    pub valid_fraction: Option<f64>,
    pub regions: Vec<RegionTrace>,
    pub timings: Timings,
}

impl ImageRecord {
    fn failed(image_id: &str, err: &Error, timings: Timings) -> Self {
        Self {
            image_id: image_id.to_string(),
            ok: false,
            error: Some(err.to_string()),
            guidance: None,
            validity: None,
            distorted: None,
            distorted_validity: None,
            trace: None,
            valid_fraction: None,
            regions: Vec::new(),
            timings,
        }
    }

    /// Every artifact path this record references.
    pub fn artifacts(&self) -> impl Iterator<Item = &str> {
        [
            &self.guidance,
            &self.validity,
            &self.distorted,
            &self.distorted_validity,
            &self.trace,
        ]
        .into_iter()
        .flatten()
        .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub failures: usize,
    pub regions: usize,
    pub matched: usize,
    pub match_rate: f64,
    /// Mean total score over matched regions.
    pub mean_score: Option<f64>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub rng: String,
    pub config: PipelineConfig,
    pub database_sha256: String,
    pub dataset_config_hash: String,
    pub images: Vec<ImageRecord>,
    pub aggregate: Aggregate,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("trace rows serialize");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn process_image(
    index: usize,
    entry: &DatasetEntry,
    dataset: &DatasetConfig,
    db: &SegmentDatabase,
    config: &PipelineConfig,
    timings: &mut Timings,
) -> Result<ImageRecord> {
    let t = Instant::now();
    let loaded = LoadedEntry::load(entry, dataset)?;
    timings.load_ms = ms_since(t);

    let t = Instant::now();
    let comp = compose_guidance(&loaded.map, db, Some(&loaded.image_id), &config.compose_options())?;
    timings.compose_ms = ms_since(t);

    let distortion = if config.mode == Mode::Train {
        let t = Instant::now();
        let d = distort_ground_truth(&loaded.image, &loaded.map, db, &config.distortion_for(index))?;
        timings.distort_ms = ms_since(t);
        Some(d)
    } else {
        None
    };

    let t = Instant::now();
    let id = &loaded.image_id;
    let out = &config.output_dir;
    let rel = |dir: &str, name: String| format!("{dir}/{name}");
    let guidance = rel("guidance", format!("{id}.png"));
    let validity = rel("guidance", format!("{id}_valid.png"));
    let trace = rel("traces", format!("{id}.jsonl"));
    comp.guidance.rgb.save_png(&out.join(&guidance))?;
    comp.guidance.validity.save_png(&out.join(&validity))?;
    let regions = comp.region_traces();
    write_jsonl(&out.join(&trace), &regions)?;

    let (mut distorted, mut distorted_validity) = (None, None);
    if let Some(d) = &distortion {
        let rgb = rel("distorted", format!("{id}.png"));
        let valid = rel("distorted", format!("{id}_valid.png"));
        d.guidance.rgb.save_png(&out.join(&rgb))?;
        d.guidance.validity.save_png(&out.join(&valid))?;
        write_jsonl(&out.join(rel("traces", format!("{id}.distortion.jsonl"))), &d.segments)?;
        distorted = Some(rgb);
        distorted_validity = Some(valid);
    }
    timings.write_ms = ms_since(t);

    let (w, h) = loaded.map.dims();
    Ok(ImageRecord {
        image_id: id.clone(),
        ok: true,
        error: None,
        guidance: Some(guidance),
        validity: Some(validity),
        distorted,
        distorted_validity,
        trace: Some(trace),
        valid_fraction: Some(comp.guidance.validity.popcount() as f64 / (w as f64 * h as f64)),
        regions,
        timings: timings.clone(),
    })
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Run the whole pipeline. Database and dataset problems fail before any image
/// is processed; per-image failures are recorded in the manifest instead.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    let start = Instant::now();
    config.validate()?;
    let db = load_database(&config.db_path)?;
    let dataset = db.meta().dataset.clone();
    let root_cfg = config.dataset_root.join(DEFAULT_CONFIG_NAME);
    if root_cfg.exists() {
        let on_disk = DatasetConfig::load(&root_cfg)?;
        if on_disk.hash() != db.meta().config_hash {
            return Err(Error::invalid(format!(
                "{} does not match the dataset config the database was built with",
                root_cfg.display()
            )));
        }
    }
    let entries = load_dataset(&config.dataset_root, config.dataset_manifest.as_deref())?;
    let mut dirs = vec!["guidance", "traces"];
    if config.mode == Mode::Train {
        dirs.push("distorted");
    }
    for d in dirs {
        let p = config.output_dir.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let images: Vec<ImageRecord> = pool.install(|| {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let mut timings = Timings::default();
                process_image(i, e, &dataset, &db, config, &mut timings).unwrap_or_else(|err| {
                    log::error!("{}: {err}", e.image_id);
                    ImageRecord::failed(&e.image_id, &err, timings)
                })
            })
            .collect()
    });

    let regions: Vec<&RegionTrace> = images.iter().flat_map(|r| &r.regions).collect();
    let scores: Vec<f64> = regions.iter().filter_map(|r| r.total).collect();
    let aggregate = Aggregate {
        images: images.len(),
        failures: images.iter().filter(|r| !r.ok).count(),
        regions: regions.len(),
        matched: scores.len(),
        match_rate: if regions.is_empty() {
            0.0
        } else {
            scores.len() as f64 / regions.len() as f64
        },
        mean_score: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        wall_time_ms: ms_since(start),
    };
    let manifest = RunManifest {
        tool: "guidekit".into(),
        tool_version: TOOL_VERSION.into(),
        rng: Rng::ALGORITHM.into(),
        config: config.clone(),
        database_sha256: file_sha256(&config.db_path)?,
        dataset_config_hash: db.meta().config_hash.clone(),
        images,
        aggregate,
    };
    let path = config.output_dir.join(MANIFEST_NAME);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest).expect("manifest serializes");
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Throughput comparison of the indexed scan against the brute-force oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: usize,
    pub queries: usize,
    pub seed: u64,
    pub fast_secs: f64,
    pub brute_secs: f64,
    pub fast_qps: f64,
    pub brute_qps: f64,
    pub speedup: f64,
    pub mismatches: usize,
    pub equal: bool,
}

/// `count` query masks with categories present in `db`, drawn from `seed`.
pub fn sample_queries(db: &SegmentDatabase, count: usize, seed: u64) -> Result<Vec<RetrievalQuery>> {
    if db.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let category = db.records()[rng.below(db.len())].category;
            let (w, h) = (6 + rng.below(59) as u32, 6 + rng.below(59) as u32);
            let mask = random_blob(&mut rng, w, h);
            Ok(RetrievalQuery::new(mask, category)?.with_threshold(None))
        })
        .collect()
}

pub fn bench_retrieval(db: &SegmentDatabase, query_count: usize, seed: u64) -> Result<BenchReport> {
    let queries = sample_queries(db, query_count, seed)?;
    let t = Instant::now();
    let fast: Vec<RetrievalResult> = queries.iter().map(|q| retrieve_best(db, q)).collect::<Result<_>>()?;
    let fast_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let brute: Vec<RetrievalResult> = queries
        .iter()
        .map(|q| retrieve_best_bruteforce(db, q))
        .collect::<Result<_>>()?;
    let brute_secs = t.elapsed().as_secs_f64();
    let mismatches = fast.iter().zip(&brute).filter(|(a, b)| a != b).count();
    let qps = |secs: f64| {
        if secs > 0.0 {
            queries.len() as f64 / secs
        } else {
            f64::INFINITY
        }
    };
    Ok(BenchReport {
        records: db.len(),
        queries: queries.len(),
        seed,
        fast_secs,
        brute_secs,
        fast_qps: qps(fast_secs),
        brute_qps: qps(brute_secs),
        speedup: if fast_secs > 0.0 {
            brute_secs / fast_secs
        } else {
            f64::INFINITY
        },
        mismatches,
        equal: mismatches == 0,
    })
}
