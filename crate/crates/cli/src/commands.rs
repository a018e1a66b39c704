use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::json;

use guidekit_core::dataset::{read_rgb, read_semantic_map, DEFAULT_CONFIG_NAME};
use guidekit_core::distortion::{distort_ground_truth, DistortionConfig};
use guidekit_core::modnorm::{spatial_modulate, verify_suite, write_tensor, FeatureBlock, ParamMaps, VerifyReport};
use guidekit_core::pipeline::{bench_retrieval, run_pipeline, PipelineConfig};
use guidekit_core::retrieval::DEFAULT_THRESHOLD;
use guidekit_core::segdb::DecomposeOptions;
use guidekit_core::selfcheck::verify_all;
use guidekit_core::synthetic::{synthetic_database, write_toy_dataset};
use guidekit_core::{
    build_database, compose_guidance, load_database, load_dataset, retrieve_best, save_database, ComposeOptions,
    DatasetConfig, ExcludeBy, Exclusion, Mode, RetrievalQuery, SegmentDatabase, SemanticMap,
};

use crate::cli::{Cli, Command, ExcludeArg, MapArgs, ModeArg, RetrievalArgs};

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Train => Mode::Train,
            ModeArg::Test => Mode::Test,
        }
    }
}

impl From<ExcludeArg> for ExcludeBy {
    fn from(e: ExcludeArg) -> Self {
        match e {
            ExcludeArg::Image => ExcludeBy::SourceImage,
            ExcludeArg::Segment => ExcludeBy::Segment,
        }
    }
}

impl RetrievalArgs {
    /// `None` when neither flag was given.
    fn threshold_override(&self) -> Option<Option<f64>> {
        if self.no_threshold {
            Some(None)
        } else {
            self.threshold.map(Some)
        }
    }

    fn compose_options(&self, mode: Mode, exclude_by: ExcludeBy) -> ComposeOptions {
        let defaults = ComposeOptions::default();
        ComposeOptions {
            mode,
            threshold: self.threshold_override().unwrap_or(Some(DEFAULT_THRESHOLD)),
            shape_weight: self.shape_weight.unwrap_or(defaults.shape_weight),
            exclude_by,
        }
    }
}

fn open_db(path: &Path) -> Result<SegmentDatabase> {
    load_database(path).with_context(|| format!("loading database {}", path.display()))
}

fn read_map(args: &MapArgs, db: &SegmentDatabase) -> Result<SemanticMap> {
    read_semantic_map(&args.labels, args.instances.as_deref(), db.class_kinds())
        .with_context(|| format!("reading label map {}", args.labels.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn print_report(report: &VerifyReport) -> Result<()> {
    for c in &report.checks {
        println!("{} {:<36} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = report.failures().count();
    println!("{} checks, {failed} failed (seed {})", report.checks.len(), report.seed);
    if failed > 0 {
        bail!("{failed} check(s) failed");
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    if !matches!(cli.command, Command::Run { .. }) {
        if cli.config.is_some() {
            warn!("--config only applies to `run`; ignoring it");
        }
        if let Some(n) = cli.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring worker threads")?;
        }
    }

    match cli.command {
        Command::BuildDb {
            root,
            manifest,
            dataset_config,
            min_area,
            out,
        } => {
            let cfg_path = dataset_config.unwrap_or_else(|| root.join(DEFAULT_CONFIG_NAME));
            let cfg = DatasetConfig::load(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
            let entries = load_dataset(&root, manifest.as_deref())?;
            info!("decomposing {} images", entries.len());
            let db = build_database(&entries, &cfg, DecomposeOptions { min_area })?;
            save_database(&db, &out)?;
            println!(
                "{} segments from {} images -> {}",
                db.len(),
                entries.len(),
                out.display()
            );
        }

        Command::Retrieve {
            db,
            map,
            retrieval,
            exclude_image,
            out,
        } => {
            let db = open_db(&db)?;
            let map = read_map(&map, &db)?;
            let opts = retrieval.compose_options(Mode::Test, ExcludeBy::SourceImage);
            let exclusion = exclude_image.map_or(Exclusion::None, Exclusion::SourceImage);
            let mut rows = Vec::new();
            for (i, region) in guidekit_core::segdb::decompose_map(&map, DecomposeOptions::keep_all())
                .into_iter()
                .enumerate()
            {
                let q = RetrievalQuery::new(region.mask, region.category)?
                    .with_exclusion(exclusion.clone())
                    .with_threshold(opts.threshold)
                    .with_shape_weight(opts.shape_weight);
                let res = retrieve_best(&db, &q)?;
                let score = res.score();
                rows.push(json!({
                    "region_index": i,
                    "category": region.category,
                    "segment_id": res.segment_id(),
                    "scale_term": score.map(|s| s.scale_term),
                    "shape_term": score.map(|s| s.shape_term),
                    "total": score.map(|s| s.total),
                }));
            }
            match out {
                Some(p) => write_jsonl(&p, &rows)?,
                None => {
                    let mut stdout = io::stdout().lock();
                    for r in &rows {
                        writeln!(stdout, "{r}")?;
                    }
                }
            }
        }

        Command::Compose {
            db,
            map,
            retrieval,
            mode,
            image_id,
            exclude,
            out_rgb,
            out_valid,
            out_trace,
        } => {
            let db = open_db(&db)?;
            let map = read_map(&map, &db)?;
            let opts = retrieval.compose_options(mode.into(), exclude.into());
            let comp = compose_guidance(&map, &db, image_id.as_deref(), &opts)?;
            comp.guidance.rgb.save_png(&out_rgb)?;
            comp.guidance.validity.save_png(&out_valid)?;
            let traces = comp.region_traces();
            if let Some(p) = out_trace {
                write_jsonl(&p, &traces)?;
            }
            let matched = comp.results.iter().filter(|r| r.is_match()).count();
            println!("{matched}/{} regions matched", comp.results.len());
        }

        Command::Distort {
            image,
            map,
            db,
            no_color,
            no_shape,
            no_res,
            out_rgb,
            out_valid,
            report,
        } => {
            let db = open_db(&db)?;
            let map = read_map(&map, &db)?;
            let rgb = read_rgb(&image).with_context(|| format!("reading {}", image.display()))?;
            let cfg = DistortionConfig {
                color_enabled: !no_color,
                shape_enabled: !no_shape,
                resolution_enabled: !no_res,
                seed,
                ..Default::default()
            };
            let d = distort_ground_truth(&rgb, &map, &db, &cfg)?;
            d.guidance.rgb.save_png(&out_rgb)?;
            d.guidance.validity.save_png(&out_valid)?;
            if let Some(p) = report {
                write_jsonl(&p, &d.segments)?;
            }
            println!("{} segments distorted", d.segments.len());
        }

        Command::Run {
            root,
            manifest,
            db,
            out,
            mode,
            exclude,
            retrieval,
            no_color,
            no_shape,
            no_res,
        } => {
            let mut cfg = match &cli.config {
                Some(p) => PipelineConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
                None => PipelineConfig::default(),
            };
            if let Some(v) = root {
                cfg.dataset_root = v;
            }
            if manifest.is_some() {
                cfg.dataset_manifest = manifest;
            }
            if let Some(v) = db {
                cfg.db_path = v;
            }
            if let Some(v) = out {
                cfg.output_dir = v;
            }
            if let Some(v) = mode {
                cfg.mode = v.into();
            }
            if let Some(v) = exclude {
                cfg.exclude_by = v.into();
            }
            if let Some(t) = retrieval.threshold_override() {
                cfg.threshold = t;
            }
            if let Some(w) = retrieval.shape_weight {
                cfg.shape_weight = w;
            }
            cfg.distortion.color_enabled &= !no_color;
            cfg.distortion.shape_enabled &= !no_shape;
            cfg.distortion.resolution_enabled &= !no_res;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if cli.workers.is_some() {
                cfg.workers = cli.workers;
            }
            let manifest = run_pipeline(&cfg)?;
            let a = &manifest.aggregate;
            println!(
                "{} images, {} failed, {}/{} regions matched ({:.1}%), {:.0} ms -> {}",
                a.images,
                a.failures,
                a.matched,
                a.regions,
                100.0 * a.match_rate,
                a.wall_time_ms,
                cfg.output_dir.display()
            );
            for img in manifest.images.iter().filter(|i| !i.ok) {
                eprintln!("{}: {}", img.image_id, img.error.as_deref().unwrap_or("unknown error"));
            }
            if a.failures > 0 {
                bail!("{} image(s) failed", a.failures);
            }
        }

        Command::Bench {
            db,
            synthetic,
            queries,
            json,
        } => {
            let db = match (db, synthetic) {
                (Some(p), _) => open_db(&p)?,
                (None, Some(n)) => synthetic_database(n, seed)?,
                (None, None) => bail!("pass --db or --synthetic N"),
            };
            let r = bench_retrieval(&db, queries, seed)?;
            println!(
                "{} records, {} queries: indexed {:.1} q/s, brute force {:.1} q/s, speedup {:.1}x, {} mismatches",
                r.records, r.queries, r.fast_qps, r.brute_qps, r.speedup, r.mismatches
            );
            if let Some(p) = json {
                let mut f = create(&p)?;
                serde_json::to_writer_pretty(&mut f, &r)?;
                f.flush()?;
            }
            if !r.equal {
                bail!(
                    "indexed retrieval disagreed with brute force on {} queries",
                    r.mismatches
                );
            }
        }

        Command::VerifyModnorm { fixture_dir } => {
            if let Some(dir) = fixture_dir {
                write_fixtures(&dir, seed)?;
            }
            print_report(&verify_suite(seed))?;
        }

        Command::VerifyAll => print_report(&verify_all(seed))?,

        Command::ToyDataset {
            out,
            count,
            width,
            height,
        } => {
            let entries = write_toy_dataset(&out, count, seed, width, height)?;
            println!("{} images -> {}", entries.len(), out.display());
        }
    }
    Ok(())
}

/// Sample input, parameter maps and modulated output, for cross-checking elsewhere.
fn write_fixtures(dir: &PathBuf, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut rng = guidekit_core::Rng::new(seed);
    let block = FeatureBlock::from_fn(2, 3, 4, 5, |_, _, _, _| rng.uniform(-2.0, 2.0))?;
    let params = ParamMaps::synthetic(3, 4, 5, seed ^ 1)?;
    let out = spatial_modulate(&block, &params)?;
    let dims = vec![params.c as u64, params.h as u64, params.w as u64];
    let gamma = guidekit_core::modnorm::Tensor {
        dims: dims.clone(),
        values: params.gamma.clone(),
    };
    let beta = guidekit_core::modnorm::Tensor {
        dims,
        values: params.beta.clone(),
    };
    write_tensor(&dir.join("input.gkt"), &block.to_tensor())?;
    write_tensor(&dir.join("gamma.gkt"), &gamma)?;
    write_tensor(&dir.join("beta.gkt"), &beta)?;
    write_tensor(&dir.join("output.gkt"), &out.to_tensor())?;
    println!("fixtures -> {}", dir.display());
    Ok(())
}
