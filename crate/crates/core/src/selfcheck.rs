//! Runtime self-check across all modules on small seeded fixtures.

use crate::compositor::{compose_guidance, paste_segment, ComposeOptions, GuidanceImage, PastePlan};
use crate::distortion::{color_transfer_lab, lab_to_rgb, rgb_to_lab, tps_apply, tps_solve};
use crate::error::{Error, Result};
use crate::modnorm::{verify_suite, Check, VerifyReport};
use crate::raster::{Bbox, BinaryMask, RgbImage};
use crate::retrieval::{
    retrieve_best, retrieve_best_bruteforce, scale_consistency, shape_nonsimilarity, RetrievalResult,
};
use crate::rng::Rng;
use crate::segdb::{build_database_from_loaded, DecomposeOptions, SegmentRecord};
use crate::semantic::{ClassKind, SemanticMap};
use crate::signature::Signature;
use crate::synthetic::{random_blob, synthetic_database, toy_config, toy_entries};

fn check(checks: &mut Vec<Check>, name: &str, f: impl FnOnce() -> Result<(bool, String)>) {
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    checks.push(Check {
        name: name.into(),
        passed,
        detail,
    });
}

/// Run every module's core identities; modulation checks are prefixed `modnorm.`.
pub fn verify_all(seed: u64) -> VerifyReport {
    let mut checks = Vec::new();
    let mut rng = Rng::new(seed);

    check(&mut checks, "retrieval.fixtures", || {
        let full = Signature::from_mask(&BinaryMask::full(4, 4));
        let half = Signature::from_mask(&BinaryMask::from_fn(4, 4, |x, _| x < 2));
        let ok = scale_consistency(50, 100)? == 0
            && scale_consistency(49, 100)? == 1
            && shape_nonsimilarity(&full, &half)? == 0.5
            && shape_nonsimilarity(&half, &half)? == 0.0;
        Ok((ok, "t=0.5 boundary, full-vs-half = 0.5, self = 0".into()))
    });

    check(&mut checks, "retrieval.oracle_equivalence", || {
        let db = synthetic_database(200, rng.next_u64())?;
        let queries = crate::pipeline::sample_queries(&db, 200, rng.next_u64())?;
        let mut bad = 0;
        for q in &queries {
            for t in [None, Some(0.15), Some(0.5)] {
                let q = q.clone().with_threshold(t);
                if retrieve_best(&db, &q)? != retrieve_best_bruteforce(&db, &q)? {
                    bad += 1;
                }
            }
        }
        Ok((
            bad == 0,
            format!("{bad} discrepancies over {} queries x 3 thresholds", queries.len()),
        ))
    });

    let entries = toy_entries(3, rng.next_u64(), 96, 64).map_err(|e| e.to_string());
    check(&mut checks, "compositor.exact_retrieval", || {
        let entries = entries.clone().map_err(Error::invalid)?;
        let db = build_database_from_loaded(&entries, &toy_config(), DecomposeOptions::keep_all())?;
        let (mut same, mut total) = (0u64, 0u64);
        for e in &entries {
            let comp = compose_guidance(&e.map, &db, None, &ComposeOptions::default())?;
            for r in &comp.regions {
                for v in 0..r.bbox.h {
                    for u in 0..r.bbox.w {
                        if r.mask.get(u, v) {
                            let (x, y) = (r.bbox.x + u, r.bbox.y + v);
                            total += 1;
                            same += (comp.guidance.rgb.get(x, y) == e.image.get(x, y)) as u64;
                        }
                    }
                }
            }
        }
        let frac = same as f64 / total.max(1) as f64;
        Ok((frac >= 0.99, format!("{:.4} of in-mask pixels reproduced", frac)))
    });

    check(&mut checks, "compositor.paste_rules", || {
        // Left half road (background), right half person (foreground).
        let kinds = vec![ClassKind::Background, ClassKind::Foreground, ClassKind::Foreground];
        let labels = (0..60)
            .map(|i| {
                if i % 10 >= 5 {
                    2
                } else if (2..4).contains(&(i % 10)) {
                    1
                } else {
                    0
                }
            })
            .collect();
        let map = SemanticMap::new(10, 6, labels, None, kinds)?;
        let rec = SegmentRecord::new(
            0,
            "d",
            1,
            Bbox::new(0, 0, 4, 6),
            BinaryMask::full(4, 6),
            RgbImage::filled(4, 6, [9, 9, 9]),
        )?;
        let plan = PastePlan {
            region_index: 0,
            target_bbox: Bbox::new(2, 0, 4, 6),
            target_mask: BinaryMask::from_fn(4, 6, |x, _| x < 2),
            retrieved: RetrievalResult::NoMatch,
            category: 1,
            kind: ClassKind::Foreground,
        };
        let mut canvas = GuidanceImage::blank(10, 6);
        paste_segment(&mut canvas, &plan, &map, &rec)?;
        let ok = canvas.validity.get(2, 0) && canvas.validity.get(4, 0) && !canvas.validity.get(5, 0);
        Ok((
            ok,
            "owner kept, spill on background kept, spill on foreground dropped".into(),
        ))
    });

    check(&mut checks, "distortion.color_transfer", || {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (w, h) = (8 + rng.below(24) as u32, 8 + rng.below(24) as u32);
            let sm = random_blob(&mut rng, w, h);
            let tm = random_blob(&mut rng, h, w);
            let s = RgbImage::from_fn(w, h, |_, _| {
                [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8]
            });
            let t = RgbImage::from_fn(h, w, |_, _| {
                [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8]
            });
            let got = color_transfer_lab(&s, &sm, &t, &tm)?.masked_stats(&sm)?;
            let want = rgb_to_lab(&t).masked_stats(&tm)?;
            for c in 0..3 {
                worst = worst
                    .max((got[c].mean - want[c].mean).abs())
                    .max((got[c].std - want[c].std).abs());
            }
        }
        let img = RgbImage::from_fn(32, 32, |_, _| {
            [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8]
        });
        let rt = img
            .as_raw()
            .iter()
            .zip(lab_to_rgb(&rgb_to_lab(&img)).as_raw())
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0);
        Ok((
            worst < 1e-4 && rt <= 1,
            format!("stat error {worst:.2e}, round-trip error {rt}"),
        ))
    });

    check(&mut checks, "distortion.tps", || {
        let src: Vec<[f64; 2]> = (0..10)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 10.0;
                [20.0 + 15.0 * t.cos(), 20.0 + 10.0 * t.sin()]
            })
            .collect();
        let tgt: Vec<[f64; 2]> = src
            .iter()
            .map(|p| [p[0] + rng.uniform(-4.0, 4.0), p[1] + rng.uniform(-4.0, 4.0)])
            .collect();
        let warp = tps_solve(&src, &tgt, 0.0)?;
        let err = src
            .iter()
            .zip(&tgt)
            .map(|(s, t)| {
                let e = warp.eval(*s);
                (e[0] - t[0]).abs().max((e[1] - t[1]).abs())
            })
            .fold(0.0, f64::max);
        let mask = random_blob(&mut rng, 30, 20);
        let rgb = RgbImage::filled(30, 20, [1, 2, 3]).masked(&mask);
        let id = tps_apply(&tps_solve(&src, &src, 1e-3)?, &mask, &rgb, 0)?;
        let identity = id.mask == mask && id.rgb == rgb;
        Ok((
            err < 1e-6 && identity,
            format!("interpolation error {err:.2e}, identity {identity}"),
        ))
    });

    check(&mut checks, "retrieval.threshold_monotone", || {
        let entries = entries.clone().map_err(Error::invalid)?;
        let db = build_database_from_loaded(&entries[1..], &toy_config(), DecomposeOptions::default())?;
        let counts: Vec<usize> = [0.15, 0.25, 0.35, 0.45, 0.55]
            .iter()
            .map(|&t| {
                let opts = ComposeOptions {
                    threshold: Some(t),
                    ..Default::default()
                };
                compose_guidance(&entries[0].map, &db, None, &opts)
                    .map(|c| c.results.iter().filter(|r| r.is_match()).count())
            })
            .collect::<Result<_>>()?;
        Ok((
            counts.windows(2).all(|w| w[0] <= w[1]),
            format!("match counts {counts:?}"),
        ))
    });

    let modnorm = verify_suite(rng.next_u64());
    checks.extend(modnorm.checks.into_iter().map(|c| Check {
        name: format!("modnorm.{}", c.name),
        ..c
    }));
    VerifyReport { seed, checks }
}
