//! Procedural street-scene datasets and segment databases for tests, demos and benchmarks.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use crate::dataset::{
    write_instance_png, write_label_png, DatasetConfig, DatasetEntry, LoadedEntry, DEFAULT_CONFIG_NAME,
};
use crate::error::{Error, Result};
use crate::raster::{Bbox, BinaryMask, RgbImage};
use crate::rng::{derive_seed, mix64, Rng};
use crate::segdb::{SegmentDatabase, SegmentRecord, DEFAULT_MIN_AREA};
use crate::semantic::{ClassKind, SemanticMap};

pub const SKY: u32 = 0;
pub const ROAD: u32 = 1;
pub const VEGETATION: u32 = 2;
pub const CAR: u32 = 3;
pub const PERSON: u32 = 4;

/// Five classes: sky, road, vegetation (background); car, person (foreground).
pub fn toy_config() -> DatasetConfig {
    DatasetConfig {
        num_classes: 5,
        class_kinds: vec![
            ClassKind::Background,
            ClassKind::Background,
            ClassKind::Background,
            ClassKind::Foreground,
            ClassKind::Foreground,
        ],
        class_names: ["sky", "road", "vegetation", "car", "person"]
            .map(String::from)
            .to_vec(),
    }
}

/// A wobbly super-ellipse filling a `w×h` box. The centre pixel is always set.
pub fn random_blob(rng: &mut Rng, w: u32, h: u32) -> BinaryMask {
    let p = rng.uniform(1.6, 4.0);
    let harmonics: Vec<(f64, f64, f64)> = (2..5)
        .map(|k| (k as f64, rng.uniform(0.0, 0.12), rng.uniform(0.0, TAU)))
        .collect();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (rx, ry) = ((w as f64 / 2.0).max(0.5), (h as f64 / 2.0).max(0.5));
    BinaryMask::from_fn(w, h, |x, y| {
        let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
        let theta = dy.atan2(dx);
        let radius = 1.0
            - harmonics
                .iter()
                .map(|(k, a, ph)| a * (k * theta + ph).cos())
                .sum::<f64>()
                .abs();
        dx.abs().powf(p) + dy.abs().powf(p) <= radius.powf(p)
    })
}

fn jitter(rng: &mut Rng, base: [u8; 3], amount: i32) -> [u8; 3] {
    base.map(|v| (v as i32 + rng.below(2 * amount as usize + 1) as i32 - amount).clamp(0, 255) as u8)
}

struct Object {
    class: u32,
    instance: u32,
    bbox: Bbox,
    mask: BinaryMask,
    color: [u8; 3],
}

/// One procedurally generated scene: sky over a wavy horizon, a vegetation band,
/// road below, and a few cars and people with instance ids.
pub fn toy_entry(image_id: &str, seed: u64, width: u32, height: u32) -> Result<LoadedEntry> {
    if width < 16 || height < 16 {
        return Err(Error::invalid(format!(
            "toy scenes need at least 16x16, got {width}x{height}"
        )));
    }
    let mut rng = Rng::new(seed);
    let (w, h) = (width as f64, height as f64);
    let horizon = rng.uniform(0.3, 0.45) * h;
    let (amp, freq, phase) = (
        rng.uniform(0.02, 0.06) * h,
        rng.uniform(1.0, 3.0) * TAU / w,
        rng.uniform(0.0, TAU),
    );
    let band = rng.uniform(0.06, 0.14) * h;

    let mut labels = vec![0u32; (width * height) as usize];
    for y in 0..height {
        for x in 0..width {
            let edge = horizon + amp * (freq * x as f64 + phase).sin();
            labels[(y * width + x) as usize] = if (y as f64) < edge {
                SKY
            } else if (y as f64) < edge + band {
                VEGETATION
            } else {
                ROAD
            };
        }
    }

    let mut objects = Vec::new();
    let n_cars = 1 + rng.below(3);
    let n_people = rng.below(3);
    for i in 0..n_cars + n_people {
        let is_car = i < n_cars;
        let (ow, oh) = if is_car {
            let ow = (rng.uniform(0.15, 0.3) * w) as u32;
            (ow, (ow as f64 * rng.uniform(0.45, 0.7)) as u32)
        } else {
            let oh = (rng.uniform(0.18, 0.32) * h) as u32;
            (((oh as f64) * rng.uniform(0.3, 0.45)) as u32, oh)
        };
        let (ow, oh) = (ow.clamp(3, width - 1), oh.clamp(3, height - 1));
        let x0 = rng.below((width - ow) as usize) as u32;
        let y_lo = (horizon as u32).min(height - oh);
        let y0 = y_lo + rng.below((height - oh - y_lo + 1) as usize) as u32;
        let color = if is_car {
            [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8]
        } else {
            jitter(&mut rng, [150, 90, 70], 40)
        };
        objects.push(Object {
            class: if is_car { CAR } else { PERSON },
            instance: i as u32 + 1,
            bbox: Bbox::new(x0, y0, ow, oh),
            mask: random_blob(&mut rng, ow, oh),
            color,
        });
    }
    // Nearer objects (lower on screen) are painted last.
    objects.sort_by_key(|o| (o.bbox.y + o.bbox.h, o.instance));

    let mut instances = vec![0u32; labels.len()];
    for o in &objects {
        for v in 0..o.bbox.h {
            for u in 0..o.bbox.w {
                if o.mask.get(u, v) {
                    let i = ((o.bbox.y + v) * width + o.bbox.x + u) as usize;
                    labels[i] = o.class;
                    instances[i] = o.instance;
                }
            }
        }
    }

    let sky = jitter(&mut rng, [110, 160, 225], 20);
    let veg = jitter(&mut rng, [50, 120, 45], 20);
    let road = jitter(&mut rng, [90, 90, 95], 15);
    let image = RgbImage::from_fn(width, height, |x, y| {
        let i = (y * width + x) as usize;
        let shade = |c: [u8; 3], k: f64| c.map(|v| (v as f64 * k).clamp(0.0, 255.0) as u8);
        match labels[i] {
            SKY => shade(sky, 0.8 + 0.4 * y as f64 / h),
            VEGETATION => jitter(&mut rng, veg, 25),
            ROAD => jitter(&mut rng, shade(road, 0.7 + 0.5 * y as f64 / h), 10),
            _ => {
                let o = objects
                    .iter()
                    .find(|o| o.instance == instances[i])
                    .expect("object pixel");
                let t = (y - o.bbox.y) as f64 / o.bbox.h as f64;
                jitter(&mut rng, shade(o.color, 1.15 - 0.4 * t), 6)
            }
        }
    });
    let map = SemanticMap::new(width, height, labels, Some(instances), toy_config().class_kinds)?;
    Ok(LoadedEntry {
        image_id: image_id.to_string(),
        image,
        map,
    })
}

/// Scene `index` of a toy dataset generated from `seed`.
pub fn toy_entries(count: usize, seed: u64, width: u32, height: u32) -> Result<Vec<LoadedEntry>> {
    (0..count)
        .map(|i| {
            toy_entry(
                &format!("toy_{i:04}"),
                mix64(derive_seed(seed, i as u64)),
                width,
                height,
            )
        })
        .collect()
}

/// Write a toy dataset under `root` (images/, labels/, instances/ and dataset.json).
pub fn write_toy_dataset(root: &Path, count: usize, seed: u64, width: u32, height: u32) -> Result<Vec<DatasetEntry>> {
    for sub in ["images", "labels", "instances"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    toy_config().save(&root.join(DEFAULT_CONFIG_NAME))?;
    toy_entries(count, seed, width, height)?
        .into_iter()
        .map(|e| {
            let entry = DatasetEntry {
                image_path: root.join("images").join(format!("{}.png", e.image_id)),
                label_path: root.join("labels").join(format!("{}.png", e.image_id)),
                instance_path: Some(root.join("instances").join(format!("{}.png", e.image_id))),
                image_id: e.image_id,
            };
            e.image.save_png(&entry.image_path)?;
            write_label_png(&e.map, &entry.label_path)?;
            write_instance_png(&e.map, entry.instance_path.as_deref().expect("set above"))?;
            Ok(entry)
        })
        .collect()
}

/// A database of `count` random blob segments spread over the toy classes,
/// eight segments per pseudo source image.
pub fn synthetic_database(count: usize, seed: u64) -> Result<SegmentDatabase> {
    let cfg = toy_config();
    let records = (0..count)
        .map(|i| {
            let mut rng = Rng::new(mix64(derive_seed(seed, i as u64)));
            let category = rng.below(cfg.num_classes) as u32;
            let (w, h) = (8 + rng.below(57) as u32, 8 + rng.below(57) as u32);
            let blob = random_blob(&mut rng, w, h);
            let tight = blob.tight_bbox().expect("blob centre is set");
            let mask = blob.crop(tight)?;
            let color = [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8];
            let pixels = RgbImage::filled(tight.w, tight.h, color).masked(&mask);
            SegmentRecord::new(
                i as u64,
                format!("synthetic_{:05}", i / 8),
                category,
                Bbox::new(0, 0, tight.w, tight.h),
                mask,
                pixels,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SegmentDatabase::from_records(records, cfg, DEFAULT_MIN_AREA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;

    #[test]
    fn blob_is_nonempty_and_deterministic() {
        for s in 0..20 {
            let a = random_blob(&mut Rng::new(s), 9, 5);
            assert!(a.get(4, 2));
            assert_eq!(a, random_blob(&mut Rng::new(s), 9, 5));
        }
    }

    #[test]
    fn toy_entry_has_all_kinds_and_is_deterministic() {
        let a = toy_entry("x", 3, 96, 64).unwrap();
        let b = toy_entry("x", 3, 96, 64).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.map, b.map);
        let labels = a.map.labels();
        assert!(labels.contains(&SKY) && labels.contains(&ROAD) && labels.contains(&CAR));
        assert_ne!(toy_entry("x", 4, 96, 64).unwrap().image, a.image);
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let entries = write_toy_dataset(dir.path(), 3, 7, 64, 48).unwrap();
        let loaded = load_dataset(dir.path(), None).unwrap();
        assert_eq!(loaded, entries);
        let cfg = DatasetConfig::load(&dir.path().join(DEFAULT_CONFIG_NAME)).unwrap();
        let e = LoadedEntry::load(&loaded[1], &cfg).unwrap();
        let direct = &toy_entries(3, 7, 64, 48).unwrap()[1];
        assert_eq!(e.image, direct.image);
        assert_eq!(e.map, direct.map);
    }

    #[test]
    fn synthetic_db_size_and_categories() {
        let db = synthetic_database(200, 1).unwrap();
        assert_eq!(db.len(), 200);
        assert_eq!(db.categories().count(), 5);
        assert_eq!(synthetic_database(200, 1).unwrap(), db);
    }
}
