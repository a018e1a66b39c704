//! Ground-truth distortion: per-segment colour transfer, spline warping and
//! resolution loss, so that training guidance resembles retrieved guidance.

mod edge;
mod lab;
mod tps;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compositor::GuidanceImage;
use crate::error::{Error, Result};
use crate::raster::{resize_bilinear, Bbox, BinaryMask, RgbImage};
use crate::rng::Rng;
use crate::segdb::{decompose_map, DecomposeOptions, Region, SegmentDatabase};
use crate::semantic::{ClassKind, SemanticMap};

pub use edge::{sample_edge_points, trace_boundary, EDGE_POINT_COUNT};
pub use lab::{
    lab_pixel_to_rgb, lab_pixel_to_rgb_f64, lab_to_rgb, rgb_pixel_to_lab, rgb_to_lab, ChannelStats, LabImage,
    LOG_EPSILON,
};
pub use tps::{tps_apply, tps_solve, TpsWarp, WarpedSegment};

/// Below this a channel's standard deviation counts as zero.
pub const STD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionConfig {
    pub color_enabled: bool,
    pub shape_enabled: bool,
    pub resolution_enabled: bool,
    /// Control points moved per segment.
    pub shift_count: usize,
    /// Per-axis shift bound as a fraction of the bbox diagonal.
    pub shift_magnitude: f64,
    /// Open interval τ is drawn from.
    pub tau_range: (f64, f64),
    pub tps_regularization: f64,
    pub seed: u64,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self {
            color_enabled: true,
            shape_enabled: true,
            resolution_enabled: true,
            shift_count: 3,
            shift_magnitude: 0.1,
            tau_range: (0.5, 1.0),
            tps_regularization: 1e-3,
            seed: 0,
        }
    }
}

impl DistortionConfig {
    pub fn disabled() -> Self {
        Self {
            color_enabled: false,
            shape_enabled: false,
            resolution_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.tau_range;
        if !(lo >= 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "tau_range ({lo}, {hi}) must be a non-empty subrange of (0, 1)"
            )));
        }
        if self.shift_count > EDGE_POINT_COUNT {
            return Err(Error::invalid(format!(
                "shift_count {} exceeds {EDGE_POINT_COUNT} control points",
                self.shift_count
            )));
        }
        if !(self.shift_magnitude >= 0.0 && self.shift_magnitude.is_finite()) {
            return Err(Error::invalid("shift_magnitude must be finite and >= 0"));
        }
        if !(self.tps_regularization >= 0.0 && self.tps_regularization.is_finite()) {
            return Err(Error::invalid("tps_regularization must be finite and >= 0"));
        }
        Ok(())
    }
}

fn check_segment(rgb: &RgbImage, mask: &BinaryMask, what: &'static str) -> Result<()> {
    if rgb.dims() != mask.dims() {
        return Err(Error::Dimensions(format!(
            "{what}: rgb {:?} vs mask {:?}",
            rgb.dims(),
            mask.dims()
        )));
    }
    if mask.popcount() == 0 {
        return Err(Error::EmptyMask(what));
    }
    Ok(())
}

/// Match the masked lαβ mean and standard deviation of `source` to those of
/// `target`, per channel. Unmasked pixels keep their original lαβ values.
/// A flat source or target channel collapses to the target mean.
pub fn color_transfer_lab(
    source: &RgbImage,
    source_mask: &BinaryMask,
    target: &RgbImage,
    target_mask: &BinaryMask,
) -> Result<LabImage> {
    check_segment(source, source_mask, "colour-transfer source")?;
    check_segment(target, target_mask, "colour-transfer target")?;
    let mut lab = rgb_to_lab(source);
    let src = lab.masked_stats(source_mask)?;
    let tgt = rgb_to_lab(target).masked_stats(target_mask)?;
    let gain: [f64; 3] = std::array::from_fn(|c| {
        if src[c].std < STD_EPSILON || tgt[c].std < STD_EPSILON {
            0.0
        } else {
            tgt[c].std / src[c].std
        }
    });
    for y in 0..source.height() {
        for x in 0..source.width() {
            if source_mask.get(x, y) {
                let v = lab.get(x, y);
                lab.set(
                    x,
                    y,
                    std::array::from_fn(|c| (v[c] - src[c].mean) * gain[c] + tgt[c].mean),
                );
            }
        }
    }
    Ok(lab)
}

/// [`color_transfer_lab`] converted back to 8-bit RGB; unmasked pixels are copied verbatim.
pub fn color_transfer(
    source: &RgbImage,
    source_mask: &BinaryMask,
    target: &RgbImage,
    target_mask: &BinaryMask,
) -> Result<RgbImage> {
    let lab = color_transfer_lab(source, source_mask, target, target_mask)?;
    Ok(RgbImage::from_fn(source.width(), source.height(), |x, y| {
        if source_mask.get(x, y) {
            lab_pixel_to_rgb(lab.get(x, y))
        } else {
            source.get(x, y)
        }
    }))
}

/// Bilinear down to `round(τ·dims)` (at least 1) and back up.
pub fn resolution_degrade(image: &RgbImage, tau: f64) -> Result<RgbImage> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1], got {tau}")));
    }
    let (w, h) = image.dims();
    let dw = ((tau * w as f64).round() as u32).max(1);
    let dh = ((tau * h as f64).round() as u32).max(1);
    resize_bilinear(&resize_bilinear(image, dw, dh)?, w, h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorReport {
    pub target_segment_id: u64,
    /// Masked lαβ statistics of the transferred segment before quantization.
    pub output_stats: [ChannelStats; 3],
    pub target_stats: [ChannelStats; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub source_points: Vec<[f64; 2]>,
    pub target_points: Vec<[f64; 2]>,
    pub shifted: Vec<usize>,
}

/// What was done to one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub region_index: usize,
    pub category: u32,
    pub bbox: Bbox,
    pub seed: u64,
    pub color: Option<ColorReport>,
    pub shape: Option<ShapeReport>,
    pub tau: Option<f64>,
    /// Why an enabled distortion was skipped.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Distortion {
    pub guidance: GuidanceImage,
    pub regions: Vec<Region>,
    pub segments: Vec<SegmentReport>,
}

struct DistortedSegment {
    /// Top-left of `mask`/`rgb` in canvas coordinates.
    origin: (i64, i64),
    mask: BinaryMask,
    rgb: RgbImage,
}

fn distort_segment(
    index: usize,
    region: &Region,
    image: &RgbImage,
    db: &SegmentDatabase,
    config: &DistortionConfig,
) -> Result<(DistortedSegment, SegmentReport)> {
    let mut rng = Rng::derive(config.seed, index as u64);
    let mut report = SegmentReport {
        region_index: index,
        category: region.category,
        bbox: region.bbox,
        seed: rng.seed(),
        color: None,
        shape: None,
        tau: None,
        skipped: Vec::new(),
    };
    let mut mask = region.mask.clone();
    let mut rgb = image.crop(region.bbox)?.masked(&mask);
    let mut origin = (region.bbox.x as i64, region.bbox.y as i64);

    if config.color_enabled {
        let bucket = db.bucket(region.category);
        if bucket.is_empty() {
            report
                .skipped
                .push("color: no same-category segment in database".into());
        } else {
            let id = bucket[rng.below(bucket.len())];
            let target = db
                .get(id)
                .ok_or_else(|| Error::Corrupt(format!("bucket lists unknown segment {id}")))?;
            let lab = color_transfer_lab(&rgb, &mask, &target.pixels, &target.mask)?;
            report.color = Some(ColorReport {
                target_segment_id: id,
                output_stats: lab.masked_stats(&mask)?,
                target_stats: rgb_to_lab(&target.pixels).masked_stats(&target.mask)?,
            });
            rgb = RgbImage::from_fn(rgb.width(), rgb.height(), |x, y| {
                if mask.get(x, y) {
                    lab_pixel_to_rgb(lab.get(x, y))
                } else {
                    [0, 0, 0]
                }
            });
        }
    }

    if config.shape_enabled {
        match sample_edge_points(&mask, EDGE_POINT_COUNT, &mut rng) {
            Err(e) => report.skipped.push(format!("shape: {e}")),
            Ok(source) => {
                let bound = config.shift_magnitude * region.bbox.diagonal();
                let shifted = rng.choose_distinct(source.len(), config.shift_count);
                let mut target = source.clone();
                for &k in &shifted {
                    target[k][0] += rng.uniform(-bound, bound);
                    target[k][1] += rng.uniform(-bound, bound);
                }
                match tps_solve(&source, &target, config.tps_regularization) {
                    Err(e) => report.skipped.push(format!("shape: {e}")),
                    Ok(warp) => {
                        let margin = bound.ceil() as u32;
                        let out = tps_apply(&warp, &mask, &rgb, margin)?;
                        origin = (origin.0 + out.origin.0, origin.1 + out.origin.1);
                        mask = out.mask;
                        rgb = out.rgb;
                        report.shape = Some(ShapeReport {
                            source_points: source,
                            target_points: target,
                            shifted,
                        });
                    }
                }
            }
        }
    }

    if config.resolution_enabled {
        let tau = rng.uniform_open(config.tau_range.0, config.tau_range.1);
        rgb = resolution_degrade(&rgb, tau)?.masked(&mask);
        report.tau = Some(tau);
    }

    Ok((DistortedSegment { origin, mask, rgb }, report))
}

/// Distort every segment of `image` independently and recompose them at their
/// original positions. Pixels a segment lands on inside its own region are
/// written first; pixels it spills onto elsewhere are written only if still
/// empty (background segments first, then larger before smaller). Validity is
/// the union of the distorted masks clipped to the canvas.
pub fn distort_ground_truth(
    image: &RgbImage,
    map: &SemanticMap,
    db: &SegmentDatabase,
    config: &DistortionConfig,
) -> Result<Distortion> {
    config.validate()?;
    if image.dims() != map.dims() {
        return Err(Error::Dimensions(format!(
            "image {:?} vs semantic map {:?}",
            image.dims(),
            map.dims()
        )));
    }
    let regions = decompose_map(map, DecomposeOptions::keep_all());
    let (segments, reports): (Vec<DistortedSegment>, Vec<SegmentReport>) = regions
        .par_iter()
        .enumerate()
        .map(|(i, r)| distort_segment(i, r, image, db, config))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();

    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by_key(|&i| {
        let r = &regions[i];
        (r.kind == ClassKind::Foreground, std::cmp::Reverse(r.area), i)
    });

    let (w, h) = image.dims();
    let mut canvas = GuidanceImage::blank(w, h);
    for owner_pass in [true, false] {
        for &i in &order {
            let (seg, region) = (&segments[i], &regions[i]);
            for v in 0..seg.mask.height() {
                for u in 0..seg.mask.width() {
                    if !seg.mask.get(u, v) {
                        continue;
                    }
                    let (x, y) = (seg.origin.0 + u as i64, seg.origin.1 + v as i64);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let (x, y) = (x as u32, y as u32);
                    let owned = region.contains(x, y);
                    if (owner_pass && owned) || (!owner_pass && !owned && !canvas.validity.get(x, y)) {
                        canvas.rgb.put(x, y, seg.rgb.get(u, v));
                        canvas.validity.set(x, y, true);
                    }
                }
            }
        }
    }
    Ok(Distortion {
        guidance: canvas,
        regions,
        segments: reports,
    })
}
