//! Guidance compositing.
//!
//! Every region of the semantic map receives its best retrieved segment, resized
//! to the region's bbox (mask: nearest, RGB: bilinear) and pasted in two passes:
//!
//! 1. owner pass: pixels inside both the resized segment mask and the region's
//!    own mask are written unconditionally;
//! 2. spill pass: pixels of a foreground segment that fall outside its region
//!    but on a background-class pixel are written only where nothing valid is
//!    present yet. Background spill and foreground-on-foreground spill are dropped.
//!
//! Plans are ordered background first, then foreground, each by descending
//! target area with ties on region index, so the first spill to reach a pixel wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{nearest_index_map, resize_bilinear, resize_nearest, Bbox, BinaryMask, RgbImage};
use crate::retrieval::{
    retrieve_best, Exclusion, RetrievalQuery, RetrievalResult, DEFAULT_SHAPE_WEIGHT, DEFAULT_THRESHOLD,
};
use crate::segdb::{decompose_map, DecomposeOptions, Region, SegmentDatabase, SegmentRecord};
use crate::semantic::{ClassKind, SemanticMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Test,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Mode::Train),
            "test" => Ok(Mode::Test),
            other => Err(Error::invalid(format!("mode must be train or test, got {other:?}"))),
        }
    }
}

/// Training-mode exclusion granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcludeBy {
    /// Skip every segment of the query's own image.
    #[default]
    SourceImage,
    /// Skip only the segment cut from the same region.
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComposeOptions {
    pub mode: Mode,
    pub threshold: Option<f64>,
    pub shape_weight: f64,
    pub exclude_by: ExcludeBy,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Test,
            threshold: Some(DEFAULT_THRESHOLD),
            shape_weight: DEFAULT_SHAPE_WEIGHT,
            exclude_by: ExcludeBy::SourceImage,
        }
    }
}

/// Composited RGB guidance plus the mask of pixels actually filled by a segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuidanceImage {
    pub rgb: RgbImage,
    pub validity: BinaryMask,
}

impl GuidanceImage {
    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            rgb: RgbImage::black(width, height),
            validity: BinaryMask::empty(width, height),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PastePlan {
    pub region_index: usize,
    pub target_bbox: Bbox,
    pub target_mask: BinaryMask,
    pub retrieved: RetrievalResult,
    pub category: u32,
    pub kind: ClassKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PasteRule {
    Owner,
    Spill,
}

/// Where a valid guidance pixel came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub region_index: usize,
    pub segment_id: u64,
    /// Pixel of the retrieved record (bbox-local) that the nearest-neighbour
    /// resize mapped onto this guidance pixel.
    pub source: (u32, u32),
    pub rule: PasteRule,
}

/// Per-pixel provenance, row-major over the canvas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceMap {
    width: u32,
    cells: Vec<Option<Provenance>>,
}

impl ProvenanceMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            cells: vec![None; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Option<Provenance> {
        self.cells[(y * self.width + x) as usize]
    }

    fn set(&mut self, x: u32, y: u32, p: Provenance) {
        self.cells[(y * self.width + x) as usize] = Some(p);
    }

    pub fn count(&self, region_index: usize, rule: PasteRule) -> u64 {
        self.cells
            .iter()
            .flatten()
            .filter(|p| p.region_index == region_index && p.rule == rule)
            .count() as u64
    }
}

/// Order one retrieval result per region into paste plans.
pub fn plan_from_regions(regions: &[Region], results: &[RetrievalResult]) -> Result<Vec<PastePlan>> {
    if regions.len() != results.len() {
        return Err(Error::invalid(format!(
            "{} retrieval results for {} regions",
            results.len(),
            regions.len()
        )));
    }
    let mut plans: Vec<PastePlan> = regions
        .iter()
        .zip(results)
        .enumerate()
        .map(|(i, (r, res))| PastePlan {
            region_index: i,
            target_bbox: r.bbox,
            target_mask: r.mask.clone(),
            retrieved: *res,
            category: r.category,
            kind: r.kind,
        })
        .collect();
    let kind_rank = |k: ClassKind| match k {
        ClassKind::Background => 0,
        ClassKind::Foreground => 1,
    };
    plans.sort_by(|a, b| {
        kind_rank(a.kind)
            .cmp(&kind_rank(b.kind))
            .then(b.target_mask.popcount().cmp(&a.target_mask.popcount()))
            .then(a.region_index.cmp(&b.region_index))
    });
    Ok(plans)
}

/// Decompose `map` (every non-empty region) and order the results into plans.
pub fn plan_composition(map: &SemanticMap, results: &[RetrievalResult]) -> Result<Vec<PastePlan>> {
    plan_from_regions(&decompose_map(map, DecomposeOptions::keep_all()), results)
}

/// A retrieved record resized to its target bbox.
struct Resized {
    mask: BinaryMask,
    rgb: RgbImage,
    src_x: Vec<u32>,
    src_y: Vec<u32>,
    segment_id: u64,
}

impl Resized {
    fn new(plan: &PastePlan, record: &SegmentRecord) -> Result<Self> {
        if record.category != plan.category {
            return Err(Error::invalid(format!(
                "segment {} has category {}, plan expects {}",
                record.segment_id, record.category, plan.category
            )));
        }
        let (w, h) = (plan.target_bbox.w, plan.target_bbox.h);
        Ok(Self {
            mask: resize_nearest(&record.mask, w, h)?,
            rgb: resize_bilinear(&record.pixels, w, h)?,
            src_x: nearest_index_map(record.bbox.w, w),
            src_y: nearest_index_map(record.bbox.h, h),
            segment_id: record.segment_id,
        })
    }
}

fn check_fits(canvas: &GuidanceImage, plan: &PastePlan) -> Result<()> {
    if !plan.target_bbox.fits_within(canvas.rgb.width(), canvas.rgb.height()) {
        return Err(Error::Dimensions(format!(
            "plan bbox {:?} outside {}x{} canvas",
            plan.target_bbox,
            canvas.rgb.width(),
            canvas.rgb.height()
        )));
    }
    Ok(())
}

fn paste_owned(canvas: &mut GuidanceImage, trace: &mut ProvenanceMap, plan: &PastePlan, seg: &Resized) {
    let b = plan.target_bbox;
    for v in 0..b.h {
        for u in 0..b.w {
            if seg.mask.get(u, v) && plan.target_mask.get(u, v) {
                let (x, y) = (b.x + u, b.y + v);
                canvas.rgb.put(x, y, seg.rgb.get(u, v));
                canvas.validity.set(x, y, true);
                trace.set(
                    x,
                    y,
                    Provenance {
                        region_index: plan.region_index,
                        segment_id: seg.segment_id,
                        source: (seg.src_x[u as usize], seg.src_y[v as usize]),
                        rule: PasteRule::Owner,
                    },
                );
            }
        }
    }
}

fn paste_spill(
    canvas: &mut GuidanceImage,
    trace: &mut ProvenanceMap,
    plan: &PastePlan,
    map: &SemanticMap,
    seg: &Resized,
) {
    if plan.kind == ClassKind::Background {
        return;
    }
    let b = plan.target_bbox;
    for v in 0..b.h {
        for u in 0..b.w {
            if !seg.mask.get(u, v) || plan.target_mask.get(u, v) {
                continue;
            }
            let (x, y) = (b.x + u, b.y + v);
            if map.kind_of(map.label(x, y)) == ClassKind::Background && !canvas.validity.get(x, y) {
                canvas.rgb.put(x, y, seg.rgb.get(u, v));
                canvas.validity.set(x, y, true);
                trace.set(
                    x,
                    y,
                    Provenance {
                        region_index: plan.region_index,
                        segment_id: seg.segment_id,
                        source: (seg.src_x[u as usize], seg.src_y[v as usize]),
                        rule: PasteRule::Spill,
                    },
                );
            }
        }
    }
}

/// Paste one retrieved record under the four integrity rules: owner pixels are
/// always written, background spill is dropped, foreground spill is kept only on
/// background-class pixels that are not yet valid.
pub fn paste_segment(
    canvas: &mut GuidanceImage,
    plan: &PastePlan,
    map: &SemanticMap,
    record: &SegmentRecord,
) -> Result<()> {
    check_fits(canvas, plan)?;
    let seg = Resized::new(plan, record)?;
    let mut trace = ProvenanceMap::new(canvas.rgb.width(), canvas.rgb.height());
    paste_owned(canvas, &mut trace, plan, &seg);
    paste_spill(canvas, &mut trace, plan, map, &seg);
    Ok(())
}

/// Guidance plus everything needed to explain it.
#[derive(Debug, Clone)]
pub struct Composition {
    pub guidance: GuidanceImage,
    pub regions: Vec<Region>,
    pub results: Vec<RetrievalResult>,
    pub plans: Vec<PastePlan>,
    pub provenance: ProvenanceMap,
}

/// One line of the per-region trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTrace {
    pub region_index: usize,
    pub category: u32,
    pub kind: ClassKind,
    pub bbox: Bbox,
    pub target_area: u64,
    pub segment_id: Option<u64>,
    pub scale_term: Option<u8>,
    pub shape_term: Option<f64>,
    pub total: Option<f64>,
    pub owner_pixels: u64,
    pub spill_pixels: u64,
}

impl Composition {
    pub fn region_traces(&self) -> Vec<RegionTrace> {
        self.regions
            .iter()
            .zip(&self.results)
            .enumerate()
            .map(|(i, (r, res))| {
                let score = res.score();
                RegionTrace {
                    region_index: i,
                    category: r.category,
                    kind: r.kind,
                    bbox: r.bbox,
                    target_area: r.area,
                    segment_id: res.segment_id(),
                    scale_term: score.map(|s| s.scale_term),
                    shape_term: score.map(|s| s.shape_term),
                    total: score.map(|s| s.total),
                    owner_pixels: self.provenance.count(i, PasteRule::Owner),
                    spill_pixels: self.provenance.count(i, PasteRule::Spill),
                }
            })
            .collect()
    }
}

fn exclusion_for(
    db: &SegmentDatabase,
    region: &Region,
    image_id: Option<&str>,
    opts: &ComposeOptions,
) -> Result<Exclusion> {
    if opts.mode == Mode::Test {
        return Ok(Exclusion::None);
    }
    let id = image_id.ok_or_else(|| Error::invalid("train mode needs the query's image id"))?;
    Ok(match opts.exclude_by {
        ExcludeBy::SourceImage => Exclusion::SourceImage(id.to_string()),
        ExcludeBy::Segment => db
            .bucket(region.category)
            .iter()
            .filter_map(|&sid| db.get(sid))
            .find(|r| r.source_image_id == id && r.bbox == region.bbox && r.mask == region.mask)
            .map_or(Exclusion::None, |r| Exclusion::Segment(r.segment_id)),
    })
}

/// Retrieve a segment for every region of `map` and composite the guidance image.
/// `image_id` names the query's source image and is required in train mode.
pub fn compose_guidance(
    map: &SemanticMap,
    db: &SegmentDatabase,
    image_id: Option<&str>,
    opts: &ComposeOptions,
) -> Result<Composition> {
    if map.num_classes() != db.meta().dataset.num_classes {
        return Err(Error::invalid(format!(
            "semantic map has {} classes, database was built for {}",
            map.num_classes(),
            db.meta().dataset.num_classes
        )));
    }
    let regions = decompose_map(map, DecomposeOptions::keep_all());
    let results: Vec<RetrievalResult> = regions
        .par_iter()
        .map(|r| {
            let q = RetrievalQuery::new(r.mask.clone(), r.category)?
                .with_exclusion(exclusion_for(db, r, image_id, opts)?)
                .with_threshold(opts.threshold)
                .with_shape_weight(opts.shape_weight);
            retrieve_best(db, &q)
        })
        .collect::<Result<_>>()?;
    let plans = plan_from_regions(&regions, &results)?;

    let resized: Vec<Option<Resized>> = plans
        .par_iter()
        .map(|p| match p.retrieved.segment_id() {
            Some(id) => {
                let rec = db
                    .get(id)
                    .ok_or_else(|| Error::Corrupt(format!("retrieved unknown segment {id}")))?;
                Resized::new(p, rec).map(Some)
            }
            None => Ok(None),
        })
        .collect::<Result<_>>()?;

    let (w, h) = map.dims();
    let mut canvas = GuidanceImage::blank(w, h);
    let mut provenance = ProvenanceMap::new(w, h);
    for (plan, seg) in plans.iter().zip(&resized) {
        if let Some(seg) = seg {
            check_fits(&canvas, plan)?;
            paste_owned(&mut canvas, &mut provenance, plan, seg);
        }
    }
    for (plan, seg) in plans.iter().zip(&resized) {
        if let Some(seg) = seg {
            paste_spill(&mut canvas, &mut provenance, plan, map, seg);
        }
    }
    Ok(Composition {
        guidance: canvas,
        regions,
        results,
        plans,
        provenance,
    })
}
