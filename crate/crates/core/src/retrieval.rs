//! Shape retrieval by geometric consistency.
//!
//! Two masks are compared by a binary scale term (area ratio below 0.5 costs 1)
//! plus a weighted shape term: the XOR popcount of their 128×128 signatures
//! divided by the larger signature popcount. Lower totals mean more similar.
//!
//! [`retrieve_best`] scans a category bucket over precomputed signatures;
//! [`retrieve_best_bruteforce`] is the reference path that walks every record
//! and rebuilds each signature from the stored mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{resize_nearest, BinaryMask};
use crate::segdb::{SegmentDatabase, SegmentRecord};
use crate::signature::{Signature, SIGNATURE_SIDE};

pub const DEFAULT_THRESHOLD: f64 = 0.15;
pub const DEFAULT_SHAPE_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricScore {
    pub scale_term: u8,
    pub shape_term: f64,
    pub total: f64,
    pub shape_weight: f64,
}

impl GeometricScore {
    fn new(scale_term: u8, shape_term: f64, shape_weight: f64) -> Self {
        Self {
            scale_term,
            shape_term,
            total: scale_term as f64 + shape_weight * shape_term,
            shape_weight,
        }
    }
}

/// 0 when `min/max ≥ 0.5`, else 1. Evaluated exactly in integers.
pub fn scale_consistency(area_i: u64, area_j: u64) -> Result<u8> {
    if area_i == 0 || area_j == 0 {
        return Err(Error::invalid("scale_consistency needs positive areas"));
    }
    let (lo, hi) = if area_i <= area_j {
        (area_i, area_j)
    } else {
        (area_j, area_i)
    };
    Ok(if 2 * lo as u128 >= hi as u128 { 0 } else { 1 })
}

/// Normalized SSD between two signatures: `popcount(a ⊕ b) / max(|a|, |b|)`.
pub fn shape_nonsimilarity(sig_i: &Signature, sig_j: &Signature) -> Result<f64> {
    let denom = sig_i.popcount().max(sig_j.popcount());
    if sig_i.popcount() == 0 || sig_j.popcount() == 0 {
        return Err(Error::EmptyMask("shape signature"));
    }
    Ok(sig_i.xor_popcount(sig_j) as f64 / denom as f64)
}

fn validate_weight(shape_weight: f64) -> Result<()> {
    if !(shape_weight.is_finite() && shape_weight > 0.0) {
        return Err(Error::invalid(format!(
            "shape weight must be positive, got {shape_weight}"
        )));
    }
    Ok(())
}

/// Score two masks, computing areas and signatures from scratch.
pub fn geometric_score(mask_i: &BinaryMask, mask_j: &BinaryMask, shape_weight: f64) -> Result<GeometricScore> {
    validate_weight(shape_weight)?;
    let scale = scale_consistency(mask_i.popcount(), mask_j.popcount())?;
    let shape = shape_nonsimilarity(&Signature::from_mask(mask_i), &Signature::from_mask(mask_j))?;
    Ok(GeometricScore::new(scale, shape, shape_weight))
}

/// Which database records a query must not return.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Exclusion {
    #[default]
    None,
    /// Every segment cut from this source image (training-mode default).
    SourceImage(String),
    /// A single segment.
    Segment(u64),
}

impl Exclusion {
    fn excludes(&self, rec: &SegmentRecord) -> bool {
        match self {
            Exclusion::None => false,
            Exclusion::SourceImage(id) => rec.source_image_id == *id,
            Exclusion::Segment(id) => rec.segment_id == *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub mask: BinaryMask,
    pub category: u32,
    pub exclude: Exclusion,
    pub threshold: Option<f64>,
    pub shape_weight: f64,
}

impl RetrievalQuery {
    pub fn new(mask: BinaryMask, category: u32) -> Result<Self> {
        if mask.popcount() == 0 {
            return Err(Error::EmptyMask("retrieval query"));
        }
        Ok(Self {
            mask,
            category,
            exclude: Exclusion::None,
            threshold: Some(DEFAULT_THRESHOLD),
            shape_weight: DEFAULT_SHAPE_WEIGHT,
        })
    }

    pub fn with_exclusion(mut self, exclude: Exclusion) -> Self {
        self.exclude = exclude;
        self
    }

    pub fn with_threshold(mut self, threshold: Option<f64>) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_shape_weight(mut self, shape_weight: f64) -> Self {
        self.shape_weight = shape_weight;
        self
    }

    fn validate(&self) -> Result<()> {
        validate_weight(self.shape_weight)?;
        if let Some(t) = self.threshold {
            if t.is_nan() || t < 0.0 {
                return Err(Error::invalid(format!("threshold must be non-negative, got {t}")));
            }
        }
        if self.mask.popcount() == 0 {
            return Err(Error::EmptyMask("retrieval query"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RetrievalResult {
    Match { segment_id: u64, score: GeometricScore },
    NoMatch,
}

impl RetrievalResult {
    pub fn segment_id(&self) -> Option<u64> {
        match self {
            RetrievalResult::Match { segment_id, .. } => Some(*segment_id),
            RetrievalResult::NoMatch => None,
        }
    }

    pub fn score(&self) -> Option<GeometricScore> {
        match self {
            RetrievalResult::Match { score, .. } => Some(*score),
            RetrievalResult::NoMatch => None,
        }
    }

    pub fn is_match(&self) -> bool {
        matches!(self, RetrievalResult::Match { .. })
    }
}

#[derive(Clone, Copy)]
struct Best {
    id: u64,
    score: GeometricScore,
}

/// (score, then id) ordering used by every reduction.
fn better(candidate: &Best, incumbent: &Option<Best>) -> bool {
    match incumbent {
        None => true,
        Some(b) => {
            candidate.score.total < b.score.total || (candidate.score.total == b.score.total && candidate.id < b.id)
        }
    }
}

fn finish(best: Option<Best>, threshold: Option<f64>) -> RetrievalResult {
    match best {
        Some(b) if threshold.is_none_or(|t| b.score.total <= t) => RetrievalResult::Match {
            segment_id: b.id,
            score: b.score,
        },
        _ => RetrievalResult::NoMatch,
    }
}

/// Best same-category match over precomputed bit-packed signatures.
pub fn retrieve_best(db: &SegmentDatabase, query: &RetrievalQuery) -> Result<RetrievalResult> {
    query.validate()?;
    let area_q = query.mask.popcount();
    let sig_q = Signature::from_mask(&query.mask);
    let pop_q = sig_q.popcount();
    let w = query.shape_weight;
    let mut best: Option<Best> = None;
    for &id in db.bucket(query.category) {
        let rec = db.get(id).expect("bucket ids resolve");
        if query.exclude.excludes(rec) {
            continue;
        }
        let scale = scale_consistency(area_q, rec.area)?;
        // Lower bound from popcounts: |a ⊕ b| ≥ ||a| − |b||. Rounding is monotone,
        // so a bound strictly above the incumbent can never win or tie.
        let pop_r = rec.signature.popcount();
        let denom = pop_q.max(pop_r) as f64;
        if let Some(b) = &best {
            let bound = scale as f64 + w * (pop_q.abs_diff(pop_r) as f64 / denom);
            if bound > b.score.total {
                continue;
            }
        }
        let shape = sig_q.xor_popcount(&rec.signature) as f64 / denom;
        let cand = Best {
            id,
            score: GeometricScore::new(scale, shape, w),
        };
        if better(&cand, &best) {
            best = Some(cand);
        }
    }
    Ok(finish(best, query.threshold))
}

/// Reference implementation: full pass over all records, per-pixel SSD on
/// signatures rebuilt from each stored mask.
pub fn retrieve_best_bruteforce(db: &SegmentDatabase, query: &RetrievalQuery) -> Result<RetrievalResult> {
    query.validate()?;
    let side = SIGNATURE_SIDE;
    let q = resize_nearest(&query.mask, side, side)?;
    let area_q = query.mask.bits().iter().filter(|&&b| b).count() as u64;
    let pop_q = q.bits().iter().filter(|&&b| b).count() as u64;
    let mut best: Option<Best> = None;
    for rec in db.records() {
        if rec.category != query.category || query.exclude.excludes(rec) {
            continue;
        }
        let r = resize_nearest(&rec.mask, side, side)?;
        let area_r = rec.mask.bits().iter().filter(|&&b| b).count() as u64;
        let pop_r = r.bits().iter().filter(|&&b| b).count() as u64;
        let ssd: u64 = q
            .bits()
            .iter()
            .zip(r.bits())
            .map(|(&a, &b)| {
                let d = a as i64 - b as i64;
                (d * d) as u64
            })
            .sum();
        let t = area_q.min(area_r) as f64 / area_q.max(area_r) as f64;
        let scale = if t >= 0.5 { 0 } else { 1 };
        let shape = ssd as f64 / pop_q.max(pop_r) as f64;
        let cand = Best {
            id: rec.segment_id,
            score: GeometricScore::new(scale, shape, query.shape_weight),
        };
        if better(&cand, &best) {
            best = Some(cand);
        }
    }
    Ok(finish(best, query.threshold))
}
