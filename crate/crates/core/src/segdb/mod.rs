//! Category-indexed segment database built from a training set.

mod decompose;
mod store;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetConfig, DatasetEntry, LoadedEntry};
use crate::error::{Error, Result};
use crate::raster::{Bbox, BinaryMask, RgbImage};
use crate::semantic::ClassKind;
use crate::signature::Signature;

pub use decompose::{decompose_map, DecomposeOptions, Region, DEFAULT_MIN_AREA};
pub use store::{load_database, meta_sidecar_path, save_database, FORMAT_MAJOR, FORMAT_MINOR};

/// One cropped object or background segment of a training image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRecord {
    pub segment_id: u64,
    pub source_image_id: String,
    pub category: u32,
    pub bbox: Bbox,
    pub mask: BinaryMask,
    /// Source pixels inside the bbox, zeroed outside `mask`.
    pub pixels: RgbImage,
    pub area: u64,
    pub signature: Signature,
}

impl SegmentRecord {
    pub fn new(
        segment_id: u64,
        source_image_id: impl Into<String>,
        category: u32,
        bbox: Bbox,
        mask: BinaryMask,
        pixels: RgbImage,
    ) -> Result<Self> {
        if mask.dims() != (bbox.w, bbox.h) || pixels.dims() != (bbox.w, bbox.h) {
            return Err(Error::Dimensions(format!(
                "segment {segment_id}: mask {:?} / pixels {:?} vs bbox {}x{}",
                mask.dims(),
                pixels.dims(),
                bbox.w,
                bbox.h
            )));
        }
        let area = mask.popcount();
        if area == 0 {
            return Err(Error::EmptyMask("segment record"));
        }
        if mask.tight_bbox() != Some(Bbox::new(0, 0, bbox.w, bbox.h)) {
            return Err(Error::invalid(format!("segment {segment_id}: bbox is not tight")));
        }
        let signature = Signature::from_mask(&mask);
        Ok(Self {
            segment_id,
            source_image_id: source_image_id.into(),
            category,
            bbox,
            mask,
            pixels,
            area,
            signature,
        })
    }
}

/// Cut one loaded dataset entry into segment records, numbered from 0.
pub fn decompose(entry: &LoadedEntry, opts: DecomposeOptions) -> Result<Vec<SegmentRecord>> {
    if entry.image.dims() != entry.map.dims() {
        return Err(Error::Dataset {
            image_id: entry.image_id.clone(),
            msg: "image and label dimensions differ".into(),
        });
    }
    decompose_map(&entry.map, opts)
        .into_iter()
        .enumerate()
        .map(|(i, region)| {
            let pixels = entry.image.crop(region.bbox)?.masked(&region.mask);
            SegmentRecord::new(
                i as u64,
                entry.image_id.clone(),
                region.category,
                region.bbox,
                region.mask,
                pixels,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbMeta {
    pub format_version: String,
    pub dataset: DatasetConfig,
    pub config_hash: String,
    pub min_area: u64,
    pub record_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentDatabase {
    records: Vec<SegmentRecord>,
    by_category: BTreeMap<u32, Vec<u64>>,
    meta: DbMeta,
}

impl SegmentDatabase {
    /// Assemble a database, checking id uniqueness and category ranges.
    pub fn from_records(mut records: Vec<SegmentRecord>, dataset: DatasetConfig, min_area: u64) -> Result<Self> {
        dataset.validate()?;
        records.sort_by_key(|r| r.segment_id);
        if let Some(w) = records.windows(2).find(|w| w[0].segment_id == w[1].segment_id) {
            return Err(Error::invalid(format!("duplicate segment id {}", w[0].segment_id)));
        }
        let mut by_category: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for r in &records {
            if r.category as usize >= dataset.num_classes {
                return Err(Error::invalid(format!(
                    "segment {} has category {} outside {} classes",
                    r.segment_id, r.category, dataset.num_classes
                )));
            }
            by_category.entry(r.category).or_default().push(r.segment_id);
        }
        let meta = DbMeta {
            format_version: format!("{FORMAT_MAJOR}.{FORMAT_MINOR}"),
            config_hash: dataset.hash(),
            dataset,
            min_area,
            record_count: records.len() as u64,
        };
        Ok(Self {
            records,
            by_category,
            meta,
        })
    }

    pub fn empty(dataset: DatasetConfig) -> Result<Self> {
        Self::from_records(Vec::new(), dataset, DEFAULT_MIN_AREA)
    }

    pub fn records(&self) -> &[SegmentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn meta(&self) -> &DbMeta {
        &self.meta
    }

    pub fn class_kinds(&self) -> &[ClassKind] {
        &self.meta.dataset.class_kinds
    }

    pub fn get(&self, segment_id: u64) -> Option<&SegmentRecord> {
        self.records
            .binary_search_by_key(&segment_id, |r| r.segment_id)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Sorted segment ids of one category; empty when the category has no segments.
    pub fn bucket(&self, category: u32) -> &[u64] {
        self.by_category.get(&category).map_or(&[], Vec::as_slice)
    }

    pub fn categories(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_category.keys().copied()
    }
}

/// Decompose already-loaded entries and number the segments in entry order.
pub fn build_database_from_loaded(
    entries: &[LoadedEntry],
    dataset: &DatasetConfig,
    opts: DecomposeOptions,
) -> Result<SegmentDatabase> {
    let per_entry: Vec<Vec<SegmentRecord>> = entries
        .par_iter()
        .map(|e| {
            decompose(e, opts).map_err(|err| Error::Dataset {
                image_id: e.image_id.clone(),
                msg: err.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(per_entry.iter().map(Vec::len).sum());
    for rec in per_entry.into_iter().flatten() {
        let id = records.len() as u64;
        records.push(SegmentRecord { segment_id: id, ..rec });
    }
    SegmentDatabase::from_records(records, dataset.clone(), opts.min_area)
}

/// Load and decompose every entry. Output depends only on the entry order.
pub fn build_database(
    entries: &[DatasetEntry],
    dataset: &DatasetConfig,
    opts: DecomposeOptions,
) -> Result<SegmentDatabase> {
    if entries.is_empty() {
        return Err(Error::invalid("cannot build a database from zero entries"));
    }
    dataset.validate()?;
    let loaded: Vec<LoadedEntry> = entries
        .par_iter()
        .map(|e| LoadedEntry::load(e, dataset))
        .collect::<Result<_>>()?;
    build_database_from_loaded(&loaded, dataset, opts)
}
