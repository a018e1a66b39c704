//! Decomposition of a semantic map into per-object regions.
//!
//! Foreground ("thing") pixels are grouped by `(class, instance id)`. Foreground
//! pixels without an instance id fall back to one region per 4-connected
//! component. Each background ("stuff") class yields a single region: its
//! largest 4-connected component.

use std::collections::HashMap;

use crate::raster::{Bbox, BinaryMask};
use crate::semantic::{ClassKind, SemanticMap};

pub const DEFAULT_MIN_AREA: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecomposeOptions {
    /// Regions with fewer pixels are dropped.
    pub min_area: u64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            min_area: DEFAULT_MIN_AREA,
        }
    }
}

impl DecomposeOptions {
    /// Keep every non-empty region; used when decomposing query maps.
    pub fn keep_all() -> Self {
        Self { min_area: 1 }
    }
}

/// One object of a semantic map: tight bbox plus the mask cropped to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub category: u32,
    pub kind: ClassKind,
    pub instance_id: Option<u32>,
    pub bbox: Bbox,
    pub mask: BinaryMask,
    pub area: u64,
}

impl Region {
    /// Whether canvas pixel `(x, y)` belongs to this region.
    pub fn contains(&self, x: u32, y: u32) -> bool {
        let b = self.bbox;
        x >= b.x && y >= b.y && x < b.x + b.w && y < b.y + b.h && self.mask.get(x - b.x, y - b.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum GroupKey {
    Instance(u32, u32),
    Component(u32),
}

struct Candidate {
    category: u32,
    instance_id: Option<u32>,
    pixels: Vec<u32>,
    bbox: (u32, u32, u32, u32),
}

impl Candidate {
    fn new(category: u32, instance_id: Option<u32>) -> Self {
        Self {
            category,
            instance_id,
            pixels: Vec::new(),
            bbox: (u32::MAX, u32::MAX, 0, 0),
        }
    }

    fn push(&mut self, idx: u32, x: u32, y: u32) {
        self.pixels.push(idx);
        let b = &mut self.bbox;
        b.0 = b.0.min(x);
        b.1 = b.1.min(y);
        b.2 = b.2.max(x);
        b.3 = b.3.max(y);
    }
}

/// Split `map` into regions, ordered by the raster position of each region's first pixel.
pub fn decompose_map(map: &SemanticMap, opts: DecomposeOptions) -> Vec<Region> {
    let (w, h) = map.dims();
    let n = w as usize * h as usize;
    let labels = map.labels();
    let instances = map.instance_ids();

    let key_of = |i: usize| -> GroupKey {
        let class = labels[i];
        let inst = instances.map_or(0, |ids| ids[i]);
        match map.kind_of(class) {
            ClassKind::Foreground if inst != 0 => GroupKey::Instance(class, inst),
            _ => GroupKey::Component(class),
        }
    };

    if let Some(ids) = instances {
        let stray = (0..n).any(|i| ids[i] != 0 && map.kind_of(labels[i]) == ClassKind::Background);
        if stray {
            log::warn!("instance ids found on background classes; treating those pixels as background");
        }
    }

    let mut visited = vec![false; n];
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut instance_slot: HashMap<(u32, u32), usize> = HashMap::new();
    let mut stack: Vec<u32> = Vec::new();

    for start in 0..n {
        if visited[start] {
            continue;
        }
        let (sx, sy) = ((start % w as usize) as u32, (start / w as usize) as u32);
        match key_of(start) {
            GroupKey::Instance(class, inst) => {
                visited[start] = true;
                let slot = *instance_slot.entry((class, inst)).or_insert_with(|| {
                    candidates.push(Candidate::new(class, Some(inst)));
                    candidates.len() - 1
                });
                candidates[slot].push(start as u32, sx, sy);
            }
            key @ GroupKey::Component(class) => {
                let mut cand = Candidate::new(class, None);
                visited[start] = true;
                stack.push(start as u32);
                while let Some(p) = stack.pop() {
                    let (px, py) = (p % w, p / w);
                    cand.push(p, px, py);
                    let mut visit = |q: usize| {
                        if !visited[q] && key_of(q) == key {
                            visited[q] = true;
                            stack.push(q as u32);
                        }
                    };
                    let pu = p as usize;
                    if px > 0 {
                        visit(pu - 1);
                    }
                    if px + 1 < w {
                        visit(pu + 1);
                    }
                    if py > 0 {
                        visit(pu - w as usize);
                    }
                    if py + 1 < h {
                        visit(pu + w as usize);
                    }
                }
                candidates.push(cand);
            }
        }
    }

    // Background classes keep only their largest component. Ties go to the
    // component whose bbox top-left (x, y) is lexicographically smallest.
    let mut best_bg: HashMap<u32, usize> = HashMap::new();
    for (i, c) in candidates.iter().enumerate() {
        if map.kind_of(c.category) != ClassKind::Background {
            continue;
        }
        best_bg
            .entry(c.category)
            .and_modify(|b| {
                let cur = &candidates[*b];
                let better = c.pixels.len() > cur.pixels.len()
                    || (c.pixels.len() == cur.pixels.len() && (c.bbox.0, c.bbox.1) < (cur.bbox.0, cur.bbox.1));
                if better {
                    *b = i;
                }
            })
            .or_insert(i);
    }

    candidates
        .into_iter()
        .enumerate()
        .filter(|(i, c)| map.kind_of(c.category) == ClassKind::Foreground || best_bg.get(&c.category) == Some(i))
        .map(|(_, c)| c)
        .filter(|c| c.pixels.len() as u64 >= opts.min_area.max(1))
        .map(|c| {
            let (x0, y0, x1, y1) = c.bbox;
            let bbox = Bbox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
            let mut mask = BinaryMask::empty(bbox.w, bbox.h);
            for &p in &c.pixels {
                mask.set(p % w - x0, p / w - y0, true);
            }
            Region {
                category: c.category,
                kind: map.kind_of(c.category),
                instance_id: c.instance_id,
                bbox,
                area: c.pixels.len() as u64,
                mask,
            }
        })
        .collect()
}
