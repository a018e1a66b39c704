use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Foreground,
    Background,
}

/// Per-pixel class labels with optional instance ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    instance_ids: Option<Vec<u32>>,
    class_kinds: Vec<ClassKind>,
}

impl SemanticMap {
    pub fn new(
        width: u32,
        height: u32,
        labels: Vec<u32>,
        instance_ids: Option<Vec<u32>>,
        class_kinds: Vec<ClassKind>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimensions(format!("semantic map {width}x{height}")));
        }
        let n = width as usize * height as usize;
        if labels.len() != n {
            return Err(Error::Dimensions(format!(
                "label raster has {} entries, expected {n}",
                labels.len()
            )));
        }
        if class_kinds.is_empty() {
            return Err(Error::invalid("semantic map needs at least one class"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= class_kinds.len()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                class_kinds.len()
            )));
        }
        if let Some(ids) = &instance_ids {
            if ids.len() != n {
                return Err(Error::Dimensions(format!(
                    "instance raster has {} entries, expected {n}",
                    ids.len()
                )));
            }
        }
        Ok(Self {
            width,
            height,
            labels,
            instance_ids,
            class_kinds,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> usize {
        self.class_kinds.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn instance_ids(&self) -> Option<&[u32]> {
        self.instance_ids.as_deref()
    }

    pub fn class_kinds(&self) -> &[ClassKind] {
        &self.class_kinds
    }

    #[inline]
    pub fn label(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn instance(&self, x: u32, y: u32) -> u32 {
        self.instance_ids
            .as_ref()
            .map_or(0, |ids| ids[y as usize * self.width as usize + x as usize])
    }

    pub fn kind_of(&self, class: u32) -> ClassKind {
        self.class_kinds[class as usize]
    }

    /// `H × W × C` one-hot expansion, row-major with the class index fastest.
    pub fn one_hot(&self) -> Vec<u8> {
        let c = self.num_classes();
        let mut out = vec![0u8; self.labels.len() * c];
        for (i, &l) in self.labels.iter().enumerate() {
            out[i * c + l as usize] = 1;
        }
        out
    }

    /// Inverse of [`SemanticMap::one_hot`]; each pixel must carry exactly one hot class.
    pub fn from_one_hot(
        width: u32,
        height: u32,
        one_hot: &[u8],
        instance_ids: Option<Vec<u32>>,
        class_kinds: Vec<ClassKind>,
    ) -> Result<Self> {
        let c = class_kinds.len();
        let n = width as usize * height as usize;
        if c == 0 || one_hot.len() != n * c {
            return Err(Error::Dimensions(format!(
                "one-hot buffer has {} entries, expected {}",
                one_hot.len(),
                n * c
            )));
        }
        let mut labels = Vec::with_capacity(n);
        for px in one_hot.chunks_exact(c) {
            let mut hot = px.iter().enumerate().filter(|(_, &v)| v != 0);
            match (hot.next(), hot.next()) {
                (Some((k, &1)), None) => labels.push(k as u32),
                _ => return Err(Error::invalid("pixel without exactly one hot class")),
            }
        }
        Self::new(width, height, labels, instance_ids, class_kinds)
    }
}
