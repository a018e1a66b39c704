//! Dataset discovery and raster loading.
//!
//! A dataset root holds `images/`, `labels/` and optionally `instances/`, with
//! files paired by stem. A JSON manifest may replace the directory scan. Label
//! rasters are single-channel PNGs whose value is the class id; instance
//! rasters are 16-bit PNGs where 0 means "no instance".

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::semantic::{ClassKind, SemanticMap};

pub const DEFAULT_CONFIG_NAME: &str = "dataset.json";

/// Class inventory of a dataset: how many classes, and which are things vs stuff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub class_kinds: Vec<ClassKind>,
    #[serde(default)]
    pub class_names: Vec<String>,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::invalid("dataset config: num_classes must be positive"));
        }
        if self.class_kinds.len() != self.num_classes {
            return Err(Error::invalid(format!(
                "dataset config: {} class_kinds for {} classes",
                self.class_kinds.len(),
                self.num_classes
            )));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return Err(Error::invalid(format!(
                "dataset config: {} class_names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub image_id: String,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    pub instance_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    image_id: String,
    image: PathBuf,
    label: PathBuf,
    #[serde(default)]
    instance: Option<PathBuf>,
}

fn stems_in(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Enumerate dataset triples, sorted by image id, with raster dimensions validated.
pub fn load_dataset(root: &Path, manifest: Option<&Path>) -> Result<Vec<DatasetEntry>> {
    let mut entries = match manifest {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let m: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            m.entries
                .into_iter()
                .map(|e| DatasetEntry {
                    image_id: e.image_id,
                    image_path: root.join(e.image),
                    label_path: root.join(e.label),
                    instance_path: e.instance.map(|p| root.join(p)),
                })
                .collect::<Vec<_>>()
        }
        None => {
            if !root.is_dir() {
                return Err(Error::io(
                    root,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
                ));
            }
            let images = stems_in(&root.join("images"), &["png", "jpg", "jpeg"])?;
            let labels = stems_in(&root.join("labels"), &["png"])?;
            let instances = stems_in(&root.join("instances"), &["png"])?;
            let mut out = Vec::with_capacity(images.len());
            for (id, image_path) in images {
                let label_path = labels.get(&id).cloned().ok_or_else(|| Error::Dataset {
                    image_id: id.clone(),
                    msg: format!("no label raster for {}", image_path.display()),
                })?;
                out.push(DatasetEntry {
                    instance_path: instances.get(&id).cloned(),
                    image_id: id,
                    image_path,
                    label_path,
                });
            }
            out
        }
    };
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if let Some(w) = entries.windows(2).find(|w| w[0].image_id == w[1].image_id) {
        return Err(Error::Dataset {
            image_id: w[0].image_id.clone(),
            msg: "duplicate image id".into(),
        });
    }
    for e in &entries {
        let dims = raster_dims(&e.image_path)?;
        let ldims = raster_dims(&e.label_path)?;
        if dims != ldims {
            return Err(Error::Dataset {
                image_id: e.image_id.clone(),
                msg: format!("image is {}x{} but label is {}x{}", dims.0, dims.1, ldims.0, ldims.1),
            });
        }
        if let Some(ip) = &e.instance_path {
            let idims = raster_dims(ip)?;
            if idims != dims {
                return Err(Error::Dataset {
                    image_id: e.image_id.clone(),
                    msg: format!(
                        "instance raster is {}x{}, image is {}x{}",
                        idims.0, idims.1, dims.0, dims.1
                    ),
                });
            }
        }
    }
    Ok(entries)
}

fn raster_dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    RgbImage::from_image(open(path)?.into_rgb8())
}

fn single_channel(path: &Path) -> Result<(u32, u32, Vec<u32>)> {
    let img = open(path)?;
    let (w, h) = (img.width(), img.height());
    let values = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Dimensions(format!(
                "{}: expected a single-channel raster, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok((w, h, values))
}

/// Read a label raster and optional instance raster into a [`SemanticMap`].
pub fn read_semantic_map(
    label_path: &Path,
    instance_path: Option<&Path>,
    class_kinds: &[ClassKind],
) -> Result<SemanticMap> {
    let (w, h, labels) = single_channel(label_path)?;
    let instances = match instance_path {
        Some(p) => {
            let (iw, ih, ids) = single_channel(p)?;
            if (iw, ih) != (w, h) {
                return Err(Error::Dimensions(format!(
                    "{}: instance raster {iw}x{ih} vs label {w}x{h}",
                    p.display()
                )));
            }
            Some(ids)
        }
        None => None,
    };
    SemanticMap::new(w, h, labels, instances, class_kinds.to_vec()).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::invalid(format!("{}: {msg}", label_path.display())),
        other => other,
    })
}

pub fn write_label_png(map: &SemanticMap, path: &Path) -> Result<()> {
    let raw: Vec<u8> = map
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} exceeds 8 bits"))))
        .collect::<Result<_>>()?;
    image::GrayImage::from_raw(map.width(), map.height(), raw)
        .expect("size checked")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_instance_png(map: &SemanticMap, path: &Path) -> Result<()> {
    let ids = map
        .instance_ids()
        .ok_or_else(|| Error::invalid("semantic map carries no instance ids"))?;
    let raw: Vec<u16> = ids
        .iter()
        .map(|&i| u16::try_from(i).map_err(|_| Error::invalid(format!("instance id {i} exceeds 16 bits"))))
        .collect::<Result<_>>()?;
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(map.width(), map.height(), raw)
        .expect("size checked")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// A dataset entry with its rasters decoded.
#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub image_id: String,
    pub image: RgbImage,
    pub map: SemanticMap,
}

impl LoadedEntry {
    pub fn load(entry: &DatasetEntry, config: &DatasetConfig) -> Result<Self> {
        let image = read_rgb(&entry.image_path)?;
        let map =
            read_semantic_map(&entry.label_path, entry.instance_path.as_deref(), &config.class_kinds).map_err(|e| {
                Error::Dataset {
                    image_id: entry.image_id.clone(),
                    msg: e.to_string(),
                }
            })?;
        if image.dims() != map.dims() {
            return Err(Error::Dataset {
                image_id: entry.image_id.clone(),
                msg: "image and label dimensions differ".into(),
            });
        }
        Ok(Self {
            image_id: entry.image_id.clone(),
            image,
            map,
        })
    }
}
