//! Raster primitives: 8-bit RGB images, binary masks and the two resize kernels.
//!
//! Resampling conventions are fixed crate-wide:
//! * masks and label rasters use nearest neighbour with
//!   `src = floor(dst * src_len / dst_len)`;
//! * RGB content uses bilinear filtering with half-pixel centres
//!   (`src = (dst + 0.5) * src_len / dst_len - 0.5`, clamped to the edge).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel units, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bbox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Bbox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn diagonal(&self) -> f64 {
        ((self.w as f64).powi(2) + (self.h as f64).powi(2)).sqrt()
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimensions(format!("rgb image {width}x{height}")));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::Dimensions(format!(
                "rgb buffer has {} bytes, expected {expected}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0);
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self { width, height, data }
    }

    pub fn black(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut img = Self::black(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
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

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&px);
    }

    pub fn crop(&self, bbox: Bbox) -> Result<Self> {
        if !bbox.fits_within(self.width, self.height) || bbox.w == 0 || bbox.h == 0 {
            return Err(Error::Dimensions(format!(
                "crop {bbox:?} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(bbox.w, bbox.h, |x, y| self.get(bbox.x + x, bbox.y + y)))
    }

    /// Copy with every pixel outside `mask` set to black.
    pub fn masked(&self, mask: &BinaryMask) -> Self {
        assert_eq!(self.dims(), mask.dims());
        Self::from_fn(self.width, self.height, |x, y| {
            if mask.get(x, y) {
                self.get(x, y)
            } else {
                [0, 0, 0]
            }
        })
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer size checked at construction")
    }

    pub fn from_image(img: image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimensions(format!("mask {width}x{height}")));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::Dimensions(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                width as usize * height as usize
            )));
        }
        Ok(Self { width, height, bits })
    }

    /// Like [`BinaryMask::new`] but rejects masks without a set bit, as required
    /// for every segment mask.
    pub fn segment(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        let m = Self::new(width, height, bits)?;
        if m.popcount() == 0 {
            return Err(Error::EmptyMask("segment masks need at least one set pixel"));
        }
        Ok(m)
    }

    pub fn empty(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Out-of-range coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn popcount(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Tight bounding box of the set bits, `None` for an empty mask.
    pub fn tight_bbox(&self) -> Option<Bbox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != u32::MAX).then(|| Bbox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn crop(&self, bbox: Bbox) -> Result<Self> {
        if !bbox.fits_within(self.width, self.height) || bbox.w == 0 || bbox.h == 0 {
            return Err(Error::Dimensions(format!(
                "crop {bbox:?} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(bbox.w, bbox.h, |x, y| self.get(bbox.x + x, bbox.y + y)))
    }

    /// 8-bit grey rendering, 255 for set pixels.
    pub fn to_image(&self) -> image::GrayImage {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width, self.height, raw).expect("size checked")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Nearest-neighbour resize: `out(x, y) = in(floor(x·w/tw), floor(y·h/th))`.
pub fn resize_nearest(mask: &BinaryMask, target_w: u32, target_h: u32) -> Result<BinaryMask> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Dimensions(format!("resize target {target_w}x{target_h}")));
    }
    if mask.dims() == (target_w, target_h) {
        return Ok(mask.clone());
    }
    let xs = nearest_index_map(mask.width, target_w);
    let ys = nearest_index_map(mask.height, target_h);
    let mut bits = Vec::with_capacity(target_w as usize * target_h as usize);
    for &sy in &ys {
        for &sx in &xs {
            bits.push(mask.get(sx, sy));
        }
    }
    BinaryMask::new(target_w, target_h, bits)
}

/// Source index for every destination index under the nearest-neighbour rule.
pub(crate) fn nearest_index_map(src_len: u32, dst_len: u32) -> Vec<u32> {
    (0..dst_len as u64)
        .map(|d| (d * src_len as u64 / dst_len as u64) as u32)
        .collect()
}

struct Tap {
    i0: u32,
    i1: u32,
    frac: f64,
}

fn bilinear_taps(src_len: u32, dst_len: u32) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    let max = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor();
            let i1 = (i0 + 1.0).min(max);
            Tap {
                i0: i0 as u32,
                i1: i1 as u32,
                frac: s - i0,
            }
        })
        .collect()
}

/// Bilinear resize with half-pixel-centre alignment and edge clamping.
pub fn resize_bilinear(image: &RgbImage, target_w: u32, target_h: u32) -> Result<RgbImage> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Dimensions(format!("resize target {target_w}x{target_h}")));
    }
    if image.dims() == (target_w, target_h) {
        return Ok(image.clone());
    }
    let xt = bilinear_taps(image.width, target_w);
    let yt = bilinear_taps(image.height, target_h);
    let mut out = RgbImage::black(target_w, target_h);
    for (y, ty) in yt.iter().enumerate() {
        for (x, tx) in xt.iter().enumerate() {
            let p00 = image.get(tx.i0, ty.i0);
            let p10 = image.get(tx.i1, ty.i0);
            let p01 = image.get(tx.i0, ty.i1);
            let p11 = image.get(tx.i1, ty.i1);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - tx.frac) + p10[c] as f64 * tx.frac;
                let bot = p01[c] as f64 * (1.0 - tx.frac) + p11[c] as f64 * tx.frac;
                px[c] = quantize(top * (1.0 - ty.frac) + bot * ty.frac);
            }
            out.put(x as u32, y as u32, px);
        }
    }
    Ok(out)
}

/// Round-half-away and clamp to the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
