//! lαβ colour space (RGB → LMS → log10 → decorrelated opponent axes).

use std::sync::LazyLock;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{quantize, BinaryMask, RgbImage};

/// Added to LMS before the log so that black stays finite.
pub const LOG_EPSILON: f64 = 1.0 / 255.0;

#[rustfmt::skip]
static RGB_TO_LMS: LazyLock<Matrix3<f64>> = LazyLock::new(|| Matrix3::new(
    0.3811, 0.5783, 0.0402,
    0.1967, 0.7244, 0.0782,
    0.0241, 0.1288, 0.8444,
));

static LMS_TO_RGB: LazyLock<Matrix3<f64>> =
    LazyLock::new(|| RGB_TO_LMS.try_inverse().expect("RGB->LMS matrix is invertible"));

const INV_SQRT3: f64 = 0.577_350_269_189_625_8;
const INV_SQRT6: f64 = 0.408_248_290_463_863;
const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One 8-bit RGB pixel in lαβ.
pub fn rgb_pixel_to_lab(px: [u8; 3]) -> [f64; 3] {
    let rgb = nalgebra::Vector3::new(px[0] as f64, px[1] as f64, px[2] as f64) / 255.0;
    let lms = *RGB_TO_LMS * rgb;
    let (l, m, s) = (
        (lms.x + LOG_EPSILON).log10(),
        (lms.y + LOG_EPSILON).log10(),
        (lms.z + LOG_EPSILON).log10(),
    );
    [
        (l + m + s) * INV_SQRT3,
        (l + m - 2.0 * s) * INV_SQRT6,
        (l - m) * INV_SQRT2,
    ]
}

/// Inverse of [`rgb_pixel_to_lab`] on the 0..255 scale, unclamped and unrounded.
pub fn lab_pixel_to_rgb_f64(lab: [f64; 3]) -> [f64; 3] {
    let (a, b, c) = (lab[0] * INV_SQRT3, lab[1] * INV_SQRT6, lab[2] * INV_SQRT2);
    let log_lms = [a + b + c, a + b - c, a - 2.0 * b];
    let lms = nalgebra::Vector3::from_iterator(log_lms.iter().map(|v| 10f64.powf(*v) - LOG_EPSILON));
    let rgb = *LMS_TO_RGB * lms * 255.0;
    [rgb.x, rgb.y, rgb.z]
}

pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    lab_pixel_to_rgb_f64(lab).map(quantize)
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: u32,
    height: u32,
    channels: [Vec<f64>; 3],
}

impl LabImage {
    pub fn new(width: u32, height: u32, channels: [Vec<f64>; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Dimensions(format!("lab channels do not match {width}x{height}")));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("lab image has non-finite values"));
        }
        Ok(Self {
            width,
            height,
            channels,
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

    /// Channel 0 = l, 1 = α, 2 = β.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let i = (y * self.width + x) as usize;
        [self.channels[0][i], self.channels[1][i], self.channels[2][i]]
    }

    pub(crate) fn set(&mut self, x: u32, y: u32, v: [f64; 3]) {
        let i = (y * self.width + x) as usize;
        for (ch, val) in self.channels.iter_mut().zip(v) {
            ch[i] = val;
        }
    }

    /// Statistics over the pixels selected by `mask`.
    pub fn masked_stats(&self, mask: &BinaryMask) -> Result<[ChannelStats; 3]> {
        if mask.dims() != self.dims() {
            return Err(Error::Dimensions(format!(
                "mask {:?} vs lab image {:?}",
                mask.dims(),
                self.dims()
            )));
        }
        let n = mask.popcount();
        if n == 0 {
            return Err(Error::EmptyMask("lab statistics"));
        }
        let sel = |c: usize| {
            self.channels[c]
                .iter()
                .zip(mask.bits())
                .filter_map(|(v, &b)| b.then_some(*v))
        };
        Ok(std::array::from_fn(|c| {
            let mean = sel(c).sum::<f64>() / n as f64;
            let var = sel(c).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            ChannelStats { mean, std: var.sqrt() }
        }))
    }
}

pub fn rgb_to_lab(image: &RgbImage) -> LabImage {
    let n = image.width() as usize * image.height() as usize;
    let mut channels = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for px in image.as_raw().chunks_exact(3) {
        let lab = rgb_pixel_to_lab([px[0], px[1], px[2]]);
        for c in 0..3 {
            channels[c].push(lab[c]);
        }
    }
    LabImage {
        width: image.width(),
        height: image.height(),
        channels,
    }
}

/// Back to 8-bit RGB, rounding and clamping to `[0, 255]`.
pub fn lab_to_rgb(image: &LabImage) -> RgbImage {
    RgbImage::from_fn(image.width, image.height, |x, y| lab_pixel_to_rgb(image.get(x, y)))
}
