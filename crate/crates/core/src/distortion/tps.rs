//! Thin-plate spline warps with kernel `U(r) = r² log r²`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{quantize, BinaryMask, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsWarp {
    pub source_points: Vec<[f64; 2]>,
    pub target_points: Vec<[f64; 2]>,
    /// One `(wx, wy)` per control point.
    pub kernel_weights: Vec<[f64; 2]>,
    /// Rows: constant, x, y; columns: output x, output y.
    pub affine_coefficients: [[f64; 2]; 3],
    pub regularization: f64,
}

fn kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

fn check_points(points: &[[f64; 2]]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Tps(format!(
            "need at least 3 control points, got {}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Tps("non-finite control point".into()));
    }
    // Twice the largest triangle area spanned with the first point, relative to the spread.
    let p0 = points[0];
    let spread = points
        .iter()
        .map(|p| (p[0] - p0[0]).hypot(p[1] - p0[1]))
        .fold(0.0, f64::max);
    let area = points
        .iter()
        .flat_map(|a| points.iter().map(move |b| (a, b)))
        .map(|(a, b)| ((a[0] - p0[0]) * (b[1] - p0[1]) - (a[1] - p0[1]) * (b[0] - p0[0])).abs())
        .fold(0.0, f64::max);
    if spread == 0.0 || area <= 1e-9 * spread * spread {
        return Err(Error::Tps(
            "control points are collinear; the affine part is undetermined".into(),
        ));
    }
    Ok(())
}

/// Solve the spline mapping `source[k]` to `target[k]`. With `regularization > 0`
/// the fit is smoothed and no longer interpolates exactly.
pub fn tps_solve(source: &[[f64; 2]], target: &[[f64; 2]], regularization: f64) -> Result<TpsWarp> {
    if source.len() != target.len() {
        return Err(Error::Tps(format!(
            "{} source points but {} target points",
            source.len(),
            target.len()
        )));
    }
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(Error::Tps(format!(
            "regularization must be finite and >= 0, got {regularization}"
        )));
    }
    check_points(source)?;
    if target.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Tps("non-finite target point".into()));
    }
    let n = source.len();
    let mut a = DMatrix::<f64>::zeros(n + 3, n + 3);
    for i in 0..n {
        for j in 0..n {
            let (dx, dy) = (source[i][0] - source[j][0], source[i][1] - source[j][1]);
            a[(i, j)] = kernel(dx * dx + dy * dy);
        }
        a[(i, i)] += regularization;
        let row = [1.0, source[i][0], source[i][1]];
        for (k, v) in row.into_iter().enumerate() {
            a[(i, n + k)] = v;
            a[(n + k, i)] = v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(n + 3, 2);
    for i in 0..n {
        rhs[(i, 0)] = target[i][0];
        rhs[(i, 1)] = target[i][1];
    }
    let singular = || Error::Tps("singular spline system (duplicate control points?); use regularization > 0".into());
    let sol = a.clone().lu().solve(&rhs).ok_or_else(singular)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    // Reject near-singular solves whose residual is not small.
    let resid = (&a * &sol - &rhs).abs().max();
    let scale = a.abs().max() * sol.abs().max() + rhs.abs().max();
    if resid > 1e-9 * scale {
        return Err(singular());
    }
    Ok(TpsWarp {
        source_points: source.to_vec(),
        target_points: target.to_vec(),
        kernel_weights: (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect(),
        affine_coefficients: [
            [sol[(n, 0)], sol[(n, 1)]],
            [sol[(n + 1, 0)], sol[(n + 1, 1)]],
            [sol[(n + 2, 0)], sol[(n + 2, 1)]],
        ],
        regularization,
    })
}

impl TpsWarp {
    pub fn is_identity(&self) -> bool {
        self.source_points == self.target_points
    }

    /// Map a point through the spline.
    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        let a = &self.affine_coefficients;
        let mut out = [
            a[0][0] + a[1][0] * p[0] + a[2][0] * p[1],
            a[0][1] + a[1][1] * p[0] + a[2][1] * p[1],
        ];
        for (s, w) in self.source_points.iter().zip(&self.kernel_weights) {
            let (dx, dy) = (p[0] - s[0], p[1] - s[1]);
            let u = kernel(dx * dx + dy * dy);
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    /// The spline mapping target points back onto source points.
    pub fn inverse_fit(&self) -> Result<TpsWarp> {
        tps_solve(&self.target_points, &self.source_points, self.regularization)
    }
}

/// A warped segment in a frame whose top-left sits at `origin` in the input's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedSegment {
    pub origin: (i64, i64),
    pub mask: BinaryMask,
    pub rgb: RgbImage,
}

/// Warp a segment forward along `warp` by sampling a backward flow at every
/// output pixel. The output frame is the input frame grown by `margin` on each
/// side. Masks use nearest sampling; colours use bilinear weights restricted to
/// masked source pixels, so no colour outside the segment leaks in.
pub fn tps_apply(warp: &TpsWarp, mask: &BinaryMask, rgb: &RgbImage, margin: u32) -> Result<WarpedSegment> {
    if mask.dims() != rgb.dims() {
        return Err(Error::Dimensions(format!(
            "mask {:?} vs rgb {:?}",
            mask.dims(),
            rgb.dims()
        )));
    }
    let m = margin as i64;
    let (w, h) = mask.dims();
    let (ow, oh) = (w + 2 * margin, h + 2 * margin);
    let backward = if warp.is_identity() {
        None
    } else {
        Some(warp.inverse_fit()?)
    };

    let mut out_mask = BinaryMask::empty(ow, oh);
    let mut out_rgb = RgbImage::black(ow, oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let q = [(ox as i64 - m) as f64, (oy as i64 - m) as f64];
            let s = backward.as_ref().map_or(q, |b| b.eval(q));
            if !mask.get_signed(s[0].round() as i64, s[1].round() as i64) {
                continue;
            }
            let (x0, y0) = (s[0].floor(), s[1].floor());
            let (fx, fy) = (s[0] - x0, s[1] - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let mut acc = [0.0f64; 3];
            let mut wsum = 0.0;
            for (dx, dy, wt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                let (sx, sy) = (x0 + dx, y0 + dy);
                if wt > 0.0 && mask.get_signed(sx, sy) {
                    let px = rgb.get(sx as u32, sy as u32);
                    for c in 0..3 {
                        acc[c] += wt * px[c] as f64;
                    }
                    wsum += wt;
                }
            }
            out_mask.set(ox, oy, true);
            out_rgb.put(ox, oy, acc.map(|v| quantize(v / wsum)));
        }
    }
    Ok(WarpedSegment {
        origin: (-m, -m),
        mask: out_mask,
        rgb: out_rgb,
    })
}
