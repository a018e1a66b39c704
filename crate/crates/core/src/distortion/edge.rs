//! Outer-boundary tracing and arc-length sampling.

use crate::error::{Error, Result};
use crate::raster::BinaryMask;
use crate::rng::Rng;

pub const EDGE_POINT_COUNT: usize = 10;

/// Clockwise (y down) starting west.
const DIRS: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("unit neighbour step")
}

/// Moore-neighbour trace of the outer boundary of the component containing the
/// first set pixel in raster order. Returns the closed pixel loop without
/// repeating the start.
pub fn trace_boundary(mask: &BinaryMask) -> Vec<(i64, i64)> {
    let Some(first) = mask.bits().iter().position(|&b| b) else {
        return Vec::new();
    };
    let w = mask.width() as usize;
    let start = ((first % w) as i64, (first / w) as i64);
    let mut trace = vec![start];
    let mut p = start;
    // The pixel west of the raster-first pixel is always unset.
    let mut back = 0usize;
    let limit = 4 * mask.bits().len() + 8;
    for _ in 0..limit {
        let Some(d) = (1..=8)
            .map(|k| (back + k) % 8)
            .find(|&d| mask.get_signed(p.0 + DIRS[d].0, p.1 + DIRS[d].1))
        else {
            break; // isolated pixel
        };
        let c = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
        if p == start && trace.len() > 1 && c == trace[1] {
            break;
        }
        let prev = (d + 7) % 8;
        let q = (p.0 + DIRS[prev].0, p.1 + DIRS[prev].1);
        back = dir_index(q.0 - c.0, q.1 - c.1);
        trace.push(c);
        p = c;
    }
    if trace.len() > 1 && trace.last() == Some(&start) {
        trace.pop();
    }
    trace
}

/// `count` points at equal arc-length spacing along the traced outer boundary,
/// starting at a random offset. Points lie on the boundary polyline.
pub fn sample_edge_points(mask: &BinaryMask, count: usize, rng: &mut Rng) -> Result<Vec<[f64; 2]>> {
    if count == 0 {
        return Err(Error::invalid("edge point count must be positive"));
    }
    let trace = trace_boundary(mask);
    if trace.len() < count {
        return Err(Error::invalid(format!(
            "boundary has {} pixels, need at least {count}",
            trace.len()
        )));
    }
    let n = trace.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 0..n {
        let (a, b) = (trace[i], trace[(i + 1) % n]);
        let step = (((b.0 - a.0).pow(2) + (b.1 - a.1).pow(2)) as f64).sqrt();
        cum.push(cum[i] + step);
    }
    let total = cum[n];
    let offset = rng.uniform(0.0, total);
    Ok((0..count)
        .map(|k| {
            let s = (offset + k as f64 * total / count as f64) % total;
            let i = cum.partition_point(|&c| c <= s) - 1;
            let (a, b) = (trace[i], trace[(i + 1) % n]);
            let t = (s - cum[i]) / (cum[i + 1] - cum[i]);
            [a.0 as f64 + t * (b.0 - a.0) as f64, a.1 as f64 + t * (b.1 - a.1) as f64]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Clockwise perimeter position of a point on the border ring of a `side` square.
    fn square_arc(p: [f64; 2], side: f64) -> f64 {
        let m = side - 1.0;
        let (x, y) = (p[0], p[1]);
        if y.abs() < 1e-9 {
            x
        } else if (x - m).abs() < 1e-9 {
            m + y
        } else if (y - m).abs() < 1e-9 {
            2.0 * m + (m - x)
        } else {
            assert!(x.abs() < 1e-9, "{p:?} not on the border");
            3.0 * m + (m - y)
        }
    }

    #[test]
    fn square_perimeter_equal_gaps() {
        let mask = BinaryMask::full(100, 100);
        assert_eq!(trace_boundary(&mask).len(), 396);
        for seed in 0..5 {
            let pts = sample_edge_points(&mask, EDGE_POINT_COUNT, &mut Rng::new(seed)).unwrap();
            assert_eq!(pts.len(), 10);
            let arcs: Vec<f64> = pts.iter().map(|&p| square_arc(p, 100.0)).collect();
            for k in 0..10 {
                let gap = (arcs[(k + 1) % 10] - arcs[k]).rem_euclid(396.0);
                assert!((gap - 39.6).abs() <= 1.0, "gap {gap}");
            }
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let mask = BinaryMask::from_fn(30, 20, |x, y| (x as i32 - 15).pow(2) + 3 * (y as i32 - 10).pow(2) < 150);
        let a = sample_edge_points(&mask, 10, &mut Rng::new(4)).unwrap();
        let b = sample_edge_points(&mask, 10, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_mask_is_an_error() {
        assert!(sample_edge_points(&BinaryMask::full(2, 2), 10, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn trace_visits_only_boundary_pixels() {
        let mask = BinaryMask::from_fn(12, 9, |x, y| (x as i32 - 6).pow(2) + (y as i32 - 4).pow(2) <= 16);
        let trace = trace_boundary(&mask);
        for &(x, y) in &trace {
            assert!(mask.get_signed(x, y));
            let interior = [(-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .all(|(dx, dy)| mask.get_signed(x + dx, y + dy));
            assert!(!interior, "({x},{y}) is interior");
        }
        for i in 0..trace.len() {
            let (a, b) = (trace[i], trace[(i + 1) % trace.len()]);
            assert!((a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1);
        }
    }

    #[test]
    fn single_row_and_pixel() {
        assert_eq!(trace_boundary(&BinaryMask::full(1, 1)), vec![(0, 0)]);
        // A 1-pixel-wide line is walked there and back.
        assert_eq!(trace_boundary(&BinaryMask::full(5, 1)).len(), 8);
    }
}
