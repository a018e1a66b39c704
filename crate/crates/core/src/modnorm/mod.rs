//! Numeric reference for spatially-adaptive modulation and the class-balanced
//! segmentation loss. Parameter maps are injected, never learned.

mod tensor;
mod verify;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::semantic::SemanticMap;

pub use tensor::{read_tensor, write_tensor, Tensor, TENSOR_MAGIC};
pub use verify::{verify_suite, Check, VerifyReport};

/// Added under every square root of a variance.
pub const NORM_EPSILON: f64 = 1e-5;
/// Probabilities are clamped to this before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// N×C×H×W activations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    values: Vec<f64>,
}

impl FeatureBlock {
    pub fn new(n: usize, c: usize, h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Dimensions(format!(
                "feature block {n}x{c}x{h}x{w} has a zero dimension"
            )));
        }
        if values.len() != n * c * h * w {
            return Err(Error::Dimensions(format!(
                "feature block {n}x{c}x{h}x{w} needs {} values, got {}",
                n * c * h * w,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature block has non-finite values"));
        }
        Ok(Self { n, c, h, w, values })
    }

    pub fn from_fn(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        values.push(f(i, ch, y, x));
                    }
                }
            }
        }
        Self::new(n, c, h, w, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.values[((n * self.c + c) * self.h + y) * self.w + x]
    }

    /// The `H×W` plane of sample `n`, channel `c`.
    fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &self.values[start..start + hw]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: self.dims().iter().map(|&d| d as u64).collect(),
            values: self.values.clone(),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.dims.as_slice() {
            &[n, c, h, w] => Self::new(n as usize, c as usize, h as usize, w as usize, t.values),
            other => Err(Error::Dimensions(format!("feature block needs rank 4, got {other:?}"))),
        }
    }
}

/// Per-site γ and β, each C×H×W.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMaps {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ParamMaps {
    pub fn new(c: usize, h: usize, w: usize, gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let len = c * h * w;
        if len == 0 || gamma.len() != len || beta.len() != len {
            return Err(Error::Dimensions(format!(
                "param maps {c}x{h}x{w}: gamma {} / beta {} values",
                gamma.len(),
                beta.len()
            )));
        }
        if gamma.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::invalid("param maps have non-finite values"));
        }
        Ok(Self { c, h, w, gamma, beta })
    }

    pub fn constant(c: usize, h: usize, w: usize, gamma: f64, beta: f64) -> Result<Self> {
        Self::new(c, h, w, vec![gamma; c * h * w], vec![beta; c * h * w])
    }

    /// Deterministic pseudo-random maps: γ in [0.5, 1.5), β in [−0.5, 0.5).
    pub fn synthetic(c: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let len = c * h * w;
        let gamma = (0..len).map(|_| rng.uniform(0.5, 1.5)).collect();
        let beta = (0..len).map(|_| rng.uniform(-0.5, 0.5)).collect();
        Self::new(c, h, w, gamma, beta)
    }

    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    pub fn gamma_at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.gamma[self.idx(c, y, x)]
    }

    pub fn beta_at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.beta[self.idx(c, y, x)]
    }

    fn same_dims(&self, other: &ParamMaps) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    alpha_gamma: f64,
    alpha_beta: f64,
}

impl BlendWeights {
    pub fn new(alpha_gamma: f64, alpha_beta: f64) -> Result<Self> {
        for (name, a) in [("alpha_gamma", alpha_gamma), ("alpha_beta", alpha_beta)] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::invalid(format!(
                    "{name} must lie strictly inside (0, 1), got {a}"
                )));
            }
        }
        Ok(Self {
            alpha_gamma,
            alpha_beta,
        })
    }

    pub fn alpha_gamma(&self) -> f64 {
        self.alpha_gamma
    }

    pub fn alpha_beta(&self) -> f64 {
        self.alpha_beta
    }
}

/// Per-channel batch mean and `sqrt(E[x²] − μ² + ε)` over samples and sites.
pub fn batch_stats(block: &FeatureBlock) -> (Vec<f64>, Vec<f64>) {
    let count = (block.n * block.h * block.w) as f64;
    (0..block.c)
        .map(|c| {
            let (mut s, mut s2) = (0.0, 0.0);
            for n in 0..block.n {
                for &v in block.plane(n, c) {
                    s += v;
                    s2 += v * v;
                }
            }
            let mu = s / count;
            let var = (s2 / count - mu * mu).max(0.0);
            (mu, (var + NORM_EPSILON).sqrt())
        })
        .unzip()
}

/// `γ·(h − μ_c)/σ_c + β` with batch statistics of `block`.
pub fn spatial_modulate(block: &FeatureBlock, params: &ParamMaps) -> Result<FeatureBlock> {
    if (params.c, params.h, params.w) != (block.c, block.h, block.w) {
        return Err(Error::Dimensions(format!(
            "param maps {}x{}x{} vs block channels/sites {}x{}x{}",
            params.c, params.h, params.w, block.c, block.h, block.w
        )));
    }
    let (mu, sigma) = batch_stats(block);
    FeatureBlock::from_fn(block.n, block.c, block.h, block.w, |n, c, y, x| {
        params.gamma_at(c, y, x) * (block.get(n, c, y, x) - mu[c]) / sigma[c] + params.beta_at(c, y, x)
    })
}

/// Elementwise `α·semantic + (1 − α)·retrieval` for γ and β separately,
/// evaluated as `r + α(s − r)` so equal inputs come back bit-identical.
pub fn blend_params(semantic: &ParamMaps, retrieval: &ParamMaps, weights: BlendWeights) -> Result<ParamMaps> {
    if !semantic.same_dims(retrieval) {
        return Err(Error::Dimensions(
            "semantic and retrieval param maps differ in shape".into(),
        ));
    }
    let mix = |a: f64, s: &[f64], r: &[f64]| -> Vec<f64> { s.iter().zip(r).map(|(s, r)| r + a * (s - r)).collect() };
    ParamMaps::new(
        semantic.c,
        semantic.h,
        semantic.w,
        mix(weights.alpha_gamma, &semantic.gamma, &retrieval.gamma),
        mix(weights.alpha_beta, &semantic.beta, &retrieval.beta),
    )
}

/// Per-(sample, channel) mean and `sqrt(var + ε)`, indexed `n * C + c`.
pub fn instance_stats(block: &FeatureBlock) -> (Vec<f64>, Vec<f64>) {
    let count = (block.h * block.w) as f64;
    (0..block.n * block.c)
        .map(|i| {
            let plane = block.plane(i / block.c, i % block.c);
            let mu = plane.iter().sum::<f64>() / count;
            let var = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
            (mu, (var + NORM_EPSILON).sqrt())
        })
        .unzip()
}

/// Adaptive instance normalization towards per-channel style statistics.
pub fn adain_modulate(block: &FeatureBlock, style_mu: &[f64], style_sigma: &[f64]) -> Result<FeatureBlock> {
    if style_mu.len() != block.c || style_sigma.len() != block.c {
        return Err(Error::Dimensions(format!(
            "style has {}/{} channels, block has {}",
            style_mu.len(),
            style_sigma.len(),
            block.c
        )));
    }
    if style_sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || style_mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::invalid("style sigma must be finite and >= 0, style mu finite"));
    }
    let (mu, sigma) = instance_stats(block);
    FeatureBlock::from_fn(block.n, block.c, block.h, block.w, |n, c, y, x| {
        let i = n * block.c + c;
        style_sigma[c] * (block.get(n, c, y, x) - mu[i]) / sigma[i] + style_mu[c]
    })
}

/// Predicted class probabilities (H×W×C) plus per-class loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    probs: Vec<f64>,
    class_weights: Vec<f64>,
}

impl ClassProbMap {
    pub fn new(h: usize, w: usize, c: usize, probs: Vec<f64>, class_weights: Vec<f64>) -> Result<Self> {
        if h * w * c == 0 || probs.len() != h * w * c || class_weights.len() != c {
            return Err(Error::Dimensions(format!(
                "prob map {h}x{w}x{c}: {} probs, {} weights",
                probs.len(),
                class_weights.len()
            )));
        }
        if class_weights.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::invalid("class weights must be finite and >= 0"));
        }
        for (i, px) in probs.chunks_exact(c).enumerate() {
            if px.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
                return Err(Error::invalid(format!("pixel {i}: probabilities must lie in [0, 1]")));
            }
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("pixel {i}: probabilities sum to {sum}")));
            }
        }
        Ok(Self {
            h,
            w,
            c,
            probs,
            class_weights,
        })
    }

    pub fn prob(&self, y: usize, x: usize, c: usize) -> f64 {
        self.probs[(y * self.w + x) * self.c + c]
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }
}

/// Inverse pixel frequency per class, normalized so the classes present in
/// `map` average 1. Absent classes get weight 0.
pub fn default_class_weights(map: &SemanticMap) -> Vec<f64> {
    let mut counts = vec![0u64; map.num_classes()];
    for &l in map.labels() {
        counts[l as usize] += 1;
    }
    let inv: Vec<f64> = counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { 1.0 / n as f64 })
        .collect();
    let present = counts.iter().filter(|&&n| n > 0).count() as f64;
    let mean = inv.iter().sum::<f64>() / present;
    inv.into_iter().map(|v| v / mean).collect()
}

/// `−(1/(H·W)) Σ_c α_c Σ_{i,j} M_{i,j,c} log p_{i,j,c}`, probabilities floored at 1e-12.
pub fn segmentation_loss(map: &SemanticMap, probs: &ClassProbMap) -> Result<f64> {
    let (w, h) = map.dims();
    if (h as usize, w as usize, map.num_classes()) != (probs.h, probs.w, probs.c) {
        return Err(Error::Dimensions(format!(
            "map {h}x{w}x{} vs probs {}x{}x{}",
            map.num_classes(),
            probs.h,
            probs.w,
            probs.c
        )));
    }
    let mut total = 0.0;
    for y in 0..h as usize {
        for x in 0..w as usize {
            let c = map.label(x as u32, y as u32) as usize;
            total += probs.class_weights[c] * probs.prob(y, x, c).max(PROB_FLOOR).ln();
        }
    }
    Ok(-total / (h as f64 * w as f64))
}
