//! Self-check of the modulation and loss formulas on seeded random inputs.

use serde::{Deserialize, Serialize};

use super::*;
use crate::semantic::ClassKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Suite {
    checks: Vec<Check>,
}

impl Suite {
    /// Record `err <= tol`.
    fn within(&mut self, name: &str, err: f64, tol: f64) {
        self.checks.push(Check {
            name: name.into(),
            passed: err <= tol,
            detail: format!("max error {err:.3e} (tolerance {tol:.0e})"),
        });
    }

    fn holds(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed: ok,
            detail: detail.into(),
        });
    }

    fn run(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<()>) {
        if let Err(e) = f(self) {
            self.holds(name, false, format!("error: {e}"));
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_block(rng: &mut Rng, n: usize, c: usize, h: usize, w: usize) -> Result<FeatureBlock> {
    let offsets: Vec<f64> = (0..c).map(|_| rng.uniform(-3.0, 3.0)).collect();
    let scales: Vec<f64> = (0..c).map(|_| rng.uniform(0.5, 4.0)).collect();
    FeatureBlock::from_fn(n, c, h, w, |_, ch, _, _| {
        offsets[ch] + scales[ch] * rng.uniform(-1.0, 1.0)
    })
}

/// Two-pass per-channel mean and population std (no epsilon).
fn two_pass(block: &FeatureBlock) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = block.dims();
    let count = (n * h * w) as f64;
    (0..c)
        .map(|ch| {
            let vals =
                || (0..n).flat_map(move |i| (0..h).flat_map(move |y| (0..w).map(move |x| block.get(i, ch, y, x))));
            let mu = vals().sum::<f64>() / count;
            let var = vals().map(|v| (v - mu).powi(2)).sum::<f64>() / count;
            (mu, var.sqrt())
        })
        .unzip()
}

/// Run every identity of the module with inputs drawn from `seed`.
pub fn verify_suite(seed: u64) -> VerifyReport {
    let mut rng = Rng::new(seed);
    let mut s = Suite { checks: Vec::new() };

    s.run("batch_stats.two_point", |s| {
        let (mu, sigma) = batch_stats(&FeatureBlock::new(2, 1, 1, 1, vec![1.0, 3.0])?);
        s.within(
            "batch_stats.two_point",
            (mu[0] - 2.0).abs().max((sigma[0] - (1.0 + NORM_EPSILON).sqrt()).abs()),
            1e-12,
        );
        Ok(())
    });
    s.run("batch_stats.constant", |s| {
        let (mu, sigma) = batch_stats(&FeatureBlock::new(1, 1, 3, 3, vec![-7.0; 9])?);
        s.within(
            "batch_stats.constant",
            (mu[0] + 7.0).abs().max((sigma[0] - NORM_EPSILON.sqrt()).abs()),
            1e-12,
        );
        Ok(())
    });
    s.run("batch_stats.two_pass_oracle", |s| {
        let b = random_block(&mut rng, 2, 3, 4, 4)?;
        let (mu, sigma) = batch_stats(&b);
        let (omu, ostd) = two_pass(&b);
        let osigma: Vec<f64> = ostd.iter().map(|v| (v * v + NORM_EPSILON).sqrt()).collect();
        s.within(
            "batch_stats.two_pass_oracle",
            max_abs_diff(&mu, &omu).max(max_abs_diff(&sigma, &osigma)),
            1e-6,
        );
        Ok(())
    });
    s.run("modulate.identity_normalizes", |s| {
        let b = random_block(&mut rng, 4, 3, 8, 8)?;
        let out = spatial_modulate(&b, &ParamMaps::constant(3, 8, 8, 1.0, 0.0)?)?;
        let (mu, sd) = two_pass(&out);
        let mean_err = mu.iter().map(|m| m.abs()).fold(0.0, f64::max);
        let std_err = sd.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        s.holds(
            "modulate.identity_normalizes",
            mean_err < 1e-5 && std_err < 1e-3,
            format!("max |mean| {mean_err:.2e}, max |std-1| {std_err:.2e}"),
        );
        Ok(())
    });
    s.run("modulate.per_site_oracle", |s| {
        let b = random_block(&mut rng, 2, 2, 3, 3)?;
        // Checkerboard γ, random β.
        let gamma = (0..18)
            .map(|i| if (i % 3 + i / 3) % 2 == 0 { 2.5 } else { -0.5 })
            .collect();
        let beta = (0..18).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let p = ParamMaps::new(2, 3, 3, gamma, beta)?;
        let out = spatial_modulate(&b, &p)?;
        let (mu, sd) = two_pass(&b);
        let mut err: f64 = 0.0;
        for n in 0..2 {
            for c in 0..2 {
                for y in 0..3 {
                    for x in 0..3 {
                        let sigma = (sd[c] * sd[c] + NORM_EPSILON).sqrt();
                        let want = p.gamma_at(c, y, x) * (b.get(n, c, y, x) - mu[c]) / sigma + p.beta_at(c, y, x);
                        err = err.max((out.get(n, c, y, x) - want).abs());
                    }
                }
            }
        }
        s.within("modulate.per_site_oracle", err, 1e-6);
        Ok(())
    });
    s.run("blend.midpoint", |s| {
        let m = blend_params(
            &ParamMaps::constant(2, 2, 2, 0.0, 0.0)?,
            &ParamMaps::constant(2, 2, 2, 2.0, 2.0)?,
            BlendWeights::new(0.5, 0.5)?,
        )?;
        s.holds(
            "blend.midpoint",
            m.gamma.iter().chain(&m.beta).all(|&v| v == 1.0),
            "γ^s=0, γ^r=2, α=0.5 gives exactly 1",
        );
        Ok(())
    });
    s.run("blend.fixed_point", |s| {
        let x = ParamMaps::synthetic(3, 4, 4, rng.next_u64())?;
        let a = rng.uniform_open(0.0, 1.0);
        let y = blend_params(&x, &x, BlendWeights::new(a, 1.0 - a)?)?;
        s.within(
            "blend.fixed_point",
            max_abs_diff(&y.gamma, &x.gamma).max(max_abs_diff(&y.beta, &x.beta)),
            0.0,
        );
        Ok(())
    });
    s.run("blend.limit", |s| {
        let x = ParamMaps::synthetic(3, 4, 4, rng.next_u64())?;
        let y = ParamMaps::synthetic(3, 4, 4, rng.next_u64())?;
        let a = 1.0 - 1e-9;
        let z = blend_params(&x, &y, BlendWeights::new(a, a)?)?;
        s.within(
            "blend.limit",
            max_abs_diff(&z.gamma, &x.gamma).max(max_abs_diff(&z.beta, &x.beta)),
            1e-8,
        );
        Ok(())
    });
    s.run("blend.then_modulate", |s| {
        let b = random_block(&mut rng, 2, 3, 4, 4)?;
        let x = ParamMaps::synthetic(3, 4, 4, rng.next_u64())?;
        let y = ParamMaps::synthetic(3, 4, 4, rng.next_u64())?;
        let w = BlendWeights::new(0.3, 0.7)?;
        let blended = blend_params(&x, &y, w)?;
        let direct = spatial_modulate(&b, &blended)?;
        // Hand-blended maps through the same modulation.
        let hand = ParamMaps::new(
            3,
            4,
            4,
            x.gamma.iter().zip(&y.gamma).map(|(s, r)| 0.3 * s + 0.7 * r).collect(),
            x.beta.iter().zip(&y.beta).map(|(s, r)| 0.7 * s + 0.3 * r).collect(),
        )?;
        let via = spatial_modulate(&b, &hand)?;
        s.within(
            "blend.then_modulate",
            max_abs_diff(direct.values(), via.values()),
            1e-12,
        );
        Ok(())
    });
    s.run("adain.random_style", |s| {
        let b = random_block(&mut rng, 2, 3, 5, 5)?;
        let smu: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let ssd: Vec<f64> = (0..3).map(|_| rng.uniform(0.5, 3.0)).collect();
        let out = adain_modulate(&b, &smu, &ssd)?;
        let (mu, sigma) = instance_stats(&out);
        let mut err: f64 = 0.0;
        for i in 0..6 {
            let sd = (sigma[i] * sigma[i] - NORM_EPSILON).max(0.0).sqrt();
            err = err.max((mu[i] - smu[i % 3]).abs()).max((sd - ssd[i % 3]).abs());
        }
        s.within("adain.random_style", err, 1e-3);
        Ok(())
    });
    s.run("adain.self_style", |s| {
        let b = random_block(&mut rng, 1, 2, 6, 6)?;
        let (mu, sigma) = instance_stats(&b);
        let sd: Vec<f64> = sigma.iter().map(|v| (v * v - NORM_EPSILON).sqrt()).collect();
        let out = adain_modulate(&b, &mu, &sd)?;
        s.within("adain.self_style", max_abs_diff(out.values(), b.values()), 1e-3);
        Ok(())
    });
    s.run("loss.closed_form", |s| {
        let map = SemanticMap::new(2, 2, vec![0, 1, 1, 0], None, vec![ClassKind::Background; 2])?;
        let p = ClassProbMap::new(2, 2, 2, vec![0.5; 8], vec![1.0, 1.0])?;
        s.within(
            "loss.closed_form",
            (segmentation_loss(&map, &p)? + 0.5f64.ln()).abs(),
            1e-9,
        );
        Ok(())
    });
    s.run("loss.hand_sum", |s| {
        let map = SemanticMap::new(2, 2, vec![0, 1, 1, 1], None, vec![ClassKind::Background; 2])?;
        let probs = vec![0.9, 0.1, 0.3, 0.7, 0.6, 0.4, 0.2, 0.8];
        let p = ClassProbMap::new(2, 2, 2, probs, vec![2.0, 0.5])?;
        let want = -(2.0 * 0.9f64.ln() + 0.5 * 0.7f64.ln() + 0.5 * 0.4f64.ln() + 0.5 * 0.8f64.ln()) / 4.0;
        s.within("loss.hand_sum", (segmentation_loss(&map, &p)? - want).abs(), 1e-12);
        Ok(())
    });
    s.run("loss.monotone", |s| {
        let (w, h, c) = (4usize, 3usize, 3usize);
        let labels: Vec<u32> = (0..w * h).map(|_| rng.below(c) as u32).collect();
        let map = SemanticMap::new(w as u32, h as u32, labels.clone(), None, vec![ClassKind::Background; c])?;
        let mut probs: Vec<f64> = Vec::new();
        for _ in 0..w * h {
            let raw: Vec<f64> = (0..c).map(|_| rng.uniform(0.1, 1.0)).collect();
            let z: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / z));
        }
        let weights = default_class_weights(&map);
        let before = segmentation_loss(&map, &ClassProbMap::new(h, w, c, probs.clone(), weights.clone())?)?;
        let px = rng.below(w * h);
        let true_c = labels[px] as usize;
        let other = (true_c + 1) % c;
        let moved = probs[px * c + other] / 2.0;
        probs[px * c + other] -= moved;
        probs[px * c + true_c] += moved;
        let after = segmentation_loss(&map, &ClassProbMap::new(h, w, c, probs, weights.clone())?)?;
        let ok = if weights[true_c] > 0.0 {
            after < before
        } else {
            after <= before
        };
        s.holds("loss.monotone", ok, format!("{before:.6} -> {after:.6}"));
        Ok(())
    });
    s.run("tensor.round_trip", |s| {
        let b = random_block(&mut rng, 2, 2, 3, 3)?;
        let back = FeatureBlock::from_tensor(Tensor::from_bytes(&b.to_tensor().to_bytes())?)?;
        s.holds("tensor.round_trip", back == b, "bitwise equal after encode/decode");
        Ok(())
    });

    VerifyReport { seed, checks: s.checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_for_several_seeds() {
        for seed in [0, 1, 42, 12345] {
            let r = verify_suite(seed);
            let failed: Vec<_> = r.failures().collect();
            assert!(failed.is_empty(), "seed {seed}: {failed:?}");
            assert!(r.checks.len() >= 14);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        assert_eq!(verify_suite(9), verify_suite(9));
    }
}
