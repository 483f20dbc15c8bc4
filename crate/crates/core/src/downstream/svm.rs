use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the one-vs-rest hinge-loss classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Inverse regularization strength: the objective is
    /// `|w|^2 / 2 + C * mean(hinge)`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            epochs: 200,
            seed: 0,
        }
    }
}

/// Linear one-vs-rest max-margin classifier on standardized features.
///
/// Each binary problem is solved with Pegasos-style stochastic subgradient
/// steps (step `1 / (lambda t)`, projection onto the ball of radius
/// `1 / sqrt(lambda)`), with the visiting order drawn from the seed. The bias
/// is an extra constant feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub classes: Vec<usize>,
    /// One row per class, `d + 1` entries (the last is the bias).
    pub weights: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub config: SvmConfig,
}

impl LinearClassifier {
    pub fn fit(x: &[&[f64]], y: &[usize], cfg: &SvmConfig) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid(format!(
                "classifier needs matching non-empty inputs, got {} rows and {} labels",
                x.len(),
                y.len()
            )));
        }
        if !(cfg.c > 0.0) || cfg.epochs == 0 {
            return Err(Error::invalid("classifier needs C > 0 and at least one epoch"));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("rows differ in length"));
        }
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut scale = vec![0.0; d];
        for r in x {
            for ((s, v), m) in scale.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // constant features keep scale 1 and end up at zero
        scale.iter_mut().for_each(|s| {
            let sd = (*s / n).sqrt();
            *s = if sd > 0.0 { sd } else { 1.0 };
        });
        let z: Vec<Vec<f64>> = x.iter().map(|r| standardize(r, &mean, &scale)).collect();

        let classes: Vec<usize> = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let lambda = 1.0 / (cfg.c * n);
        let radius = 1.0 / lambda.sqrt();
        let weights = classes
            .iter()
            .map(|&cls| {
                let target: Vec<f64> = y.iter().map(|&l| if l == cls { 1.0 } else { -1.0 }).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (cls as u64).wrapping_mul(0x9e37_79b9));
                let mut w = vec![0.0; d + 1];
                let mut avg = vec![0.0; d + 1];
                let mut averaged = 0.0;
                let mut order: Vec<usize> = (0..z.len()).collect();
                let mut t = 0.0;
                for epoch in 0..cfg.epochs {
                    order.shuffle(&mut rng);
                    for &i in &order {
                        t += 1.0;
                        let eta = 1.0 / (lambda * t);
                        let margin = target[i] * dot(&w, &z[i]);
                        let shrink = 1.0 - eta * lambda;
                        w.iter_mut().for_each(|v| *v *= shrink);
                        if margin < 1.0 {
                            let g = eta * target[i];
                            for (wj, zj) in w.iter_mut().zip(&z[i]) {
                                *wj += g * zj;
                            }
                            w[d] += g;
                        }
                        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > radius {
                            let f = radius / norm;
                            w.iter_mut().for_each(|v| *v *= f);
                        }
                    }
                    // average the second half of the run
                    if 2 * epoch >= cfg.epochs {
                        averaged += 1.0;
                        for (a, v) in avg.iter_mut().zip(&w) {
                            *a += (v - *a) / averaged;
                        }
                    }
                }
                avg
            })
            .collect();
        Ok(Self {
            classes,
            weights,
            mean,
            scale,
            config: *cfg,
        })
    }

    /// Per-class decision values.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = standardize(x, &self.mean, &self.scale);
        self.weights.iter().map(|w| dot(w, &z)).collect()
    }

    /// Class with the highest score; ties go to the smaller label.
    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        let mut best = 0;
        for (i, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = i;
            }
        }
        self.classes[best]
    }
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

/// `w . [z; 1]`.
fn dot(w: &[f64], z: &[f64]) -> f64 {
    w[..z.len()].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[z.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_clusters() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![s * 2.0 + 0.1 * (i as f64).sin(), (i as f64).cos()]
            })
            .collect();
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let xr: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let clf = LinearClassifier::fit(&xr, &y, &SvmConfig::default()).unwrap();
        for (r, &l) in xr.iter().zip(&y) {
            assert_eq!(clf.predict(r), l);
        }
        assert_eq!(clf.classes, vec![0, 1]);
    }

    #[test]
    fn single_class_predicts_it() {
        let x = [[1.0, 2.0], [3.0, 4.0]];
        let xr: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let clf = LinearClassifier::fit(&xr, &[7, 7], &SvmConfig::default()).unwrap();
        assert_eq!(clf.predict(&[0.0, 0.0]), 7);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let xr: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let a = LinearClassifier::fit(&xr, &y, &SvmConfig::default()).unwrap();
        let b = LinearClassifier::fit(&xr, &y, &SvmConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let x = [[1.0], [2.0]];
        let xr: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        assert!(LinearClassifier::fit(&xr, &[1], &SvmConfig::default()).is_err());
        let cfg = SvmConfig { c: 0.0, ..SvmConfig::default() };
        assert!(LinearClassifier::fit(&xr, &[1, 2], &cfg).is_err());
    }
}
