//! Central finite-difference checks of analytic gradients (f64 only).

use rand::seq::index::sample;
use rand::Rng;

use super::{ParamStore, Tensor};
use crate::error::Result;

/// Probe step of the five-point stencil.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement between the step-h and step-2h stencils
/// still treated as smooth; beyond it the coordinate sits near a kink.
pub const KINK_TOL: f64 = 5e-5;

/// Gradients below this magnitude are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    /// Coordinates near a kink (ReLU, max, argmin switch) where the
    /// stencils at h and 2h disagree.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
            self.worst_values = other.worst_values;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol && self.skipped * 100 <= self.checked.max(1)
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare `analytic` (one tensor per parameter) against five-point central differences
/// of `loss`, probing at most `per_tensor` random coordinates per tensor.
pub fn check_gradients<R, F>(
    params: &ParamStore<f64>,
    analytic: &[Tensor<f64>],
    mut loss: F,
    per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    R: Rng,
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for id in params.ids() {
        let n = params.get(id).numel();
        let picks = sample(rng, n, per_tensor.min(n)).into_vec();
        for flat in picks {
            let base = params.get(id).data()[flat];
            let mut at = |h: f64| -> Result<f64> {
                probe.get_mut(id).data_mut()[flat] = base + h;
                let v = loss(&probe);
                probe.get_mut(id).data_mut()[flat] = base;
                v
            };
            // fourth-order central differences at h and 2h
            let d1 = at(FD_STEP)? - at(-FD_STEP)?;
            let d2 = at(2.0 * FD_STEP)? - at(-2.0 * FD_STEP)?;
            let d4 = at(4.0 * FD_STEP)? - at(-4.0 * FD_STEP)?;
            let fine = (8.0 * d1 - d2) / (12.0 * FD_STEP);
            let coarse = (8.0 * d2 - d4) / (24.0 * FD_STEP);
            report.checked += 1;
            if rel_err(fine, coarse) > KINK_TOL {
                report.skipped += 1;
                continue;
            }
            let err = rel_err(analytic[id.0].data()[flat], fine);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((params.name(id).to_string(), flat));
                report.worst_values = Some((analytic[id.0].data()[flat], fine));
            }
        }
    }
    Ok(report)
}
