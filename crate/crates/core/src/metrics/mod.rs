//! Augmented Chamfer distance, Earth Mover's Distance and nearest-neighbor search.

pub mod hungarian;
mod nn;

use rand::seq::index::sample;
use rand::Rng;

use crate::cloud::{dist3, PointCloud3};
use crate::error::{Error, Result};
use crate::numeric::{CustomOp, Scalar, Tape, Tensor, Var};

pub use nn::{brute_nearest_sq, IndexKind, KdTree, NNIndex};

/// Default cap on the assignment size for [`emd`].
pub const EMD_CAP: usize = 512;

/// Reported Chamfer values are multiplied by this (table convention).
pub const CD_REPORT_SCALE: f64 = 100.0;

/// Both directed mean nearest-neighbor distances, plus the matches behind them.
#[derive(Debug, Clone)]
pub struct ChamferTerms<T> {
    /// mean over input points of the distance to the closest reconstructed point
    pub input_to_recon: T,
    /// mean over reconstructed points of the distance to the closest input point
    pub recon_to_input: T,
    pub nn_of_input: Vec<usize>,
    pub nn_of_recon: Vec<usize>,
}

impl<T: Scalar> ChamferTerms<T> {
    /// The max of the two terms; on an exact tie the recon-to-input term is
    /// the active one.
    pub fn value(&self) -> T {
        self.input_to_recon.max(self.recon_to_input)
    }

    pub fn input_branch_active(&self) -> bool {
        self.input_to_recon > self.recon_to_input
    }
}

fn directed<T: Scalar>(from: &[[T; 3]], to: &NNIndex<T>) -> (T, Vec<usize>) {
    let mut total = T::zero();
    let mut nn = Vec::with_capacity(from.len());
    for p in from {
        let (i, d2) = to.nearest_sq(p);
        total += d2.sqrt();
        nn.push(i);
    }
    (total / T::lit(from.len() as f64), nn)
}

pub fn chamfer_terms<T: Scalar>(
    input: &[[T; 3]],
    recon: &[[T; 3]],
    kind: IndexKind,
) -> Result<ChamferTerms<T>> {
    if input.is_empty() || recon.is_empty() {
        return Err(Error::invalid(format!(
            "chamfer distance needs non-empty clouds (got {} and {} points)",
            input.len(),
            recon.len()
        )));
    }
    let recon_index = NNIndex::build(recon, kind);
    let input_index = NNIndex::build(input, kind);
    let (a, nn_of_input) = directed(input, &recon_index);
    let (b, nn_of_recon) = directed(recon, &input_index);
    Ok(ChamferTerms {
        input_to_recon: a,
        recon_to_input: b,
        nn_of_input,
        nn_of_recon,
    })
}

/// Augmented Chamfer distance: the larger of the two directed mean
/// nearest-neighbor distances (a Hausdorff-style symmetric distance).
pub fn chamfer_aug<T: Scalar>(x: &PointCloud3<T>, x_hat: &PointCloud3<T>) -> Result<T> {
    Ok(chamfer_terms(&x.points, &x_hat.points, IndexKind::KdTree)?.value())
}

/// Record the augmented Chamfer loss between `input` (n x 3) and `recon`
/// (m x 3). Gradients flow through the active branch to the matched pairs.
pub fn chamfer_loss<T: Scalar>(tape: &mut Tape<T>, input: Var, recon: Var) -> Result<Var> {
    let x = tape.value(input).to_rows::<3>();
    let y = tape.value(recon).to_rows::<3>();
    let terms = chamfer_terms(&x, &y, IndexKind::KdTree)?;
    let value = terms.value();
    let op = ChamferOp {
        input_active: terms.input_branch_active(),
        nn_of_input: terms.nn_of_input,
        nn_of_recon: terms.nn_of_recon,
    };
    Ok(tape.custom(Box::new(op), &[input, recon], Tensor::scalar(value)))
}

struct ChamferOp {
    input_active: bool,
    nn_of_input: Vec<usize>,
    nn_of_recon: Vec<usize>,
}

impl<T: Scalar> CustomOp<T> for ChamferOp {
    fn name(&self) -> &'static str {
        "chamfer_aug"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let (x, y) = (inputs[0], inputs[1]);
        let mut dx = Tensor::zeros(x.shape());
        let mut dy = Tensor::zeros(y.shape());
        let g = grad.item();
        // (from, to, nn, d_from, d_to)
        let (from, to, nn, d_from, d_to) = if self.input_active {
            (x, y, &self.nn_of_input, &mut dx, &mut dy)
        } else {
            (y, x, &self.nn_of_recon, &mut dy, &mut dx)
        };
        let scale = g / T::lit(nn.len() as f64);
        for (i, &j) in nn.iter().enumerate() {
            let a = from.row(i);
            let b = to.row(j);
            let diff = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            let d = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
            if d > T::zero() {
                for k in 0..3 {
                    let v = scale * diff[k] / d;
                    d_from.data_mut()[3 * i + k] += v;
                    d_to.data_mut()[3 * j + k] -= v;
                }
            }
        }
        vec![Some(dx), Some(dy)]
    }
}

/// Mean matched distance under the optimal bijection between equal-size clouds.
pub fn emd<T: Scalar>(x: &PointCloud3<T>, x_hat: &PointCloud3<T>) -> Result<T> {
    emd_capped(x, x_hat, EMD_CAP)
}

pub fn emd_capped<T: Scalar>(x: &PointCloud3<T>, x_hat: &PointCloud3<T>, cap: usize) -> Result<T> {
    let n = x.len();
    if n != x_hat.len() {
        return Err(Error::invalid(format!(
            "EMD needs equal-size clouds, got {} and {}",
            n,
            x_hat.len()
        )));
    }
    if n > cap {
        return Err(Error::invalid(format!(
            "EMD on {n} points exceeds the cap of {cap}; subsample both clouds first"
        )));
    }
    if n == 0 {
        return Ok(T::zero());
    }
    let mut cost = Vec::with_capacity(n * n);
    for a in &x.points {
        for b in &x_hat.points {
            cost.push(dist3(a, b).as_f64());
        }
    }
    let (_, total) = hungarian::solve(&cost, n);
    Ok(T::lit(total / n as f64))
}

/// EMD on seeded random subsets of size `min(|x|, |x_hat|, size)`.
pub fn emd_subsampled<T: Scalar, R: Rng>(
    x: &PointCloud3<T>,
    x_hat: &PointCloud3<T>,
    size: usize,
    rng: &mut R,
) -> Result<T> {
    let k = x.len().min(x_hat.len()).min(size);
    let pick = |c: &PointCloud3<T>, rng: &mut R| {
        let mut idx = sample(rng, c.len(), k).into_vec();
        idx.sort_unstable();
        c.select(&idx)
    };
    let a = pick(x, rng);
    let b = pick(x_hat, rng);
    emd_capped(&a, &b, size.max(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(p: &[[f64; 3]]) -> PointCloud3<f64> {
        PointCloud3::new(p.to_vec())
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        assert_eq!(chamfer_aug(&a, &a).unwrap(), 0.0);
        let o = cloud(&[[0.0, 0.0, 0.0]]);
        let e = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_aug(&o, &e).unwrap(), 1.0);
        let two = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(chamfer_aug(&two, &o).unwrap(), 1.0);
        assert!(chamfer_aug(&two, &cloud(&[])).is_err());
    }

    #[test]
    fn emd_examples() {
        let a = [1.0, 2.0, 0.0];
        let b = [-3.0, 0.5, 4.0];
        assert_eq!(emd(&cloud(&[a, b]), &cloud(&[a, b])).unwrap(), 0.0);
        assert_eq!(emd(&cloud(&[a, b]), &cloud(&[b, a])).unwrap(), 0.0);
        assert!(emd(&cloud(&[a]), &cloud(&[a, b])).is_err());
        let big = cloud(&vec![[0.0; 3]; 10]);
        let msg = emd_capped(&big, &big, 4).unwrap_err().to_string();
        assert!(msg.contains("subsample"), "{msg}");
    }

    #[test]
    fn tie_selects_recon_branch() {
        let t = ChamferTerms {
            input_to_recon: 1.0f64,
            recon_to_input: 1.0,
            nn_of_input: vec![],
            nn_of_recon: vec![],
        };
        assert!(!t.input_branch_active());
    }
}
