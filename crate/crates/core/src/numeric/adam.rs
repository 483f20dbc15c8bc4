use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state for `params` with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// State shapes must line up with `params` one-to-one.
    pub fn check_matches(&self, params: &ParamStore<T>) -> Result<()> {
        if self.first.len() != params.len() || self.second.len() != params.len() {
            return Err(Error::Mismatch(format!(
                "optimizer tracks {} tensors, model has {}",
                self.first.len(),
                params.len()
            )));
        }
        for ((id, m), v) in params.ids().zip(&self.first).zip(&self.second) {
            let shape = params.get(id).shape();
            if m.shape() != shape || v.shape() != shape {
                return Err(Error::Mismatch(format!(
                    "optimizer moment for `{}` has shape {:?}, parameter has {:?}",
                    params.name(id),
                    m.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    /// One update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        self.check_matches(params)?;
        if grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "gradient for `{}` is {:?}, parameter is {:?}",
                        params.name(id),
                        g.shape(),
                        params.get(id).shape()
                    ),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(params.name(id).to_string()));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);

        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.add("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p, 0.1);
        s.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        let w = p.tensors()[0].item();
        assert!((w - 0.9).abs() < 1e-7, "{w}");
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut p = single(2.5);
        let mut s = AdamState::new(&p, 0.1);
        s.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(p.tensors()[0].item(), 2.5);
        assert_eq!(s.first_moments()[0].item(), 0.0);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, 0.01);
        s.step(&mut p, &[Tensor::scalar(2.0)]).unwrap();
        let (m0, v0) = (s.first_moments()[0].item(), s.second_moments()[0].item());
        s.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(s.first_moments()[0].item(), 0.9 * m0);
        assert_eq!(s.second_moments()[0].item(), 0.999 * v0);
    }

    #[test]
    fn two_steps_differ_from_one_doubled_step() {
        let mut a = single(0.0);
        let mut sa = AdamState::new(&a, 0.1);
        sa.step(&mut a, &[Tensor::scalar(1.0)]).unwrap();
        sa.step(&mut a, &[Tensor::scalar(1.0)]).unwrap();

        let mut b = single(0.0);
        let mut sb = AdamState::new(&b, 0.1);
        sb.step(&mut b, &[Tensor::scalar(2.0)]).unwrap();

        assert_ne!(a.tensors()[0].item(), b.tensors()[0].item());
        assert_ne!(sa.step, sb.step);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_param() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p, 0.1);
        let err = s.step(&mut p, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.step, 0);
        assert_eq!(p.tensors()[0].item(), 1.0);
    }
}
