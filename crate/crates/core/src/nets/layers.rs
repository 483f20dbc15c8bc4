//! Shared point-wise MLP building blocks.

use rand::Rng;

use crate::error::Result;
use crate::numeric::{Bound, ParamId, ParamStore, Scalar, Tape, Var};

/// Dense layer whose input is split into per-point blocks plus an optional
/// per-cloud codeword that is broadcast to every point.
///
/// `[a_1 | a_2 | ... | c] W` is evaluated as `sum_k a_k W_k + (c W_c)`, with
/// the codeword product computed once per cloud instead of once per point.
#[derive(Debug, Clone)]
pub struct PointwiseLinear {
    blocks: Vec<ParamId>,
    code: Option<ParamId>,
    bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl PointwiseLinear {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        block_widths: &[usize],
        code_width: Option<usize>,
        out: usize,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = block_widths.iter().sum::<usize>() + code_width.unwrap_or(0);
        let mut make = |store: &mut ParamStore<T>, label: String, rows: usize| {
            if zero {
                store.add(label, crate::numeric::Tensor::zeros(&[rows, out]))
            } else {
                store.add_glorot(label, rows, out, fan_in, out, rng)
            }
        };
        let blocks = block_widths
            .iter()
            .enumerate()
            .map(|(k, &w)| make(store, format!("{name}.w{k}"), w))
            .collect();
        let code = code_width.map(|w| make(store, format!("{name}.wc"), w));
        let bias = store.add(format!("{name}.b"), crate::numeric::Tensor::zeros(&[1, out]));
        Self {
            blocks,
            code,
            bias,
            in_width: fan_in,
            out_width: out,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        inputs: &[Var],
        code: Option<Var>,
    ) -> Result<Var> {
        assert_eq!(inputs.len(), self.blocks.len(), "block count");
        let mut acc = tape.matmul(inputs[0], p.var(self.blocks[0]))?;
        for (x, w) in inputs.iter().zip(&self.blocks).skip(1) {
            let y = tape.matmul(*x, p.var(*w))?;
            acc = tape.add(acc, y)?;
        }
        let mut row = p.var(self.bias);
        if let (Some(c), Some(wc)) = (code, self.code) {
            let cw = tape.matmul(c, p.var(wc))?;
            row = tape.add(cw, row)?;
        }
        tape.add_row(acc, row)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.blocks.clone();
        v.extend(self.code);
        v.push(self.bias);
        v
    }
}

/// Plain dense layer `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let weight = if zero {
            store.add(format!("{name}.w"), crate::numeric::Tensor::zeros(&[inp, out]))
        } else {
            store.add_glorot(format!("{name}.w"), inp, out, inp, out, rng)
        };
        let bias = store.add(format!("{name}.b"), crate::numeric::Tensor::zeros(&[1, out]));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.weight))?;
        tape.add_row(y, p.var(self.bias))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// `PointwiseLinear` followed by dense layers, ReLU between layers.
#[derive(Debug, Clone)]
pub struct PointMlp {
    first: PointwiseLinear,
    rest: Vec<Linear>,
    relu_last: bool,
}

impl PointMlp {
    /// `widths` lists the hidden widths followed by the output width.
    /// With `zero_last` the final layer starts at exactly zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        block_widths: &[usize],
        code_width: Option<usize>,
        widths: &[usize],
        relu_last: bool,
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        assert!(!widths.is_empty());
        let last = widths.len() - 1;
        let first = PointwiseLinear::new(
            store,
            &format!("{name}.0"),
            block_widths,
            code_width,
            widths[0],
            zero_last && last == 0,
            rng,
        );
        let rest = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                Linear::new(
                    store,
                    &format!("{name}.{}", k + 1),
                    w[0],
                    w[1],
                    zero_last && k + 1 == last,
                    rng,
                )
            })
            .collect();
        Self {
            first,
            rest,
            relu_last,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        inputs: &[Var],
        code: Option<Var>,
    ) -> Result<Var> {
        let mut h = self.first.forward(tape, p, inputs, code)?;
        for layer in &self.rest {
            h = tape.relu(h);
            h = layer.forward(tape, p, h)?;
        }
        if self.relu_last {
            h = tape.relu(h);
        }
        Ok(h)
    }

    pub fn input_width(&self) -> usize {
        self.first.in_width
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.first.params();
        for l in &self.rest {
            v.extend(l.params());
        }
        v
    }
}
