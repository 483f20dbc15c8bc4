use super::graph::{tear_graph, GraphConfig, SparseGraph, TearMode};
use crate::cloud::PointCloud3;
use crate::error::{Error, Result};
use crate::numeric::{CustomOp, Scalar, Tape, Tensor, Var};

/// `(I - lambda * L) * X`, evaluated edge by edge.
pub fn graph_filter<T: Scalar>(
    x2: &PointCloud3<T>,
    g: &SparseGraph<T>,
    lambda: T,
) -> Result<PointCloud3<T>> {
    if x2.len() != g.vertex_count {
        return Err(Error::shape(
            "graph_filter",
            format!("{} points for {} vertices", x2.len(), g.vertex_count),
        ));
    }
    let mut out = x2.points.clone();
    for e in &g.edges {
        let (a, b) = (x2.points[e.i], x2.points[e.j]);
        for k in 0..3 {
            let d = lambda * e.w * (a[k] - b[k]);
            out[e.i][k] -= d;
            out[e.j][k] += d;
        }
    }
    Ok(PointCloud3::new(out))
}

pub struct FilterOutput<T> {
    /// Filtered cloud `X3` on the tape.
    pub output: Var,
    /// The graph the filter ran on.
    pub torn: SparseGraph<T>,
}

/// Tear `initial` on the current (coords, signal) positions and filter
/// `signal` over the result, recording a differentiable node.
///
/// In 5D-weight mode the kernel sees `p_i = [u_i; x_i]`, so gradients flow
/// into both the 2D coordinates and the 3D signal through the edge weights.
pub fn tear_and_filter<T: Scalar>(
    tape: &mut Tape<T>,
    signal: Var,
    coords: Var,
    initial: &SparseGraph<T>,
    cfg: &GraphConfig,
    lambda: T,
) -> Result<FilterOutput<T>> {
    let x = PointCloud3::from_tensor(tape.value(signal))?;
    let u = tape.value(coords).to_rows::<2>();
    if u.len() != x.len() {
        return Err(Error::shape(
            "tear_and_filter",
            format!("{} coordinates for {} points", u.len(), x.len()),
        ));
    }
    let torn = match cfg.mode {
        TearMode::Weight5d => {
            let p: Vec<[T; 5]> = u
                .iter()
                .zip(&x.points)
                .map(|(a, b)| [a[0], a[1], b[0], b[1], b[2]])
                .collect();
            tear_graph(initial, &p, cfg)?
        }
        TearMode::Distance2d { .. } => tear_graph(initial, &u, cfg)?,
    };
    let out = graph_filter(&x, &torn, lambda)?.to_tensor();
    let op = FilterOp {
        edges: torn.edges.iter().map(|e| (e.i, e.j, e.w)).collect(),
        lambda,
        inv_eps2: T::lit(1.0 / (cfg.eps * cfg.eps)),
        weights_see_signal: matches!(cfg.mode, TearMode::Weight5d),
    };
    let output = tape.custom(Box::new(op), &[signal, coords], out);
    Ok(FilterOutput { output, torn })
}

struct FilterOp<T> {
    edges: Vec<(usize, usize, T)>,
    lambda: T,
    inv_eps2: T,
    weights_see_signal: bool,
}

impl<T: Scalar> CustomOp<T> for FilterOp<T> {
    fn name(&self) -> &'static str {
        "graph_filter"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let (x, u) = (inputs[0], inputs[1]);
        let mut dx = grad.clone();
        let mut du = Tensor::zeros(u.shape());
        let g = grad.data();
        let xs = x.data();
        let us = u.data();
        for &(i, j, w) in &self.edges {
            let mut gd = [T::zero(); 3];
            let mut dd = [T::zero(); 3];
            let mut s = T::zero();
            for k in 0..3 {
                gd[k] = g[3 * i + k] - g[3 * j + k];
                dd[k] = xs[3 * i + k] - xs[3 * j + k];
                s += gd[k] * dd[k];
            }
            // through the signal, weight held fixed
            let lw = self.lambda * w;
            for k in 0..3 {
                dx.data_mut()[3 * i + k] -= lw * gd[k];
                dx.data_mut()[3 * j + k] += lw * gd[k];
            }
            // through the weight: dw/dp_i = -w (p_i - p_j) / eps^2
            let coef = self.lambda * s * w * self.inv_eps2;
            for k in 0..2 {
                let diff = us[2 * i + k] - us[2 * j + k];
                du.data_mut()[2 * i + k] += coef * diff;
                du.data_mut()[2 * j + k] -= coef * diff;
            }
            if self.weights_see_signal {
                for k in 0..3 {
                    dx.data_mut()[3 * i + k] += coef * dd[k];
                    dx.data_mut()[3 * j + k] -= coef * dd[k];
                }
            }
        }
        vec![Some(dx), Some(du)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::graph::Edge;
    use crate::geometry::{grid_graph, make_grid, GridSpacing};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_vertex_example() {
        let g = SparseGraph::new(2, vec![Edge { i: 0, j: 1, w: 0.5 }]).unwrap();
        let x = PointCloud3::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let y = graph_filter(&x, &g, 0.5).unwrap();
        assert_eq!(y.points, vec![[0.25, 0.0, 0.0], [0.75, 0.0, 0.0]]);
    }

    #[test]
    fn zero_lambda_and_constant_signal_are_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = make_grid::<f64>(5, GridSpacing::EndpointInclusive).unwrap();
        let mut g = grid_graph(&u, &GraphConfig::default()).unwrap();
        for e in &mut g.edges {
            e.w = rng.gen_range(0.01..1.0);
        }
        let x = PointCloud3::new((0..25).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect());
        assert_eq!(graph_filter(&x, &g, 0.0).unwrap(), x);
        let c = PointCloud3::new(vec![[0.3, -1.7, 2.2]; 25]);
        assert_eq!(graph_filter(&c, &g, 0.9).unwrap(), c);
    }

    #[test]
    fn matches_dense_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = make_grid::<f64>(4, GridSpacing::EndpointInclusive).unwrap();
        let mut g = grid_graph(&u, &GraphConfig::default()).unwrap();
        for e in &mut g.edges {
            e.w = rng.gen_range(0.01..1.0);
        }
        let x = PointCloud3::new((0..16).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect());
        let lx = crate::geometry::laplacian(&g).matmul(&x.to_tensor()).unwrap();
        let y = graph_filter(&x, &g, 0.5).unwrap().to_tensor();
        let mut want = x.to_tensor();
        for (w, l) in want.data_mut().iter_mut().zip(lx.data()) {
            *w -= 0.5 * l;
        }
        assert!(y.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn size_mismatch() {
        let g = SparseGraph::<f64>::new(3, vec![]).unwrap();
        assert!(graph_filter(&PointCloud3::new(vec![[0.0; 3]]), &g, 0.5).is_err());
    }

    /// `sum(a .* b)` with `b` held constant.
    fn weighted_sum(tape: &mut Tape<f64>, a: Var, b: Var) -> Var {
        struct Dot;
        impl CustomOp<f64> for Dot {
            fn name(&self) -> &'static str {
                "dot"
            }
            fn backward(
                &self,
                inputs: &[&Tensor<f64>],
                _o: &Tensor<f64>,
                g: &Tensor<f64>,
            ) -> Vec<Option<Tensor<f64>>> {
                let mut da = inputs[1].clone();
                da.scale_in_place(g.item());
                vec![Some(da), None]
            }
        }
        let v: f64 = tape.value(a).data().iter().zip(tape.value(b).data()).map(|(x, y)| x * y).sum();
        tape.custom(Box::new(Dot), &[a, b], Tensor::scalar(v))
    }

    fn fd_check(cfg: GraphConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let grid = make_grid::<f64>(n, GridSpacing::EndpointInclusive).unwrap();
        let initial = grid_graph(&grid, &cfg).unwrap();
        // wide kernel so every edge survives with a sizeable weight
        let x0: Vec<f64> = (0..n * n * 3).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let u0: Vec<f64> = grid
            .points
            .iter()
            .flat_map(|p| [p[0] * 0.2 + rng.gen_range(-0.01..0.01), p[1] * 0.2])
            .collect();
        let probe: Vec<f64> = (0..n * n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let xs = tape.param(Tensor::matrix(n * n, 3, x0.clone()).unwrap());
        let us = tape.param(Tensor::matrix(n * n, 2, u0.clone()).unwrap());
        let out = tear_and_filter(&mut tape, xs, us, &initial, &cfg, 0.5).unwrap();
        assert_eq!(out.torn.edge_count(), initial.edge_count());
        // loss = <out, probe>, so the upstream gradient is the probe itself
        let f = |x: &[f64], u: &[f64]| -> f64 {
            let mut t = Tape::new();
            let xs = t.constant(Tensor::matrix(n * n, 3, x.to_vec()).unwrap());
            let us = t.constant(Tensor::matrix(n * n, 2, u.to_vec()).unwrap());
            let o = tear_and_filter(&mut t, xs, us, &initial, &cfg, 0.5).unwrap();
            t.value(o.output).data().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let w = tape.constant(Tensor::matrix(n * n, 3, probe.clone()).unwrap());
        let weighted = weighted_sum(&mut tape, out.output, w);
        let grads = tape.backward(weighted).unwrap();
        let (dx, du) = (grads.get(xs).unwrap().clone(), grads.get(us).unwrap().clone());
        let h = 1e-6;
        for k in 0..x0.len() {
            let (mut a, mut b) = (x0.clone(), x0.clone());
            a[k] += h;
            b[k] -= h;
            let num = (f(&a, &u0) - f(&b, &u0)) / (2.0 * h);
            assert!((num - dx.data()[k]).abs() <= 1e-6 * (1.0 + num.abs()), "dx[{k}]");
        }
        for k in 0..u0.len() {
            let (mut a, mut b) = (u0.clone(), u0.clone());
            a[k] += h;
            b[k] -= h;
            let num = (f(&x0, &a) - f(&x0, &b)) / (2.0 * h);
            assert!((num - du.data()[k]).abs() <= 1e-6 * (1.0 + num.abs()), "du[{k}]");
        }
    }

    #[test]
    fn filter_gradient_5d() {
        let cfg = GraphConfig {
            eps: 0.2,
            ..GraphConfig::default()
        };
        for seed in 0..3 {
            fd_check(cfg, seed);
        }
    }

    #[test]
    fn filter_gradient_2d() {
        let cfg = GraphConfig::distance_2d(0.2, 2.0 / 3.0);
        for seed in 0..3 {
            fd_check(cfg, seed);
        }
    }
}
