use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{grid_index, PointSet2};
use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};

/// How edges of the primitive graph are cut after tearing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TearMode {
    /// Keep an edge while the endpoint distance is at most `radius`.
    Distance2d { radius: f64 },
    /// Keep an edge while its kernel weight is at least the threshold.
    Weight5d,
}

/// Truncated Gaussian kernel settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub eps: f64,
    pub threshold: f64,
    pub mode: TearMode,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            eps: 0.02,
            threshold: 1e-12,
            mode: TearMode::Weight5d,
        }
    }
}

impl GraphConfig {
    /// Distance-truncated kernel with `r = 1.05 * step`.
    pub fn distance_2d(eps: f64, step: f64) -> Self {
        Self {
            eps,
            threshold: 1e-12,
            mode: TearMode::Distance2d {
                radius: 1.05 * step,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::invalid(format!("kernel width must be > 0, got {}", self.eps)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "edge-keep threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if let TearMode::Distance2d { radius } = self.mode {
            if !(radius > 0.0) {
                return Err(Error::invalid(format!("radius must be > 0, got {radius}")));
            }
        }
        Ok(())
    }

    /// Kernel weight from a squared distance, 0 when truncated.
    #[inline]
    pub(crate) fn weight_from_sq<T: Scalar>(&self, d2: T) -> T {
        let two_eps2 = T::lit(2.0 * self.eps * self.eps);
        match self.mode {
            TearMode::Distance2d { radius } => {
                if d2 <= T::lit(radius * radius) {
                    (-d2 / two_eps2).exp()
                } else {
                    T::zero()
                }
            }
            TearMode::Weight5d => {
                let w = (-d2 / two_eps2).exp();
                if w >= T::lit(self.threshold) {
                    w
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Kernel weight between two points of equal dimension (2 or 5).
pub fn edge_weight<T: Scalar>(a: &[T], b: &[T], cfg: &GraphConfig) -> Result<T> {
    if a.len() != b.len() || !(a.len() == 2 || a.len() == 5) {
        return Err(Error::shape(
            "edge_weight",
            format!("points of dimension {} and {}", a.len(), b.len()),
        ));
    }
    let d2 = a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + (*x - *y) * (*x - *y));
    Ok(cfg.weight_from_sq(d2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Edge<T> {
    pub i: usize,
    pub j: usize,
    pub w: T,
}

/// Undirected weighted graph; every edge has `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SparseGraph<T> {
    pub vertex_count: usize,
    pub edges: Vec<Edge<T>>,
}

impl<T: Scalar> SparseGraph<T> {
    pub fn new(vertex_count: usize, edges: Vec<Edge<T>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &edges {
            if e.i >= e.j || e.j >= vertex_count {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) invalid for {} vertices",
                    e.i, e.j, vertex_count
                )));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(Error::invalid(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        Ok(Self {
            vertex_count,
            edges,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.vertex_count];
        for e in &self.edges {
            d[e.i] += 1;
            d[e.j] += 1;
        }
        d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges.iter().any(|e| e.i == a && e.j == b)
    }

    /// CSV export with header `i,j,w`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut body = String::from("i,j,w\n");
        for e in &self.edges {
            body.push_str(&format!("{},{},{}\n", e.i, e.j, e.w));
        }
        w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// The 4-neighbor graph over a regular grid.
pub fn grid_graph<T: Scalar>(grid: &PointSet2<T>, cfg: &GraphConfig) -> Result<SparseGraph<T>> {
    cfg.validate()?;
    let n = grid
        .grid_dim
        .ok_or_else(|| Error::invalid("grid_graph needs a regular grid"))?;
    if grid.len() != n * n {
        return Err(Error::invalid(format!(
            "grid of dimension {n} must hold {} points, has {}",
            n * n,
            grid.len()
        )));
    }
    let two_eps2 = T::lit(2.0 * cfg.eps * cfg.eps);
    let weight = |a: usize, b: usize| {
        let (p, q) = (grid.points[a], grid.points[b]);
        let d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]);
        (-d2 / two_eps2).exp()
    };
    let mut edges = Vec::with_capacity(2 * n * (n - 1));
    for r in 0..n {
        for c in 0..n {
            let i = grid_index(n, r, c);
            if c + 1 < n {
                let j = grid_index(n, r, c + 1);
                edges.push(Edge { i, j, w: weight(i, j) });
            }
            if r + 1 < n {
                let j = grid_index(n, r + 1, c);
                edges.push(Edge { i, j, w: weight(i, j) });
            }
        }
    }
    Ok(SparseGraph {
        vertex_count: n * n,
        edges,
    })
}

/// Re-weight the edges of `initial` on displaced positions, dropping every
/// edge the kernel truncates. Never adds edges.
pub fn tear_graph<T: Scalar, const D: usize>(
    initial: &SparseGraph<T>,
    positions: &[[T; D]],
    cfg: &GraphConfig,
) -> Result<SparseGraph<T>> {
    cfg.validate()?;
    if positions.len() != initial.vertex_count {
        return Err(Error::shape(
            "tear_graph",
            format!(
                "{} positions for {} vertices",
                positions.len(),
                initial.vertex_count
            ),
        ));
    }
    let mut edges = Vec::with_capacity(initial.edges.len());
    for e in &initial.edges {
        let w = edge_weight(&positions[e.i], &positions[e.j], cfg)?;
        if w > T::zero() {
            edges.push(Edge { i: e.i, j: e.j, w });
        }
    }
    Ok(SparseGraph {
        vertex_count: initial.vertex_count,
        edges,
    })
}

/// Dense unnormalized Laplacian `D - W`.
pub fn laplacian<T: Scalar>(g: &SparseGraph<T>) -> Tensor<T> {
    let m = g.vertex_count;
    let mut l = Tensor::zeros(&[m, m]);
    let d = l.data_mut();
    for e in &g.edges {
        d[e.i * m + e.j] -= e.w;
        d[e.j * m + e.i] -= e.w;
        d[e.i * m + e.i] += e.w;
        d[e.j * m + e.j] += e.w;
    }
    l
}

/// Component label per vertex (labels are dense, ordered by smallest member)
/// and the component count.
pub fn connected_components<T: Scalar>(g: &SparseGraph<T>) -> (Vec<usize>, usize) {
    let m = g.vertex_count;
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in &g.edges {
        let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label = vec![usize::MAX; m];
    let mut root_label = vec![usize::MAX; m];
    let mut count = 0;
    for v in 0..m {
        let r = find(&mut parent, v);
        if root_label[r] == usize::MAX {
            root_label[r] = count;
            count += 1;
        }
        label[v] = root_label[r];
    }
    (label, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, GridSpacing};

    fn grid(n: usize) -> PointSet2<f64> {
        make_grid(n, GridSpacing::EndpointInclusive).unwrap()
    }

    #[test]
    fn two_by_two_grid_is_a_square() {
        let g = grid_graph(&grid(2), &GraphConfig::default()).unwrap();
        assert_eq!(g.edge_count(), 4);
        assert!(!g.has_edge(0, 3) && !g.has_edge(1, 2));
    }

    #[test]
    fn three_by_three_grid() {
        let g = grid_graph(&grid(3), &GraphConfig::default()).unwrap();
        assert_eq!(g.edge_count(), 12);
        assert_eq!(g.degrees()[4], 4);
    }

    #[test]
    fn full_scale_edge_weight() {
        let g = grid_graph(&grid(45), &GraphConfig::default()).unwrap();
        assert_eq!(g.edge_count(), 2 * 45 * 44);
        let s: f64 = 2.0 / 44.0;
        let want = (-(s * s) / (2.0 * 0.02 * 0.02)).exp();
        for e in &g.edges {
            assert!((e.w - want).abs() < 1e-12);
        }
        assert!((want - 0.0756).abs() < 1e-3);
    }

    #[test]
    fn kernel_values() {
        let cfg = GraphConfig::default();
        let a = [0.3, -0.2];
        assert_eq!(edge_weight(&a, &a, &cfg).unwrap(), 1.0);

        let r2 = GraphConfig::distance_2d(0.02, 0.1);
        assert_eq!(edge_weight(&[0.0, 0.0], &[0.2, 0.0], &r2).unwrap(), 0.0);

        let z = [0.0; 5];
        let far = [0.149, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(edge_weight(&z, &far, &cfg).unwrap(), 0.0);
        let near = [0.0, 0.0, 0.1, 0.0, 0.0];
        let w = edge_weight(&z, &near, &cfg).unwrap();
        assert!((w - (-12.5f64).exp()).abs() < 1e-18);
        assert!((w - 3.73e-6).abs() < 1e-8);

        assert!(edge_weight(&[0.0, 0.0], &z, &cfg).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = GraphConfig::default();
        cfg.eps = 0.0;
        assert!(cfg.validate().is_err());
        cfg = GraphConfig::default();
        cfg.threshold = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn untouched_grid_tears_nothing() {
        let u = grid(6);
        let cfg = GraphConfig::distance_2d(0.02, u.step().unwrap());
        let g = grid_graph(&u, &cfg).unwrap();
        let torn = tear_graph(&g, &u.points, &cfg).unwrap();
        assert_eq!(torn, g);
    }

    #[test]
    fn far_vertex_is_isolated() {
        let mut u = grid(5);
        let cfg = GraphConfig::distance_2d(0.02, u.step().unwrap());
        let g = grid_graph(&u, &cfg).unwrap();
        u.points[12][0] += 10.0;
        let torn = tear_graph(&g, &u.points, &cfg).unwrap();
        assert_eq!(torn.edge_count(), g.edge_count() - 4);
        assert_eq!(torn.degrees()[12], 0);
    }

    #[test]
    fn split_halves_make_two_components() {
        let n = 6;
        let mut u = grid(n);
        let cfg = GraphConfig::distance_2d(0.02, u.step().unwrap());
        let g = grid_graph(&u, &cfg).unwrap();
        for (idx, p) in u.points.iter_mut().enumerate() {
            p[1] += if idx % n < n / 2 { -1.0 } else { 1.0 };
        }
        let torn = tear_graph(&g, &u.points, &cfg).unwrap();
        let (labels, count) = connected_components(&torn);
        assert_eq!(count, 2);
        for e in &torn.edges {
            assert_eq!(e.i % n < n / 2, e.j % n < n / 2, "crossing edge survived");
        }
        // brute-force reachability from vertex 0
        let mut reach = vec![false; n * n];
        reach[0] = true;
        loop {
            let mut changed = false;
            for e in &torn.edges {
                if reach[e.i] != reach[e.j] {
                    reach[e.i] = true;
                    reach[e.j] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for v in 0..n * n {
            assert_eq!(reach[v], labels[v] == labels[0]);
            assert_eq!(reach[v], v % n < n / 2);
        }
    }

    #[test]
    fn tear_size_mismatch() {
        let u = grid(3);
        let g = grid_graph(&u, &GraphConfig::default()).unwrap();
        assert!(tear_graph(&g, &u.points[..5], &GraphConfig::default()).is_err());
    }

    #[test]
    fn laplacian_small_cases() {
        let empty = SparseGraph::<f64>::new(3, vec![]).unwrap();
        assert!(laplacian(&empty).data().iter().all(|v| *v == 0.0));
        let one = SparseGraph::new(2, vec![Edge { i: 0, j: 1, w: 0.7 }]).unwrap();
        assert_eq!(laplacian(&one).data(), &[0.7, -0.7, -0.7, 0.7]);
    }

    #[test]
    fn graph_validation() {
        assert!(SparseGraph::<f64>::new(2, vec![Edge { i: 1, j: 0, w: 1.0 }]).is_err());
        let e = Edge { i: 0, j: 1, w: 1.0 };
        assert!(SparseGraph::<f64>::new(2, vec![e, e]).is_err());
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        let one = SparseGraph::new(2, vec![Edge { i: 0, j: 1, w: 0.5f64 }]).unwrap();
        one.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "i,j,w\n0,1,0.5\n");
    }
}
