//! The 2D primitive grid, its graphs, graph filtering and mesh extraction.

mod filter;
mod graph;
mod mesh;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};

pub use filter::{graph_filter, tear_and_filter, FilterOutput};
pub use graph::{
    connected_components, edge_weight, grid_graph, laplacian, tear_graph, Edge, GraphConfig,
    SparseGraph, TearMode,
};
pub use mesh::{
    alive_faces, extract_mesh, isolated_mask, remove_isolated, resample, write_obj, PointDecoder,
    QuadMesh, RESAMPLE_OVERSAMPLING,
};

/// Where the N x N grid points sit inside `[-1, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSpacing {
    /// Corners included, spacing `2 / (N - 1)`.
    #[default]
    EndpointInclusive,
    /// Points at cell centers, spacing `2 / N`.
    CellCentered,
}

impl GridSpacing {
    pub fn step(self, n: usize) -> f64 {
        match self {
            GridSpacing::EndpointInclusive => 2.0 / (n as f64 - 1.0),
            GridSpacing::CellCentered => 2.0 / n as f64,
        }
    }

    pub fn origin(self, n: usize) -> f64 {
        match self {
            GridSpacing::EndpointInclusive => -1.0,
            GridSpacing::CellCentered => -1.0 + 0.5 * self.step(n),
        }
    }
}

/// Ordered 2D points on the primitive square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PointSet2<T> {
    pub points: Vec<[T; 2]>,
    /// `Some(N)` when the points form the regular N x N grid.
    pub grid_dim: Option<usize>,
    #[serde(default)]
    pub spacing: GridSpacing,
}

impl<T: Scalar> PointSet2<T> {
    pub fn free(points: Vec<[T; 2]>) -> Self {
        Self {
            points,
            grid_dim: None,
            spacing: GridSpacing::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_rows(&self.points)
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        if t.shape().len() != 2 || t.cols() != 2 {
            return Err(Error::shape(
                "point set",
                format!("expected an m x 2 matrix, got {:?}", t.shape()),
            ));
        }
        Ok(Self::free(t.to_rows::<2>()))
    }

    /// Grid spacing, if this is a regular grid.
    pub fn step(&self) -> Option<f64> {
        self.grid_dim.map(|n| self.spacing.step(n))
    }
}

/// Regular `n x n` grid, lexicographic in (row, column); row drives the first
/// coordinate.
pub fn make_grid<T: Scalar>(n: usize, spacing: GridSpacing) -> Result<PointSet2<T>> {
    if n < 2 {
        return Err(Error::invalid(format!("grid dimension must be >= 2, got {n}")));
    }
    let (o, s) = (spacing.origin(n), spacing.step(n));
    let coord = |i: usize| {
        // pin the last inclusive coordinate to exactly 1
        if spacing == GridSpacing::EndpointInclusive && i == n - 1 {
            1.0
        } else {
            o + i as f64 * s
        }
    };
    let mut points = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            points.push([T::lit(coord(r)), T::lit(coord(c))]);
        }
    }
    Ok(PointSet2 {
        points,
        grid_dim: Some(n),
        spacing,
    })
}

/// Flat index of grid cell (row, col).
#[inline]
pub fn grid_index(n: usize, row: usize, col: usize) -> usize {
    row * n + col
}

/// Write `i,u,v` rows (the primitive or torn 2D grid).
pub fn write_points2_csv<T: Scalar>(path: &std::path::Path, set: &PointSet2<T>) -> Result<()> {
    let mut s = String::from("i,u,v\n");
    for (i, p) in set.points.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", i, p[0], p[1]));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_is_the_corners() {
        let g = make_grid::<f64>(2, GridSpacing::EndpointInclusive).unwrap();
        assert_eq!(g.points, vec![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn odd_grid_has_origin_in_the_middle() {
        let g = make_grid::<f64>(3, GridSpacing::EndpointInclusive).unwrap();
        assert_eq!(g.points[4], [0.0, 0.0]);
    }

    #[test]
    fn full_scale_grid() {
        let g = make_grid::<f64>(45, GridSpacing::EndpointInclusive).unwrap();
        assert_eq!(g.len(), 2025);
        assert!((g.step().unwrap() - 2.0 / 44.0).abs() < 1e-15);
        assert!((g.points[1][1] - g.points[0][1] - 2.0 / 44.0).abs() < 1e-12);
        assert!(g.points.iter().all(|p| p.iter().all(|v| (-1.0..=1.0).contains(v))));
    }

    #[test]
    fn grid_is_point_symmetric() {
        for spacing in [GridSpacing::EndpointInclusive, GridSpacing::CellCentered] {
            for n in 2..12 {
                let g = make_grid::<f64>(n, spacing).unwrap();
                for p in &g.points {
                    let neg = [-p[0], -p[1]];
                    assert!(g
                        .points
                        .iter()
                        .any(|q| (q[0] - neg[0]).abs() < 1e-12 && (q[1] - neg[1]).abs() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn cell_centered_spacing() {
        let g = make_grid::<f64>(4, GridSpacing::CellCentered).unwrap();
        assert!((g.points[0][0] + 0.75).abs() < 1e-15);
        assert!((g.points[1][1] - g.points[0][1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tiny_grid_rejected() {
        assert!(make_grid::<f32>(1, GridSpacing::EndpointInclusive).is_err());
    }
}
