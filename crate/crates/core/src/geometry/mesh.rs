use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::SparseGraph;
use super::{grid_index, GridSpacing};
use crate::cloud::PointCloud3;
use crate::error::{Error, Result};
use crate::numeric::Scalar;

/// Total draws allowed per requested sample when resampling.
pub const RESAMPLE_OVERSAMPLING: usize = 100;

/// Quad faces over the grid that survived tearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QuadMesh<T> {
    pub vertices: Vec<[T; 3]>,
    pub faces: Vec<[usize; 4]>,
}

fn edge_set<T: Scalar>(n: usize, torn: &SparseGraph<T>) -> Result<HashSet<(usize, usize)>> {
    if torn.vertex_count != n * n {
        return Err(Error::shape(
            "extract_mesh",
            format!("graph has {} vertices, grid {n}x{n} needs {}", torn.vertex_count, n * n),
        ));
    }
    let mut set = HashSet::with_capacity(torn.edges.len());
    for e in &torn.edges {
        let horizontal = e.j == e.i + 1 && e.i / n == e.j / n;
        let vertical = e.j == e.i + n;
        if !(horizontal || vertical) {
            return Err(Error::invalid(format!(
                "edge ({}, {}) is not a grid edge",
                e.i, e.j
            )));
        }
        set.insert((e.i, e.j));
    }
    Ok(set)
}

/// Alive flag per elementary square, row-major over `(n-1) x (n-1)`.
/// A square survives only if all four of its boundary edges survive.
pub fn alive_faces<T: Scalar>(n: usize, torn: &SparseGraph<T>) -> Result<Vec<bool>> {
    let set = edge_set(n, torn)?;
    let mut alive = Vec::with_capacity((n - 1) * (n - 1));
    for r in 0..n - 1 {
        for c in 0..n - 1 {
            let a = grid_index(n, r, c);
            let b = grid_index(n, r, c + 1);
            let d = grid_index(n, r + 1, c);
            let e = grid_index(n, r + 1, c + 1);
            alive.push(
                set.contains(&(a, b))
                    && set.contains(&(d, e))
                    && set.contains(&(a, d))
                    && set.contains(&(b, e)),
            );
        }
    }
    Ok(alive)
}

/// One quad per elementary square whose boundary survived in `torn`.
pub fn extract_mesh<T: Scalar>(
    n: usize,
    torn: &SparseGraph<T>,
    x: &PointCloud3<T>,
) -> Result<QuadMesh<T>> {
    if n < 2 || x.len() != n * n {
        return Err(Error::shape(
            "extract_mesh",
            format!("{} points for a {n}x{n} grid", x.len()),
        ));
    }
    let alive = alive_faces(n, torn)?;
    let mut faces = Vec::new();
    for r in 0..n - 1 {
        for c in 0..n - 1 {
            if alive[r * (n - 1) + c] {
                faces.push([
                    grid_index(n, r, c),
                    grid_index(n, r, c + 1),
                    grid_index(n, r + 1, c + 1),
                    grid_index(n, r + 1, c),
                ]);
            }
        }
    }
    Ok(QuadMesh {
        vertices: x.points.clone(),
        faces,
    })
}

/// ASCII OBJ with 1-based face indices.
pub fn write_obj<T: Scalar>(path: &Path, mesh: &QuadMesh<T>) -> Result<()> {
    let mut s = String::new();
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        s.push_str(&format!("f {} {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1, f[3] + 1));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// `true` for vertices with no surviving edge.
pub fn isolated_mask<T: Scalar>(torn: &SparseGraph<T>) -> Vec<bool> {
    torn.degrees().into_iter().map(|d| d == 0).collect()
}

/// Drop points whose vertex has degree 0; survivors keep their order.
pub fn remove_isolated<T: Scalar>(x: &PointCloud3<T>, torn: &SparseGraph<T>) -> PointCloud3<T> {
    let keep: Vec<usize> = isolated_mask(torn)
        .into_iter()
        .enumerate()
        .filter(|(i, iso)| !iso && *i < x.len())
        .map(|(i, _)| i)
        .collect();
    x.select(&keep)
}

/// Anything that maps primitive-square samples to 3D for a given codeword.
pub trait PointDecoder<T: Scalar> {
    fn decode_points(&self, code: &[T], samples: &[[T; 2]]) -> Result<Vec<[T; 3]>>;
}

/// Elementary square containing `u`, clamped to the grid hull.
fn containing_square(u: [f64; 2], n: usize, spacing: GridSpacing) -> usize {
    let (o, s) = (spacing.origin(n), spacing.step(n));
    let cell = |t: f64| (((t - o) / s).floor().max(0.0) as usize).min(n - 2);
    cell(u[0]) * (n - 1) + cell(u[1])
}

/// Draw `count` uniform samples on the primitive square, discard those landing
/// on pruned faces, and map the survivors through `decoder`.
pub fn resample<T, D, R>(
    decoder: &D,
    code: &[T],
    count: usize,
    n: usize,
    spacing: GridSpacing,
    torn: &SparseGraph<T>,
    rng: &mut R,
) -> Result<PointCloud3<T>>
where
    T: Scalar,
    D: PointDecoder<T> + ?Sized,
    R: Rng,
{
    if count == 0 {
        return Ok(PointCloud3::default());
    }
    let alive = alive_faces(n, torn)?;
    let cap = RESAMPLE_OVERSAMPLING * count;
    let mut kept = Vec::with_capacity(count);
    let mut attempts = 0;
    while kept.len() < count && attempts < cap {
        attempts += 1;
        let u = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        if alive[containing_square(u, n, spacing)] {
            kept.push([T::lit(u[0]), T::lit(u[1])]);
        }
    }
    if kept.len() < count {
        return Err(Error::RetryCap {
            attempts,
            kept: kept.len(),
            wanted: count,
        });
    }
    Ok(PointCloud3::new(decoder.decode_points(code, &kept)?))
}
