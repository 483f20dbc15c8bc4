use std::fs;
use std::path::{Path, PathBuf};

use super::Variant;
use crate::cloud::PointCloud3;
use crate::data::ply::write_ply;
use crate::error::{Error, Result};
use crate::geometry::{
    extract_mesh, remove_isolated, write_obj, write_points2_csv, PointSet2, QuadMesh, SparseGraph,
};
use crate::numeric::Scalar;

/// One fold output with the 2D points it came from.
#[derive(Debug, Clone)]
pub struct DecodedStage<T> {
    /// Superscript of the fold output; its 2D input carries `index - 1`.
    pub index: usize,
    pub coords: Option<PointSet2<T>>,
    pub x: PointCloud3<T>,
}

/// Plain-value result of one decode.
#[derive(Debug, Clone)]
pub struct Decoded<T> {
    pub variant: Variant,
    pub grid_dim: usize,
    pub code: Vec<T>,
    pub u0: PointSet2<T>,
    pub stages: Vec<DecodedStage<T>>,
    /// Graph-filtered cloud; its superscript follows the last fold.
    pub filtered: Option<PointCloud3<T>>,
    pub output: PointCloud3<T>,
    /// Torn graph for tearing variants, the untouched grid graph otherwise.
    pub graph: SparseGraph<T>,
    pub torn: bool,
}

impl<T: Scalar> Decoded<T> {
    fn last_index(&self) -> usize {
        self.stages.last().map_or(0, |s| s.index)
    }

    /// `x^(k)`: a fold output, or the filtered cloud right after the last fold.
    pub fn x(&self, k: usize) -> Option<&PointCloud3<T>> {
        if let Some(s) = self.stages.iter().find(|s| s.index == k) {
            return Some(&s.x);
        }
        if k == self.last_index() + 1 {
            return self.filtered.as_ref();
        }
        None
    }

    /// `u^(k)`: the 2D points fed to the fold that produced `x^(k+1)`.
    pub fn u(&self, k: usize) -> Option<&PointSet2<T>> {
        if k == 0 {
            return Some(&self.u0);
        }
        self.stages
            .iter()
            .find(|s| s.index == k + 1)
            .and_then(|s| s.coords.as_ref())
    }

    pub fn x1(&self) -> Option<&PointCloud3<T>> {
        self.x(1)
    }

    pub fn x2(&self) -> Option<&PointCloud3<T>> {
        self.x(2)
    }

    pub fn x3(&self) -> Option<&PointCloud3<T>> {
        self.x(3)
    }

    pub fn u1(&self) -> Option<&PointSet2<T>> {
        self.u(1)
    }

    pub fn torn_graph(&self) -> Option<&SparseGraph<T>> {
        self.torn.then_some(&self.graph)
    }

    /// Quad mesh over the final output, one face per surviving grid square.
    pub fn mesh(&self) -> Result<QuadMesh<T>> {
        extract_mesh(self.grid_dim, &self.graph, &self.output)
    }

    /// Final output with isolated vertices dropped when the graph was torn.
    /// Falls back to the full output if every vertex is isolated.
    pub fn cleaned_output(&self) -> PointCloud3<T> {
        if !self.torn {
            return self.output.clone();
        }
        let kept = remove_isolated(&self.output, &self.graph);
        if kept.is_empty() {
            log::warn!("every vertex of the torn graph is isolated; keeping all points");
            self.output.clone()
        } else {
            kept
        }
    }

    /// Write `u<k>.csv`, `x<k>.ply`, `output.ply`, the graph CSV and `mesh.obj`
    /// into `dir`. Returns the written paths.
    pub fn export(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let grid_ids: Vec<i64> = (0..self.u0.len() as i64).collect();
        let put_u = |k: usize, u: &PointSet2<T>, written: &mut Vec<PathBuf>| -> Result<()> {
            let p = dir.join(format!("u{k}.csv"));
            write_points2_csv(&p, u)?;
            written.push(p);
            Ok(())
        };
        put_u(0, &self.u0, &mut written)?;
        for s in &self.stages {
            if s.index >= 2 {
                if let Some(u) = &s.coords {
                    put_u(s.index - 1, u, &mut written)?;
                }
            }
        }
        let mut put_x = |name: String, x: &PointCloud3<T>| -> Result<()> {
            let p = dir.join(name);
            write_ply(&p, x, Some(("grid_index", &grid_ids)))?;
            written.push(p);
            Ok(())
        };
        for s in &self.stages {
            put_x(format!("x{}.ply", s.index), &s.x)?;
        }
        if let Some(f) = &self.filtered {
            put_x(format!("x{}.ply", self.last_index() + 1), f)?;
        }
        put_x("output.ply".to_string(), &self.output)?;
        let g = dir.join(if self.torn { "torn_graph.csv" } else { "grid_graph.csv" });
        self.graph.write_csv(&g)?;
        written.push(g);
        let m = dir.join("mesh.obj");
        write_obj(&m, &self.mesh()?)?;
        written.push(m);
        Ok(written)
    }
}
