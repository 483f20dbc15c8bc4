use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};

/// Ordered list of 3D points.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PointCloud3<T> {
    pub points: Vec<[T; 3]>,
}

impl<T: Scalar> PointCloud3<T> {
    pub fn new(points: Vec<[T; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `n x 3` matrix view.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_rows(&self.points)
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        if t.shape().len() != 2 || t.cols() != 3 {
            return Err(Error::shape(
                "point cloud",
                format!("expected an n x 3 matrix, got {:?}", t.shape()),
            ));
        }
        Ok(Self {
            points: t.to_rows::<3>(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud3<U> {
        PointCloud3 {
            points: self
                .points
                .iter()
                .map(|p| [U::lit(p[0].as_f64()), U::lit(p[1].as_f64()), U::lit(p[2].as_f64())])
                .collect(),
        }
    }

    /// Keep the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

impl<T> From<Vec<[T; 3]>> for PointCloud3<T> {
    fn from(points: Vec<[T; 3]>) -> Self {
        Self { points }
    }
}

#[inline]
pub(crate) fn dist3<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    dist2_3(a, b).sqrt()
}

#[inline]
pub(crate) fn dist2_3<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
