//! Exact nearest-neighbor search in 3D.

use crate::cloud::dist2_3;
use crate::numeric::Scalar;

const LEAF_SIZE: usize = 8;

/// Which search structure backs an [`NNIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexKind {
    #[default]
    KdTree,
    BruteForce,
}

/// Nearest-neighbor index over a fixed point set. Ties go to the lowest index.
#[derive(Debug, Clone)]
pub enum NNIndex<T> {
    KdTree(KdTree<T>),
    BruteForce(Vec<[T; 3]>),
}

impl<T: Scalar> NNIndex<T> {
    pub fn build(points: &[[T; 3]], kind: IndexKind) -> Self {
        match kind {
            IndexKind::KdTree => NNIndex::KdTree(KdTree::build(points)),
            IndexKind::BruteForce => NNIndex::BruteForce(points.to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NNIndex::KdTree(t) => t.ids.len(),
            NNIndex::BruteForce(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(index, squared distance)` of the nearest point. Panics on an empty index.
    pub fn nearest_sq(&self, q: &[T; 3]) -> (usize, T) {
        match self {
            NNIndex::KdTree(t) => t.nearest_sq(q),
            NNIndex::BruteForce(p) => brute_nearest_sq(p, q),
        }
    }

    /// `(index, distance)` of the nearest point.
    pub fn query(&self, q: &[T; 3]) -> (usize, T) {
        let (i, d2) = self.nearest_sq(q);
        (i, d2.sqrt())
    }
}

pub fn brute_nearest_sq<T: Scalar>(points: &[[T; 3]], q: &[T; 3]) -> (usize, T) {
    assert!(!points.is_empty(), "nearest neighbor in an empty set");
    let mut best = (0, dist2_3(&points[0], q));
    for (i, p) in points.iter().enumerate().skip(1) {
        let d = dist2_3(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
enum KdNode<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Static k-d tree; points are stored permuted with their original ids.
#[derive(Debug, Clone)]
pub struct KdTree<T> {
    points: Vec<[T; 3]>,
    ids: Vec<usize>,
    nodes: Vec<KdNode<T>>,
}

impl<T: Scalar> KdTree<T> {
    pub fn build(points: &[[T; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build_node(points, &mut order, 0, points.len(), &mut nodes);
        }
        Self {
            points: order.iter().map(|&i| points[i]).collect(),
            ids: order,
            nodes,
        }
    }

    pub fn nearest_sq(&self, q: &[T; 3]) -> (usize, T) {
        assert!(!self.ids.is_empty(), "nearest neighbor in an empty set");
        let mut best = (usize::MAX, T::infinity());
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: &[T; 3], best: &mut (usize, T)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for k in start..end {
                    let d = dist2_3(&self.points[k], q);
                    let id = self.ids[k];
                    if d < best.1 || (d == best.1 && id < best.0) {
                        *best = (id, d);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= T::zero() {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_node<T: Scalar>(
    points: &[[T; 3]],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<KdNode<T>>,
) -> usize {
    let me = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(KdNode::Leaf { start, end });
        return me;
    }
    // split along the widest axis
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    for &i in &order[start..end] {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
        .unwrap();
    let mid = (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let value = points[order[start + mid]][axis];
    nodes.push(KdNode::Leaf { start, end }); // placeholder
    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes[me] = KdNode::Split {
        axis,
        value,
        left,
        right,
    };
    me
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn indexed_point_finds_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..100).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let idx = NNIndex::build(&pts, IndexKind::KdTree);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(idx.query(p), (i, 0.0));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        for kind in [IndexKind::KdTree, IndexKind::BruteForce] {
            assert_eq!(NNIndex::build(&pts, kind).query(&[0.0, 0.0, 0.0]).0, 0);
        }
        // many duplicates spread across leaves
        let dup = vec![[0.5f64, 0.5, 0.5]; 50];
        let idx = NNIndex::build(&dup, IndexKind::KdTree);
        assert_eq!(idx.query(&[0.0, 0.0, 0.0]).0, 0);
    }
}
