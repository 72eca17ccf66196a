//! Exact k-nearest-neighbour queries over a patch set.
//!
//! Neighbours are ordered by `(squared distance, index)`, matching the exhaustive
//! scan used elsewhere, so both paths produce identical rank lists.

use crate::features::PatchSet;
use crate::scalar::{squared_distance, Scalar};

const LEAF_SIZE: usize = 8;

enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

pub(crate) struct KdTree<'a, T> {
    points: &'a PatchSet<T>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Scalar> KdTree<'a, T> {
    pub(crate) fn build(points: &'a PatchSet<T>) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.count()).collect(),
            nodes: Vec::new(),
        };
        let n = tree.order.len();
        tree.build_node(0, n);
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.points.dim();
        let mut best_axis = 0;
        let mut best_spread = T::neg_infinity();
        for axis in 0..dim {
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            for &i in &self.order[start..end] {
                let v = self.points.patch(i)[axis];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = axis;
            }
        }
        if best_spread <= T::zero() {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let points = self.points;
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points.patch(a)[best_axis]
                .partial_cmp(&points.patch(b)[best_axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let value = points.patch(self.order[mid])[best_axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis: best_axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, nearest first.
    pub(crate) fn nearest(&self, query: &[T], k: usize) -> Vec<usize> {
        let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(0, query, k, &mut best);
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    fn search(&self, node: usize, query: &[T], k: usize, best: &mut Vec<(T, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = squared_distance(query, self.points.patch(i));
                    insert_bounded(best, k, d, i);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, query, k, best);
                let bound = diff * diff;
                let full = best.len() == k;
                if !full || bound <= best[k - 1].0 {
                    self.search(far, query, k, best);
                }
            }
        }
    }
}

/// Keeps `best` sorted by `(distance, index)` with at most `k` entries.
#[inline]
pub(crate) fn insert_bounded<T: Scalar>(best: &mut Vec<(T, usize)>, k: usize, d: T, i: usize) {
    let less = |a: (T, usize), b: (T, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    if best.len() == k && !less((d, i), best[k - 1]) {
        return;
    }
    let pos = best.iter().position(|&e| less((d, i), e)).unwrap_or(best.len());
    best.insert(pos, (d, i));
    best.truncate(k);
}
