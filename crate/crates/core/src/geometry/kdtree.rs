use std::cmp::Ordering;

use super::{dist_sq, GeometryError, PointCloud};
use crate::scalar::Real;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: T, left: u32, right: u32 },
}

/// Exact nearest-neighbour index (kd-tree) over a fixed point set.
///
/// Queries return the point minimizing squared Euclidean distance; among
/// equidistant points the one with the lowest original index wins.
#[derive(Debug, Clone)]
pub struct NearestNeighborIndex<T, const D: usize> {
    points: Vec<[T; D]>,
    ids: Vec<u32>,
    slot_of: Vec<u32>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> NearestNeighborIndex<T, 3> {
    pub fn from_cloud(cloud: &PointCloud<T>) -> Result<Self, GeometryError> {
        Self::build(cloud.points())
    }
}

impl<T: Real, const D: usize> NearestNeighborIndex<T, D> {
    pub fn build(points: &[[T; D]]) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        build_node(points, &mut order, 0, &mut nodes);
        let reordered = order.iter().map(|&i| points[i as usize]).collect();
        let mut slot_of = vec![0u32; order.len()];
        for (slot, &id) in order.iter().enumerate() {
            slot_of[id as usize] = slot as u32;
        }
        Ok(Self { points: reordered, ids: order, slot_of, nodes })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index (into the original point slice) and squared distance of the
    /// nearest point to `query`.
    #[inline]
    pub fn nearest(&self, query: &[T; D]) -> (usize, T) {
        let mut best = (u32::MAX, T::infinity());
        self.search(0, query, &mut best);
        (best.0 as usize, best.1)
    }

    /// Same result as [`Self::nearest`], but seeds the search bound with
    /// point `hint` (any valid index), which prunes most of the tree when the
    /// hint is already close, e.g. the previous answer for a slowly moving
    /// query. Out-of-range hints are ignored.
    #[inline]
    pub fn nearest_with_hint(&self, query: &[T; D], hint: usize) -> (usize, T) {
        let mut best = match self.slot_of.get(hint) {
            Some(&slot) => (hint as u32, dist_sq(&self.points[slot as usize], query)),
            None => (u32::MAX, T::infinity()),
        };
        self.search(0, query, &mut best);
        (best.0 as usize, best.1)
    }

    fn search(&self, node: usize, q: &[T; D], best: &mut (u32, T)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let d = dist_sq(&self.points[slot], q);
                    let id = self.ids[slot];
                    if d < best.1 || (d == best.1 && id < best.0) {
                        *best = (id, d);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near as usize, q, best);
                // `<=` keeps equidistant candidates on the far side reachable
                // so the lowest-index tie-break stays exact.
                if diff * diff <= best.1 {
                    self.search(far as usize, q, best);
                }
            }
        }
    }
}

fn build_node<T: Real, const D: usize>(
    points: &[[T; D]],
    order: &mut [u32],
    offset: usize,
    nodes: &mut Vec<Node<T>>,
) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start: offset as u32, end: (offset + order.len()) as u32 });
        return id;
    }

    let mut lo = points[order[0] as usize];
    let mut hi = lo;
    for &i in order.iter() {
        let p = &points[i as usize];
        for k in 0..D {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let mut dim = 0;
    for k in 1..D {
        if hi[k] - lo[k] > hi[dim] - lo[dim] {
            dim = k;
        }
    }
    if hi[dim] - lo[dim] == T::zero() {
        // All points coincide; splitting cannot separate them.
        nodes.push(Node::Leaf { start: offset as u32, end: (offset + order.len()) as u32 });
        return id;
    }

    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][dim]
            .partial_cmp(&points[b as usize][dim])
            .unwrap_or(Ordering::Equal)
    });
    let value = points[order[mid] as usize][dim];

    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_part, right_part) = order.split_at_mut(mid);
    let left = build_node(points, left_part, offset, nodes);
    let right = build_node(points, right_part, offset + mid, nodes);
    nodes[id as usize] = Node::Split { dim: dim as u8, value, left, right };
    id
}
