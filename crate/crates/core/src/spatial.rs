//! Static kd-tree for fixed-radius and k-nearest-neighbour queries.
//!
//! Results are defined to equal a brute-force scan: radius queries keep every
//! point with `‖q − p‖ ≤ r`, and all result lists are sorted by distance with
//! ties broken by ascending point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::Point3;

const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnResult {
    pub neighbors: Vec<Neighbor>,
    /// Set when `k` exceeded the point count and was reduced to it.
    pub capped: bool,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
pub struct NeighborIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    bounds: Vec<(Point3, Point3)>,
    leaf_size: usize,
}

struct HeapEntry(Neighbor);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

fn box_distance_sq(q: &Point3, lo: &Point3, hi: &Point3) -> f64 {
    (0..3)
        .map(|a| {
            let d = if q[a] < lo[a] {
                lo[a] - q[a]
            } else if q[a] > hi[a] {
                q[a] - hi[a]
            } else {
                0.0
            };
            d * d
        })
        .sum()
}

impl NeighborIndex {
    pub fn build(points: &[Point3]) -> Result<Self> {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &[Point3], leaf_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("neighbour index over an empty point list"));
        }
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            bounds: Vec::new(),
            leaf_size: leaf_size.max(1),
        };
        index.split(0, points.len());
        Ok(index)
    }

    fn split(&mut self, start: usize, end: usize) -> usize {
        let slice = &self.order[start..end];
        let mut lo = self.points[slice[0]];
        let mut hi = lo;
        for &i in slice {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        self.bounds.push((lo, hi));
        let extent = hi - lo;
        if end - start <= self.leaf_size || extent.max() == 0.0 {
            return id;
        }
        let axis = extent.imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        let left = self.split(start, mid);
        let right = self.split(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &Point3 {
        &self.points[index]
    }

    /// All points with `‖q − p‖ ≤ r`, nearest first.
    pub fn radius_query(&self, q: &Point3, r: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if r.is_nan() || r < 0.0 {
            return out;
        }
        // Slightly loosened so that pruning never drops a point the exact
        // per-point test below would keep.
        let bound_sq = r * r * (1.0 + 1e-9);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let (lo, hi) = &self.bounds[id];
            if box_distance_sq(q, lo, hi) > bound_sq {
                continue;
            }
            match self.nodes[id] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let distance = (q - self.points[i]).norm();
                        if distance <= r {
                            out.push(Neighbor { index: i, distance });
                        }
                    }
                }
                Node::Split { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        out.sort_by(Neighbor::key_cmp);
        out
    }

    /// The `k` nearest points, nearest first. `k` larger than the point count
    /// is reduced to it and flagged.
    pub fn knn_query(&self, q: &Point3, k: usize) -> KnnResult {
        let capped = k > self.len();
        let k = k.min(self.len());
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_visit(0, q, k, &mut heap);
        }
        let mut neighbors: Vec<Neighbor> = heap.into_iter().map(|e| e.0).collect();
        neighbors.sort_by(Neighbor::key_cmp);
        KnnResult { neighbors, capped }
    }

    fn knn_visit(&self, id: usize, q: &Point3, k: usize, heap: &mut BinaryHeap<HeapEntry>) {
        if heap.len() == k {
            let worst = heap.peek().map(|e| e.0.distance).unwrap_or(f64::INFINITY);
            let (lo, hi) = &self.bounds[id];
            if box_distance_sq(q, lo, hi) > worst * worst * (1.0 + 1e-9) {
                return;
            }
        }
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        distance: (q - self.points[i]).norm(),
                    };
                    if heap.len() < k {
                        heap.push(HeapEntry(cand));
                    } else if cand.key_cmp(&heap.peek().expect("heap is full").0) == Ordering::Less {
                        heap.pop();
                        heap.push(HeapEntry(cand));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let (near, far) = if q[axis] < value { (left, right) } else { (right, left) };
                self.knn_visit(near, q, k, heap);
                self.knn_visit(far, q, k, heap);
            }
        }
    }

    pub fn nearest(&self, q: &Point3) -> Neighbor {
        self.knn_query(q, 1).neighbors[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_radius(points: &[Point3], q: &Point3, r: f64) -> Vec<Neighbor> {
        let mut v: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor {
                index,
                distance: (q - p).norm(),
            })
            .filter(|n| n.distance <= r)
            .collect();
        v.sort_by(Neighbor::key_cmp);
        v
    }

    fn brute_knn(points: &[Point3], q: &Point3, k: usize) -> Vec<Neighbor> {
        let mut v = brute_radius(points, q, f64::INFINITY);
        v.truncate(k);
        v
    }

    fn cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(NeighborIndex::build(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn single_point_and_duplicates() {
        let idx = NeighborIndex::build(&[Point3::zeros()]).unwrap();
        assert_eq!(idx.len(), 1);
        let p = Point3::new(0.5, 0.5, 0.5);
        let idx = NeighborIndex::build(&vec![p; 40]).unwrap();
        let hits = idx.radius_query(&p, 0.0);
        assert_eq!(hits.len(), 40);
        assert!(hits.iter().enumerate().all(|(i, n)| n.index == i));
    }

    #[test]
    fn two_point_radius_example() {
        let idx = NeighborIndex::build(&[Point3::zeros(), Point3::x()]).unwrap();
        let hits = idx.radius_query(&Point3::new(0.1, 0.0, 0.0), 0.5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].index, 0);
        assert!((hits[0].distance - 0.1).abs() < 1e-15);
        assert!(idx.radius_query(&Point3::new(10.0, 10.0, 10.0), 0.5).is_empty());
    }

    #[test]
    fn knn_on_a_row() {
        let row: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let idx = NeighborIndex::build(&row).unwrap();
        let r = idx.knn_query(&Point3::zeros(), 3);
        let d: Vec<f64> = r.neighbors.iter().map(|n| n.distance).collect();
        assert_eq!(d, vec![0.0, 1.0, 2.0]);
        assert!(!r.capped);
        let all = idx.knn_query(&Point3::zeros(), 10);
        assert_eq!(all.neighbors.len(), 10);
        let over = idx.knn_query(&Point3::zeros(), 25);
        assert!(over.capped);
        assert_eq!(over.neighbors.len(), 10);
    }

    #[test]
    fn ties_break_by_index() {
        let pts = vec![Point3::x(), -Point3::x(), Point3::y(), -Point3::y()];
        let idx = NeighborIndex::build(&pts).unwrap();
        let r = idx.knn_query(&Point3::zeros(), 2);
        assert_eq!(r.neighbors.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn radius_matches_brute_force_unit_cube() {
        let pts = cloud(1000, 1);
        let idx = NeighborIndex::build(&pts).unwrap();
        for q in cloud(50, 2) {
            assert_eq!(idx.radius_query(&q, 0.1), brute_radius(&pts, &q, 0.1));
        }
    }

    #[test]
    fn large_cloud_matches_brute_force() {
        let pts = cloud(100_000, 3);
        let idx = NeighborIndex::build(&pts).unwrap();
        for q in cloud(100, 4) {
            assert_eq!(idx.knn_query(&q, 50).neighbors, brute_knn(&pts, &q, 50));
            assert_eq!(idx.radius_query(&q, 0.03), brute_radius(&pts, &q, 0.03));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn queries_equal_brute_force(
            seed in 0u64..1000,
            n in 1usize..400,
            k in 1usize..60,
            r in 0.0f64..0.6,
            leaf in 1usize..20,
            q in prop::array::uniform3(-0.2f64..1.2),
        ) {
            // Snap to a coarse lattice so that exact ties actually occur.
            let pts: Vec<Point3> = cloud(n, seed).iter().map(|p| (p * 8.0).map(f64::round) / 8.0).collect();
            let idx = NeighborIndex::with_leaf_size(&pts, leaf).unwrap();
            let q = Point3::from(q);
            prop_assert_eq!(idx.radius_query(&q, r), brute_radius(&pts, &q, r));
            let knn = idx.knn_query(&q, k);
            prop_assert_eq!(knn.capped, k > n);
            prop_assert_eq!(knn.neighbors, brute_knn(&pts, &q, k));
        }
    }
}
