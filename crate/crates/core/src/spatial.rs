//! Exact nearest-neighbor queries over a point set.
//!
//! A static kd-tree supporting k-nearest-neighbor and nearest-neighbor
//! lookups. Results are exact: for every query the returned index set is
//! identical to brute-force distance sorting, with ties broken by the
//! lowest point index. The tree is immutable after construction and safe
//! to query from any number of threads.

use crate::pointcloud::OrientedPointCloud;
use crate::{Error, Result};
use nalgebra::SVector;

const DEFAULT_LEAF_CAPACITY: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, right: u32 },
}

/// Exact k-nearest-neighbor index over a fixed set of points.
#[derive(Debug, Clone)]
pub struct NeighborIndex<const D: usize> {
    points: Vec<SVector<f64, D>>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: u32,
}

impl Candidate {
    /// Lexicographic (distance, index) order; the global "better" relation.
    fn beats(&self, other: &Candidate) -> bool {
        self.d2 < other.d2 || (self.d2 == other.d2 && self.index < other.index)
    }
}

/// Bounded candidate set keeping the k best (distance, index) pairs.
/// Linear replacement is faster than a heap for the small k used here.
struct CandidateSet {
    entries: Vec<Candidate>,
    k: usize,
}

impl CandidateSet {
    fn new(k: usize) -> Self {
        Self {
            entries: Vec::with_capacity(k),
            k,
        }
    }

    fn worst(&self) -> Option<Candidate> {
        if self.entries.len() < self.k {
            None
        } else {
            self.entries.iter().copied().max_by(|a, b| {
                a.d2.partial_cmp(&b.d2)
                    .unwrap()
                    .then(a.index.cmp(&b.index))
            })
        }
    }

    fn offer(&mut self, c: Candidate) {
        if self.entries.len() < self.k {
            self.entries.push(c);
        } else if let Some(pos) = self.position_of_worst() {
            if c.beats(&self.entries[pos]) {
                self.entries[pos] = c;
            }
        }
    }

    fn position_of_worst(&self) -> Option<usize> {
        let mut worst = 0;
        for i in 1..self.entries.len() {
            if self.entries[worst].beats(&self.entries[i]) {
                worst = i;
            }
        }
        if self.entries.is_empty() {
            None
        } else {
            Some(worst)
        }
    }
}

impl<const D: usize> NeighborIndex<D> {
    /// Build an index over the cloud's points with the default leaf capacity.
    pub fn build(cloud: &OrientedPointCloud<D>) -> Result<Self> {
        Self::build_from_points(cloud.points.clone(), DEFAULT_LEAF_CAPACITY)
    }

    /// Build directly from a point list.
    pub fn build_from_points(points: Vec<SVector<f64, D>>, leaf_capacity: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let leaf_capacity = leaf_capacity.max(1);
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        build_node(&points, &mut order, 0, points.len(), leaf_capacity, &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &SVector<f64, D> {
        &self.points[index]
    }

    /// The k nearest points to `x`, sorted by ascending distance with ties
    /// broken by ascending index. Returns `(indices, squared distances)`.
    pub fn knn(&self, x: &SVector<f64, D>, k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        if k == 0 || k > self.points.len() {
            return Err(Error::InvalidParameter(format!(
                "knn k={} out of range 1..={}",
                k,
                self.points.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "knn query point has non-finite coordinates".into(),
            ));
        }
        let mut set = CandidateSet::new(k);
        self.search(0, x, &mut set);
        let mut entries = set.entries;
        entries.sort_by(|a, b| {
            a.d2.partial_cmp(&b.d2)
                .unwrap()
                .then(a.index.cmp(&b.index))
        });
        let indices = entries.iter().map(|c| c.index as usize).collect();
        let dists = entries.iter().map(|c| c.d2).collect();
        Ok((indices, dists))
    }

    /// Index of the nearest point to `x` (lowest index on ties).
    pub fn nn(&self, x: &SVector<f64, D>) -> Result<usize> {
        let (idx, _) = self.knn(x, 1)?;
        Ok(idx[0])
    }

    /// Nearest point index together with the squared distance.
    pub fn nn_with_dist2(&self, x: &SVector<f64, D>) -> Result<(usize, f64)> {
        let (idx, d2) = self.knn(x, 1)?;
        Ok((idx[0], d2[0]))
    }

    fn search(&self, node: u32, x: &SVector<f64, D>, set: &mut CandidateSet) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &pi in &self.order[*start as usize..*end as usize] {
                    let d2 = (self.points[pi as usize] - x).norm_squared();
                    set.offer(Candidate { d2, index: pi });
                }
            }
            Node::Split { axis, value, right } => {
                let diff = x[*axis as usize] - value;
                let (near, far) = if diff < 0.0 {
                    (node + 1, *right)
                } else {
                    (*right, node + 1)
                };
                self.search(near, x, set);
                // The far half-space can still hold an equally distant point
                // with a lower index, so descend on ties too.
                let must_visit = match set.worst() {
                    None => true,
                    Some(w) => diff * diff <= w.d2,
                };
                if must_visit {
                    self.search(far, x, set);
                }
            }
        }
    }
}

fn build_node<const D: usize>(
    points: &[SVector<f64, D>],
    order: &mut [u32],
    start: usize,
    end: usize,
    leaf_capacity: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let id = nodes.len() as u32;
    if end - start <= leaf_capacity {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return id;
    }

    // Split along the widest axis of this subset.
    let mut lo = points[order[start] as usize];
    let mut hi = lo;
    for &pi in &order[start + 1..end] {
        let p = points[pi as usize];
        for a in 0..D {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..D)
        .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
        .unwrap();

    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a as usize][axis]
            .partial_cmp(&points[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let value = points[order[mid] as usize][axis];

    nodes.push(Node::Split {
        axis: axis as u8,
        value,
        right: 0, // patched below
    });
    let left = build_node(points, order, start, mid, leaf_capacity, nodes);
    debug_assert_eq!(left, id + 1);
    let right = build_node(points, order, mid, end, leaf_capacity, nodes);
    if let Node::Split { right: r, .. } = &mut nodes[id as usize] {
        *r = right;
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{SVector, Vector2, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: full distance sort with the same tie rule.
    fn brute_knn<const D: usize>(
        points: &[SVector<f64, D>],
        x: &SVector<f64, D>,
        k: usize,
    ) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - x).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn random_points_3d(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect()
    }

    #[test]
    fn singleton_cloud() {
        let index = NeighborIndex::build_from_points(vec![Vector2::new(1.0, 2.0)], 16).unwrap();
        assert_eq!(index.nn(&Vector2::new(100.0, -7.0)).unwrap(), 0);
        let (idx, d2) = index.knn(&Vector2::new(1.0, 2.0), 1).unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(d2, vec![0.0]);
    }

    #[test]
    fn empty_cloud_rejected() {
        let r = NeighborIndex::<2>::build_from_points(vec![], 16);
        assert!(matches!(r, Err(Error::EmptyCloud)));
    }

    #[test]
    fn k_out_of_range() {
        let index = NeighborIndex::build_from_points(vec![Vector2::new(0.0, 0.0)], 16).unwrap();
        assert!(index.knn(&Vector2::new(0.0, 0.0), 0).is_err());
        assert!(index.knn(&Vector2::new(0.0, 0.0), 2).is_err());
    }

    #[test]
    fn non_finite_query_rejected() {
        let index = NeighborIndex::build_from_points(vec![Vector2::new(0.0, 0.0)], 16).unwrap();
        assert!(index.knn(&Vector2::new(f64::NAN, 0.0), 1).is_err());
    }

    #[test]
    fn tie_breaks_by_lowest_index() {
        // Points 2 and 7 equidistant from the query.
        let mut points = vec![Vector2::new(10.0, 10.0); 8];
        points[2] = Vector2::new(1.0, 0.0);
        points[7] = Vector2::new(-1.0, 0.0);
        let index = NeighborIndex::build_from_points(points, 2).unwrap();
        assert_eq!(index.nn(&Vector2::new(0.0, 0.0)).unwrap(), 2);
    }

    #[test]
    fn grid_query_matches_brute_force() {
        let mut points = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                points.push(Vector2::new(i as f64 * 0.1, j as f64 * 0.1));
            }
        }
        let index = NeighborIndex::build_from_points(points.clone(), 4).unwrap();
        let q = Vector2::new(0.0, 0.0);
        let (idx, _) = index.knn(&q, 3).unwrap();
        assert_eq!(idx, brute_knn(&points, &q, 3));
        // Corner point itself first, then its two axis neighbors.
        assert_eq!(idx[0], 0);
    }

    #[test]
    fn exhaustive_k_returns_all_sorted() {
        let points = random_points_3d(50, 3);
        let index = NeighborIndex::build_from_points(points.clone(), 8).unwrap();
        let q = Vector3::new(0.5, 0.5, 0.5);
        let (idx, d2) = index.knn(&q, 50).unwrap();
        assert_eq!(idx.len(), 50);
        assert!(d2.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(idx, brute_knn(&points, &q, 50));
    }

    #[test]
    fn random_queries_match_brute_force() {
        let points = random_points_3d(1000, 11);
        let index = NeighborIndex::build_from_points(points.clone(), 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let q = Vector3::new(
                rng.gen_range(-0.2..1.2),
                rng.gen_range(-0.2..1.2),
                rng.gen_range(-0.2..1.2),
            );
            for k in [1usize, 3, 80] {
                let (idx, _) = index.knn(&q, k).unwrap();
                assert_eq!(idx, brute_knn(&points, &q, k), "k={k} q={q:?}");
            }
        }
    }

    #[test]
    fn duplicate_points_match_brute_force() {
        let mut points = random_points_3d(100, 21);
        let dup = points[17];
        for _ in 0..20 {
            points.push(dup);
        }
        let index = NeighborIndex::build_from_points(points.clone(), 4).unwrap();
        let (idx, _) = index.knn(&dup, 25).unwrap();
        assert_eq!(idx, brute_knn(&points, &dup, 25));
        assert_eq!(idx[0], 17);
    }

    #[test]
    fn repeated_queries_are_deterministic() {
        let points = random_points_3d(500, 5);
        let index = NeighborIndex::build_from_points(points, 16).unwrap();
        let q = Vector3::new(0.3, 0.9, -0.1);
        let a = index.knn(&q, 10).unwrap();
        let b = index.knn(&q, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn large_build_and_query() {
        let points = random_points_3d(1_000_000, 99);
        let index = NeighborIndex::build_from_points(points.clone(), 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..10_000 {
            let q = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            index.knn(&q, 5).unwrap();
        }
        // Spot-check exactness on a few of the queries.
        for s in 0..20 {
            let q = Vector3::new(
                s as f64 / 20.0,
                (s as f64 * 7.0).fract(),
                (s as f64 * 13.0).fract(),
            );
            let (idx, _) = index.knn(&q, 5).unwrap();
            assert_eq!(idx, brute_knn(&points, &q, 5));
        }
    }
}
