//! Oriented point clouds and the preprocessing passes that make a raw scan
//! usable as an implicit surface definition: density-based outlier removal,
//! grazing-angle filtering, uniform subsampling and PCA normal estimation.
//!
//! All passes are pure: they take a cloud and return a new one. Filters never
//! mutate surviving point coordinates and preserve point order.

mod io;

pub use io::{load_cloud, save_cloud, CloudFormat, LoadedCloud};

use crate::geom::AxisBox;
use crate::spatial::NeighborIndex;
use crate::{Error, Result};
use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use std::collections::HashMap;

/// Scanner position metadata used by the grazing-angle filter and for
/// orienting estimated normals.
#[derive(Debug, Clone, PartialEq)]
pub enum ScanOrigins<const D: usize> {
    None,
    /// One origin for the whole cloud (single-station scan).
    Global(SVector<f64, D>),
    /// One origin per point (mobile mapping).
    PerPoint(Vec<SVector<f64, D>>),
}

impl<const D: usize> ScanOrigins<D> {
    pub fn is_none(&self) -> bool {
        matches!(self, ScanOrigins::None)
    }

    pub fn get(&self, index: usize) -> Option<SVector<f64, D>> {
        match self {
            ScanOrigins::None => None,
            ScanOrigins::Global(o) => Some(*o),
            ScanOrigins::PerPoint(os) => os.get(index).copied(),
        }
    }

    fn filter(&self, keep: &[bool]) -> Self {
        match self {
            ScanOrigins::PerPoint(os) => ScanOrigins::PerPoint(
                os.iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .map(|(o, _)| *o)
                    .collect(),
            ),
            other => other.clone(),
        }
    }
}

/// A point set with optional unit normals: the geometric input of the whole
/// pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPointCloud<const D: usize> {
    pub points: Vec<SVector<f64, D>>,
    pub normals: Option<Vec<SVector<f64, D>>>,
    pub scan_origins: ScanOrigins<D>,
    /// True when normal signs are consistent with the scanned surface
    /// (flipped towards the scanner or supplied by the acquisition).
    pub normals_oriented: bool,
}

impl<const D: usize> OrientedPointCloud<D> {
    pub fn new(points: Vec<SVector<f64, D>>) -> Self {
        Self {
            points,
            normals: None,
            scan_origins: ScanOrigins::None,
            normals_oriented: false,
        }
    }

    pub fn with_normals(points: Vec<SVector<f64, D>>, normals: Vec<SVector<f64, D>>) -> Self {
        Self {
            points,
            normals: Some(normals),
            scan_origins: ScanOrigins::None,
            normals_oriented: true,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Smallest axis-aligned box containing the cloud; `None` when empty.
    pub fn bounding_box(&self) -> Option<AxisBox<D>> {
        AxisBox::from_points(&self.points)
    }

    /// Check the type invariants: finite coordinates, unit normals, matching
    /// lengths, origins consistent with the point count.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} normals for {} points",
                    normals.len(),
                    self.points.len()
                )));
            }
            for (i, n) in normals.iter().enumerate() {
                if (n.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "normal {i} has norm {} (expected 1)",
                        n.norm()
                    )));
                }
            }
        }
        if let ScanOrigins::PerPoint(os) = &self.scan_origins {
            if os.len() != self.points.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} scan origins for {} points",
                    os.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    fn filtered(&self, keep: &[bool]) -> Self {
        debug_assert_eq!(keep.len(), self.points.len());
        let points = self
            .points
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(p, _)| *p)
            .collect();
        let normals = self.normals.as_ref().map(|ns| {
            ns.iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(n, _)| *n)
                .collect()
        });
        Self {
            points,
            normals,
            scan_origins: self.scan_origins.filter(keep),
            normals_oriented: self.normals_oriented,
        }
    }

    /// Remove low-density outliers: a point survives iff the distance to its
    /// `k`-th nearest neighbor (among survivors) is at most `max_dist`.
    ///
    /// Removal is iterated to a fixed point so the post-condition holds on
    /// the output cloud itself; on real scans this converges in one or two
    /// passes. Returns the filtered cloud and the number of removed points.
    pub fn remove_outliers_density(&self, k: usize, max_dist: f64) -> Result<(Self, usize)> {
        if max_dist <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "max_dist must be positive, got {max_dist}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidParameter("neighbor rank k must be >= 1".into()));
        }
        if k >= self.points.len() {
            return Err(Error::InvalidParameter(format!(
                "neighbor rank k={} requires more than k points, cloud has {}",
                k,
                self.points.len()
            )));
        }

        let max_d2 = max_dist * max_dist;
        // Indices into the original cloud that are still alive.
        let mut alive: Vec<usize> = (0..self.points.len()).collect();
        loop {
            if alive.len() <= k {
                // No survivor can have k neighbors at all.
                alive.clear();
                break;
            }
            let positions: Vec<SVector<f64, D>> =
                alive.iter().map(|&i| self.points[i]).collect();
            let index = NeighborIndex::build_from_points(positions, 16)?;
            let verdicts: Vec<bool> = (0..alive.len())
                .into_par_iter()
                .map(|local| {
                    let (idx, d2) = index
                        .knn(index.point(local), k + 1)
                        .expect("k+1 <= point count");
                    // Drop self from the result; with coincident points the
                    // query point may not be reported, in which case the k
                    // nearest others are the first k entries.
                    let kth = match idx.iter().position(|&j| j == local) {
                        Some(pos) => {
                            let mut dists: Vec<f64> = d2.clone();
                            dists.remove(pos);
                            dists[k - 1]
                        }
                        None => d2[k - 1],
                    };
                    kth <= max_d2
                })
                .collect();
            if verdicts.iter().all(|&v| v) {
                break;
            }
            alive = alive
                .iter()
                .zip(&verdicts)
                .filter(|(_, &v)| v)
                .map(|(&i, _)| i)
                .collect();
        }

        let mut keep = vec![false; self.points.len()];
        for &i in &alive {
            keep[i] = true;
        }
        let removed = self.points.len() - alive.len();
        Ok((self.filtered(&keep), removed))
    }

    /// Remove points seen under a grazing incidence: a point survives iff the
    /// ray towards its scan origin makes an angle of at least `min_angle_deg`
    /// with the local tangent plane. The test is symmetric in the normal sign
    /// since orientation may not be fixed yet.
    pub fn remove_grazing(&self, min_angle_deg: f64) -> Result<(Self, usize)> {
        let normals = self.normals.as_ref().ok_or(Error::MissingNormals)?;
        if self.scan_origins.is_none() {
            return Err(Error::MissingScanOrigins);
        }
        if !(0.0..90.0).contains(&min_angle_deg) {
            return Err(Error::InvalidParameter(format!(
                "grazing angle must be in [0, 90) degrees, got {min_angle_deg}"
            )));
        }
        let sin_min = min_angle_deg.to_radians().sin();
        let keep: Vec<bool> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let origin = self.scan_origins.get(i).expect("origin per point");
                let to_origin = origin - p;
                let dist = to_origin.norm();
                if dist == 0.0 {
                    return true; // point at the scanner: incidence undefined, keep
                }
                let cos_to_normal = normals[i].dot(&to_origin) / dist;
                cos_to_normal.abs() >= sin_min
            })
            .collect();
        let removed = keep.iter().filter(|&&k| !k).count();
        Ok((self.filtered(&keep), removed))
    }

    /// Uniform spatial subsampling: keep at most one point per occupied cell
    /// of a grid whose cells have edge at most `leaf_size`. The kept point is
    /// the input point nearest the cell centroid, so coordinates and normals
    /// stay measured values rather than averages.
    pub fn subsample_octree(&self, leaf_size: f64) -> Result<Self> {
        if leaf_size <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "leaf_size must be positive, got {leaf_size}"
            )));
        }
        let Some(bbox) = self.bounding_box() else {
            return Ok(self.clone());
        };
        let extent = bbox.extent().max().max(0.0);
        // Depth of the subdivision: smallest power of two giving cells no
        // wider than the requested leaf size.
        let mut cells: u64 = 1;
        while extent / cells as f64 > leaf_size && cells < (1 << 30) {
            cells *= 2;
        }
        let edge = extent / cells as f64;

        let cell_of = |p: &SVector<f64, D>| -> [u32; D] {
            let mut c = [0u32; D];
            for a in 0..D {
                let t = if edge > 0.0 {
                    ((p[a] - bbox.min[a]) / edge).floor()
                } else {
                    0.0
                };
                c[a] = (t.max(0.0) as u64).min(cells - 1) as u32;
            }
            c
        };

        // Per occupied cell: (distance to centroid, original index) of the best
        // representative so far; ties go to the lowest index.
        let mut best: HashMap<[u32; D], (f64, usize)> = HashMap::new();
        for (i, p) in self.points.iter().enumerate() {
            let cell = cell_of(p);
            let mut centroid = bbox.min;
            for a in 0..D {
                centroid[a] += (cell[a] as f64 + 0.5) * edge;
            }
            let d2 = (p - centroid).norm_squared();
            match best.get_mut(&cell) {
                Some(entry) => {
                    if d2 < entry.0 {
                        *entry = (d2, i);
                    }
                }
                None => {
                    best.insert(cell, (d2, i));
                }
            }
        }

        let mut keep = vec![false; self.points.len()];
        for (_, i) in best.values() {
            keep[*i] = true;
        }
        Ok(self.filtered(&keep))
    }

    /// Estimate a unit normal at every point as the eigenvector of the
    /// smallest eigenvalue of the covariance of its `k` nearest neighbors.
    /// When scan origins are available the sign is flipped towards the
    /// scanner and the cloud is flagged oriented.
    pub fn estimate_normals(&self, k: usize) -> Result<Self> {
        if k < D + 1 {
            return Err(Error::InvalidParameter(format!(
                "normal estimation needs k >= {} in {}D, got {}",
                D + 1,
                D,
                k
            )));
        }
        if self.points.len() < k {
            return Err(Error::InvalidParameter(format!(
                "normal estimation with k={} needs at least k points, cloud has {}",
                k,
                self.points.len()
            )));
        }
        let index = NeighborIndex::build(self)?;
        let results: Vec<Result<SVector<f64, D>>> = self
            .points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let (idx, _) = index.knn(p, k)?;
                let mut mean = SVector::<f64, D>::zeros();
                for &j in &idx {
                    mean += self.points[j];
                }
                mean /= k as f64;
                let mut cov = SMatrix::<f64, D, D>::zeros();
                for &j in &idx {
                    let q = self.points[j] - mean;
                    cov += q * q.transpose();
                }
                if cov.trace() <= 0.0 {
                    return Err(Error::DegenerateNeighborhood { index: i });
                }
                let eigen = crate::linalg::sym_eigen(&cov);
                let smallest = eigen.values.imin();
                let mut n: SVector<f64, D> = eigen.vectors.column(smallest).into_owned();
                n.normalize_mut();
                if let Some(origin) = self.scan_origins.get(i) {
                    if n.dot(&(origin - p)) < 0.0 {
                        n = -n;
                    }
                }
                Ok(n)
            })
            .collect();

        let mut normals = Vec::with_capacity(self.points.len());
        for r in results {
            normals.push(r?);
        }
        Ok(Self {
            points: self.points.clone(),
            normals: Some(normals),
            scan_origins: self.scan_origins.clone(),
            normals_oriented: !self.scan_origins.is_none(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn unit_square_grid(n: usize) -> OrientedPointCloud<2> {
        let mut points = Vec::new();
        for i in 0..n {
            for j in 0..n {
                points.push(Vector2::new(
                    i as f64 / (n - 1) as f64,
                    j as f64 / (n - 1) as f64,
                ));
            }
        }
        OrientedPointCloud::new(points)
    }

    #[test]
    fn outlier_removal_keeps_dense_grid() {
        let cloud = unit_square_grid(10); // spacing ~0.111
        let (out, removed) = cloud.remove_outliers_density(3, 0.30).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(out.len(), cloud.len());
    }

    #[test]
    fn outlier_removal_drops_lone_point() {
        // 100-point unit-square grid plus one far point.
        let mut cloud = unit_square_grid(10);
        cloud.points.push(Vector2::new(10.0, 10.0));
        let (out, removed) = cloud.remove_outliers_density(3, 0.5).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(out.len(), 100);
        assert!(out.points.iter().all(|p| p.x <= 1.0 && p.y <= 1.0));

        // Brute-force oracle: every survivor's 3rd-NN distance is in budget.
        for (i, p) in out.points.iter().enumerate() {
            let mut d: Vec<f64> = out
                .points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm())
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(d[2] <= 0.5);
        }
    }

    #[test]
    fn outlier_removal_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut points: Vec<Vector2<f64>> = (0..400)
            .map(|_| Vector2::new(rng.gen(), rng.gen()))
            .collect();
        for _ in 0..20 {
            points.push(Vector2::new(
                rng.gen_range(5.0..10.0),
                rng.gen_range(5.0..10.0),
            ));
        }
        let cloud = OrientedPointCloud::new(points);
        let (once, _) = cloud.remove_outliers_density(3, 0.2).unwrap();
        let (twice, removed_again) = once.remove_outliers_density(3, 0.2).unwrap();
        assert_eq!(removed_again, 0);
        assert_eq!(once.points, twice.points);
    }

    #[test]
    fn outlier_removal_preserves_order_and_coordinates() {
        let mut cloud = unit_square_grid(10);
        cloud.points.insert(50, Vector2::new(42.0, 42.0));
        let original = cloud.points.clone();
        let (out, _) = cloud.remove_outliers_density(3, 0.5).unwrap();
        let survivors: Vec<_> = original
            .iter()
            .filter(|p| p.x <= 1.0)
            .copied()
            .collect();
        assert_eq!(out.points, survivors);
    }

    #[test]
    fn outlier_removal_rejects_bad_k() {
        let cloud = unit_square_grid(2);
        assert!(cloud.remove_outliers_density(4, 0.5).is_err());
        assert!(cloud.remove_outliers_density(0, 0.5).is_err());
        assert!(cloud.remove_outliers_density(1, -1.0).is_err());
    }

    #[test]
    fn grazing_filter_analytic_plane() {
        // Plane z=0 scanned from (0,0,1): the incidence angle at (x,0,0) is
        // atan2(1, x); with a 2 degree cutoff points beyond 1/tan(2deg) drop.
        let n = 500;
        let points: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::new(50.0 * i as f64 / (n - 1) as f64, 0.0, 0.0))
            .collect();
        let normals = vec![Vector3::new(0.0, 0.0, 1.0); n];
        let mut cloud = OrientedPointCloud::with_normals(points.clone(), normals);
        cloud.scan_origins = ScanOrigins::Global(Vector3::new(0.0, 0.0, 1.0));
        let (out, removed) = cloud.remove_grazing(2.0).unwrap();

        let cutoff = 1.0 / 2.0_f64.to_radians().tan();
        let expected: Vec<Vector3<f64>> = points
            .iter()
            .filter(|p| (1.0_f64).atan2(p.x) >= 2.0_f64.to_radians())
            .copied()
            .collect();
        assert_eq!(out.points, expected);
        assert!(removed > 0);
        assert!(out.points.iter().all(|p| p.x <= cutoff + 1e-9));
    }

    #[test]
    fn grazing_filter_keeps_head_on_point() {
        // Normal pointing exactly at the origin: kept for any cutoff < 90.
        let mut cloud = OrientedPointCloud::with_normals(
            vec![Vector3::new(1.0, 0.0, 0.0)],
            vec![Vector3::new(-1.0, 0.0, 0.0)],
        );
        cloud.scan_origins = ScanOrigins::Global(Vector3::zeros());
        let (out, removed) = cloud.remove_grazing(89.0).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn grazing_filter_symmetric_in_normal_sign() {
        let n = 100;
        let points: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::new(50.0 * i as f64 / (n - 1) as f64, 0.0, 0.0))
            .collect();
        let normals_up = vec![Vector3::new(0.0, 0.0, 1.0); n];
        let normals_down = vec![Vector3::new(0.0, 0.0, -1.0); n];
        let mut up = OrientedPointCloud::with_normals(points.clone(), normals_up);
        up.scan_origins = ScanOrigins::Global(Vector3::new(0.0, 0.0, 1.0));
        let mut down = OrientedPointCloud::with_normals(points, normals_down);
        down.scan_origins = ScanOrigins::Global(Vector3::new(0.0, 0.0, 1.0));
        let (a, _) = up.remove_grazing(2.0).unwrap();
        let (b, _) = down.remove_grazing(2.0).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn grazing_filter_requires_normals_and_origins() {
        let cloud = OrientedPointCloud::<3>::new(vec![Vector3::zeros()]);
        assert!(matches!(
            cloud.remove_grazing(2.0),
            Err(Error::MissingNormals)
        ));
        let cloud =
            OrientedPointCloud::with_normals(vec![Vector3::zeros()], vec![Vector3::z()]);
        assert!(matches!(
            cloud.remove_grazing(2.0),
            Err(Error::MissingScanOrigins)
        ));
    }

    #[test]
    fn subsample_matches_cell_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let points: Vec<Vector2<f64>> = (0..1000)
            .map(|_| Vector2::new(rng.gen(), rng.gen()))
            .collect();
        let cloud = OrientedPointCloud::new(points.clone());
        let out = cloud.subsample_octree(0.25).unwrap();

        // Independent oracle: occupied cells of the uniform hash floor(p/0.25).
        let occupied: HashSet<(i64, i64)> = points
            .iter()
            .map(|p| ((p.x / 0.25).floor() as i64, (p.y / 0.25).floor() as i64))
            .collect();
        assert_eq!(out.len(), occupied.len());
    }

    #[test]
    fn subsample_is_subset_of_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let points: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let cloud = OrientedPointCloud::new(points.clone());
        let out = cloud.subsample_octree(0.2).unwrap();
        let input: HashSet<_> = points.iter().map(|p| format!("{p:?}")).collect();
        for p in &out.points {
            assert!(input.contains(&format!("{p:?}")));
        }
    }

    #[test]
    fn subsample_sparse_cloud_is_identity() {
        // Points further apart than the leaf size: one point per cell.
        let points: Vec<Vector2<f64>> = (0..10)
            .map(|i| Vector2::new(i as f64, 0.5 * i as f64))
            .collect();
        let cloud = OrientedPointCloud::new(points);
        let out = cloud.subsample_octree(0.3).unwrap();
        assert_eq!(out.len(), cloud.len());
        assert_eq!(out.points, cloud.points);
    }

    #[test]
    fn subsample_representative_nearest_centroid() {
        // Three points in one cell: the one nearest the cell centroid wins.
        let points = vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.6, 0.6),
        ];
        let cloud = OrientedPointCloud::new(points);
        let out = cloud.subsample_octree(2.0).unwrap();
        assert_eq!(out.len(), 1);
        // Single cell spanning the bbox, centroid (0.5, 0.5).
        assert_eq!(out.points[0], Vector2::new(0.6, 0.6));
    }

    #[test]
    fn normals_on_plane_are_vertical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vector3<f64>> = (0..200)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), 0.0))
            .collect();
        let cloud = OrientedPointCloud::new(points);
        let out = cloud.estimate_normals(10).unwrap();
        for n in out.normals.as_ref().unwrap() {
            assert!((n.norm() - 1.0).abs() < 1e-9);
            assert!(n.z.abs() > 1.0 - 1e-9, "normal {n:?} not +-z");
        }
        assert!(!out.normals_oriented);
    }

    #[test]
    fn normals_on_sphere_match_radial_direction() {
        // Fibonacci sphere sampling; origin at the center orients outward...
        // inward actually, so compare against the inward radial direction.
        let n = 2000;
        let mut points = Vec::with_capacity(n);
        let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            points.push(Vector3::new(r * th.cos(), r * th.sin(), z));
        }
        let mut cloud = OrientedPointCloud::new(points.clone());
        cloud.scan_origins = ScanOrigins::Global(Vector3::zeros());
        let out = cloud.estimate_normals(20).unwrap();
        assert!(out.normals_oriented);
        let mut total_angle = 0.0;
        for (p, n) in points.iter().zip(out.normals.as_ref().unwrap()) {
            let radial_in = -p.normalize();
            total_angle += n.dot(&radial_in).clamp(-1.0, 1.0).acos();
        }
        let mean_deg = (total_angle / n as f64).to_degrees();
        assert!(mean_deg < 5.0, "mean angular error {mean_deg} deg");
    }

    #[test]
    fn normals_degenerate_neighborhood_is_an_error() {
        let points = vec![Vector2::new(1.0, 1.0); 5];
        let cloud = OrientedPointCloud::new(points);
        match cloud.estimate_normals(4) {
            Err(Error::DegenerateNeighborhood { .. }) => {}
            other => panic!("expected degenerate neighborhood, got {other:?}"),
        }
    }

    #[test]
    fn normals_parameter_validation() {
        let cloud = unit_square_grid(3);
        assert!(cloud.estimate_normals(2).is_err()); // k < d+1
        assert!(cloud.estimate_normals(100).is_err()); // k > point count
    }

    #[test]
    fn validate_catches_bad_normals() {
        let cloud = OrientedPointCloud::with_normals(
            vec![Vector2::new(0.0, 0.0)],
            vec![Vector2::new(0.5, 0.0)],
        );
        assert!(cloud.validate().is_err());
    }
}
