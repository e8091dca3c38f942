//! Procedurally generated reference clouds used by tests, benchmarks and the
//! documentation examples: circles, spheres, planes and a 557-point closed
//! 2D silhouette with the footprint of a small scanned object (about 15 cm).

use crate::pointcloud::OrientedPointCloud;
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Circle of radius `radius` sampled at `n` equally spaced angles with
/// outward normals. `noise_frac` perturbs each radius uniformly by up to
/// `noise_frac * radius`.
pub fn circle_cloud(n: usize, radius: f64, noise_frac: f64, seed: u64) -> OrientedPointCloud<2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        let dir = Vector2::new(theta.cos(), theta.sin());
        let r = radius * (1.0 + noise_frac * rng.gen_range(-1.0..1.0));
        points.push(dir * r);
        normals.push(dir);
    }
    OrientedPointCloud::with_normals(points, normals)
}

/// Circle cloud with an arc of `gap_frac` of the circumference removed,
/// starting at angle `gap_start_frac * 2pi`. Used for hole-filling tests.
pub fn circle_cloud_with_gap(
    n: usize,
    radius: f64,
    noise_frac: f64,
    seed: u64,
    gap_start_frac: f64,
    gap_frac: f64,
) -> OrientedPointCloud<2> {
    let full = circle_cloud(n, radius, noise_frac, seed);
    let start = (gap_start_frac.rem_euclid(1.0) * n as f64).round() as usize;
    let end = start + (gap_frac * n as f64).round() as usize;
    let keep: Vec<usize> = (0..n).filter(|&i| !(i >= start && i < end)).collect();
    let points = keep.iter().map(|&i| full.points[i]).collect();
    let normals = keep
        .iter()
        .map(|&i| full.normals.as_ref().unwrap()[i])
        .collect();
    OrientedPointCloud::with_normals(points, normals)
}

/// Sphere of radius `radius` sampled at `n` Fibonacci-lattice points with
/// outward normals and uniform radial noise of `noise_frac * radius`.
pub fn sphere_cloud(n: usize, radius: f64, noise_frac: f64, seed: u64) -> OrientedPointCloud<3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let s = (1.0 - z * z).sqrt();
        let theta = golden * i as f64;
        let dir = Vector3::new(s * theta.cos(), s * theta.sin(), z);
        let r = radius * (1.0 + noise_frac * rng.gen_range(-1.0..1.0));
        points.push(dir * r);
        normals.push(dir);
    }
    OrientedPointCloud::with_normals(points, normals)
}

/// `n` random points on the plane z = 0 over `[0, extent]^2` with +z normals.
pub fn plane_cloud(n: usize, extent: f64, seed: u64) -> OrientedPointCloud<3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            Vector3::new(
                rng.gen_range(0.0..extent),
                rng.gen_range(0.0..extent),
                0.0,
            )
        })
        .collect();
    let normals = vec![Vector3::new(0.0, 0.0, 1.0); n];
    OrientedPointCloud::with_normals(points, normals)
}

/// Number of points in [`slice_cloud`].
pub const SLICE_POINTS: usize = 557;

/// A closed 2D silhouette sampled at 557 points with exact outward normals.
///
/// The outline is a smooth polar curve with a few lobes (head and body
/// bumps), roughly 15 cm across, standing in for a planar slice of a small
/// scanned object. Coordinates are in meters.
pub fn slice_cloud() -> OrientedPointCloud<2> {
    let n = SLICE_POINTS;
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        let (r, dr) = silhouette_radius(theta);
        let u = Vector2::new(theta.cos(), theta.sin());
        let u_perp = Vector2::new(-theta.sin(), theta.cos());
        points.push(u * r);
        // Tangent of the polar curve, rotated -90 degrees for the outward side.
        let tangent = u * dr + u_perp * r;
        let normal = Vector2::new(tangent.y, -tangent.x).normalize();
        normals.push(normal);
    }
    OrientedPointCloud::with_normals(points, normals)
}

/// Polar radius of the silhouette and its derivative with respect to theta.
fn silhouette_radius(theta: f64) -> (f64, f64) {
    let base = 0.055;
    let modes = [
        (1.0, 0.28, 1.2),
        (2.0, 0.12, -0.5),
        (3.0, 0.08, 0.3),
        (5.0, 0.05, 0.0),
    ];
    let mut r = 1.0;
    let mut dr = 0.0;
    for (m, a, phase) in modes {
        r += a * (m * theta - phase).cos();
        dr -= a * m * (m * theta - phase).sin();
    }
    (base * r, base * dr)
}

/// Signed distance from `x` to the silhouette boundary, negative inside.
/// Exact up to the dense polygonal approximation used for the distance term.
pub fn slice_signed_distance(x: &Vector2<f64>) -> f64 {
    // Dense polygon of the exact curve.
    let m = 4096;
    let mut best = f64::INFINITY;
    let mut prev = {
        let (r, _) = silhouette_radius(0.0);
        Vector2::new(r, 0.0)
    };
    for i in 1..=m {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
        let (r, _) = silhouette_radius(theta);
        let cur = Vector2::new(r * theta.cos(), r * theta.sin());
        best = best.min(dist_to_segment(x, &prev, &cur));
        prev = cur;
    }
    // Inside test in polar form: the curve is star-shaped about the origin.
    let theta = x.y.atan2(x.x);
    let (r, _) = silhouette_radius(theta);
    let sign = if x.norm() < r { -1.0 } else { 1.0 };
    sign * best
}

fn dist_to_segment(x: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let t = ((x - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (x - (a + ab * t)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_points_and_normals() {
        let c = circle_cloud(512, 0.5, 0.01, 1);
        assert_eq!(c.len(), 512);
        c.validate().unwrap();
        for (p, n) in c.points.iter().zip(c.normals.as_ref().unwrap()) {
            assert!((p.norm() - 0.5).abs() <= 0.005 + 1e-12);
            assert!(n.dot(&p.normalize()) > 0.99);
        }
    }

    #[test]
    fn circle_gap_removes_expected_fraction() {
        let c = circle_cloud_with_gap(500, 0.5, 0.0, 1, 0.1, 0.2);
        assert_eq!(c.len(), 400);
        c.validate().unwrap();
    }

    #[test]
    fn sphere_cloud_is_valid() {
        let c = sphere_cloud(2000, 0.5, 0.0, 1);
        assert_eq!(c.len(), 2000);
        c.validate().unwrap();
        for p in &c.points {
            assert!((p.norm() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_has_557_points_and_object_scale() {
        let c = slice_cloud();
        assert_eq!(c.len(), SLICE_POINTS);
        c.validate().unwrap();
        let bbox = c.bounding_box().unwrap();
        let extent = bbox.extent();
        assert!(extent.max() > 0.1 && extent.max() < 0.25, "{extent:?}");
    }

    #[test]
    fn slice_normals_are_outward() {
        let c = slice_cloud();
        for (p, n) in c.points.iter().zip(c.normals.as_ref().unwrap()) {
            // Walking outward along the normal leaves the shape.
            let outside = p + n * 1e-4;
            let inside = p - n * 1e-4;
            assert!(slice_signed_distance(&outside) > 0.0);
            assert!(slice_signed_distance(&inside) < 0.0);
        }
    }

    #[test]
    fn slice_signed_distance_sign() {
        assert!(slice_signed_distance(&Vector2::new(0.0, 0.0)) < 0.0);
        assert!(slice_signed_distance(&Vector2::new(1.0, 1.0)) > 0.0);
    }
}
