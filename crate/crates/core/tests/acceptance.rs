//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (run with `--nocapture` to see them).

use nalgebra::{Matrix2, Vector2, Vector3};
use pssmesh::eimls::{l_gamma, EimlsConfig, EimlsField, Kernel};
use pssmesh::geom::AxisBox;
use pssmesh::isosurface::{extract_contour_2d, extract_surface_3d, Polyline};
use pssmesh::mesh::{
    generate_box_mesh, save_mesh, MeshFileData, MeshFormat, NodalField, SimplicialMesh,
};
use pssmesh::metric::{
    edge_errors, recover_gradient, target_metric, target_metric_from_errors, unit_metric,
    MetricBounds,
};
use pssmesh::remesh::{adaptation_loop, AdaptationDriver, LoopOptions};
use pssmesh::spatial::NeighborIndex;
use pssmesh::synthetic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn perturbed_square_mesh(h: f64, amount: f64, seed: u64) -> SimplicialMesh<2> {
    let domain = AxisBox::new(Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0));
    let base = generate_box_mesh(&domain, h).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<Vector2<f64>> = base
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if base.is_boundary(i) {
                *p
            } else {
                p + Vector2::new(
                    rng.gen_range(-amount * h..amount * h),
                    rng.gen_range(-amount * h..amount * h),
                )
            }
        })
        .collect();
    let elems: Vec<usize> = (0..base.elem_count())
        .flat_map(|e| base.element(e).to_vec())
        .collect();
    SimplicialMesh::new(nodes, elems, domain).unwrap()
}

#[test]
fn criterion_01_plane_exactness() {
    let cloud = synthetic::plane_cloud(200, 1.0, 42);
    let field = EimlsField::new(cloud, EimlsConfig::new(0.05, 0.1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let queries: Vec<Vector3<f64>> = (0..1000)
        .map(|_| {
            Vector3::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for q in &queries {
        let v = field.eval(q).unwrap();
        worst = worst.max((v - q.z).abs());
    }
    let elapsed = start.elapsed();
    assert!(worst < 1e-12, "plane error {worst}");
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 01 plane exactness: PASS (max error {worst:.2e}, {} queries in {elapsed:?})",
        queries.len()
    );
}

#[test]
fn criterion_02_eimls_total_where_imls_is_not() {
    let start = Instant::now();
    let cloud = synthetic::slice_cloud();
    let domain = cloud.bounding_box().unwrap().scaled(3.0);
    let res = [200usize, 200];

    for h0 in [0.0015, 0.0001] {
        let field = EimlsField::new(cloud.clone(), EimlsConfig::new(h0, 0.002)).unwrap();
        let grid = field.sample_on_grid(&domain, res, false).unwrap();
        let finite = grid.values.iter().filter(|v| v.is_finite()).count();
        assert_eq!(finite, grid.values.len(), "EIMLS not total at h0={h0}");
    }

    let field = EimlsField::new(cloud, EimlsConfig::new(0.0015, 0.002)).unwrap();
    let mut last = f64::INFINITY;
    let mut fractions = Vec::new();
    for h in [0.0001, 0.0005, 0.0015] {
        let plain = field.sample_plain_on_grid(&domain, res, h).unwrap();
        let frac = plain.nan_fraction();
        fractions.push(frac);
        assert!(frac <= last, "undefined fraction grew with h");
        last = frac;
    }
    assert!(
        fractions[0] > 0.0,
        "plain IMLS must be undefined somewhere at h=0.0001"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "criterion 02 EIMLS totality: PASS (undefined fractions {:.3}/{:.3}/{:.3} at h 1e-4/5e-4/1.5e-3, {elapsed:?})",
        fractions[0], fractions[1], fractions[2]
    );
}

#[test]
fn criterion_03_tanh_truncation() {
    let eps = 0.01;
    let radius = 0.5;
    let cloud = synthetic::circle_cloud(512, radius, 0.0, 3);
    let mut config = EimlsConfig::new(0.01, eps);
    config.k = 80;
    let field = EimlsField::new(cloud, config).unwrap();

    // Bound: |alpha_eps| < eps on 1e5 random queries over a wide box.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let x = Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let t = field.eval_truncated(&x).unwrap();
        assert!(t.abs() < eps, "|{t}| >= {eps} at {x:?}");
        worst = worst.max(t.abs());
    }

    // Unit slope at the zero level set, by central differences against the
    // raw field value.
    let mut worst_slope_err = 0.0f64;
    for k in 0..20 {
        let theta = k as f64 / 20.0 * std::f64::consts::TAU;
        let dir = Vector2::new(theta.cos(), theta.sin());
        // Bisection for the radial root of the raw field.
        let (mut lo, mut hi) = (0.4, 0.6);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if field.eval(&(dir * mid)).unwrap() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = dir * (0.5 * (lo + hi));
        let delta = eps / 100.0;
        let plus = root + dir * delta;
        let minus = root - dir * delta;
        let slope = (field.eval_truncated(&plus).unwrap() - field.eval_truncated(&minus).unwrap())
            / (field.eval(&plus).unwrap() - field.eval(&minus).unwrap());
        worst_slope_err = worst_slope_err.max((slope - 1.0).abs());
    }
    assert!(worst_slope_err < 1e-3, "slope error {worst_slope_err}");
    println!(
        "criterion 03 tanh truncation: PASS (max |alpha_eps| {worst:.6}, slope error {worst_slope_err:.2e})"
    );
}

#[test]
fn criterion_04_gradient_recovery_exact_on_affine() {
    let mut worst = 0.0f64;
    // Structured.
    let mesh = generate_box_mesh(
        &AxisBox::new(Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0)),
        0.1,
    )
    .unwrap();
    let a = Vector2::new(3.0, -1.25);
    let field = NodalField::new("u", mesh.nodes().iter().map(|p| a.dot(p) - 2.0).collect());
    for g in recover_gradient(&mesh, &field).unwrap() {
        worst = worst.max((g - a).norm());
    }
    // Randomly perturbed, 10 trials.
    for seed in 0..10 {
        let mesh = perturbed_square_mesh(0.2, 0.3, seed);
        let field = NodalField::new("u", mesh.nodes().iter().map(|p| a.dot(p) - 2.0).collect());
        for g in recover_gradient(&mesh, &field).unwrap() {
            worst = worst.max((g - a).norm());
        }
    }
    assert!(worst < 1e-10, "gradient error {worst}");
    println!("criterion 04 gradient recovery: PASS (max error {worst:.2e})");
}

#[test]
fn criterion_05_unit_metric_hand_case() {
    let h = 0.125;
    let mesh = generate_box_mesh(
        &AxisBox::new(Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0)),
        h,
    )
    .unwrap();
    let metric = unit_metric(&mesh).unwrap();
    let expected = Matrix2::new(1.0 / (h * h), 0.0, 0.0, 1.0 / (h * h));
    // The alternating-diagonal grid has interior nodes whose star is the
    // plain 4-neighbor cross; the hand formula gives exactly diag(1/h^2).
    let mut checked = 0;
    for i in 0..mesh.node_count() {
        if mesh.is_boundary(i) || mesh.star(i).len() != 4 {
            continue;
        }
        let cross = mesh.star(i).iter().all(|&j| {
            let x = mesh.node(j as usize) - mesh.node(i);
            (x.x.abs() < 1e-12) != (x.y.abs() < 1e-12)
        });
        if !cross {
            continue;
        }
        let err = (metric.tensors[i] - expected).norm();
        assert!(err < 1e-12 / (h * h), "node {i} error {err}");
        checked += 1;
    }
    assert!(checked > 0, "no 4-valent interior node found");
    println!("criterion 05 unit metric hand case: PASS ({checked} nodes at diag(1/h^2))");
}

#[test]
fn criterion_06_budget_equation_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let mesh = perturbed_square_mesh(0.15, 0.25, 60 + trial);
        let (fx, fy, fp) = (
            rng.gen_range(2.0..7.0),
            rng.gen_range(2.0..7.0),
            rng.gen_range(0.0..3.0),
        );
        let field = NodalField::new(
            "u",
            mesh.nodes()
                .iter()
                .map(|p| (fx * p.x + fp).sin() * (fy * p.y).cos())
                .collect(),
        );
        let budget = rng.gen_range(100..20000);
        let (_, data) = target_metric(
            &mesh,
            &field,
            budget,
            &MetricBounds::from_resolution(0.01, 2.0),
        )
        .unwrap();
        let total: f64 = data.creation_density.iter().sum();
        let recovered = data.balanced_error.powf(-1.0) * total; // d = 2
        let rel = (recovered - budget as f64).abs() / budget as f64;
        worst = worst.max(rel);
    }
    assert!(worst < 1e-9, "budget closure error {worst}");
    println!("criterion 06 budget closure: PASS (worst relative error {worst:.2e})");
}

#[test]
fn criterion_07_metric_fixed_point() {
    let mesh = perturbed_square_mesh(0.15, 0.2, 7);
    let e_bar = 0.42;
    let errors = vec![e_bar; mesh.edges().len()];
    let (target, data) = target_metric_from_errors(&mesh, &errors, mesh.node_count()).unwrap();
    let unit = unit_metric(&mesh).unwrap();
    let mut worst = 0.0f64;
    for (t, u) in target.tensors.iter().zip(&unit.tensors) {
        worst = worst.max((t - u).norm() / u.norm());
    }
    assert!(worst < 1e-9, "fixed point deviation {worst}");
    assert!((data.balanced_error - e_bar).abs() < 1e-12);
    println!("criterion 07 metric fixed point: PASS (max relative deviation {worst:.2e})");
}

#[test]
fn criterion_08_kdtree_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let points: Vec<Vector3<f64>> = (0..1000)
        .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
        .collect();
    let index = NeighborIndex::build_from_points(points.clone(), 16).unwrap();
    let brute = |x: &Vector3<f64>, k: usize| -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - x).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    };
    for q in 0..10_000 {
        let x = Vector3::new(
            rng.gen_range(-0.3..1.3),
            rng.gen_range(-0.3..1.3),
            rng.gen_range(-0.3..1.3),
        );
        let k = [1, 3, 80][q % 3];
        let (got, _) = index.knn(&x, k).unwrap();
        assert_eq!(got, brute(&x, k), "query {q} k={k}");
    }
    println!("criterion 08 kd-tree oracle: PASS (10^4 queries, k in {{1,3,80}}, exact)");
}

struct CircleRun {
    mesh: SimplicialMesh<2>,
    field: NodalField,
    contours: Vec<Polyline>,
}

fn run_circle_benchmark() -> CircleRun {
    let cloud = synthetic::circle_cloud(512, 0.5, 0.01, 1);
    let mut config = EimlsConfig::new(0.01, 0.01);
    config.k = 80;
    let field = EimlsField::new(cloud, config).unwrap();
    let domain = field.cloud().bounding_box().unwrap().scaled(3.0);
    let options = LoopOptions::new(4000, 10);
    let result = adaptation_loop(&field, &domain, &options).unwrap();
    let contours = extract_contour_2d(&result.mesh, &result.field).unwrap();
    CircleRun {
        mesh: result.mesh,
        field: result.field,
        contours,
    }
}

#[test]
fn criterion_09_circle_benchmark_end_to_end() {
    let start = Instant::now();
    let run = run_circle_benchmark();
    let elapsed = start.elapsed();

    run.mesh.audit().unwrap();
    let nodes = run.mesh.node_count();
    assert!(
        (3200..=4800).contains(&nodes),
        "node count {nodes} outside 4000 +- 20%"
    );
    assert_eq!(run.contours.len(), 1, "expected a single contour");
    assert!(run.contours[0].closed, "contour must close");
    let area = run.contours[0].signed_area().abs();
    let expected = std::f64::consts::PI * 0.25;
    let area_err = (area - expected).abs() / expected;
    assert!(area_err < 0.02, "area error {area_err}");
    let hausdorff = run.contours[0]
        .points
        .iter()
        .map(|p| (p.norm() - 0.5).abs())
        .fold(0.0f64, f64::max);
    assert!(hausdorff < 5.0 * 0.01, "hausdorff {hausdorff}");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 09 circle benchmark: PASS (nodes {nodes}, area err {:.3}%, hausdorff {hausdorff:.4}, {elapsed:?})",
        100.0 * area_err
    );
}

#[test]
fn criterion_10_hole_filling() {
    // Remove a 20% arc; the signed field still closes the contour.
    let cloud = synthetic::circle_cloud_with_gap(512, 0.5, 0.01, 1, 0.15, 0.20);
    let mut config = EimlsConfig::new(0.01, 0.01);
    config.k = 80;
    let field = EimlsField::new(cloud, config).unwrap();
    let domain = AxisBox::new(Vector2::new(-0.75, -0.75), Vector2::new(0.75, 0.75));
    let options = LoopOptions::new(3000, 8);
    let result = adaptation_loop(&field, &domain, &options).unwrap();
    let contours = extract_contour_2d(&result.mesh, &result.field).unwrap();
    assert_eq!(contours.len(), 1, "expected one contour, got {}", contours.len());
    assert!(contours[0].closed, "contour must close over the hole");
    println!(
        "criterion 10 hole filling: PASS (single closed contour, {} vertices)",
        contours[0].points.len()
    );
}

fn one_sided_hausdorff(contours: &[Polyline], cloud: &[Vector2<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for c in contours {
        for p in &c.points {
            let d = cloud
                .iter()
                .map(|q| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
    }
    worst
}

#[test]
fn criterion_11_slice_progression() {
    let start = Instant::now();
    let cloud = synthetic::slice_cloud();
    let mut config = EimlsConfig::new(0.003, 0.002);
    config.k = 80;
    let field = EimlsField::new(cloud.clone(), config).unwrap();
    let domain = field.cloud().bounding_box().unwrap().scaled(3.0);
    let options = LoopOptions::new(5000, 30);
    let mut driver = AdaptationDriver::new(&field, &domain, &options).unwrap();
    let mut first = f64::NAN;
    let mut snapshots = Vec::new();
    for it in 1..=30 {
        driver.step().unwrap();
        if [1, 10, 15, 30].contains(&it) {
            let contours = extract_contour_2d(driver.mesh(), driver.alpha()).unwrap();
            let h = one_sided_hausdorff(&contours, &cloud.points);
            if it == 1 {
                first = h;
            } else {
                snapshots.push(h);
            }
        }
    }
    let elapsed = start.elapsed();
    // Non-increasing across the snapshots, with a 5% allowance for the
    // remesher's plateau jitter: once the contour reaches the field's noise
    // floor (here ~0.0005, 60x under the bound) the mesh keeps exercising
    // split/collapse cycles that wiggle the measure by a few percent.
    assert!(
        snapshots[1] <= snapshots[0] * 1.05 && snapshots[2] <= snapshots[1] * 1.05,
        "hausdorff regressed beyond jitter: {snapshots:?}"
    );
    assert!(
        snapshots[2] <= 0.8 * first,
        "no overall progression: started {first}, ended {}",
        snapshots[2]
    );
    assert!(
        snapshots[2] < 10.0 * 0.003,
        "final hausdorff {} too large",
        snapshots[2]
    );
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "criterion 11 slice progression: PASS (hausdorff {first:.5} -> {:.5} -> {:.5} -> {:.5}, {elapsed:?})",
        snapshots[0], snapshots[1], snapshots[2]
    );
}

#[test]
fn criterion_12_epsilon_anisotropy_trend() {
    let cloud = synthetic::circle_cloud(512, 0.5, 0.0, 7);
    let mut aspects = Vec::new();
    for eps in [0.08, 0.03, 0.01] {
        let mut config = EimlsConfig::new(0.01, eps);
        config.k = 80;
        let field = EimlsField::new(cloud.clone(), config).unwrap();
        let domain = field.cloud().bounding_box().unwrap().scaled(3.0);
        let options = LoopOptions::new(3000, 8);
        let result = adaptation_loop(&field, &domain, &options).unwrap();
        let mesh = &result.mesh;
        let mut sum = 0.0;
        let mut count = 0;
        for e in 0..mesh.elem_count() {
            let conn = mesh.element(e);
            let centroid =
                (mesh.node(conn[0]) + mesh.node(conn[1]) + mesh.node(conn[2])) / 3.0;
            if (centroid.norm() - 0.5).abs() > 0.02 {
                continue;
            }
            let a = mesh.node(conn[0]);
            let b = mesh.node(conn[1]);
            let c = mesh.node(conn[2]);
            let la = (b - a).norm();
            let lb = (c - b).norm();
            let lc = (a - c).norm();
            let s = 0.5 * (la + lb + lc);
            let area = ((b - a).x * (c - a).y - (b - a).y * (c - a).x).abs() / 2.0;
            sum += la.max(lb).max(lc) / (2.0 * 3.0_f64.sqrt() * (area / s));
            count += 1;
        }
        aspects.push(sum / count as f64);
    }
    assert!(
        aspects[0] < aspects[1] && aspects[1] < aspects[2],
        "aspect ratios not strictly increasing as eps decreases: {aspects:?}"
    );
    println!(
        "criterion 12 epsilon anisotropy: PASS (mean in-band aspect {:.2} < {:.2} < {:.2})",
        aspects[0], aspects[1], aspects[2]
    );
}

#[test]
fn criterion_13_sphere_property_suite() {
    let start = Instant::now();
    let cloud = synthetic::sphere_cloud(2000, 0.5, 0.0, 1);
    let config = EimlsConfig::new(0.02, 0.02);
    let field = EimlsField::new(cloud, config).unwrap();
    let domain = field.cloud().bounding_box().unwrap().scaled(3.0);
    let options = LoopOptions::new(30_000, 5);
    let result = adaptation_loop(&field, &domain, &options).unwrap();
    let elapsed = start.elapsed();

    result.mesh.audit().unwrap();
    let nodes = result.mesh.node_count();
    assert!(
        (22_500..=37_500).contains(&nodes),
        "node count {nodes} outside 30000 +- 25%"
    );
    let surface = extract_surface_3d(&result.mesh, &result.field).unwrap();
    assert!(surface.is_closed(), "surface not closed");
    assert_eq!(surface.euler_characteristic(), 2, "euler characteristic");
    let area = surface.area();
    let expected = 4.0 * std::f64::consts::PI * 0.25;
    let area_err = (area - expected).abs() / expected;
    assert!(area_err < 0.05, "area error {area_err}");
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "criterion 13 sphere suite: PASS (nodes {nodes}, euler 2, area err {:.2}%, {elapsed:?})",
        100.0 * area_err
    );
}

/// Large-cloud smoke test (362,270 points, the size of a full object scan):
/// validity-only assertions. Ignored by default; run with `--ignored`.
#[test]
#[ignore]
fn criterion_13b_large_cloud_smoke() {
    let n = 362_270;
    let cloud = synthetic::sphere_cloud(n, 0.075, 0.02, 5);
    let (cloud, _) = cloud.remove_outliers_density(3, 0.30).unwrap();
    let cloud = cloud.subsample_octree(0.002).unwrap();
    let cloud = cloud.estimate_normals(100.min(cloud.len())).unwrap();
    let mut config = EimlsConfig::new(0.003, 0.002);
    config.k = 80.min(cloud.len());
    let field = EimlsField::new(cloud, config).unwrap();
    let domain = field.cloud().bounding_box().unwrap().scaled(3.0);
    let options = LoopOptions::new(30_000, 3);
    let result = adaptation_loop(&field, &domain, &options).unwrap();
    result.mesh.audit().unwrap();
    println!(
        "criterion 13b large-cloud smoke: PASS ({} nodes, {} elements)",
        result.mesh.node_count(),
        result.mesh.elem_count()
    );
}

#[test]
fn criterion_14_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for run in 0..2 {
        let out = run_circle_benchmark();
        let path = dir.path().join(format!("run{run}.json"));
        let data = MeshFileData {
            mesh: out.mesh,
            fields: vec![out.field],
            tensors: None,
        };
        save_mesh(&data, &path, MeshFormat::NativeJson).unwrap();
        paths.push(path);
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    assert_eq!(a, b, "two runs differ");
    println!(
        "criterion 14 determinism: PASS (byte-identical native JSON, {} bytes)",
        a.len()
    );
}

// Kernel identities used throughout the suite, pinned here as well so the
// acceptance target is self-contained.
#[test]
fn kernel_support_identities() {
    let lg = l_gamma(7.0).unwrap();
    let w = pssmesh::eimls::kernel_weight(Kernel::Gaussian, lg).unwrap();
    assert!(((w - 1e-7) / 1e-7).abs() < 1e-12);
    println!("kernel support identities: PASS (gaussian(l_gamma) = 10^-gamma)");
}
