//! Scratch driver for the circle adaptation benchmark.

use pssmesh::eimls::{EimlsConfig, EimlsField};
use pssmesh::isosurface::extract_contour_2d;
use pssmesh::remesh::{adaptation_loop, LoopOptions};
use pssmesh::synthetic;

fn main() {
    let start = std::time::Instant::now();
    let cloud = synthetic::circle_cloud(512, 0.5, 0.01, 1);
    let config = EimlsConfig::new(0.01, 0.01);
    let field = EimlsField::new(cloud, config).unwrap();
    let domain = field.cloud().bounding_box().unwrap().scaled(3.0);
    let options = LoopOptions::new(4000, 10);
    let result = adaptation_loop(&field, &domain, &options).unwrap();
    for r in &result.records {
        println!(
            "iter {:2}: nodes {:6} elems {:6} len [{:.3} {:.3} {:.3}] zero-level {:.4}",
            r.iteration,
            r.nodes,
            r.elements,
            r.metric_len_min,
            r.metric_len_median,
            r.metric_len_max,
            r.zero_level_measure
        );
    }
    let contours = extract_contour_2d(&result.mesh, &result.field).unwrap();
    println!(
        "contours: {} (closed: {})",
        contours.len(),
        contours.iter().filter(|c| c.closed).count()
    );
    for c in &contours {
        println!(
            "  len {:.4} area {:.4} pts {}",
            c.length(),
            c.signed_area().abs(),
            c.points.len()
        );
    }
    let expected_area = std::f64::consts::PI * 0.25;
    if let Some(main) = contours.iter().max_by(|a, b| {
        a.signed_area()
            .abs()
            .partial_cmp(&b.signed_area().abs())
            .unwrap()
    }) {
        println!(
            "area error: {:.3}%",
            100.0 * (main.signed_area().abs() - expected_area).abs() / expected_area
        );
        let hausdorff = main
            .points
            .iter()
            .map(|p| (p.norm() - 0.5).abs())
            .fold(0.0f64, f64::max);
        println!("contour-to-circle max deviation: {:.5} (5*h0 = 0.05)", hausdorff);
    }
    println!("elapsed: {:.2?}", start.elapsed());
}
