//! Scratch driver for the 3D sphere adaptation benchmark.

use pssmesh::eimls::{EimlsConfig, EimlsField};
use pssmesh::isosurface::extract_surface_3d;
use pssmesh::remesh::{adaptation_loop, LoopOptions};
use pssmesh::synthetic;

fn main() {
    let start = std::time::Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let swaps = args.iter().any(|a| a == "--swaps");
    let cloud = synthetic::sphere_cloud(2000, 0.5, 0.0, 1);
    let config = EimlsConfig::new(0.02, 0.02);
    let field = EimlsField::new(cloud, config).unwrap();
    let domain = field.cloud().bounding_box().unwrap().scaled(3.0);
    let mut options = LoopOptions::new(30000, 5);
    options.adapt.swaps_3d = swaps;
    let result = adaptation_loop(&field, &domain, &options).unwrap();
    for r in &result.records {
        println!(
            "iter {:2}: nodes {:6} elems {:7} len [{:.3} {:.3} {:.3}] area {:.4}",
            r.iteration,
            r.nodes,
            r.elements,
            r.metric_len_min,
            r.metric_len_median,
            r.metric_len_max,
            r.zero_level_measure
        );
    }
    result.mesh.audit().unwrap();
    println!("audit: ok");
    let surface = extract_surface_3d(&result.mesh, &result.field).unwrap();
    let expected = 4.0 * std::f64::consts::PI * 0.25;
    println!(
        "surface: V {} F {} closed {} euler {} area {:.4} (expected {:.4}, err {:.2}%)",
        surface.vertices.len(),
        surface.triangles.len(),
        surface.is_closed(),
        surface.euler_characteristic(),
        surface.area(),
        expected,
        100.0 * (surface.area() - expected).abs() / expected
    );
    println!("elapsed: {:.2?}", start.elapsed());
}
