//! The preprocess / field / adapt subcommands.

use clap::Args;
use nalgebra::SVector;
use pssmesh::eimls::{EimlsConfig, EimlsField};
use pssmesh::geom::AxisBox;
use pssmesh::isosurface::{
    extract_contour_2d, extract_surface_3d, write_contours_csv, write_contours_vtk,
};
use pssmesh::mesh::{save_mesh, MeshFileData, MeshFormat, SimplicialMesh};
use pssmesh::pointcloud::{
    load_cloud, save_cloud, CloudFormat, LoadedCloud, OrientedPointCloud, ScanOrigins,
};
use pssmesh::remesh::{AdaptationDriver, IterationRecord, LoopOptions};
use pssmesh::{Error, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Args, Clone)]
pub struct PreprocessArgs {
    /// Input cloud (.ply, .xyz).
    pub input: PathBuf,
    /// Output cloud path; a JSON report is written next to it.
    pub output: PathBuf,
    /// Density filter: neighbor rank (distance to the k-th closest point).
    #[arg(long, default_value_t = 3)]
    pub outlier_k: usize,
    /// Density filter: maximum k-th neighbor distance, meters.
    #[arg(long, default_value_t = 0.30)]
    pub outlier_dist: f64,
    /// Grazing filter cutoff in degrees (needs a scan origin).
    #[arg(long, default_value_t = 2.0)]
    pub grazing_deg: f64,
    /// Octree subsampling leaf size, meters.
    #[arg(long, default_value_t = 0.02)]
    pub leaf: f64,
    /// Neighborhood size for normal estimation; 0 keeps file normals.
    #[arg(long, default_value_t = 100)]
    pub normals_k: usize,
    /// Global scanner position for orientation and the grazing filter.
    #[arg(long, num_args = 2..=3, value_name = "COORD")]
    pub scan_origin: Option<Vec<f64>>,
    /// Force 2D interpretation (drop z).
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Args, Clone)]
pub struct FieldArgs {
    /// Input cloud with normals.
    pub input: PathBuf,
    /// Output VTK structured-points file.
    pub output: PathBuf,
    /// Base space parameter, meters.
    #[arg(long)]
    pub h0: f64,
    /// Truncation width, meters.
    #[arg(long)]
    pub epsilon: f64,
    /// Numeric precision exponent.
    #[arg(long, default_value_t = 7.0)]
    pub gamma: f64,
    /// Neighbors per query.
    #[arg(long, default_value_t = 80)]
    pub knn: usize,
    /// Sampling box: x0 y0 [z0] x1 y1 [z1]; default 3x the cloud box.
    #[arg(long, num_args = 4..=6, value_name = "COORD", allow_hyphen_values = true)]
    pub domain: Option<Vec<f64>>,
    /// Samples per axis.
    #[arg(long, default_value_t = 200)]
    pub res: usize,
    /// Sample the fixed-bandwidth baseline; undefined cells become NaN.
    #[arg(long)]
    pub plain_imls: bool,
    /// Force 2D interpretation (drop z).
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Args, Clone)]
pub struct AdaptArgs {
    /// Input cloud with normals (preprocessed).
    pub input: PathBuf,
    /// Output directory.
    pub outdir: PathBuf,
    /// Base space parameter, meters.
    #[arg(long)]
    pub h0: f64,
    /// Truncation width, meters.
    #[arg(long)]
    pub epsilon: f64,
    /// Numeric precision exponent.
    #[arg(long, default_value_t = 7.0)]
    pub gamma: f64,
    /// Neighbors per query.
    #[arg(long, default_value_t = 80)]
    pub knn: usize,
    /// Node budget of the adapted mesh.
    #[arg(long)]
    pub nodes: usize,
    /// Adaptation iterations.
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Computational box: x0 y0 [z0] x1 y1 [z1]; default 3x the cloud box.
    #[arg(long, num_args = 4..=6, value_name = "COORD", allow_hyphen_values = true)]
    pub domain: Option<Vec<f64>>,
    /// Edge length of the initial isotropic mesh; default longest axis / 40.
    #[arg(long)]
    pub init_h: Option<f64>,
    /// Write a numbered mesh VTK per iteration.
    #[arg(long)]
    pub snapshots: bool,
    /// Force 2D interpretation (drop z).
    #[arg(long)]
    pub dim: Option<usize>,
}

pub fn load_dispatch(path: &Path, force_dim: Option<usize>) -> Result<LoadedCloud> {
    let format = CloudFormat::detect(path)?;
    let loaded = load_cloud(path, format)?;
    match (force_dim, loaded) {
        (Some(2), LoadedCloud::Dim3(c)) => Ok(LoadedCloud::Dim2(LoadedCloud::Dim3(c).into_2d()?)),
        (Some(2), c @ LoadedCloud::Dim2(_)) => Ok(c),
        (Some(3), c @ LoadedCloud::Dim3(_)) => Ok(c),
        (Some(3), LoadedCloud::Dim2(_)) => Err(Error::InvalidParameter(
            "input is 2D; cannot force 3D".into(),
        )),
        (Some(d), _) => Err(Error::InvalidParameter(format!("unsupported --dim {d}"))),
        (None, c) => Ok(c),
    }
}

fn parse_domain<const D: usize>(values: &[f64]) -> Result<AxisBox<D>> {
    if values.len() != 2 * D {
        return Err(Error::InvalidParameter(format!(
            "--domain needs {} coordinates in {}D, got {}",
            2 * D,
            D,
            values.len()
        )));
    }
    let min = SVector::<f64, D>::from_iterator(values[..D].iter().copied());
    let max = SVector::<f64, D>::from_iterator(values[D..].iter().copied());
    let domain = AxisBox::new(min, max);
    if domain.is_degenerate() {
        return Err(Error::InvalidParameter("degenerate --domain box".into()));
    }
    Ok(domain)
}

fn default_domain<const D: usize>(cloud: &OrientedPointCloud<D>) -> Result<AxisBox<D>> {
    cloud
        .bounding_box()
        .map(|b| b.scaled(3.0))
        .ok_or(Error::EmptyCloud)
}

// ---------------------------------------------------------------- preprocess

pub fn run_preprocess(args: &PreprocessArgs, json: bool) -> Result<()> {
    validate_preprocess(args)?;
    match load_dispatch(&args.input, args.dim)? {
        LoadedCloud::Dim2(c) => preprocess_cloud::<2>(c, args, json),
        LoadedCloud::Dim3(c) => preprocess_cloud::<3>(c, args, json),
    }
}

fn validate_preprocess(args: &PreprocessArgs) -> Result<()> {
    if args.leaf <= 0.0 {
        return Err(Error::InvalidParameter("--leaf must be positive".into()));
    }
    if args.outlier_dist <= 0.0 {
        return Err(Error::InvalidParameter(
            "--outlier-dist must be positive".into(),
        ));
    }
    if args.outlier_k == 0 {
        return Err(Error::InvalidParameter("--outlier-k must be >= 1".into()));
    }
    if !(0.0..90.0).contains(&args.grazing_deg) {
        return Err(Error::InvalidParameter(
            "--grazing-deg must be in [0, 90)".into(),
        ));
    }
    Ok(())
}

fn preprocess_cloud<const D: usize>(
    mut cloud: OrientedPointCloud<D>,
    args: &PreprocessArgs,
    json: bool,
) -> Result<()> {
    if let Some(coords) = &args.scan_origin {
        if coords.len() != D {
            return Err(Error::InvalidParameter(format!(
                "--scan-origin needs {D} coordinates, got {}",
                coords.len()
            )));
        }
        cloud.scan_origins =
            ScanOrigins::Global(SVector::from_iterator(coords.iter().copied()));
    }
    let input_points = cloud.len();
    let mut stages = Vec::new();

    let (after_density, removed) =
        cloud.remove_outliers_density(args.outlier_k, args.outlier_dist)?;
    stages.push(("density_outliers", removed));
    cloud = after_density;

    let before = cloud.len();
    cloud = cloud.subsample_octree(args.leaf)?;
    stages.push(("octree_subsample", before - cloud.len()));

    if args.normals_k > 0 {
        cloud = cloud.estimate_normals(args.normals_k)?;
        stages.push(("normal_estimation", 0));
    } else if !cloud.has_normals() {
        return Err(Error::MissingNormals);
    }

    if cloud.scan_origins.is_none() {
        stages.push(("grazing_filter_skipped_no_origin", 0));
    } else {
        let (after_grazing, removed) = cloud.remove_grazing(args.grazing_deg)?;
        stages.push(("grazing_filter", removed));
        cloud = after_grazing;
    }

    cloud.validate()?;
    let format = CloudFormat::detect_for_write(&args.output);
    save_cloud(&cloud, &args.output, format)?;

    let report = serde_json::json!({
        "input": args.input.display().to_string(),
        "output": args.output.display().to_string(),
        "dim": D,
        "input_points": input_points,
        "output_points": cloud.len(),
        "stages": stages
            .iter()
            .map(|(name, removed)| serde_json::json!({"stage": name, "removed": removed}))
            .collect::<Vec<_>>(),
    });
    let report_path = args.output.with_extension("report.json");
    let mut f = std::fs::File::create(&report_path)?;
    f.write_all(serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
    if json {
        println!("{report}");
    } else {
        println!(
            "{} -> {} points ({} stages), wrote {} and {}",
            input_points,
            cloud.len(),
            stages.len(),
            args.output.display(),
            report_path.display()
        );
    }
    Ok(())
}

trait DetectForWrite {
    fn detect_for_write(path: &Path) -> CloudFormat;
}

impl DetectForWrite for CloudFormat {
    fn detect_for_write(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyz") | Some("txt") | Some("xyzn") => CloudFormat::Xyz,
            _ => CloudFormat::PlyBinaryLe,
        }
    }
}

// --------------------------------------------------------------------- field

pub fn run_field(args: &FieldArgs, json: bool) -> Result<()> {
    match load_dispatch(&args.input, args.dim)? {
        LoadedCloud::Dim2(c) => field_on_cloud::<2>(c, args, json),
        LoadedCloud::Dim3(c) => field_on_cloud::<3>(c, args, json),
    }
}

fn eimls_config(h0: f64, epsilon: f64, gamma: f64, knn: usize, n_points: usize) -> EimlsConfig {
    let mut config = EimlsConfig::new(h0, epsilon);
    config.gamma = gamma;
    config.k = knn.min(n_points.max(1));
    config
}

fn field_on_cloud<const D: usize>(
    cloud: OrientedPointCloud<D>,
    args: &FieldArgs,
    json: bool,
) -> Result<()> {
    if args.res < 2 {
        return Err(Error::InvalidParameter("--res must be at least 2".into()));
    }
    let domain = match &args.domain {
        Some(values) => parse_domain::<D>(values)?,
        None => default_domain(&cloud)?,
    };
    let config = eimls_config(args.h0, args.epsilon, args.gamma, args.knn, cloud.len());
    let field = EimlsField::new(cloud, config)?;
    let resolution = [args.res; D];
    let grid = if args.plain_imls {
        field.sample_plain_on_grid(&domain, resolution, args.h0)?
    } else {
        field.sample_on_grid(&domain, resolution, true)?
    };
    let name = if args.plain_imls { "imls" } else { "alpha_eps" };
    grid.write_vtk(&args.output, name)?;

    let finite: Vec<f64> = grid.values.iter().copied().filter(|v| v.is_finite()).collect();
    let stats = serde_json::json!({
        "output": args.output.display().to_string(),
        "dim": D,
        "cells": grid.values.len(),
        "nan_fraction": grid.nan_fraction(),
        "min": finite.iter().copied().fold(f64::INFINITY, f64::min),
        "max": finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    if json {
        println!("{stats}");
    } else {
        println!(
            "sampled {} cells (nan fraction {:.4}) into {}",
            grid.values.len(),
            grid.nan_fraction(),
            args.output.display()
        );
    }
    Ok(())
}

// --------------------------------------------------------------------- adapt

pub fn run_adapt(args: &AdaptArgs, json: bool) -> Result<()> {
    match load_dispatch(&args.input, args.dim)? {
        LoadedCloud::Dim2(c) => adapt_cloud::<2>(c, args, json),
        LoadedCloud::Dim3(c) => adapt_cloud::<3>(c, args, json),
    }
}

fn write_stats_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "iteration,nodes,elements,metric_len_min,metric_len_median,metric_len_max,zero_level_measure"
    )?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.nodes,
            r.elements,
            r.metric_len_min,
            r.metric_len_median,
            r.metric_len_max,
            r.zero_level_measure
        )?;
    }
    f.flush()?;
    Ok(())
}

fn snapshot_path(outdir: &Path, iteration: usize) -> PathBuf {
    outdir.join(format!("iter_{iteration:03}.vtk"))
}

fn adapt_cloud<const D: usize>(
    cloud: OrientedPointCloud<D>,
    args: &AdaptArgs,
    json: bool,
) -> Result<()> {
    let domain = match &args.domain {
        Some(values) => parse_domain::<D>(values)?,
        None => default_domain(&cloud)?,
    };
    std::fs::create_dir_all(&args.outdir)?;
    let config = eimls_config(args.h0, args.epsilon, args.gamma, args.knn, cloud.len());
    let field = EimlsField::new(cloud, config)?;
    let mut options = LoopOptions::new(args.nodes, args.iters);
    options.init_h = args.init_h;

    let mut driver = AdaptationDriver::new(&field, &domain, &options)?;
    if args.snapshots {
        write_mesh_outputs(driver.mesh(), driver.alpha(), None, &snapshot_path(&args.outdir, 0))?;
    }
    for it in 1..=args.iters {
        driver.step()?;
        if args.snapshots {
            write_mesh_outputs(
                driver.mesh(),
                driver.alpha(),
                None,
                &snapshot_path(&args.outdir, it),
            )?;
        }
    }
    let result = driver.finish();

    write_stats_csv(&args.outdir.join("stats.csv"), &result.records)?;
    let data = MeshFileData {
        mesh: result.mesh,
        fields: vec![result.field],
        tensors: Some(result.metric.tensors.clone()),
    };
    save_mesh(&data, args.outdir.join("final.vtk"), MeshFormat::VtkLegacyAscii)?;
    save_mesh(&data, args.outdir.join("final.json"), MeshFormat::NativeJson)?;

    // Zero level set extraction, dimension-dependent.
    let mesh_any = &data.mesh as &dyn std::any::Any;
    let field_ref = &data.fields[0];
    let mut contour_summary = serde_json::json!(null);
    if let Some(m2) = mesh_any.downcast_ref::<SimplicialMesh<2>>() {
        let contours = extract_contour_2d(m2, field_ref)?;
        write_contours_csv(&contours, args.outdir.join("contour.csv"))?;
        write_contours_vtk(&contours, args.outdir.join("contour.vtk"))?;
        contour_summary = serde_json::json!({
            "polylines": contours.len(),
            "closed": contours.iter().filter(|c| c.closed).count(),
            "total_length": contours.iter().map(|c| c.length()).sum::<f64>(),
        });
    } else if let Some(m3) = mesh_any.downcast_ref::<SimplicialMesh<3>>() {
        let surface = extract_surface_3d(m3, field_ref)?;
        surface.write_ply(args.outdir.join("surface.ply"))?;
        surface.write_vtk(args.outdir.join("surface.vtk"))?;
        contour_summary = serde_json::json!({
            "vertices": surface.vertices.len(),
            "triangles": surface.triangles.len(),
            "closed": surface.is_closed(),
            "area": surface.area(),
        });
    }

    let last = result.records.last().expect("records never empty");
    let stats = serde_json::json!({
        "outdir": args.outdir.display().to_string(),
        "dim": D,
        "iterations": args.iters,
        "nodes": last.nodes,
        "elements": last.elements,
        "metric_len_median": last.metric_len_median,
        "zero_level_measure": last.zero_level_measure,
        "zero_level": contour_summary,
    });
    if json {
        println!("{stats}");
    } else {
        println!(
            "adapted to {} nodes / {} elements in {} iterations; outputs in {}",
            last.nodes,
            last.elements,
            args.iters,
            args.outdir.display()
        );
    }
    Ok(())
}

fn write_mesh_outputs<const D: usize>(
    mesh: &SimplicialMesh<D>,
    alpha: &pssmesh::mesh::NodalField,
    tensors: Option<&[nalgebra::SMatrix<f64, D, D>]>,
    path: &Path,
) -> Result<()> {
    let data = MeshFileData {
        mesh: mesh.clone(),
        fields: vec![alpha.clone()],
        tensors: tensors.map(|t| t.to_vec()),
    };
    save_mesh(&data, path, MeshFormat::VtkLegacyAscii)
}
