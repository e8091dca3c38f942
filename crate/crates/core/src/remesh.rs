//! Local-operation anisotropic remesher.
//!
//! An existing mesh is modified in place by edge splits, edge collapses,
//! edge flips (2D; 3D face/edge swaps are gated behind an option) and
//! metric-weighted Laplacian smoothing until edge lengths measured in the
//! target metric approach one. Nodal fields and the metric itself are
//! carried through every operation by linear interpolation.
//!
//! Operation ordering is fixed (splits longest-first, collapses
//! shortest-first, then flips, then smoothing; ties broken by node index)
//! so identical inputs produce identical meshes.

use crate::eimls::EimlsField;
use crate::geom::AxisBox;
use crate::isosurface;
use crate::mesh::{generate_box_mesh, NodalField, SimplicialMesh};
use crate::metric::{
    regularize_tensor, target_metric, MetricBounds, MetricField,
};
use crate::{Error, Result};
use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use std::any::Any;

/// Knobs for a single adaptation call.
#[derive(Debug, Clone)]
pub struct AdaptOptions {
    /// Edges longer than this (in metric) are split.
    pub split_threshold: f64,
    /// Edges shorter than this (in metric) are collapsed.
    pub collapse_threshold: f64,
    /// Sweep budget per call.
    pub max_sweeps: usize,
    /// Smoothing passes at the end of each sweep.
    pub smoothing_passes: usize,
    /// Minimum metric quality of elements created by a flip.
    pub flip_quality_floor: f64,
    /// Enable 2-3 / 3-2 swaps in 3D.
    pub swaps_3d: bool,
    /// Stop once this fraction of edges is inside the thresholds.
    pub in_range_target: f64,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            split_threshold: 2.0_f64.sqrt(),
            collapse_threshold: 1.0 / 2.0_f64.sqrt(),
            max_sweeps: 10,
            smoothing_passes: 1,
            flip_quality_floor: 0.05,
            swaps_3d: false,
            in_range_target: 0.9,
        }
    }
}

impl AdaptOptions {
    fn validate(&self) -> Result<()> {
        if !(self.collapse_threshold < 1.0 && 1.0 < self.split_threshold) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must straddle 1: collapse {} split {}",
                self.collapse_threshold, self.split_threshold
            )));
        }
        Ok(())
    }
}

/// Counts of applied operations per sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepStats {
    pub splits: usize,
    pub collapses: usize,
    pub flips: usize,
    pub smoothed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AdaptStats {
    pub sweeps: Vec<SweepStats>,
    /// Fraction of edges inside the thresholds after the last sweep.
    pub in_range_fraction: f64,
}

/// Exact re-evaluation callback for the primary carried field, applied at
/// created and moved nodes when supplied.
pub type FieldRefresh<'a, const D: usize> = &'a (dyn Fn(&SVector<f64, D>) -> f64 + Sync);

/// Metric length of the edge `(i, j)`: the mean of the lengths measured in
/// the two endpoint tensors.
pub fn metric_edge_length<const D: usize>(
    mesh: &SimplicialMesh<D>,
    metric: &MetricField<D>,
    i: usize,
    j: usize,
) -> f64 {
    let x: SVector<f64, D> = mesh.node(j) - mesh.node(i);
    tensor_edge_length(&x, &metric.tensors[i], &metric.tensors[j])
}

fn tensor_edge_length<const D: usize>(
    x: &SVector<f64, D>,
    mi: &SMatrix<f64, D, D>,
    mj: &SMatrix<f64, D, D>,
) -> f64 {
    let li = (x.transpose() * mi * x)[0].max(0.0).sqrt();
    let lj = (x.transpose() * mj * x)[0].max(0.0).sqrt();
    0.5 * (li + lj)
}

/// Working state of the remesher: growable node/element arrays with alive
/// flags and per-node incidence, compacted into a `SimplicialMesh` at the
/// end of the call.
struct WorkMesh<const D: usize> {
    domain: AxisBox<D>,
    nodes: Vec<SVector<f64, D>>,
    node_alive: Vec<bool>,
    tensors: Vec<SMatrix<f64, D, D>>,
    fields: Vec<Vec<f64>>,
    /// Bitmask of domain planes the node is pinned to (2 bits per axis).
    bmask: Vec<u16>,
    elems: Vec<[usize; 4]>,
    elem_alive: Vec<bool>,
    node_elems: Vec<Vec<u32>>,
    min_volume: f64,
    bounds: MetricBounds,
}

impl<const D: usize> WorkMesh<D> {
    fn build(
        mesh: &SimplicialMesh<D>,
        metric: &MetricField<D>,
        fields: &[NodalField],
    ) -> Result<Self> {
        if metric.tensors.len() != mesh.node_count() {
            return Err(Error::InvalidParameter(format!(
                "metric has {} tensors for {} nodes",
                metric.tensors.len(),
                mesh.node_count()
            )));
        }
        for f in fields {
            if f.values.len() != mesh.node_count() {
                return Err(Error::InvalidParameter(format!(
                    "field '{}' has {} values for {} nodes",
                    f.name,
                    f.values.len(),
                    mesh.node_count()
                )));
            }
        }
        let domain = *mesh.domain();
        let mut bmask = Vec::with_capacity(mesh.node_count());
        for p in mesh.nodes() {
            bmask.push(plane_mask(&domain, p));
        }
        let mut elems = Vec::with_capacity(mesh.elem_count());
        let mut node_elems = vec![Vec::new(); mesh.node_count()];
        for e in 0..mesh.elem_count() {
            let conn = mesh.element(e);
            let mut arr = [usize::MAX; 4];
            arr[..D + 1].copy_from_slice(conn);
            elems.push(arr);
            for &v in conn {
                node_elems[v].push(e as u32);
            }
        }
        let domain_volume: f64 = (0..D).map(|a| domain.extent()[a]).product();
        let min_volume = 1e-12 * domain_volume / mesh.elem_count().max(1) as f64;
        Ok(Self {
            domain,
            nodes: mesh.nodes().to_vec(),
            node_alive: vec![true; mesh.node_count()],
            tensors: metric.tensors.clone(),
            fields: fields.iter().map(|f| f.values.clone()).collect(),
            bmask,
            elem_alive: vec![true; elems.len()],
            elems,
            node_elems,
            min_volume,
            bounds: metric.bounds,
        })
    }

    fn conn(&self, e: usize) -> &[usize] {
        &self.elems[e][..D + 1]
    }

    fn volume(&self, e: usize) -> f64 {
        simplex_volume::<D>(&self.nodes, self.conn(e))
    }

    /// Unique alive edges, sorted.
    fn collect_edges(&self) -> Vec<(u32, u32)> {
        let mut edges = Vec::new();
        for e in 0..self.elems.len() {
            if !self.elem_alive[e] {
                continue;
            }
            let conn = self.conn(e);
            for a in 0..D + 1 {
                for b in a + 1..D + 1 {
                    let (i, j) = ordered(conn[a], conn[b]);
                    edges.push((i as u32, j as u32));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    fn edge_length(&self, i: usize, j: usize) -> f64 {
        let x = self.nodes[j] - self.nodes[i];
        tensor_edge_length(&x, &self.tensors[i], &self.tensors[j])
    }

    /// Alive elements containing both endpoints.
    fn elems_of_edge(&self, i: usize, j: usize) -> Vec<u32> {
        let mut out: Vec<u32> = self.node_elems[i]
            .iter()
            .copied()
            .filter(|&e| {
                self.elem_alive[e as usize] && self.conn(e as usize).contains(&j)
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Star of a node recomputed from incidence: connected alive nodes.
    fn node_star(&self, i: usize) -> Vec<usize> {
        let mut star = Vec::new();
        for &e in &self.node_elems[i] {
            if !self.elem_alive[e as usize] {
                continue;
            }
            for &v in self.conn(e as usize) {
                if v != i {
                    star.push(v);
                }
            }
        }
        star.sort_unstable();
        star.dedup();
        star
    }

    fn kill_elem(&mut self, e: usize) {
        self.elem_alive[e] = false;
    }

    fn push_elem(&mut self, conn: [usize; 4]) -> u32 {
        let id = self.elems.len() as u32;
        self.elems.push(conn);
        self.elem_alive.push(true);
        for &v in &conn[..D + 1] {
            self.node_elems[v].push(id);
        }
        id
    }

    /// Drop stale incidence entries of node `i`.
    fn prune_incidence(&mut self, i: usize) {
        let alive = &self.elem_alive;
        let elems = &self.elems;
        self.node_elems[i].retain(|&e| alive[e as usize] && elems[e as usize][..D + 1].contains(&i));
    }

    /// Interpolate the carried fields and tensor at `x` inside the alive
    /// elements around node `i`. Falls back to node `i`'s own values when
    /// `x` escapes the star (it cannot after a successful inversion guard,
    /// but keep the fallback total).
    fn sample_in_star(&self, i: usize, x: &SVector<f64, D>) -> (Vec<f64>, SMatrix<f64, D, D>) {
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for &e in &self.node_elems[i] {
            let e = e as usize;
            if !self.elem_alive[e] {
                continue;
            }
            let lam = barycentric_in::<D>(&self.nodes, self.conn(e), x);
            let min = lam.iter().copied().fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(_, _, m)| min > *m) {
                best = Some((e, lam, min));
            }
            if min >= 0.0 {
                break;
            }
        }
        match best {
            Some((e, lam, min)) if min > -1e-9 => {
                let conn = self.conn(e);
                let values = self
                    .fields
                    .iter()
                    .map(|f| conn.iter().zip(&lam).map(|(&v, &w)| f[v] * w).sum())
                    .collect();
                let mut tensor = SMatrix::<f64, D, D>::zeros();
                for (&v, &w) in conn.iter().zip(&lam) {
                    tensor += self.tensors[v] * w;
                }
                (values, self.regularized(&tensor))
            }
            _ => (
                self.fields.iter().map(|f| f[i]).collect(),
                self.tensors[i],
            ),
        }
    }

    fn regularized(&self, t: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
        let lo = if self.bounds.h_max.is_finite() {
            1.0 / (self.bounds.h_max * self.bounds.h_max)
        } else {
            0.0
        };
        let hi = if self.bounds.h_min > 0.0 {
            1.0 / (self.bounds.h_min * self.bounds.h_min)
        } else {
            f64::INFINITY
        };
        regularize_tensor(t, lo, hi, self.bounds.ratio_max)
    }

    fn compact(
        &self,
        field_names: &[String],
    ) -> Result<(SimplicialMesh<D>, Vec<NodalField>, MetricField<D>)> {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        let mut tensors = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); self.fields.len()];
        for i in 0..self.nodes.len() {
            if self.node_alive[i] {
                remap[i] = nodes.len();
                nodes.push(self.nodes[i]);
                tensors.push(self.tensors[i]);
                for (k, f) in self.fields.iter().enumerate() {
                    values[k].push(f[i]);
                }
            }
        }
        let mut elems = Vec::new();
        for e in 0..self.elems.len() {
            if self.elem_alive[e] {
                for &v in self.conn(e) {
                    debug_assert!(self.node_alive[v]);
                    elems.push(remap[v]);
                }
            }
        }
        let mesh = SimplicialMesh::new(nodes, elems, self.domain)?;
        let fields = field_names
            .iter()
            .zip(values)
            .map(|(name, vals)| NodalField::new(name.clone(), vals))
            .collect();
        let metric = MetricField {
            tensors,
            bounds: self.bounds,
        };
        Ok((mesh, fields, metric))
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn simplex_volume<const D: usize>(nodes: &[SVector<f64, D>], conn: &[usize]) -> f64 {
    let base = nodes[conn[0]];
    let mut m = SMatrix::<f64, D, D>::zeros();
    for c in 0..D {
        m.set_column(c, &(nodes[conn[c + 1]] - base));
    }
    let factorial = if D == 2 { 2.0 } else { 6.0 };
    crate::linalg::determinant(&m) / factorial
}

/// Barycentric weights of `x` in the simplex `conn` (all `D + 1` weights).
fn barycentric_in<const D: usize>(
    nodes: &[SVector<f64, D>],
    conn: &[usize],
    x: &SVector<f64, D>,
) -> Vec<f64> {
    let base = nodes[conn[0]];
    let mut m = SMatrix::<f64, D, D>::zeros();
    for c in 0..D {
        m.set_column(c, &(nodes[conn[c + 1]] - base));
    }
    match crate::linalg::try_inverse(&m) {
        Some(inv) => {
            let lam = inv * (x - base);
            let mut out = Vec::with_capacity(D + 1);
            out.push(1.0 - lam.sum());
            out.extend(lam.iter());
            out
        }
        None => vec![f64::NEG_INFINITY; D + 1],
    }
}

/// Bitmask of domain planes within relative tolerance of `p`.
fn plane_mask<const D: usize>(domain: &AxisBox<D>, p: &SVector<f64, D>) -> u16 {
    let mut mask = 0u16;
    for a in 0..D {
        let tol = 1e-9 * domain.extent()[a].abs().max(1e-300);
        if (p[a] - domain.min[a]).abs() <= tol {
            mask |= 1 << (2 * a);
        }
        if (p[a] - domain.max[a]).abs() <= tol {
            mask |= 1 << (2 * a + 1);
        }
    }
    mask
}

/// Metric quality of a simplex under the mean tensor of its nodes: one for
/// the regular simplex, towards zero for degenerate shapes.
fn metric_quality<const D: usize>(
    nodes: &[SVector<f64, D>],
    tensors: &[SMatrix<f64, D, D>],
    conn: &[usize],
) -> f64 {
    let mut mbar = SMatrix::<f64, D, D>::zeros();
    for &v in conn {
        mbar += tensors[v];
    }
    mbar /= (D + 1) as f64;
    let vol = simplex_volume::<D>(nodes, conn);
    if vol <= 0.0 {
        return 0.0;
    }
    let det = crate::linalg::determinant(&mbar).max(0.0);
    let vol_m = vol * det.sqrt();
    let mut sum_l2 = 0.0;
    for a in 0..D + 1 {
        for b in a + 1..D + 1 {
            let x = nodes[conn[b]] - nodes[conn[a]];
            sum_l2 += (x.transpose() * mbar * x)[0];
        }
    }
    if sum_l2 <= 0.0 {
        return 0.0;
    }
    if D == 2 {
        4.0 * 3.0_f64.sqrt() * vol_m / sum_l2
    } else {
        36.0 * 12.0_f64.sqrt() * vol_m / sum_l2.powf(1.5)
    }
}

/// Adapt `mesh` towards unit metric edge lengths, carrying `fields` and the
/// metric itself through every local operation. When `refresh` is given it
/// re-evaluates field 0 exactly at created and moved nodes instead of
/// interpolating it.
pub fn adapt<const D: usize>(
    mesh: &SimplicialMesh<D>,
    metric: &MetricField<D>,
    fields: &[NodalField],
    options: &AdaptOptions,
    refresh: Option<FieldRefresh<'_, D>>,
) -> Result<(SimplicialMesh<D>, Vec<NodalField>, MetricField<D>, AdaptStats)> {
    options.validate()?;
    let mut work = WorkMesh::build(mesh, metric, fields)?;
    let field_names: Vec<String> = fields.iter().map(|f| f.name.clone()).collect();
    let mut stats = AdaptStats::default();

    for _sweep in 0..options.max_sweeps {
        let mut sweep = SweepStats {
            splits: split_pass(&mut work, options, refresh),
            ..SweepStats::default()
        };
        sweep.collapses = collapse_pass(&mut work, options);
        if D == 2 {
            sweep.flips = flip_pass_2d(&mut work, options);
        } else if options.swaps_3d {
            sweep.flips = swap_pass_3d(&mut work, options);
        }
        let total_ops = sweep.splits + sweep.collapses + sweep.flips;
        // Smoothing cleans up after topological changes; a null sweep means
        // the mesh is already conforming and moving nodes would only churn,
        // so converged meshes are exact fixed points of the whole call.
        if total_ops > 0 {
            for _ in 0..options.smoothing_passes {
                sweep.smoothed += smooth_pass(&mut work, refresh);
            }
        }
        stats.sweeps.push(sweep);

        let edges = work.collect_edges();
        let in_range = edges
            .iter()
            .filter(|&&(i, j)| {
                let l = work.edge_length(i as usize, j as usize);
                l >= options.collapse_threshold && l <= options.split_threshold
            })
            .count();
        stats.in_range_fraction = in_range as f64 / edges.len().max(1) as f64;
        if stats.in_range_fraction >= options.in_range_target || total_ops == 0 {
            break;
        }
    }

    let (new_mesh, new_fields, new_metric) = work.compact(&field_names)?;
    Ok((new_mesh, new_fields, new_metric, stats))
}

/// Split all edges longer than the threshold, longest first.
fn split_pass<const D: usize>(
    work: &mut WorkMesh<D>,
    options: &AdaptOptions,
    refresh: Option<FieldRefresh<'_, D>>,
) -> usize {
    let edges = work.collect_edges();
    let mut long: Vec<(f64, u32, u32)> = edges
        .iter()
        .filter_map(|&(i, j)| {
            let l = work.edge_length(i as usize, j as usize);
            (l > options.split_threshold).then_some((l, i, j))
        })
        .collect();
    long.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut count = 0;
    for (_, i, j) in long {
        let (i, j) = (i as usize, j as usize);
        let incident = work.elems_of_edge(i, j);
        if incident.is_empty() {
            continue;
        }
        let mid = (work.nodes[i] + work.nodes[j]) * 0.5;
        let (mut values, tensor) = {
            // Field and tensor at the midpoint: linear edge interpolation.
            let values: Vec<f64> = work
                .fields
                .iter()
                .map(|f| 0.5 * (f[i] + f[j]))
                .collect();
            let tensor = work.regularized(&((work.tensors[i] + work.tensors[j]) * 0.5));
            (values, tensor)
        };
        if let Some(f) = refresh {
            if !values.is_empty() {
                values[0] = f(&mid);
            }
        }
        let m = work.nodes.len();
        work.nodes.push(mid);
        work.node_alive.push(true);
        work.tensors.push(tensor);
        for (k, v) in values.into_iter().enumerate() {
            work.fields[k].push(v);
        }
        work.bmask.push(work.bmask[i] & work.bmask[j]);
        work.node_elems.push(Vec::new());

        for &e in &incident {
            let e = e as usize;
            let conn = work.elems[e];
            work.kill_elem(e);
            let mut child = conn;
            for slot in child.iter_mut().take(D + 1) {
                if *slot == j {
                    *slot = m;
                }
            }
            work.push_elem(child);
            let mut child = conn;
            for slot in child.iter_mut().take(D + 1) {
                if *slot == i {
                    *slot = m;
                }
            }
            work.push_elem(child);
        }
        work.prune_incidence(i);
        work.prune_incidence(j);
        count += 1;
    }
    count
}

/// Collapse all edges shorter than the threshold, shortest first.
fn collapse_pass<const D: usize>(work: &mut WorkMesh<D>, options: &AdaptOptions) -> usize {
    let edges = work.collect_edges();
    let mut short: Vec<(f64, u32, u32)> = edges
        .iter()
        .filter_map(|&(i, j)| {
            let l = work.edge_length(i as usize, j as usize);
            (l < options.collapse_threshold).then_some((l, i, j))
        })
        .collect();
    short.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut count = 0;
    for (_, i, j) in short {
        let (i, j) = (i as usize, j as usize);
        if !work.node_alive[i] || !work.node_alive[j] {
            continue;
        }
        // The edge may have vanished through an earlier collapse.
        if work.elems_of_edge(i, j).is_empty() {
            continue;
        }
        // Deterministic preference: try removing the higher index first.
        let (first, second) = if i < j { (j, i) } else { (i, j) };
        if try_collapse(work, first, second) || try_collapse(work, second, first) {
            count += 1;
        }
    }
    count
}

/// Try to collapse node `a` into its edge-neighbor `b`.
fn try_collapse<const D: usize>(work: &mut WorkMesh<D>, a: usize, b: usize) -> bool {
    // Boundary rule: the removed node's plane set must be carried by the
    // surviving node, so boundary nodes only slide along the boundary and
    // box corners are pinned.
    if work.bmask[a] & !work.bmask[b] != 0 {
        return false;
    }
    let edge_elems = work.elems_of_edge(a, b);
    if edge_elems.is_empty() {
        return false;
    }

    // Link condition: the shared neighbors of a and b must be exactly the
    // nodes opposite the collapsing edge, otherwise the collapse pinches
    // the mesh.
    let star_a = work.node_star(a);
    let star_b = work.node_star(b);
    let mut common: Vec<usize> = star_a
        .iter()
        .copied()
        .filter(|v| star_b.binary_search(v).is_ok())
        .collect();
    common.sort_unstable();
    let mut opposite: Vec<usize> = Vec::new();
    for &e in &edge_elems {
        for &v in work.conn(e as usize) {
            if v != a && v != b {
                opposite.push(v);
            }
        }
    }
    opposite.sort_unstable();
    opposite.dedup();
    if common != opposite {
        return false;
    }

    // Geometry: retargeted elements must stay positive.
    let retarget: Vec<u32> = work.node_elems[a]
        .iter()
        .copied()
        .filter(|&e| {
            let e = e as usize;
            work.elem_alive[e]
                && work.conn(e).contains(&a)
                && !work.conn(e).contains(&b)
        })
        .collect();
    let mut after_keys: Vec<Vec<usize>> = Vec::new();
    for &e in &retarget {
        let mut conn = work.elems[e as usize];
        for slot in conn.iter_mut().take(D + 1) {
            if *slot == a {
                *slot = b;
            }
        }
        if simplex_volume::<D>(&work.nodes, &conn[..D + 1]) <= work.min_volume {
            return false;
        }
        let mut key = conn[..D + 1].to_vec();
        key.sort_unstable();
        after_keys.push(key);
    }
    // Topology: after the collapse the elements around b must neither
    // duplicate each other nor over-share a face (the vertex link condition
    // alone does not rule these out in 3D).
    for &e in &work.node_elems[b] {
        let e = e as usize;
        if work.elem_alive[e]
            && work.conn(e).contains(&b)
            && !edge_elems.contains(&(e as u32))
        {
            let mut key = work.conn(e).to_vec();
            key.sort_unstable();
            after_keys.push(key);
        }
    }
    after_keys.sort_unstable();
    if after_keys.windows(2).any(|w| w[0] == w[1]) {
        return false;
    }
    let mut face_counts: Vec<Vec<usize>> = Vec::new();
    for key in &after_keys {
        for skip in 0..key.len() {
            if key[skip] == b {
                continue; // faces containing b are the ones that can clash
            }
            let mut face: Vec<usize> = key
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != skip)
                .map(|(_, &v)| v)
                .collect();
            face.sort_unstable();
            face_counts.push(face);
        }
    }
    face_counts.sort_unstable();
    let mut run = 1;
    for w in face_counts.windows(2) {
        if w[0] == w[1] {
            run += 1;
            if run > 2 {
                return false;
            }
        } else {
            run = 1;
        }
    }

    // Apply.
    for &e in &edge_elems {
        work.kill_elem(e as usize);
    }
    for &e in &retarget {
        let e = e as usize;
        for slot in work.elems[e].iter_mut().take(D + 1) {
            if *slot == a {
                *slot = b;
            }
        }
        work.node_elems[b].push(e as u32);
    }
    work.node_alive[a] = false;
    work.node_elems[a].clear();
    work.prune_incidence(b);
    // Also prune the opposite nodes' incidence of the killed elements.
    for v in opposite {
        work.prune_incidence(v);
    }
    true
}

/// Flip 2D edges failing the metric Delaunay criterion.
fn flip_pass_2d<const D: usize>(work: &mut WorkMesh<D>, options: &AdaptOptions) -> usize {
    assert_eq!(D, 2);
    let edges = work.collect_edges();
    let mut count = 0;
    for (iu, ju) in edges {
        let (i, j) = (iu as usize, ju as usize);
        if !work.node_alive[i] || !work.node_alive[j] {
            continue;
        }
        let incident = work.elems_of_edge(i, j);
        if incident.len() != 2 {
            continue;
        }
        let other = |e: u32| -> usize {
            *work
                .conn(e as usize)
                .iter()
                .find(|&&v| v != i && v != j)
                .expect("triangle has a third node")
        };
        let c = other(incident[0]);
        let d = other(incident[1]);
        if c == d {
            continue;
        }
        // The flipped diagonal must not already be a mesh edge elsewhere.
        if work.node_star(c).binary_search(&d).is_ok() {
            continue;
        }

        // Mean metric over the quad.
        let mbar = (work.tensors[i] + work.tensors[j] + work.tensors[c] + work.tensors[d])
            * 0.25;
        if !incircle_in_metric::<D>(&work.nodes, &mbar, i, j, c, d) {
            continue;
        }

        // Candidate triangles across the new diagonal (c, d). Area
        // conservation rejects flips of non-convex quads, where the
        // re-oriented triangles would overlap.
        let t1 = orient::<D>(&work.nodes, [i, d, c, usize::MAX]);
        let t2 = orient::<D>(&work.nodes, [d, j, c, usize::MAX]);
        let v1 = simplex_volume::<D>(&work.nodes, &t1[..3]);
        let v2 = simplex_volume::<D>(&work.nodes, &t2[..3]);
        if v1 <= work.min_volume || v2 <= work.min_volume {
            continue;
        }
        let v_old = work.volume(incident[0] as usize) + work.volume(incident[1] as usize);
        if (v1 + v2 - v_old).abs() > 1e-9 * v_old.abs() {
            continue;
        }
        let q_new = metric_quality::<D>(&work.nodes, &work.tensors, &t1[..3]).min(
            metric_quality::<D>(&work.nodes, &work.tensors, &t2[..3]),
        );
        if q_new < options.flip_quality_floor {
            continue;
        }

        work.kill_elem(incident[0] as usize);
        work.kill_elem(incident[1] as usize);
        work.push_elem(t1);
        work.push_elem(t2);
        for v in [i, j, c, d] {
            work.prune_incidence(v);
        }
        count += 1;
    }
    count
}

fn orient<const D: usize>(nodes: &[SVector<f64, D>], mut conn: [usize; 4]) -> [usize; 4] {
    if simplex_volume::<D>(nodes, &conn[..D + 1]) < 0.0 {
        conn.swap(0, 1);
    }
    conn
}

/// Metric in-circle predicate: true when `d` lies strictly inside the
/// circumcircle of the (positively oriented) triangle `(i, j, c)` after
/// mapping space by the metric square root.
fn incircle_in_metric<const D: usize>(
    nodes: &[SVector<f64, D>],
    mbar: &SMatrix<f64, D, D>,
    i: usize,
    j: usize,
    c: usize,
    d: usize,
) -> bool {
    let eig = crate::linalg::sym_eigen(mbar);
    if eig.min() <= 0.0 {
        return false;
    }
    let mut sqrt_vals = eig.values;
    for v in sqrt_vals.iter_mut() {
        *v = v.sqrt();
    }
    let l = SMatrix::<f64, D, D>::from_diagonal(&sqrt_vals) * eig.vectors.transpose();
    let map = |v: usize| l * nodes[v];

    let (pi, pj, pc, pd) = (map(i), map(j), map(c), map(d));
    // Order (i, j, c) positively in the mapped plane.
    let cross = (pj[0] - pi[0]) * (pc[1] - pi[1]) - (pj[1] - pi[1]) * (pc[0] - pi[0]);
    let (pa, pb) = if cross >= 0.0 { (pi, pj) } else { (pj, pi) };
    let det = incircle_det(
        [pa[0], pa[1]],
        [pb[0], pb[1]],
        [pc[0], pc[1]],
        [pd[0], pd[1]],
    );
    det > 0.0
}

fn incircle_det(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let m = |p: [f64; 2]| {
        let dx = p[0] - d[0];
        let dy = p[1] - d[1];
        [dx, dy, dx * dx + dy * dy]
    };
    let (ra, rb, rc) = (m(a), m(b), m(c));
    ra[0] * (rb[1] * rc[2] - rb[2] * rc[1]) - ra[1] * (rb[0] * rc[2] - rb[2] * rc[0])
        + ra[2] * (rb[0] * rc[1] - rb[1] * rc[0])
}

/// 2-3 and 3-2 tetrahedral swaps accepted when the worst metric quality of
/// the affected elements improves.
fn swap_pass_3d<const D: usize>(work: &mut WorkMesh<D>, _options: &AdaptOptions) -> usize {
    assert_eq!(D, 3);
    let mut count = 0;

    // 2-3 swaps over interior faces.
    let mut faces: Vec<([usize; 3], u32)> = Vec::new();
    for e in 0..work.elems.len() {
        if !work.elem_alive[e] {
            continue;
        }
        let conn = work.conn(e);
        for skip in 0..4 {
            let mut face = [0usize; 3];
            let mut w = 0;
            for (k, &v) in conn.iter().enumerate() {
                if k != skip {
                    face[w] = v;
                    w += 1;
                }
            }
            face.sort_unstable();
            faces.push((face, e as u32));
        }
    }
    faces.sort_unstable();
    let mut k = 0;
    while k + 1 < faces.len() {
        if faces[k].0 != faces[k + 1].0 {
            k += 1;
            continue;
        }
        let (face, e1) = faces[k];
        let e2 = faces[k + 1].1;
        k += 2;
        let (e1u, e2u) = (e1 as usize, e2 as usize);
        if !work.elem_alive[e1u] || !work.elem_alive[e2u] {
            continue;
        }
        // Recheck the face is still shared (collapses may have retargeted).
        let has_face = |e: usize| face.iter().all(|v| work.conn(e).contains(v));
        if !has_face(e1u) || !has_face(e2u) {
            continue;
        }
        let apex = |e: usize| -> usize {
            *work
                .conn(e)
                .iter()
                .find(|v| !face.contains(v))
                .expect("tet has an apex")
        };
        let (p, q) = (apex(e1u), apex(e2u));
        if p == q {
            continue;
        }
        // The swap creates edge (p, q); it must not already exist.
        if work.node_star(p).binary_search(&q).is_ok() {
            continue;
        }
        // The three candidate tets in a consistent cyclic orientation: all
        // volumes share one sign exactly when segment pq pierces the face.
        let mut candidates = [
            [p, q, face[0], face[1]],
            [p, q, face[1], face[2]],
            [p, q, face[2], face[0]],
        ];
        let vols: Vec<f64> = candidates
            .iter()
            .map(|t| simplex_volume::<D>(&work.nodes, &t[..4]))
            .collect();
        let all_pos = vols.iter().all(|&v| v > work.min_volume);
        let all_neg = vols.iter().all(|&v| v < -work.min_volume);
        if !(all_pos || all_neg) {
            continue;
        }
        if all_neg {
            for t in &mut candidates {
                t.swap(0, 1);
            }
        }
        let vol_old = work.volume(e1u) + work.volume(e2u);
        let vol_new: f64 = vols.iter().map(|v| v.abs()).sum();
        if (vol_new - vol_old).abs() > 1e-9 * vol_old.abs() {
            continue;
        }
        let q_old = metric_quality::<D>(&work.nodes, &work.tensors, work.conn(e1u)).min(
            metric_quality::<D>(&work.nodes, &work.tensors, work.conn(e2u)),
        );
        let q_new = candidates
            .iter()
            .map(|t| metric_quality::<D>(&work.nodes, &work.tensors, &t[..4]))
            .fold(f64::INFINITY, f64::min);
        if q_new <= q_old {
            continue;
        }
        work.kill_elem(e1u);
        work.kill_elem(e2u);
        for t in candidates {
            work.push_elem(t);
        }
        for &v in face.iter().chain([p, q].iter()) {
            work.prune_incidence(v);
        }
        count += 1;
    }

    // 3-2 swaps over edges with exactly three incident tets.
    let edges = work.collect_edges();
    for (iu, ju) in edges {
        let (i, j) = (iu as usize, ju as usize);
        if !work.node_alive[i] || !work.node_alive[j] {
            continue;
        }
        let incident = work.elems_of_edge(i, j);
        if incident.len() != 3 {
            continue;
        }
        let mut ring: Vec<usize> = Vec::new();
        for &e in &incident {
            for &v in work.conn(e as usize) {
                if v != i && v != j {
                    ring.push(v);
                }
            }
        }
        ring.sort_unstable();
        ring.dedup();
        if ring.len() != 3 {
            continue;
        }
        // The swap creates face (ring); it must not already bound a tet.
        let face_exists = work.node_elems[ring[0]].iter().any(|&e| {
            let e = e as usize;
            work.elem_alive[e] && ring.iter().all(|v| work.conn(e).contains(v))
        });
        if face_exists {
            continue;
        }
        let t1 = orient::<D>(&work.nodes, [ring[0], ring[1], ring[2], i]);
        let t2 = orient::<D>(&work.nodes, [ring[0], ring[2], ring[1], j]);
        if simplex_volume::<D>(&work.nodes, &t1[..4]) <= work.min_volume
            || simplex_volume::<D>(&work.nodes, &t2[..4]) <= work.min_volume
        {
            continue;
        }
        let q_old = incident
            .iter()
            .map(|&e| metric_quality::<D>(&work.nodes, &work.tensors, work.conn(e as usize)))
            .fold(f64::INFINITY, f64::min);
        let q_new = metric_quality::<D>(&work.nodes, &work.tensors, &t1[..4])
            .min(metric_quality::<D>(&work.nodes, &work.tensors, &t2[..4]));
        if q_new <= q_old {
            continue;
        }
        // Volume conservation guards against swapping a non-convex ring.
        let vol_old: f64 = incident
            .iter()
            .map(|&e| work.volume(e as usize))
            .sum();
        let vol_new = simplex_volume::<D>(&work.nodes, &t1[..4])
            + simplex_volume::<D>(&work.nodes, &t2[..4]);
        if (vol_old - vol_new).abs() > 1e-9 * vol_old.abs() {
            continue;
        }
        for &e in &incident {
            work.kill_elem(e as usize);
        }
        work.push_elem(t1);
        work.push_elem(t2);
        for v in ring.iter().copied().chain([i, j]) {
            work.prune_incidence(v);
        }
        count += 1;
    }
    count
}

/// One metric-weighted Laplacian pass with an inversion guard. Boundary
/// nodes are projected back onto their domain planes; carried data is
/// re-interpolated at the new position from the pre-move star.
fn smooth_pass<const D: usize>(
    work: &mut WorkMesh<D>,
    refresh: Option<FieldRefresh<'_, D>>,
) -> usize {
    let mut moved = 0;
    for i in 0..work.nodes.len() {
        if !work.node_alive[i] {
            continue;
        }
        // Nodes pinned on D or more planes cannot move.
        if work.bmask[i].count_ones() as usize >= D {
            continue;
        }
        let star = work.node_star(i);
        if star.is_empty() {
            continue;
        }
        let mut weight_sum = 0.0;
        let mut target = SVector::<f64, D>::zeros();
        for &j in &star {
            let w = work.edge_length(i, j).max(1e-12);
            weight_sum += w;
            target += work.nodes[j] * w;
        }
        target /= weight_sum;
        // Project back to the planes the node is pinned to.
        for a in 0..D {
            if work.bmask[i] & (1 << (2 * a)) != 0 {
                target[a] = work.domain.min[a];
            }
            if work.bmask[i] & (1 << (2 * a + 1)) != 0 {
                target[a] = work.domain.max[a];
            }
        }

        let original = work.nodes[i];
        let mut accepted = None;
        for step in [1.0, 0.5, 0.25] {
            let candidate = original + (target - original) * step;
            work.nodes[i] = candidate;
            let ok = work.node_elems[i].iter().all(|&e| {
                let e = e as usize;
                !work.elem_alive[e] || work.volume(e) > work.min_volume
            });
            work.nodes[i] = original;
            if ok {
                accepted = Some(candidate);
                break;
            }
        }
        let Some(new_pos) = accepted else { continue };
        if (new_pos - original).norm() == 0.0 {
            continue;
        }
        // Re-interpolate carried data at the new position within the old
        // star, then move.
        let (mut values, tensor) = work.sample_in_star(i, &new_pos);
        if let Some(f) = refresh {
            if !values.is_empty() {
                values[0] = f(&new_pos);
            }
        }
        work.nodes[i] = new_pos;
        for (k, v) in values.into_iter().enumerate() {
            work.fields[k][i] = v;
        }
        work.tensors[i] = tensor;
        moved += 1;
    }
    moved
}

/// Options of the outer sample-metric-remesh iteration.
#[derive(Debug, Clone)]
pub struct LoopOptions {
    /// Target node count of the adapted mesh.
    pub budget: usize,
    /// Number of metric/remesh iterations.
    pub iterations: usize,
    /// Edge length of the initial isotropic box mesh; when `None`, the
    /// longest domain axis divided by 40.
    pub init_h: Option<f64>,
    pub adapt: AdaptOptions,
    /// Metric clamps; when `None`, derived from `h0` and the domain.
    pub bounds: Option<MetricBounds>,
    /// Re-evaluate the field exactly at created and moved nodes instead of
    /// interpolating (slower, for accuracy studies).
    pub exact_refresh: bool,
}

impl LoopOptions {
    pub fn new(budget: usize, iterations: usize) -> Self {
        Self {
            budget,
            iterations,
            init_h: None,
            adapt: AdaptOptions::default(),
            bounds: None,
            exact_refresh: false,
        }
    }
}

/// Per-iteration numbers reported by [`adaptation_loop`].
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub nodes: usize,
    pub elements: usize,
    pub metric_len_min: f64,
    pub metric_len_median: f64,
    pub metric_len_max: f64,
    /// Total zero-level-set length (2D) or area (3D) on the current mesh.
    pub zero_level_measure: f64,
}

/// Result of the outer loop: the final mesh, the sampled truncated field,
/// the last target metric, and one record per iteration (plus the initial
/// state).
pub struct LoopResult<const D: usize> {
    pub mesh: SimplicialMesh<D>,
    pub field: NodalField,
    pub metric: MetricField<D>,
    pub records: Vec<IterationRecord>,
}

/// Step-by-step driver of the sample-metric-remesh loop, for callers that
/// want to inspect or export the mesh between iterations.
pub struct AdaptationDriver<'a, const D: usize> {
    field: &'a EimlsField<D>,
    options: LoopOptions,
    bounds: MetricBounds,
    mesh: SimplicialMesh<D>,
    alpha: NodalField,
    metric: MetricField<D>,
    records: Vec<IterationRecord>,
    /// Budget handed to the metric, steered so the realized node count
    /// tracks the requested one.
    effective_budget: f64,
    iteration: usize,
}

impl<'a, const D: usize> AdaptationDriver<'a, D> {
    pub fn new(
        field: &'a EimlsField<D>,
        domain: &AxisBox<D>,
        options: &LoopOptions,
    ) -> Result<Self> {
        if options.budget < 100 {
            return Err(Error::InvalidParameter(format!(
                "node budget {} is below the minimum of 100",
                options.budget
            )));
        }
        let init_h = options
            .init_h
            .unwrap_or_else(|| domain.extent().max() / 40.0);
        let bounds = options.bounds.unwrap_or_else(|| {
            MetricBounds::from_resolution(field.config().h0, domain.diagonal())
        });
        let mesh = generate_box_mesh(domain, init_h)?;
        let alpha = sample_field_at_nodes(field, &mesh)?;
        let metric = MetricField {
            tensors: vec![SMatrix::<f64, D, D>::identity(); mesh.node_count()],
            bounds,
        };
        let records = vec![record::<D>(0, &mesh, &metric, &alpha)];
        Ok(Self {
            field,
            options: options.clone(),
            bounds,
            mesh,
            alpha,
            metric,
            records,
            effective_budget: options.budget as f64,
            iteration: 0,
        })
    }

    pub fn mesh(&self) -> &SimplicialMesh<D> {
        &self.mesh
    }

    pub fn alpha(&self) -> &NodalField {
        &self.alpha
    }

    pub fn metric(&self) -> &MetricField<D> {
        &self.metric
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    /// One metric + remesh + resample iteration.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let (target, _data) = target_metric(
            &self.mesh,
            &self.alpha,
            self.effective_budget.round() as usize,
            &self.bounds,
        )?;
        let field = self.field;
        let refresh_fn = |x: &SVector<f64, D>| field.eval_truncated(x).unwrap_or(0.0);
        let refresh: Option<FieldRefresh<'_, D>> =
            if self.options.exact_refresh {
                Some(&refresh_fn)
            } else {
                None
            };
        let (new_mesh, _fields, new_metric, _stats) = adapt(
            &self.mesh,
            &target,
            std::slice::from_ref(&self.alpha),
            &self.options.adapt,
            refresh,
        )?;
        self.mesh = new_mesh;
        self.metric = new_metric;

        // Fresh field values at all current nodes, once per iteration.
        self.alpha = sample_field_at_nodes(self.field, &self.mesh)?;
        self.iteration += 1;
        self.records
            .push(record::<D>(self.iteration, &self.mesh, &self.metric, &self.alpha));

        let realized = self.mesh.node_count() as f64;
        let correction = (self.options.budget as f64 / realized).clamp(0.25, 4.0);
        self.effective_budget = (self.effective_budget * correction).clamp(
            self.options.budget as f64 / 8.0,
            self.options.budget as f64 * 8.0,
        );
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> LoopResult<D> {
        LoopResult {
            mesh: self.mesh,
            field: self.alpha,
            metric: self.metric,
            records: self.records,
        }
    }
}

/// Iteratively adapt a mesh of `domain` around the zero level set of the
/// truncated field: sample the field at the mesh nodes, build the
/// budget-balanced target metric, remesh, repeat.
pub fn adaptation_loop<const D: usize>(
    field: &EimlsField<D>,
    domain: &AxisBox<D>,
    options: &LoopOptions,
) -> Result<LoopResult<D>> {
    let mut driver = AdaptationDriver::new(field, domain, options)?;
    for _ in 0..options.iterations {
        driver.step()?;
    }
    Ok(driver.finish())
}

/// Evaluate the truncated field at every mesh node, in parallel.
pub fn sample_field_at_nodes<const D: usize>(
    field: &EimlsField<D>,
    mesh: &SimplicialMesh<D>,
) -> Result<NodalField> {
    let values: Vec<f64> = mesh
        .nodes()
        .par_iter()
        .map(|p| field.eval_truncated(p))
        .collect::<Result<_>>()?;
    Ok(NodalField::new("alpha_eps", values))
}

fn record<const D: usize>(
    iteration: usize,
    mesh: &SimplicialMesh<D>,
    metric: &MetricField<D>,
    alpha: &NodalField,
) -> IterationRecord {
    let mut lengths: Vec<f64> = mesh
        .edges()
        .iter()
        .map(|&(i, j)| metric_edge_length(mesh, metric, i as usize, j as usize))
        .collect();
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (min, median, max) = if lengths.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            lengths[0],
            lengths[lengths.len() / 2],
            lengths[lengths.len() - 1],
        )
    };
    IterationRecord {
        iteration,
        nodes: mesh.node_count(),
        elements: mesh.elem_count(),
        metric_len_min: min,
        metric_len_median: median,
        metric_len_max: max,
        zero_level_measure: zero_level_measure(mesh, alpha),
    }
}

/// Total length (2D) or area (3D) of the zero level set of `field` on the
/// mesh.
pub fn zero_level_measure<const D: usize>(mesh: &SimplicialMesh<D>, field: &NodalField) -> f64 {
    let any = mesh as &dyn Any;
    if let Some(m2) = any.downcast_ref::<SimplicialMesh<2>>() {
        match isosurface::extract_contour_2d(m2, field) {
            Ok(contours) => contours.iter().map(|c| c.length()).sum(),
            Err(_) => f64::NAN,
        }
    } else if let Some(m3) = any.downcast_ref::<SimplicialMesh<3>>() {
        match isosurface::extract_surface_3d(m3, field) {
            Ok(surface) => surface.area(),
            Err(_) => f64::NAN,
        }
    } else {
        f64::NAN
    }
}
