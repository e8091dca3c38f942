//! Edge-based a-posteriori error estimation and metric construction.
//!
//! From a nodal scalar field the module recovers nodal gradients, measures
//! the second-order interpolation error along each edge, and builds the
//! node-budget-balanced target metric whose unit mesh equidistributes that
//! error with a prescribed total number of nodes.

use crate::mesh::{NodalField, SimplicialMesh};
use crate::{Error, Result};
use nalgebra::{SMatrix, SVector};

/// Eigenvalue clamps applied to produced metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricBounds {
    /// Smallest edge length the metric may request (meters).
    pub h_min: f64,
    /// Largest edge length the metric may request (meters).
    pub h_max: f64,
    /// Cap on the anisotropy ratio (longest/shortest requested length).
    pub ratio_max: f64,
}

impl MetricBounds {
    pub fn new(h_min: f64, h_max: f64, ratio_max: f64) -> Self {
        Self {
            h_min,
            h_max,
            ratio_max,
        }
    }

    /// Default clamps: a quarter of the field resolution below, a quarter of
    /// the domain diagonal above, anisotropy capped at 100.
    pub fn from_resolution(h0: f64, domain_diagonal: f64) -> Self {
        Self {
            h_min: h0 / 4.0,
            h_max: domain_diagonal / 4.0,
            ratio_max: 100.0,
        }
    }

    pub fn unbounded() -> Self {
        Self {
            h_min: 0.0,
            h_max: f64::INFINITY,
            ratio_max: f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h_min >= 0.0 && self.h_max > self.h_min && self.ratio_max >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bad metric bounds {self:?}"
            )));
        }
        Ok(())
    }
}

/// One symmetric positive-definite tensor per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField<const D: usize> {
    pub tensors: Vec<SMatrix<f64, D, D>>,
    /// Bounds the field was last regularized with; `unbounded` for raw
    /// formula output.
    pub bounds: MetricBounds,
}

impl<const D: usize> MetricField<D> {
    /// Check symmetry, positive-definiteness and the eigenvalue clamps.
    pub fn validate(&self) -> Result<()> {
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
        for (i, t) in self.tensors.iter().enumerate() {
            check_symmetric(t).map_err(|_| {
                Error::InvalidParameter(format!("tensor {i} is not symmetric"))
            })?;
            let eig = crate::linalg::sym_eigen(t);
            let min = eig.min();
            let max = eig.max();
            if min <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "tensor {i} is not positive definite (lambda_min = {min})"
                )));
            }
            let slack = 1.0 + 1e-9;
            if min < lo / slack || max > hi * slack {
                return Err(Error::InvalidParameter(format!(
                    "tensor {i} eigenvalues [{min}, {max}] outside [{lo}, {hi}]"
                )));
            }
            if max / min > self.bounds.ratio_max * self.bounds.ratio_max * slack {
                return Err(Error::InvalidParameter(format!(
                    "tensor {i} anisotropy {} exceeds cap",
                    (max / min).sqrt()
                )));
            }
        }
        Ok(())
    }
}

/// Per-edge error estimates and the budget bookkeeping behind a target
/// metric.
#[derive(Debug, Clone)]
pub struct EdgeErrorData {
    /// Interpolation error along each mesh edge, aligned with `mesh.edges()`.
    pub edge_errors: Vec<f64>,
    /// Number of edges created along each edge under the balanced error.
    pub created_per_edge: Vec<f64>,
    /// The balanced error `e` implied by the node budget.
    pub balanced_error: f64,
    /// Per-node creation count at unit error.
    pub creation_density: Vec<f64>,
    /// The requested total node count.
    pub budget: usize,
    /// Set when every edge error was below the absolute floor and the
    /// metric fell back to the budget-scaled unit metric.
    pub degenerate_error_field: bool,
}

fn check_symmetric<const D: usize>(t: &SMatrix<f64, D, D>) -> Result<()> {
    let asym = (t - t.transpose()).norm();
    if asym > 1e-12 * t.norm().max(1e-300) {
        return Err(Error::InvalidParameter("non-symmetric tensor".into()));
    }
    Ok(())
}

/// Invert the star matrix `A`, adding a trace-scaled identity shift first
/// when the star is close to rank deficient.
fn invert_star<const D: usize>(a: &SMatrix<f64, D, D>, node: usize) -> Result<SMatrix<f64, D, D>> {
    let trace = a.trace();
    let well_conditioned =
        crate::linalg::determinant(a) > 1e-10 * (trace / D as f64).powi(D as i32);
    if well_conditioned {
        if let Some(inv) = crate::linalg::try_inverse(a) {
            return Ok(inv);
        }
    }
    let shifted = a + SMatrix::<f64, D, D>::identity() * (1e-12 * trace);
    crate::linalg::try_inverse(&shifted).ok_or(Error::DegenerateStar { index: node })
}

/// Per-node star matrix `sum of X otimes X` over the star edges.
fn star_matrix<const D: usize>(mesh: &SimplicialMesh<D>, node: usize) -> SMatrix<f64, D, D> {
    let mut a = SMatrix::<f64, D, D>::zeros();
    let xi = mesh.node(node);
    for &j in mesh.star(node) {
        let x = mesh.node(j as usize) - xi;
        a += x * x.transpose();
    }
    a
}

/// Recover nodal gradients from a nodal field: the least-squares gradient
/// of the edge differences, exact for affine fields.
pub fn recover_gradient<const D: usize>(
    mesh: &SimplicialMesh<D>,
    field: &NodalField,
) -> Result<Vec<SVector<f64, D>>> {
    if field.values.len() != mesh.node_count() {
        return Err(Error::InvalidParameter(format!(
            "field '{}' has {} values for {} nodes",
            field.name,
            field.values.len(),
            mesh.node_count()
        )));
    }
    let mut gradients = Vec::with_capacity(mesh.node_count());
    for i in 0..mesh.node_count() {
        let a = star_matrix(mesh, i);
        let inv = invert_star(&a, i)?;
        let mut b = SVector::<f64, D>::zeros();
        let xi = mesh.node(i);
        let ui = field.values[i];
        for &j in mesh.star(i) {
            let x = mesh.node(j as usize) - xi;
            b += x * (field.values[j as usize] - ui);
        }
        gradients.push(inv * b);
    }
    Ok(gradients)
}

/// Interpolation error along each edge: `|(G_j - G_i) . X_ij|`, aligned
/// with `mesh.edges()`.
pub fn edge_errors<const D: usize>(
    mesh: &SimplicialMesh<D>,
    gradients: &[SVector<f64, D>],
) -> Vec<f64> {
    mesh.edges()
        .iter()
        .map(|&(i, j)| {
            let x = mesh.node(j as usize) - mesh.node(i as usize);
            let dg = gradients[j as usize] - gradients[i as usize];
            dg.dot(&x).abs()
        })
        .collect()
}

/// The unit metric of the current mesh: the tensor under which the star
/// edges of each node have statistical length one.
pub fn unit_metric<const D: usize>(mesh: &SimplicialMesh<D>) -> Result<MetricField<D>> {
    let mut tensors = Vec::with_capacity(mesh.node_count());
    for i in 0..mesh.node_count() {
        let a = star_matrix(mesh, i);
        let inv = invert_star(&a, i)?;
        let m = inv * (mesh.star(i).len() as f64 / D as f64);
        tensors.push(symmetrize(&m));
    }
    Ok(MetricField {
        tensors,
        bounds: MetricBounds::unbounded(),
    })
}

fn symmetrize<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

/// Target metric from a nodal field under a node budget: recover gradients,
/// measure edge errors, balance, regularize with `bounds`.
pub fn target_metric<const D: usize>(
    mesh: &SimplicialMesh<D>,
    field: &NodalField,
    budget: usize,
    bounds: &MetricBounds,
) -> Result<(MetricField<D>, EdgeErrorData)> {
    let gradients = recover_gradient(mesh, field)?;
    let errors = edge_errors(mesh, &gradients);
    let (raw, data) = target_metric_from_errors(mesh, &errors, budget)?;
    Ok((regularize(&raw, bounds)?, data))
}

/// Target metric from explicit per-edge errors (raw formula output, no
/// eigenvalue clamps). The entry point for synthetic-error studies.
pub fn target_metric_from_errors<const D: usize>(
    mesh: &SimplicialMesh<D>,
    errors: &[f64],
    budget: usize,
) -> Result<(MetricField<D>, EdgeErrorData)> {
    if errors.len() != mesh.edges().len() {
        return Err(Error::InvalidParameter(format!(
            "{} edge errors for {} edges",
            errors.len(),
            mesh.edges().len()
        )));
    }
    if budget < D + 1 {
        return Err(Error::InvalidParameter(format!(
            "node budget {budget} below the minimum {}",
            D + 1
        )));
    }
    let n_nodes = mesh.node_count();
    let max_error = errors.iter().copied().fold(0.0, f64::max);

    if max_error < 1e-14 {
        // The field is affine to machine precision: no error to balance.
        // Fall back to the unit metric scaled so the edge count matches the
        // budget.
        let unit = unit_metric(mesh)?;
        let scale = (budget as f64 / n_nodes as f64).powf(2.0 / D as f64);
        let tensors = unit.tensors.iter().map(|t| t * scale).collect();
        let balanced_error = (n_nodes as f64 / budget as f64).powf(2.0 / D as f64);
        return Ok((
            MetricField {
                tensors,
                bounds: MetricBounds::unbounded(),
            },
            EdgeErrorData {
                edge_errors: errors.to_vec(),
                created_per_edge: vec![1.0; errors.len()],
                balanced_error,
                creation_density: vec![1.0; n_nodes],
                budget,
                degenerate_error_field: true,
            },
        ));
    }

    // Floor tiny errors so the weighted star matrices stay invertible.
    let floor = 1e-6 * max_error;
    let floored: Vec<f64> = errors.iter().map(|&e| e.max(floor)).collect();

    // Map edges back to per-node neighbor errors.
    let mut edge_of = std::collections::HashMap::new();
    for (idx, &(i, j)) in mesh.edges().iter().enumerate() {
        edge_of.insert((i, j), idx);
    }
    let error_of = |i: usize, j: usize| -> f64 {
        let key = if i < j {
            (i as u32, j as u32)
        } else {
            (j as u32, i as u32)
        };
        floored[edge_of[&key]]
    };

    // Per-node creation count at unit error.
    let mut creation_density = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let xi = mesh.node(i);
        let mut dir = SMatrix::<f64, D, D>::zeros();
        let mut weighted = SMatrix::<f64, D, D>::zeros();
        for &j in mesh.star(i) {
            let x = (mesh.node(j as usize) - xi).normalize();
            let outer = x * x.transpose();
            dir += outer;
            weighted += outer * error_of(i, j as usize).sqrt();
        }
        let inv = invert_star(&dir, i)?;
        let n1 = crate::linalg::determinant(&(inv * weighted)).max(0.0);
        creation_density.push(n1);
    }

    let total_density: f64 = creation_density.iter().sum();
    let balanced_error = (total_density / budget as f64).powf(2.0 / D as f64);

    let mut tensors = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let xi = mesh.node(i);
        let mut weighted = SMatrix::<f64, D, D>::zeros();
        for &j in mesh.star(i) {
            let x = mesh.node(j as usize) - xi;
            weighted += (x * x.transpose()) / error_of(i, j as usize);
        }
        let inv = invert_star(&weighted, i)?;
        let m = inv * (mesh.star(i).len() as f64 / (D as f64 * balanced_error));
        tensors.push(symmetrize(&m));
    }

    let created_per_edge = floored
        .iter()
        .map(|&e| (e / balanced_error).sqrt())
        .collect();

    Ok((
        MetricField {
            tensors,
            bounds: MetricBounds::unbounded(),
        },
        EdgeErrorData {
            edge_errors: errors.to_vec(),
            created_per_edge,
            balanced_error,
            creation_density,
            budget,
            degenerate_error_field: false,
        },
    ))
}

/// Clamp a metric's eigenvalues to `[1/h_max^2, 1/h_min^2]`, then cap the
/// anisotropy ratio by raising the smallest eigenvalue.
pub fn regularize<const D: usize>(
    metric: &MetricField<D>,
    bounds: &MetricBounds,
) -> Result<MetricField<D>> {
    bounds.validate()?;
    let lo = if bounds.h_max.is_finite() {
        1.0 / (bounds.h_max * bounds.h_max)
    } else {
        0.0
    };
    let hi = if bounds.h_min > 0.0 {
        1.0 / (bounds.h_min * bounds.h_min)
    } else {
        f64::INFINITY
    };
    let mut tensors = Vec::with_capacity(metric.tensors.len());
    for t in &metric.tensors {
        check_symmetric(t)?;
        tensors.push(regularize_tensor(t, lo, hi, bounds.ratio_max));
    }
    Ok(MetricField {
        tensors,
        bounds: *bounds,
    })
}

/// Regularize a single tensor; `lo`/`hi` are eigenvalue clamps.
pub fn regularize_tensor<const D: usize>(
    t: &SMatrix<f64, D, D>,
    lo: f64,
    hi: f64,
    ratio_max: f64,
) -> SMatrix<f64, D, D> {
    let mut eig = crate::linalg::sym_eigen(&symmetrize(t));
    for v in eig.values.iter_mut() {
        *v = v.clamp(lo.max(1e-300), hi);
    }
    if ratio_max.is_finite() {
        let max = eig.max();
        let min_allowed = max / (ratio_max * ratio_max);
        for v in eig.values.iter_mut() {
            *v = v.max(min_allowed);
        }
    }
    symmetrize(&eig.recompose())
}

/// Metric intersection by simultaneous reduction: the result's unit ball is
/// contained in both input unit balls.
pub fn intersect_metrics<const D: usize>(
    a: &MetricField<D>,
    b: &MetricField<D>,
) -> Result<MetricField<D>> {
    if a.tensors.len() != b.tensors.len() {
        return Err(Error::InvalidParameter(format!(
            "metric size mismatch: {} vs {}",
            a.tensors.len(),
            b.tensors.len()
        )));
    }
    let tensors = a
        .tensors
        .iter()
        .zip(&b.tensors)
        .map(|(ma, mb)| intersect_tensors(ma, mb))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricField {
        tensors,
        bounds: MetricBounds::unbounded(),
    })
}

pub fn intersect_tensors<const D: usize>(
    a: &SMatrix<f64, D, D>,
    b: &SMatrix<f64, D, D>,
) -> Result<SMatrix<f64, D, D>> {
    check_symmetric(a)?;
    check_symmetric(b)?;
    let eig_a = crate::linalg::sym_eigen(&symmetrize(a));
    if eig_a.min() <= 0.0 {
        return Err(Error::InvalidParameter(
            "intersection requires positive definite tensors".into(),
        ));
    }
    let mut sqrt_vals = eig_a.values;
    let mut inv_sqrt_vals = eig_a.values;
    for i in 0..D {
        sqrt_vals[i] = eig_a.values[i].sqrt();
        inv_sqrt_vals[i] = 1.0 / sqrt_vals[i];
    }
    let q = eig_a.vectors;
    let a_sqrt = q * SMatrix::<f64, D, D>::from_diagonal(&sqrt_vals) * q.transpose();
    let a_inv_sqrt = q * SMatrix::<f64, D, D>::from_diagonal(&inv_sqrt_vals) * q.transpose();

    let c = symmetrize(&(a_inv_sqrt * b * a_inv_sqrt));
    let mut eig_c = crate::linalg::sym_eigen(&c);
    for v in eig_c.values.iter_mut() {
        *v = v.max(1.0);
    }
    let inner = eig_c.recompose();
    Ok(symmetrize(&(a_sqrt * inner * a_sqrt)))
}
