//! Extended implicit moving least squares signed field.
//!
//! The field value at a query point is the weighted mean of the signed
//! distances to the tangent planes of the neighboring cloud points. The
//! weight bandwidth is inflated with the distance to the cloud so the field
//! stays defined over the whole computational domain, unlike the plain
//! fixed-bandwidth formulation which underflows away from the points. A
//! hyperbolic tangent truncation bounds the field to `(-epsilon, epsilon)`
//! while keeping unit slope at the zero level set.

use crate::geom::AxisBox;
use crate::pointcloud::OrientedPointCloud;
use crate::spatial::NeighborIndex;
use crate::{Error, Result};
use nalgebra::SVector;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Generic weighting kernels for the moving least squares sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    /// `exp(-x^2/2)`; smoothing, effectively supported up to `l_gamma`.
    #[default]
    Gaussian,
    /// `(1-x^2)^4` for `x < 1`, else 0; hard compact support.
    Compact,
    /// `1/x^2`; interpolates the points, singular at 0.
    Interpolatory,
}

/// Radius beyond which a unit-bandwidth Gaussian drops below `10^-gamma`.
pub fn l_gamma(gamma: f64) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok((2.0 * gamma * 10.0_f64.ln()).sqrt())
}

/// Evaluate a kernel at `x >= 0` (`x > 0` for the interpolatory kernel).
pub fn kernel_weight(kernel: Kernel, x: f64) -> Result<f64> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "kernel argument must be finite and nonnegative, got {x}"
        )));
    }
    match kernel {
        Kernel::Gaussian => Ok((-0.5 * x * x).exp()),
        Kernel::Compact => {
            if x < 1.0 {
                let t = 1.0 - x * x;
                Ok(t * t * t * t)
            } else {
                Ok(0.0)
            }
        }
        Kernel::Interpolatory => {
            if x == 0.0 {
                Err(Error::InvalidParameter(
                    "interpolatory kernel is singular at 0".into(),
                ))
            } else {
                Ok(1.0 / (x * x))
            }
        }
    }
}

/// Parameters of the signed field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EimlsConfig {
    /// Base space parameter, of the order of the scan noise (meters).
    pub h0: f64,
    /// Numeric precision exponent: weights below `10^-gamma` count as zero.
    pub gamma: f64,
    /// Neighbors summed per query.
    pub k: usize,
    /// Truncation width of the hyperbolic tangent (meters).
    pub epsilon: f64,
    pub kernel: Kernel,
}

impl EimlsConfig {
    pub fn new(h0: f64, epsilon: f64) -> Self {
        Self {
            h0,
            gamma: 7.0,
            k: 80,
            epsilon,
            kernel: Kernel::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h0 <= 0.0 || !self.h0.is_finite() {
            return Err(Error::InvalidParameter(format!("h0 must be > 0, got {}", self.h0)));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// The signed implicit field over an oriented cloud. Immutable after
/// construction; evaluation is pure and may run from many threads.
pub struct EimlsField<const D: usize> {
    cloud: OrientedPointCloud<D>,
    index: NeighborIndex<D>,
    config: EimlsConfig,
    l_gamma: f64,
    /// Kernel argument up to which the weight stays above `10^-gamma`;
    /// equals `l_gamma` for the Gaussian kernel.
    support: f64,
}

impl<const D: usize> EimlsField<D> {
    pub fn new(cloud: OrientedPointCloud<D>, config: EimlsConfig) -> Result<Self> {
        config.validate()?;
        if !cloud.has_normals() {
            return Err(Error::MissingNormals);
        }
        if config.k > cloud.len() {
            return Err(Error::InvalidParameter(format!(
                "k={} exceeds the point count {}",
                config.k,
                cloud.len()
            )));
        }
        let lg = l_gamma(config.gamma)?;
        let support = match config.kernel {
            Kernel::Gaussian => lg,
            // Solve (1-x^2)^4 = 10^-gamma for the compact kernel so the
            // nearest neighbor never falls out of the support.
            Kernel::Compact => (1.0 - 10.0_f64.powf(-config.gamma / 4.0)).sqrt(),
            Kernel::Interpolatory => 10.0_f64.powf(config.gamma / 2.0),
        };
        let index = NeighborIndex::build(&cloud)?;
        Ok(Self {
            cloud,
            index,
            config,
            l_gamma: lg,
            support,
        })
    }

    pub fn cloud(&self) -> &OrientedPointCloud<D> {
        &self.cloud
    }

    pub fn config(&self) -> &EimlsConfig {
        &self.config
    }

    pub fn cached_l_gamma(&self) -> f64 {
        self.l_gamma
    }

    /// Query-dependent space parameter: the distance to the nearest cloud
    /// point divided by the kernel support, floored at `h0`.
    pub fn h_extended(&self, x: &SVector<f64, D>) -> Result<f64> {
        let (_, d2) = self.index.nn_with_dist2(x)?;
        Ok((d2.sqrt() / self.support).max(self.config.h0))
    }

    /// The signed field value. Finite for every finite query point.
    pub fn eval(&self, x: &SVector<f64, D>) -> Result<f64> {
        let (indices, d2) = self.index.knn(x, self.config.k)?;
        let nearest = d2[0].sqrt();
        let h = (nearest / self.support).max(self.config.h0);
        let normals = self.cloud.normals.as_ref().expect("checked at build");

        if self.config.kernel == Kernel::Interpolatory && nearest == 0.0 {
            // The interpolatory weight diverges at a cloud point; the limit
            // of the weighted mean there is the point's own plane distance.
            return Ok(0.0);
        }

        let mut weight_sum = 0.0;
        let mut value_sum = 0.0;
        for (&i, &dist2) in indices.iter().zip(&d2) {
            let r = dist2.sqrt();
            let w = kernel_weight(self.config.kernel, r / h)?;
            weight_sum += w;
            value_sum += w * (x - self.cloud.points[i]).dot(&normals[i]);
        }
        if weight_sum <= 0.0 {
            // Impossible by construction: the nearest point's weight is at
            // least 10^-gamma because h is floored by its distance.
            return Err(Error::Internal(format!(
                "zero weight sum at query {x:?} (h = {h})"
            )));
        }
        Ok(value_sum / weight_sum)
    }

    /// Plain fixed-bandwidth moving least squares with weights below
    /// `10^-gamma` treated as zero. Returns `None` where every weight
    /// underflows; the comparison baseline for the extended field.
    pub fn eval_plain_imls(&self, x: &SVector<f64, D>, h_const: f64) -> Result<Option<f64>> {
        if h_const <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "h_const must be > 0, got {h_const}"
            )));
        }
        let (indices, d2) = self.index.knn(x, self.config.k)?;
        let normals = self.cloud.normals.as_ref().expect("checked at build");
        let floor = 10.0_f64.powf(-self.config.gamma);
        let mut weight_sum = 0.0;
        let mut value_sum = 0.0;
        for (&i, &dist2) in indices.iter().zip(&d2) {
            let r = dist2.sqrt();
            let w = kernel_weight(self.config.kernel, r / h_const)?;
            if w < floor {
                continue;
            }
            weight_sum += w;
            value_sum += w * (x - self.cloud.points[i]).dot(&normals[i]);
        }
        if weight_sum == 0.0 {
            Ok(None)
        } else {
            Ok(Some(value_sum / weight_sum))
        }
    }

    /// Truncated field `epsilon * tanh(eval / epsilon)`: bounded by epsilon
    /// in magnitude, same sign as the raw field, unit slope at the surface.
    pub fn eval_truncated(&self, x: &SVector<f64, D>) -> Result<f64> {
        Ok(truncate(self.eval(x)?, self.config.epsilon))
    }

    /// Sample the field on a regular grid over `domain`. Values are stored
    /// with the x index varying fastest (VTK structured-points order).
    pub fn sample_on_grid(
        &self,
        domain: &AxisBox<D>,
        resolution: [usize; D],
        truncated: bool,
    ) -> Result<ScalarGrid<D>> {
        let coords = grid_coords(domain, resolution)?;
        let values: Vec<f64> = coords
            .par_iter()
            .map(|x| {
                if truncated {
                    self.eval_truncated(x)
                } else {
                    self.eval(x)
                }
            })
            .collect::<Result<_>>()?;
        Ok(ScalarGrid {
            domain: *domain,
            resolution,
            values,
        })
    }

    /// Sample the plain fixed-bandwidth baseline on a grid; undefined cells
    /// are coded as NaN.
    pub fn sample_plain_on_grid(
        &self,
        domain: &AxisBox<D>,
        resolution: [usize; D],
        h_const: f64,
    ) -> Result<ScalarGrid<D>> {
        let coords = grid_coords(domain, resolution)?;
        let values: Vec<f64> = coords
            .par_iter()
            .map(|x| {
                self.eval_plain_imls(x, h_const)
                    .map(|v| v.unwrap_or(f64::NAN))
            })
            .collect::<Result<_>>()?;
        Ok(ScalarGrid {
            domain: *domain,
            resolution,
            values,
        })
    }
}

/// Apply the bounded odd truncation `epsilon * tanh(v / epsilon)`.
pub fn truncate(value: f64, epsilon: f64) -> f64 {
    let mut t = (value / epsilon).tanh();
    // tanh rounds to exactly 1 for large arguments; keep the bound strict.
    if t.abs() >= 1.0 {
        t = t.signum() * (1.0 - f64::EPSILON);
    }
    epsilon * t
}

fn grid_coords<const D: usize>(
    domain: &AxisBox<D>,
    resolution: [usize; D],
) -> Result<Vec<SVector<f64, D>>> {
    if domain.is_degenerate() {
        return Err(Error::InvalidParameter("degenerate sampling box".into()));
    }
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::InvalidParameter(
            "grid resolution must be at least 2 per axis".into(),
        ));
    }
    let total: usize = resolution.iter().product();
    let mut coords = Vec::with_capacity(total);
    let mut idx = [0usize; D];
    for _ in 0..total {
        let mut x = domain.min;
        for a in 0..D {
            x[a] += domain.extent()[a] * idx[a] as f64 / (resolution[a] - 1) as f64;
        }
        coords.push(x);
        // Increment with the x axis fastest.
        for a in 0..D {
            idx[a] += 1;
            if idx[a] < resolution[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(coords)
}

/// Dense scalar samples over a box, x index fastest.
#[derive(Debug, Clone)]
pub struct ScalarGrid<const D: usize> {
    pub domain: AxisBox<D>,
    pub resolution: [usize; D],
    pub values: Vec<f64>,
}

impl<const D: usize> ScalarGrid<D> {
    pub fn value(&self, idx: [usize; D]) -> f64 {
        let mut flat = 0;
        for a in (0..D).rev() {
            flat = flat * self.resolution[a] + idx[a];
        }
        self.values[flat]
    }

    pub fn nan_fraction(&self) -> f64 {
        let nans = self.values.iter().filter(|v| v.is_nan()).count();
        nans as f64 / self.values.len() as f64
    }

    /// Write as legacy VTK structured points for inspection.
    pub fn write_vtk(&self, path: impl AsRef<Path>, name: &str) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        let mut dims = [1usize; 3];
        let mut origin = [0.0f64; 3];
        let mut spacing = [1.0f64; 3];
        for a in 0..D {
            dims[a] = self.resolution[a];
            origin[a] = self.domain.min[a];
            spacing[a] = self.domain.extent()[a] / (self.resolution[a] - 1) as f64;
        }
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "{name}")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET STRUCTURED_POINTS")?;
        writeln!(w, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2])?;
        writeln!(w, "ORIGIN {} {} {}", origin[0], origin[1], origin[2])?;
        writeln!(w, "SPACING {} {} {}", spacing[0], spacing[1], spacing[2])?;
        writeln!(w, "POINT_DATA {}", self.values.len())?;
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        w.flush()?;
        Ok(())
    }
}
