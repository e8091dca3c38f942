//! Small shared geometric primitives.

use nalgebra::SVector;

/// Axis-aligned box in `D` dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox<const D: usize> {
    pub min: SVector<f64, D>,
    pub max: SVector<f64, D>,
}

impl<const D: usize> AxisBox<D> {
    pub fn new(min: SVector<f64, D>, max: SVector<f64, D>) -> Self {
        Self { min, max }
    }

    /// Smallest box containing all points; `None` for an empty slice.
    pub fn from_points(points: &[SVector<f64, D>]) -> Option<Self> {
        let first = *points.first()?;
        let mut min = first;
        let mut max = first;
        for p in &points[1..] {
            for a in 0..D {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Some(Self { min, max })
    }

    pub fn extent(&self) -> SVector<f64, D> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> SVector<f64, D> {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &SVector<f64, D>) -> bool {
        (0..D).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Box scaled by `factor` about its center.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let half = self.extent() * (0.5 * factor);
        Self {
            min: c - half,
            max: c + half,
        }
    }

    /// True when some axis has non-positive extent.
    pub fn is_degenerate(&self) -> bool {
        (0..D).any(|a| self.max[a] <= self.min[a])
    }
}
