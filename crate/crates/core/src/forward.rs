//! Observation operators mapping grid fields to data vectors.
//!
//! Point values of a piecewise-constant field jump under arbitrarily small
//! perturbations of the interface, so raw point evaluation makes a poor
//! observation functional. The observers here average the field against a
//! narrow Gaussian kernel instead: cell `c` gets weight proportional to
//! `exp(-d_c^2 / (2 eps^2))` where `d_c` is the distance from the cell
//! center to the observation point. Weights are computed relative to the
//! closest cell before exponentiating, which keeps them finite for any
//! `eps` and recovers exact nearest-cell evaluation as `eps` shrinks to
//! zero.

use crate::grid::GridGeom;
use crate::{Error, Result};

/// Maps a field on a fixed grid to a vector of observations.
pub trait ForwardModel: Send + Sync {
    /// Length of the observation vector.
    fn observation_count(&self) -> usize;

    /// Observes one field; `field` holds the per-cell values of the grid
    /// the model was built for.
    fn observe(&self, field: &[f64]) -> Result<Vec<f64>>;
}

/// Kernel-smoothed point evaluation at a fixed set of locations.
#[derive(Clone, Debug)]
pub struct SmoothedPointObserver {
    weights: Vec<f64>,
    cells: usize,
    points: usize,
}

impl SmoothedPointObserver {
    /// Builds the observer for `points` inside the domain box of `geom`.
    /// `epsilon` is the kernel width; zero selects the nearest cell center
    /// outright (ties averaged).
    pub fn new(geom: &GridGeom, points: &[[f64; 3]], epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::config(format!(
                "kernel width must be nonnegative, got {epsilon}"
            )));
        }
        if points.is_empty() {
            return Err(Error::config("at least one observation point required".to_string()));
        }
        let cells = geom.len();
        let d = geom.dim();
        let mut weights = vec![0.0; points.len() * cells];
        let mut dist2 = vec![0.0; cells];
        for (p, point) in points.iter().enumerate() {
            for (axis, &x) in point[..d].iter().enumerate() {
                if !(0.0..=geom.length(axis)).contains(&x) {
                    return Err(Error::domain(format!(
                        "observation point {p} lies outside the domain on axis {axis}: {x}"
                    )));
                }
            }
            let mut min_d2 = f64::INFINITY;
            for (c, slot) in dist2.iter_mut().enumerate() {
                let center = geom.cell_center(c);
                let d2: f64 = (0..d).map(|a| (point[a] - center[a]).powi(2)).sum();
                *slot = d2;
                min_d2 = min_d2.min(d2);
            }
            let row = &mut weights[p * cells..(p + 1) * cells];
            if epsilon == 0.0 {
                let hits = dist2.iter().filter(|&&d2| d2 == min_d2).count() as f64;
                for (w, &d2) in row.iter_mut().zip(&dist2) {
                    *w = if d2 == min_d2 { 1.0 / hits } else { 0.0 };
                }
            } else {
                let inv = 1.0 / (2.0 * epsilon * epsilon);
                let mut total = 0.0;
                for (w, &d2) in row.iter_mut().zip(&dist2) {
                    *w = (-(d2 - min_d2) * inv).exp();
                    total += *w;
                }
                for w in row.iter_mut() {
                    *w /= total;
                }
            }
        }
        Ok(SmoothedPointObserver {
            weights,
            cells,
            points: points.len(),
        })
    }

    /// Kernel weights for observation `p`, one entry per cell.
    pub fn kernel_row(&self, p: usize) -> &[f64] {
        &self.weights[p * self.cells..(p + 1) * self.cells]
    }

    /// Number of grid cells the observer reads.
    pub fn cell_count(&self) -> usize {
        self.cells
    }
}

impl ForwardModel for SmoothedPointObserver {
    fn observation_count(&self) -> usize {
        self.points
    }

    fn observe(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.cells {
            return Err(Error::shape(format!(
                "field has {} cells, observer expects {}",
                field.len(),
                self.cells
            )));
        }
        let out = (0..self.points)
            .map(|p| {
                let row = self.kernel_row(p);
                let mut acc = 0.0;
                for (w, v) in row.iter().zip(field) {
                    acc += w * v;
                }
                acc
            })
            .collect();
        Ok(out)
    }
}

/// Regular lattice of observation points: `per_axis` points per axis at
/// fractions `(i + 1/2) / per_axis` of each side length, ordered row-major
/// with axis 0 slowest.
pub fn uniform_points(geom: &GridGeom, per_axis: usize) -> Result<Vec<[f64; 3]>> {
    if per_axis == 0 {
        return Err(Error::config(
            "observation lattice needs at least one point per axis".to_string(),
        ));
    }
    let d = geom.dim();
    let total = per_axis.pow(d as u32);
    let mut points = Vec::with_capacity(total);
    for flat in 0..total {
        let mut point = [0.0f64; 3];
        let mut rest = flat;
        for axis in (0..d).rev() {
            let i = rest % per_axis;
            rest /= per_axis;
            point[axis] = (i as f64 + 0.5) / per_axis as f64 * geom.length(axis);
        }
        points.push(point);
    }
    Ok(points)
}
