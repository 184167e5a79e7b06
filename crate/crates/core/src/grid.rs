//! Uniform cell-centered grids on axis-aligned boxes.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Geometry of a uniform cell-centered grid on `[0, L_1] x ... x [0, L_d]`
/// with the same number of cells along every axis.
///
/// Grid values are stored flat in row-major (C) order: axis 0 is slowest,
/// the last axis fastest. Cell centers sit at `(i + 1/2) * L / n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeom {
    dim: usize,
    points: usize,
    lengths: [f64; 3],
}

impl GridGeom {
    pub fn new(dim: usize, points_per_axis: usize, lengths: &[f64]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::config(format!("grid dimension {dim} not in 1..=3")));
        }
        if points_per_axis == 0 {
            return Err(Error::config("grid needs at least one cell per axis"));
        }
        if lengths.len() != dim {
            return Err(Error::config(format!(
                "{} side lengths given for a {dim}-dimensional box",
                lengths.len()
            )));
        }
        let mut ls = [1.0; 3];
        for (axis, &l) in lengths.iter().enumerate() {
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::config(format!("side length {l} on axis {axis}")));
            }
            ls[axis] = l;
        }
        Ok(GridGeom {
            dim,
            points: points_per_axis,
            lengths: ls,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn length(&self, axis: usize) -> f64 {
        debug_assert!(axis < self.dim);
        self.lengths[axis]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn cell_size(&self, axis: usize) -> f64 {
        self.length(axis) / self.points as f64
    }

    /// Volume (area, length) of one cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.cell_size(a)).product()
    }

    /// Coordinate of cell center `i` along `axis`.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        debug_assert!(i < self.points);
        (i as f64 + 0.5) * self.cell_size(axis)
    }

    /// Cell center position for a flat index, padded with zeros past `dim`.
    pub fn cell_center(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = self.center(axis, idx[axis]);
        }
        x
    }

    pub fn flatten(&self, idx: &[usize; 3]) -> usize {
        let mut flat = 0;
        for axis in 0..self.dim {
            debug_assert!(idx[axis] < self.points);
            flat = flat * self.points + idx[axis];
        }
        flat
    }

    pub fn unflatten(&self, mut flat: usize) -> [usize; 3] {
        debug_assert!(flat < self.len());
        let mut idx = [0usize; 3];
        for axis in (0..self.dim).rev() {
            idx[axis] = flat % self.points;
            flat /= self.points;
        }
        idx
    }

    /// Flat index of the cell whose center is nearest to `point`.
    ///
    /// `point` must lie in the closed box; coordinates past `dim` are ignored.
    pub fn nearest_cell(&self, point: &[f64]) -> Result<usize> {
        if point.len() < self.dim {
            return Err(Error::shape(format!(
                "point has {} coordinates, grid is {}-dimensional",
                point.len(),
                self.dim
            )));
        }
        let mut idx = [0usize; 3];
        for axis in 0..self.dim {
            let x = point[axis];
            let l = self.length(axis);
            if !x.is_finite() || x < 0.0 || x > l {
                return Err(Error::domain(format!(
                    "coordinate {x} outside [0, {l}] on axis {axis}"
                )));
            }
            let h = self.cell_size(axis);
            let i = (x / h - 0.5).round() as isize;
            idx[axis] = i.clamp(0, self.points as isize - 1) as usize;
        }
        Ok(self.flatten(&idx))
    }
}
