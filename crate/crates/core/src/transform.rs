//! Grid synthesis and analysis for the shared eigenbasis.
//!
//! Fields move between the coefficient table and cell-centered grid values
//! through one dense transform per axis. Each pass multiplies every line
//! along the current last axis by the per-axis matrix and writes the result
//! rotated, so after `d` passes every axis has been transformed and the
//! tensor is back in its original layout. Because the per-axis bases are
//! orthonormal under the quadrature inner product, analysis inverts
//! synthesis exactly up to rounding.

use rayon::prelude::*;

use crate::prior::{Basis, SpectralField};
use crate::{Error, Result};

/// Below this tensor size the per-line parallel split costs more than it
/// saves.
const PAR_MIN_LEN: usize = 1 << 16;

/// Applies `mat` (n by n, output-index major) to every length-`n` line of
/// `input` along its last axis, writing line `a` transposed into `output`
/// so the transformed axis becomes the slowest.
fn pass(input: &[f64], output: &mut [f64], mat: &[f64], n: usize) {
    let q = input.len() / n;
    debug_assert_eq!(q * n, input.len());
    debug_assert_eq!(input.len(), output.len());
    let row = |j: usize, out_row: &mut [f64]| {
        let mrow = &mat[j * n..(j + 1) * n];
        for (a, slot) in out_row.iter_mut().enumerate() {
            let line = &input[a * n..(a + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                acc += mrow[k] * line[k];
            }
            *slot = acc;
        }
    };
    if input.len() >= PAR_MIN_LEN {
        output
            .par_chunks_mut(q)
            .enumerate()
            .for_each(|(j, out_row)| row(j, out_row));
    } else {
        output
            .chunks_mut(q)
            .enumerate()
            .for_each(|(j, out_row)| row(j, out_row));
    }
}

impl Basis {
    /// Number of grid cells a synthesized field occupies.
    pub fn cell_count(&self) -> usize {
        self.spec().geom().len()
    }

    /// Evaluates the field on the grid of cell centers, row-major with
    /// axis 0 slowest.
    pub fn synthesize(&self, field: &SpectralField) -> Result<Vec<f64>> {
        if field.len() != self.mode_count() {
            return Err(Error::shape(format!(
                "field has {} coefficients, basis has {} modes",
                field.len(),
                self.mode_count()
            )));
        }
        let d = self.spec().dim();
        let n = self.spec().grid();
        let mut buf = vec![0.0; self.cell_count()];
        for (mode, &c) in self.modes().iter().zip(&field.coeffs) {
            buf[mode.pos] = c;
        }
        let mut tmp = vec![0.0; buf.len()];
        for p in 0..d {
            pass(&buf, &mut tmp, &self.axes[d - 1 - p].synth, n);
            std::mem::swap(&mut buf, &mut tmp);
        }
        Ok(buf)
    }

    /// Projects grid values onto the basis, discarding the constant mode.
    pub fn analyze(&self, values: &[f64]) -> Result<SpectralField> {
        if values.len() != self.cell_count() {
            return Err(Error::shape(format!(
                "grid has {} values, basis expects {}",
                values.len(),
                self.cell_count()
            )));
        }
        let d = self.spec().dim();
        let n = self.spec().grid();
        let mut buf = values.to_vec();
        let mut tmp = vec![0.0; buf.len()];
        for p in 0..d {
            pass(&buf, &mut tmp, &self.axes[d - 1 - p].anal, n);
            std::mem::swap(&mut buf, &mut tmp);
        }
        let coeffs = self.modes().iter().map(|m| buf[m.pos]).collect();
        Ok(SpectralField { coeffs })
    }
}
