//! Level set thresholding of latent fields into piecewise-constant phases.
//!
//! A field `u` drawn at inverse length scale `tau` is compared against
//! thresholds that shrink like `tau^(d/2 - alpha)`, the same rate at which
//! prior amplitudes shrink. Equivalently, and that is how it is computed
//! here, the rescaled field `tau^(alpha - d/2) u` is compared against fixed
//! base thresholds. The two views give bit-identical phase assignments, so
//! thresholding commutes with amplitude rescaling exactly, not only up to
//! rounding.

use serde::{Deserialize, Serialize};

use crate::prior::amplitude_scale;
use crate::{Error, Result};

/// Thresholding rule: base levels splitting the real line into phases, plus
/// the constant value each phase takes on the output field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetMap {
    levels: Vec<f64>,
    values: Vec<f64>,
    alpha: f64,
    dim: usize,
}

/// Phase assignment on a grid; entry `j` is the phase index of cell `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseField {
    pub indices: Vec<u8>,
}

impl PhaseField {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of cells assigned to each of `phases` phases.
    pub fn counts(&self, phases: usize) -> Vec<usize> {
        let mut counts = vec![0usize; phases];
        for &i in &self.indices {
            counts[i as usize] += 1;
        }
        counts
    }
}

impl LevelSetMap {
    /// `levels` are the base thresholds, strictly increasing; `values` holds
    /// one constant per phase, so exactly `levels.len() + 1` entries.
    pub fn new(levels: Vec<f64>, values: Vec<f64>, alpha: f64, dim: usize) -> Result<Self> {
        if levels.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("thresholds must be finite".to_string()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "thresholds must be strictly increasing".to_string(),
            ));
        }
        if values.len() != levels.len() + 1 {
            return Err(Error::config(format!(
                "{} thresholds split the line into {} phases, got {} phase values",
                levels.len(),
                levels.len() + 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("phase values must be finite".to_string()));
        }
        if values.len() > u8::MAX as usize + 1 {
            return Err(Error::config(format!(
                "at most 256 phases are supported, got {}",
                values.len()
            )));
        }
        if !alpha.is_finite() || alpha <= dim as f64 / 2.0 {
            return Err(Error::config(format!(
                "smoothness exponent alpha = {alpha} must exceed d/2 = {}",
                dim as f64 / 2.0
            )));
        }
        Ok(LevelSetMap {
            levels,
            values,
            alpha,
            dim,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn phase_values(&self) -> &[f64] {
        &self.values
    }

    pub fn phase_count(&self) -> usize {
        self.values.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Thresholds as applied to the raw (unrescaled) field at scale `tau`.
    pub fn thresholds(&self, tau: f64) -> Vec<f64> {
        let s = amplitude_scale(tau, self.alpha, self.dim);
        self.levels.iter().map(|c| c / s).collect()
    }

    /// Phase index of a single rescaled field value. A value equal to a
    /// threshold belongs to the phase above it.
    pub fn phase_of(&self, rescaled: f64) -> u8 {
        self.levels.partition_point(|&c| c <= rescaled) as u8
    }

    /// Thresholds the field `values` drawn at scale `tau`.
    pub fn apply(&self, values: &[f64], tau: f64) -> Result<PhaseField> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::domain(format!(
                "inverse length scale must be positive, got {tau}"
            )));
        }
        let s = amplitude_scale(tau, self.alpha, self.dim);
        let indices = values.iter().map(|&v| self.phase_of(s * v)).collect();
        Ok(PhaseField { indices })
    }

    /// Constant field value for each cell of a phase assignment.
    pub fn field_values(&self, phase: &PhaseField) -> Vec<f64> {
        phase
            .indices
            .iter()
            .map(|&i| self.values[i as usize])
            .collect()
    }
}
