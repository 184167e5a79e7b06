//! Mergeable running statistics for chain output.
//!
//! Moments are tracked with Welford accumulators, which stay accurate over
//! long runs where naive sum-of-squares cancels badly. Accumulators from
//! independent chains combine exactly, so multi-chain summaries equal a
//! single pass over the concatenated draws up to rounding.

use serde::{Deserialize, Serialize};

use crate::levelset::LevelSetMap;
use crate::prior::{amplitude_rescale, Basis, SpectralField};
use crate::{Error, Result};

/// Running mean and second central moment of a scalar stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        self.mean += delta * nb / (na + nb);
        self.m2 += other.m2 + delta * delta * na * nb / (na + nb);
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Population variance of the stream so far.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// Componentwise Welford accumulator over fixed-length vectors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VecWelford {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VecWelford {
    pub fn new(len: usize) -> Self {
        VecWelford {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &VecWelford) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape(format!(
                "cannot merge accumulators of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / (na + nb);
            self.m2[i] += other.m2[i] + delta * delta * na * nb / (na + nb);
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        if self.count == 0 {
            vec![f64::NAN; self.mean.len()]
        } else {
            self.mean.clone()
        }
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            vec![f64::NAN; self.m2.len()]
        } else {
            self.m2.iter().map(|s| s / self.count as f64).collect()
        }
    }
}

/// How many leading modes keep full thinned traces for density diagnostics.
pub const TRACKED_MODES: usize = 5;

/// Everything accumulated from retained draws of one (or several merged)
/// chains: moments of the coefficients, of the pushforward phase grid, and
/// of the rescaled latent grid; thinned traces of the scalars and of the
/// leading coefficients; acceptance counters; and the thinned pushforward
/// frames themselves. Frames are bulky, so they are kept out of serialized
/// form and persist separately.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunningStats {
    pub coeff: VecWelford,
    pub pushforward: VecWelford,
    pub rescaled: VecWelford,
    pub tau: Welford,
    pub phi: Welford,
    pub tau_samples: Vec<f64>,
    pub phi_samples: Vec<f64>,
    /// Thinned traces of the first [`TRACKED_MODES`] coefficients, one
    /// outer entry per mode.
    pub mode_samples: Vec<Vec<f64>>,
    #[serde(skip)]
    pub frames: Vec<Vec<f64>>,
    pub accept_u: u64,
    pub total_u: u64,
    pub accept_tau: u64,
    pub total_tau: u64,
}

impl RunningStats {
    pub fn new(modes: usize, cells: usize) -> Self {
        RunningStats {
            coeff: VecWelford::new(modes),
            pushforward: VecWelford::new(cells),
            rescaled: VecWelford::new(cells),
            tau: Welford::default(),
            phi: Welford::default(),
            tau_samples: Vec::new(),
            phi_samples: Vec::new(),
            mode_samples: vec![Vec::new(); TRACKED_MODES.min(modes)],
            frames: Vec::new(),
            accept_u: 0,
            total_u: 0,
            accept_tau: 0,
            total_tau: 0,
        }
    }

    /// Number of retained draws.
    pub fn retained(&self) -> u64 {
        self.tau.count()
    }

    /// Folds in one retained draw.
    pub fn push(
        &mut self,
        coeffs: &[f64],
        pushforward: &[f64],
        rescaled: &[f64],
        tau: f64,
        phi: f64,
    ) {
        self.coeff.push(coeffs);
        self.pushforward.push(pushforward);
        self.rescaled.push(rescaled);
        self.tau.push(tau);
        self.phi.push(phi);
        self.tau_samples.push(tau);
        self.phi_samples.push(phi);
        for (k, trace) in self.mode_samples.iter_mut().enumerate() {
            trace.push(coeffs[k]);
        }
        self.frames.push(pushforward.to_vec());
    }

    /// Combines draws from another chain over the same model.
    pub fn merge(&mut self, other: &RunningStats) -> Result<()> {
        if self.mode_samples.len() != other.mode_samples.len() {
            return Err(Error::shape(
                "cannot merge statistics tracking different mode counts".to_string(),
            ));
        }
        self.coeff.merge(&other.coeff)?;
        self.pushforward.merge(&other.pushforward)?;
        self.rescaled.merge(&other.rescaled)?;
        self.tau.merge(&other.tau);
        self.phi.merge(&other.phi);
        self.tau_samples.extend_from_slice(&other.tau_samples);
        self.phi_samples.extend_from_slice(&other.phi_samples);
        for (mine, theirs) in self.mode_samples.iter_mut().zip(&other.mode_samples) {
            mine.extend_from_slice(theirs);
        }
        self.frames.extend(other.frames.iter().cloned());
        self.accept_u += other.accept_u;
        self.total_u += other.total_u;
        self.accept_tau += other.accept_tau;
        self.total_tau += other.total_tau;
        Ok(())
    }
}

/// Final report of a run: scalar posterior summaries plus the reported
/// reconstruction grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub retained: u64,
    pub tau_mean: f64,
    pub tau_std: f64,
    pub phi_mean: f64,
    pub accept_rate_u: f64,
    pub accept_rate_tau: f64,
    /// Mean of the thresholded field over retained draws.
    pub mean_pushforward: Vec<f64>,
    pub var_pushforward: Vec<f64>,
    /// Thresholded field of the mean latent state at the mean scale.
    pub pushforward_of_mean: Vec<f64>,
    /// Mean of the amplitude-rescaled latent grid.
    pub mean_rescaled: Vec<f64>,
}

/// Reduces accumulated statistics to the reported summary. With zero
/// retained draws the scalar entries are NaN and the grids empty.
pub fn finalize(stats: &RunningStats, basis: &Basis, levels: &LevelSetMap) -> Result<Summary> {
    let rate = |num: u64, den: u64| {
        if den == 0 {
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    };
    if stats.retained() == 0 {
        return Ok(Summary {
            retained: 0,
            tau_mean: f64::NAN,
            tau_std: f64::NAN,
            phi_mean: f64::NAN,
            accept_rate_u: rate(stats.accept_u, stats.total_u),
            accept_rate_tau: rate(stats.accept_tau, stats.total_tau),
            mean_pushforward: Vec::new(),
            var_pushforward: Vec::new(),
            pushforward_of_mean: Vec::new(),
            mean_rescaled: Vec::new(),
        });
    }
    let mean_tau = stats.tau.mean();
    let mean_field = SpectralField {
        coeffs: stats.coeff.mean(),
    };
    let mean_grid = basis.synthesize(&mean_field)?;
    let phase_of_mean = levels.apply(&mean_grid, mean_tau)?;
    Ok(Summary {
        retained: stats.retained(),
        tau_mean: mean_tau,
        tau_std: stats.tau.std(),
        phi_mean: stats.phi.mean(),
        accept_rate_u: rate(stats.accept_u, stats.total_u),
        accept_rate_tau: rate(stats.accept_tau, stats.total_tau),
        mean_pushforward: stats.pushforward.mean(),
        var_pushforward: stats.pushforward.variance(),
        pushforward_of_mean: levels.field_values(&phase_of_mean),
        mean_rescaled: stats.rescaled.mean(),
    })
}

/// Rescaled grid for one draw, as accumulated into [`RunningStats`].
pub fn rescaled_grid(basis: &Basis, grid: &[f64], tau: f64) -> Vec<f64> {
    let spec = basis.spec();
    amplitude_rescale(grid, tau, spec.alpha(), spec.dim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn welford_matches_direct_formulas() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        let mut w = Welford::default();
        for &x in &xs {
            w.push(x);
        }
        assert_eq!(w.count(), 8);
        assert!((w.mean() - 5.0).abs() < 1e-15);
        assert!((w.variance() - 4.0).abs() < 1e-15);
        assert!((w.std() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_accumulators_report_nan() {
        let w = Welford::default();
        assert!(w.mean().is_nan());
        assert!(w.variance().is_nan());
        let v = VecWelford::new(3);
        assert!(v.mean().iter().all(|m| m.is_nan()));
    }

    #[test]
    fn vec_welford_agrees_with_scalar_components() {
        let rows = [[1.0, -2.0], [0.5, 3.0], [2.5, 0.0], [-1.0, 1.0]];
        let mut v = VecWelford::new(2);
        let mut a = Welford::default();
        let mut b = Welford::default();
        for row in rows {
            v.push(&row);
            a.push(row[0]);
            b.push(row[1]);
        }
        assert!((v.mean()[0] - a.mean()).abs() < 1e-15);
        assert!((v.mean()[1] - b.mean()).abs() < 1e-15);
        assert!((v.variance()[0] - a.variance()).abs() < 1e-15);
        assert!((v.variance()[1] - b.variance()).abs() < 1e-15);
    }

    #[test]
    fn merge_rejects_length_mismatch() {
        let mut a = VecWelford::new(2);
        let b = VecWelford::new(3);
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn merging_into_empty_copies() {
        let mut a = Welford::default();
        let mut b = Welford::default();
        b.push(1.0);
        b.push(3.0);
        a.merge(&b);
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn split_merge_equals_single_pass(
            xs in proptest::collection::vec(-100.0f64..100.0, 2..60),
            cut in 0usize..60,
        ) {
            let cut = cut.min(xs.len());
            let mut whole = Welford::default();
            for &x in &xs {
                whole.push(x);
            }
            let mut left = Welford::default();
            for &x in &xs[..cut] {
                left.push(x);
            }
            let mut right = Welford::default();
            for &x in &xs[cut..] {
                right.push(x);
            }
            left.merge(&right);
            prop_assert_eq!(left.count(), whole.count());
            prop_assert!((left.mean() - whole.mean()).abs() < 1e-10);
            prop_assert!((left.variance() - whole.variance()).abs() < 1e-10);
        }
    }

    #[test]
    fn running_stats_merge_concatenates_traces() {
        let mut a = RunningStats::new(6, 4);
        let mut b = RunningStats::new(6, 4);
        let coeffs = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let grid = vec![1.0; 4];
        a.push(&coeffs, &grid, &grid, 10.0, 0.5);
        b.push(&coeffs, &grid, &grid, 20.0, 1.5);
        b.push(&coeffs, &grid, &grid, 30.0, 2.5);
        a.accept_u = 3;
        a.total_u = 10;
        b.accept_u = 5;
        b.total_u = 10;
        a.merge(&b).unwrap();
        assert_eq!(a.retained(), 3);
        assert_eq!(a.tau_samples, vec![10.0, 20.0, 30.0]);
        assert_eq!(a.mode_samples.len(), 5);
        assert_eq!(a.mode_samples[2], vec![3.0, 3.0, 3.0]);
        assert_eq!(a.accept_u, 8);
        assert_eq!(a.total_u, 20);
        assert!((a.tau.mean() - 20.0).abs() < 1e-15);
        assert_eq!(a.frames.len(), 3);
    }

    #[test]
    fn serialized_stats_skip_frames() {
        let mut s = RunningStats::new(6, 2);
        s.push(&[0.0; 6], &[1.0, 2.0], &[0.1, 0.2], 5.0, 0.0);
        let json = serde_json::to_string(&s).unwrap();
        assert!(!json.contains("frames"));
        let back: RunningStats = serde_json::from_str(&json).unwrap();
        assert_eq!(back.retained(), 1);
        assert!(back.frames.is_empty());
        assert_eq!(back.tau_samples, s.tau_samples);
    }
}
