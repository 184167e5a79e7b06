//! Metropolis-within-Gibbs sampler over the latent field and its inverse
//! length scale.
//!
//! Each sweep makes two moves. The field move is a preconditioned
//! Crank-Nicolson proposal, which is reversible for the prior at the
//! current scale, so its acceptance probability involves only the misfit
//! difference and survives mesh refinement. The scale move is a Gaussian
//! random walk on `tau` accepted with the misfit change, the density ratio
//! of the two priors at the current field, and the hyperprior ratio.
//!
//! Draw order per sweep is fixed: one standard normal per mode for the
//! field proposal, at most one uniform for its accept decision, one normal
//! for the scale proposal, at most one uniform for its accept decision.
//! Rejections that fall below the scale floor consume no uniform. Together
//! with a counter-based generator seeded from the config, this makes runs
//! bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::levelset::PhaseField;
use crate::posterior::Posterior;
use crate::prior::{log_prior_ratio_modes, Basis, SpectralField};
use crate::stats::{rescaled_grid, RunningStats};
use crate::{Error, Result};

/// Gaussian prior on the inverse length scale, restricted to positive
/// values by the sampler's floor. Densities are left unnormalized; the
/// truncation constant cancels in acceptance ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperprior {
    pub mean: f64,
    pub std: f64,
}

impl Hyperprior {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err(Error::config(format!(
                "hyperprior needs a finite mean and positive width, got {mean} and {std}"
            )));
        }
        Ok(Hyperprior { mean, std })
    }

    /// Unnormalized log density.
    pub fn log_density(&self, tau: f64) -> f64 {
        let z = (tau - self.mean) / self.std;
        -0.5 * z * z
    }
}

/// Everything that determines one chain besides the model itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Crank-Nicolson step size in (0, 1].
    pub beta: f64,
    /// Random walk width of the scale move.
    pub tau_proposal_std: f64,
    pub hyperprior: Hyperprior,
    /// Scale proposals at or below this floor are rejected outright.
    pub tau_min: f64,
    /// Initial scale; the initial field is drawn from the prior at it.
    pub tau0: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config(format!(
                "crank-nicolson step must lie in (0, 1], got {}",
                self.beta
            )));
        }
        if !(self.tau_proposal_std.is_finite() && self.tau_proposal_std > 0.0) {
            return Err(Error::config(format!(
                "scale proposal width must be positive, got {}",
                self.tau_proposal_std
            )));
        }
        Hyperprior::new(self.hyperprior.mean, self.hyperprior.std)?;
        if !(self.tau_min.is_finite() && self.tau_min > 0.0) {
            return Err(Error::config(format!(
                "scale floor must be positive, got {}",
                self.tau_min
            )));
        }
        if !(self.tau0.is_finite() && self.tau0 > self.tau_min) {
            return Err(Error::config(format!(
                "initial scale {} must exceed the floor {}",
                self.tau0, self.tau_min
            )));
        }
        if self.burn_in > self.n_steps {
            return Err(Error::config(format!(
                "burn-in {} exceeds the step count {}",
                self.burn_in, self.n_steps
            )));
        }
        if self.thinning == 0 {
            return Err(Error::config("thinning must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// One sweep's worth of trace output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub tau: f64,
    pub phi: f64,
    pub accept_u: bool,
    pub accept_tau: bool,
}

/// Receives every sweep's record, typically a trace writer.
pub trait StepSink {
    fn record(&mut self, record: &StepRecord) -> Result<()>;
}

/// Discards records.
pub struct NullSink;

impl StepSink for NullSink {
    fn record(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
}

fn metropolis_accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    debug_assert!(!log_alpha.is_nan(), "acceptance ratio is NaN");
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

/// Log acceptance ratio of a scale move from `tau` to `gamma` at the field
/// `coeffs`, computed from scratch. The chain itself reuses cached misfits;
/// this standalone form exists so tests can pin the kernel against
/// independently computed densities.
pub fn tau_move_log_ratio(
    basis: &Basis,
    post: &Posterior,
    hyper: &Hyperprior,
    coeffs: &SpectralField,
    tau: f64,
    gamma: f64,
) -> Result<f64> {
    let grid = basis.synthesize(coeffs)?;
    let phi_tau = post.phi(&post.levels().apply(&grid, tau)?)?;
    let phi_gamma = post.phi(&post.levels().apply(&grid, gamma)?)?;
    let prior = log_prior_ratio_modes(
        basis.nus(),
        &coeffs.coeffs,
        basis.spec().alpha(),
        tau,
        gamma,
    );
    Ok((phi_tau - phi_gamma) + prior + hyper.log_density(gamma) - hyper.log_density(tau))
}

/// One Markov chain with its full current state.
pub struct Chain<'a> {
    basis: &'a Basis,
    post: &'a Posterior,
    cfg: ChainConfig,
    rng: ChaCha8Rng,
    coeffs: Vec<f64>,
    tau: f64,
    sqrt_lambda: Vec<f64>,
    grid: Option<Vec<f64>>,
    phase: Option<PhaseField>,
    phi: f64,
}

impl<'a> Chain<'a> {
    pub fn new(basis: &'a Basis, post: &'a Posterior, cfg: ChainConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = basis.spec();
        if post.levels().alpha() != spec.alpha() || post.levels().dim() != spec.dim() {
            return Err(Error::config(
                "level set map and prior disagree on smoothness or dimension".to_string(),
            ));
        }
        if *post.geom() != spec.geom() {
            return Err(Error::config(
                "posterior grid does not match the prior basis grid".to_string(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let field = basis.sample_prior(cfg.tau0, &mut rng);
        let sqrt_lambda = basis
            .eigenvalues(cfg.tau0)
            .iter()
            .map(|l| l.sqrt())
            .collect();
        let mut chain = Chain {
            basis,
            post,
            cfg,
            rng,
            coeffs: field.coeffs,
            tau: cfg.tau0,
            sqrt_lambda,
            grid: None,
            phase: None,
            phi: 0.0,
        };
        if !post.is_flat() {
            let grid = basis.synthesize(&chain.field())?;
            let phase = post.levels().apply(&grid, chain.tau)?;
            chain.phi = post.phi(&phase)?;
            chain.grid = Some(grid);
            chain.phase = Some(phase);
        }
        Ok(chain)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn field(&self) -> SpectralField {
        SpectralField {
            coeffs: self.coeffs.clone(),
        }
    }

    /// Misfit of a candidate phase grid, reusing the cached value when the
    /// phase assignment is unchanged.
    fn phi_for(&self, phase: &PhaseField) -> Result<f64> {
        if self.phase.as_ref() == Some(phase) {
            Ok(self.phi)
        } else {
            self.post.phi(phase)
        }
    }

    /// Crank-Nicolson move of the field at the current scale.
    fn update_field(&mut self) -> Result<bool> {
        let beta = self.cfg.beta;
        let keep = (1.0 - beta * beta).sqrt();
        let proposal: Vec<f64> = self
            .coeffs
            .iter()
            .zip(&self.sqrt_lambda)
            .map(|(&u, &s)| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                keep * u + beta * s * z
            })
            .collect();

        if self.post.is_flat() {
            self.coeffs = proposal;
            return Ok(true);
        }

        let grid = self.basis.synthesize(&SpectralField { coeffs: proposal.clone() })?;
        let phase = self.post.levels().apply(&grid, self.tau)?;
        let phi = self.phi_for(&phase)?;
        let accepted = metropolis_accept(self.phi - phi, &mut self.rng);
        if accepted {
            self.coeffs = proposal;
            self.grid = Some(grid);
            self.phase = Some(phase);
            self.phi = phi;
        }
        Ok(accepted)
    }

    /// Random walk move of the scale at the current field.
    fn update_tau(&mut self) -> Result<bool> {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let gamma = self.tau + self.cfg.tau_proposal_std * z;
        if gamma <= self.cfg.tau_min {
            return Ok(false);
        }

        let (phase, phi) = if self.post.is_flat() {
            (None, 0.0)
        } else {
            let grid = self.grid.as_ref().expect("non-flat chains keep the grid");
            let phase = self.post.levels().apply(grid, gamma)?;
            let phi = self.phi_for(&phase)?;
            (Some(phase), phi)
        };

        let log_alpha = (self.phi - phi)
            + log_prior_ratio_modes(
                self.basis.nus(),
                &self.coeffs,
                self.basis.spec().alpha(),
                self.tau,
                gamma,
            )
            + self.cfg.hyperprior.log_density(gamma)
            - self.cfg.hyperprior.log_density(self.tau);

        let accepted = metropolis_accept(log_alpha, &mut self.rng);
        if accepted {
            self.tau = gamma;
            self.sqrt_lambda = self
                .basis
                .eigenvalues(gamma)
                .iter()
                .map(|l| l.sqrt())
                .collect();
            self.phase = phase;
            self.phi = phi;
        }
        Ok(accepted)
    }

    fn accumulate(&mut self, stats: &mut RunningStats) -> Result<()> {
        let grid = match &self.grid {
            Some(g) => g.clone(),
            None => self.basis.synthesize(&self.field())?,
        };
        let phase = match &self.phase {
            Some(p) => p.clone(),
            None => self.post.levels().apply(&grid, self.tau)?,
        };
        let pushforward = self.post.levels().field_values(&phase);
        let rescaled = rescaled_grid(self.basis, &grid, self.tau);
        stats.push(&self.coeffs, &pushforward, &rescaled, self.tau, self.phi);
        Ok(())
    }

    /// Runs the configured number of sweeps, reporting each to `sink` and
    /// accumulating retained draws past burn-in at the thinning cadence.
    pub fn run(&mut self, sink: &mut dyn StepSink) -> Result<RunningStats> {
        let mut stats = RunningStats::new(self.coeffs.len(), self.basis.cell_count());
        for step in 0..self.cfg.n_steps {
            let accept_u = self.update_field()?;
            let accept_tau = self.update_tau()?;
            stats.total_u += 1;
            stats.accept_u += accept_u as u64;
            stats.total_tau += 1;
            stats.accept_tau += accept_tau as u64;
            sink.record(&StepRecord {
                step,
                tau: self.tau,
                phi: self.phi,
                accept_u,
                accept_tau,
            })?;
            if step >= self.cfg.burn_in && (step - self.cfg.burn_in) % self.cfg.thinning == 0 {
                self.accumulate(&mut stats)?;
            }
        }
        Ok(stats)
    }
}
