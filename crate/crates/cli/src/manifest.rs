use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hierls_core::darcy::{DarcyModel, DarcySetup};
use hierls_core::forward::{uniform_points, ForwardModel, SmoothedPointObserver};
use hierls_core::grid::GridGeom;
use hierls_core::levelset::LevelSetMap;
use hierls_core::posterior::NoiseSpec;
use hierls_core::prior::{BoundaryKind, PriorSpec};
use hierls_core::sampler::{ChainConfig, Hyperprior};

use crate::error::{io_err, CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment, fully described: a manifest plus a seed determines every
/// output byte. Unknown keys are rejected so typos surface as errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub prior: PriorSection,
    pub levelset: LevelSetSection,
    pub truth: TruthSection,
    pub observations: ObservationSection,
    pub noise: NoiseSection,
    pub hyperprior: HyperpriorSection,
    pub chain: ChainSection,
    #[serde(default)]
    pub darcy: Option<DarcySection>,
    pub paths: PathsSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Identity,
    Groundwater,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Identity => "identity",
            Experiment::Groundwater => "groundwater",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub alpha: f64,
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub boundary: BoundaryKind,
    /// Cells per axis for the inversion grid.
    pub grid: usize,
    /// Cells per axis for the grid the truth lives on.
    pub truth_grid: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSetSection {
    pub levels: Vec<f64>,
    pub phases: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthSection {
    /// Draw the truth from the prior at a pinned scale.
    Sample { tau: f64, seed: u64 },
    /// Load an externally supplied phase-index grid.
    External { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    pub per_axis: usize,
    #[serde(default)]
    pub epsilon: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSection {
    Fixed { sigma: f64, seed: u64 },
    Relative { factor: f64, seed: u64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperpriorSection {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub beta: f64,
    pub tau_proposal_std: f64,
    pub tau_min: f64,
    pub tau0: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcySection {
    pub bottom_head: f64,
    pub left_influx: f64,
    pub recharge_levels: [f64; 3],
    pub recharge_breaks: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub truth_dir: PathBuf,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

/// A manifest together with its content hash and the directory it was read
/// from; relative paths inside the manifest resolve against that directory.
#[derive(Debug)]
pub struct Loaded {
    pub manifest: Manifest,
    pub hash: String,
    pub dir: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| io_err("reading manifest", path, e))?;
        let hash = hex_digest(&bytes);
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::config(format!("manifest {} is not UTF-8", path.display())))?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("in {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let loaded = Loaded {
            manifest,
            hash,
            dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Every check that does not need the input files' contents: section
    /// cross-consistency plus construction of each core object, so that a
    /// manifest that loads cleanly is one every command can execute.
    fn validate(&self) -> CliResult<()> {
        let m = &self.manifest;
        if m.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "schema_version {} not recognized; this build reads {SCHEMA_VERSION}",
                m.schema_version
            )));
        }
        m.inversion_spec()?;
        m.truth_spec()?;
        m.level_set()?;
        m.chain_config(None)?;
        m.noise_spec().sigmas(&[1.0])?;
        if m.observations.per_axis == 0 {
            return Err(CliError::config(
                "observations.per_axis must be at least 1",
            ));
        }
        if !(m.observations.epsilon.is_finite() && m.observations.epsilon >= 0.0) {
            return Err(CliError::config(format!(
                "observations.epsilon must be a nonnegative number, got {}",
                m.observations.epsilon
            )));
        }
        match m.experiment {
            Experiment::Identity => {
                if m.darcy.is_some() {
                    return Err(CliError::config(
                        "the [darcy] section applies only to groundwater experiments",
                    ));
                }
            }
            Experiment::Groundwater => {
                if m.prior.dim != 2 {
                    return Err(CliError::config(format!(
                        "groundwater experiments are two-dimensional, got prior.dim = {}",
                        m.prior.dim
                    )));
                }
                if m.observations.epsilon == 0.0 {
                    return Err(CliError::config(
                        "groundwater experiments observe smoothed heads; \
                         observations.epsilon must be positive",
                    ));
                }
            }
        }
        match &m.truth {
            TruthSection::Sample { tau, .. } => {
                if !(tau.is_finite() && *tau > 0.0) {
                    return Err(CliError::config(format!(
                        "truth.tau must be a positive number, got {tau}"
                    )));
                }
            }
            TruthSection::External { path } => {
                let resolved = self.resolve(path);
                if !resolved.is_file() {
                    return Err(CliError::config(format!(
                        "truth.path {} does not exist",
                        resolved.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolves a manifest-declared path against the manifest's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn truth_dir(&self, out: Option<&Path>) -> PathBuf {
        out.map(Path::to_path_buf)
            .unwrap_or_else(|| self.resolve(&self.manifest.paths.truth_dir))
    }

    pub fn data_dir(&self, out: Option<&Path>) -> PathBuf {
        out.map(Path::to_path_buf)
            .unwrap_or_else(|| self.resolve(&self.manifest.paths.data_dir))
    }

    pub fn run_dir(&self, out: Option<&Path>) -> PathBuf {
        out.map(Path::to_path_buf)
            .unwrap_or_else(|| self.resolve(&self.manifest.paths.run_dir))
    }
}

impl Manifest {
    pub fn inversion_spec(&self) -> CliResult<PriorSpec> {
        self.spec_with_grid(self.prior.grid)
    }

    pub fn truth_spec(&self) -> CliResult<PriorSpec> {
        self.spec_with_grid(self.prior.truth_grid)
    }

    fn spec_with_grid(&self, grid: usize) -> CliResult<PriorSpec> {
        Ok(PriorSpec::new(
            self.prior.alpha,
            self.prior.dim,
            &self.prior.lengths,
            self.prior.boundary,
            grid,
        )?)
    }

    pub fn level_set(&self) -> CliResult<LevelSetMap> {
        Ok(LevelSetMap::new(
            self.levelset.levels.clone(),
            self.levelset.phases.clone(),
            self.prior.alpha,
            self.prior.dim,
        )?)
    }

    pub fn chain_config(&self, seed_override: Option<u64>) -> CliResult<ChainConfig> {
        let c = &self.chain;
        let cfg = ChainConfig {
            beta: c.beta,
            tau_proposal_std: c.tau_proposal_std,
            hyperprior: Hyperprior::new(self.hyperprior.mean, self.hyperprior.std)?,
            tau_min: c.tau_min,
            tau0: c.tau0,
            n_steps: c.n_steps,
            burn_in: c.burn_in,
            thinning: c.thinning,
            seed: seed_override.unwrap_or(c.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        match self.noise {
            NoiseSection::Fixed { sigma, .. } => NoiseSpec::Fixed(sigma),
            NoiseSection::Relative { factor, .. } => NoiseSpec::Relative(factor),
        }
    }

    pub fn noise_seed(&self, seed_override: Option<u64>) -> u64 {
        seed_override.unwrap_or(match self.noise {
            NoiseSection::Fixed { seed, .. } | NoiseSection::Relative { seed, .. } => seed,
        })
    }

    pub fn darcy_setup(&self) -> DarcySetup {
        match &self.darcy {
            Some(d) => DarcySetup {
                bottom_head: d.bottom_head,
                left_influx: d.left_influx,
                recharge_levels: d.recharge_levels,
                recharge_breaks: d.recharge_breaks,
            },
            None => DarcySetup::default(),
        }
    }

    pub fn observer(&self, geom: &GridGeom) -> CliResult<SmoothedPointObserver> {
        let points = uniform_points(geom, self.observations.per_axis)?;
        Ok(SmoothedPointObserver::new(
            geom,
            &points,
            self.observations.epsilon,
        )?)
    }

    /// The forward map on a given grid: plain observation for the identity
    /// experiment, a flow solve feeding the observer for groundwater.
    pub fn forward(&self, geom: &GridGeom) -> CliResult<Box<dyn ForwardModel>> {
        let observer = self.observer(geom)?;
        match self.experiment {
            Experiment::Identity => Ok(Box::new(observer)),
            Experiment::Groundwater => {
                let problem = self.darcy_setup().problem(geom)?;
                Ok(Box::new(DarcyModel::new(problem, observer)?))
            }
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
