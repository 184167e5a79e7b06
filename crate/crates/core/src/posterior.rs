//! Data misfit and synthetic data generation.
//!
//! The misfit of a latent field is computed through its phase field only:
//! threshold, assign phase values, push through the forward model, and
//! measure the noise-weighted squared distance to the data. A posterior
//! built without data has misfit identically zero and reduces the sampler
//! to a prior sampler, which several statistical checks rely on.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::forward::ForwardModel;
use crate::grid::GridGeom;
use crate::levelset::{LevelSetMap, PhaseField};
use crate::{Error, Result};

/// Observed data with its per-observation noise scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataVector {
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Noise magnitude rule used when generating synthetic data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    /// One absolute scale for every observation.
    Fixed(f64),
    /// Scale proportional to the magnitude of the clean observation.
    Relative(f64),
}

impl NoiseSpec {
    /// Noise scales for a clean observation vector. Zero scales are
    /// permitted here (noise-free data); fitting against such data is
    /// rejected later when the misfit is constructed.
    pub fn sigmas(&self, clean: &[f64]) -> Result<Vec<f64>> {
        let check = |s: f64| -> Result<f64> {
            if s.is_finite() && s >= 0.0 {
                Ok(s)
            } else {
                Err(Error::config(format!(
                    "noise scale must be nonnegative, got {s}"
                )))
            }
        };
        match *self {
            NoiseSpec::Fixed(s) => {
                let s = check(s)?;
                Ok(vec![s; clean.len()])
            }
            NoiseSpec::Relative(f) => {
                let f = check(f)?;
                clean.iter().map(|g| check(f * g.abs())).collect()
            }
        }
    }
}

/// Draws `y_j = g_j + sigma_j z_j` with independent standard normal `z_j`,
/// consuming one normal per observation in order.
pub fn generate_data<R: Rng + ?Sized>(
    clean: &[f64],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<DataVector> {
    let sigma = noise.sigmas(clean)?;
    let y = clean
        .iter()
        .zip(&sigma)
        .map(|(g, s)| {
            let z: f64 = StandardNormal.sample(rng);
            g + s * z
        })
        .collect();
    Ok(DataVector { y, sigma })
}

struct Model {
    forward: Box<dyn ForwardModel>,
    y: Vec<f64>,
    inv_sigma: Vec<f64>,
}

/// Posterior ingredients shared by both Markov kernels: the thresholding
/// rule, the grid it acts on, and (unless flat) the forward model and data.
pub struct Posterior {
    levels: LevelSetMap,
    geom: GridGeom,
    model: Option<Model>,
}

impl Posterior {
    /// Posterior with no data: the misfit is identically zero.
    pub fn flat(levels: LevelSetMap, geom: GridGeom) -> Result<Self> {
        Self::check_pair(&levels, &geom)?;
        Ok(Posterior {
            levels,
            geom,
            model: None,
        })
    }

    pub fn new(
        levels: LevelSetMap,
        geom: GridGeom,
        forward: Box<dyn ForwardModel>,
        data: DataVector,
    ) -> Result<Self> {
        Self::check_pair(&levels, &geom)?;
        if data.y.len() != data.sigma.len() {
            return Err(Error::shape(format!(
                "{} observations but {} noise scales",
                data.y.len(),
                data.sigma.len()
            )));
        }
        if data.y.len() != forward.observation_count() {
            return Err(Error::shape(format!(
                "data has {} observations, forward model produces {}",
                data.y.len(),
                forward.observation_count()
            )));
        }
        if data.y.iter().any(|y| !y.is_finite()) {
            return Err(Error::domain("observations must be finite".to_string()));
        }
        let inv_sigma = data
            .sigma
            .iter()
            .map(|&s| {
                if s.is_finite() && s > 0.0 {
                    Ok(1.0 / s)
                } else {
                    Err(Error::domain(format!(
                        "noise scales must be positive to define a misfit, got {s}"
                    )))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Posterior {
            levels,
            geom,
            model: Some(Model {
                forward,
                y: data.y,
                inv_sigma,
            }),
        })
    }

    fn check_pair(levels: &LevelSetMap, geom: &GridGeom) -> Result<()> {
        if levels.dim() != geom.dim() {
            return Err(Error::config(format!(
                "level set map is {}-dimensional, grid is {}-dimensional",
                levels.dim(),
                geom.dim()
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> &LevelSetMap {
        &self.levels
    }

    pub fn geom(&self) -> &GridGeom {
        &self.geom
    }

    pub fn is_flat(&self) -> bool {
        self.model.is_none()
    }

    /// Noise-weighted squared distance of a predicted observation vector to
    /// the data: `1/2 sum_j ((y_j - g_j) / sigma_j)^2`.
    pub fn misfit(&self, predicted: &[f64]) -> Result<f64> {
        let Some(model) = &self.model else {
            return Ok(0.0);
        };
        if predicted.len() != model.y.len() {
            return Err(Error::shape(format!(
                "predicted vector has {} entries, data has {}",
                predicted.len(),
                model.y.len()
            )));
        }
        let mut acc = 0.0;
        for ((y, g), w) in model.y.iter().zip(predicted).zip(&model.inv_sigma) {
            let r = (y - g) * w;
            acc += r * r;
        }
        Ok(0.5 * acc)
    }

    /// Forward prediction for one phase assignment.
    pub fn predict(&self, phase: &PhaseField) -> Result<Option<Vec<f64>>> {
        let Some(model) = &self.model else {
            return Ok(None);
        };
        if phase.len() != self.geom.len() {
            return Err(Error::shape(format!(
                "phase field has {} cells, grid has {}",
                phase.len(),
                self.geom.len()
            )));
        }
        let field = self.levels.field_values(phase);
        model.forward.observe(&field).map(Some)
    }

    /// Misfit of one phase assignment; zero when flat.
    pub fn phi(&self, phase: &PhaseField) -> Result<f64> {
        match self.predict(phase)? {
            Some(g) => self.misfit(&g),
            None => Ok(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{uniform_points, SmoothedPointObserver};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_phase_levels() -> LevelSetMap {
        LevelSetMap::new(vec![-0.1, 0.1], vec![1.0, 3.0, 5.0], 5.0, 2).unwrap()
    }

    fn observer(geom: &GridGeom) -> Box<dyn ForwardModel> {
        let points = uniform_points(geom, 2).unwrap();
        Box::new(SmoothedPointObserver::new(geom, &points, 0.1).unwrap())
    }

    #[test]
    fn flat_posterior_has_zero_misfit() {
        let geom = GridGeom::new(2, 4, &[1.0, 1.0]).unwrap();
        let post = Posterior::flat(three_phase_levels(), geom).unwrap();
        let phase = PhaseField {
            indices: vec![1; 16],
        };
        assert_eq!(post.phi(&phase).unwrap(), 0.0);
        assert!(post.predict(&phase).unwrap().is_none());
        assert!(post.is_flat());
    }

    #[test]
    fn misfit_matches_a_hand_computation() {
        let geom = GridGeom::new(2, 4, &[1.0, 1.0]).unwrap();
        let data = DataVector {
            y: vec![1.0, 2.0, 0.0, 0.0],
            sigma: vec![0.5, 1.0, 1.0, 1.0],
        };
        let post = Posterior::new(three_phase_levels(), geom, observer(&geom), data).unwrap();
        // Predicted (2, 0, 0, 0): residuals (-1)/0.5 and 2/1.
        let phi = post.misfit(&[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((phi - 4.0).abs() < 1e-15);
    }

    #[test]
    fn exact_data_has_zero_misfit() {
        let geom = GridGeom::new(2, 8, &[1.0, 1.0]).unwrap();
        let levels = three_phase_levels();
        let phase = PhaseField {
            indices: (0..64).map(|c| (c % 3) as u8).collect(),
        };
        let fwd = observer(&geom);
        let clean = fwd.observe(&levels.field_values(&phase)).unwrap();
        let data = DataVector {
            sigma: vec![0.2; clean.len()],
            y: clean,
        };
        let post = Posterior::new(levels, geom, fwd, data).unwrap();
        assert!(post.phi(&phase).unwrap() < 1e-24);
    }

    #[test]
    fn construction_rejects_inconsistent_inputs() {
        let geom = GridGeom::new(2, 4, &[1.0, 1.0]).unwrap();
        let bad_sigma = DataVector {
            y: vec![0.0; 4],
            sigma: vec![0.2, 0.0, 0.2, 0.2],
        };
        assert!(Posterior::new(three_phase_levels(), geom, observer(&geom), bad_sigma).is_err());
        let short = DataVector {
            y: vec![0.0; 3],
            sigma: vec![0.2; 3],
        };
        assert!(Posterior::new(three_phase_levels(), geom, observer(&geom), short).is_err());
        let nan_y = DataVector {
            y: vec![0.0, f64::NAN, 0.0, 0.0],
            sigma: vec![0.2; 4],
        };
        assert!(Posterior::new(three_phase_levels(), geom, observer(&geom), nan_y).is_err());
        let levels_1d = LevelSetMap::new(vec![0.0], vec![1.0, 2.0], 5.0, 1).unwrap();
        assert!(Posterior::flat(levels_1d, geom).is_err());
    }

    #[test]
    fn noise_specs_scale_as_documented() {
        let clean = vec![10.0, -20.0, 0.0];
        assert_eq!(
            NoiseSpec::Fixed(0.3).sigmas(&clean).unwrap(),
            vec![0.3, 0.3, 0.3]
        );
        let rel = NoiseSpec::Relative(0.0175).sigmas(&clean).unwrap();
        assert!((rel[0] - 0.175).abs() < 1e-15);
        assert!((rel[1] - 0.35).abs() < 1e-15);
        assert_eq!(rel[2], 0.0);
        assert!(NoiseSpec::Fixed(-0.1).sigmas(&clean).is_err());
        assert!(NoiseSpec::Relative(f64::NAN).sigmas(&clean).is_err());
    }

    #[test]
    fn zero_noise_reproduces_the_clean_vector() {
        let clean = vec![1.0, 2.0, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = generate_data(&clean, &NoiseSpec::Fixed(0.0), &mut rng).unwrap();
        assert_eq!(data.y, clean);
    }

    #[test]
    fn data_generation_is_seeded() {
        let clean = vec![1.0; 8];
        let spec = NoiseSpec::Fixed(0.5);
        let a = generate_data(&clean, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate_data(&clean, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = generate_data(&clean, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.y, c.y);
        assert!(a.y.iter().any(|y| (y - 1.0).abs() > 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn misfit_is_bounded_by_the_weighted_norms(
            y in proptest::collection::vec(-5.0f64..5.0, 4),
            g in proptest::collection::vec(-5.0f64..5.0, 4),
            sig in proptest::collection::vec(0.1f64..2.0, 4),
        ) {
            let geom = GridGeom::new(2, 4, &[1.0, 1.0]).unwrap();
            let data = DataVector { y: y.clone(), sigma: sig.clone() };
            let post =
                Posterior::new(three_phase_levels(), geom, observer(&geom), data).unwrap();
            let phi = post.misfit(&g).unwrap();
            let norm = |v: &[f64]| {
                v.iter()
                    .zip(&sig)
                    .map(|(x, s)| (x / s) * (x / s))
                    .sum::<f64>()
                    .sqrt()
            };
            let bound = 0.5 * (norm(&y) + norm(&g)).powi(2);
            prop_assert!(phi >= 0.0);
            prop_assert!(phi <= bound + 1e-12);
        }

        #[test]
        fn misfit_is_locally_lipschitz_in_predictions(
            y in proptest::collection::vec(-5.0f64..5.0, 4),
            g1 in proptest::collection::vec(-5.0f64..5.0, 4),
            g2 in proptest::collection::vec(-5.0f64..5.0, 4),
            sig in proptest::collection::vec(0.1f64..2.0, 4),
        ) {
            let geom = GridGeom::new(2, 4, &[1.0, 1.0]).unwrap();
            let data = DataVector { y: y.clone(), sigma: sig.clone() };
            let post =
                Posterior::new(three_phase_levels(), geom, observer(&geom), data).unwrap();
            let norm = |v: &[f64]| {
                v.iter()
                    .zip(&sig)
                    .map(|(x, s)| (x / s) * (x / s))
                    .sum::<f64>()
                    .sqrt()
            };
            let diff: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
            let r1: Vec<f64> = y.iter().zip(&g1).map(|(a, b)| a - b).collect();
            let r2: Vec<f64> = y.iter().zip(&g2).map(|(a, b)| a - b).collect();
            let lhs = (post.misfit(&g1).unwrap() - post.misfit(&g2).unwrap()).abs();
            let rhs = 0.5 * (norm(&r1) + norm(&r2)) * norm(&diff);
            prop_assert!(lhs <= rhs + 1e-10);
        }
    }
}
