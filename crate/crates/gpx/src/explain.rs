//! The local-explanation pipeline: sample a Gaussian noise set around the
//! query point, label it with the black-box oracle, evolve a symbolic
//! surrogate, and report the expression with its fidelity and gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gp::{evolve, GpConfig};
use crate::oracle::Oracle;
use crate::scalar::Real;
use crate::{Error, Scalar, Task};

/// Floor applied to measured per-feature scales so constant training
/// columns still produce a usable noise distribution.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Default noise-set size.
pub const DEFAULT_NOISE_SIZE: usize = 1000;

/// Gaussian sample cloud around a query point.
#[derive(Debug, Clone)]
pub struct NoiseSet<F> {
    pub center: Vec<F>,
    pub sigma: Vec<F>,
    pub samples: Vec<Vec<F>>,
}

impl<F> NoiseSet<F> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-feature population standard deviation of the training matrix
/// (denominator k), floored at [`SIGMA_FLOOR`].
pub fn measure_sigma<F: Real>(train: &[Vec<F>]) -> Result<Vec<F>, Error> {
    if train.len() < 2 {
        return Err(Error::InsufficientTrainingData);
    }
    let k = F::from_config(train.len() as f64);
    let n = train[0].len();
    let mut mean = vec![F::zero(); n];
    for row in train {
        for j in 0..n {
            mean[j] = mean[j] + row[j];
        }
    }
    for v in &mut mean {
        *v = *v / k;
    }
    let mut var = vec![F::zero(); n];
    for row in train {
        for j in 0..n {
            let d = row[j] - mean[j];
            var[j] = var[j] + d * d;
        }
    }
    let floor = F::from_config(SIGMA_FLOOR);
    Ok(var
        .into_iter()
        .map(|v| {
            let s = (v / k).sqrt();
            if s < floor {
                floor
            } else {
                s
            }
        })
        .collect())
}

/// Draws `m` samples with component `j ~ Normal(x_j, sigma_j^2)`.
pub fn generate_noise_set<F, R>(x: &[F], sigma: &[F], m: usize, rng: &mut R) -> NoiseSet<F>
where
    F: Real,
    R: rand::Rng,
    StandardNormal: Distribution<F>,
{
    assert_eq!(x.len(), sigma.len());
    assert!(m >= 1);
    let dists: Vec<Normal<F>> = x
        .iter()
        .zip(sigma)
        .map(|(mu, s)| Normal::new(*mu, *s).expect("positive sigma"))
        .collect();
    let samples = (0..m)
        .map(|_| dists.iter().map(|d| d.sample(rng)).collect())
        .collect();
    NoiseSet {
        center: x.to_vec(),
        sigma: sigma.to_vec(),
        samples,
    }
}

/// Mean of squared differences (the printed regression fidelity). For the
/// RMSE variant take the square root of the result.
pub fn fidelity_regression<F: Real>(pred_f: &[F], pred_g: &[F]) -> Result<F, Error> {
    if pred_f.len() != pred_g.len() {
        return Err(Error::LengthMismatch {
            left: pred_f.len(),
            right: pred_g.len(),
        });
    }
    if pred_f.is_empty() {
        return Err(Error::EmptyFitnessSet);
    }
    let sum: F = pred_f
        .iter()
        .zip(pred_g)
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .sum();
    Ok(sum / F::from_config(pred_f.len() as f64))
}

/// Fraction of positions where the two label vectors agree.
pub fn fidelity_classification<F: Real>(pred_f: &[F], pred_g: &[F]) -> Result<F, Error> {
    if pred_f.len() != pred_g.len() {
        return Err(Error::LengthMismatch {
            left: pred_f.len(),
            right: pred_g.len(),
        });
    }
    if pred_f.is_empty() {
        return Err(Error::EmptyFitnessSet);
    }
    let agree = pred_f.iter().zip(pred_g).filter(|(a, b)| a == b).count();
    Ok(F::from_config(agree as f64) / F::from_config(pred_f.len() as f64))
}

/// Maps a real-valued surrogate output to the nearest label observed in the
/// oracle's predictions.
pub fn round_to_label(value: Scalar, labels: &[Scalar]) -> Scalar {
    debug_assert!(!labels.is_empty());
    let mut best = labels[0];
    let mut best_dist = (value - best).abs();
    for &l in &labels[1..] {
        let d = (value - l).abs();
        if d < best_dist {
            best = l;
            best_dist = d;
        }
    }
    best
}

/// Distinct labels in ascending order.
pub fn distinct_labels(values: &[Scalar]) -> Vec<Scalar> {
    let mut labels: Vec<i64> = values.iter().map(|v| v.round() as i64).collect();
    labels.sort_unstable();
    labels.dedup();
    labels.into_iter().map(|l| l as Scalar).collect()
}

/// Configuration echo embedded in every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub gp: GpConfig,
    pub noise_size: usize,
    pub sigma: Vec<Scalar>,
    pub seed: u64,
}

/// The JSON-serializable result of one local explanation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub task: Task,
    pub expression_infix: String,
    pub expression_dot: String,
    pub selected_features: Vec<usize>,
    pub fidelity: Scalar,
    /// Regression only; zero entries for features the expression ignores.
    /// Empty for classification.
    pub gradient_at_x: Vec<Scalar>,
    pub config: ReportConfig,
}

/// Rendering and metric options for [`explain_gpx_with`].
#[derive(Debug, Clone, Default)]
pub struct ExplainOptions {
    /// Report the square root of the mean squared difference instead of the
    /// mean itself (regression only).
    pub fidelity_rmse: bool,
    pub feature_names: Option<Vec<String>>,
}

/// Runs the full pipeline with default options.
pub fn explain_gpx(
    oracle: &dyn Oracle,
    x: &[Scalar],
    train: &[Vec<Scalar>],
    gp: &GpConfig,
    noise_size: usize,
) -> Result<ExplanationReport, Error> {
    explain_gpx_with(oracle, x, train, gp, noise_size, &ExplainOptions::default())
}

pub fn explain_gpx_with(
    oracle: &dyn Oracle,
    x: &[Scalar],
    train: &[Vec<Scalar>],
    gp: &GpConfig,
    noise_size: usize,
    opts: &ExplainOptions,
) -> Result<ExplanationReport, Error> {
    if x.len() != oracle.n_features() {
        return Err(Error::DimensionMismatch {
            expected: oracle.n_features(),
            got: x.len(),
        });
    }
    let sigma = measure_sigma(train)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(gp.seed.wrapping_add(0x9e3779b97f4a7c15));
    let noise = generate_noise_set(x, &sigma, noise_size, &mut noise_rng);
    let targets = oracle.predict_batch(&noise.samples)?;
    explain_noise_set(oracle.task(), &noise, &targets, x, gp, opts)
}

/// Core of the pipeline once the labeled noise set exists; shared with the
/// benchmark harness so all explainers can consume the identical samples.
pub fn explain_noise_set(
    task: Task,
    noise: &NoiseSet<Scalar>,
    targets: &[Scalar],
    x: &[Scalar],
    gp: &GpConfig,
    opts: &ExplainOptions,
) -> Result<ExplanationReport, Error> {
    let best = evolve(gp, &noise.samples, targets)?;
    let tree = &best.tree;

    let surrogate_raw: Vec<Scalar> = noise.samples.iter().map(|row| tree.eval(row)).collect();
    let fidelity = match task {
        Task::Regression => {
            let mse = fidelity_regression(&surrogate_raw, targets)?;
            if opts.fidelity_rmse {
                mse.sqrt()
            } else {
                mse
            }
        }
        Task::Classification => {
            let labels = distinct_labels(targets);
            let rounded: Vec<Scalar> = surrogate_raw
                .iter()
                .map(|&v| round_to_label(v, &labels))
                .collect();
            fidelity_classification(&rounded, targets)?
        }
    };

    let selected: Vec<usize> = tree.variables().into_iter().collect();
    let gradient_at_x = match task {
        Task::Regression => {
            let mut grad = vec![0.0; x.len()];
            for &j in &selected {
                grad[j] = tree.differentiate(j)?.eval(x);
            }
            grad
        }
        Task::Classification => Vec::new(),
    };

    let names = opts.feature_names.as_deref();
    Ok(ExplanationReport {
        task,
        expression_infix: tree.to_infix(names),
        expression_dot: tree.to_dot(names),
        selected_features: selected,
        fidelity,
        gradient_at_x,
        config: ReportConfig {
            gp: gp.clone(),
            noise_size: noise.len(),
            sigma: noise.sigma.clone(),
            seed: gp.seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Oracle;
    use rand::Rng;

    #[test]
    fn sigma_hand_values() {
        let train = vec![vec![0.0], vec![2.0]];
        assert_eq!(measure_sigma(&train).unwrap(), vec![1.0]);

        let constant = vec![vec![5.0], vec![5.0], vec![5.0]];
        assert_eq!(measure_sigma(&constant).unwrap(), vec![SIGMA_FLOOR]);

        let skewed = vec![vec![1.0], vec![1.0], vec![1.0], vec![5.0]];
        let s = measure_sigma(&skewed).unwrap();
        assert!((s[0] - 3f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn sigma_needs_two_rows() {
        assert!(matches!(
            measure_sigma(&[vec![1.0]]),
            Err(Error::InsufficientTrainingData)
        ));
    }

    #[test]
    fn noise_set_row_count_and_tight_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = vec![1.0, -2.0];
        let sigma = vec![SIGMA_FLOOR, SIGMA_FLOOR];
        let noise = generate_noise_set(&x, &sigma, 10, &mut rng);
        assert_eq!(noise.len(), 10);
        for row in &noise.samples {
            assert!((row[0] - 1.0).abs() < 1e-6);
            assert!((row[1] + 2.0).abs() < 1e-6);
        }

        let noise = generate_noise_set(&x, &[1.0, 1.0], 1000, &mut rng);
        assert_eq!(noise.len(), 1000);
    }

    #[test]
    fn noise_sample_means_concentrate() {
        let x = vec![3.0];
        let mut within = 0;
        let runs = 1000;
        for seed in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = generate_noise_set(&x, &[1.0], 1000, &mut rng);
            let mean: f64 =
                noise.samples.iter().map(|r| r[0]).sum::<f64>() / noise.len() as f64;
            if (mean - 3.0).abs() <= 0.12 {
                within += 1;
            }
        }
        assert!(within >= 990, "only {within}/{runs} runs within bound");
    }

    #[test]
    fn regression_fidelity_hand_values() {
        assert_eq!(fidelity_regression(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(fidelity_regression(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert_eq!(
            fidelity_regression(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        );
        assert!(matches!(
            fidelity_regression(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn classification_fidelity_hand_values() {
        assert_eq!(
            fidelity_classification(&[1.0, 0.0], &[1.0, 0.0]).unwrap(),
            1.0
        );
        assert_eq!(
            fidelity_classification(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap(),
            0.5
        );
        assert_eq!(
            fidelity_classification(&[1.0, 1.0], &[0.0, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn label_rounding() {
        let labels = vec![0.0, 1.0, 2.0];
        assert_eq!(round_to_label(0.4, &labels), 0.0);
        assert_eq!(round_to_label(0.6, &labels), 1.0);
        assert_eq!(round_to_label(7.0, &labels), 2.0);
    }

    struct FnOracle<F: Fn(&[Scalar]) -> Scalar + Send + Sync> {
        f: F,
        n: usize,
        task: Task,
    }

    impl<F: Fn(&[Scalar]) -> Scalar + Send + Sync> Oracle for FnOracle<F> {
        fn task(&self) -> Task {
            self.task
        }
        fn n_features(&self) -> usize {
            self.n
        }
        fn predict_batch(&self, rows: &[Vec<Scalar>]) -> Result<Vec<Scalar>, Error> {
            Ok(rows.iter().map(|r| (self.f)(r)).collect())
        }
    }

    fn training_cloud(n: usize, seed: u64) -> Vec<Vec<Scalar>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..100)
            .map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    }

    #[test]
    fn constant_oracle_explained_exactly() {
        let oracle = FnOracle {
            f: |_: &[Scalar]| 3.0,
            n: 2,
            task: Task::Regression,
        };
        let train = training_cloud(2, 1);
        let gp = GpConfig {
            generations: 50,
            seed: 0,
            ..GpConfig::default()
        };
        let report = explain_gpx(&oracle, &[0.5, -0.5], &train, &gp, 200).unwrap();
        assert!(report.fidelity <= 1e-6, "u_r = {}", report.fidelity);
    }

    #[test]
    fn linear_oracle_selects_feature_zero() {
        let oracle = FnOracle {
            f: |r: &[Scalar]| 2.0 * r[0] + 1.0,
            n: 2,
            task: Task::Regression,
        };
        let train = training_cloud(2, 3);
        let gp = GpConfig {
            seed: 0,
            ..GpConfig::default()
        };
        let report = explain_gpx(&oracle, &[1.0, 1.0], &train, &gp, 500).unwrap();
        assert!(report.fidelity <= 1e-3, "u_r = {}", report.fidelity);
        assert_eq!(report.selected_features, vec![0]);
        // d/dx0 of a faithful surrogate of 2x0 + 1 is close to 2.
        assert!((report.gradient_at_x[0] - 2.0).abs() <= 0.1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let oracle = FnOracle {
            f: |_: &[Scalar]| 0.0,
            n: 3,
            task: Task::Regression,
        };
        let train = training_cloud(2, 0);
        let gp = GpConfig::default();
        assert!(matches!(
            explain_gpx(&oracle, &[0.0, 0.0], &train, &gp, 10),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn report_is_deterministic() {
        let oracle = FnOracle {
            f: |r: &[Scalar]| r[0] * r[1],
            n: 2,
            task: Task::Regression,
        };
        let train = training_cloud(2, 5);
        let gp = GpConfig {
            generations: 5,
            seed: 11,
            ..GpConfig::default()
        };
        let a = explain_gpx(&oracle, &[1.0, 2.0], &train, &gp, 100).unwrap();
        let b = explain_gpx(&oracle, &[1.0, 2.0], &train, &gp, 100).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn unselected_features_do_not_move_the_surrogate() {
        let train = training_cloud(3, 7);
        let gp = GpConfig {
            seed: 4,
            ..GpConfig::default()
        };
        let noise_size = 300;
        let sigma = measure_sigma(&train).unwrap();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(gp.seed.wrapping_add(0x9e3779b97f4a7c15));
        let noise = generate_noise_set(&[0.0, 0.0, 0.0], &sigma, noise_size, &mut noise_rng);
        let targets: Vec<Scalar> = noise.samples.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let best = evolve(&gp, &noise.samples, &targets).unwrap();
        let selected = best.tree.variables();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let base: Vec<Scalar> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut perturbed = base.clone();
            for j in 0..3 {
                if !selected.contains(&j) {
                    perturbed[j] = rng.random_range(-2.0..2.0);
                }
            }
            assert_eq!(best.tree.eval(&base), best.tree.eval(&perturbed));
        }
    }

    #[test]
    fn classification_fidelity_within_unit_interval() {
        let oracle = FnOracle {
            f: |r: &[Scalar]| {
                if r[0] > 0.0 {
                    1.0
                } else {
                    0.0
                }
            },
            n: 2,
            task: Task::Classification,
        };
        let train = training_cloud(2, 9);
        let gp = GpConfig {
            generations: 10,
            seed: 3,
            ..GpConfig::default()
        };
        let report = explain_gpx(&oracle, &[0.1, 0.0], &train, &gp, 200).unwrap();
        assert!((0.0..=1.0).contains(&report.fidelity));
        assert!(report.gradient_at_x.is_empty());
    }
}
