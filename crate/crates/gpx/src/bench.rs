//! Benchmark harness: dataset ingestion, train/test splitting, explainer
//! comparison over many query points, and the pairwise permutation test
//! with Bonferroni adjustment.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::explain::{
    distinct_labels, fidelity_classification, fidelity_regression, generate_noise_set,
    measure_sigma, round_to_label, NoiseSet, DEFAULT_NOISE_SIZE,
};
use crate::gp::GpConfig;
use crate::oracle::{external_oracle, train_random_forest, train_rbf_model, Oracle};
use crate::surrogate::{fit_linear_surrogate, fit_tree_surrogate, TREE_SURROGATE_DEPTH};
use crate::{Error, Scalar, Task};

/// An in-memory tabular dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub x: Vec<Vec<Scalar>>,
    pub y: Vec<Scalar>,
    pub feature_names: Vec<String>,
    pub task: Task,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Parses a decimal CSV with a header row. Rows with missing or unparseable
/// cells are dropped; the second return value counts them.
pub fn load_csv(
    path: &Path,
    task: Task,
    target_column: &str,
) -> Result<(Dataset, usize), Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingTargetColumn(target_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            dropped += 1;
            continue;
        }
        let cells: Option<Vec<Scalar>> = record
            .iter()
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    None
                } else {
                    c.parse::<Scalar>().ok().filter(|v| v.is_finite())
                }
            })
            .collect();
        match cells {
            Some(cells) => {
                y.push(cells[target_idx]);
                x.push(
                    cells
                        .into_iter()
                        .enumerate()
                        .filter(|(i, _)| *i != target_idx)
                        .map(|(_, v)| v)
                        .collect(),
                );
            }
            None => dropped += 1,
        }
    }
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if task == Task::Classification {
        let labels = distinct_labels(&y);
        let binary = labels.iter().all(|&l| l == 0.0 || l == 1.0);
        if !binary {
            return Err(Error::NonBinaryLabels(
                labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", "),
            ));
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Ok((
        Dataset {
            name,
            x,
            y,
            feature_names,
            task,
        },
        dropped,
    ))
}

/// Seeded uniform shuffle followed by a `ceil(train_fraction * k)` split.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    assert!(data.len() >= 5, "need at least 5 rows to split");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (train_fraction * data.len() as f64).ceil() as usize;
    let pick = |idx: &[usize], suffix: &str| Dataset {
        name: format!("{}-{suffix}", data.name),
        x: idx.iter().map(|&i| data.x[i].clone()).collect(),
        y: idx.iter().map(|&i| data.y[i]).collect(),
        feature_names: data.feature_names.clone(),
        task: data.task,
    };
    (
        pick(&order[..n_train], "train"),
        pick(&order[n_train..], "test"),
    )
}

/// Three-cluster 2-D classification set mirroring the demo figure: 1500
/// samples, per-class standard deviations 1.0, 2.5 and 0.5.
pub fn make_blobs(n_samples: usize, seed: u64) -> Dataset {
    let centers = [(-9.0, 1.5), (0.0, -1.5), (9.0, 2.0)];
    let stds = [1.0, 2.5, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n_samples);
    let mut y = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % centers.len();
        let (cx, cy) = centers[class];
        let s = stds[class];
        let gauss = |rng: &mut ChaCha8Rng| {
            // Box-Muller keeps this generator self-contained.
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        x.push(vec![cx + s * gauss(&mut rng), cy + s * gauss(&mut rng)]);
        y.push(class as Scalar);
    }
    Dataset {
        name: "blobs".to_string(),
        x,
        y,
        feature_names: vec!["x0".to_string(), "x1".to_string()],
        task: Task::Classification,
    }
}

/// Smooth nonlinear regression surface used as a bundled synthetic dataset.
pub fn make_nonlinear_regression(n_samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n_samples);
    let mut y = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let a: f64 = rng.random_range(-3.0..3.0);
        let b: f64 = rng.random_range(-3.0..3.0);
        let c: f64 = rng.random_range(-3.0..3.0);
        x.push(vec![a, b, c]);
        y.push(a * b + c * c - 2.0);
    }
    Dataset {
        name: "surface".to_string(),
        x,
        y,
        feature_names: vec!["x0".to_string(), "x1".to_string(), "x2".to_string()],
        task: Task::Regression,
    }
}

/// Paired two-sided permutation test with sign flipping. The statistic is
/// the mean paired difference. Exhaustive when `2^n <= n_perm`, Monte Carlo
/// with add-one smoothing otherwise.
pub fn pairwise_permutation_test(
    a: &[Scalar],
    b: &[Scalar],
    n_perm: usize,
    seed: u64,
) -> Result<(Scalar, Scalar), Error> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyFitnessSet);
    }
    let diffs: Vec<Scalar> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let obs_sum: Scalar = diffs.iter().sum();
    let stat = obs_sum / n as Scalar;
    let threshold = obs_sum.abs();

    let p = if n < usize::BITS as usize && (1usize << n) <= n_perm {
        let total = 1usize << n;
        let mut hits = 0usize;
        for mask in 0..total {
            let mut s = 0.0;
            for (i, d) in diffs.iter().enumerate() {
                s += if mask & (1 << i) != 0 { -d } else { *d };
            }
            if s.abs() >= threshold {
                hits += 1;
            }
        }
        hits as Scalar / total as Scalar
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        for _ in 0..n_perm {
            let mut s = 0.0;
            for d in &diffs {
                s += if rng.random_bool(0.5) { -d } else { *d };
            }
            if s.abs() >= threshold {
                hits += 1;
            }
        }
        (1 + hits) as Scalar / (1 + n_perm) as Scalar
    };
    Ok((stat, p))
}

/// Bonferroni adjustment: each p-value is multiplied by the family size and
/// clamped at 1.
pub fn bonferroni_adjust(p_values: &[Scalar]) -> Vec<Scalar> {
    let m = p_values.len() as Scalar;
    p_values.iter().map(|p| (m * p).min(1.0)).collect()
}

/// Oracle recipe; training happens inside the benchmark per dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleSpec {
    Rf {
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        #[serde(default = "default_forest_depth")]
        max_depth: usize,
    },
    Rbf {
        #[serde(default = "default_gamma")]
        gamma: Scalar,
        #[serde(default = "default_lambda")]
        lambda: Scalar,
    },
    Cmd {
        command: String,
    },
}

fn default_n_trees() -> usize {
    100
}
fn default_forest_depth() -> usize {
    8
}
fn default_gamma() -> Scalar {
    0.1
}
fn default_lambda() -> Scalar {
    1e-3
}

impl OracleSpec {
    pub fn label(&self) -> String {
        match self {
            OracleSpec::Rf { n_trees, .. } => format!("rf{n_trees}"),
            OracleSpec::Rbf { .. } => "rbf".to_string(),
            OracleSpec::Cmd { .. } => "cmd".to_string(),
        }
    }

    /// Trains (or connects) the oracle for one dataset.
    pub fn build(
        &self,
        train: &Dataset,
        seed: u64,
    ) -> Result<Box<dyn Oracle>, Error> {
        Ok(match self {
            OracleSpec::Rf { n_trees, max_depth } => Box::new(train_random_forest(
                &train.x, &train.y, train.task, *n_trees, *max_depth, seed,
            )?),
            OracleSpec::Rbf { gamma, lambda } => Box::new(train_rbf_model(
                &train.x, &train.y, train.task, *gamma, *lambda,
            )?),
            OracleSpec::Cmd { command } => Box::new(external_oracle(
                command,
                train.task,
                train.feature_names.len(),
            )?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainerKind {
    Gpx,
    Linear,
    Tree,
}

impl ExplainerKind {
    pub fn label(self) -> &'static str {
        match self {
            ExplainerKind::Gpx => "gpx",
            ExplainerKind::Linear => "linear",
            ExplainerKind::Tree => "tree",
        }
    }
}

/// Knobs of a benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub queries_per_dataset: usize,
    pub noise_size: usize,
    pub gp: GpConfig,
    pub ridge_lambda: Scalar,
    pub tree_depth: usize,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            queries_per_dataset: 100,
            noise_size: DEFAULT_NOISE_SIZE,
            gp: GpConfig::default(),
            ridge_lambda: 1e-3,
            tree_depth: TREE_SURROGATE_DEPTH,
            n_perm: 10_000,
            seed: 0,
        }
    }
}

/// One fidelity measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityRecord {
    pub dataset: String,
    pub oracle: String,
    pub explainer: ExplainerKind,
    pub query_index: usize,
    pub fidelity: Scalar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub explainer: ExplainerKind,
    pub mean: Scalar,
    pub std_dev: Scalar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub comparison: String,
    pub statistic: Scalar,
    pub p_value: Scalar,
    pub p_adjusted: Scalar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub records: Vec<FidelityRecord>,
    pub aggregates: Vec<Aggregate>,
    pub stat_tests: Vec<PairwiseTest>,
}

/// splitmix64; derives independent per-query rng streams.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = master;
    for &p in parts {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(p);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Fits one explainer on the shared noise set and returns its fidelity
/// against the oracle labels.
pub fn explainer_fidelity(
    kind: ExplainerKind,
    task: Task,
    noise: &NoiseSet<Scalar>,
    targets: &[Scalar],
    gp: &GpConfig,
    ridge_lambda: Scalar,
    tree_depth: usize,
) -> Result<Scalar, Error> {
    let labels = if task == Task::Classification {
        distinct_labels(targets)
    } else {
        Vec::new()
    };
    let raw: Vec<Scalar> = match kind {
        ExplainerKind::Gpx => {
            let best = crate::gp::evolve(gp, &noise.samples, targets)?;
            noise.samples.iter().map(|r| best.tree.eval(r)).collect()
        }
        ExplainerKind::Linear => {
            let model = fit_linear_surrogate(&noise.samples, targets, ridge_lambda)?;
            noise.samples.iter().map(|r| model.predict(r)).collect()
        }
        ExplainerKind::Tree => {
            let model = fit_tree_surrogate(&noise.samples, targets, task, tree_depth)?;
            noise.samples.iter().map(|r| model.predict(r)).collect()
        }
    };
    match task {
        Task::Regression => fidelity_regression(&raw, targets),
        Task::Classification => {
            let rounded: Vec<Scalar> = match kind {
                // CART already predicts labels.
                ExplainerKind::Tree => raw,
                _ => raw.iter().map(|&v| round_to_label(v, &labels)).collect(),
            };
            fidelity_classification(&rounded, targets)
        }
    }
}

/// Runs the full comparison protocol: per dataset and oracle, explain
/// `queries_per_dataset` test points with every explainer on one shared
/// noise set per query, then aggregate and test pairwise differences.
pub fn run_benchmark(
    datasets: &[Dataset],
    oracles: &[OracleSpec],
    explainers: &[ExplainerKind],
    opts: &BenchOptions,
) -> Result<BenchResult, Error> {
    if datasets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut records: Vec<FidelityRecord> = Vec::new();

    for (d_idx, dataset) in datasets.iter().enumerate() {
        let split_seed = derive_seed(opts.seed, &[d_idx as u64, u64::MAX]);
        let (train, test) = split(dataset, 0.8, split_seed);
        let sigma = measure_sigma(&train.x)?;
        for (o_idx, spec) in oracles.iter().enumerate() {
            let oracle = spec
                .build(&train, derive_seed(opts.seed, &[d_idx as u64, o_idx as u64]))
                .map_err(|e| e.in_bench(&dataset.name, None))?;
            let oracle_ref: &dyn Oracle = oracle.as_ref();

            let mut query_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                opts.seed,
                &[d_idx as u64, o_idx as u64, QUERY_STREAM_TAG],
            ));
            let query_rows: Vec<Vec<Scalar>> = (0..opts.queries_per_dataset)
                .map(|_| test.x[query_rng.random_range(0..test.len())].clone())
                .collect();

            let per_query: Result<Vec<Vec<FidelityRecord>>, Error> = query_rows
                .par_iter()
                .enumerate()
                .map(|(q_idx, x)| {
                    let stream = derive_seed(
                        opts.seed,
                        &[d_idx as u64, o_idx as u64, q_idx as u64],
                    );
                    let mut rng = ChaCha8Rng::seed_from_u64(stream);
                    let noise = generate_noise_set(x, &sigma, opts.noise_size, &mut rng);
                    let targets = oracle_ref
                        .predict_batch(&noise.samples)
                        .map_err(|e| e.in_bench(&dataset.name, Some(q_idx)))?;
                    let gp = GpConfig {
                        seed: stream,
                        ..opts.gp.clone()
                    };
                    explainers
                        .iter()
                        .map(|&kind| {
                            let fidelity = explainer_fidelity(
                                kind,
                                dataset.task,
                                &noise,
                                &targets,
                                &gp,
                                opts.ridge_lambda,
                                opts.tree_depth,
                            )
                            .map_err(|e| e.in_bench(&dataset.name, Some(q_idx)))?;
                            Ok(FidelityRecord {
                                dataset: dataset.name.clone(),
                                oracle: spec.label(),
                                explainer: kind,
                                query_index: q_idx,
                                fidelity,
                            })
                        })
                        .collect()
                })
                .collect();
            for group in per_query? {
                records.extend(group);
            }
        }
    }

    let aggregates = aggregate(&records, explainers);
    let stat_tests = pairwise_tests(&records, explainers, opts)?;
    Ok(BenchResult {
        records,
        aggregates,
        stat_tests,
    })
}

// Arbitrary tag keeping the query-selection stream distinct from the
// per-query streams (whose third component is a small index).
const QUERY_STREAM_TAG: u64 = 0x51_53_54_52;

fn aggregate(records: &[FidelityRecord], explainers: &[ExplainerKind]) -> Vec<Aggregate> {
    explainers
        .iter()
        .map(|&kind| {
            let vals: Vec<Scalar> = records
                .iter()
                .filter(|r| r.explainer == kind)
                .map(|r| r.fidelity)
                .collect();
            let mean = vals.iter().sum::<Scalar>() / vals.len().max(1) as Scalar;
            let var = vals
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<Scalar>()
                / vals.len().max(1) as Scalar;
            Aggregate {
                explainer: kind,
                mean,
                std_dev: var.sqrt(),
            }
        })
        .collect()
}

fn pairwise_tests(
    records: &[FidelityRecord],
    explainers: &[ExplainerKind],
    opts: &BenchOptions,
) -> Result<Vec<PairwiseTest>, Error> {
    // Fidelities per explainer, keyed identically across explainers so the
    // vectors are paired by (dataset, oracle, query).
    let mut by_explainer: BTreeMap<&'static str, Vec<Scalar>> = BTreeMap::new();
    for &kind in explainers {
        let vals: Vec<Scalar> = records
            .iter()
            .filter(|r| r.explainer == kind)
            .map(|r| r.fidelity)
            .collect();
        by_explainer.insert(kind.label(), vals);
    }
    let mut raw = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..explainers.len() {
        for j in (i + 1)..explainers.len() {
            let a = &by_explainer[explainers[i].label()];
            let b = &by_explainer[explainers[j].label()];
            let (stat, p) = pairwise_permutation_test(a, b, opts.n_perm, opts.seed)?;
            pairs.push((
                format!(
                    "{} - {} = 0",
                    explainers[i].label(),
                    explainers[j].label()
                ),
                stat,
            ));
            raw.push(p);
        }
    }
    let adjusted = bonferroni_adjust(&raw);
    Ok(pairs
        .into_iter()
        .zip(raw)
        .zip(adjusted)
        .map(|(((comparison, statistic), p_value), p_adjusted)| PairwiseTest {
            comparison,
            statistic,
            p_value,
            p_adjusted,
        })
        .collect())
}

/// Flat CSV of the per-record fidelities.
pub fn records_to_csv(records: &[FidelityRecord]) -> String {
    let mut out = String::from("dataset,oracle,explainer,query_index,fidelity\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.dataset,
            r.oracle,
            r.explainer.label(),
            r.query_index,
            r.fidelity
        ));
    }
    out
}
