//! Black-box oracles: the models whose predictions get explained.
//!
//! Built-in desk-scale oracles (random forest, RBF kernel ridge) plus a
//! line-protocol bridge to an external process so arbitrary models can be
//! plugged in. Trained oracles are immutable and deterministic.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cart::DecisionTree;
use crate::linalg::solve;
use crate::{Error, Scalar, Task};

/// A deterministic batch predictor over a fixed feature dimension.
/// Classification oracles return class labels as numeric codes.
pub trait Oracle: Send + Sync {
    fn task(&self) -> Task;
    fn n_features(&self) -> usize;
    fn predict_batch(&self, rows: &[Vec<Scalar>]) -> Result<Vec<Scalar>, Error>;
}

/// Bagged CART ensemble: bootstrap rows plus per-split feature subsampling
/// (sqrt(n) features for classification, n/3 for regression).
pub struct RandomForest {
    trees: Vec<DecisionTree<Scalar>>,
    task: Task,
    n_features: usize,
}

/// Number of features considered per split.
fn forest_max_features(task: Task, n_features: usize) -> usize {
    match task {
        Task::Classification => (n_features as f64).sqrt().round() as usize,
        Task::Regression => n_features / 3,
    }
    .max(1)
}

pub fn train_random_forest(
    x: &[Vec<Scalar>],
    y: &[Scalar],
    task: Task,
    n_trees: usize,
    max_depth: usize,
    seed: u64,
) -> Result<RandomForest, Error> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert!(n_trees >= 1);
    let n_features = x[0].len();
    let max_features = forest_max_features(task, n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = (0..n_trees)
        .map(|_| {
            let boot_x: Vec<Vec<Scalar>>;
            let boot_y: Vec<Scalar>;
            {
                let mut bx = Vec::with_capacity(x.len());
                let mut by = Vec::with_capacity(y.len());
                for _ in 0..x.len() {
                    let i = rng.random_range(0..x.len());
                    bx.push(x[i].clone());
                    by.push(y[i]);
                }
                boot_x = bx;
                boot_y = by;
            }
            DecisionTree::fit_with_feature_sampling(
                &boot_x,
                &boot_y,
                task,
                max_depth,
                max_features,
                &mut rng,
            )
        })
        .collect();
    Ok(RandomForest {
        trees,
        task,
        n_features,
    })
}

impl RandomForest {
    fn predict_row(&self, row: &[Scalar]) -> Scalar {
        match self.task {
            Task::Regression => {
                let sum: Scalar = self.trees.iter().map(|t| t.predict(row)).sum();
                sum / self.trees.len() as Scalar
            }
            Task::Classification => {
                let mut votes = std::collections::BTreeMap::new();
                for t in &self.trees {
                    let label = t.predict(row).round() as i64;
                    *votes.entry(label).or_insert(0usize) += 1;
                }
                let (&label, _) = votes
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .unwrap();
                label as Scalar
            }
        }
    }
}

impl Oracle for RandomForest {
    fn task(&self) -> Task {
        self.task
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_batch(&self, rows: &[Vec<Scalar>]) -> Result<Vec<Scalar>, Error> {
        Ok(rows.iter().map(|r| self.predict_row(r)).collect())
    }
}

/// Kernel ridge regression with an RBF kernel; binary classification
/// thresholds the regression output at 0.5.
pub struct RbfModel {
    support: Vec<Vec<Scalar>>,
    alpha: Vec<Scalar>,
    gamma: Scalar,
    task: Task,
    n_features: usize,
}

fn rbf_kernel(a: &[Scalar], b: &[Scalar], gamma: Scalar) -> Scalar {
    let sq: Scalar = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * sq).exp()
}

pub fn train_rbf_model(
    x: &[Vec<Scalar>],
    y: &[Scalar],
    task: Task,
    gamma: Scalar,
    lambda: Scalar,
) -> Result<RbfModel, Error> {
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert!(gamma > 0.0, "gamma must be positive");
    let m = x.len();
    let mut k = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let v = rbf_kernel(&x[i], &x[j], gamma);
            k[i][j] = v;
            k[j][i] = v;
        }
        k[i][i] += lambda;
    }
    let alpha = solve(k, y.to_vec())?;
    Ok(RbfModel {
        support: x.to_vec(),
        alpha,
        gamma,
        task,
        n_features: x[0].len(),
    })
}

impl RbfModel {
    fn decision(&self, row: &[Scalar]) -> Scalar {
        self.support
            .iter()
            .zip(&self.alpha)
            .map(|(s, a)| a * rbf_kernel(s, row, self.gamma))
            .sum()
    }
}

impl Oracle for RbfModel {
    fn task(&self) -> Task {
        self.task
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_batch(&self, rows: &[Vec<Scalar>]) -> Result<Vec<Scalar>, Error> {
        Ok(rows
            .iter()
            .map(|r| {
                let v = self.decision(r);
                match self.task {
                    Task::Regression => v,
                    Task::Classification => {
                        if v >= 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            })
            .collect())
    }
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Bridge to a long-lived child process speaking the line protocol:
/// one comma-separated feature row per request line, one decimal
/// prediction per response line, strict 1:1 ordering, LF-terminated.
pub struct ExternalOracle {
    command: String,
    io: Mutex<ChildIo>,
    task: Task,
    n_features: usize,
}

pub fn external_oracle(
    command: &str,
    task: Task,
    n_features: usize,
) -> Result<ExternalOracle, Error> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::OracleProtocol {
            line: 0,
            message: format!("cannot spawn `{command}`: {e}"),
        })?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
    Ok(ExternalOracle {
        command: command.to_string(),
        io: Mutex::new(ChildIo {
            child,
            stdin,
            stdout,
        }),
        task,
        n_features,
    })
}

impl Oracle for ExternalOracle {
    fn task(&self) -> Task {
        self.task
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_batch(&self, rows: &[Vec<Scalar>]) -> Result<Vec<Scalar>, Error> {
        let mut io = self.io.lock().expect("oracle lock poisoned");
        let mut request = String::new();
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            request.push_str(&cells.join(","));
            request.push('\n');
        }
        io.stdin
            .write_all(request.as_bytes())
            .and_then(|_| io.stdin.flush())
            .map_err(|e| self.protocol_error(&mut io, 0, format!("write failed: {e}")))?;

        let mut out = Vec::with_capacity(rows.len());
        for line_no in 1..=rows.len() {
            let mut line = String::new();
            let n = io
                .stdout
                .read_line(&mut line)
                .map_err(|e| self.protocol_error(&mut io, line_no, format!("read failed: {e}")))?;
            if n == 0 {
                return Err(self.protocol_error(
                    &mut io,
                    line_no,
                    format!(
                        "prediction count mismatch: expected {} lines, child closed after {}",
                        rows.len(),
                        line_no - 1
                    ),
                ));
            }
            let value: Scalar = line.trim().parse().map_err(|_| {
                self.protocol_error(&mut io, line_no, format!("malformed prediction `{}`", line.trim()))
            })?;
            if !value.is_finite() {
                return Err(self.protocol_error(
                    &mut io,
                    line_no,
                    format!("non-finite prediction `{}`", line.trim()),
                ));
            }
            out.push(value);
        }
        Ok(out)
    }
}

impl ExternalOracle {
    fn protocol_error(&self, io: &mut ChildIo, line: usize, message: String) -> Error {
        let status = match io.child.try_wait() {
            Ok(Some(s)) => format!("; child `{}` exited with {s}", self.command),
            Ok(None) => String::new(),
            Err(e) => format!("; child status unknown: {e}"),
        };
        Error::OracleProtocol {
            line,
            message: format!("{message}{status}"),
        }
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(mut io) = self.io.lock() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
