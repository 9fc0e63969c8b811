//! Acceptance gate: one test per criterion, each printing a single
//! `acceptance N (<name>): pass` line when it holds. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::io::Write as _;
use std::process::Command;
use std::time::Instant;

use gpx::bench::{
    bonferroni_adjust, make_blobs, pairwise_permutation_test, run_benchmark, BenchOptions,
    ExplainerKind, OracleSpec,
};
use gpx::expr::{ExprTree, InitMethod, Node, Op};
use gpx::explain::explain_gpx;
use gpx::gp::GpConfig;
use gpx::oracle::Oracle;
use gpx::{Error, Scalar, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pass(n: usize, name: &str) {
    println!("acceptance {n} ({name}): pass");
}

fn fail(n: usize, name: &str, detail: String) -> ! {
    println!("acceptance {n} ({name}): FAIL — {detail}");
    panic!("acceptance {n} ({name}) failed: {detail}");
}

struct FnOracle {
    f: Box<dyn Fn(&[Scalar]) -> Scalar + Send + Sync>,
    n: usize,
    task: Task,
}

impl Oracle for FnOracle {
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

/// 1. The hard-coded pedagogical tree and its symbolic derivatives match the
/// closed forms at 100 random points.
#[test]
fn criterion_1_symbolic_gradient_closed_form() {
    let start = Instant::now();
    // ptratio^2 * nox / 28.390 over features [ptratio, nox]
    let tree = ExprTree::new(
        Node::Fun(
            Op::Pdiv,
            Box::new(Node::Fun(
                Op::Mul,
                Box::new(Node::Fun(
                    Op::Mul,
                    Box::new(Node::Var(0)),
                    Box::new(Node::Var(0)),
                )),
                Box::new(Node::Var(1)),
            )),
            Box::new(Node::Const(28.390)),
        ),
        2,
    )
    .unwrap();
    let d0 = tree.differentiate(0).unwrap();
    let d1 = tree.differentiate(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x: [Scalar; 2] = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let want0 = x[0] * x[1] / 14.195;
        let want1 = x[0] * x[0] / 28.390;
        for (got, want) in [(d0.eval(&x), want0), (d1.eval(&x), want1)] {
            let rel = (got - want).abs() / want.abs().max(1e-300);
            if rel > 1e-9 {
                fail(1, "symbolic gradient", format!("rel err {rel} at {x:?}"));
            }
        }
    }
    if start.elapsed().as_secs_f64() >= 1.0 {
        fail(1, "symbolic gradient", format!("took {:?}", start.elapsed()));
    }
    pass(1, "symbolic gradient");
}

/// 2. Bonferroni over a family of three turns 0.1099 into 0.3297.
#[test]
fn criterion_2_bonferroni_value() {
    let adjusted = bonferroni_adjust(&[0.1099, 0.0002, 0.0417]);
    if (adjusted[0] - 0.3297).abs() > 5e-5 {
        fail(2, "bonferroni", format!("got {}", adjusted[0]));
    }
    pass(2, "bonferroni");
}

/// 3. The evolutionary search recovers 3x0 - 2x1 hidden among 5 features for
/// at least 8 of 10 seeds.
#[test]
fn criterion_3_linear_recovery() {
    let start = Instant::now();
    let oracle = FnOracle {
        f: Box::new(|r: &[Scalar]| 3.0 * r[0] - 2.0 * r[1]),
        n: 5,
        task: Task::Regression,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let train: Vec<Vec<Scalar>> = (0..500)
        .map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let x = [0.5, -1.0, 0.25, 2.0, -0.75];
    let mut hits = 0;
    for seed in 0..10 {
        let gp = GpConfig {
            seed,
            ..GpConfig::default()
        };
        let report = explain_gpx(&oracle, &x, &train, &gp, 1000).unwrap();
        let subset = report.selected_features.iter().all(|&f| f <= 1);
        if report.fidelity <= 1e-2 && subset {
            hits += 1;
        }
    }
    if hits < 8 {
        fail(3, "linear recovery", format!("{hits}/10 seeds"));
    }
    if start.elapsed().as_secs_f64() >= 60.0 {
        fail(3, "linear recovery", format!("took {:?}", start.elapsed()));
    }
    pass(3, "linear recovery");
}

/// 4. On the three-blob classification scene the symbolic explainer is
/// highly faithful and at least as good as the linear surrogate on average.
#[test]
fn criterion_4_three_blobs_ordering() {
    let start = Instant::now();
    let dataset = make_blobs(1500, 0);
    let opts = BenchOptions {
        queries_per_dataset: 10,
        gp: GpConfig {
            population_size: 300,
            restarts: 10,
            ..GpConfig::default()
        },
        ..BenchOptions::default()
    };
    let oracles = [OracleSpec::Rf {
        n_trees: 100,
        max_depth: 8,
    }];
    let explainers = [ExplainerKind::Gpx, ExplainerKind::Linear];
    let result = run_benchmark(&[dataset], &oracles, &explainers, &opts).unwrap();
    let values = |kind: ExplainerKind| -> Vec<Scalar> {
        result
            .records
            .iter()
            .filter(|r| r.explainer == kind)
            .map(|r| r.fidelity)
            .collect()
    };
    let mut gpx_uc = values(ExplainerKind::Gpx);
    let lin_uc = values(ExplainerKind::Linear);
    assert_eq!(gpx_uc.len(), 10);
    gpx_uc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = (gpx_uc[4] + gpx_uc[5]) / 2.0;
    let mean = |v: &[Scalar]| v.iter().sum::<Scalar>() / v.len() as Scalar;
    if median < 0.90 {
        fail(4, "three blobs", format!("median u_c {median}"));
    }
    if mean(&gpx_uc) < mean(&lin_uc) {
        fail(
            4,
            "three blobs",
            format!("mean gpx {} < mean linear {}", mean(&gpx_uc), mean(&lin_uc)),
        );
    }
    if start.elapsed().as_secs_f64() >= 300.0 {
        fail(4, "three blobs", format!("took {:?}", start.elapsed()));
    }
    pass(4, "three blobs");
}

/// Random division-free tree built from public constructors.
fn random_smooth_tree(depth: usize, n_features: usize, rng: &mut ChaCha8Rng) -> Node<Scalar> {
    if depth == 0 || rng.random_bool(0.3) {
        if rng.random_bool(0.5) {
            Node::Var(rng.random_range(0..n_features))
        } else {
            Node::Const(rng.random_range(-5.0..5.0))
        }
    } else {
        let op = match rng.random_range(0..3) {
            0 => Op::Add,
            1 => Op::Sub,
            _ => Op::Mul,
        };
        Node::Fun(
            op,
            Box::new(random_smooth_tree(depth - 1, n_features, rng)),
            Box::new(random_smooth_tree(depth - 1, n_features, rng)),
        )
    }
}

/// 5. Symbolic derivatives agree with central finite differences.
#[test]
fn criterion_5_gradient_vs_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h = 1e-5;
    for _ in 0..100 {
        let tree = ExprTree::new(random_smooth_tree(4, 3, &mut rng), 3).unwrap();
        let grads: Vec<_> = (0..3).map(|v| tree.differentiate(v).unwrap()).collect();
        for _ in 0..10 {
            let x: Vec<Scalar> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            for v in 0..3 {
                let sym = grads[v].eval(&x);
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[v] += h;
                lo[v] -= h;
                let fd = (tree.eval(&hi) - tree.eval(&lo)) / (2.0 * h);
                let rel = (sym - fd).abs() / sym.abs().max(1.0);
                if rel > 1e-5 {
                    fail(
                        5,
                        "finite differences",
                        format!("rel err {rel}, sym {sym}, fd {fd}"),
                    );
                }
            }
        }
    }
    pass(5, "finite differences");
}

/// 6. A million protected evaluations never produce a non-finite value.
#[test]
fn criterion_6_totality_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut evals = 0usize;
    while evals < 1_000_000 {
        let depth = rng.random_range(2..=6);
        let method = if rng.random_bool(0.5) {
            InitMethod::Full
        } else {
            InitMethod::Grow
        };
        let tree = ExprTree::<Scalar>::random(method, depth, 4, (-100.0, 100.0), &mut rng);
        for _ in 0..500 {
            let x: Vec<Scalar> = (0..4).map(|_| rng.random_range(-100.0..100.0)).collect();
            let y = tree.eval(&x);
            if !y.is_finite() {
                fail(6, "totality fuzz", format!("non-finite {y} at {x:?}"));
            }
            evals += 1;
        }
    }
    pass(6, "totality fuzz");
}

/// Exhaustive sign-flip enumeration written independently of the library.
fn enumerate_p(a: &[Scalar], b: &[Scalar]) -> Scalar {
    let diffs: Vec<Scalar> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let obs: Scalar = diffs.iter().sum();
    let total = 1usize << diffs.len();
    let mut hits = 0usize;
    for mask in 0..total {
        let s: Scalar = diffs
            .iter()
            .enumerate()
            .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
            .sum();
        if s.abs() >= obs.abs() {
            hits += 1;
        }
    }
    hits as Scalar / total as Scalar
}

/// 7. The permutation test matches exhaustive enumeration on short vectors.
#[test]
fn criterion_7_permutation_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n_perm = 10_000;
    let tol = 2.0 / (1.0 + n_perm as Scalar);
    for trial in 0..20 {
        let n = rng.random_range(3..=10);
        let a: Vec<Scalar> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<Scalar> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, p) = pairwise_permutation_test(&a, &b, n_perm, trial).unwrap();
        let want = enumerate_p(&a, &b);
        if (p - want).abs() > tol {
            fail(7, "permutation oracle", format!("p {p} vs {want} (n {n})"));
        }
    }
    pass(7, "permutation oracle");
}

fn run_gpx(args: &[&str], dir: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gpx"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn gpx binary")
}

fn fixture(name: &str) -> String {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
        .display()
        .to_string()
}

/// 8. Repeated CLI runs with the same seed produce byte-identical JSON.
#[test]
fn criterion_8_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("surface.csv");
    let explain_once = |out: &str| {
        let o = run_gpx(
            &[
                "explain",
                "--task",
                "reg",
                "--data",
                &data,
                "--target",
                "y",
                "--oracle",
                "rbf",
                "--instance",
                "0",
                "--noise-size",
                "200",
                "--generations",
                "10",
                "--seed",
                "42",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    if explain_once("a.json") != explain_once("b.json") {
        fail(8, "cli determinism", "explain reports differ".into());
    }

    let config = |out_json: &str, out_csv: &str| {
        format!(
            r#"{{
  "datasets": [{{"synthetic": "surface", "samples": 200, "seed": 1}}],
  "oracles": [{{"kind": "rbf", "gamma": 0.1, "lambda": 0.001}}],
  "explainers": ["gpx", "linear", "tree"],
  "queries_per_dataset": 3,
  "noise_size": 200,
  "gp": {{"generations": 10}},
  "n_perm": 1000,
  "seed": 7,
  "out_json": "{out_json}",
  "out_csv": "{out_csv}"
}}"#
        )
    };
    let bench_once = |tag: &str| {
        let cfg_path = dir.path().join(format!("cfg_{tag}.json"));
        let mut f = std::fs::File::create(&cfg_path).unwrap();
        f.write_all(config(&format!("r_{tag}.json"), &format!("r_{tag}.csv")).as_bytes())
            .unwrap();
        let o = run_gpx(
            &["bench", "--config", cfg_path.to_str().unwrap()],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join(format!("r_{tag}.json"))).unwrap()
    };
    if bench_once("x") != bench_once("y") {
        fail(8, "cli determinism", "bench results differ".into());
    }
    pass(8, "cli determinism");
}

fn child(script: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/children")
        .join(script);
    format!("python3 {}", path.display())
}

/// 9. A scripted external model is explained faithfully; protocol violations
/// surface as runtime errors with exit code 2.
#[test]
fn criterion_9_external_oracle_protocol() {
    let oracle = gpx::oracle::external_oracle(&child("identity.py"), Task::Regression, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train: Vec<Vec<Scalar>> = (0..100)
        .map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let gp = GpConfig::default();
    let report = explain_gpx(&oracle, &[1.0, -1.0], &train, &gp, 500).unwrap();
    if report.selected_features != vec![0] || report.fidelity > 1e-3 {
        fail(
            9,
            "external oracle",
            format!(
                "selected {:?}, u_r {}",
                report.selected_features, report.fidelity
            ),
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let o = run_gpx(
        &[
            "explain",
            "--task",
            "reg",
            "--data",
            &fixture("surface.csv"),
            "--target",
            "y",
            "--oracle",
            &format!("cmd:{}", child("short.py")),
            "--instance",
            "0",
            "--noise-size",
            "50",
            "--out",
            "never.json",
        ],
        dir.path(),
    );
    let code = o.status.code();
    let stderr = String::from_utf8_lossy(&o.stderr);
    if code != Some(2) || !stderr.contains("error:") {
        fail(
            9,
            "external oracle",
            format!("exit {code:?}, stderr {stderr}"),
        );
    }
    pass(9, "external oracle");
}
