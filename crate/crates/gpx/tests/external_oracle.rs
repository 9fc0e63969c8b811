//! End-to-end tests of the line protocol against real child processes.

use gpx::oracle::{external_oracle, Oracle};
use gpx::{Error, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn child(script: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/children")
        .join(script);
    format!("python3 {}", path.display())
}

#[test]
fn identity_child_round_trips_predictions() {
    let oracle = external_oracle(&child("identity.py"), Task::Regression, 3).unwrap();
    let rows = vec![vec![1.5, 0.0, 0.0], vec![-2.25, 7.0, 1.0], vec![42.0, 0.5, 0.25]];
    let preds = oracle.predict_batch(&rows).unwrap();
    assert_eq!(preds, vec![1.5, -2.25, 42.0]);
}

#[test]
fn sum_child_computes_row_sums() {
    let oracle = external_oracle(&child("sum.py"), Task::Regression, 4).unwrap();
    let rows = vec![vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 1.0, -1.0, 1.0]];
    let preds = oracle.predict_batch(&rows).unwrap();
    assert!((preds[0] - 10.0).abs() < 1e-12);
    assert!(preds[1].abs() < 1e-12);
}

#[test]
fn order_is_preserved_across_batch_sizes() {
    let oracle = external_oracle(&child("identity.py"), Task::Regression, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(1..=1000);
        // Distinct first features act as canaries for ordering.
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![i as f64 + rng.random_range(0.0..0.5), rng.random_range(-5.0..5.0)])
            .collect();
        let preds = oracle.predict_batch(&rows).unwrap();
        assert_eq!(preds.len(), n);
        for (row, p) in rows.iter().zip(&preds) {
            assert_eq!(row[0], *p);
        }
    }
}

#[test]
fn child_survives_many_small_batches() {
    let oracle = external_oracle(&child("identity.py"), Task::Regression, 1).unwrap();
    for i in 0..200 {
        let preds = oracle.predict_batch(&[vec![i as f64]]).unwrap();
        assert_eq!(preds, vec![i as f64]);
    }
}

#[test]
fn short_output_is_a_protocol_error_with_line_number() {
    let oracle = external_oracle(&child("short.py"), Task::Regression, 1).unwrap();
    let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
    match oracle.predict_batch(&rows) {
        Err(Error::OracleProtocol { line, message }) => {
            assert_eq!(line, 2);
            assert!(message.contains("prediction count mismatch"), "{message}");
        }
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn garbled_output_is_a_protocol_error() {
    let oracle = external_oracle(&child("garbled.py"), Task::Regression, 1).unwrap();
    match oracle.predict_batch(&[vec![1.0]]) {
        Err(Error::OracleProtocol { line, message }) => {
            assert_eq!(line, 1);
            assert!(message.contains("malformed prediction"), "{message}");
        }
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn dead_child_is_reported_with_exit_status() {
    let oracle = external_oracle("exit 3", Task::Regression, 1).unwrap();
    // Give the shell time to exit so the status is observable.
    std::thread::sleep(std::time::Duration::from_millis(200));
    match oracle.predict_batch(&[vec![1.0]]) {
        Err(Error::OracleProtocol { message, .. }) => {
            assert!(message.contains("exited"), "{message}");
        }
        other => panic!("expected protocol error, got {other:?}"),
    }
}
