//! The segmentation bar is checked against a nearest-neighbour readout
//! that sees frame 0's full ground truth. The oracle score and the bar are
//! stored in `fixtures/calibration.json`.

mod common;

use ivos_core::synth::{generate_scene, synthetic_suite};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
struct Calibration {
    nn_oracle_mean_j: f64,
    per_scene: Vec<f64>,
    threshold: f64,
}

fn compute() -> Calibration {
    let per_scene: Vec<f64> = synthetic_suite()
        .iter()
        .map(|c| common::nn_oracle_mean_j(&generate_scene(c).unwrap()))
        .collect();
    Calibration {
        nn_oracle_mean_j: per_scene.iter().sum::<f64>() / per_scene.len() as f64,
        per_scene,
        threshold: 0.75,
    }
}

#[test]
fn fixture_matches_oracle() {
    let stored: Calibration = serde_json::from_str(include_str!("fixtures/calibration.json")).unwrap();
    let now = compute();
    assert!((stored.nn_oracle_mean_j - now.nn_oracle_mean_j).abs() < 1e-9);
    assert!(stored.threshold <= stored.nn_oracle_mean_j);
}

#[test]
#[ignore = "rewrites the checked-in fixture"]
fn regenerate_calibration() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/calibration.json");
    std::fs::write(path, serde_json::to_string_pretty(&compute()).unwrap() + "\n").unwrap();
}
