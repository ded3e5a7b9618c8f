#![allow(dead_code)]

use std::path::PathBuf;

use choicerbm::dataset::{split, standardize_on_train, SplitSpec};
use choicerbm::oracle::{generate, read_planted_spec, PlantedModel};
use choicerbm::{ChoiceDataset, CrbmParams, TrainConfig};
use rand::Rng;

/// Seed shared by data generation, split and training in the planted experiment.
pub const PLANTED_SEED: u64 = 7;
pub const PLANTED_ROWS: usize = 50_000;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden").join(name)
}

/// Two latent units that switch on at opposite tails of x1 and both push
/// alternative 2, plus linear effects of the other features.
pub fn planted_spec() -> PathBuf {
    data_path("planted_j2.csv")
}

/// Settings under which the latent structure is recovered. The default
/// initial scale of 0.01 leaves the hidden units stuck near the symmetric
/// saddle for the whole budget.
pub fn planted_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.1,
        epochs: 100,
        weight_init_scale: 0.5,
        early_stop_patience: 0,
        seed: PLANTED_SEED,
        ..TrainConfig::default()
    }
}

pub struct PlantedSplit {
    pub truth: CrbmParams,
    pub train: ChoiceDataset,
    pub valid: ChoiceDataset,
}

pub fn planted_split() -> PlantedSplit {
    let spec = read_planted_spec(&planted_spec()).expect("planted spec parses");
    let pm = PlantedModel {
        params: spec.params.clone(),
        context: spec.context,
        n_rows: PLANTED_ROWS,
        seed: PLANTED_SEED,
    };
    let ds = generate(&pm).expect("generation succeeds");
    let (tr, va) = split(
        &ds,
        &SplitSpec {
            seed: PLANTED_SEED,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    let (train, valid) = standardize_on_train(&tr, &va).unwrap();
    PlantedSplit {
        truth: spec.params,
        train,
        valid,
    }
}

pub fn random_params<R: Rng>(i: usize, j: usize, k: usize, scale: f64, rng: &mut R) -> CrbmParams {
    let mut p = CrbmParams::zeros(i, j, k);
    let flat: Vec<f64> = (0..p.param_count()).map(|_| rng.random_range(-scale..scale)).collect();
    p.set_flat(&flat).unwrap();
    p
}

pub fn random_dataset<R: Rng>(n: usize, i: usize, k: usize, rng: &mut R) -> ChoiceDataset {
    let x = ndarray::Array2::from_shape_fn((n, k), |_| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(0..i)).collect();
    ChoiceDataset::unscaled(x, y, i).unwrap()
}

/// Runs the binary's entry point in-process and captures its output.
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("choicerbm").chain(args.iter().copied());
    let code = choicerbm::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
