//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! gating criterion fails. Tolerances are pinned here and nowhere else.

mod common;

use std::time::{Duration, Instant};

use choicerbm::dataset::{load_csv, split, standardize_on_train, CsvSchema, SplitSpec};
use choicerbm::oracle::{
    exact_choice_distribution, exact_conditional_loglik, exact_loglik_gradient, finite_difference_gradient, generate,
    mean_kl_divergence, PlantedModel,
};
use choicerbm::report::hinton::{hinton_svg, HintonSpec};
use choicerbm::sensitivity::{sensitivity_run, BIAS_LABEL};
use choicerbm::stats::{bic, log_likelihood, rho_squared, validation_error};
use choicerbm::trainer::{init_params, train, train_crbm_observed, train_mnl_observed};
use choicerbm::{CrbmParams, TrainConfig};
use common::*;
use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_TOL: f64 = 1e-10;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-5;
const FD_BUDGET: Duration = Duration::from_secs(30);
const MNL_LL_TOL: f64 = 1e-9;
const BIC_TOL: f64 = 2.0;
const RHO2_TOL: f64 = 0.001;
const PLANTED_MARGIN: f64 = 0.02;
const PLANTED_BUDGET: Duration = Duration::from_secs(300);
const FULL_SCALE_TOL: f64 = 0.01;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Closed-form `exp(−F(y|x)) / Σ exp(−F)` against explicit hidden-state sums.
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (i, j, k) = (rng.random_range(2..=5), rng.random_range(1..=4), rng.random_range(1..=3));
        let p = random_params(i, j, k, 2.0, &mut rng);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let neg_f: Vec<f64> = (0..i).map(|y| -p.conditional_free_energy(y, &x).unwrap()).collect();
        let m = neg_f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = neg_f.iter().map(|v| (v - m).exp()).sum();
        let exact = exact_choice_distribution(&p, &x).unwrap();
        for (y, e) in exact.iter().enumerate() {
            worst = worst.max(((neg_f[y] - m).exp() / z - e).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < ORACLE_TOL && elapsed < ORACLE_BUDGET,
        format!("200 models, max |diff| {worst:.2e} (tol {ORACLE_TOL:e}), {elapsed:.2?}"),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (i, j, k) = (rng.random_range(2..=4), rng.random_range(1..=3), rng.random_range(1..=3));
        let p = random_params(i, j, k, 1.0, &mut rng);
        let ds = random_dataset(12, i, k, &mut rng);
        let exact = exact_loglik_gradient(&p, &ds).unwrap().flatten();
        let fd = finite_difference_gradient(&p, FD_STEP, |q| exact_conditional_loglik(q, &ds)).unwrap();
        for (a, b) in exact.iter().zip(&fd) {
            // Relative error with an absolute floor for coordinates near zero.
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < FD_REL_TOL && elapsed < FD_BUDGET,
        format!("50 models, max rel err {worst:.2e} (tol {FD_REL_TOL:e}, step {FD_STEP:e}), {elapsed:.2?}"),
    )
}

fn mnl_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_params(4, 0, 3, 1.0, &mut rng);
    let ds = generate(&PlantedModel::new(truth, 3_000, 3)).unwrap();
    let (tr, va) = split(&ds, &SplitSpec::default()).unwrap();
    let (tr, va) = standardize_on_train(&tr, &va).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        learning_rate: 0.05,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut crbm_traj = Vec::new();
    let mut mnl_traj = Vec::new();
    let (crbm, crbm_trace) = train_crbm_observed(&tr, &va, 0, &cfg, &mut |_, p| crbm_traj.push(p.flatten())).unwrap();
    let (mnl, mnl_trace) = train_mnl_observed(&tr, &va, &cfg, &mut |_, p| mnl_traj.push(p.flatten())).unwrap();
    let bits = |t: &[Vec<f64>]| -> Vec<Vec<u64>> { t.iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect() };
    let same_traj = !crbm_traj.is_empty() && bits(&crbm_traj) == bits(&mnl_traj);
    let same_trace = crbm_trace == mnl_trace;
    let ll_diff = (log_likelihood(&crbm, &tr).unwrap() - log_likelihood(&mnl, &tr).unwrap()).abs();
    check(
        same_traj && same_trace && ll_diff <= MNL_LL_TOL,
        format!(
            "{} epoch snapshots bit-equal: {same_traj}, traces equal: {same_trace}, |ΔLL| {ll_diff:.1e} (tol {MNL_LL_TOL:e})",
            crbm_traj.len()
        ),
    )
}

fn statistics_reproduction() -> Outcome {
    let n = SplitSpec::default().train_size(253_803);
    let rows = [(-206_808.0, 273, 416_915.0, 0.546), (-203_558.0, 341, 411_237.0, 0.553)];
    let mut ok = n == 177_662;
    let mut parts = vec![format!("N={n}")];
    for (ll, np, want_bic, want_rho) in rows {
        let b = bic(ll, np, n);
        let r = rho_squared(ll, n, 13);
        ok &= (b - want_bic).abs() <= BIC_TOL && (r - want_rho).abs() <= RHO2_TOL;
        parts.push(format!("BIC {b:.1} vs {want_bic}, rho2 {r:.4} vs {want_rho}"));
    }
    check(ok, parts.join("; "))
}

struct PlantedRun {
    mnl_error: f64,
    crbm_error: f64,
    kl: Vec<f64>,
    crbm: CrbmParams,
    elapsed: Duration,
}

fn planted_run() -> PlantedRun {
    let start = Instant::now();
    let PlantedSplit { truth, train: tr, valid: va } = planted_split();
    let cfg = planted_config();
    let (mnl, _) = train(&tr, &va, 0, &cfg).unwrap();
    let raw = va.raw().clone();
    let stats = tr.norm_stats().clone();
    let init = init_params(&tr, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut kl = vec![mean_kl_divergence(&truth, &init, &raw, &stats).unwrap()];
    let (crbm, _) = train_crbm_observed(&tr, &va, 2, &cfg, &mut |e, p| {
        if (e + 1) % 10 == 0 {
            kl.push(mean_kl_divergence(&truth, p, &raw, &stats).unwrap());
        }
    })
    .unwrap();
    PlantedRun {
        mnl_error: validation_error(&mnl, &va).unwrap().error,
        crbm_error: validation_error(&crbm, &va).unwrap().error,
        kl,
        crbm,
        elapsed: start.elapsed(),
    }
}

fn planted_recovery(run: &PlantedRun) -> Outcome {
    let kl = &run.kl;
    let q = (kl.len() / 4).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let decreasing = mean(&kl[kl.len() - q..]) < mean(&kl[..q]) && kl[kl.len() - 1] < kl[0];
    let gap = run.mnl_error - run.crbm_error;
    check(
        gap >= PLANTED_MARGIN && decreasing && run.elapsed < PLANTED_BUDGET,
        format!(
            "MNL err {:.4}, C-RBM err {:.4} (gap {:.2} pp, need {:.0}); KL {:.4} -> {:.4} over {} checkpoints; {:.1?}",
            run.mnl_error,
            run.crbm_error,
            100.0 * gap,
            100.0 * PLANTED_MARGIN,
            kl[0],
            kl[kl.len() - 1],
            kl.len(),
            run.elapsed
        ),
    )
}

/// Optional: needs the externally prepared 253,803-row table.
fn full_scale() -> Option<Outcome> {
    let path = std::env::var_os("CHOICERBM_FULL_DATA")?;
    let choice = std::env::var("CHOICERBM_FULL_CHOICE_COL").unwrap_or_else(|_| "choice".into());
    let ds = match load_csv(std::path::Path::new(&path), &CsvSchema::new(choice)) {
        Ok(ds) => ds,
        Err(e) => return Some(Err(format!("cannot load data: {e}"))),
    };
    let (tr, va) = split(&ds, &SplitSpec::default()).unwrap();
    let (tr, va) = standardize_on_train(&tr, &va).unwrap();
    let cfg = TrainConfig::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for (j, target) in [(0, 0.4454), (2, 0.4360)] {
        let (p, _) = train(&tr, &va, j, &cfg).unwrap();
        let err = validation_error(&p, &va).unwrap().error;
        ok &= (err - target).abs() <= FULL_SCALE_TOL;
        parts.push(format!("J={j} err {err:.4} (target {target} ± {FULL_SCALE_TOL})"));
    }
    Some(check(ok, parts.join("; ")))
}

fn sensitivity_sanity() -> Outcome {
    // Feature 1 carries 100× the choice weight of every other feature; the
    // latent unit is driven by feature 2 so that it is not collinear with
    // either feature 1 or the biases.
    let mut truth = CrbmParams::zeros(3, 1, 4);
    for (i, sign) in [1.0, -1.0, 0.5].into_iter().enumerate() {
        truth.choice_context[[i, 0]] = 5.0 * sign;
        for k in 1..4 {
            truth.choice_context[[i, k]] = if k % 2 == 0 { 0.05 } else { -0.05 } * sign;
        }
        truth.choice_hidden[[i, 0]] = 2.0 * sign;
    }
    truth.hidden_context[[0, 1]] = 3.0;
    let ds = generate(&PlantedModel::new(truth, 20_000, 11)).unwrap();
    let (tr, va) = split(&ds, &SplitSpec { seed: 11, ..SplitSpec::default() }).unwrap();
    let (tr, va) = standardize_on_train(&tr, &va).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        learning_rate: 0.05,
        weight_init_scale: 0.5,
        early_stop_patience: 0,
        seed: 11,
        ..TrainConfig::default()
    };

    let identity = sensitivity_run(&tr, &va, 1, &cfg, 1.0, 1, 5).unwrap();
    let zero_diffs = identity.variables.iter().all(|v| v.se_diff_pct == 0.0);
    let identity_ok = zero_diffs && identity.spearman == 1.0;

    // Ranked on the logit fit: with latent units the bias standard errors
    // absorb the c–D collinearity and outrank every feature (reported below).
    let sub = sensitivity_run(&tr, &va, 0, &cfg, 0.1, 5, 5).unwrap();
    let dominant = &sub.variables[0];
    let each_replicate = sub.replicate_ranks.iter().all(|r| r[0] == 1);
    let dominant_ok = dominant.full_rank == 1 && dominant.sample_rank == 1 && each_replicate;
    let latent = sensitivity_run(&tr, &va, 1, &cfg, 0.1, 5, 5).unwrap();
    let ranks = |r: &choicerbm::SensitivityReport| -> String {
        r.variables
            .iter()
            .map(|v| format!("{}:{}/{}", v.name, v.full_rank, v.sample_rank))
            .collect::<Vec<_>>()
            .join(" ")
    };
    debug_assert_eq!(sub.variables.last().unwrap().name, BIAS_LABEL);
    check(
        identity_ok && dominant_ok,
        format!(
            "fraction 1 (J=1): zero diffs {zero_diffs}, spearman {}; fraction 0.1 ×5 (n_s={}, J=0): dominant rank 1 in full {}, every replicate {each_replicate}; ranks full/sub J=0 [{}], J=1 (informational) [{}]",
            identity.spearman,
            sub.subsample_size,
            dominant.full_rank == 1,
            ranks(&sub),
            ranks(&latent)
        ),
    )
}

fn hinton_rendering() -> Outcome {
    let matrix = array![[1.0, -0.5, 0.0], [0.25, -1.0, 0.75], [0.0, 0.1, -0.2]];
    let tstats = array![[5.0, -3.0, 0.0], [1.0, -2.5, 1.96], [0.5, 1.95, -0.3]];
    let labels = |p: &str| (1..=3).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let spec = HintonSpec::new(matrix.clone(), labels("alt"), labels("x")).with_tstats(tstats.clone());
    let first = hinton_svg(&spec).unwrap();
    let second = hinton_svg(&spec).unwrap();
    let golden_path = golden_path("hinton_3x3.svg");
    if std::env::var_os("CHOICERBM_BLESS").is_some() {
        std::fs::write(&golden_path, &first).unwrap();
    }
    let golden = std::fs::read_to_string(&golden_path).unwrap_or_default();
    let stable = first == second;
    let matches_golden = first == golden;

    let mut blue_exact = true;
    let mut fills_ok = true;
    let patches: Vec<&str> = first.lines().filter(|l| l.contains(r#"class="patch""#)).collect();
    for line in &patches {
        let attr = |name: &str| {
            let key = format!(r#" {name}=""#);
            let s = line.find(&key).unwrap() + key.len();
            line[s..s + line[s..].find('"').unwrap()].to_string()
        };
        let (r, c): (usize, usize) = (attr("data-row").parse().unwrap(), attr("data-col").parse().unwrap());
        blue_exact &= line.contains(r#"stroke="blue""#) == (tstats[[r, c]].abs() >= 1.96);
        let v = matrix[[r, c]];
        fills_ok &= v == 0.0 || (attr("fill") == "black") == (v < 0.0);
    }
    let n_blue = first.matches(r#"stroke="blue""#).count();
    check(
        stable && matches_golden && blue_exact && fills_ok && patches.len() == 9,
        format!(
            "byte-identical reruns {stable}, matches golden {matches_golden}, blue strokes {n_blue} exactly where |t|>=1.96: {blue_exact}, fill signs {fills_ok}"
        ),
    )
}

fn determinism(reference: &CrbmParams) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("planted.csv");
    let spec = planted_spec();
    let cfg = planted_config();
    let seed = PLANTED_SEED.to_string();
    let n = PLANTED_ROWS.to_string();
    let lr = cfg.learning_rate.to_string();
    let epochs = cfg.epochs.to_string();
    let init = cfg.weight_init_scale.to_string();
    let gen = run_cli(&["generate", "--planted", spec.to_str().unwrap(), "--n", &n, "--seed", &seed, "--out", data.to_str().unwrap()]);
    if gen.0 != 0 {
        return Err(format!("generate failed: {}", gen.2));
    }
    let mut files = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("model{run}.txt"));
        #[rustfmt::skip]
        let (code, _, err) = run_cli(&[
            "train", "--data", data.to_str().unwrap(), "--hidden", "2", "--epochs", &epochs, "--lr", &lr,
            "--init-scale", &init, "--patience", "0", "--seed", &seed, "--out", out.to_str().unwrap(),
        ]);
        if code != 0 {
            return Err(format!("train failed: {err}"));
        }
        files.push(std::fs::read(&out).unwrap());
    }
    let identical = files[0] == files[1];
    let loaded = choicerbm::report::load_model(&dir.path().join("model0.txt")).unwrap();
    let matches_library = loaded.params == *reference;
    check(
        identical && !files[0].is_empty(),
        format!(
            "two CLI runs -> model files bit-identical: {identical} ({} bytes); equal to in-process fit: {matches_library}",
            files[0].len()
        ),
    )
}

fn main() {
    env_logger::init();
    let planted = planted_run();
    let results: Vec<(u32, &str, Option<Outcome>, bool)> = vec![
        (1, "oracle equivalence", Some(oracle_equivalence()), true),
        (2, "gradient correctness", Some(gradient_correctness()), true),
        (3, "MNL reduction", Some(mnl_reduction()), true),
        (4, "statistics reproduction", Some(statistics_reproduction()), true),
        (5, "planted-model recovery", Some(planted_recovery(&planted)), true),
        (6, "full-scale reproduction (optional)", full_scale(), false),
        (7, "sensitivity sanity", Some(sensitivity_sanity()), true),
        (8, "Hinton rendering", Some(hinton_rendering()), true),
        (9, "determinism", Some(determinism(&planted.crbm)), true),
    ];
    let mut failed = 0;
    for (id, name, outcome, gating) in results {
        match outcome {
            Some(Ok(d)) => println!("criterion {id} [{name}]: PASS - {d}"),
            Some(Err(d)) => {
                failed += gating as u32;
                println!("criterion {id} [{name}]: FAIL - {d}");
            }
            None => println!("criterion {id} [{name}]: SKIP - set CHOICERBM_FULL_DATA to the prepared 253,803-row CSV to run"),
        }
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
    println!("all gating criteria passed");
}
