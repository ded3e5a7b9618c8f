//! Sampling-based sensitivity: refit on random subsamples and compare
//! per-variable standard-error rankings with the full-sample fit.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::model::CrbmParams;
use crate::par;
use crate::stats::t_statistics;
use crate::trainer::{train, TrainConfig};

/// Label used for the alternative-specific constants row.
pub const BIAS_LABEL: &str = "bias";

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSensitivity {
    pub name: String,
    pub full_rank: usize,
    pub sample_rank: usize,
    /// Mean over replicates of `100·|se_sub − se_full| / se_full`.
    pub se_diff_pct: f64,
    pub se_diff_pct_sd: f64,
    pub full_se: f64,
    pub sample_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub n_hidden: usize,
    pub fraction: f64,
    pub subsample_size: usize,
    /// Seed of each replicate's subsample draw.
    pub replicate_seeds: Vec<u64>,
    pub variables: Vec<VariableSensitivity>,
    /// Per-replicate sample ranks, one vector per replicate.
    pub replicate_ranks: Vec<Vec<usize>>,
    /// Spearman correlation between the full and mean-subsample rankings.
    pub spearman: f64,
}

/// `⌊fraction·n⌋`.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).floor() as usize
}

/// One scalar per explanatory variable (RMS of its I choice-context standard
/// errors) followed by the RMS over the choice biases.
pub fn variable_scores(std_errs: &CrbmParams) -> Vec<f64> {
    let rms = |vals: Vec<f64>| (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
    let mut out: Vec<f64> = std_errs
        .choice_context
        .columns()
        .into_iter()
        .map(|col| rms(col.to_vec()))
        .collect();
    out.push(rms(std_errs.choice_bias.to_vec()));
    out
}

/// Ranks by descending score (1 = largest); earlier entries win ties.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}

/// Spearman correlation of two tie-free rankings: `1 − 6Σd² / (n(n² − 1))`.
pub fn rank_agreement(full: &[usize], sample: &[usize]) -> Result<f64> {
    if full.len() != sample.len() {
        return Err(Error::Dimension {
            context: "rank vectors",
            expected: full.len(),
            actual: sample.len(),
        });
    }
    let n = full.len() as f64;
    if full.len() < 2 {
        return Ok(1.0);
    }
    let d2: f64 = full
        .iter()
        .zip(sample)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

fn relative_diff_pct(full: f64, sample: f64) -> f64 {
    if full == sample {
        0.0
    } else {
        100.0 * (sample - full).abs() / full.abs()
    }
}

fn fit_scores(train_ds: &ChoiceDataset, valid: &ChoiceDataset, n_hidden: usize, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let (params, _) = train(train_ds, valid, n_hidden, cfg)?;
    Ok(variable_scores(&t_statistics(&params, train_ds)?.std_errs))
}

/// Fits on the full training set and on `replicates` simple random subsamples
/// (without replacement) of size `⌊fraction·n⌋`, all with the same training
/// configuration. Subsampled rows keep their original order, so `fraction = 1`
/// reproduces the full fit exactly.
pub fn sensitivity_run(
    train_ds: &ChoiceDataset,
    valid: &ChoiceDataset,
    n_hidden: usize,
    cfg: &TrainConfig,
    fraction: f64,
    replicates: usize,
    seed: u64,
) -> Result<SensitivityReport> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} must lie in (0, 1]")));
    }
    if replicates == 0 {
        return Err(Error::invalid("at least one replicate is required"));
    }
    let n = train_ds.n_rows();
    let m = subsample_size(n, fraction);
    if m < cfg.batch_size {
        return Err(Error::invalid(format!(
            "subsample of {m} rows is smaller than the batch size {}",
            cfg.batch_size
        )));
    }
    let replicate_seeds: Vec<u64> = (0..replicates)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            rng.random()
        })
        .collect();

    let full = fit_scores(train_ds, valid, n_hidden, cfg)?;
    let subs = par::map_indices(replicates, |r| -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(replicate_seeds[r]);
        let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
        idx.sort_unstable();
        fit_scores(&train_ds.select(&idx)?, valid, n_hidden, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let nv = full.len();
    let mean_sub: Vec<f64> = (0..nv)
        .map(|v| subs.iter().map(|s| s[v]).sum::<f64>() / replicates as f64)
        .collect();
    let full_ranks = rank_descending(&full);
    let sample_ranks = rank_descending(&mean_sub);
    let names: Vec<String> = train_ds
        .feature_names()
        .iter()
        .cloned()
        .chain(std::iter::once(BIAS_LABEL.to_string()))
        .collect();
    let variables = (0..nv)
        .map(|v| {
            let diffs: Vec<f64> = subs.iter().map(|s| relative_diff_pct(full[v], s[v])).collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var = if diffs.len() > 1 {
                diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (diffs.len() - 1) as f64
            } else {
                0.0
            };
            VariableSensitivity {
                name: names[v].clone(),
                full_rank: full_ranks[v],
                sample_rank: sample_ranks[v],
                se_diff_pct: mean,
                se_diff_pct_sd: var.sqrt(),
                full_se: full[v],
                sample_se: mean_sub[v],
            }
        })
        .collect();
    Ok(SensitivityReport {
        n_hidden,
        fraction,
        subsample_size: m,
        replicate_seeds,
        variables,
        replicate_ranks: subs.iter().map(|s| rank_descending(s)).collect(),
        spearman: rank_agreement(&full_ranks, &sample_ranks)?,
    })
}

/// Writes one row per variable and one column group per report:
/// `J<j>_full_rank, J<j>_sample_rank, J<j>_se_diff_pct`.
pub fn write_sensitivity_csv<W: Write>(reports: &[SensitivityReport], out: W) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::invalid("no sensitivity reports to write"));
    };
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["variable".to_string()];
    for r in reports {
        if r.variables.len() != first.variables.len() {
            return Err(Error::invalid("sensitivity reports cover different variables"));
        }
        let j = r.n_hidden;
        header.extend([format!("J{j}_full_rank"), format!("J{j}_sample_rank"), format!("J{j}_se_diff_pct")]);
    }
    w.write_record(&header)?;
    for v in 0..first.variables.len() {
        let mut rec = vec![first.variables[v].name.clone()];
        for r in reports {
            let var = &r.variables[v];
            rec.extend([
                var.full_rank.to_string(),
                var.sample_rank.to_string(),
                format!("{:.2}", var.se_diff_pct),
            ]);
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<sensitivity>", e))?;
    Ok(())
}
