//! Brute-force reference computations and planted-model data generation.
//!
//! Everything here sums explicitly over the 2^J hidden configurations and uses
//! its own energy loops, so it shares no arithmetic with the closed forms in
//! [`crate::model`] or the trainer.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ChoiceDataset, NormStats};
use crate::error::{check_dim, Error, Result};
use crate::model::{categorical, Block, CrbmParams};
use crate::numeric::log_sum_exp;
use crate::par;

pub const MAX_ENUM_ALTERNATIVES: usize = 16;
pub const MAX_ENUM_HIDDEN: usize = 12;

fn check_enumerable(p: &CrbmParams) -> Result<()> {
    if p.n_hidden() > MAX_ENUM_HIDDEN || p.n_alternatives() > MAX_ENUM_ALTERNATIVES {
        return Err(Error::TooLarge(format!(
            "I={} J={} exceeds enumeration caps I<={MAX_ENUM_ALTERNATIVES}, J<={MAX_ENUM_HIDDEN}",
            p.n_alternatives(),
            p.n_hidden()
        )));
    }
    Ok(())
}

/// Log unnormalized weight of every (alternative, hidden mask) pair, indexed `[i][mask]`.
fn joint_log_weights(p: &CrbmParams, x: &[f64]) -> Vec<Vec<f64>> {
    let (ni, nj, nk) = (p.n_alternatives(), p.n_hidden(), p.n_features());
    (0..ni)
        .map(|i| {
            (0..1usize << nj)
                .map(|mask| {
                    let h = |j: usize| ((mask >> j) & 1) as f64;
                    // Energy without context.
                    let mut energy = -p.choice_bias[i];
                    for j in 0..nj {
                        energy -= h(j) * p.hidden_bias[j];
                        energy -= h(j) * p.choice_hidden[[i, j]];
                    }
                    // Clamped context terms.
                    let mut ctx = 0.0;
                    for k in 0..nk {
                        ctx += p.choice_context[[i, k]] * x[k];
                        for j in 0..nj {
                            ctx += h(j) * p.hidden_context[[j, k]] * x[k];
                        }
                    }
                    -energy + ctx
                })
                .collect()
        })
        .collect()
}

/// `p(y = i | x)` by summing the joint over every hidden configuration.
pub fn exact_choice_distribution(p: &CrbmParams, x: &[f64]) -> Result<Vec<f64>> {
    check_enumerable(p)?;
    check_dim("context vector", p.n_features(), x.len())?;
    let logw = joint_log_weights(p, x);
    let marg: Vec<f64> = logw.iter().map(|w| log_sum_exp(w)).collect();
    let z = log_sum_exp(&marg);
    Ok(marg.iter().map(|m| (m - z).exp()).collect())
}

/// `Σ_rows ln p(y_obs | x)` under the exact marginal.
pub fn exact_conditional_loglik(p: &CrbmParams, ds: &ChoiceDataset) -> Result<f64> {
    check_enumerable(p)?;
    check_dim("dataset features", p.n_features(), ds.n_features())?;
    check_dim("dataset alternatives", p.n_alternatives(), ds.n_alternatives())?;
    let mut total = 0.0;
    for r in 0..ds.n_rows() {
        let x = ds.row(r).to_vec();
        let logw = joint_log_weights(p, &x);
        let marg: Vec<f64> = logw.iter().map(|w| log_sum_exp(w)).collect();
        total += marg[ds.choice(r)] - log_sum_exp(&marg);
    }
    Ok(total)
}

/// Exact gradient of [`exact_conditional_loglik`]: data expectation of the
/// sufficient statistics minus their model expectation, both by enumeration.
pub fn exact_loglik_gradient(p: &CrbmParams, ds: &ChoiceDataset) -> Result<CrbmParams> {
    check_enumerable(p)?;
    check_dim("dataset features", p.n_features(), ds.n_features())?;
    check_dim("dataset alternatives", p.n_alternatives(), ds.n_alternatives())?;
    let (ni, nj, nk) = (p.n_alternatives(), p.n_hidden(), p.n_features());
    let mut g = CrbmParams::zeros(ni, nj, nk);
    for r in 0..ds.n_rows() {
        let x = ds.row(r).to_vec();
        let obs = ds.choice(r);
        let logw = joint_log_weights(p, &x);
        let flat: Vec<f64> = logw.iter().flatten().copied().collect();
        let log_z = log_sum_exp(&flat);
        let log_z_obs = log_sum_exp(&logw[obs]);

        // Model marginals P(i) and P(i, h_j = 1); data marginals P(h_j = 1 | obs).
        let mut p_i = vec![0.0; ni];
        let mut p_ij = vec![vec![0.0; nj]; ni];
        let mut data_h = vec![0.0; nj];
        for i in 0..ni {
            for (mask, &lw) in logw[i].iter().enumerate() {
                let w = (lw - log_z).exp();
                p_i[i] += w;
                for j in 0..nj {
                    if (mask >> j) & 1 == 1 {
                        p_ij[i][j] += w;
                        if i == obs {
                            data_h[j] += (lw - log_z_obs).exp();
                        }
                    }
                }
            }
        }
        for i in 0..ni {
            let resid = (i == obs) as u8 as f64 - p_i[i];
            g.choice_bias[i] += resid;
            for k in 0..nk {
                g.choice_context[[i, k]] += resid * x[k];
            }
            for j in 0..nj {
                let data = if i == obs { data_h[j] } else { 0.0 };
                g.choice_hidden[[i, j]] += data - p_ij[i][j];
            }
        }
        for j in 0..nj {
            let model_h: f64 = (0..ni).map(|i| p_ij[i][j]).sum();
            let diff = data_h[j] - model_h;
            g.hidden_bias[j] += diff;
            for k in 0..nk {
                g.hidden_context[[j, k]] += diff * x[k];
            }
        }
    }
    Ok(g)
}

/// Central finite-difference gradient of any scalar function of the flat parameters.
pub fn finite_difference_gradient<F>(p: &CrbmParams, step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&CrbmParams) -> Result<f64>,
{
    let base = p.flatten();
    let mut work = p.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut shifted = base.clone();
    for idx in 0..base.len() {
        shifted[idx] = base[idx] + step;
        work.set_flat(&shifted)?;
        let up = f(&work)?;
        shifted[idx] = base[idx] - step;
        work.set_flat(&shifted)?;
        let down = f(&work)?;
        shifted[idx] = base[idx];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Mean over rows of `KL(truth(·|x) ‖ model(·|x))`, both exact.
///
/// `raw` holds unscaled context rows; the truth sees them as-is and the model
/// sees them after `model_stats` normalization.
pub fn mean_kl_divergence(
    truth: &CrbmParams,
    model: &CrbmParams,
    raw: &Array2<f64>,
    model_stats: &NormStats,
) -> Result<f64> {
    check_enumerable(truth)?;
    check_enumerable(model)?;
    let n = raw.nrows();
    let parts = par::map_chunks(n, par::ROW_CHUNK, |range| -> Result<f64> {
        let mut s = 0.0;
        for r in range {
            let xr = raw.row(r).to_vec();
            let pt = exact_choice_distribution(truth, &xr)?;
            let pm = exact_choice_distribution(model, &model_stats.apply_row(&xr))?;
            for (a, b) in pt.iter().zip(&pm) {
                if *a > 0.0 {
                    s += a * (a / b).ln();
                }
            }
        }
        Ok(s)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / n as f64)
}

/// Distribution of one context variable in a planted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContextDist {
    Normal { mean: f64, std: f64 },
    Bernoulli { rate: f64 },
}

impl Default for ContextDist {
    fn default() -> Self {
        ContextDist::Normal { mean: 0.0, std: 1.0 }
    }
}

impl ContextDist {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ContextDist::Normal { mean, std } => {
                if std == 0.0 {
                    mean
                } else {
                    Normal::new(mean, std).expect("validated std").sample(rng)
                }
            }
            ContextDist::Bernoulli { rate } => (rng.random::<f64>() < rate) as u8 as f64,
        }
    }
}

/// Ground-truth parameters plus a generator for context rows.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub params: CrbmParams,
    pub context: Vec<ContextDist>,
    pub n_rows: usize,
    pub seed: u64,
}

impl PlantedModel {
    pub fn new(params: CrbmParams, n_rows: usize, seed: u64) -> Self {
        let context = vec![ContextDist::default(); params.n_features()];
        PlantedModel {
            params,
            context,
            n_rows,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        check_enumerable(&self.params)?;
        check_dim("context distributions", self.params.n_features(), self.context.len())?;
        for c in &self.context {
            match *c {
                ContextDist::Normal { std, mean } if !(std >= 0.0 && std.is_finite() && mean.is_finite()) => {
                    return Err(Error::invalid("normal context needs finite mean and std >= 0"))
                }
                ContextDist::Bernoulli { rate } if !(0.0..=1.0).contains(&rate) => {
                    return Err(Error::invalid("bernoulli context rate must lie in [0, 1]"))
                }
                _ => {}
            }
        }
        if self.n_rows == 0 {
            return Err(Error::invalid("planted model must generate at least one row"));
        }
        Ok(())
    }
}

/// Draws context rows, then one choice per row from the exact distribution.
///
/// Each row owns an RNG stream derived from the seed, so output does not
/// depend on the worker count.
pub fn generate(pm: &PlantedModel) -> Result<ChoiceDataset> {
    pm.validate()?;
    let k = pm.params.n_features();
    let rows = par::map_indices(pm.n_rows, |r| -> Result<(Vec<f64>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(pm.seed);
        rng.set_stream(r as u64);
        let x: Vec<f64> = pm.context.iter().map(|c| c.sample(&mut rng)).collect();
        let probs = exact_choice_distribution(&pm.params, &x)?;
        Ok((x, categorical(&probs, &mut rng)))
    });
    let mut raw = Vec::with_capacity(pm.n_rows * k);
    let mut choices = Vec::with_capacity(pm.n_rows);
    for row in rows {
        let (x, c) = row?;
        raw.extend(x);
        choices.push(c);
    }
    let raw = Array2::from_shape_vec((pm.n_rows, k), raw).expect("shape matches buffer");
    ChoiceDataset::from_raw(raw, choices, pm.params.n_alternatives())
}

/// Reads a planted-model description.
///
/// Long-format CSV with header `kind,index1,index2,value`. Kinds: `alternatives`,
/// `hidden`, `features` (dimensions, required, first); `c`, `d` (1-based index1);
/// `D` (alternative, hidden), `B` (alternative, feature), `A` (hidden, feature);
/// `x_mean`, `x_std`, `x_bernoulli` (1-based feature in index1). Unlisted
/// parameters are zero and unlisted features are standard normal.
pub fn read_planted_spec(path: &Path) -> Result<CrbmParamsWithContext> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut dims = [None::<usize>; 3];
    let mut entries = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").to_string();
        let kind = field(0);
        let parse_idx = |s: String, what: &str| -> Result<usize> {
            s.parse::<usize>().ok().filter(|&v| v >= 1).ok_or_else(|| Error::Parse {
                row,
                column: what.to_string(),
                message: format!("`{s}` is not a 1-based index"),
            })
        };
        let value_s = field(3);
        let value: f64 = value_s.parse().map_err(|_| Error::Parse {
            row,
            column: "value".into(),
            message: format!("`{value_s}` is not numeric"),
        })?;
        match kind.as_str() {
            "alternatives" | "hidden" | "features" => {
                let slot = ["alternatives", "hidden", "features"]
                    .iter()
                    .position(|&k| k == kind)
                    .unwrap();
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Domain {
                        row,
                        message: format!("dimension `{kind}` must be a non-negative integer"),
                    });
                }
                dims[slot] = Some(value as usize);
            }
            "c" | "d" | "x_mean" | "x_std" | "x_bernoulli" => {
                entries.push((row, kind, parse_idx(field(1), "index1")?, 0, value));
            }
            "D" | "B" | "A" => {
                entries.push((row, kind, parse_idx(field(1), "index1")?, parse_idx(field(2), "index2")?, value));
            }
            other => {
                return Err(Error::Parse {
                    row,
                    column: "kind".into(),
                    message: format!("unknown kind `{other}`"),
                })
            }
        }
    }
    let [Some(ni), Some(nj), Some(nk)] = dims else {
        return Err(Error::invalid("planted spec must set alternatives, hidden and features"));
    };
    let mut params = CrbmParams::zeros(ni, nj, nk);
    let mut context = vec![ContextDist::default(); nk];
    for (row, kind, a, b, v) in entries {
        let oob = || Error::Domain {
            row,
            message: format!("index out of range for `{kind}`"),
        };
        let (a, b) = (a - 1, b.saturating_sub(1));
        match kind.as_str() {
            "c" => *params.choice_bias.get_mut(a).ok_or_else(oob)? = v,
            "d" => *params.hidden_bias.get_mut(a).ok_or_else(oob)? = v,
            "D" => *params.choice_hidden.get_mut([a, b]).ok_or_else(oob)? = v,
            "B" => *params.choice_context.get_mut([a, b]).ok_or_else(oob)? = v,
            "A" => *params.hidden_context.get_mut([a, b]).ok_or_else(oob)? = v,
            _ => {
                let slot = context.get_mut(a).ok_or_else(oob)?;
                *slot = match (kind.as_str(), *slot) {
                    ("x_mean", ContextDist::Normal { std, .. }) => ContextDist::Normal { mean: v, std },
                    ("x_std", ContextDist::Normal { mean, .. }) => ContextDist::Normal { mean, std: v },
                    ("x_mean" | "x_std", ContextDist::Bernoulli { .. }) => {
                        return Err(Error::Domain {
                            row,
                            message: "feature already declared bernoulli".into(),
                        })
                    }
                    _ => ContextDist::Bernoulli { rate: v },
                };
            }
        }
    }
    Ok(CrbmParamsWithContext { params, context })
}

/// Parameters and context distributions as read from a planted spec file.
#[derive(Debug, Clone)]
pub struct CrbmParamsWithContext {
    pub params: CrbmParams,
    pub context: Vec<ContextDist>,
}

/// Writes a planted-model description readable by [`read_planted_spec`].
pub fn write_planted_spec(path: &Path, params: &CrbmParams, context: &[ContextDist]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kind", "index1", "index2", "value"])?;
    let dims = [
        ("alternatives", params.n_alternatives()),
        ("hidden", params.n_hidden()),
        ("features", params.n_features()),
    ];
    for (kind, v) in dims {
        w.write_record([kind, "", "", &v.to_string()])?;
    }
    for b in Block::ALL {
        let m = params.block_matrix(b);
        for ((r, c), v) in m.indexed_iter() {
            let second = if m.ncols() == 1 && matches!(b, Block::ChoiceBias | Block::HiddenBias) {
                String::new()
            } else {
                (c + 1).to_string()
            };
            w.write_record([b.symbol(), &(r + 1).to_string(), &second, &format!("{v:?}")])?;
        }
    }
    for (k, c) in context.iter().enumerate() {
        let idx = (k + 1).to_string();
        match *c {
            ContextDist::Normal { mean, std } => {
                w.write_record(["x_mean", &idx, "", &format!("{mean:?}")])?;
                w.write_record(["x_std", &idx, "", &format!("{std:?}")])?;
            }
            ContextDist::Bernoulli { rate } => {
                w.write_record(["x_bernoulli", &idx, "", &format!("{rate:?}")])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
