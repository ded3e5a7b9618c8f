//! Fit statistics: log-likelihood, ρ², BIC, validation error and OPG-based
//! standard errors / t-statistics.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::dataset::ChoiceDataset;
use crate::error::{check_dim, Error, Result};
use crate::inference::predict_batch;
use crate::model::{Block, CrbmParams, RowContext};
use crate::numeric::log_sum_exp;
use crate::par;

/// Two-sided 95% normal quantile used for the significance flag.
pub const SIGNIFICANCE_Z: f64 = 1.96;

pub fn is_significant(t: f64) -> bool {
    t.abs() >= SIGNIFICANCE_Z
}

fn check_dataset(p: &CrbmParams, ds: &ChoiceDataset) -> Result<()> {
    check_dim("dataset features", p.n_features(), ds.n_features())?;
    check_dim("dataset alternatives", p.n_alternatives(), ds.n_alternatives())
}

/// Per-row conditional log-probability of the observed choice under the
/// mean-field predictor, computed as a log-softmax.
fn row_loglik(p: &CrbmParams, x: &[f64], choice: usize, logits: &mut [f64]) -> f64 {
    let ctx = RowContext::new_unchecked(p, x);
    let h = ctx.mean_field_hidden();
    for (i, l) in logits.iter_mut().enumerate() {
        let mut s = ctx.choice_base[i];
        for (&w, &hj) in p.choice_hidden.row(i).iter().zip(&h) {
            s += w * hj;
        }
        *l = s;
    }
    logits[choice] - log_sum_exp(logits)
}

/// `Σ_rows ln p(y_obs | x)` with mean-field hidden activations.
pub fn log_likelihood(p: &CrbmParams, ds: &ChoiceDataset) -> Result<f64> {
    check_dataset(p, ds)?;
    let parts = par::map_chunks(ds.n_rows(), par::ROW_CHUNK, |range| {
        let mut logits = vec![0.0; p.n_alternatives()];
        range
            .map(|r| row_loglik(p, ds.row(r).as_slice().expect("row-major"), ds.choice(r), &mut logits))
            .sum::<f64>()
    });
    Ok(parts.into_iter().sum())
}

/// Equal-shares null log-likelihood `n·ln(1/I)`.
pub fn null_loglik(n: usize, n_alternatives: usize) -> f64 {
    n as f64 * (1.0 / n_alternatives as f64).ln()
}

/// `1 − LL / (n·ln(1/I))`.
pub fn rho_squared(loglik: f64, n: usize, n_alternatives: usize) -> f64 {
    1.0 - loglik / null_loglik(n, n_alternatives)
}

/// `−2·LL + n_params·ln(n)`.
pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScore {
    /// `1 − accuracy`.
    pub error: f64,
    pub accuracy: f64,
    /// Mean probability assigned to the observed alternative.
    pub mean_true_prob: f64,
}

pub fn validation_error(p: &CrbmParams, ds: &ChoiceDataset) -> Result<ValidationScore> {
    check_dataset(p, ds)?;
    let batch = predict_batch(p, ds)?;
    let n = ds.n_rows() as f64;
    let accuracy = batch.correct() as f64 / n;
    let mean_true_prob = batch
        .predictions
        .iter()
        .zip(ds.choices())
        .map(|(pr, &c)| pr.probs[c])
        .sum::<f64>()
        / n;
    Ok(ValidationScore {
        error: 1.0 - accuracy,
        accuracy,
        mean_true_prob,
    })
}

/// Standard errors and t-statistics laid out like the parameters.
#[derive(Debug, Clone)]
pub struct Significance {
    pub std_errs: CrbmParams,
    pub tstats: CrbmParams,
    /// Null directions of the information matrices (softmax location is unidentified).
    pub dropped_directions: usize,
}

impl Significance {
    /// Blocks whose errors come from the hidden-activation likelihood.
    pub const APPROXIMATE: [Block; 2] = [Block::HiddenContext, Block::HiddenBias];

    pub fn significant(&self, block: Block) -> Array2<bool> {
        self.tstats.block_matrix(block).mapv(is_significant)
    }
}

/// Number of chunks for information-matrix accumulation; fixed so the
/// reduction order never depends on the worker count.
const OPG_CHUNKS: usize = 32;

/// Accumulates `Σ_rows s sᵀ` (upper triangle) for per-row score vectors of length `dim`.
fn outer_product_of_gradients<F>(n_rows: usize, dim: usize, score: F) -> DMatrix<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk = n_rows.div_ceil(OPG_CHUNKS).max(1);
    let parts = par::map_chunks(n_rows, chunk, |range| {
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        let mut s = vec![0.0; dim];
        for r in range {
            s.fill(0.0);
            score(r, &mut s);
            for a in 0..dim {
                if s[a] == 0.0 {
                    continue;
                }
                for b in a..dim {
                    m[(a, b)] += s[a] * s[b];
                }
            }
        }
        m
    });
    let mut total = DMatrix::<f64>::zeros(dim, dim);
    for m in parts {
        total += m;
    }
    for a in 0..dim {
        for b in 0..a {
            total[(a, b)] = total[(b, a)];
        }
    }
    total
}

/// Diagonal of the Moore–Penrose inverse of a symmetric PSD matrix, plus the
/// number of eigen-directions discarded as numerically null.
fn pseudo_inverse_diagonal(m: DMatrix<f64>) -> (Vec<f64>, usize) {
    let dim = m.nrows();
    if dim == 0 {
        return (Vec::new(), 0);
    }
    let eig = SymmetricEigen::new(m);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = lmax * 1e-10;
    let mut dropped = 0;
    let mut diag = vec![0.0; dim];
    for (e, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= tol || lambda <= 0.0 {
            dropped += 1;
            continue;
        }
        for (a, d) in diag.iter_mut().enumerate() {
            let q = eig.eigenvectors[(a, e)];
            *d += q * q / lambda;
        }
    }
    (diag, dropped)
}

struct PredictionLayout {
    i: usize,
    j: usize,
    k: usize,
}

impl PredictionLayout {
    fn dim(&self) -> usize {
        self.i * (self.k + self.j + 1)
    }
    fn b(&self, i: usize, k: usize) -> usize {
        i * self.k + k
    }
    fn d(&self, i: usize, j: usize) -> usize {
        self.i * self.k + i * self.j + j
    }
    fn c(&self, i: usize) -> usize {
        self.i * (self.k + self.j) + i
    }
}

/// Score of one row with respect to (B, D, c), hidden units at mean field.
/// Also returns the residuals and activations for the hidden-block score.
fn prediction_score(p: &CrbmParams, x: &[f64], choice: usize, lay: &PredictionLayout, s: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let ctx = RowContext::new_unchecked(p, x);
    let h = ctx.mean_field_hidden();
    let mut probs = vec![0.0; lay.i];
    ctx.choice_probs(p, &h, &mut probs);
    let resid: Vec<f64> = (0..lay.i)
        .map(|i| (i == choice) as u8 as f64 - probs[i])
        .collect();
    for i in 0..lay.i {
        for k in 0..lay.k {
            s[lay.b(i, k)] = resid[i] * x[k];
        }
        for j in 0..lay.j {
            s[lay.d(i, j)] = resid[i] * h[j];
        }
        s[lay.c(i)] = resid[i];
    }
    (resid, h)
}

/// OPG (BHHH) standard errors and t-statistics.
///
/// B, D and c use per-row scores of the mean-field log-likelihood. A and d use
/// the chain-rule scores through `h = σ(d + Ax)` and are approximate.
pub fn t_statistics(p: &CrbmParams, ds: &ChoiceDataset) -> Result<Significance> {
    check_dataset(p, ds)?;
    let lay = PredictionLayout {
        i: p.n_alternatives(),
        j: p.n_hidden(),
        k: p.n_features(),
    };
    if ds.n_rows() <= p.param_count() {
        log::warn!(
            "{} rows for {} parameters; standard errors are unreliable",
            ds.n_rows(),
            p.param_count()
        );
    }
    let row = |r: usize| ds.row(r).to_slice().expect("row-major").to_vec();

    let pred_info = outer_product_of_gradients(ds.n_rows(), lay.dim(), |r, s| {
        prediction_score(p, &row(r), ds.choice(r), &lay, s);
    });
    let hidden_dim = lay.j * (lay.k + 1);
    let hidden_info = outer_product_of_gradients(ds.n_rows(), hidden_dim, |r, s| {
        let x = row(r);
        let mut tmp = vec![0.0; lay.dim()];
        let (resid, h) = prediction_score(p, &x, ds.choice(r), &lay, &mut tmp);
        for j in 0..lay.j {
            let mut g = 0.0;
            for i in 0..lay.i {
                g += resid[i] * p.choice_hidden[[i, j]];
            }
            g *= h[j] * (1.0 - h[j]);
            for k in 0..lay.k {
                s[j * lay.k + k] = g * x[k];
            }
            s[lay.j * lay.k + j] = g;
        }
    });
    let (pred_var, dropped_pred) = pseudo_inverse_diagonal(pred_info);
    let (hid_var, dropped_hid) = pseudo_inverse_diagonal(hidden_info);

    let mut se = CrbmParams::zeros(lay.i, lay.j, lay.k);
    for i in 0..lay.i {
        for k in 0..lay.k {
            se.choice_context[[i, k]] = pred_var[lay.b(i, k)].sqrt();
        }
        for j in 0..lay.j {
            se.choice_hidden[[i, j]] = pred_var[lay.d(i, j)].sqrt();
        }
        se.choice_bias[i] = pred_var[lay.c(i)].sqrt();
    }
    for j in 0..lay.j {
        for k in 0..lay.k {
            se.hidden_context[[j, k]] = hid_var[j * lay.k + k].sqrt();
        }
        se.hidden_bias[j] = hid_var[lay.j * lay.k + j].sqrt();
    }
    let dropped = dropped_pred + dropped_hid;
    if dropped > 0 {
        log::debug!("information matrices have {dropped} null directions; using pseudo-inverse");
    }
    let tstats = tstats_from(p, &se);
    Ok(Significance {
        std_errs: se,
        tstats,
        dropped_directions: dropped,
    })
}

fn tstats_from(p: &CrbmParams, se: &CrbmParams) -> CrbmParams {
    let mut t = se.clone();
    for b in Block::ALL {
        for ((tv, &theta), &s) in t
            .block_values_mut(b)
            .iter_mut()
            .zip(p.block_values(b))
            .zip(se.block_values(b))
        {
            *tv = if s > 0.0 { theta / s } else { 0.0 };
        }
    }
    t
}

/// Largest prediction block handled by [`hessian_std_errors`].
pub const MAX_HESSIAN_PARAMS: usize = 50;

/// Standard errors for (B, D, c) from a finite-difference Hessian of the
/// mean-field log-likelihood. Other blocks are left at zero.
pub fn hessian_std_errors(p: &CrbmParams, ds: &ChoiceDataset) -> Result<CrbmParams> {
    check_dataset(p, ds)?;
    let lay = PredictionLayout {
        i: p.n_alternatives(),
        j: p.n_hidden(),
        k: p.n_features(),
    };
    let dim = lay.dim();
    if dim > MAX_HESSIAN_PARAMS {
        return Err(Error::TooLarge(format!(
            "finite-difference Hessian limited to {MAX_HESSIAN_PARAMS} parameters, got {dim}"
        )));
    }
    let gather = |q: &CrbmParams| -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for i in 0..lay.i {
            for k in 0..lay.k {
                v[lay.b(i, k)] = q.choice_context[[i, k]];
            }
            for j in 0..lay.j {
                v[lay.d(i, j)] = q.choice_hidden[[i, j]];
            }
            v[lay.c(i)] = q.choice_bias[i];
        }
        v
    };
    let scatter = |q: &mut CrbmParams, v: &[f64]| {
        for i in 0..lay.i {
            for k in 0..lay.k {
                q.choice_context[[i, k]] = v[lay.b(i, k)];
            }
            for j in 0..lay.j {
                q.choice_hidden[[i, j]] = v[lay.d(i, j)];
            }
            q.choice_bias[i] = v[lay.c(i)];
        }
    };
    let score_sum = |q: &CrbmParams| -> Vec<f64> {
        let mut total = vec![0.0; dim];
        let mut s = vec![0.0; dim];
        for r in 0..ds.n_rows() {
            prediction_score(q, ds.row(r).as_slice().expect("row-major"), ds.choice(r), &lay, &mut s);
            for (t, v) in total.iter_mut().zip(&s) {
                *t += v;
            }
        }
        total
    };
    let base = gather(p);
    let step = 1e-5;
    let mut work = p.clone();
    let mut neg_hessian = DMatrix::<f64>::zeros(dim, dim);
    for a in 0..dim {
        let mut v = base.clone();
        v[a] = base[a] + step;
        scatter(&mut work, &v);
        let up = score_sum(&work);
        v[a] = base[a] - step;
        scatter(&mut work, &v);
        let down = score_sum(&work);
        for b in 0..dim {
            neg_hessian[(b, a)] = -(up[b] - down[b]) / (2.0 * step);
        }
    }
    let sym = (&neg_hessian + neg_hessian.transpose()) * 0.5;
    let (var, _) = pseudo_inverse_diagonal(sym);
    let mut se = CrbmParams::zeros(lay.i, lay.j, lay.k);
    let se_vec: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
    scatter(&mut se, &se_vec);
    Ok(se)
}

/// Everything reported for one fitted model.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub loglik_train: f64,
    pub loglik_valid: f64,
    pub rho2: f64,
    pub bic: f64,
    pub validation_error: f64,
    pub mean_true_prob: f64,
    pub n_params: usize,
    pub n_train: usize,
    pub n_hidden: usize,
    pub confusion: Array2<usize>,
    pub significance: Option<Significance>,
}

impl FitReport {
    /// ρ² and BIC use the training log-likelihood and training size.
    pub fn compute(p: &CrbmParams, train: &ChoiceDataset, valid: &ChoiceDataset, with_tstats: bool) -> Result<Self> {
        let loglik_train = log_likelihood(p, train)?;
        let loglik_valid = log_likelihood(p, valid)?;
        let score = validation_error(p, valid)?;
        let confusion = predict_batch(p, valid)?.confusion;
        let n_params = p.param_count();
        let n_train = train.n_rows();
        let significance = if with_tstats {
            Some(t_statistics(p, train)?)
        } else {
            None
        };
        Ok(FitReport {
            loglik_train,
            loglik_valid,
            rho2: rho_squared(loglik_train, n_train, p.n_alternatives()),
            bic: bic(loglik_train, n_params, n_train),
            validation_error: score.error,
            mean_true_prob: score.mean_true_prob,
            n_params,
            n_train,
            n_hidden: p.n_hidden(),
            confusion,
            significance,
        })
    }

    pub const TABLE_HEADER: [&'static str; 7] = [
        "model",
        "latent_variables",
        "validation_error",
        "log_likelihood",
        "rho2",
        "n_params",
        "bic",
    ];

    /// One results-table row: validation error, log-likelihood, ρ², parameters, BIC.
    pub fn table_row(&self) -> [String; 7] {
        let (model, latent) = if self.n_hidden == 0 {
            ("MNL".to_string(), "baseline".to_string())
        } else {
            ("CRBM".to_string(), format!("J={}", self.n_hidden))
        };
        [
            model,
            latent,
            format!("{:.4}", self.validation_error),
            format!("{:.0}", self.loglik_train),
            format!("{:.3}", self.rho2),
            self.n_params.to_string(),
            format!("{:.0}", self.bic),
        ]
    }

    pub fn write_table_csv<W: Write>(reports: &[FitReport], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::TABLE_HEADER)?;
        for r in reports {
            w.write_record(r.table_row())?;
        }
        w.flush().map_err(|e| Error::io("<table>", e))?;
        Ok(())
    }

    /// Multi-line human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("validation_error  {:.6}\n", self.validation_error));
        s.push_str(&format!("mean_true_prob    {:.6}\n", self.mean_true_prob));
        s.push_str(&format!("loglik_train      {:.6}\n", self.loglik_train));
        s.push_str(&format!("loglik_valid      {:.6}\n", self.loglik_valid));
        s.push_str(&format!("rho2              {:.6}\n", self.rho2));
        s.push_str(&format!("n_params          {}\n", self.n_params));
        s.push_str(&format!("n_train           {}\n", self.n_train));
        s.push_str(&format!("bic               {:.6}\n", self.bic));
        s.push_str("confusion (rows actual, cols predicted)\n");
        for row in self.confusion.outer_iter() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_model_loglik_closed_form() {
        let ds = ChoiceDataset::unscaled(Array2::zeros((9, 2)), vec![0, 1, 2, 0, 1, 2, 0, 0, 0], 3).unwrap();
        let ll = log_likelihood(&CrbmParams::zeros(3, 2, 2), &ds).unwrap();
        assert!((ll - 9.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn certain_prediction_has_zero_loglik() {
        let mut p = CrbmParams::zeros(2, 0, 1);
        p.choice_bias[0] = 800.0;
        let ds = ChoiceDataset::unscaled(Array2::zeros((1, 1)), vec![0], 2).unwrap();
        assert_eq!(log_likelihood(&p, &ds).unwrap(), 0.0);
        // Extreme logits never produce -inf.
        let ds_wrong = ChoiceDataset::unscaled(Array2::zeros((1, 1)), vec![1], 2).unwrap();
        assert!(log_likelihood(&p, &ds_wrong).unwrap().is_finite());
    }

    #[test]
    fn rho_squared_examples() {
        assert_eq!(rho_squared(null_loglik(100, 5), 100, 5), 0.0);
        assert!((rho_squared(-206_808.0, 177_662, 13) - 0.546).abs() < 1e-3);
        assert!((rho_squared(-200_846.0, 177_662, 13) - 0.559).abs() < 1e-3);
        assert!(rho_squared(-10.0, 100, 5) > rho_squared(-20.0, 100, 5));
    }

    #[test]
    fn bic_examples() {
        assert!((bic(-206_808.0, 273, 177_662) - 416_916.0).abs() <= 2.0);
        assert!((bic(-203_558.0, 341, 177_662) - 411_238.0).abs() <= 2.0);
        assert_eq!(bic(0.0, 0, 10), 0.0);
    }

    #[test]
    fn validation_error_uniform_model() {
        let n = 13 * 50;
        let choices = (0..n).map(|r| r % 13).collect();
        let ds = ChoiceDataset::unscaled(Array2::zeros((n, 1)), choices, 13).unwrap();
        let s = validation_error(&CrbmParams::zeros(13, 1, 1), &ds).unwrap();
        assert!((s.error - 12.0 / 13.0).abs() < 1e-12);
        assert_eq!(s.error + s.accuracy, 1.0);
    }

    #[test]
    fn zero_parameter_has_zero_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((200, 2), |_| rng.random_range(-1.0..1.0));
        let choices = (0..200).map(|_| rng.random_range(0..3)).collect();
        let ds = ChoiceDataset::unscaled(x, choices, 3).unwrap();
        let mut p = CrbmParams::zeros(3, 1, 2);
        p.choice_context[[0, 0]] = 0.8;
        p.choice_context[[1, 1]] = -0.6;
        let sig = t_statistics(&p, &ds).unwrap();
        assert_eq!(sig.tstats.choice_context[[2, 0]], 0.0);
        assert!(sig.tstats.choice_context[[0, 0]] > 0.0);
        assert!(sig.tstats.choice_context[[1, 1]] < 0.0);
    }

    #[test]
    fn significance_threshold() {
        assert!(is_significant(2.5));
        assert!(is_significant(-1.96));
        assert!(!is_significant(1.0));
    }

    #[test]
    fn table_row_formatting() {
        let r = FitReport {
            loglik_train: -206_808.2,
            loglik_valid: -88_000.0,
            rho2: 0.54617,
            bic: 416_915.4,
            validation_error: 0.44541,
            mean_true_prob: 0.4,
            n_params: 273,
            n_train: 177_662,
            n_hidden: 0,
            confusion: Array2::zeros((2, 2)),
            significance: None,
        };
        assert_eq!(
            r.table_row(),
            ["MNL", "baseline", "0.4454", "-206808", "0.546", "273", "416915"].map(String::from)
        );
    }
}
