//! Contrastive-divergence training of the conditional RBM and the
//! multinomial-logit baseline, sharing one minibatch SGD-with-momentum loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::ChoiceDataset;
use crate::error::{check_dim, Error, Result};
use crate::model::{bernoulli_in_place, categorical, Block, CrbmParams, RowContext};
use crate::numeric::sigmoid;
use crate::par;
use crate::stats::{log_likelihood, validation_error};

/// Optimisation settings. Defaults follow the reference recipe: minibatches of
/// 64 for 400 epochs at a base rate of 1e-3.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub cd_k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    /// First epoch (zero-based) that uses `momentum_final`.
    pub momentum_switch_epoch: usize,
    /// Rate at epoch `e` is `learning_rate / (1 + lr_decay·e)`.
    pub lr_decay: f64,
    /// L2 penalty on the weight matrices B, D and A.
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cd_k: 1,
            batch_size: 64,
            epochs: 400,
            learning_rate: 1e-3,
            momentum_initial: 0.5,
            momentum_final: 0.9,
            momentum_switch_epoch: 5,
            lr_decay: 0.0,
            weight_decay: 0.0,
            seed: 0,
            early_stop_patience: 20,
            weight_init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.cd_k == 0 {
            return bad("cd_k must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        for m in [self.momentum_initial, self.momentum_final] {
            if !(0.0..1.0).contains(&m) {
                return bad("momentum must lie in [0, 1)");
            }
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return bad("learning-rate decay must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be finite and non-negative");
        }
        if !(self.weight_init_scale > 0.0 && self.weight_init_scale.is_finite()) {
            return bad("weight init scale must be positive");
        }
        Ok(())
    }

    pub fn momentum_at(&self, epoch: usize) -> f64 {
        if epoch < self.momentum_switch_epoch {
            self.momentum_initial
        } else {
            self.momentum_final
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate / (1.0 + self.lr_decay * epoch as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean negative log-likelihood per training row (mean-field predictor).
    pub train_nll: f64,
    pub valid_nll: f64,
    pub valid_error: f64,
    /// Mean of `1 − p̃(y_obs)` over the reconstructions of the epoch.
    pub recon_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the retained snapshot.
    pub best: usize,
}

impl TrainTrace {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best)
    }
}

/// Batch gradient (ascent direction on the conditional log-likelihood) and the
/// summed reconstruction error of the rows it covers.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grad: CrbmParams,
    pub recon_error: f64,
}

/// Rows per parallel chunk inside one minibatch.
const BATCH_CHUNK: usize = 16;

fn row_slice(ds: &ChoiceDataset, r: usize) -> &[f64] {
    ds.x().row(r).to_slice().expect("dataset rows are contiguous")
}

fn add_choice_residual(g: &mut CrbmParams, resid: &[f64], x: &[f64]) {
    for (i, &ri) in resid.iter().enumerate() {
        g.choice_bias[i] += ri;
        for (gk, &xk) in g.choice_context.row_mut(i).iter_mut().zip(x) {
            *gk += ri * xk;
        }
    }
}

fn row_rng(batch_seed: u64, pos: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
    rng.set_stream(pos as u64);
    rng
}

/// CD-k gradient estimate averaged over `rows`.
///
/// Positive phase: data `y` with hidden probabilities `p(h | y, x)`. Negative
/// phase: a Gibbs chain started at the data that alternates binary hidden
/// samples and one-hot visible samples; at the last step the visible
/// distribution `p̃ = p(y | h̃, x)` is kept instead of a draw, and the negative
/// statistics are expectations under `p̃` (hidden terms use `p(h | ỹ, x)`).
/// Context `x` is clamped in both phases. Row `pos` of the batch draws from
/// stream `pos` of `batch_seed`.
pub fn cd_gradient(p: &CrbmParams, ds: &ChoiceDataset, rows: &[usize], cd_k: usize, batch_seed: u64) -> Result<BatchGradient> {
    check_dim("dataset features", p.n_features(), ds.n_features())?;
    check_dim("dataset alternatives", p.n_alternatives(), ds.n_alternatives())?;
    if rows.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    if cd_k == 0 {
        return Err(Error::invalid("cd_k must be positive"));
    }
    let (ni, nj, nk) = (p.n_alternatives(), p.n_hidden(), p.n_features());
    Ok(reduce_batch(rows.len(), ni, nj, nk, |pos, g| {
        let r = rows[pos];
        let x = row_slice(ds, r);
        let obs = ds.choice(r);
        let ctx = RowContext::new_unchecked(p, x);
        let mut rng = row_rng(batch_seed, pos);

        let mut pos_h = vec![0.0; nj];
        ctx.hidden_probs(p, obs, &mut pos_h);

        let mut h = vec![0.0; nj];
        let mut probs = vec![0.0; ni];
        let mut current = obs;
        for step in 1..=cd_k {
            ctx.hidden_probs(p, current, &mut h);
            bernoulli_in_place(&mut h, &mut rng);
            ctx.choice_probs(p, &h, &mut probs);
            if step < cd_k {
                current = categorical(&probs, &mut rng);
            }
        }

        let resid: Vec<f64> = (0..ni).map(|i| (i == obs) as u8 as f64 - probs[i]).collect();
        add_choice_residual(g, &resid, x);
        if nj > 0 {
            let mut neg_h = vec![0.0; nj];
            for i in 0..ni {
                let y_i = (i == obs) as u8 as f64;
                for j in 0..nj {
                    let s = sigmoid(ctx.hidden_base[j] + p.choice_hidden[[i, j]]);
                    neg_h[j] += probs[i] * s;
                    g.choice_hidden[[i, j]] += y_i * pos_h[j] - probs[i] * s;
                }
            }
            for j in 0..nj {
                let diff = pos_h[j] - neg_h[j];
                g.hidden_bias[j] += diff;
                for (gk, &xk) in g.hidden_context.row_mut(j).iter_mut().zip(x) {
                    *gk += diff * xk;
                }
            }
        }
        1.0 - probs[obs]
    }))
}

/// Exact multinomial-logit score `(y − softmax(Bx + c))` averaged over `rows`.
pub fn mnl_gradient(p: &CrbmParams, ds: &ChoiceDataset, rows: &[usize]) -> Result<BatchGradient> {
    check_dim("dataset features", p.n_features(), ds.n_features())?;
    check_dim("dataset alternatives", p.n_alternatives(), ds.n_alternatives())?;
    if p.n_hidden() != 0 {
        return Err(Error::invalid("the multinomial logit has no hidden units"));
    }
    if rows.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    let ni = p.n_alternatives();
    Ok(reduce_batch(rows.len(), ni, 0, p.n_features(), |pos, g| {
        let r = rows[pos];
        let x = row_slice(ds, r);
        let obs = ds.choice(r);
        let ctx = RowContext::new_unchecked(p, x);
        let mut probs = vec![0.0; ni];
        ctx.choice_probs(p, &[], &mut probs);
        let resid: Vec<f64> = (0..ni).map(|i| (i == obs) as u8 as f64 - probs[i]).collect();
        add_choice_residual(g, &resid, x);
        1.0 - probs[obs]
    }))
}

/// Sums per-row contributions chunk by chunk in a fixed order, then averages.
fn reduce_batch<F>(len: usize, ni: usize, nj: usize, nk: usize, row: F) -> BatchGradient
where
    F: Fn(usize, &mut CrbmParams) -> f64 + Sync + Send,
{
    let parts = par::map_chunks(len, BATCH_CHUNK, |range| {
        let mut g = CrbmParams::zeros(ni, nj, nk);
        let mut recon = 0.0;
        for pos in range {
            recon += row(pos, &mut g);
        }
        (g, recon)
    });
    let mut iter = parts.into_iter();
    let (mut grad, mut recon_error) = iter.next().expect("non-empty batch");
    for (g, r) in iter {
        grad.add_scaled(&g, 1.0);
        recon_error += r;
    }
    for b in Block::ALL {
        for v in grad.block_values_mut(b) {
            *v /= len as f64;
        }
    }
    BatchGradient { grad, recon_error }
}

/// Initial parameters: B, D, A ~ N(0, scale²) drawn in that order, d = 0 and
/// c = log empirical shares of the training set.
pub fn init_params<R: Rng + ?Sized>(train: &ChoiceDataset, n_hidden: usize, cfg: &TrainConfig, rng: &mut R) -> CrbmParams {
    let mut p = CrbmParams::zeros(train.n_alternatives(), n_hidden, train.n_features());
    let normal = Normal::new(0.0, cfg.weight_init_scale).expect("validated scale");
    for b in [Block::ChoiceContext, Block::ChoiceHidden, Block::HiddenContext] {
        for v in p.block_values_mut(b) {
            *v = normal.sample(rng);
        }
    }
    for (c, s) in p.choice_bias.iter_mut().zip(train.choice_shares()) {
        *c = s.max(1e-8).ln();
    }
    p
}

/// Estimates a conditional RBM with `n_hidden` latent units by CD-k.
pub fn train_crbm(train: &ChoiceDataset, valid: &ChoiceDataset, n_hidden: usize, cfg: &TrainConfig) -> Result<(CrbmParams, TrainTrace)> {
    train_crbm_observed(train, valid, n_hidden, cfg, &mut |_, _| {})
}

/// Estimates the multinomial logit `softmax(Bx + c)` with the same schedule.
pub fn train_mnl(train: &ChoiceDataset, valid: &ChoiceDataset, cfg: &TrainConfig) -> Result<(CrbmParams, TrainTrace)> {
    train_mnl_observed(train, valid, cfg, &mut |_, _| {})
}

/// [`train_mnl`] with a callback receiving the parameters after every epoch.
pub fn train_mnl_observed(
    train: &ChoiceDataset,
    valid: &ChoiceDataset,
    cfg: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<(CrbmParams, TrainTrace)> {
    check_pair(train, valid)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = init_params(train, 0, cfg, &mut rng);
    sgd_loop(train, valid, init, cfg, rng, |p, rows, _| mnl_gradient(p, train, rows), hook)
}

fn check_pair(train: &ChoiceDataset, valid: &ChoiceDataset) -> Result<()> {
    check_dim("validation features", train.n_features(), valid.n_features())?;
    check_dim("validation alternatives", train.n_alternatives(), valid.n_alternatives())
}

/// Observer of parameter snapshots after every epoch (used for KL tracking).
pub type EpochHook<'a> = dyn FnMut(usize, &CrbmParams) + 'a;

#[allow(clippy::too_many_arguments)]
fn sgd_loop<G>(
    train: &ChoiceDataset,
    valid: &ChoiceDataset,
    mut params: CrbmParams,
    cfg: &TrainConfig,
    mut rng: ChaCha8Rng,
    gradient: G,
    hook: &mut EpochHook<'_>,
) -> Result<(CrbmParams, TrainTrace)>
where
    G: Fn(&CrbmParams, &[usize], u64) -> Result<BatchGradient>,
{
    let n = train.n_rows();
    let mut velocity = CrbmParams::zeros(params.n_alternatives(), params.n_hidden(), params.n_features());
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace::default();
    let mut best = params.clone();
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let momentum = cfg.momentum_at(epoch);
        let rate = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut recon = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let batch_seed: u64 = rng.random();
            let mut step = gradient(&params, rows, batch_seed)?;
            recon += step.recon_error;
            if cfg.weight_decay > 0.0 {
                for b in [Block::ChoiceContext, Block::ChoiceHidden, Block::HiddenContext] {
                    for (g, &w) in step.grad.block_values_mut(b).iter_mut().zip(params.block_values(b)) {
                        *g -= cfg.weight_decay * w;
                    }
                }
            }
            for b in Block::ALL {
                for ((v, &g), w) in velocity
                    .block_values_mut(b)
                    .iter_mut()
                    .zip(step.grad.block_values(b))
                    .zip(params.block_values_mut(b))
                {
                    *v = momentum * *v + rate * g;
                    *w += *v;
                }
            }
            if let Some(block) = params.first_non_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    block: block.symbol(),
                });
            }
        }
        hook(epoch, &params);

        let record = EpochRecord {
            epoch: epoch + 1,
            train_nll: -log_likelihood(&params, train)? / n as f64,
            valid_nll: -log_likelihood(&params, valid)? / valid.n_rows() as f64,
            valid_error: validation_error(&params, valid)?.error,
            recon_error: recon / n as f64,
        };
        log::debug!(
            "epoch {:>4}  train_nll {:.6}  valid_nll {:.6}  valid_err {:.5}  recon {:.5}",
            record.epoch,
            record.train_nll,
            record.valid_nll,
            record.valid_error,
            record.recon_error
        );
        trace.epochs.push(record);
        // Lower validation error wins; validation NLL breaks ties.
        let key = (record.valid_error, record.valid_nll);
        if key.0 < best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
            best_key = key;
            best.clone_from(&params);
            trace.best = trace.epochs.len() - 1;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                log::info!("early stop after epoch {}", record.epoch);
                break;
            }
        }
    }
    Ok((best, trace))
}

/// [`train_crbm`] with a callback receiving the parameters after every epoch.
pub fn train_crbm_observed(
    train: &ChoiceDataset,
    valid: &ChoiceDataset,
    n_hidden: usize,
    cfg: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<(CrbmParams, TrainTrace)> {
    check_pair(train, valid)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = init_params(train, n_hidden, cfg, &mut rng);
    let k = cfg.cd_k;
    sgd_loop(train, valid, init, cfg, rng, |p, rows, seed| cd_gradient(p, train, rows, k, seed), hook)
}

/// Trains the baseline when `n_hidden == 0` and the conditional RBM otherwise.
pub fn train(train: &ChoiceDataset, valid: &ChoiceDataset, n_hidden: usize, cfg: &TrainConfig) -> Result<(CrbmParams, TrainTrace)> {
    if n_hidden == 0 {
        train_mnl(train, valid, cfg)
    } else {
        train_crbm(train, valid, n_hidden, cfg)
    }
}
