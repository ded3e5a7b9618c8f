//! Choice probabilities and latent activations for new rows.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::ChoiceDataset;
use crate::error::{check_dim, Error, Result};
use crate::model::{bernoulli_in_place, CrbmParams, RowContext};
use crate::numeric::argmax;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Zero-based index of the most probable alternative (lowest index on ties).
    pub predicted: usize,
    pub h_activation: Vec<f64>,
}

/// Mean-field prediction: `h = σ(d + Ax)`, then `p(y | h, x)`.
pub fn predict(p: &CrbmParams, x: &[f64]) -> Result<Prediction> {
    check_dim("context vector", p.n_features(), x.len())?;
    Ok(predict_unchecked(p, x))
}

pub(crate) fn predict_unchecked(p: &CrbmParams, x: &[f64]) -> Prediction {
    let ctx = RowContext::new_unchecked(p, x);
    let h = ctx.mean_field_hidden();
    let mut probs = vec![0.0; p.n_alternatives()];
    ctx.choice_probs(p, &h, &mut probs);
    Prediction {
        predicted: argmax(&probs),
        probs,
        h_activation: h,
    }
}

/// Monte-Carlo prediction: averages `p(y | h, x)` over `draws` binary samples
/// `h ~ Bernoulli(σ(d + Ax))`. `h_activation` stays the mean-field value.
pub fn predict_sampled<R: Rng + ?Sized>(p: &CrbmParams, x: &[f64], draws: usize, rng: &mut R) -> Result<Prediction> {
    check_dim("context vector", p.n_features(), x.len())?;
    if draws == 0 {
        return Err(Error::invalid("at least one draw is required"));
    }
    let ctx = RowContext::new_unchecked(p, x);
    let mean_h = ctx.mean_field_hidden();
    let mut acc = vec![0.0; p.n_alternatives()];
    let mut probs = vec![0.0; p.n_alternatives()];
    let mut h = vec![0.0; p.n_hidden()];
    for _ in 0..draws {
        h.copy_from_slice(&mean_h);
        bernoulli_in_place(&mut h, rng);
        ctx.choice_probs(p, &h, &mut probs);
        for (a, v) in acc.iter_mut().zip(&probs) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= draws as f64;
    }
    Ok(Prediction {
        predicted: argmax(&acc),
        probs: acc,
        h_activation: mean_h,
    })
}

/// Row-wise predictions plus the actual×predicted confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPrediction {
    pub predictions: Vec<Prediction>,
    pub confusion: Array2<usize>,
}

impl BatchPrediction {
    pub fn correct(&self) -> usize {
        self.confusion.diag().sum()
    }

    pub fn total(&self) -> usize {
        self.confusion.sum()
    }
}

fn check_dataset(p: &CrbmParams, ds: &ChoiceDataset) -> Result<()> {
    check_dim("dataset features", p.n_features(), ds.n_features())?;
    check_dim("dataset alternatives", p.n_alternatives(), ds.n_alternatives())
}

fn assemble(ds: &ChoiceDataset, predictions: Vec<Prediction>, n_alt: usize) -> BatchPrediction {
    let mut confusion = Array2::zeros((n_alt, n_alt));
    for (r, pr) in predictions.iter().enumerate() {
        confusion[[ds.choice(r), pr.predicted]] += 1;
    }
    BatchPrediction {
        predictions,
        confusion,
    }
}

pub fn predict_batch(p: &CrbmParams, ds: &ChoiceDataset) -> Result<BatchPrediction> {
    check_dataset(p, ds)?;
    let predictions: Vec<Prediction> = par::map_chunks(ds.n_rows(), par::ROW_CHUNK, |range| {
        range
            .map(|r| predict_unchecked(p, ds.row(r).as_slice().expect("row-major rows")))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    Ok(assemble(ds, predictions, p.n_alternatives()))
}

/// Batch version of [`predict_sampled`]; row `r` uses RNG stream `r` of `seed`.
pub fn predict_batch_sampled(p: &CrbmParams, ds: &ChoiceDataset, draws: usize, seed: u64) -> Result<BatchPrediction> {
    check_dataset(p, ds)?;
    let rows = par::map_indices(ds.n_rows(), |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        predict_sampled(p, ds.row(r).as_slice().expect("row-major rows"), draws, &mut rng)
    });
    let predictions = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(assemble(ds, predictions, p.n_alternatives()))
}

/// CSV with columns `row, p_<alt>..., predicted, h_1...`; `predicted` is one-based.
pub fn write_predictions_csv(path: &Path, batch: &BatchPrediction, alternative_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n_hidden = batch.predictions.first().map_or(0, |p| p.h_activation.len());
    let mut header = vec!["row".to_string()];
    header.extend(alternative_names.iter().map(|a| format!("p_{a}")));
    header.push("predicted".into());
    header.extend((1..=n_hidden).map(|j| format!("h_{j}")));
    w.write_record(&header)?;
    for (r, pr) in batch.predictions.iter().enumerate() {
        let mut rec = vec![(r + 1).to_string()];
        rec.extend(pr.probs.iter().map(|v| format!("{v:?}")));
        rec.push((pr.predicted + 1).to_string());
        rec.extend(pr.h_activation.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
