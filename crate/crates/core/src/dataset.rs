//! Tabular choice data: CSV ingestion, z-score normalization, splits and folds.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// Per-column location and scale used for z-scoring.
///
/// A column whose standard deviation is zero is constant; it normalizes to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean 0, scale 1 for every column.
    pub fn identity(k: usize) -> Self {
        NormStats {
            mean: vec![0.0; k],
            std: vec![1.0; k],
        }
    }

    /// Population mean and standard deviation of each column.
    pub fn fit(raw: &Array2<f64>) -> Self {
        let n = raw.nrows() as f64;
        let mut mean = Vec::with_capacity(raw.ncols());
        let mut std = Vec::with_capacity(raw.ncols());
        for col in raw.axis_iter(Axis(1)) {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        NormStats { mean, std }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn is_constant(&self, k: usize) -> bool {
        self.std[k] == 0.0
    }

    pub fn apply(&self, raw: &Array2<f64>) -> Array2<f64> {
        let mut x = raw.clone();
        for (k, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[k], self.std[k]);
            if s == 0.0 {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        x
    }

    /// Normalizes a single raw row.
    pub fn apply_row(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(k, &v)| {
                if self.std[k] == 0.0 {
                    0.0
                } else {
                    (v - self.mean[k]) / self.std[k]
                }
            })
            .collect()
    }

    /// Inverse of [`NormStats::apply`] for non-constant columns; constant columns
    /// map back to their stored mean.
    pub fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut raw = x.clone();
        for (k, mut col) in raw.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[k], self.std[k]);
            col.mapv_inplace(|v| v * s + m);
        }
        raw
    }
}

/// Normalized explanatory matrix plus the observed choice of every row.
///
/// Choices are stored as zero-based alternative indices, so the one-hot
/// property of `y` holds by construction. The raw (unscaled) features are kept
/// so a dataset can be re-standardized exactly with different statistics.
#[derive(Debug, Clone)]
pub struct ChoiceDataset {
    x: Array2<f64>,
    raw: Array2<f64>,
    choices: Vec<usize>,
    n_alternatives: usize,
    feature_names: Vec<String>,
    alternative_names: Vec<String>,
    norm_stats: NormStats,
}

impl ChoiceDataset {
    /// Builds a dataset and z-scores it with statistics fitted on `raw`.
    pub fn from_raw(raw: Array2<f64>, choices: Vec<usize>, n_alternatives: usize) -> Result<Self> {
        let stats = NormStats::fit(&raw);
        Self::with_stats(raw, choices, n_alternatives, stats)
    }

    /// Builds a dataset whose features are used as given (identity scaling).
    pub fn unscaled(x: Array2<f64>, choices: Vec<usize>, n_alternatives: usize) -> Result<Self> {
        let stats = NormStats::identity(x.ncols());
        Self::with_stats(x, choices, n_alternatives, stats)
    }

    /// Builds a dataset normalized with externally supplied statistics.
    pub fn with_stats(
        raw: Array2<f64>,
        choices: Vec<usize>,
        n_alternatives: usize,
        norm_stats: NormStats,
    ) -> Result<Self> {
        if raw.nrows() == 0 {
            return Err(Error::invalid("dataset has no rows"));
        }
        if n_alternatives < 2 {
            return Err(Error::invalid("at least two alternatives are required"));
        }
        check_dim("choice vector", raw.nrows(), choices.len())?;
        check_dim("normalization statistics", raw.ncols(), norm_stats.len())?;
        if let Some((row, &c)) = choices.iter().enumerate().find(|(_, &c)| c >= n_alternatives) {
            return Err(Error::Domain {
                row,
                message: format!("choice index {} outside 1..={n_alternatives}", c + 1),
            });
        }
        for k in 0..norm_stats.len() {
            if norm_stats.is_constant(k) {
                log::warn!("feature column {k} is constant; normalized to zero");
            }
        }
        let x = norm_stats.apply(&raw);
        let k = raw.ncols();
        Ok(ChoiceDataset {
            x,
            raw,
            choices,
            n_alternatives,
            feature_names: (1..=k).map(|i| format!("x{i}")).collect(),
            alternative_names: (1..=n_alternatives).map(|i| format!("alt{i}")).collect(),
            norm_stats,
        })
    }

    pub fn with_names(mut self, features: Vec<String>, alternatives: Vec<String>) -> Result<Self> {
        check_dim("feature names", self.n_features(), features.len())?;
        check_dim("alternative names", self.n_alternatives, alternatives.len())?;
        self.feature_names = features;
        self.alternative_names = alternatives;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_alternatives(&self) -> usize {
        self.n_alternatives
    }

    /// Normalized features, N×K.
    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn raw(&self) -> &Array2<f64> {
        &self.raw
    }

    pub fn row(&self, r: usize) -> ArrayView1<'_, f64> {
        self.x.row(r)
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn choice(&self, r: usize) -> usize {
        self.choices[r]
    }

    /// One-hot choice matrix, N×I.
    pub fn y(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.n_rows(), self.n_alternatives));
        for (r, &c) in self.choices.iter().enumerate() {
            y[[r, c]] = 1.0;
        }
        y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn alternative_names(&self) -> &[String] {
        &self.alternative_names
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm_stats
    }

    /// Columns that were constant under the current statistics.
    pub fn constant_features(&self) -> Vec<usize> {
        (0..self.n_features())
            .filter(|&k| self.norm_stats.is_constant(k))
            .collect()
    }

    /// Empirical share of each alternative.
    pub fn choice_shares(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_alternatives];
        for &c in &self.choices {
            counts[c] += 1;
        }
        let n = self.n_rows() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Rows at `indices`, in that order, keeping the current statistics.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("row selection is empty"));
        }
        Ok(ChoiceDataset {
            x: self.x.select(Axis(0), indices),
            raw: self.raw.select(Axis(0), indices),
            choices: indices.iter().map(|&i| self.choices[i]).collect(),
            n_alternatives: self.n_alternatives,
            feature_names: self.feature_names.clone(),
            alternative_names: self.alternative_names.clone(),
            norm_stats: self.norm_stats.clone(),
        })
    }

    /// Re-normalizes the raw features with `stats`.
    pub fn restandardize(&self, stats: &NormStats) -> Result<Self> {
        check_dim("normalization statistics", self.n_features(), stats.len())?;
        let mut out = self.clone();
        out.x = stats.apply(&self.raw);
        out.norm_stats = stats.clone();
        Ok(out)
    }

    /// Writes raw features and the one-based choice column.
    pub fn write_csv(&self, path: &Path, choice_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![choice_column.to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![(self.choices[r] + 1).to_string()];
            rec.extend(self.raw.row(r).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Fits statistics on `train` and applies them to both halves.
pub fn standardize_on_train(
    train: &ChoiceDataset,
    valid: &ChoiceDataset,
) -> Result<(ChoiceDataset, ChoiceDataset)> {
    let stats = NormStats::fit(train.raw());
    Ok((train.restandardize(&stats)?, valid.restandardize(&stats)?))
}

/// Column layout of a choice CSV.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub choice_column: String,
    /// Feature columns in order; empty means every column except the choice.
    pub feature_columns: Vec<String>,
    /// Number of alternatives; inferred from the largest observed choice when absent.
    pub n_alternatives: Option<usize>,
    pub alternative_names: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn new(choice_column: impl Into<String>) -> Self {
        CsvSchema {
            choice_column: choice_column.into(),
            ..Default::default()
        }
    }
}

/// Reads a choice CSV and z-scores the features with statistics of the file itself.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<ChoiceDataset> {
    load_csv_impl(path, schema, None)
}

/// Reads a choice CSV and normalizes with previously fitted statistics.
pub fn load_csv_with_stats(path: &Path, schema: &CsvSchema, stats: &NormStats) -> Result<ChoiceDataset> {
    load_csv_impl(path, schema, Some(stats))
}

fn load_csv_impl(path: &Path, schema: &CsvSchema, stats: Option<&NormStats>) -> Result<ChoiceDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => Error::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let choice_idx = find(&schema.choice_column)?;
    let feature_names: Vec<String> = if schema.feature_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != choice_idx)
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.feature_columns.clone()
    };
    let feature_idx = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut raw_choices: Vec<i64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |idx: usize, column: &str| -> Result<&str> {
            match record.get(idx) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::Parse {
                    row,
                    column: column.to_string(),
                    message: "missing value".into(),
                }),
            }
        };
        let c = cell(choice_idx, &schema.choice_column)?;
        let choice: i64 = c.parse().map_err(|_| Error::Parse {
            row,
            column: schema.choice_column.clone(),
            message: format!("`{c}` is not an integer choice index"),
        })?;
        if choice < 1 {
            return Err(Error::Domain {
                row,
                message: format!("choice {choice} outside 1..=I"),
            });
        }
        raw_choices.push(choice);
        for (&idx, name) in feature_idx.iter().zip(&feature_names) {
            let s = cell(idx, name)?;
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("`{s}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("`{s}` is not finite"),
                });
            }
            values.push(v);
        }
    }
    let n = raw_choices.len();
    if n == 0 {
        return Err(Error::invalid(format!("{} has no data rows", path.display())));
    }
    let max_choice = *raw_choices.iter().max().unwrap() as usize;
    let n_alternatives = match (schema.n_alternatives, &schema.alternative_names) {
        (Some(i), _) => i,
        (None, Some(names)) => names.len(),
        (None, None) => max_choice,
    };
    if let Some((row, &c)) = raw_choices
        .iter()
        .enumerate()
        .find(|(_, &c)| c as usize > n_alternatives)
    {
        return Err(Error::Domain {
            row,
            message: format!("choice {c} outside 1..={n_alternatives}"),
        });
    }
    let choices = raw_choices.into_iter().map(|c| c as usize - 1).collect();
    let raw = Array2::from_shape_vec((n, feature_names.len()), values)
        .expect("row-major buffer matches shape");
    let ds = match stats {
        Some(s) => ChoiceDataset::with_stats(raw, choices, n_alternatives, s.clone())?,
        None => ChoiceDataset::from_raw(raw, choices, n_alternatives)?,
    };
    let alt_names = schema
        .alternative_names
        .clone()
        .unwrap_or_else(|| (1..=n_alternatives).map(|i| format!("alt{i}")).collect());
    ds.with_names(feature_names, alt_names)
}

/// Train/validation split and fold settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.70,
            folds: 2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train fraction {} must lie in (0, 1)",
                self.train_fraction
            )));
        }
        if self.folds == 0 {
            return Err(Error::invalid("folds must be positive"));
        }
        Ok(())
    }

    /// Training rows for a dataset of `n` rows.
    pub fn train_size(&self, n: usize) -> usize {
        (self.train_fraction * n as f64).floor() as usize
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded row-disjoint partition into ⌊fraction·N⌋ training rows and the rest.
pub fn split(ds: &ChoiceDataset, spec: &SplitSpec) -> Result<(ChoiceDataset, ChoiceDataset)> {
    spec.validate()?;
    let n = ds.n_rows();
    if n < 2 {
        return Err(Error::invalid("cannot split fewer than two rows"));
    }
    let n_train = spec.train_size(n);
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "fraction {} leaves an empty side for N={n}",
            spec.train_fraction
        )));
    }
    let perm = permutation(n, spec.seed);
    Ok((ds.select(&perm[..n_train])?, ds.select(&perm[n_train..])?))
}

/// Seeded k-fold partition; fold `f` validates on the `f`-th block of a shuffled index.
pub fn kfold(ds: &ChoiceDataset, folds: usize, seed: u64) -> Result<Vec<(ChoiceDataset, ChoiceDataset)>> {
    let n = ds.n_rows();
    if folds < 2 {
        return Err(Error::invalid("k-fold needs at least two folds"));
    }
    if folds > n {
        return Err(Error::invalid(format!("{folds} folds exceed {n} rows")));
    }
    let perm = permutation(n, seed);
    (0..folds)
        .map(|f| {
            let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
            let train: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
            Ok((ds.select(&train)?, ds.select(&perm[lo..hi])?))
        })
        .collect()
}
