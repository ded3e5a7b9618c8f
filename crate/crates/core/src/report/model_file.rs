//! Versioned, tab-separated text format for fitted models.
//!
//! ```text
//! choicerbm-model<TAB>1
//! dims<TAB>I<TAB>J<TAB>K
//! choice_column<TAB>name
//! alternative_names<TAB>a1<TAB>...<TAB>aI
//! feature_names<TAB>f1<TAB>...<TAB>fK
//! norm_mean<TAB>...            (K values)
//! norm_std<TAB>...             (K values, 0 marks a constant column)
//! config<TAB>key<TAB>value     (every TrainConfig field, fixed order)
//! split<TAB>key<TAB>value      (train_fraction, folds, seed)
//! metric<TAB>name<TAB>value    (zero or more)
//! block<TAB>S<TAB>rows<TAB>cols, followed by `rows` lines of `cols` values,
//!                              for S in B, D, c, A, d
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a load/save cycle
//! reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::dataset::{NormStats, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{Block, CrbmParams};
use crate::trainer::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "choicerbm-model";

/// Everything stored next to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub choice_column: String,
    pub alternative_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub norm_stats: NormStats,
    pub train_config: TrainConfig,
    pub split: SplitSpec,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: CrbmParams,
    pub meta: ModelMeta,
}

impl ModelMeta {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn check_label(label: &str) -> Result<()> {
    if label.contains(['\t', '\n', '\r']) {
        Err(Error::invalid(format!("label {label:?} contains a tab or newline")))
    } else {
        Ok(())
    }
}

fn join_f64(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join("\t")
}

fn config_entries(c: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("cd_k", c.cd_k.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("epochs", c.epochs.to_string()),
        ("learning_rate", format!("{:?}", c.learning_rate)),
        ("momentum_initial", format!("{:?}", c.momentum_initial)),
        ("momentum_final", format!("{:?}", c.momentum_final)),
        ("momentum_switch_epoch", c.momentum_switch_epoch.to_string()),
        ("lr_decay", format!("{:?}", c.lr_decay)),
        ("weight_decay", format!("{:?}", c.weight_decay)),
        ("seed", c.seed.to_string()),
        ("early_stop_patience", c.early_stop_patience.to_string()),
        ("weight_init_scale", format!("{:?}", c.weight_init_scale)),
    ]
}

/// Serializes a model to the text format.
pub fn to_string(model: &ModelFile) -> Result<String> {
    let p = &model.params;
    let m = &model.meta;
    p.validate()?;
    let (i, j, k) = (p.n_alternatives(), p.n_hidden(), p.n_features());
    if m.alternative_names.len() != i || m.feature_names.len() != k || m.norm_stats.len() != k {
        return Err(Error::invalid("model metadata does not match parameter dimensions"));
    }
    for label in m.alternative_names.iter().chain(&m.feature_names).chain([&m.choice_column]) {
        check_label(label)?;
    }
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}\t{FORMAT_VERSION}");
    let _ = writeln!(s, "dims\t{i}\t{j}\t{k}");
    let _ = writeln!(s, "choice_column\t{}", m.choice_column);
    let list = |key: &str, items: &[String]| {
        let mut line = key.to_string();
        for it in items {
            line.push('\t');
            line.push_str(it);
        }
        line
    };
    let _ = writeln!(s, "{}", list("alternative_names", &m.alternative_names));
    let _ = writeln!(s, "{}", list("feature_names", &m.feature_names));
    let f64_line = |key: &str, v: &[f64]| {
        if v.is_empty() {
            key.to_string()
        } else {
            format!("{key}\t{}", join_f64(v.iter().copied()))
        }
    };
    let _ = writeln!(s, "{}", f64_line("norm_mean", &m.norm_stats.mean));
    let _ = writeln!(s, "{}", f64_line("norm_std", &m.norm_stats.std));
    for (key, v) in config_entries(&m.train_config) {
        let _ = writeln!(s, "config\t{key}\t{v}");
    }
    let _ = writeln!(s, "split\ttrain_fraction\t{:?}", m.split.train_fraction);
    let _ = writeln!(s, "split\tfolds\t{}", m.split.folds);
    let _ = writeln!(s, "split\tseed\t{}", m.split.seed);
    for (name, v) in &m.metrics {
        check_label(name)?;
        let _ = writeln!(s, "metric\t{name}\t{v:?}");
    }
    for b in Block::ALL {
        let mat = p.block_matrix(b);
        let _ = writeln!(s, "block\t{}\t{}\t{}", b.symbol(), mat.nrows(), mat.ncols());
        for row in mat.outer_iter() {
            let _ = writeln!(s, "{}", join_f64(row.iter().copied()));
        }
    }
    s.push_str("end\n");
    Ok(s)
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    let text = to_string(model)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n + 1;
                Ok((n + 1, l))
            }
            None => Err(Error::ModelFormat {
                line: self.last + 1,
                message: "unexpected end of file (truncated model?)".into(),
            }),
        }
    }

    /// Next line split on tabs, requiring `key` as its first field.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next_line()?;
        let mut fields: Vec<&str> = line.split('\t').collect();
        if fields[0] != key {
            return Err(err(n, format!("expected `{key}`, found `{}`", fields[0])));
        }
        fields.remove(0);
        Ok((n, fields))
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::ModelFormat {
        line,
        message: message.into(),
    }
}

fn parse<T: FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| err(line, format!("cannot parse {what} from `{s}`")))
}

fn parse_f64s(line: usize, fields: &[&str], expected: usize, what: &str) -> Result<Vec<f64>> {
    let fields: Vec<&str> = if fields.len() == 1 && fields[0].is_empty() { Vec::new() } else { fields.to_vec() };
    if fields.len() != expected {
        return Err(err(line, format!("{what}: expected {expected} values, found {}", fields.len())));
    }
    fields.iter().map(|f| parse(line, f, what)).collect()
}

fn keyed_value<'a>(lines: &mut Lines<'a>, key: &str, sub: &str) -> Result<(usize, &'a str)> {
    let (n, f) = lines.keyed(key)?;
    if f.len() != 2 || f[0] != sub {
        return Err(err(n, format!("expected `{key}\t{sub}\t<value>`")));
    }
    Ok((n, f[1]))
}

/// Parses the text format; nothing is returned unless the whole file is valid.
pub fn from_str(text: &str) -> Result<ModelFile> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (n, head) = lines.keyed(MAGIC)?;
    let version: u32 = parse(n, head.first().copied().unwrap_or(""), "format version")?;
    if version != FORMAT_VERSION {
        return Err(err(n, format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
    }
    let (n, dims) = lines.keyed("dims")?;
    if dims.len() != 3 {
        return Err(err(n, "dims needs three values"));
    }
    let (ni, nj, nk): (usize, usize, usize) = (parse(n, dims[0], "I")?, parse(n, dims[1], "J")?, parse(n, dims[2], "K")?);
    if ni < 2 {
        return Err(err(n, "at least two alternatives are required"));
    }
    let (_, cc) = lines.keyed("choice_column")?;
    let choice_column = cc.join("\t");
    let names = |fields: Vec<&str>, expected: usize, n: usize, what: &str| -> Result<Vec<String>> {
        let fields: Vec<&str> = if expected == 0 && fields == [""] { Vec::new() } else { fields };
        if fields.len() != expected {
            return Err(err(n, format!("{what}: expected {expected}, found {}", fields.len())));
        }
        Ok(fields.into_iter().map(String::from).collect())
    };
    let (n, f) = lines.keyed("alternative_names")?;
    let alternative_names = names(f, ni, n, "alternative names")?;
    let (n, f) = lines.keyed("feature_names")?;
    let feature_names = names(f, nk, n, "feature names")?;
    let (n, f) = lines.keyed("norm_mean")?;
    let mean = parse_f64s(n, &f, nk, "norm_mean")?;
    let (n, f) = lines.keyed("norm_std")?;
    let std = parse_f64s(n, &f, nk, "norm_std")?;

    let mut cfg = TrainConfig::default();
    for (key, _) in config_entries(&TrainConfig::default()) {
        let (n, v) = keyed_value(&mut lines, "config", key)?;
        match key {
            "cd_k" => cfg.cd_k = parse(n, v, key)?,
            "batch_size" => cfg.batch_size = parse(n, v, key)?,
            "epochs" => cfg.epochs = parse(n, v, key)?,
            "learning_rate" => cfg.learning_rate = parse(n, v, key)?,
            "momentum_initial" => cfg.momentum_initial = parse(n, v, key)?,
            "momentum_final" => cfg.momentum_final = parse(n, v, key)?,
            "momentum_switch_epoch" => cfg.momentum_switch_epoch = parse(n, v, key)?,
            "lr_decay" => cfg.lr_decay = parse(n, v, key)?,
            "weight_decay" => cfg.weight_decay = parse(n, v, key)?,
            "seed" => cfg.seed = parse(n, v, key)?,
            "early_stop_patience" => cfg.early_stop_patience = parse(n, v, key)?,
            "weight_init_scale" => cfg.weight_init_scale = parse(n, v, key)?,
            _ => unreachable!(),
        }
    }
    let (n, v) = keyed_value(&mut lines, "split", "train_fraction")?;
    let train_fraction = parse(n, v, "train_fraction")?;
    let (n, v) = keyed_value(&mut lines, "split", "folds")?;
    let folds = parse(n, v, "folds")?;
    let (n, v) = keyed_value(&mut lines, "split", "seed")?;
    let split_seed = parse(n, v, "split seed")?;

    let mut metrics = Vec::new();
    let mut params = CrbmParams::zeros(ni, nj, nk);
    let mut pending = lines.next_line()?;
    while pending.1.starts_with("metric\t") {
        let f: Vec<&str> = pending.1.split('\t').collect();
        if f.len() != 3 {
            return Err(err(pending.0, "metric lines need a name and a value"));
        }
        metrics.push((f[1].to_string(), parse(pending.0, f[2], "metric")?));
        pending = lines.next_line()?;
    }
    for b in Block::ALL {
        let (n, line) = pending;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 || f[0] != "block" || f[1] != b.symbol() {
            return Err(err(n, format!("expected header for block {}", b.symbol())));
        }
        let (rows, cols): (usize, usize) = (parse(n, f[2], "rows")?, parse(n, f[3], "cols")?);
        let expected = params.block_matrix(b).dim();
        if (rows, cols) != expected {
            return Err(err(
                n,
                format!(
                    "block {} is {rows}x{cols}, dims require {}x{}",
                    b.symbol(),
                    expected.0,
                    expected.1
                ),
            ));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rn, row) = lines.next_line()?;
            let fields: Vec<&str> = row.split('\t').collect();
            values.extend(parse_f64s(rn, &fields, cols, b.symbol())?);
        }
        let mat = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
        params
            .block_values_mut(b)
            .copy_from_slice(mat.as_slice().expect("standard layout"));
        pending = lines.next_line()?;
    }
    if pending.1 != "end" {
        return Err(err(pending.0, "expected `end`"));
    }
    if let Some(b) = params.first_non_finite() {
        return Err(err(pending.0, format!("non-finite value in block {}", b.symbol())));
    }
    Ok(ModelFile {
        params,
        meta: ModelMeta {
            choice_column,
            alternative_names,
            feature_names,
            norm_stats: NormStats { mean, std },
            train_config: cfg,
            split: SplitSpec {
                train_fraction,
                folds,
                seed: split_seed,
            },
            metrics,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_model(j: usize) -> ModelFile {
        let mut rng = ChaCha8Rng::seed_from_u64(j as u64);
        let mut p = CrbmParams::zeros(3, j, 2);
        let flat: Vec<f64> = (0..p.param_count()).map(|_| rng.random_range(-1.0..1.0) / 3.0).collect();
        p.set_flat(&flat).unwrap();
        ModelFile {
            params: p,
            meta: ModelMeta {
                choice_column: "choice".into(),
                alternative_names: vec!["cards".into(), "payroll".into(), "direct debit".into()],
                feature_names: vec!["age".into(), "income".into()],
                norm_stats: NormStats {
                    mean: vec![42.9, 141_838.0],
                    std: vec![13.0, 0.0],
                },
                train_config: TrainConfig { seed: 77, ..Default::default() },
                split: SplitSpec::default(),
                metrics: vec![("validation_error".into(), 0.4454), ("bic".into(), 1e-300)],
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample_model(2);
        let text = to_string(&m).unwrap();
        let back = from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_string(&back).unwrap(), text);
    }

    #[test]
    fn mnl_model_round_trips_with_empty_blocks() {
        let m = sample_model(0);
        let text = to_string(&m).unwrap();
        let back = from_str(&text).unwrap();
        assert_eq!(back.params.n_hidden(), 0);
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_dimension_header_fails() {
        let text = to_string(&sample_model(2)).unwrap();
        let bad = text.replacen("dims\t3\t2\t2", "dims\t3\t3\t2", 1);
        assert!(matches!(from_str(&bad), Err(Error::ModelFormat { .. })));
    }

    #[test]
    fn truncated_and_wrong_version_fail() {
        let text = to_string(&sample_model(1)).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(from_str(cut).is_err());
        let no_end = text.trim_end().trim_end_matches("end");
        assert!(from_str(no_end).is_err());
        let v2 = text.replacen("choicerbm-model\t1", "choicerbm-model\t2", 1);
        match from_str(&v2) {
            Err(Error::ModelFormat { line: 1, message }) => assert!(message.contains("version")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_with_tabs_are_rejected() {
        let mut m = sample_model(1);
        m.meta.feature_names[0] = "a\tb".into();
        assert!(to_string(&m).is_err());
    }
}
