//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage errors (bad flags, missing input
//! files, out-of-range settings), 1 for failures during computation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{load_csv, split, standardize_on_train, ChoiceDataset, CsvSchema, SplitSpec};
use crate::error::Error;
use crate::inference::{predict_batch, predict_batch_sampled, write_predictions_csv};
use crate::model::{Block, CrbmParams};
use crate::oracle::{generate, read_planted_spec, PlantedModel};
use crate::report::hinton::{hinton_svg, spec_for_model, HintonView};
use crate::report::model_file::{load_model, save_model, ModelFile, ModelMeta};
use crate::sensitivity::{sensitivity_run, write_sensitivity_csv};
use crate::stats::{t_statistics, FitReport, Significance};
use crate::trainer::{train, TrainConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CHOICERBM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "choicerbm", version, about = "Discrete-choice modelling with a conditional RBM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model (--hidden 0 fits the multinomial logit) and print its results row.
    Train(TrainArgs),
    /// Recompute the fit report of a saved model on its original split.
    Evaluate(EvaluateArgs),
    /// Write choice probabilities and latent activations for every row.
    Predict(PredictArgs),
    /// Compare standard errors from full and subsampled fits.
    Sensitivity(SensitivityArgs),
    /// Render a Hinton diagram of a parameter block as SVG.
    Hinton(HintonArgs),
    /// Sample a synthetic dataset from a planted model description.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Choice CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Column holding the one-based chosen alternative.
    #[arg(long, default_value = "choice")]
    pub choice_col: String,
    /// Comma-separated feature columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Number of alternatives (default: largest observed choice).
    #[arg(long)]
    pub alternatives: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Latent units J.
    #[arg(long, default_value_t = 0)]
    pub hidden: usize,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub cd_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training fraction of the seeded train/validation split.
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
    #[arg(long, default_value_t = 0.5)]
    pub momentum_initial: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum_final: f64,
    #[arg(long, default_value_t = 5)]
    pub momentum_switch: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping (0 = never).
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    /// Standard deviation of the initial weights.
    #[arg(long, default_value_t = 0.01)]
    pub init_scale: f64,
    /// Also write parameter estimates, standard errors and t-statistics here.
    #[arg(long)]
    pub tstats_out: Option<PathBuf>,
    /// Where to save the fitted model.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// The file the model was trained on; it is re-split with the stored split.
    #[arg(long)]
    pub data: PathBuf,
    /// Also compute t-statistics and list the significant parameters.
    #[arg(long)]
    pub tstats: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to score; must contain the model's choice and feature columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Monte-Carlo draws of the latent units per row (0 = mean field).
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Saved model whose data schema, split and training settings are reused.
    #[arg(long)]
    pub model_config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated latent sizes (default: the saved model's).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HintonArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// B, D, A, c, d, or the stacked views BDc and Ad.
    #[arg(long, default_value = "BDc")]
    pub block: HintonView,
    #[arg(long)]
    pub out: PathBuf,
    /// Training data; when given, significant patches are outlined.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1.96)]
    pub threshold: f64,
    #[arg(long, default_value_t = 24.0)]
    pub cell_size: f64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Planted model description (`kind,index1,index2,value` CSV).
    #[arg(long)]
    pub planted: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "choice")]
    pub choice_col: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure classes that map to distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file {} does not exist", path.display())))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Parses `args` (program name first), runs the command and returns the exit code.
/// Regular output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if !e.use_stderr() {
                let _ = write!(out, "{text}");
                return 0;
            }
            // One diagnostic line; the full usage is a `--help` away.
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            let _ = writeln!(err, "{line}");
            return 2;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Sensitivity(a) => cmd_sensitivity(a, out),
        Command::Hinton(a) => cmd_hinton(a, out),
        Command::Generate(a) => cmd_generate(a, out),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn schema_from_meta(meta: &ModelMeta) -> CsvSchema {
    CsvSchema {
        choice_column: meta.choice_column.clone(),
        feature_columns: meta.feature_names.clone(),
        n_alternatives: Some(meta.alternative_names.len()),
        alternative_names: Some(meta.alternative_names.clone()),
    }
}

/// Re-creates the train/validation halves a saved model was fitted on.
fn resplit(model: &ModelFile, data: &Path) -> CliResult<(ChoiceDataset, ChoiceDataset)> {
    let ds = load_csv(data, &schema_from_meta(&model.meta))?;
    let (tr, va) = split(&ds, &model.meta.split)?;
    let stats = &model.meta.norm_stats;
    Ok((tr.restandardize(stats)?, va.restandardize(stats)?))
}

fn table_text(report: &FitReport) -> String {
    let mut buf = Vec::new();
    FitReport::write_table_csv(std::slice::from_ref(report), &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

fn metrics_of(report: &FitReport) -> Vec<(String, f64)> {
    vec![
        ("validation_error".into(), report.validation_error),
        ("mean_true_prob".into(), report.mean_true_prob),
        ("loglik_train".into(), report.loglik_train),
        ("loglik_valid".into(), report.loglik_valid),
        ("rho2".into(), report.rho2),
        ("bic".into(), report.bic),
    ]
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = TrainConfig {
        cd_k: a.cd_k,
        batch_size: a.batch,
        epochs: a.epochs,
        learning_rate: a.lr,
        momentum_initial: a.momentum_initial,
        momentum_final: a.momentum_final,
        momentum_switch_epoch: a.momentum_switch,
        lr_decay: a.lr_decay,
        weight_decay: a.weight_decay,
        seed: a.seed,
        early_stop_patience: a.patience,
        weight_init_scale: a.init_scale,
    };
    let split_spec = SplitSpec {
        train_fraction: a.split,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    split_spec.validate().map_err(|e| usage(e.to_string()))?;
    require_file(&a.data.data)?;

    let schema = CsvSchema {
        choice_column: a.data.choice_col.clone(),
        feature_columns: a.data.features.clone(),
        n_alternatives: a.data.alternatives,
        alternative_names: None,
    };
    let ds = load_csv(&a.data.data, &schema)?;
    let (tr, va) = split(&ds, &split_spec)?;
    let (tr, va) = standardize_on_train(&tr, &va)?;
    let (params, trace) = train(&tr, &va, a.hidden, &cfg)?;
    log::info!("trained {} epochs; retained epoch {}", trace.epochs.len(), trace.best + 1);

    let report = FitReport::compute(&params, &tr, &va, false)?;
    if let Some(path) = &a.tstats_out {
        let sig = t_statistics(&params, &tr)?;
        write_tstats(path, &params, &sig)?;
    }
    let model = ModelFile {
        params,
        meta: ModelMeta {
            choice_column: a.data.choice_col,
            alternative_names: tr.alternative_names().to_vec(),
            feature_names: tr.feature_names().to_vec(),
            norm_stats: tr.norm_stats().clone(),
            train_config: cfg,
            split: split_spec,
            metrics: metrics_of(&report),
        },
    };
    save_model(&a.out, &model)?;
    write_out(out, &table_text(&report))
}

fn write_tstats(path: &Path, params: &CrbmParams, sig: &Significance) -> CliResult<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let rec = |w: &mut csv::Writer<_>, r: &[String]| w.write_record(r).map_err(|e| CliError::Runtime(e.into()));
    rec(&mut w, &["block", "row", "col", "value", "std_err", "t", "significant", "approximate"].map(String::from))?;
    for block in Block::ALL {
        let values = params.block_matrix(block);
        let se = sig.std_errs.block_matrix(block);
        let t = sig.tstats.block_matrix(block);
        let significant = sig.significant(block);
        let approximate = Significance::APPROXIMATE.contains(&block);
        for ((r, c), v) in values.indexed_iter() {
            rec(
                &mut w,
                &[
                    block.symbol().to_string(),
                    (r + 1).to_string(),
                    (c + 1).to_string(),
                    format!("{v:?}"),
                    format!("{:?}", se[[r, c]]),
                    format!("{:?}", t[[r, c]]),
                    significant[[r, c]].to_string(),
                    approximate.to_string(),
                ],
            )?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult<()> {
    require_file(&a.model)?;
    require_file(&a.data)?;
    let model = load_model(&a.model)?;
    let (tr, va) = resplit(&model, &a.data)?;
    let report = FitReport::compute(&model.params, &tr, &va, a.tstats)?;
    let mut text = table_text(&report);
    text.push_str(&report.summary());
    if let Some(sig) = &report.significance {
        let n_sig: usize = Block::ALL.iter().map(|&b| sig.significant(b).iter().filter(|&&s| s).count()).sum();
        text.push_str(&format!(
            "significant_params {n_sig} of {} (|t| >= 1.96)\n",
            model.params.param_count()
        ));
    }
    write_out(out, &text)
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> CliResult<()> {
    require_file(&a.model)?;
    require_file(&a.data)?;
    let model = load_model(&a.model)?;
    let ds = crate::dataset::load_csv_with_stats(&a.data, &schema_from_meta(&model.meta), &model.meta.norm_stats)?;
    let batch = if a.draws == 0 {
        predict_batch(&model.params, &ds)?
    } else {
        predict_batch_sampled(&model.params, &ds, a.draws, a.seed)?
    };
    write_predictions_csv(&a.out, &batch, &model.meta.alternative_names)?;
    write_out(
        out,
        &format!(
            "rows {}\naccuracy {:.6}\n",
            batch.total(),
            batch.correct() as f64 / batch.total() as f64
        ),
    )
}

fn cmd_sensitivity(a: SensitivityArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        return Err(usage(format!("--fraction {} must lie in (0, 1]", a.fraction)));
    }
    if a.replicates == 0 {
        return Err(usage("--replicates must be positive"));
    }
    require_file(&a.model_config)?;
    require_file(&a.data)?;
    let model = load_model(&a.model_config)?;
    let (tr, va) = resplit(&model, &a.data)?;
    let hidden = if a.hidden.is_empty() {
        vec![model.params.n_hidden()]
    } else {
        a.hidden
    };
    let mut reports = Vec::with_capacity(hidden.len());
    let mut text = String::new();
    for &j in &hidden {
        let r = sensitivity_run(&tr, &va, j, &model.meta.train_config, a.fraction, a.replicates, a.seed)?;
        text.push_str(&format!("J={j} subsample {} spearman {:.4}\n", r.subsample_size, r.spearman));
        reports.push(r);
    }
    let file = File::create(&a.out).map_err(io_err(&a.out))?;
    write_sensitivity_csv(&reports, BufWriter::new(file))?;
    write_out(out, &text)
}

fn cmd_hinton(a: HintonArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(a.cell_size > 0.0 && a.cell_size.is_finite()) {
        return Err(usage("--cell-size must be positive"));
    }
    require_file(&a.model)?;
    if let Some(d) = &a.data {
        require_file(d)?;
    }
    let model = load_model(&a.model)?;
    let sig = match &a.data {
        Some(d) => {
            let (tr, _) = resplit(&model, d)?;
            Some(t_statistics(&model.params, &tr)?)
        }
        None => None,
    };
    let mut spec = spec_for_model(
        &model.params,
        a.block,
        &model.meta.alternative_names,
        &model.meta.feature_names,
        sig.as_ref(),
    )?;
    spec.threshold = a.threshold;
    spec.cell_size = a.cell_size;
    let svg = hinton_svg(&spec)?;
    std::fs::write(&a.out, svg).map_err(io_err(&a.out))?;
    write_out(out, &format!("wrote {}\n", a.out.display()))
}

fn cmd_generate(a: GenerateArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    require_file(&a.planted)?;
    let planted = read_planted_spec(&a.planted)?;
    let pm = PlantedModel {
        params: planted.params,
        context: planted.context,
        n_rows: a.n,
        seed: a.seed,
    };
    let ds = generate(&pm)?;
    ds.write_csv(&a.out, &a.choice_col)?;
    write_out(out, &format!("wrote {} rows to {}\n", ds.n_rows(), a.out.display()))
}

/// Reads the thread cap from the environment; invalid values are ignored.
pub fn threads_from_env() -> Option<usize> {
    parse_threads(&std::env::var(THREADS_ENV).ok()?)
}

pub fn parse_threads(value: &str) -> Option<usize> {
    value.trim().parse().ok().filter(|&n| n > 0)
}
