mod common;

use choicerbm::dataset::{load_csv, split, standardize_on_train, CsvSchema, SplitSpec};
use choicerbm::inference::predict_batch;
use choicerbm::report::model_file::{load_model, save_model, ModelFile, ModelMeta};
use choicerbm::stats::{log_likelihood, t_statistics, FitReport};
use choicerbm::trainer::{cd_gradient, train};
use choicerbm::TrainConfig;
use common::{planted_split, PlantedSplit};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        learning_rate: 0.05,
        weight_init_scale: 0.5,
        seed: 21,
        ..TrainConfig::default()
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let PlantedSplit { train: tr, valid: va, .. } = planted_split();
    let cfg = small_config();
    let one = in_pool(1, || train(&tr, &va, 2, &cfg).unwrap());
    let many = in_pool(4, || train(&tr, &va, 2, &cfg).unwrap());
    assert_eq!(one, many);
    let rows: Vec<usize> = (0..1000).collect();
    let g1 = in_pool(1, || cd_gradient(&one.0, &tr, &rows, 3, 99).unwrap().grad);
    let g4 = in_pool(4, || cd_gradient(&one.0, &tr, &rows, 3, 99).unwrap().grad);
    assert_eq!(g1, g4);
    let ll1 = in_pool(1, || log_likelihood(&one.0, &va).unwrap());
    let ll4 = in_pool(4, || log_likelihood(&one.0, &va).unwrap());
    assert_eq!(ll1.to_bits(), ll4.to_bits());
    let t1 = in_pool(1, || t_statistics(&one.0, &tr).unwrap().tstats);
    let t4 = in_pool(4, || t_statistics(&one.0, &tr).unwrap().tstats);
    assert_eq!(t1, t4);
}

#[test]
fn csv_to_saved_model_and_back() {
    let PlantedSplit { train: tr, .. } = planted_split();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("data.csv");
    tr.select(&(0..4000).collect::<Vec<_>>()).unwrap().write_csv(&csv_path, "chosen").unwrap();

    let ds = load_csv(&csv_path, &CsvSchema::new("chosen")).unwrap();
    assert_eq!((ds.n_rows(), ds.n_features(), ds.n_alternatives()), (4000, 6, 5));
    let split_spec = SplitSpec { seed: 5, ..SplitSpec::default() };
    let (a, b) = split(&ds, &split_spec).unwrap();
    let (a, b) = standardize_on_train(&a, &b).unwrap();
    let cfg = small_config();
    let (params, trace) = train(&a, &b, 2, &cfg).unwrap();
    assert!(trace.best_record().unwrap().valid_nll.is_finite());

    let report = FitReport::compute(&params, &a, &b, true).unwrap();
    assert_eq!(report.n_params, choicerbm::param_count(5, 2, 6));
    assert_eq!(report.confusion.sum(), b.n_rows());
    let model = ModelFile {
        params: params.clone(),
        meta: ModelMeta {
            choice_column: "chosen".into(),
            alternative_names: a.alternative_names().to_vec(),
            feature_names: a.feature_names().to_vec(),
            norm_stats: a.norm_stats().clone(),
            train_config: cfg,
            split: split_spec,
            metrics: vec![("validation_error".into(), report.validation_error)],
        },
    };
    let path = dir.path().join("model.txt");
    save_model(&path, &model).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, model);

    // Rows normalized with the stored statistics score exactly as in memory.
    let again = choicerbm::dataset::load_csv_with_stats(
        &csv_path,
        &CsvSchema::new("chosen"),
        &loaded.meta.norm_stats,
    )
    .unwrap();
    let (_, b2) = split(&again, &split_spec).unwrap();
    assert_eq!(predict_batch(&loaded.params, &b2).unwrap(), predict_batch(&params, &b).unwrap());
}
