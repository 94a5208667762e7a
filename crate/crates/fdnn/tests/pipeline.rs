//! Whole-pipeline integration: CSV ingestion through training,
//! serialization, and held-out evaluation.

use fdnn::config::RunConfig;
use fdnn::data::{generate_clusters, load_csv, write_csv, CsvSchema};
use fdnn::trainer::{test, train, TrainedModel};

#[test]
fn csv_train_save_load_test_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.csv");
    let test_path = dir.path().join("test.csv");
    write_csv(&generate_clusters(120, 4, 0.5, 3, 3).unwrap(), &train_path).unwrap();
    write_csv(&generate_clusters(80, 4, 0.5, 3, 99).unwrap(), &test_path).unwrap();

    let mut cfg = RunConfig::default();
    cfg.set("dataset", "csv").unwrap();
    cfg.set("train_csv", train_path.to_str().unwrap()).unwrap();
    cfg.set("test_csv", test_path.to_str().unwrap()).unwrap();
    cfg.set("n_layers", "4").unwrap();
    cfg.set("m1", "2").unwrap();
    cfg.set("m2", "8").unwrap();
    cfg.set("xi_k", "1e0").unwrap();

    let train_ds = cfg.load_train_dataset().unwrap();
    assert_eq!(train_ds.n_features(), 2);
    assert_eq!(train_ds.n_classes(), 4);

    let outcome = train(&train_ds, &cfg.train_config().unwrap()).unwrap();
    let model_path = dir.path().join("model.txt");
    outcome.model.save(&model_path).unwrap();
    let loaded = TrainedModel::load(&model_path).unwrap();
    assert_eq!(loaded, outcome.model);

    let test_ds = cfg.load_test_dataset().unwrap();
    let from_memory = test(&outcome.model, &test_ds).unwrap();
    let from_disk = test(&loaded, &test_ds).unwrap();
    assert_eq!(from_memory.n_correct, from_disk.n_correct);
    assert!(from_memory.alpha.is_finite());
}

#[test]
fn training_from_identical_configs_is_bit_deterministic() {
    let mut cfg = RunConfig::default();
    cfg.set("n_train", "150").unwrap();
    cfg.set("n_layers", "3").unwrap();
    cfg.set("m1", "2").unwrap();
    cfg.set("m2", "6").unwrap();
    let ds = cfg.load_train_dataset().unwrap();
    let tc = cfg.train_config().unwrap();
    let a = train(&ds, &tc).unwrap();
    let b = train(&ds, &tc).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.model.to_text(), b.model.to_text());
}

#[test]
fn csv_class_names_survive_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("named.csv");
    std::fs::write(
        &path,
        "feature_1,feature_2,label\n\
         0.1,0.9,oak\n\
         0.8,0.2,pine\n\
         0.2,0.8,oak\n\
         0.9,0.1,pine\n\
         0.15,0.85,oak\n\
         0.85,0.15,pine\n",
    )
    .unwrap();
    let ds = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(
        ds.class_names,
        Some(vec!["oak".to_string(), "pine".to_string()])
    );

    let mut cfg = RunConfig::default();
    cfg.set("n_layers", "2").unwrap();
    cfg.set("m1", "1").unwrap();
    cfg.set("m2", "4").unwrap();
    cfg.set("batch_fraction", "1.0").unwrap();
    let outcome = train(&ds, &cfg.train_config().unwrap()).unwrap();
    assert_eq!(outcome.model.class_names, ds.class_names);

    // a test set listing the classes in a different order still
    // evaluates against the right columns
    let reordered = dir.path().join("reordered.csv");
    std::fs::write(
        &reordered,
        "feature_1,feature_2,label\n\
         0.75,0.25,pine\n\
         0.12,0.88,oak\n",
    )
    .unwrap();
    let test_ds = load_csv(&reordered, &CsvSchema::default()).unwrap();
    assert_eq!(
        test_ds.class_names,
        Some(vec!["pine".to_string(), "oak".to_string()])
    );
    let rep = test(&outcome.model, &test_ds).unwrap();
    assert_eq!(rep.n_samples, 2);
}
