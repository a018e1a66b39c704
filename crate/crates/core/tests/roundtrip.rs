use std::fs;

use guidekit_core::pipeline::{run_pipeline, PipelineConfig, RunManifest, MANIFEST_NAME};
use guidekit_core::segdb::DecomposeOptions;
use guidekit_core::synthetic::{toy_config, write_toy_dataset};
use guidekit_core::{build_database, load_database, save_database, Mode};

#[test]
fn database_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let entries = write_toy_dataset(&dir.path().join("data"), 3, 4, 96, 64).unwrap();
    let db = build_database(&entries, &toy_config(), DecomposeOptions::default()).unwrap();
    let path = dir.path().join("seg.db");
    save_database(&db, &path).unwrap();
    assert_eq!(load_database(&path).unwrap(), db);

    // Same inputs, same bytes.
    let again = dir.path().join("again.db");
    save_database(
        &build_database(&entries, &toy_config(), DecomposeOptions::default()).unwrap(),
        &again,
    )
    .unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn truncated_database_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let entries = write_toy_dataset(&dir.path().join("data"), 2, 4, 64, 48).unwrap();
    let db = build_database(&entries, &toy_config(), DecomposeOptions::default()).unwrap();
    let path = dir.path().join("seg.db");
    save_database(&db, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_database(&path).is_err());
}

#[test]
fn pipeline_writes_every_listed_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let entries = write_toy_dataset(&root, 3, 8, 96, 64).unwrap();
    let db = build_database(&entries, &toy_config(), DecomposeOptions::default()).unwrap();
    save_database(&db, &dir.path().join("seg.db")).unwrap();
    let cfg = PipelineConfig {
        dataset_root: root,
        db_path: dir.path().join("seg.db"),
        output_dir: dir.path().join("out"),
        mode: Mode::Train,
        ..Default::default()
    };
    let manifest = run_pipeline(&cfg).unwrap();
    assert_eq!(manifest.aggregate.images, 3);
    assert_eq!(manifest.aggregate.failures, 0);
    for img in &manifest.images {
        assert!(img.distorted.is_some(), "train mode writes distorted ground truth");
        for rel in img.artifacts() {
            assert!(cfg.output_dir.join(rel).is_file(), "{rel} missing");
        }
    }
    assert_eq!(
        RunManifest::load(&cfg.output_dir.join(MANIFEST_NAME)).unwrap(),
        manifest
    );
}
