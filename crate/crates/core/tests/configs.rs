//! The experiment configs shipped in `configs/` parse and validate.

use std::path::PathBuf;

use effisegnet::backbone::Variant;
use effisegnet::orchestrator::ExperimentConfig;
use effisegnet::train::TrainConfig;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    let cfg = ExperimentConfig::load(&configs_dir().join(name)).unwrap();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn every_shipped_config_is_valid() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn reference_configs_spell_out_the_defaults() {
    let pretrained = load("b4-pretrained.toml");
    let scratch = load("b4-scratch.toml");
    assert_eq!(pretrained.model.variant, Variant::B4);
    assert!(pretrained.model.pretrained && !scratch.model.pretrained);
    assert_eq!(pretrained.train, TrainConfig::default());
    assert_eq!(pretrained.model.variant_config().input_resolution, 380);
    // The two runs differ only in encoder initialization.
    let mut aligned = scratch.clone();
    aligned.model.pretrained = true;
    assert_eq!(aligned, pretrained);
}
