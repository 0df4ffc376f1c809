use std::fs;
use std::path::Path;

use pomdp_nac::config::{load_config, ControllerChoice, ModelSource};
use pomdp_nac::HarnessError;

fn write(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn minimal_config_gets_default_step_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(&write(dir.path(), "model = { generator = \"two_state_noisy\" }\nn = 1\n")).unwrap();
    assert_eq!(cfg.model_source, ModelSource::TwoStateNoisy);
    assert_eq!(cfg.controller, ControllerChoice::SlidingBlock(1));
    assert_eq!((cfg.iterations, cfg.sgd_steps, cfg.critic_iterations, cfg.m), (50, 10_000, 50_000, 4));
    // |Y||Z||U| = 16 tabular features, r_max = 1, γ = 0.9
    let radius = 10.0 * 4.0;
    assert!((cfg.radius - radius).abs() < 1e-12);
    assert!((cfg.eta - 1.0 / 50f64.sqrt()).abs() < 1e-15);
    assert!((cfg.alpha - 1.0 / 50_000f64.sqrt()).abs() < 1e-15);
    assert!((cfg.zeta - radius * 0.1f64.sqrt() / 20_000f64.sqrt()).abs() < 1e-15);
    assert_eq!(cfg.seeds, vec![0]);
    assert!(cfg.oracle && !cfg.timing);
    assert_eq!(cfg.out, dir.path().join("runs"));
}

#[test]
fn negative_k_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_config(&write(dir.path(), "model = { generator = \"two_state_noisy\" }\nn = 1\nK = -3\n")).unwrap_err();
    match &err {
        HarnessError::Validation(errs) => assert!(errs.iter().any(|e| e.contains("`K`")), "{errs:?}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn every_violation_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    let text = "model = { generator = \"random_pomdp\", states = 0 }\nT = 0\nseeds = [1, 1]\nR = -1.0\n";
    match load_config(&write(dir.path(), text)).unwrap_err() {
        HarnessError::Validation(errs) => {
            for needle in ["`T`", "`R`", "`n`", "distinct", "model.states", "model.actions"] {
                assert!(errs.iter().any(|e| e.contains(needle)), "missing {needle} in {errs:?}");
            }
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_key_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_config(&write(dir.path(), "model = { generator = \"two_state_noisy\" }\nn = 1\nlearning_rate = 0.1\n")).unwrap_err();
    match &err {
        HarnessError::Parse { line, field, .. } => {
            assert_eq!(*line, Some(3));
            assert_eq!(field.as_deref(), Some("learning_rate"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
    let err = load_config(&write(dir.path(), "model = { generator = \"two_state_noisy\", colour = 1 }\nn = 1\n")).unwrap_err();
    assert!(matches!(err, HarnessError::Parse { .. }));
}

#[test]
fn missing_referenced_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_config(&write(dir.path(), "model = { path = \"nope.json\" }\nn = 1\n")).unwrap_err();
    assert!(matches!(err, HarnessError::Validation(_)));
}

#[test]
fn hash_ignores_seeds_and_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let base = "model = { generator = \"two_state_noisy\" }\nn = 1\n";
    let a = load_config(&write(dir.path(), &format!("{base}seeds = [1]\nout = \"a\"\n"))).unwrap();
    let b = load_config(&write(dir.path(), &format!("{base}seeds = [2, 3]\nout = \"b\"\n"))).unwrap();
    let c = load_config(&write(dir.path(), &format!("{base}K = 100\n"))).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 16);
}
