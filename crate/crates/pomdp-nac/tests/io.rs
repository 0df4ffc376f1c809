use std::fs;

use pomdp_nac::io::{load_model, load_policy, save_model, ControllerFile, ModelFile, PolicyFile};
use pomdp_nac::HarnessError;
use pomdp_nac_core::benchmarks::{fully_observed, random_pomdp, two_state_noisy};
use pomdp_nac_core::controller::InternalStateSpec;

#[test]
fn model_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let model = random_pomdp(4, 3, 2, 0.8, 11).unwrap().with_name("r");
    save_model(&path, &model).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.transition_data(), model.transition_data());
    assert_eq!(back.channel_data(), model.channel_data());
    assert_eq!(back.reward_data(), model.reward_data());
    assert_eq!((back.gamma(), back.r_max(), back.name()), (0.8, model.r_max(), Some("r")));
}

#[test]
fn two_state_noisy_file_has_canonical_entries() {
    let f = ModelFile::from_model(&two_state_noisy());
    assert_eq!((f.states, f.actions, f.observations, f.gamma), (2, 2, 2, 0.9));
    assert_eq!(f.transition, vec![vec![vec![0.9, 0.1], vec![0.1, 0.9]], vec![vec![0.1, 0.9], vec![0.9, 0.1]]]);
    assert_eq!(f.channel, vec![vec![0.8, 0.2], vec![0.2, 0.8]]);
    assert_eq!(f.reward, vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
}

#[test]
fn generators_follow_their_definitions() {
    let fo = ModelFile::from_model(&fully_observed(&two_state_noisy()).unwrap());
    assert_eq!(fo.channel, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let (a, b) = (random_pomdp(3, 2, 2, 0.9, 5).unwrap(), random_pomdp(3, 2, 2, 0.9, 5).unwrap());
    assert_eq!(ModelFile::from_model(&a), ModelFile::from_model(&b));
}

#[test]
fn malformed_models_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let mut f = ModelFile::from_model(&two_state_noisy());
    f.channel[1].push(0.0);
    f.reward.pop();
    fs::write(&path, serde_json::to_string(&f).unwrap()).unwrap();
    match load_model(&path) {
        Err(HarnessError::Validation(errs)) => {
            assert_eq!(errs.len(), 2, "{errs:?}");
            assert!(errs[0].contains("channel[1]") && errs[1].contains("reward"));
        }
        other => panic!("{other:?}"),
    }

    let mut f = ModelFile::from_model(&two_state_noisy());
    f.transition[0][1] = vec![0.5, 0.6];
    fs::write(&path, serde_json::to_string(&f).unwrap()).unwrap();
    let err = load_model(&path).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    fs::write(&path, "{\"states\": 2, \"bogus\": 1}").unwrap();
    assert!(matches!(load_model(&path), Err(HarnessError::Parse { line: Some(1), .. })));
}

#[test]
fn policy_files_resolve_all_three_forms() {
    let dir = tempfile::tempdir().unwrap();
    let model = two_state_noisy();
    let path = dir.path().join("p.json");

    fs::write(&path, r#"{"controller": {"kind": "sliding_block", "n": 1}}"#).unwrap();
    let p = load_policy(&path, &model).unwrap();
    assert_eq!(p.internal.n_z(), 4);
    assert_eq!(p.table.probs(1, 3), &[0.5, 0.5]);

    let probs = vec![vec![vec![0.25, 0.75]], vec![vec![1.0, 0.0]]];
    let file = PolicyFile {
        controller: ControllerFile::SlidingBlock { n: 0 },
        theta: None,
        probs: Some(probs),
    };
    fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
    let p = load_policy(&path, &model).unwrap();
    assert_eq!(p.table.probs(0, 0), &[0.25, 0.75]);
    assert_eq!(p.table.probs(1, 0), &[1.0, 0.0]);

    // tabular softmax: θ indexes (y, z, u)
    fs::write(&path, r#"{"controller": {"kind": "sliding_block", "n": 0}, "theta": [0, 0, 0, 0.6931471805599453]}"#).unwrap();
    let p = load_policy(&path, &model).unwrap();
    assert!((p.table.probs(1, 0)[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn generic_controller_round_trips() {
    let model = two_state_noisy();
    // z' = y
    let kernel = (0..2)
        .map(|_| (0..2).map(|y| (0..2).map(|_| if y == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect()).collect())
        .collect();
    let file = ControllerFile::Generic { internal_kernel: kernel };
    let spec = file.to_spec(&model).unwrap();
    assert_eq!(spec.n_z(), 2);
    assert_eq!(spec.next_deterministic(0, 1, 0), Some(1));
    assert_eq!(ControllerFile::from_spec(&spec), file);
    let sbc = InternalStateSpec::sliding_block(2, 2, 2).unwrap();
    assert_eq!(ControllerFile::from_spec(&sbc), ControllerFile::SlidingBlock { n: 2 });
}
