use std::ffi::{CStr, CString};
use std::ptr;

use rmlab::backbone::BackboneConfig;
use rmlab::dataflow::{generate_corpus, CorpusConfig, PairRelation, SyntheticSample};
use rmlab::heads::{ModelConfig, RewardModel, Scorer};
use rmlab::losses::{bt_loss, bt_wt_loss, btt_probabilities};
use rmlab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(rmlab_last_error()) }.to_string_lossy().into_owned()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            layers: 2,
            model_dim: 8,
            heads: 2,
            seq_len: 6,
            feature_dim: 8,
            ..Default::default()
        },
        hpqa_stages: 2,
        adapter_heads: 2,
        ..Default::default()
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(rmlab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn losses_match_the_library() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(rmlab_bt_loss(1.0, 0.0, 0.0, &mut out), RmlabStatus::Ok);
        assert!((out - bt_loss(1.0, 0.0).unwrap()).abs() < 1e-15);
        assert_eq!(rmlab_bt_wt_loss(0.0, 0.0, true, &mut out), RmlabStatus::Ok);
        assert_eq!(out, bt_wt_loss(0.0, 0.0, PairRelation::Tie).unwrap());
        assert_eq!(rmlab_btt_loss(0.3, -0.2, 2, 1.5, &mut out), RmlabStatus::Ok);
        let p = btt_probabilities(0.3, -0.2, 1.5).unwrap();
        assert!((out + p[2].ln()).abs() < 1e-12);
        assert_eq!(rmlab_bce_penalty(0.0, true, &mut out), RmlabStatus::Ok);
        assert!((out - 2.0f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn bad_arguments_report_status_and_message() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(rmlab_bt_loss(0.0, 0.0, 0.0, ptr::null_mut()), RmlabStatus::NullPointer);
        assert!(last_error().contains("out"));
        assert_eq!(rmlab_btt_loss(0.0, 0.0, 7, 1.5, &mut out), RmlabStatus::InvalidArgument);
        assert_eq!(rmlab_btt_loss(0.0, 0.0, 0, 0.5, &mut out), RmlabStatus::InvalidArgument);
        assert_eq!(rmlab_bt_loss(f64::NAN, 0.0, 0.0, &mut out), RmlabStatus::Numeric);
        assert_eq!(rmlab_bt_loss(1.0, 0.0, 0.0, &mut out), RmlabStatus::Ok);
        assert!(last_error().is_empty());
    }
}

#[test]
fn advantages_are_standardized() {
    let r = [1.0, 2.0, 3.0, 4.0];
    let mut a = [0.0; 4];
    unsafe {
        assert_eq!(rmlab_group_advantage(r.as_ptr(), 4, 1e-8, a.as_mut_ptr()), RmlabStatus::Ok);
    }
    let mean: f64 = a.iter().sum::<f64>() / 4.0;
    let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    unsafe {
        assert_ne!(rmlab_group_advantage(r.as_ptr(), 1, 1e-8, a.as_mut_ptr()), RmlabStatus::Ok);
    }
}

#[test]
fn agreement_statistics() {
    let mut v = 0.0;
    // Three raters, every item unanimous.
    let ratings = [0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0];
    let counts = [3u32, 0, 0, 3, 0, 3, 3, 0];
    unsafe {
        assert_eq!(rmlab_krippendorff_alpha(ratings.as_ptr(), 3, 4, &mut v), RmlabStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(rmlab_fleiss_kappa(counts.as_ptr(), 4, 2, &mut v), RmlabStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(rmlab_raw_agreement(ratings.as_ptr(), 3, 4, &mut v), RmlabStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);

        let same = [1, 1, 1, 1, -1, 1];
        assert_eq!(rmlab_krippendorff_alpha(same.as_ptr(), 2, 3, &mut v), RmlabStatus::Degenerate);
        assert!(v.is_nan());
    }
}

#[test]
fn model_and_corpus_handles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_model();
    let model = RewardModel::new(&cfg).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    model.save(&ckpt).unwrap();

    let corpus_json = CString::new(r#"{"prompts": 12, "samples_per_prompt": 4, "seed": 5}"#).unwrap();
    let mut corpus: *mut RmlabCorpus = ptr::null_mut();
    let mut handle: *mut RmlabModel = ptr::null_mut();
    let path = CString::new(ckpt.to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(rmlab_corpus_generate(corpus_json.as_ptr(), &mut corpus), RmlabStatus::Ok);
        assert_eq!(rmlab_model_load(path.as_ptr(), &mut handle), RmlabStatus::Ok);

        let (mut n, mut passes) = (0usize, 0usize);
        assert_eq!(rmlab_corpus_counts(corpus, &mut n, &mut passes), RmlabStatus::Ok);
        assert_eq!(n, 48);
        assert!(passes > 0 && passes < n);

        let reference = generate_corpus(&CorpusConfig {
            prompts: 12,
            samples_per_prompt: 4,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let refs: Vec<&SyntheticSample> = reference.samples.iter().collect();
        let want = model.score(&refs).unwrap();
        let mut got = vec![0.0; n];
        assert_eq!(rmlab_model_score_corpus(handle, corpus, got.as_mut_ptr(), n), RmlabStatus::Ok);
        assert_eq!(got, want);
        assert_eq!(
            rmlab_model_score_corpus(handle, corpus, got.as_mut_ptr(), n - 1),
            RmlabStatus::InvalidArgument
        );

        let len = reference.samples[0].features.len();
        let flat: Vec<f64> = reference.samples.iter().flat_map(|s| s.features.clone()).collect();
        let flags: Vec<bool> = reference.samples.iter().map(|s| s.shortcut).collect();
        let mut direct = vec![0.0; n];
        assert_eq!(
            rmlab_model_score(handle, flat.as_ptr(), n, len, flags.as_ptr(), direct.as_mut_ptr()),
            RmlabStatus::Ok
        );
        assert_eq!(direct, want);

        let (mut a, mut k, mut g) = (0.0, 0.0, 0.0);
        assert_eq!(rmlab_corpus_iaa(corpus, &mut a, &mut k, &mut g), RmlabStatus::Ok);
        assert!(a <= 1.0 && k <= 1.0 && (0.0..=1.0).contains(&g));

        let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(rmlab_corpus_write(corpus, out_dir.as_ptr()), RmlabStatus::Ok);
        let lines = std::fs::read_to_string(dir.path().join("samples.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 48);

        rmlab_model_free(handle);
        rmlab_corpus_free(corpus);
        rmlab_model_free(ptr::null_mut());
    }
}

#[test]
fn load_failures_leave_the_handle_untouched() {
    let mut handle: *mut RmlabModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let bad = CString::new(r#"{"prompts": "x"}"#).unwrap();
    let mut corpus: *mut RmlabCorpus = ptr::null_mut();
    unsafe {
        assert_eq!(rmlab_model_load(missing.as_ptr(), &mut handle), RmlabStatus::Io);
        assert!(handle.is_null());
        assert_eq!(rmlab_corpus_generate(bad.as_ptr(), &mut corpus), RmlabStatus::Config);
        assert!(corpus.is_null());
        assert!(!last_error().is_empty());
    }
}
