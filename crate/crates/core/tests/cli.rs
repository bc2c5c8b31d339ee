mod common;

use common::*;

#[test]
fn default_gen_writes_the_full_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let r = rmlab(dir.path(), &["gen", "--out", "o"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = r.json();
    assert_eq!(s["command"], "gen");
    assert_eq!(s["samples"], 2000);
    assert_eq!(s["seed"], 0);
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    let lines = std::fs::read_to_string(dir.path().join("o/samples.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2000);
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let a = workspace(SMALL_CONFIG);
    let b = workspace(SMALL_CONFIG);
    let out_a = run_pipeline(a.path());
    let out_b = run_pipeline(b.path());
    assert_eq!(out_a, out_b);
    let (sa, sb) = (snapshot(&a.path().join("o")), snapshot(&b.path().join("o")));
    assert!(sa.len() >= 14);
    assert_eq!(sa, sb);
}

#[test]
fn seed_flag_changes_outputs() {
    let dir = workspace(SMALL_CONFIG);
    let a = rmlab(dir.path(), &["--config", "c.json", "gen"]).json();
    let b = rmlab(dir.path(), &["--config", "c.json", "--seed", "9", "gen"]).json();
    assert_eq!(b["seed"], 9);
    assert_ne!(a["config_hash"], b["config_hash"]);
}

#[test]
fn eval_reproduces_the_selected_tick() {
    let dir = workspace(SMALL_CONFIG);
    for c in ["gen", "pairs"] {
        assert_eq!(rmlab(dir.path(), &["--config", "c.json", c]).code, 0);
    }
    let train = rmlab(dir.path(), &["--config", "c.json", "train"]).json();
    let eval = rmlab(dir.path(), &["--config", "c.json", "eval"]).json();
    assert_eq!(train["final"], eval["report"]);
}

#[test]
fn unanimous_annotations_agree_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for item in 0..6 {
        let verdict = if item % 2 == 0 { "Pass" } else { "Fail" };
        for a in 0..3 {
            text.push_str(&format!(
                "{{\"sample_id\":\"s{item}\",\"annotator_id\":\"a{a}\",\"dimension\":\"q\",\"verdict\":\"{verdict}\"}}\n"
            ));
        }
    }
    std::fs::write(dir.path().join("ann.jsonl"), text).unwrap();
    let r = rmlab(dir.path(), &["iaa", "--annotations", "ann.jsonl", "--out", "o"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = r.json();
    assert_eq!(s["krippendorff_alpha"], 1.0);
    assert_eq!(s["fleiss_kappa"], 1.0);
    assert_eq!(s["raw_agreement"], 1.0);
    assert_eq!(s["items"], 6);
}

#[test]
fn compare_flag_lists_losses() {
    let dir = workspace(SMALL_CONFIG);
    for c in ["gen", "pairs"] {
        assert_eq!(rmlab(dir.path(), &["--config", "c.json", c]).code, 0);
    }
    let r = rmlab(dir.path(), &["--config", "c.json", "compare", "--variants", "BT,BTWT+BCE"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = std::fs::read_to_string(dir.path().join("o/compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,acc_id,acc_ood,margin,pos_variance");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("BTWT+BCE,"));
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = workspace(SMALL_CONFIG);
    let p = dir.path();

    std::fs::write(p.join("bad.json"), r#"{"corpus": {"prompts": -1}}"#).unwrap();
    let r = rmlab(p, &["--config", "bad.json", "gen"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("corpus.prompts"), "{}", r.stderr);

    assert_eq!(rmlab(p, &["frobnicate"]).code, 2);
    assert_eq!(rmlab(p, &["--config", "c.json", "compare", "--variants", "XYZ"]).code, 2);

    assert_eq!(rmlab(p, &["--config", "c.json", "train"]).code, 5);

    std::fs::write(p.join("blocker"), "").unwrap();
    assert_eq!(rmlab(p, &["--config", "c.json", "--out", "blocker/o", "gen"]).code, 5);

    assert_eq!(rmlab(p, &["--config", "c.json", "gen"]).code, 0);
    std::fs::write(p.join("o/pairs.jsonl"), "{\"id_i\": 3}\n").unwrap();
    assert_eq!(rmlab(p, &["--config", "c.json", "train"]).code, 3);
}
