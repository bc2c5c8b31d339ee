use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{ExperimentConfig, VariantSpec};
use crate::dataflow::{
    build_pairs, check_pairs, generate_corpus, read_jsonl, write_jsonl, AnnotationRecord, Corpus,
    PairConfig, PairRelation, PreferencePair, Split, SyntheticSample,
};
use crate::grposim::{hacking_index, simulate, write_side_by_side, Emitter};
use crate::heads::{HeadKind, OracleScorer, RewardModel};
use crate::metrics::{iaa_report, write_json};
use crate::trainer::{compare_variants, evaluate_set, train, EvalSet, Variant};
use crate::{Error, Result};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn summary(cfg: &ExperimentConfig, command: &str, body: Value) -> Value {
    let mut v = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
    });
    if let (Value::Object(head), Value::Object(rest)) = (&mut v, body) {
        head.extend(rest);
    }
    v
}

fn load_corpus(cfg: &ExperimentConfig, strict: bool) -> Result<Corpus> {
    let samples: Vec<SyntheticSample> = read_jsonl(&cfg.out.join("samples.jsonl"), strict)?;
    let annotations: Vec<AnnotationRecord> = read_jsonl(&cfg.out.join("annotations.jsonl"), strict)?;
    Corpus::from_parts(cfg.corpus.clone(), samples, annotations)
}

fn train_pairs(corpus: &Corpus, pairs: &PairConfig) -> Result<Vec<PreferencePair>> {
    build_pairs(&corpus.split(Split::Train), &corpus.labels, pairs)
}

/// Write samples and annotations.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Value> {
    let corpus = generate_corpus(&cfg.corpus)?;
    ensure_dir(&cfg.out)?;
    write_jsonl(&cfg.out.join("samples.jsonl"), &corpus.samples)?;
    write_jsonl(&cfg.out.join("annotations.jsonl"), &corpus.annotations)?;
    let mut pass: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in &corpus.samples {
        let e = pass.entry(&s.dimension).or_default();
        e.1 += 1;
        if corpus.label(&s.sample_id)?.is_pass() {
            e.0 += 1;
        }
    }
    let rates: BTreeMap<&str, f64> = pass
        .into_iter()
        .map(|(d, (p, n))| (d, p as f64 / n as f64))
        .collect();
    let splits: BTreeMap<&str, usize> = [Split::Train, Split::IdEval, Split::OodEval]
        .into_iter()
        .map(|s| (s.as_str(), corpus.split(s).len()))
        .collect();
    Ok(summary(
        cfg,
        "gen",
        json!({
            "samples": corpus.samples.len(),
            "annotations": corpus.annotations.len(),
            "pass_rate": rates,
            "splits": splits,
        }),
    ))
}

/// Build and validate training pairs.
pub fn cmd_pairs(cfg: &ExperimentConfig, strict: bool) -> Result<Value> {
    let corpus = load_corpus(cfg, strict)?;
    let pairs = train_pairs(&corpus, &cfg.pairs)?;
    check_pairs(&pairs, &corpus.samples, &corpus.labels, cfg.pairs.n_lose_tie > 0)?;
    write_jsonl(&cfg.out.join("pairs.jsonl"), &pairs)?;
    let wins = pairs.iter().filter(|p| p.relation == PairRelation::Win).count();
    let mut by_pairing: BTreeMap<String, usize> = BTreeMap::new();
    for p in &pairs {
        *by_pairing.entry(format!("{:?}", p.pairing)).or_default() += 1;
    }
    Ok(summary(
        cfg,
        "pairs",
        json!({
            "pairs": pairs.len(),
            "win": wins,
            "tie": pairs.len() - wins,
            "by_pairing": by_pairing,
        }),
    ))
}

/// Train on `pairs.jsonl` and keep the selected checkpoint.
pub fn cmd_train(cfg: &ExperimentConfig, strict: bool) -> Result<Value> {
    let corpus = load_corpus(cfg, strict)?;
    let pairs: Vec<PreferencePair> = read_jsonl(&cfg.out.join("pairs.jsonl"), strict)?;
    let (model, history) = train(&cfg.train, &corpus, &pairs)?;
    model.save(&cfg.out.join("model.ckpt"))?;
    history.write_loss_csv(&cfg.out.join("history.csv"))?;
    let evals = cfg.out.join("evals");
    ensure_dir(&evals)?;
    for t in &history.evals {
        write_json(&evals.join(format!("tick_{:05}.json", t.step)), t)?;
    }
    Ok(summary(
        cfg,
        "train",
        json!({
            "steps": history.steps.len(),
            "final_loss": history.final_loss(),
            "eval_ticks": history.evals.len(),
            "selected_step": history.final_tick().map(|t| t.step),
            "final": history.final_tick().map(|t| &t.report),
        }),
    ))
}

fn checkpoint_path(cfg: &ExperimentConfig, given: Option<&Path>) -> PathBuf {
    given.map_or_else(|| cfg.out.join("model.ckpt"), Path::to_path_buf)
}

/// Score both held-out splits with a checkpoint.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, strict: bool) -> Result<Value> {
    let model = RewardModel::load(&checkpoint_path(cfg, checkpoint))?;
    let corpus = load_corpus(cfg, strict)?;
    let report = evaluate_set(&model, &corpus, &EvalSet::build(&corpus)?)?;
    report.write_json(&cfg.out.join("eval.json"))?;
    report.write_csv(&cfg.out.join("eval.csv"))?;
    Ok(summary(cfg, "eval", json!({ "report": report })))
}

/// Agreement of the annotation panel.
pub fn cmd_iaa(cfg: &ExperimentConfig, annotations: Option<&Path>, strict: bool) -> Result<Value> {
    let path = annotations.map_or_else(|| cfg.out.join("annotations.jsonl"), Path::to_path_buf);
    let records: Vec<AnnotationRecord> = read_jsonl(&path, strict)?;
    let report = iaa_report(&records)?;
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("iaa.json"), &report)?;
    Ok(summary(
        cfg,
        "iaa",
        json!({
            "annotators": report.annotators,
            "items": report.items,
            "krippendorff_alpha": report.krippendorff_alpha.value(),
            "alpha_band": report.alpha_band,
            "fleiss_kappa": report.fleiss_kappa.value(),
            "kappa_band": report.kappa_band,
            "raw_agreement": report.raw_agreement,
        }),
    ))
}

/// Optimize the toy policy against a checkpoint and against latent quality.
pub fn cmd_sim(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Value> {
    let model = RewardModel::load(&checkpoint_path(cfg, checkpoint))?;
    let emitter = Emitter::new(&cfg.corpus, cfg.sim.dimension)?;
    let run = simulate(&model, &emitter, &cfg.sim)?;
    let reference = simulate(&OracleScorer, &emitter, &cfg.sim)?;
    ensure_dir(&cfg.out)?;
    run.write_csv(&cfg.out.join("trajectory.csv"))?;
    reference.write_csv(&cfg.out.join("reference.csv"))?;
    write_side_by_side(
        &cfg.out.join("trajectory_vs_reference.csv"),
        &[("rm", &run), ("oracle", &reference)],
    )?;
    Ok(summary(
        cfg,
        "sim",
        json!({
            "steps": cfg.sim.steps,
            "initial_shortcut_prob": run.initial().shortcut_prob,
            "final_shortcut_prob": run.last().shortcut_prob,
            "final_mean_quality": run.final_policy.mean_quality,
            "reference_final_shortcut_prob": reference.last().shortcut_prob,
            "hacking_index": hacking_index(&run, &reference)?,
            "mean_top_advantage": run.mean_top_advantage(),
        }),
    ))
}

fn variant(
    cfg: &ExperimentConfig,
    spec: &VariantSpec,
    corpus: &Corpus,
    stored: &[PreferencePair],
) -> Result<Variant> {
    let mut train = cfg.train.clone();
    let mut label = Vec::new();
    if let Some(l) = &spec.loss {
        train.loss = l.clone();
        label.push(l.label());
    }
    if let Some(h) = spec.head {
        train.model.head = h;
        if h == HeadKind::SpecialToken {
            train.model.backbone.special_token = true;
        }
        label.push(h.as_str().to_string());
    }
    let pairs = match spec.pairing {
        Some(strategy) => {
            label.push(format!("{strategy:?}"));
            train_pairs(
                corpus,
                &PairConfig {
                    strategy,
                    ..cfg.pairs.clone()
                },
            )?
        }
        None => stored.to_vec(),
    };
    let name = spec.name.clone().unwrap_or_else(|| {
        if label.is_empty() {
            "base".into()
        } else {
            label.join("/")
        }
    });
    Ok(Variant {
        name,
        config: train,
        pairs,
    })
}

/// Train each variant under each derived seed and tabulate the results.
pub fn cmd_compare(cfg: &ExperimentConfig, strict: bool) -> Result<Value> {
    let corpus = load_corpus(cfg, strict)?;
    let needs_stored = cfg.compare.variants.iter().any(|v| v.pairing.is_none());
    let stored: Vec<PreferencePair> = if needs_stored {
        read_jsonl(&cfg.out.join("pairs.jsonl"), strict)?
    } else {
        Vec::new()
    };
    let variants = cfg
        .compare
        .variants
        .iter()
        .map(|s| variant(cfg, s, &corpus, &stored))
        .collect::<Result<Vec<_>>>()?;
    let table = compare_variants(&variants, &cfg.compare_seeds(), &corpus)?;
    table.write_csv(&cfg.out.join("compare.csv"))?;
    write_json(&cfg.out.join("compare.json"), &table)?;
    Ok(summary(cfg, "compare", json!({ "rows": table.rows })))
}
