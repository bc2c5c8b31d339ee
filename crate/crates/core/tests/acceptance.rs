//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use rmlab::backbone::BackboneConfig;
use rmlab::dataflow::{
    build_pairs, generate_corpus, Corpus, CorpusConfig, PairConfig, PairRelation, PairStrategy,
    Pairing, PreferencePair, Split,
};
use rmlab::grposim::{hacking_index, simulate, Emitter, SimConfig, ToyPolicy};
use rmlab::heads::{Head, HeadKind, HpqaParams, LayerIndexList, ModelConfig, OracleScorer, RewardModel};
use rmlab::losses::{batch_loss, bt_loss, bt_wt_loss, btt_probabilities, LossConfig, LossKind, RewardTable};
use rmlab::metrics::{fleiss_kappa, krippendorff_alpha};
use rmlab::numkit::{grad_check, GradCheckConfig, Linear, MhaParams, ParamStore, Tape, Tensor};
use rmlab::seed;
use rmlab::trainer::{train, TrainConfig};

const SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn small_train(seed: u64, loss: LossConfig) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            backbone: BackboneConfig {
                layers: 2,
                model_dim: 16,
                heads: 2,
                seq_len: 6,
                feature_dim: 8,
                ..Default::default()
            },
            hpqa_stages: 2,
            adapter_heads: 2,
            ..Default::default()
        },
        loss,
        seed,
        ..Default::default()
    }
}

fn default_pairs(corpus: &Corpus, strategy: PairStrategy) -> Vec<PreferencePair> {
    build_pairs(
        &corpus.split(Split::Train),
        &corpus.labels,
        &PairConfig {
            strategy,
            ..Default::default()
        },
    )
    .unwrap()
}

// ---------------------------------------------------------------- 1

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let mut model = RewardModel::new(&ModelConfig {
            backbone: BackboneConfig {
                layers: 2,
                model_dim: 8,
                heads: 2,
                seq_len: 5,
                feature_dim: 3,
                special_token: false,
                seed: s,
            },
            head: HeadKind::Hpqa,
            layer_indices: None,
            hpqa_stages: 2,
            adapter_heads: 2,
        })
        .unwrap();
        let Head::Hpqa(p) = model.head().clone() else {
            unreachable!()
        };
        model.store_mut().set_trainable(p.head.out.bias.unwrap(), false);
        let mut rng = seed::derived_rng(s, "acceptance/tokens");
        let tokens = Tensor::randn(&[4, 5, 3], 1.0, &mut rng);
        let ids = ["a", "b", "c", "d"];
        let pairs = vec![
            PreferencePair::new("a", "c", PairRelation::Win, Pairing::CrossPrompt),
            PreferencePair::new("b", "d", PairRelation::Win, Pairing::CrossPrompt),
            PreferencePair::new("a", "b", PairRelation::Tie, Pairing::CrossPrompt),
        ];
        let cfg = LossConfig::new(LossKind::BtWt);
        let rep = grad_check(
            |ps| {
                let mut m = model.clone();
                *m.store_mut() = ps.clone();
                let mut tape = Tape::new();
                let x = tape.input(tokens.clone());
                let r = m.forward(&mut tape, x)?;
                let table: RewardTable = ids.iter().zip(tape.value(r).data()).map(|(i, v)| (*i, *v)).collect();
                let bl = batch_loss(&pairs, &table, None, &cfg)?;
                let g = tape.backward(r, &Tensor::from_vec(bl.grads))?;
                Ok((bl.value, g.params(&tape, ps).grads))
            },
            model.store(),
            &GradCheckConfig {
                coords: 300,
                seed: s,
                ..Default::default()
            },
        )
        .unwrap();
        worst = worst.max(rep.max_rel_error);
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-4 && t < Duration::from_secs(120),
        format!("max rel error {worst:.2e} (<= 1e-4) over 20 seeds in {:.1}s (< 120s)", t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn analytic_losses() -> Outcome {
    let ln2 = 2f64.ln();
    let bt0 = bt_loss(0.0, 0.0).unwrap();
    let tie0 = bt_wt_loss(0.0, 0.0, PairRelation::Tie).unwrap();
    let scan_min = (0..=200_000)
        .map(|k| -10.0 + k as f64 * 1e-4)
        .map(|d| bt_wt_loss(d, 0.0, PairRelation::Tie).unwrap())
        .fold(f64::INFINITY, f64::min);
    let mut rng = seed::rng(2);
    let mut sum_err: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let theta = 1.0 + rng.gen_range(1e-6..5.0);
        let p = btt_probabilities(a, b, theta).unwrap();
        sum_err = sum_err.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    let mut conv: f64 = 0.0;
    for d in [-5.0, -1.0, -0.1, 0.0, 0.3, 2.0, 7.0] {
        let p = btt_probabilities(d, 0.0, 1.0 + 1e-8).unwrap();
        let bt = 1.0 / (1.0 + f64::exp(-d));
        conv = conv.max((p[0] - bt).abs());
    }
    let pass = (bt0 - ln2).abs() <= 1e-12
        && (tie0 - ln2).abs() <= 1e-9
        && tie0 <= scan_min + 1e-9
        && sum_err <= 1e-12
        && conv < 1e-6;
    outcome(
        pass,
        format!(
            "bt(0) - ln2 = {:.1e} (1e-12); tie(0) - ln2 = {:.1e} (1e-9), scan min {:.12}; \
             BTT sum err {sum_err:.1e} (1e-12); |P_btt - P_bt| at theta=1+1e-8 {conv:.1e} (< 1e-6)",
            bt0 - ln2,
            tie0 - ln2,
            scan_min
        ),
    )
}

// ---------------------------------------------------------------- 3

fn affine(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.weight).data();
    (0..l.out_dim)
        .map(|o| {
            let b = l.bias.map_or(0.0, |b| store.get(b).data()[o]);
            b + (0..l.in_dim).map(|i| x[i] * w[i * l.out_dim + o]).sum::<f64>()
        })
        .collect()
}

fn attend(store: &ParamStore, m: &MhaParams, q: &[f64], kv: &[Vec<f64>]) -> Vec<f64> {
    let d = q.len();
    let dh = d / m.heads;
    let qp = affine(store, &m.q_proj, q);
    let ks: Vec<Vec<f64>> = kv.iter().map(|x| affine(store, &m.k_proj, x)).collect();
    let vs: Vec<Vec<f64>> = kv.iter().map(|x| affine(store, &m.v_proj, x)).collect();
    let mut cat = vec![0.0; d];
    for h in 0..m.heads {
        let cols = h * dh..(h + 1) * dh;
        let logits: Vec<f64> = ks
            .iter()
            .map(|k| cols.clone().map(|c| qp[c] * k[c]).sum::<f64>() / (dh as f64).sqrt())
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        for (j, wj) in w.iter().enumerate() {
            for c in cols.clone() {
                cat[c] += wj / z * vs[j][c];
            }
        }
    }
    affine(store, &m.o_proj, &cat)
}

fn hpqa_straight_line(p: &HpqaParams, store: &ParamStore, states: &[Vec<Vec<f64>>]) -> f64 {
    let mut q = store.get(p.q0).data().to_vec();
    for (m, &l) in p.stages.iter().zip(p.indices.as_slice()) {
        q = attend(store, m, &q, &states[l]);
    }
    let o = attend(store, &p.res, store.get(p.q_res).data(), states.last().unwrap());
    let s: Vec<f64> = q.iter().zip(&o).map(|(a, b)| a + b).collect();
    let h: Vec<f64> = affine(store, &p.head.hidden, &s)
        .into_iter()
        .map(|x| x / (1.0 + (-x).exp()))
        .collect();
    affine(store, &p.head.out, &h)[0]
}

fn hpqa_oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..50u64 {
        let mut rng = seed::derived_rng(s, "acceptance/hpqa");
        let layers = rng.gen_range(1..=4);
        let heads = rng.gen_range(1..=2);
        let dim = heads * rng.gen_range(1..=3);
        let seq = rng.gen_range(1..=4);
        let stages = rng.gen_range(1..=layers);
        let mut idx: Vec<usize> = (0..=layers).collect();
        idx.shuffle(&mut rng);
        let mut idx: Vec<usize> = idx[..stages].to_vec();
        idx.sort_unstable();
        let mut store = ParamStore::new();
        let p = HpqaParams::init(&mut store, dim, heads, LayerIndexList::new(idx, layers).unwrap(), &mut rng).unwrap();
        for id in p.param_ids() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::randn(&shape, 0.8, &mut rng)).unwrap();
        }
        let states: Vec<Tensor> = (0..=layers).map(|_| Tensor::randn(&[1, seq, dim], 1.0, &mut rng)).collect();
        let mut tape = Tape::new();
        let hidden: Vec<_> = states.iter().map(|t| tape.input(t.clone())).collect();
        let r = p.forward(&mut tape, &store, &hidden).unwrap();
        let got = tape.value(r).data()[0];
        let rows: Vec<Vec<Vec<f64>>> = states
            .iter()
            .map(|t| t.data().chunks(dim).map(|c| c.to_vec()).collect())
            .collect();
        let want = hpqa_straight_line(&p, &store, &rows);
        worst = worst.max((got - want).abs());
    }
    outcome(worst <= 1e-10, format!("max |forward - oracle| {worst:.2e} (<= 1e-10) on 50 instances"))
}

// ---------------------------------------------------------------- 4

fn learnability() -> Outcome {
    let start = Instant::now();
    let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
    let pairs = default_pairs(&corpus, PairStrategy::CrossPrompt);
    let cfg = TrainConfig {
        loss: LossConfig::new(LossKind::BtWt),
        ..Default::default()
    };
    let (_, history) = train(&cfg, &corpus, &pairs).unwrap();
    let t = start.elapsed();
    let best = history.evals.iter().map(|e| e.report.id.accuracy).fold(0.0, f64::max);
    let ood = history.final_tick().unwrap().report.ood.as_ref().unwrap().accuracy;
    outcome(
        best >= 0.90 && t < Duration::from_secs(300),
        format!(
            "held-out accuracy {best:.4} (>= 0.90, ood {ood:.4}) after {} epochs in {:.1}s (< 300s)",
            cfg.epochs,
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 5, 7

struct DefaultCorpusRuns {
    bt: Vec<(f64, f64, f64)>,
    btwt: Vec<(f64, f64, f64)>,
    btwt_bce: Vec<(f64, f64, f64)>,
}

fn default_corpus_runs() -> DefaultCorpusRuns {
    let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
    let pairs = default_pairs(&corpus, PairStrategy::CrossPrompt);
    let run = |loss: LossConfig| -> Vec<(f64, f64, f64)> {
        (0..SEEDS)
            .map(|s| {
                let (_, h) = train(&small_train(s, loss.clone()), &corpus, &pairs).unwrap();
                let r = &h.final_tick().unwrap().report.id;
                (r.accuracy, r.positive_score_variance, r.margin)
            })
            .collect()
    };
    DefaultCorpusRuns {
        bt: run(LossConfig::new(LossKind::Bt)),
        btwt: run(LossConfig::new(LossKind::BtWt)),
        btwt_bce: run(LossConfig::new(LossKind::BtWt).with_bce(1.0)),
    }
}

fn compact_positives(runs: &DefaultCorpusRuns) -> Outcome {
    let mut wins = 0;
    let mut cells = Vec::new();
    for (b, w) in runs.bt.iter().zip(&runs.btwt) {
        let matched = (b.0 - w.0).abs() <= 0.02;
        if matched && w.1 < b.1 {
            wins += 1;
        }
        cells.push(format!("{:.3}/{:.3}@{:+.3}", w.1, b.1, w.0 - b.0));
    }
    outcome(
        wins >= 4,
        format!(
            "pass-score variance BT-WT < BT at |dacc| <= 0.02 in {wins}/5 seeds (>= 4); var wt/bt@dacc {}",
            cells.join(" ")
        ),
    )
}

fn bce_margin(runs: &DefaultCorpusRuns) -> Outcome {
    let mut wins = 0;
    let mut cells = Vec::new();
    for (w, c) in runs.btwt.iter().zip(&runs.btwt_bce) {
        if c.2 < w.2 && (c.0 - w.0).abs() < 0.03 {
            wins += 1;
        }
        cells.push(format!("{:.2}->{:.2}@{:+.3}", w.2, c.2, c.0 - w.0));
    }
    outcome(
        wins >= 4,
        format!(
            "margin smaller with BCE(1) at |dacc| < 0.03 in {wins}/5 seeds (>= 4); margin wt->wt+bce@dacc {}",
            cells.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 6, 8

struct ShortcutRuns {
    top_adv: Vec<(f64, f64)>,
    hack: Vec<(f64, f64)>,
    elapsed: Duration,
}

fn shortcut_runs() -> ShortcutRuns {
    let start = Instant::now();
    let cc = CorpusConfig {
        rho_train: 0.8,
        ..Default::default()
    };
    let corpus = generate_corpus(&cc).unwrap();
    let pairs = default_pairs(&corpus, PairStrategy::CrossPrompt);
    let emitter = Emitter::new(&cc, 0).unwrap();
    let policy = ToyPolicy {
        mean_quality: -0.5,
        shortcut_logit: 0.0,
        noise: 1.0,
    };
    let mut top_adv = Vec::new();
    let mut hack = Vec::new();
    for s in 0..SEEDS {
        let sim = SimConfig {
            policy,
            steps: 200,
            group_size: 8,
            seed: s,
            ..Default::default()
        };
        let reference = simulate(&OracleScorer, &emitter, &sim).unwrap();
        let mut per = Vec::new();
        for kind in [LossKind::Bt, LossKind::BtWt] {
            let (model, _) = train(&small_train(s, LossConfig::new(kind)), &corpus, &pairs).unwrap();
            let fixed = SimConfig {
                steps: 0,
                groups_per_step: 200,
                ..sim.clone()
            };
            let a = simulate(&model, &emitter, &fixed).unwrap().initial().advantages.top_abs_mean;
            let h = hacking_index(&simulate(&model, &emitter, &sim).unwrap(), &reference).unwrap();
            per.push((a, h));
        }
        top_adv.push((per[0].0, per[1].0));
        hack.push((per[0].1, per[1].1));
    }
    ShortcutRuns {
        top_adv,
        hack,
        elapsed: start.elapsed(),
    }
}

fn top_advantage(runs: &ShortcutRuns) -> Outcome {
    let wins = runs.top_adv.iter().filter(|(bt, wt)| wt < bt).count();
    let cells: Vec<String> = runs.top_adv.iter().map(|(b, w)| format!("{w:.3}/{b:.3}")).collect();
    outcome(
        wins >= 4,
        format!(
            "top-member |A| BT-WT < BT (G = 8) in {wins}/5 seeds (>= 4); wt/bt {}",
            cells.join(" ")
        ),
    )
}

fn hacking_separation(runs: &ShortcutRuns) -> Outcome {
    let wins = runs.hack.iter().filter(|(bt, wt)| bt > wt).count();
    let cells: Vec<String> = runs.hack.iter().map(|(b, w)| format!("{b:+.3}/{w:+.3}")).collect();
    let t = runs.elapsed;
    outcome(
        wins >= 4 && t < Duration::from_secs(300),
        format!(
            "hacking index BT > BT-WT over 200 steps in {wins}/5 seeds (>= 4) in {:.1}s (< 300s); bt/wt {}",
            t.as_secs_f64(),
            cells.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 9

fn pairing_ablation() -> Outcome {
    let corpus = generate_corpus(&CorpusConfig {
        single_sample_fraction: 0.3,
        ..Default::default()
    })
    .unwrap();
    let train_split = corpus.split(Split::Train);
    let mut per_prompt: HashMap<&str, usize> = HashMap::new();
    for s in &train_split {
        *per_prompt.entry(s.prompt_id.as_str()).or_default() += 1;
    }
    let prompt_of: HashMap<&str, &str> = train_split
        .iter()
        .map(|s| (s.sample_id.as_str(), s.prompt_id.as_str()))
        .collect();
    let singles_used = |pairs: &[PreferencePair]| -> usize {
        pairs
            .iter()
            .flat_map(|p| [&p.id_i, &p.id_j])
            .filter(|id| per_prompt[prompt_of[id.as_str()]] == 1)
            .map(|id| id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    };
    let cross = default_pairs(&corpus, PairStrategy::CrossPrompt);
    let inp = default_pairs(&corpus, PairStrategy::InPrompt);
    let (sc, si) = (singles_used(&cross), singles_used(&inp));
    let mut acc = BTreeMap::new();
    for (name, pairs) in [("cross", &cross), ("in", &inp)] {
        let mean = (0..3)
            .map(|s| {
                let loss = LossConfig::new(LossKind::BtWt);
                let (_, h) = train(&small_train(s, loss), &corpus, pairs).unwrap();
                h.final_tick().unwrap().report.id.accuracy
            })
            .sum::<f64>()
            / 3.0;
        acc.insert(name, mean);
    }
    let gap = (acc["cross"] - acc["in"]).abs();
    outcome(
        gap <= 0.03 && sc > 0 && si == 0,
        format!(
            "mean accuracy cross {:.4} vs in-prompt {:.4}, gap {gap:.4} (<= 0.03) over 3 seeds; \
             single-sample-prompt samples used: cross {sc} (> 0), in-prompt {si} (= 0)",
            acc["cross"], acc["in"]
        ),
    )
}

// ---------------------------------------------------------------- 10

fn kappa_brute(counts: &[Vec<usize>]) -> f64 {
    let n = counts[0].iter().sum::<usize>() as f64;
    let items = counts.len() as f64;
    let k = counts[0].len();
    let mut p_bar = 0.0;
    for row in counts {
        let mut agree = 0.0;
        for a in 0..row.len() {
            agree += (row[a] * row[a].saturating_sub(1)) as f64;
        }
        p_bar += agree / (n * (n - 1.0));
    }
    p_bar /= items;
    let pe: f64 = (0..k)
        .map(|c| {
            let pj = counts.iter().map(|r| r[c]).sum::<usize>() as f64 / (items * n);
            pj * pj
        })
        .sum();
    (p_bar - pe) / (1.0 - pe)
}

// Pairwise definition: observed and expected disagreement over all ordered
// pairs of pairable values.
fn alpha_brute(ratings: &[Vec<Option<usize>>]) -> f64 {
    let items = ratings[0].len();
    let units: Vec<Vec<usize>> = (0..items)
        .map(|i| ratings.iter().filter_map(|r| r[i]).collect::<Vec<_>>())
        .filter(|u| u.len() >= 2)
        .collect();
    let all: Vec<usize> = units.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mut d_o = 0.0;
    for u in &units {
        let m = u.len() as f64;
        for a in 0..u.len() {
            for b in 0..u.len() {
                if a != b && u[a] != u[b] {
                    d_o += 1.0 / (m - 1.0);
                }
            }
        }
    }
    d_o /= n;
    let mut d_e = 0.0;
    for a in 0..all.len() {
        for b in 0..all.len() {
            if a != b && all[a] != all[b] {
                d_e += 1.0;
            }
        }
    }
    d_e /= n * (n - 1.0);
    1.0 - d_o / d_e
}

fn iaa_oracles() -> Outcome {
    let mut rng = seed::rng(10);
    let (mut wk, mut wa): (f64, f64) = (0.0, 0.0);
    let mut checked = 0;
    while checked < 100 {
        let items = rng.gen_range(3..12);
        let raters = rng.gen_range(2..6);
        let cats = rng.gen_range(2..4);
        let full: Vec<Vec<usize>> = (0..raters)
            .map(|_| (0..items).map(|_| rng.gen_range(0..cats)).collect())
            .collect();
        let counts: Vec<Vec<usize>> = (0..items)
            .map(|i| (0..cats).map(|c| full.iter().filter(|r| r[i] == c).count()).collect())
            .collect();
        let holed: Vec<Vec<Option<usize>>> = full
            .iter()
            .map(|r| r.iter().map(|&v| (!rng.gen_bool(0.2)).then_some(v)).collect())
            .collect();
        let (Some(k), Some(a)) = (
            fleiss_kappa(&counts).ok().and_then(|c| c.value()),
            krippendorff_alpha(&holed).ok().and_then(|c| c.value()),
        ) else {
            continue;
        };
        wk = wk.max((k - kappa_brute(&counts)).abs());
        wa = wa.max((a - alpha_brute(&holed)).abs());
        checked += 1;
    }

    let unanimous: Vec<Vec<Option<usize>>> = (0..3)
        .map(|_| (0..20).map(|i| Some(i % 2)).collect())
        .collect();
    let perfect_a = krippendorff_alpha(&unanimous).unwrap().value().unwrap();
    let perfect_k = fleiss_kappa(&(0..20).map(|i| if i % 2 == 0 { vec![3, 0] } else { vec![0, 3] }).collect::<Vec<_>>())
        .unwrap()
        .value()
        .unwrap();

    let mut rng = seed::rng(11);
    let base: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
    let shuffled: Vec<Vec<Option<usize>>> = (0..3)
        .map(|_| {
            let mut r = base.clone();
            r.shuffle(&mut rng);
            r.into_iter().map(Some).collect()
        })
        .collect();
    let shuffled_a = krippendorff_alpha(&shuffled).unwrap().value().unwrap();

    outcome(
        wk <= 1e-10 && wa <= 1e-10 && perfect_a == 1.0 && perfect_k == 1.0 && shuffled_a.abs() < 0.05,
        format!(
            "max |kappa - brute| {wk:.1e}, |alpha - brute| {wa:.1e} (<= 1e-10) on 100 matrices; \
             perfect alpha {perfect_a}, kappa {perfect_k} (= 1.0); shuffled |alpha| {:.4} (< 0.05) on 1k items",
            shuffled_a.abs()
        ),
    )
}

// ---------------------------------------------------------------- 11

fn cli_determinism() -> Outcome {
    let a = common::workspace(common::SMALL_CONFIG);
    let b = common::workspace(common::SMALL_CONFIG);
    let out_a = common::run_pipeline(a.path());
    let out_b = common::run_pipeline(b.path());
    let (sa, sb) = (common::snapshot(&a.path().join("o")), common::snapshot(&b.path().join("o")));
    let differing: Vec<String> = sa
        .iter()
        .filter(|(k, v)| sb.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let stdout_same = out_a == out_b;
    outcome(
        differing.is_empty() && sa.len() == sb.len() && stdout_same,
        format!(
            "{} commands, {} artifacts byte-identical across two runs; stdout identical: {stdout_same}; differing: {:?}",
            common::PIPELINE.len(),
            sa.len(),
            differing
        ),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let line = match catch_unwind(AssertUnwindSafe(|| f())) {
            Ok(o) => {
                if !o.pass {
                    failures += 1;
                }
                format!("{} [{n:>2}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail)
            }
            Err(e) => {
                failures += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                format!("FAIL [{n:>2}] {name}: panicked: {msg}")
            }
        };
        println!("{line} [{:.1}s]", start.elapsed().as_secs_f64());
    };

    report(1, "gradient fidelity", &mut gradient_fidelity);
    report(2, "analytic loss values", &mut analytic_losses);
    report(3, "HPQA oracle equivalence", &mut hpqa_oracle_equivalence);
    report(4, "learnability", &mut learnability);
    let mut runs = None;
    report(5, "BT-WT compacts pass scores", &mut || {
        let r = runs.get_or_insert_with(default_corpus_runs);
        compact_positives(r)
    });
    let mut shortcut = None;
    report(6, "top-member advantage", &mut || {
        let r = shortcut.get_or_insert_with(shortcut_runs);
        top_advantage(r)
    });
    report(7, "BCE penalty shrinks margin", &mut || {
        let r = runs.get_or_insert_with(default_corpus_runs);
        bce_margin(r)
    });
    report(8, "hacking separation", &mut || {
        let r = shortcut.get_or_insert_with(shortcut_runs);
        hacking_separation(r)
    });
    report(9, "pairing ablation", &mut pairing_ablation);
    report(10, "agreement oracles", &mut iaa_oracles);
    report(11, "CLI determinism", &mut cli_determinism);

    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
