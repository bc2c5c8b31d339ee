use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Labels, PairRelation, Pairing, PreferencePair, SyntheticSample, Verdict};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairStrategy {
    InPrompt,
    CrossPrompt,
    Hybrid,
}

/// Requested pair counts apply per quality dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub strategy: PairStrategy,
    pub n_win_lose: usize,
    pub n_win_tie: usize,
    /// Fail/fail ties, only meaningful for the three-outcome loss.
    pub n_lose_tie: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            strategy: PairStrategy::CrossPrompt,
            n_win_lose: 3500,
            n_win_tie: 1500,
            n_lose_tie: 0,
            seed: 0,
        }
    }
}

impl PairConfig {
    /// Every available win-lose pair and no ties.
    pub fn exhaustive_wins(strategy: PairStrategy) -> Self {
        PairConfig {
            strategy,
            n_win_lose: usize::MAX,
            n_win_tie: 0,
            n_lose_tie: 0,
            seed: 0,
        }
    }
}

/// `k`-th unordered pair `(a, b)`, `a < b`, in column order.
fn triangular(k: usize) -> (usize, usize) {
    let mut b = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0) as usize;
    while b * (b - 1) / 2 > k {
        b -= 1;
    }
    while (b + 1) * b / 2 <= k {
        b += 1;
    }
    (k - b * (b - 1) / 2, b)
}

fn pick<R: Rng + ?Sized>(rng: &mut R, total: usize, wanted: usize) -> Vec<usize> {
    let mut v = index::sample(rng, total, wanted.min(total)).into_vec();
    v.sort_unstable();
    v
}

type Cand = (usize, usize, PairRelation);

struct Pools<'a> {
    wins: Vec<&'a SyntheticSample>,
    loses: Vec<&'a SyntheticSample>,
}

fn cross_prompt<R: Rng + ?Sized>(p: &Pools, cfg: &PairConfig, rng: &mut R) -> Vec<Cand> {
    let (nw, nl) = (p.wins.len(), p.loses.len());
    let mut out = Vec::new();
    for k in pick(rng, nw * nl, cfg.n_win_lose) {
        out.push((k / nl, k % nl, PairRelation::Win));
    }
    for k in pick(rng, nw * nw.saturating_sub(1) / 2, cfg.n_win_tie) {
        let (a, b) = triangular(k);
        out.push((a, b, PairRelation::Tie));
    }
    // Fail/fail ties are tagged by offsetting into the lose pool.
    for k in pick(rng, nl * nl.saturating_sub(1) / 2, cfg.n_lose_tie) {
        let (a, b) = triangular(k);
        out.push((nw + a, nw + b, PairRelation::Tie));
    }
    out
}

fn in_prompt<R: Rng + ?Sized>(p: &Pools, cfg: &PairConfig, rng: &mut R) -> Vec<Cand> {
    let nw = p.wins.len();
    let mut by_prompt: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, s) in p.wins.iter().enumerate() {
        by_prompt.entry(&s.prompt_id).or_default().0.push(i);
    }
    for (i, s) in p.loses.iter().enumerate() {
        by_prompt.entry(&s.prompt_id).or_default().1.push(i);
    }
    let (mut wl, mut wt, mut lt) = (Vec::new(), Vec::new(), Vec::new());
    for (w, l) in by_prompt.values() {
        for &a in w {
            wl.extend(l.iter().map(|&b| (a, b, PairRelation::Win)));
        }
        for (x, &a) in w.iter().enumerate() {
            wt.extend(w[x + 1..].iter().map(|&b| (a, b, PairRelation::Tie)));
        }
        for (x, &a) in l.iter().enumerate() {
            lt.extend(l[x + 1..].iter().map(|&b| (nw + a, nw + b, PairRelation::Tie)));
        }
    }
    let mut out = Vec::new();
    for (pool, n) in [(wl, cfg.n_win_lose), (wt, cfg.n_win_tie), (lt, cfg.n_lose_tie)] {
        out.extend(pick(rng, pool.len(), n).into_iter().map(|k| pool[k]));
    }
    out
}

/// Sample preference pairs without replacement from consensus labels.
///
/// Win pairs put a pass sample over a fail sample; tie pairs join two pass
/// samples (or two fail samples when `n_lose_tie > 0`). Self-pairs and
/// duplicate unordered ties never occur.
pub fn build_pairs(
    samples: &[&SyntheticSample],
    labels: &Labels,
    cfg: &PairConfig,
) -> Result<Vec<PreferencePair>> {
    let mut dims: BTreeMap<&str, Pools> = BTreeMap::new();
    for s in samples {
        let v = labels
            .get(&s.sample_id)
            .ok_or_else(|| Error::UnknownId(s.sample_id.clone()))?;
        let pools = dims.entry(&s.dimension).or_insert_with(|| Pools {
            wins: vec![],
            loses: vec![],
        });
        match v {
            Verdict::Pass => pools.wins.push(s),
            Verdict::Fail => pools.loses.push(s),
        }
    }
    let mut out = Vec::new();
    for (dim, p) in &dims {
        if cfg.n_win_lose > 0 && (p.wins.is_empty() || p.loses.is_empty()) {
            return Err(Error::InsufficientLabels(format!(
                "`{dim}` has {} pass and {} fail samples; win pairs need both",
                p.wins.len(),
                p.loses.len()
            )));
        }
        if cfg.n_win_tie > 0 && p.wins.len() < 2 {
            return Err(Error::InsufficientLabels(format!(
                "`{dim}` has {} pass samples; ties need two",
                p.wins.len()
            )));
        }
        if cfg.n_lose_tie > 0 && p.loses.len() < 2 {
            return Err(Error::InsufficientLabels(format!(
                "`{dim}` has {} fail samples; fail ties need two",
                p.loses.len()
            )));
        }
        let mut rng_in = seed::derived_rng(cfg.seed, &format!("pairs/{dim}/in_prompt"));
        let mut rng_cross = seed::derived_rng(cfg.seed, &format!("pairs/{dim}/cross_prompt"));
        let tagged: Vec<(Cand, Pairing)> = match cfg.strategy {
            PairStrategy::InPrompt => in_prompt(p, cfg, &mut rng_in)
                .into_iter()
                .map(|c| (c, Pairing::InPrompt))
                .collect(),
            PairStrategy::CrossPrompt => cross_prompt(p, cfg, &mut rng_cross)
                .into_iter()
                .map(|c| (c, Pairing::CrossPrompt))
                .collect(),
            PairStrategy::Hybrid => {
                let mut seen = HashSet::new();
                let mut v = Vec::new();
                let inp = in_prompt(p, cfg, &mut rng_in).into_iter().map(|c| (c, Pairing::InPrompt));
                let cross = cross_prompt(p, cfg, &mut rng_cross)
                    .into_iter()
                    .map(|c| (c, Pairing::CrossPrompt));
                for (c, tag) in inp.chain(cross) {
                    let key = match c.2 {
                        PairRelation::Win => (c.0, p.wins.len() + c.1),
                        PairRelation::Tie => (c.0, c.1),
                    };
                    if seen.insert(key) {
                        v.push((c, tag));
                    }
                }
                v
            }
        };
        let nw = p.wins.len();
        let member = |x: usize| if x < nw { p.wins[x] } else { p.loses[x - nw] };
        for ((a, b, rel), tag) in tagged {
            let (i, j) = match rel {
                PairRelation::Win => (p.wins[a], p.loses[b]),
                PairRelation::Tie => (member(a), member(b)),
            };
            out.push(PreferencePair::new(&i.sample_id, &j.sample_id, rel, tag));
        }
    }
    Ok(out)
}

/// Verify label, prompt and dimension invariants of every pair.
pub fn check_pairs(
    pairs: &[PreferencePair],
    samples: &[SyntheticSample],
    labels: &Labels,
    allow_lose_tie: bool,
) -> Result<()> {
    let by_id: HashMap<&str, &SyntheticSample> =
        samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let get = |id: &str| -> Result<(&SyntheticSample, Verdict)> {
        let s = by_id.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let v = labels.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        Ok((s, *v))
    };
    for (n, p) in pairs.iter().enumerate() {
        let (si, vi) = get(&p.id_i)?;
        let (sj, vj) = get(&p.id_j)?;
        let bad = |why: &str| Err(Error::Invalid(format!("pair {n} ({}, {}): {why}", p.id_i, p.id_j)));
        if p.id_i == p.id_j {
            return bad("self-pair");
        }
        if si.dimension != sj.dimension {
            return bad("dimensions differ");
        }
        match p.relation {
            PairRelation::Win if !(vi.is_pass() && !vj.is_pass()) => {
                return bad("win pair is not pass over fail")
            }
            PairRelation::Tie if !(vi == vj && (vi.is_pass() || allow_lose_tie)) => {
                return bad("tie members do not share a pass label")
            }
            _ => {}
        }
        if p.pairing == Pairing::InPrompt && si.prompt_id != sj.prompt_id {
            return bad("in-prompt pair spans prompts");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{generate_corpus, CorpusConfig, Split};
    use proptest::prelude::*;

    fn sample(id: &str, prompt: &str) -> SyntheticSample {
        SyntheticSample {
            sample_id: id.into(),
            prompt_id: prompt.into(),
            dimension: "quality".into(),
            latent_quality: 0.0,
            shortcut: false,
            features: vec![],
            split: Split::Train,
            extra: Default::default(),
        }
    }

    fn labels(spec: &[(&str, Verdict)]) -> Labels {
        spec.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn keys(p: &[PreferencePair]) -> Vec<(String, String, PairRelation)> {
        let mut v: Vec<_> = p
            .iter()
            .map(|p| (p.id_i.clone(), p.id_j.clone(), p.relation))
            .collect();
        v.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        v
    }

    #[test]
    fn triangular_decoding_enumerates_all_pairs() {
        let mut k = 0;
        for b in 1..40 {
            for a in 0..b {
                assert_eq!(triangular(k), (a, b));
                k += 1;
            }
        }
    }

    #[test]
    fn single_win_lose_pair() {
        let s = [sample("a", "p0"), sample("b", "p1")];
        let refs: Vec<&SyntheticSample> = s.iter().collect();
        let l = labels(&[("a", Verdict::Pass), ("b", Verdict::Fail)]);
        let cfg = PairConfig {
            n_win_lose: 1,
            n_win_tie: 0,
            ..Default::default()
        };
        let p = build_pairs(&refs, &l, &cfg).unwrap();
        assert_eq!(keys(&p), vec![("a".into(), "b".into(), PairRelation::Win)]);
    }

    #[test]
    fn exhaustive_index_set() {
        let s = [sample("w1", "p0"), sample("w2", "p1"), sample("l", "p2")];
        let refs: Vec<&SyntheticSample> = s.iter().collect();
        let l = labels(&[("w1", Verdict::Pass), ("w2", Verdict::Pass), ("l", Verdict::Fail)]);
        let cfg = PairConfig {
            n_win_lose: 100,
            n_win_tie: 100,
            ..Default::default()
        };
        let p = build_pairs(&refs, &l, &cfg).unwrap();
        assert_eq!(
            keys(&p),
            vec![
                ("w1".into(), "l".into(), PairRelation::Win),
                ("w1".into(), "w2".into(), PairRelation::Tie),
                ("w2".into(), "l".into(), PairRelation::Win),
            ]
        );
    }

    #[test]
    fn single_sample_prompts_only_feed_cross_prompt() {
        let s = [sample("a", "p0"), sample("b", "p1"), sample("c", "p2"), sample("d", "p2")];
        let refs: Vec<&SyntheticSample> = s.iter().collect();
        let l = labels(&[
            ("a", Verdict::Pass),
            ("b", Verdict::Fail),
            ("c", Verdict::Pass),
            ("d", Verdict::Fail),
        ]);
        let mut cfg = PairConfig {
            strategy: PairStrategy::InPrompt,
            n_win_lose: 100,
            n_win_tie: 0,
            ..Default::default()
        };
        let inp = build_pairs(&refs, &l, &cfg).unwrap();
        assert_eq!(keys(&inp), vec![("c".into(), "d".into(), PairRelation::Win)]);
        cfg.strategy = PairStrategy::CrossPrompt;
        let cross = build_pairs(&refs, &l, &cfg).unwrap();
        assert_eq!(cross.len(), 4);
        assert!(cross.iter().any(|p| p.id_i == "a" || p.id_j == "b"));
    }

    #[test]
    fn insufficient_labels() {
        let s = [sample("a", "p0"), sample("b", "p0")];
        let refs: Vec<&SyntheticSample> = s.iter().collect();
        let l = labels(&[("a", Verdict::Pass), ("b", Verdict::Pass)]);
        let wl = PairConfig {
            n_win_tie: 0,
            ..Default::default()
        };
        assert!(matches!(build_pairs(&refs, &l, &wl), Err(Error::InsufficientLabels(_))));
        let l = labels(&[("a", Verdict::Pass), ("b", Verdict::Fail)]);
        let wt = PairConfig {
            n_win_lose: 0,
            ..Default::default()
        };
        assert!(matches!(build_pairs(&refs, &l, &wt), Err(Error::InsufficientLabels(_))));
    }

    #[test]
    fn lose_ties_only_when_requested() {
        let c = generate_corpus(&CorpusConfig {
            prompts: 20,
            ..Default::default()
        })
        .unwrap();
        let refs: Vec<&SyntheticSample> = c.samples.iter().collect();
        let base = PairConfig {
            n_win_lose: 50,
            n_win_tie: 20,
            ..Default::default()
        };
        let p = build_pairs(&refs, &c.labels, &base).unwrap();
        check_pairs(&p, &c.samples, &c.labels, false).unwrap();
        let btt = PairConfig {
            n_lose_tie: 20,
            ..base
        };
        let p = build_pairs(&refs, &c.labels, &btt).unwrap();
        assert_eq!(p.len(), 90);
        assert!(check_pairs(&p, &c.samples, &c.labels, false).is_err());
        check_pairs(&p, &c.samples, &c.labels, true).unwrap();
    }

    #[test]
    fn hybrid_is_deduplicated_union() {
        let c = generate_corpus(&CorpusConfig {
            prompts: 10,
            ..Default::default()
        })
        .unwrap();
        let refs: Vec<&SyntheticSample> = c.samples.iter().collect();
        let mk = |strategy| PairConfig {
            strategy,
            n_win_lose: 200,
            n_win_tie: 80,
            ..Default::default()
        };
        let inp = build_pairs(&refs, &c.labels, &mk(PairStrategy::InPrompt)).unwrap();
        let cross = build_pairs(&refs, &c.labels, &mk(PairStrategy::CrossPrompt)).unwrap();
        let hyb = build_pairs(&refs, &c.labels, &mk(PairStrategy::Hybrid)).unwrap();
        let unordered = |p: &PreferencePair| {
            let mut k = [p.id_i.clone(), p.id_j.clone()];
            k.sort();
            k
        };
        let mut union: HashSet<[String; 2]> = inp.iter().map(unordered).collect();
        union.extend(cross.iter().map(unordered));
        let h: HashSet<[String; 2]> = hyb.iter().map(unordered).collect();
        assert_eq!(h.len(), hyb.len());
        assert_eq!(h, union);
        check_pairs(&hyb, &c.samples, &c.labels, false).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pair_invariants_hold(
            seed_ in 0u64..1000,
            prompts in 2usize..15,
            wl in 0usize..300,
            wt in 0usize..200,
            strategy in prop_oneof![
                Just(PairStrategy::InPrompt),
                Just(PairStrategy::CrossPrompt),
                Just(PairStrategy::Hybrid)
            ],
        ) {
            let c = generate_corpus(&CorpusConfig {
                prompts,
                samples_per_prompt: 4,
                single_sample_fraction: 0.3,
                seed: seed_,
                ..Default::default()
            }).unwrap();
            let refs: Vec<&SyntheticSample> = c.samples.iter().collect();
            let nw = c.labels.values().filter(|v| v.is_pass()).count();
            let nl = c.labels.len() - nw;
            prop_assume!(nw >= 2 && nl >= 1);
            let cfg = PairConfig { strategy, n_win_lose: wl, n_win_tie: wt, n_lose_tie: 0, seed: seed_ };
            let p = build_pairs(&refs, &c.labels, &cfg).unwrap();
            check_pairs(&p, &c.samples, &c.labels, false).unwrap();
            prop_assert!(p.len() <= nw * nl + nw * (nw - 1) / 2);
            if strategy != PairStrategy::Hybrid {
                prop_assert!(p.iter().filter(|p| p.relation == PairRelation::Win).count() <= wl);
            }
            let again = build_pairs(&refs, &c.labels, &cfg).unwrap();
            prop_assert_eq!(p, again);
        }
    }
}
