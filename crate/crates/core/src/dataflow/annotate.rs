use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{AnnotationRecord, Labels, SyntheticSample, Verdict};
use crate::{Error, Result};

fn threshold_of(thresholds: &BTreeMap<String, f64>, dim: &str) -> Result<f64> {
    thresholds
        .get(dim)
        .copied()
        .ok_or_else(|| Error::config("corpus.dimensions", format!("no threshold for `{dim}`")))
}

/// Each of `k` annotators judges `q + N(0, noise²) >= threshold` per sample.
pub fn simulate_annotators<R: Rng + ?Sized>(
    samples: &[SyntheticSample],
    k: usize,
    noise: f64,
    thresholds: &BTreeMap<String, f64>,
    rng: &mut R,
) -> Result<Vec<AnnotationRecord>> {
    if k == 0 {
        return Err(Error::Invalid("annotator count must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(samples.len() * k);
    for s in samples {
        let tau = threshold_of(thresholds, &s.dimension)?;
        for a in 0..k {
            let e: f64 = rng.sample(StandardNormal);
            out.push(AnnotationRecord {
                sample_id: s.sample_id.clone(),
                annotator_id: format!("a{a}"),
                dimension: s.dimension.clone(),
                verdict: Verdict::from_pass(s.latent_quality + noise * e >= tau),
                extra: Default::default(),
            });
        }
    }
    Ok(out)
}

/// Strict majority of three or more verdicts; otherwise the noise-free
/// threshold label.
pub fn consensus(
    samples: &[SyntheticSample],
    annotations: &[AnnotationRecord],
    thresholds: &BTreeMap<String, f64>,
) -> Result<Labels> {
    let mut votes: HashMap<&str, (usize, usize)> = samples
        .iter()
        .map(|s| (s.sample_id.as_str(), (0, 0)))
        .collect();
    for a in annotations {
        let v = votes
            .get_mut(a.sample_id.as_str())
            .ok_or_else(|| Error::UnknownId(a.sample_id.clone()))?;
        match a.verdict {
            Verdict::Pass => v.0 += 1,
            Verdict::Fail => v.1 += 1,
        }
    }
    let mut labels = Labels::new();
    for s in samples {
        let (pass, fail) = votes[s.sample_id.as_str()];
        let verdict = if pass + fail >= 3 && pass != fail {
            Verdict::from_pass(pass > fail)
        } else {
            Verdict::from_pass(s.latent_quality >= threshold_of(thresholds, &s.dimension)?)
        };
        labels.insert(s.sample_id.clone(), verdict);
    }
    Ok(labels)
}
