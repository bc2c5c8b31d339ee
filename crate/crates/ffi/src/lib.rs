//! C ABI over `rmlab`.
//!
//! Every function returns an [`RmlabStatus`]; results travel through out
//! pointers. On failure the message is available from
//! [`rmlab_last_error`] on the same thread. Handles are opaque and must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rmlab::dataflow::{generate_corpus, write_jsonl, Corpus, CorpusConfig, PairRelation, Split, SyntheticSample};
use rmlab::heads::{RewardModel, Scorer};
use rmlab::losses::{bce_penalty, bt_grad, bt_wt_loss, btt_loss, BttOutcome};
use rmlab::metrics::{fleiss_kappa, group_advantage, iaa_report, krippendorff_alpha, raw_agreement, Coefficient};
use rmlab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    Io = 6,
    /// The statistic is undefined for this input; the out value is NaN.
    Degenerate = 7,
    Panic = 8,
}

/// A loaded reward model.
pub struct RmlabModel(RewardModel);

/// A generated corpus with consensus labels.
pub struct RmlabCorpus(Corpus);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> RmlabStatus {
    match err {
        _ if err.is_numeric() => RmlabStatus::Numeric,
        Error::Config { .. } => RmlabStatus::Config,
        Error::Invalid(_) | Error::Shape(_) => RmlabStatus::InvalidArgument,
        Error::Io { .. } => RmlabStatus::Io,
        Error::Degenerate(_) => RmlabStatus::Degenerate,
        _ => RmlabStatus::Data,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> RmlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RmlabStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            RmlabStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(&msg);
            RmlabStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            RmlabStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rmlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn rmlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// `-log σ(r_win - r_lose - margin)`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmlab_bt_loss(r_win: f64, r_lose: f64, margin: f64, out: *mut f64) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        *o = bt_grad(r_win, r_lose, margin)?.loss;
        Ok(())
    })
}

/// Win-tie loss; `tie` selects the tie branch.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmlab_bt_wt_loss(r_i: f64, r_j: f64, tie: bool, out: *mut f64) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let rel = if tie { PairRelation::Tie } else { PairRelation::Win };
        *o = bt_wt_loss(r_i, r_j, rel)?;
        Ok(())
    })
}

/// Three-outcome loss; `outcome` is 0 (i wins), 1 (j wins) or 2 (tie).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmlab_btt_loss(
    r_i: f64,
    r_j: f64,
    outcome: u32,
    theta: f64,
    out: *mut f64,
) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let oc = match outcome {
            0 => BttOutcome::IWin,
            1 => BttOutcome::JWin,
            2 => BttOutcome::Tie,
            k => return Err(Failure::Arg(format!("outcome {k} is not 0, 1 or 2"))),
        };
        *o = btt_loss(r_i, r_j, oc, theta)?;
        Ok(())
    })
}

/// Cross-entropy of `σ(r)` against a pass/fail label.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmlab_bce_penalty(r: f64, pass: bool, out: *mut f64) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        *o = bce_penalty(r, pass)?;
        Ok(())
    })
}

/// Standardize `n` rewards into `out` (also length `n`).
///
/// # Safety
/// `rewards` must be readable and `out` writable for `n` values.
#[no_mangle]
pub unsafe extern "C" fn rmlab_group_advantage(
    rewards: *const f64,
    n: usize,
    epsilon: f64,
    out: *mut f64,
) -> RmlabStatus {
    guard(|| {
        let r = slice(rewards, n, "rewards")?;
        let o = slice_mut(out, n, "out")?;
        o.copy_from_slice(&group_advantage(r, epsilon)?);
        Ok(())
    })
}

fn coefficient(c: Coefficient, out: &mut f64) -> Result<(), Failure> {
    match c {
        Coefficient::Value(v) => {
            *out = v;
            Ok(())
        }
        Coefficient::Degenerate(why) => {
            *out = f64::NAN;
            Err(Failure::Lib(Error::Degenerate(why)))
        }
    }
}

/// Fleiss' kappa from a row-major `items × categories` count matrix.
///
/// # Safety
/// `counts` must hold `items * categories` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmlab_fleiss_kappa(
    counts: *const u32,
    items: usize,
    categories: usize,
    out: *mut f64,
) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let n = items
            .checked_mul(categories)
            .ok_or_else(|| Failure::Arg("matrix size overflows".into()))?;
        let c = slice(counts, n, "counts")?;
        let rows: Vec<Vec<usize>> = if categories == 0 {
            vec![Vec::new(); items]
        } else {
            c.chunks(categories)
                .map(|r| r.iter().map(|&x| x as usize).collect())
                .collect()
        };
        coefficient(fleiss_kappa(&rows)?, o)
    })
}

unsafe fn ratings(p: *const i32, annotators: usize, items: usize) -> Result<Vec<Vec<Option<usize>>>, Failure> {
    let n = annotators
        .checked_mul(items)
        .ok_or_else(|| Failure::Arg("matrix size overflows".into()))?;
    let r = slice(p, n, "ratings")?;
    if items == 0 {
        return Ok(vec![Vec::new(); annotators]);
    }
    Ok(r.chunks(items)
        .map(|row| row.iter().map(|&v| usize::try_from(v).ok()).collect())
        .collect())
}

/// Nominal Krippendorff's alpha from a row-major `annotators × items` matrix;
/// negative entries are missing.
///
/// # Safety
/// `ratings` must hold `annotators * items` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmlab_krippendorff_alpha(
    ratings: *const i32,
    annotators: usize,
    items: usize,
    out: *mut f64,
) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let m = self::ratings(ratings, annotators, items)?;
        coefficient(krippendorff_alpha(&m)?, o)
    })
}

/// Mean share of agreeing rater pairs; same layout as the alpha input.
///
/// # Safety
/// `ratings` must hold `annotators * items` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmlab_raw_agreement(
    ratings: *const i32,
    annotators: usize,
    items: usize,
    out: *mut f64,
) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        *o = raw_agreement(&self::ratings(ratings, annotators, items)?)?;
        Ok(())
    })
}

/// Load a checkpoint written by `rmlab train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmlab_model_load(path: *const c_char, out: *mut *mut RmlabModel) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let p = text(path, "path")?;
        let model = RewardModel::load(Path::new(p))?;
        *o = Box::into_raw(Box::new(RmlabModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`rmlab_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmlab_model_free(model: *mut RmlabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Score `n` samples given as a row-major `n × feature_len` matrix plus one
/// shortcut flag each.
///
/// # Safety
/// Buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn rmlab_model_score(
    model: *const RmlabModel,
    features: *const f64,
    n: usize,
    feature_len: usize,
    shortcut: *const bool,
    out: *mut f64,
) -> RmlabStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let total = n
            .checked_mul(feature_len)
            .ok_or_else(|| Failure::Arg("matrix size overflows".into()))?;
        let f = slice(features, total, "features")?;
        let b = slice(shortcut, n, "shortcut")?;
        let o = slice_mut(out, n, "out")?;
        let samples: Vec<SyntheticSample> = (0..n)
            .map(|k| SyntheticSample {
                sample_id: k.to_string(),
                prompt_id: String::new(),
                dimension: String::new(),
                latent_quality: 0.0,
                shortcut: b[k],
                features: if feature_len == 0 {
                    Vec::new()
                } else {
                    f[k * feature_len..(k + 1) * feature_len].to_vec()
                },
                split: Split::OodEval,
                extra: Default::default(),
            })
            .collect();
        let refs: Vec<&SyntheticSample> = samples.iter().collect();
        o.copy_from_slice(&m.0.score(&refs)?);
        Ok(())
    })
}

/// Generate a corpus from a JSON configuration; an empty string uses the
/// defaults.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmlab_corpus_generate(
    config_json: *const c_char,
    out: *mut *mut RmlabCorpus,
) -> RmlabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let t = text(config_json, "config_json")?;
        let cfg: CorpusConfig = if t.trim().is_empty() {
            CorpusConfig::default()
        } else {
            serde_json::from_str(t).map_err(|e| Error::Config {
                field: "corpus".into(),
                msg: e.to_string(),
            })?
        };
        *o = Box::into_raw(Box::new(RmlabCorpus(generate_corpus(&cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from [`rmlab_corpus_generate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmlab_corpus_free(corpus: *mut RmlabCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of samples and of consensus passes.
///
/// # Safety
/// `corpus` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmlab_corpus_counts(
    corpus: *const RmlabCorpus,
    samples: *mut usize,
    passes: *mut usize,
) -> RmlabStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or(Failure::Null("corpus"))?;
        *self::out(samples, "samples")? = c.0.samples.len();
        *self::out(passes, "passes")? = c.0.labels.values().filter(|v| v.is_pass()).count();
        Ok(())
    })
}

/// Agreement of the simulated annotation panel.
///
/// # Safety
/// `corpus` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmlab_corpus_iaa(
    corpus: *const RmlabCorpus,
    alpha: *mut f64,
    kappa: *mut f64,
    agreement: *mut f64,
) -> RmlabStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or(Failure::Null("corpus"))?;
        let (a, k, g) = (
            self::out(alpha, "alpha")?,
            self::out(kappa, "kappa")?,
            self::out(agreement, "agreement")?,
        );
        let r = iaa_report(&c.0.annotations)?;
        *g = r.raw_agreement;
        *a = r.krippendorff_alpha.value().unwrap_or(f64::NAN);
        *k = r.fleiss_kappa.value().unwrap_or(f64::NAN);
        if a.is_nan() || k.is_nan() {
            return Err(Failure::Lib(Error::Degenerate("agreement is undefined".into())));
        }
        Ok(())
    })
}

/// Write `samples.jsonl` and `annotations.jsonl` into `dir`.
///
/// # Safety
/// `corpus` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rmlab_corpus_write(corpus: *const RmlabCorpus, dir: *const c_char) -> RmlabStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or(Failure::Null("corpus"))?;
        let d = Path::new(text(dir, "dir")?);
        write_jsonl(&d.join("samples.jsonl"), &c.0.samples)?;
        write_jsonl(&d.join("annotations.jsonl"), &c.0.annotations)?;
        Ok(())
    })
}

/// Score every sample of a corpus, in corpus order, into `out` of length `n`.
///
/// # Safety
/// Handles must be live; `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn rmlab_model_score_corpus(
    model: *const RmlabModel,
    corpus: *const RmlabCorpus,
    out: *mut f64,
    n: usize,
) -> RmlabStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let c = corpus.as_ref().ok_or(Failure::Null("corpus"))?;
        if n != c.0.samples.len() {
            return Err(Failure::Arg(format!(
                "buffer holds {n} values, corpus has {} samples",
                c.0.samples.len()
            )));
        }
        let o = slice_mut(out, n, "out")?;
        let refs: Vec<&SyntheticSample> = c.0.samples.iter().collect();
        o.copy_from_slice(&m.0.score(&refs)?);
        Ok(())
    })
}
