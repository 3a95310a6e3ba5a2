//! Thresholding and micro-averaged precision/recall/F1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::model::TanModel;
use crate::numerics::{Scalar, Tape, TensorError};

#[derive(Debug)]
pub enum EvalError {
    LengthMismatch { gold: usize, pred: usize },
    /// Gold categories outside the model's inventory.
    InventoryMismatch { unknown: Vec<String> },
    Tensor(TensorError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::LengthMismatch { gold, pred } => {
                write!(f, "{gold} gold sets vs {pred} predictions")
            }
            EvalError::InventoryMismatch { unknown } => {
                write!(f, "categories not in the model inventory: {unknown:?}")
            }
            EvalError::Tensor(e) => write!(f, "forward pass failed: {e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Tensor(e)
    }
}

/// Categories whose probability strictly surpasses the threshold. The
/// empty set is a legitimate outcome; `argmax_fallback` instead forces
/// the single most probable category.
pub fn assign_categories<T: Scalar>(
    probabilities: &[T],
    threshold: f64,
    argmax_fallback: bool,
) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = probabilities
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| (p.as_f64() > threshold).then_some(i))
        .collect();
    if set.is_empty() && argmax_fallback && !probabilities.is_empty() {
        let argmax = probabilities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.as_f64().total_cmp(&b.1.as_f64()))
            .map(|(i, _)| i)
            .expect("nonempty");
        set.insert(argmax);
    }
    set
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    /// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R), each 0 when its
    /// denominator is 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { p, r, f1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Micro and per-category scores at one decision threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro: Prf,
    pub per_category: BTreeMap<String, CategoryMetrics>,
    pub threshold: f64,
    pub n_sentences: usize,
}

/// TP/FP/FN pooled over all (sentence, category) decisions.
pub fn micro_prf(
    gold: &[BTreeSet<usize>],
    pred: &[BTreeSet<usize>],
) -> Result<(f64, f64, f64), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (g, p) in gold.iter().zip(pred) {
        tp += p.intersection(g).count() as u64;
        fp += p.difference(g).count() as u64;
        fn_ += g.difference(p).count() as u64;
    }
    let prf = Prf::from_counts(tp, fp, fn_);
    Ok((prf.p, prf.r, prf.f1))
}

fn report_from_sets(
    names: &[String],
    gold: &[BTreeSet<usize>],
    pred: &[BTreeSet<usize>],
    threshold: f64,
) -> MetricsReport {
    let c = names.len();
    let mut tp = vec![0u64; c];
    let mut fp = vec![0u64; c];
    let mut fn_ = vec![0u64; c];
    for (g, p) in gold.iter().zip(pred) {
        for i in 0..c {
            match (g.contains(&i), p.contains(&i)) {
                (true, true) => tp[i] += 1,
                (false, true) => fp[i] += 1,
                (true, false) => fn_[i] += 1,
                (false, false) => {}
            }
        }
    }
    let micro = Prf::from_counts(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let per_category = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let prf = Prf::from_counts(tp[i], fp[i], fn_[i]);
            (
                name.clone(),
                CategoryMetrics {
                    p: prf.p,
                    r: prf.r,
                    f1: prf.f1,
                    tp: tp[i],
                    fp: fp[i],
                    fn_: fn_[i],
                },
            )
        })
        .collect();
    MetricsReport {
        micro,
        per_category,
        threshold,
        n_sentences: gold.len(),
    }
}

/// Forward probabilities for a batch of sentences with one shared
/// parameter snapshot; dropout off.
pub fn predict_probabilities<T: Scalar>(
    model: &TanModel<T>,
    sentences: &[Sentence],
) -> Result<Vec<Vec<T>>, TensorError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    sentences
        .iter()
        .map(|s| {
            let out = crate::model::forward_sentence(
                &mut tape,
                model,
                &bound,
                &s.token_ids,
                s.token_ids.len(),
                None,
            )?;
            Ok(tape.value(out.probs).data().to_vec())
        })
        .collect()
}

/// Runs every sentence through the model, assigns categories at the
/// threshold, and aggregates counts. Deterministic.
pub fn evaluate<T: Scalar>(
    model: &TanModel<T>,
    sentences: &[Sentence],
    threshold: f64,
    argmax_fallback: bool,
) -> Result<MetricsReport, EvalError> {
    let probs = predict_probabilities(model, sentences)?;
    let gold: Vec<BTreeSet<usize>> = sentences.iter().map(|s| s.gold_indices()).collect();
    let pred: Vec<BTreeSet<usize>> = probs
        .iter()
        .map(|p| assign_categories(p, threshold, argmax_fallback))
        .collect();
    Ok(report_from_sets(
        model.inventory.names(),
        &gold,
        &pred,
        threshold,
    ))
}

/// Grid sweep (default step 0.05) maximizing micro-F1; ties keep the
/// lowest threshold. The sweep must only ever see validation data — the
/// chosen threshold is then fixed for test evaluation.
pub fn sweep_threshold<T: Scalar>(
    model: &TanModel<T>,
    sentences: &[Sentence],
    step: f64,
) -> Result<(f64, f64), EvalError> {
    assert!(step > 0.0 && step < 1.0);
    let probs = predict_probabilities(model, sentences)?;
    let gold: Vec<BTreeSet<usize>> = sentences.iter().map(|s| s.gold_indices()).collect();
    let mut best = (step, f64::NEG_INFINITY);
    let mut t = step;
    while t < 1.0 {
        let pred: Vec<BTreeSet<usize>> = probs
            .iter()
            .map(|p| assign_categories(p, t, false))
            .collect();
        let (_, _, f1) = micro_prf(&gold, &pred)?;
        if f1 > best.1 {
            best = (t, f1);
        }
        t += step;
    }
    Ok(best)
}
