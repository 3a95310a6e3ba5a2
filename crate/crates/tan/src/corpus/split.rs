//! Unlabeled-sentence filtering and greedy iterative stratification.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawSentence;

/// Drops sentences with an empty category set. Applied to training and
/// validation data only; test sets keep their unlabeled sentences.
pub fn filter_unlabeled(sentences: Vec<RawSentence>) -> Vec<RawSentence> {
    let before = sentences.len();
    let kept: Vec<RawSentence> = sentences
        .into_iter()
        .filter(|s| !s.categories.is_empty())
        .collect();
    if kept.is_empty() {
        log::warn!("all {before} sentences are unlabeled; nothing left to train on");
    } else if kept.len() < before {
        log::info!("discarded {} unlabeled sentences", before - kept.len());
    }
    kept
}

/// Greedy iterative stratification over the multi-label structure.
///
/// Per category, about `ratio` of its positive sentences land in the
/// validation split. Repeatedly takes the category with the fewest
/// unassigned positives and routes its sentences to the side with the
/// larger remaining demand for that category; ties fall back to overall
/// remaining capacity and then to a seeded coin. Categories with fewer
/// than two positives stay entirely in train.
pub fn stratified_split(
    sentences: Vec<RawSentence>,
    ratio: f64,
    seed: u64,
) -> (Vec<RawSentence>, Vec<RawSentence>) {
    assert!(
        ratio > 0.0 && ratio < 1.0,
        "validation ratio must be in (0, 1)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sentences.len();

    let mut positives: HashMap<&str, usize> = HashMap::new();
    for s in &sentences {
        for c in &s.categories {
            *positives.entry(c.as_str()).or_default() += 1;
        }
    }

    // Remaining demand per (side, category); side 0 = train, side 1 = val.
    let mut demand: [HashMap<String, f64>; 2] = [HashMap::new(), HashMap::new()];
    for (&cat, &count) in &positives {
        let val = if count < 2 {
            log::warn!("category {cat} has {count} positive sentence(s); keeping all in train");
            0.0
        } else {
            (ratio * count as f64).round()
        };
        demand[1].insert(cat.to_string(), val);
        demand[0].insert(cat.to_string(), count as f64 - val);
    }
    let mut capacity = [
        (1.0 - ratio) * n as f64,
        ratio * n as f64,
    ];

    let mut assigned: Vec<Option<usize>> = vec![None; n];
    loop {
        // The category with the fewest remaining unassigned positives.
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (i, s) in sentences.iter().enumerate() {
            if assigned[i].is_none() {
                for c in &s.categories {
                    *counts.entry(c.as_str()).or_default() += 1;
                }
            }
        }
        let Some((&cat, _)) = counts
            .iter()
            .min_by_key(|(&cat, &count)| (count, cat))
        else {
            break;
        };
        let cat = cat.to_string();

        for (i, s) in sentences.iter().enumerate() {
            if assigned[i].is_some() || !s.categories.contains(&cat) {
                continue;
            }
            let d_train = demand[0][&cat];
            let d_val = demand[1][&cat];
            let side = if d_train > d_val {
                0
            } else if d_val > d_train {
                1
            } else if capacity[0] > capacity[1] {
                0
            } else if capacity[1] > capacity[0] {
                1
            } else if rng.gen_bool(0.5) {
                0
            } else {
                1
            };
            assigned[i] = Some(side);
            capacity[side] -= 1.0;
            for c in &s.categories {
                *demand[side].get_mut(c.as_str()).expect("category known") -= 1.0;
            }
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    for (s, side) in sentences.into_iter().zip(assigned) {
        // A sentence without labels has no stratification signal.
        match side.unwrap_or(0) {
            0 => train.push(s),
            _ => val.push(s),
        }
    }
    (train, val)
}
