//! Reference-based text metrics. All of them tokenize with the shared
//! [`crate::text::tokenize`] rules and return values in `[0, 1]`.

use std::collections::HashMap;

use crate::text::{normalize_answer, tokenize};

/// Token-multiset F1 between a candidate and a reference. Both empty counts
/// as a perfect match; exactly one empty scores zero.
pub fn token_f1(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return if cand.is_empty() && refr.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &refr {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0i64;
    for t in &cand {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / cand.len() as f64;
    let recall = overlap as f64 / refr.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Normalized string equality: case-folded, punctuation-stripped token join.
pub fn exact_match(candidate: &str, reference: &str) -> bool {
    normalize_answer(candidate) == normalize_answer(reference)
}

/// ROUGE-L F-measure: LCS-based precision/recall over tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return if cand.is_empty() && refr.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let lcs = lcs_len(&cand, &refr);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / cand.len() as f64;
    let recall = lcs as f64 / refr.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Unigram METEOR with exact matching: harmonic mean weighted 9:1 toward
/// recall, discounted by a fragmentation penalty of `0.5 * (chunks/m)^3`.
/// Candidate tokens match greedily against the earliest unmatched reference
/// occurrence; a chunk extends while both sides stay adjacent.
pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return if cand.is_empty() && refr.is_empty() {
            1.0
        } else {
            0.0
        };
    }

    let mut taken = vec![false; refr.len()];
    // alignment[i] = reference position candidate token i matched, if any
    let alignment: Vec<Option<usize>> = cand
        .iter()
        .map(|token| {
            let slot = (0..refr.len()).find(|&j| !taken[j] && refr[j] == *token);
            if let Some(j) = slot {
                taken[j] = true;
            }
            slot
        })
        .collect();

    let m = alignment.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }

    let mut chunks = 0usize;
    let mut prev: Option<usize> = None;
    for slot in &alignment {
        match (prev, slot) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            (_, None) => {}
        }
        prev = *slot;
    }

    let m = m as f64;
    let precision = m / cand.len() as f64;
    let recall = m / refr.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}
