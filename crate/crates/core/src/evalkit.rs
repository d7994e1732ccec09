//! Transcript evaluation against manually transcribed ground truth.
//!
//! Similarity between two strings is `2·M / (|a| + |b|)` where `M` is the
//! length of their longest common subsequence, counted in Unicode scalar
//! values. A ground-truth line counts as recovered when it is paired with an
//! OCR line whose similarity reaches `tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.8;

/// Length of the longest common subsequence of `a` and `b`.
pub fn lcs_len(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    lcs_len_chars(&a, &b)
}

pub(crate) fn lcs_len_chars(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character-level similarity in `[0, 1]`.
///
/// Two empty strings are identical (1.0); one empty string against a
/// non-empty one scores 0.
pub fn sim(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    sim_chars(&a, &b)
}

pub(crate) fn sim_chars(a: &[char], b: &[char]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => 2.0 * lcs_len_chars(a, b) as f64 / (a.len() + b.len()) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePair {
    pub gt: String,
    pub ocr: Option<String>,
    pub sim: f64,
    pub matched: bool,
}

/// Greedy best-first one-to-one pairing of ground-truth and OCR lines.
///
/// All `(gt, ocr)` pairs reaching `tau` are visited in order of decreasing
/// similarity (ties by gt index, then ocr index) and accepted while both
/// sides are still free. The result has one entry per ground-truth line, in
/// ground-truth order.
pub fn align(gt_lines: &[String], ocr_lines: &[String], tau: f64) -> Vec<LinePair> {
    let gt: Vec<Vec<char>> = gt_lines.iter().map(|s| s.chars().collect()).collect();
    let ocr: Vec<Vec<char>> = ocr_lines.iter().map(|s| s.chars().collect()).collect();

    let mut candidates = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        for (j, o) in ocr.iter().enumerate() {
            let s = sim_chars(g, o);
            if s >= tau {
                candidates.push((s, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });

    let mut gt_pair: Vec<Option<(usize, f64)>> = vec![None; gt.len()];
    let mut ocr_used = vec![false; ocr.len()];
    let mut remaining = gt.len().min(ocr.len());
    for (s, i, j) in candidates {
        if remaining == 0 {
            break;
        }
        if gt_pair[i].is_none() && !ocr_used[j] {
            gt_pair[i] = Some((j, s));
            ocr_used[j] = true;
            remaining -= 1;
        }
    }

    gt_lines
        .iter()
        .zip(gt_pair)
        .map(|(g, p)| match p {
            Some((j, s)) => LinePair {
                gt: g.clone(),
                ocr: Some(ocr_lines[j].clone()),
                sim: s,
                matched: true,
            },
            None => LinePair {
                gt: g.clone(),
                ocr: None,
                sim: 0.0,
                matched: false,
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_gt: usize,
    pub n_ocr: usize,
    pub matched: usize,
    pub recall: f64,
    /// Mean similarity over matched pairs; 0 when nothing matched.
    pub ams: f64,
    pub zero_match: bool,
    pub tau: f64,
    pub pairs: Vec<LinePair>,
}

pub fn report(gt_lines: &[String], ocr_lines: &[String], tau: f64) -> Result<EvalReport> {
    if gt_lines.is_empty() {
        return Err(Error::input("ground truth has no lines"));
    }
    let pairs = align(gt_lines, ocr_lines, tau);
    Ok(summarize(pairs, ocr_lines.len(), tau))
}

/// Pools several per-session reports into one, recomputing the ratios over
/// the union of their pairs.
pub fn merge_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    let tau = reports
        .first()
        .map(|r| r.tau)
        .ok_or_else(|| Error::input("no reports to merge"))?;
    let pairs = reports.iter().flat_map(|r| r.pairs.iter().cloned()).collect();
    let n_ocr = reports.iter().map(|r| r.n_ocr).sum();
    Ok(summarize(pairs, n_ocr, tau))
}

fn summarize(pairs: Vec<LinePair>, n_ocr: usize, tau: f64) -> EvalReport {
    let n_gt = pairs.len();
    let matched: Vec<f64> = pairs.iter().filter(|p| p.matched).map(|p| p.sim).collect();
    let recall = if n_gt == 0 {
        0.0
    } else {
        matched.len() as f64 / n_gt as f64
    };
    let zero_match = matched.is_empty();
    let ams = if zero_match {
        0.0
    } else {
        matched.iter().sum::<f64>() / matched.len() as f64
    };
    EvalReport {
        n_gt,
        n_ocr,
        matched: matched.len(),
        recall,
        ams,
        zero_match,
        tau,
        pairs,
    }
}
