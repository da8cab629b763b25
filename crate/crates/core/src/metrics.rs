//! Evaluation measures and the report they are collected into.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest model probability accepted where the true distribution has mass.
pub const KL_FLOOR: f64 = 1e-12;

/// `KL(p || q) = sum_c p_c ln(p_c / q_c)` over the support of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::invalid(format!(
            "support sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (c, (&pc, &qc)) in p.iter().zip(q).enumerate() {
        if pc > 0.0 {
            if qc < KL_FLOOR {
                return Err(Error::invalid(format!(
                    "model mass {qc:e} on class {c} where the true distribution has {pc}"
                )));
            }
            kl += pc * (pc / qc).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Indices of the `k` highest scores, ties to the lower index.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Fraction of the top-`k` labels that are true positives.
pub fn precision_at_k(scores: &[f64], truths: &[usize], k: usize) -> Result<f64> {
    if truths.is_empty() {
        return Err(Error::invalid("empty truth set"));
    }
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", scores.len())));
    }
    let truth: BTreeSet<usize> = truths.iter().copied().collect();
    let hits = top_k(scores, k).iter().filter(|l| truth.contains(l)).count();
    Ok(hits as f64 / k as f64)
}

/// How many of the ground-truth candidates (indices into the pool) rank in
/// the top `k` of the pool by model score. A raw count in `[0, m]`.
pub fn recall_m_at_k(pool_scores: &[f64], ground_truth: &[usize], k: usize) -> Result<f64> {
    if k == 0 || k > pool_scores.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", pool_scores.len())));
    }
    if let Some(&i) = ground_truth.iter().find(|&&i| i >= pool_scores.len()) {
        return Err(Error::invalid(format!("ground truth {i} missing from the pool")));
    }
    let top: BTreeSet<usize> = top_k(pool_scores, k).into_iter().collect();
    Ok(ground_truth.iter().filter(|i| top.contains(i)).count() as f64)
}

/// Distinct `n`-grams across the list divided by the total token count.
pub fn distinct_ngrams(sequences: &[Vec<usize>], n: usize) -> Result<f64> {
    if n == 0 || sequences.is_empty() {
        return Err(Error::invalid("distinct n-grams need n >= 1 and a non-empty list"));
    }
    let tokens: usize = sequences.iter().map(Vec::len).sum();
    if tokens == 0 {
        return Ok(0.0);
    }
    let grams: BTreeSet<&[usize]> = sequences.iter().flat_map(|s| s.windows(n)).collect();
    Ok(grams.len() as f64 / tokens as f64)
}

/// Token-level F1 against the best-matching reference (multiset overlap).
pub fn token_f1(candidate: &[usize], references: &[Vec<usize>]) -> f64 {
    let counts = |s: &[usize]| {
        let mut m: HashMap<usize, usize> = HashMap::new();
        s.iter().for_each(|&t| *m.entry(t).or_default() += 1);
        m
    };
    let cand = counts(candidate);
    references
        .iter()
        .map(|r| {
            let rc = counts(r);
            let overlap: usize = cand
                .iter()
                .map(|(t, &c)| c.min(rc.get(t).copied().unwrap_or(0)))
                .sum();
            if overlap == 0 {
                return 0.0;
            }
            let p = overlap as f64 / candidate.len() as f64;
            let r = overlap as f64 / r.len() as f64;
            2.0 * p * r / (p + r)
        })
        .fold(0.0, f64::max)
}

/// Best score any candidate in the list achieves against the references.
pub fn oracle_best<F>(list: &[Vec<usize>], references: &[Vec<usize>], scorer: F) -> Result<f64>
where
    F: Fn(&[usize], &[Vec<usize>]) -> f64,
{
    if list.is_empty() {
        return Err(Error::invalid("oracle over an empty list"));
    }
    let mut best = f64::NEG_INFINITY;
    for c in list {
        let s = scorer(c, references);
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("oracle score {s}")));
        }
        best = best.max(s);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_group: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub wall_clock_secs: f64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        match self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            Some((k, v)) => Err(Error::NonFinite(format!("metric {k} = {v}"))),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat `run_id,metric,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        writeln!(w, "run_id,metric,value")?;
        for (k, v) in &self.metrics {
            writeln!(w, "{},{},{}", self.run_id, k, v)?;
        }
        Ok(())
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }
}
