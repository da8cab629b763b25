use std::collections::{BTreeMap, BTreeSet};

use anyhow::{bail, Context, Result};
use rand::seq::index;

use nt_core::diff::Tensor;
use nt_core::metrics::{
    distinct_ngrams, kl_divergence, oracle_best, precision_at_k, recall_m_at_k, token_f1, KL_FLOOR,
};
use nt_core::models::{beam_search, mlp_rows, score_sequences, ModelBundle, TaskSpec, EOS};
use nt_core::rng::{derive_seed, stream_rng, Stream};
use nt_core::synthgen::{Annotation, SparseDataset, Split, TaskKind};

use crate::config::EvalSettings;

/// Which validation number drives early stopping, and its direction.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSpec {
    pub name: String,
    pub higher_is_better: bool,
}

impl MetricSpec {
    pub fn improves(&self, candidate: f64, best: f64) -> bool {
        if self.higher_is_better {
            candidate > best
        } else {
            candidate < best
        }
    }
}

pub fn validation_spec(kind: TaskKind, settings: &EvalSettings) -> MetricSpec {
    match kind {
        TaskKind::Multiclass => MetricSpec {
            name: "kl".into(),
            higher_is_better: false,
        },
        TaskKind::Multilabel => MetricSpec {
            name: "precision@10".into(),
            higher_is_better: true,
        },
        TaskKind::Sequence => MetricSpec {
            name: recall_name(settings),
            higher_is_better: true,
        },
    }
}

fn recall_name(s: &EvalSettings) -> String {
    format!("recall_{}@{}", s.m, s.recall_k)
}

fn softmax_floored(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    // mix in KL_FLOOR per class so every entry stays at or above it
    let keep = 1.0 - KL_FLOOR * logits.len() as f64;
    e.iter().map(|v| keep * (v / s) + KL_FLOOR).collect()
}

fn mlp_scores(bundle: &ModelBundle, ds: &SparseDataset, ids: &[usize]) -> Result<Tensor> {
    let TaskSpec::Mlp(spec) = &bundle.task_spec else {
        bail!("classification task needs an MLP task model");
    };
    Ok(mlp_rows(spec, &bundle.task, &ds.feature_rows(ids)?)?)
}

/// Mean KL(true || model) over `ids`. Model probabilities are mixed with
/// `KL_FLOOR` mass per class first.
pub fn mean_kl(bundle: &ModelBundle, ds: &SparseDataset, ids: &[usize]) -> Result<f64> {
    let post = ds
        .posterior
        .as_ref()
        .context("missing evaluation targets: no true posterior")?;
    let logits = mlp_scores(bundle, ds, ids)?;
    let mut total = 0.0;
    for (r, &i) in ids.iter().enumerate() {
        let q = softmax_floored(logits.row_slice(r));
        total += kl_divergence(post.row_slice(i), &q)?;
    }
    Ok(total / ids.len() as f64)
}

fn label_set(anns: &[Annotation]) -> Vec<usize> {
    let set: BTreeSet<usize> = anns.iter().flatten().copied().collect();
    set.into_iter().collect()
}

/// Mean precision@k over `ids` for each k, scored against the full label sets.
pub fn mean_precision(
    bundle: &ModelBundle,
    ds: &SparseDataset,
    ids: &[usize],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let full = ds
        .full
        .as_ref()
        .context("missing evaluation targets: no full label sets")?;
    let scores = mlp_scores(bundle, ds, ids)?;
    let mut out = BTreeMap::new();
    for &k in ks.iter().filter(|&&k| k <= ds.outputs) {
        let mut sum = 0.0;
        for (r, &i) in ids.iter().enumerate() {
            sum += precision_at_k(scores.row_slice(r), &label_set(&full[i]), k)?;
        }
        out.insert(k, sum / ids.len() as f64);
    }
    Ok(out)
}

fn strip_eos(seq: &[usize]) -> Vec<usize> {
    match seq.last() {
        Some(&EOS) => seq[..seq.len() - 1].to_vec(),
        _ => seq.to_vec(),
    }
}

/// Candidate pool of input `i`: its references plus those of up to
/// `others` other inputs, deduplicated. Returns the pool and the positions
/// of `i`'s references in it.
pub fn retrieval_pool(
    full: &[Vec<Annotation>],
    i: usize,
    others: usize,
    seed: u64,
) -> (Vec<Annotation>, Vec<usize>) {
    let m = full.len();
    let mut rng = stream_rng(derive_seed(seed, i as u64), Stream::Pool);
    let mut picked: Vec<usize> = index::sample(&mut rng, m - 1, others.min(m - 1))
        .into_iter()
        .map(|j| if j >= i { j + 1 } else { j })
        .collect();
    picked.sort_unstable();
    let mut pool: Vec<Annotation> = Vec::new();
    let mut seen: BTreeMap<Annotation, usize> = BTreeMap::new();
    let mut add = |pool: &mut Vec<Annotation>, s: &Annotation| -> usize {
        *seen.entry(s.clone()).or_insert_with(|| {
            pool.push(s.clone());
            pool.len() - 1
        })
    };
    let mut truth: Vec<usize> = full[i].iter().map(|s| add(&mut pool, s)).collect();
    truth.sort_unstable();
    truth.dedup();
    for j in picked {
        for s in &full[j] {
            add(&mut pool, s);
        }
    }
    (pool, truth)
}

fn decoder_parts(bundle: &ModelBundle) -> Result<&nt_core::models::DecoderSpec> {
    match &bundle.task_spec {
        TaskSpec::Decoder(s) => Ok(s),
        _ => bail!("sequence task needs a decoder task model"),
    }
}

/// Mean recall_m@k over `ids`; also returns the mean pool size.
pub fn mean_recall(
    bundle: &ModelBundle,
    ds: &SparseDataset,
    ids: &[usize],
    settings: &EvalSettings,
    seed: u64,
) -> Result<(f64, f64)> {
    let full = ds
        .full
        .as_ref()
        .context("missing evaluation targets: no reference sequences")?;
    let spec = decoder_parts(bundle)?;
    let (mut recall, mut pool_size) = (0.0, 0.0);
    for &i in ids {
        let (pool, truth) = retrieval_pool(full, i, settings.pool_others, seed);
        let scores = score_sequences(spec, &bundle.task, &ds.region_tensor(i)?, &pool)?;
        let k = settings.recall_k.min(pool.len());
        recall += recall_m_at_k(&scores, &truth, k)?;
        pool_size += pool.len() as f64;
    }
    let n = ids.len() as f64;
    Ok((recall / n, pool_size / n))
}

/// Beam-decoded lists of every input in `ids`, EOS stripped.
pub fn decode_lists(
    bundle: &ModelBundle,
    ds: &SparseDataset,
    ids: &[usize],
    settings: &EvalSettings,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let spec = decoder_parts(bundle)?;
    ids.iter()
        .map(|&i| {
            let hyps = beam_search(
                spec,
                &bundle.task,
                &ds.region_tensor(i)?,
                settings.beam_size,
                settings.max_len,
            )?;
            Ok(hyps.iter().map(|h| strip_eos(&h.tokens)).collect())
        })
        .collect()
}

/// The early-stopping metric on `ids`.
pub fn validation_metric(
    bundle: &ModelBundle,
    ds: &SparseDataset,
    ids: &[usize],
    settings: &EvalSettings,
    seed: u64,
) -> Result<f64> {
    match ds.kind {
        TaskKind::Multiclass => mean_kl(bundle, ds, ids),
        TaskKind::Multilabel => {
            let k = 10.min(ds.outputs);
            Ok(mean_precision(bundle, ds, ids, &[k])?[&k])
        }
        TaskKind::Sequence => Ok(mean_recall(bundle, ds, ids, settings, seed)?.0),
    }
}

/// Task-appropriate test metrics.
pub fn evaluate(
    bundle: &ModelBundle,
    ds: &SparseDataset,
    settings: &EvalSettings,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let ids = ds.ids(Split::Test);
    if ids.is_empty() {
        bail!("dataset has no test split");
    }
    let mut out = BTreeMap::new();
    match ds.kind {
        TaskKind::Multiclass => {
            out.insert("kl".to_string(), mean_kl(bundle, ds, &ids)?);
        }
        TaskKind::Multilabel => {
            for (k, v) in mean_precision(bundle, ds, &ids, &settings.k_values)? {
                out.insert(format!("precision@{k}"), v);
            }
        }
        TaskKind::Sequence => {
            let refs = ds
                .full
                .as_ref()
                .context("missing evaluation targets: no reference sequences")?;
            let lists = decode_lists(bundle, ds, &ids, settings)?;
            let mut oracle = 0.0;
            for (list, &i) in lists.iter().zip(&ids) {
                let stripped: Vec<Vec<usize>> = refs[i].iter().map(|r| strip_eos(r)).collect();
                oracle += oracle_best(list, &stripped, token_f1)?;
            }
            let all: Vec<Vec<usize>> = lists.into_iter().flatten().collect();
            let (recall, pool) = mean_recall(bundle, ds, &ids, settings, seed)?;
            out.insert(recall_name(settings), recall);
            out.insert(
                format!("distinct_{}grams", settings.ngram_n),
                distinct_ngrams(&all, settings.ngram_n)?,
            );
            out.insert("oracle_token_f1".into(), oracle / ids.len() as f64);
            out.insert("mean_pool_size".into(), pool);
        }
    }
    Ok(out)
}
