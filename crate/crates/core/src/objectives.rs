//! Training losses: empirical risk, neighbor transfer with its similarity
//! regularizer, the sequence variants, and the baseline configurations.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::{
    decoder_context, mlp_forward, project, sequence_log_prob, DecoderSpec, ModelBundle, TaskSpec,
};
use crate::neighborhood::{live_similarities, Batch};
use crate::synthgen::{Annotation, SparseDataset, TaskKind};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ours,
    Mle,
    CeL2,
    Augment,
    NoRefine,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Mle, Mode::CeL2, Mode::Augment, Mode::NoRefine, Mode::Ours];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Ours => "ours",
            Mode::Mle => "mle",
            Mode::CeL2 => "ce-l2",
            Mode::Augment => "augment",
            Mode::NoRefine => "no-refine",
        }
    }

    /// Whether the mode consumes neighbor annotations.
    pub fn uses_neighbors(&self) -> bool {
        matches!(self, Mode::Ours | Mode::Augment | Mode::NoRefine)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCe,
    SigmoidBce,
    SequenceNll,
}

impl LossKind {
    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Multiclass => LossKind::SoftmaxCe,
            TaskKind::Multilabel => LossKind::SigmoidBce,
            TaskKind::Sequence => LossKind::SequenceNll,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub mu: f64,
    pub mode: Mode,
    pub l2_weight: f64,
    /// Sampled negatives per observed positive in the multi-label own term.
    pub negative_ratio: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 0.5,
            mu: 1.0,
            mode: Mode::Ours,
            l2_weight: 1e-4,
            negative_ratio: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("l2_weight", self.l2_weight),
            ("negative_ratio", self.negative_ratio),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn floor_log(g: &mut Graph, log_p: Var) -> Result<Var> {
    g.clamp_min(log_p, PROB_FLOOR.ln())
}

/// `-log p` of one entry of a `[.., C]` log-probability node.
fn nll_at(g: &mut Graph, log_probs: Var, flat: usize) -> Result<Var> {
    let lp = g.select(log_probs, vec![flat])?;
    let lp = floor_log(g, lp)?;
    g.scale(lp, -1.0)
}

/// `-log sigmoid(sign * z)` of one entry of a logit node.
fn bce_at(g: &mut Graph, logits: Var, flat: usize, positive: bool) -> Result<Var> {
    let z = g.select(logits, vec![flat])?;
    let z = if positive { z } else { g.scale(z, -1.0)? };
    let lp = g.log_sigmoid(z)?;
    let lp = floor_log(g, lp)?;
    g.scale(lp, -1.0)
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let s = g.add_all(terms)?;
    g.scale(s, 1.0 / terms.len() as f64)
}

/// Predictions of one example for classification losses: a row of
/// log-probabilities (softmax-ce) or of logits (sigmoid-bce), addressed by
/// its offset into the batch node.
#[derive(Clone, Copy, Debug)]
pub struct RowScores {
    pub node: Var,
    pub offset: usize,
    pub width: usize,
}

impl RowScores {
    fn flat(&self, c: usize) -> Result<usize> {
        if c >= self.width {
            return Err(Error::invalid(format!("output {c} outside width {}", self.width)));
        }
        Ok(self.offset + c)
    }
}

/// `l(y~, y)` averaged over one annotation set. For sigmoid-bce each
/// annotation is one observed positive label.
pub fn annotation_loss(
    g: &mut Graph,
    kind: LossKind,
    row: RowScores,
    annotations: &[Annotation],
) -> Result<Var> {
    if annotations.is_empty() {
        return Err(Error::invalid("empty annotation set"));
    }
    let terms = annotations
        .iter()
        .map(|a| {
            let [c] = a.as_slice() else {
                return Err(Error::invalid(format!("classification annotation {a:?}")));
            };
            let flat = row.flat(*c)?;
            match kind {
                LossKind::SoftmaxCe => nll_at(g, row.node, flat),
                LossKind::SigmoidBce => bce_at(g, row.node, flat, true),
                LossKind::SequenceNll => Err(Error::invalid("sequence loss on a classification row")),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of(g, &terms)
}

/// The own-label term: mean loss over the observed annotations, plus for
/// sigmoid-bce the mean negative-label loss over `negatives`.
pub fn own_loss(
    g: &mut Graph,
    kind: LossKind,
    row: RowScores,
    annotations: &[Annotation],
    negatives: &[usize],
) -> Result<Var> {
    let pos = annotation_loss(g, kind, row, annotations)?;
    if kind != LossKind::SigmoidBce || negatives.is_empty() {
        return Ok(pos);
    }
    let neg = negatives
        .iter()
        .map(|&l| bce_at(g, row.node, row.flat(l)?, false))
        .collect::<Result<Vec<_>>>()?;
    let neg = mean_of(g, &neg)?;
    g.add(pos, neg)
}

/// Mean over examples of the mean loss over each example's annotations.
/// `scores` is `[B, C]` (log-probabilities or logits per `kind`).
pub fn empirical_risk(
    g: &mut Graph,
    kind: LossKind,
    scores: Var,
    annotations: &[Vec<Annotation>],
    negatives: &[Vec<usize>],
) -> Result<Var> {
    let width = g.value(scores).cols();
    if g.value(scores).rows() != annotations.len() {
        return Err(Error::invalid("prediction rows differ from annotation sets"));
    }
    let terms = annotations
        .iter()
        .enumerate()
        .map(|(b, anns)| {
            let row = RowScores {
                node: scores,
                offset: b * width,
                width,
            };
            let neg = negatives.get(b).map(Vec::as_slice).unwrap_or(&[]);
            own_loss(g, kind, row, anns, neg)
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of(g, &terms)
}

/// `sum_j K_j * l_j`, unscaled.
fn weighted_sum(g: &mut Graph, losses: &[Var], k: &[Var]) -> Result<Var> {
    if losses.len() != k.len() {
        return Err(Error::invalid(format!(
            "{} neighbor losses but {} similarity values",
            losses.len(),
            k.len()
        )));
    }
    let terms = losses
        .iter()
        .zip(k)
        .map(|(&l, &kv)| g.mul(kv, l))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

/// `own + (lambda/|N|) * sum_j K_j * l_j`. With no neighbors this is `own`.
pub fn neighbor_transfer_loss(
    g: &mut Graph,
    own: Var,
    neighbor_losses: &[Var],
    k: &[Var],
    lambda: f64,
) -> Result<Var> {
    if neighbor_losses.len() != k.len() {
        return Err(Error::invalid("mismatched neighbor and similarity lists"));
    }
    if k.is_empty() {
        return Ok(own);
    }
    let s = weighted_sum(g, neighbor_losses, k)?;
    let t = g.scale(s, lambda / k.len() as f64)?;
    g.add(own, t)
}

/// `(mu/|N|) * sum_j (K_j - 1)^2`.
pub fn similarity_regularizer(g: &mut Graph, k: &[Var], mu: f64) -> Result<Var> {
    if k.is_empty() {
        return Ok(g.constant_scalar(0.0));
    }
    let terms = k
        .iter()
        .map(|&kv| {
            let d = g.add_scalar(kv, -1.0)?;
            g.square(d)
        })
        .collect::<Result<Vec<_>>>()?;
    let s = g.add_all(&terms)?;
    g.scale(s, mu / k.len() as f64)
}

/// Target distribution whose cross-entropy reproduces the neighbor term:
/// class `c` gets mass proportional to the summed `K` of neighbors labelled `c`.
pub fn smoothed_targets(neighbor_classes: &[usize], k: &[f64], classes: usize) -> Result<Vec<f64>> {
    if neighbor_classes.len() != k.len() {
        return Err(Error::invalid("mismatched neighbor and similarity lists"));
    }
    let total: f64 = k.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("similarities sum to zero"));
    }
    let mut q = vec![0.0; classes];
    for (&c, &kv) in neighbor_classes.iter().zip(k) {
        if c >= classes {
            return Err(Error::invalid(format!("class {c} outside {classes}")));
        }
        q[c] += kv;
    }
    q.iter_mut().for_each(|v| *v /= total);
    Ok(q)
}

/// Teacher-forced terms of one neighbor sequence under the current input,
/// with the weight its `K` carries (1 unless the neighbor has several
/// annotations, which share it equally).
pub struct SequenceNeighbor<'a> {
    pub log_probs: &'a [Var],
    pub alphas: &'a [Var],
    pub k: Var,
    pub share: f64,
}

fn check_alpha_lengths(entries: &[SequenceNeighbor]) -> Result<()> {
    for e in entries {
        if e.log_probs.len() != e.alphas.len() || e.log_probs.is_empty() {
            return Err(Error::invalid(format!(
                "{} log-probabilities but {} alpha values",
                e.log_probs.len(),
                e.alphas.len()
            )));
        }
    }
    Ok(())
}

fn seq_transfer(g: &mut Graph, entries: &[SequenceNeighbor], n: usize, lambda: f64) -> Result<Var> {
    check_alpha_lengths(entries)?;
    let mut terms = Vec::with_capacity(entries.len());
    for e in entries {
        let per_token = e
            .log_probs
            .iter()
            .zip(e.alphas)
            .map(|(&lp, &a)| {
                let lp = floor_log(g, lp)?;
                g.mul(a, lp)
            })
            .collect::<Result<Vec<_>>>()?;
        let s = g.add_all(&per_token)?;
        let s = g.mul(e.k, s)?;
        terms.push(g.scale(s, e.share)?);
    }
    let s = g.add_all(&terms)?;
    g.scale(s, -lambda / n as f64)
}

fn alpha_reg(g: &mut Graph, entries: &[SequenceNeighbor], n: usize, mu: f64, t: usize) -> Result<Var> {
    if t == 0 {
        return Err(Error::invalid("alpha regularizer needs T >= 1"));
    }
    let mut terms = Vec::with_capacity(entries.len());
    for e in entries {
        let s = g.add_all(e.alphas)?;
        let d = g.add_scalar(s, -1.0)?;
        let d = g.square(d)?;
        let d = g.mul(e.k, d)?;
        terms.push(g.scale(d, e.share)?);
    }
    let s = g.add_all(&terms)?;
    g.scale(s, mu / (t * n) as f64)
}

/// `-(lambda/|N|) * sum_j K_j * sum_t alpha_jt * log p_jt`, one entry per
/// neighbor.
pub fn sequence_transfer_loss(
    g: &mut Graph,
    log_probs: &[Vec<Var>],
    alphas: &[Vec<Var>],
    k: &[Var],
    lambda: f64,
) -> Result<Var> {
    let entries = zip_entries(log_probs, alphas, k)?;
    seq_transfer(g, &entries, k.len(), lambda)
}

/// `(mu/(T*|N|)) * sum_j K_j * (sum_t alpha_jt - 1)^2`.
pub fn alpha_regularizer(
    g: &mut Graph,
    alphas: &[Vec<Var>],
    k: &[Var],
    mu: f64,
    t: usize,
) -> Result<Var> {
    if alphas.len() != k.len() || alphas.iter().any(Vec::is_empty) {
        return Err(Error::invalid("mismatched alpha and similarity lists"));
    }
    let entries: Vec<SequenceNeighbor> = alphas
        .iter()
        .zip(k)
        .map(|(a, &kv)| SequenceNeighbor {
            log_probs: a,
            alphas: a,
            k: kv,
            share: 1.0,
        })
        .collect();
    alpha_reg(g, &entries, k.len(), mu, t)
}

fn zip_entries<'a>(
    log_probs: &'a [Vec<Var>],
    alphas: &'a [Vec<Var>],
    k: &[Var],
) -> Result<Vec<SequenceNeighbor<'a>>> {
    if log_probs.len() != k.len() || alphas.len() != k.len() || k.is_empty() {
        return Err(Error::invalid("mismatched neighbor lists"));
    }
    Ok(log_probs
        .iter()
        .zip(alphas)
        .zip(k)
        .map(|((lp, a), &kv)| SequenceNeighbor {
            log_probs: lp,
            alphas: a,
            k: kv,
            share: 1.0,
        })
        .collect())
}

/// Unobserved labels drawn uniformly as negatives, `ratio` per observed
/// positive (at least one when any exist), ascending.
pub fn sample_negatives(
    observed: &[Annotation],
    labels: usize,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    if ratio <= 0.0 {
        return Vec::new();
    }
    let mut pos: Vec<usize> = observed.iter().flatten().copied().collect();
    pos.sort_unstable();
    pos.dedup();
    let pool: Vec<usize> = (0..labels).filter(|l| pos.binary_search(l).is_err()).collect();
    let want = ((ratio * pos.len() as f64).round() as usize).max(1).min(pool.len());
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), want)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Root of the batch loss together with the leaves it was built from.
pub struct ObjectiveOutput {
    pub loss: Var,
    pub task_params: Vec<Var>,
    /// Trainable projection leaves; `None` when the projection is frozen or
    /// unused in this mode.
    pub projection_params: Option<Vec<Var>>,
    /// Live similarities per batch entry (empty without neighbors).
    pub similarities: Vec<Vec<Var>>,
    /// Example-annotation pairings evaluated: `B*(N+1)` with neighbors, `B`
    /// without.
    pub forward_passes: usize,
}

/// The full batch objective for the configured mode, averaged over the batch.
///
/// `negatives[b]` lists the sampled negative labels of batch entry `b` for
/// sigmoid-bce and is ignored otherwise.
pub fn total_objective(
    g: &mut Graph,
    cfg: &ObjectiveConfig,
    bundle: &ModelBundle,
    dataset: &SparseDataset,
    batch: &Batch,
    negatives: &[Vec<usize>],
) -> Result<ObjectiveOutput> {
    let task_params = bundle.task.bind(g, true);
    let projection = matches!(cfg.mode, Mode::Ours | Mode::NoRefine)
        .then(|| bundle.projection.bind(g, cfg.mode == Mode::Ours));
    objective_from_vars(g, cfg, bundle, task_params, projection, dataset, batch, negatives)
}

/// [`total_objective`] over parameter nodes the caller has already placed in
/// `g`. `projection` is required in the modes that compute live similarities
/// (ours, no-refine) and ignored otherwise. Only the shapes of `bundle` are
/// used.
#[allow(clippy::too_many_arguments)]
pub fn objective_from_vars(
    g: &mut Graph,
    cfg: &ObjectiveConfig,
    bundle: &ModelBundle,
    task_params: Vec<Var>,
    projection: Option<Vec<Var>>,
    dataset: &SparseDataset,
    batch: &Batch,
    negatives: &[Vec<usize>],
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    if batch.entries.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let kind = LossKind::for_task(dataset.kind);
    let neighbors = cfg.mode.uses_neighbors();

    let (similarities, projection_params) = if !neighbors {
        (vec![Vec::new(); batch.entries.len()], None)
    } else if cfg.mode == Mode::Augment {
        let ones = batch
            .entries
            .iter()
            .map(|e| e.neighbors.iter().map(|_| g.constant_scalar(1.0)).collect())
            .collect();
        (ones, None)
    } else {
        let proj = projection.ok_or_else(|| Error::invalid("mode needs projection parameters"))?;
        let touched = batch.touched();
        let x = g.input(dataset.projection_rows(&touched)?);
        let emb = project(g, &bundle.projection_spec, &proj, x)?;
        let k = live_similarities(g, batch, &touched, emb)?;
        (k, (cfg.mode == Mode::Ours).then_some(proj))
    };

    let per_example = match (&bundle.task_spec, kind) {
        (TaskSpec::Mlp(spec), LossKind::SoftmaxCe | LossKind::SigmoidBce) => {
            let ids: Vec<usize> = batch.entries.iter().map(|e| e.example).collect();
            let x = g.input(dataset.feature_rows(&ids)?);
            let logits = mlp_forward(g, spec, &task_params, x)?;
            let scores = match kind {
                LossKind::SoftmaxCe => g.log_softmax(logits)?,
                _ => logits,
            };
            let width = g.value(scores).cols();
            batch
                .entries
                .iter()
                .enumerate()
                .map(|(b, e)| {
                    let row = RowScores {
                        node: scores,
                        offset: b * width,
                        width,
                    };
                    let neg = match kind {
                        LossKind::SigmoidBce => negatives.get(b).map(Vec::as_slice).unwrap_or(&[]),
                        _ => &[],
                    };
                    let own = own_loss(g, kind, row, &dataset.observed[e.example], neg)?;
                    if !neighbors || e.neighbors.is_empty() {
                        return Ok(own);
                    }
                    let nb_losses = e
                        .neighbors
                        .iter()
                        .map(|&j| annotation_loss(g, kind, row, &dataset.observed[j]))
                        .collect::<Result<Vec<_>>>()?;
                    let k = &similarities[b];
                    let with_transfer = neighbor_transfer_loss(g, own, &nb_losses, k, cfg.lambda)?;
                    let reg = similarity_regularizer(g, k, cfg.mu)?;
                    g.add(with_transfer, reg)
                })
                .collect::<Result<Vec<_>>>()?
        }
        (TaskSpec::Decoder(spec), LossKind::SequenceNll) => batch
            .entries
            .iter()
            .enumerate()
            .map(|(b, e)| {
                sequence_example(g, cfg, spec, &task_params, dataset, e.example, &e.neighbors, &similarities[b], neighbors)
            })
            .collect::<Result<Vec<_>>>()?,
        (TaskSpec::Mlp(_), LossKind::SequenceNll) => {
            return Err(Error::invalid("sequence loss-kind needs a decoder task model"))
        }
        (TaskSpec::Decoder(_), _) => {
            return Err(Error::invalid("sequence loss-kind with non-sequence batch"))
        }
    };

    let sum = g.add_all(&per_example)?;
    let mut loss = g.scale(sum, 1.0 / per_example.len() as f64)?;
    if cfg.mode == Mode::CeL2 {
        let norms = task_params
            .iter()
            .map(|&p| {
                let sq = g.square(p)?;
                g.sum(sq)
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = g.add_all(&norms)?;
        let pen = g.scale(norm, cfg.l2_weight)?;
        loss = g.add(loss, pen)?;
    }
    let forward_passes = if neighbors {
        batch.pairings()
    } else {
        batch.entries.len()
    };
    Ok(ObjectiveOutput {
        loss,
        task_params,
        projection_params,
        similarities,
        forward_passes,
    })
}

#[allow(clippy::too_many_arguments)]
fn sequence_example(
    g: &mut Graph,
    cfg: &ObjectiveConfig,
    spec: &DecoderSpec,
    params: &[Var],
    dataset: &SparseDataset,
    example: usize,
    neighbor_ids: &[usize],
    k: &[Var],
    neighbors: bool,
) -> Result<Var> {
    let ctx = decoder_context(g, spec, params, &dataset.region_tensor(example)?)?;
    let own_anns = &dataset.observed[example];
    let mut own = Vec::with_capacity(own_anns.len());
    for a in own_anns {
        let terms = sequence_log_prob(g, spec, params, &ctx, a)?;
        let floored = terms
            .log_probs
            .iter()
            .map(|&lp| floor_log(g, lp))
            .collect::<Result<Vec<_>>>()?;
        let s = g.add_all(&floored)?;
        own.push(g.scale(s, -1.0)?);
    }
    let own = mean_of(g, &own)?;
    if !neighbors || neighbor_ids.is_empty() {
        return Ok(own);
    }
    let mut terms = Vec::new();
    let mut shares = Vec::new();
    for (&j, &kv) in neighbor_ids.iter().zip(k) {
        let anns = &dataset.observed[j];
        for a in anns {
            terms.push((sequence_log_prob(g, spec, params, &ctx, a)?, kv));
            shares.push(1.0 / anns.len() as f64);
        }
    }
    let entries: Vec<SequenceNeighbor> = terms
        .iter()
        .zip(&shares)
        .map(|((t, kv), &share)| SequenceNeighbor {
            log_probs: &t.log_probs,
            alphas: &t.alphas,
            k: *kv,
            share,
        })
        .collect();
    let t = entries.iter().map(|e| e.alphas.len()).max().unwrap_or(1);
    let transfer = seq_transfer(g, &entries, neighbor_ids.len(), cfg.lambda)?;
    let reg = alpha_reg(g, &entries, neighbor_ids.len(), cfg.mu, t)?;
    let s = g.add(own, transfer)?;
    g.add(s, reg)
}
