//! Toy grounded sequence decoder.
//!
//! A gated tanh recurrent cell reads the previous token embedding, the global
//! feature `v_g` (mean of the region features) and its state. Additive
//! attention then spreads over the `k` region vectors plus one learned
//! sentinel slot that stands for non-visual context. The visual importance
//! `alpha_t` of a step is the attention mass on the `k` regions, so it always
//! lies in `[0, 1]`.
//!
//! Token 0 is the end-of-sequence marker and also the start token fed at the
//! first step.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::params::{Initializer, ParamSet};
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const EOS: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub regions: usize,
    pub region_width: usize,
    pub attention: usize,
}

impl DecoderSpec {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.vocab,
            self.embed,
            self.hidden,
            self.regions,
            self.region_width,
            self.attention,
        ];
        if widths.contains(&0) {
            return Err(Error::invalid(format!("zero width in decoder spec {self:?}")));
        }
        if self.vocab < 2 {
            return Err(Error::invalid("decoder vocabulary needs EOS plus one token"));
        }
        Ok(())
    }

    pub fn init(&self, seed: u64) -> Result<ParamSet> {
        self.validate()?;
        let mut init = Initializer::new(seed);
        let (v, e, h, r, a) = (
            self.vocab,
            self.embed,
            self.hidden,
            self.region_width,
            self.attention,
        );
        let z = e + r + h;
        let mut ps = ParamSet::new();
        ps.push("embed", init.uniform(vec![v, e], e)?);
        ps.push("cell.gate.weight", init.uniform(vec![z, h], z)?);
        ps.push("cell.gate.bias", init.zeros(vec![h])?);
        ps.push("cell.cand.weight", init.uniform(vec![z, h], z)?);
        ps.push("cell.cand.bias", init.zeros(vec![h])?);
        ps.push("attn.region", init.uniform(vec![r, a], r)?);
        ps.push("attn.state", init.uniform(vec![h, a], h)?);
        ps.push("attn.score", init.uniform(vec![a, 1], a)?);
        ps.push("attn.sentinel", init.uniform(vec![r], r)?);
        ps.push("out.weight", init.uniform(vec![h + r, v], h + r)?);
        ps.push("out.bias", init.zeros(vec![v])?);
        Ok(ps)
    }
}

struct Weights {
    embed: Var,
    gate_w: Var,
    gate_b: Var,
    cand_w: Var,
    cand_b: Var,
    attn_region: Var,
    attn_state: Var,
    attn_score: Var,
    sentinel: Var,
    out_w: Var,
    out_b: Var,
}

impl Weights {
    fn from_vars(v: &[Var]) -> Result<Self> {
        if v.len() != 11 {
            return Err(Error::invalid(format!(
                "decoder expects 11 parameter tensors, got {}",
                v.len()
            )));
        }
        Ok(Weights {
            embed: v[0],
            gate_w: v[1],
            gate_b: v[2],
            cand_w: v[3],
            cand_b: v[4],
            attn_region: v[5],
            attn_state: v[6],
            attn_score: v[7],
            sentinel: v[8],
            out_w: v[9],
            out_b: v[10],
        })
    }
}

/// Per-input quantities shared by every step: the `[k+1, R]` attention
/// candidates (regions then sentinel), their attention projection and `v_g`.
#[derive(Clone, Copy, Debug)]
pub struct DecoderContext {
    candidates: Var,
    candidates_proj: Var,
    global: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// `[1, V]` log-probabilities of the next token.
    pub log_probs: Var,
    /// `[1, k+1]` attention weights, sentinel last.
    pub attention: Var,
    /// `[1]` attention mass on the `k` regions.
    pub alpha: Var,
    pub state: Var,
}

/// Mean of the region rows.
pub fn global_feature(regions: &Tensor) -> Tensor {
    let (k, r) = (regions.rows(), regions.cols());
    let mut g = vec![0.0; r];
    for i in 0..k {
        g.iter_mut()
            .zip(regions.row_slice(i))
            .for_each(|(a, b)| *a += b);
    }
    g.iter_mut().for_each(|v| *v /= k as f64);
    Tensor::row(g)
}

pub fn decoder_context(
    g: &mut Graph,
    spec: &DecoderSpec,
    params: &[Var],
    regions: &Tensor,
) -> Result<DecoderContext> {
    let w = Weights::from_vars(params)?;
    if regions.shape() != [spec.regions, spec.region_width] {
        return Err(Error::Shape {
            primitive: "decoder_context",
            shapes: vec![
                regions.shape().to_vec(),
                vec![spec.regions, spec.region_width],
            ],
        });
    }
    let global = g.input(global_feature(regions));
    let regs = g.input(regions.clone());
    let candidates = g.concat_rows(&[regs, w.sentinel])?;
    let candidates_proj = g.matmul(candidates, w.attn_region)?;
    Ok(DecoderContext {
        candidates,
        candidates_proj,
        global,
    })
}

pub fn initial_state(g: &mut Graph, spec: &DecoderSpec) -> Var {
    g.input(Tensor::zeros(vec![1, spec.hidden]))
}

pub fn decoder_step(
    g: &mut Graph,
    spec: &DecoderSpec,
    params: &[Var],
    ctx: &DecoderContext,
    state: Var,
    prev: usize,
) -> Result<StepOutput> {
    if prev >= spec.vocab {
        return Err(Error::invalid(format!(
            "token {prev} outside vocabulary of {}",
            spec.vocab
        )));
    }
    let w = Weights::from_vars(params)?;
    let emb = g.gather_row(w.embed, prev)?;
    let z = g.concat_cols(&[emb, ctx.global, state])?;

    let gate = g.matmul(z, w.gate_w)?;
    let gate = g.add_row(gate, w.gate_b)?;
    let gate = g.sigmoid(gate)?;
    let cand = g.matmul(z, w.cand_w)?;
    let cand = g.add_row(cand, w.cand_b)?;
    let cand = g.tanh(cand)?;
    // h' = u * h + (1 - u) * c
    let keep = g.mul(gate, state)?;
    let one_minus = g.scale(gate, -1.0)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let write = g.mul(one_minus, cand)?;
    let new_state = g.add(keep, write)?;

    let sproj = g.matmul(new_state, w.attn_state)?;
    let pre = g.add_row(ctx.candidates_proj, sproj)?;
    let act = g.tanh(pre)?;
    let scores = g.matmul(act, w.attn_score)?;
    let scores = g.reshape(scores, vec![1, spec.regions + 1])?;
    let log_att = g.log_softmax(scores)?;
    let attention = g.exp(log_att)?;
    let context = g.matmul(attention, ctx.candidates)?;
    let visual = g.select(attention, (0..spec.regions).collect())?;
    let alpha = g.sum(visual)?;

    let feat = g.concat_cols(&[new_state, context])?;
    let logits = g.matmul(feat, w.out_w)?;
    let logits = g.add_row(logits, w.out_b)?;
    let log_probs = g.log_softmax(logits)?;
    Ok(StepOutput {
        log_probs,
        attention,
        alpha,
        state: new_state,
    })
}

/// Teacher-forced per-token terms of one sequence under one input.
#[derive(Clone, Debug)]
pub struct SequenceTerms {
    /// `[1]` nodes, `log p(y_t | y_<t, x)`.
    pub log_probs: Vec<Var>,
    /// `[1]` nodes, visual importance at each step.
    pub alphas: Vec<Var>,
}

pub fn check_sequence(spec: &DecoderSpec, tokens: &[usize]) -> Result<()> {
    match tokens.last() {
        None => Err(Error::invalid("empty token sequence")),
        Some(&t) if t != EOS => Err(Error::invalid("sequence must end with EOS")),
        _ => match tokens.iter().find(|&&t| t >= spec.vocab) {
            Some(t) => Err(Error::invalid(format!(
                "token {t} outside vocabulary of {}",
                spec.vocab
            ))),
            None => Ok(()),
        },
    }
}

pub fn sequence_log_prob(
    g: &mut Graph,
    spec: &DecoderSpec,
    params: &[Var],
    ctx: &DecoderContext,
    tokens: &[usize],
) -> Result<SequenceTerms> {
    check_sequence(spec, tokens)?;
    let mut state = initial_state(g, spec);
    let mut prev = EOS;
    let mut log_probs = Vec::with_capacity(tokens.len());
    let mut alphas = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let step = decoder_step(g, spec, params, ctx, state, prev)?;
        log_probs.push(g.select(step.log_probs, vec![tok])?);
        alphas.push(step.alpha);
        state = step.state;
        prev = tok;
    }
    Ok(SequenceTerms { log_probs, alphas })
}

/// Total log-probability of each candidate sequence under one input.
/// Candidates sharing a prefix share its decoder steps.
pub fn score_sequences(
    spec: &DecoderSpec,
    params: &ParamSet,
    regions: &Tensor,
    candidates: &[Vec<usize>],
) -> Result<Vec<f64>> {
    struct Level {
        state: Var,
        prev: usize,
        log_prob: f64,
        next: Option<(Vec<f64>, Var)>,
    }
    for cand in candidates {
        check_sequence(spec, cand)?;
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[a].cmp(&candidates[b]));

    let mut g = Graph::inference();
    let vars = params.bind(&mut g, false);
    let ctx = decoder_context(&mut g, spec, &vars, regions)?;
    let mut path: Vec<usize> = Vec::new();
    let mut stack = vec![Level {
        state: initial_state(&mut g, spec),
        prev: EOS,
        log_prob: 0.0,
        next: None,
    }];
    let mut out = vec![0.0; candidates.len()];
    for ci in order {
        let cand = &candidates[ci];
        let common = path.iter().zip(cand).take_while(|(a, b)| a == b).count();
        path.truncate(common);
        stack.truncate(common + 1);
        for &tok in &cand[common..] {
            let top = stack.last_mut().expect("stack holds the root");
            if top.next.is_none() {
                let step = decoder_step(&mut g, spec, &vars, &ctx, top.state, top.prev)?;
                top.next = Some((g.value(step.log_probs).data().to_vec(), step.state));
            }
            let (lp, state) = top.next.as_ref().expect("step computed");
            let level = Level {
                state: *state,
                prev: tok,
                log_prob: top.log_prob + lp[tok],
                next: None,
            };
            stack.push(level);
            path.push(tok);
        }
        out[ci] = stack.last().expect("non-empty").log_prob;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search from the start token. A hypothesis completes when it emits
/// EOS or reaches `max_len` tokens. Returns at most `beam` completed
/// sequences by descending log-probability; ties go to the lexicographically
/// smaller token sequence, so lower token ids win.
pub fn beam_search(
    spec: &DecoderSpec,
    params: &ParamSet,
    regions: &Tensor,
    beam: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if beam == 0 || max_len == 0 {
        return Err(Error::invalid("beam size and max length must be at least 1"));
    }
    let mut g = Graph::inference();
    let vars = params.bind(&mut g, false);
    let ctx = decoder_context(&mut g, spec, &vars, regions)?;
    let mut live: Vec<(Hypothesis, Var)> = vec![(
        Hypothesis {
            tokens: vec![],
            log_prob: 0.0,
        },
        initial_state(&mut g, spec),
    )];
    let mut done: Vec<Hypothesis> = Vec::new();

    for t in 0..max_len {
        let mut expansions: Vec<(Hypothesis, Var)> = Vec::new();
        for (hyp, state) in &live {
            let prev = hyp.tokens.last().copied().unwrap_or(EOS);
            let step = decoder_step(&mut g, spec, &vars, &ctx, *state, prev)?;
            let lp = g.value(step.log_probs).data();
            for (tok, &l) in lp.iter().enumerate() {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                expansions.push((
                    Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + l,
                    },
                    step.state,
                ));
            }
        }
        expansions.sort_by(|a, b| rank(&a.0, &b.0));
        expansions.truncate(beam);
        live.clear();
        for (hyp, state) in expansions {
            if hyp.tokens.last() == Some(&EOS) || t + 1 == max_len {
                done.push(hyp);
            } else {
                live.push((hyp, state));
            }
        }
        if live.is_empty() {
            break;
        }
    }
    done.sort_by(rank);
    done.truncate(beam);
    Ok(done)
}
