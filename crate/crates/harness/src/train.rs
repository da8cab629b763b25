use anyhow::{anyhow, bail, ensure, Context, Result};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nt_core::diff::Graph;
use nt_core::models::{project_rows, DecoderSpec, Head, MlpSpec, ModelBundle, ProjectionSpec, TaskSpec};
use nt_core::neighborhood::{assemble_batch, build_index, Batch, NeighborIndex, RefreshPolicy};
use nt_core::objectives::{sample_negatives, total_objective, Mode};
use nt_core::rng::{derive_seed, stream_rng, Stream};
use nt_core::synthgen::{SparseDataset, Split, TaskKind};
use nt_core::Error as CoreError;

use crate::config::ExperimentConfig;
use crate::evaluate::{validation_metric, validation_spec};
use crate::optim::Adam;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefreshEvent {
    pub step: u64,
    pub version: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub metric: String,
    pub train_loss: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub refreshes: Vec<RefreshEvent>,
    pub checkpoints: Vec<String>,
    pub best_step: u64,
    pub best_metric: f64,
    pub steps_run: u64,
    pub stopped_early: bool,
    /// Example-annotation pairings evaluated per optimizer step.
    pub forward_passes_per_step: usize,
}

pub struct TrainOutcome {
    pub best: ModelBundle,
    pub last: ModelBundle,
    pub history: RunHistory,
}

/// Task model, projection and learning rates for a dataset.
pub fn build_bundle(cfg: &ExperimentConfig, ds: &SparseDataset) -> Result<ModelBundle> {
    let m = &cfg.model;
    let task_spec = match ds.kind {
        TaskKind::Multiclass | TaskKind::Multilabel => {
            let mut widths = vec![ds.features.cols()];
            widths.extend(&m.hidden);
            widths.push(ds.outputs);
            let head = if ds.kind == TaskKind::Multiclass {
                Head::SoftmaxMulticlass
            } else {
                Head::SigmoidMultilabel
            };
            TaskSpec::Mlp(MlpSpec::new(widths, head))
        }
        TaskKind::Sequence => {
            let (k, w) = ds.regions.context("sequence dataset without region layout")?;
            TaskSpec::Decoder(DecoderSpec {
                vocab: ds.outputs,
                embed: m.token_embed,
                hidden: m.state,
                regions: k,
                region_width: w,
                attention: m.attention,
            })
        }
    };
    let projection = ProjectionSpec::new(ds.projection_width(), m.embedding_dim)
        .with_hidden(m.projection_hidden.clone());
    Ok(ModelBundle::init(
        task_spec,
        projection,
        cfg.optimizer.task_lr,
        Some(cfg.projection_lr()),
        derive_seed(cfg.seed, Stream::Init as u64),
        derive_seed(cfg.seed, Stream::Projection as u64),
    )?)
}

fn collapse_context(e: CoreError, step: u64) -> anyhow::Error {
    match e {
        CoreError::ZeroNorm => anyhow!("projection collapse at step {step}: zero-norm embedding"),
        other => anyhow!(other).context(format!("step {step}")),
    }
}

/// Neighbor index over the training split; ids in the index are positions
/// within `train`.
fn index_train(bundle: &ModelBundle, ds: &SparseDataset, train: &[usize], n: usize, step: u64) -> Result<NeighborIndex> {
    let emb = project_rows(&bundle.projection_spec, &bundle.projection, &ds.projection_rows(train)?)
        .map_err(|e| collapse_context(e, step))?;
    build_index(&emb, n, step).map_err(|e| collapse_context(e, step))
}

fn to_dataset_ids(batch: Batch, train: &[usize]) -> Batch {
    let entries = batch
        .entries
        .into_iter()
        .map(|mut e| {
            e.example = train[e.example];
            e.neighbors.iter_mut().for_each(|j| *j = train[*j]);
            e
        })
        .collect();
    Batch { entries }
}

/// Epoch-shuffled positions, `b` at a time.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn next(&mut self, b: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

pub fn train(cfg: &ExperimentConfig, ds: &SparseDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_ids = ds.ids(Split::Train);
    let val_ids = ds.ids(Split::Validation);
    ensure!(!train_ids.is_empty(), "dataset has no training examples");
    ensure!(!val_ids.is_empty(), "dataset has no validation examples");

    let mut bundle = build_bundle(cfg, ds)?;
    let o = &cfg.optimizer;
    let mut task_opt = Adam::new(bundle.task_lr, o.beta1, o.beta2, o.eps, &bundle.task);
    let mut proj_opt = Adam::new(bundle.projection_lr, o.beta1, o.beta2, o.eps, &bundle.projection);

    let mode = cfg.objective.mode;
    let n = cfg.neighborhood.n;
    let use_neighbors = mode.uses_neighbors() && n > 0;
    let policy = RefreshPolicy::new(cfg.neighborhood.refresh_period, n, mode == Mode::Ours)?;
    let spec = validation_spec(ds.kind, &cfg.eval);
    let mut history = RunHistory {
        metric: spec.name.clone(),
        best_metric: if spec.higher_is_better { f64::NEG_INFINITY } else { f64::INFINITY },
        ..Default::default()
    };

    let mut index = if use_neighbors {
        ensure!(
            n < train_ids.len(),
            "neighborhood.n = {n} needs more than {} training examples",
            train_ids.len()
        );
        history.refreshes.push(RefreshEvent { step: 0, version: 0 });
        Some(index_train(&bundle, ds, &train_ids, n, 0)?)
    } else {
        None
    };

    let mut batcher = Batcher {
        order: (0..train_ids.len()).collect(),
        cursor: train_ids.len(),
        rng: stream_rng(cfg.seed, Stream::Batching),
    };
    let mut neg_rng = stream_rng(cfg.seed, Stream::Negatives);
    let mut best = bundle.clone();
    let mut since_best = 0usize;

    for step in 0..cfg.max_steps {
        if let Some(idx) = index.as_mut() {
            if policy.due(step) {
                *idx = index_train(&bundle, ds, &train_ids, n, step)?;
                history.refreshes.push(RefreshEvent {
                    step,
                    version: idx.version(),
                });
                debug!("step {step}: neighborhood refreshed");
            }
        }
        let positions = batcher.next(cfg.batch_size);
        let batch = assemble_batch(index.as_ref(), &positions, Some((&policy, step)))?;
        let batch = to_dataset_ids(batch, &train_ids);
        let negatives: Vec<Vec<usize>> = if ds.kind == TaskKind::Multilabel {
            batch
                .entries
                .iter()
                .map(|e| {
                    sample_negatives(
                        &ds.observed[e.example],
                        ds.outputs,
                        cfg.objective.negative_ratio,
                        &mut neg_rng,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };

        let mut g = Graph::new();
        let out = total_objective(&mut g, &cfg.objective, &bundle, ds, &batch, &negatives)
            .map_err(|e| collapse_context(e, step))?;
        let loss = g.value(out.loss).item();
        if !loss.is_finite() {
            bail!("training diverged at step {step}: loss {loss}");
        }
        let grads = g.backward(out.loss)?;
        let task_grads: Vec<_> = out
            .task_params
            .iter()
            .zip(bundle.task.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect();
        task_opt.step(&mut bundle.task, &task_grads)?;
        if let Some(pv) = &out.projection_params {
            let proj_grads: Vec<_> = pv
                .iter()
                .zip(bundle.projection.tensors())
                .map(|(&v, t)| grads.get_or_zeros(v, t))
                .collect();
            proj_opt.step(&mut bundle.projection, &proj_grads)?;
        }
        history.train_loss.push(loss);
        history.forward_passes_per_step = out.forward_passes;
        history.steps_run = step + 1;

        let done = step + 1 == cfg.max_steps;
        if (step + 1) % cfg.eval_every == 0 || done {
            let metric = validation_metric(&bundle, ds, &val_ids, &cfg.eval, cfg.seed)?;
            ensure!(metric.is_finite(), "validation metric is {metric} at step {}", step + 1);
            history.evals.push(EvalPoint {
                step: step + 1,
                metric,
            });
            if spec.improves(metric, history.best_metric) {
                history.best_metric = metric;
                history.best_step = step + 1;
                best = bundle.clone();
                since_best = 0;
            } else {
                since_best += 1;
            }
            info!(
                "step {}: loss {loss:.5} validation {} {metric:.5}",
                step + 1,
                spec.name
            );
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        last: bundle,
        history,
    })
}
