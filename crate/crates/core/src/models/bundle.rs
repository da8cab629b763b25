use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::decoder::DecoderSpec;
use super::mlp::{MlpSpec, ProjectionSpec};
use super::params::ParamSet;
use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskSpec {
    Mlp(MlpSpec),
    Decoder(DecoderSpec),
}

impl TaskSpec {
    pub fn init(&self, seed: u64) -> Result<ParamSet> {
        match self {
            TaskSpec::Mlp(s) => s.init(seed),
            TaskSpec::Decoder(s) => s.init(seed),
        }
    }
}

/// Task-model parameters plus the projection `r(.)`, each with its own
/// learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub task_spec: TaskSpec,
    pub projection_spec: ProjectionSpec,
    pub task: ParamSet,
    pub projection: ParamSet,
    pub task_lr: f64,
    pub projection_lr: f64,
}

impl ModelBundle {
    /// `projection_lr` defaults to a tenth of `task_lr`.
    pub fn init(
        task_spec: TaskSpec,
        projection_spec: ProjectionSpec,
        task_lr: f64,
        projection_lr: Option<f64>,
        task_seed: u64,
        projection_seed: u64,
    ) -> Result<Self> {
        let task = task_spec.init(task_seed)?;
        let projection = projection_spec.init(projection_seed)?;
        Ok(ModelBundle {
            task_spec,
            projection_spec,
            task,
            projection,
            task_lr,
            projection_lr: projection_lr.unwrap_or(task_lr / 10.0),
        })
    }
}

const FORMAT: &str = "nt-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub task_spec: TaskSpec,
    pub projection_spec: ProjectionSpec,
    pub task_lr: f64,
    pub projection_lr: f64,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<ParamEntry>,
}

/// One JSON header line, then every parameter as little-endian `f64`s in
/// declaration order (task group first, then projection).
pub fn write_checkpoint<W: Write>(mut w: W, bundle: &ModelBundle, seed: u64, step: u64) -> Result<()> {
    let groups = [("task", &bundle.task), ("projection", &bundle.projection)];
    let params = groups
        .iter()
        .flat_map(|(group, ps)| {
            ps.iter().map(move |(name, t)| ParamEntry {
                group: group.to_string(),
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
        })
        .collect();
    let header = CheckpointHeader {
        format: FORMAT.into(),
        task_spec: bundle.task_spec.clone(),
        projection_spec: bundle.projection_spec.clone(),
        task_lr: bundle.task_lr,
        projection_lr: bundle.projection_lr,
        seed,
        step,
        params,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, ps) in groups {
        for t in ps.tensors() {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(ModelBundle, CheckpointHeader)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.format != FORMAT {
        return Err(Error::invalid(format!("unknown checkpoint format {}", header.format)));
    }
    let mut task = ParamSet::new();
    let mut projection = ParamSet::new();
    let mut buf = [0u8; 8];
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| {
                Error::invalid(format!("checkpoint payload truncated in {}", e.name))
            })?;
            data.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::new(e.shape.clone(), data)?;
        match e.group.as_str() {
            "task" => task.push(e.name.clone(), t),
            "projection" => projection.push(e.name.clone(), t),
            g => return Err(Error::invalid(format!("unknown parameter group {g}"))),
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::invalid("trailing bytes after checkpoint payload"));
    }
    let bundle = ModelBundle {
        task_spec: header.task_spec.clone(),
        projection_spec: header.projection_spec.clone(),
        task,
        projection,
        task_lr: header.task_lr,
        projection_lr: header.projection_lr,
    };
    Ok((bundle, header))
}

pub fn save_checkpoint(path: &Path, bundle: &ModelBundle, seed: u64, step: u64) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), bundle, seed, step)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelBundle, CheckpointHeader)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
