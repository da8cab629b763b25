use serde::{Deserialize, Serialize};

use super::params::{Initializer, ParamSet};
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// How downstream objectives read the final layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    SoftmaxMulticlass,
    SigmoidMultilabel,
    None,
}

/// Fully connected network; `widths[0]` is the input width and the last entry
/// the output width. Hidden layers use relu, the last layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, head: Head) -> Self {
        MlpSpec { widths, head }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid("mlp needs at least one layer"));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid(format!(
                "zero-width layer in {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn init(&self, seed: u64) -> Result<ParamSet> {
        self.validate()?;
        let mut init = Initializer::new(seed);
        let mut ps = ParamSet::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            ps.push(format!("layer{l}.weight"), init.uniform(vec![w[0], w[1]], w[0])?);
            ps.push(format!("layer{l}.bias"), init.zeros(vec![w[1]])?);
        }
        Ok(ps)
    }
}

/// Semantic projection network `r(x)`; by default two hidden layers of 512.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl ProjectionSpec {
    pub fn new(input: usize, output: usize) -> Self {
        ProjectionSpec {
            input,
            hidden: vec![512, 512],
            output,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn mlp(&self) -> MlpSpec {
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.output);
        MlpSpec::new(widths, Head::None)
    }

    pub fn init(&self, seed: u64) -> Result<ParamSet> {
        self.mlp().init(seed)
    }
}

/// Logits for a `[B, in]` batch (or a single `[in]` vector, treated as one row).
pub fn mlp_forward(g: &mut Graph, spec: &MlpSpec, params: &[Var], input: Var) -> Result<Var> {
    let layers = spec.widths.len() - 1;
    if params.len() != 2 * layers {
        return Err(Error::invalid(format!(
            "mlp expects {} parameter tensors, got {}",
            2 * layers,
            params.len()
        )));
    }
    let shape = g.value(input).shape().to_vec();
    let mut h = match shape.as_slice() {
        [n] => g.reshape(input, vec![1, *n])?,
        [_, _] => input,
        _ => {
            return Err(Error::Shape {
                primitive: "mlp_forward",
                shapes: vec![shape],
            })
        }
    };
    if g.value(h).cols() != spec.input_width() {
        return Err(Error::Shape {
            primitive: "mlp_forward",
            shapes: vec![g.value(h).shape().to_vec(), vec![spec.input_width()]],
        });
    }
    for l in 0..layers {
        h = g.matmul(h, params[2 * l])?;
        h = g.add_row(h, params[2 * l + 1])?;
        if l + 1 < layers {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// Embeddings `r(x)` for a batch of feature rows.
pub fn project(g: &mut Graph, spec: &ProjectionSpec, params: &[Var], features: Var) -> Result<Var> {
    mlp_forward(g, &spec.mlp(), params, features)
}

/// Evaluates the projection for every row of `features` without recording
/// gradients.
pub fn project_rows(spec: &ProjectionSpec, params: &ParamSet, features: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let vars = params.bind(&mut g, false);
    let x = g.input(features.clone());
    let e = project(&mut g, spec, &vars, x)?;
    Ok(g.value(e).clone())
}

/// Task logits for every row of `features` without recording gradients.
pub fn mlp_rows(spec: &MlpSpec, params: &ParamSet, features: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let vars = params.bind(&mut g, false);
    let x = g.input(features.clone());
    let y = mlp_forward(&mut g, spec, &vars, x)?;
    Ok(g.value(y).clone())
}
