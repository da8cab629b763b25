use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::models::global_feature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Multiclass,
    Multilabel,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One observed output: `[class]`, `[label]`, or a token sequence ending in EOS.
pub type Annotation = Vec<usize>;

/// Inputs with sparse observed annotations, plus whatever evaluation targets
/// the source knows (full output sets, true posteriors).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDataset {
    pub kind: TaskKind,
    pub generator: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// `[M, d]`. For sequence tasks each row is `regions * region_width`
    /// region features laid out region by region.
    pub features: Tensor,
    /// `(k, width)` of the region bag for sequence tasks.
    pub regions: Option<(usize, usize)>,
    /// Number of classes, labels, or vocabulary size.
    pub outputs: usize,
    pub observed: Vec<Vec<Annotation>>,
    pub full: Option<Vec<Vec<Annotation>>>,
    pub posterior: Option<Tensor>,
    pub splits: Vec<Split>,
}

impl SparseDataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        self.features.row_slice(i)
    }

    /// `[k, width]` region features of example `i`.
    pub fn region_tensor(&self, i: usize) -> Result<Tensor> {
        let (k, w) = self
            .regions
            .ok_or_else(|| Error::invalid("dataset has no region features"))?;
        Tensor::matrix(k, w, self.feature_row(i).to_vec())
    }

    /// Rows fed to the projection network: raw features, or the global
    /// (mean) region feature for sequence inputs.
    pub fn projection_row(&self, i: usize) -> Result<Vec<f64>> {
        match self.regions {
            None => Ok(self.feature_row(i).to_vec()),
            Some(_) => Ok(global_feature(&self.region_tensor(i)?).into_data()),
        }
    }

    pub fn projection_width(&self) -> usize {
        match self.regions {
            None => self.features.cols(),
            Some((_, w)) => w,
        }
    }

    /// Projection inputs for the given ids, `[ids.len(), width]`.
    pub fn projection_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(ids.len() * self.projection_width());
        for &i in ids {
            data.extend(self.projection_row(i)?);
        }
        Tensor::matrix(ids.len(), self.projection_width(), data)
    }

    pub fn feature_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let d = self.features.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(self.feature_row(i));
        }
        Tensor::matrix(ids.len(), d, data)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if self.observed.len() != m || self.splits.len() != m {
            return Err(Error::invalid("annotation or split count differs from input count"));
        }
        if let Some(full) = &self.full {
            if full.len() != m {
                return Err(Error::invalid("full annotation count differs from input count"));
            }
        }
        for (i, obs) in self.observed.iter().enumerate() {
            if obs.is_empty() {
                return Err(Error::invalid(format!("example {i} has no annotation")));
            }
            for a in obs {
                if a.is_empty() || a.iter().any(|&t| t >= self.outputs) {
                    return Err(Error::invalid(format!("example {i}: bad annotation {a:?}")));
                }
            }
        }
        for (r, row) in self.features.data().chunks(self.features.cols()).enumerate() {
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::invalid(format!("NaN feature in row {r}")));
            }
        }
        if let Some(p) = &self.posterior {
            if p.rows() != m || p.cols() != self.outputs {
                return Err(Error::invalid("posterior shape mismatch"));
            }
            for (r, row) in p.data().chunks(p.cols()).enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("posterior row {r} sums to {s}")));
                }
            }
        }
        if let Some((k, w)) = self.regions {
            if k * w != self.features.cols() {
                return Err(Error::invalid("region layout does not match feature width"));
            }
        }
        Ok(())
    }
}
