//! Adaptive semantic neighborhoods.
//!
//! The similarity kernel is `K_ij = max(0, cos(r(x_i), r(x_j)))`. The index
//! holds, for every example, its `N` most similar other examples under that
//! kernel (self excluded, ties to the lower id). Cached `K` values only
//! select neighbors; the objective recomputes `K` on the live projection so
//! gradients reach `r(.)`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Clamped cosine similarity of two embeddings.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            primitive: "similarity",
            shapes: vec![vec![a.len()], vec![b.len()]],
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok(c.max(0.0))
}

/// Differentiable `max(0, cos(a, b))` as a `[1]` node.
pub fn similarity_var(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let c = g.cosine(a, b)?;
    g.clamp_min(c, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    lists: Vec<Vec<Neighbor>>,
    n: usize,
    version: u64,
}

impl NeighborIndex {
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.lists[i]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Training step whose projection this index was built from.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Same neighbor ids and similarities, ignoring the version tag.
    pub fn same_neighbors(&self, other: &NeighborIndex) -> bool {
        self.lists == other.lists
    }

    /// CSV rows `example_id,rank,neighbor_id,k`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "example_id,rank,neighbor_id,k")?;
        for (i, list) in self.lists.iter().enumerate() {
            for (r, nb) in list.iter().enumerate() {
                writeln!(w, "{i},{r},{},{}", nb.id, nb.k)?;
            }
        }
        Ok(())
    }
}

/// Exact k-NN over the rows of `embeddings` (`[M, d]`).
pub fn build_index(embeddings: &Tensor, n: usize, version: u64) -> Result<NeighborIndex> {
    let m = embeddings.rows();
    if n == 0 || n + 1 > m {
        return Err(Error::invalid(format!(
            "neighborhood size {n} outside 1..={}",
            m.saturating_sub(1)
        )));
    }
    for i in 0..m {
        if norm(embeddings.row_slice(i)) == 0.0 {
            return Err(Error::ZeroNorm);
        }
    }
    let mut lists = Vec::with_capacity(m);
    let mut scored: Vec<Neighbor> = Vec::with_capacity(m);
    for i in 0..m {
        scored.clear();
        let ei = embeddings.row_slice(i);
        for j in (0..m).filter(|&j| j != i) {
            scored.push(Neighbor {
                id: j,
                k: similarity(ei, embeddings.row_slice(j))?,
            });
        }
        scored.sort_by(|a, b| b.k.total_cmp(&a.k).then(a.id.cmp(&b.id)));
        lists.push(scored[..n].to_vec());
    }
    Ok(NeighborIndex { lists, n, version })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefreshPolicy {
    pub period: u64,
    pub n: usize,
    pub adaptive: bool,
}

impl RefreshPolicy {
    pub fn new(period: u64, n: usize, adaptive: bool) -> Result<Self> {
        if period == 0 {
            return Err(Error::invalid("refresh period must be at least 1"));
        }
        Ok(RefreshPolicy { period, n, adaptive })
    }

    pub fn due(&self, step: u64) -> bool {
        self.adaptive && step > 0 && step.is_multiple_of(self.period)
    }

    /// Last step at which a refresh should have happened.
    pub fn last_boundary(&self, step: u64) -> u64 {
        if self.adaptive {
            step - step % self.period
        } else {
            0
        }
    }

    /// Rebuilds the index on period boundaries; otherwise returns it unchanged.
    pub fn refresh(&self, index: &NeighborIndex, embeddings: &Tensor, step: u64) -> Result<NeighborIndex> {
        if !self.due(step) {
            return Ok(index.clone());
        }
        build_index(embeddings, self.n, step)
    }
}

/// One example of a mini-batch and the neighbors whose annotations it borrows.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEntry {
    pub example: usize,
    pub neighbors: Vec<usize>,
    /// Cached similarities from the index, for inspection only.
    pub cached_k: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub entries: Vec<BatchEntry>,
}

impl Batch {
    /// Example-annotation pairings: each example with itself and its neighbors.
    pub fn pairings(&self) -> usize {
        self.entries.iter().map(|e| 1 + e.neighbors.len()).sum()
    }

    /// Every example id touched by the batch, ascending.
    pub fn touched(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .entries
            .iter()
            .flat_map(|e| std::iter::once(e.example).chain(e.neighbors.iter().copied()))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Pairs each id with its indexed neighbors. Without an index the batch is a
/// plain maximum-likelihood batch. With `strict`, an index older than the
/// policy's last refresh boundary is rejected.
pub fn assemble_batch(
    index: Option<&NeighborIndex>,
    ids: &[usize],
    policy: Option<(&RefreshPolicy, u64)>,
) -> Result<Batch> {
    if let (Some(idx), Some((p, step))) = (index, policy) {
        if idx.version() < p.last_boundary(step) {
            return Err(Error::invalid(format!(
                "stale neighbor index: version {} before boundary {}",
                idx.version(),
                p.last_boundary(step)
            )));
        }
    }
    let entries = ids
        .iter()
        .map(|&i| {
            let (neighbors, cached_k) = match index {
                Some(idx) => {
                    if i >= idx.len() {
                        return Err(Error::invalid(format!("example {i} not in index")));
                    }
                    idx.neighbors(i).iter().map(|nb| (nb.id, nb.k)).unzip()
                }
                None => (vec![], vec![]),
            };
            Ok(BatchEntry {
                example: i,
                neighbors,
                cached_k,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Batch { entries })
}

/// Live, differentiable `K` for every (example, neighbor) pair of a batch.
///
/// `embeddings` holds projected rows for `touched` (as returned by
/// [`Batch::touched`]), in the same order.
pub fn live_similarities(
    g: &mut Graph,
    batch: &Batch,
    touched: &[usize],
    embeddings: Var,
) -> Result<Vec<Vec<Var>>> {
    let pos: BTreeMap<usize, usize> = touched.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut rows: BTreeMap<usize, Var> = BTreeMap::new();
    let mut row = |g: &mut Graph, id: usize| -> Result<Var> {
        if let Some(&v) = rows.get(&id) {
            return Ok(v);
        }
        let p = *pos
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("example {id} missing from embeddings")))?;
        let v = g.gather_row(embeddings, p)?;
        rows.insert(id, v);
        Ok(v)
    };
    batch
        .entries
        .iter()
        .map(|e| {
            let ei = row(g, e.example)?;
            e.neighbors
                .iter()
                .map(|&j| {
                    let ej = row(g, j)?;
                    similarity_var(g, ei, ej)
                })
                .collect()
        })
        .collect()
}
