use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Annotation, Split, SparseDataset, TaskKind};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::models::EOS;
use crate::rng::{stream_rng, Stream};

/// Distance between any two cluster centroids.
pub const CENTROID_SPACING: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsamplePolicy {
    Count(usize),
    Fraction(f64),
}

impl SubsamplePolicy {
    fn keep(&self, n: usize) -> usize {
        match *self {
            SubsamplePolicy::Count(k) => k.min(n),
            // round half up, never below one
            SubsamplePolicy::Fraction(p) => ((p * n as f64 + 0.5).floor() as usize).clamp(1, n),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SubsamplePolicy::Count(0) => Err(Error::invalid("subsample count must be >= 1")),
            SubsamplePolicy::Fraction(p) if !(p > 0.0 && p <= 1.0) => {
                Err(Error::invalid(format!("subsample fraction {p} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// The sparse selector `g`: keeps a uniform subset of each full set, in the
/// original order.
pub fn subsample<T: Clone>(
    full: &[Vec<T>],
    policy: SubsamplePolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<T>>> {
    policy.validate()?;
    full.iter()
        .enumerate()
        .map(|(i, set)| {
            if set.is_empty() {
                return Err(Error::invalid(format!("example {i} has an empty full set")));
            }
            let mut keep = index::sample(rng, set.len(), policy.keep(set.len())).into_vec();
            keep.sort_unstable();
            Ok(keep.into_iter().map(|j| set[j].clone()).collect())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
        }
    }
}

impl SplitFractions {
    /// Shuffled assignment of `m` examples; the rest after train and
    /// validation go to test.
    pub fn assign(&self, m: usize, seed: u64) -> Result<Vec<Split>> {
        if self.train <= 0.0 || self.validation < 0.0 || self.train + self.validation > 1.0 {
            return Err(Error::invalid(format!("invalid split fractions {self:?}")));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Split));
        let n_train = ((m as f64 * self.train).round() as usize).max(1);
        let n_val = (m as f64 * self.validation).round() as usize;
        let mut splits = vec![Split::Test; m];
        for (r, &i) in order.iter().enumerate() {
            splits[i] = if r < n_train {
                Split::Train
            } else if r < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
        Ok(splits)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Centroids `spacing/sqrt(2) * e_c`: pairwise distance exactly `spacing`.
fn simplex_centroids(clusters: usize, dim: usize) -> Vec<Vec<f64>> {
    let scale = CENTROID_SPACING / 2f64.sqrt();
    (0..clusters)
        .map(|c| {
            let mut v = vec![0.0; dim];
            v[c] = scale;
            v
        })
        .collect()
}

/// Cluster standard deviation: spacing/6 at zero overlap, growing to the
/// full spacing at overlap one.
pub fn cluster_sigma(overlap: f64) -> f64 {
    CENTROID_SPACING / 6.0 * (1.0 + 5.0 * overlap)
}

fn sample_points(
    centroids: &[Vec<f64>],
    per_cluster: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<usize>) {
    let dim = centroids[0].len();
    let mut data = Vec::with_capacity(centroids.len() * per_cluster * dim);
    let mut cluster = Vec::with_capacity(centroids.len() * per_cluster);
    for (c, mu) in centroids.iter().enumerate() {
        for _ in 0..per_cluster {
            data.extend(mu.iter().map(|m| m + sigma * gaussian(rng)));
            cluster.push(c);
        }
    }
    (data, cluster)
}

/// Posterior cluster responsibilities of a point under equal priors.
fn responsibilities(x: &[f64], centroids: &[Vec<f64>], sigma: f64) -> Vec<f64> {
    let logits: Vec<f64> = centroids
        .iter()
        .map(|mu| {
            let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            -d2 / (2.0 * sigma * sigma)
        })
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::invalid(format!("{name} must be positive")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MulticlassConfig {
    pub clusters: usize,
    pub classes: usize,
    pub points_per_cluster: usize,
    pub input_dim: usize,
    pub overlap: f64,
    pub dirichlet_alpha: f64,
    /// Labels drawn from the true posterior per input (the `k` of `g`).
    pub annotations_per_input: usize,
    pub split: SplitFractions,
}

impl Default for MulticlassConfig {
    fn default() -> Self {
        MulticlassConfig {
            clusters: 8,
            classes: 6,
            points_per_cluster: 40,
            input_dim: 10,
            overlap: 0.2,
            dirichlet_alpha: 1.0,
            annotations_per_input: 1,
            split: SplitFractions::default(),
        }
    }
}

/// Per-cluster class distribution: a Dirichlet draw mixed with mass 0.1 on
/// each of its two largest classes, so every cluster has at least two modes.
fn cluster_posterior(classes: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    // Dirichlet via normalised Gamma draws
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(format!("gamma: {e}")))?;
    let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let p: Vec<f64> = draws.iter().map(|v| v / total).collect();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut q: Vec<f64> = p.iter().map(|v| 0.8 * v).collect();
    q[order[0]] += 0.1;
    q[order[1]] += 0.1;
    let s: f64 = q.iter().sum();
    Ok(q.into_iter().map(|v| v / s).collect())
}

fn sample_class(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return c;
        }
    }
    p.len() - 1
}

/// Gaussian clusters, each with a multi-modal class distribution. The true
/// posterior of every input (responsibility-weighted mixture of cluster
/// distributions) is recorded.
pub fn gen_multiclass(cfg: &MulticlassConfig, seed: u64) -> Result<SparseDataset> {
    if cfg.classes < 3 || cfg.clusters < 2 {
        return Err(Error::invalid("need at least 3 classes and 2 clusters"));
    }
    if !(0.0..=1.0).contains(&cfg.overlap) {
        return Err(Error::invalid(format!("overlap {} outside [0, 1]", cfg.overlap)));
    }
    if cfg.input_dim < cfg.clusters {
        return Err(Error::invalid("input_dim must be at least the cluster count"));
    }
    if cfg.dirichlet_alpha <= 0.0 {
        return Err(Error::invalid("dirichlet_alpha must be positive"));
    }
    check_positive("points_per_cluster", cfg.points_per_cluster)?;
    check_positive("annotations_per_input", cfg.annotations_per_input)?;

    let mut rng = stream_rng(seed, Stream::Generator);
    let cluster_post: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|_| cluster_posterior(cfg.classes, cfg.dirichlet_alpha, &mut rng))
        .collect::<Result<_>>()?;
    let centroids = simplex_centroids(cfg.clusters, cfg.input_dim);
    let sigma = cluster_sigma(cfg.overlap);
    let (data, cluster) = sample_points(&centroids, cfg.points_per_cluster, sigma, &mut rng);
    let m = cluster.len();
    let features = Tensor::matrix(m, cfg.input_dim, data)?;

    let mut posterior = Vec::with_capacity(m * cfg.classes);
    for i in 0..m {
        let r = responsibilities(features.row_slice(i), &centroids, sigma);
        for y in 0..cfg.classes {
            posterior.push((0..cfg.clusters).map(|c| r[c] * cluster_post[c][y]).sum());
        }
    }

    let mut label_rng = stream_rng(seed, Stream::Subsample);
    let observed = cluster
        .iter()
        .map(|&c| {
            (0..cfg.annotations_per_input)
                .map(|_| vec![sample_class(&cluster_post[c], &mut label_rng)])
                .collect()
        })
        .collect();

    let ds = SparseDataset {
        kind: TaskKind::Multiclass,
        generator: "multiclass-toy".into(),
        config: serde_json::to_value(cfg)?,
        seed,
        features,
        regions: None,
        outputs: cfg.classes,
        observed,
        full: None,
        posterior: Some(Tensor::matrix(m, cfg.classes, posterior)?),
        splits: cfg.split.assign(m, seed)?,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultilabelConfig {
    pub clusters: usize,
    pub labels: usize,
    pub points_per_cluster: usize,
    pub positives_per_cluster: usize,
    pub input_dim: usize,
    pub overlap: f64,
    /// Per-label probability of flipping an example's label away from its
    /// cluster's set.
    pub flip_noise: f64,
    pub observe: SubsamplePolicy,
    pub split: SplitFractions,
}

impl Default for MultilabelConfig {
    fn default() -> Self {
        MultilabelConfig {
            clusters: 10,
            labels: 40,
            points_per_cluster: 30,
            positives_per_cluster: 10,
            input_dim: 12,
            overlap: 0.2,
            flip_noise: 0.05,
            observe: SubsamplePolicy::Count(1),
            split: SplitFractions::default(),
        }
    }
}

/// Clusters with fixed positive label sets; examples inherit their cluster's
/// set with per-label flip noise. The full set is kept for evaluation and
/// `observe` decides what training sees.
pub fn gen_multilabel(cfg: &MultilabelConfig, seed: u64) -> Result<SparseDataset> {
    check_positive("labels", cfg.labels)?;
    check_positive("clusters", cfg.clusters)?;
    check_positive("points_per_cluster", cfg.points_per_cluster)?;
    check_positive("positives_per_cluster", cfg.positives_per_cluster)?;
    if cfg.positives_per_cluster > cfg.labels {
        return Err(Error::invalid("positives_per_cluster exceeds labels"));
    }
    if cfg.input_dim < cfg.clusters {
        return Err(Error::invalid("input_dim must be at least the cluster count"));
    }
    if !(0.0..=1.0).contains(&cfg.overlap) || !(0.0..=1.0).contains(&cfg.flip_noise) {
        return Err(Error::invalid("overlap and flip_noise must lie in [0, 1]"));
    }

    let mut rng = stream_rng(seed, Stream::Generator);
    let cluster_sets: Vec<Vec<usize>> = (0..cfg.clusters)
        .map(|_| {
            let mut s = index::sample(&mut rng, cfg.labels, cfg.positives_per_cluster).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    let centroids = simplex_centroids(cfg.clusters, cfg.input_dim);
    let (data, cluster) = sample_points(
        &centroids,
        cfg.points_per_cluster,
        cluster_sigma(cfg.overlap),
        &mut rng,
    );
    let m = cluster.len();

    let full: Vec<Vec<Annotation>> = cluster
        .iter()
        .map(|&c| {
            let base = &cluster_sets[c];
            let mut set: Vec<usize> = (0..cfg.labels)
                .filter(|l| {
                    let pos = base.binary_search(l).is_ok();
                    let flip = cfg.flip_noise > 0.0 && rng.random::<f64>() < cfg.flip_noise;
                    pos != flip
                })
                .collect();
            if set.is_empty() {
                set.push(base[rng.random_range(0..base.len())]);
            }
            set.into_iter().map(|l| vec![l]).collect()
        })
        .collect();
    let observed = subsample(&full, cfg.observe, &mut stream_rng(seed, Stream::Subsample))?;

    let ds = SparseDataset {
        kind: TaskKind::Multilabel,
        generator: "multilabel-toy".into(),
        config: serde_json::to_value(cfg)?,
        seed,
        features: Tensor::matrix(m, cfg.input_dim, data)?,
        regions: None,
        outputs: cfg.labels,
        observed,
        full: Some(full),
        posterior: None,
        splits: cfg.split.assign(m, seed)?,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub templates: usize,
    pub inputs: usize,
    /// Distinct visual concepts; each has a region prototype and an object word.
    pub concepts: usize,
    pub regions_per_input: usize,
    pub region_width: usize,
    pub region_noise: f64,
    pub observe: SubsamplePolicy,
    pub split: SplitFractions,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            templates: 8,
            inputs: 300,
            concepts: 8,
            regions_per_input: 3,
            region_width: 8,
            region_noise: 0.3,
            observe: SubsamplePolicy::Count(1),
            split: SplitFractions::default(),
        }
    }
}

pub const REFERENCES_PER_INPUT: usize = 5;
const CONNECTORS: usize = 3;

/// Token layout of the toy grounded-sequence vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceVocab {
    pub templates: usize,
    pub concepts: usize,
}

impl SequenceVocab {
    pub fn prefix(&self, t: usize) -> usize {
        1 + t
    }
    pub fn connector(&self, c: usize) -> usize {
        1 + self.templates + c
    }
    pub fn object(&self, concept: usize) -> usize {
        1 + self.templates + CONNECTORS + concept
    }
    pub fn size(&self) -> usize {
        1 + self.templates + CONNECTORS + self.concepts
    }
}

/// Inputs are bags of region vectors, each a noisy copy of a concept
/// prototype. Every input admits exactly five references built from
/// templates `[prefix, object(a), connector, object(b), EOS]` over its
/// sorted concepts; the template set depends on the bag's smallest concept,
/// so inputs that share regions share sequence fragments.
pub fn gen_sequences(cfg: &SequenceConfig, seed: u64) -> Result<SparseDataset> {
    if cfg.templates < REFERENCES_PER_INPUT {
        return Err(Error::invalid("need at least 5 templates"));
    }
    if cfg.regions_per_input < 2 || cfg.regions_per_input > cfg.concepts {
        return Err(Error::invalid("regions_per_input must lie in 2..=concepts"));
    }
    check_positive("inputs", cfg.inputs)?;
    check_positive("region_width", cfg.region_width)?;
    if cfg.region_noise < 0.0 {
        return Err(Error::invalid("region_noise must be non-negative"));
    }
    let vocab = SequenceVocab {
        templates: cfg.templates,
        concepts: cfg.concepts,
    };
    let k = cfg.regions_per_input;
    let mut rng = stream_rng(seed, Stream::Generator);
    let prototypes: Vec<Vec<f64>> = (0..cfg.concepts)
        .map(|_| (0..cfg.region_width).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let template_sets: Vec<Vec<usize>> = (0..cfg.concepts)
        .map(|_| {
            let mut s = index::sample(&mut rng, cfg.templates, REFERENCES_PER_INPUT).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();

    let mut data = Vec::with_capacity(cfg.inputs * k * cfg.region_width);
    let mut full = Vec::with_capacity(cfg.inputs);
    for _ in 0..cfg.inputs {
        let mut bag = index::sample(&mut rng, cfg.concepts, k).into_vec();
        for &c in &bag {
            data.extend(
                prototypes[c]
                    .iter()
                    .map(|p| p + cfg.region_noise * gaussian(&mut rng)),
            );
        }
        bag.sort_unstable();
        let refs: Vec<Annotation> = template_sets[bag[0]]
            .iter()
            .map(|&t| {
                let (a, b) = pairs[t % pairs.len()];
                vec![
                    vocab.prefix(t),
                    vocab.object(bag[a]),
                    vocab.connector(t % CONNECTORS),
                    vocab.object(bag[b]),
                    EOS,
                ]
            })
            .collect();
        full.push(refs);
    }
    let observed = subsample(&full, cfg.observe, &mut stream_rng(seed, Stream::Subsample))?;

    let ds = SparseDataset {
        kind: TaskKind::Sequence,
        generator: "sequence-toy".into(),
        config: serde_json::to_value(cfg)?,
        seed,
        features: Tensor::matrix(cfg.inputs, k * cfg.region_width, data)?,
        regions: Some((k, cfg.region_width)),
        outputs: vocab.size(),
        observed,
        full: Some(full),
        posterior: None,
        splits: cfg.split.assign(cfg.inputs, seed)?,
    };
    ds.validate()?;
    Ok(ds)
}
