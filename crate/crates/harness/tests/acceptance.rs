//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stderr so the verdicts show up even when output capture
//! is on.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nt_core::diff::{finite_difference_check, Graph, Tensor, Var};
use nt_core::metrics::{distinct_ngrams, kl_divergence, precision_at_k, recall_m_at_k};
use nt_core::models::{
    beam_search, decoder_context, project_rows, sequence_log_prob, DecoderSpec, ModelBundle, ParamSet, EOS,
};
use nt_core::neighborhood::{build_index, Batch, BatchEntry};
use nt_core::objectives::{
    annotation_loss, neighbor_transfer_loss, objective_from_vars, smoothed_targets, LossKind, Mode,
    ObjectiveConfig, RowScores,
};
use nt_core::synthgen::{SparseDataset, Split};
use nt_harness::config::ExperimentConfig;
use nt_harness::runner::{load_or_generate, run_experiment, run_in_memory, HISTORY_JSON, REPORT_CSV, REPORT_JSON};
use nt_harness::train::{build_bundle, train};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;

fn verdict(n: u32, pass: bool, detail: &str, started: Instant) {
    let word = if pass { "PASS" } else { "FAIL" };
    let secs = started.elapsed().as_secs_f64();
    let _ = writeln!(std::io::stderr(), "criterion {n}: {word} ({detail}; {secs:.1}s)");
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json_str(text).unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

/// Test metrics of `base` under `mode` for seeds 1..=SEEDS.
fn seed_runs(base: &ExperimentConfig, mode: Mode) -> Vec<BTreeMap<String, f64>> {
    (1..=SEEDS)
        .map(|s| {
            let mut cfg = base.clone().with_mode(mode);
            cfg.seed = s;
            run_in_memory(&cfg).unwrap().report.metrics
        })
        .collect()
}

fn median_of(runs: &[BTreeMap<String, f64>], key: &str) -> f64 {
    median(runs.iter().map(|m| m[key]).collect())
}

// ---------------------------------------------------------------- gradients

fn tiny_config(task: &str) -> ExperimentConfig {
    let generator = match task {
        "multiclass-toy" => r#"{"clusters": 3, "classes": 3, "points_per_cluster": 8, "input_dim": 3}"#,
        "multilabel-toy" => {
            r#"{"clusters": 3, "labels": 5, "points_per_cluster": 8, "positives_per_cluster": 2, "input_dim": 3,
                "observe": {"count": 2}}"#
        }
        _ => r#"{"templates": 5, "inputs": 16, "concepts": 3, "regions_per_input": 2, "region_width": 2}"#,
    };
    config(&format!(
        r#"{{"task": "{task}", "seed": 1, "generator": {generator},
            "model": {{"hidden": [4], "projection_hidden": [4], "embedding_dim": 3,
                       "token_embed": 3, "state": 3, "attention": 2}}}}"#
    ))
}

fn randomize(ps: &mut ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    for t in ps.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// A random batch of two examples with two neighbors each.
fn random_batch(ds: &SparseDataset, rng: &mut ChaCha8Rng) -> Batch {
    let train = ds.ids(Split::Train);
    let entries = (0..2)
        .map(|_| {
            let pick = index::sample(rng, train.len(), 3).into_vec();
            BatchEntry {
                example: train[pick[0]],
                neighbors: vec![train[pick[1]], train[pick[2]]],
                cached_k: Vec::new(),
            }
        })
        .collect();
    Batch { entries }
}

/// Projection embeddings of every example the batch touches are away from
/// zero and no two are (anti)parallel, so cosine is smooth at the instance.
fn well_conditioned(bundle: &ModelBundle, ds: &SparseDataset, batch: &Batch) -> bool {
    let ids = batch.touched();
    let emb = project_rows(&bundle.projection_spec, &bundle.projection, &ds.projection_rows(&ids).unwrap()).unwrap();
    let norm_ok = (0..ids.len()).all(|i| emb.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt() > 0.1);
    let pos = |id: usize| ids.iter().position(|&x| x == id).unwrap();
    norm_ok
        && batch.entries.iter().all(|e| {
            e.neighbors
                .iter()
                .all(|&j| cosine(emb.row_slice(pos(e.example)), emb.row_slice(pos(j))).abs() < 0.99)
        })
}

/// Worst relative error of the full objective over `trials` random
/// instances, plus the number of coordinates compared.
fn objective_gradcheck(task: &str, mode: Mode, trials: u64) -> (f64, usize) {
    let cfg = tiny_config(task);
    let ds = load_or_generate(&cfg).unwrap();
    let template = build_bundle(&cfg, &ds).unwrap();
    let uses_projection = matches!(mode, Mode::Ours | Mode::NoRefine);
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + trial);
        let obj = ObjectiveConfig {
            lambda: rng.random_range(0.1..2.0),
            mu: rng.random_range(0.1..2.0),
            mode,
            l2_weight: 0.01,
            negative_ratio: 1.0,
        };
        let mut bundle = template.clone();
        randomize(&mut bundle.task, &mut rng, 1.0);
        let batch = random_batch(&ds, &mut rng);
        loop {
            randomize(&mut bundle.projection, &mut rng, 1.0);
            if well_conditioned(&bundle, &ds, &batch) {
                break;
            }
        }
        let negatives: Vec<Vec<usize>> = batch
            .entries
            .iter()
            .map(|e| {
                let obs = &ds.observed[e.example];
                (0..ds.outputs).filter(|l| !obs.iter().any(|a| a.contains(l))).take(2).collect()
            })
            .collect();
        let n_task = bundle.task.tensors().count();
        let mut params: Vec<Tensor> = bundle.task.tensors().cloned().collect();
        if uses_projection {
            params.extend(bundle.projection.tensors().cloned());
        }
        let f = |g: &mut Graph, p: &[Var]| {
            let proj = uses_projection.then(|| p[n_task..].to_vec());
            let out = objective_from_vars(g, &obj, &bundle, p[..n_task].to_vec(), proj, &ds, &batch, &negatives)?;
            Ok(out.loss)
        };
        let r = finite_difference_check(f, &params, 1e-5).unwrap();
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    (worst, checked)
}

#[test]
fn criterion_1_gradients() {
    let t = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for task in ["multiclass-toy", "multilabel-toy", "sequence-toy"] {
        for mode in Mode::ALL {
            let (worst, checked) = objective_gradcheck(task, mode, 100);
            let ok = worst < 1e-4 && checked > 0;
            pass &= ok;
            if !ok {
                details.push(format!("{task}/{}: {worst:.2e}", mode.name()));
            }
        }
    }
    let detail = if pass {
        "15 task/mode objectives x 100 instances, rel error < 1e-4".to_string()
    } else {
        details.join(", ")
    };
    verdict(1, pass, &detail, t);
    assert!(pass, "{detail}");
}

// ------------------------------------------------------------- degeneracy

#[test]
fn criterion_2_mle_degeneracy() {
    let t = Instant::now();
    let ours = config(
        r#"{"task": "multiclass-toy", "seed": 3,
            "model": {"hidden": [32], "projection_hidden": [32, 32], "embedding_dim": 16},
            "objective": {"mode": "ours", "lambda": 0, "mu": 0},
            "optimizer": {"task_lr": 0.005},
            "batch_size": 32, "max_steps": 500, "eval_every": 50, "patience": 1000,
            "neighborhood": {"n": 10, "refresh_period": 100}}"#,
    );
    let mle = ours.clone().with_mode(Mode::Mle);
    let ds = load_or_generate(&ours).unwrap();
    let a = train(&ours, &ds).unwrap();
    let b = train(&mle, &ds).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let same_loss = bits(&a.history.train_loss) == bits(&b.history.train_loss);
    let bits_params = |p: &ParamSet| p.tensors().flat_map(|t| bits(t.data())).collect::<Vec<_>>();
    let same_params = bits_params(&a.last.task) == bits_params(&b.last.task)
        && bits_params(&a.best.task) == bits_params(&b.best.task);
    let same_evals = a.history.evals == b.history.evals;
    let pass = a.history.steps_run == 500 && same_loss && same_params && same_evals;
    verdict(
        2,
        pass,
        &format!("500 steps: losses equal {same_loss}, parameters equal {same_params}, evals equal {same_evals}"),
        t,
    );
    assert!(pass);
}

// --------------------------------------------------------------- identities

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

#[test]
fn criterion_3_label_smoothing_identity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(2..10);
        let n = rng.random_range(1..8);
        let lambda: f64 = rng.random_range(0.0..3.0);
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut k: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        k[0] += 1e-3;

        let mut g = Graph::new();
        let z = g.input(Tensor::row(logits.clone()));
        let lp = g.log_softmax(z).unwrap();
        let row = RowScores {
            node: lp,
            offset: 0,
            width: c,
        };
        let zero = g.constant_scalar(0.0);
        let losses: Vec<_> = classes
            .iter()
            .map(|&y| annotation_loss(&mut g, LossKind::SoftmaxCe, row, &[vec![y]]).unwrap())
            .collect();
        let kv: Vec<_> = k.iter().map(|&v| g.constant_scalar(v)).collect();
        let total = neighbor_transfer_loss(&mut g, zero, &losses, &kv, lambda).unwrap();
        let got = g.value(total).item();

        let q = smoothed_targets(&classes, &k, c).unwrap();
        let lsm = log_softmax(&logits);
        let ce: f64 = -q.iter().zip(&lsm).map(|(a, b)| a * b).sum::<f64>();
        let want = lambda * k.iter().sum::<f64>() / n as f64 * ce;
        worst = worst.max((got - want).abs());
    }
    let pass = worst <= 1e-10;
    verdict(3, pass, &format!("1000 instances, max abs error {worst:.1e}"), t);
    assert!(pass);
}

#[test]
fn criterion_4_similarity_gradient_identity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst, mut negative) = (0.0f64, 0usize);
    for _ in 0..100 {
        let c = rng.random_range(2..8);
        let n = rng.random_range(1..7);
        let lambda: f64 = rng.random_range(0.1..3.0);
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let own_class = rng.random_range(0..c);
        let mut g = Graph::new();
        let z = g.input(Tensor::row(logits.clone()));
        let lp = g.log_softmax(z).unwrap();
        let row = RowScores {
            node: lp,
            offset: 0,
            width: c,
        };
        let own = annotation_loss(&mut g, LossKind::SoftmaxCe, row, &[vec![own_class]]).unwrap();
        let losses: Vec<_> = classes
            .iter()
            .map(|&y| annotation_loss(&mut g, LossKind::SoftmaxCe, row, &[vec![y]]).unwrap())
            .collect();
        let k: Vec<_> = (0..n).map(|_| g.param(Tensor::scalar(rng.random_range(0.0..1.0)))).collect();
        let total = neighbor_transfer_loss(&mut g, own, &losses, &k, lambda).unwrap();
        let grads = g.backward(total).unwrap();
        let lsm = log_softmax(&logits);
        for (j, &y) in classes.iter().enumerate() {
            let measured = grads.get(k[j]).unwrap().item();
            let expected = lambda * -lsm[y] / n as f64;
            negative += usize::from(measured < 0.0);
            worst = worst.max((measured - expected).abs() / expected.abs());
        }
    }
    let pass = worst <= 1e-6 && negative == 0;
    verdict(
        4,
        pass,
        &format!("100 instances, max rel error {worst:.1e}, negative gradients {negative}"),
        t,
    );
    assert!(pass);
}

// ------------------------------------------------------------------ oracles

fn index_matches_brute_force(rng: &mut ChaCha8Rng, m: usize) -> bool {
    let d = rng.random_range(2..6);
    let emb = Tensor::matrix(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let n = (m - 1).min(10);
    let idx = build_index(&emb, n, 0).unwrap();
    (0..m).all(|i| {
        let mut all: Vec<(f64, usize)> = (0..m)
            .filter(|&j| j != i)
            .map(|j| (cosine(emb.row_slice(i), emb.row_slice(j)).max(0.0), j))
            .collect();
        all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        let got = idx.neighbors(i);
        got.len() == n
            && got
                .iter()
                .zip(&all)
                .all(|(nb, (k, j))| nb.id == *j && (nb.k - k).abs() < 1e-12)
    })
}

/// Every sequence a decoder capped at `max_len` can emit.
fn all_outputs(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for t in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for tok in 0..vocab {
                let mut s = p.clone();
                s.push(tok);
                if tok == EOS || t + 1 == max_len {
                    out.push(s);
                } else {
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    out
}

fn beam_matches_exhaustive(seed: u64) -> bool {
    let spec = DecoderSpec {
        vocab: 3,
        embed: 3,
        hidden: 4,
        regions: 2,
        region_width: 3,
        attention: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = spec.init(seed).unwrap();
    randomize(&mut params, &mut rng, 2.0);
    let regions = Tensor::matrix(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let score = |seq: &[usize]| {
        let mut g = Graph::inference();
        let vars = params.bind(&mut g, false);
        let ctx = decoder_context(&mut g, &spec, &vars, &regions).unwrap();
        let mut toks = seq.to_vec();
        let cut = toks.last() != Some(&EOS);
        if cut {
            toks.push(EOS);
        }
        let terms = sequence_log_prob(&mut g, &spec, &vars, &ctx, &toks).unwrap();
        let used = terms.log_probs.len() - usize::from(cut);
        terms.log_probs[..used].iter().map(|&v| g.value(v).item()).sum::<f64>()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for s in all_outputs(3, 3) {
        let lp = score(&s);
        if best.as_ref().is_none_or(|(b, _)| lp > *b) {
            best = Some((lp, s));
        }
    }
    let (lp, seq) = best.unwrap();
    let hyps = beam_search(&spec, &params, &regions, 27, 3).unwrap();
    hyps[0].tokens == seq && (hyps[0].log_prob - lp).abs() < 1e-12
}

#[test]
fn criterion_5_oracle_equivalences() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let index_ok = [2usize, 3, 10, 57, 128, 200]
        .iter()
        .all(|&m| index_matches_brute_force(&mut rng, m));
    let beam_ok = (0..20).all(beam_matches_exhaustive);

    let kl = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
    let kl_want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    let kl_ok = (kl - kl_want).abs() < 1e-15 && (kl - 0.14384).abs() < 5e-6;
    let precision_ok = precision_at_k(&[0.9, 0.5, 0.1], &[0, 2], 2).unwrap() == 0.5;
    let pool = [-0.1, -5.0, -0.2, -6.0, -0.3, -0.4, -7.0, -8.0];
    let recall_ok = recall_m_at_k(&pool, &[0, 2, 4, 5, 7], 5).unwrap() == 4.0
        && recall_m_at_k(&pool, &[1, 3, 6, 0, 2], 3).unwrap() == 2.0
        && recall_m_at_k(&pool, &[0, 2, 4, 5, 1], 5).unwrap() == 5.0;
    let distinct_ok = distinct_ngrams(&[vec![4, 4, 4]], 1).unwrap() == 1.0 / 3.0;

    let pass = index_ok && beam_ok && kl_ok && precision_ok && recall_ok && distinct_ok;
    verdict(
        5,
        pass,
        &format!(
            "index {index_ok}, beam {beam_ok}, kl {kl_ok} ({kl:.5}), precision {precision_ok}, \
             recall {recall_ok}, distinct {distinct_ok}"
        ),
        t,
    );
    assert!(pass);
}

// ------------------------------------------------------------------- trends

#[test]
fn criterion_6_multiclass_kl() {
    let t = Instant::now();
    let base = config(
        r#"{"task": "multiclass-toy", "seed": 1,
            "model": {"hidden": [32], "projection_hidden": [32, 32], "embedding_dim": 16},
            "optimizer": {"task_lr": 0.005},
            "objective": {"lambda": 8.0, "mu": 1.0},
            "batch_size": 32, "max_steps": 3000, "eval_every": 25, "patience": 10,
            "neighborhood": {"n": 20, "refresh_period": 100}}"#,
    );
    let ours = median_of(&seed_runs(&base, Mode::Ours), "kl");
    let mle = median_of(&seed_runs(&base, Mode::Mle), "kl");
    let pass = ours <= 0.9 * mle;
    verdict(
        6,
        pass,
        &format!(
            "median KL ours {ours:.4} vs mle {mle:.4}, relative gain {:.1}%",
            100.0 * (1.0 - ours / mle)
        ),
        t,
    );
    assert!(pass);
}

fn multilabel_base(observe: &str) -> ExperimentConfig {
    config(&format!(
        r#"{{"task": "multilabel-toy", "seed": 1, "generator": {{"observe": {observe}}},
            "model": {{"hidden": [32], "projection_hidden": [32, 32], "embedding_dim": 16}},
            "optimizer": {{"task_lr": 0.002}},
            "objective": {{"lambda": 4.0, "mu": 1.0}},
            "batch_size": 32, "max_steps": 3000, "eval_every": 25, "patience": 10,
            "neighborhood": {{"n": 10, "refresh_period": 100}}}}"#
    ))
}

const REGIMES: [(&str, &str); 2] = [("k=1", r#"{"count": 1}"#), ("p=0.2", r#"{"fraction": 0.2}"#)];

type ModeRuns = BTreeMap<&'static str, Vec<BTreeMap<String, f64>>>;

/// Multi-label runs per regime and mode, shared by the two multi-label
/// criteria.
fn multilabel_runs() -> &'static BTreeMap<&'static str, ModeRuns> {
    static RUNS: OnceLock<BTreeMap<&'static str, ModeRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        REGIMES
            .iter()
            .map(|&(name, observe)| {
                let base = multilabel_base(observe);
                let runs = [Mode::CeL2, Mode::Ours, Mode::NoRefine, Mode::Augment]
                    .into_iter()
                    .map(|m| (m.name(), seed_runs(&base, m)))
                    .collect();
                (name, runs)
            })
            .collect()
    })
}

#[test]
fn criterion_7_multilabel_precision() {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (regime, runs) in multilabel_runs() {
        let ours = median_of(&runs["ours"], "precision@10");
        let base = median_of(&runs["ce-l2"], "precision@10");
        pass &= ours > base;
        parts.push(format!(
            "{regime}: ours {ours:.4} vs ce-l2 {base:.4} ({:+.1}%)",
            100.0 * (ours / base - 1.0)
        ));
    }
    verdict(7, pass, &parts.join(", "), t);
    assert!(pass);
}

#[test]
fn criterion_8_ablation_ordering() {
    let t = Instant::now();
    let key = "validation.precision@10";
    let mut pass = true;
    let mut parts = Vec::new();
    for (regime, runs) in multilabel_runs() {
        let ours = median_of(&runs["ours"], key);
        let frozen = median_of(&runs["no-refine"], key);
        let hard = median_of(&runs["augment"], key);
        pass &= ours >= frozen && ours >= hard;
        parts.push(format!(
            "{regime}: ours {ours:.4}, no-refine {frozen:.4}, augment {hard:.4}"
        ));
    }
    verdict(8, pass, &parts.join(", "), t);
    assert!(pass);
}

#[test]
fn criterion_9_sequence_trends() {
    let t = Instant::now();
    let base = config(
        r#"{"task": "sequence-toy", "seed": 1,
            "generator": {"concepts": 10, "region_noise": 0.8},
            "model": {"projection_hidden": [32, 32], "embedding_dim": 16,
                      "token_embed": 16, "state": 32, "attention": 16},
            "optimizer": {"task_lr": 0.005},
            "objective": {"lambda": 0.5, "mu": 1.0},
            "batch_size": 32, "max_steps": 1500, "eval_every": 100, "patience": 5,
            "neighborhood": {"n": 5, "refresh_period": 100},
            "eval": {"beam_size": 20}}"#,
    );
    let ours = seed_runs(&base, Mode::Ours);
    let mle = seed_runs(&base, Mode::Mle);
    let (r_ours, r_mle) = (median_of(&ours, "recall_5@100"), median_of(&mle, "recall_5@100"));
    let (d_ours, d_mle) = (median_of(&ours, "distinct_4grams"), median_of(&mle, "distinct_4grams"));
    let pass = r_ours >= r_mle && d_ours >= d_mle;
    verdict(
        9,
        pass,
        &format!(
            "recall_5@100 ours {r_ours:.3} vs mle {r_mle:.3}, distinct-4 ours {d_ours:.4} vs mle {d_mle:.4}"
        ),
        t,
    );
    assert!(pass);
}

// -------------------------------------------------------------- determinism

#[test]
fn criterion_10_determinism() {
    let t = Instant::now();
    let cfg = config(
        r#"{"task": "multilabel-toy", "seed": 11,
            "model": {"hidden": [32], "projection_hidden": [32, 32], "embedding_dim": 16},
            "batch_size": 32, "max_steps": 300, "eval_every": 50,
            "neighborhood": {"n": 5, "refresh_period": 50}}"#,
    );
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_experiment(&cfg, d.path()).unwrap();
    }
    let report = |d: &tempfile::TempDir| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.path().join(REPORT_JSON)).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("wall_clock_secs");
        v.to_string()
    };
    let csv = |d: &tempfile::TempDir| std::fs::read(d.path().join(REPORT_CSV)).unwrap();
    let history = |d: &tempfile::TempDir| std::fs::read(d.path().join(HISTORY_JSON)).unwrap();
    let json_same = report(&dirs[0]) == report(&dirs[1]);
    let csv_same = csv(&dirs[0]) == csv(&dirs[1]);
    let history_same = history(&dirs[0]) == history(&dirs[1]);
    let pass = json_same && csv_same && history_same;
    verdict(
        10,
        pass,
        &format!("report.json {json_same}, report.csv {csv_same}, history.json {history_same}"),
        t,
    );
    assert!(pass);
}
