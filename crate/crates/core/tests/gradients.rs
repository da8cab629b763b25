use nt_core::diff::{finite_difference_check, Graph, Tensor, Var};
use nt_core::models::{
    decoder_context, mlp_forward, project, project_rows, sequence_log_prob, DecoderSpec, Head, MlpSpec,
    ProjectionSpec,
};
use nt_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 100;
const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

/// `sum(y * w)` for a fixed random `w`, so every output entry gets its own
/// upstream gradient.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabcd), shape, 1.0);
    let w = g.input(w);
    let m = g.mul(y, w)?;
    g.sum(m)
}

fn check<F>(name: &str, mut build: F)
where
    F: FnMut(&mut ChaCha8Rng) -> (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>),
{
    let mut checked = 0;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let (params, f) = build(&mut rng);
        let r = finite_difference_check(|g, p| f(g, p), &params, EPS).unwrap();
        assert!(
            r.max_rel_error < TOL,
            "{name} trial {trial}: rel error {} ({r:?})",
            r.max_rel_error
        );
        checked += r.checked;
    }
    assert!(checked > 0, "{name}: every coordinate was skipped");
}

macro_rules! unary {
    ($test:ident, $method:ident, $scale:expr) => {
        #[test]
        fn $test() {
            check(stringify!($method), |rng| {
                let r = rng.random_range(1..4);
                let c = rng.random_range(1..5);
                let x = rand_tensor(rng, vec![r, c], $scale);
                let seed = rng.random();
                (
                    vec![x],
                    Box::new(move |g, p| {
                        let y = g.$method(p[0])?;
                        weighted_sum(g, y, seed)
                    }),
                )
            });
        }
    };
}

unary!(relu_grad, relu, 2.0);
unary!(sigmoid_grad, sigmoid, 4.0);
unary!(tanh_grad, tanh, 3.0);
unary!(exp_grad, exp, 2.0);
unary!(log_sigmoid_grad, log_sigmoid, 8.0);
unary!(log_softmax_grad, log_softmax, 5.0);
unary!(square_grad, square, 2.0);
unary!(sum_grad, sum, 2.0);
unary!(mean_grad, mean, 2.0);

macro_rules! binary_same_shape {
    ($test:ident, $method:ident) => {
        #[test]
        fn $test() {
            check(stringify!($method), |rng| {
                let r = rng.random_range(1..4);
                let c = rng.random_range(1..5);
                let a = rand_tensor(rng, vec![r, c], 2.0);
                let b = rand_tensor(rng, vec![r, c], 2.0);
                let seed = rng.random();
                (
                    vec![a, b],
                    Box::new(move |g, p| {
                        let y = g.$method(p[0], p[1])?;
                        weighted_sum(g, y, seed)
                    }),
                )
            });
        }
    };
}

binary_same_shape!(add_grad, add);
binary_same_shape!(sub_grad, sub);
binary_same_shape!(mul_grad, mul);

#[test]
fn matmul_grad() {
    check("matmul", |rng| {
        let (m, k, n) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..4));
        let a = rand_tensor(rng, vec![m, k], 2.0);
        let b = rand_tensor(rng, vec![k, n], 2.0);
        let seed = rng.random();
        (
            vec![a, b],
            Box::new(move |g, p| {
                let y = g.matmul(p[0], p[1])?;
                weighted_sum(g, y, seed)
            }),
        )
    });
}

#[test]
fn add_row_grad() {
    check("add_row", |rng| {
        let (r, c) = (rng.random_range(1..4), rng.random_range(1..5));
        let a = rand_tensor(rng, vec![r, c], 2.0);
        let b = rand_tensor(rng, vec![c], 2.0);
        let seed = rng.random();
        (
            vec![a, b],
            Box::new(move |g, p| {
                let y = g.add_row(p[0], p[1])?;
                weighted_sum(g, y, seed)
            }),
        )
    });
}

#[test]
fn scale_and_add_scalar_grad() {
    check("scale/add_scalar", |rng| {
        let x = rand_tensor(rng, vec![2, 3], 2.0);
        let s: f64 = rng.random_range(-3.0..3.0);
        let seed = rng.random();
        (
            vec![x],
            Box::new(move |g, p| {
                let y = g.scale(p[0], s)?;
                let y = g.add_scalar(y, s)?;
                let y = g.square(y)?;
                weighted_sum(g, y, seed)
            }),
        )
    });
}

#[test]
fn cosine_grad() {
    check("cosine", |rng| {
        let n = rng.random_range(2..7);
        let a = rand_tensor(rng, vec![n], 2.0);
        let b = rand_tensor(rng, vec![n], 2.0);
        (vec![a, b], Box::new(|g, p| g.cosine(p[0], p[1])))
    });
}

#[test]
fn clamp_min_grad() {
    check("clamp_min", |rng| {
        let x = rand_tensor(rng, vec![3, 3], 2.0);
        let floor: f64 = rng.random_range(-1.0..1.0);
        let seed = rng.random();
        (
            vec![x],
            Box::new(move |g, p| {
                let y = g.clamp_min(p[0], floor)?;
                weighted_sum(g, y, seed)
            }),
        )
    });
}

#[test]
fn gather_select_reshape_grad() {
    check("gather_row/select/reshape", |rng| {
        let (r, c) = (rng.random_range(2..5), rng.random_range(2..5));
        let x = rand_tensor(rng, vec![r, c], 2.0);
        let row = rng.random_range(0..r);
        let idx: Vec<usize> = (0..5).map(|_| rng.random_range(0..r * c)).collect();
        let seed = rng.random();
        (
            vec![x],
            Box::new(move |g, p| {
                let a = g.gather_row(p[0], row)?;
                let a = g.square(a)?;
                let b = g.select(p[0], idx.clone())?;
                let b = g.exp(b)?;
                let s = g.reshape(p[0], vec![c, r])?;
                let s = g.tanh(s)?;
                let terms = [weighted_sum(g, a, seed)?, weighted_sum(g, b, seed + 1)?, weighted_sum(g, s, seed + 2)?];
                g.add_all(&terms)
            }),
        )
    });
}

#[test]
fn concat_grad() {
    check("concat_rows/concat_cols", |rng| {
        let c = rng.random_range(1..4);
        let a = rand_tensor(rng, vec![2, c], 2.0);
        let b = rand_tensor(rng, vec![1, c], 2.0);
        let d = rand_tensor(rng, vec![1, 3], 2.0);
        let seed = rng.random();
        (
            vec![a, b, d],
            Box::new(move |g, p| {
                let rows = g.concat_rows(&[p[0], p[1]])?;
                let rows = g.sigmoid(rows)?;
                let cols = g.concat_cols(&[p[1], p[2]])?;
                let cols = g.square(cols)?;
                let terms = [weighted_sum(g, rows, seed)?, weighted_sum(g, cols, seed + 1)?];
                g.add_all(&terms)
            }),
        )
    });
}

#[test]
fn mlp_grad() {
    check("mlp", |rng| {
        let spec = MlpSpec::new(
            vec![rng.random_range(2..5), rng.random_range(2..6), rng.random_range(2..5)],
            Head::SoftmaxMulticlass,
        );
        let params: Vec<Tensor> = spec.init(rng.random()).unwrap().tensors().cloned().collect();
        let x = rand_tensor(rng, vec![3, spec.input_width()], 2.0);
        let seed = rng.random();
        (
            params,
            Box::new(move |g, p| {
                let xi = g.input(x.clone());
                let y = mlp_forward(g, &spec, p, xi)?;
                let y = g.log_softmax(y)?;
                weighted_sum(g, y, seed)
            }),
        )
    });
}

#[test]
fn projection_grad() {
    check("projection", |rng| {
        let spec = ProjectionSpec::new(rng.random_range(2..5), rng.random_range(2..5))
            .with_hidden(vec![rng.random_range(3..8), rng.random_range(3..8)]);
        // resample away from degenerate points: near-zero embeddings or
        // parallel pairs make central differences ill-conditioned
        let (ps, x) = loop {
            let mut ps = spec.init(rng.random()).unwrap();
            for t in ps.tensors_mut() {
                *t = rand_tensor(rng, t.shape().to_vec(), 1.0);
            }
            let x = rand_tensor(rng, vec![2, spec.mlp().input_width()], 2.0);
            let e = project_rows(&spec, &ps, &x).unwrap();
            let norm = |r: usize| e.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let (n0, n1) = (norm(0), norm(1));
            if n0 > 0.1 && n1 > 0.1 {
                let dot: f64 = e.row_slice(0).iter().zip(e.row_slice(1)).map(|(a, b)| a * b).sum();
                if (dot / (n0 * n1)).abs() < 0.99 {
                    break (ps, x);
                }
            }
        };
        let params: Vec<Tensor> = ps.tensors().cloned().collect();
        (
            params,
            Box::new(move |g, p| {
                let xi = g.input(x.clone());
                let e = project(g, &spec, p, xi)?;
                let a = g.gather_row(e, 0)?;
                let b = g.gather_row(e, 1)?;
                let c = g.cosine(a, b)?;
                let d = g.add_scalar(c, -1.0)?;
                g.square(d)
            }),
        )
    });
}

#[test]
fn decoder_grad() {
    check("decoder", |rng| {
        let spec = DecoderSpec {
            vocab: rng.random_range(3..6),
            embed: 3,
            hidden: 4,
            regions: 2,
            region_width: 3,
            attention: 3,
        };
        let params: Vec<Tensor> = spec.init(rng.random()).unwrap().tensors().cloned().collect();
        let regions = rand_tensor(rng, vec![2, 3], 1.5);
        let len = rng.random_range(1..4);
        let mut tokens: Vec<usize> = (0..len).map(|_| rng.random_range(1..spec.vocab)).collect();
        tokens.push(0);
        (
            params,
            Box::new(move |g, p| {
                let ctx = decoder_context(g, &spec, p, &regions)?;
                let terms = sequence_log_prob(g, &spec, p, &ctx, &tokens)?;
                let mut all = terms.log_probs.clone();
                for &a in &terms.alphas {
                    all.push(g.square(a)?);
                }
                g.add_all(&all)
            }),
        )
    });
}

