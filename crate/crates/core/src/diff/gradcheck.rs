//! Central finite-difference check of reverse-mode gradients.

use super::graph::{Graph, Primitive, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±eps perturbation flips a relu/clamp_min branch.
    pub skipped: usize,
}

/// Compares `backward` against central differences for every coordinate of
/// every tensor in `params`.
///
/// `f` builds the scalar objective from parameter handles. Relative error per
/// coordinate is `|a - n| / max(|a|, |n|, REL_FLOOR * max(1, |f|))`. The
/// floor tracks the round-off of a central difference, which grows with the
/// objective's magnitude, so near-zero gradients are not judged on noise.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::invalid("eps must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let f0 = g.value(root).item();
    finite(f0, "objective")?;
    let floor = REL_FLOOR * f0.abs().max(1.0);
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect();

    let eval = |ps: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let root = f(&mut g, &vars)?;
        let v = g.value(root).item();
        finite(v, "objective")?;
        Ok((v, kink_pattern(&g)))
    };
    let (_, base_pattern) = eval(params)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for c in 0..params[t].numel() {
            let orig = params[t].data()[c];
            work[t].data_mut()[c] = orig + eps;
            let (fp, pp) = eval(&work)?;
            work[t].data_mut()[c] = orig - eps;
            let (fm, pm) = eval(&work)?;
            work[t].data_mut()[c] = orig;
            if pp != base_pattern || pm != base_pattern {
                skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grad.data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
        skipped,
    })
}

fn finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Which side of its kink every relu / clamp_min input sits on.
fn kink_pattern(g: &Graph) -> Vec<bool> {
    g.kink_inputs()
        .flat_map(|(floor, t)| t.data().iter().map(move |&x| x > floor))
        .collect()
}

impl Graph {
    pub(crate) fn kink_inputs(&self) -> impl Iterator<Item = (f64, &Tensor)> + '_ {
        self.primitive_inputs().filter_map(|(p, t)| match p {
            Primitive::Relu => Some((0.0, t)),
            Primitive::ClampMin(f) => Some((*f, t)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = finite_difference_check(
            |g, p| g.square(p[0]),
            &[Tensor::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn relu_kink_is_skipped() {
        let r = finite_difference_check(
            |g, p| {
                let y = g.relu(p[0])?;
                g.sum(y)
            },
            &[Tensor::vector(vec![0.0, 1.0, -1.0, 3e-6])],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.skipped, 2);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn non_finite_objective_errors() {
        let r = finite_difference_check(
            |g, p| {
                let e = g.exp(p[0])?;
                g.sum(e)
            },
            &[Tensor::scalar(1e6)],
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn bad_eps_rejected() {
        assert!(finite_difference_check(|g, p| g.sum(p[0]), &[Tensor::scalar(1.0)], 0.0).is_err());
    }
}
