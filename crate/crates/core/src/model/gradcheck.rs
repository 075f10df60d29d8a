//! Backpropagation versus central finite differences.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::loss::{build_loss, Objective};
use super::params::ParamStore;
use super::{Checkpoint, ModelError};

/// Gradients whose magnitudes are both below this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(parameter name, flat index, backprop, finite difference)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the backprop gradient of `build` with `(f(θ+ε) - f(θ-ε)) / 2ε` on
/// `sample_size` entries drawn (seeded) from tensors the loss depends on.
pub fn grad_check_params<F>(
    params: &mut ParamStore,
    eps: f64,
    sample_size: usize,
    seed: u64,
    mut build: F,
) -> Result<GradCheckReport, ModelError>
where
    F: FnMut(&mut Graph<'_>) -> Result<NodeId, ModelError>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ModelError::BadEpsilon(eps));
    }
    let grads = {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        g.backward(loss)
    };
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (t, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            candidates.extend((0..g.len()).map(|j| (t, j)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<(usize, usize)> = candidates.choose_multiple(&mut rng, sample_size).copied().collect();

    let mut eval = |params: &ParamStore| -> Result<f64, ModelError> {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for (t, j) in picked {
        let orig = params.get(t).data()[j];
        params.get_mut(t).data_mut()[j] = orig + eps;
        let plus = eval(params)?;
        params.get_mut(t).data_mut()[j] = orig - eps;
        let minus = eval(params)?;
        params.get_mut(t).data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads[t].as_ref().expect("candidate has a gradient").data()[j];
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((params.name(t).to_string(), j, analytic, numeric));
        }
    }
    Ok(report)
}

/// Gradient check of a model objective (dropout disabled).
pub fn grad_check(
    ckpt: &Checkpoint,
    obj: &Objective<'_>,
    eps: f64,
    sample_size: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let mut params = ckpt.params().clone();
    grad_check_params(&mut params, eps, sample_size, seed, |g| build_loss(g, ckpt, obj, None).map(|(loss, _)| loss))
}

#[cfg(test)]
mod tests {
    use super::super::tensor::Mat;
    use super::*;

    /// Least squares on a linear layer: quadratic in the parameters, so central
    /// differences are exact up to rounding.
    #[test]
    fn linear_least_squares_is_exact() {
        let mut params = ParamStore::new();
        params.push("w", Mat::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.5], vec![-0.7, 0.25]]));
        params.push("b", Mat::from_rows(&[vec![0.05, -0.1]]));
        let x = Mat::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, -0.3, 0.8], vec![2.0, 0.0, 1.0], vec![-1.0, 1.0, 0.0]]);
        let y = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![-1.0, 2.0]]);
        let report = grad_check_params(&mut params, 1e-4, 8, 0, |g| {
            let xi = g.constant(x.clone());
            let (w, b) = (g.param(0), g.param(1));
            let h = g.matmul(xi, w);
            let h = g.add_row(h, b);
            Ok(g.squared_error(h, y.clone()))
        })
        .unwrap();
        assert_eq!(report.checked, 8);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn zero_epsilon_rejected() {
        let mut params = ParamStore::new();
        params.push("w", Mat::zeros(1, 1));
        let r = grad_check_params(&mut params, 0.0, 1, 0, |g| {
            let w = g.param(0);
            Ok(g.squared_error(w, Mat::zeros(1, 1)))
        });
        assert!(matches!(r, Err(ModelError::BadEpsilon(_))));
    }
}
