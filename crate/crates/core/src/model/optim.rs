use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, ParamGrads};
use super::loss::{build_loss, Objective};
use super::params::ParamStore;
use super::tensor::Mat;
use super::transformer::Dropper;
use super::{Checkpoint, ModelError};

/// Adam and schedule hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Linear warmup length before inverse-square-root decay; 0 keeps `lr` constant.
    pub warmup_steps: u64,
    pub label_smoothing: f64,
    /// Parameter-name prefixes that receive no updates, e.g. `embed` or `dec.`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub frozen: Vec<String>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: Some(1.0),
            warmup_steps: 400,
            label_smoothing: 0.0,
            frozen: Vec::new(),
        }
    }
}

impl TrainHyper {
    /// Learning rate at 1-based step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        let t = t.max(1) as f64;
        let w = self.warmup_steps as f64;
        self.lr * (t / w).min((w / t).sqrt())
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.values().iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
        OptimizerState { m: zeros(), v: zeros(), step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Tensors without a gradient are left
    /// untouched, moments included. Returns the learning rate used.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &ParamGrads, hyper: &TrainHyper) -> f64 {
        self.step += 1;
        let t = self.step as i32;
        let lr = hyper.lr_at(self.step);
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.get_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
                v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + hyper.eps);
            }
        }
        lr
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(Mat::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub count: usize,
}

/// Backpropagation, optional clipping and one Adam update. On a non-finite
/// loss or gradient the checkpoint and optimizer are left unchanged.
pub fn train_step(
    ckpt: &mut Checkpoint,
    opt: &mut OptimizerState,
    obj: &Objective<'_>,
    hyper: &TrainHyper,
) -> Result<StepStats, ModelError> {
    let dropout = ckpt.config().dropout;
    let mut dropper = (dropout > 0.0).then(|| {
        let seed = ckpt.seed() ^ (ckpt.step().wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Dropper::new(dropout, ChaCha8Rng::seed_from_u64(seed))
    });
    let (loss, count, mut grads) = {
        let mut g = Graph::new(ckpt.params());
        let (loss_node, count) = build_loss(&mut g, ckpt, obj, dropper.as_mut())?;
        let loss = g.scalar(loss_node);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: ckpt.step(), loss });
        }
        (loss, count, g.backward(loss_node))
    };
    if !hyper.frozen.is_empty() {
        for (i, g) in grads.iter_mut().enumerate() {
            let name = ckpt.params().name(i);
            if hyper.frozen.iter().any(|f| name.starts_with(f.as_str())) {
                *g = None;
            }
        }
    }
    if grads.iter().flatten().any(|g| !g.all_finite()) {
        return Err(ModelError::NonFiniteLoss { step: ckpt.step(), loss: f64::NAN });
    }
    let grad_norm = match hyper.clip_norm {
        Some(c) => clip_global_norm(&mut grads, c),
        None => grads.iter().flatten().map(Mat::sq_norm).sum::<f64>().sqrt(),
    };
    let lr = opt.apply(ckpt.params_mut(), &grads, hyper);
    ckpt.advance_step();
    Ok(StepStats { loss, grad_norm, lr, count })
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, Batch, ModelConfig};
    use super::*;

    #[test]
    fn adam_single_step_on_quadratic_matches_closed_form() {
        // f(θ) = ½‖θ - c‖², g = θ - c. After one bias-corrected step
        // m̂ = g and v̂ = g², so Δθ = -lr · g / (|g| + eps).
        let theta = vec![0.5, -1.25, 3.0, 0.0];
        let c = vec![1.0, 1.0, -2.0, 0.0];
        let mut store = ParamStore::new();
        store.push("theta", Mat::from_vec(1, 4, theta.clone()));
        let hyper = TrainHyper { lr: 0.01, warmup_steps: 0, clip_norm: None, eps: 1e-8, ..TrainHyper::default() };
        let grads = {
            let mut g = Graph::new(&store);
            let p = g.param(0);
            let loss = g.squared_error(p, Mat::from_vec(1, 4, c.clone()));
            g.backward(loss)
        };
        let mut opt = OptimizerState::new(&store);
        opt.apply(&mut store, &grads, &hyper);
        for j in 0..4 {
            let g = theta[j] - c[j];
            let expected = theta[j] - 0.01 * g / (g.abs() + 1e-8);
            assert!((store.get(0).data()[j] - expected).abs() < 1e-8, "coord {j}");
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut ckpt = init_model(&ModelConfig::tiny(30), 1).unwrap();
        let before = ckpt.params().clone();
        let mut opt = OptimizerState::new(ckpt.params());
        let b = Batch::new(&[(vec![8, 9], vec![10, 11])]);
        let hyper = TrainHyper { lr: 0.0, ..TrainHyper::default() };
        train_step(&mut ckpt, &mut opt, &Objective::Seq2Seq { batch: &b, label_smoothing: 0.0 }, &hyper).unwrap();
        assert_eq!(ckpt.params(), &before);
        assert_eq!(ckpt.step(), 1);
    }

    #[test]
    fn frozen_prefixes_are_not_updated() {
        let mut ckpt = init_model(&ModelConfig::tiny(30), 1).unwrap();
        let before = ckpt.params().clone();
        let mut opt = OptimizerState::new(ckpt.params());
        let b = Batch::new(&[(vec![8, 9], vec![10, 11])]);
        let hyper = TrainHyper { lr: 1e-2, frozen: vec!["embed".into(), "dec.".into()], ..TrainHyper::default() };
        train_step(&mut ckpt, &mut opt, &Objective::Seq2Seq { batch: &b, label_smoothing: 0.0 }, &hyper).unwrap();
        for (name, m) in ckpt.params().iter() {
            let moved = m != before.by_name(name).unwrap();
            assert_eq!(moved, !(name == "embed" || name.starts_with("dec.")) && !name.starts_with("mlm") && !name.starts_with("cls"), "{name}");
        }
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads: ParamGrads = vec![Some(Mat::from_vec(1, 2, vec![3.0, 4.0])), None, Some(Mat::from_vec(1, 1, vec![12.0]))];
        let pre = clip_global_norm(&mut grads, 2.5);
        assert!((pre - 13.0).abs() < 1e-12);
        let post = grads.iter().flatten().map(Mat::sq_norm).sum::<f64>().sqrt();
        assert!((post - 2.5).abs() < 1e-6);
    }

    #[test]
    fn warmup_then_inverse_sqrt() {
        let h = TrainHyper { lr: 1.0, warmup_steps: 100, ..TrainHyper::default() };
        assert!((h.lr_at(50) - 0.5).abs() < 1e-12);
        assert!((h.lr_at(100) - 1.0).abs() < 1e-12);
        assert!((h.lr_at(400) - 0.5).abs() < 1e-12);
    }
}
