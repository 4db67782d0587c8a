//! Decoupled, capped mixing of task and spectral gradients, plus the
//! optimizer updates (Adam by default, plain SGD as an option).
//!
//! The spectral gradient never outweighs the task signal: it is rescaled by
//! `gamma = min(1, rho_spec ||g_task|| / (||g_spec|| + delta))` and the
//! warmup-ramped weight `lambda_t` before being added, so the spectral
//! contribution to each update is bounded by
//! `lambda_t * rho_spec * ||g_task||` in norm.

use crate::linalg::Matrix;
use crate::nn::{GradientSet, MlpModel};
use crate::{CmrError, Result, Scalar};

/// Task and spectral gradients with their global norms (fixed accumulation
/// order: layers in order, weights row-major, then biases).
#[derive(Debug, Clone)]
pub struct GradientBundle<T> {
    pub task: GradientSet<T>,
    pub spec: GradientSet<T>,
    pub task_norm: T,
    pub spec_norm: T,
}

impl<T: Scalar> GradientBundle<T> {
    /// Builds the bundle from task gradients and per-weight-matrix spectral
    /// gradients. Spectral bias slots are identically zero by construction
    /// (the penalty sees only weight matrices).
    pub fn new(task: GradientSet<T>, spec_weights: Vec<Matrix<T>>) -> Result<Self> {
        if spec_weights.len() != task.layers.len() {
            return Err(CmrError::InvalidState(format!(
                "{} spectral gradients for {} layers",
                spec_weights.len(),
                task.layers.len()
            )));
        }
        let mut spec_layers = Vec::with_capacity(spec_weights.len());
        for (w, t) in spec_weights.into_iter().zip(&task.layers) {
            if w.shape() != t.weight.shape() {
                return Err(CmrError::InvalidState(format!(
                    "spectral gradient shape {:?} does not match weight {:?}",
                    w.shape(),
                    t.weight.shape()
                )));
            }
            spec_layers.push(crate::nn::LayerParams {
                weight: w,
                bias: vec![T::zero(); t.bias.len()],
            });
        }
        let spec = GradientSet { layers: spec_layers };
        let task_norm = task.global_norm();
        let spec_norm = spec.global_norm();
        Ok(GradientBundle { task, spec, task_norm, spec_norm })
    }
}

/// Warmup-ramped penalty weight `lambda * min(1, t / T_w)`; a zero warmup
/// length disables the ramp.
pub fn warmup_lambda<T: Scalar>(lambda: T, t: u64, warmup_steps: u64) -> T {
    if warmup_steps == 0 {
        return lambda;
    }
    let ratio = T::from_f64_lossy(t as f64) / T::from_f64_lossy(warmup_steps as f64);
    lambda * ratio.min(T::one())
}

/// Capped mix `g = lambda_t * gamma * g_spec + g_task` with
/// `gamma = min(1, rho_spec ||g_task|| / (||g_spec|| + delta))`.
///
/// Returns the mixed gradient and gamma. With `lambda_t = 0` the result is
/// bit-identical to the task gradient.
pub fn cap_and_mix<T: Scalar>(
    bundle: &GradientBundle<T>,
    lambda_t: T,
    rho_spec: T,
    delta: T,
) -> (GradientSet<T>, T) {
    let gamma = (rho_spec * bundle.task_norm / (bundle.spec_norm + delta)).min(T::one());
    let mut mixed = bundle.task.clone();
    let coeff = lambda_t * gamma;
    if coeff != T::zero() {
        mixed.add_scaled_in_place(coeff, &bundle.spec);
    }
    (mixed, gamma)
}

/// Scales all gradients by `max_norm / ||g||` when the global norm exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global<T: Scalar>(grads: &mut GradientSet<T>, max_norm: T) -> T {
    assert!(max_norm > T::zero(), "clip threshold must be positive");
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale_in_place(max_norm / norm);
    }
    norm
}

/// Update rule selector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Adam,
    Sgd,
}

/// Optimizer state: step counter and (for Adam) per-parameter moment
/// accumulators.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    step: u64,
    learning_rate: T,
    rule: UpdateRule,
    beta1: T,
    beta2: T,
    adam_epsilon: T,
    first_moment: Option<GradientSet<T>>,
    second_moment: Option<GradientSet<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    /// Adam with the standard constants beta1 = 0.9, beta2 = 0.999,
    /// epsilon = 1e-8.
    pub fn adam(learning_rate: T) -> Self {
        OptimizerState {
            step: 0,
            learning_rate,
            rule: UpdateRule::Adam,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            adam_epsilon: T::from_f64_lossy(1e-8),
            first_moment: None,
            second_moment: None,
        }
    }

    /// Plain gradient descent `theta -= lr * g`.
    pub fn sgd(learning_rate: T) -> Self {
        OptimizerState {
            step: 0,
            learning_rate,
            rule: UpdateRule::Sgd,
            beta1: T::zero(),
            beta2: T::zero(),
            adam_epsilon: T::zero(),
            first_moment: None,
            second_moment: None,
        }
    }

    pub fn new(rule: UpdateRule, learning_rate: T) -> Self {
        match rule {
            UpdateRule::Adam => Self::adam(learning_rate),
            UpdateRule::Sgd => Self::sgd(learning_rate),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. The step counter increments by exactly one.
    pub fn step(&mut self, model: &mut MlpModel<T>, grads: &GradientSet<T>) -> Result<()> {
        if !grads.shapes_match(model) {
            return Err(CmrError::InvalidState(
                "gradient shapes do not match model parameters".into(),
            ));
        }
        self.step += 1;
        match self.rule {
            UpdateRule::Sgd => {
                let lr = self.learning_rate;
                for (p, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
                    p.weight.add_scaled_in_place(-lr, &g.weight);
                    for (b, &gb) in p.bias.iter_mut().zip(&g.bias) {
                        *b -= lr * gb;
                    }
                }
                Ok(())
            }
            UpdateRule::Adam => {
                if self.first_moment.is_none() {
                    self.first_moment = Some(model.zero_gradients());
                    self.second_moment = Some(model.zero_gradients());
                }
                let m = self.first_moment.as_mut().unwrap();
                let v = self.second_moment.as_mut().unwrap();
                if !m.shapes_match(model) {
                    return Err(CmrError::InvalidState(
                        "optimizer accumulators do not match model parameters".into(),
                    ));
                }
                let one = T::one();
                let t = self.step as i32;
                let bias1 = one - self.beta1.powi(t);
                let bias2 = one - self.beta2.powi(t);
                let lr = self.learning_rate;
                let (b1, b2, eps) = (self.beta1, self.beta2, self.adam_epsilon);

                for ((p, g), (ml, vl)) in model
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(m.layers.iter_mut().zip(v.layers.iter_mut()))
                {
                    adam_update_slice(
                        p.weight.data_mut(),
                        g.weight.data(),
                        ml.weight.data_mut(),
                        vl.weight.data_mut(),
                        b1,
                        b2,
                        eps,
                        lr,
                        bias1,
                        bias2,
                    );
                    adam_update_slice(
                        &mut p.bias, &g.bias, &mut ml.bias, &mut vl.bias, b1, b2, eps, lr, bias1,
                        bias2,
                    );
                }
                Ok(())
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_update_slice<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    beta1: T,
    beta2: T,
    eps: T,
    lr: T,
    bias1: T,
    bias2: T,
) {
    let one = T::one();
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (one - beta1) * g;
        v[i] = beta2 * v[i] + (one - beta2) * g * g;
        let mhat = m[i] / bias1;
        let vhat = v[i] / bias2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InitSpec, LayerParams, MlpModel};
    use crate::Mat64;

    fn scalar_model(value: f64) -> MlpModel<f64> {
        MlpModel::from_layers(vec![LayerParams {
            weight: Mat64::from_vec(1, 1, vec![value]).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap()
    }

    fn scalar_grad(value: f64) -> GradientSet<f64> {
        GradientSet {
            layers: vec![LayerParams {
                weight: Mat64::from_vec(1, 1, vec![value]).unwrap(),
                bias: vec![0.0],
            }],
        }
    }

    #[test]
    fn warmup_schedule_values() {
        assert_eq!(warmup_lambda(0.02, 0, 1876), 0.0);
        assert!((warmup_lambda(0.02f64, 938, 1876) - 0.01).abs() <= 1e-15);
        assert_eq!(warmup_lambda(0.02, 5000, 1876), 0.02);
        assert_eq!(warmup_lambda(0.02, 0, 0), 0.02);
    }

    #[test]
    fn cap_activates_exactly_at_ratio() {
        // ||g_task|| = 2 on the bias, ||g_spec|| = 4 on the weight.
        let task = GradientSet {
            layers: vec![LayerParams { weight: Mat64::zeros(1, 1), bias: vec![2.0] }],
        };
        let bundle =
            GradientBundle::new(task, vec![Mat64::from_vec(1, 1, vec![4.0]).unwrap()]).unwrap();
        assert_eq!(bundle.task_norm, 2.0);
        assert_eq!(bundle.spec_norm, 4.0);
        let (mixed, gamma) = cap_and_mix(&bundle, 1.0, 0.5, 1e-12);
        assert!((gamma - 0.25).abs() <= 1e-9);
        // The scaled spectral part has norm rho_spec * ||g_task|| = 1.
        assert!((mixed.layers[0].weight.get(0, 0) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cap_inactive_when_spec_is_small() {
        let task = GradientSet {
            layers: vec![LayerParams { weight: Mat64::zeros(1, 1), bias: vec![2.0] }],
        };
        let bundle =
            GradientBundle::new(task, vec![Mat64::from_vec(1, 1, vec![0.1]).unwrap()]).unwrap();
        let (_, gamma) = cap_and_mix(&bundle, 1.0, 0.5, 1e-12);
        assert_eq!(gamma, 1.0);
    }

    #[test]
    fn zero_lambda_returns_task_gradient_bit_exactly() {
        let task = GradientSet {
            layers: vec![LayerParams {
                weight: Mat64::from_vec(1, 2, vec![0.123456789, -7.25]).unwrap(),
                bias: vec![0.5],
            }],
        };
        let spec = Mat64::from_vec(1, 2, vec![100.0, -3.0]).unwrap();
        let bundle = GradientBundle::new(task.clone(), vec![spec]).unwrap();
        let (mixed, _) = cap_and_mix(&bundle, 0.0, 0.5, 1e-12);
        assert_eq!(mixed.layers[0].weight.data(), task.layers[0].weight.data());
        assert_eq!(mixed.layers[0].bias, task.layers[0].bias);
    }

    #[test]
    fn bounded_intervention_property() {
        // || lambda_t gamma g_spec || <= lambda_t rho ||g_task|| (1 + 1e-9)
        let mut rng = crate::rng::seeded_rng(55);
        for _ in 0..50 {
            let task_w: Mat64 = crate::rng::gaussian_matrix(&mut rng, 3, 4);
            let spec_w: Mat64 = crate::rng::gaussian_matrix(&mut rng, 3, 4);
            let spec_scaled = spec_w.scale(10.0);
            let task = GradientSet {
                layers: vec![LayerParams { weight: task_w, bias: vec![0.1, -0.2, 0.3] }],
            };
            let bundle = GradientBundle::new(task, vec![spec_scaled]).unwrap();
            let lambda_t = 0.02;
            let rho = 0.5;
            let (_, gamma) = cap_and_mix(&bundle, lambda_t, rho, 1e-12);
            let spec_part = lambda_t * gamma * bundle.spec_norm;
            assert!(spec_part <= lambda_t * rho * bundle.task_norm * (1.0 + 1e-9));
        }
    }

    #[test]
    fn clip_scales_only_above_threshold() {
        let mut g = scalar_grad(10.0);
        let pre = clip_global(&mut g, 5.0);
        assert_eq!(pre, 10.0);
        assert!((g.layers[0].weight.get(0, 0) - 5.0).abs() <= 1e-12);

        let mut g = scalar_grad(3.0);
        let pre = clip_global(&mut g, 5.0);
        assert_eq!(pre, 3.0);
        assert_eq!(g.layers[0].weight.get(0, 0), 3.0);

        let mut g = scalar_grad(0.0);
        clip_global(&mut g, 5.0);
        assert_eq!(g.layers[0].weight.get(0, 0), 0.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut model = scalar_model(1.5);
        let mut opt = OptimizerState::adam(1e-3);
        for _ in 0..10 {
            opt.step(&mut model, &scalar_grad(0.0)).unwrap();
        }
        assert_eq!(model.layers()[0].weight.get(0, 0), 1.5);
        assert_eq!(opt.step_count(), 10);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut model = scalar_model(0.0);
        let mut opt = OptimizerState::adam(1e-3);
        opt.step(&mut model, &scalar_grad(1.0)).unwrap();
        let p = model.layers()[0].weight.get(0, 0);
        assert!((p + 1e-3).abs() <= 1e-10, "param after one step: {p}");
    }

    #[test]
    fn sgd_is_plain_descent() {
        let mut model = scalar_model(1.0);
        let mut opt = OptimizerState::sgd(0.1);
        opt.step(&mut model, &scalar_grad(2.0)).unwrap();
        assert!((model.layers()[0].weight.get(0, 0) - 0.8).abs() <= 1e-15);
    }

    #[test]
    fn shape_mismatch_is_invalid_state() {
        let mut model = scalar_model(0.0);
        let bad = GradientSet {
            layers: vec![LayerParams { weight: Mat64::zeros(2, 2), bias: vec![0.0; 2] }],
        };
        let mut opt = OptimizerState::adam(1e-3);
        assert!(matches!(opt.step(&mut model, &bad), Err(CmrError::InvalidState(_))));
    }

    #[test]
    fn adam_trajectory_is_deterministic() {
        let run = || {
            let mut model = MlpModel::init(&[4, 4, 2], &InitSpec::GlorotUniform, 3).unwrap();
            let mut opt = OptimizerState::adam(1e-3);
            let mut rng = crate::rng::seeded_rng(9);
            for _ in 0..100 {
                let g = GradientSet {
                    layers: model
                        .layers()
                        .iter()
                        .map(|l| LayerParams {
                            weight: crate::rng::gaussian_matrix(
                                &mut rng,
                                l.weight.rows(),
                                l.weight.cols(),
                            ),
                            bias: vec![0.01; l.bias.len()],
                        })
                        .collect(),
                };
                opt.step(&mut model, &g).unwrap();
            }
            model
        };
        let a = run();
        let b = run();
        for (x, y) in a.layers().iter().zip(b.layers()) {
            assert_eq!(x.weight.data(), y.weight.data());
            assert_eq!(x.bias, y.bias);
        }
    }
}
