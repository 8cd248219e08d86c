//! Squared-error objectives, circuit gradients and an Adam training loop.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::circuit::ModelSpec;
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, stream_rng};

/// Step for central finite differences.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GradientMode {
    /// Shift rule for every parameter; fails on ineligible ones.
    ParameterShift,
    FiniteDifference,
    /// Shift rule where eligible, finite differences elsewhere.
    #[default]
    Mixed,
    /// Reverse-mode differentiation through the operator sequence.
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossKind {
    /// `Σ (y − f)² / 2D`
    #[default]
    Mse,
    /// `Σ (|f| − y)² / 2D`
    AbsMse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub batch_fraction: f64,
    pub convergence_window: usize,
    pub convergence_variance: f64,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.3,
            max_steps: 200,
            batch_fraction: 0.7,
            convergence_window: 10,
            convergence_variance: 1e-8,
            seed: 0,
            gradient_mode: GradientMode::Mixed,
            loss: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::Validation(
                "batch_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.convergence_window < 2 {
            return Err(Error::Validation(
                "convergence_window must be at least 2".into(),
            ));
        }
        if !(self.convergence_variance >= 0.0) {
            return Err(Error::Validation(
                "convergence_variance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn batch_size(&self, n: usize) -> usize {
        ((self.batch_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub initial_params: Vec<f64>,
    pub best_params: Vec<f64>,
    pub best_loss: f64,
    /// Full-data loss after each step.
    pub loss_history: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    state: &AdamState,
    theta: &[f64],
    grad: &[f64],
    lr: f64,
) -> Result<(AdamState, Vec<f64>)> {
    let n = theta.len();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension(format!(
            "adam: {} parameters, {} gradient entries, state of {}",
            n,
            grad.len(),
            state.m.len()
        )));
    }
    let t = state.t + 1;
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let mut next = AdamState {
        m: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        t,
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let m = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        let v = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        out.push(theta[i] - lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS));
        next.m.push(m);
        next.v.push(v);
    }
    Ok((next, out))
}

/// One labelled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Example {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Example { x, y }
    }
}

fn residual_term(loss: LossKind, f: f64, y: f64) -> f64 {
    match loss {
        LossKind::Mse => f - y,
        LossKind::AbsMse => f.abs() - y,
    }
}

/// `(1/2D) Σ (y_i − f(x_i, θ))²`
pub fn mse_loss(model: &ModelSpec, theta: &[f64], data: &[Example]) -> Result<f64> {
    loss_value(model, theta, data, LossKind::Mse)
}

pub fn loss_value(
    model: &ModelSpec,
    theta: &[f64],
    data: &[Example],
    loss: LossKind,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let terms = map_indexed(data.len(), |i| {
        model
            .evaluate(&data[i].x, theta)
            .map(|f| residual_term(loss, f, data[i].y).powi(2))
    });
    let mut sum = 0.0;
    for t in terms {
        sum += t?;
    }
    Ok(sum / (2.0 * data.len() as f64))
}

/// `∂f/∂θ_j` by the two-term shift rule, summed over every use of `θ_j`.
pub fn parameter_shift_grad(model: &ModelSpec, theta: &[f64], x: &[f64], j: usize) -> Result<f64> {
    if j >= model.n_params() {
        return Err(Error::Validation(format!("parameter {j} out of range")));
    }
    if !model.shift_eligible(j) {
        return Err(Error::ShiftIneligible(j));
    }
    let mut g = 0.0;
    for occ in model.occurrences(j) {
        let plus = model.evaluate_shifted(x, theta, occ, FRAC_PI_2)?;
        let minus = model.evaluate_shifted(x, theta, occ, -FRAC_PI_2)?;
        g += 0.5 * (plus - minus);
    }
    Ok(g)
}

/// Central difference `[f(θ_j + h) − f(θ_j − h)] / 2h`.
pub fn finite_difference_grad(
    model: &ModelSpec,
    theta: &[f64],
    x: &[f64],
    j: usize,
    h: f64,
) -> Result<f64> {
    if j >= theta.len() {
        return Err(Error::Validation(format!("parameter {j} out of range")));
    }
    let mut p = theta.to_vec();
    p[j] = theta[j] + h;
    let plus = model.evaluate(x, &p)?;
    p[j] = theta[j] - h;
    let minus = model.evaluate(x, &p)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Output and full gradient of `f(x, ·)` at `theta`.
pub fn output_gradient(
    model: &ModelSpec,
    theta: &[f64],
    x: &[f64],
    mode: GradientMode,
) -> Result<(f64, Vec<f64>)> {
    if mode == GradientMode::Adjoint {
        return model.evaluate_with_gradient(x, theta);
    }
    let f = model.evaluate(x, theta)?;
    let grad = (0..model.n_params())
        .map(|j| match mode {
            GradientMode::ParameterShift => parameter_shift_grad(model, theta, x, j),
            GradientMode::FiniteDifference => finite_difference_grad(model, theta, x, j, FD_STEP),
            _ => match parameter_shift_grad(model, theta, x, j) {
                Err(Error::ShiftIneligible(_)) => {
                    finite_difference_grad(model, theta, x, j, FD_STEP)
                }
                other => other,
            },
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((f, grad))
}

/// Gradient of the loss over the examples at `indices`.
pub fn loss_gradient(
    model: &ModelSpec,
    theta: &[f64],
    data: &[Example],
    indices: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let per_sample = map_indexed(indices.len(), |k| {
        let ex = &data[indices[k]];
        output_gradient(model, theta, &ex.x, config.gradient_mode).map(|(f, g)| {
            let r = residual_term(config.loss, f, ex.y);
            let s = match config.loss {
                LossKind::Mse => 1.0,
                LossKind::AbsMse => {
                    if f < 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                }
            };
            (r * s, g)
        })
    });
    let mut total = vec![0.0; theta.len()];
    for item in per_sample {
        let (w, g) = item?;
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += w * gi;
        }
    }
    let b = indices.len() as f64;
    total.iter_mut().for_each(|t| *t /= b);
    Ok(total)
}

/// Starting point: each parameter's fixed init, otherwise uniform `[0, 2π)`
/// from stream 0 of `seed`.
pub fn initial_params(model: &ModelSpec, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    model
        .params()
        .iter()
        .map(|p| {
            let draw = rng.gen_range(0.0..2.0 * PI);
            p.init.unwrap_or(draw)
        })
        .collect()
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Adam on an arbitrary objective. `full_loss` scores parameters on all
/// data; `batch_grad` differentiates the loss on a subset of `0..n_data`.
pub fn minimize<L, G>(
    initial: Vec<f64>,
    n_data: usize,
    config: &TrainConfig,
    full_loss: L,
    batch_grad: G,
) -> Result<TrainResult>
where
    L: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64], &[usize]) -> Result<Vec<f64>>,
{
    config.validate()?;
    if n_data == 0 {
        return Err(Error::Empty("dataset".into()));
    }
    let batch = config.batch_size(n_data);
    let mut rng = stream_rng(config.seed, 1);
    let mut theta = initial.clone();
    let mut adam = AdamState::new(theta.len());
    let mut history = Vec::with_capacity(config.max_steps);
    let mut best = (f64::INFINITY, theta.clone());
    let mut converged = false;
    for _ in 0..config.max_steps {
        let mut idx = sample(&mut rng, n_data, batch).into_vec();
        idx.sort_unstable();
        let grad = batch_grad(&theta, &idx)?;
        let (next_state, next_theta) = adam_step(&adam, &theta, &grad, config.learning_rate)?;
        adam = next_state;
        theta = next_theta;
        let loss = full_loss(&theta)?;
        if !loss.is_finite() {
            return Err(Error::Validation(format!(
                "loss became non-finite at step {}",
                history.len() + 1
            )));
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, theta.clone());
        }
        let w = config.convergence_window;
        if history.len() >= w
            && population_variance(&history[history.len() - w..]) < config.convergence_variance
        {
            converged = true;
            break;
        }
    }
    Ok(TrainResult {
        initial_params: initial,
        best_params: best.1,
        best_loss: best.0,
        steps: history.len(),
        loss_history: history,
        converged,
    })
}

/// Trains `model` on `data` from [`initial_params`].
pub fn train(model: &ModelSpec, config: &TrainConfig, data: &[Example]) -> Result<TrainResult> {
    train_from(model, config, data, initial_params(model, config.seed))
}

pub fn train_from(
    model: &ModelSpec,
    config: &TrainConfig,
    data: &[Example],
    initial: Vec<f64>,
) -> Result<TrainResult> {
    if initial.len() != model.n_params() {
        return Err(Error::Dimension(format!(
            "{} initial parameters for a model with {}",
            initial.len(),
            model.n_params()
        )));
    }
    minimize(
        initial,
        data.len(),
        config,
        |th| loss_value(model, th, data, config.loss),
        |th, idx| loss_gradient(model, th, data, idx, config),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CircuitOp, ModelBuilder, ParamRef};
    use crate::residual::ResidualStrategy;
    use crate::simcore::{Factor, GateKind, Observable};
    use proptest::prelude::*;

    fn cos_model() -> ModelSpec {
        let mut b = ModelBuilder::new(1, 1);
        let t = b.param("t");
        b.gate(GateKind::Ry, &[0], &[t]);
        b.build(Observable::z_on(1, 0)).unwrap()
    }

    fn mixed_model() -> ModelSpec {
        let mut b = ModelBuilder::new(2, 1);
        let p: Vec<ParamRef> = (0..5).map(|i| b.param(format!("p{i}"))).collect();
        let a = b.param_with_init("alpha", Some(0.7));
        let g = b.param_with_init("gamma", Some(-0.4));
        b.gate(GateKind::U3, &[0], &[p[0], p[1], p[2]]);
        b.residual(
            ResidualStrategy::R2 { alpha: a, gamma: g },
            CircuitOp::new(GateKind::Ry, vec![1], vec![ParamRef::Feature(0)]),
        );
        b.gate(GateKind::ZZ, &[0, 1], &[p[3]]);
        b.gate(GateKind::Ry, &[1], &[p[3]]);
        b.gate(
            GateKind::ControlledU3,
            &[1, 0],
            &[p[4], p[0], ParamRef::Fixed(0.2)],
        );
        b.build(Observable::new(vec![Factor::Z, Factor::X]).unwrap())
            .unwrap()
    }

    #[test]
    fn mse_examples() {
        let m = cos_model();
        let data = vec![Example::new(vec![0.0], 1.0)];
        assert!(mse_loss(&m, &[0.0], &data).unwrap().abs() < 1e-15);
        assert!((mse_loss(&m, &[FRAC_PI_2], &data).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(mse_loss(&m, &[0.0], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn mse_matches_direct_summation() {
        let m = mixed_model();
        let theta = [0.3, 1.2, -0.7, 2.0, 0.4, 0.9, 0.1];
        let data: Vec<Example> = (0..7)
            .map(|i| Example::new(vec![0.37 * i as f64], 0.1 * i as f64 - 0.2))
            .collect();
        let mut s = 0.0;
        for ex in &data {
            let f = m.evaluate(&ex.x, &theta).unwrap();
            s += (ex.y - f) * (ex.y - f);
        }
        let oracle = s / 14.0;
        assert!((mse_loss(&m, &theta, &data).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn shift_rule_examples() {
        let m = cos_model();
        assert!(parameter_shift_grad(&m, &[0.0], &[0.0], 0).unwrap().abs() < 1e-15);
        let g = parameter_shift_grad(&m, &[0.8], &[0.0], 0).unwrap();
        assert!((g + 0.8f64.sin()).abs() < 1e-14);

        let mut b = ModelBuilder::new(1, 0);
        let _unused = b.param("u");
        let t = b.param("t");
        b.gate(GateKind::Ry, &[0], &[t]);
        let m = b.build(Observable::z_on(1, 0)).unwrap();
        assert_eq!(parameter_shift_grad(&m, &[1.0, 0.3], &[], 0).unwrap(), 0.0);
    }

    #[test]
    fn ineligible_parameters_flagged() {
        let m = mixed_model();
        let theta = [0.3, 1.2, -0.7, 2.0, 0.4, 0.9, 0.1];
        // p0 also feeds the controlled rotation; p4 only does
        for j in [0, 4, 5, 6] {
            assert!(matches!(
                parameter_shift_grad(&m, &theta, &[0.5], j),
                Err(Error::ShiftIneligible(k)) if k == j
            ));
        }
        for j in [1, 2, 3] {
            assert!(parameter_shift_grad(&m, &theta, &[0.5], j).is_ok());
        }
    }

    #[test]
    fn all_modes_agree() {
        let m = mixed_model();
        let theta = [0.3, 1.2, -0.7, 2.0, 0.4, 0.9, 0.1];
        let x = [1.1];
        let (_, fd) = output_gradient(&m, &theta, &x, GradientMode::FiniteDifference).unwrap();
        let (_, mixed) = output_gradient(&m, &theta, &x, GradientMode::Mixed).unwrap();
        let (_, adj) = output_gradient(&m, &theta, &x, GradientMode::Adjoint).unwrap();
        for j in 0..theta.len() {
            assert!((fd[j] - mixed[j]).abs() < 1e-6, "mixed {j}");
            assert!((fd[j] - adj[j]).abs() < 1e-6, "adjoint {j}");
        }
        assert!(output_gradient(&m, &theta, &x, GradientMode::ParameterShift).is_err());
    }

    // Scalar re-implementation of the Adam recurrences.
    fn reference_adam(theta0: f64, grads: &[f64], lr: f64) -> f64 {
        let (mut m, mut v, mut th) = (0.0f64, 0.0f64, theta0);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            th -= lr * mh / (vh.sqrt() + 1e-8);
        }
        th
    }

    #[test]
    fn adam_examples() {
        let s = AdamState::new(2);
        let (_, th) = adam_step(&s, &[1.0, 2.0], &[0.0, 0.0], 0.3).unwrap();
        assert_eq!(th, vec![1.0, 2.0]);

        let (_, th) = adam_step(&AdamState::new(1), &[0.0], &[5.0], 0.3).unwrap();
        assert!(th[0] < 0.0 && th[0].abs() <= 0.3 + 1e-12);

        let grads = [0.7, -1.3, 0.2];
        let mut state = AdamState::new(1);
        let mut th = vec![0.5];
        for g in grads {
            let (s2, t2) = adam_step(&state, &th, &[g], 0.1).unwrap();
            state = s2;
            th = t2;
        }
        assert!((th[0] - reference_adam(0.5, &grads, 0.1)).abs() < 1e-14);
        assert!(adam_step(&state, &[0.0, 1.0], &[1.0], 0.1).is_err());
    }

    #[test]
    fn quadratic_converges() {
        // loss (θ − 1.5)² + 2(φ + 0.4)², batch ignored
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let target = [1.5, -0.4];
        let loss = |t: &[f64]| Ok((t[0] - target[0]).powi(2) + 2.0 * (t[1] - target[1]).powi(2));
        let grad = |t: &[f64], _: &[usize]| Ok(vec![2.0 * (t[0] - 1.5), 4.0 * (t[1] + 0.4)]);
        let r = minimize(vec![0.0, 0.0], 10, &cfg, loss, grad).unwrap();
        assert!(r.steps <= 200);
        assert!(r.best_loss < 1e-4);
        assert!((r.best_params[0] - 1.5).abs() < 1e-2);
        assert!((r.best_params[1] + 0.4).abs() < 1e-2);
    }

    #[test]
    fn flat_objective_converges_after_window() {
        let cfg = TrainConfig::default();
        let r = minimize(vec![0.0], 5, &cfg, |_| Ok(1.0), |_, _| Ok(vec![0.0])).unwrap();
        assert!(r.converged);
        assert_eq!(r.steps, 10);
        assert_eq!(r.loss_history.len(), r.steps);
    }

    #[test]
    fn training_is_deterministic_and_tracks_best() {
        let m = mixed_model();
        let data: Vec<Example> = (0..12)
            .map(|i| {
                let x = 0.5 * i as f64;
                Example::new(vec![x], 0.3 * x.cos())
            })
            .collect();
        let cfg = TrainConfig {
            max_steps: 15,
            ..TrainConfig::default()
        };
        let a = train(&m, &cfg, &data).unwrap();
        let b = train(&m, &cfg, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.initial_params[5], 0.7);
        let min = a.loss_history.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((a.best_loss - min).abs() < 1e-14);
        let recomputed = mse_loss(&m, &a.best_params, &data).unwrap();
        assert!((recomputed - min).abs() < 1e-14);
        assert!(a.loss_history.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn batch_sizes() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size(70), 49);
        assert_eq!(cfg.batch_size(10), 7);
        let cfg = TrainConfig {
            batch_fraction: 16.0 / 70.0,
            ..cfg
        };
        assert_eq!(cfg.batch_size(70), 16);
        assert!(TrainConfig {
            batch_fraction: 0.0,
            ..cfg
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn shift_matches_finite_difference(theta in prop::collection::vec(-3.2..3.2f64, 7), x in -6.0..6.0f64) {
            let m = mixed_model();
            for j in 1..4 {
                let ps = parameter_shift_grad(&m, &theta, &[x], j).unwrap();
                let fd = finite_difference_grad(&m, &theta, &[x], j, FD_STEP).unwrap();
                let tol = if ps.abs() > 1.0 { 1e-4 * ps.abs() } else { 1e-6 };
                prop_assert!((ps - fd).abs() < tol);
            }
        }
    }
}
