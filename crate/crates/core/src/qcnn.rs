//! Four-qubit QCNN binary classifier with optional residual encoding on
//! selected qubits.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

use crate::circuit::{CircuitOp, ModelBuilder, ModelSpec, ParamRef};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::residual::ResidualStrategy;
use crate::simcore::{GateKind, Observable};
use crate::train::{loss_value, train, Example, GradientMode, LossKind, TrainConfig};

pub const QCNN_QUBITS: usize = 4;
pub const ANSATZ_PARAMS: usize = 20;

const RING: [(usize, usize); 4] = [(0, 1), (1, 2), (2, 3), (3, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcnnSpec {
    pub n_qubits: usize,
    /// Qubits whose `Ry(x_q)` encoding is wrapped in a trainable R2 block.
    pub residual_qubits: Vec<usize>,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub repetitions: usize,
    /// Repetition `r` trains with seed `seed + r`.
    pub seed: u64,
    /// Digit whose samples get label 1; the other digit gets label 0.
    pub positive_class: u8,
    pub classes: [u8; 2],
    /// Stratified training subset size; `None` trains on everything.
    pub train_subset: Option<usize>,
    pub subset_seed: u64,
    pub gradient_mode: GradientMode,
}

impl Default for QcnnSpec {
    fn default() -> Self {
        QcnnSpec {
            n_qubits: QCNN_QUBITS,
            residual_qubits: Vec::new(),
            epsilon: 0.1,
            learning_rate: 0.2,
            iterations: 100,
            repetitions: 20,
            seed: 0,
            positive_class: 0,
            classes: [0, 1],
            train_subset: None,
            subset_seed: 0,
            gradient_mode: GradientMode::Adjoint,
        }
    }
}

impl QcnnSpec {
    pub fn with_residual(qubits: &[usize]) -> Self {
        QcnnSpec {
            residual_qubits: qubits.to_vec(),
            ..QcnnSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits != QCNN_QUBITS {
            return Err(Error::Validation(format!(
                "QCNN supports {QCNN_QUBITS} qubits, got {}",
                self.n_qubits
            )));
        }
        let mut seen = [false; QCNN_QUBITS];
        for &q in &self.residual_qubits {
            if q >= QCNN_QUBITS || std::mem::replace(&mut seen[q], true) {
                return Err(Error::Validation(format!(
                    "bad residual qubit list {:?}",
                    self.residual_qubits
                )));
            }
        }
        check_epsilon(self.epsilon)?;
        if !(self.learning_rate > 0.0) || self.iterations == 0 || self.repetitions == 0 {
            return Err(Error::Validation(
                "learning_rate, iterations and repetitions must be positive".into(),
            ));
        }
        if self.classes[0] == self.classes[1] || !self.classes.contains(&self.positive_class) {
            return Err(Error::Validation(format!(
                "positive class {} not one of two distinct classes {:?}",
                self.positive_class, self.classes
            )));
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_steps: self.iterations,
            batch_fraction: 1.0,
            convergence_window: 2,
            convergence_variance: 0.0,
            seed,
            gradient_mode: self.gradient_mode,
            loss: LossKind::AbsMse,
        }
    }

    pub fn label_of(&self, digit: u8) -> f64 {
        if digit == self.positive_class {
            1.0
        } else {
            0.0
        }
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 0.5 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "boundary precision {eps} outside (0, 0.5]"
        )))
    }
}

fn conv(b: &mut ModelBuilder, qubits: &[usize], pairs: &[(usize, usize)], t: &[ParamRef]) {
    for &q in qubits {
        b.gate(GateKind::U3, &[q], &t[0..3]);
    }
    for &(a, c) in pairs {
        b.gate(GateKind::ZZ, &[a, c], &t[3..4]);
    }
    for &q in qubits {
        b.gate(GateKind::U3, &[q], &t[4..7]);
    }
}

/// Encoding `Ry(x_q)` per qubit, then conv on all four qubits, pooling
/// 1→0 and 3→2, conv on (0, 2), pooling 2→0, readout `σz` on qubit 0.
///
/// Parameters `0..20` are the ansatz; each residual qubit appends its
/// `alpha`, `gamma` pair, initialized at `(π/4, −π/4)`.
pub fn build_qcnn(spec: &QcnnSpec) -> Result<ModelSpec> {
    spec.validate()?;
    let mut b = ModelBuilder::new(QCNN_QUBITS, QCNN_QUBITS);
    let names = [
        "u3a.theta",
        "u3a.phi",
        "u3a.lambda",
        "zz",
        "u3b.theta",
        "u3b.phi",
        "u3b.lambda",
    ];
    let conv1: Vec<ParamRef> = names
        .iter()
        .map(|n| b.param(format!("conv1.{n}")))
        .collect();
    let pool1: Vec<ParamRef> = ["theta", "phi", "lambda"]
        .iter()
        .map(|n| b.param(format!("pool1.{n}")))
        .collect();
    let conv2: Vec<ParamRef> = names
        .iter()
        .map(|n| b.param(format!("conv2.{n}")))
        .collect();
    let pool2: Vec<ParamRef> = ["theta", "phi", "lambda"]
        .iter()
        .map(|n| b.param(format!("pool2.{n}")))
        .collect();
    for q in 0..QCNN_QUBITS {
        let enc = CircuitOp::new(GateKind::Ry, vec![q], vec![ParamRef::Feature(q)]);
        if spec.residual_qubits.contains(&q) {
            let alpha = b.param_with_init(format!("alpha{q}"), Some(FRAC_PI_4));
            let gamma = b.param_with_init(format!("gamma{q}"), Some(-FRAC_PI_4));
            b.residual(ResidualStrategy::R2 { alpha, gamma }, enc);
        } else {
            b.gate(enc.kind, &enc.targets, &enc.params);
        }
    }
    conv(&mut b, &[0, 1, 2, 3], &RING, &conv1);
    b.gate(GateKind::ControlledU3, &[1, 0], &pool1);
    b.gate(GateKind::ControlledU3, &[3, 2], &pool1);
    conv(&mut b, &[0, 2], &[(0, 2)], &conv2);
    b.gate(GateKind::ControlledU3, &[2, 0], &pool2);
    b.build(Observable::z_on(QCNN_QUBITS, 0))
}

/// `Σ (|⟨σz⟩| − y)² / 2D`
pub fn qcnn_cost(model: &ModelSpec, theta: &[f64], data: &[Example]) -> Result<f64> {
    if let Some(ex) = data.iter().find(|e| e.y != 0.0 && e.y != 1.0) {
        return Err(Error::Validation(format!("label {} not in {{0, 1}}", ex.y)));
    }
    loss_value(model, theta, data, LossKind::AbsMse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Zero,
    One,
    Unclassifiable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub expectation: f64,
    pub label: Label,
}

/// 1 when `|e| > 1 − ε`, 0 when `|e| < ε`, otherwise unclassifiable.
pub fn classify(expectation: f64, epsilon: f64) -> Result<Prediction> {
    check_epsilon(epsilon)?;
    let m = expectation.abs();
    let label = if m > 1.0 - epsilon {
        Label::One
    } else if m < epsilon {
        Label::Zero
    } else {
        Label::Unclassifiable
    };
    Ok(Prediction { expectation, label })
}

/// Fraction of predictions equal to their label; unclassifiable counts as
/// wrong.
pub fn accuracy(predictions: &[Prediction], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &y)| match p.label {
            Label::One => y == 1.0,
            Label::Zero => y == 0.0,
            Label::Unclassifiable => false,
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn predict(
    model: &ModelSpec,
    theta: &[f64],
    data: &[Example],
    epsilon: f64,
) -> Result<Vec<Prediction>> {
    map_indexed(data.len(), |i| {
        classify(model.evaluate(&data[i].x, theta)?, epsilon)
    })
    .into_iter()
    .collect()
}

/// Examples with digit labels mapped to `{0, 1}`.
pub fn to_examples(spec: &QcnnSpec, data: &Dataset) -> Vec<Example> {
    data.features
        .iter()
        .zip(&data.labels)
        .map(|(x, &d)| Example::new(x.clone(), spec.label_of(d)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcnnRun {
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub best_cost: f64,
    pub cost_curve: Vec<f64>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcnnReport {
    pub spec: QcnnSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub n_params: usize,
    pub runs: Vec<QcnnRun>,
    pub mean_train_accuracy: f64,
    pub mean_test_accuracy: f64,
    /// Per-step mean of the repetitions' cost curves.
    pub mean_cost_curve: Vec<f64>,
}

/// Trains `spec.repetitions` models from independent random starts and
/// scores each on both sets with the best-cost parameters.
pub fn run_mnist_experiment(
    spec: &QcnnSpec,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<QcnnReport> {
    let model = build_qcnn(spec)?;
    let (train_data, test_data) = (to_examples(spec, train_set), to_examples(spec, test_set));
    if train_data.is_empty() || test_data.is_empty() {
        return Err(Error::Empty("MNIST split".into()));
    }
    if train_set.n_features() != QCNN_QUBITS || test_set.n_features() != QCNN_QUBITS {
        return Err(Error::Dimension(format!(
            "QCNN expects {QCNN_QUBITS} features"
        )));
    }
    let ytr: Vec<f64> = train_data.iter().map(|e| e.y).collect();
    let yte: Vec<f64> = test_data.iter().map(|e| e.y).collect();
    let runs = map_indexed(spec.repetitions, |r| -> Result<QcnnRun> {
        let seed = spec.seed + r as u64;
        let fit = train(&model, &spec.train_config(seed), &train_data)?;
        let p = &fit.best_params;
        Ok(QcnnRun {
            seed,
            train_accuracy: accuracy(&predict(&model, p, &train_data, spec.epsilon)?, &ytr)?,
            test_accuracy: accuracy(&predict(&model, p, &test_data, spec.epsilon)?, &yte)?,
            best_cost: fit.best_loss,
            cost_curve: fit.loss_history,
            params: fit.best_params,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let steps = runs.iter().map(|r| r.cost_curve.len()).min().unwrap_or(0);
    Ok(QcnnReport {
        spec: spec.clone(),
        n_train: train_data.len(),
        n_test: test_data.len(),
        n_params: model.n_params(),
        mean_train_accuracy: runs.iter().map(|r| r.train_accuracy).sum::<f64>() / n,
        mean_test_accuracy: runs.iter().map(|r| r.test_accuracy).sum::<f64>() / n,
        mean_cost_curve: (0..steps)
            .map(|s| runs.iter().map(|r| r.cost_curve[s]).sum::<f64>() / n)
            .collect(),
        runs,
    })
}
