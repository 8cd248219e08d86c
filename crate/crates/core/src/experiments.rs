//! Regression studies: Fourier-series targets, the single-feature model
//! families, and training reports over several seeds.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI};

use crate::circuit::{CircuitOp, ModelBuilder, ModelSpec, ParamRef};
use crate::error::{Error, Result};
use crate::expressibility::{kl_expressibility, sample_fidelities, DEFAULT_BINS};
use crate::parallel::{map_indexed, stream_rng};
use crate::qcnn::{build_qcnn, QcnnSpec};
use crate::residual::{strategy_from_kind, ResidualKind};
use crate::simcore::{GateKind, Observable, C64};
use crate::spectrum::{default_grid, extract_coefficients, model_spectrum, FREQ_TOL};
use crate::train::{
    finite_difference_grad, mse_loss, output_gradient, parameter_shift_grad, train, Example,
    GradientMode, TrainConfig, FD_STEP,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub frequency: f64,
    /// `[re, im]`
    pub amplitude: C64,
}

/// `y(x) = Σ (a e^{iωx} + a* e^{−iωx})`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTarget {
    pub name: String,
    pub terms: Vec<FourierTerm>,
}

impl FourierTarget {
    pub fn new(name: impl Into<String>, terms: &[(f64, C64)]) -> Result<Self> {
        let t = FourierTarget {
            name: name.into(),
            terms: terms
                .iter()
                .map(|&(frequency, amplitude)| FourierTerm {
                    frequency,
                    amplitude,
                })
                .collect(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Empty(format!("target '{}' has no terms", self.name)));
        }
        for (i, a) in self.terms.iter().enumerate() {
            if !(a.frequency >= 0.0) || !a.frequency.is_finite() {
                return Err(Error::Validation(format!(
                    "target frequency {} must be finite and non-negative",
                    a.frequency
                )));
            }
            if self.terms[..i]
                .iter()
                .any(|b| (a.frequency - b.frequency).abs() <= FREQ_TOL)
            {
                return Err(Error::Validation(format!(
                    "duplicate target frequency {}",
                    a.frequency
                )));
            }
        }
        Ok(())
    }

    /// Complex sum before discarding the (vanishing) imaginary part.
    pub fn eval_complex(&self, x: f64) -> C64 {
        self.terms
            .iter()
            .map(|t| {
                let e = C64::from_polar(1.0, t.frequency * x);
                t.amplitude * e + t.amplitude.conj() * e.conj()
            })
            .sum()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_complex(x).re
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.frequency).collect()
    }

    /// Coefficient `c_ω` of `e^{iωx}` in the series (`2 Re a` at `ω = 0`).
    pub fn coefficient(&self, w: f64) -> C64 {
        self.terms
            .iter()
            .find(|t| (t.frequency - w.abs()).abs() <= FREQ_TOL)
            .map(|t| {
                if t.frequency.abs() <= FREQ_TOL {
                    C64::new(2.0 * t.amplitude.re, 0.0)
                } else if w >= 0.0 {
                    t.amplitude
                } else {
                    t.amplitude.conj()
                }
            })
            .unwrap_or_default()
    }
}

/// Names accepted by [`target_by_name`].
pub const TARGET_NAMES: [&str; 4] = ["y1_omega1", "y1_omega2", "y2_omega2", "y2_omega3"];

/// The four regression targets.
///
/// * `y1_omega1`: frequencies {0, 1}, common amplitude `0.1 + 0.1i`.
/// * `y1_omega2`: frequencies {0, 1, 0.5}, common amplitude `0.1 + 0.1i`.
/// * `y2_omega2`: frequencies {0, 1, 0.5}, real amplitudes 0.1, 0.08, 0.12.
/// * `y2_omega3`: frequencies {0, 1, 0.5, 1.5, 2}; `a_0 = 0.1`,
///   `a_1 = a_0.5 = 0.03 + 0.03i`, `a_1.5 = a_2 = 0.15 + 0.15i`.
pub fn make_targets() -> Vec<FourierTarget> {
    TARGET_NAMES
        .iter()
        .map(|n| target_by_name(n).expect("built-in target"))
        .collect()
}

pub fn target_by_name(name: &str) -> Result<FourierTarget> {
    let a = C64::new(0.1, 0.1);
    let r = |v: f64| C64::new(v, 0.0);
    match name {
        "y1_omega1" => FourierTarget::new(name, &[(0.0, a), (1.0, a)]),
        "y1_omega2" => FourierTarget::new(name, &[(0.0, a), (1.0, a), (0.5, a)]),
        "y2_omega2" => FourierTarget::new(name, &[(0.0, r(0.1)), (1.0, r(0.08)), (0.5, r(0.12))]),
        "y2_omega3" => {
            let small = C64::new(0.03, 0.03);
            let big = C64::new(0.15, 0.15);
            FourierTarget::new(
                name,
                &[
                    (0.0, r(0.1)),
                    (1.0, small),
                    (0.5, small),
                    (1.5, big),
                    (2.0, big),
                ],
            )
        }
        other => Err(Error::Validation(format!(
            "unknown target '{other}' (known: {})",
            TARGET_NAMES.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Every layer re-uploads on qubit 0.
    #[default]
    Sequential,
    /// One qubit per layer.
    Parallel,
}

/// A named built-in target or explicit terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Named(String),
    Explicit(FourierTarget),
}

impl TargetSpec {
    pub fn resolve(&self) -> Result<FourierTarget> {
        match self {
            TargetSpec::Named(n) => target_by_name(n),
            TargetSpec::Explicit(t) => {
                t.validate()?;
                Ok(t.clone())
            }
        }
    }
}

/// Uniform sample points on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub start: f64,
    pub end: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 70,
            start: 0.0,
            end: 4.0 * PI,
        }
    }
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        let h = (self.end - self.start) / self.points as f64;
        (0..self.points)
            .map(|i| self.start + h * i as f64)
            .collect()
    }
}

fn default_repetitions() -> usize {
    5
}

fn default_layers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub encoding: ResidualKind,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub layout: Layout,
    pub target: TargetSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Runs use seeds `train.seed .. train.seed + repetitions`.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

impl ExperimentSpec {
    pub fn new(name: impl Into<String>, encoding: ResidualKind, target: &str) -> Self {
        ExperimentSpec {
            name: name.into(),
            encoding,
            layers: 1,
            layout: Layout::Sequential,
            target: TargetSpec::Named(target.into()),
            grid: GridSpec::default(),
            train: TrainConfig::default(),
            repetitions: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Validation("layers must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Validation("repetitions must be at least 1".into()));
        }
        if self.grid.points == 0 || !(self.grid.end > self.grid.start) {
            return Err(Error::Validation(
                "grid needs points and end > start".into(),
            ));
        }
        self.train.validate()?;
        self.target.resolve().map(|_| ())
    }
}

fn rot_block(b: &mut ModelBuilder, qubit: usize, tag: &str) {
    let p1 = b.param(format!("{tag}.rz1"));
    let p2 = b.param(format!("{tag}.ry"));
    let p3 = b.param(format!("{tag}.rz2"));
    b.gate(GateKind::Rz, &[qubit], &[p1])
        .gate(GateKind::Ry, &[qubit], &[p2])
        .gate(GateKind::Rz, &[qubit], &[p3]);
}

fn encoding(b: &mut ModelBuilder, kind: ResidualKind, qubit: usize, k: usize) -> Result<()> {
    let alpha =
        matches!(kind, ResidualKind::R1 | ResidualKind::R2).then(|| b.param(format!("alpha{k}")));
    let gamma = (kind == ResidualKind::R2).then(|| b.param(format!("gamma{k}")));
    let strategy = strategy_from_kind(kind, alpha, gamma)?;
    b.residual(
        strategy,
        CircuitOp::new(GateKind::Ry, vec![qubit], vec![ParamRef::Feature(0)]),
    );
    Ok(())
}

/// Builds the regression model.
///
/// Sequential: `W_0 E W_1 E … W_l` on one qubit, with `W = Rz·Ry·Rz` and `E`
/// the (possibly residual) `Ry(x)` encoding. Parallel: `W E W` on each of `l`
/// qubits, a ZZ chain, then a final `W` on qubit 0. The readout is σz on
/// qubit 0.
pub fn build_regression_model(
    kind: ResidualKind,
    layers: usize,
    layout: Layout,
) -> Result<ModelSpec> {
    if layers == 0 {
        return Err(Error::Validation("layers must be at least 1".into()));
    }
    match layout {
        Layout::Sequential => {
            let mut b = ModelBuilder::new(1, 1);
            rot_block(&mut b, 0, "w0");
            for k in 0..layers {
                encoding(&mut b, kind, 0, k)?;
                rot_block(&mut b, 0, &format!("w{}", k + 1));
            }
            b.build(Observable::z_on(1, 0))
        }
        Layout::Parallel => {
            if layers < 2 {
                return Err(Error::Validation(
                    "parallel layout needs at least two layers".into(),
                ));
            }
            let mut b = ModelBuilder::new(layers, 1);
            for q in 0..layers {
                rot_block(&mut b, q, &format!("pre{q}"));
                encoding(&mut b, kind, q, q)?;
                rot_block(&mut b, q, &format!("post{q}"));
            }
            for q in 0..layers - 1 {
                let t = b.param(format!("zz{q}"));
                b.gate(GateKind::ZZ, &[q, q + 1], &[t]);
            }
            rot_block(&mut b, 0, "out");
            b.build(Observable::z_on(layers, 0))
        }
    }
}

pub fn build_for_spec(spec: &ExperimentSpec) -> Result<ModelSpec> {
    build_regression_model(spec.encoding, spec.layers, spec.layout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mse: f64,
    pub steps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub target: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub frequency: f64,
    pub target: C64,
    pub fitted: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub name: String,
    pub encoding: ResidualKind,
    pub layers: usize,
    pub layout: Layout,
    pub target: String,
    pub n_params: usize,
    /// Non-negative frequencies the model can produce.
    pub spectrum: Vec<f64>,
    pub runs: Vec<RunSummary>,
    pub best_seed: u64,
    pub best_mse: f64,
    pub median_mse: f64,
    pub best_steps: usize,
    pub best_params: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub coefficients: Vec<CoefficientRow>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn regression_data(target: &FourierTarget, grid: &GridSpec) -> Vec<Example> {
    grid.values()
        .into_iter()
        .map(|x| Example::new(vec![x], target.eval(x)))
        .collect()
}

/// Trains one model per seed and reports the best run in detail.
pub fn run_fit(spec: &ExperimentSpec) -> Result<FitReport> {
    spec.validate()?;
    let target = spec.target.resolve()?;
    let model = build_for_spec(spec)?;
    let data = regression_data(&target, &spec.grid);
    let results = map_indexed(spec.repetitions, |r| {
        let cfg = TrainConfig {
            seed: spec.train.seed + r as u64,
            ..spec.train.clone()
        };
        train(&model, &cfg, &data).map(|res| (cfg.seed, res))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut runs = Vec::with_capacity(results.len());
    for (seed, res) in &results {
        runs.push(RunSummary {
            seed: *seed,
            mse: mse_loss(&model, &res.best_params, &data)?,
            steps: res.steps,
            converged: res.converged,
        });
    }
    let best_idx = (0..runs.len())
        .min_by(|&a, &b| runs[a].mse.total_cmp(&runs[b].mse))
        .expect("at least one run");
    let best = &results[best_idx].1;
    let theta = &best.best_params;

    let curve = data
        .iter()
        .map(|ex| {
            Ok(CurvePoint {
                x: ex.x[0],
                target: ex.y,
                prediction: model.evaluate(&ex.x, theta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let spectrum = model_spectrum(&model)?.non_negative();
    let mut freqs = spectrum.clone();
    freqs.extend(target.frequencies());
    let mut freqs: Vec<f64> = freqs;
    freqs.sort_by(|a, b| a.total_cmp(b));
    freqs.dedup_by(|a, b| (*a - *b).abs() <= FREQ_TOL);
    let grid = default_grid(&freqs)?;
    let fit = extract_coefficients(|x| model.evaluate(&[x], theta), &freqs, &grid)?;
    let coefficients = fit
        .frequencies
        .iter()
        .zip(&fit.coefficients)
        .map(|(&w, &c)| CoefficientRow {
            frequency: w,
            target: target.coefficient(w),
            fitted: c,
        })
        .collect();

    let mses: Vec<f64> = runs.iter().map(|r| r.mse).collect();
    Ok(FitReport {
        name: spec.name.clone(),
        encoding: spec.encoding,
        layers: spec.layers,
        layout: spec.layout,
        target: target.name.clone(),
        n_params: model.n_params(),
        spectrum,
        best_seed: runs[best_idx].seed,
        best_mse: runs[best_idx].mse,
        median_mse: median(&mses),
        best_steps: best.steps,
        best_params: theta.clone(),
        loss_history: best.loss_history.clone(),
        runs,
        curve,
        coefficients,
    })
}

/// Expressibility of one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressibilityRow {
    pub encoding: ResidualKind,
    pub kl: f64,
    pub n_pairs: usize,
    pub bins: usize,
}

/// KL expressibility of the one-layer regression models at input `x`.
pub fn expressibility_table(
    kinds: &[ResidualKind],
    n_pairs: usize,
    seed: u64,
    x: f64,
    bins: usize,
) -> Result<Vec<ExpressibilityRow>> {
    kinds
        .iter()
        .map(|&kind| {
            let model = build_regression_model(kind, 1, Layout::Sequential)?;
            let f = sample_fidelities(&model, n_pairs, seed, &[x])?;
            Ok(ExpressibilityRow {
                encoding: kind,
                kl: kl_expressibility(&f, bins, 1 << model.n_qubits())?,
                n_pairs,
                bins,
            })
        })
        .collect()
}

/// Default arguments of [`expressibility_table`].
pub const EXPRESSIBILITY_DEFAULTS: (usize, u64, f64, usize) = (1000, 0, 1.0, DEFAULT_BINS);

/// Residual angles that make R1 and R2 equal to R.
pub const PLAIN_RESIDUAL_ANGLES: (f64, f64) = (FRAC_PI_4, -FRAC_PI_4);

/// Agreement of one model's gradient rules at random points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub model: String,
    pub shift_partials: usize,
    pub other_partials: usize,
    /// Max `|shift − finite difference|` over shift-eligible partials.
    pub max_shift_deviation: f64,
    /// Max `|adjoint − finite difference|` over all partials.
    pub max_adjoint_deviation: f64,
}

/// Every model used by the regression and classification studies, by name.
pub fn study_models() -> Result<Vec<(String, ModelSpec)>> {
    let mut out = Vec::new();
    for kind in ResidualKind::ALL {
        for (layers, layout) in [
            (1, Layout::Sequential),
            (2, Layout::Sequential),
            (2, Layout::Parallel),
        ] {
            let name = format!(
                "{}-{layers}-{}",
                kind.name(),
                if layout == Layout::Parallel {
                    "parallel"
                } else {
                    "sequential"
                }
            );
            out.push((name, build_regression_model(kind, layers, layout)?));
        }
    }
    out.push(("qcnn".into(), build_qcnn(&QcnnSpec::default())?));
    out.push((
        "qcnn-q0q2".into(),
        build_qcnn(&QcnnSpec::with_residual(&[0, 2]))?,
    ));
    Ok(out)
}

/// Compares shift-rule, adjoint and central-difference partials of every
/// study model at `draws` random `(x, θ)` points from `seed`.
pub fn gradient_check(seed: u64, draws: usize) -> Result<Vec<GradCheckRow>> {
    let models = study_models()?;
    map_indexed(models.len(), |i| {
        let (name, m) = &models[i];
        let mut rng = stream_rng(seed, i as u64);
        let mut row = GradCheckRow {
            model: name.clone(),
            shift_partials: 0,
            other_partials: 0,
            max_shift_deviation: 0.0,
            max_adjoint_deviation: 0.0,
        };
        for _ in 0..draws {
            let theta: Vec<f64> = (0..m.n_params())
                .map(|_| rng.gen_range(0.0..2.0 * PI))
                .collect();
            let x: Vec<f64> = (0..m.n_features())
                .map(|_| rng.gen_range(0.0..PI))
                .collect();
            let (_, adjoint) = output_gradient(m, &theta, &x, GradientMode::Adjoint)?;
            for (j, adj) in adjoint.iter().enumerate() {
                let fd = finite_difference_grad(m, &theta, &x, j, FD_STEP)?;
                if m.shift_eligible(j) {
                    let ps = parameter_shift_grad(m, &theta, &x, j)?;
                    row.max_shift_deviation = row.max_shift_deviation.max((ps - fd).abs());
                    row.shift_partials += 1;
                } else {
                    row.other_partials += 1;
                }
                row.max_adjoint_deviation = row.max_adjoint_deviation.max((adj - fd).abs());
            }
        }
        Ok(row)
    })
    .into_iter()
    .collect()
}
