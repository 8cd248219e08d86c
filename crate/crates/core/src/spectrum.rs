//! Frequency spectra of encoded models and Fourier-coefficient recovery.
//!
//! A model whose input enters through gates `e^{-ixG}` outputs a finite
//! Fourier series in `x`. Its frequencies are differences of eigenvalue sums
//! of the generators; a residual wrapper adds the identity channel, which
//! lets a layer contribute nothing to either side of the difference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::circuit::{ModelSpec, ParamRef};
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, stream_rng};
use crate::simcore::{GateKind, C64};
use rand::Rng;

/// Absolute tolerance for treating two frequencies as equal.
pub const FREQ_TOL: f64 = 1e-9;
/// Upper bound on `d^l` for exhaustive enumeration.
pub const ENUMERATION_CAP: f64 = 1e6;
/// Largest acceptable condition estimate of the normal matrix.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub eigenvalues: Vec<f64>,
    pub label: String,
}

impl GeneratorSpec {
    pub fn new(eigenvalues: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Empty("generator has no eigenvalues".into()));
        }
        if eigenvalues.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("non-finite eigenvalue".into()));
        }
        Ok(GeneratorSpec {
            eigenvalues,
            label: label.into(),
        })
    }

    /// Generator of a Pauli rotation `e^{-ixσ/2}`: eigenvalues ±1/2.
    pub fn pauli_rotation() -> Self {
        GeneratorSpec {
            eigenvalues: vec![-0.5, 0.5],
            label: "sigma/2".into(),
        }
    }
}

/// `⟨l1, l2⟩`: a sum of `l1` eigenvalues minus a sum of `l2` eigenvalues,
/// closed under negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrequencyForm {
    pub l1: usize,
    pub l2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Ascending, deduplicated, symmetric about zero.
    pub frequencies: Vec<f64>,
    pub forms: Vec<FrequencyForm>,
}

impl Spectrum {
    fn from_values(values: Vec<f64>, forms: Vec<FrequencyForm>) -> Self {
        let sym: Vec<f64> = values.iter().flat_map(|&w| [w, -w]).collect();
        Spectrum {
            frequencies: dedup_sorted(sym),
            forms,
        }
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn contains(&self, w: f64) -> bool {
        let i = self.frequencies.partition_point(|&f| f < w - FREQ_TOL);
        i < self.frequencies.len() && (self.frequencies[i] - w).abs() <= FREQ_TOL
    }

    /// Frequencies `≥ 0`, ascending.
    pub fn non_negative(&self) -> Vec<f64> {
        self.frequencies
            .iter()
            .copied()
            .filter(|&w| w > -FREQ_TOL)
            .map(|w| w.max(0.0))
            .collect()
    }

    pub fn is_superset_of(&self, other: &Spectrum) -> bool {
        other.frequencies.iter().all(|&w| self.contains(w))
    }
}

fn dedup_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for w in v {
        match out.last() {
            Some(&last) if (w - last).abs() <= FREQ_TOL => {}
            _ => out.push(if w.abs() <= FREQ_TOL { 0.0 } else { w }),
        }
    }
    out
}

fn check_cap(d: usize, l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::Validation("layer count must be at least 1".into()));
    }
    if (d as f64).powi(l as i32) > ENUMERATION_CAP {
        return Err(Error::Capacity(format!(
            "{d}^{l} eigenvalue combinations exceed the enumeration cap"
        )));
    }
    Ok(())
}

/// All sums of `k` eigenvalues, `k = 0..=l` (index `k`).
fn sums_up_to(eigs: &[f64], l: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0]];
    for k in 1..=l {
        let prev = &out[k - 1];
        let next: Vec<f64> = prev
            .iter()
            .flat_map(|&s| eigs.iter().map(move |&w| s + w))
            .collect();
        out.push(dedup_sorted(next));
    }
    out
}

fn differences(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| x - y))
        .collect()
}

/// Frequencies of `l` stacked plain encodings.
pub fn traditional_spectrum(gen: &GeneratorSpec, l: usize) -> Result<Spectrum> {
    check_cap(gen.eigenvalues.len(), l)?;
    let sums = sums_up_to(&gen.eigenvalues, l);
    Ok(Spectrum::from_values(
        differences(&sums[l], &sums[l]),
        vec![FrequencyForm { l1: l, l2: l }],
    ))
}

/// `{⟨a,b⟩ : ⌈l/2⌉ ≤ a ≤ l, b ≤ a, a + b ≥ l}`.
pub fn residual_forms(l: usize) -> Vec<FrequencyForm> {
    let mut out = Vec::new();
    for a in l.div_ceil(2)..=l {
        for b in (l - a)..=a {
            out.push(FrequencyForm { l1: a, l2: b });
        }
    }
    out.sort_by(|x, y| y.cmp(x));
    out
}

/// `(⌈l/2⌉ + 1)(⌊l/2⌋ + 1)`
pub fn form_count(l: usize) -> usize {
    (l.div_ceil(2) + 1) * (l / 2 + 1)
}

/// Frequencies of `l` stacked residual encodings.
pub fn residual_spectrum(gen: &GeneratorSpec, l: usize) -> Result<Spectrum> {
    check_cap(gen.eigenvalues.len(), l)?;
    let sums = sums_up_to(&gen.eigenvalues, l);
    let forms = residual_forms(l);
    let values = forms
        .iter()
        .flat_map(|f| differences(&sums[f.l1], &sums[f.l2]))
        .collect();
    Ok(Spectrum::from_values(values, forms))
}

/// Whether a single residual layer adds frequencies: some `|w_k|` is not a
/// pairwise gap `|w_j − w_l|`.
pub fn enrichment_condition(gen: &GeneratorSpec) -> bool {
    let gaps: Vec<f64> = differences(&gen.eigenvalues, &gen.eigenvalues)
        .into_iter()
        .map(f64::abs)
        .collect();
    gen.eigenvalues
        .iter()
        .any(|w| !gaps.iter().any(|g| (g - w.abs()).abs() <= FREQ_TOL))
}

fn encoding_generator(kind: &GateKind, params: &[ParamRef]) -> Result<Vec<f64>> {
    let feature_param = matches!(params, [ParamRef::Feature(_)]);
    match kind {
        GateKind::Ry | GateKind::Rz | GateKind::ZZ if feature_param => Ok(vec![-0.5, 0.5]),
        other => Err(Error::NotApplicable(format!(
            "no known generator for input encoded through {}",
            other.name()
        ))),
    }
}

/// Frequencies reachable by a single-feature model: the Minkowski sum over
/// encoding gates of `{e − e'}`, where `e, e'` range over the generator
/// eigenvalues and additionally 0 for residual encodings.
pub fn model_spectrum(model: &ModelSpec) -> Result<Spectrum> {
    if model.n_features() != 1 {
        return Err(Error::NotApplicable(
            "spectrum analysis needs exactly one input feature".into(),
        ));
    }
    let mut acc = vec![0.0];
    for (_, op, residual) in model.encoding_blocks() {
        let mut eigs = encoding_generator(&op.kind, &op.params)?;
        if residual {
            eigs.push(0.0);
        }
        let step = dedup_sorted(differences(&eigs, &eigs));
        acc = dedup_sorted(
            acc.iter()
                .flat_map(|&a| step.iter().map(move |&s| a + s))
                .collect(),
        );
    }
    Ok(Spectrum::from_values(acc, Vec::new()))
}

/// Least-squares Fourier fit `f(x) ≈ Σ c_ω e^{iωx}` with `c_{−ω} = c_ω*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFit {
    /// Non-negative frequencies, ascending; the first is 0.
    pub frequencies: Vec<f64>,
    pub coefficients: Vec<C64>,
    /// Root-mean-square residual over the grid.
    pub residual_rms: f64,
    /// Condition estimate of the normal matrix.
    pub condition: f64,
}

impl CoefficientFit {
    pub fn get(&self, w: f64) -> Option<C64> {
        let w = w.abs();
        self.frequencies
            .iter()
            .position(|&f| (f - w).abs() <= FREQ_TOL)
            .map(|i| self.coefficients[i])
    }
}

fn fold_candidates(candidates: &[f64]) -> Result<Vec<f64>> {
    for (i, a) in candidates.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::Validation("non-finite candidate frequency".into()));
        }
        if candidates[..i].iter().any(|b| (a - b).abs() <= FREQ_TOL) {
            return Err(Error::Validation(format!(
                "duplicate candidate frequency {a}"
            )));
        }
    }
    let mut all: Vec<f64> = candidates.iter().map(|w| w.abs()).collect();
    all.push(0.0);
    Ok(dedup_sorted(all))
}

/// Fits samples `ys` taken at `grid`.
pub fn fit_fourier(grid: &[f64], ys: &[f64], candidates: &[f64]) -> Result<CoefficientFit> {
    if grid.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "{} grid points, {} samples",
            grid.len(),
            ys.len()
        )));
    }
    let freqs = fold_candidates(candidates)?;
    let unknowns = 2 * freqs.len() - 1;
    if grid.len() < unknowns {
        return Err(Error::Validation(format!(
            "{} grid points for {unknowns} unknowns",
            grid.len()
        )));
    }
    // columns: 1, then 2cos(ωx), −2sin(ωx) for each ω > 0, so that the
    // unknowns are c_0, Re c_ω, Im c_ω
    let a = DMatrix::from_fn(grid.len(), unknowns, |r, col| {
        if col == 0 {
            return 1.0;
        }
        let (s, co) = (freqs[col.div_ceil(2)] * grid[r]).sin_cos();
        if col % 2 == 1 {
            2.0 * co
        } else {
            -2.0 * s
        }
    });
    let y = DVector::from_column_slice(ys);
    let normal = a.transpose() * &a;
    let eig = normal.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::Conditioning(condition));
    }
    let chol = normal
        .cholesky()
        .ok_or(Error::Conditioning(f64::INFINITY))?;
    let sol = chol.solve(&(a.transpose() * &y));
    let resid = &a * &sol - &y;
    let residual_rms = (resid.norm_squared() / grid.len() as f64).sqrt();
    let mut coefficients = vec![C64::new(sol[0], 0.0)];
    for k in 1..freqs.len() {
        coefficients.push(C64::new(sol[2 * k - 1], sol[2 * k]));
    }
    Ok(CoefficientFit {
        frequencies: freqs,
        coefficients,
        residual_rms,
        condition,
    })
}

/// Evaluates `f` on `grid` and fits the candidate frequencies.
pub fn extract_coefficients<F>(mut f: F, candidates: &[f64], grid: &[f64]) -> Result<CoefficientFit>
where
    F: FnMut(f64) -> Result<f64>,
{
    let ys = grid.iter().map(|&x| f(x)).collect::<Result<Vec<f64>>>()?;
    fit_fourier(grid, &ys, candidates)
}

/// Uniform grid over one period of the frequency lattice with four samples
/// per real unknown. Frequencies must be dyadic rationals.
pub fn default_grid(candidates: &[f64]) -> Result<Vec<f64>> {
    let freqs = fold_candidates(candidates)?;
    let denom = (0..=16)
        .map(|k| 1u32 << k)
        .find(|&q| {
            freqs
                .iter()
                .all(|w| (w * q as f64 - (w * q as f64).round()).abs() <= 1e-9)
        })
        .ok_or_else(|| {
            Error::Validation("frequencies are not dyadic rationals; pass an explicit grid".into())
        })?;
    let period = 2.0 * PI * denom as f64;
    let n = 4 * (2 * freqs.len() - 1);
    Ok((0..n).map(|i| period * i as f64 / n as f64).collect())
}

/// Coefficients of many randomly parameterized instances of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCloud {
    /// Non-negative frequencies, ascending.
    pub frequencies: Vec<f64>,
    /// `samples[k][s]`: coefficient at `frequencies[k]` for draw `s`.
    pub samples: Vec<Vec<C64>>,
}

impl CoefficientCloud {
    pub fn at(&self, w: f64) -> Option<&[C64]> {
        self.frequencies
            .iter()
            .position(|&f| (f - w.abs()).abs() <= FREQ_TOL)
            .map(|i| self.samples[i].as_slice())
    }
}

/// Draws every trainable parameter uniformly from `[0, 2π)` (stream `s` of
/// `seed` for draw `s`) and records the Fourier coefficients of the output.
/// Frequencies default to the model's own spectrum.
pub fn sample_coefficient_cloud(
    model: &ModelSpec,
    n_samples: usize,
    seed: u64,
    frequencies: Option<&[f64]>,
) -> Result<CoefficientCloud> {
    if n_samples == 0 {
        return Err(Error::Empty("n_samples must be at least 1".into()));
    }
    let freqs = match frequencies {
        Some(f) => fold_candidates(f)?,
        None => model_spectrum(model)?.non_negative(),
    };
    let grid = default_grid(&freqs)?;
    let fits = map_indexed(n_samples, |s| {
        let mut rng = stream_rng(seed, s as u64);
        let theta: Vec<f64> = (0..model.n_params())
            .map(|_| rng.gen_range(0.0..2.0 * PI))
            .collect();
        extract_coefficients(|x| model.evaluate(&[x], &theta), &freqs, &grid)
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let samples = (0..freqs.len())
        .map(|k| fits.iter().map(|f| f.coefficients[k]).collect())
        .collect();
    Ok(CoefficientCloud {
        frequencies: freqs,
        samples,
    })
}
