//! Browser bindings: spectrum explorer, model output curves and their
//! Fourier coefficients. Every export returns a JSON string.

use serde::Serialize;
use std::f64::consts::PI;
use std::str::FromStr;
use wasm_bindgen::prelude::*;

use qresnet::circuit::ModelSpec;
use qresnet::experiments::{build_regression_model, Layout};
use qresnet::residual::ResidualKind;
use qresnet::spectrum::{
    default_grid, extract_coefficients, model_spectrum, residual_spectrum, traditional_spectrum,
    GeneratorSpec,
};
use qresnet::train::initial_params;

#[derive(Serialize)]
pub struct SpectrumView {
    pub frequencies: Vec<f64>,
    pub forms: Vec<(usize, usize)>,
}

pub fn spectrum_view(
    eigenvalues: &str,
    layers: usize,
    residual: bool,
) -> Result<SpectrumView, String> {
    let values = eigenvalues
        .split(',')
        .map(|s| f64::from_str(s.trim()).map_err(|_| format!("'{}' is not a number", s.trim())))
        .collect::<Result<Vec<_>, _>>()?;
    let gen = GeneratorSpec::new(values, "demo").map_err(|e| e.to_string())?;
    let s = if residual {
        residual_spectrum(&gen, layers)
    } else {
        traditional_spectrum(&gen, layers)
    }
    .map_err(|e| e.to_string())?;
    Ok(SpectrumView {
        frequencies: s.frequencies,
        forms: s.forms.iter().map(|f| (f.l1, f.l2)).collect(),
    })
}

fn kind(encoding: &str) -> Result<ResidualKind, String> {
    ResidualKind::from_str(encoding).map_err(|e| e.to_string())
}

/// Sequential model with random ansatz angles from `seed` and every
/// residual angle set to `alpha`/`gamma`.
fn demo_model(
    encoding: &str,
    layers: usize,
    seed: u64,
    alpha: f64,
    gamma: f64,
) -> Result<(ModelSpec, Vec<f64>), String> {
    let model = build_regression_model(kind(encoding)?, layers, Layout::Sequential)
        .map_err(|e| e.to_string())?;
    let mut theta = initial_params(&model, seed);
    for (t, p) in theta.iter_mut().zip(model.params()) {
        if p.name.starts_with("alpha") {
            *t = alpha;
        } else if p.name.starts_with("gamma") {
            *t = gamma;
        }
    }
    Ok((model, theta))
}

#[derive(Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn curve(
    encoding: &str,
    layers: usize,
    seed: u64,
    alpha: f64,
    gamma: f64,
    points: usize,
) -> Result<Curve, String> {
    if points < 2 {
        return Err("need at least two points".into());
    }
    let (model, theta) = demo_model(encoding, layers, seed, alpha, gamma)?;
    let x: Vec<f64> = (0..points)
        .map(|i| 4.0 * PI * i as f64 / (points - 1) as f64)
        .collect();
    let y = x
        .iter()
        .map(|&v| model.evaluate(&[v], &theta))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(Curve { x, y })
}

#[derive(Serialize)]
pub struct Coefficients {
    pub frequencies: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub modulus: Vec<f64>,
}

pub fn coefficients(
    encoding: &str,
    layers: usize,
    seed: u64,
    alpha: f64,
    gamma: f64,
) -> Result<Coefficients, String> {
    let (model, theta) = demo_model(encoding, layers, seed, alpha, gamma)?;
    let freqs = model_spectrum(&model)
        .map_err(|e| e.to_string())?
        .non_negative();
    let grid = default_grid(&freqs).map_err(|e| e.to_string())?;
    let fit = extract_coefficients(|x| model.evaluate(&[x], &theta), &freqs, &grid)
        .map_err(|e| e.to_string())?;
    Ok(Coefficients {
        re: fit.coefficients.iter().map(|c| c.re).collect(),
        im: fit.coefficients.iter().map(|c| c.im).collect(),
        modulus: fit.coefficients.iter().map(|c| c.norm()).collect(),
        frequencies: fit.frequencies,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Frequencies of `layers` stacked encodings with the comma-separated
/// generator eigenvalues.
#[wasm_bindgen]
pub fn spectrum_json(eigenvalues: &str, layers: usize, residual: bool) -> Result<String, JsError> {
    to_json(spectrum_view(eigenvalues, layers, residual))
}

/// Model output on `points` samples of `[0, 4π]`.
#[wasm_bindgen]
pub fn model_curve(
    encoding: &str,
    layers: usize,
    seed: u64,
    alpha: f64,
    gamma: f64,
    points: usize,
) -> Result<String, JsError> {
    to_json(curve(encoding, layers, seed, alpha, gamma, points))
}

/// Fourier coefficients of the same model at its non-negative frequencies.
#[wasm_bindgen]
pub fn fourier_coefficients(
    encoding: &str,
    layers: usize,
    seed: u64,
    alpha: f64,
    gamma: f64,
) -> Result<String, JsError> {
    to_json(coefficients(encoding, layers, seed, alpha, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn spectrum_for_half_spin() {
        let s = spectrum_view("0.5, -0.5", 1, true).unwrap();
        assert_eq!(s.frequencies, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(
            spectrum_view("0.5,-0.5", 1, false).unwrap().frequencies,
            vec![-1.0, 0.0, 1.0]
        );
        assert!(spectrum_view("0.5,x", 1, true).is_err());
        assert!(spectrum_view("", 1, true).is_err());
    }

    #[test]
    fn curve_matches_coefficients() {
        let c = curve("R2", 1, 3, 0.7, -0.2, 50).unwrap();
        let k = coefficients("R2", 1, 3, 0.7, -0.2).unwrap();
        assert_eq!(k.frequencies, vec![0.0, 0.5, 1.0]);
        for (x, y) in c.x.iter().zip(&c.y) {
            let mut s = k.re[0];
            for j in 1..k.frequencies.len() {
                let w = k.frequencies[j] * x;
                s += 2.0 * (k.re[j] * w.cos() - k.im[j] * w.sin());
            }
            assert!((s - y).abs() < 1e-9);
        }
    }

    #[test]
    fn outputs_are_bounded_and_inputs_checked() {
        let r = curve("R", 1, 5, 0.0, 0.0, 20).unwrap();
        let r2 = curve("R2", 2, 5, FRAC_PI_4, -FRAC_PI_4, 20).unwrap();
        assert!(r.y.iter().chain(&r2.y).all(|v| v.abs() <= 1.0 + 1e-12));
        assert!(curve("bogus", 1, 0, 0.0, 0.0, 10).is_err());
        assert!(curve("R", 1, 0, 0.0, 0.0, 1).is_err());
    }
}
