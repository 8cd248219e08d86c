//! Expressibility as the KL divergence between the fidelity distribution of
//! random parameter pairs and that of Haar-random states.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::circuit::ModelSpec;
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, stream_rng};
use crate::residual::ancilla_projected_state;
use crate::simcore::{fidelity, Statevector};

pub const DEFAULT_BINS: usize = 45;

/// Density of `F = |⟨ψ|φ⟩|²` for Haar-random states in dimension `n`.
pub fn haar_pdf(f: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Validation(format!(
            "Hilbert-space dimension {n} < 2"
        )));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Validation(format!("fidelity {f} outside [0, 1]")));
    }
    Ok((n - 1) as f64 * (1.0 - f).powi(n as i32 - 2))
}

/// Haar probability of each of `bins` uniform bins on `[0, 1]`, from the
/// CDF `1 − (1 − F)^{n−1}`.
pub fn haar_bin_masses(bins: usize, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Validation(format!(
            "Hilbert-space dimension {n} < 2"
        )));
    }
    if bins < 2 {
        return Err(Error::Validation("at least two bins are needed".into()));
    }
    let cdf = |f: f64| 1.0 - (1.0 - f).powi(n as i32 - 1);
    Ok((0..bins)
        .map(|j| cdf((j + 1) as f64 / bins as f64) - cdf(j as f64 / bins as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityHistogram {
    pub bin_count: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl FidelityHistogram {
    pub fn from_fidelities(fidelities: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Validation("at least two bins are needed".into()));
        }
        if fidelities.is_empty() {
            return Err(Error::Empty("fidelities".into()));
        }
        let mut counts = vec![0u64; bins];
        for &f in fidelities {
            if !(f > -1e-9 && f < 1.0 + 1e-9) {
                return Err(Error::Validation(format!("fidelity {f} outside [0, 1]")));
            }
            let j = ((f.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            counts[j] += 1;
        }
        Ok(FidelityHistogram {
            bin_count: bins,
            counts,
            total: fidelities.len() as u64,
        })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }
}

/// `Σ_j P(j) ln(P(j) / Q(j))` with `0·ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("{} vs {} bins", p.len(), q.len())));
    }
    let mut d = 0.0;
    for (&pj, &qj) in p.iter().zip(q) {
        if pj > 0.0 {
            assert!(qj > 0.0, "reference bin with zero mass");
            d += pj * (pj / qj).ln();
        }
    }
    Ok(d.max(0.0))
}

/// KL divergence of the fidelity histogram from the Haar bin masses for
/// Hilbert-space dimension `n`.
pub fn kl_expressibility(fidelities: &[f64], bins: usize, n: usize) -> Result<f64> {
    let hist = FidelityHistogram::from_fidelities(fidelities, bins)?;
    kl_divergence(&hist.probabilities(), &haar_bin_masses(bins, n)?)
}

/// State used for fidelities: the plain output state, or for models with
/// residual blocks the system state after projecting the ancillas onto
/// their branch, renormalized.
pub fn model_state(model: &ModelSpec, x: &[f64], theta: &[f64]) -> Result<Statevector> {
    if model.residual_count() == 0 {
        return model.final_state(x, theta);
    }
    let mut s = ancilla_projected_state(model, x, theta)?;
    s.normalize()?;
    Ok(s)
}

/// Fidelities for given parameter pairs.
pub fn pair_fidelities(
    model: &ModelSpec,
    pairs: &[(Vec<f64>, Vec<f64>)],
    x: &[f64],
) -> Result<Vec<f64>> {
    map_indexed(pairs.len(), |i| {
        let a = model_state(model, x, &pairs[i].0)?;
        let b = model_state(model, x, &pairs[i].1)?;
        fidelity(&a, &b)
    })
    .into_iter()
    .collect()
}

/// Fidelities of `n_pairs` random parameter pairs; pair `i` draws both
/// vectors uniformly from `[0, 2π)` on stream `i` of `seed`.
pub fn sample_fidelities(
    model: &ModelSpec,
    n_pairs: usize,
    seed: u64,
    x: &[f64],
) -> Result<Vec<f64>> {
    if n_pairs == 0 {
        return Err(Error::Empty("n_pairs must be at least 1".into()));
    }
    let np = model.n_params();
    map_indexed(n_pairs, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let t1: Vec<f64> = (0..np).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let t2: Vec<f64> = (0..np).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let a = model_state(model, x, &t1)?;
        let b = model_state(model, x, &t2)?;
        fidelity(&a, &b)
    })
    .into_iter()
    .collect()
}
