//! Dense statevector engine.
//!
//! Qubit 0 is the most significant bit of the basis index: in an `n`-qubit
//! register, qubit `q` selects bit `n - 1 - q`. For a 2-qubit register,
//! flipping qubit 0 maps `|00⟩` (index 0) to `|10⟩` (index 2).
//!
//! Operators are applied in place over strided amplitude groups; no
//! full-register matrix is ever built. Operators need not be unitary, and
//! nothing is renormalized after application.

use num_complex::Complex64;
use std::fmt;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest register the engine will allocate.
pub const MAX_QUBITS: usize = 20;

const UNITARY_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;
const IMAG_TOL: f64 = 1e-10;

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Small dense square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<C64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix({}x{})", self.dim, self.dim)?;
        for r in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|col| {
                    let z = self[(r, col)];
                    format!("{:+.4}{:+.4}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = C64;
    fn index(&self, (r, col): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + col]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, col): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + col]
    }
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn diagonal(entries: &[C64]) -> Self {
        let mut m = Matrix::zeros(entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    /// Builds a matrix from row-major entries. The length must be a perfect square.
    pub fn from_row_major(data: Vec<C64>) -> Result<Self> {
        let dim = (data.len() as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim != data.len() {
            return Err(Error::Dimension(format!(
                "{} entries do not form a square matrix",
                data.len()
            )));
        }
        Ok(Matrix { dim, data })
    }

    pub fn from_rows<const N: usize>(rows: [[C64; N]; N]) -> Self {
        Matrix {
            dim: N,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// Number of qubits the matrix acts on, if its dimension is a power of two.
    pub fn n_qubits(&self) -> Option<usize> {
        if self.dim.is_power_of_two() {
            Some(self.dim.trailing_zeros() as usize)
        } else {
            None
        }
    }

    pub fn adjoint(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim);
        for r in 0..self.dim {
            for col in 0..self.dim {
                m[(col, r)] = self[(r, col)].conj();
            }
        }
        m
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut m = Matrix::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self[(r, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for col in 0..n {
                    m.data[r * n + col] += a * other.data[k * n + col];
                }
            }
        }
        m
    }

    pub fn kron(&self, other: &Matrix) -> Matrix {
        let (a, b) = (self.dim, other.dim);
        let mut m = Matrix::zeros(a * b);
        for i in 0..a {
            for j in 0..a {
                let x = self[(i, j)];
                for k in 0..b {
                    for l in 0..b {
                        m[(i * b + k, j * b + l)] = x * other[(k, l)];
                    }
                }
            }
        }
        m
    }

    pub fn scale(&self, s: C64) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim, "add dimension mismatch");
        Matrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.add(&other.scale(c(-1.0, 0.0)))
    }

    /// Entrywise max-norm distance.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn mat_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                self.data[r * self.dim..(r + 1) * self.dim]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// ‖M†M − I‖_max
    pub fn unitarity_defect(&self) -> f64 {
        self.adjoint()
            .matmul(self)
            .max_abs_diff(&Matrix::identity(self.dim))
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_defect() <= UNITARY_TOL
    }

    pub fn is_hermitian(&self) -> bool {
        self.max_abs_diff(&self.adjoint()) <= HERMITIAN_TOL
    }
}

/// Gate families known to the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum GateKind {
    H,
    Ry,
    Rz,
    /// `U3(θ, φ, δ)`
    U3,
    /// `exp(−i φ Z⊗Z / 2)`
    ZZ,
    /// `|0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ U3`, first target is the control.
    ControlledU3,
    CustomMatrix(Matrix),
}

impl GateKind {
    pub fn name(&self) -> &'static str {
        match self {
            GateKind::H => "H",
            GateKind::Ry => "Ry",
            GateKind::Rz => "Rz",
            GateKind::U3 => "U3",
            GateKind::ZZ => "ZZ",
            GateKind::ControlledU3 => "ControlledU3",
            GateKind::CustomMatrix(_) => "CustomMatrix",
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            GateKind::H | GateKind::CustomMatrix(_) => 0,
            GateKind::Ry | GateKind::Rz | GateKind::ZZ => 1,
            GateKind::U3 | GateKind::ControlledU3 => 3,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            GateKind::H | GateKind::Ry | GateKind::Rz | GateKind::U3 => 1,
            GateKind::ZZ | GateKind::ControlledU3 => 2,
            GateKind::CustomMatrix(m) => m.n_qubits().unwrap_or(0),
        }
    }

    /// Whether every parameter enters as a single Pauli rotation (generator
    /// eigenvalues ±1/2), which is what the two-term shift rule needs.
    pub fn is_pauli_rotation_form(&self) -> bool {
        matches!(
            self,
            GateKind::Ry | GateKind::Rz | GateKind::ZZ | GateKind::U3
        )
    }
}

fn check_arity(kind: &GateKind, params: &[f64]) -> Result<()> {
    if params.len() != kind.n_params() {
        return Err(Error::Arity {
            gate: kind.name(),
            expected: kind.n_params(),
            got: params.len(),
        });
    }
    Ok(())
}

fn u3(theta: f64, phi: f64, delta: f64) -> Matrix {
    let (s, co) = (theta / 2.0).sin_cos();
    let ed = C64::from_polar(1.0, delta);
    let ep = C64::from_polar(1.0, phi);
    let epd = C64::from_polar(1.0, phi + delta);
    Matrix::from_rows([[c(co, 0.0), -ed * s], [ep * s, epd * co]])
}

fn controlled(u: &Matrix) -> Matrix {
    let mut m = Matrix::zeros(4);
    m[(0, 0)] = c(1.0, 0.0);
    m[(1, 1)] = c(1.0, 0.0);
    for r in 0..2 {
        for col in 0..2 {
            m[(2 + r, 2 + col)] = u[(r, col)];
        }
    }
    m
}

/// Matrix of `kind` at the given angles.
pub fn gate_matrix(kind: &GateKind, params: &[f64]) -> Result<Matrix> {
    check_arity(kind, params)?;
    let m = match kind {
        GateKind::H => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            Matrix::from_rows([[c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]])
        }
        GateKind::Ry => {
            let (s, co) = (params[0] / 2.0).sin_cos();
            Matrix::from_rows([[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]])
        }
        GateKind::Rz => {
            let half = params[0] / 2.0;
            Matrix::diagonal(&[C64::from_polar(1.0, -half), C64::from_polar(1.0, half)])
        }
        GateKind::U3 => u3(params[0], params[1], params[2]),
        GateKind::ZZ => {
            let m = C64::from_polar(1.0, -params[0] / 2.0);
            let p = C64::from_polar(1.0, params[0] / 2.0);
            Matrix::diagonal(&[m, p, p, m])
        }
        GateKind::ControlledU3 => controlled(&u3(params[0], params[1], params[2])),
        GateKind::CustomMatrix(m) => m.clone(),
    };
    Ok(m)
}

/// Derivative of `gate_matrix(kind, params)` with respect to `params[slot]`.
pub fn gate_matrix_derivative(kind: &GateKind, params: &[f64], slot: usize) -> Result<Matrix> {
    check_arity(kind, params)?;
    if slot >= params.len() {
        return Err(Error::Arity {
            gate: kind.name(),
            expected: kind.n_params(),
            got: slot + 1,
        });
    }
    let i = c(0.0, 1.0);
    let m = match kind {
        GateKind::Ry => {
            let (s, co) = (params[0] / 2.0).sin_cos();
            Matrix::from_rows([
                [c(-s / 2.0, 0.0), c(-co / 2.0, 0.0)],
                [c(co / 2.0, 0.0), c(-s / 2.0, 0.0)],
            ])
        }
        GateKind::Rz => {
            let half = params[0] / 2.0;
            Matrix::diagonal(&[
                -i * 0.5 * C64::from_polar(1.0, -half),
                i * 0.5 * C64::from_polar(1.0, half),
            ])
        }
        GateKind::ZZ => {
            let m = -i * 0.5 * C64::from_polar(1.0, -params[0] / 2.0);
            let p = i * 0.5 * C64::from_polar(1.0, params[0] / 2.0);
            Matrix::diagonal(&[m, p, p, m])
        }
        GateKind::U3 => u3_derivative(params, slot),
        GateKind::ControlledU3 => {
            let d = u3_derivative(params, slot);
            let mut m = Matrix::zeros(4);
            for r in 0..2 {
                for col in 0..2 {
                    m[(2 + r, 2 + col)] = d[(r, col)];
                }
            }
            m
        }
        GateKind::H | GateKind::CustomMatrix(_) => unreachable!("gate has no parameters"),
    };
    Ok(m)
}

fn u3_derivative(params: &[f64], slot: usize) -> Matrix {
    let (theta, phi, delta) = (params[0], params[1], params[2]);
    let (s, co) = (theta / 2.0).sin_cos();
    let ed = C64::from_polar(1.0, delta);
    let ep = C64::from_polar(1.0, phi);
    let epd = C64::from_polar(1.0, phi + delta);
    let i = c(0.0, 1.0);
    let zero = c(0.0, 0.0);
    match slot {
        0 => Matrix::from_rows([
            [c(-s / 2.0, 0.0), -ed * (co / 2.0)],
            [ep * (co / 2.0), -epd * (s / 2.0)],
        ]),
        1 => Matrix::from_rows([[zero, zero], [i * ep * s, i * epd * co]]),
        _ => Matrix::from_rows([[zero, -i * ed * s], [zero, i * epd * co]]),
    }
}

/// Dense register of `2^n` amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl Statevector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn new(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!(
                "{n_qubits} qubits requested, supported range is 1..={MAX_QUBITS}"
            )));
        }
        let mut amps = vec![c(0.0, 0.0); 1 << n_qubits];
        amps[0] = c(1.0, 0.0);
        Ok(Statevector { n_qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "{len} amplitudes is not a power of two ≥ 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!("{n_qubits} qubits")));
        }
        Ok(Statevector { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Scales to unit norm. A zero vector is left untouched and reported.
    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return Err(Error::Validation("cannot normalize the zero vector".into()));
        }
        for a in &mut self.amps {
            *a /= n;
        }
        Ok(())
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &Statevector) -> Result<C64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::Dimension(format!(
                "register sizes {} and {} differ",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    fn bit(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn check_targets(&self, targets: &[usize]) -> Result<()> {
        for (i, &t) in targets.iter().enumerate() {
            if t >= self.n_qubits {
                return Err(Error::Targets(format!(
                    "qubit {t} out of range for a {}-qubit register",
                    self.n_qubits
                )));
            }
            if targets[..i].contains(&t) {
                return Err(Error::Targets(format!("qubit {t} listed twice")));
            }
        }
        Ok(())
    }

    /// Applies a `2^k × 2^k` operator to the ordered `targets`. The first
    /// target is the most significant bit of the operator's index.
    pub fn apply(&mut self, op: &Matrix, targets: &[usize]) -> Result<()> {
        let k = targets.len();
        if k == 0 || op.dim() != 1 << k {
            return Err(Error::Dimension(format!(
                "operator of dimension {} cannot act on {k} target(s)",
                op.dim()
            )));
        }
        self.check_targets(targets)?;
        match k {
            1 => self.apply_1q(op, targets[0]),
            _ => self.apply_kq(op, targets),
        }
        Ok(())
    }

    fn apply_1q(&mut self, op: &Matrix, target: usize) {
        let stride = self.bit(target);
        let (m00, m01, m10, m11) = (op[(0, 0)], op[(0, 1)], op[(1, 0)], op[(1, 1)]);
        let len = self.amps.len();
        let mut block = 0;
        while block < len {
            for i in block..block + stride {
                let a0 = self.amps[i];
                let a1 = self.amps[i + stride];
                self.amps[i] = m00 * a0 + m01 * a1;
                self.amps[i + stride] = m10 * a0 + m11 * a1;
            }
            block += 2 * stride;
        }
    }

    fn apply_kq(&mut self, op: &Matrix, targets: &[usize]) {
        let k = targets.len();
        let dim = 1 << k;
        let mask: usize = targets.iter().map(|&t| self.bit(t)).sum();
        let offsets: Vec<usize> = (0..dim)
            .map(|m| {
                targets
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| m & (1 << (k - 1 - i)) != 0)
                    .map(|(_, &t)| self.bit(t))
                    .sum()
            })
            .collect();
        let mut gathered = vec![c(0.0, 0.0); dim];
        let data = op.as_slice();
        for base in 0..self.amps.len() {
            if base & mask != 0 {
                continue;
            }
            for (g, &off) in gathered.iter_mut().zip(&offsets) {
                *g = self.amps[base | off];
            }
            for (r, &off) in offsets.iter().enumerate() {
                let row = &data[r * dim..(r + 1) * dim];
                self.amps[base | off] = row.iter().zip(&gathered).map(|(a, b)| a * b).sum();
            }
        }
    }
}

/// Single-qubit factor of a product observable.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Identity,
    X,
    Y,
    Z,
    /// `|0⟩⟨0| = (σ0 + σz)/2`
    Proj0,
    /// `|1⟩⟨1| = (σ0 − σz)/2`
    Proj1,
    Custom(Matrix),
}

impl Factor {
    pub fn matrix(&self) -> Matrix {
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        match self {
            Factor::Identity => Matrix::identity(2),
            Factor::X => Matrix::from_rows([[z, one], [one, z]]),
            Factor::Y => Matrix::from_rows([[z, c(0.0, -1.0)], [c(0.0, 1.0), z]]),
            Factor::Z => Matrix::diagonal(&[one, -one]),
            Factor::Proj0 => Matrix::diagonal(&[one, z]),
            Factor::Proj1 => Matrix::diagonal(&[z, one]),
            Factor::Custom(m) => m.clone(),
        }
    }
}

/// Tensor product of single-qubit factors, one per qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    factors: Vec<Factor>,
}

impl Observable {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        for (q, f) in factors.iter().enumerate() {
            let m = f.matrix();
            if m.dim() != 2 {
                return Err(Error::Dimension(format!(
                    "factor on qubit {q} is {}x{}, expected 2x2",
                    m.dim(),
                    m.dim()
                )));
            }
            if !m.is_hermitian() {
                return Err(Error::Validation(format!(
                    "factor on qubit {q} is not Hermitian"
                )));
            }
        }
        Ok(Observable { factors })
    }

    pub fn identity(n_qubits: usize) -> Self {
        Observable {
            factors: vec![Factor::Identity; n_qubits],
        }
    }

    /// σz on `qubit`, identity elsewhere.
    pub fn z_on(n_qubits: usize, qubit: usize) -> Self {
        let mut factors = vec![Factor::Identity; n_qubits];
        factors[qubit] = Factor::Z;
        Observable { factors }
    }

    pub fn n_qubits(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// `self ⊗ extra[0] ⊗ extra[1] …` with the extra factors on trailing qubits.
    pub fn extended(&self, extra: &[Factor]) -> Result<Self> {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(extra);
        Observable::new(factors)
    }

    /// `O|ψ⟩`
    pub fn apply_to(&self, state: &Statevector) -> Result<Statevector> {
        if state.n_qubits() != self.factors.len() {
            return Err(Error::Dimension(format!(
                "observable on {} qubits, state on {}",
                self.factors.len(),
                state.n_qubits()
            )));
        }
        let mut out = state.clone();
        for (q, f) in self.factors.iter().enumerate() {
            if *f != Factor::Identity {
                out.apply(&f.matrix(), &[q])?;
            }
        }
        Ok(out)
    }

    /// Full-register matrix; only sensible for small registers (tests, oracles).
    pub fn dense(&self) -> Matrix {
        self.factors
            .iter()
            .map(Factor::matrix)
            .reduce(|acc, m| acc.kron(&m))
            .unwrap_or_else(|| Matrix::identity(1))
    }
}

/// `⟨ψ|O|ψ⟩` without dividing by the norm of `ψ`.
pub fn expectation(state: &Statevector, obs: &Observable) -> Result<f64> {
    let applied = obs.apply_to(state)?;
    let z = state.inner(&applied)?;
    let scale = state.norm_sqr().max(1.0);
    if z.im.abs() > IMAG_TOL * scale {
        return Err(Error::Validation(format!(
            "expectation has imaginary part {:.3e}",
            z.im
        )));
    }
    Ok(z.re)
}

/// `|⟨a|b⟩|²`
pub fn fidelity(a: &Statevector, b: &Statevector) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr())
}
