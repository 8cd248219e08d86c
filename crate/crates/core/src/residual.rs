//! Residual operators `a·I + b·L` and their two evaluation routes: the
//! direct non-unitary operator on the system register, and the ancilla
//! circuit with a subspace measurement.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use crate::circuit::{Block, ModelSpec, ParamRef};
use crate::error::{Error, Result};
use crate::simcore::{
    c, expectation, gate_matrix, Factor, GateKind, Matrix, Statevector, C64, MAX_QUBITS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResidualKind {
    Traditional,
    R,
    R1,
    R2,
}

impl ResidualKind {
    pub fn name(&self) -> &'static str {
        match self {
            ResidualKind::Traditional => "traditional",
            ResidualKind::R => "R",
            ResidualKind::R1 => "R1",
            ResidualKind::R2 => "R2",
        }
    }

    pub const ALL: [ResidualKind; 4] = [
        ResidualKind::Traditional,
        ResidualKind::R,
        ResidualKind::R1,
        ResidualKind::R2,
    ];
}

impl std::str::FromStr for ResidualKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "traditional" | "none" | "t" => Ok(ResidualKind::Traditional),
            "r" => Ok(ResidualKind::R),
            "r1" => Ok(ResidualKind::R1),
            "r2" => Ok(ResidualKind::R2),
            other => Err(Error::Validation(format!(
                "unknown residual kind '{other}'"
            ))),
        }
    }
}

/// Ancilla outcome the residual operator is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Branch {
    #[default]
    Zero,
    One,
}

impl Branch {
    pub fn bit(self) -> usize {
        match self {
            Branch::Zero => 0,
            Branch::One => 1,
        }
    }

    fn projector(self) -> Factor {
        match self {
            Branch::Zero => Factor::Proj0,
            Branch::One => Factor::Proj1,
        }
    }
}

/// How an inner gate `L` is wrapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualStrategy {
    /// Plain `L`, no residual connection.
    Traditional,
    /// `(I + L)/2`; `(I − L)/2` on the ancilla's 1 branch
    R,
    /// `(cos α·I ± sin α·L)/√2`
    R1 { alpha: ParamRef },
    /// `cos α cos η·I + sin α sin η·L`, `η = π·m/2 − γ`
    R2 { alpha: ParamRef, gamma: ParamRef },
}

impl ResidualStrategy {
    pub fn kind(&self) -> ResidualKind {
        match self {
            ResidualStrategy::Traditional => ResidualKind::Traditional,
            ResidualStrategy::R => ResidualKind::R,
            ResidualStrategy::R1 { .. } => ResidualKind::R1,
            ResidualStrategy::R2 { .. } => ResidualKind::R2,
        }
    }

    pub fn uses_ancilla(&self) -> bool {
        !matches!(self, ResidualStrategy::Traditional)
    }

    pub fn angles(&self) -> (Option<ParamRef>, Option<ParamRef>) {
        match *self {
            ResidualStrategy::R1 { alpha } => (Some(alpha), None),
            ResidualStrategy::R2 { alpha, gamma } => (Some(alpha), Some(gamma)),
            _ => (None, None),
        }
    }

    pub fn angle_refs(&self) -> Vec<ParamRef> {
        let (a, g) = self.angles();
        a.into_iter().chain(g).collect()
    }
}

/// Weights of the three terms in
/// `f = A1·⟨L†OL⟩ + A2·⟨O⟩ + A3·Re⟨OL⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ACoefficients {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

fn eta(branch: Branch, gamma: f64) -> f64 {
    FRAC_PI_2 * branch.bit() as f64 - gamma
}

fn sign(branch: Branch) -> f64 {
    match branch {
        Branch::Zero => 1.0,
        Branch::One => -1.0,
    }
}

/// `(a, b)` in `a·I + b·L`.
pub fn identity_and_gate_weights(
    kind: ResidualKind,
    branch: Branch,
    alpha: f64,
    gamma: f64,
) -> (f64, f64) {
    match kind {
        ResidualKind::Traditional => (0.0, 1.0),
        ResidualKind::R => (0.5, sign(branch) * 0.5),
        ResidualKind::R1 => (
            alpha.cos() * FRAC_1_SQRT_2,
            sign(branch) * alpha.sin() * FRAC_1_SQRT_2,
        ),
        ResidualKind::R2 => {
            let e = eta(branch, gamma);
            (alpha.cos() * e.cos(), alpha.sin() * e.sin())
        }
    }
}

/// The residual operator built from inner gate `l`. `alpha` and `gamma`
/// are ignored where the kind has no such angle.
pub fn residual_matrix(
    kind: ResidualKind,
    branch: Branch,
    l: &Matrix,
    alpha: f64,
    gamma: f64,
) -> Result<Matrix> {
    if !l.is_unitary() {
        return Err(Error::Validation(format!(
            "inner gate is not unitary (defect {:.3e})",
            l.unitarity_defect()
        )));
    }
    if kind == ResidualKind::Traditional {
        return Ok(l.clone());
    }
    let (a, b) = identity_and_gate_weights(kind, branch, alpha, gamma);
    Ok(Matrix::identity(l.dim())
        .scale(c(a, 0.0))
        .add(&l.scale(c(b, 0.0))))
}

/// Partial derivatives of a residual operator.
#[derive(Debug, Clone)]
pub(crate) struct ResidualDerivatives {
    /// `b` in `a·I + b·L`; the derivative with respect to an angle inside
    /// `L` is `b·∂L`.
    pub inner_weight: C64,
    pub d_alpha: Option<Matrix>,
    pub d_gamma: Option<Matrix>,
}

pub(crate) fn residual_matrix_derivatives(
    kind: ResidualKind,
    branch: Branch,
    l: &Matrix,
    alpha: f64,
    gamma: f64,
) -> ResidualDerivatives {
    let (_, b) = identity_and_gate_weights(kind, branch, alpha, gamma);
    let combo = |da: f64, db: f64| {
        Matrix::identity(l.dim())
            .scale(c(da, 0.0))
            .add(&l.scale(c(db, 0.0)))
    };
    let (sa, ca) = alpha.sin_cos();
    let (d_alpha, d_gamma) = match kind {
        ResidualKind::Traditional | ResidualKind::R => (None, None),
        ResidualKind::R1 => (
            Some(combo(
                -sa * FRAC_1_SQRT_2,
                sign(branch) * ca * FRAC_1_SQRT_2,
            )),
            None,
        ),
        ResidualKind::R2 => {
            let (se, ce) = eta(branch, gamma).sin_cos();
            // dη/dγ = −1
            (
                Some(combo(-sa * ce, ca * se)),
                Some(combo(ca * se, -sa * ce)),
            )
        }
    };
    ResidualDerivatives {
        inner_weight: c(b, 0.0),
        d_alpha,
        d_gamma,
    }
}

pub fn a_coefficients(
    kind: ResidualKind,
    branch: Branch,
    alpha: f64,
    gamma: f64,
) -> Result<ACoefficients> {
    match kind {
        ResidualKind::Traditional => Err(Error::NotApplicable(
            "traditional encoding has no residual coefficients".into(),
        )),
        ResidualKind::R => Ok(ACoefficients {
            a1: 0.25,
            a2: 0.25,
            a3: sign(branch) * 0.5,
        }),
        ResidualKind::R1 => {
            let s = alpha.sin();
            let co = alpha.cos();
            Ok(ACoefficients {
                a1: s * s / 2.0,
                a2: co * co / 2.0,
                a3: sign(branch) * (2.0 * alpha).sin() / 2.0,
            })
        }
        ResidualKind::R2 => {
            let e = eta(branch, gamma);
            Ok(ACoefficients {
                a1: (alpha.sin() * e.sin()).powi(2),
                a2: (alpha.cos() * e.cos()).powi(2),
                a3: (2.0 * alpha).sin() * (2.0 * e).sin() / 2.0,
            })
        }
    }
}

/// Model output with residual blocks applied as non-unitary operators on
/// the system register.
pub fn residual_expectation_direct(model: &ModelSpec, x: &[f64], theta: &[f64]) -> Result<f64> {
    model.evaluate(x, theta)
}

/// `|0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ L` with the control as the most significant qubit.
fn controlled_matrix(l: &Matrix) -> Matrix {
    let d = l.dim();
    let mut m = Matrix::identity(2 * d);
    for r in 0..d {
        for col in 0..d {
            m[(d + r, d + col)] = l[(r, col)];
        }
    }
    m
}

/// Full state on system plus one ancilla per residual block. Ancillas follow
/// the system qubits, in block order.
pub fn ancilla_circuit_state(model: &ModelSpec, x: &[f64], theta: &[f64]) -> Result<Statevector> {
    let n = model.n_qubits();
    let l = model.residual_count();
    if n + l > MAX_QUBITS {
        return Err(Error::Capacity(format!(
            "{n} system qubits plus {l} ancillas exceed the {MAX_QUBITS}-qubit cap"
        )));
    }
    if x.len() != model.n_features() || theta.len() != model.n_params() {
        return Err(Error::Dimension(format!(
            "got {} features and {} parameters, model expects {} and {}",
            x.len(),
            theta.len(),
            model.n_features(),
            model.n_params()
        )));
    }
    let mut state = Statevector::new(n + l)?;
    let mut next_ancilla = n;
    for block in model.blocks() {
        match block {
            Block::Gate(op) => state.apply(&op.matrix(x, theta)?, &op.targets)?,
            Block::Residual(r) => {
                let inner = r.inner.matrix(x, theta)?;
                if !r.strategy.uses_ancilla() {
                    state.apply(&inner, &r.inner.targets)?;
                    continue;
                }
                if !inner.is_unitary() {
                    return Err(Error::Validation("inner gate is not unitary".into()));
                }
                let anc = next_ancilla;
                next_ancilla += 1;
                let (alpha, gamma) = r.strategy.angles();
                let alpha = alpha.map_or(0.0, |a| a.resolve(x, theta));
                let gamma = gamma.map_or(0.0, |g| g.resolve(x, theta));
                let h = gate_matrix(&GateKind::H, &[])?;
                let (first, last) = match r.strategy.kind() {
                    ResidualKind::R => (h.clone(), h),
                    ResidualKind::R1 => (gate_matrix(&GateKind::Ry, &[2.0 * alpha])?, h),
                    ResidualKind::R2 => (
                        gate_matrix(&GateKind::Ry, &[2.0 * alpha])?,
                        gate_matrix(&GateKind::Ry, &[2.0 * gamma])?,
                    ),
                    ResidualKind::Traditional => unreachable!(),
                };
                let mut targets = Vec::with_capacity(r.inner.targets.len() + 1);
                targets.push(anc);
                targets.extend_from_slice(&r.inner.targets);
                state.apply(&first, &[anc])?;
                state.apply(&controlled_matrix(&inner), &targets)?;
                state.apply(&last, &[anc])?;
            }
        }
    }
    Ok(state)
}

fn ancilla_branches(model: &ModelSpec) -> Vec<Branch> {
    model
        .blocks()
        .iter()
        .filter_map(|b| match b {
            Block::Residual(r) if r.strategy.uses_ancilla() => Some(r.branch),
            _ => None,
        })
        .collect()
}

/// Subspace expectation read from the ancilla circuit: the mean over the
/// `2^l` observables `O ⊗ (σ0 or ±σz) ⊗ … `, which is `⟨O ⊗ Π⟩` with `Π`
/// the projector onto every ancilla's branch.
pub fn residual_expectation_ancilla(model: &ModelSpec, x: &[f64], theta: &[f64]) -> Result<f64> {
    let state = ancilla_circuit_state(model, x, theta)?;
    let branches = ancilla_branches(model);
    let l = branches.len();
    let mut total = 0.0;
    for mask in 0..(1usize << l) {
        let mut extra = Vec::with_capacity(l);
        let mut s = 1.0;
        for (i, br) in branches.iter().enumerate() {
            if mask >> i & 1 == 1 {
                extra.push(Factor::Z);
                s *= sign(*br);
            } else {
                extra.push(Factor::Identity);
            }
        }
        let obs = model.observable().extended(&extra)?;
        total += s * expectation(&state, &obs)?;
    }
    Ok(total / (1usize << l) as f64)
}

/// Single observable version of the ancilla readout, `⟨O ⊗ Π⟩` with the
/// branch projectors. Used to cross-check the Pauli average.
pub fn residual_expectation_projected(model: &ModelSpec, x: &[f64], theta: &[f64]) -> Result<f64> {
    let state = ancilla_circuit_state(model, x, theta)?;
    let extra: Vec<Factor> = ancilla_branches(model)
        .into_iter()
        .map(Branch::projector)
        .collect();
    expectation(&state, &model.observable().extended(&extra)?)
}

/// System state left after projecting every ancilla onto its branch, not
/// renormalized.
pub fn ancilla_projected_state(model: &ModelSpec, x: &[f64], theta: &[f64]) -> Result<Statevector> {
    let state = ancilla_circuit_state(model, x, theta)?;
    let branches = ancilla_branches(model);
    let l = branches.len();
    let pattern = branches.iter().fold(0usize, |acc, b| (acc << 1) | b.bit());
    let mask = (1usize << l) - 1;
    let amps: Vec<C64> = state
        .amplitudes()
        .iter()
        .enumerate()
        .filter(|(i, _)| i & mask == pattern)
        .map(|(_, a)| *a)
        .collect();
    Statevector::from_amplitudes(amps)
}

/// Builds a strategy of the given kind from angle references.
pub fn strategy_from_kind(
    kind: ResidualKind,
    alpha: Option<ParamRef>,
    gamma: Option<ParamRef>,
) -> Result<ResidualStrategy> {
    let need = |p: Option<ParamRef>, what: &str| {
        p.ok_or_else(|| Error::Validation(format!("{} needs an {what} angle", kind.name())))
    };
    Ok(match kind {
        ResidualKind::Traditional => ResidualStrategy::Traditional,
        ResidualKind::R => ResidualStrategy::R,
        ResidualKind::R1 => ResidualStrategy::R1 {
            alpha: need(alpha, "alpha")?,
        },
        ResidualKind::R2 => ResidualStrategy::R2 {
            alpha: need(alpha, "alpha")?,
            gamma: need(gamma, "gamma")?,
        },
    })
}

#[cfg(test)]
fn dense_expectation(state: &[C64], op: &Matrix) -> C64 {
    let v = op.mat_vec(state);
    state.iter().zip(&v).map(|(a, b)| a.conj() * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CircuitOp, ModelBuilder};
    use crate::simcore::Observable;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn ry(x: f64) -> Matrix {
        gate_matrix(&GateKind::Ry, &[x]).unwrap()
    }

    fn r_of(l: &Matrix) -> Matrix {
        residual_matrix(ResidualKind::R, Branch::Zero, l, 0.0, 0.0).unwrap()
    }

    #[test]
    fn r_of_identity_is_identity() {
        let id = Matrix::identity(2);
        assert!(r_of(&id).max_abs_diff(&id) < 1e-15);
        assert!(r_of(&ry(0.0)).max_abs_diff(&id) < 1e-15);
    }

    #[test]
    fn printed_operator_reductions() {
        let l = gate_matrix(&GateKind::U3, &[0.3, 1.1, -0.4]).unwrap();
        let r = r_of(&l);
        let r1 = residual_matrix(ResidualKind::R1, Branch::Zero, &l, FRAC_PI_4, 0.0).unwrap();
        let r2 =
            residual_matrix(ResidualKind::R2, Branch::Zero, &l, FRAC_PI_4, -FRAC_PI_4).unwrap();
        assert!(r1.max_abs_diff(&r) < 1e-12);
        assert!(r2.max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn non_unitary_inner_rejected() {
        let bad = Matrix::identity(2).scale(c(2.0, 0.0));
        assert!(matches!(
            residual_matrix(ResidualKind::R, Branch::Zero, &bad, 0.0, 0.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn coefficient_examples() {
        let r1 = a_coefficients(ResidualKind::R1, Branch::Zero, FRAC_PI_4, 0.0).unwrap();
        assert!((r1.a1 - 0.25).abs() < 1e-15);
        assert!((r1.a2 - 0.25).abs() < 1e-15);
        assert!((r1.a3 - 0.5).abs() < 1e-15);

        let g = 0.37;
        let r2 = a_coefficients(ResidualKind::R2, Branch::Zero, 0.0, g).unwrap();
        assert_eq!(r2.a1, 0.0);
        assert!((r2.a2 - g.cos().powi(2)).abs() < 1e-15);
        assert_eq!(r2.a3, 0.0);

        let r2 = a_coefficients(ResidualKind::R2, Branch::Zero, FRAC_PI_4, -FRAC_PI_4).unwrap();
        let r = a_coefficients(ResidualKind::R, Branch::Zero, 0.0, 0.0).unwrap();
        assert!((r2.a1 - r.a1).abs() < 1e-15);
        assert!((r2.a2 - r.a2).abs() < 1e-15);
        assert!((r2.a3 - r.a3).abs() < 1e-15);

        assert!(matches!(
            a_coefficients(ResidualKind::Traditional, Branch::Zero, 0.0, 0.0),
            Err(Error::NotApplicable(_))
        ));
    }

    fn single_block_model(kind: ResidualKind) -> ModelSpec {
        let mut b = ModelBuilder::new(1, 1);
        let alpha = b.param("alpha");
        let gamma = b.param("gamma");
        let w = b.param("w");
        let strategy = strategy_from_kind(kind, Some(alpha), Some(gamma)).unwrap();
        b.residual(
            strategy,
            CircuitOp::new(GateKind::Ry, vec![0], vec![ParamRef::Feature(0)]),
        );
        b.gate(
            GateKind::U3,
            &[0],
            &[w, ParamRef::Fixed(0.4), ParamRef::Fixed(-0.9)],
        );
        b.build(Observable::z_on(1, 0)).unwrap()
    }

    #[test]
    fn x_zero_gives_plain_expectation() {
        let mut b = ModelBuilder::new(1, 1);
        b.residual(
            ResidualStrategy::R,
            CircuitOp::new(GateKind::Ry, vec![0], vec![ParamRef::Feature(0)]),
        );
        let m = b.build(Observable::z_on(1, 0)).unwrap();
        assert!((residual_expectation_direct(&m, &[0.0], &[]).unwrap() - 1.0).abs() < 1e-15);
    }

    // Term-by-term oracle: with state |φ0⟩ = |0⟩, ansatz W after the
    // residual encoding, O' = W†OW, the output is
    // A1⟨L†O'L⟩ + A2⟨O'⟩ + A3·Re⟨O'L⟩ (using O' Hermitian and the
    // I/L cross terms).
    fn term_oracle(kind: ResidualKind, x: f64, theta: &[f64]) -> f64 {
        let (alpha, gamma, w) = (theta[0], theta[1], theta[2]);
        let l = ry(x);
        let wm = gate_matrix(&GateKind::U3, &[w, 0.4, -0.9]).unwrap();
        let z = Factor::Z.matrix();
        let o = wm.adjoint().matmul(&z).matmul(&wm);
        let phi0 = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let ac = a_coefficients(kind, Branch::Zero, alpha, gamma).unwrap();
        let t1 = dense_expectation(&phi0, &l.adjoint().matmul(&o).matmul(&l)).re;
        let t2 = dense_expectation(&phi0, &o).re;
        let t3 = dense_expectation(&phi0, &o.matmul(&l)).re;
        ac.a1 * t1 + ac.a2 * t2 + ac.a3 * t3
    }

    #[test]
    fn r_decomposition_quarter_terms() {
        let m = single_block_model(ResidualKind::R);
        let theta = [0.0, 0.0, 0.8];
        let x = 1.9;
        let direct = residual_expectation_direct(&m, &[x], &theta).unwrap();
        assert!((direct - term_oracle(ResidualKind::R, x, &theta)).abs() < 1e-12);
    }

    fn dense_state(ops: &[(Matrix, Vec<usize>)], n: usize) -> Vec<C64> {
        // Expand each operator to the full register by explicit Kronecker
        // products; only contiguous ascending targets are used here.
        let mut v = vec![c(0.0, 0.0); 1 << n];
        v[0] = c(1.0, 0.0);
        for (m, t) in ops {
            let k = t.len();
            let before = Matrix::identity(1 << t[0]);
            let after = Matrix::identity(1 << (n - t[0] - k));
            let full = before.kron(m).kron(&after);
            v = full.mat_vec(&v);
        }
        v
    }

    #[test]
    fn two_blocks_match_dense_product() {
        let mut b = ModelBuilder::new(2, 2);
        let a = b.param("a");
        let g = b.param("g");
        b.residual(
            ResidualStrategy::R2 { alpha: a, gamma: g },
            CircuitOp::new(GateKind::Ry, vec![0], vec![ParamRef::Feature(0)]),
        );
        b.residual(
            ResidualStrategy::R,
            CircuitOp::new(GateKind::ZZ, vec![0, 1], vec![ParamRef::Feature(1)]),
        );
        let m = b
            .build(Observable::new(vec![Factor::X, Factor::Z]).unwrap())
            .unwrap();
        let (x, theta) = ([0.7, -1.2], [0.5, 0.9]);
        let r2 = residual_matrix(ResidualKind::R2, Branch::Zero, &ry(0.7), 0.5, 0.9).unwrap();
        let zz = gate_matrix(&GateKind::ZZ, &[-1.2]).unwrap();
        let v = dense_state(&[(r2, vec![0]), (r_of(&zz), vec![0, 1])], 2);
        let oracle = dense_expectation(&v, &m.observable().dense()).re;
        let direct = residual_expectation_direct(&m, &x, &theta).unwrap();
        assert!((direct - oracle).abs() < 1e-12);
        let anc = residual_expectation_ancilla(&m, &x, &theta).unwrap();
        assert!((anc - oracle).abs() < 1e-10);
    }

    #[test]
    fn identity_inner_ancilla_gives_plain_expectation() {
        let mut b = ModelBuilder::new(1, 0);
        b.gate(GateKind::Ry, &[0], &[ParamRef::Fixed(0.6)]);
        b.residual(
            ResidualStrategy::R,
            CircuitOp::new(GateKind::CustomMatrix(Matrix::identity(2)), vec![0], vec![]),
        );
        let m = b.build(Observable::z_on(1, 0)).unwrap();
        let v = residual_expectation_ancilla(&m, &[], &[]).unwrap();
        assert!((v - 0.6f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn branch_one_ancilla_matches_direct() {
        for kind in [ResidualKind::R, ResidualKind::R1, ResidualKind::R2] {
            let mut b = ModelBuilder::new(1, 1);
            let a = b.param("a");
            let g = b.param("g");
            b.residual_on_branch(
                strategy_from_kind(kind, Some(a), Some(g)).unwrap(),
                CircuitOp::new(GateKind::Ry, vec![0], vec![ParamRef::Feature(0)]),
                Branch::One,
            );
            b.gate(GateKind::Rz, &[0], &[ParamRef::Fixed(0.3)]);
            let m = b.build(Observable::new(vec![Factor::X]).unwrap()).unwrap();
            let (x, th) = ([1.3], [0.4, -0.7]);
            let d = residual_expectation_direct(&m, &x, &th).unwrap();
            let a = residual_expectation_ancilla(&m, &x, &th).unwrap();
            assert!((d - a).abs() < 1e-12, "{kind:?}: {d} vs {a}");
        }
    }

    #[test]
    fn capacity_error() {
        let mut b = ModelBuilder::new(MAX_QUBITS, 1);
        b.residual(
            ResidualStrategy::R,
            CircuitOp::new(GateKind::Ry, vec![0], vec![ParamRef::Feature(0)]),
        );
        let m = b.build(Observable::z_on(MAX_QUBITS, 0)).unwrap();
        assert!(matches!(
            residual_expectation_ancilla(&m, &[0.1], &[]),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn projected_state_norm_is_identity_expectation() {
        let m = single_block_model(ResidualKind::R2);
        let th = [0.3, 1.0, -0.5];
        let s = ancilla_projected_state(&m, &[0.9], &th).unwrap();
        let direct = m.final_state(&[0.9], &th).unwrap();
        let f = s.inner(&direct).unwrap();
        assert!((f.re - direct.norm_sqr()).abs() < 1e-12);
        assert!((s.norm_sqr() - direct.norm_sqr()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn direct_equals_term_oracle(
            kind in prop::sample::select(vec![ResidualKind::R, ResidualKind::R1, ResidualKind::R2]),
            x in -6.0..6.0f64,
            a in 0.0..6.3f64,
            g in -3.2..3.2f64,
            w in 0.0..6.3f64,
        ) {
            let m = single_block_model(kind);
            let theta = [a, g, w];
            let direct = residual_expectation_direct(&m, &[x], &theta).unwrap();
            prop_assert!((direct - term_oracle(kind, x, &theta)).abs() < 1e-12);
        }

        #[test]
        fn traditional_block_is_plain_gate(x in -6.0..6.0f64, w in 0.0..6.3f64) {
            let m = single_block_model(ResidualKind::Traditional);
            let mut b = ModelBuilder::new(1, 1);
            let _ = b.param("a");
            let _ = b.param("g");
            let wp = b.param("w");
            b.gate(GateKind::Ry, &[0], &[ParamRef::Feature(0)]);
            b.gate(GateKind::U3, &[0], &[wp, ParamRef::Fixed(0.4), ParamRef::Fixed(-0.9)]);
            let plain = b.build(Observable::z_on(1, 0)).unwrap();
            let th = [0.0, 0.0, w];
            let d = residual_expectation_direct(&m, &[x], &th).unwrap();
            prop_assert!((d - plain.evaluate(&[x], &th).unwrap()).abs() < 1e-14);
        }

        #[test]
        fn pauli_average_equals_projector(x in -6.0..6.0f64, a in 0.0..6.3f64, g in -3.2..3.2f64) {
            let m = single_block_model(ResidualKind::R2);
            let th = [a, g, 0.3];
            let p = residual_expectation_ancilla(&m, &[x], &th).unwrap();
            let q = residual_expectation_projected(&m, &[x], &th).unwrap();
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
