//! Model descriptions: gate sequences with parameter bindings, optional
//! residual wrappers, and an observable.
//!
//! Evaluation here follows the direct path: residual blocks are applied as
//! their (non-unitary) operator on the system register, with no ancillas and
//! no renormalization.

use crate::error::{Error, Result};
use crate::residual::{residual_matrix, residual_matrix_derivatives, Branch, ResidualStrategy};
use crate::simcore::{
    expectation, gate_matrix, gate_matrix_derivative, GateKind, Matrix, Observable, Statevector,
};

/// Where a gate angle comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamRef {
    Fixed(f64),
    /// Index into the input feature vector.
    Feature(usize),
    /// Index into the trainable parameter vector.
    Trainable(usize),
}

impl ParamRef {
    pub fn resolve(&self, x: &[f64], theta: &[f64]) -> f64 {
        match *self {
            ParamRef::Fixed(v) => v,
            ParamRef::Feature(i) => x[i],
            ParamRef::Trainable(j) => theta[j],
        }
    }

    pub fn trainable(&self) -> Option<usize> {
        match *self {
            ParamRef::Trainable(j) => Some(j),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub params: Vec<ParamRef>,
}

impl CircuitOp {
    pub fn new(kind: GateKind, targets: Vec<usize>, params: Vec<ParamRef>) -> Self {
        CircuitOp {
            kind,
            targets,
            params,
        }
    }

    pub fn matrix(&self, x: &[f64], theta: &[f64]) -> Result<Matrix> {
        let angles = self.angles(x, theta);
        gate_matrix(&self.kind, &angles)
    }

    fn angles(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        self.params.iter().map(|p| p.resolve(x, theta)).collect()
    }

    fn encodes_feature(&self) -> bool {
        self.params
            .iter()
            .any(|p| matches!(p, ParamRef::Feature(_)))
    }
}

/// A gate wrapped with a residual connection (or left plain, for
/// [`ResidualStrategy::Traditional`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub strategy: ResidualStrategy,
    pub inner: CircuitOp,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Gate(CircuitOp),
    Residual(ResidualBlock),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    /// Fixed starting value; `None` means drawn uniformly from `[0, 2π)`.
    pub init: Option<f64>,
}

/// Position of one use of a trainable parameter inside a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occurrence {
    /// `params[slot]` of a plain gate block.
    Gate {
        block: usize,
        slot: usize,
    },
    /// `params[slot]` of the gate inside a residual block.
    ResidualInner {
        block: usize,
        slot: usize,
    },
    ResidualAlpha {
        block: usize,
    },
    ResidualGamma {
        block: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    n_qubits: usize,
    n_features: usize,
    blocks: Vec<Block>,
    observable: Observable,
    params: Vec<ParamInfo>,
}

/// Incremental construction of a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    n_qubits: usize,
    n_features: usize,
    blocks: Vec<Block>,
    params: Vec<ParamInfo>,
}

impl ModelBuilder {
    pub fn new(n_qubits: usize, n_features: usize) -> Self {
        ModelBuilder {
            n_qubits,
            n_features,
            blocks: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Registers a new trainable parameter and returns a reference to it.
    pub fn param(&mut self, name: impl Into<String>) -> ParamRef {
        self.param_with_init(name, None)
    }

    pub fn param_with_init(&mut self, name: impl Into<String>, init: Option<f64>) -> ParamRef {
        self.params.push(ParamInfo {
            name: name.into(),
            init,
        });
        ParamRef::Trainable(self.params.len() - 1)
    }

    pub fn gate(&mut self, kind: GateKind, targets: &[usize], params: &[ParamRef]) -> &mut Self {
        self.blocks.push(Block::Gate(CircuitOp::new(
            kind,
            targets.to_vec(),
            params.to_vec(),
        )));
        self
    }

    pub fn residual(&mut self, strategy: ResidualStrategy, inner: CircuitOp) -> &mut Self {
        self.residual_on_branch(strategy, inner, Branch::Zero)
    }

    pub fn residual_on_branch(
        &mut self,
        strategy: ResidualStrategy,
        inner: CircuitOp,
        branch: Branch,
    ) -> &mut Self {
        self.blocks.push(Block::Residual(ResidualBlock {
            strategy,
            inner,
            branch,
        }));
        self
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn build(self, observable: Observable) -> Result<ModelSpec> {
        let model = ModelSpec {
            n_qubits: self.n_qubits,
            n_features: self.n_features,
            blocks: self.blocks,
            observable,
            params: self.params,
        };
        model.validate()?;
        Ok(model)
    }
}

impl ModelSpec {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn observable(&self) -> &Observable {
        &self.observable
    }

    /// Number of blocks that carry a real residual connection (one ancilla each).
    pub fn residual_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| matches!(b, Block::Residual(r) if r.strategy.uses_ancilla()))
            .count()
    }

    /// Replaces the observable, keeping the circuit.
    pub fn with_observable(&self, observable: Observable) -> Result<ModelSpec> {
        let mut m = self.clone();
        m.observable = observable;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.observable.n_qubits() != self.n_qubits {
            return Err(Error::Dimension(format!(
                "observable acts on {} qubits, model has {}",
                self.observable.n_qubits(),
                self.n_qubits
            )));
        }
        let check_ref = |p: &ParamRef| -> Result<()> {
            match *p {
                ParamRef::Feature(i) if i >= self.n_features => Err(Error::Validation(format!(
                    "feature index {i} out of range ({} features)",
                    self.n_features
                ))),
                ParamRef::Trainable(j) if j >= self.params.len() => {
                    Err(Error::Validation(format!(
                        "trainable index {j} out of range ({} params)",
                        self.params.len()
                    )))
                }
                _ => Ok(()),
            }
        };
        let check_op = |op: &CircuitOp| -> Result<()> {
            if op.params.len() != op.kind.n_params() {
                return Err(Error::Arity {
                    gate: op.kind.name(),
                    expected: op.kind.n_params(),
                    got: op.params.len(),
                });
            }
            if op.targets.len() != op.kind.arity() {
                return Err(Error::Targets(format!(
                    "{} acts on {} qubit(s), {} given",
                    op.kind.name(),
                    op.kind.arity(),
                    op.targets.len()
                )));
            }
            for (i, &t) in op.targets.iter().enumerate() {
                if t >= self.n_qubits || op.targets[..i].contains(&t) {
                    return Err(Error::Targets(format!(
                        "bad target list {:?} for {} qubits",
                        op.targets, self.n_qubits
                    )));
                }
            }
            op.params.iter().try_for_each(check_ref)
        };
        for block in &self.blocks {
            match block {
                Block::Gate(op) => check_op(op)?,
                Block::Residual(r) => {
                    check_op(&r.inner)?;
                    r.strategy
                        .angle_refs()
                        .iter()
                        .try_for_each(check_ref)?;
                }
            }
        }
        Ok(())
    }

    fn check_inputs(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Dimension(format!(
                "{} features given, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        if theta.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "{} parameters given, model expects {}",
                theta.len(),
                self.params.len()
            )));
        }
        Ok(())
    }

    /// Every place trainable parameter `j` is used.
    pub fn occurrences(&self, j: usize) -> Vec<Occurrence> {
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            match block {
                Block::Gate(op) => {
                    for (slot, p) in op.params.iter().enumerate() {
                        if p.trainable() == Some(j) {
                            out.push(Occurrence::Gate { block: b, slot });
                        }
                    }
                }
                Block::Residual(r) => {
                    for (slot, p) in r.inner.params.iter().enumerate() {
                        if p.trainable() == Some(j) {
                            out.push(Occurrence::ResidualInner { block: b, slot });
                        }
                    }
                    let (alpha, gamma) = r.strategy.angles();
                    if alpha.and_then(|a| a.trainable()) == Some(j) {
                        out.push(Occurrence::ResidualAlpha { block: b });
                    }
                    if gamma.and_then(|g| g.trainable()) == Some(j) {
                        out.push(Occurrence::ResidualGamma { block: b });
                    }
                }
            }
        }
        out
    }

    /// Whether the two-term shift rule is exact for parameter `j`: each use
    /// is a Pauli-rotation angle of a unitary gate (not a residual angle, not
    /// inside a residual operator, not a controlled rotation).
    pub fn shift_eligible(&self, j: usize) -> bool {
        self.occurrences(j).iter().all(|occ| match *occ {
            Occurrence::Gate { block, .. } => match &self.blocks[block] {
                Block::Gate(op) => op.kind.is_pauli_rotation_form(),
                Block::Residual(_) => false,
            },
            Occurrence::ResidualInner { block, .. } => match &self.blocks[block] {
                Block::Residual(r) => {
                    !r.strategy.uses_ancilla() && r.inner.kind.is_pauli_rotation_form()
                }
                Block::Gate(_) => false,
            },
            Occurrence::ResidualAlpha { .. } | Occurrence::ResidualGamma { .. } => false,
        })
    }

    /// Direct-path operator sequence for one input.
    pub(crate) fn compile(
        &self,
        x: &[f64],
        theta: &[f64],
        shift: Option<(Occurrence, f64)>,
        with_grads: bool,
    ) -> Result<Vec<CompiledOp>> {
        self.check_inputs(x, theta)?;
        let shifted =
            |b: usize, occ_of: &dyn Fn(usize) -> Occurrence, slot: usize, v: f64| match shift {
                Some((occ, d)) if occ == occ_of(slot) && occ_block(&occ) == b => v + d,
                _ => v,
            };
        let mut ops = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            match block {
                Block::Gate(op) => {
                    let occ_of = |slot| Occurrence::Gate { block: b, slot };
                    let angles: Vec<f64> = op
                        .params
                        .iter()
                        .enumerate()
                        .map(|(slot, p)| shifted(b, &occ_of, slot, p.resolve(x, theta)))
                        .collect();
                    let matrix = gate_matrix(&op.kind, &angles)?;
                    let mut grads = Vec::new();
                    if with_grads {
                        for (slot, p) in op.params.iter().enumerate() {
                            if let Some(j) = p.trainable() {
                                grads.push((j, gate_matrix_derivative(&op.kind, &angles, slot)?));
                            }
                        }
                    }
                    ops.push(CompiledOp {
                        matrix,
                        targets: op.targets.clone(),
                        grads,
                    });
                }
                Block::Residual(r) => {
                    let occ_of = |slot| Occurrence::ResidualInner { block: b, slot };
                    let angles: Vec<f64> = r
                        .inner
                        .params
                        .iter()
                        .enumerate()
                        .map(|(slot, p)| shifted(b, &occ_of, slot, p.resolve(x, theta)))
                        .collect();
                    let inner = gate_matrix(&r.inner.kind, &angles)?;
                    let (alpha_ref, gamma_ref) = r.strategy.angles();
                    let mut alpha = alpha_ref.map_or(0.0, |a| a.resolve(x, theta));
                    let mut gamma = gamma_ref.map_or(0.0, |g| g.resolve(x, theta));
                    if let Some((occ, d)) = shift {
                        if occ == (Occurrence::ResidualAlpha { block: b }) {
                            alpha += d;
                        }
                        if occ == (Occurrence::ResidualGamma { block: b }) {
                            gamma += d;
                        }
                    }
                    let kind = r.strategy.kind();
                    let matrix = residual_matrix(kind, r.branch, &inner, alpha, gamma)?;
                    let mut grads = Vec::new();
                    if with_grads {
                        let d = residual_matrix_derivatives(kind, r.branch, &inner, alpha, gamma);
                        for (slot, p) in r.inner.params.iter().enumerate() {
                            if let Some(j) = p.trainable() {
                                let dl = gate_matrix_derivative(&r.inner.kind, &angles, slot)?;
                                grads.push((j, dl.scale(d.inner_weight)));
                            }
                        }
                        if let Some(j) = alpha_ref.and_then(|a| a.trainable()) {
                            if let Some(m) = d.d_alpha {
                                grads.push((j, m));
                            }
                        }
                        if let Some(j) = gamma_ref.and_then(|g| g.trainable()) {
                            if let Some(m) = d.d_gamma {
                                grads.push((j, m));
                            }
                        }
                    }
                    ops.push(CompiledOp {
                        matrix,
                        targets: r.inner.targets.clone(),
                        grads,
                    });
                }
            }
        }
        Ok(ops)
    }

    /// Final (possibly unnormalized) system state on the direct path.
    pub fn final_state(&self, x: &[f64], theta: &[f64]) -> Result<Statevector> {
        let ops = self.compile(x, theta, None, false)?;
        let mut state = Statevector::new(self.n_qubits)?;
        for op in &ops {
            state.apply(&op.matrix, &op.targets)?;
        }
        Ok(state)
    }

    /// Model output `⟨ψ|O|ψ⟩` on the direct path.
    pub fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        expectation(&self.final_state(x, theta)?, &self.observable)
    }

    /// Output with a single occurrence of a parameter moved by `delta`.
    pub fn evaluate_shifted(
        &self,
        x: &[f64],
        theta: &[f64],
        occurrence: Occurrence,
        delta: f64,
    ) -> Result<f64> {
        let ops = self.compile(x, theta, Some((occurrence, delta)), false)?;
        let mut state = Statevector::new(self.n_qubits)?;
        for op in &ops {
            state.apply(&op.matrix, &op.targets)?;
        }
        expectation(&state, &self.observable)
    }

    /// Output and exact gradient with respect to every trainable parameter,
    /// by reverse-mode (adjoint) differentiation through the operator list.
    pub fn evaluate_with_gradient(&self, x: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ops = self.compile(x, theta, None, true)?;
        let mut states = Vec::with_capacity(ops.len() + 1);
        let mut state = Statevector::new(self.n_qubits)?;
        states.push(state.clone());
        for op in &ops {
            state.apply(&op.matrix, &op.targets)?;
            states.push(state.clone());
        }
        let mut lambda = self.observable.apply_to(&state)?;
        let value = state.inner(&lambda)?.re;
        let mut grad = vec![0.0; self.params.len()];
        for (k, op) in ops.iter().enumerate().rev() {
            let before = &states[k];
            for (j, dm) in &op.grads {
                let mut d = before.clone();
                d.apply(dm, &op.targets)?;
                grad[*j] += 2.0 * lambda.inner(&d)?.re;
            }
            if k > 0 {
                lambda.apply(&op.matrix.adjoint(), &op.targets)?;
            }
        }
        Ok((value, grad))
    }

    /// Indices of blocks whose gate encodes an input feature, with whether
    /// the block carries a residual connection.
    pub fn encoding_blocks(&self) -> Vec<(usize, &CircuitOp, bool)> {
        self.blocks
            .iter()
            .enumerate()
            .filter_map(|(b, block)| match block {
                Block::Gate(op) if op.encodes_feature() => Some((b, op, false)),
                Block::Residual(r) if r.inner.encodes_feature() => {
                    Some((b, &r.inner, r.strategy.uses_ancilla()))
                }
                _ => None,
            })
            .collect()
    }
}

fn occ_block(occ: &Occurrence) -> usize {
    match *occ {
        Occurrence::Gate { block, .. }
        | Occurrence::ResidualInner { block, .. }
        | Occurrence::ResidualAlpha { block }
        | Occurrence::ResidualGamma { block } => block,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledOp {
    pub matrix: Matrix,
    pub targets: Vec<usize>,
    pub grads: Vec<(usize, Matrix)>,
}
