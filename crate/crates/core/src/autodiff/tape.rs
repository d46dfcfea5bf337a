use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{gemm, Matrix, Trans};
use super::AutodiffError;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
///
/// Handles are plain indices tagged with the owning tape; using one on a
/// different tape is a programming error and panics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Leaf {
    /// Fixed data: no adjoint is ever propagated into it.
    Constant,
    /// Differentiable leaf that is not a trainable parameter.
    Variable,
    /// Trainable parameter, `slot` is its position in the registry.
    Parameter { slot: usize },
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Op {
    Leaf(Leaf),
    Add(usize, usize),
    Sub(usize, usize),
    /// Elementwise product of equally shaped operands.
    Mul(usize, usize),
    /// Every entry of the first operand times the 1x1 second operand.
    MulScalar(usize, usize),
    /// `ca * a + cb * b` with constant coefficients.
    Combine {
        a: usize,
        ca: f64,
        b: usize,
        cb: f64,
    },
    /// Elementwise `scale * a + offset`.
    Shift {
        a: usize,
        scale: f64,
        offset: f64,
    },
    /// Rows of `x` mapped through `x * w^T + bias` (bias broadcast over rows).
    Affine {
        x: usize,
        w: usize,
        bias: Option<usize>,
    },
    Tanh(usize),
    /// `scale * sum(a)` as a 1x1 matrix.
    SumScaled {
        a: usize,
        scale: f64,
    },
}

/// Names of the elementary operations the tape accepts through
/// [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Affine,
    Tanh,
}

impl FromStr for Primitive {
    type Err = AutodiffError;

    fn from_str(name: &str) -> Result<Self, Self::Err> {
        match name {
            "add" | "+" => Ok(Self::Add),
            "sub" | "-" => Ok(Self::Sub),
            "mul" | "*" => Ok(Self::Mul),
            "affine" => Ok(Self::Affine),
            "tanh" => Ok(Self::Tanh),
            other => Err(AutodiffError::UnsupportedOperation(other.to_string())),
        }
    }
}

/// Append-only record of matrix-valued elementary operations.
///
/// Nodes are stored in creation order, so every operand precedes its
/// consumers and a single reverse sweep is a valid backward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    ops: Vec<Op>,
    values: Vec<Matrix>,
    needs_grad: Vec<bool>,
    params: Vec<usize>,
    inputs_registered: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            ops: Vec::new(),
            values: Vec::new(),
            needs_grad: Vec::new(),
            params: Vec::new(),
            inputs_registered: false,
        }
    }

    /// Runs `f` against a fresh tape and returns the tape with the output.
    pub fn record<F>(f: F) -> Result<(Tape, Var), AutodiffError>
    where
        F: FnOnce(&mut Tape) -> Result<Var, AutodiffError>,
    {
        let mut tape = Tape::new();
        let out = f(&mut tape)?;
        tape.check(out);
        Ok((tape, out))
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.check(v);
        &self.values[v.index]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn owns(&self, v: Var) -> bool {
        v.tape == self.id
    }

    fn check(&self, v: Var) {
        assert!(
            self.owns(v) && v.index < self.ops.len(),
            "variable does not belong to this tape"
        );
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let needs_grad = match op {
            Op::Leaf(Leaf::Constant) => false,
            Op::Leaf(_) => true,
            _ => operands(&op).iter().flatten().any(|&i| self.needs_grad[i]),
        };
        self.ops.push(op);
        self.values.push(value);
        self.needs_grad.push(needs_grad);
        Var {
            tape: self.id,
            index: self.ops.len() - 1,
        }
    }

    fn record_op(&mut self, op: Op) -> Var {
        let value = evaluate(&op, &self.values);
        self.push(op, value)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf(Leaf::Constant), value)
    }

    /// A differentiable leaf that is not part of the parameter registry.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf(Leaf::Variable), value)
    }

    /// Registers a trainable parameter; its gradient is reported by
    /// [`Tape::parameter_gradient`] in registration order.
    pub fn parameter(&mut self, value: Matrix) -> Var {
        let slot = self.params.len();
        let v = self.push(Op::Leaf(Leaf::Parameter { slot }), value);
        self.params.push(v.index);
        v
    }

    pub fn parameters(&self) -> impl Iterator<Item = Var> + '_ {
        self.params.iter().map(|&index| Var { tape: self.id, index })
    }

    pub(crate) fn mark_inputs_registered(&mut self) {
        self.inputs_registered = true;
    }

    pub(crate) fn inputs_registered(&self) -> bool {
        self.inputs_registered
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        self.record_op(Op::Add(a.index, b.index))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        self.record_op(Op::Sub(a.index, b.index))
    }

    /// Elementwise product; a 1x1 operand on either side is broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        let (sa, sb) = (self.values[a.index].shape(), self.values[b.index].shape());
        if sa == sb {
            self.record_op(Op::Mul(a.index, b.index))
        } else if sb == (1, 1) {
            self.record_op(Op::MulScalar(a.index, b.index))
        } else if sa == (1, 1) {
            self.record_op(Op::MulScalar(b.index, a.index))
        } else {
            panic!("mul shape mismatch: {sa:?} vs {sb:?}");
        }
    }

    pub fn combine(&mut self, a: Var, ca: f64, b: Var, cb: f64) -> Var {
        self.check(a);
        self.check(b);
        self.record_op(Op::Combine {
            a: a.index,
            ca,
            b: b.index,
            cb,
        })
    }

    pub fn shift(&mut self, a: Var, scale: f64, offset: f64) -> Var {
        self.check(a);
        self.record_op(Op::Shift {
            a: a.index,
            scale,
            offset,
        })
    }

    /// `x * w^T + bias`, with `x` of shape (batch, in), `w` of shape
    /// (out, in) and `bias` of shape (1, out).
    pub fn affine(&mut self, x: Var, w: Var, bias: Option<Var>) -> Var {
        self.check(x);
        self.check(w);
        let (xs, ws) = (self.values[x.index].shape(), self.values[w.index].shape());
        assert_eq!(xs.1, ws.1, "affine input width mismatch");
        if let Some(b) = bias {
            self.check(b);
            assert_eq!(self.values[b.index].shape(), (1, ws.0), "bias shape mismatch");
        }
        self.record_op(Op::Affine {
            x: x.index,
            w: w.index,
            bias: bias.map(|b| b.index),
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.check(a);
        self.record_op(Op::Tanh(a.index))
    }

    pub fn sum_scaled(&mut self, a: Var, scale: f64) -> Var {
        self.check(a);
        self.record_op(Op::SumScaled { a: a.index, scale })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).as_slice().len().max(1);
        self.sum_scaled(a, 1.0 / n as f64)
    }

    /// Dispatches a named primitive; the entry point for callers that build
    /// computations from data rather than code.
    pub fn apply(&mut self, prim: Primitive, args: &[Var]) -> Result<Var, AutodiffError> {
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(AutodiffError::Arity {
                    op: prim,
                    expected: n,
                    got: args.len(),
                })
            }
        };
        for &a in args {
            if !self.owns(a) {
                return Err(AutodiffError::ForeignVariable);
            }
        }
        Ok(match prim {
            Primitive::Add => {
                arity(2)?;
                self.add(args[0], args[1])
            }
            Primitive::Sub => {
                arity(2)?;
                self.sub(args[0], args[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(args[0], args[1])
            }
            Primitive::Tanh => {
                arity(1)?;
                self.tanh(args[0])
            }
            Primitive::Affine => match args.len() {
                2 => self.affine(args[0], args[1], None),
                3 => self.affine(args[0], args[1], Some(args[2])),
                got => {
                    return Err(AutodiffError::Arity {
                        op: prim,
                        expected: 3,
                        got,
                    })
                }
            },
        })
    }

    /// Recomputes every node from the recorded leaves. Equal to the recorded
    /// values bit for bit.
    pub fn replay(&self) -> Vec<Matrix> {
        self.replay_with(&[])
    }

    /// Recomputes every node with some leaves replaced. The tape itself is
    /// untouched, so concurrent replays are fine.
    pub fn replay_with(&self, overrides: &[(Var, Matrix)]) -> Vec<Matrix> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let value = match op {
                Op::Leaf(_) => overrides
                    .iter()
                    .find(|(v, _)| v.tape == self.id && v.index == i)
                    .map(|(_, m)| {
                        assert_eq!(m.shape(), self.values[i].shape(), "override shape mismatch");
                        m.clone()
                    })
                    .unwrap_or_else(|| self.values[i].clone()),
                _ => evaluate(op, &values),
            };
            values.push(value);
        }
        values
    }

    /// Reverse sweep from a scalar (1x1) output.
    pub fn backward(&self, output: Var) -> Gradients {
        self.check(output);
        assert_eq!(
            self.values[output.index].shape(),
            (1, 1),
            "backward() needs a scalar output"
        );
        let mut adj: Vec<Option<Matrix>> = vec![None; output.index + 1];
        adj[output.index] = Some(Matrix::scalar(1.0));

        for i in (0..=output.index).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let op = self.ops[i];
            match op {
                Op::Leaf(_) => {
                    adj[i] = Some(dy);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, a, 1.0, &dy);
                    self.accumulate(&mut adj, b, 1.0, &dy);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adj, a, 1.0, &dy);
                    self.accumulate(&mut adj, b, -1.0, &dy);
                }
                Op::Mul(a, b) => {
                    if self.needs_grad[a] {
                        let g = dy.zip_map(&self.values[b], |d, v| d * v);
                        self.accumulate_owned(&mut adj, a, g);
                    }
                    if self.needs_grad[b] {
                        let g = dy.zip_map(&self.values[a], |d, v| d * v);
                        self.accumulate_owned(&mut adj, b, g);
                    }
                }
                Op::MulScalar(a, s) => {
                    let sv = self.values[s].item();
                    self.accumulate(&mut adj, a, sv, &dy);
                    if self.needs_grad[s] {
                        let ds: f64 = dy
                            .as_slice()
                            .iter()
                            .zip(self.values[a].as_slice())
                            .map(|(d, v)| d * v)
                            .sum();
                        self.accumulate_owned(&mut adj, s, Matrix::scalar(ds));
                    }
                }
                Op::Combine { a, ca, b, cb } => {
                    self.accumulate(&mut adj, a, ca, &dy);
                    self.accumulate(&mut adj, b, cb, &dy);
                }
                Op::Shift { a, scale, .. } => self.accumulate(&mut adj, a, scale, &dy),
                Op::Affine { x, w, bias } => {
                    if self.needs_grad[x] {
                        let target =
                            adj[x].get_or_insert_with(|| Matrix::zeros(self.values[x].rows(), self.values[x].cols()));
                        gemm(&dy, Trans::No, &self.values[w], Trans::No, 1.0, target);
                    }
                    if self.needs_grad[w] {
                        let target =
                            adj[w].get_or_insert_with(|| Matrix::zeros(self.values[w].rows(), self.values[w].cols()));
                        gemm(&dy, Trans::Yes, &self.values[x], Trans::No, 1.0, target);
                    }
                    if let Some(b) = bias {
                        if self.needs_grad[b] {
                            self.accumulate_owned(&mut adj, b, dy.sum_rows());
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.needs_grad[a] {
                        let g = dy.zip_map(&self.values[i], |d, y| d * (1.0 - y * y));
                        self.accumulate_owned(&mut adj, a, g);
                    }
                }
                Op::SumScaled { a, scale } => {
                    if self.needs_grad[a] {
                        let (r, c) = self.values[a].shape();
                        let g = Matrix::filled(r, c, scale * dy.item());
                        self.accumulate_owned(&mut adj, a, g);
                    }
                }
            }
        }

        Gradients {
            tape: self.id,
            adjoints: adj,
        }
    }

    /// Gradient of a scalar output with respect to every registered
    /// parameter, in registration order. Parameters the output does not
    /// depend on get exact zeros.
    pub fn parameter_gradient(&self, output: Var) -> Vec<Matrix> {
        let grads = self.backward(output);
        self.parameters().map(|p| grads.wrt_shaped(p, self)).collect()
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], target: usize, scale: f64, dy: &Matrix) {
        if !self.needs_grad[target] {
            return;
        }
        match &mut adj[target] {
            Some(existing) => existing.axpy(scale, dy),
            slot @ None => {
                *slot = Some(if scale == 1.0 {
                    dy.clone()
                } else {
                    dy.map(|d| scale * d)
                })
            }
        }
    }

    fn accumulate_owned(&self, adj: &mut [Option<Matrix>], target: usize, g: Matrix) {
        match &mut adj[target] {
            Some(existing) => existing.axpy(1.0, &g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Adjoints from one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        assert_eq!(v.tape, self.tape, "variable does not belong to this tape");
        self.adjoints.get(v.index).and_then(Option::as_ref)
    }

    /// Moves the adjoint of `v` out.
    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        assert_eq!(v.tape, self.tape, "variable does not belong to this tape");
        self.adjoints.get_mut(v.index).and_then(Option::take)
    }

    /// Adjoint of `v`, zero-filled when disconnected.
    pub fn wrt_shaped(&self, v: Var, tape: &Tape) -> Matrix {
        match self.get(v) {
            Some(m) => m.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    /// Scalar adjoint of a 1x1 leaf, 0 when disconnected.
    pub fn scalar(&self, v: Var) -> f64 {
        self.get(v).map_or(0.0, Matrix::item)
    }
}

fn operands(op: &Op) -> [Option<usize>; 3] {
    match *op {
        Op::Leaf(_) => [None, None, None],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MulScalar(a, b) => [Some(a), Some(b), None],
        Op::Combine { a, b, .. } => [Some(a), Some(b), None],
        Op::Shift { a, .. } | Op::Tanh(a) | Op::SumScaled { a, .. } => [Some(a), None, None],
        Op::Affine { x, w, bias } => [Some(x), Some(w), bias],
    }
}

fn evaluate(op: &Op, values: &[Matrix]) -> Matrix {
    match *op {
        Op::Leaf(_) => unreachable!("leaves carry their own values"),
        Op::Add(a, b) => values[a].zip_map(&values[b], |x, y| x + y),
        Op::Sub(a, b) => values[a].zip_map(&values[b], |x, y| x - y),
        Op::Mul(a, b) => values[a].zip_map(&values[b], |x, y| x * y),
        Op::MulScalar(a, s) => {
            let s = values[s].item();
            values[a].map(|x| x * s)
        }
        Op::Combine { a, ca, b, cb } => values[a].zip_map(&values[b], |x, y| ca * x + cb * y),
        Op::Shift { a, scale, offset } => values[a].map(|x| scale * x + offset),
        Op::Affine { x, w, bias } => {
            let (xv, wv) = (&values[x], &values[w]);
            let mut out = match bias {
                Some(b) => {
                    let bv = values[b].as_slice();
                    let mut m = Matrix::zeros(xv.rows(), wv.rows());
                    for row in m.as_mut_slice().chunks_exact_mut(bv.len().max(1)) {
                        row.copy_from_slice(bv);
                    }
                    m
                }
                None => Matrix::zeros(xv.rows(), wv.rows()),
            };
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            gemm(xv, Trans::No, wv, Trans::Yes, beta, &mut out);
            out
        }
        Op::Tanh(a) => values[a].map(f64::tanh),
        Op::SumScaled { a, scale } => Matrix::scalar(scale * values[a].sum()),
    }
}
