//! Helpers shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use std::path::PathBuf;

use pinn_consolidation::autodiff::{Jet, Matrix, Tape, Var};
use pinn_consolidation::config::RunConfig;
use pinn_consolidation::model::NetworkParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn experiment(name: &str) -> RunConfig {
    let path = workspace_root()
        .join("configs/experiments")
        .join(format!("{name}.json"));
    RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Central-difference step for parameter gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance for parameter gradient checks.
pub const FD_REL_TOL: f64 = 1e-5;
/// Components smaller than this are compared on this absolute scale; the
/// central difference itself carries errors near `FD_STEP^2`.
pub const FD_FLOOR: f64 = 1e-4;

/// Small random network, inputs and targets for a gradient-check trial.
#[derive(Clone, Debug)]
pub struct Trial {
    pub params: NetworkParams,
    pub z: Vec<f64>,
    pub t: Vec<f64>,
    pub targets: Vec<f64>,
    pub cv: f64,
}

impl Trial {
    /// Up to 3 hidden layers of up to 8 units, random biases, 1 to 6
    /// points in `[-1, 1]^2`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = rng.random_range(1..=3);
        let mut sizes = vec![2];
        for _ in 0..hidden {
            sizes.push(rng.random_range(1..=8));
        }
        sizes.push(1);
        let mut params = NetworkParams::init(&sizes, rng.random()).unwrap();
        for l in 0..params.num_layers() {
            for b in params.bias_mut(l).as_mut_slice() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let n = rng.random_range(1..=6);
        let z = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            params,
            z,
            t,
            targets,
            cv: rng.random_range(0.05..2.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `mean((p_hat - y)^2)`
    Mse,
    /// `mean((p_t - cv p_zz)^2)`
    Residual,
}

fn record_loss(tape: &mut Tape, params: &NetworkParams, trial: &Trial, kind: LossKind) -> Var {
    let net = params.bind(tape);
    let n = trial.z.len() as f64;
    match kind {
        LossKind::Mse => {
            let mut x = Matrix::zeros(trial.z.len(), 2);
            for i in 0..trial.z.len() {
                x.set(i, 0, trial.z[i]);
                x.set(i, 1, trial.t[i]);
            }
            let x = tape.constant(x);
            let y = tape.constant(Matrix::column(&trial.targets));
            let p = net.forward_value(tape, x);
            let d = tape.sub(p, y);
            let sq = tape.mul(d, d);
            tape.sum_scaled(sq, 1.0 / n)
        }
        LossKind::Residual => {
            let input = Jet::inputs(tape, &trial.z, &trial.t);
            let out = net.forward_jet(tape, &input);
            let diffusion = tape.shift(out.d_zz, trial.cv, 0.0);
            let r = tape.sub(out.d_t, diffusion);
            let sq = tape.mul(r, r);
            tape.sum_scaled(sq, 1.0 / n)
        }
    }
}

fn loss_value(params: &NetworkParams, trial: &Trial, kind: LossKind) -> f64 {
    match kind {
        // Independent of the tape: plain batched evaluation.
        LossKind::Mse => {
            let p = params.predict(&trial.z, &trial.t);
            p.iter()
                .zip(&trial.targets)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / p.len() as f64
        }
        LossKind::Residual => {
            let mut tape = Tape::new();
            let loss = record_loss(&mut tape, params, trial, kind);
            tape.scalar_value(loss)
        }
    }
}

/// Reverse-mode gradient flattened like `NetworkParams::to_flat`.
pub fn tape_gradient(trial: &Trial, kind: LossKind) -> Vec<f64> {
    let mut tape = Tape::new();
    let loss = record_loss(&mut tape, &trial.params, trial, kind);
    let grads = tape.parameter_gradient(loss);
    trial.params.flatten_gradient(&grads, None)
}

/// Central differences, one parameter at a time.
pub fn fd_gradient(trial: &Trial, kind: LossKind) -> Vec<f64> {
    let flat = trial.params.to_flat();
    let mut p = trial.params.clone();
    (0..flat.len())
        .map(|k| {
            let mut x = flat.clone();
            x[k] = flat[k] + FD_STEP;
            p.set_flat(&x).unwrap();
            let up = loss_value(&p, trial, kind);
            x[k] = flat[k] - FD_STEP;
            p.set_flat(&x).unwrap();
            let down = loss_value(&p, trial, kind);
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative disagreement between tape and finite differences.
pub fn gradient_check(trial: &Trial, kind: LossKind) -> f64 {
    let g = tape_gradient(trial, kind);
    let fd = fd_gradient(trial, kind);
    g.iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR))
        .fold(0.0, f64::max)
}

/// `p = v tanh(a z + b t + c) + d` written out by hand.
pub struct OneUnit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub v: f64,
    pub d: f64,
}

impl OneUnit {
    pub fn params(&self) -> NetworkParams {
        let mut p = NetworkParams::zeros(&[2, 1, 1]).unwrap();
        p.weight_mut(0).set(0, 0, self.a);
        p.weight_mut(0).set(0, 1, self.b);
        p.bias_mut(0).set(0, 0, self.c);
        p.weight_mut(1).set(0, 0, self.v);
        p.bias_mut(1).set(0, 0, self.d);
        p
    }

    /// `(p, p_z, p_t, p_zz)`.
    pub fn derivatives(&self, z: f64, t: f64) -> [f64; 4] {
        let h = (self.a * z + self.b * t + self.c).tanh();
        let s = 1.0 - h * h;
        [
            self.v * h + self.d,
            self.v * self.a * s,
            self.v * self.b * s,
            -2.0 * self.v * self.a * self.a * h * s,
        ]
    }

    /// `dp/d(a, b, c, v, d)` in flat parameter order.
    pub fn parameter_gradient(&self, z: f64, t: f64) -> [f64; 5] {
        let h = (self.a * z + self.b * t + self.c).tanh();
        let s = 1.0 - h * h;
        [self.v * s * z, self.v * s * t, self.v * s, h, 1.0]
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(got.abs())
    }
}

/// Tape operations covered by [`op_gradient_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapeOp {
    Add,
    Sub,
    Mul,
    MulScalar,
    Combine,
    Shift,
    Affine,
    AffineNoBias,
    Tanh,
    SumScaled,
}

pub const TAPE_OPS: [TapeOp; 10] = [
    TapeOp::Add,
    TapeOp::Sub,
    TapeOp::Mul,
    TapeOp::MulScalar,
    TapeOp::Combine,
    TapeOp::Shift,
    TapeOp::Affine,
    TapeOp::AffineNoBias,
    TapeOp::Tanh,
    TapeOp::SumScaled,
];

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
}

/// Records `op` on fresh variables and reduces with a fixed random weight.
fn record_op(tape: &mut Tape, op: TapeOp, inputs: &[Matrix], weight: &Matrix, k: (f64, f64)) -> (Vec<Var>, Var) {
    let vars: Vec<Var> = inputs.iter().map(|m| tape.variable(m.clone())).collect();
    let out = match op {
        TapeOp::Add => tape.add(vars[0], vars[1]),
        TapeOp::Sub => tape.sub(vars[0], vars[1]),
        TapeOp::Mul | TapeOp::MulScalar => tape.mul(vars[0], vars[1]),
        TapeOp::Combine => tape.combine(vars[0], k.0, vars[1], k.1),
        TapeOp::Shift => tape.shift(vars[0], k.0, k.1),
        TapeOp::Affine => tape.affine(vars[0], vars[1], Some(vars[2])),
        TapeOp::AffineNoBias => tape.affine(vars[0], vars[1], None),
        TapeOp::Tanh => tape.tanh(vars[0]),
        TapeOp::SumScaled => tape.sum_scaled(vars[0], k.0),
    };
    let w = tape.constant(weight.clone());
    let prod = tape.mul(out, w);
    (vars, tape.sum_scaled(prod, 1.0))
}

/// Largest relative disagreement between the tape gradient of one
/// operation and central differences, over every input entry.
pub fn op_gradient_check(op: TapeOp, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let inputs: Vec<Matrix> = match op {
        TapeOp::Add | TapeOp::Sub | TapeOp::Mul | TapeOp::Combine => {
            vec![random_matrix(&mut rng, r, c), random_matrix(&mut rng, r, c)]
        }
        TapeOp::MulScalar => vec![random_matrix(&mut rng, r, c), random_matrix(&mut rng, 1, 1)],
        TapeOp::Shift | TapeOp::Tanh | TapeOp::SumScaled => vec![random_matrix(&mut rng, r, c)],
        TapeOp::Affine | TapeOp::AffineNoBias => {
            let out = rng.random_range(1..=4);
            let mut v = vec![random_matrix(&mut rng, r, c), random_matrix(&mut rng, out, c)];
            if op == TapeOp::Affine {
                v.push(random_matrix(&mut rng, 1, out));
            }
            v
        }
    };
    let k = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.variable(m.clone())).collect();
        let probe = match op {
            TapeOp::Affine | TapeOp::AffineNoBias => tape.affine(vars[0], vars[1], None),
            TapeOp::SumScaled => tape.sum_scaled(vars[0], 1.0),
            _ => vars[0],
        };
        tape.value(probe).shape()
    };
    let weight = random_matrix(&mut rng, out_shape.0, out_shape.1);

    let mut tape = Tape::new();
    let (vars, loss) = record_op(&mut tape, op, &inputs, &weight, k);
    let g = tape.backward(loss);
    let value = |inputs: &[Matrix]| {
        let mut tape = Tape::new();
        let (_, loss) = record_op(&mut tape, op, inputs, &weight, k);
        tape.scalar_value(loss)
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.wrt_shaped(*v, &tape);
        for j in 0..inputs[i].as_slice().len() {
            let mut x = inputs.to_vec();
            x[i].as_mut_slice()[j] += FD_STEP;
            let up = value(&x);
            x[i].as_mut_slice()[j] -= 2.0 * FD_STEP;
            let down = value(&x);
            let fd = (up - down) / (2.0 * FD_STEP);
            let a = analytic.as_slice()[j];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(FD_FLOOR));
        }
    }
    worst
}
