//! Second-order Taylor jets in the spatial input and first-order in time.
//!
//! A [`Jet`] carries a value together with its derivatives with respect to
//! the two network inputs `z` and `t`. Every jet operation is expressed as
//! ordinary tape primitives, so a scalar loss built from jet components can
//! be differentiated with respect to the parameters in one reverse sweep.

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use super::AutodiffError;

/// Value and input derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub d_dz: f64,
    pub d_dt: f64,
    pub d2_dz2: f64,
}

impl DerivativeBundle {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d_dz.is_finite() && self.d_dt.is_finite() && self.d2_dz2.is_finite()
    }
}

/// Batch of truncated Taylor expansions, one row per point.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub value: Var,
    pub d_z: Var,
    pub d_t: Var,
    pub d_zz: Var,
}

impl Jet {
    /// Seeds the network input `[z, t]` (shape `(n, 2)`) as a jet and marks
    /// the tape as having registered inputs.
    pub fn inputs(tape: &mut Tape, z: &[f64], t: &[f64]) -> Jet {
        assert_eq!(z.len(), t.len(), "z and t must have equal length");
        let n = z.len();
        let mut value = Matrix::zeros(n, 2);
        let mut d_z = Matrix::zeros(n, 2);
        let mut d_t = Matrix::zeros(n, 2);
        for i in 0..n {
            value.set(i, 0, z[i]);
            value.set(i, 1, t[i]);
            d_z.set(i, 0, 1.0);
            d_t.set(i, 1, 1.0);
        }
        tape.mark_inputs_registered();
        Jet {
            value: tape.constant(value),
            d_z: tape.constant(d_z),
            d_t: tape.constant(d_t),
            d_zz: tape.constant(Matrix::zeros(n, 2)),
        }
    }

    /// A jet whose derivatives vanish.
    pub fn constant(tape: &mut Tape, value: Matrix) -> Jet {
        let (r, c) = value.shape();
        Jet {
            value: tape.constant(value),
            d_z: tape.constant(Matrix::zeros(r, c)),
            d_t: tape.constant(Matrix::zeros(r, c)),
            d_zz: tape.constant(Matrix::zeros(r, c)),
        }
    }

    /// Column `col` of the jet, as a linear map with a one-hot weight.
    pub fn component(&self, tape: &mut Tape, col: usize) -> Jet {
        let width = tape.value(self.value).cols();
        assert!(col < width, "component index out of range");
        let mut e = Matrix::zeros(1, width);
        e.set(0, col, 1.0);
        let w = tape.constant(e);
        self.affine(tape, w, None)
    }

    /// `x * w^T + bias` applied channelwise; the bias only shifts the value.
    pub fn affine(&self, tape: &mut Tape, w: Var, bias: Option<Var>) -> Jet {
        Jet {
            value: tape.affine(self.value, w, bias),
            d_z: tape.affine(self.d_z, w, None),
            d_t: tape.affine(self.d_t, w, None),
            d_zz: tape.affine(self.d_zz, w, None),
        }
    }

    /// Chain rule through tanh, using tanh' = 1 - h^2 and
    /// tanh'' = -2 h (1 - h^2).
    pub fn tanh(&self, tape: &mut Tape) -> Jet {
        let h = tape.tanh(self.value);
        let h2 = tape.mul(h, h);
        let slope = tape.shift(h2, -1.0, 1.0);
        let d_z = tape.mul(slope, self.d_z);
        let d_t = tape.mul(slope, self.d_t);
        let first = tape.mul(slope, self.d_zz);
        let dz2 = tape.mul(self.d_z, self.d_z);
        let curv = tape.mul(h, slope);
        let second = tape.mul(curv, dz2);
        let d_zz = tape.combine(first, 1.0, second, -2.0);
        Jet {
            value: h,
            d_z,
            d_t,
            d_zz,
        }
    }

    /// Product rule, including the cross term of the second derivative.
    pub fn mul(&self, tape: &mut Tape, other: &Jet) -> Jet {
        let value = tape.mul(self.value, other.value);

        let a = tape.mul(self.d_z, other.value);
        let b = tape.mul(self.value, other.d_z);
        let d_z = tape.add(a, b);

        let a = tape.mul(self.d_t, other.value);
        let b = tape.mul(self.value, other.d_t);
        let d_t = tape.add(a, b);

        let a = tape.mul(self.d_zz, other.value);
        let b = tape.mul(self.value, other.d_zz);
        let c = tape.mul(self.d_z, other.d_z);
        let ab = tape.add(a, b);
        let d_zz = tape.combine(ab, 1.0, c, 2.0);

        Jet { value, d_z, d_t, d_zz }
    }

    /// `ca * self + cb * other`.
    pub fn combine(&self, tape: &mut Tape, ca: f64, other: &Jet, cb: f64) -> Jet {
        Jet {
            value: tape.combine(self.value, ca, other.value, cb),
            d_z: tape.combine(self.d_z, ca, other.d_z, cb),
            d_t: tape.combine(self.d_t, ca, other.d_t, cb),
            d_zz: tape.combine(self.d_zz, ca, other.d_zz, cb),
        }
    }

    pub fn add(&self, tape: &mut Tape, other: &Jet) -> Jet {
        self.combine(tape, 1.0, other, 1.0)
    }

    /// Reads the single output column back as per-point bundles.
    pub fn bundles(&self, tape: &Tape) -> Result<Vec<DerivativeBundle>, AutodiffError> {
        input_derivatives(tape, self)
    }
}

/// Value, first derivatives and the spatial second derivative of a
/// single-column jet, one bundle per row.
pub fn input_derivatives(tape: &Tape, jet: &Jet) -> Result<Vec<DerivativeBundle>, AutodiffError> {
    for v in [jet.value, jet.d_z, jet.d_t, jet.d_zz] {
        if !tape.owns(v) {
            return Err(AutodiffError::ForeignVariable);
        }
    }
    if !tape.inputs_registered() {
        return Err(AutodiffError::UnregisteredInput);
    }
    let value = tape.value(jet.value);
    if value.cols() != 1 {
        return Err(AutodiffError::NotScalarOutput { cols: value.cols() });
    }
    let (dz, dt, dzz) = (tape.value(jet.d_z), tape.value(jet.d_t), tape.value(jet.d_zz));
    Ok((0..value.rows())
        .map(|i| DerivativeBundle {
            value: value.get(i, 0),
            d_dz: dz.get(i, 0),
            d_dt: dt.get(i, 0),
            d2_dz2: dzz.get(i, 0),
        })
        .collect())
}
