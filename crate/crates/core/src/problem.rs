//! One-dimensional consolidation under a constant step load.
//!
//! Coordinates: internally `z` is measured from the no-flow plane, which is
//! the bottom for [`Drainage::TopOnly`] and mid-height for
//! [`Drainage::TopAndBottom`]. The drained boundary sits at `|z| = h`, with
//! `h` the drainage path. Files and user-facing reports use depth below the
//! top surface instead; [`ProblemSpec::depth_to_z`] converts.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Series terms are summed until the next term's magnitude bound drops
/// below this.
pub const SERIES_TOLERANCE: f64 = 1e-12;
pub const SERIES_MAX_TERMS: usize = 10_000;

/// Poroelastic constants and load magnitude that set the initial pressure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingParams {
    /// Biot coefficient.
    pub alpha: f64,
    /// Storativity of the pore space (1/stress).
    pub storativity: f64,
    /// Confined compressibility m_v (1/stress).
    pub compressibility: f64,
    /// Vertical load magnitude q (stress).
    pub load: f64,
}

impl LoadingParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.storativity, self.compressibility, self.load]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("loading parameters must be finite"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha = {} not in (0, 1]", self.alpha)));
        }
        if self.storativity < 0.0 {
            return Err(Error::invalid("storativity must be non-negative"));
        }
        if self.compressibility <= 0.0 {
            return Err(Error::invalid("compressibility must be positive"));
        }
        if self.load < 0.0 {
            return Err(Error::invalid("load must be non-negative"));
        }
        Ok(())
    }
}

/// Excess pore pressure carried by the fluid right after loading:
/// `alpha * m_v * q / (S + alpha^2 * m_v)`.
pub fn initial_pressure(lp: &LoadingParams) -> Result<f64> {
    lp.validate()?;
    let denom = lp.storativity + lp.alpha * lp.alpha * lp.compressibility;
    if denom <= 0.0 {
        return Err(Error::invalid("S + alpha^2 m_v must be positive"));
    }
    Ok(lp.alpha * lp.compressibility * lp.load / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drainage {
    /// Drained top, impermeable bottom.
    TopOnly,
    /// Both faces drained; no flow across mid-height.
    TopAndBottom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Layer thickness H (m).
    pub height: f64,
    /// Coefficient of consolidation (m^2/yr).
    pub cv: f64,
    pub drainage: Drainage,
    /// Simulated duration (yr).
    pub t_max: f64,
    /// Initial excess pore pressure.
    pub p0: f64,
}

impl ProblemSpec {
    pub fn new(height: f64, cv: f64, drainage: Drainage, t_max: f64, p0: f64) -> Result<Self> {
        let spec = Self {
            height,
            cv,
            drainage,
            t_max,
            p0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Normalized problem (`p0 = 1`).
    pub fn normalized(height: f64, cv: f64, drainage: Drainage, t_max: f64) -> Result<Self> {
        Self::new(height, cv, drainage, t_max, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("height", self.height),
            ("cv", self.cv),
            ("t_max", self.t_max),
            ("p0", self.p0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} = {v} must be positive and finite")));
            }
        }
        Ok(())
    }

    pub fn drainage_path(&self) -> f64 {
        match self.drainage {
            Drainage::TopOnly => self.height,
            Drainage::TopAndBottom => 0.5 * self.height,
        }
    }

    /// Internal spatial interval `(lower, upper)`.
    pub fn z_range(&self) -> (f64, f64) {
        match self.drainage {
            Drainage::TopOnly => (0.0, self.height),
            Drainage::TopAndBottom => (-0.5 * self.height, 0.5 * self.height),
        }
    }

    /// Depth below the top surface to the internal coordinate. The top
    /// surface maps to the upper end of [`ProblemSpec::z_range`].
    pub fn depth_to_z(&self, depth: f64) -> f64 {
        self.z_range().1 - depth
    }

    pub fn z_to_depth(&self, z: f64) -> f64 {
        self.z_range().1 - z
    }

    /// Dimensionless time `cv t / h^2`.
    pub fn time_factor(&self, t: f64) -> f64 {
        let h = self.drainage_path();
        self.cv * t / (h * h)
    }

    /// Characteristic time `h^2 / cv`.
    pub fn reference_time(&self) -> f64 {
        let h = self.drainage_path();
        h * h / self.cv
    }

    /// Whether the internal coordinate lies on a drained face.
    pub fn is_drained(&self, z: f64) -> bool {
        let h = self.drainage_path();
        match self.drainage {
            Drainage::TopOnly => z >= h * (1.0 - 1e-14),
            Drainage::TopAndBottom => z.abs() >= h * (1.0 - 1e-14),
        }
    }

    fn contains(&self, z: f64) -> bool {
        let (lo, hi) = self.z_range();
        let slack = 1e-12 * self.height;
        z >= lo - slack && z <= hi + slack
    }
}

/// Uniform sampling of the space-time domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n_z: usize,
    pub n_t: usize,
}

impl Grid {
    pub fn new(n_z: usize, n_t: usize) -> Result<Self> {
        let grid = Self { n_z, n_t };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_z < 2 || self.n_t < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2x2 samples, got {}x{}",
                self.n_z, self.n_t
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_z * self.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Depth samples from the top (0) to the bottom (H), endpoints exact.
    pub fn depths(&self, spec: &ProblemSpec) -> Vec<f64> {
        linspace(0.0, spec.height, self.n_z)
    }

    pub fn times(&self, spec: &ProblemSpec) -> Vec<f64> {
        linspace(0.0, spec.t_max, self.n_t)
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * (i as f64) / last
            }
        })
        .collect()
}

/// Analytic `p / p0` at internal coordinate `z` and time `t`.
///
/// At `t = 0` the series is bypassed: interior points return 1 and drained
/// faces return 0, so the corner carries the boundary value.
pub fn pressure_ratio(spec: &ProblemSpec, z: f64, t: f64) -> Result<f64> {
    if !t.is_finite() || t < 0.0 || !z.is_finite() || !spec.contains(z) {
        return Err(Error::Domain { z, t });
    }
    if spec.is_drained(z) {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let h = spec.drainage_path();
    let distance = match spec.drainage {
        Drainage::TopOnly => z,
        Drainage::TopAndBottom => z.abs(),
    };
    Ok(series(distance / h, spec.time_factor(t)))
}

/// Truncated Fourier series in the normalized coordinate `x = z / h`.
fn series(x: f64, tv: f64) -> f64 {
    let decay = 0.25 * PI * PI * tv;
    let mut sum = 0.0;
    for k in 1..=SERIES_MAX_TERMS {
        let n = (2 * k - 1) as f64;
        let envelope = (4.0 / PI) / n * (-n * n * decay).exp();
        if envelope < SERIES_TOLERANCE {
            break;
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * envelope * (n * 0.5 * PI * x).cos();
    }
    sum
}

/// Values over a [`Grid`], stored with time outer and depth inner.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub depths: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn from_fn(spec: &ProblemSpec, grid: &Grid, mut f: impl FnMut(f64, f64) -> Result<f64>) -> Result<Self> {
        grid.validate()?;
        let depths = grid.depths(spec);
        let times = grid.times(spec);
        let mut values = Vec::with_capacity(grid.len());
        for &t in &times {
            for &d in &depths {
                values.push(f(spec.depth_to_z(d), t)?);
            }
        }
        Ok(Self { depths, times, values })
    }

    pub fn n_z(&self) -> usize {
        self.depths.len()
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn get(&self, it: usize, iz: usize) -> f64 {
        self.values[it * self.n_z() + iz]
    }

    /// Values at one time index.
    pub fn slice(&self, it: usize) -> &[f64] {
        let n = self.n_z();
        &self.values[it * n..(it + 1) * n]
    }

    /// `(depth, t, value)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let n = self.n_z();
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| (self.depths[i % n], self.times[i / n], v))
    }
}

/// Analytic pressure ratio over the grid.
pub fn analytic_field(spec: &ProblemSpec, grid: &Grid) -> Result<GridField> {
    GridField::from_fn(spec, grid, |z, t| pressure_ratio(spec, z, t))
}

/// `||predicted - exact|| / ||exact||` in the Euclidean norm.
pub fn l2_relative_error(predicted: &[f64], exact: &[f64]) -> Result<f64> {
    if predicted.len() != exact.len() {
        return Err(Error::ShapeMismatch {
            expected: exact.len(),
            got: predicted.len(),
        });
    }
    let reference = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    let diff = predicted
        .iter()
        .zip(exact)
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        .sqrt();
    Ok(diff / reference)
}
