//! Crank-Nicolson reference solver for `dp/dt = cv d2p/dz2`.
//!
//! Used only to cross-check the analytic series. Drained faces are
//! Dirichlet `p = 0`; the impermeable bottom of a top-drained layer uses a
//! mirrored ghost node. The first two steps are each replaced by two
//! backward-Euler half steps (Rannacher start-up) so the jump between the
//! initial value and the drained face does not excite undamped oscillations.

use crate::error::{Error, Result};
use crate::problem::{linspace, pressure_ratio, Drainage, Grid, GridField, ProblemSpec};

/// Full steps taken as pairs of implicit half steps.
const STARTUP_STEPS: usize = 2;
/// Maximum number of simultaneous halvings in [`refine_until`].
pub const MAX_HALVINGS: usize = 8;
/// Comparisons skip `t < EARLY_TIME_FACTOR * h^2 / cv`, where the
/// boundary layer at a drained face is thinner than any practical grid.
pub const EARLY_TIME_FACTOR: f64 = 0.01;

/// Start of the comparison window.
pub fn comparison_start(spec: &ProblemSpec) -> f64 {
    EARLY_TIME_FACTOR * spec.reference_time()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdGrid {
    pub n_z: usize,
    pub dt: f64,
    pub t_max: f64,
}

impl FdGrid {
    pub fn new(n_z: usize, dt: f64, t_max: f64) -> Result<Self> {
        let g = Self { n_z, dt, t_max };
        g.validate()?;
        Ok(g)
    }

    /// `n_steps` uniform steps over `[0, t_max]`.
    pub fn with_steps(n_z: usize, n_steps: usize, t_max: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("need at least one time step"));
        }
        Self::new(n_z, t_max / n_steps as f64, t_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_z < 3 {
            return Err(Error::invalid("FD grid needs at least 3 nodes"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid("FD time step and end time must be positive"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round().max(1.0) as usize
    }

    pub fn dz(&self, spec: &ProblemSpec) -> f64 {
        spec.height / (self.n_z - 1) as f64
    }

    /// `cv dt / dz^2`.
    pub fn diffusion_number(&self, spec: &ProblemSpec) -> f64 {
        let dz = self.dz(spec);
        spec.cv * self.dt / (dz * dz)
    }

    /// Both spacings halved.
    pub fn refined(&self) -> Self {
        Self {
            n_z: 2 * self.n_z - 1,
            dt: 0.5 * self.dt,
            t_max: self.t_max,
        }
    }
}

/// Pressure on the FD nodes, time outer. `z` is the internal coordinate,
/// ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct FdSolution {
    pub z: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub diffusion_number: f64,
}

impl FdSolution {
    pub fn n_z(&self) -> usize {
        self.z.len()
    }

    pub fn slice(&self, it: usize) -> &[f64] {
        let n = self.n_z();
        &self.values[it * n..(it + 1) * n]
    }

    /// As a `p / p0` field with depth from the top ascending.
    pub fn to_field(&self, spec: &ProblemSpec) -> GridField {
        let n = self.n_z();
        let depths = self.z.iter().rev().map(|&z| spec.z_to_depth(z)).collect();
        let mut values = Vec::with_capacity(self.values.len());
        for it in 0..self.times.len() {
            values.extend(self.slice(it).iter().rev().map(|p| p / spec.p0));
        }
        debug_assert_eq!(values.len(), n * self.times.len());
        GridField {
            depths,
            times: self.times.clone(),
            values,
        }
    }

    /// `p / p0` interpolated onto the nodes of `grid`.
    pub fn sample(&self, spec: &ProblemSpec, grid: &Grid) -> Result<GridField> {
        GridField::from_fn(spec, grid, |z, t| Ok(self.interpolate(z, t) / spec.p0))
    }

    /// Bilinear interpolation in `(z, t)`, clamped to the solved domain.
    pub fn interpolate(&self, z: f64, t: f64) -> f64 {
        let (zi, zw) = bracket(&self.z, z);
        let (ti, tw) = bracket(&self.times, t);
        let n = self.n_z();
        let at = |it: usize, iz: usize| self.values[it * n + iz];
        let lower = (1.0 - zw) * at(ti, zi) + zw * at(ti, zi + 1);
        let upper = (1.0 - zw) * at(ti + 1, zi) + zw * at(ti + 1, zi + 1);
        (1.0 - tw) * lower + tw * upper
    }

    /// Largest `|fd - analytic|` over nodes with `t >= t_min`.
    pub fn max_error_vs_analytic(&self, spec: &ProblemSpec, t_min: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (it, &t) in self.times.iter().enumerate() {
            if t < t_min {
                continue;
            }
            for (&z, &p) in self.z.iter().zip(self.slice(it)) {
                let exact = spec.p0 * pressure_ratio(spec, z, t)?;
                worst = worst.max((p - exact).abs());
            }
        }
        Ok(worst)
    }
}

/// Index `i` and weight `w` with `x ~ (1 - w) xs[i] + w xs[i + 1]` on a
/// sorted grid of at least two nodes.
fn bracket(xs: &[f64], x: f64) -> (usize, f64) {
    let last = xs.len() - 2;
    let i = xs.partition_point(|&v| v <= x).saturating_sub(1).min(last);
    let w = ((x - xs[i]) / (xs[i + 1] - xs[i])).clamp(0.0, 1.0);
    (i, w)
}

/// Thomas algorithm for a tridiagonal system. `lower[0]` and
/// `upper[n - 1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: lower.len().min(upper.len()).min(rhs.len()),
        });
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < f64::MIN_POSITIVE {
        return Err(Error::SingularSystem { row: 0 });
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot.abs() < f64::MIN_POSITIVE {
            return Err(Error::SingularSystem { row: i });
        }
        c[i] = upper[i] / pivot;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Unknowns of the linear system: all nodes except Dirichlet ones.
struct Layout {
    first: usize,
    last: usize,
    neumann_first: bool,
}

impl Layout {
    fn new(spec: &ProblemSpec, n_z: usize) -> Self {
        match spec.drainage {
            Drainage::TopOnly => Self {
                first: 0,
                last: n_z - 2,
                neumann_first: true,
            },
            Drainage::TopAndBottom => Self {
                first: 1,
                last: n_z - 2,
                neumann_first: false,
            },
        }
    }

    fn len(&self) -> usize {
        self.last - self.first + 1
    }
}

/// One theta-scheme step with diffusion number `r` (theta = 1/2 for
/// Crank-Nicolson, 1 for backward Euler). Dirichlet nodes stay zero.
fn theta_step(p: &mut [f64], layout: &Layout, r: f64, theta: f64) -> Result<()> {
    let m = layout.len();
    let explicit = (1.0 - theta) * r;
    let implicit = theta * r;
    let mut lower = vec![-implicit; m];
    let mut diag = vec![1.0 + 2.0 * implicit; m];
    let mut upper = vec![-implicit; m];
    let mut rhs = vec![0.0; m];
    for (k, slot) in rhs.iter_mut().enumerate() {
        let j = layout.first + k;
        let left = if j == 0 { p[1] } else { p[j - 1] };
        *slot = p[j] + explicit * (left - 2.0 * p[j] + p[j + 1]);
    }
    if layout.neumann_first {
        // Ghost node mirrors node 1.
        upper[0] = -2.0 * implicit;
    }
    lower[0] = 0.0;
    upper[m - 1] = 0.0;
    diag[m - 1] = 1.0 + 2.0 * implicit;
    let x = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    p[layout.first..=layout.last].copy_from_slice(&x);
    Ok(())
}

/// Crank-Nicolson solution on `grid`, starting from `p = p0` inside and
/// `p = 0` on drained faces.
pub fn fd_solve(spec: &ProblemSpec, grid: &FdGrid) -> Result<FdSolution> {
    spec.validate()?;
    grid.validate()?;
    let (lo, hi) = spec.z_range();
    let z = linspace(lo, hi, grid.n_z);
    let layout = Layout::new(spec, grid.n_z);
    let n_steps = grid.n_steps();
    let dt = grid.t_max / n_steps as f64;
    let dz = grid.dz(spec);
    let r = spec.cv * dt / (dz * dz);

    let mut p: Vec<f64> = (0..grid.n_z)
        .map(|j| {
            if j >= layout.first && j <= layout.last {
                spec.p0
            } else {
                0.0
            }
        })
        .collect();
    let mut values = Vec::with_capacity((n_steps + 1) * grid.n_z);
    values.extend_from_slice(&p);
    let mut times = Vec::with_capacity(n_steps + 1);
    times.push(0.0);

    for step in 1..=n_steps {
        if step <= STARTUP_STEPS {
            theta_step(&mut p, &layout, 0.5 * r, 1.0)?;
            theta_step(&mut p, &layout, 0.5 * r, 1.0)?;
        } else {
            theta_step(&mut p, &layout, r, 0.5)?;
        }
        values.extend_from_slice(&p);
        times.push(if step == n_steps { grid.t_max } else { step as f64 * dt });
    }

    Ok(FdSolution {
        z,
        times,
        values,
        diffusion_number: r,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementRow {
    pub n_z: usize,
    pub dt: f64,
    /// Max-norm difference to the previous (coarser) solution on shared
    /// nodes; `None` for the first grid.
    pub diff_to_previous: Option<f64>,
    /// `previous diff / this diff`.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub solution: FdSolution,
    pub grid: FdGrid,
    pub table: Vec<RefinementRow>,
}

/// Coarsest grid used by [`refine_until`].
pub fn coarse_grid(spec: &ProblemSpec) -> FdGrid {
    FdGrid {
        n_z: 41,
        dt: spec.t_max / 100.0,
        t_max: spec.t_max,
    }
}

/// Max-norm difference between a solution and its one-level refinement,
/// over the coarse solution's nodes with `t >= t_min`.
pub fn refinement_difference(coarse: &FdSolution, fine: &FdSolution, t_min: f64) -> f64 {
    let (nc, nf) = (coarse.n_z(), fine.n_z());
    assert_eq!(nf, 2 * nc - 1, "fine grid is not a one-level refinement");
    let mut worst: f64 = 0.0;
    for it in 0..coarse.times.len() {
        if coarse.times[it] < t_min {
            continue;
        }
        let c = coarse.slice(it);
        let f = fine.slice(2 * it);
        for j in 0..nc {
            worst = worst.max((c[j] - f[2 * j]).abs());
        }
    }
    worst
}

/// Halves both spacings, starting from `start`, until successive solutions
/// differ by less than `tolerance` from [`comparison_start`] on.
pub fn refine_from(spec: &ProblemSpec, start: FdGrid, tolerance: f64) -> Result<Refinement> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let mut grid = start;
    let mut current = fd_solve(spec, &grid)?;
    let mut table = vec![RefinementRow {
        n_z: grid.n_z,
        dt: grid.dt,
        diff_to_previous: None,
        ratio: None,
    }];
    let mut last_diff = f64::INFINITY;
    for _ in 0..MAX_HALVINGS {
        let finer = grid.refined();
        let next = fd_solve(spec, &finer)?;
        let diff = refinement_difference(&current, &next, comparison_start(spec));
        table.push(RefinementRow {
            n_z: finer.n_z,
            dt: finer.dt,
            diff_to_previous: Some(diff),
            ratio: last_diff.is_finite().then(|| last_diff / diff),
        });
        grid = finer;
        current = next;
        last_diff = diff;
        if diff < tolerance {
            return Ok(Refinement {
                solution: current,
                grid,
                table,
            });
        }
    }
    Err(Error::RefinementLimit {
        halvings: MAX_HALVINGS,
        last_diff,
    })
}

/// [`refine_from`] starting at [`coarse_grid`].
pub fn refine_until(spec: &ProblemSpec, tolerance: f64) -> Result<Refinement> {
    refine_from(spec, coarse_grid(spec), tolerance)
}
