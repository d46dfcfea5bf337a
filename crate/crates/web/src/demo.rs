//! Plain-Rust backing for the browser bindings, testable natively.

use pinn_consolidation::error::Result;
use pinn_consolidation::fd::{fd_solve, FdGrid, FdSolution};
use pinn_consolidation::model::layer_sizes;
use pinn_consolidation::problem::{pressure_ratio, Drainage, Grid, ProblemSpec};
use pinn_consolidation::trainer::{evaluate, EpochRecord, TrainConfig, Trainer};

/// Layer thickness in the demo; time runs over `[0, T_MAX]`.
pub const HEIGHT: f64 = 1.0;
pub const T_MAX: f64 = 1.0;

pub fn spec(cv: f64, two_way: bool) -> Result<ProblemSpec> {
    let drainage = if two_way {
        Drainage::TopAndBottom
    } else {
        Drainage::TopOnly
    };
    ProblemSpec::normalized(HEIGHT, cv, drainage, T_MAX)
}

/// `n` evenly spaced values from 0 to `end`.
fn linspace(end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `n` evenly spaced depths from the top surface to the base.
pub fn depths(n: usize) -> Vec<f64> {
    linspace(HEIGHT, n)
}

/// Analytic `p / p0` against depth at time `t`.
pub fn analytic_profile(spec: &ProblemSpec, t: f64, n: usize) -> Result<Vec<f64>> {
    depths(n)
        .into_iter()
        .map(|d| pressure_ratio(spec, spec.depth_to_z(d), t))
        .collect()
}

/// Analytic `p / p0` on an `n_t` by `n_z` raster, time outer.
pub fn analytic_raster(spec: &ProblemSpec, n_z: usize, n_t: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_z * n_t);
    for t in linspace(spec.t_max, n_t) {
        out.extend(analytic_profile(spec, t, n_z)?);
    }
    Ok(out)
}

/// Crank-Nicolson profile next to the series at one time.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub analytic: Vec<f64>,
    pub fd: Vec<f64>,
    pub max_abs_diff: f64,
}

pub fn solve(spec: &ProblemSpec, n_z: usize, n_steps: usize) -> Result<FdSolution> {
    fd_solve(spec, &FdGrid::with_steps(n_z, n_steps, spec.t_max)?)
}

pub fn compare(spec: &ProblemSpec, solution: &FdSolution, t: f64, n: usize) -> Result<Comparison> {
    let analytic = analytic_profile(spec, t, n)?;
    let fd: Vec<f64> = depths(n)
        .into_iter()
        .map(|d| solution.interpolate(spec.depth_to_z(d), t) / spec.p0)
        .collect();
    let max_abs_diff = analytic.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Comparison {
        analytic,
        fd,
        max_abs_diff,
    })
}

/// Grid, network and optimizer settings sized for interactive use.
const SESSION_GRID: usize = 21;
const SESSION_COLLOCATION: usize = 400;
const SESSION_SAMPLE: usize = 200;
const SESSION_BATCH: usize = 40;
const SESSION_LR: f64 = 5e-3;
const SESSION_EPOCH_BUDGET: usize = 1_000_000;

/// A small network trained a few epochs at a time.
pub struct Session {
    pub spec: ProblemSpec,
    pub grid: Grid,
    pub trainer: Trainer,
}

impl Session {
    pub fn new(spec: ProblemSpec, inverse: bool, hidden_layers: usize, units: usize, seed: u64) -> Result<Self> {
        let grid = Grid::new(SESSION_GRID, SESSION_GRID)?;
        let sizes = layer_sizes(hidden_layers, units);
        let trainer = if inverse {
            let cfg = TrainConfig::inverse(SESSION_EPOCH_BUDGET, SESSION_BATCH, SESSION_LR, SESSION_SAMPLE, seed);
            Trainer::inverse(&spec, &grid, &sizes, cfg)?
        } else {
            let mut cfg = TrainConfig::forward(
                SESSION_EPOCH_BUDGET,
                SESSION_BATCH,
                SESSION_LR,
                SESSION_COLLOCATION,
                seed,
            );
            cfg.stop_mse = None;
            Trainer::forward(&spec, &grid, &sizes, cfg)?
        };
        Ok(Self { spec, grid, trainer })
    }

    /// Runs up to `epochs` epochs and returns the last record.
    pub fn step(&mut self, epochs: usize) -> Result<Option<EpochRecord>> {
        let mut last = None;
        for _ in 0..epochs {
            if self.trainer.finished() {
                break;
            }
            last = Some(self.trainer.run_epoch()?);
        }
        Ok(last)
    }

    pub fn profile(&self, t: f64, n: usize) -> Vec<f64> {
        depths(n)
            .into_iter()
            .map(|d| self.trainer.params.forward(self.spec.depth_to_z(d), t))
            .collect()
    }

    pub fn l2_error(&self) -> Result<f64> {
        evaluate(&self.trainer.params, &self.spec, &self.grid).map(|(_, e)| e)
    }
}
