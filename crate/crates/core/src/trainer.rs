//! Forward and inverse training loops.
//!
//! Forward runs fit initial/boundary data plus the PDE residual at Latin
//! hypercube collocation points with `cv` fixed. Inverse runs fit a random
//! sample of the analytic solution and evaluate the residual at those same
//! points with a trainable `cv = exp(w_cv)`.
//!
//! Every optimizer step evaluates its points in fixed-size chunks, one tape
//! per chunk, and sums chunk gradients in a fixed order; results are
//! deterministic for a given seed.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, Matrix, Tape, Var};
use crate::data::{
    build_forward_dataset, build_inverse_dataset, lhs_collocation, make_batches, BottomBoundary, Dataset, LabeledPoint,
    Point,
};
use crate::error::{Error, Result};
use crate::model::{cv_from_weight, AdamConfig, AdamState, NetworkParams};
use crate::problem::{analytic_field, l2_relative_error, Grid, GridField, ProblemSpec};

/// Points per tape. Small enough to keep a chunk's buffers in cache.
pub const CHUNK: usize = 128;

/// Training aborts once the step loss exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Forward,
    Inverse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Collocation count, forward mode only.
    #[serde(default)]
    pub n_collocation: Option<usize>,
    /// Labeled sample size, inverse mode only.
    #[serde(default)]
    pub sample_size: Option<usize>,
    pub seed: u64,
    /// Early stop once an epoch's total MSE drops below this.
    #[serde(default)]
    pub stop_mse: Option<f64>,
    #[serde(default)]
    pub bottom_boundary: BottomBoundary,
    /// Starting `ln cv` for inverse runs.
    #[serde(default)]
    pub initial_w_cv: f64,
}

impl TrainConfig {
    pub fn forward(epochs: usize, batch_size: usize, learning_rate: f64, n_collocation: usize, seed: u64) -> Self {
        Self {
            mode: Mode::Forward,
            epochs,
            batch_size,
            learning_rate,
            n_collocation: Some(n_collocation),
            sample_size: None,
            seed,
            stop_mse: None,
            bottom_boundary: BottomBoundary::Values,
            initial_w_cv: 0.0,
        }
    }

    pub fn inverse(epochs: usize, batch_size: usize, learning_rate: f64, sample_size: usize, seed: u64) -> Self {
        Self {
            mode: Mode::Inverse,
            n_collocation: None,
            sample_size: Some(sample_size),
            ..Self::forward(epochs, batch_size, learning_rate, 0, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if let Some(s) = self.stop_mse {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid("stop_mse must be positive"));
            }
        }
        if !self.initial_w_cv.is_finite() {
            return Err(Error::invalid("initial_w_cv must be finite"));
        }
        match self.mode {
            Mode::Forward => match self.n_collocation {
                Some(n) if n > 0 => Ok(()),
                _ => Err(Error::invalid("forward training needs n_collocation > 0")),
            },
            Mode::Inverse => match self.sample_size {
                Some(n) if n > 0 => Ok(()),
                _ => Err(Error::invalid("inverse training needs sample_size > 0")),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mse_p: f64,
    pub mse_c: f64,
    pub mse_total: f64,
    pub cv: Option<f64>,
}

impl EpochRecord {
    fn new(epoch: usize, mse_p: f64, mse_c: f64, cv: Option<f64>) -> Self {
        Self {
            epoch,
            mse_p,
            mse_c,
            mse_total: mse_p + mse_c,
            cv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub l2_error: f64,
    pub final_cv: Option<f64>,
    pub stopped_early: bool,
    pub duration_seconds: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.records.len()
    }

    pub fn final_mse(&self) -> Option<f64> {
        self.records.last().map(|r| r.mse_total)
    }

    /// `epoch,mse_p,mse_c,mse_total[,cv]`.
    pub fn history_csv(&self) -> String {
        use crate::io::fmt_f64;
        let with_cv = self.records.iter().any(|r| r.cv.is_some()) || self.final_cv.is_some();
        let mut out = String::from(if with_cv {
            "epoch,mse_p,mse_c,mse_total,cv\n"
        } else {
            "epoch,mse_p,mse_c,mse_total\n"
        });
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}",
                r.epoch,
                fmt_f64(r.mse_p),
                fmt_f64(r.mse_c),
                fmt_f64(r.mse_total)
            ));
            if with_cv {
                out.push(',');
                out.push_str(&r.cv.map(fmt_f64).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }
}

/// Anything that can record its output jet for a batch of inputs.
///
/// Implemented by [`NetworkParams`]; tests plug in closed-form functions.
pub trait PressureModel {
    fn record_jet(&self, tape: &mut Tape, input: &Jet) -> Jet;
}

impl PressureModel for NetworkParams {
    fn record_jet(&self, tape: &mut Tape, input: &Jet) -> Jet {
        let net = self.bind(tape);
        net.forward_jet(tape, input)
    }
}

/// `dp/dt - cv d2p/dz2` at each point.
pub fn residuals<M: PressureModel + ?Sized>(model: &M, cv: f64, points: &[Point]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(CHUNK) {
        let mut tape = Tape::new();
        let (z, t) = split_points(chunk);
        let input = Jet::inputs(&mut tape, &z, &t);
        let jet = model.record_jet(&mut tape, &input);
        for b in jet.bundles(&tape)? {
            out.push(b.d_dt - cv * b.d2_dz2);
        }
    }
    Ok(out)
}

/// Residual at a single point.
pub fn residual<M: PressureModel + ?Sized>(model: &M, cv: f64, z: f64, t: f64) -> Result<f64> {
    Ok(residuals(model, cv, &[Point { z, t }])?[0])
}

/// Mean of `(p - p_hat)^2` over a batch.
pub fn training_loss(params: &NetworkParams, batch: &[LabeledPoint]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (z, t): (Vec<f64>, Vec<f64>) = batch.iter().map(|p| (p.z, p.t)).unzip();
    let pred = params.predict(&z, &t);
    Ok(pred
        .iter()
        .zip(batch)
        .map(|(ph, p)| (p.p - ph) * (p.p - ph))
        .sum::<f64>()
        / batch.len() as f64)
}

/// Mean of the squared residual over a batch.
pub fn constraint_loss<M: PressureModel + ?Sized>(model: &M, cv: f64, batch: &[Point]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let r = residuals(model, cv, batch)?;
    Ok(r.iter().map(|v| v * v).sum::<f64>() / batch.len() as f64)
}

/// Where the coefficient in the residual comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Fixed(f64),
    /// `exp(w_cv)` from the network's trainable weight.
    Trainable,
}

/// Loss terms and the gradient of their sum for one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLoss {
    pub mse_p: f64,
    pub mse_c: f64,
    /// Gradient of `mse_p + mse_c`, laid out like [`NetworkParams::to_flat`].
    pub grad: Vec<f64>,
}

impl StepLoss {
    pub fn total(&self) -> f64 {
        self.mse_p + self.mse_c
    }
}

/// The points one optimizer step sees.
#[derive(Clone, Copy, Debug)]
pub struct StepBatch<'a> {
    pub labeled: &'a [LabeledPoint],
    /// Residual points; ignored when `residual_at_labeled` is set.
    pub collocation: &'a [Point],
    pub zero_flux: &'a [Point],
    /// Evaluate the residual at the labeled points instead of at
    /// collocation points (inverse mode).
    pub residual_at_labeled: bool,
}

/// `MSE_p + MSE_c` and its exact gradient.
///
/// `MSE_p` averages squared label errors together with squared `dp/dz` at
/// zero-flux points; `MSE_c` averages squared residuals.
pub fn step_loss(params: &NetworkParams, coefficient: Coefficient, batch: StepBatch<'_>) -> Result<StepLoss> {
    let cv = match coefficient {
        Coefficient::Fixed(cv) => cv,
        Coefficient::Trainable => cv_from_weight(
            params
                .w_cv
                .ok_or_else(|| Error::invalid("trainable coefficient needs w_cv"))?,
        ),
    };
    let n_data = batch.labeled.len() + batch.zero_flux.len();
    let residual_points = if batch.residual_at_labeled {
        batch.labeled.len()
    } else {
        batch.collocation.len()
    };
    if n_data == 0 {
        return Err(Error::EmptyBatch);
    }

    let data_scale = 1.0 / n_data as f64;
    let res_scale = if residual_points > 0 {
        1.0 / residual_points as f64
    } else {
        0.0
    };

    let mut jobs = Vec::new();
    jobs.extend(batch.labeled.chunks(CHUNK).map(Job::Labeled));
    jobs.extend(batch.zero_flux.chunks(CHUNK).map(Job::ZeroFlux));
    if !batch.residual_at_labeled {
        jobs.extend(batch.collocation.chunks(CHUNK).map(Job::Collocation));
    }
    let scales = Scales {
        cv,
        data: data_scale,
        res: res_scale,
        residual_at_labeled: batch.residual_at_labeled,
    };
    let parts = map_ordered(&jobs, worker_threads(), |job| chunk_loss(params, scales, job));
    let mut acc = Accumulator::new(params);
    for part in &parts {
        acc.add(part);
    }

    let d_w_cv = match coefficient {
        Coefficient::Trainable => Some(acc.d_cv * cv),
        Coefficient::Fixed(_) => None,
    };
    Ok(StepLoss {
        mse_p: acc.mse_p,
        mse_c: acc.mse_c,
        grad: params.flatten_gradient(&acc.grads, d_w_cv),
    })
}

fn squared_error_sum(tape: &mut Tape, pred: Var, targets: Var, scale: f64) -> Var {
    let diff = tape.sub(pred, targets);
    let sq = tape.mul(diff, diff);
    tape.sum_scaled(sq, scale)
}

/// `scale * sum((dp/dt - cv d2p/dz2)^2)`.
fn residual_sum(tape: &mut Tape, out: &Jet, cv: Var, scale: f64) -> Var {
    let diffusion = tape.mul(out.d_zz, cv);
    let r = tape.sub(out.d_t, diffusion);
    let sq = tape.mul(r, r);
    tape.sum_scaled(sq, scale)
}

#[derive(Clone, Copy)]
enum Job<'a> {
    Labeled(&'a [LabeledPoint]),
    ZeroFlux(&'a [Point]),
    Collocation(&'a [Point]),
}

#[derive(Clone, Copy)]
struct Scales {
    cv: f64,
    data: f64,
    res: f64,
    residual_at_labeled: bool,
}

/// One chunk's loss parts and the gradient of their sum.
struct ChunkLoss {
    grads: Vec<Option<Matrix>>,
    mse_p: f64,
    mse_c: f64,
    d_cv: f64,
}

fn chunk_loss(params: &NetworkParams, s: Scales, job: &Job<'_>) -> ChunkLoss {
    let mut tape = Tape::new();
    let net = params.bind(&mut tape);
    let (data, res, cv_var) = match *job {
        Job::Labeled(chunk) => {
            let targets = tape.constant(Matrix::column(&chunk.iter().map(|p| p.p).collect::<Vec<_>>()));
            let (z, t): (Vec<f64>, Vec<f64>) = chunk.iter().map(|p| (p.z, p.t)).unzip();
            if s.residual_at_labeled {
                let cv_var = tape.variable(Matrix::scalar(s.cv));
                let input = Jet::inputs(&mut tape, &z, &t);
                let out = net.forward_jet(&mut tape, &input);
                let data = squared_error_sum(&mut tape, out.value, targets, s.data);
                let res = residual_sum(&mut tape, &out, cv_var, s.res);
                (Some(data), Some(res), Some(cv_var))
            } else {
                let x = tape.constant(inputs_matrix(&z, &t));
                let pred = net.forward_value(&mut tape, x);
                (Some(squared_error_sum(&mut tape, pred, targets, s.data)), None, None)
            }
        }
        Job::ZeroFlux(chunk) => {
            let (z, t) = split_points(chunk);
            let input = Jet::inputs(&mut tape, &z, &t);
            let out = net.forward_jet(&mut tape, &input);
            let sq = tape.mul(out.d_z, out.d_z);
            (Some(tape.sum_scaled(sq, s.data)), None, None)
        }
        Job::Collocation(chunk) => {
            let cv_var = tape.variable(Matrix::scalar(s.cv));
            let (z, t) = split_points(chunk);
            let input = Jet::inputs(&mut tape, &z, &t);
            let out = net.forward_jet(&mut tape, &input);
            (None, Some(residual_sum(&mut tape, &out, cv_var, s.res)), Some(cv_var))
        }
    };
    let loss = match (data, res) {
        (Some(d), Some(r)) => tape.add(d, r),
        (Some(d), None) => d,
        (None, Some(r)) => r,
        (None, None) => unreachable!("every job records a loss"),
    };
    let mut g = tape.backward(loss);
    ChunkLoss {
        grads: tape.parameters().map(|p| g.take(p)).collect(),
        mse_p: data.map_or(0.0, |d| tape.scalar_value(d)),
        mse_c: res.map_or(0.0, |r| tape.scalar_value(r)),
        d_cv: cv_var.map_or(0.0, |c| g.scalar(c)),
    }
}

fn worker_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Applies `f` to every job, spreading contiguous blocks over `threads`
/// workers. Output order matches input order whatever the thread count.
fn map_ordered<J: Sync, R: Send>(jobs: &[J], threads: usize, f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    let threads = threads.min(jobs.len());
    if threads <= 1 {
        return jobs.iter().map(f).collect();
    }
    let block = jobs.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(block)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("chunk worker panicked"))
            .collect()
    })
}

struct Accumulator {
    grads: Vec<Matrix>,
    mse_p: f64,
    mse_c: f64,
    d_cv: f64,
}

impl Accumulator {
    fn new(params: &NetworkParams) -> Self {
        let mut grads = Vec::with_capacity(2 * params.num_layers());
        for l in 0..params.num_layers() {
            let (r, c) = params.weight(l).shape();
            grads.push(Matrix::zeros(r, c));
            grads.push(Matrix::zeros(1, r));
        }
        Self {
            grads,
            mse_p: 0.0,
            mse_c: 0.0,
            d_cv: 0.0,
        }
    }

    fn add(&mut self, part: &ChunkLoss) {
        self.mse_p += part.mse_p;
        self.mse_c += part.mse_c;
        self.d_cv += part.d_cv;
        for (acc, m) in self.grads.iter_mut().zip(&part.grads) {
            if let Some(m) = m {
                acc.axpy(1.0, m);
            }
        }
    }
}

fn split_points(points: &[Point]) -> (Vec<f64>, Vec<f64>) {
    points.iter().map(|p| (p.z, p.t)).unzip()
}

fn inputs_matrix(z: &[f64], t: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(z.len(), 2);
    for i in 0..z.len() {
        m.set(i, 0, z[i]);
        m.set(i, 1, t[i]);
    }
    m
}

/// SplitMix64 finalizer over `base + stream`, for independent sub-seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_COLLOCATION: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_EPOCH: u64 = 1 << 32;

/// Training state advanced one epoch at a time.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: NetworkParams,
    pub dataset: Dataset,
    config: TrainConfig,
    coefficient: Coefficient,
    adam: AdamState,
    records: Vec<EpochRecord>,
    stopped_early: bool,
}

impl Trainer {
    /// Forward setup: initial/boundary labels, Latin hypercube collocation,
    /// `cv` fixed at `spec.cv`.
    pub fn forward(spec: &ProblemSpec, grid: &Grid, layer_sizes: &[usize], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.mode != Mode::Forward {
            return Err(Error::invalid("forward trainer needs mode = forward"));
        }
        let n_c = config.n_collocation.unwrap_or_default();
        let dataset = build_forward_dataset(spec, grid, config.bottom_boundary)?;
        let collocation = lhs_collocation(&dataset.bounds, n_c, derive_seed(config.seed, STREAM_COLLOCATION))?;
        let params = NetworkParams::init(layer_sizes, config.seed)?;
        Ok(Self::with_parts(
            params,
            dataset.with_collocation(collocation),
            config,
            Coefficient::Fixed(spec.cv),
        ))
    }

    /// Inverse setup: a random sample of the analytic field, residual at
    /// the samples, trainable `cv`. `spec.cv` only generates the data.
    pub fn inverse(spec: &ProblemSpec, grid: &Grid, layer_sizes: &[usize], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.mode != Mode::Inverse {
            return Err(Error::invalid("inverse trainer needs mode = inverse"));
        }
        let dataset = build_inverse_dataset(
            spec,
            grid,
            config.sample_size.unwrap_or_default(),
            derive_seed(config.seed, STREAM_SAMPLE),
        )?;
        let params = NetworkParams::init(layer_sizes, config.seed)?.with_cv_weight(config.initial_w_cv);
        Ok(Self::with_parts(params, dataset, config, Coefficient::Trainable))
    }

    /// Trainer over a prepared dataset and starting parameters.
    pub fn with_parts(params: NetworkParams, dataset: Dataset, config: TrainConfig, coefficient: Coefficient) -> Self {
        let adam = AdamState::new(
            params.num_params(),
            AdamConfig::with_learning_rate(config.learning_rate),
        );
        Self {
            params,
            dataset,
            config,
            coefficient,
            adam,
            records: Vec::new(),
            stopped_early: false,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn epochs_done(&self) -> usize {
        self.records.len()
    }

    /// Whether the epoch budget is spent or the early-stop threshold hit.
    pub fn finished(&self) -> bool {
        self.stopped_early || self.records.len() >= self.config.epochs
    }

    pub fn current_cv(&self) -> Option<f64> {
        match self.coefficient {
            Coefficient::Fixed(_) => None,
            Coefficient::Trainable => self.params.cv(),
        }
    }

    /// One pass over the shuffled labeled data, one Adam step per batch.
    /// Reported losses are means of the per-step losses.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.records.len();
        let plan = make_batches(
            &self.dataset,
            self.config.batch_size,
            derive_seed(self.config.seed, STREAM_EPOCH + epoch as u64),
        )?;
        let residual_at_labeled = self.config.mode == Mode::Inverse;
        let (mut sum_p, mut sum_c) = (0.0, 0.0);
        let mut labeled = Vec::with_capacity(self.config.batch_size);
        let mut collocation = Vec::new();
        let mut zero_flux = Vec::new();
        for b in 0..plan.len() {
            labeled.clear();
            labeled.extend(plan.labeled_indices(b).iter().map(|&i| self.dataset.labeled[i]));
            collocation.clear();
            collocation.extend(plan.collocation[b].iter().map(|&i| self.dataset.collocation[i]));
            zero_flux.clear();
            zero_flux.extend(plan.zero_flux[b].iter().map(|&i| self.dataset.zero_flux[i]));

            let step = step_loss(
                &self.params,
                self.coefficient,
                StepBatch {
                    labeled: &labeled,
                    collocation: &collocation,
                    zero_flux: &zero_flux,
                    residual_at_labeled,
                },
            )?;
            let total = step.total();
            if !total.is_finite() || total > DIVERGENCE_LIMIT || step.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: total,
                    param_norm: self.params.norm(),
                });
            }
            self.adam.step_network(&mut self.params, &step.grad)?;
            sum_p += step.mse_p;
            sum_c += step.mse_c;
        }
        let n = plan.len().max(1) as f64;
        let record = EpochRecord::new(epoch, sum_p / n, sum_c / n, self.current_cv());
        self.records.push(record);
        if self.config.stop_mse.is_some_and(|s| record.mse_total < s) {
            self.stopped_early = true;
        }
        Ok(record)
    }

    /// Runs until [`Trainer::finished`], calling `on_epoch` after each epoch.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        while !self.finished() {
            let record = self.run_epoch()?;
            on_epoch(&record);
        }
        Ok(())
    }

    /// Final evaluation against the analytic solution.
    pub fn report(&self, spec: &ProblemSpec, grid: &Grid, duration_seconds: f64) -> Result<TrainReport> {
        let (_, l2_error) = evaluate(&self.params, spec, grid)?;
        Ok(TrainReport {
            records: self.records.clone(),
            l2_error,
            final_cv: self.current_cv(),
            stopped_early: self.stopped_early,
            duration_seconds,
        })
    }
}

/// Forward training with the given architecture.
pub fn train_forward(
    spec: &ProblemSpec,
    grid: &Grid,
    layer_sizes: &[usize],
    config: TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NetworkParams, TrainReport)> {
    let start = std::time::Instant::now();
    let mut trainer = Trainer::forward(spec, grid, layer_sizes, config)?;
    trainer.run(on_epoch)?;
    let report = trainer.report(spec, grid, start.elapsed().as_secs_f64())?;
    Ok((trainer.params, report))
}

/// Inverse training; the returned parameters carry `w_cv`.
pub fn train_inverse(
    spec: &ProblemSpec,
    grid: &Grid,
    layer_sizes: &[usize],
    config: TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NetworkParams, TrainReport)> {
    let start = std::time::Instant::now();
    let mut trainer = Trainer::inverse(spec, grid, layer_sizes, config)?;
    trainer.run(on_epoch)?;
    let report = trainer.report(spec, grid, start.elapsed().as_secs_f64())?;
    Ok((trainer.params, report))
}

/// Predicted pressure ratio on every grid node and its L2 relative error
/// against the analytic field.
pub fn evaluate(params: &NetworkParams, spec: &ProblemSpec, grid: &Grid) -> Result<(GridField, f64)> {
    let exact = analytic_field(spec, grid)?;
    let predicted = predict_field(params, spec, &exact);
    let err = l2_relative_error(&predicted.values, &exact.values)?;
    Ok((predicted, err))
}

/// Network prediction (as a ratio to `p0`) on the nodes of `like`.
pub fn predict_field(params: &NetworkParams, spec: &ProblemSpec, like: &GridField) -> GridField {
    let (mut z, mut t) = (
        Vec::with_capacity(like.values.len()),
        Vec::with_capacity(like.values.len()),
    );
    for (depth, time, _) in like.iter() {
        z.push(spec.depth_to_z(depth));
        t.push(time);
    }
    let values = params.predict(&z, &t).into_iter().map(|p| p / spec.p0).collect();
    GridField {
        depths: like.depths.clone(),
        times: like.times.clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Bounds;
    use crate::problem::Drainage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `p = z^2 t`.
    struct ZSquaredT;

    impl PressureModel for ZSquaredT {
        fn record_jet(&self, tape: &mut Tape, input: &Jet) -> Jet {
            let z = input.component(tape, 0);
            let t = input.component(tape, 1);
            let z2 = z.mul(tape, &z);
            z2.mul(tape, &t)
        }
    }

    /// `ca * a + cb * b` at the output.
    struct Sum<'a> {
        a: &'a NetworkParams,
        ca: f64,
        b: &'a NetworkParams,
        cb: f64,
    }

    impl PressureModel for Sum<'_> {
        fn record_jet(&self, tape: &mut Tape, input: &Jet) -> Jet {
            let a = self.a.record_jet(tape, input);
            let b = self.b.record_jet(tape, input);
            a.combine(tape, self.ca, &b, self.cb)
        }
    }

    fn top() -> ProblemSpec {
        ProblemSpec::normalized(1.0, 0.6, Drainage::TopOnly, 1.0).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point {
                z: rng.random_range(0.0..1.0),
                t: rng.random_range(0.0..1.0),
            })
            .collect()
    }

    #[test]
    fn polynomial_residual() {
        for (z, t) in [(0.3, 0.7), (1.0, 0.0), (-2.0, 0.5)] {
            let r = residual(&ZSquaredT, 0.5, z, t).unwrap();
            assert!((r - (z * z - t)).abs() < 1e-14);
        }
        let points = [Point { z: 1.0, t: 0.0 }, Point { z: 0.0, t: 1.0 }];
        assert!((constraint_loss(&ZSquaredT, 0.5, &points).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_network_has_zero_residual() {
        let mut params = NetworkParams::zeros(&[2, 4, 1]).unwrap();
        params.bias_mut(1).set(0, 0, 0.7);
        let points = random_points(10, 1);
        assert_eq!(constraint_loss(&params, 0.6, &points).unwrap(), 0.0);
    }

    #[test]
    fn training_loss_examples() {
        let zero = NetworkParams::zeros(&[2, 3, 1]).unwrap();
        let one = [LabeledPoint { z: 0.5, t: 0.5, p: 1.0 }];
        assert_eq!(training_loss(&zero, &one).unwrap(), 1.0);
        let two = [
            LabeledPoint { z: 0.1, t: 0.2, p: 0.1 },
            LabeledPoint {
                z: 0.3,
                t: 0.4,
                p: -0.3,
            },
        ];
        assert!((training_loss(&zero, &two).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(training_loss(&zero, &[]), Err(Error::EmptyBatch)));
        assert!(matches!(constraint_loss(&zero, 0.6, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn output_scaling_scales_constraint_loss_quadratically() {
        let params = NetworkParams::init(&[2, 8, 8, 1], 3).unwrap();
        let zero = NetworkParams::zeros(&[2, 8, 8, 1]).unwrap();
        let points = random_points(50, 2);
        let base = constraint_loss(&params, 0.6, &points).unwrap();
        let lambda = 2.5;
        let scaled = Sum {
            a: &params,
            ca: lambda,
            b: &zero,
            cb: 0.0,
        };
        let got = constraint_loss(&scaled, 0.6, &points).unwrap();
        assert!((got - lambda * lambda * base).abs() <= 1e-12 * got.abs());
    }

    #[test]
    fn residual_is_linear_in_the_output() {
        let n1 = NetworkParams::init(&[2, 6, 6, 1], 11).unwrap();
        let n2 = NetworkParams::init(&[2, 5, 1], 12).unwrap();
        let points = random_points(30, 3);
        let (a, b) = (0.7, -1.3);
        let combined = residuals(
            &Sum {
                a: &n1,
                ca: a,
                b: &n2,
                cb: b,
            },
            0.6,
            &points,
        )
        .unwrap();
        let r1 = residuals(&n1, 0.6, &points).unwrap();
        let r2 = residuals(&n2, 0.6, &points).unwrap();
        for i in 0..points.len() {
            let expected = a * r1[i] + b * r2[i];
            assert!((combined[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    fn forward_batch(spec: &ProblemSpec) -> (Vec<LabeledPoint>, Vec<Point>, Vec<Point>) {
        let grid = Grid::new(6, 6).unwrap();
        let ds = build_forward_dataset(spec, &grid, BottomBoundary::ZeroFlux).unwrap();
        let colloc = lhs_collocation(&Bounds::of_problem(spec), 200, 5).unwrap();
        (ds.labeled, colloc, ds.zero_flux)
    }

    fn total_loss(params: &NetworkParams, coef: Coefficient, batch: StepBatch<'_>) -> f64 {
        step_loss(params, coef, batch).unwrap().total()
    }

    fn check_gradient(params: &NetworkParams, coef: Coefficient, batch: StepBatch<'_>, picks: &[usize]) {
        let grad = step_loss(params, coef, batch).unwrap().grad;
        let flat = params.to_flat();
        let h = 1e-5;
        for &k in picks {
            let mut p = params.clone();
            let mut x = flat.clone();
            x[k] = flat[k] + h;
            p.set_flat(&x).unwrap();
            let up = total_loss(&p, coef, batch);
            x[k] = flat[k] - h;
            p.set_flat(&x).unwrap();
            let down = total_loss(&p, coef, batch);
            let fd = (up - down) / (2.0 * h);
            let scale = grad[k].abs().max(fd.abs()).max(1e-6);
            assert!(
                (grad[k] - fd).abs() / scale <= 1e-5,
                "param {k}: tape {} vs fd {fd}",
                grad[k]
            );
        }
    }

    #[test]
    fn forward_step_gradient_matches_finite_differences() {
        let spec = top();
        let (labeled, collocation, zero_flux) = forward_batch(&spec);
        // More points than one chunk, so chunk summation is exercised.
        assert!(collocation.len() > CHUNK);
        let params = NetworkParams::init(&[2, 8, 8, 1], 21).unwrap();
        let batch = StepBatch {
            labeled: &labeled,
            collocation: &collocation,
            zero_flux: &zero_flux,
            residual_at_labeled: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let picks: Vec<usize> = (0..20).map(|_| rng.random_range(0..params.num_params())).collect();
        check_gradient(&params, Coefficient::Fixed(spec.cv), batch, &picks);
    }

    #[test]
    fn inverse_step_gradient_matches_finite_differences() {
        let spec = top();
        let ds = build_inverse_dataset(&spec, &Grid::new(10, 10).unwrap(), 40, 4).unwrap();
        let params = NetworkParams::init(&[2, 8, 8, 1], 22).unwrap().with_cv_weight(-0.3);
        let batch = StepBatch {
            labeled: &ds.labeled,
            collocation: &[],
            zero_flux: &[],
            residual_at_labeled: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut picks: Vec<usize> = (0..19).map(|_| rng.random_range(0..params.num_params() - 1)).collect();
        picks.push(params.num_params() - 1);
        check_gradient(&params, Coefficient::Trainable, batch, &picks);
    }

    #[test]
    fn cv_weight_gradient_follows_the_chain_rule() {
        let spec = top();
        let ds = build_inverse_dataset(&spec, &Grid::new(12, 12).unwrap(), 60, 6).unwrap();
        let w = 0.4;
        let params = NetworkParams::init(&[2, 6, 6, 1], 5).unwrap().with_cv_weight(w);
        let step = step_loss(
            &params,
            Coefficient::Trainable,
            StepBatch {
                labeled: &ds.labeled,
                collocation: &[],
                zero_flux: &[],
                residual_at_labeled: true,
            },
        )
        .unwrap();
        let mut tape = Tape::new();
        let (z, t): (Vec<f64>, Vec<f64>) = ds.labeled.iter().map(|p| (p.z, p.t)).unzip();
        let input = Jet::inputs(&mut tape, &z, &t);
        let out = params.record_jet(&mut tape, &input);
        let cv = w.exp();
        let expected = cv
            * out
                .bundles(&tape)
                .unwrap()
                .iter()
                .map(|b| 2.0 * (b.d_dt - cv * b.d2_dz2) * (-b.d2_dz2))
                .sum::<f64>()
            / ds.labeled.len() as f64;
        let got = *step.grad.last().unwrap();
        assert!((got - expected).abs() <= 1e-8 * expected.abs(), "{got} vs {expected}");
    }

    #[test]
    fn step_loss_parts_match_standalone_losses() {
        let spec = top();
        let grid = Grid::new(6, 6).unwrap();
        let ds = build_forward_dataset(&spec, &grid, BottomBoundary::Values).unwrap();
        let colloc = lhs_collocation(&Bounds::of_problem(&spec), 300, 5).unwrap();
        let params = NetworkParams::init(&[2, 8, 1], 2).unwrap();
        let step = step_loss(
            &params,
            Coefficient::Fixed(0.6),
            StepBatch {
                labeled: &ds.labeled,
                collocation: &colloc,
                zero_flux: &[],
                residual_at_labeled: false,
            },
        )
        .unwrap();
        let p = training_loss(&params, &ds.labeled).unwrap();
        let c = constraint_loss(&params, 0.6, &colloc).unwrap();
        assert!((step.mse_p - p).abs() <= 1e-13 * p);
        assert!((step.mse_c - c).abs() <= 1e-13 * c);
    }

    #[test]
    fn chunk_results_do_not_depend_on_thread_count() {
        let spec = top();
        let colloc = lhs_collocation(&Bounds::of_problem(&spec), 7 * CHUNK + 5, 9).unwrap();
        let params = NetworkParams::init(&[2, 6, 6, 1], 4).unwrap();
        let jobs: Vec<_> = colloc.chunks(CHUNK).map(Job::Collocation).collect();
        let scales = Scales {
            cv: 0.6,
            data: 1.0,
            res: 1.0 / colloc.len() as f64,
            residual_at_labeled: false,
        };
        let fold = |threads| {
            let mut acc = Accumulator::new(&params);
            for part in map_ordered(&jobs, threads, |job| chunk_loss(&params, scales, job)) {
                acc.add(&part);
            }
            let mut bits: Vec<u64> = acc
                .grads
                .iter()
                .flat_map(|m| m.as_slice().to_vec())
                .map(f64::to_bits)
                .collect();
            bits.push(acc.mse_c.to_bits());
            bits.push(acc.d_cv.to_bits());
            bits
        };
        let serial = fold(1);
        assert_eq!(serial, fold(3));
        assert_eq!(serial, fold(16));
    }

    fn small_forward(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig::forward(epochs, 8, 1e-3, 64, seed)
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let spec = top();
        let grid = Grid::new(8, 8).unwrap();
        let sizes = [2, 5, 5, 1];
        let (params, report) = train_forward(&spec, &grid, &sizes, small_forward(0, 3), |_| {}).unwrap();
        assert_eq!(params, NetworkParams::init(&sizes, 3).unwrap());
        assert!(report.records.is_empty());
        assert_eq!(report.history_csv(), "epoch,mse_p,mse_c,mse_total\n");
    }

    #[test]
    fn zero_network_has_unit_error() {
        let spec = top();
        let grid = Grid::new(20, 20).unwrap();
        let (_, err) = evaluate(&NetworkParams::zeros(&[2, 4, 1]).unwrap(), &spec, &grid).unwrap();
        assert_eq!(err, 1.0);
    }

    #[test]
    fn records_decompose_and_runs_are_deterministic() {
        let spec = top();
        let grid = Grid::new(8, 8).unwrap();
        let sizes = [2, 6, 6, 1];
        let run = || train_forward(&spec, &grid, &sizes, small_forward(4, 17), |_| {}).unwrap();
        let (pa, ra) = run();
        let (pb, rb) = run();
        assert_eq!(pa, pb);
        assert_eq!(ra.records, rb.records);
        assert_eq!(ra.history_csv(), rb.history_csv());
        for r in &ra.records {
            assert_eq!(r.mse_total, r.mse_p + r.mse_c);
            assert!(r.cv.is_none());
        }
        let (pc, _) = train_forward(&spec, &grid, &sizes, small_forward(4, 18), |_| {}).unwrap();
        assert_ne!(pa, pc);
    }

    #[test]
    fn inverse_records_cv_starting_near_one() {
        let spec = top();
        let grid = Grid::new(10, 10).unwrap();
        let cfg = TrainConfig::inverse(3, 20, 1e-4, 40, 1);
        let mut seen = Vec::new();
        let (params, report) = train_inverse(&spec, &grid, &[2, 6, 1], cfg, |r| seen.push(r.cv)).unwrap();
        assert_eq!(seen.len(), 3);
        // Two Adam steps per epoch move w_cv by at most ~lr each.
        assert!((seen[0].unwrap() - 1.0).abs() < 3e-4);
        assert_eq!(report.final_cv, params.cv());
        assert!(report.history_csv().starts_with("epoch,mse_p,mse_c,mse_total,cv\n"));
    }

    #[test]
    fn early_stop_ends_training() {
        let spec = top();
        let grid = Grid::new(8, 8).unwrap();
        let mut cfg = small_forward(50, 1);
        cfg.stop_mse = Some(1e3);
        let (_, report) = train_forward(&spec, &grid, &[2, 4, 1], cfg, |_| {}).unwrap();
        assert_eq!(report.epochs_run(), 1);
        assert!(report.stopped_early);
    }

    #[test]
    fn divergence_is_reported() {
        let spec = top();
        let grid = Grid::new(8, 8).unwrap();
        let mut trainer = Trainer::forward(&spec, &grid, &[2, 4, 1], small_forward(5, 1)).unwrap();
        for l in 0..trainer.params.num_layers() {
            trainer.params.weight_mut(l).as_mut_slice().fill(1e4);
        }
        assert!(matches!(trainer.run_epoch(), Err(Error::Diverged { epoch: 0, .. })));
    }

    #[test]
    fn constant_labels_leave_cv_unidentified() {
        // p = 1 everywhere: the fitted constant has zero residual for any cv.
        let labeled: Vec<LabeledPoint> = random_points(40, 8)
            .into_iter()
            .map(|p| LabeledPoint { z: p.z, t: p.t, p: 1.0 })
            .collect();
        let mut params = NetworkParams::zeros(&[2, 4, 1]).unwrap().with_cv_weight(0.0);
        params.bias_mut(1).set(0, 0, 1.0);
        for w in [-2.0, 0.0, 1.5] {
            params.w_cv = Some(w);
            let step = step_loss(
                &params,
                Coefficient::Trainable,
                StepBatch {
                    labeled: &labeled,
                    collocation: &[],
                    zero_flux: &[],
                    residual_at_labeled: true,
                },
            )
            .unwrap();
            assert_eq!(step.total(), 0.0);
            assert!(step.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::forward(1, 0, 1e-3, 10, 1).validate().is_err());
        assert!(TrainConfig::forward(1, 10, 0.0, 10, 1).validate().is_err());
        assert!(TrainConfig::forward(1, 10, 1e-3, 0, 1).validate().is_err());
        assert!(TrainConfig::inverse(1, 10, 1e-3, 0, 1).validate().is_err());
        let spec = top();
        let grid = Grid::new(4, 4).unwrap();
        let inv = TrainConfig::inverse(1, 10, 1e-3, 5, 1);
        assert!(Trainer::forward(&spec, &grid, &[2, 3, 1], inv).is_err());
    }

    #[test]
    fn seeds_derive_independent_streams() {
        assert_ne!(derive_seed(1, STREAM_COLLOCATION), derive_seed(1, STREAM_SAMPLE));
        assert_ne!(derive_seed(1, STREAM_EPOCH), derive_seed(2, STREAM_EPOCH));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }
}
