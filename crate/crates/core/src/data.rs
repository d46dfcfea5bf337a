//! Training sets, collocation sampling and per-epoch batching.
//!
//! All randomness comes from `ChaCha8Rng` seeded through
//! [`rand::SeedableRng::seed_from_u64`], so datasets and batch plans are
//! reproducible across runs and platforms for a given seed.

use std::io::{BufRead, Write};
use std::ops::Range;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_csv};
use crate::problem::{analytic_field, pressure_ratio, Drainage, Grid, ProblemSpec};

/// A labeled sample in internal coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint {
    pub z: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub z: f64,
    pub t: f64,
}

/// Axis-aligned space-time box in internal coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub z: (f64, f64),
    pub t: (f64, f64),
}

impl Bounds {
    pub fn of_problem(spec: &ProblemSpec) -> Self {
        Self {
            z: spec.z_range(),
            t: (0.0, spec.t_max),
        }
    }

    pub fn contains(&self, z: f64, t: f64) -> bool {
        z >= self.z.0 && z <= self.z.1 && t >= self.t.0 && t <= self.t.1
    }
}

/// How the impermeable bottom of a top-drained layer enters the training
/// data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottomBoundary {
    /// Analytic pressure values as labels.
    #[default]
    Values,
    /// No labels; a zero-gradient penalty `(dp/dz)^2` instead.
    ZeroFlux,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub labeled: Vec<LabeledPoint>,
    pub collocation: Vec<Point>,
    /// Points where `dp/dz = 0` is enforced as part of the data loss.
    pub zero_flux: Vec<Point>,
    pub bounds: Bounds,
}

impl Dataset {
    pub fn with_collocation(mut self, points: Vec<Point>) -> Self {
        self.collocation = points;
        self
    }
}

/// Initial and boundary samples taken from the analytic solution.
///
/// Order: the `t = 0` row (top to bottom), then the top face for `t > 0`,
/// then the bottom face for `t > 0`. Shared corners appear once.
pub fn build_forward_dataset(spec: &ProblemSpec, grid: &Grid, bottom: BottomBoundary) -> Result<Dataset> {
    spec.validate()?;
    grid.validate()?;
    let depths = grid.depths(spec);
    let times = grid.times(spec);
    let label = |z: f64, t: f64| -> Result<LabeledPoint> {
        Ok(LabeledPoint {
            z,
            t,
            p: spec.p0 * pressure_ratio(spec, z, t)?,
        })
    };

    let mut labeled = Vec::with_capacity(depths.len() + 2 * times.len());
    for &d in &depths {
        labeled.push(label(spec.depth_to_z(d), 0.0)?);
    }
    let (z_bottom, z_top) = spec.z_range();
    for &t in &times[1..] {
        labeled.push(label(z_top, t)?);
    }
    let mut zero_flux = Vec::new();
    let bottom_as_values = bottom == BottomBoundary::Values || spec.drainage == Drainage::TopAndBottom;
    for &t in &times[1..] {
        if bottom_as_values {
            labeled.push(label(z_bottom, t)?);
        } else {
            zero_flux.push(Point { z: z_bottom, t });
        }
    }

    Ok(Dataset {
        labeled,
        collocation: Vec::new(),
        zero_flux,
        bounds: Bounds::of_problem(spec),
    })
}

/// Uniform sample without replacement from the full analytic grid.
pub fn build_inverse_dataset(spec: &ProblemSpec, grid: &Grid, sample_size: usize, seed: u64) -> Result<Dataset> {
    let field = analytic_field(spec, grid)?;
    let available = field.values.len();
    if sample_size > available {
        return Err(Error::SampleTooLarge {
            requested: sample_size,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labeled = index::sample(&mut rng, available, sample_size)
        .into_iter()
        .map(|i| {
            let it = i / field.n_z();
            let iz = i % field.n_z();
            LabeledPoint {
                z: spec.depth_to_z(field.depths[iz]),
                t: field.times[it],
                p: spec.p0 * field.values[i],
            }
        })
        .collect();
    Ok(Dataset {
        labeled,
        collocation: Vec::new(),
        zero_flux: Vec::new(),
        bounds: Bounds::of_problem(spec),
    })
}

/// Latin hypercube sample of `n` points: along each axis every one of the
/// `n` equal-width strata holds exactly one point.
pub fn lhs_collocation(bounds: &Bounds, n: usize, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::invalid("need at least one collocation point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let mut vals: Vec<f64> = (0..n)
            .map(|k| {
                let u: f64 = rng.random();
                lo + (hi - lo) * (k as f64 + u) / n as f64
            })
            .collect();
        vals.shuffle(&mut rng);
        vals
    };
    let zs = axis(bounds.z);
    let ts = axis(bounds.t);
    Ok(zs.into_iter().zip(ts).map(|(z, t)| Point { z, t }).collect())
}

/// One epoch's shuffled partition of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub epoch_seed: u64,
    pub batch_size: usize,
    /// Permutation of labeled indices.
    pub order: Vec<usize>,
    /// Ranges into `order`, one per optimizer step.
    pub batches: Vec<Range<usize>>,
    /// Collocation indices paired with each batch.
    pub collocation: Vec<Vec<usize>>,
    /// Zero-flux indices paired with each batch.
    pub zero_flux: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn labeled_indices(&self, batch: usize) -> &[usize] {
        &self.order[self.batches[batch].clone()]
    }
}

pub fn make_batches(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let n = dataset.labeled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let batches: Vec<Range<usize>> = (0..n)
        .step_by(batch_size)
        .map(|start| start..(start + batch_size).min(n))
        .collect();
    let num = batches.len();
    let collocation = split_shuffled(dataset.collocation.len(), num, &mut rng);
    let zero_flux = split_shuffled(dataset.zero_flux.len(), num, &mut rng);
    Ok(BatchPlan {
        epoch_seed,
        batch_size,
        order,
        batches,
        collocation,
        zero_flux,
    })
}

/// Shuffles `0..len` and cuts it into `parts` chunks whose sizes differ by
/// at most one.
fn split_shuffled(len: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    if parts == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let base = len / parts;
    let extra = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let size = base + usize::from(k < extra);
        out.push(idx[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Labeled points as `z,t,p` CSV, with `z` as depth below the top.
pub fn write_labeled_csv<W: Write>(spec: &ProblemSpec, points: &[LabeledPoint], mut out: W) -> Result<()> {
    writeln!(out, "z,t,p")?;
    for p in points {
        writeln!(
            out,
            "{},{},{}",
            fmt_f64(spec.z_to_depth(p.z)),
            fmt_f64(p.t),
            fmt_f64(p.p)
        )?;
    }
    Ok(())
}

pub fn read_labeled_csv<R: BufRead>(spec: &ProblemSpec, input: R) -> Result<Vec<LabeledPoint>> {
    Ok(parse_csv(input, &["z", "t", "p"])?
        .into_iter()
        .map(|r| LabeledPoint {
            z: spec.depth_to_z(r[0]),
            t: r[1],
            p: r[2],
        })
        .collect())
}

/// Collocation points as `z,t` CSV, with `z` as depth below the top.
pub fn write_points_csv<W: Write>(spec: &ProblemSpec, points: &[Point], mut out: W) -> Result<()> {
    writeln!(out, "z,t")?;
    for p in points {
        writeln!(out, "{},{}", fmt_f64(spec.z_to_depth(p.z)), fmt_f64(p.t))?;
    }
    Ok(())
}

pub fn read_points_csv<R: BufRead>(spec: &ProblemSpec, input: R) -> Result<Vec<Point>> {
    Ok(parse_csv(input, &["z", "t"])?
        .into_iter()
        .map(|r| Point {
            z: spec.depth_to_z(r[0]),
            t: r[1],
        })
        .collect())
}
