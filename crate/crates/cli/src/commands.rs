//! Subcommand implementations. Each one reads its inputs, computes, and
//! writes every output through an atomic rename.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use pinn_consolidation::config::{OracleConfig, RunConfig};
use pinn_consolidation::fd::{comparison_start, fd_solve, refine_until, FdGrid, FdSolution, RefinementRow};
use pinn_consolidation::io::{fmt_f64, read_field_csv, write_atomic, write_field_csv};
use pinn_consolidation::model::ModelFile;
use pinn_consolidation::problem::{analytic_field, l2_relative_error, GridField, ProblemSpec};
use pinn_consolidation::trainer::{predict_field, EpochRecord, Mode, Trainer};
use pinn_consolidation::Error;

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    Forward,
    Inverse,
}

#[derive(Serialize)]
struct Metadata {
    duration_seconds: f64,
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn out_dir(config: &RunConfig, over: Option<PathBuf>) -> PathBuf {
    over.unwrap_or_else(|| config.output.dir.clone())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    write_atomic(path, bytes.as_ref()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write(path, text)
}

fn field_csv(field: &GridField) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_field_csv(field, &mut buf)?;
    Ok(buf)
}

fn read_field(path: &Path) -> Result<GridField> {
    let file = File::open(path)
        .map_err(Error::from)
        .with_context(|| format!("opening {}", path.display()))?;
    read_field_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

#[derive(Serialize)]
struct GenerateSummary<'a> {
    command: &'static str,
    rows: usize,
    config: &'a RunConfig,
    metadata: Metadata,
}

pub fn generate(config_path: &Path, over: Option<PathBuf>, quiet: bool) -> Result<()> {
    let start = Instant::now();
    let config = load_config(config_path)?;
    let spec = config.spec()?;
    let dir = out_dir(&config, over);
    let field = analytic_field(&spec, &config.grid)?;
    write(&dir.join("analytic.csv"), field_csv(&field)?)?;
    write_json(
        &dir.join("summary.json"),
        &GenerateSummary {
            command: "generate",
            rows: field.values.len(),
            config: &config,
            metadata: Metadata {
                duration_seconds: start.elapsed().as_secs_f64(),
            },
        },
    )?;
    if !quiet {
        eprintln!(
            "wrote {} rows to {}",
            field.values.len(),
            dir.join("analytic.csv").display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    command: &'static str,
    l2_error: f64,
    final_cv: Option<f64>,
    final_mse: Option<f64>,
    epochs_run: usize,
    stopped_early: bool,
    config: &'a RunConfig,
    metadata: Metadata,
}

fn progress_interval(epochs: usize) -> usize {
    (epochs / 20).clamp(1, 1000)
}

fn log_epoch(r: &EpochRecord) {
    match r.cv {
        Some(cv) => eprintln!(
            "epoch {:>6}  mse_p {:.3e}  mse_c {:.3e}  total {:.3e}  cv {cv:.5}",
            r.epoch, r.mse_p, r.mse_c, r.mse_total
        ),
        None => eprintln!(
            "epoch {:>6}  mse_p {:.3e}  mse_c {:.3e}  total {:.3e}",
            r.epoch, r.mse_p, r.mse_c, r.mse_total
        ),
    }
}

pub fn train(kind: Kind, config_path: &Path, over: Option<PathBuf>, seed: Option<u64>, quiet: bool) -> Result<()> {
    let start = Instant::now();
    let mut config = load_config(config_path)?;
    if let (Some(seed), Some(training)) = (seed, config.training.as_mut()) {
        training.seed = seed;
    }
    let mode = match kind {
        Kind::Forward => Mode::Forward,
        Kind::Inverse => Mode::Inverse,
    };
    let spec = config.spec()?;
    let (sizes, training) = config.training_setup(mode)?;
    let training = training.clone();
    let dir = out_dir(&config, over);

    let mut trainer = match kind {
        Kind::Forward => Trainer::forward(&spec, &config.grid, &sizes, training.clone())?,
        Kind::Inverse => Trainer::inverse(&spec, &config.grid, &sizes, training.clone())?,
    };
    let every = progress_interval(training.epochs);
    trainer.run(|r| {
        if !quiet && ((r.epoch + 1) % every == 0 || r.epoch + 1 == training.epochs) {
            log_epoch(r);
        }
    })?;
    let report = trainer.report(&spec, &config.grid, start.elapsed().as_secs_f64())?;
    let exact = analytic_field(&spec, &config.grid)?;
    let predicted = predict_field(&trainer.params, &spec, &exact);

    let model = ModelFile::new(&trainer.params, training.seed, Some(spec), report.epochs_run());
    write(&dir.join("model.json"), model.to_json()? + "\n")?;
    write(&dir.join("history.csv"), report.history_csv())?;
    write(&dir.join("prediction.csv"), field_csv(&predicted)?)?;
    write_json(
        &dir.join("summary.json"),
        &TrainSummary {
            command: match kind {
                Kind::Forward => "train-forward",
                Kind::Inverse => "train-inverse",
            },
            l2_error: report.l2_error,
            final_cv: report.final_cv,
            final_mse: report.final_mse(),
            epochs_run: report.epochs_run(),
            stopped_early: report.stopped_early,
            config: &config,
            metadata: Metadata {
                duration_seconds: start.elapsed().as_secs_f64(),
            },
        },
    )?;
    if !quiet {
        eprintln!("l2 relative error {:.4e}", report.l2_error);
        if let Some(cv) = report.final_cv {
            eprintln!("estimated cv {cv:.6}");
        }
        eprintln!("outputs in {}", dir.display());
    }
    Ok(())
}

#[derive(Debug, PartialEq, Serialize)]
pub struct SliceError {
    pub t: f64,
    /// `None` where the reference slice is identically zero.
    pub l2_error: Option<f64>,
    pub max_abs_error: f64,
}

#[derive(Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub l2_error: f64,
    pub max_abs_error: f64,
    pub slices: Vec<SliceError>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Error of `predicted` against `reference`, overall and per time slice.
pub fn compare_fields(predicted: &GridField, reference: &GridField) -> Result<Evaluation> {
    let slices = (0..reference.n_t())
        .map(|it| {
            let (p, r) = (predicted.slice(it), reference.slice(it));
            let l2_error = match l2_relative_error(p, r) {
                Ok(e) => Some(e),
                Err(Error::ZeroReference) => None,
                Err(e) => return Err(e),
            };
            Ok(SliceError {
                t: reference.times[it],
                l2_error,
                max_abs_error: max_abs_diff(p, r),
            })
        })
        .collect::<pinn_consolidation::Result<Vec<_>>>()?;
    Ok(Evaluation {
        l2_error: l2_relative_error(&predicted.values, &reference.values)?,
        max_abs_error: max_abs_diff(&predicted.values, &reference.values),
        slices,
    })
}

pub fn evaluate(model_path: &Path, reference_path: &Path, dir: &Path, quiet: bool) -> Result<()> {
    let model = ModelFile::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let spec: ProblemSpec = model.metadata.problem.ok_or_else(|| {
        Error::Format(format!(
            "{} carries no problem description; cannot map depths",
            model_path.display()
        ))
    })?;
    let params = model.to_params()?;
    let reference = read_field(reference_path)?;
    let predicted = predict_field(&params, &spec, &reference);
    let evaluation = compare_fields(&predicted, &reference)?;
    write_json(&dir.join("evaluation.json"), &evaluation)?;
    if !quiet {
        eprintln!(
            "l2 relative error {:.4e}, max abs error {:.4e}",
            evaluation.l2_error, evaluation.max_abs_error
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    reference: PathBuf,
    /// Over reference nodes with `t >= comparison_start`.
    max_abs_diff: f64,
}

#[derive(Serialize)]
struct OracleSummary<'a> {
    command: &'static str,
    n_z: usize,
    dt: f64,
    diffusion_number: f64,
    comparison_start: f64,
    max_error_vs_analytic: f64,
    comparison: Option<Comparison>,
    config: &'a RunConfig,
    metadata: Metadata,
}

fn convergence_csv(table: &[RefinementRow]) -> String {
    let mut out = String::from("n_z,dt,diff_to_previous,ratio\n");
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for row in table {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.n_z,
            fmt_f64(row.dt),
            opt(row.diff_to_previous),
            opt(row.ratio)
        ));
    }
    out
}

/// Largest `|fd / p0 - reference|` over reference nodes with `t >= t_min`.
fn compare_with_reference(solution: &FdSolution, spec: &ProblemSpec, reference: &GridField, t_min: f64) -> f64 {
    reference
        .iter()
        .filter(|(_, t, _)| *t >= t_min)
        .map(|(depth, t, v)| (solution.interpolate(spec.depth_to_z(depth), t) / spec.p0 - v).abs())
        .fold(0.0, f64::max)
}

pub fn oracle(config_path: &Path, over: Option<PathBuf>, compare: Option<&Path>, quiet: bool) -> Result<()> {
    let start = Instant::now();
    let config = load_config(config_path)?;
    let spec = config.spec()?;
    let dir = out_dir(&config, over);
    let settings = config.oracle.unwrap_or_default();
    let (grid, solution, table) = match settings {
        OracleConfig {
            n_z: Some(n_z),
            dt: Some(dt),
            ..
        } => {
            let grid = FdGrid::new(n_z, dt, spec.t_max).map_err(|e| Error::Config(e.to_string()))?;
            let solution = fd_solve(&spec, &grid)?;
            (grid, solution, None)
        }
        _ => {
            let r = refine_until(&spec, settings.tolerance)?;
            (r.grid, r.solution, Some(r.table))
        }
    };
    let t_min = comparison_start(&spec);
    let max_error = solution.max_error_vs_analytic(&spec, t_min)? / spec.p0;
    let comparison = match compare {
        Some(path) => {
            let reference = read_field(path)?;
            Some(Comparison {
                reference: path.to_path_buf(),
                max_abs_diff: compare_with_reference(&solution, &spec, &reference, t_min),
            })
        }
        None => None,
    };

    write(&dir.join("fd.csv"), field_csv(&solution.sample(&spec, &config.grid)?)?)?;
    if let Some(table) = &table {
        write(&dir.join("convergence.csv"), convergence_csv(table))?;
    }
    if !quiet {
        if let Some(table) = &table {
            for row in table {
                eprintln!(
                    "n_z {:>6}  dt {:.3e}  diff {}  ratio {}",
                    row.n_z,
                    row.dt,
                    row.diff_to_previous.map_or("-".into(), |d| format!("{d:.3e}")),
                    row.ratio.map_or("-".into(), |r| format!("{r:.3}"))
                );
            }
        }
        eprintln!("max |fd - series| for t >= {t_min:.4}: {max_error:.3e}");
        if let Some(c) = &comparison {
            eprintln!("max |fd - reference|: {:.3e}", c.max_abs_diff);
        }
    }
    write_json(
        &dir.join("summary.json"),
        &OracleSummary {
            command: "oracle",
            n_z: grid.n_z,
            dt: grid.dt,
            diffusion_number: solution.diffusion_number,
            comparison_start: t_min,
            max_error_vs_analytic: max_error,
            comparison,
            config: &config,
            metadata: Metadata {
                duration_seconds: start.elapsed().as_secs_f64(),
            },
        },
    )?;
    Ok(())
}
