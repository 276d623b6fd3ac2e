//! The experiment commands. Each one reads a config, writes its files into
//! the output directory and returns the process exit code.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use stocheuler::propagator::{
    dyadic_probe_table, limit_probe_table, op_norm, probe_times, propagator_by_ode, LimitOptions, SigmaOptions,
};
use stocheuler::stats::{EnsembleSpec, Projection};
use stocheuler::{
    as_trace, dyadic_partition, fit_rate, normality_report, rms_sup_error, run_ensemble, uniform_partition, DMatrix,
    ModelSpec, Partition, ReferenceSolution,
};

use crate::config::{ExperimentConfig, PartitionBlock};
use crate::{CliError, EXIT_DEGENERATE, EXIT_OK, EXIT_OUT_OF_BAND, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// L2 rate of the sup error over a sequence of partitions.
    Converge,
    /// Covariance and distribution of the rescaled error at t*.
    Normality,
    /// Sup error of one realization family along dyadic levels.
    Trace,
    /// Dyadic propagator products against their limit on a probe grid.
    Propagator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Reference grids are at least this fine, so every probe and output time
/// up to that level is a grid node.
const REFERENCE_MIN_STEPS: usize = 1 << 12;
const PROPAGATOR_REFERENCE_MIN_STEPS: usize = 1 << 14;
const CONTRACT_DRAWS: usize = 2000;

pub fn run(cmd: Command, cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, CliError> {
    fs::create_dir_all(out_dir)?;
    let ctx = Context::new(cfg, out_dir)?;
    match cmd {
        Command::Converge => converge(&ctx),
        Command::Normality => normality(&ctx),
        Command::Trace => trace(&ctx),
        Command::Propagator => propagator(&ctx),
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    out_dir: &'a Path,
    hash: String,
    model: ModelSpec,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig, out_dir: &'a Path) -> Result<Self, CliError> {
        Ok(Self {
            cfg,
            out_dir,
            hash: cfg.hash(),
            model: cfg.model.build()?,
        })
    }

    fn header(&self) -> Vec<String> {
        vec![format!("stocheuler {VERSION} config={}", self.hash)]
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.out_dir.join(name);
        let file = File::create(&path)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))?;
        Ok((path, BufWriter::new(file)))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).expect("outputs serialize");
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }

    /// Reference solution after the model's contract probes pass along it.
    fn checked_reference(&self, min_steps: usize) -> Result<ReferenceSolution, CliError> {
        let reference = self.model.reference(self.cfg.tolerances.reference, min_steps)?;
        let report = self
            .model
            .check_contracts(&self.model.probe_config(), &reference, CONTRACT_DRAWS);
        if !report.passed() {
            return Err(CliError::config(format!(
                "model {} fails its contract probes: {report:?}",
                self.model.name()
            )));
        }
        Ok(reference)
    }

    fn t_star(&self) -> Result<f64, CliError> {
        let t = self.cfg.t_star(self.model.horizon());
        if !(0.0..=self.model.horizon()).contains(&t) {
            return Err(CliError::config(format!("t_star = {t} outside [0, {}]", self.model.horizon())));
        }
        Ok(t)
    }

    /// `(label, partition)` for every entry of the partition block.
    fn partitions(&self) -> Result<Vec<(String, Partition)>, CliError> {
        let horizon = self.model.horizon();
        let parts = match self.cfg.partition()? {
            PartitionBlock::Dyadic { levels } => levels
                .iter()
                .map(|&l| Ok((format!("level{l}"), dyadic_partition(l, horizon)?)))
                .collect::<Result<Vec<_>, stocheuler::Error>>()?,
            PartitionBlock::Uniform { steps } => steps
                .iter()
                .map(|&n| Ok((format!("steps{n}"), uniform_partition(n, horizon)?)))
                .collect::<Result<Vec<_>, stocheuler::Error>>()?,
        };
        if parts.is_empty() {
            return Err(CliError::config("partition block is empty"));
        }
        Ok(parts)
    }

    fn ensemble_spec<'b>(&'b self, reference: &'b ReferenceSolution, partition: &'b Partition, t_star: f64) -> EnsembleSpec<'b> {
        EnsembleSpec {
            estimator: self.model.estimator(),
            reference,
            partition,
            t_star,
            master_seed: self.cfg.master_seed,
        }
    }
}

#[derive(Serialize)]
struct FitJson<'a> {
    version: &'a str,
    config_hash: &'a str,
    slope: f64,
    intercept: f64,
    residual: f64,
    slope_band: [f64; 2],
    within_band: bool,
    meshes: &'a [f64],
    rms_errors: &'a [f64],
}

fn converge(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let parts = ctx.partitions()?;
    if parts.len() < 3 {
        return Err(CliError::config(format!("converge needs at least 3 partitions, got {}", parts.len())));
    }
    let t_star = ctx.t_star()?;
    let reference = ctx.checked_reference(REFERENCE_MIN_STEPS)?;
    let mut files = Vec::new();
    let mut points = Vec::with_capacity(parts.len());
    for (label, p) in &parts {
        let res = run_ensemble(&ctx.ensemble_spec(&reference, p, t_star), ctx.cfg.replications)?
            .with_config_hash(ctx.hash.clone());
        let (path, mut w) = ctx.create(&format!("ensemble_{label}.csv"))?;
        res.write_csv(&mut w, &ctx.header())?;
        w.flush()?;
        files.push(path);
        points.push((p.mesh(), rms_sup_error(&res)));
    }
    let fit = fit_rate(&points)?;
    let (path, mut w) = ctx.create("rates.csv")?;
    fit.write_csv(&mut w, &ctx.header())?;
    w.flush()?;
    files.push(path);
    let band = ctx.cfg.tolerances.slope_band;
    let within_band = (band[0]..=band[1]).contains(&fit.slope);
    files.push(ctx.write_json(
        "fit.json",
        &FitJson {
            version: VERSION,
            config_hash: &ctx.hash,
            slope: fit.slope,
            intercept: fit.intercept,
            residual: fit.residual,
            slope_band: band,
            within_band,
            meshes: &fit.meshes,
            rms_errors: &fit.rms_errors,
        },
    )?);
    Ok(Outcome {
        code: if within_band { EXIT_OK } else { EXIT_OUT_OF_BAND },
        files,
        summary: format!(
            "slope {:.4} (band [{}, {}]), intercept {:.4}, residual {:.4}",
            fit.slope, band[0], band[1], fit.intercept, fit.residual
        ),
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct ProjectionJson {
    direction: Vec<f64>,
    ks: Option<f64>,
    skipped: bool,
}

impl From<&Projection> for ProjectionJson {
    fn from(p: &Projection) -> Self {
        Self {
            direction: p.direction.iter().copied().collect(),
            ks: p.ks,
            skipped: p.skipped(),
        }
    }
}

#[derive(Serialize)]
struct NormalityJson<'a> {
    version: &'a str,
    config_hash: &'a str,
    t_star: f64,
    mesh: f64,
    replications: usize,
    predicted: Vec<Vec<f64>>,
    empirical: Vec<Vec<f64>>,
    covariance_error: Option<f64>,
    covariance_flagged: bool,
    projections: Vec<ProjectionJson>,
    max_ks: Option<f64>,
    cf_distance: f64,
    mean_norm: f64,
    degenerate: bool,
}

fn normality(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let (label, p) = ctx.partitions()?.pop().expect("partitions are nonempty");
    let t_star = ctx.t_star()?;
    let reference = ctx.checked_reference(REFERENCE_MIN_STEPS)?;
    let opts = SigmaOptions {
        tol: ctx.cfg.tolerances.quadrature,
        seed: ctx.cfg.master_seed,
        ..SigmaOptions::default()
    };
    let predicted = ctx.model.predicted_sigma(&reference, t_star, opts)?;
    let res = run_ensemble(&ctx.ensemble_spec(&reference, &p, t_star), ctx.cfg.replications)?
        .with_config_hash(ctx.hash.clone());
    let report = normality_report(&res, &predicted)?;
    let mut files = Vec::new();
    let (path, mut w) = ctx.create(&format!("ensemble_{label}.csv"))?;
    res.write_csv(&mut w, &ctx.header())?;
    w.flush()?;
    files.push(path);
    let degenerate = report.covariance_flagged() || report.projections.iter().any(Projection::skipped);
    files.push(ctx.write_json(
        "normality.json",
        &NormalityJson {
            version: VERSION,
            config_hash: &ctx.hash,
            t_star,
            mesh: p.mesh(),
            replications: report.replications,
            predicted: rows(&report.predicted),
            empirical: rows(&report.empirical),
            covariance_error: report.covariance_error,
            covariance_flagged: report.covariance_flagged(),
            projections: report.projections.iter().map(ProjectionJson::from).collect(),
            max_ks: report.max_ks(),
            cf_distance: report.cf_distance,
            mean_norm: report.mean_norm,
            degenerate,
        },
    )?);
    Ok(Outcome {
        code: if degenerate { EXIT_DEGENERATE } else { EXIT_OK },
        files,
        summary: format!(
            "covariance error {:?}, max KS {:?}, CF distance {:.4}{}",
            report.covariance_error,
            report.max_ks(),
            report.cf_distance,
            if degenerate { " (degenerate)" } else { "" }
        ),
    })
}

fn trace(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let levels = ctx.cfg.levels()?;
    let reference = ctx.checked_reference(REFERENCE_MIN_STEPS)?;
    let trace = as_trace(ctx.model.estimator(), &reference, levels, ctx.cfg.master_seed)?;
    let (path, mut w) = ctx.create("trace.csv")?;
    for line in ctx.header() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "level,sup_error")?;
    for (level, err) in &trace {
        writeln!(w, "{level},{}", stocheuler::io::sci(*err))?;
    }
    w.flush()?;
    let (first, last) = (trace[0].1, trace[trace.len() - 1].1);
    Ok(Outcome {
        code: EXIT_OK,
        files: vec![path],
        summary: format!("sup error {first:.4e} at level {} to {last:.4e} at level {}", trace[0].0, trace[trace.len() - 1].0),
    })
}

#[derive(Serialize)]
struct PropagatorJson<'a> {
    version: &'a str,
    config_hash: &'a str,
    probe_times: &'a [f64],
    limit_level: u32,
    limit_change: f64,
    ode_max_deviation: f64,
    levels: Vec<u32>,
    deviations: Vec<f64>,
}

fn propagator(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let levels = ctx.cfg.levels()?;
    if !ctx.model.field().has_jacobian() {
        return Err(stocheuler::Error::Capability("propagators need the Jacobian of the vector field".into()).into());
    }
    let tol = ctx.cfg.tolerances.propagator;
    let reference = ctx.checked_reference(PROPAGATOR_REFERENCE_MIN_STEPS)?;
    let f = ctx.model.field();
    let times = probe_times(ctx.model.horizon(), ctx.cfg.tolerances.probe_points);
    let (limit, limit_level, limit_change) = limit_probe_table(f, &reference, &times, LimitOptions::new(tol))?;
    let mut ode_max_deviation = 0.0f64;
    for (a, b) in limit.pairs() {
        let ode = propagator_by_ode(f, &reference, times[a], times[b], tol)?;
        ode_max_deviation = ode_max_deviation.max(op_norm(&(ode - limit.entry(a, b))));
    }

    let (probe_path, mut probes) = ctx.create("propagator_probes.csv")?;
    let (path, mut w) = ctx.create("propagator.csv")?;
    for line in ctx.header() {
        writeln!(w, "# {line}")?;
        writeln!(probes, "# {line}")?;
    }
    writeln!(w, "level,mesh,deviation")?;
    writeln!(probes, "level,s,t,deviation")?;
    let sci = stocheuler::io::sci;
    let mut deviations = Vec::with_capacity(levels.len());
    for &level in levels {
        let table = dyadic_probe_table(f, &reference, level, &times)?;
        let mut worst = 0.0f64;
        for (a, b) in table.pairs() {
            let dev = op_norm(&(table.entry(a, b) - limit.entry(a, b)));
            worst = worst.max(dev);
            writeln!(probes, "{level},{},{},{}", sci(times[a]), sci(times[b]), sci(dev))?;
        }
        let mesh = dyadic_partition(level, ctx.model.horizon())?.mesh();
        writeln!(w, "{level},{},{}", sci(mesh), sci(worst))?;
        deviations.push(worst);
    }
    w.flush()?;
    probes.flush()?;
    let json = ctx.write_json(
        "propagator.json",
        &PropagatorJson {
            version: VERSION,
            config_hash: &ctx.hash,
            probe_times: &times,
            limit_level,
            limit_change,
            ode_max_deviation,
            levels: levels.to_vec(),
            deviations: deviations.clone(),
        },
    )?;
    Ok(Outcome {
        code: EXIT_OK,
        files: vec![path, probe_path, json],
        summary: format!(
            "limit at level {limit_level} (change {limit_change:.2e}), ODE agreement {ode_max_deviation:.2e}, final deviation {:.2e}",
            deviations.last().copied().unwrap_or(0.0)
        ),
    })
}
