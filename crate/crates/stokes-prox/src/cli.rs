//! The `simulate` / `reconstruct` / `evaluate` / `curves` command set.
//!
//! Configuration is a flat JSON file mirroring [`ExperimentConfig`]; flags
//! override file values and the effective config is echoed into the output
//! directory. Exit codes: 0 converged, 1 usage or configuration error,
//! 2 iteration budget exhausted, 3 backtracking stall, 4 divergence.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_cube, load_stack_auto, save_cube, write_stack, write_stack_channels};
use crate::objectives::{RegVariant, RegularizerConfig};
use crate::simkit::{gaussian_psf, make_phantom, synthesize, PhantomSpec};
use crate::solvers::{normalized_mse, SolveSession, SolverConfig, StopReason, TelemetryRecord};
use crate::tensor::ChannelStack;

pub const TELEMETRY_HEADER: &str =
    "iter,time_s,objective,fidelity,regularizer,violation,mse_I,mse_Q,mse_U,beta,inner_count,tau,sigma";

/// Telemetry rows buffered before each flush, so interrupted runs keep
/// partial curves.
const FLUSH_PERIOD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pdwb,
    Pd,
    Fbwb,
}

/// Everything one run needs, with paper-default solver parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    // Paths are excluded from the echoed config so identical runs into
    // different directories stay byte-identical.
    #[serde(skip_serializing)]
    pub cube: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub truth: Option<PathBuf>,

    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub fwhm: f64,
    pub sigma_ro: f64,
    pub seed: u64,

    pub method: Method,
    /// Omitted: inferred from the method (pd/pdwb take tv, fbwb takes tvh).
    pub regularizer: Option<RegVariant>,
    pub constrained: bool,
    pub lambda_i: f64,
    pub lambda_qu: f64,
    pub epsilon: f64,

    pub beta0: f64,
    pub eta: f64,
    pub r: f64,
    pub gamma: f64,
    pub s: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub stop_tol: f64,
    pub oracle_beta: Option<f64>,
    pub max_seconds: Option<f64>,

    pub telemetry_period: usize,
    pub snapshot_period: Option<usize>,
    pub deterministic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cube: None,
            out: None,
            truth: None,
            height: 64,
            width: 64,
            k: 8,
            fwhm: 3.0,
            sigma_ro: 1.0,
            seed: 1,
            method: Method::Pdwb,
            regularizer: None,
            constrained: true,
            lambda_i: 0.1,
            lambda_qu: 0.03,
            epsilon: 1e-2,
            beta0: 1e-2,
            eta: 1.1,
            r: 1e-3,
            gamma: 1.99,
            s: 2.0,
            max_outer: 1000,
            max_inner: 100,
            stop_tol: 1e-8,
            oracle_beta: None,
            max_seconds: None,
            telemetry_period: 1,
            snapshot_period: None,
            deterministic: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn effective_regularizer(&self) -> RegVariant {
        self.regularizer.unwrap_or(match self.method {
            Method::Fbwb => RegVariant::Tvh,
            _ => RegVariant::Tv,
        })
    }

    pub fn regularizer_config(&self, channels: usize) -> RegularizerConfig {
        let mut lambda = vec![self.lambda_i];
        lambda.extend(std::iter::repeat(self.lambda_qu).take(channels.saturating_sub(1)));
        match self.effective_regularizer() {
            RegVariant::Tv => RegularizerConfig::tv(lambda),
            RegVariant::Tvh => RegularizerConfig::tvh(lambda, self.epsilon),
        }
    }

    pub fn solver_config(&self, channels: usize) -> SolverConfig {
        let mut cfg = SolverConfig::defaults(self.regularizer_config(channels));
        cfg.beta0 = self.beta0;
        cfg.eta = self.eta;
        cfg.r = self.r;
        cfg.gamma = self.gamma;
        cfg.s = self.s;
        cfg.max_outer = self.max_outer;
        cfg.max_inner = self.max_inner;
        cfg.stop_tol = self.stop_tol;
        cfg.constrained = self.constrained;
        cfg.oracle_beta = self.oracle_beta;
        cfg.max_seconds = self.max_seconds;
        cfg.telemetry_period = self.telemetry_period;
        cfg
    }
}

#[derive(Parser, Debug)]
#[command(name = "stokes-prox", version, about = "Constrained Stokes-map reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a phantom and a noisy polarimetric data cube.
    Simulate(SimulateArgs),
    /// Reconstruct Stokes maps from a data cube.
    Reconstruct(ReconstructArgs),
    /// Compare a reconstruction against ground truth.
    Evaluate(EvaluateArgs),
    /// Merge telemetry CSVs into one long-format file for plotting.
    Curves(CurvesArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub fwhm: Option<f64>,
    #[arg(long)]
    pub sigma_ro: Option<f64>,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cube: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground-truth stack for MSE telemetry; auto-detected inside the cube
    /// directory when omitted.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_enum)]
    pub regularizer: Option<RegVariant>,
    #[arg(long)]
    pub constrained: Option<bool>,
    #[arg(long)]
    pub lambda_i: Option<f64>,
    #[arg(long)]
    pub lambda_qu: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long)]
    pub oracle_beta: Option<f64>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    #[arg(long)]
    pub telemetry_period: Option<usize>,
    #[arg(long)]
    pub snapshot_period: Option<usize>,
    /// Zero the time column so repeated runs are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Directory for report.json and violation_mask.f64; report prints to
    /// stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    /// Telemetry CSV files; run labels are the file stems.
    #[arg(required = true)]
    pub telemetry: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses the process arguments, dispatches, and maps the outcome to an
/// exit code.
pub fn run() -> i32 {
    init_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::BacktrackStall { .. } => 3,
                Error::Divergence { .. } => 4,
                _ => 1,
            }
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("STOKES_PROX_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(args) => cmd_simulate(args).map(|_| 0),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Evaluate(args) => cmd_evaluate(args).map(|_| 0),
        Command::Curves(args) => cmd_curves(args).map(|_| 0),
    }
}

fn base_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    } else {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn echo_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.json");
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = base_config(args.config.as_deref())?;
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.height {
        cfg.height = v;
    }
    if let Some(v) = args.width {
        cfg.width = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.fwhm {
        cfg.fwhm = v;
    }
    if let Some(v) = args.sigma_ro {
        cfg.sigma_ro = v;
    }
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("simulate needs --out".into()))?;

    let spec = PhantomSpec {
        height: cfg.height,
        width: cfg.width,
        ..PhantomSpec::default()
    };
    let truth = make_phantom(&spec)?;
    let psf = gaussian_psf(cfg.height, cfg.width, cfg.fwhm)?;
    let cube = synthesize(&truth, cfg.k, &psf, cfg.sigma_ro, cfg.seed)?;

    prepare_out_dir(&out, args.force)?;
    save_cube(&cube, &out)?;
    write_stack_channels(&truth, &out, "truth")?;
    echo_config(&cfg, &out)?;
    println!(
        "simulated cube: K={} H={} W={} sigma_ro={} seed={}",
        cfg.k, cfg.height, cfg.width, cfg.sigma_ro, cfg.seed
    );
    Ok(())
}

fn format_record(rec: &TelemetryRecord, deterministic: bool) -> String {
    let time = if deterministic { 0.0 } else { rec.time_s };
    let mse = |i: usize| -> String {
        match &rec.mse {
            Some(v) if i < v.len() => format!("{}", v[i]),
            _ => "nan".into(),
        }
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        rec.iter,
        time,
        rec.objective,
        rec.fidelity,
        rec.regularizer,
        rec.violation,
        mse(0),
        mse(1),
        mse(2),
        rec.beta,
        rec.inner_count,
        rec.tau,
        rec.sigma
    )
}

pub fn cmd_reconstruct(args: ReconstructArgs) -> Result<i32> {
    let mut cfg = base_config(args.config.as_deref())?;
    if let Some(v) = args.cube {
        cfg.cube = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if let Some(v) = args.truth {
        cfg.truth = Some(v);
    }
    if let Some(v) = args.method {
        cfg.method = v;
    }
    if args.regularizer.is_some() {
        cfg.regularizer = args.regularizer;
    }
    if let Some(v) = args.constrained {
        cfg.constrained = v;
    }
    if let Some(v) = args.lambda_i {
        cfg.lambda_i = v;
    }
    if let Some(v) = args.lambda_qu {
        cfg.lambda_qu = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.beta0 {
        cfg.beta0 = v;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.r {
        cfg.r = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.s {
        cfg.s = v;
    }
    if let Some(v) = args.max_outer {
        cfg.max_outer = v;
    }
    if let Some(v) = args.stop_tol {
        cfg.stop_tol = v;
    }
    if args.oracle_beta.is_some() {
        cfg.oracle_beta = args.oracle_beta;
    }
    if args.max_seconds.is_some() {
        cfg.max_seconds = args.max_seconds;
    }
    if let Some(v) = args.telemetry_period {
        cfg.telemetry_period = v;
    }
    if args.snapshot_period.is_some() {
        cfg.snapshot_period = args.snapshot_period;
    }
    if args.deterministic {
        cfg.deterministic = true;
    }

    let cube_dir = cfg
        .cube
        .clone()
        .ok_or_else(|| Error::Config("reconstruct needs --cube".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("reconstruct needs --out".into()))?;
    let cube = load_cube(&cube_dir)?;
    let channels = 3;

    let truth = match &cfg.truth {
        Some(p) => Some(load_stack_auto(p)?),
        None => {
            let candidate = cube_dir.join("truth_I.f64");
            if candidate.exists() {
                Some(load_stack_auto(&cube_dir)?)
            } else {
                None
            }
        }
    };

    let solver_cfg = cfg.solver_config(channels);
    prepare_out_dir(&out, args.force)?;
    echo_config(&cfg, &out)?;

    let csv_path = out.join("telemetry.csv");
    let csv_file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = BufWriter::new(csv_file);
    writeln!(csv, "{TELEMETRY_HEADER}").map_err(|e| Error::io(&csv_path, e))?;

    let deterministic = cfg.deterministic;
    let snapshot_period = cfg.snapshot_period;
    let out_for_snapshots = out.clone();
    let mut pending = 0usize;
    let mut io_error: Option<Error> = None;

    let x0 = ChannelStack::zeros(channels, cube.height(), cube.width());
    let mut session = SolveSession::new(&cube, &solver_cfg);
    if let Some(t) = truth.as_ref() {
        session = session.with_truth(t);
    }
    let mut session = session.with_observer(|rec, x| {
        if io_error.is_some() {
            return;
        }
        if let Err(e) = writeln!(csv, "{}", format_record(rec, deterministic)) {
            io_error = Some(Error::io(&csv_path, e));
            return;
        }
        pending += 1;
        if pending >= FLUSH_PERIOD {
            if let Err(e) = csv.flush() {
                io_error = Some(Error::io(&csv_path, e));
                return;
            }
            pending = 0;
        }
        if let Some(period) = snapshot_period {
            if rec.iter > 0 && rec.iter % period == 0 {
                let prefix = format!("snapshot_{:06}", rec.iter);
                if let Err(e) = write_stack_channels(x, &out_for_snapshots, &prefix) {
                    io_error = Some(e);
                }
            }
        }
    });

    let result = match cfg.method {
        Method::Pd => session.pd(&x0, None),
        Method::Pdwb => session.pdwb(&x0, None),
        Method::Fbwb => session.fbwb(&x0),
    };
    drop(session);
    if let Some(e) = io_error {
        return Err(e);
    }
    let solve = result?;

    write_stack_channels(&solve.x, &out, "recon")?;
    let last = solve
        .telemetry
        .last()
        .ok_or_else(|| Error::Format("solver produced no telemetry".into()))?;
    let summary = serde_json::json!({
        "method": cfg.method,
        "stop": solve.stop,
        "iterations": last.iter,
        "objective": last.objective,
        "fidelity": last.fidelity,
        "regularizer": last.regularizer,
        "violation": last.violation,
        "mse": last.mse,
        "total_inner_rejections": solve.total_inner_rejections,
        "wall_time_s": if deterministic { 0.0 } else { solve.wall_time_s },
    });
    let summary_path = out.join("summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Format(format!("summary serialization: {e}")))?,
    )
    .map_err(|e| Error::io(&summary_path, e))?;

    println!(
        "reconstruction finished: {:?} after {} iterations, objective {}",
        solve.stop, last.iter, last.objective
    );
    Ok(match solve.stop {
        StopReason::Converged => 0,
        StopReason::MaxIterations | StopReason::TimeBudget => 2,
    })
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let recon = load_stack_auto(&args.recon)?;
    let truth = load_stack_auto(&args.truth)?;
    if (recon.channels(), recon.height(), recon.width())
        != (truth.channels(), truth.height(), truth.width())
    {
        return Err(Error::Dimension(format!(
            "reconstruction is {}x{}x{} but truth is {}x{}x{}",
            recon.channels(),
            recon.height(),
            recon.width(),
            truth.channels(),
            truth.height(),
            truth.width()
        )));
    }
    let mse = normalized_mse(&recon, &truth);
    let (h, w) = (recon.height(), recon.width());
    let mut mask = ndarray::Array2::<f64>::zeros((h, w));
    let mut violation_count = 0usize;
    let mut max_violation = 0.0f64;
    let mut negative_i = 0usize;
    let mut pol_min = f64::INFINITY;
    let mut pol_max = f64::NEG_INFINITY;
    let mut pol_sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            let t = recon.plane(0)[[i, j]];
            let rho: f64 = (1..recon.channels())
                .map(|l| recon.plane(l)[[i, j]].powi(2))
                .sum::<f64>()
                .sqrt();
            let v = (rho - t).max(0.0);
            if v > 1e-9 {
                violation_count += 1;
                mask[[i, j]] = 1.0;
            }
            max_violation = max_violation.max(v);
            if t < 0.0 {
                negative_i += 1;
            }
            pol_min = pol_min.min(rho);
            pol_max = pol_max.max(rho);
            pol_sum += rho;
        }
    }
    let names = crate::io::channel_names(recon.channels());
    let report = serde_json::json!({
        "mse": names
            .iter()
            .zip(&mse)
            .map(|(n, (v, flag))| serde_json::json!({
                "channel": n,
                "normalized_mse": v,
                "absolute": flag,
            }))
            .collect::<Vec<_>>(),
        "violation_count": violation_count,
        "max_violation": max_violation,
        "negative_intensity_pixels": negative_i,
        "polarized_intensity": {
            "min": pol_min,
            "max": pol_max,
            "mean": pol_sum / (h * w) as f64,
        },
    });
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    println!("{text}");
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let report_path = dir.join("report.json");
        fs::write(&report_path, &text).map_err(|e| Error::io(&report_path, e))?;
        write_stack(
            &ChannelStack::new(vec![mask])?,
            &dir.join("violation_mask.f64"),
        )?;
    }
    Ok(())
}

pub fn cmd_curves(args: CurvesArgs) -> Result<()> {
    let mut lines = vec!["run_label,iter,time_s,metric,value".to_string()];
    let metrics: Vec<&str> = TELEMETRY_HEADER.split(',').skip(2).collect();
    for path in &args.telemetry {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = text.lines();
        let header = rows.next().ok_or_else(|| {
            Error::Format(format!("{}: empty telemetry file", path.display()))
        })?;
        if header != TELEMETRY_HEADER {
            return Err(Error::Format(format!(
                "{}: unexpected telemetry header {header:?}",
                path.display()
            )));
        }
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for (lineno, row) in rows.enumerate() {
            if row.is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != metrics.len() + 2 {
                return Err(Error::Format(format!(
                    "{}: row {} has {} fields, expected {}",
                    path.display(),
                    lineno + 2,
                    fields.len(),
                    metrics.len() + 2
                )));
            }
            for (metric, value) in metrics.iter().zip(&fields[2..]) {
                lines.push(format!(
                    "{label},{},{},{metric},{value}",
                    fields[0], fields[1]
                ));
            }
        }
    }
    let out = &args.out;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(out, lines.join("\n") + "\n").map_err(|e| Error::io(out, e))?;
    println!("wrote {} rows to {}", lines.len() - 1, out.display());
    Ok(())
}
