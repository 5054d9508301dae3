//! Command-line front end: ingestion, smoothing, calibration, simulation,
//! scoring, GBM scenarios and reports.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use chiarella::calibrate::{self, CalibrationConfig, CalibrationResult, Evaluator};
use chiarella::io::{self, DayData};
use chiarella::report::{self, ReportOptions};
use chiarella::smoother;
use chiarella::sobol::ParameterBounds;
use chiarella::{synthetic, Error, ModelParams};
use chrono::{NaiveDate, NaiveDateTime};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// `println!` that returns write errors instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)?
    };
}

/// Copies each `Some` local into the same-named field of `$dst`.
macro_rules! overlay {
    ($dst:expr, $($field:ident),*) => {
        $(if let Some(v) = $field { $dst.$field = v; })*
    };
}

#[derive(Parser)]
#[command(name = "chiarella", version, about = "Intra-day agent-based market simulator and calibrator")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress (-v) or details (-vv) to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a minute-price CSV and list the trading days it contains.
    Ingest {
        #[command(flatten)]
        day: DayArgs,
        /// Write the grouped, sorted days back out in the input format.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Extract the fundamental value series of each day.
    Smooth {
        #[command(flatten)]
        day: DayArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        em_iterations: Option<usize>,
    },
    /// Calibrate (kappa, beta, sigma_n) for each selected day.
    Calibrate {
        #[command(flatten)]
        day: DayArgs,
        #[command(flatten)]
        calib: CalibArgs,
        #[command(flatten)]
        fixed: FixedArgs,
        /// Master seed; every random draw of the run derives from it.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also write the report files for each day.
        #[arg(long)]
        report: bool,
    },
    /// Simulate prices, driven by a day's fundamental or a random walk.
    Simulate {
        #[command(flatten)]
        theta: ThetaArgs,
        #[command(flatten)]
        day: DayArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        /// Number of prices when no input is given.
        #[arg(long, default_value_t = 390)]
        steps: usize,
        /// Step size of the random-walk fundamental when no input is given.
        #[arg(long, default_value_t = 0.02)]
        fundamental_sd: f64,
        #[arg(long, default_value_t = 100.0)]
        p0: f64,
        #[arg(long, default_value = "SIM")]
        symbol_out: String,
        #[arg(long)]
        em_iterations: Option<usize>,
    },
    /// Score parameters against each selected day.
    Evaluate {
        #[command(flatten)]
        theta: ThetaArgs,
        #[command(flatten)]
        day: DayArgs,
        #[command(flatten)]
        calib: CalibArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Pool index the simulation seed is derived from.
        #[arg(long, default_value_t = 0)]
        point_index: u64,
    },
    /// Drive the model with GBM fundamentals and compare squared-return ACFs.
    Scenario {
        #[command(flatten)]
        theta: OptThetaArgs,
        /// Take the parameters from a calibration record.
        #[arg(long, conflicts_with_all = ["kappa", "beta", "sigma_n"])]
        from: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        s0: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Write ACF, CDF and sensitivity files for a calibration record.
    Report {
        /// Calibration record written by `calibrate`.
        #[arg(long)]
        result: PathBuf,
        /// The minute-price CSV the record was calibrated on.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        sweep_points: Option<usize>,
        #[arg(long)]
        max_lag: Option<usize>,
    },
}

#[derive(Args)]
struct DayArgs {
    /// Minute-price CSV (symbol,timestamp,price).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    symbol: Option<String>,
    /// Trading date, YYYY-MM-DD.
    #[arg(long)]
    date: Option<NaiveDate>,
}

#[derive(Args)]
struct ThetaArgs {
    #[arg(long)]
    kappa: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    sigma_n: f64,
    #[command(flatten)]
    fixed: FixedArgs,
}

/// The two parameters that calibration holds fixed.
#[derive(Args)]
struct FixedArgs {
    /// Momentum smoothing weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Momentum demand sensitivity.
    #[arg(long)]
    gamma: Option<f64>,
}

impl FixedArgs {
    fn apply(&self, cfg: &mut CalibrationConfig) {
        let FixedArgs { alpha, gamma } = *self;
        overlay!(cfg, alpha, gamma);
    }
}

#[derive(Args)]
struct OptThetaArgs {
    #[arg(long, requires_all = ["beta", "sigma_n"])]
    kappa: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    sigma_n: Option<f64>,
    #[command(flatten)]
    fixed: FixedArgs,
}

#[derive(Args)]
struct CalibArgs {
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    init_size: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    exploit_size: Option<usize>,
    #[arg(long)]
    explore_size: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    label_ceiling: Option<f64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    em_iterations: Option<usize>,
    /// Skip surrogate hyperparameter tuning and use the configured values.
    #[arg(long)]
    no_tune: bool,
    #[arg(long)]
    tune_budget: Option<usize>,
    #[arg(long)]
    cv_folds: Option<usize>,
    /// Weight of the Kolmogorov-Smirnov term.
    #[arg(long)]
    w_ks: Option<f64>,
    /// Weight of the volatility term.
    #[arg(long)]
    w_vol: Option<f64>,
    /// Weight of the return autocorrelation term.
    #[arg(long)]
    w_acf1: Option<f64>,
    /// Weight of the squared-return autocorrelation term.
    #[arg(long)]
    w_acf2: Option<f64>,
    /// Bounds as LO,HI. All three must be given together.
    #[arg(long, value_parser = parse_range, requires_all = ["beta_bounds", "sigma_n_bounds"])]
    kappa_bounds: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_range)]
    beta_bounds: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_range)]
    sigma_n_bounds: Option<(f64, f64)>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

impl CalibArgs {
    fn apply(&self, cfg: &mut CalibrationConfig) {
        let CalibArgs {
            pool_size,
            init_size,
            batch_size,
            exploit_size,
            explore_size,
            max_iterations,
            label_ceiling,
            replications,
            em_iterations,
            tune_budget,
            cv_folds,
            ..
        } = *self;
        overlay!(
            cfg,
            pool_size,
            init_size,
            batch_size,
            exploit_size,
            explore_size,
            max_iterations,
            label_ceiling,
            replications,
            em_iterations,
            tune_budget,
            cv_folds
        );
        if self.no_tune {
            cfg.tune = false;
        }
        let w = &mut cfg.weights;
        let (w1, w2, w3, w4) = (self.w_ks, self.w_vol, self.w_acf1, self.w_acf2);
        overlay!(w, w1, w2, w3, w4);
        if let (Some(kappa), Some(beta), Some(sigma_n)) =
            (self.kappa_bounds, self.beta_bounds, self.sigma_n_bounds)
        {
            cfg.bounds = Some(ParameterBounds { kappa, beta, sigma_n });
        }
    }
}

/// What `calibrate` writes for each day.
#[derive(Debug, Serialize, Deserialize)]
struct CalibrationRecord {
    symbol: String,
    date: NaiveDate,
    segment: usize,
    n_prices: usize,
    result: CalibrationResult,
}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidInput(msg.into()).into()
}

fn select_days(run: &RunConfig, day: &DayArgs) -> anyhow::Result<Vec<DayData>> {
    let input = day
        .input
        .as_ref()
        .or(run.input.as_ref())
        .ok_or_else(|| input_error("no input file: pass --input or set `input` in the config"))?;
    let symbol = day.symbol.as_ref().or(run.symbol.as_ref());
    let date = day.date.or(run.date);
    let days: Vec<DayData> = io::ingest_csv(input)?
        .into_iter()
        .filter(|d| symbol.is_none_or(|s| &d.symbol == s) && date.is_none_or(|t| d.date == t))
        .collect();
    if days.is_empty() {
        return Err(input_error(format!("no matching days in {}", input.display())));
    }
    Ok(days)
}

fn out_dir(flag: &Option<PathBuf>, run: &RunConfig) -> PathBuf {
    flag.clone()
        .or_else(|| run.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn model_params(kappa: f64, beta: f64, sigma_n: f64, fixed: &FixedArgs, cfg: &CalibrationConfig) -> ModelParams {
    let mut cfg = cfg.clone();
    fixed.apply(&mut cfg);
    cfg.params([kappa, beta, sigma_n])
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_ingest(run: &RunConfig, day: &DayArgs, output: &Option<PathBuf>) -> anyhow::Result<()> {
    let days = select_days(run, day)?;
    say!("day,n_prices,n_filled,first,last");
    for d in &days {
        let ts = d.timestamps();
        say!(
            "{},{},{},{},{}",
            d.label(),
            d.path.len(),
            d.n_filled(),
            io::format_timestamp(&ts[0]),
            io::format_timestamp(&ts[ts.len() - 1])
        );
    }
    if let Some(path) = output {
        io::write_days(&days, create(path)?)?;
    }
    Ok(())
}

fn cmd_smooth(run: &RunConfig, day: &DayArgs, output: &Path, em: Option<usize>) -> anyhow::Result<()> {
    let days = select_days(run, day)?;
    let em = em.unwrap_or(run.calibration.em_iterations);
    let mut w = create(output)?;
    writeln!(w, "symbol,timestamp,price,fundamental,variance")?;
    for d in &days {
        let noise = smoother::estimate_noise(&d.path, em)?;
        let f = smoother::kalman_smooth(&d.path, &noise)?;
        say!("{}: q = {:e}, r = {:e}", d.label(), noise.q, noise.r);
        for (i, t) in d.timestamps().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                d.symbol,
                io::format_timestamp(t),
                d.path.prices[i],
                f.values[i],
                f.variances[i]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_calibrate(
    run: &RunConfig,
    day: &DayArgs,
    calib: &CalibArgs,
    fixed: &FixedArgs,
    seed: u64,
    out: &Path,
    with_report: bool,
) -> anyhow::Result<()> {
    let mut cfg = run.calibration.clone();
    calib.apply(&mut cfg);
    fixed.apply(&mut cfg);
    cfg.seed = seed;
    cfg.validate()?;
    let days = select_days(run, day)?;
    std::fs::create_dir_all(out)?;
    for d in days {
        info!("calibrating {} ({} prices)", d.label(), d.path.len());
        let result = calibrate::calibrate(&d.path, &cfg)?;
        let b = &result.best_params;
        say!(
            "{}: kappa = {}, beta = {}, sigma_n = {}, distance = {}",
            d.label(),
            b.kappa,
            b.beta,
            b.sigma_n,
            result.best_distance.total
        );
        if with_report {
            report::report(&result, &d.path, &out.join(d.label()), &run.report)?;
        }
        let record = CalibrationRecord {
            symbol: d.symbol.clone(),
            date: d.date,
            segment: d.segment,
            n_prices: d.path.len(),
            result,
        };
        io::write_json(&record, out.join(format!("{}.json", d.label())))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    run: &RunConfig,
    theta: &ThetaArgs,
    day: &DayArgs,
    seed: u64,
    output: &Path,
    steps: usize,
    fundamental_sd: f64,
    p0: f64,
    symbol_out: &str,
    em: Option<usize>,
) -> anyhow::Result<()> {
    let cfg = &run.calibration;
    let params = model_params(theta.kappa, theta.beta, theta.sigma_n, &theta.fixed, cfg);
    params.validate()?;
    let em = em.unwrap_or(cfg.em_iterations);
    let mut out = Vec::new();
    if day.input.is_some() || run.input.is_some() {
        for (k, d) in select_days(run, day)?.into_iter().enumerate() {
            let f = smoother::extract_fundamental(&d.path, em)?;
            let seed = chiarella::seed::derive(seed, &[k as u64]);
            let mut path = chiarella::model::simulate(&params, &f.values[1..], d.path.first(), 0.0, seed)?;
            path.timestamps = d.path.timestamps.clone();
            out.push(DayData {
                path,
                filled: vec![false; d.filled.len()],
                ..d
            });
        }
    } else {
        if steps < 2 {
            bail!(input_error("--steps must be at least 2"));
        }
        let fundamental = synthetic::random_walk(p0, fundamental_sd, steps, chiarella::seed::derive(seed, &[1]));
        let path = chiarella::model::simulate(&params, &fundamental[1..], p0, 0.0, chiarella::seed::derive(seed, &[2]))?;
        let start = NaiveDateTime::parse_from_str("2000-01-03T09:30:00", "%Y-%m-%dT%H:%M:%S")?;
        out.push(io::day_from_path(symbol_out, path, start)?);
    }
    for d in &out {
        if d.path.has_nonpositive() {
            log::warn!("{}: simulated prices reach zero or below", d.label());
        }
    }
    io::write_days(&out, create(output)?)?;
    Ok(())
}

fn cmd_evaluate(run: &RunConfig, theta: &ThetaArgs, day: &DayArgs, calib: &CalibArgs, seed: Option<u64>, point_index: u64) -> anyhow::Result<()> {
    let mut cfg = run.calibration.clone();
    calib.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let params = model_params(theta.kappa, theta.beta, theta.sigma_n, &theta.fixed, &cfg);
    for d in select_days(run, day)? {
        let f = smoother::extract_fundamental(&d.path, cfg.em_iterations)?;
        let dist = Evaluator::new(&d.path, &f, &cfg)?.evaluate(&params, point_index)?;
        say!("{} {}", d.label(), serde_json::to_string(&dist)?);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_scenario(
    run: &RunConfig,
    theta: &OptThetaArgs,
    from: &Option<PathBuf>,
    seed: u64,
    out: &Path,
    s0: Option<f64>,
    mu: Option<f64>,
    sigma: Option<f64>,
    n_steps: Option<usize>,
    n_paths: Option<usize>,
    max_lag: Option<usize>,
) -> anyhow::Result<()> {
    let mut sc = run.scenario;
    overlay!(sc, s0, mu, sigma, n_steps, n_paths, max_lag);
    let params = match (from, theta.kappa, theta.beta, theta.sigma_n) {
        (Some(path), ..) => {
            let rec: CalibrationRecord = io::read_json(path)?;
            rec.result.best_params
        }
        (None, Some(k), Some(b), Some(s)) => model_params(k, b, s, &theta.fixed, &run.calibration),
        _ => bail!(input_error("give --kappa, --beta and --sigma-n, or --from")),
    };
    let res = report::scenario(&params, &sc.gbm(), seed, sc.max_lag)?;
    report::write_scenario(&res, out)?;
    say!("lag,gbm,model  (band +/-{:.4})", res.band);
    for (k, lag) in res.lags.iter().enumerate() {
        say!("{lag},{:.5},{:.5}", res.gbm_squared_acf[k], res.model_squared_acf[k]);
    }
    Ok(())
}

fn cmd_report(run: &RunConfig, result: &Path, input: &Option<PathBuf>, out: &Path, sweep: Option<usize>, max_lag: Option<usize>) -> anyhow::Result<()> {
    let rec: CalibrationRecord = io::read_json(result)?;
    let day = DayArgs {
        input: input.clone(),
        symbol: Some(rec.symbol.clone()),
        date: Some(rec.date),
    };
    let d = select_days(run, &day)?
        .into_iter()
        .find(|d| d.segment == rec.segment)
        .ok_or_else(|| input_error(format!("segment {} not found in input", rec.segment)))?;
    if d.path.len() != rec.n_prices {
        bail!(input_error(format!(
            "{} has {} prices but the record was calibrated on {}",
            d.label(),
            d.path.len(),
            rec.n_prices
        )));
    }
    let mut opts: ReportOptions = run.report;
    let sweep_points = sweep;
    overlay!(opts, sweep_points, max_lag);
    let summary = report::report(&rec.result, &d.path, out, &opts)?;
    for f in &summary.files {
        say!("{}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let run = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Ingest { day, output } => cmd_ingest(&run, day, output),
        Command::Smooth { day, output, em_iterations } => cmd_smooth(&run, day, output, *em_iterations),
        Command::Calibrate { day, calib, fixed, seed, out_dir: o, report } => {
            cmd_calibrate(&run, day, calib, fixed, *seed, &out_dir(o, &run), *report)
        }
        Command::Simulate {
            theta,
            day,
            seed,
            output,
            steps,
            fundamental_sd,
            p0,
            symbol_out,
            em_iterations,
        } => cmd_simulate(&run, theta, day, *seed, output, *steps, *fundamental_sd, *p0, symbol_out, *em_iterations),
        Command::Evaluate { theta, day, calib, seed, point_index } => {
            cmd_evaluate(&run, theta, day, calib, *seed, *point_index)
        }
        Command::Scenario {
            theta,
            from,
            seed,
            out_dir: o,
            s0,
            mu,
            sigma,
            n_steps,
            n_paths,
            max_lag,
        } => cmd_scenario(&run, theta, from, *seed, &out_dir(o, &run), *s0, *mu, *sigma, *n_steps, *n_paths, *max_lag),
        Command::Report {
            result,
            input,
            out_dir: o,
            sweep_points,
            max_lag,
        } => cmd_report(&run, result, input, &out_dir(o, &run), *sweep_points, *max_lag),
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain()
        .filter_map(|e| e.downcast_ref::<std::io::Error>())
        .any(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
