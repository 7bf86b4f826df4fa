//! `psdmap` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use psdmap::batch::MapEstimate;
use psdmap::config::{Config, MeasurementSource};
use psdmap::evaluate::{nmse, online_trace, run_sweep, trace_to_csv};
use psdmap::io::{
    estimate_from_str, estimate_to_string, grid_to_csv, measurements_from_csv, measurements_to_csv, region_grid,
    write_atomic,
};
use psdmap::model::{Location, MeasurementRecord, PowerVector};
use psdmap::simulate::{calibrate, Scenario};
use psdmap::Error;

#[derive(Parser)]
#[command(name = "psdmap", version, about = "Estimate RF power maps from quantized sensor measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a measurement set and its ground-truth map.
    Simulate(Common),
    /// Calibrate the scenario quantizer and report its cells.
    CalibrateQuantizer(Common),
    /// Fit the configured estimator and write the map estimate.
    Fit(FitArgs),
    /// Evaluate a map estimate on a grid and against the ground truth.
    Evaluate(EvaluateArgs),
    /// Run a Monte Carlo factor sweep.
    Sweep(SweepArgs),
    /// Run the online estimator and write its per-step trace.
    Online(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the Monte Carlo run index of the configuration.
    #[arg(long)]
    run: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Measurement CSV; replaces simulation and the `[measurements]` table.
    #[arg(long)]
    measurements: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Map estimate file; fits from the configuration when absent.
    #[arg(long)]
    estimate: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Adds a wall-time column to the results.
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    kind: &'static str,
    key: Option<String>,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind, key) = match &e {
            Error::Config { key, message } => {
                return Failure { code: 2, kind: "config", key: Some(key.clone()), message: message.clone() }
            }
            Error::InvalidParameter { name, .. } => (2, "config", Some(name.to_string())),
            Error::Solver(_) | Error::Singular(_) | Error::RankDeficient(_) => (3, "solver", None),
            Error::Io(_) | Error::Format(_) => (4, "io", None),
            _ => (1, "input", None),
        };
        Failure { code, kind, key, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 4, kind: "io", key: None, message: format!("{}: {e}", path.display()) }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let key = f.key.map(|k| format!(" key={k}")).unwrap_or_default();
            eprintln!("psdmap-error code={} kind={}{key} message={:?}", f.code, f.kind, f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Loaded configuration plus the paths it was resolved against.
struct Context {
    config: Config,
    config_dir: PathBuf,
    out: PathBuf,
}

impl Context {
    fn load(common: &Common) -> CliResult<Context> {
        let Format::Csv = common.format;
        let text = fs::read_to_string(&common.config).map_err(|e| io_failure(&common.config, e))?;
        let mut config = Config::from_toml(&text)?;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(run) = common.run {
            config.run = run;
        }
        fs::create_dir_all(&common.out).map_err(|e| io_failure(&common.out, e))?;
        let config_dir = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Context { config, config_dir, out: common.out.clone() })
    }

    fn write(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.out.join(name);
        write_atomic(&path, text.as_bytes()).map_err(|e| match e {
            Error::Io(io) => io_failure(&path, io),
            other => other.into(),
        })
    }

    fn simulate(&self) -> CliResult<Scenario> {
        let scenario = self.config.scenario()?;
        let calibration = calibrate(scenario, self.config.seed)?;
        Ok(Scenario::generate(scenario, &calibration, self.config.seed, self.config.run)?)
    }

    /// Records from `--measurements`, the `[measurements]` table, or a
    /// simulation, in that order. Simulated data also returns the truth.
    fn records(&self, flag: Option<&Path>) -> CliResult<(Vec<MeasurementRecord>, Option<Scenario>)> {
        let path = match (flag, &self.config.measurements) {
            (Some(p), _) => Some(p.to_path_buf()),
            (None, Some(src)) => Some(self.config_dir.join(&src.path)),
            (None, None) => None,
        };
        match path {
            Some(p) => {
                let text = fs::read_to_string(&p).map_err(|e| io_failure(&p, e))?;
                let (records, _) = measurements_from_csv(&text)?;
                Ok((records, None))
            }
            None => {
                let sc = self.simulate()?;
                Ok((sc.records.clone(), Some(sc)))
            }
        }
    }

    fn fit(&self, flag: Option<&Path>) -> CliResult<(MapEstimate, Vec<MeasurementRecord>, Option<Scenario>)> {
        let (records, truth) = self.records(flag)?;
        let est = self.config.estimator()?.fit(self.config.scenario()?, &records)?;
        Ok((est, records, truth))
    }

    fn grid_csv(&self, f: impl Fn(&Location) -> PowerVector) -> CliResult<String> {
        let sc = self.config.scenario()?;
        let points = region_grid(&sc.region_lo, &sc.region_hi, self.config.grid().points_per_axis);
        Ok(grid_to_csv(&points, f)?)
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(common) => simulate(&Context::load(&common)?),
        Command::CalibrateQuantizer(common) => calibrate_quantizer(&Context::load(&common)?),
        Command::Fit(args) => fit(&Context::load(&args.common)?, args.measurements.as_deref()),
        Command::Evaluate(args) => {
            let ctx = Context::load(&args.fit.common)?;
            evaluate(&ctx, args.fit.measurements.as_deref(), args.estimate.as_deref())
        }
        Command::Sweep(args) => {
            let ctx = Context::load(&args.common)?;
            let table = run_sweep(&ctx.config.sweep_spec()?)?;
            ctx.write("sweep.csv", &table.to_csv(args.timing)?)?;
            println!("cells={} runs={}", table.rows.len(), ctx.config.sweep_spec()?.runs);
            Ok(())
        }
        Command::Online(common) => {
            let ctx = Context::load(&common)?;
            let rows = online_trace(ctx.config.scenario()?, ctx.config.online()?, ctx.config.seed, ctx.config.run)?;
            ctx.write("trace.csv", &trace_to_csv(&rows)?)?;
            let last = rows.last().expect("steps >= 1");
            let violations = rows.iter().filter(|r| !r.within_bound()).count();
            println!("steps={} running_average={:.6e} bound_violations={violations}", last.t, last.running_average);
            Ok(())
        }
    }
}

fn simulate(ctx: &Context) -> CliResult<()> {
    let sc = ctx.simulate()?;
    ctx.write("measurements.csv", &measurements_to_csv(&sc.records, Some(&sc.quantizer))?)?;
    ctx.write("truth.csv", &ctx.grid_csv(|x| sc.field.eval(x))?)?;
    let mut written = ctx.config.clone();
    written.measurements = Some(MeasurementSource { path: "measurements.csv".into() });
    ctx.write("config.toml", &written.to_toml()?)?;
    println!(
        "records={} sensors={} clip_rate={:.6} error_rate={:.6}",
        sc.records.len(),
        sc.sensors.len(),
        sc.stats.clip_rate,
        sc.stats.error_rate
    );
    Ok(())
}

fn calibrate_quantizer(ctx: &Context) -> CliResult<()> {
    let cal = calibrate(ctx.config.scenario()?, ctx.config.seed)?;
    let b = cal.quantizer.boundaries();
    let mut text = String::from("cell,lower,upper\n");
    for (i, w) in b.windows(2).enumerate() {
        text.push_str(&format!("{i},{:?},{:?}\n", w[0], w[1]));
    }
    ctx.write("quantizer.csv", &text)?;
    println!("cells={} noise_std={:.6e} error_rate={:.6}", cal.quantizer.cells(), cal.noise_std, cal.error_rate);
    Ok(())
}

fn residual_report(est: &MapEstimate, records: &[MeasurementRecord]) -> (String, f64, usize) {
    let mut text = String::from("record,sensor_index,is_virtual,y,eps,prediction,residual,tube_excess\n");
    let mut worst = 0.0f64;
    let mut outside = 0;
    for (i, r) in records.iter().enumerate() {
        let pred = r.phi.dot(&est.evaluate(&r.location));
        let res = r.y - pred;
        let excess = (res.abs() - r.eps).max(0.0);
        worst = worst.max(excess);
        outside += (excess > 0.0) as usize;
        text.push_str(&format!(
            "{i},{},{},{:?},{:?},{:.12e},{:.12e},{:.12e}\n",
            r.sensor_index, r.is_virtual, r.y, r.eps, pred, res, excess
        ));
    }
    (text, worst, outside)
}

fn fit(ctx: &Context, measurements: Option<&Path>) -> CliResult<()> {
    let (est, records, truth) = ctx.fit(measurements)?;
    ctx.write("estimate.toml", &estimate_to_string(&est)?)?;
    let (report, worst, outside) = residual_report(&est, &records);
    ctx.write("residuals.csv", &report)?;
    print!("records={} anchors={} outside_tube={outside} max_tube_excess={worst:.6e}", records.len(), est.anchors.len());
    if let Some(sc) = truth {
        print!(" nmse={:.6e}", nmse(&est, &sc.field, &sc.eval_points)?);
    }
    println!();
    Ok(())
}

fn evaluate(ctx: &Context, measurements: Option<&Path>, estimate: Option<&Path>) -> CliResult<()> {
    let (est, truth) = match estimate {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            let est = estimate_from_str(&text)?;
            let truth = if measurements.is_none() && ctx.config.measurements.is_none() {
                Some(ctx.simulate()?)
            } else {
                None
            };
            (est, truth)
        }
        None => {
            let (est, _, truth) = ctx.fit(measurements)?;
            (est, truth)
        }
    };
    let m = ctx.config.scenario()?.channels();
    if est.channels() != m {
        return Err(Error::DimensionMismatch { context: "estimate channels", expected: m, got: est.channels() }.into());
    }
    ctx.write("map.csv", &ctx.grid_csv(|x| est.evaluate(x))?)?;
    if let Some(sc) = truth {
        let v = nmse(&est, &sc.field, &sc.eval_points)?;
        ctx.write("report.csv", &format!("metric,value\nnmse,{v:.12e}\n"))?;
        println!("nmse={v:.6e}");
    }
    Ok(())
}
