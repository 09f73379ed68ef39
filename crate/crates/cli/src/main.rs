use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssrecon_core::cs_masks::{build_split, CsScheme};
use ssrecon_core::experiments::config::{parse_list, SEED_ENV};
use ssrecon_core::experiments::output::to_csv_string;
use ssrecon_core::experiments::sweep::histogram_path;
use ssrecon_core::experiments::{
    emit_csv, fit_rate, read_csv, run_grad_var, run_sweep, run_verification, ExperimentKind, GradVarDomain, GroupKey,
    RawConfig, SweepConfig,
};
use ssrecon_core::grad_variance::write_samples_csv;
use ssrecon_core::rng::{self, derive_seed, tag};
use ssrecon_core::Error;

#[derive(Parser)]
#[command(name = "ssrecon-lab", version, about = "Sample-complexity experiments for self-supervised reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over a grid of sizes and noise levels (or target fractions) and write risks as CSV.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit log(excess risk) against log(N) from a sweep CSV.
    FitRate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Group::Param)]
        group: Group,
        #[arg(long)]
        n_min: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Run the built-in identity and bound checks.
    Verify {
        #[arg(long)]
        fast: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Normalized per-sample gradient variances at the one-epoch estimate.
    GradVar {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        histogram_out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Draw one input/target mask split and export it as JSON.
    MaskSplit {
        #[arg(long)]
        n_freq: usize,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    Param,
    Experiment,
}

/// Flags that override config-file keys.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    sigma_z: Option<f64>,
    /// Comma-separated list.
    #[arg(long)]
    sigma_e: Option<String>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    /// Comma-separated list.
    #[arg(long)]
    mu: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    train_sizes: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    record_wall_time: bool,
}

impl Overrides {
    fn into_raw(self) -> Result<RawConfig, Error> {
        Ok(RawConfig {
            experiment: self.experiment.map(|e| e.parse::<ExperimentKind>()).transpose()?,
            n: self.n,
            d: self.d,
            sigma_z: self.sigma_z,
            sigma_e: self.sigma_e.as_deref().map(parse_list).transpose()?,
            nu: self.nu,
            p: self.p,
            mu: self.mu.as_deref().map(parse_list).transpose()?,
            train_sizes: self.train_sizes.as_deref().map(parse_list).transpose()?,
            trials: self.trials,
            seed: self.seed,
            patience: self.patience,
            max_epochs: self.max_epochs,
            samples: self.samples,
            bins: self.bins,
            domain: self.domain.as_deref().map(parse_domain).transpose()?,
            record_wall_time: self.record_wall_time.then_some(true),
            ..RawConfig::default()
        })
    }
}

fn parse_domain(s: &str) -> Result<GradVarDomain, Error> {
    match s {
        "denoise" => Ok(GradVarDomain::Denoise),
        "cs" => Ok(GradVarDomain::Cs),
        other => Err(Error::Config(format!("unknown domain {other:?}; expected denoise or cs"))),
    }
}

fn seed_or_env(seed: Option<u64>) -> Result<u64, Error> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))
        }
        Err(_) => Ok(0),
    }
}

/// Writes to stdout; a reader that closes the pipe early is not an error.
fn emit_stdout(text: &str) -> Result<(), Error> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io { path: "<stdout>".into(), source: e }),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Sweep { config, out, workers, overrides } => {
            let mut flags = overrides.into_raw()?;
            flags.output = out;
            flags.workers = workers;
            let config = SweepConfig::load(config.as_deref(), flags)?;
            let result = run_sweep(&config)?;
            match &config.output {
                Some(path) => emit_csv(&result, path)?,
                None => emit_stdout(&to_csv_string(&result))?,
            }
            for f in &result.failures {
                eprintln!("failed: {} N={} trial={} param={}: {}", f.experiment, f.n_train, f.trial, f.param, f.reason);
            }
            Ok(result.failures.iter().map(|f| f.exit_code as u8).max().unwrap_or(0))
        }
        Command::FitRate { input, group, n_min, n_max } => {
            let rows = read_csv(&input)?;
            let key = match group {
                Group::Param => GroupKey::Param,
                Group::Experiment => GroupKey::Experiment,
            };
            let range = (n_min.is_some() || n_max.is_some()).then(|| (n_min.unwrap_or(0), n_max.unwrap_or(usize::MAX)));
            println!("experiment,param,slope,intercept,r_squared,points");
            for fit in fit_rate(&rows, key, range)? {
                let param = fit.param.map(|p| p.to_string()).unwrap_or_default();
                println!(
                    "{},{},{:.6},{:.6},{:.6},{}",
                    fit.experiment,
                    param,
                    fit.slope,
                    fit.intercept,
                    fit.r_squared,
                    fit.points.len()
                );
            }
            Ok(0)
        }
        Command::Verify { fast, seed } => {
            let outcomes = run_verification(fast, seed_or_env(seed)?)?;
            let mut failed = false;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                failed |= !o.passed;
            }
            Ok(u8::from(failed))
        }
        Command::GradVar { config, out, histogram_out, workers, overrides } => {
            let mut flags = overrides.into_raw()?;
            flags.experiment.get_or_insert(ExperimentKind::GradVar);
            flags.output = out;
            flags.histogram_output = histogram_out;
            flags.workers = workers;
            let config = SweepConfig::load(config.as_deref(), flags)?;
            if config.experiment != ExperimentKind::GradVar {
                return Err(Error::Config(format!(
                    "grad-var needs experiment grad-var, got {}",
                    config.experiment.as_str()
                )));
            }
            let reports = run_grad_var(&config)?;
            println!("loss_label,mean,standard_error");
            for r in &reports {
                println!("{},{:.6e},{:.6e}", r.loss_label, r.mean, r.standard_error);
            }
            if let Some(path) = &config.output {
                write_samples_csv(&reports, path)?;
            }
            let hist_base = config.histogram_output.clone().or_else(|| {
                config.output.as_ref().map(|p| {
                    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("grad-var");
                    p.with_file_name(format!("{stem}-hist.csv"))
                })
            });
            if let Some(base) = hist_base {
                for (i, r) in reports.iter().enumerate() {
                    r.write_histogram_csv(&histogram_path(&base, i))?;
                }
            }
            Ok(0)
        }
        Command::MaskSplit { n_freq, nu, p, mu, seed, out } => {
            let scheme = CsScheme::new(n_freq, nu, p, mu)?;
            let seed = seed_or_env(seed)?;
            let split = build_split(&scheme, &mut rng::stream(derive_seed(seed, tag::MASKS), 0))?;
            let json = serde_json::to_string_pretty(&split.export(&scheme))?;
            match out {
                Some(path) => write_text(&path, &json)?,
                None => emit_stdout(&format!("{json}\n"))?,
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
