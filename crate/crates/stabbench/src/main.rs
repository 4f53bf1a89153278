//! `stabbench` — CLI over the stability-lab runners.
//!
//! Exit codes: 0 success, 2 config error, 3 verification/audit failure under
//! --strict, 4 NaN event in a run with both --halt-on-nan and --strict set.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use stabbench::audit::{audit_config, Severity};
use stabbench::config::{
    load_config, AuditConfig, SqrtSimConfig, SweepConfig, VarianceTableConfig,
};
use stabbench::gradcheck::run_gradient_check;
use stabbench::report::{fmt_f32, fmt_f64, Format};
use stabbench::runners::{
    run_eps_sweep, run_gradscale_sweep, run_sqrt_divergence, run_variance_nan_table,
};
use stabbench::RunError;
use stablab::fp32lab::{finfo, log32_shifted, parse_decimal_to_f32, sigmoid32};

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;
const EXIT_NAN_STRICT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "stabbench",
    version,
    about = "NaN-divergence simulations and audits for the scale-invariant log loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Directory for report files; nothing is written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats to emit (repeatable).
    #[arg(long, value_enum, num_args = 1.., default_values_t = [Format::Csv, Format::Json])]
    format: Vec<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Print binary32 constants and the float-boundary probes.
    ProbeFloats {
        /// Write the probe report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a sigmoid head and trace loss/gradient/NaN per iteration.
    SimSqrt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop the run at the first NaN event, before the optimizer update.
        #[arg(long)]
        halt_on_nan: bool,
        /// With --halt-on-nan, exit with code 4 when a NaN occurred.
        #[arg(long)]
        strict: bool,
        /// Redraw the training batch every iteration.
        #[arg(long)]
        resample_per_iter: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep the gradient scale over weight initializations.
    SimGradscale {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the replica count from the config.
        #[arg(long)]
        replicas: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep the gradient scale over epsilon and weight initializations.
    SimEps {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        replicas: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Count NaN outcomes of both variance estimators under sparse masks.
    SimVarianceNan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the trial count from the config.
        #[arg(long)]
        trials: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Verify the analytic backward pass against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the check report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a loss/init configuration against the stability guidelines.
    Audit {
        #[arg(long)]
        config: PathBuf,
        /// Exit with code 3 when any fail-severity finding is present.
        #[arg(long)]
        strict: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            // config problems exit 2; everything else is an ordinary failure
            if err.downcast_ref::<stabbench::config::ConfigError>().is_some() {
                eprintln!("config error: {err:#}");
                ExitCode::from(EXIT_CONFIG)
            } else {
                eprintln!("error: {err:#}");
                ExitCode::FAILURE
            }
        }
    }
}

fn lift(result: Result<(), RunError>) -> anyhow::Result<()> {
    result.map_err(|e| match e {
        RunError::Config(c) => anyhow::Error::new(c),
        RunError::Step(s) => anyhow::Error::new(s),
    })
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::ProbeFloats { out } => probe_floats(out),
        Command::SimSqrt { config, seed, halt_on_nan, strict, resample_per_iter, output } => {
            let mut cfg: SqrtSimConfig = load_config(&config)?;
            if resample_per_iter {
                cfg.resample_per_iter = true;
            }
            let report = match run_sqrt_divergence(&cfg, seed, halt_on_nan) {
                Ok(report) => report,
                Err(e) => return lift(Err(e)).map(|_| ExitCode::SUCCESS),
            };
            let s = &report.summary;
            println!(
                "sim-sqrt seed {seed}: {} iterations, final loss {}, min loss {} at {}, first NaN {}",
                s.iterations_completed,
                s.final_loss.map_or("-".to_string(), fmt_f32),
                s.min_loss.map_or("-".to_string(), fmt_f32),
                s.min_loss_iteration.map_or("-".to_string(), |i| i.to_string()),
                s.first_nan_iteration.map_or("none".to_string(), |i| i.to_string()),
            );
            if let Some(dir) = output.out {
                for path in report.write(&dir, &output.format)? {
                    println!("wrote {}", path.display());
                }
            }
            if strict && halt_on_nan && report.summary.first_nan_iteration.is_some() {
                return Ok(ExitCode::from(EXIT_NAN_STRICT));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SimGradscale { config, seed, replicas, output } => {
            let mut cfg: SweepConfig = load_config(&config)?;
            if let Some(replicas) = replicas {
                cfg.replicas = replicas;
            }
            let report = match run_gradscale_sweep(&cfg, seed) {
                Ok(report) => report,
                Err(e) => return lift(Err(e)).map(|_| ExitCode::SUCCESS),
            };
            print_sweep(&report);
            if let Some(dir) = output.out {
                for path in report.write(&dir, &output.format)? {
                    println!("wrote {}", path.display());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SimEps { config, seed, replicas, output } => {
            let mut cfg: SweepConfig = load_config(&config)?;
            if let Some(replicas) = replicas {
                cfg.replicas = replicas;
            }
            let report = match run_eps_sweep(&cfg, seed) {
                Ok(report) => report,
                Err(e) => return lift(Err(e)).map(|_| ExitCode::SUCCESS),
            };
            print_sweep(&report);
            if let Some(dir) = output.out {
                for path in report.write(&dir, &output.format)? {
                    println!("wrote {}", path.display());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SimVarianceNan { config, seed, trials, output } => {
            let mut cfg: VarianceTableConfig = load_config(&config)?;
            if let Some(trials) = trials {
                cfg.trials = trials;
            }
            let report = match run_variance_nan_table(&cfg, seed) {
                Ok(report) => report,
                Err(e) => return lift(Err(e)).map(|_| ExitCode::SUCCESS),
            };
            for row in &report.rows {
                println!(
                    "rate {:.4}%: unbiased {} biased {} (n=0 trials {}, n=1 trials {}, skipped {})",
                    row.valid_rate * 100.0,
                    row.nan_unbiased,
                    row.nan_biased,
                    row.n0_trials,
                    row.n1_trials,
                    row.skipped
                );
            }
            if let Some(dir) = output.out {
                for path in report.write(&dir, &output.format)? {
                    println!("wrote {}", path.display());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::GradCheck { trials, seed, out } => {
            let report = match run_gradient_check(trials, seed) {
                Ok(report) => report,
                Err(e) => return lift(Err(e)).map(|_| ExitCode::SUCCESS),
            };
            println!(
                "grad-check: {} trials, worst relative error {:.3e} (tolerance {:.0e}) -> {}",
                report.trials,
                report.worst_rel_error,
                report.tolerance,
                if report.pass { "pass" } else { "FAIL" }
            );
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("wrote {}", path.display());
            }
            Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CHECK_FAILED) })
        }
        Command::Audit { config, strict } => {
            let cfg: AuditConfig = load_config(&config)?;
            cfg.validate()?;
            let loss = cfg.loss.resolve()?;
            let findings = audit_config(&loss, &cfg.init, cfg.dims.to_conv_dims(), cfg.phase);
            if findings.is_empty() {
                println!("audit: no findings — configuration sits inside the recommended envelope");
            }
            for f in &findings {
                println!("guideline {} [{}]: {}", f.guideline, match f.severity {
                    Severity::Warn => "warn",
                    Severity::Fail => "FAIL",
                }, f.message);
            }
            let failed = findings.iter().any(|f| f.severity == Severity::Fail);
            if strict && failed {
                return Ok(ExitCode::from(EXIT_CHECK_FAILED));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_sweep(report: &stabbench::report::SweepReport) {
    for cell in &report.cells {
        println!(
            "eps {} sigma_w {}: nan {}/{} mean grad var {} (finite {})",
            cell.epsilon_text,
            fmt_f32(cell.sigma_w),
            cell.nan_count,
            cell.replicas,
            fmt_f64(cell.mean_grad_var),
            cell.mean_grad_var_finite.map_or("-".to_string(), fmt_f64),
        );
    }
}

fn probe_floats(out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let fi = finfo();
    let probes = serde_json::json!({
        "finfo": {
            "resolution": fi.resolution,
            "min": fi.min,
            "max": fi.max,
            "eps": fi.eps,
            "tiny": fi.tiny,
            "smallest_subnormal": fi.smallest_subnormal,
        },
        "decimal_cast": {
            "7.1e-46": parse_decimal_to_f32("7.1e-46").unwrap(),
            "7.0e-46": parse_decimal_to_f32("7.0e-46").unwrap(),
        },
        "sigmoid": {
            "s(-88)": sigmoid32(-88.0),
            "s(-89)": sigmoid32(-89.0),
        },
        "log_shift": {
            "log(0 + 1e-24)": log32_shifted(0.0, 1e-24),
        },
    });
    println!("finfo: resolution={} min={} max={} eps={} tiny={} smallest_subnormal={}",
        fmt_f32(fi.resolution), fmt_f32(fi.min), fmt_f32(fi.max),
        fmt_f32(fi.eps), fmt_f32(fi.tiny), fmt_f32(fi.smallest_subnormal));
    println!("cast: 7.1e-46 -> {}  7.0e-46 -> {}",
        fmt_f32(parse_decimal_to_f32("7.1e-46").unwrap()),
        fmt_f32(parse_decimal_to_f32("7.0e-46").unwrap()));
    println!("sigmoid: s(-88) = {}  s(-89) = {}", fmt_f32(sigmoid32(-88.0)), fmt_f32(sigmoid32(-89.0)));
    println!("log32(0 + 1e-24) = {}", fmt_f32(log32_shifted(0.0, 1e-24)));
    if let Some(path) = out {
        std::fs::write(&path, serde_json::to_string_pretty(&probes)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
