use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvon_lab::config::ExperimentConfig;
use cvon_lab::harness::{self, Command, Summary, OUT_ENV};
use cvon_lab::selfcheck::self_check;
use cvon_lab::LabError;

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Projected SGD experiments with stability and convergence diagnostics.
#[derive(Parser)]
#[command(name = "cvon-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    config: Option<PathBuf>,
    /// Output directory for the bundle.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Accepts schedules outside the Robbins-Monro range.
    #[arg(long)]
    allow_non_rm: bool,
    /// Emits SVG plots next to the CSVs.
    #[arg(long)]
    plots: bool,
    /// Default output root when neither --out nor output_dir is set.
    #[arg(long, env = OUT_ENV, hide_env_values = true)]
    out_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Full pipeline: stability, replicates and convergence diagnostics.
    Run(Common),
    /// One trajectory, its CV_on profile and the rate fit.
    Stability(Common),
    /// Replicates, consistency curve and Robbins-Siegmund checks.
    Convergence(Common),
    /// Gradient, projection, expansion and schedule self-tests.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Random cases per property.
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
    /// Full pipeline once per value of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config key, e.g. schedule.alpha.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), LabError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.allow_non_rm |= common.allow_non_rm;
    cfg.validate()?;
    let out = match (&common.out, &cfg.output_dir, &common.out_root) {
        (Some(p), _, _) => p.clone(),
        (None, None, Some(root)) => root.join(&cfg.name),
        _ => harness::resolve_out_dir(None, &cfg),
    };
    Ok((cfg, out))
}

fn report(summary: &Summary) {
    println!("bundle: {}", summary.out.display());
    if let Some(s) = &summary.stability {
        match &s.fit {
            Some(fit) => println!(
                "stability: slope {:.4}, C_hat {:.4}, r^2 {:.4} over {} checkpoints",
                fit.slope, fit.c_hat, fit.r_squared, fit.points
            ),
            None => println!(
                "stability: no rate fit ({})",
                s.fit_error.as_deref().unwrap_or("unknown reason")
            ),
        }
        if s.exploratory {
            println!("stability: loss has no Hessian; profile is exploratory");
        }
        if let Some(d) = &s.descent {
            println!(
                "descent probe: {}/{} violations, min ratio {:.4}",
                d.violations, d.probes, d.min_ratio
            );
        }
    }
    if let Some(c) = &summary.convergence {
        println!(
            "convergence: {}/{} replicates within {} of f_K",
            c.converged, c.replicates, c.norm_threshold
        );
        if let Some(rs) = &c.robbins_siegmund {
            println!(
                "robbins-siegmund: {}/{} recursion violations",
                rs.recursion_violations, rs.recursion_tested
            );
        }
    }
}

fn finish(summary: Summary) -> ExitCode {
    report(&summary);
    match summary.aborted() {
        0 => ExitCode::SUCCESS,
        n => {
            eprintln!("{n} replicate(s) aborted; see manifest.json");
            ExitCode::from(EXIT_DIVERGED)
        }
    }
}

fn fail(e: LabError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        LabError::Diverged { .. } => ExitCode::from(EXIT_DIVERGED),
        _ => ExitCode::from(EXIT_CONFIG),
    }
}

fn pipeline(common: &Common, command: Command) -> ExitCode {
    let (cfg, out) = match load(common) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    match harness::execute(&cfg, command, &out, common.workers, common.plots) {
        Ok(summary) => finish(summary),
        Err(e) => fail(e),
    }
}

fn sweep(common: &Common, param: &str, values: &[String]) -> ExitCode {
    let (cfg, out) = match load(common) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    match harness::sweep(
        &cfg,
        param,
        values,
        Path::new(&out),
        common.workers,
        common.plots,
    ) {
        Ok((report, summaries)) => {
            for p in &report.points {
                match p.slope {
                    Some(s) => println!("{}={}: slope {s:.4}", report.param, p.value),
                    None => println!("{}={}: no rate fit", report.param, p.value),
                }
            }
            let aborted: usize = summaries.iter().map(Summary::aborted).sum();
            if aborted > 0 {
                eprintln!("{aborted} replicate(s) aborted");
                return ExitCode::from(EXIT_DIVERGED);
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match &cli.command {
        Cmd::Run(c) => pipeline(c, Command::Run),
        Cmd::Stability(c) => pipeline(c, Command::Stability),
        Cmd::Convergence(c) => pipeline(c, Command::Convergence),
        Cmd::Sweep {
            common,
            param,
            values,
        } => sweep(common, param, values),
        Cmd::Check { seed, cases } => match self_check(*seed, *cases) {
            Ok(report) => {
                for r in &report.results {
                    println!(
                        "{} {} (worst {:e}, tolerance {:e}, {} cases)",
                        if r.passed { "PASS" } else { "FAIL" },
                        r.name,
                        r.worst,
                        r.tolerance,
                        r.cases
                    );
                }
                if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_CHECK)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CHECK)
            }
        },
    }
}
