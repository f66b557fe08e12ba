//! Command line driver for the bpjd eigensolver.
//!
//! Exit codes: 0 when every run converged, 2 when the solver finished
//! without reaching the tolerance, 1 on any error.

use bpjd_cli::{
    apply_set_overrides, parse_config_text, preset, preset_names, run_experiment,
    sig10, validate_config, write_outputs, RunConfig, RunReport,
};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "bpjd",
    version,
    about = "Finite element Laplacian eigensolver with a two-level block \
             preconditioned Jacobi-Davidson method"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a preset, a config file, or both
    Run(RunArgs),
    /// List the built-in presets
    ListPresets,
    /// Resolve and validate a configuration without running it
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a flat `key = value` configuration file
    config: Option<PathBuf>,
    /// Built-in preset to start from (config file keys override it)
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads for the subdomain solves (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Compute a reference solution and report the final subspace gap
    #[arg(long)]
    diagnostics: bool,
    /// Output directory, overriding the configured one
    #[arg(long)]
    out: Option<String>,
    /// Override a single configuration key, e.g. --set s=7
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(args: &RunArgs) -> bpjd::Result<RunConfig> {
    if args.preset.is_none() && args.config.is_none() {
        return Err(bpjd::Error::Config(
            "provide a config file, a --preset name, or both".to_string(),
        ));
    }
    let mut cfg = match &args.preset {
        Some(name) => preset(name).ok_or_else(|| {
            bpjd::Error::Config(format!(
                "unknown preset '{name}' (see `bpjd list-presets`)"
            ))
        })?,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        cfg = parse_config_text(&text, cfg)?;
    }
    cfg = apply_set_overrides(cfg, &args.set)?;
    if args.diagnostics {
        cfg.diagnostics = true;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn print_summary(report: &RunReport) {
    let describe = |runs: &[bpjd_cli::LevelRun]| {
        for run in runs {
            let state = if run.converged { "converged" } else { "NOT CONVERGED" };
            println!(
                "  coarse {:>3}  level {}  dof {:>7}  subdomains {:>5}  colors {:>2}  \
                 iterations {:>3}  {}  lambda1 {}",
                run.coarse_n,
                run.level,
                run.dof,
                run.n_subdomains,
                run.n_colors,
                run.iterations,
                state,
                sig10(run.lambdas[0]),
            );
        }
    };
    println!("refinement levels:");
    describe(&report.levels);
    if !report.scalability.is_empty() {
        println!("subdomain scaling:");
        describe(&report.scalability);
    }
    if let Some(gap) = &report.gap {
        println!(
            "diagnostics (level {}, {} reference): final gap {:.3e}, rate {}",
            gap.level,
            gap.reference,
            gap.final_gap,
            gap.gamma_hat
                .map(|g| format!("{g:.4}"))
                .unwrap_or_else(|| "n/a".to_string()),
        );
    }
    println!("total wall time: {:.1} s", report.total_ms / 1e3);
}

fn run_command(args: &RunArgs) -> bpjd::Result<ExitCode> {
    let cfg = resolve(args)?;
    let report = run_experiment(&cfg, args.preset.as_deref())?;
    write_outputs(&report, Path::new(&cfg.output_dir))?;
    print_summary(&report);
    println!(
        "wrote report.json, lambdas.csv, history.jsonl to {}",
        cfg.output_dir
    );
    let all_converged = report
        .levels
        .iter()
        .chain(&report.scalability)
        .all(|r| r.converged);
    if all_converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: at least one run did not converge");
        Ok(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Run(args) | Command::Validate(args) => args.threads,
        Command::ListPresets => None,
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::ListPresets => {
            for (name, description) in preset_names() {
                println!("{name:<14} {description}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate(args) => resolve(args).and_then(|cfg| {
            validate_config(&cfg)?;
            let rendered = serde_json::to_string_pretty(&cfg)
                .map_err(|e| bpjd::Error::Config(format!("cannot render config: {e}")))?;
            println!("{rendered}");
            Ok(ExitCode::SUCCESS)
        }),
        Command::Run(args) => run_command(args),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
