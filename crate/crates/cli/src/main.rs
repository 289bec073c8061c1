//! `mgsim` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 simulation divergence.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use mgsim_core::experiments::{
    profile_playback, puf_sweep, step_compare, ProfileInterval, SYNTHETIC_PROFILE_CSV,
};
use mgsim_core::io::{
    parse_config, parse_config_str, parse_profile, read_profile, write_profile_outputs,
    write_step_outputs, write_sweep_outputs, Config,
};
use mgsim_core::Error;

#[derive(Parser)]
#[command(
    name = "mgsim",
    version,
    about = "Grid-forming inverter unbalance experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load step under both control schemes.
    StepCompare(RunArgs),
    /// VUF against PUF for the three transformer configurations.
    PufSweep(RunArgs),
    /// Play a load/PV profile through the selected scheme.
    Profile(RunArgs),
    /// Check a config file (stdin when --config is omitted).
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config `[output] dir`, then $MGSIM_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG charts.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Diverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => Failure::Diverged(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn out_dir(args: &RunArgs, cfg: &Config) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("MGSIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_profile(cfg: &Config) -> Result<Vec<ProfileInterval>, Error> {
    match &cfg.profile.path {
        Some(p) => read_profile(p),
        None => parse_profile(SYNTHETIC_PROFILE_CSV),
    }
}

fn report(quiet: bool, files: &[PathBuf]) {
    if !quiet {
        for f in files {
            println!("wrote {}", f.display());
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.3}%", 100.0 * x)
}

fn step(args: &RunArgs) -> Result<(), Failure> {
    let cfg = parse_config(&args.config)?;
    let dir = out_dir(args, &cfg);
    let cmp = step_compare(&cfg.step_config())?;
    let files = write_step_outputs(&cmp, &dir, args.svg)?;
    if !args.quiet {
        for (name, m) in [("srf", &cmp.srf_metrics), ("rrf", &cmp.rrf_metrics)] {
            let settle = m
                .settling_time_s
                .map_or("not settled".to_string(), |t| format!("{:.1} ms", 1e3 * t));
            println!(
                "{name}: settling {settle}, peak rms {:.4} pu, residual neg {:.2e} pu",
                m.peak_rms_pu, m.residual_neg_pu
            );
        }
    }
    report(args.quiet, &files);
    Ok(())
}

fn sweep(args: &RunArgs) -> Result<(), Failure> {
    let cfg = parse_config(&args.config)?;
    let dir = out_dir(args, &cfg);
    let sr = puf_sweep(&cfg.sweep_config())?;
    for c in &sr.curves {
        for p in c.points.iter().filter(|p| !p.converged) {
            eprintln!(
                "warning: {} at PUF {} did not reach steady state; VUF {} is from the last cycle",
                c.topology.name(),
                pct(p.puf),
                pct(p.vuf)
            );
        }
    }
    let files = write_sweep_outputs(&sr, &dir, args.svg)?;
    if !args.quiet {
        for c in &sr.curves {
            if let Some(p) = c.points.last() {
                println!(
                    "{}: VUF {} at PUF {}",
                    c.topology.name(),
                    pct(p.vuf),
                    pct(p.puf)
                );
            }
        }
    }
    report(args.quiet, &files);
    Ok(())
}

fn profile(args: &RunArgs) -> Result<(), Failure> {
    let cfg = parse_config(&args.config)?;
    let data = load_profile(&cfg)?;
    let dir = out_dir(args, &cfg);
    let res = profile_playback(&cfg.profile_config(), &data)?;
    let flagged: Vec<u32> = res
        .intervals
        .iter()
        .filter(|r| r.flagged)
        .map(|r| r.interval)
        .collect();
    if !flagged.is_empty() {
        eprintln!(
            "warning: intervals over the phase rating were held at the previous load: {flagged:?}"
        );
    }
    let files = write_profile_outputs(&res, &dir, args.svg)?;
    if !args.quiet {
        let max = res.intervals.iter().map(|r| r.vuf).fold(0.0, f64::max);
        println!("{} intervals, max VUF {}", res.intervals.len(), pct(max));
    }
    report(args.quiet, &files);
    Ok(())
}

fn validate(config: Option<&Path>, quiet: bool) -> Result<(), Failure> {
    let cfg = match config {
        Some(p) => parse_config(p)?,
        None => {
            let mut text = String::new();
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Failure::Invalid(format!("reading stdin: {e}")))?;
            parse_config_str(&text, Path::new("<stdin>"))?
        }
    };
    if cfg.profile.path.is_some() {
        load_profile(&cfg)?;
    }
    if !quiet {
        println!("ok: scheme {}", cfg.control.scheme.name());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let res = match &cli.command {
        Command::StepCompare(a) => step(a),
        Command::PufSweep(a) => sweep(a),
        Command::Profile(a) => profile(a),
        Command::ValidateConfig { config, quiet } => validate(config.as_deref(), *quiet),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Diverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
