use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qudit_lab::commands::{cmd_bell_scan, cmd_schmidt, cmd_tomography};
use qudit_lab::config::ExperimentConfig;
use qudit_lab::output::{write_log, OutputSet, Provenance};
use qudit_lab::verify::{run_checks, verify_outputs};
use qudit_lab::Result;

/// Simulation and analysis of frequency-bin qudit entanglement.
#[derive(Parser)]
#[command(name = "qudit-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Schmidt decomposition of a joint spectral amplitude.
    Schmidt(Common),
    /// Simulated state tomography with maximum-likelihood reconstruction.
    Tomography(Common),
    /// CGLMP parameter against the entanglement parameter gamma.
    BellScan(Common),
    /// Run the acceptance checks and print the results table.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

struct Loaded {
    config: ExperimentConfig,
    provenance: Provenance,
    out_dir: PathBuf,
}

fn load(args: &Common) -> Result<Loaded> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let config = ExperimentConfig::from_toml(&text)?;
    let seed = args.seed.unwrap_or(config.seed);
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| qudit_lab::error::invalid("threads", e.to_string()))?;
    }
    Ok(Loaded {
        provenance: Provenance::new(&text, seed),
        config,
        out_dir,
    })
}

fn finish(name: &str, dir: &Path, prov: &Provenance, out: &OutputSet, status: &str) -> Result<()> {
    let written = out.write_all(dir)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    write_log(dir, name, prov, &written, status)
}

fn run(cli: Cli) -> Result<bool> {
    let (name, args) = match &cli.command {
        Command::Schmidt(a) => ("schmidt", a),
        Command::Tomography(a) => ("tomography", a),
        Command::BellScan(a) => ("bell-scan", a),
        Command::Verify(a) => ("verify", a),
    };
    let l = load(args)?;
    let (out, ok) = match cli.command {
        Command::Schmidt(_) => (cmd_schmidt(&l.config.schmidt, &l.provenance)?, true),
        Command::Tomography(_) => (cmd_tomography(&l.config.tomography, &l.provenance)?, true),
        Command::BellScan(_) => (cmd_bell_scan(&l.config.bell, &l.provenance)?, true),
        Command::Verify(_) => {
            let report = run_checks(&l.config, l.provenance.seed)?;
            print!("{}", report.table());
            for (k, ok) in report.criteria() {
                println!("criterion {k:>2}: {}", if ok { "PASS" } else { "FAIL" });
            }
            let ok = report.passed();
            println!("{}", if ok { "all checks passed" } else { "some checks FAILED" });
            (verify_outputs(&report, l.config.verify.tolerance_scale, &l.provenance)?, ok)
        }
    };
    finish(name, &l.out_dir, &l.provenance, &out, if ok { "pass" } else { "fail" })?;
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
