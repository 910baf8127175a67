use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qetcs::pipeline::{run, RunConfig, Stage};
use qetcs::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "qetcs", version, about = "Quasi-energy trajectory-coherent states for the periodic nonlocal GPE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Periodic orbit of the mean-field Hamilton system.
    Orbit(Common),
    /// Floquet analysis of both variational systems and the germ frame.
    Floquet(Common),
    /// Trajectory-coherent states, state algebra and moment checks.
    Tcs(Common),
    /// Quasi-energies, dynamic and geometric phases.
    Spectra(Common),
    /// Green's kernel and grid monodromy on the one-dimensional reduction.
    Monodromy(Common),
    /// Split-step reference solver compared with the semiclassical moments.
    Oracle(Common),
    /// Every stage.
    All(Common),
    /// The stages listed in the configuration (or `--stages`).
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration; a previous summary.json also works.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated hbar values.
    #[arg(long)]
    hbar: Option<String>,
    /// Multi-indices separated by ';', entries by ',' (e.g. "0,0,0;1,1,1").
    #[arg(long)]
    nu: Option<String>,
    /// Comma-separated stages (only with `run`).
    #[arg(long)]
    stages: Option<String>,
    /// Exit with status 4 if any acceptance check fails.
    #[arg(long)]
    verify: bool,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("bad {what} entry '{t}'"))))
        .collect()
}

fn build_config(cmd: &Command) -> Result<(RunConfig, bool), Error> {
    let (c, fixed) = match cmd {
        Command::Orbit(c) => (c, Some(vec![Stage::Orbit])),
        Command::Floquet(c) => (c, Some(vec![Stage::Floquet])),
        Command::Tcs(c) => (c, Some(vec![Stage::Tcs])),
        Command::Spectra(c) => (c, Some(vec![Stage::Spectra])),
        Command::Monodromy(c) => (c, Some(vec![Stage::Monodromy])),
        Command::Oracle(c) => (c, Some(vec![Stage::Oracle])),
        Command::All(c) => (c, Some(Stage::ALL.to_vec())),
        Command::Run(c) => (c, None),
    };
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = fixed {
        if c.stages.is_some() {
            return Err(Error::Config("--stages is only accepted by `run`".into()));
        }
        cfg.stages = s;
    } else if let Some(s) = &c.stages {
        cfg.stages = s.split(',').filter(|t| !t.trim().is_empty()).map(|t| Stage::parse(t.trim())).collect::<Result<_, _>>()?;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(h) = &c.hbar {
        cfg.hbar = qetcs::pipeline::HbarSpec::Many(parse_list(h, "hbar")?);
    }
    if let Some(nu) = &c.nu {
        cfg.nu_list = nu.split(';').map(|t| parse_list(t, "nu")).collect::<Result<_, _>>()?;
    }
    Ok((cfg, c.verify))
}

fn exit_for(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Contract | ErrorClass::Io => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, verify) = match build_config(&cli.command) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(e.class()));
        }
    };
    let outcome = run(&cfg);
    for c in &outcome.summary.checks {
        let op = if c.relation == "le" { "<=" } else { ">=" };
        println!("{} [{}] {}: {:.3e} {op} {:.1e}", if c.passed { "PASS" } else { "FAIL" }, c.criterion, c.name, c.value, c.threshold);
    }
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
        return ExitCode::from(exit_for(e.class()));
    }
    if verify && !outcome.summary.all_passed() {
        return ExitCode::from(4);
    }
    ExitCode::SUCCESS
}
