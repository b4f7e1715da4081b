use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use del_cli::commands::{self, EXIT_ERROR};
use del_cli::config::RunConfig;
use del_cli::output;
use del_cli::transport::thread_budget;
use del_cli::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "del",
    version,
    about = "Distributed empirical likelihood tests for a mean"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test H0: mu = mu0 on a directory of partition files.
    Test(Flags),
    /// Trace confidence-region boundaries for bivariate data.
    Confregion(Flags),
    /// Run a Monte Carlo study or power curve from a design config.
    Simulate(Flags),
    /// Write one simulated repetition as partition files to --out.
    Gen(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Hypothesised mean, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    mu0: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// del or dels.
    #[arg(long)]
    method: Option<String>,
    /// Selection threshold constant.
    #[arg(long)]
    a: Option<String>,
    /// Number of protocol rounds, or `auto`.
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Confidence levels for `confregion`, comma separated.
    #[arg(long)]
    levels: Option<String>,
}

fn resolve(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let pairs = [
        ("mu0", flags.mu0.clone()),
        ("alpha", flags.alpha.clone()),
        ("method", flags.method.clone()),
        ("a", flags.a.clone()),
        ("rounds", flags.rounds.clone()),
        ("seed", flags.seed.clone()),
        ("levels", flags.levels.clone()),
    ];
    for (key, value) in pairs {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    if let Some(d) = &flags.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(o) = &flags.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn report_error(e: &CliError, cfg: Option<&RunConfig>) {
    eprintln!("error: {e}");
    if let Some(h) = cfg.and_then(|c| commands::hint(e, c.method)) {
        eprintln!("hint: {h}");
    }
}

fn run_test(flags: &Flags) -> i32 {
    let cfg = match resolve(flags) {
        Ok(c) => c,
        Err(e) => {
            report_error(&e, None);
            return EXIT_ERROR;
        }
    };
    let result = commands::cmd_test(&cfg, thread_budget());
    let written = result
        .as_ref()
        .ok()
        .map(|t| commands::write_test_outputs(t, &out_path(&cfg, "del-test.csv")));
    match (&result, written) {
        (Ok(t), Some(Ok(()))) => println!("{}", commands::format_report(t)),
        (Ok(_), Some(Err(e))) => {
            report_error(&e, Some(&cfg));
            return EXIT_ERROR;
        }
        (Err(e), _) => report_error(e, Some(&cfg)),
        _ => {}
    }
    commands::exit_code(&result)
}

fn run_confregion(flags: &Flags) -> Result<()> {
    let cfg = resolve(flags)?;
    let out = out_path(&cfg, "region.csv");
    for trace in commands::cmd_confregion(&cfg, thread_budget())? {
        let path = commands::level_path(&out, trace.level);
        output::write_file(&path, &output::region_csv(&trace))?;
        println!(
            "level {}: {} boundary points, critical value {:.6}, centre ({}, {}) -> {}",
            trace.level,
            trace.boundary.len(),
            trace.critical,
            trace.center[0],
            trace.center[1],
            path.display()
        );
    }
    Ok(())
}

fn run_simulate(flags: &Flags) -> Result<()> {
    let cfg = resolve(flags)?;
    let out = out_path(&cfg, "simulation.csv");
    let echo = cfg.to_config_string();
    print!("{echo}");
    let sim = commands::cmd_simulate(&cfg, thread_budget())?;
    let csv = commands::simulation_csv(&sim);
    output::write_file(&out, &csv)?;
    output::write_file(&out.with_extension("design.cfg"), echo.as_bytes())?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn run_gen(flags: &Flags) -> Result<()> {
    let cfg = resolve(flags)?;
    let dir = cfg.out.clone().ok_or_else(|| CliError::Config {
        key: "out".into(),
        message: "gen needs an output directory (use --out)".into(),
    })?;
    let cluster = commands::cmd_gen(&cfg, &dir)?;
    output::write_file(
        &Path::new(&dir).join("design.cfg"),
        cfg.to_config_string().as_bytes(),
    )?;
    println!(
        "wrote {} partition files to {}",
        cluster.len(),
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Test(f) => run_test(f),
        Command::Confregion(f) => finish(run_confregion(f)),
        Command::Simulate(f) => finish(run_simulate(f)),
        Command::Gen(f) => finish(run_gen(f)),
    };
    ExitCode::from(code as u8)
}

fn finish(r: Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e, None);
            EXIT_ERROR
        }
    }
}
