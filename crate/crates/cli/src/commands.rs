//! Command implementations behind the `del` binary.

use std::path::{Path, PathBuf};

use del_core::byzantine::{self, SelectionOutcome};
use del_core::datagen::{self, MonteCarloReport, PowerPoint};
use del_core::el::Partition;
use del_core::protocol::{self, DelResult};
use del_core::stats::{self, ElTestReport, Method, RegionTrace, TraceOptions};
use del_core::Error;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output;
use crate::partition_files;
use crate::transport::with_threaded_transport;

pub const EXIT_ACCEPT: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECT: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

/// Exit status for a `test` run.
pub fn exit_code(result: &Result<TestOutcome>) -> i32 {
    match result {
        Ok(t) if t.report.reject => EXIT_REJECT,
        Ok(_) => EXIT_ACCEPT,
        Err(CliError::Engine(Error::SelectionDegenerate { .. })) => EXIT_DEGENERATE,
        Err(_) => EXIT_ERROR,
    }
}

/// Extra guidance printed after an error.
pub fn hint(err: &CliError, method: Method) -> Option<&'static str> {
    match (err.engine(), method) {
        (Some(Error::MaxIterations { .. }), Method::Del) => Some(
            "the protocol did not converge; heterogeneous machines can cause this, try `--method dels`",
        ),
        (Some(Error::InfeasibleMultiplier { .. }), _) => Some(
            "mu0 is far from the data for at least one machine; the protocol cannot evaluate it there",
        ),
        (Some(Error::HullViolation { .. }), _) => {
            Some("mu0 must lie inside the convex hull of every machine's data")
        }
        _ => None,
    }
}

fn require_data_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.data_dir
        .as_deref()
        .ok_or_else(|| CliError::config("data_dir", "required (use --data-dir)"))
}

/// Distributed run over the threaded transport.
pub fn run_del_threaded(
    cluster: &[Partition],
    mu: &[f64],
    cfg: &RunConfig,
    threads: usize,
) -> Result<DelResult> {
    let del = cfg.del_config();
    let (d, n) = protocol::validate_cluster(cluster)?;
    if mu.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: mu.len(),
        }
        .into());
    }
    let lam0 = protocol::initial_multiplier(cluster, mu, del.initial, &del.solver)?;
    let rounds = protocol::round_count(cluster.len(), n, del.rounds)?;
    let workers = protocol::make_workers(cluster, mu, &lam0, del.solver);
    Ok(with_threaded_transport(workers, threads, |t| {
        protocol::coordinate(t, &lam0, rounds, del.early_exit)
    })?)
}

/// Selection on real data: every machine is taken at its word.
pub fn select(
    cluster: &[Partition],
    cfg: &RunConfig,
) -> Result<(SelectionOutcome, Vec<Partition>)> {
    let sel = byzantine::run_selection(
        cluster,
        &[],
        &cfg.selection_config(),
        &cfg.del_config().solver,
    )?;
    if !sel.is_majority() {
        return Err(Error::SelectionDegenerate {
            selected: sel.selected.len(),
            machines: cluster.len(),
        }
        .into());
    }
    let kept = cluster
        .iter()
        .filter(|p| sel.selected.binary_search(&p.machine_id()).is_ok())
        .cloned()
        .collect();
    Ok((sel, kept))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub report: ElTestReport,
    pub selection: Option<SelectionOutcome>,
}

pub fn cmd_test(cfg: &RunConfig, threads: usize) -> Result<TestOutcome> {
    cfg.validate()?;
    let cluster = partition_files::parse_partition_dir(require_data_dir(cfg)?)?;
    let mu0 = cfg
        .mu0
        .as_deref()
        .ok_or_else(|| CliError::config("mu0", "required (use --mu0 v1,v2,...)"))?;
    let (selection, kept) = match cfg.method {
        Method::DelS => {
            let (s, kept) = select(&cluster, cfg)?;
            (Some(s), kept)
        }
        _ => (None, cluster),
    };
    let res = run_del_threaded(&kept, mu0, cfg, threads)?;
    let report = stats::report(
        res.statistic,
        mu0.len() as u32,
        cfg.alpha,
        cfg.method,
        res.rounds_run,
        res.participating.len(),
    )?;
    Ok(TestOutcome { report, selection })
}

pub fn format_report(t: &TestOutcome) -> String {
    let r = &t.report;
    let mut lines = vec![
        format!("{:<16}{}", "method", r.method.label()),
        format!("{:<16}{:.6}", "statistic", r.statistic),
        format!("{:<16}{}", "df", r.df),
        format!("{:<16}{:.6}", "p-value", r.p_value),
        format!("{:<16}{}", "alpha", r.alpha),
        format!("{:<16}{:.6}", "critical value", r.critical_value),
        format!(
            "{:<16}{}",
            "decision",
            if r.reject {
                "reject H0"
            } else {
                "do not reject H0"
            }
        ),
        format!("{:<16}{}", "rounds run", r.rounds_run),
        format!("{:<16}{}", "machines used", r.selected_count),
    ];
    if let Some(s) = &t.selection {
        lines.push(format!("{:<16}{:.6}", "gamma_n", s.gamma_n));
        let dropped: Vec<String> = s
            .machine_ids
            .iter()
            .filter(|id| s.selected.binary_search(id).is_err())
            .map(ToString::to_string)
            .collect();
        lines.push(format!(
            "{:<16}{}",
            "excluded",
            if dropped.is_empty() {
                "none".into()
            } else {
                dropped.join(",")
            }
        ));
    }
    lines.join("\n")
}

/// Writes the test report CSV and, for selection runs, `<stem>-selection.csv`.
pub fn write_test_outputs(t: &TestOutcome, out: &Path) -> Result<()> {
    output::write_file(out, &output::test_report_csv(&t.report))?;
    if let Some(s) = &t.selection {
        output::write_file(&sibling(out, "selection"), &output::selection_csv(s))?;
    }
    Ok(())
}

/// `dir/stem-suffix.csv` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    path.with_file_name(format!("{stem}-{suffix}.csv"))
}

pub fn cmd_confregion(cfg: &RunConfig, threads: usize) -> Result<Vec<RegionTrace>> {
    cfg.validate()?;
    let cluster = partition_files::parse_partition_dir(require_data_dir(cfg)?)?;
    let (d, _) = protocol::validate_cluster(&cluster)?;
    if d != 2 {
        return Err(CliError::config(
            "data_dir",
            format!("confidence regions need d = 2 data, found d = {d}"),
        ));
    }
    let kept = match cfg.method {
        Method::DelS => select(&cluster, cfg)?.1,
        _ => cluster,
    };
    let center = match cfg.center {
        Some(c) => c,
        None => {
            let means: Vec<Vec<f64>> = kept.iter().map(Partition::sample_mean).collect();
            let m = byzantine::geometric_median(&means)?;
            [m[0], m[1]]
        }
    };
    let opts = TraceOptions {
        angles: cfg.angles,
        ..TraceOptions::default()
    };
    let mut traces = Vec::with_capacity(cfg.levels.len());
    for &level in &cfg.levels {
        let statfn = |mu: [f64; 2]| {
            run_del_threaded(&kept, &mu, cfg, threads)
                .map(|r| r.statistic)
                .map_err(|e| match e {
                    CliError::Engine(e) => e,
                    other => Error::Transport(other.to_string()),
                })
        };
        traces.push(stats::trace_region(statfn, center, level, &opts)?);
    }
    Ok(traces)
}

/// Output path for one confidence level: `stem-0.95.csv`.
pub fn level_path(out: &Path, level: f64) -> PathBuf {
    sibling(out, &level.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimulationOutput {
    Reports(Vec<(String, MonteCarloReport)>),
    Power(Vec<(String, Vec<PowerPoint>)>),
}

fn cell_label(cfg: &RunConfig, d: &datagen::ExperimentDesign) -> String {
    if cfg.cell_count() == 1 {
        String::new()
    } else {
        format!(
            "K={}|delta_b={}|n_b={}",
            d.machines, d.delta_b, d.n_byzantine
        )
    }
}

pub fn cmd_simulate(cfg: &RunConfig, threads: usize) -> Result<SimulationOutput> {
    cfg.validate()?;
    let designs = cfg.designs()?;
    if cfg.shifts.is_empty() {
        let mut out = Vec::with_capacity(designs.len());
        for d in &designs {
            out.push((cell_label(cfg, d), crate::harness::monte_carlo(d, threads)?));
        }
        Ok(SimulationOutput::Reports(out))
    } else {
        let mut out = Vec::with_capacity(designs.len());
        for d in &designs {
            out.push((
                cell_label(cfg, d),
                crate::harness::power_curve(d, &cfg.shifts, threads)?,
            ));
        }
        Ok(SimulationOutput::Power(out))
    }
}

pub fn simulation_csv(out: &SimulationOutput) -> Vec<u8> {
    match out {
        SimulationOutput::Reports(r) => output::monte_carlo_csv(r),
        SimulationOutput::Power(p) => output::power_csv(p),
    }
}

/// Materialises one repetition of the first design cell as partition files.
pub fn cmd_gen(cfg: &RunConfig, dir: &Path) -> Result<Vec<Partition>> {
    cfg.validate()?;
    let design = cfg
        .designs()?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::config("n_byzantine", "no design cell"))?;
    let (cluster, _) = datagen::generate_cluster(&design, cfg.repetition)?;
    partition_files::write_partition_dir(dir, &cluster)?;
    Ok(cluster)
}
