//! CSV report writers and readers.

use std::path::Path;

use del_core::byzantine::SelectionOutcome;
use del_core::datagen::{MonteCarloReport, PowerPoint};
use del_core::stats::{ElTestReport, RegionTrace};

use crate::error::{CliError, Result};

pub const TEST_HEADER: [&str; 9] = [
    "method",
    "statistic",
    "df",
    "p_value",
    "alpha",
    "critical_value",
    "reject",
    "rounds_run",
    "selected_count",
];
pub const MONTE_CARLO_HEADER: [&str; 5] = ["method", "metric", "value", "stderr", "reps"];
pub const POWER_HEADER: [&str; 4] = ["shift", "method", "power", "stderr"];
pub const REGION_HEADER: [&str; 4] = ["angle", "mu1", "mu2", "statistic"];
pub const SELECTION_HEADER: [&str; 4] = ["machine_id", "count", "selected", "gamma_n"];

fn to_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn test_report_csv(r: &ElTestReport) -> Vec<u8> {
    to_bytes(
        &TEST_HEADER,
        [vec![
            r.method.label().into(),
            r.statistic.to_string(),
            r.df.to_string(),
            r.p_value.to_string(),
            r.alpha.to_string(),
            r.critical_value.to_string(),
            r.reject.to_string(),
            r.rounds_run.to_string(),
            r.selected_count.to_string(),
        ]],
    )
}

pub fn selection_csv(s: &SelectionOutcome) -> Vec<u8> {
    to_bytes(
        &SELECTION_HEADER,
        s.machine_ids.iter().zip(&s.counts).map(|(id, c)| {
            vec![
                id.to_string(),
                c.to_string(),
                s.selected.binary_search(id).is_ok().to_string(),
                s.gamma_n.to_string(),
            ]
        }),
    )
}

/// Monte Carlo rows; `cell` is appended to the metric as `metric|cell`
/// when several designs share one file.
pub fn monte_carlo_csv(reports: &[(String, MonteCarloReport)]) -> Vec<u8> {
    to_bytes(
        &MONTE_CARLO_HEADER,
        reports.iter().flat_map(|(cell, rep)| {
            rep.rows.iter().map(move |r| {
                let metric = if cell.is_empty() {
                    r.metric.clone()
                } else {
                    format!("{}|{cell}", r.metric)
                };
                vec![
                    r.method.label().into(),
                    metric,
                    r.value.to_string(),
                    r.stderr.to_string(),
                    r.reps.to_string(),
                ]
            })
        }),
    )
}

pub fn power_csv(curves: &[(String, Vec<PowerPoint>)]) -> Vec<u8> {
    to_bytes(
        &POWER_HEADER,
        curves.iter().flat_map(|(cell, points)| {
            points.iter().map(move |p| {
                let method = if cell.is_empty() {
                    p.method.label().to_string()
                } else {
                    format!("{}|{cell}", p.method.label())
                };
                vec![
                    p.shift.to_string(),
                    method,
                    p.power.to_string(),
                    p.stderr.to_string(),
                ]
            })
        }),
    )
}

pub fn region_csv(trace: &RegionTrace) -> Vec<u8> {
    to_bytes(
        &REGION_HEADER,
        trace.boundary.iter().map(|b| {
            vec![
                b.angle.to_string(),
                b.mu[0].to_string(),
                b.mu[1].to_string(),
                b.statistic.to_string(),
            ]
        }),
    )
}

/// Reads a CSV written by this module, checking the header.
pub fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Parse {
        file: path.to_path_buf(),
        line: 1,
        column: 1,
        message: e.to_string(),
    })?;
    let got = r
        .headers()
        .map_err(|e| CliError::Parse {
            file: path.to_path_buf(),
            line: 1,
            column: 1,
            message: e.to_string(),
        })?
        .clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(CliError::Parse {
            file: path.to_path_buf(),
            line: 1,
            column: 1,
            message: format!("header {:?} does not match {:?}", got, header),
        });
    }
    r.records()
        .map(|rec| {
            rec.map_err(|e| CliError::Parse {
                file: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                column: 1,
                message: e.to_string(),
            })
        })
        .collect()
}
