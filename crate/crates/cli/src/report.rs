//! The `report` subcommand: aggregates run directories into one table.

use std::fs;
use std::path::{Path, PathBuf};

use famr::format::{code_version, fmt_f64};

use crate::commands::{MetricsDocument, METRICS_FILE, TRACE_FILE};
use crate::CliError;

pub const REPORT_FILE: &str = "report.csv";
pub const PLOTS_DIR: &str = "plots";

/// Trace columns copied into the per-run plot files.
const PLOT_COLUMNS: [&str; 6] = ["step", "objective", "stationarity_residual", "for_acc", "ret_acc", "entropy_forget"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub doc: MetricsDocument,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Files that were found but could not be parsed, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn find_metrics(root: &Path, dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            if path != root.join(PLOTS_DIR) {
                find_metrics(root, &path, found)?;
            }
        } else if path.file_name().is_some_and(|n| n == METRICS_FILE) {
            found.push(path);
        }
    }
    Ok(())
}

/// Run directory relative to `root`, `.` for the root itself.
fn run_name(root: &Path, file: &Path) -> String {
    let parent = file.parent().unwrap_or(root);
    let rel = parent.strip_prefix(root).unwrap_or(parent).to_string_lossy().replace('\\', "/");
    if rel.is_empty() {
        ".".to_string()
    } else {
        rel
    }
}

pub fn collect(root: &Path) -> Result<Report, CliError> {
    if !root.is_dir() {
        return Err(CliError::Config(format!("{}: not a directory", root.display())));
    }
    let mut files = Vec::new();
    find_metrics(root, root, &mut files)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for file in files {
        let run = run_name(root, &file);
        let parsed = fs::read_to_string(&file)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<MetricsDocument>(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(doc) => rows.push(ReportRow { run, doc }),
            Err(reason) => skipped.push((run, reason)),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!("{}: no readable {METRICS_FILE} files", root.display())));
    }
    Ok(Report { rows, skipped })
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

pub fn report_csv(report: &Report) -> String {
    let mut out = format!("# famr-report-v1\n# code_version={}\n", code_version()).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record([
            "run",
            "stage",
            "lambda",
            "iters",
            "ret_acc",
            "for_acc",
            "ret_acc_pct",
            "for_acc_pct",
            "ce_forget",
            "entropy_forget",
            "kl_pre_post",
            "n_retain",
            "n_forget",
            "config_hash",
            "dataset_hash",
        ])
        .expect("in-memory write");
        for r in &report.rows {
            let m = &r.doc.metrics;
            w.write_record([
                r.run.clone(),
                r.doc.stage.clone(),
                r.doc.lambda.map(fmt_f64).unwrap_or_default(),
                r.doc.iters.map(|i| i.to_string()).unwrap_or_default(),
                fmt_f64(m.ret_acc),
                fmt_f64(m.for_acc),
                pct(m.ret_acc),
                pct(m.for_acc),
                fmt_f64(m.ce_forget),
                fmt_f64(m.entropy_forget),
                fmt_f64(m.kl_pre_post),
                m.n_retain.to_string(),
                m.n_forget.to_string(),
                r.doc.provenance.config_hash.clone(),
                r.doc.provenance.dataset_hash.clone(),
            ])
            .expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    let mut text = String::from_utf8(out).expect("ascii output");
    if !report.skipped.is_empty() {
        text.push_str("\n# skipped\n");
        for (run, reason) in &report.skipped {
            text.push_str(&format!("# {run}: {}\n", reason.replace('\n', " ")));
        }
    }
    text
}

/// Extracts the plotted columns from a trace file.
fn plot_csv(trace: &str) -> Result<String, String> {
    let body: String = trace
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    let idx: Vec<usize> = PLOT_COLUMNS
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).ok_or(format!("trace lacks column {c}")))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(PLOT_COLUMNS).map_err(|e| e.to_string())?;
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            w.write_record(idx.iter().map(|&i| &rec[i])).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    Ok(String::from_utf8(out).expect("ascii output"))
}

/// Writes `report.csv` and one plot file per traced run under `root`.
pub fn cmd_report(root: &Path) -> Result<Report, CliError> {
    let mut report = collect(root)?;
    let plots = root.join(PLOTS_DIR);
    for row in &report.rows {
        let Ok(trace) = fs::read_to_string(root.join(&row.run).join(TRACE_FILE)) else {
            continue;
        };
        let name = if row.run == "." { "run".to_string() } else { row.run.replace('/', "_") };
        match plot_csv(&trace) {
            Ok(csv) => {
                fs::create_dir_all(&plots).map_err(|e| CliError::Runtime(format!("{}: {e}", plots.display())))?;
                let path = plots.join(format!("{name}.csv"));
                fs::write(&path, csv).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            }
            Err(reason) => report.skipped.push((format!("{}/{TRACE_FILE}", row.run), reason)),
        }
    }
    let path = root.join(REPORT_FILE);
    fs::write(&path, report_csv(&report)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(report)
}
