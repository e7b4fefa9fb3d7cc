use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ScenarioError;
use crate::estimates::{EstimateReport, Verdict};
use crate::measures::Provenance;
use crate::operator::catalog::PredictedConstants;
use crate::operator::hypotheses::HypothesisReport;
use crate::operator::lyapunov::LyapunovTable;
use crate::operator::spec::{Constants, Structure};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Pass,
    Fail,
    Inconclusive,
    /// A hypothesis the audit relies on does not hold, or the input is inadmissible.
    Refused,
    /// The audit request itself is malformed.
    Invalid,
    /// A solver or sampler failed.
    NumericalFailure,
}

impl From<Verdict> for AuditStatus {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => AuditStatus::Pass,
            Verdict::Fail => AuditStatus::Fail,
            Verdict::Inconclusive => AuditStatus::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub id: String,
    pub kind: String,
    pub status: AuditStatus,
    pub message: Option<String>,
    pub report: Option<EstimateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSummary {
    pub name: String,
    pub dim: usize,
    pub structure: Structure,
    pub constants: Constants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub time: f64,
    pub points: usize,
    pub block: usize,
    pub provenance: Provenance,
    /// Mean and stderr of the normal coordinate.
    pub normal_mean: f64,
    pub normal_mean_stderr: f64,
    pub second_moment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    AuditFailure,
    Usage,
    Refused,
    NumericalFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::AuditFailure => 1,
            RunStatus::Usage => 2,
            RunStatus::Refused => 3,
            RunStatus::NumericalFailure => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_sha256: String,
    pub scenario: String,
    pub seed: u64,
    pub operator: Option<OperatorSummary>,
    pub hypotheses: Option<HypothesisReport>,
    pub predicted: Option<PredictedConstants>,
    pub lyapunov: Option<LyapunovTable>,
    pub measures: Vec<MeasureSummary>,
    pub audits: Vec<AuditOutcome>,
    pub notes: Vec<String>,
    pub errors: Vec<String>,
    pub status: RunStatus,
    pub exit_code: i32,
}

impl Report {
    /// Worst outcome wins: numerical failure, refusal, invalid request, then audit failure.
    pub fn finalize(&mut self) {
        let has = |s: AuditStatus| self.audits.iter().any(|a| a.status == s);
        if self.status == RunStatus::Pass {
            self.status = if has(AuditStatus::NumericalFailure) {
                RunStatus::NumericalFailure
            } else if has(AuditStatus::Refused) {
                RunStatus::Refused
            } else if has(AuditStatus::Invalid) {
                RunStatus::Usage
            } else if has(AuditStatus::Fail) || has(AuditStatus::Inconclusive) {
                RunStatus::AuditFailure
            } else {
                RunStatus::Pass
            };
        }
        self.exit_code = self.status.exit_code();
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} (seed {}, hslab {})", self.scenario, self.seed, self.tool_version);
        let _ = writeln!(out, "config sha256 {}", self.config_sha256);
        if let Some(op) = &self.operator {
            let _ = writeln!(out, "operator {} in dimension {}", op.name, op.dim);
        }
        if let Some(h) = &self.hypotheses {
            let failed: Vec<&str> = h.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            let _ = writeln!(
                out,
                "hypotheses: {} checks over {} probes, failing: {}",
                h.checks.len(),
                h.probe_count,
                if failed.is_empty() { "none".to_string() } else { failed.join(", ") }
            );
        }
        for m in &self.measures {
            let _ = writeln!(out, "measure t={}: {} points, normal mean {:.5} ± {:.5}", m.time, m.points, m.normal_mean, m.normal_mean_stderr);
        }
        for a in &self.audits {
            let status = serde_json::to_value(a.status).unwrap();
            let _ = write!(out, "{:<24} {:<14}", a.id, status.as_str().unwrap_or(""));
            if let Some(r) = &a.report {
                let _ = write!(out, " worst slack {:.4e} (tolerance {:.4e})", r.worst_slack, r.tolerance);
                for f in &r.slopes {
                    let _ = write!(out, "; {} slope {:.4} (bound {:.4})", f.series, f.slope, f.bound);
                }
            }
            if let Some(m) = &a.message {
                let _ = write!(out, " {m}");
            }
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        for e in &self.errors {
            let _ = writeln!(out, "error: {e}");
        }
        let _ = writeln!(out, "status {:?} (exit {})", self.status, self.exit_code);
        out
    }
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ScenarioError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let io = |e: std::io::Error| ScenarioError::Io(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

/// Writes `report.json`, `summary.txt` and one rows CSV per audit.
pub fn write_outputs(dir: &Path, report: &Report) -> Result<(), ScenarioError> {
    write_atomic(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
    write_atomic(&dir.join(SUMMARY_FILE), report.summary().as_bytes())?;
    for a in &report.audits {
        if let Some(r) = &a.report {
            write_atomic(&dir.join("audits").join(format!("{}.csv", a.id)), r.rows_csv().as_bytes())?;
        }
    }
    Ok(())
}

fn num(v: &Value) -> String {
    v.as_f64().map_or(String::new(), |x| x.to_string())
}

/// Writes per audit one decay CSV (`series,t,value,in_fit,slope,intercept`)
/// and one slack CSV (`series,t,x,slack`) under `<dir>/plots`, from `report.json`.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| ScenarioError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let report: Value = serde_json::from_str(&text).map_err(|e| ScenarioError::Usage(format!("{}: {e}", path.display())))?;
    let mut written = Vec::new();
    let audits = report["audits"].as_array().cloned().unwrap_or_default();
    for a in &audits {
        let id = a["id"].as_str().unwrap_or("audit");
        let r = &a["report"];
        if r.is_null() {
            continue;
        }
        let rows = r["rows"].as_array().cloned().unwrap_or_default();
        let slopes = r["slopes"].as_array().cloned().unwrap_or_default();
        let series_of = |row: &Value| {
            let f = row["function"].as_str().unwrap_or("");
            match row["bc"].as_str() {
                Some(bc) => format!("{f}:{bc}"),
                None => f.to_string(),
            }
        };

        let mut decay = String::from("series,t,value,in_fit,slope,intercept\n");
        if slopes.is_empty() {
            // Largest left-hand side per series and time.
            let mut keys: Vec<(String, f64, f64)> = Vec::new();
            for row in &rows {
                let (series, t, v) = (series_of(row), row["t"].as_f64().unwrap_or(f64::NAN), row["lhs"].as_f64().unwrap_or(f64::NAN));
                match keys.iter_mut().find(|k| k.0 == series && k.1 == t) {
                    Some(k) => k.2 = k.2.max(v),
                    None => keys.push((series, t, v)),
                }
            }
            for (series, t, v) in keys {
                let _ = writeln!(decay, "{series},{t},{v},0,,");
            }
        } else {
            for fit in &slopes {
                let series = fit["series"].as_str().unwrap_or("");
                let used: Vec<f64> = fit["times"].as_array().map(|v| v.iter().filter_map(Value::as_f64).collect()).unwrap_or_default();
                for row in rows.iter().filter(|r| r["function"].as_str() == Some(series)) {
                    let t = row["t"].as_f64().unwrap_or(f64::NAN);
                    let in_fit = used.iter().any(|u| *u == t) as u8;
                    let _ = writeln!(decay, "{series},{t},{},{in_fit},{},{}", num(&row["lhs"]), num(&fit["slope"]), num(&fit["intercept"]));
                }
            }
        }
        let p = dir.join("plots").join(format!("{id}.decay.csv"));
        write_atomic(&p, decay.as_bytes())?;
        written.push(p);

        let mut slack = String::from("series,t,x,slack\n");
        for row in &rows {
            let x: Vec<String> = row["x"].as_array().map(|v| v.iter().map(num).collect()).unwrap_or_default();
            let _ = writeln!(slack, "{},{},{},{}", series_of(row), num(&row["t"]), x.join(" "), num(&row["slack"]));
        }
        let p = dir.join("plots").join(format!("{id}.slack.csv"));
        write_atomic(&p, slack.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}
