//! Scenario documents (schema version 1).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ScenarioError;
use crate::estimates::C1Variant;
use crate::grid::{Bc, GridConfig};
use crate::measures::CesaroOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    /// Master seed; every stochastic step derives its own seed from it.
    pub seed: u64,
    /// Catalog reference or expression document.
    pub operator: Value,
    #[serde(default)]
    pub hypotheses: HypothesisSettings,
    #[serde(default)]
    pub lyapunov: Option<LyapunovSettings>,
    pub window: Window,
    /// Named data in the expression language.
    #[serde(default)]
    pub data: BTreeMap<String, String>,
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub measures: Option<MeasureSettings>,
    #[serde(default)]
    pub audits: Vec<AuditSpec>,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesisSettings {
    pub p_list: Vec<f64>,
    /// `[p, C_p]` pairs checked against the probe maximum.
    pub supplied_cp: Vec<(f64, f64)>,
    pub probe_radius: f64,
    pub probes_per_axis: usize,
    pub tol: f64,
}

impl Default for HypothesisSettings {
    fn default() -> Self {
        HypothesisSettings {
            p_list: vec![2.0],
            supplied_cp: Vec::new(),
            probe_radius: 20.0,
            probes_per_axis: 24,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSettings {
    pub threshold: f64,
    pub radii: Vec<f64>,
}

impl Default for LyapunovSettings {
    fn default() -> Self {
        LyapunovSettings {
            threshold: 0.5,
            radii: vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub s: f64,
    pub t_list: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    pub particles: usize,
    pub dt: f64,
    pub antithetic: bool,
    pub bridge_correction: bool,
    pub blowup_radius: Option<f64>,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            particles: 10_000,
            dt: 0.01,
            antithetic: false,
            bridge_correction: true,
            blowup_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSettings {
    pub x0: Vec<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub particles: Option<usize>,
    #[serde(default)]
    pub cesaro: CesaroOptions,
}

/// One requested audit. Omitted `s` and `t_list` fall back to the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AuditSpec {
    Contraction {
        data: Vec<String>,
        #[serde(default)]
        t_list: Option<Vec<f64>>,
    },
    CrossCheck {
        bc: Bc,
        data: Vec<String>,
        t: f64,
        probes: Vec<Vec<f64>>,
        #[serde(default)]
        particles: Option<usize>,
    },
    Invariance {
        bc: Bc,
        data: Vec<String>,
        pairs: Vec<(f64, f64)>,
    },
    C1c1 {
        variant: C1Variant,
        bc: Bc,
        p: f64,
        data: Vec<String>,
        probes: Vec<Vec<f64>>,
        #[serde(default)]
        t_list: Option<Vec<f64>>,
    },
    C0c1 {
        bc: Bc,
        p: f64,
        data: Vec<String>,
        probes: Vec<Vec<f64>>,
        radius: f64,
        #[serde(default)]
        c_p: Option<f64>,
        #[serde(default)]
        t_list: Option<Vec<f64>>,
    },
    UniformGradient {
        variant: C1Variant,
        bc: Bc,
        data: Vec<String>,
        radius: f64,
        #[serde(default)]
        t_list: Option<Vec<f64>>,
    },
    Asymptotics {
        bc: Bc,
        data: Vec<String>,
        radius: f64,
        #[serde(default)]
        t_list: Option<Vec<f64>>,
    },
    LpDecay {
        bc: Bc,
        p: f64,
        data: Vec<String>,
        #[serde(default)]
        t_list: Option<Vec<f64>>,
    },
    LogSobolev {
        p: f64,
        data: Vec<String>,
        t: f64,
    },
    Hypercontractivity {
        bc: Bc,
        q: f64,
        #[serde(default)]
        p: Option<f64>,
        data: Vec<String>,
        #[serde(default)]
        t_list: Option<Vec<f64>>,
    },
}

impl AuditSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AuditSpec::Contraction { .. } => "contraction",
            AuditSpec::CrossCheck { .. } => "cross_check",
            AuditSpec::Invariance { .. } => "invariance",
            AuditSpec::C1c1 { .. } => "c1c1",
            AuditSpec::C0c1 { .. } => "c0c1",
            AuditSpec::UniformGradient { .. } => "uniform_gradient",
            AuditSpec::Asymptotics { .. } => "asymptotics",
            AuditSpec::LpDecay { .. } => "lp_decay",
            AuditSpec::LogSobolev { .. } => "log_sobolev",
            AuditSpec::Hypercontractivity { .. } => "hypercontractivity",
        }
    }

    pub fn data(&self) -> &[String] {
        match self {
            AuditSpec::Contraction { data, .. }
            | AuditSpec::CrossCheck { data, .. }
            | AuditSpec::Invariance { data, .. }
            | AuditSpec::C1c1 { data, .. }
            | AuditSpec::C0c1 { data, .. }
            | AuditSpec::UniformGradient { data, .. }
            | AuditSpec::Asymptotics { data, .. }
            | AuditSpec::LpDecay { data, .. }
            | AuditSpec::LogSobolev { data, .. }
            | AuditSpec::Hypercontractivity { data, .. } => data,
        }
    }

    fn own_t_list(&self) -> Option<&[f64]> {
        match self {
            AuditSpec::Contraction { t_list, .. }
            | AuditSpec::C1c1 { t_list, .. }
            | AuditSpec::C0c1 { t_list, .. }
            | AuditSpec::UniformGradient { t_list, .. }
            | AuditSpec::Asymptotics { t_list, .. }
            | AuditSpec::LpDecay { t_list, .. }
            | AuditSpec::Hypercontractivity { t_list, .. } => t_list.as_deref(),
            _ => None,
        }
    }

    /// The audit's time list, falling back to the window.
    pub fn t_list<'a>(&'a self, window: &'a Window) -> &'a [f64] {
        self.own_t_list().unwrap_or(&window.t_list)
    }

    /// Times at which the audit reads measures from the evolution system.
    pub fn measure_times(&self, window: &Window) -> Vec<f64> {
        let s = window.s;
        match self {
            AuditSpec::Invariance { pairs, .. } => pairs.iter().flat_map(|&(a, b)| [a, b]).collect(),
            AuditSpec::Asymptotics { bc: Bc::Neumann, .. } => vec![s],
            AuditSpec::LpDecay { .. } | AuditSpec::Hypercontractivity { .. } => {
                std::iter::once(s).chain(self.t_list(window).iter().copied()).collect()
            }
            AuditSpec::LogSobolev { t, .. } => vec![*t],
            _ => Vec::new(),
        }
    }
}

/// Sorted union of time lists, deduplicated to 1e-12.
pub fn union_times(lists: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut all: Vec<f64> = lists.into_iter().collect();
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    all
}

fn strictly_increasing(ts: &[f64]) -> bool {
    ts.windows(2).all(|w| w[1] > w[0])
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_str(text: &str) -> Result<Scenario, ScenarioError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Schema(format!("invalid JSON: {e}")))?;
        match value.get("schema_version").and_then(Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(ScenarioError::Schema(format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})"))),
            None => return Err(ScenarioError::Schema("missing field `schema_version`".into())),
        }
        // Re-parse from text so that errors carry line and column.
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Schema(m));
        if self.window.t_list.is_empty() || !strictly_increasing(&self.window.t_list) {
            return bad("window.t_list must be non-empty and strictly increasing".into());
        }
        if self.window.t_list[0] <= self.window.s {
            return bad("window.t_list must start after window.s".into());
        }
        let names: BTreeSet<&str> = self.data.keys().map(String::as_str).collect();
        for (i, a) in self.audits.iter().enumerate() {
            for d in a.data() {
                if !names.contains(d.as_str()) {
                    return bad(format!("audits[{i}] ({}): unknown datum `{d}`", a.kind()));
                }
            }
            if a.data().is_empty() {
                return bad(format!("audits[{i}] ({}): data must not be empty", a.kind()));
            }
            let ts = a.t_list(&self.window);
            if !strictly_increasing(ts) || ts.first().is_some_and(|t| *t <= self.window.s) {
                return bad(format!("audits[{i}] ({}): t_list must be strictly increasing and after s", a.kind()));
            }
            if !a.measure_times(&self.window).is_empty() && self.measures.is_none() {
                return bad(format!("audits[{i}] ({}): needs a `measures` section", a.kind()));
            }
        }
        Ok(())
    }

    /// Audit identifiers `NN_kind`, in document order.
    pub fn audit_ids(&self) -> Vec<String> {
        self.audits.iter().enumerate().map(|(i, a)| format!("{i:02}_{}", a.kind())).collect()
    }
}
