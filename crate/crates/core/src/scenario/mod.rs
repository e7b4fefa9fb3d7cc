//! JSON scenarios: parse, build the operator, check hypotheses, build the
//! measures the audits need, run the audits and write the report.

pub mod config;
pub mod presets;
pub mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimates::{self, AuditContext, Datum, EstimateError, EstimateReport, ProbeRow, Verdict};
use crate::expr::Expr;
use crate::grid::Bc;
use crate::measures::{cesaro_measure, invariance_residual, MeasureEstimate};
use crate::operator::spec::log_probe_grid;
use crate::operator::{check_hypotheses, lyapunov_rate, HypothesisOptions, OperatorError, OperatorSpec, SpecDocument};
use crate::stochastic::{derive_seed, McConfig};

pub use config::{AuditSpec, Scenario, SCHEMA_VERSION};
pub use report::{emit_plots, AuditOutcome, AuditStatus, MeasureSummary, OperatorSummary, Report, RunStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Schema(_) | ScenarioError::Usage(_) | ScenarioError::Io(_) => 2,
            ScenarioError::Refused(_) => 3,
            ScenarioError::Numerical(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; defaults to the scenario's `output`, else `runs/<name>`.
    pub out: Option<PathBuf>,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub out_dir: PathBuf,
}

/// Runs a scenario file and writes its outputs. Operator and schema errors
/// are returned; audit-level problems are recorded in the report.
pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<RunOutcome, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_scenario_str(&text, base, opts)
}

/// As [`run_scenario`], for a document already in memory; relative output
/// paths resolve against `base`.
pub fn run_scenario_str(text: &str, base: &Path, opts: &RunOptions) -> Result<RunOutcome, ScenarioError> {
    let scenario = Scenario::from_str(text)?;
    let out_dir = match (&opts.out, &scenario.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => base.join("runs").join(&scenario.name),
    };
    let report = in_pool(opts.threads, || execute(&scenario, text, opts.seed))??;
    report::write_outputs(&out_dir, &report)?;
    Ok(RunOutcome { report, out_dir })
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ScenarioError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ScenarioError::Usage(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn operator_error(e: OperatorError) -> ScenarioError {
    match e {
        OperatorError::CatalogConstraint(_) | OperatorError::UnboundedConstant(_) => ScenarioError::Refused(e.to_string()),
        OperatorError::QuadratureNonconvergence { .. } => ScenarioError::Numerical(e.to_string()),
        _ => ScenarioError::Schema(format!("operator: {e}")),
    }
}

type DatumFn = Box<dyn Fn(&[f64]) -> f64 + Sync + Send>;

fn build_data(scenario: &Scenario, dim: usize) -> Result<Vec<(String, DatumFn)>, ScenarioError> {
    scenario
        .data
        .iter()
        .map(|(name, src)| {
            let e = Expr::parse(src, dim).map_err(|e| ScenarioError::Schema(format!("data.{name}: {e}")))?;
            if e.depends_on_time() {
                return Err(ScenarioError::Schema(format!("data.{name}: test functions must not depend on t")));
            }
            let f: DatumFn = Box::new(move |x: &[f64]| e.eval(0.0, x));
            Ok((name.clone(), f))
        })
        .collect()
}

fn mc_config(scenario: &Scenario, particles: Option<usize>, seed: u64) -> McConfig {
    McConfig {
        particles: particles.unwrap_or(scenario.mc.particles),
        dt: scenario.mc.dt,
        seed,
        bridge_correction: scenario.mc.bridge_correction,
        antithetic: scenario.mc.antithetic,
        blowup_radius: scenario.mc.blowup_radius,
    }
}

fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Builds every report field except the outputs on disk.
fn execute(scenario: &Scenario, text: &str, seed_override: Option<u64>) -> Result<Report, ScenarioError> {
    let seed = seed_override.unwrap_or(scenario.seed);
    let doc = SpecDocument::from_value(&scenario.operator).map_err(operator_error)?;
    let (spec, predicted) = doc.build().map_err(operator_error)?;
    let dim = spec.coeffs.dim;
    let data = build_data(scenario, dim)?;

    let mut report = Report {
        schema_version: SCHEMA_VERSION,
        tool_version: crate::VERSION.to_string(),
        config_sha256: config_hash(text),
        scenario: scenario.name.clone(),
        seed,
        operator: Some(OperatorSummary {
            name: spec.name.clone(),
            dim,
            structure: spec.structure,
            constants: spec.constants.clone(),
        }),
        hypotheses: None,
        predicted: predicted.clone(),
        lyapunov: None,
        measures: Vec::new(),
        audits: Vec::new(),
        notes: Vec::new(),
        errors: Vec::new(),
        status: RunStatus::Pass,
        exit_code: 0,
    };

    let s = scenario.window.s;
    let probe_times: Vec<f64> = if spec.structure.autonomous {
        vec![s]
    } else {
        std::iter::once(s).chain(scenario.window.t_list.iter().copied()).collect()
    };
    let h = &scenario.hypotheses;
    let probes = log_probe_grid(dim, h.probe_radius, h.probes_per_axis, &probe_times);
    let hyp_opts = HypothesisOptions {
        p_list: h.p_list.clone(),
        supplied_cp: h.supplied_cp.clone(),
        tol: h.tol,
    };
    let hypotheses = check_hypotheses(&spec, &probes, &hyp_opts).map_err(operator_error)?;

    if let Some(ly) = &scenario.lyapunov {
        match lyapunov_rate(&spec, &probes, &ly.radii, ly.threshold) {
            Ok(table) => {
                if scenario.grid.radius < table.r_star {
                    report.notes.push(format!(
                        "grid radius {} is below the Lyapunov radius {}; far-field truncation is not justified",
                        scenario.grid.radius, table.r_star
                    ));
                }
                report.lyapunov = Some(table);
            }
            Err(e) => report.notes.push(format!("lyapunov: {e}")),
        }
    }

    let measures = match build_measures(scenario, &spec, seed) {
        Ok(m) => m,
        Err(e) => {
            report.hypotheses = Some(hypotheses);
            report.errors.push(e.to_string());
            report.status = match e {
                ScenarioError::Refused(_) => RunStatus::Refused,
                ScenarioError::Numerical(_) => RunStatus::NumericalFailure,
                _ => RunStatus::Usage,
            };
            report.finalize();
            return Ok(report);
        }
    };
    report.measures = measures.iter().map(summarize).collect();

    let ctx = AuditContext {
        spec: &spec,
        hypotheses: &hypotheses,
        predicted: predicted.as_ref(),
        grid: &scenario.grid,
        measures: &measures,
    };
    let ids = scenario.audit_ids();
    let outcomes: Vec<AuditOutcome> = scenario
        .audits
        .par_iter()
        .zip(ids.par_iter())
        .map(|(a, id)| run_audit(scenario, &ctx, &data, a, id, seed))
        .collect();
    report.audits = outcomes;
    report.hypotheses = Some(hypotheses);
    report.finalize();
    Ok(report)
}

/// Measures at every time an audit reads. Autonomous operators get one
/// Cesàro measure relabelled at each time; otherwise one per time.
fn build_measures(scenario: &Scenario, spec: &OperatorSpec, seed: u64) -> Result<Vec<MeasureEstimate>, ScenarioError> {
    let times = config::union_times(scenario.audits.iter().flat_map(|a| a.measure_times(&scenario.window)));
    let Some(ms) = &scenario.measures else {
        return Ok(Vec::new());
    };
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let err = |e: crate::measures::MeasureError| match e {
        crate::measures::MeasureError::PotentialNotZero => ScenarioError::Refused(format!("measures: {e}")),
        crate::measures::MeasureError::Invalid(_) => ScenarioError::Schema(format!("measures: {e}")),
        _ => ScenarioError::Numerical(format!("measures: {e}")),
    };
    if spec.structure.autonomous {
        let cfg = mc_config(scenario, ms.particles, derive_seed(seed, "measure"));
        let base = cesaro_measure(spec, times[0], &ms.x0, ms.horizon, &cfg, &ms.cesaro).map_err(err)?;
        Ok(times
            .iter()
            .map(|&t| MeasureEstimate { time: t, ..base.clone() })
            .collect())
    } else {
        times
            .par_iter()
            .map(|&t| {
                let cfg = mc_config(scenario, ms.particles, derive_seed(seed, &format!("measure:{t}")));
                cesaro_measure(spec, t, &ms.x0, ms.horizon, &cfg, &ms.cesaro).map_err(err)
            })
            .collect()
    }
}

fn summarize(m: &MeasureEstimate) -> MeasureSummary {
    let d = m.dim;
    let (normal_mean, normal_mean_stderr) = m.expect_with_stderr(&|x: &[f64]| x[d - 1]);
    let second_moment = m.expect(&|x: &[f64]| x.iter().map(|v| v * v).sum());
    MeasureSummary {
        time: m.time,
        points: m.len(),
        block: m.block,
        provenance: m.provenance.clone(),
        normal_mean,
        normal_mean_stderr,
        second_moment,
    }
}

fn status_of(e: &EstimateError) -> AuditStatus {
    match e {
        EstimateError::Refused { .. }
        | EstimateError::NotCompactlySupported(_)
        | EstimateError::Inadmissible { .. }
        | EstimateError::MissingConstant(_) => AuditStatus::Refused,
        EstimateError::MissingMeasure(_) | EstimateError::Invalid(_) => AuditStatus::Invalid,
        EstimateError::Grid(_) | EstimateError::Measure(_) => AuditStatus::NumericalFailure,
    }
}

fn run_audit(
    scenario: &Scenario,
    ctx: &AuditContext,
    data: &[(String, DatumFn)],
    spec: &AuditSpec,
    id: &str,
    seed: u64,
) -> AuditOutcome {
    let pick: Vec<Datum> = spec
        .data()
        .iter()
        .filter_map(|n| data.iter().find(|(k, _)| k == n))
        .map(|(k, f)| (k.as_str(), f.as_ref() as &(dyn Fn(&[f64]) -> f64 + Sync)))
        .collect();
    let s = scenario.window.s;
    let ts = spec.t_list(&scenario.window);
    let audit_seed = derive_seed(seed, &format!("audit:{id}"));
    let result = match spec {
        AuditSpec::Contraction { .. } => estimates::audit_contraction(ctx, &pick, s, ts),
        AuditSpec::CrossCheck { bc, t, probes, particles, .. } => {
            let mc = mc_config(scenario, *particles, audit_seed);
            estimates::audit_cross_check(ctx, *bc, &pick, s, *t, probes, &mc)
        }
        AuditSpec::Invariance { bc, pairs, .. } => {
            let mc = mc_config(scenario, None, audit_seed);
            invariance_report(ctx, *bc, &pick, pairs, &mc)
        }
        AuditSpec::C1c1 { variant, bc, p, probes, .. } => estimates::audit_c1c1(ctx, *variant, *bc, *p, &pick, s, ts, probes),
        AuditSpec::C0c1 { bc, p, probes, radius, c_p, .. } => {
            estimates::audit_c0c1(ctx, *bc, *p, &pick, s, ts, probes, *radius, *c_p)
        }
        AuditSpec::UniformGradient { variant, bc, radius, .. } => {
            estimates::audit_uniform_gradient(ctx, *variant, *bc, &pick, s, ts, *radius)
        }
        AuditSpec::Asymptotics { bc, radius, .. } => estimates::audit_asymptotics(ctx, *bc, &pick, s, ts, *radius),
        AuditSpec::LpDecay { bc, p, .. } => estimates::audit_lp_decay(ctx, *bc, *p, &pick, s, ts),
        AuditSpec::LogSobolev { p, t, .. } => estimates::audit_log_sobolev(ctx, *p, &pick, *t),
        AuditSpec::Hypercontractivity { bc, q, p, .. } => estimates::audit_hypercontractivity(ctx, *bc, *q, *p, &pick, s, ts),
    };
    match result {
        Ok(r) => AuditOutcome {
            id: id.to_string(),
            kind: spec.kind().to_string(),
            status: r.verdict.into(),
            message: None,
            report: Some(r),
        },
        Err(e) => AuditOutcome {
            id: id.to_string(),
            kind: spec.kind().to_string(),
            status: status_of(&e),
            message: Some(e.to_string()),
            report: None,
        },
    }
}

/// Invariance (Neumann) or sub-invariance (Dirichlet) of the measure family,
/// reported as probe rows with `slack = residual` and tolerance `3σ`.
fn invariance_report(
    ctx: &AuditContext,
    bc: Bc,
    data: &[Datum],
    pairs: &[(f64, f64)],
    mc: &McConfig,
) -> Result<EstimateReport, EstimateError> {
    let rows = invariance_residual(ctx.measures, ctx.spec, bc, data, pairs, mc, None)?;
    let s = pairs.first().map_or(0.0, |p| p.0);
    let mut rep = EstimateReport::new("invariance", s);
    rep.variant = Some(format!("{bc:?}").to_lowercase());
    let mut all_pass = true;
    let mut worst = f64::NEG_INFINITY;
    for r in &rows {
        // Neumann checks |residual|; Dirichlet only the upper side.
        let slack = if bc == Bc::Neumann { r.residual.abs() } else { r.residual };
        let tol = 3.0 * r.combined_stderr;
        if slack - tol > worst {
            worst = slack - tol;
            rep.worst_slack = slack;
            rep.tolerance = tol;
        }
        all_pass &= r.pass;
        rep.rows.push(ProbeRow {
            function: r.function.clone(),
            bc: Some(r.bc),
            t: r.t,
            x: vec![r.s],
            lhs: r.lhs,
            rhs: r.rhs,
            slack,
        });
    }
    rep.notes.push("x holds the initial time s of each (s, t) pair".into());
    rep.verdict = if all_pass { Verdict::Pass } else { Verdict::Fail };
    Ok(rep)
}
