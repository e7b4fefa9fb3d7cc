use halfspace_lab::estimates::{
    audit_asymptotics, audit_c0c1, audit_c1c1, audit_hypercontractivity, audit_log_sobolev, audit_lp_decay, audit_uniform_gradient,
    AuditContext, C1Variant, EstimateError, Verdict,
};
use halfspace_lab::grid::{Bc, GridConfig};
use halfspace_lab::measures::{cesaro_measure, CesaroOptions, MeasureEstimate};
use halfspace_lab::operator::catalog::{self, PredictedConstants};
use halfspace_lab::operator::hypotheses::{check_hypotheses, HypothesisOptions, HypothesisReport};
use halfspace_lab::operator::spec::{log_probe_grid, OperatorSpec};
use halfspace_lab::stochastic::McConfig;

struct Setup {
    spec: OperatorSpec,
    predicted: PredictedConstants,
    hypotheses: HypothesisReport,
    grid: GridConfig,
    measures: Vec<MeasureEstimate>,
}

impl Setup {
    fn ctx(&self) -> AuditContext<'_> {
        AuditContext {
            spec: &self.spec,
            hypotheses: &self.hypotheses,
            predicted: Some(&self.predicted),
            grid: &self.grid,
            measures: &self.measures,
        }
    }
}

fn setup((spec, predicted): (OperatorSpec, PredictedConstants), dt: f64) -> Setup {
    let probes = log_probe_grid(1, 20.0, 40, &[0.0, 1.0]);
    let hypotheses = check_hypotheses(&spec, &probes, &HypothesisOptions::default()).unwrap();
    Setup {
        spec,
        predicted,
        hypotheses,
        grid: GridConfig::new(8.0, vec![513], dt),
        measures: Vec::new(),
    }
}

/// OU is autonomous, so one Cesàro measure serves every time.
fn with_ou_measures(mut s: Setup, times: &[f64]) -> Setup {
    let cfg = McConfig::new(20_000, 0.01, 77);
    let mu = cesaro_measure(&s.spec, 0.0, &[0.5], 20.0, &cfg, &CesaroOptions::default()).unwrap();
    s.measures = times
        .iter()
        .map(|&t| {
            let mut m = mu.clone();
            m.time = t;
            m
        })
        .collect();
    s
}

fn probes(xs: &[f64]) -> Vec<Vec<f64>> {
    xs.iter().map(|&x| vec![x]).collect()
}

#[test]
fn ou_gradient_estimate_without_potential_holds() {
    let s = setup(catalog::ornstein_uhlenbeck(1, 1.0), 1e-3);
    let tanh = |x: &[f64]| x[0].tanh();
    let bump = |x: &[f64]| (-(x[0] - 1.0) * (x[0] - 1.0)).exp() * x[0];
    let data: [(&str, &(dyn Fn(&[f64]) -> f64 + Sync)); 2] = [("tanh", &tanh), ("bump", &bump)];
    let pts = probes(&[0.05, 0.3, 1.0, 2.0, 4.0]);
    for bc in [Bc::Neumann, Bc::Dirichlet] {
        let rep = audit_c1c1(&s.ctx(), C1Variant::CZero, bc, 2.0, &data, 0.0, &[0.05, 0.2, 1.0, 2.0], &pts).unwrap();
        println!("{bc:?}: worst {} tol {} {:?}", rep.worst_slack, rep.tolerance, rep.refinement);
        assert_eq!(rep.constants["K_p"], -1.0);
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!(rep.refinement.unwrap().non_increasing);
        assert!(rep.notes.is_empty());
    }
    let rep = audit_c1c1(&s.ctx(), C1Variant::POne, Bc::Neumann, 1.0, &data, 0.0, &[0.05, 0.5, 2.0], &pts).unwrap();
    assert_eq!(rep.verdict, Verdict::Pass);
    let rep = audit_uniform_gradient(&s.ctx(), C1Variant::CZero, Bc::Neumann, &data, 0.0, &[0.1, 0.5, 2.0], 6.0).unwrap();
    println!("uniform: worst {} tol {}", rep.worst_slack, rep.tolerance);
    assert_eq!(rep.verdict, Verdict::Pass);
}

#[test]
fn constant_dirichlet_datum_violates_the_gradient_estimate() {
    let s = setup(catalog::ornstein_uhlenbeck(1, 1.0), 2.5e-4);
    let one = |_: &[f64]| 1.0;
    let data: [(&str, &(dyn Fn(&[f64]) -> f64 + Sync)); 1] = [("one", &one)];
    let rep = audit_c1c1(&s.ctx(), C1Variant::CZero, Bc::Dirichlet, 2.0, &data, 0.0, &[0.01, 0.05], &probes(&[0.02, 0.05, 0.1])).unwrap();
    println!("worst {} tol {}", rep.worst_slack, rep.tolerance);
    assert_eq!(rep.verdict, Verdict::Fail);
    assert!(rep.worst_slack > 10.0);
    assert!(rep.notes.iter().any(|n| n.contains("outside the Dirichlet class")));
    // |∇G_D 1|² near the wall is about 1/(π t) against a right-hand side of 0.
    let row = rep.rows.iter().find(|r| r.t == 0.01 && r.x[0] == 0.02).unwrap();
    let heat_like = (-0.02f64 * 0.02 / 0.04).exp().powi(2) / (std::f64::consts::PI * 0.01);
    assert!((row.lhs / heat_like - 1.0).abs() < 0.1, "{} vs {heat_like}", row.lhs);
}

#[test]
fn heat_short_time_estimate_has_stable_constant() {
    let s = setup(catalog::heat(1, 0.0), 2.5e-4);
    let step = |x: &[f64]| ((x[0] - 2.0) / 0.2).tanh();
    let data: [(&str, &(dyn Fn(&[f64]) -> f64 + Sync)); 1] = [("step", &step)];
    let ts = [0.0125, 0.025, 0.05, 0.1];
    let pts = probes(&[0.02, 0.1, 0.5, 1.5, 2.0, 3.0]);
    let rep = audit_c0c1(&s.ctx(), Bc::Dirichlet, 2.0, &data, 0.0, &ts, &pts, 6.0, None).unwrap();
    println!("{:?} {:?}", rep.fitted, rep.notes);
    assert_eq!(rep.verdict, Verdict::Pass);
    // √t·‖∇G_D f‖∞ at the wall tends to |f(0)|/√π.
    let scaled = rep.fitted["scaled_sup:step"];
    assert!((scaled * std::f64::consts::PI.sqrt() / 10f64.tanh() - 1.0).abs() < 0.1);

    let fitted = rep.fitted["c_p_refined"];
    let inflated = audit_c0c1(&s.ctx(), Bc::Dirichlet, 2.0, &data, 0.0, &ts, &pts, 6.0, Some(10.0 * fitted)).unwrap();
    assert_eq!(inflated.verdict, Verdict::Pass);
    assert!(inflated.worst_slack < 0.0);

    let zero = |_: &[f64]| 0.0;
    let rep = audit_c0c1(&s.ctx(), Bc::Dirichlet, 2.0, &[("zero", &zero)], 0.0, &ts, &pts, 6.0, Some(1.0)).unwrap();
    assert_eq!(rep.worst_slack, 0.0);
}

#[test]
fn ou_local_uniform_decay_rates() {
    let s = with_ou_measures(setup(catalog::ornstein_uhlenbeck(1, 1.0), 1e-3), &[0.0]);
    let x = |p: &[f64]| p[0];
    let tanh = |p: &[f64]| p[0].tanh();
    let ts: Vec<f64> = (1..=10).map(|k| 0.25 * k as f64).collect();
    let rep = audit_asymptotics(&s.ctx(), Bc::Neumann, &[("x", &x)], 0.0, &ts, 3.0).unwrap();
    let fit = &rep.slopes[0];
    println!("neumann slope {} r2 {} times {:?} notes {:?}", fit.slope, fit.r_squared, fit.times, rep.notes);
    assert_eq!(rep.constants["sigma0"], -1.0);
    assert_eq!(rep.verdict, Verdict::Pass);
    // Deviations from the mean live in the even Hermite modes, the slowest decaying like e^{-2t}.
    assert!((fit.slope + 2.0).abs() < 0.3);

    // Far from the wall the killing takes a while to be felt, so look at later times.
    let late: Vec<f64> = (1..=10).map(|k| 0.5 * k as f64).collect();
    let rep = audit_asymptotics(&s.ctx(), Bc::Dirichlet, &[("tanh", &tanh)], 0.0, &late, 3.0).unwrap();
    let fit = &rep.slopes[0];
    println!("dirichlet slope {}", fit.slope);
    assert_eq!(rep.verdict, Verdict::Pass);
    assert!((fit.slope + 1.0).abs() < 0.1);
}

#[test]
fn ou_lp_decay_and_functional_inequalities() {
    let ts: Vec<f64> = (1..=8).map(|k| 0.25 * k as f64).collect();
    let mut all = vec![0.0, std::f64::consts::LN_2 / 2.0, 1.0];
    all.extend(ts.iter().copied());
    let s = with_ou_measures(setup(catalog::ornstein_uhlenbeck(1, 1.0), 1e-3), &all);
    let tanh = |p: &[f64]| p[0].tanh();
    let x = |p: &[f64]| p[0];
    let data: [(&str, &(dyn Fn(&[f64]) -> f64 + Sync)); 2] = [("tanh", &tanh), ("x", &x)];
    for bc in [Bc::Neumann, Bc::Dirichlet] {
        let rep = audit_lp_decay(&s.ctx(), bc, 2.0, &data, 0.0, &ts).unwrap();
        for f in &rep.slopes {
            println!("{bc:?} {} slope {} ({} pts)", f.series, f.slope, f.times.len());
        }
        assert_eq!(rep.verdict, Verdict::Pass);
    }

    let bump = |p: &[f64]| {
        let r = (p[0] - 1.5).abs();
        if r < 1.0 { (-1.0 / (1.0 - r * r)).exp() } else { 0.0 }
    };
    let narrow = |p: &[f64]| {
        let r = (p[0] - 0.8).abs() / 0.5;
        if r < 1.0 { 3.0 * (-1.0 / (1.0 - r * r)).exp() } else { 0.0 }
    };
    let rep = audit_log_sobolev(&s.ctx(), 2.0, &[("bump", &bump), ("narrow", &narrow)], 1.0).unwrap();
    println!("log-sobolev {:?}", rep.fitted);
    assert_eq!(rep.verdict, Verdict::Pass);
    assert_eq!(
        audit_log_sobolev(&s.ctx(), 2.0, &[("tanh", &tanh)], 1.0).unwrap_err(),
        EstimateError::NotCompactlySupported("tanh".into())
    );

    let t = std::f64::consts::LN_2 / 2.0;
    for bc in [Bc::Neumann, Bc::Dirichlet] {
        let rep = audit_hypercontractivity(&s.ctx(), bc, 2.0, Some(3.0), &data, 0.0, &[t]).unwrap();
        println!("{bc:?} hyper {:?}", rep.rows);
        assert_eq!(rep.verdict, Verdict::Pass);
    }
    let err = audit_hypercontractivity(&s.ctx(), Bc::Neumann, 2.0, Some(3.5), &data, 0.0, &[t]).unwrap_err();
    assert!(matches!(err, EstimateError::Inadmissible { .. }));
    let err = audit_hypercontractivity(&s.ctx(), Bc::Neumann, 2.0, None, &data, 0.0, &[0.3]).unwrap_err();
    assert_eq!(err, EstimateError::MissingMeasure(0.3));
}

#[test]
fn audits_refuse_without_their_hypotheses() {
    let heat = setup(catalog::heat(1, 0.0), 1e-3);
    let one = |_: &[f64]| 1.0;
    let data: [(&str, &(dyn Fn(&[f64]) -> f64 + Sync)); 1] = [("one", &one)];
    let err = audit_asymptotics(&heat.ctx(), Bc::Dirichlet, &data, 0.0, &[1.0, 2.0, 3.0], 2.0).unwrap_err();
    assert_eq!(
        err,
        EstimateError::Refused {
            audit: "asymptotics".into(),
            hypothesis: "dissipativity_r".into()
        }
    );
    let massive = setup(catalog::heat(1, 1.0), 1e-3);
    let err = audit_c1c1(&massive.ctx(), C1Variant::CZero, Bc::Neumann, 2.0, &data, 0.0, &[1.0], &probes(&[1.0])).unwrap_err();
    assert!(matches!(err, EstimateError::Refused { ref hypothesis, .. } if hypothesis == "potential_zero"));
}
