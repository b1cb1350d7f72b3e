//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`) and asserting at its
//! stated tolerance.
//!
//! The heavy criteria share one full verification report per model,
//! generated once at the scales the criteria are stated at.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qkforge::expr::Expr;
use qkforge::models::{fixture, SWEEP_MARGIN};
use qkforge::reduction::{embed, RedEngine};
use qkforge::report::{CheckRecord, Report};
use qkforge::verify::{run_verify, ModelSpec, RunConfig};
use qkforge::vfunc::{VEngine, VFunction};

const SEED: u64 = 7;

fn config(model: &str, points: usize) -> RunConfig {
    RunConfig {
        model: ModelSpec::Builtin(model.into()),
        points,
        seed: SEED,
        ..RunConfig::default()
    }
}

fn shared_report(model: &'static str) -> &'static (Report, Duration) {
    static X1SQ: OnceLock<(Report, Duration)> = OnceLock::new();
    static X1X2: OnceLock<(Report, Duration)> = OnceLock::new();
    static G2: OnceLock<(Report, Duration)> = OnceLock::new();
    static TOY: OnceLock<(Report, Duration)> = OnceLock::new();
    let (cell, points) = match model {
        "x1sq" => (&X1SQ, 100),
        "x1x2" => (&X1X2, 100),
        "x2cubed-over-x1" => (&G2, 50),
        "toy-log" => (&TOY, 100),
        other => panic!("unknown acceptance model {other}"),
    };
    cell.get_or_init(|| {
        let t = Instant::now();
        let report = run_verify(&config(model, points)).expect("verification run failed");
        (report, t.elapsed())
    })
}

fn record<'a>(report: &'a Report, check: &str) -> &'a CheckRecord {
    report
        .checks
        .iter()
        .find(|c| c.check == check)
        .unwrap_or_else(|| panic!("check {check} missing from report for {}", report.model))
}

fn announce(criterion: &str, pass: bool, detail: &str) {
    println!("{} {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{criterion}: {detail}");
}

fn fixture_criterion(criterion: &str, model: &'static str, tol: f64, budget: Duration) {
    let (report, elapsed) = shared_report(model);
    let mut worst: f64 = 0.0;
    for q in ["V", "U", "B", "C"] {
        let rec = record(report, &format!("fixture_{q}"));
        assert!(rec.tolerance <= tol, "fixture_{q} tolerance {} above {tol}", rec.tolerance);
        worst = worst.max(rec.max_residual);
        assert!(rec.pass, "fixture_{q} failed: {:.3e}", rec.max_residual);
    }
    let pass = worst < tol && *elapsed < budget;
    announce(
        criterion,
        pass,
        &format!("{model} V/U/B/C max residual {worst:.3e} < {tol:.1e}, suite ran in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_01_x1sq_fixture_regression() {
    fixture_criterion(
        "criterion 01 (x1sq closed-form tables, 100 pts)",
        "x1sq",
        1e-6,
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_02_x1x2_fixture_regression() {
    fixture_criterion(
        "criterion 02 (x1x2 closed-form tables, 100 pts)",
        "x1x2",
        1e-6,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_03_g2_fixture_regression() {
    fixture_criterion(
        "criterion 03 (x2cubed-over-x1 closed-form tables, 50 pts)",
        "x2cubed-over-x1",
        1e-5,
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_04_toy_model_is_flat() {
    let (report, _) = shared_report("toy-log");
    let rec = record(report, "fixture_flat_metric");
    let pass = rec.pass && rec.tolerance <= 1e-8 && rec.points == 100;
    announce(
        "criterion 04 (toy model assembles the flat R^4 metric, 100 pts)",
        pass,
        &format!("max residual {:.3e} < 1e-8", rec.max_residual),
    );
}

#[test]
fn criterion_05_monopole_equations_with_negative_control() {
    let mut worst: f64 = 0.0;
    for model in ["x1sq", "x1x2", "x2cubed-over-x1", "toy-log"] {
        let (report, _) = shared_report(model);
        let rec = record(report, "monopole");
        assert!(rec.skipped.is_none(), "monopole skipped for {model}");
        assert!(rec.pass && rec.tolerance <= 1e-4, "{model} monopole {:.3e}", rec.max_residual);
        worst = worst.max(rec.max_residual);
    }
    // Negative control: a cubic perturbation with mixed x3 dependence is
    // not polyharmonic (it feeds both the Higgs and the connection
    // stencils inconsistently), so the same residual must blow past the
    // tolerance.
    let fx = fixture("x1sq").unwrap();
    let eng = RedEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (chart, q) = fx.sample_regular(&mut rng, &eng, SWEEP_MARGIN).unwrap();
    let coords = embed(fx.n, &chart, q, None).unwrap();
    let bad = |c: &[f64]| Ok(fx.f.eval(c)? + 0.1 * c[0] * c[0] * c[2]);
    let (r1, r2) = eng.gh.monopole_residual(&bad, fx.n + 1, &coords).unwrap();
    let control = r1.max(r2);
    let pass = worst < 1e-4 && control > 1e-4;
    announce(
        "criterion 05 (monopole equations, 100 pts, all models + negative control)",
        pass,
        &format!("max residual {worst:.3e} < 1e-4; perturbed F gives {control:.3e}"),
    );
}

#[test]
fn criterion_06_polyharmonicity_and_homogeneity() {
    let mut worst: f64 = 0.0;
    for model in ["x1sq", "x1x2", "x2cubed-over-x1", "toy-log"] {
        let (report, _) = shared_report(model);
        for check in ["polyharmonic", "swann"] {
            let rec = record(report, check);
            assert!(rec.skipped.is_none() && rec.pass && rec.tolerance <= 1e-5);
            worst = worst.max(rec.max_residual);
        }
    }
    announce(
        "criterion 06 (polyharmonicity, symmetry, L3 F = 0, L0 F = 2F, all models)",
        worst < 1e-5,
        &format!("max residual {worst:.3e} < 1e-5"),
    );
}

#[test]
fn criterion_07_fiber_independence() {
    let mut worst: f64 = 0.0;
    for model in ["x1sq", "x1x2", "x2cubed-over-x1"] {
        let (report, _) = shared_report(model);
        let rec = record(report, "qindep");
        assert!(rec.skipped.is_none() && rec.pass && rec.tolerance <= 1e-8);
        worst = worst.max(rec.max_residual);
    }
    announce(
        "criterion 07 (V and U agree over 5 fiber points, 1e-8 relative)",
        worst < 1e-8,
        &format!("max relative spread {worst:.3e} < 1e-8"),
    );
}

#[test]
fn criterion_08_reduced_bogomolnyi() {
    let mut worst2: f64 = 0.0;
    for model in ["x1x2", "x2cubed-over-x1"] {
        let (report, _) = shared_report(model);
        let rec = record(report, "bogomolnyi");
        assert!(rec.skipped.is_none() && rec.pass && rec.tolerance <= 1e-4 && rec.points == 50);
        worst2 = worst2.max(rec.max_residual);
    }
    let (report, _) = shared_report("x1sq");
    let rec1 = record(report, "bogomolnyi");
    assert!(rec1.skipped.is_none() && rec1.pass && rec1.tolerance <= 1e-8);
    let pass = worst2 < 1e-4 && rec1.max_residual < 1e-8;
    announce(
        "criterion 08 (dC_K = F_K at 50 pts; x1sq closed dC to 1e-8)",
        pass,
        &format!("n=2 models max {worst2:.3e} < 1e-4; x1sq {:.3e} < 1e-8", rec1.max_residual),
    );
}

#[test]
fn criterion_09_v_constraints_with_negative_control() {
    let veng = VEngine::default();
    let eng = RedEngine::default();
    let mut worst: f64 = 0.0;
    for model in ["x1sq", "x1x2", "x2cubed-over-x1"] {
        let fx = fixture(model).unwrap();
        let vf = fx.v.clone().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        for _ in 0..50 {
            let (chart, _) = fx.sample_regular(&mut rng, &eng, SWEEP_MARGIN).unwrap();
            // Full dependent set (exhaustive mode) at every point.
            let r = veng.constraint_residuals(&vf, &chart, true).unwrap();
            worst = worst.max(r.max());
        }
    }
    // Negative control: a generic cubic is not a valid potential density.
    let bad = VFunction::User {
        n: 2,
        expr: Expr::parse("rho1^3 + eta2^2*chi2 + rho2*eta1^2").unwrap(),
    };
    let fx = fixture("x1x2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut control: f64 = 0.0;
    for _ in 0..10 {
        let (chart, _) = fx.sample_regular(&mut rng, &eng, SWEEP_MARGIN).unwrap();
        let r = veng.constraint_residuals(&bad, &chart, true).unwrap();
        control = control.max(r.max());
    }
    let pass = worst < 1e-5 && control > 1e-5;
    announce(
        "criterion 09 (V constraints incl. exhaustive set, 50 pts + negative control)",
        pass,
        &format!("max residual {worst:.3e} < 1e-5; generic cubic gives {control:.3e}"),
    );
}

#[test]
fn criterion_10_cone_reassembly() {
    let mut worst: f64 = 0.0;
    for model in ["x1sq", "x1x2", "x2cubed-over-x1", "toy-log"] {
        let (report, _) = shared_report(model);
        let rec = record(report, "cone");
        assert!(rec.skipped.is_none() && rec.pass && rec.tolerance <= 1e-5 && rec.points == 20);
        worst = worst.max(rec.max_residual);
    }
    announce(
        "criterion 10 (cone metric reassembles in the sigma coframe, 20 pts/model)",
        worst < 1e-5,
        &format!("max residual {worst:.3e} < 1e-5"),
    );
}

#[test]
fn criterion_11_four_dimensional_agreement() {
    let (report, _) = shared_report("x1sq");
    let rec = record(report, "cp_agreement");
    assert!(rec.skipped.is_none() && rec.tolerance <= 1e-8 && rec.points == 20);
    // The eigenvalue-type constraint rho (V_rr + V_ee) = V_r for V = 2 rho^2,
    // checked on its own sample set.
    let veng = VEngine::default();
    let eng = RedEngine::default();
    let fx = fixture("x1sq").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut eigen: f64 = 0.0;
    for _ in 0..20 {
        let (chart, _) = fx.sample_regular(&mut rng, &eng, SWEEP_MARGIN).unwrap();
        eigen = eigen.max(veng.cp_residual(&VFunction::X1Sq, &chart).unwrap());
    }
    let pass = rec.pass && eigen < 1e-8;
    announce(
        "criterion 11 (n=1 closed forms match general assembly; eigen-residual)",
        pass,
        &format!("dual-route max {:.3e} < 1e-8; eigen-residual {eigen:.3e} < 1e-8", rec.max_residual),
    );
}

#[test]
fn criterion_12_almost_complex_quaternion_algebra() {
    let mut detail = String::new();
    let mut pass = true;
    for (model, pts) in [("x1sq", 10), ("x1x2", 5)] {
        let (report, _) = shared_report(model);
        let rec = record(report, "almost_complex");
        pass &= rec.skipped.is_none() && rec.pass && rec.tolerance <= 1e-3 && rec.points == pts;
        detail.push_str(&format!("{model} {:.3e} @ {} pts; ", rec.max_residual, rec.points));
    }
    announce(
        "criterion 12 (J_i J_j = -delta_ij + eps_ijk J_k, finite-difference Theta)",
        pass,
        &format!("{detail}tolerance 1e-3"),
    );
}

#[test]
fn criterion_13_deterministic_reports() {
    let cfg = config("x1sq", 5);
    let a = run_verify(&cfg).unwrap().to_json();
    let b = run_verify(&cfg).unwrap().to_json();
    let pass = a == b;
    announce(
        "criterion 13 (identical seeds produce byte-identical JSON reports)",
        pass,
        &format!("{} bytes compared", a.len()),
    );
}
