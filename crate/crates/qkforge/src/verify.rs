//! Verification orchestration: runs every residual check of the pipeline
//! over seeded sample sweeps and assembles a `Report`.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::expr::Expr;
use crate::gh::Representative;
use crate::models::{fixture, regression_sweep, ModelFixture, SWEEP_MARGIN};
use crate::quaternion::Quaternion;
use crate::reduction::{embed, QkInputs, RedEngine};
use crate::report::{CheckRecord, Environment, QkOutput, Report};
use crate::twistor::{
    polyharmonicity_residual, swann_homogeneity_residual, FFunction, Prepotential,
};
use crate::vfunc::{chart_dim, rho_idx, VEngine};
use crate::{Error, Result};

/// Model selection: a built-in fixture or a user prepotential.
#[derive(Clone, Debug)]
pub enum ModelSpec {
    Builtin(String),
    User { prepotential: String, degree: f64 },
}

/// One verification run's configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub points: usize,
    pub seed: u64,
    /// Per-check-class tolerance overrides.
    pub tol: BTreeMap<String, f64>,
    /// Evaluate the full (dependent) constraint set instead of the
    /// independent subset.
    pub exhaustive: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSpec::Builtin("x1sq".into()),
            points: 100,
            seed: 7,
            tol: BTreeMap::new(),
            exhaustive: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::InvalidConfig("points must be >= 1".into()));
        }
        for (k, v) in &self.tol {
            if *v <= 0.0 {
                return Err(Error::InvalidConfig(format!("tolerance {k} must be positive")));
            }
        }
        Ok(())
    }

    fn tol_or(&self, class: &str, default: f64) -> f64 {
        self.tol.get(class).copied().unwrap_or(default)
    }

    /// Parse a flat key=value config file body; later flags override these
    /// values at the CLI layer.
    pub fn apply_file(&mut self, body: &str) -> Result<()> {
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: missing '='", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| {
                Error::Parse(format!("config line {}: {key}: {e}", lineno + 1))
            };
            match key {
                "model" => self.model = ModelSpec::Builtin(value.to_string()),
                "prepotential" => {
                    let degree = match &self.model {
                        ModelSpec::User { degree, .. } => *degree,
                        _ => 2.0,
                    };
                    self.model =
                        ModelSpec::User { prepotential: value.to_string(), degree };
                }
                "degree" => {
                    let d: f64 = value.parse().map_err(|e| bad(&e))?;
                    match &mut self.model {
                        ModelSpec::User { degree, .. } => *degree = d,
                        _ if d == 2.0 => {}
                        _ => {
                            return Err(Error::InvalidConfig(
                                "degree applies to user prepotentials".into(),
                            ))
                        }
                    }
                }
                "points" => self.points = value.parse().map_err(|e| bad(&e))?,
                "seed" => self.seed = value.parse().map_err(|e| bad(&e))?,
                "exhaustive" => self.exhaustive = value.parse().map_err(|e| bad(&e))?,
                _ if key.starts_with("tol.") => {
                    let v: f64 = value.parse().map_err(|e| bad(&e))?;
                    self.tol.insert(key["tol.".len()..].to_string(), v);
                }
                _ => return Err(Error::Parse(format!("config line {}: unknown key {key}", lineno + 1))),
            }
        }
        Ok(())
    }
}

/// A resolved model: its generating function plus the optional fixture
/// closed forms.
struct Resolved {
    name: String,
    f: FFunction,
    n: usize,
    fx: Option<ModelFixture>,
}

fn resolve(model: &ModelSpec) -> Result<Resolved> {
    match model {
        ModelSpec::Builtin(id) => {
            let fx = fixture(id)?;
            Ok(Resolved { name: fx.id.to_string(), f: fx.f.clone(), n: fx.n, fx: Some(fx) })
        }
        ModelSpec::User { prepotential, degree } => {
            let expr = Expr::parse(prepotential)?;
            let arity = expr
                .variables()
                .iter()
                .filter_map(|v| v.strip_prefix('X').and_then(|s| s.parse::<usize>().ok()))
                .max()
                .ok_or_else(|| {
                    Error::InvalidConfig("prepotential must mention X1..Xn".into())
                })?;
            let p = Prepotential::User { expr, arity, degree: *degree };
            p.validate_degree(*degree)?;
            if (*degree - 2.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "prepotentials must be homogeneous of degree 2, got {degree}"
                )));
            }
            Ok(Resolved {
                name: format!("user:{prepotential}"),
                f: FFunction::CMap(p),
                n: arity,
                fx: None,
            })
        }
    }
}

/// Sample a regular (chart, q) pair for a resolved model.
fn sample_point(
    res: &Resolved,
    eng: &RedEngine,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Quaternion)> {
    match &res.fx {
        Some(fx) => fx.sample_regular(rng, eng, SWEEP_MARGIN),
        None => {
            // User models share the built-in sampling box.
            let proxy = ModelFixture {
                id: "user",
                label: "user prepotential",
                n: res.n,
                f: res.f.clone(),
                v: None,
                table_tol: 0.0,
            };
            proxy.sample_regular(rng, eng, SWEEP_MARGIN)
        }
    }
}

fn sample_fibers(
    res: &Resolved,
    eng: &RedEngine,
    rng: &mut ChaCha8Rng,
    chart: &[f64],
    count: usize,
) -> Result<Vec<Quaternion>> {
    let proxy = match &res.fx {
        Some(fx) => fx.clone(),
        None => ModelFixture {
            id: "user",
            label: "user prepotential",
            n: res.n,
            f: res.f.clone(),
            v: None,
            table_tol: 0.0,
        },
    };
    proxy.sample_fibers(rng, eng, chart, count, SWEEP_MARGIN)
}

/// Fold a per-point residual stream into a check record.
struct Agg {
    check: &'static str,
    anchor: &'static str,
    tolerance: f64,
    points: usize,
    max_residual: f64,
    worst_point: Vec<f64>,
}

impl Agg {
    fn new(check: &'static str, anchor: &'static str, tolerance: f64) -> Self {
        Agg { check, anchor, tolerance, points: 0, max_residual: 0.0, worst_point: vec![] }
    }

    fn add(&mut self, residual: f64, point: &[f64]) {
        self.points += 1;
        if residual > self.max_residual || self.worst_point.is_empty() {
            self.max_residual = residual;
            self.worst_point = point.to_vec();
        }
    }

    fn record(self) -> CheckRecord {
        CheckRecord {
            check: self.check.into(),
            anchor: self.anchor.into(),
            points: self.points,
            max_residual: self.max_residual,
            tolerance: self.tolerance,
            pass: self.max_residual < self.tolerance,
            worst_point: self.worst_point,
            skipped: None,
        }
    }
}

fn point_coords(chart: &[f64], q: Quaternion) -> Vec<f64> {
    let mut p = chart.to_vec();
    p.extend_from_slice(&q.to_array());
    p
}

/// Run the full verification suite and assemble the report.
pub fn run_verify(config: &RunConfig) -> Result<Report> {
    config.validate()?;
    let res = resolve(&config.model)?;
    let eng = RedEngine::default();
    let veng = VEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut checks: Vec<CheckRecord> = Vec::new();
    let nsec = res.f.n_sections();

    // Moduli-space sweeps share one set of sampled configurations. Sampler
    // exhaustion is not fatal: affected checks are marked skipped.
    let mut moduli_pts: Vec<(Vec<f64>, Quaternion)> = Vec::with_capacity(config.points);
    let mut exhausted: Option<String> = None;
    for _ in 0..config.points {
        match sample_point(&res, &eng, &mut rng) {
            Ok(p) => moduli_pts.push(p),
            Err(Error::Domain(msg)) => {
                exhausted = Some(format!("sampling exhausted: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let coords_of = |chart: &[f64], q: Quaternion| embed(res.n, chart, q, None);
    let skip_all = moduli_pts.is_empty();
    let skip_reason =
        || exhausted.clone().unwrap_or_else(|| "sampling exhausted".into());

    // 1-2. Polyharmonicity / mixed symmetry, and rotation + scaling
    // covariance of the generating function.
    if skip_all {
        checks.push(CheckRecord::skipped(
            "polyharmonic",
            "Delta_IJ F = 0 and mixed second-derivative symmetry",
            &skip_reason(),
        ));
        checks.push(CheckRecord::skipped(
            "swann",
            "L3 F = 0 and L0 F = 2F (rotation/scaling covariance)",
            &skip_reason(),
        ));
    } else {
        let ff = |c: &[f64]| res.f.eval(c);
        let rows: Vec<Result<(f64, f64, f64, f64)>> = moduli_pts
            .par_iter()
            .map(|(chart, q)| {
                let coords = coords_of(chart, *q)?;
                let (lap, sym) = polyharmonicity_residual(&ff, nsec, &coords, &eng.d)?;
                let (l3, l0) = swann_homogeneity_residual(&ff, nsec, &coords, &eng.d)?;
                Ok((lap, sym, l3, l0))
            })
            .collect();
        let mut poly = Agg::new(
            "polyharmonic",
            "Delta_IJ F = 0 and mixed second-derivative symmetry",
            config.tol_or("polyharmonic", 1e-5),
        );
        let mut swann = Agg::new(
            "swann",
            "L3 F = 0 and L0 F = 2F (rotation/scaling covariance)",
            config.tol_or("swann", 1e-5),
        );
        for ((chart, q), r) in moduli_pts.iter().zip(rows) {
            let (lap, sym, l3, l0) = r?;
            let p = point_coords(chart, *q);
            poly.add(lap.max(sym), &p);
            swann.add(l3.max(l0), &p);
        }
        checks.push(poly.record());
        checks.push(swann.record());
    }

    // 3. Generalized abelian monopole equations.
    if skip_all {
        checks.push(CheckRecord::skipped(
            "monopole",
            "dA_K = -*_I dPhi_KI and grad_I Phi_KJ = grad_J Phi_KI",
            &skip_reason(),
        ));
    } else {
        let ff = |c: &[f64]| res.f.eval(c);
        let rows: Vec<Result<(f64, f64)>> = moduli_pts
            .par_iter()
            .map(|(chart, q)| {
                let coords = coords_of(chart, *q)?;
                eng.gh.monopole_residual(&ff, nsec, &coords)
            })
            .collect();
        let mut agg = Agg::new(
            "monopole",
            "dA_K = -*_I dPhi_KI and grad_I Phi_KJ = grad_J Phi_KI",
            config.tol_or("monopole", 1e-4),
        );
        for ((chart, q), r) in moduli_pts.iter().zip(rows) {
            let (a, b) = r?;
            agg.add(a.max(b), &point_coords(chart, *q));
        }
        checks.push(agg.record());
    }

    // 4. Closure of the hyperkahler 2-forms.
    if skip_all {
        checks.push(CheckRecord::skipped(
            "closure",
            "d Omega_k = 0 for the hyperkahler 2-form triple",
            &skip_reason(),
        ));
    } else {
        let ff = |c: &[f64]| res.f.eval(c);
        let count = config.points.min(10);
        let rows: Vec<Result<f64>> = moduli_pts[..count]
            .par_iter()
            .map(|(chart, q)| {
                let coords = coords_of(chart, *q)?;
                eng.gh.omega_closure_residual(&ff, nsec, &coords, Representative::Plain)
            })
            .collect();
        let mut agg = Agg::new(
            "closure",
            "d Omega_k = 0 for the hyperkahler 2-form triple",
            config.tol_or("closure", 1e-4),
        );
        for ((chart, q), r) in moduli_pts[..count].iter().zip(rows) {
            agg.add(r?, &point_coords(chart, *q));
        }
        checks.push(agg.record());
    }

    // 5. Fiber-independence of the extracted V and U.
    if res.n == 0 {
        checks.push(CheckRecord::skipped(
            "qindep",
            "V and U are functions of the chart alone",
            "single-section model has no chart",
        ));
    } else if skip_all {
        checks.push(CheckRecord::skipped(
            "qindep",
            "V and U are functions of the chart alone",
            &skip_reason(),
        ));
    } else {
        let qindep = (|| -> Result<CheckRecord> {
        let mut fiber_sets: Vec<(Vec<f64>, Vec<Quaternion>)> = Vec::new();
        for (chart, q) in &moduli_pts {
            let mut qs = vec![*q];
            qs.extend(sample_fibers(&res, &eng, &mut rng, chart, 4)?);
            fiber_sets.push((chart.clone(), qs));
        }
        // The U spread at 1e-8 sits at the roundoff floor of the balanced
        // Higgs stencil; Richardson extrapolation over two larger inner
        // steps keeps truncation controlled while cutting roundoff.
        let with_inner = |h: f64| RedEngine {
            gh: crate::gh::GhEngine {
                inner: crate::deriv::Deriv::order4().with_step(h),
                outer: crate::deriv::Deriv::order4().with_step(1e-3),
            },
            ..RedEngine::default()
        };
        let (coarse, fine) = (with_inner(1.6e-2), with_inner(8e-3));
        let rows: Vec<Result<f64>> = fiber_sets
            .par_iter()
            .map(|(chart, qs)| {
                let vs: Vec<f64> = qs
                    .iter()
                    .map(|&q| eng.extract_v(&res.f, chart, q))
                    .collect::<Result<_>>()?;
                let vref = vs[0].abs().max(1.0);
                let mut spread =
                    vs.iter().fold(0.0f64, |m, v| m.max((v - vs[0]).abs())) / vref;
                let us: Vec<_> = qs
                    .iter()
                    .map(|&q| {
                        Ok((fine.extract_u(&res.f, chart, q)? * 16.0
                            - coarse.extract_u(&res.f, chart, q)?)
                            / 15.0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let uref = us[0].abs().max().max(1.0);
                for u in &us[1..] {
                    spread = spread.max((u - &us[0]).abs().max() / uref);
                }
                Ok(spread)
            })
            .collect();
        let mut agg = Agg::new(
            "qindep",
            "V and U are functions of the chart alone",
            config.tol_or("qindep", 1e-8),
        );
        for ((chart, qs), r) in fiber_sets.iter().zip(rows) {
            agg.add(r?, &point_coords(chart, qs[0]));
        }
        Ok(agg.record())
        })();
        checks.push(skip_on_exhaustion(
            qindep,
            "qindep",
            "V and U are functions of the chart alone",
        )?);
    }

    // 6. Fixture regression against the closed-form tables.
    match &res.fx {
        Some(fx) => {
            let tol_override = config.tol.get("fixture").copied();
            for out in regression_sweep(fx.id, config.points, config.seed)? {
                let tolerance = tol_override.unwrap_or(out.tolerance);
                checks.push(CheckRecord {
                    check: format!("fixture_{}", out.quantity),
                    anchor: "closed-form component tables of the worked examples".into(),
                    points: out.points,
                    max_residual: out.max_residual,
                    tolerance,
                    pass: out.max_residual < tolerance,
                    worst_point: out.worst_point,
                    skipped: None,
                });
            }
        }
        None => checks.push(CheckRecord::skipped(
            "fixture",
            "closed-form component tables of the worked examples",
            "user prepotentials have no expected tables",
        )),
    }

    // 7. Reduced Bogomolnyi equation dC_K = F_K[U].
    checks.push(skip_on_exhaustion(
        bogomolnyi_check(config, &res, &eng, &mut rng),
        "bogomolnyi",
        "dC_K = F_K[U] (reduced Bogomolnyi system)",
    )?);

    // 8. Second-order constraint system on V.
    match res.fx.as_ref().and_then(|fx| fx.v.clone()) {
        Some(_) if skip_all => checks.push(CheckRecord::skipped(
            "vconstraint",
            "second-order differential constraints on V",
            &skip_reason(),
        )),
        Some(vf) => {
            let count = config.points.min(50);
            let mut agg = Agg::new(
                "vconstraint",
                "second-order differential constraints on V",
                config.tol_or("vconstraint", 1e-5),
            );
            for (chart, q) in moduli_pts.iter().take(count) {
                let r = veng.constraint_residuals(&vf, chart, config.exhaustive)?;
                agg.add(r.max(), &point_coords(chart, *q));
            }
            checks.push(agg.record());
        }
        None => checks.push(CheckRecord::skipped(
            "vconstraint",
            "second-order differential constraints on V",
            "no closed-form V for this model",
        )),
    }

    // 9. Cone reassembly in the sigma coframe.
    checks.push(skip_on_exhaustion(
        cone_check(config, &res, &eng, &mut rng),
        "cone",
        "G = |q|^2 [s g + (sigma+omega)^2 + sigma_0^2] at unit potential",
    )?);

    // 10. Quaternion algebra of the almost complex structures.
    checks.push(skip_on_exhaustion(
        almost_complex_check(config, &res, &eng, &veng, &mut rng),
        "almost_complex",
        "J_i J_j = -delta_ij + eps_ijk J_k for the induced structures",
    )?);

    // 11. Four-dimensional dual-route agreement.
    checks.push(skip_on_exhaustion(
        cp_check(config, &res, &eng, &veng, &mut rng),
        "cp_agreement",
        "four-dimensional closed forms agree with the general assembly",
    )?);

    let environment = Environment {
        seed: config.seed,
        points: config.points,
        gh_outer_step: 1e-3,
        reduction_outer_step: 3e-3,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok(Report::new(&res.name, environment, checks))
}

/// Demote sampler exhaustion inside a self-sampling check to a skip
/// instead of aborting the whole run.
fn skip_on_exhaustion(
    r: Result<CheckRecord>,
    check: &'static str,
    anchor: &'static str,
) -> Result<CheckRecord> {
    match r {
        Err(Error::Domain(msg)) => Ok(CheckRecord::skipped(
            check,
            anchor,
            &format!("sampling exhausted: {msg}"),
        )),
        other => other,
    }
}

fn bogomolnyi_check(
    config: &RunConfig,
    res: &Resolved,
    eng: &RedEngine,
    rng: &mut ChaCha8Rng,
) -> Result<CheckRecord> {
    let anchor = "dC_K = F_K[U] (reduced Bogomolnyi system)";
    if res.n == 0 {
        return Ok(CheckRecord::skipped(
            "bogomolnyi",
            anchor,
            "single-section model has no chart",
        ));
    }
    // The n = 1 closed-form fields satisfy dC = F[U] structurally, so the
    // residual is pure stencil noise; extraction-backed fields carry the
    // pipeline's finite-difference error.
    let default_tol = if res.n == 1 && res.fx.is_some() { 1e-8 } else { 1e-4 };
    let tolerance = config.tol_or("bogomolnyi", default_tol);
    let mut agg = Agg::new("bogomolnyi", anchor, tolerance);
    match &res.fx {
        Some(fx) => {
            // The fixture fields are exact closed forms, so the outer
            // difference can use the balanced step instead of the larger
            // fixed step reserved for noisy extracted fields.
            let sharp = RedEngine { outer: crate::deriv::Deriv::order4(), ..RedEngine::default() };
            let count = config.points.min(50);
            let c_field = |c: &[f64]| fx.expected_c(c);
            let u_field = |c: &[f64]| fx.expected_u(c);
            for _ in 0..count {
                let (chart, q) = fx.sample_regular(rng, eng, SWEEP_MARGIN)?;
                let rs = sharp.bogomolnyi_residual(res.n, &chart, &c_field, &u_field)?;
                let r = rs.iter().fold(0.0f64, |m, v| m.max(*v));
                agg.add(r, &point_coords(&chart, q));
            }
        }
        None => {
            // Extraction-backed fields; much heavier, so few points.
            let count = config.points.min(5);
            for _ in 0..count {
                let (chart, q) = sample_point(res, eng, rng)?;
                let mut qs = vec![q];
                qs.extend(sample_fibers(res, eng, rng, &chart, 2)?);
                let c_field =
                    |c: &[f64]| Ok(eng.extract_c(&res.f, c, &qs)?.c);
                let u_field = |c: &[f64]| eng.extract_u(&res.f, c, qs[0]);
                let rs = eng.bogomolnyi_residual(res.n, &chart, &c_field, &u_field)?;
                let r = rs.iter().fold(0.0f64, |m, v| m.max(*v));
                agg.add(r, &point_coords(&chart, q));
            }
        }
    }
    Ok(agg.record())
}

fn cone_check(
    config: &RunConfig,
    res: &Resolved,
    eng: &RedEngine,
    rng: &mut ChaCha8Rng,
) -> Result<CheckRecord> {
    let anchor = "G = |q|^2 [s g + (sigma+omega)^2 + sigma_0^2] at unit potential";
    let tolerance = config.tol_or("cone", 1e-5);
    let count = config.points.min(20);
    let mut agg = Agg::new("cone", anchor, tolerance);
    if res.n == 0 {
        // The toy cone is flat R^4 itself.
        for _ in 0..count {
            let (_, q) = sample_point(res, eng, rng)?;
            agg.add(eng.toy_flat_residual(q)?, &q.to_array());
        }
        return Ok(agg.record());
    }
    for _ in 0..count {
        let (chart, q) = sample_point(res, eng, rng)?;
        let mut qs = vec![q];
        qs.extend(sample_fibers(res, eng, rng, &chart, 2)?);
        let r = eng.cone_reassembly_residual(&res.f, &chart, q, &qs)?;
        agg.add(r, &point_coords(&chart, q));
    }
    Ok(agg.record())
}

fn almost_complex_check(
    config: &RunConfig,
    res: &Resolved,
    eng: &RedEngine,
    veng: &VEngine,
    rng: &mut ChaCha8Rng,
) -> Result<CheckRecord> {
    let anchor = "J_i J_j = -delta_ij + eps_ijk J_k for the induced structures";
    let Some(fx) = &res.fx else {
        return Ok(CheckRecord::skipped(
            "almost_complex",
            anchor,
            "requires a closed-form V",
        ));
    };
    let Some(vf) = fx.v.clone() else {
        return Ok(CheckRecord::skipped(
            "almost_complex",
            anchor,
            "single-section model has no chart",
        ));
    };
    let tolerance = config.tol_or("almost_complex", 1e-3);
    let count = if res.n == 1 { config.points.min(10) } else { config.points.min(5) };
    let provider = |c: &[f64]| -> Result<QkInputs> {
        let v = vf.eval(c)?;
        let dv = veng.d.gradient(|cc: &[f64]| vf.eval(cc), c)?;
        let u = veng.u_from_v(&vf, c)?;
        let cfield = fx.expected_c(c)?;
        Ok(QkInputs { v, dv, u, c: cfield })
    };
    // Closed-form provider: the balanced outer step is accurate here.
    let sharp = RedEngine { outer: crate::deriv::Deriv::order4(), ..RedEngine::default() };
    let mut agg = Agg::new("almost_complex", anchor, tolerance);
    for _ in 0..count {
        let (chart, q) = fx.sample_regular(rng, eng, SWEEP_MARGIN)?;
        let r = sharp.almost_complex_check(res.n, &provider, &chart)?;
        agg.add(r, &point_coords(&chart, q));
    }
    Ok(agg.record())
}

fn cp_check(
    config: &RunConfig,
    res: &Resolved,
    eng: &RedEngine,
    veng: &VEngine,
    rng: &mut ChaCha8Rng,
) -> Result<CheckRecord> {
    let anchor = "four-dimensional closed forms agree with the general assembly";
    let Some(fx) = &res.fx else {
        return Ok(CheckRecord::skipped("cp_agreement", anchor, "requires a closed-form V"));
    };
    if res.n != 1 {
        return Ok(CheckRecord::skipped("cp_agreement", anchor, "only defined for n = 1"));
    }
    let vf = fx.v.clone().expect("n = 1 fixtures carry V");
    let tolerance = config.tol_or("cp", 1e-8);
    let count = config.points.min(20);
    let mut agg = Agg::new("cp_agreement", anchor, tolerance);
    for _ in 0..count {
        let (chart, q) = fx.sample_regular(rng, eng, SWEEP_MARGIN)?;
        let v = vf.eval(&chart)?;
        let dv = veng.d.gradient(|cc: &[f64]| vf.eval(cc), &chart)?;
        let u = veng.u_from_v(&vf, &chart)?;
        let inp = QkInputs { v, dv, u, c: fx.expected_c(&chart)? };
        let sg = crate::reduction::qk_metric(1, &chart, &inp)?;
        let om = crate::reduction::qk_connection(1, &chart, &inp)?;
        let cp = veng.cp_assemble(&vf, &chart)?;
        let mut r = (&sg - &cp.g).abs().max();
        for k in 0..4 {
            for b in 0..4 {
                r = r.max((om[k][b] - cp.omega[k][b]).abs());
            }
        }
        // The surviving n = 1 eigenvalue-type constraint on V.
        r = r.max(veng.cp_residual(&vf, &chart)?);
        agg.add(r, &point_coords(&chart, q));
    }
    Ok(agg.record())
}

/// Evaluate the base metric data at a chart point. With `cp` set (n = 1
/// only), the four-dimensional closed-form route is used instead of the
/// extraction pipeline.
pub fn eval_metric(model: &ModelSpec, chart: &[f64], seed: u64, cp: bool) -> Result<QkOutput> {
    let res = resolve(model)?;
    if res.n == 0 {
        return Err(Error::InvalidConfig(
            "the single-section model has no chart to evaluate at".into(),
        ));
    }
    let cd = chart_dim(res.n);
    if chart.len() != cd {
        return Err(Error::InvalidConfig(format!(
            "chart point needs {cd} coordinates, got {}",
            chart.len()
        )));
    }
    for i in 1..=res.n {
        if chart[rho_idx(res.n, i)] <= 0.0 {
            return Err(Error::DegeneratePoint(format!(
                "rho{i} must be positive at a regular chart point"
            )));
        }
    }
    let veng = VEngine::default();
    if cp {
        if res.n != 1 {
            return Err(Error::InvalidConfig("--cp requires an n = 1 model".into()));
        }
        let fx = res.fx.as_ref().ok_or_else(|| {
            Error::InvalidConfig("--cp requires a built-in model".into())
        })?;
        let vf = fx.v.clone().expect("n = 1 fixtures carry V");
        let data = veng.cp_assemble(&vf, chart)?;
        let v = vf.eval(chart)?;
        let u = veng.u_from_v(&vf, chart)?;
        return Ok(QkOutput {
            model: res.name,
            chart: chart.to_vec(),
            v,
            u: matrix_rows(&u),
            metric: matrix_rows(&data.g),
            omega: data.omega.iter().map(|r| r.to_vec()).collect(),
        });
    }
    let eng = RedEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qs = sample_fibers(&res, &eng, &mut rng, chart, 3)?;
    let inp = eng.qk_inputs(&res.f, chart, &qs)?;
    let sg = crate::reduction::qk_metric(res.n, chart, &inp)?;
    let om = crate::reduction::qk_connection(res.n, chart, &inp)?;
    Ok(QkOutput {
        model: res.name,
        chart: chart.to_vec(),
        v: inp.v,
        u: matrix_rows(&inp.u),
        metric: matrix_rows(&sg),
        omega: om.iter().map(|r| r.clone()).collect(),
    })
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}
