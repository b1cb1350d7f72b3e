//! Built-in worked examples carried as regression fixtures: each fixture
//! pairs a generating-function model with the closed-form component tables
//! (V, U, B, C) that the extraction pipeline must reproduce, plus a sampler
//! for its regular domain.

use crate::quaternion::Quaternion;
use crate::reduction::{compute_b, embed, RedEngine};
use crate::twistor::{FFunction, Prepotential};
use crate::vfunc::{chart_dim, chi_idx, chi_vectors, eta_idx, rho_idx, VFunction};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Regularity margin imposed by the sweep samplers on both the unscaled
/// and scaled embedded configurations; the comparison tolerances assume
/// stencils stay this far from the singular locus.
pub const SWEEP_MARGIN: f64 = 0.4;

/// CLI model vocabulary.
pub const MODEL_IDS: [&str; 4] = ["x1sq", "x1x2", "x2cubed-over-x1", "toy-log"];

/// A built-in model together with its closed-form expected values.
#[derive(Clone, Debug)]
pub struct ModelFixture {
    pub id: &'static str,
    /// Geometry produced by the quotient construction.
    pub label: &'static str,
    /// Quaternionic dimension of the reduced space (0 marks the
    /// single-section toy model, which has no chart coordinates).
    pub n: usize,
    pub f: FFunction,
    /// Closed-form V over the chart (None for the toy model).
    pub v: Option<VFunction>,
    /// Relative tolerance for table comparisons.
    pub table_tol: f64,
}

/// Look up a built-in fixture by CLI identifier.
pub fn fixture(id: &str) -> Result<ModelFixture> {
    match id {
        "x1sq" => Ok(ModelFixture {
            id: "x1sq",
            label: "SU(2,1)/S(U(2)xU(1))",
            n: 1,
            f: FFunction::CMap(Prepotential::X1Sq),
            v: Some(VFunction::X1Sq),
            table_tol: 1e-6,
        }),
        "x1x2" => Ok(ModelFixture {
            id: "x1x2",
            label: "SU(2,2)/S(U(2)xU(2))",
            n: 2,
            f: FFunction::CMap(Prepotential::X1X2),
            v: Some(VFunction::X1X2),
            table_tol: 1e-6,
        }),
        "x2cubed-over-x1" => Ok(ModelFixture {
            id: "x2cubed-over-x1",
            label: "G2(2)/SO(4)",
            n: 2,
            f: FFunction::CMap(Prepotential::X2CubedOverX1),
            v: Some(VFunction::X2CubedOverX1),
            table_tol: 1e-5,
        }),
        "toy-log" => Ok(ModelFixture {
            id: "toy-log",
            label: "flat R^4",
            n: 0,
            f: FFunction::ToyLog,
            v: None,
            table_tol: 1e-8,
        }),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

impl ModelFixture {
    /// Closed-form V at a chart point.
    pub fn expected_v(&self, chart: &[f64]) -> Result<f64> {
        match &self.v {
            Some(vf) => vf.eval(chart),
            None => Err(Error::Domain("the toy model has no chart".into())),
        }
    }

    /// Closed-form U matrix at a chart point.
    pub fn expected_u(&self, chart: &[f64]) -> Result<DMatrix<f64>> {
        match self.id {
            "x1sq" => {
                let (r, e) = (chart[rho_idx(1, 1)], chart[eta_idx(1, 1)]);
                let mut u = DMatrix::zeros(2, 2);
                u[(0, 0)] = 2.0 * e * e - r * r;
                u[(0, 1)] = -2.0 * e;
                u[(1, 0)] = -2.0 * e;
                u[(1, 1)] = 2.0;
                Ok(u)
            }
            "x1x2" => {
                let (r1, r2) = (chart[rho_idx(2, 1)], chart[rho_idx(2, 2)]);
                let (e1, e2) = (chart[eta_idx(2, 1)], chart[eta_idx(2, 2)]);
                let mut u = DMatrix::zeros(3, 3);
                u[(0, 0)] = 2.0 * e1 * e2 - r1 * r2;
                u[(0, 1)] = -e2;
                u[(0, 2)] = -e1;
                u[(1, 2)] = 1.0;
                u[(1, 0)] = u[(0, 1)];
                u[(2, 0)] = u[(0, 2)];
                u[(2, 1)] = u[(1, 2)];
                Ok(u)
            }
            "x2cubed-over-x1" => {
                let x2 = chart[chi_idx(2, 2)];
                let (r1, r2) = (chart[rho_idx(2, 1)], chart[rho_idx(2, 2)]);
                let (e1, e2) = (chart[eta_idx(2, 1)], chart[eta_idx(2, 2)]);
                let mut u = DMatrix::zeros(3, 3);
                u[(0, 0)] = 2.0 * e1 * e1 * r2 * (r2 * r2 - 3.0 * x2 * x2) / r1.powi(3)
                    - 6.0 * e1 * e2 * (r2 * r2 - x2 * x2) / (r1 * r1)
                    + r2 * (6.0 * e2 * e2 - r2 * r2 - 3.0 * x2 * x2) / r1;
                u[(1, 1)] = 2.0 * r2 * (r2 * r2 - 3.0 * x2 * x2) / r1.powi(3);
                u[(2, 2)] = 6.0 * r2 / r1;
                u[(0, 1)] = -2.0 * e1 * r2 * (r2 * r2 - 3.0 * x2 * x2) / r1.powi(3)
                    + 3.0 * e2 * (r2 * r2 - x2 * x2) / (r1 * r1);
                u[(0, 2)] =
                    3.0 * e1 * (r2 * r2 - x2 * x2) / (r1 * r1) - 6.0 * e2 * r2 / r1;
                u[(1, 2)] = -3.0 * (r2 * r2 - x2 * x2) / (r1 * r1);
                u[(1, 0)] = u[(0, 1)];
                u[(2, 0)] = u[(0, 2)];
                u[(2, 1)] = u[(1, 2)];
                Ok(u)
            }
            _ => Err(Error::Domain("the toy model has no U table".into())),
        }
    }

    /// Closed-form monopole vectors B_K at a chart point.
    pub fn expected_b(&self, chart: &[f64]) -> Result<Vec<[f64; 3]>> {
        match self.id {
            "x1sq" => {
                let (r, e) = (chart[rho_idx(1, 1)], chart[eta_idx(1, 1)]);
                Ok(vec![
                    [0.0, -4.0 * e * r, -2.0 * r * r],
                    [0.0, 4.0 * r, 0.0],
                ])
            }
            "x1x2" => {
                let x2 = chart[chi_idx(2, 2)];
                let (r1, r2) = (chart[rho_idx(2, 1)], chart[rho_idx(2, 2)]);
                let (e1, e2) = (chart[eta_idx(2, 1)], chart[eta_idx(2, 2)]);
                Ok(vec![
                    [
                        -2.0 * e1 * x2,
                        -2.0 * (e1 * r2 + r1 * e2),
                        -2.0 * r1 * r2,
                    ],
                    [2.0 * x2, 2.0 * r2, 0.0],
                    [0.0, 2.0 * r1, 0.0],
                ])
            }
            "x2cubed-over-x1" => {
                let x2 = chart[chi_idx(2, 2)];
                let (r1, r2) = (chart[rho_idx(2, 1)], chart[rho_idx(2, 2)]);
                let (e1, e2) = (chart[eta_idx(2, 1)], chart[eta_idx(2, 2)]);
                Ok(vec![
                    [
                        6.0 * e1 * x2 * (r2 * r2 - x2 * x2) / (r1 * r1)
                            - 12.0 * e2 * r2 * x2 / r1,
                        2.0 * e1 * r2 * (r2 * r2 + 3.0 * x2 * x2) / (r1 * r1)
                            - 6.0 * e2 * (r2 * r2 + x2 * x2) / r1,
                        -2.0 * r2 * (r2 * r2 + 3.0 * x2 * x2) / r1,
                    ],
                    [
                        -6.0 * x2 * (r2 * r2 - x2 * x2) / (r1 * r1),
                        -2.0 * r2 * (r2 * r2 + 3.0 * x2 * x2) / (r1 * r1),
                        0.0,
                    ],
                    [
                        12.0 * r2 * x2 / r1,
                        6.0 * (r2 * r2 + x2 * x2) / r1,
                        0.0,
                    ],
                ])
            }
            _ => Err(Error::Domain("the toy model has no B table".into())),
        }
    }

    /// Closed-form connection covectors C_K over the chart coordinates.
    pub fn expected_c(&self, chart: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.n;
        let cd = chart_dim(n);
        match self.id {
            "x1sq" => Ok(vec![vec![0.0; cd]; 2]),
            "x1x2" => {
                let (x2, r1) = (chart[chi_idx(2, 2)], chart[rho_idx(2, 1)]);
                let mut c = vec![vec![0.0; cd]; 3];
                c[0][rho_idx(2, 1)] = 0.5 * x2;
                c[0][chi_idx(2, 2)] = -0.5 * r1;
                Ok(c)
            }
            "x2cubed-over-x1" => {
                let x2 = chart[chi_idx(2, 2)];
                let (r1, r2) = (chart[rho_idx(2, 1)], chart[rho_idx(2, 2)]);
                let (e1, e2) = (chart[eta_idx(2, 1)], chart[eta_idx(2, 2)]);
                let mut c = vec![vec![0.0; cd]; 3];
                c[0][rho_idx(2, 1)] = 3.0 * x2 / (2.0 * r1.powi(4))
                    * (r1 * r1 * x2 * x2 - r1 * r1 * r2 * r2 - 2.0 * r1 * r1 * e2 * e2
                        + 2.0 * e1 * e1 * x2 * x2
                        - 6.0 * e1 * e1 * r2 * r2
                        + 8.0 * r1 * e1 * r2 * e2);
                c[0][chi_idx(2, 2)] = -3.0 / (2.0 * r1.powi(3))
                    * (r1 * r1 * x2 * x2 + r1 * r1 * r2 * r2 - 2.0 * r1 * r1 * e2 * e2
                        + 2.0 * e1 * e1 * x2 * x2
                        - 2.0 * e1 * e1 * r2 * r2
                        + 4.0 * r1 * e1 * r2 * e2);
                c[0][rho_idx(2, 2)] = 3.0 * x2 / r1.powi(3)
                    * (r1 * r1 * r2 + 2.0 * e1 * e1 * r2 - 2.0 * r1 * e1 * e2);
                c[1][rho_idx(2, 1)] = -6.0 * x2 / r1.powi(4)
                    * (e1 * x2 * x2 - 3.0 * e1 * r2 * r2 + 2.0 * r1 * r2 * e2);
                c[1][chi_idx(2, 2)] =
                    6.0 / r1.powi(3) * (e1 * x2 * x2 - e1 * r2 * r2 + r1 * r2 * e2);
                c[1][rho_idx(2, 2)] = -6.0 * x2 / r1.powi(3) * (2.0 * e1 * r2 - r1 * e2);
                c[2][rho_idx(2, 1)] = -6.0 * x2 / r1.powi(3) * (2.0 * e1 * r2 - r1 * e2);
                c[2][chi_idx(2, 2)] = 6.0 / (r1 * r1) * (e1 * r2 - r1 * e2);
                c[2][rho_idx(2, 2)] = 6.0 * x2 * e1 / (r1 * r1);
                Ok(c)
            }
            _ => Err(Error::Domain("the toy model has no C table".into())),
        }
    }

    /// Internal consistency of the transcribed tables:
    /// 2 U_JK chi^J . chi^K must equal V identically.
    pub fn v_identity_residual(&self, chart: &[f64]) -> Result<f64> {
        let u = self.expected_u(chart)?;
        let v = self.expected_v(chart)?;
        let chis = chi_vectors(self.n, chart);
        let mut acc = 0.0;
        for (j, cj) in chis.iter().enumerate() {
            for (k, ck) in chis.iter().enumerate() {
                acc += 2.0 * u[(j, k)] * (cj[0] * ck[0] + cj[1] * ck[1] + cj[2] * ck[2]);
            }
        }
        Ok((acc - v).abs())
    }

    /// Draw a chart point inside the fixture's sampling box: rho in
    /// [0.2, 3], chi and eta in [-2, 2].
    pub fn sample_chart(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.n;
        if n == 0 {
            return vec![];
        }
        let mut chart = vec![0.0; chart_dim(n)];
        for i in 2..=n {
            chart[chi_idx(n, i)] = rng.gen_range(-2.0..2.0);
        }
        for i in 1..=n {
            chart[rho_idx(n, i)] = rng.gen_range(0.2..3.0);
            chart[eta_idx(n, i)] = rng.gen_range(-2.0..2.0);
        }
        chart
    }

    /// Draw a fiber point with |q| in [0.5, 2].
    pub fn sample_q(&self, rng: &mut ChaCha8Rng) -> Quaternion {
        loop {
            let q = Quaternion::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let nrm = q.norm();
            if (0.5..2.0).contains(&nrm) {
                return q;
            }
        }
    }

    /// Rejection-sample a (chart, q) pair whose unscaled and scaled
    /// embedded configurations both keep the stated regularity margin.
    pub fn sample_regular(
        &self,
        rng: &mut ChaCha8Rng,
        eng: &RedEngine,
        margin: f64,
    ) -> Result<(Vec<f64>, Quaternion)> {
        for _ in 0..10_000 {
            let chart = self.sample_chart(rng);
            let q = self.sample_q(rng);
            if self.regular_enough(eng, &chart, q, margin) {
                return Ok((chart, q));
            }
        }
        Err(Error::Domain(format!(
            "sampler exhausted for model {} at margin {margin}",
            self.id
        )))
    }

    /// Draw additional fiber points over a fixed chart point, with the
    /// same regularity requirements.
    pub fn sample_fibers(
        &self,
        rng: &mut ChaCha8Rng,
        eng: &RedEngine,
        chart: &[f64],
        count: usize,
        margin: f64,
    ) -> Result<Vec<Quaternion>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..10_000 {
            if out.len() == count {
                break;
            }
            let q = self.sample_q(rng);
            if self.regular_enough(eng, chart, q, margin) {
                out.push(q);
            }
        }
        if out.len() < count {
            return Err(Error::Domain(format!(
                "fiber sampler exhausted for model {} at margin {margin}",
                self.id
            )));
        }
        Ok(out)
    }

    fn regular_enough(
        &self,
        eng: &RedEngine,
        chart: &[f64],
        q: Quaternion,
        margin: f64,
    ) -> bool {
        let Ok(coords) = embed(self.n, chart, q, None) else {
            return false;
        };
        if self.f.regularity_margin(&coords) < margin {
            return false;
        }
        if self.n == 0 {
            return true;
        }
        let Ok(v) = eng.extract_v(&self.f, chart, q) else {
            return false;
        };
        let Ok(scaled) = embed(self.n, chart, q, Some(v)) else {
            return false;
        };
        self.f.regularity_margin(&scaled) >= margin
    }
}

/// Worst observed residual for one compared quantity of a sweep.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub quantity: String,
    pub points: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Chart coordinates followed by the fiber quaternion of the worst
    /// point.
    pub worst_point: Vec<f64>,
}

fn fold_outcome(out: &mut SweepOutcome, residual: f64, point: &[f64]) {
    if residual > out.max_residual {
        out.max_residual = residual;
        out.worst_point = point.to_vec();
    }
}

/// Run the extraction pipeline of a built-in model at `num_points`
/// seeded sample points and compare every extracted quantity against the
/// fixture's closed forms. Failures are collected, not fatal.
pub fn regression_sweep(id: &str, num_points: usize, seed: u64) -> Result<Vec<SweepOutcome>> {
    let fx = fixture(id)?;
    let eng = RedEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if fx.n == 0 {
        // Toy model: the assembled metric must be flat in the fiber
        // coordinates.
        let mut pts = Vec::with_capacity(num_points);
        while pts.len() < num_points {
            let q = fx.sample_q(&mut rng);
            if fx.regular_enough(&eng, &[], q, SWEEP_MARGIN) {
                pts.push(q);
            }
        }
        let residuals: Vec<Result<f64>> =
            pts.par_iter().map(|&q| eng.toy_flat_residual(q)).collect();
        let mut out = SweepOutcome {
            quantity: "flat_metric".into(),
            points: num_points,
            max_residual: 0.0,
            tolerance: fx.table_tol,
            pass: true,
            worst_point: vec![],
        };
        for (q, r) in pts.iter().zip(residuals) {
            fold_outcome(&mut out, r?, &q.to_array());
        }
        out.pass = out.max_residual < out.tolerance;
        return Ok(vec![out]);
    }

    // Sample sequentially for determinism, sweep in parallel, fold in
    // order.
    let mut pts: Vec<(Vec<f64>, Vec<Quaternion>)> = Vec::with_capacity(num_points);
    for _ in 0..num_points {
        let (chart, q) = fx.sample_regular(&mut rng, &eng, SWEEP_MARGIN)?;
        let mut qs = vec![q];
        qs.extend(fx.sample_fibers(&mut rng, &eng, &chart, 2, SWEEP_MARGIN)?);
        pts.push((chart, qs));
    }

    struct PointResiduals {
        v: f64,
        u: f64,
        b: f64,
        c: f64,
    }
    let per_point: Vec<Result<PointResiduals>> = pts
        .par_iter()
        .map(|(chart, qs)| -> Result<PointResiduals> {
            let v = eng.extract_v_checked(&fx.f, chart, qs)?;
            let want_v = fx.expected_v(chart)?;
            let rv = (v - want_v).abs() / want_v.abs().max(1.0);

            let u = eng.extract_u_checked(&fx.f, chart, qs)?;
            let want_u = fx.expected_u(chart)?;
            let scale_u = want_u.abs().max().max(1.0);
            let ru = (&u - &want_u).abs().max() / scale_u;

            let b = compute_b(fx.n, &u, chart);
            let want_b = fx.expected_b(chart)?;
            let mut rb: f64 = 0.0;
            let mut scale_b: f64 = 1.0;
            for (bk, wk) in b.iter().zip(&want_b) {
                for i in 0..3 {
                    rb = rb.max((bk[i] - wk[i]).abs());
                    scale_b = scale_b.max(wk[i].abs());
                }
            }
            rb /= scale_b;

            let cx = eng.extract_c(&fx.f, chart, qs)?;
            let want_c = fx.expected_c(chart)?;
            let mut rc: f64 = 0.0;
            let mut scale_c: f64 = 1.0;
            for (ck, wk) in cx.c.iter().zip(&want_c) {
                for (cv, wv) in ck.iter().zip(wk) {
                    rc = rc.max((cv - wv).abs());
                    scale_c = scale_c.max(wv.abs());
                }
            }
            rc /= scale_c;
            Ok(PointResiduals { v: rv, u: ru, b: rb, c: rc })
        })
        .collect();

    let mut outs: Vec<SweepOutcome> = ["V", "U", "B", "C"]
        .iter()
        .map(|q| SweepOutcome {
            quantity: q.to_string(),
            points: num_points,
            max_residual: 0.0,
            tolerance: fx.table_tol,
            pass: true,
            worst_point: vec![],
        })
        .collect();
    for ((chart, qs), pr) in pts.iter().zip(per_point) {
        let pr = pr?;
        let mut point = chart.clone();
        point.extend_from_slice(&qs[0].to_array());
        fold_outcome(&mut outs[0], pr.v, &point);
        fold_outcome(&mut outs[1], pr.u, &point);
        fold_outcome(&mut outs[2], pr.b, &point);
        fold_outcome(&mut outs[3], pr.c, &point);
    }
    for o in &mut outs {
        o.pass = o.max_residual < o.tolerance;
    }
    Ok(outs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_lookup_and_labels() {
        for id in MODEL_IDS {
            let fx = fixture(id).unwrap();
            assert_eq!(fx.id, id);
        }
        assert!(matches!(fixture("nope"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn expected_values_match_quoted_points() {
        // V = 2 rho^2 at rho = 2.
        let fx = fixture("x1sq").unwrap();
        let chart = vec![2.0, 0.7];
        assert_eq!(fx.expected_v(&chart).unwrap(), 8.0);
        // U_11 = 2 and (B_1)_2 = 4 rho.
        assert_eq!(fx.expected_u(&chart).unwrap()[(1, 1)], 2.0);
        assert_eq!(fx.expected_b(&chart).unwrap()[1][1], 8.0);

        // V = 2 rho2 (rho2^2 + 3 chi2^2)/rho1 -> 8 at unit arguments.
        let fx = fixture("x2cubed-over-x1").unwrap();
        let mut chart = vec![0.0; 5];
        chart[chi_idx(2, 2)] = 1.0;
        chart[rho_idx(2, 1)] = 1.0;
        chart[rho_idx(2, 2)] = 1.0;
        assert_eq!(fx.expected_v(&chart).unwrap(), 8.0);

        // C_0 = (chi2 drho1 - rho1 dchi2)/2 -> coefficients (1/2, -1/2).
        let fx = fixture("x1x2").unwrap();
        let mut chart = vec![0.0; 5];
        chart[chi_idx(2, 2)] = 1.0;
        chart[rho_idx(2, 1)] = 1.0;
        chart[rho_idx(2, 2)] = 1.0;
        let c = fx.expected_c(&chart).unwrap();
        assert_eq!(c[0][rho_idx(2, 1)], 0.5);
        assert_eq!(c[0][chi_idx(2, 2)], -0.5);
    }

    #[test]
    fn transcribed_tables_satisfy_v_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for id in ["x1sq", "x1x2", "x2cubed-over-x1"] {
            let fx = fixture(id).unwrap();
            for _ in 0..50 {
                let chart = fx.sample_chart(&mut rng);
                let res = fx.v_identity_residual(&chart).unwrap();
                let v = fx.expected_v(&chart).unwrap().abs().max(1.0);
                assert!(res < 1e-10 * v, "{id}: V identity residual {res:.3e}");
            }
        }
    }

    #[test]
    fn expected_b_is_gradient_of_v_on_allowed_components() {
        // (B_I)_k = d_k V on the components where the chart derivative
        // exists; checked against the independent V-derivative oracle.
        let veng = crate::vfunc::VEngine::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for id in ["x1sq", "x1x2", "x2cubed-over-x1"] {
            let fx = fixture(id).unwrap();
            let vf = fx.v.clone().unwrap();
            for _ in 0..10 {
                let chart = fx.sample_chart(&mut rng);
                let want = veng.b_from_v(&vf, &chart).unwrap();
                let got = fx.expected_b(&chart).unwrap();
                let mut scale: f64 = 1.0;
                for w in &want {
                    for k in 0..3 {
                        scale = scale.max(w[k].abs());
                    }
                }
                for (g, w) in got.iter().zip(&want) {
                    for k in 0..3 {
                        assert!(
                            (g[k] - w[k]).abs() < 1e-7 * scale,
                            "{id}: B component {} vs {}",
                            g[k],
                            w[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sweeps_pass_at_small_point_counts() {
        for (id, pts) in [("x1sq", 3), ("x1x2", 2), ("x2cubed-over-x1", 2), ("toy-log", 5)] {
            let outs = regression_sweep(id, pts, 7).unwrap();
            for o in &outs {
                assert!(
                    o.pass,
                    "{id}/{}: residual {:.3e} over {:.1e}",
                    o.quantity, o.max_residual, o.tolerance
                );
            }
        }
    }

    #[test]
    fn sweeps_are_deterministic() {
        let a = regression_sweep("x1sq", 3, 11).unwrap();
        let b = regression_sweep("x1sq", 3, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.max_residual.to_bits(), y.max_residual.to_bits());
            assert_eq!(x.worst_point, y.worst_point);
        }
    }
}
