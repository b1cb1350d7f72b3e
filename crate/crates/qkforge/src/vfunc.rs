//! The V-centric engine: everything about the quotient geometry that is
//! determined by the single scalar function V on the base chart.
//!
//! Chart coordinates are laid out flat as
//! [chi^2..chi^n, rho^1..rho^n, eta^1..eta^n] (3n - 1 of them). The three
//! reference direction vectors are chi_vec^0 = (0,0,1),
//! chi_vec^1 = (0, rho^1, eta^1) and chi_vec^I = (chi^I, rho^I, eta^I) for
//! I >= 2, and V = 2 U_IJ chi_vec^I . chi_vec^J.
//!
//! Index-range convention: a sum like chi^I d/d chi^I runs over the maximum
//! range for which the coordinates exist (I >= 2 for chi, I >= 1 for rho
//! and eta).

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::deriv::Deriv;
use crate::expr::Expr;
use crate::{Error, Result};

/// Number of chart coordinates for quaternionic dimension n.
pub fn chart_dim(n: usize) -> usize {
    3 * n - 1
}

/// Flat index of chi^i (i >= 2).
pub fn chi_idx(_n: usize, i: usize) -> usize {
    debug_assert!(i >= 2);
    i - 2
}

/// Flat index of rho^i (i >= 1).
pub fn rho_idx(n: usize, i: usize) -> usize {
    debug_assert!((1..=n).contains(&i));
    (n - 1) + (i - 1)
}

/// Flat index of eta^i (i >= 1).
pub fn eta_idx(n: usize, i: usize) -> usize {
    debug_assert!((1..=n).contains(&i));
    (n - 1) + n + (i - 1)
}

/// The n+1 direction vectors chi_vec^I at a chart point.
pub fn chi_vectors(n: usize, chart: &[f64]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n + 1);
    out.push([0.0, 0.0, 1.0]);
    for i in 1..=n {
        let chi = if i >= 2 { chart[chi_idx(n, i)] } else { 0.0 };
        out.push([chi, chart[rho_idx(n, i)], chart[eta_idx(n, i)]]);
    }
    out
}

/// Scalar V over the chart, either a built-in model or a parsed
/// expression in the identifiers chi2..chin, rho1..rhon, eta1..etan.
#[derive(Clone, Debug)]
pub enum VFunction {
    /// n = 1: V = 2 rho^2.
    X1Sq,
    /// n = 2: V = 2 rho1 rho2.
    X1X2,
    /// n = 2: V = 2 rho2 (rho2^2 + 3 chi2^2) / rho1.
    X2CubedOverX1,
    User { n: usize, expr: Expr },
}

impl VFunction {
    pub fn n(&self) -> usize {
        match self {
            VFunction::X1Sq => 1,
            VFunction::X1X2 | VFunction::X2CubedOverX1 => 2,
            VFunction::User { n, .. } => *n,
        }
    }

    pub fn dim_chart(&self) -> usize {
        chart_dim(self.n())
    }

    /// Distance from the singular locus: the smallest rho coordinate
    /// (all built-in models live on rho^I > 0).
    pub fn regularity_margin(&self, chart: &[f64]) -> f64 {
        let n = self.n();
        (1..=n).map(|i| chart[rho_idx(n, i)]).fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, chart: &[f64]) -> Result<f64> {
        match self {
            VFunction::X1Sq => {
                let rho = chart[rho_idx(1, 1)];
                Ok(2.0 * rho * rho)
            }
            VFunction::X1X2 => Ok(2.0 * chart[rho_idx(2, 1)] * chart[rho_idx(2, 2)]),
            VFunction::X2CubedOverX1 => {
                let rho1 = chart[rho_idx(2, 1)];
                let rho2 = chart[rho_idx(2, 2)];
                let chi2 = chart[chi_idx(2, 2)];
                if rho1 == 0.0 {
                    return Err(Error::Domain("rho1 = 0 in V evaluation".into()));
                }
                Ok(2.0 * rho2 * (rho2 * rho2 + 3.0 * chi2 * chi2) / rho1)
            }
            VFunction::User { n, expr } => {
                let mut vars = HashMap::new();
                for i in 2..=*n {
                    vars.insert(format!("chi{i}"), chart[chi_idx(*n, i)]);
                }
                for i in 1..=*n {
                    vars.insert(format!("rho{i}"), chart[rho_idx(*n, i)]);
                    vars.insert(format!("eta{i}"), chart[eta_idx(*n, i)]);
                }
                expr.eval_real(&vars)
            }
        }
    }
}

/// Residuals of the second-order constraint system on V.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstraintResiduals {
    /// |d_chi^I d_rho^J V - d_chi^J d_rho^I V|, I,J >= 2.
    pub mixed_chi_rho: f64,
    /// |d_rho^I d_eta^J V - d_rho^J d_eta^I V|, I,J >= 1.
    pub mixed_rho_eta: f64,
    /// |d_eta^I d_chi^J V - d_eta^J d_chi^I V|, I,J >= 2.
    pub mixed_eta_chi: f64,
    /// Independent W-matrix constraints (the j=3 trio plus the first
    /// j=2 equation).
    pub w_independent: f64,
    /// Remaining redundant W constraints, evaluated in exhaustive mode.
    pub w_redundant: Option<f64>,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.mixed_chi_rho
            .max(self.mixed_rho_eta)
            .max(self.mixed_eta_chi)
            .max(self.w_independent)
            .max(self.w_redundant.unwrap_or(0.0))
    }
}

/// Derivative engine for V-side operations.
#[derive(Clone, Copy, Debug)]
pub struct VEngine {
    pub d: Deriv,
}

impl Default for VEngine {
    fn default() -> Self {
        VEngine { d: Deriv::order4() }
    }
}

impl VEngine {
    /// All 3(n+1) components of the vectors B_K from first partials of V:
    /// (B_I)_1 = d_chi^I V (I >= 2), (B_I)_2 = d_rho^I V and
    /// (B_I)_3 = d_eta^I V (I >= 1), and the remaining four from
    ///   rho^1 (B_1)_1        = (chi d_rho - rho d_chi) V
    ///   (B_0)_1 + eta^1 (B_1)_1 = (chi d_eta - eta d_chi) V
    ///   (B_0)_2              = (rho d_eta - eta d_rho) V
    ///   (B_0)_3              = (1 - chi d_chi - rho d_rho - eta d_eta) V.
    pub fn b_from_v(&self, v: &VFunction, chart: &[f64]) -> Result<Vec<[f64; 3]>> {
        let n = v.n();
        let rho1 = chart[rho_idx(n, 1)];
        if rho1 == 0.0 {
            return Err(Error::DegeneratePoint("rho^1 = 0 in B assembly".into()));
        }
        let f = |c: &[f64]| v.eval(c);
        let grad = self.d.gradient(f, chart)?;
        let val = v.eval(chart)?;

        let mut b = vec![[0.0; 3]; n + 1];
        for i in 1..=n {
            b[i][1] = grad[rho_idx(n, i)];
            b[i][2] = grad[eta_idx(n, i)];
        }
        for i in 2..=n {
            b[i][0] = grad[chi_idx(n, i)];
        }
        // Weighted first-derivative sums; chi runs over I >= 2, rho and
        // eta over I >= 1.
        let chi_d_rho: f64 = (2..=n).map(|i| chart[chi_idx(n, i)] * grad[rho_idx(n, i)]).sum();
        let chi_d_eta: f64 = (2..=n).map(|i| chart[chi_idx(n, i)] * grad[eta_idx(n, i)]).sum();
        let rho_d_chi: f64 = (2..=n).map(|i| chart[rho_idx(n, i)] * grad[chi_idx(n, i)]).sum();
        let eta_d_chi: f64 = (2..=n).map(|i| chart[eta_idx(n, i)] * grad[chi_idx(n, i)]).sum();
        let rho_d_eta: f64 = (1..=n).map(|i| chart[rho_idx(n, i)] * grad[eta_idx(n, i)]).sum();
        let eta_d_rho: f64 = (1..=n).map(|i| chart[eta_idx(n, i)] * grad[rho_idx(n, i)]).sum();
        let chi_d_chi: f64 = (2..=n).map(|i| chart[chi_idx(n, i)] * grad[chi_idx(n, i)]).sum();
        let rho_d_rho: f64 = (1..=n).map(|i| chart[rho_idx(n, i)] * grad[rho_idx(n, i)]).sum();
        let eta_d_eta: f64 = (1..=n).map(|i| chart[eta_idx(n, i)] * grad[eta_idx(n, i)]).sum();

        b[1][0] = (chi_d_rho - rho_d_chi) / rho1;
        b[0][0] = chi_d_eta - eta_d_chi - chart[eta_idx(n, 1)] * b[1][0];
        b[0][1] = rho_d_eta - eta_d_rho;
        b[0][2] = val - chi_d_chi - rho_d_rho - eta_d_eta;
        Ok(b)
    }

    /// The full symmetric matrix U_IJ from V, via the tilde frame
    /// Utilde = e U e^T with the triangular frame e (row I >= 2 identity,
    /// row 1 = rho^1 e_1, row 0 = e_0 + eta^1 e_1), inverted in closed
    /// form.
    pub fn u_from_v(&self, v: &VFunction, chart: &[f64]) -> Result<DMatrix<f64>> {
        let n = v.n();
        let rho1 = chart[rho_idx(n, 1)];
        if rho1 == 0.0 {
            return Err(Error::DegeneratePoint("rho^1 = 0 in U assembly".into()));
        }
        let f = |c: &[f64]| v.eval(c);
        let grad = self.d.gradient(f, chart)?;
        let val = v.eval(chart)?;

        // Primed block U_{I'J'} (I', J' >= 2) from second partials.
        let mut up = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 2..=n {
            for j in i..=n {
                let s = self.d.second(f, chart, chi_idx(n, i), chi_idx(n, j))?
                    + self.d.second(f, chart, rho_idx(n, i), rho_idx(n, j))?
                    + self.d.second(f, chart, eta_idx(n, i), eta_idx(n, j))?;
                up[(i, j)] = 0.25 * s;
                up[(j, i)] = up[(i, j)];
            }
        }

        // Tilde-frame entries.
        let mut ut = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 2..=n {
            for j in 2..=n {
                ut[(i, j)] = up[(i, j)];
            }
        }
        let u_rho = |i: usize| -> f64 { (2..=n).map(|j| up[(i, j)] * chart[rho_idx(n, j)]).sum() };
        let u_eta = |i: usize| -> f64 { (2..=n).map(|j| up[(i, j)] * chart[eta_idx(n, j)]).sum() };
        for i in 2..=n {
            ut[(i, 1)] = 0.5 * grad[rho_idx(n, i)] - u_rho(i);
            ut[(1, i)] = ut[(i, 1)];
            ut[(i, 0)] = 0.5 * grad[eta_idx(n, i)] - u_eta(i);
            ut[(0, i)] = ut[(i, 0)];
        }
        let rho_dp_rho: f64 = (2..=n).map(|i| chart[rho_idx(n, i)] * grad[rho_idx(n, i)]).sum();
        let eta_dp_rho: f64 = (2..=n).map(|i| chart[eta_idx(n, i)] * grad[rho_idx(n, i)]).sum();
        let chi_dp_chi: f64 = (2..=n).map(|i| chart[chi_idx(n, i)] * grad[chi_idx(n, i)]).sum();
        let eta_dp_eta: f64 = (2..=n).map(|i| chart[eta_idx(n, i)] * grad[eta_idx(n, i)]).sum();
        let rho_u_rho: f64 = (2..=n).map(|i| chart[rho_idx(n, i)] * u_rho(i)).sum();
        let eta_u_rho: f64 = (2..=n).map(|i| chart[eta_idx(n, i)] * u_rho(i)).sum();
        let eta_u_eta: f64 = (2..=n).map(|i| chart[eta_idx(n, i)] * u_eta(i)).sum();
        ut[(1, 1)] = 0.5 * (rho1 * grad[rho_idx(n, 1)] - rho_dp_rho) + rho_u_rho;
        ut[(0, 1)] = 0.5 * (rho1 * grad[eta_idx(n, 1)] - eta_dp_rho) + eta_u_rho;
        ut[(1, 0)] = ut[(0, 1)];
        ut[(0, 0)] = 0.5
            * (val - rho1 * grad[rho_idx(n, 1)] - chi_dp_chi - rho_dp_rho - 2.0 * eta_dp_eta)
            + eta_u_eta;

        // Exact inverse frame: einv row 0 = [1, -eta^1/rho^1, 0, ..],
        // row 1 = [0, 1/rho^1, 0, ..], rest identity.
        let eta1 = chart[eta_idx(n, 1)];
        let mut einv = DMatrix::<f64>::identity(n + 1, n + 1);
        einv[(0, 1)] = -eta1 / rho1;
        einv[(1, 1)] = 1.0 / rho1;
        let u = &einv * ut * einv.transpose();
        // Symmetrize exactly against roundoff in the congruence product.
        Ok(0.5 * (&u + u.transpose()))
    }

    /// B_K = 2 U_KI chi_vec^I from a given U matrix.
    pub fn b_from_u(&self, n: usize, u: &DMatrix<f64>, chart: &[f64]) -> Vec<[f64; 3]> {
        let chis = chi_vectors(n, chart);
        (0..=n)
            .map(|k| {
                let mut b = [0.0; 3];
                for (i, chi) in chis.iter().enumerate() {
                    for c in 0..3 {
                        b[c] += 2.0 * u[(k, i)] * chi[c];
                    }
                }
                b
            })
            .collect()
    }

    /// The 3x3 matrix W_ij from first partials of V, per the printed
    /// table (symmetric off the diagonal by construction).
    pub fn w_matrix(&self, v: &VFunction, chart: &[f64]) -> Result<[[f64; 3]; 3]> {
        let n = v.n();
        let f = |c: &[f64]| v.eval(c);
        let grad = self.d.gradient(f, chart)?;
        let val = v.eval(chart)?;
        let chi_d_chi: f64 = (2..=n).map(|i| chart[chi_idx(n, i)] * grad[chi_idx(n, i)]).sum();
        let chi_d_rho: f64 = (2..=n).map(|i| chart[chi_idx(n, i)] * grad[rho_idx(n, i)]).sum();
        let chi_d_eta: f64 = (2..=n).map(|i| chart[chi_idx(n, i)] * grad[eta_idx(n, i)]).sum();
        let rho_d_rho: f64 = (1..=n).map(|i| chart[rho_idx(n, i)] * grad[rho_idx(n, i)]).sum();
        let rho_d_eta: f64 = (1..=n).map(|i| chart[rho_idx(n, i)] * grad[eta_idx(n, i)]).sum();
        Ok([
            [chi_d_chi + val, chi_d_rho, chi_d_eta],
            [chi_d_rho, rho_d_rho + val, rho_d_eta],
            [chi_d_eta, rho_d_eta, 2.0 * val - chi_d_chi - rho_d_rho],
        ])
    }

    /// Residuals of the constraint system. The W constraints are expanded
    /// through the product rule into gradient/Hessian contractions of V,
    /// avoiding a second layer of numerical differentiation.
    pub fn constraint_residuals(
        &self,
        v: &VFunction,
        chart: &[f64],
        exhaustive: bool,
    ) -> Result<ConstraintResiduals> {
        let n = v.n();
        let f = |c: &[f64]| v.eval(c);
        let grad = self.d.gradient(f, chart)?;
        let hess = self.d.hessian(f, chart)?;
        let h = |a: usize, b: usize| hess[(a, b)];
        let chi = |i: usize| chart[chi_idx(n, i)];
        let rho = |i: usize| chart[rho_idx(n, i)];
        let mut res = ConstraintResiduals::default();
        for i in 2..=n {
            for j in (i + 1)..=n {
                res.mixed_chi_rho = res.mixed_chi_rho.max(
                    (h(chi_idx(n, i), rho_idx(n, j)) - h(chi_idx(n, j), rho_idx(n, i))).abs(),
                );
                res.mixed_eta_chi = res.mixed_eta_chi.max(
                    (h(eta_idx(n, i), chi_idx(n, j)) - h(eta_idx(n, j), chi_idx(n, i))).abs(),
                );
            }
        }
        for i in 1..=n {
            for j in (i + 1)..=n {
                res.mixed_rho_eta = res.mixed_rho_eta.max(
                    (h(rho_idx(n, i), eta_idx(n, j)) - h(rho_idx(n, j), eta_idx(n, i))).abs(),
                );
            }
        }

        // W constraints. Sums: chi over J >= 2, rho/eta over J >= 1.
        let sum_chi =
            |g: &dyn Fn(usize) -> f64| -> f64 { (2..=n).map(|j| chi(j) * g(j)).sum() };
        let sum_rho =
            |g: &dyn Fn(usize) -> f64| -> f64 { (1..=n).map(|j| rho(j) * g(j)).sum() };

        let mut w_ind: f64 = 0.0;
        let mut w_red: f64 = 0.0;
        // d_rho^I W_13 = d_chi^I W_23  (I >= 2), j = 3.
        for i in 2..=n {
            let lhs = sum_chi(&|j| h(eta_idx(n, j), rho_idx(n, i)));
            let rhs = sum_rho(&|j| h(eta_idx(n, j), chi_idx(n, i)));
            w_ind = w_ind.max((lhs - rhs).abs());
        }
        // d_eta^I W_23 = d_rho^I W_33  (I >= 1), j = 3.
        for i in 1..=n {
            let lhs = sum_rho(&|j| h(eta_idx(n, j), eta_idx(n, i)));
            let rhs = grad[rho_idx(n, i)]
                - sum_chi(&|j| h(chi_idx(n, j), rho_idx(n, i)))
                - sum_rho(&|j| h(rho_idx(n, j), rho_idx(n, i)));
            w_ind = w_ind.max((lhs - rhs).abs());
        }
        // d_chi^I W_33 = d_eta^I W_13  (I >= 2), j = 3.
        for i in 2..=n {
            let lhs = grad[chi_idx(n, i)]
                - sum_chi(&|j| h(chi_idx(n, j), chi_idx(n, i)))
                - sum_rho(&|j| h(rho_idx(n, j), chi_idx(n, i)));
            let rhs = sum_chi(&|j| h(eta_idx(n, j), eta_idx(n, i)));
            w_ind = w_ind.max((lhs - rhs).abs());
        }
        // d_rho^I W_12 = d_chi^I W_22  (I >= 2), j = 2.
        for i in 2..=n {
            let lhs = sum_chi(&|j| h(rho_idx(n, j), rho_idx(n, i)));
            let rhs = sum_rho(&|j| h(rho_idx(n, j), chi_idx(n, i))) + grad[chi_idx(n, i)];
            w_ind = w_ind.max((lhs - rhs).abs());
        }
        res.w_independent = w_ind;

        if exhaustive {
            // d_rho^I W_11 = d_chi^I W_21  (I >= 2), j = 1.
            for i in 2..=n {
                let lhs = sum_chi(&|j| h(chi_idx(n, j), rho_idx(n, i))) + grad[rho_idx(n, i)];
                let rhs = sum_chi(&|j| h(rho_idx(n, j), chi_idx(n, i))) + grad[rho_idx(n, i)];
                w_red = w_red.max((lhs - rhs).abs());
            }
            // d_eta^I W_21 = d_rho^I W_31  (I >= 1), j = 1.
            for i in 1..=n {
                let lhs = sum_chi(&|j| h(rho_idx(n, j), eta_idx(n, i)));
                let rhs = sum_chi(&|j| h(eta_idx(n, j), rho_idx(n, i)));
                w_red = w_red.max((lhs - rhs).abs());
            }
            // d_eta^I W_22 = d_rho^I W_32  (I >= 1), j = 2.
            for i in 1..=n {
                let lhs = sum_rho(&|j| h(rho_idx(n, j), eta_idx(n, i))) + grad[eta_idx(n, i)];
                let rhs = sum_rho(&|j| h(eta_idx(n, j), rho_idx(n, i))) + grad[eta_idx(n, i)];
                w_red = w_red.max((lhs - rhs).abs());
            }
            // d_chi^I W_31 = d_eta^I W_11  (I >= 2), j = 1.
            for i in 2..=n {
                let lhs = sum_chi(&|j| h(eta_idx(n, j), chi_idx(n, i))) + grad[eta_idx(n, i)];
                let rhs = sum_chi(&|j| h(chi_idx(n, j), eta_idx(n, i))) + grad[eta_idx(n, i)];
                w_red = w_red.max((lhs - rhs).abs());
            }
            // d_chi^I W_32 = d_eta^I W_12  (I >= 2), j = 2.
            for i in 2..=n {
                let lhs = sum_rho(&|j| h(eta_idx(n, j), chi_idx(n, i)));
                let rhs = sum_chi(&|j| h(rho_idx(n, j), eta_idx(n, i)));
                w_red = w_red.max((lhs - rhs).abs());
            }
            res.w_redundant = Some(w_red);
        }
        Ok(res)
    }

    /// The single surviving n = 1 constraint: |rho (V_rr + V_ee) - V_r|.
    pub fn cp_residual(&self, v: &VFunction, chart: &[f64]) -> Result<f64> {
        if v.n() != 1 {
            return Err(Error::InvalidConfig("cp_residual requires n = 1".into()));
        }
        let rho = chart[rho_idx(1, 1)];
        if rho <= 0.0 {
            return Err(Error::Domain(format!("rho = {rho} <= 0")));
        }
        let f = |c: &[f64]| v.eval(c);
        let vr = self.d.partial(f, chart, 0)?;
        let vrr = self.d.second(f, chart, 0, 0)?;
        let vee = self.d.second(f, chart, 1, 1)?;
        Ok((rho * (vrr + vee) - vr).abs())
    }

    /// The n = 1 closed-form metric and connection quadruple in the
    /// (rho, eta, psi_0, psi_1) basis, built from the frame
    /// alpha = rho dpsi_1, beta = eta dpsi_1 + dpsi_0.
    pub fn cp_assemble(&self, v: &VFunction, chart: &[f64]) -> Result<CpData> {
        if v.n() != 1 {
            return Err(Error::InvalidConfig("cp_assemble requires n = 1".into()));
        }
        let rho = chart[rho_idx(1, 1)];
        let eta = chart[eta_idx(1, 1)];
        if rho <= 0.0 {
            return Err(Error::Domain(format!("rho = {rho} <= 0")));
        }
        let f = |c: &[f64]| v.eval(c);
        let val = v.eval(chart)?;
        let vr = self.d.partial(f, chart, 0)?;
        let ve = self.d.partial(f, chart, 1)?;
        let disc = val * vr - rho * vr * vr - rho * ve * ve;
        if val == 0.0 || disc == 0.0 {
            return Err(Error::DegeneratePoint(
                "vanishing V or metric discriminant in n=1 assembly".into(),
            ));
        }

        // Covectors over (rho, eta, psi_0, psi_1).
        let alpha = [0.0, 0.0, 0.0, rho];
        let beta = [0.0, 0.0, 1.0, eta];
        let comb = |ca: f64, cb: f64| -> [f64; 4] {
            let mut out = [0.0; 4];
            for b in 0..4 {
                out[b] = ca * alpha[b] + cb * beta[b];
            }
            out
        };
        let a_cov = comb(val - rho * vr, -rho * ve);
        let b_cov = comb(rho * ve, -rho * vr);

        let mut g = DMatrix::<f64>::zeros(4, 4);
        let base = disc / (4.0 * rho * val * val);
        g[(0, 0)] = base;
        g[(1, 1)] = base;
        let fiber = 1.0 / (rho * val * val * disc);
        for p in 0..4 {
            for q in 0..4 {
                g[(p, q)] += fiber * (a_cov[p] * a_cov[q] + b_cov[p] * b_cov[q]);
            }
        }

        let omega = [
            [vr / (2.0 * val), ve / (2.0 * val), 0.0, 0.0],
            [ve / (2.0 * val), -vr / (2.0 * val), 0.0, 0.0],
            [0.0, 0.0, 0.0, rho / val],
            [0.0, 0.0, 1.0 / val, eta / val],
        ];
        Ok(CpData { g, omega })
    }
}

/// n = 1 assembled data over the (rho, eta, psi_0, psi_1) basis: the
/// metric and the quadruple (omega_0, omega_1, omega_2, omega_3).
#[derive(Clone, Debug)]
pub struct CpData {
    pub g: DMatrix<f64>,
    pub omega: [[f64; 4]; 4],
}
