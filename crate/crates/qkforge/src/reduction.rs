//! Fiberwise reduction of the toric hyperkahler cone to its quaternionic
//! Kahler base.
//!
//! The cone carries a left quaternionic scaling/rotation action; a
//! gauge-fixed reference configuration embeds a base chart
//! (chi, rho, eta, psi) and a fiber quaternion q into the moduli space via
//! r^I = q chi^I qbar (optionally divided by V for the unit-potential
//! scale). The Gibbons-Hawking data pulls back and splits into
//! fiber-independent pieces: the potential density V, the reduced Higgs
//! matrix U, the monopole vectors B_K = 2 U_KI chi^I and the base
//! connection covectors C_K. From these the base metric s*g and the Sp(1)
//! connection quadruple (omega_0, omega_1..3) are assembled, and two
//! consistency diagnostics are provided: reassembly of the cone metric in
//! the sigma coframe and the quaternion algebra of the induced almost
//! complex structures.

use nalgebra::DMatrix;

use crate::deriv::Deriv;
use crate::gh::{idx, invert_guarded, GhEngine};
use crate::quaternion::{sigma_matrix, Quaternion};
use crate::twistor::FFunction;
use crate::vfunc::{chart_dim, chi_idx, chi_vectors, eta_idx, rho_idx};
use crate::{levi_civita, Error, Result};

/// Relative spread tolerance for fiber-independence checks.
pub const FIBER_SPREAD_TOL: f64 = 1e-8;
/// Tolerance on residual sigma-components after subtracting sigma.B_K,
/// relative to the largest |B_K| component (floored at 1).
pub const FIBER_COMPONENT_TOL: f64 = 5e-6;
/// Loose relative safety net for embedded moduli points; samplers are
/// expected to impose much stricter margins.
pub const EMBED_MARGIN: f64 = 0.01;

/// Embed a base chart point into the moduli space: r^I = q chi^I qbar,
/// divided by `scale` when given (the unit-potential normalization uses
/// scale = V).
pub fn embed(n: usize, chart: &[f64], q: Quaternion, scale: Option<f64>) -> Result<Vec<f64>> {
    if q.norm_sq() == 0.0 {
        return Err(Error::ZeroQuaternion);
    }
    let div = match scale {
        Some(v) if v == 0.0 => {
            return Err(Error::DegeneratePoint("zero potential in scaled embedding".into()))
        }
        Some(v) => v,
        None => 1.0,
    };
    let chis = chi_vectors(n, chart);
    let mut coords = vec![0.0; 3 * (n + 1)];
    for (sec, chi) in chis.iter().enumerate() {
        let r = q.sandwich(*chi);
        for i in 0..3 {
            coords[idx(sec, i)] = r[i] / div;
        }
    }
    Ok(coords)
}

/// B_K = 2 U_KI chi^I.
pub fn compute_b(n: usize, u: &DMatrix<f64>, chart: &[f64]) -> Vec<[f64; 3]> {
    let chis = chi_vectors(n, chart);
    (0..=n)
        .map(|k| {
            let mut b = [0.0; 3];
            for (i, chi) in chis.iter().enumerate() {
                for (comp, bc) in b.iter_mut().enumerate() {
                    *bc += 2.0 * u[(k, i)] * chi[comp];
                }
            }
            b
        })
        .collect()
}

/// Max violation of the algebraic symmetry relations that the contracted
/// monopole vectors must satisfy in the gauge-fixed chart:
/// chi^I (B_I)_2 = rho^I (B_I)_1 and cyclic, summed over I.
pub fn b_symmetry_residual(n: usize, chart: &[f64], b: &[[f64; 3]]) -> f64 {
    let chis = chi_vectors(n, chart);
    let mut s = [0.0; 3];
    for (i, chi) in chis.iter().enumerate() {
        s[0] += chi[0] * b[i][1] - chi[1] * b[i][0];
        s[1] += chi[1] * b[i][2] - chi[2] * b[i][1];
        s[2] += chi[2] * b[i][0] - chi[0] * b[i][2];
    }
    s.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Pointwise base data feeding the metric/connection assembly.
#[derive(Clone, Debug)]
pub struct QkInputs {
    pub v: f64,
    /// Gradient of V over the chart coordinates.
    pub dv: Vec<f64>,
    pub u: DMatrix<f64>,
    /// Per-K covectors over the chart coordinates.
    pub c: Vec<Vec<f64>>,
}

/// Covector triple (d chi^I)_1..3 over the chart coordinates for section
/// `sec`, honoring the gauge fixing (chi^0 constant, chi^1 = (0, rho^1,
/// eta^1)).
fn dchi_covectors(n: usize, sec: usize) -> [Vec<f64>; 3] {
    let cd = chart_dim(n);
    let mut out = [vec![0.0; cd], vec![0.0; cd], vec![0.0; cd]];
    if sec >= 2 {
        out[0][chi_idx(n, sec)] = 1.0;
    }
    if sec >= 1 {
        out[1][rho_idx(n, sec)] = 1.0;
        out[2][eta_idx(n, sec)] = 1.0;
    }
    out
}

/// The Sp(1) connection quadruple over the (chart, psi) basis:
/// omega_0 = dV/2V and
/// omega_vec = [(dpsi_I + C_I) chi^I - U_IJ chi^I x dchi^J] / V.
pub fn qk_connection(n: usize, chart: &[f64], inp: &QkInputs) -> Result<[Vec<f64>; 4]> {
    if inp.v == 0.0 {
        return Err(Error::DegeneratePoint("V = 0 in connection assembly".into()));
    }
    let cd = chart_dim(n);
    let dim = cd + n + 1;
    let chis = chi_vectors(n, chart);
    let mut omega = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    for (b, dvb) in inp.dv.iter().enumerate() {
        omega[0][b] = dvb / (2.0 * inp.v);
    }
    let dchis: Vec<[Vec<f64>; 3]> = (0..=n).map(|sec| dchi_covectors(n, sec)).collect();
    for k in 0..3 {
        let om = &mut omega[k + 1];
        for (i, chi) in chis.iter().enumerate() {
            // (dpsi_I + C_I) chi^I_k
            om[cd + i] += chi[k] / inp.v;
            for b in 0..cd {
                om[b] += inp.c[i][b] * chi[k] / inp.v;
            }
            // - U_IJ (chi^I x dchi^J)_k
            for j in 0..=n {
                let uij = inp.u[(i, j)];
                if uij == 0.0 {
                    continue;
                }
                for a in 0..3 {
                    for c in 0..3 {
                        let eps = levi_civita(k, a, c);
                        if eps == 0.0 {
                            continue;
                        }
                        for b in 0..cd {
                            om[b] -= uij * eps * chi[a] * dchis[j][c][b] / inp.v;
                        }
                    }
                }
            }
        }
    }
    Ok(omega)
}

/// The combination s*g over the (chart, psi) basis:
/// s g = (1/2V)[U_IJ dchi^I.dchi^J + U^{IJ}(dpsi_I+C_I)(dpsi_J+C_J)]
///       - (omega_0^2 + omega_1^2 + omega_2^2 + omega_3^2).
pub fn qk_metric(n: usize, chart: &[f64], inp: &QkInputs) -> Result<DMatrix<f64>> {
    if inp.v == 0.0 {
        return Err(Error::DegeneratePoint("V = 0 in metric assembly".into()));
    }
    let cd = chart_dim(n);
    let dim = cd + n + 1;
    let u_inv = invert_guarded(&inp.u)?;
    let mut g = DMatrix::<f64>::zeros(dim, dim);

    let dchis: Vec<[Vec<f64>; 3]> = (0..=n).map(|sec| dchi_covectors(n, sec)).collect();
    for i in 0..=n {
        for j in 0..=n {
            let cij = inp.u[(i, j)] / (2.0 * inp.v);
            if cij != 0.0 {
                for k in 0..3 {
                    for a in 0..cd {
                        if dchis[i][k][a] == 0.0 {
                            continue;
                        }
                        for b in 0..cd {
                            g[(a, b)] += cij * dchis[i][k][a] * dchis[j][k][b];
                        }
                    }
                }
            }
            // (dpsi_I + C_I) extended covectors.
            let cinv = u_inv[(i, j)] / (2.0 * inp.v);
            if cinv != 0.0 {
                let mut ei = vec![0.0; dim];
                let mut ej = vec![0.0; dim];
                for b in 0..cd {
                    ei[b] = inp.c[i][b];
                    ej[b] = inp.c[j][b];
                }
                ei[cd + i] = 1.0;
                ej[cd + j] = 1.0;
                for a in 0..dim {
                    for b in 0..dim {
                        g[(a, b)] += cinv * ei[a] * ej[b];
                    }
                }
            }
        }
    }

    let omega = qk_connection(n, chart, inp)?;
    for om in &omega {
        for a in 0..dim {
            for b in 0..dim {
                g[(a, b)] -= om[a] * om[b];
            }
        }
    }
    // Symmetrize away assembly roundoff.
    let gt = g.transpose();
    Ok(0.5 * (&g + gt))
}

/// Result of the base-connection extraction.
#[derive(Clone, Debug)]
pub struct CExtraction {
    /// Per-K covectors over the chart coordinates, averaged over the
    /// sampled fiber points.
    pub c: Vec<Vec<f64>>,
    /// Max deviation of any component from the average across samples.
    pub spread: f64,
    /// Max residual sigma-component after subtracting sigma.B_K.
    pub fiber_residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct RedEngine {
    /// Gibbons-Hawking engine (fourth-order stencils).
    pub gh: GhEngine,
    /// Derivatives of exact maps (embeddings, closed-form scalars).
    pub d: Deriv,
    /// Derivatives of already-numerical fields; the larger fixed step keeps
    /// the inner stencil noise from being amplified.
    pub outer: Deriv,
}

impl Default for RedEngine {
    fn default() -> Self {
        RedEngine {
            gh: GhEngine::order4(),
            d: Deriv::order4(),
            outer: Deriv::order4().with_step(3e-3),
        }
    }
}

impl RedEngine {
    fn check_margin(&self, f: &FFunction, coords: &[f64]) -> Result<()> {
        // The margin is dimensionful and the scaled embedding divides all
        // positions by V, so guard relative to the point's own scale.
        let scale = coords.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let m = f.regularity_margin(coords);
        if m < EMBED_MARGIN * scale.min(1.0) {
            return Err(Error::Domain(format!(
                "embedded point regularity margin {m:.3e} below the guard"
            )));
        }
        Ok(())
    }

    /// V = K(embed(chart, q, unscaled)) / |q|^2.
    pub fn extract_v(&self, f: &FFunction, chart: &[f64], q: Quaternion) -> Result<f64> {
        let n = f.n_sections() - 1;
        let coords = embed(n, chart, q, None)?;
        self.check_margin(f, &coords)?;
        let ff = |c: &[f64]| f.eval(c);
        let (kpot, _) = self.gh.legendre(&ff, n + 1, &coords)?;
        Ok(kpot / q.norm_sq())
    }

    /// V re-extracted at several fiber points; errors if the relative
    /// spread exceeds the fiber-independence tolerance.
    pub fn extract_v_checked(&self, f: &FFunction, chart: &[f64], qs: &[Quaternion]) -> Result<f64> {
        let vals: Vec<f64> = qs.iter().map(|&q| self.extract_v(f, chart, q)).collect::<Result<_>>()?;
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        if (hi - lo) / scale > FIBER_SPREAD_TOL {
            return Err(Error::ModelInconsistency(format!(
                "potential density varies over the fiber: relative spread {:.3e}",
                (hi - lo) / scale
            )));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// U_IJ = |q|^2 Phi_IJ(embed(chart, q, unscaled)).
    pub fn extract_u(&self, f: &FFunction, chart: &[f64], q: Quaternion) -> Result<DMatrix<f64>> {
        let n = f.n_sections() - 1;
        let coords = embed(n, chart, q, None)?;
        self.check_margin(f, &coords)?;
        let ff = |c: &[f64]| f.eval(c);
        Ok(q.norm_sq() * self.gh.higgs(&ff, n + 1, &coords)?)
    }

    /// U recovered from the unit-potential scale instead:
    /// U_IJ = |q|^2 Phi_IJ(embed(chart, q, scaled)) / V. Must agree with
    /// the unscaled extraction.
    pub fn extract_u_scaled(&self, f: &FFunction, chart: &[f64], q: Quaternion) -> Result<DMatrix<f64>> {
        let n = f.n_sections() - 1;
        let v = self.extract_v(f, chart, q)?;
        let coords = embed(n, chart, q, Some(v))?;
        self.check_margin(f, &coords)?;
        let ff = |c: &[f64]| f.eval(c);
        Ok(q.norm_sq() / v * self.gh.higgs(&ff, n + 1, &coords)?)
    }

    /// U re-extracted at several fiber points with the spread check.
    pub fn extract_u_checked(
        &self,
        f: &FFunction,
        chart: &[f64],
        qs: &[Quaternion],
    ) -> Result<DMatrix<f64>> {
        let mats: Vec<DMatrix<f64>> =
            qs.iter().map(|&q| self.extract_u(f, chart, q)).collect::<Result<_>>()?;
        let n1 = mats[0].nrows();
        let mut mean = DMatrix::<f64>::zeros(n1, n1);
        for m in &mats {
            mean += m;
        }
        mean /= mats.len() as f64;
        let scale = mats
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |s, v| s.max(v.abs()))
            .max(1e-300);
        let spread = mats
            .iter()
            .map(|m| (m - &mean).abs().max())
            .fold(0.0f64, f64::max);
        if spread / scale > FIBER_SPREAD_TOL {
            return Err(Error::ModelInconsistency(format!(
                "reduced Higgs matrix varies over the fiber: relative spread {:.3e}",
                spread / scale
            )));
        }
        Ok(mean)
    }

    /// The scaled embedding as a map over y = (chart, q), with V recomputed
    /// from the chart part (at the fixed reference fiber point `q_ref`) so
    /// the Jacobian sees the full chart dependence.
    fn scaled_embed_map<'a>(
        &'a self,
        f: &'a FFunction,
        q_ref: Quaternion,
    ) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
        let n = f.n_sections() - 1;
        let cd = chart_dim(n);
        move |y: &[f64]| {
            let (chart, qa) = y.split_at(cd);
            let q = Quaternion::new(qa[0], qa[1], qa[2], qa[3]);
            let v = self.extract_v(f, chart, q_ref)?;
            embed(n, chart, q, Some(v))
        }
    }

    /// Pull the shifted connection representative back along the scaled
    /// embedding at each sampled fiber point, subtract sigma.B_K, verify
    /// the remainder is sigma-free and fiber-independent, and return the
    /// averaged base covectors.
    pub fn extract_c(
        &self,
        f: &FFunction,
        chart: &[f64],
        qs: &[Quaternion],
    ) -> Result<CExtraction> {
        let n = f.n_sections() - 1;
        let cd = chart_dim(n);
        let m = 3 * (n + 1);
        let ff = |c: &[f64]| f.eval(c);
        let u = self.extract_u(f, chart, qs[0])?;
        let b = compute_b(n, &u, chart);

        let mut samples: Vec<Vec<Vec<f64>>> = Vec::with_capacity(qs.len());
        let mut fiber_residual: f64 = 0.0;
        for &q in qs {
            let emb = self.scaled_embed_map(f, q);
            let mut y = chart.to_vec();
            y.extend_from_slice(&q.to_array());
            let jac = self.d.jacobian(&emb, &y, m)?;
            let coords = emb(&y)?;
            self.check_margin(f, &coords)?;
            let a_plain = self.gh.connection(&ff, n + 1, &coords)?;
            let s = sigma_matrix(q)?;
            let n2 = q.norm_sq();

            let mut per_k: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
            for k in 0..=n {
                // Pullback of A_K, minus the gradient of the shift scalar
                // composed with the embedding (d commutes with pullback).
                let mut tot = vec![0.0; cd + 4];
                for bcol in 0..cd + 4 {
                    for row in 0..m {
                        tot[bcol] += jac[(row, bcol)] * a_plain[(k, row)];
                    }
                }
                let shift = |yy: &[f64]| -> Result<f64> {
                    let c = emb(yy)?;
                    self.gh.shift_scalar(&ff, n + 1, &c, k)
                };
                let grad = self.outer.gradient_richardson(shift, &y)?;
                for bcol in 0..cd + 4 {
                    tot[bcol] -= grad[bcol];
                }
                // Decompose the dq-part in the sigma coframe: c_mu =
                // sum_a a_a S[a][mu]; the rows of S are orthogonal with
                // S S^T = I/|q|^2, so a = |q|^2 S c.
                let mut amp = [0.0; 4];
                for a in 0..4 {
                    for mu in 0..4 {
                        amp[a] += n2 * s[a][mu] * tot[cd + mu];
                    }
                }
                fiber_residual = fiber_residual.max(amp[0].abs());
                for i in 0..3 {
                    fiber_residual = fiber_residual.max((amp[i + 1] - b[k][i]).abs());
                }
                per_k.push(tot[..cd].to_vec());
            }
            samples.push(per_k);
        }
        let b_scale = b
            .iter()
            .flat_map(|bk| bk.iter().map(|v| v.abs()))
            .fold(1.0f64, f64::max);
        if fiber_residual > FIBER_COMPONENT_TOL * b_scale {
            return Err(Error::GaugeRepresentative(format!(
                "connection pullback retains sigma-components: residual {fiber_residual:.3e}"
            )));
        }

        let mut c_avg = vec![vec![0.0; cd]; n + 1];
        for per_k in &samples {
            for k in 0..=n {
                for bcol in 0..cd {
                    c_avg[k][bcol] += per_k[k][bcol] / samples.len() as f64;
                }
            }
        }
        let mut spread: f64 = 0.0;
        for per_k in &samples {
            for k in 0..=n {
                for bcol in 0..cd {
                    spread = spread.max((per_k[k][bcol] - c_avg[k][bcol]).abs());
                }
            }
        }
        Ok(CExtraction { c: c_avg, spread, fiber_residual })
    }

    /// The curvature 2-forms F_K of the reduced Bogomolnyi system, built
    /// from chart-derivatives of the U field. Returned as antisymmetric
    /// matrices over the chart coordinates. Sums run over the maximum
    /// ranges on which each factor is defined (chi-derivatives and dchi
    /// need I >= 2, rho/eta ones I >= 1).
    pub fn bogomolnyi_curvature(
        &self,
        n: usize,
        chart: &[f64],
        u_field: &(dyn Fn(&[f64]) -> Result<DMatrix<f64>> + '_),
    ) -> Result<Vec<DMatrix<f64>>> {
        let cd = chart_dim(n);
        let n1 = n + 1;
        let u_flat = |c: &[f64]| -> Result<Vec<f64>> {
            let u = u_field(c)?;
            Ok(u.iter().cloned().collect())
        };
        // Column-major flattening: entry (K, J) at K + n1*J.
        let du = self.outer.jacobian(u_flat, chart, n1 * n1)?;
        let d_u = |coord: usize, k: usize, j: usize| du[(k + n1 * j, coord)];
        let rho1 = chart[rho_idx(n, 1)];

        let mut out = Vec::with_capacity(n1);
        for k in 0..n1 {
            let mut fk = DMatrix::<f64>::zeros(cd, cd);
            let add = |mat: &mut DMatrix<f64>, p: usize, q: usize, c: f64| {
                mat[(p, q)] += c;
                mat[(q, p)] -= c;
            };
            for i in 1..=n {
                for j in 1..=n {
                    // (1/2)(d_{chi^I} U_KJ + d_{chi^J} U_KI) deta^I ^ drho^J
                    let mut c1 = 0.0;
                    if i >= 2 {
                        c1 += d_u(chi_idx(n, i), k, j);
                    }
                    if j >= 2 {
                        c1 += d_u(chi_idx(n, j), k, i);
                    }
                    if c1 != 0.0 {
                        add(&mut fk, eta_idx(n, i), rho_idx(n, j), 0.5 * c1);
                    }
                    // (1/2)(d_{rho^I} U_KJ + d_{rho^J} U_KI) dchi^I ^ deta^J
                    if i >= 2 {
                        let c2 = d_u(rho_idx(n, i), k, j) + d_u(rho_idx(n, j), k, i);
                        add(&mut fk, chi_idx(n, i), eta_idx(n, j), 0.5 * c2);
                    }
                    // (1/2)(d_{eta^I} U_KJ + d_{eta^J} U_KI) drho^I ^ dchi^J
                    if j >= 2 {
                        let c3 = d_u(eta_idx(n, i), k, j) + d_u(eta_idx(n, j), k, i);
                        add(&mut fk, rho_idx(n, i), chi_idx(n, j), 0.5 * c3);
                    }
                }
                // (1/2)(chi^I d_{rho^I} - rho^I d_{chi^I}) U_KJ
                //   (deta^1 ^ drho^J + deta^J ^ drho^1)/rho^1
                let mut c4 = 0.0;
                for ip in 2..=n {
                    c4 += chart[chi_idx(n, ip)] * d_u(rho_idx(n, ip), k, i)
                        - chart[rho_idx(n, ip)] * d_u(chi_idx(n, ip), k, i);
                }
                if c4 != 0.0 {
                    add(&mut fk, eta_idx(n, 1), rho_idx(n, i), 0.5 * c4 / rho1);
                    add(&mut fk, eta_idx(n, i), rho_idx(n, 1), 0.5 * c4 / rho1);
                }
            }
            out.push(fk);
        }
        Ok(out)
    }

    /// Per-K max-norm of dC_K - F_K over 2-form components.
    pub fn bogomolnyi_residual(
        &self,
        n: usize,
        chart: &[f64],
        c_field: &(dyn Fn(&[f64]) -> Result<Vec<Vec<f64>>> + '_),
        u_field: &(dyn Fn(&[f64]) -> Result<DMatrix<f64>> + '_),
    ) -> Result<Vec<f64>> {
        let cd = chart_dim(n);
        let n1 = n + 1;
        let fks = self.bogomolnyi_curvature(n, chart, u_field)?;
        let c_flat = |c: &[f64]| -> Result<Vec<f64>> {
            let rows = c_field(c)?;
            Ok(rows.into_iter().flatten().collect())
        };
        let jc = self.outer.jacobian(c_flat, chart, n1 * cd)?;
        let mut out = Vec::with_capacity(n1);
        for k in 0..n1 {
            let mut res: f64 = 0.0;
            for a in 0..cd {
                for b in 0..cd {
                    let dc = jc[(k * cd + b, a)] - jc[(k * cd + a, b)];
                    res = res.max((dc - fks[k][(a, b)]).abs());
                }
            }
            out.push(res);
        }
        Ok(out)
    }

    /// Extraction-backed QkInputs at a chart point, using the given fiber
    /// samples for the connection split.
    pub fn qk_inputs(&self, f: &FFunction, chart: &[f64], qs: &[Quaternion]) -> Result<QkInputs> {
        let v = self.extract_v_checked(f, chart, qs)?;
        let u = self.extract_u(f, chart, qs[0])?;
        let vfield = |c: &[f64]| self.extract_v(f, c, qs[0]);
        let dv = self.d.gradient(vfield, chart)?;
        let cx = self.extract_c(f, chart, qs)?;
        Ok(QkInputs { v, dv, u, c: cx.c })
    }

    /// Assemble the cone metric two ways over the y = (chart, q, psi)
    /// coordinates and return their max-norm difference relative to the
    /// metric's own max-norm: (a) the
    /// Gibbons-Hawking metric at the scaled embedded point, pulled back by
    /// the embedding Jacobian (identity on psi); (b) the sigma-coframe form
    /// |q|^2 [ s g + sum_i (sigma_i + omega_i)^2 + sigma_0^2 ].
    pub fn cone_reassembly_residual(
        &self,
        f: &FFunction,
        chart: &[f64],
        q: Quaternion,
        qs: &[Quaternion],
    ) -> Result<f64> {
        let n = f.n_sections() - 1;
        let cd = chart_dim(n);
        let m = 3 * (n + 1);
        let dim_y = cd + 4 + (n + 1);
        let ff = |c: &[f64]| f.eval(c);

        // Route (a): the Gibbons-Hawking metric in the plain representative,
        // pulled back through the composed map that sends positions through
        // the scaled embedding and shifts each fiber angle by the gauge
        // scalar psi'_K composed with the embedding (the representative
        // change is a fiber coordinate change, so this is equivalent to
        // assembling in the shifted representative, but the gauge-scalar
        // derivative is taken over (chart, q) where it is well conditioned).
        let emb = self.scaled_embed_map(f, q);
        let mut y = chart.to_vec();
        y.extend_from_slice(&q.to_array());
        let jac = self.d.jacobian(&emb, &y, m)?;
        let coords = emb(&y)?;
        self.check_margin(f, &coords)?;
        let hk = self.gh.hk_assemble(&ff, n + 1, &coords, crate::gh::Representative::Plain)?;
        let mut p = DMatrix::<f64>::zeros(m + n + 1, dim_y);
        for row in 0..m {
            for col in 0..cd + 4 {
                p[(row, col)] = jac[(row, col)];
            }
        }
        for i in 0..=n {
            let shift = |yy: &[f64]| -> Result<f64> {
                let c = emb(yy)?;
                self.gh.shift_scalar(&ff, n + 1, &c, i)
            };
            let grad = self.outer.gradient_richardson(shift, &y)?;
            for col in 0..cd + 4 {
                p[(m + i, col)] = -grad[col];
            }
            p[(m + i, cd + 4 + i)] = 1.0;
        }
        let ga = p.transpose() * &hk.g * &p;

        // Route (b): base data and the sigma coframe.
        let inp = self.qk_inputs(f, chart, qs)?;
        let sg = qk_metric(n, chart, &inp)?;
        let omega = qk_connection(n, chart, &inp)?;
        let s = sigma_matrix(q)?;
        let n2 = q.norm_sq();

        // Extend a (chart, psi) covector and a sigma row into y-coordinates.
        let ext = |base: &[f64], sig: Option<usize>| -> Vec<f64> {
            let mut out = vec![0.0; dim_y];
            for b in 0..cd {
                out[b] = base[b];
            }
            for i in 0..=n {
                out[cd + 4 + i] = base[cd + i];
            }
            if let Some(a) = sig {
                for mu in 0..4 {
                    out[cd + mu] += s[a][mu];
                }
            }
            out
        };
        let mut gb = DMatrix::<f64>::zeros(dim_y, dim_y);
        for a in 0..cd + n + 1 {
            let (ra, rb) = (
                if a < cd { a } else { a + 4 },
                |b: usize| if b < cd { b } else { b + 4 },
            );
            for b in 0..cd + n + 1 {
                gb[(ra, rb(b))] += n2 * sg[(a, b)];
            }
        }
        let zero = vec![0.0; cd + n + 1];
        let w0 = ext(&zero, Some(0));
        let mut covs = vec![w0];
        for i in 0..3 {
            covs.push(ext(&omega[i + 1], Some(i + 1)));
        }
        for w in &covs {
            for a in 0..dim_y {
                for b in 0..dim_y {
                    gb[(a, b)] += n2 * w[a] * w[b];
                }
            }
        }
        // Entries of s g scale like 1/V^2, so where V is small the absolute
        // difference is inflated by the metric's own magnitude; report the
        // max-norm difference relative to that scale (floored at 1).
        let scale = gb.abs().max().max(1.0);
        Ok((ga - gb).abs().max() / scale)
    }

    /// Quaternion-algebra residual of the almost complex structures
    /// induced by the curvature of the Sp(1) connection:
    /// s Theta_k = (1/2) d omega_k + eps_kij omega_i (x) omega_j,
    /// J_k = (s g)^{-1} Theta_k, and the J_k must satisfy
    /// J_i J_j = -delta_ij + eps_ijk J_k. (The relative 1/2 reflects the
    /// normalization of the omega_a returned by qk_connection, which is
    /// half the one that satisfies s Theta = d omega + omega ^ omega.)
    pub fn almost_complex_check(
        &self,
        n: usize,
        provider: &(dyn Fn(&[f64]) -> Result<QkInputs> + '_),
        chart: &[f64],
    ) -> Result<f64> {
        let cd = chart_dim(n);
        let dim = cd + n + 1;
        let inp = provider(chart)?;
        let sg = qk_metric(n, chart, &inp)?;
        let sg_inv = invert_guarded(&sg)?;
        let omega = qk_connection(n, chart, &inp)?;

        // Chart-derivatives of the imaginary connection components; the
        // psi-coefficients vary with the chart too, so differentiate the
        // full covectors.
        let om_flat = |c: &[f64]| -> Result<Vec<f64>> {
            let i = provider(c)?;
            let om = qk_connection(n, c, &i)?;
            let mut out = Vec::with_capacity(3 * dim);
            for k in 0..3 {
                out.extend_from_slice(&omega_row(&om, k + 1));
            }
            Ok(out)
        };
        let jom = self.outer.jacobian(om_flat, chart, 3 * dim)?;

        let mut js: Vec<DMatrix<f64>> = Vec::with_capacity(3);
        for k in 0..3 {
            let mut theta = DMatrix::<f64>::zeros(dim, dim);
            for a in 0..cd {
                for b in 0..dim {
                    theta[(a, b)] += 0.5 * jom[(k * dim + b, a)];
                    theta[(b, a)] -= 0.5 * jom[(k * dim + b, a)];
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    let eps = levi_civita(k, i, j);
                    if eps == 0.0 {
                        continue;
                    }
                    for a in 0..dim {
                        for b in 0..dim {
                            theta[(a, b)] += eps * omega[i + 1][a] * omega[j + 1][b];
                        }
                    }
                }
            }
            js.push(&sg_inv * theta);
        }

        let id = DMatrix::<f64>::identity(dim, dim);
        let mut res: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut m = &js[i] * &js[j];
                if i == j {
                    m += &id;
                }
                for k in 0..3 {
                    let eps = levi_civita(i, j, k);
                    if eps != 0.0 {
                        m -= eps * &js[k];
                    }
                }
                res = res.max(m.abs().max());
            }
        }
        Ok(res)
    }

    /// Flat-space check for the single-section logarithmic model: the
    /// assembled Gibbons-Hawking metric, pulled back along x = q k qbar
    /// with the fiber angle identified with the chart-independent scalar
    /// (1/2) arctan(r Re z / (x_3 Im z)), must equal the identity matrix in
    /// the dq coordinates (the flat metric |dq|^2).
    pub fn toy_flat_residual(&self, q: Quaternion) -> Result<f64> {
        let f = FFunction::ToyLog;
        let ff = |c: &[f64]| f.eval(c);
        let emb = |ya: &[f64]| -> Result<Vec<f64>> {
            let qq = Quaternion::new(ya[0], ya[1], ya[2], ya[3]);
            embed(0, &[], qq, None)
        };
        let y = q.to_array().to_vec();
        let coords = emb(&y)?;
        self.check_margin(&f, &coords)?;
        let jac = self.d.jacobian(emb, &y, 3)?;
        let phi = self.gh.higgs(&ff, 1, &coords)?[(0, 0)];
        let a = self.gh.connection(&ff, 1, &coords)?;

        // Fiber combination dpsi_0 + A_0 - d(psi_0 + psi'_0). The angle sum
        // psi_0 + psi'_0 is a function of the moduli alone, while psi_0
        // itself is half the Euler fiber angle and contributes its own
        // differential over q.
        let angle = |ya: &[f64]| -> Result<f64> {
            let c = emb(ya)?;
            let (x1, x2, x3) = (c[0], c[1], c[2]);
            let r = (x1 * x1 + x2 * x2 + x3 * x3).sqrt();
            // Re z = -x2/2, Im z = x1/2.
            Ok(0.5 * (r * (-x2) / (x3 * x1)).atan())
        };
        let grad = self.d.gradient(angle, &y)?;
        let psi0 = |ya: &[f64]| -> Result<f64> {
            let (q0, q1, q2, q3) = (ya[0], ya[1], ya[2], ya[3]);
            Ok(0.5 * (2.0 * (q1 * q2 - q0 * q3)).atan2(q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3))
        };
        let grad_psi0 = self.d.gradient(psi0, &y)?;
        let mut fib = [0.0; 4];
        for mu in 0..4 {
            for row in 0..3 {
                fib[mu] += jac[(row, mu)] * a[(0, row)];
            }
            fib[mu] += grad_psi0[mu] - grad[mu];
        }

        let mut g = DMatrix::<f64>::zeros(4, 4);
        for mu in 0..4 {
            for nu in 0..4 {
                for row in 0..3 {
                    g[(mu, nu)] += 0.5 * phi * jac[(row, mu)] * jac[(row, nu)];
                }
                g[(mu, nu)] += 0.5 / phi * fib[mu] * fib[nu];
            }
        }
        let id = DMatrix::<f64>::identity(4, 4);
        Ok((g - id).abs().max())
    }
}

fn omega_row(om: &[Vec<f64>; 4], k: usize) -> Vec<f64> {
    om[k].clone()
}
