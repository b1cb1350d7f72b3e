//! Generalized Gibbons-Hawking monopole data assembled from a generating
//! function F on the moduli space, and the residuals of the equation
//! systems it must satisfy.
//!
//! With the flat layout coords[3I + (i-1)] = x_i^I and the Wirtinger
//! combinations for z^I = (-x_2^I + i x_1^I)/2, the Legendre
//! identifications become, purely in real partials:
//!
//!   Phi_IJ = -1/2 F_{x_3^I x_3^J}
//!   A_K    = 1/2 (F_{x_3^K x_2^J} dx_1^J - F_{x_3^K x_1^J} dx_2^J)
//!   K      = F - x_3^I F_{x_3^I}
//!   psi'_K = c_K (x_2^0 F_{x_1^0 x_3^K} - x_1^0 F_{x_2^0 x_3^K})/2,
//!            c_K = 1 for K != 0, c_0 = 1/2 (gauge shift A_K -> A_K - d psi'_K)
//!
//! 2-forms are stored as antisymmetric matrices M with
//! omega = 1/2 M_ab dx^a ^ dx^b, so a monomial c dx^p ^ dx^q contributes
//! M_pq += c, M_qp -= c, and (dA)_ab = d_a A_b - d_b A_a.
//!
//! Orientation note: with the basis action *_I dx_j^J = 1/2 eps_jab
//! dx_a^I ^ dx_b^J (eps_123 = +1) and the identifications above, the
//! curvature equation satisfied by the Legendre data is
//! dA_K = -*_I dPhi_KI (toy model: dA_0 = +1/2 solid-angle form while
//! *_0 dPhi_00 = -1/2 solid-angle form, verifiable in closed form), and
//! the closed 2-forms with i_{d/dpsi_I} Omega_k = -dx_k^I are
//! Omega_k = -Phi_IJ (dr^I ^ dr^J)_k - (dpsi_I + A_I) ^ dx_k^I, whose
//! exterior derivative is -(dA_K + *_I dPhi_KI) ^ dx_k^K.

use nalgebra::DMatrix;

use crate::deriv::Deriv;
use crate::{levi_civita, Error, Result};

/// Flat coordinate index of component i = 0,1,2 of position vector I.
pub fn idx(sec: usize, comp: usize) -> usize {
    3 * sec + comp
}

/// Condition-number ceiling beyond which a matrix is reported degenerate.
pub const COND_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representative {
    /// The Legendre-transform connection A_K as identified.
    Plain,
    /// The gauge-shifted representative A_K - d psi'_K.
    Shifted,
}

/// Derivative configuration for monopole data: `inner` drives the
/// second-derivative stencils defining Phi and A, `outer` the additional
/// exterior derivatives (third order overall), which need a coarser step
/// to stay above the inner stencil noise.
#[derive(Clone, Copy, Debug)]
pub struct GhEngine {
    pub inner: Deriv,
    pub outer: Deriv,
}

impl Default for GhEngine {
    fn default() -> Self {
        // Fourth-order inner stencils keep the outer difference of the
        // second-derivative fields well above the roundoff floor.
        GhEngine { inner: Deriv::order4(), outer: Deriv::order4().with_step(1e-3) }
    }
}

impl GhEngine {
    pub fn order4() -> Self {
        GhEngine { inner: Deriv::order4(), outer: Deriv::order4().with_step(1e-3) }
    }

    /// Higgs matrix Phi_IJ = -1/2 F_{x_3^I x_3^J}, exactly symmetric.
    pub fn higgs<F>(&self, f: &F, n_sections: usize, coords: &[f64]) -> Result<DMatrix<f64>>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let mut phi = DMatrix::zeros(n_sections, n_sections);
        for ci in 0..n_sections {
            for cj in ci..n_sections {
                let v = -0.5 * self.inner.second(f, coords, idx(ci, 2), idx(cj, 2))?;
                phi[(ci, cj)] = v;
                phi[(cj, ci)] = v;
            }
        }
        Ok(phi)
    }

    /// Connection covectors, one row per K, over the moduli coordinates.
    /// The dx_3^J coefficients vanish identically.
    pub fn connection<F>(&self, f: &F, n_sections: usize, coords: &[f64]) -> Result<DMatrix<f64>>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let m = 3 * n_sections;
        let mut a = DMatrix::zeros(n_sections, m);
        for k in 0..n_sections {
            for cj in 0..n_sections {
                a[(k, idx(cj, 0))] = 0.5 * self.inner.second(f, coords, idx(k, 2), idx(cj, 1))?;
                a[(k, idx(cj, 1))] = -0.5 * self.inner.second(f, coords, idx(k, 2), idx(cj, 0))?;
            }
        }
        Ok(a)
    }

    /// Gauge-shift scalar psi'_K.
    pub fn shift_scalar<F>(
        &self,
        f: &F,
        n_sections: usize,
        coords: &[f64],
        k: usize,
    ) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let _ = n_sections;
        let c_k = if k == 0 { 0.5 } else { 1.0 };
        let f13 = self.inner.second(f, coords, idx(0, 0), idx(k, 2))?;
        let f23 = self.inner.second(f, coords, idx(0, 1), idx(k, 2))?;
        Ok(c_k * 0.5 * (coords[idx(0, 1)] * f13 - coords[idx(0, 0)] * f23))
    }

    /// Covector rows of the requested representative.
    pub fn connection_rep<F>(
        &self,
        f: &F,
        n_sections: usize,
        coords: &[f64],
        rep: Representative,
    ) -> Result<DMatrix<f64>>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let mut a = self.connection(f, n_sections, coords)?;
        if rep == Representative::Shifted {
            let m = 3 * n_sections;
            for k in 0..n_sections {
                let shift = |c: &[f64]| self.shift_scalar(f, n_sections, c, k);
                for b in 0..m {
                    a[(k, b)] -= self.outer.partial(shift, coords, b)?;
                }
            }
        }
        Ok(a)
    }

    /// Legendre transform: the potential K = F - x_3^I F_{x_3^I} and the
    /// conjugate values u_I + conj(u_I) = F_{x_3^I}.
    pub fn legendre<F>(
        &self,
        f: &F,
        n_sections: usize,
        coords: &[f64],
    ) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let mut k = f(coords)?;
        let mut conj = Vec::with_capacity(n_sections);
        for ci in 0..n_sections {
            let fx = self.inner.partial(f, coords, idx(ci, 2))?;
            k -= coords[idx(ci, 2)] * fx;
            conj.push(fx);
        }
        Ok((k, conj))
    }

    /// Residuals of the monopole system: max-norm of dA_K + sum_I *_I dPhi_KI
    /// (see the module orientation note) over 2-form components and all K,
    /// and max-norm of the gradient symmetry grad_I Phi_KJ - grad_J Phi_KI.
    pub fn monopole_residual<F>(
        &self,
        f: &F,
        n_sections: usize,
        coords: &[f64],
    ) -> Result<(f64, f64)>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let m = 3 * n_sections;
        // d of the connection rows.
        let conn_flat = |c: &[f64]| -> Result<Vec<f64>> {
            Ok(self.connection(f, n_sections, c)?.iter().copied().collect())
        };
        let jac_a = self.outer.jacobian(conn_flat, coords, n_sections * m)?;
        let a_entry = |k: usize, b: usize| k + n_sections * b; // column-major flatten
        // Gradients of the Higgs entries.
        let higgs_flat = |c: &[f64]| -> Result<Vec<f64>> {
            Ok(self.higgs(f, n_sections, c)?.iter().copied().collect())
        };
        let jac_phi = self.outer.jacobian(higgs_flat, coords, n_sections * n_sections)?;
        let phi_entry = |ci: usize, cj: usize| ci + n_sections * cj;

        let mut first: f64 = 0.0;
        for k in 0..n_sections {
            // dA_K as an antisymmetric matrix.
            let mut da = DMatrix::<f64>::zeros(m, m);
            for p in 0..m {
                for q in 0..m {
                    da[(p, q)] = jac_a[(a_entry(k, q), p)] - jac_a[(a_entry(k, p), q)];
                }
            }
            // sum_I *_I dPhi_KI
            let mut star = DMatrix::<f64>::zeros(m, m);
            for ci in 0..n_sections {
                for cj in 0..n_sections {
                    for j in 0..3 {
                        let coeff = jac_phi[(phi_entry(k, ci), idx(cj, j))];
                        for a in 0..3 {
                            for b in 0..3 {
                                let c = 0.5 * levi_civita(j, a, b) * coeff;
                                if c != 0.0 {
                                    star[(idx(ci, a), idx(cj, b))] += c;
                                    star[(idx(cj, b), idx(ci, a))] -= c;
                                }
                            }
                        }
                    }
                }
            }
            for p in 0..m {
                for q in 0..m {
                    first = first.max((da[(p, q)] + star[(p, q)]).abs());
                }
            }
        }

        let mut second: f64 = 0.0;
        for k in 0..n_sections {
            for ci in 0..n_sections {
                for cj in 0..n_sections {
                    for i in 0..3 {
                        let d = jac_phi[(phi_entry(k, cj), idx(ci, i))]
                            - jac_phi[(phi_entry(k, ci), idx(cj, i))];
                        second = second.max(d.abs());
                    }
                }
            }
        }
        Ok((first, second))
    }

    /// Metric G and 2-forms Omega of the Gibbons-Hawking Ansatz at a point,
    /// in the coordinate basis (x_i^I, psi_I).
    pub fn hk_assemble<F>(
        &self,
        f: &F,
        n_sections: usize,
        coords: &[f64],
        rep: Representative,
    ) -> Result<HkData>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let m = 3 * n_sections;
        let dim = m + n_sections;
        let phi = self.higgs(f, n_sections, coords)?;
        let phi_inv = invert_guarded(&phi)?;
        let a = self.connection_rep(f, n_sections, coords, rep)?;
        // Extended covectors dpsi_I + A_I over (x, psi).
        let mut atilde = DMatrix::zeros(n_sections, dim);
        for ci in 0..n_sections {
            for b in 0..m {
                atilde[(ci, b)] = a[(ci, b)];
            }
            atilde[(ci, m + ci)] = 1.0;
        }

        let mut g = DMatrix::zeros(dim, dim);
        for ci in 0..n_sections {
            for cj in 0..n_sections {
                for i in 0..3 {
                    g[(idx(ci, i), idx(cj, i))] += 0.5 * phi[(ci, cj)];
                }
                let coeff = 0.5 * phi_inv[(ci, cj)];
                for p in 0..dim {
                    for q in 0..dim {
                        g[(p, q)] += coeff * atilde[(ci, p)] * atilde[(cj, q)];
                    }
                }
            }
        }

        let mut omega = [
            DMatrix::zeros(dim, dim),
            DMatrix::zeros(dim, dim),
            DMatrix::zeros(dim, dim),
        ];
        for (k, om) in omega.iter_mut().enumerate() {
            for ci in 0..n_sections {
                for cj in 0..n_sections {
                    for i in 0..3 {
                        for j in 0..3 {
                            let c = -0.5 * phi[(ci, cj)] * levi_civita(k, i, j);
                            if c != 0.0 {
                                om[(idx(ci, i), idx(cj, j))] += c;
                                om[(idx(cj, j), idx(ci, i))] -= c;
                            }
                        }
                    }
                }
                // -(dpsi_I + A_I) ^ dx_k^I
                for p in 0..dim {
                    let c = -atilde[(ci, p)];
                    if c != 0.0 && p != idx(ci, k) {
                        om[(p, idx(ci, k))] += c;
                        om[(idx(ci, k), p)] -= c;
                    }
                }
            }
        }
        Ok(HkData { g, omega, n_sections })
    }

    /// Max-norm of the 3-form dOmega over coordinate triples. The psi
    /// coefficients of Omega are constants by construction, so only
    /// x-triples contribute.
    pub fn omega_closure_residual<F>(
        &self,
        f: &F,
        n_sections: usize,
        coords: &[f64],
        rep: Representative,
    ) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let m = 3 * n_sections;
        let dim = m + n_sections;
        let omega_flat = |c: &[f64]| -> Result<Vec<f64>> {
            let hk = self.hk_assemble(f, n_sections, c, rep)?;
            let mut out = Vec::with_capacity(3 * m * m);
            for om in &hk.omega {
                for p in 0..m {
                    for q in 0..m {
                        out.push(om[(p, q)]);
                    }
                }
            }
            let _ = dim;
            Ok(out)
        };
        let jac = self.outer.jacobian(omega_flat, coords, 3 * m * m)?;
        let entry = |k: usize, p: usize, q: usize| k * m * m + p * m + q;
        let mut res: f64 = 0.0;
        for k in 0..3 {
            for a in 0..m {
                for b in (a + 1)..m {
                    for c in (b + 1)..m {
                        let d = jac[(entry(k, b, c), a)] + jac[(entry(k, c, a), b)]
                            + jac[(entry(k, a, b), c)];
                        res = res.max(d.abs());
                    }
                }
            }
        }
        Ok(res)
    }
}

#[derive(Clone, Debug)]
pub struct HkData {
    /// Symmetric metric matrix over (x_i^I, psi_I).
    pub g: DMatrix<f64>,
    /// Antisymmetric 2-form matrices Omega_1..3 over the same basis.
    pub omega: [DMatrix<f64>; 3],
    pub n_sections: usize,
}

impl HkData {
    /// The moment-map rows: i_{d/dpsi_I} Omega_k = -dx_k^I holds exactly
    /// by construction; exposed for assertion in tests.
    pub fn moment_map_row(&self, k: usize, sec: usize) -> Vec<f64> {
        let m = 3 * self.n_sections;
        let row = m + sec;
        (0..self.g.nrows()).map(|b| self.omega[k][(row, b)]).collect()
    }
}

/// Apply the Hodge-like operator *_I to a covector over the moduli
/// coordinates; returns the antisymmetric 2-form matrix.
pub fn star_apply(i_sec: usize, cov: &[f64], n_sections: usize) -> DMatrix<f64> {
    let m = 3 * n_sections;
    let mut out = DMatrix::zeros(m, m);
    for cj in 0..n_sections {
        for j in 0..3 {
            let coeff = cov[idx(cj, j)];
            for a in 0..3 {
                for b in 0..3 {
                    let c = 0.5 * levi_civita(j, a, b) * coeff;
                    if c != 0.0 {
                        out[(idx(i_sec, a), idx(cj, b))] += c;
                        out[(idx(cj, b), idx(i_sec, a))] -= c;
                    }
                }
            }
        }
    }
    out
}

/// LU inversion with an SVD condition-number guard.
pub fn invert_guarded(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = mat.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > COND_LIMIT {
        return Err(Error::DegeneratePoint(format!(
            "matrix condition number {:.3e} exceeds {COND_LIMIT:.0e}",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    mat.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::DegeneratePoint("LU inversion failed".into()))
}
