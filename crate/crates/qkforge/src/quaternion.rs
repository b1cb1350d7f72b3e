//! Quaternion algebra, Euler parametrization of the group manifold, the
//! left-invariant coframe sigma_a and the scaling/rotation generators X_a.
//!
//! Conventions: q = q0 + q1 i + q2 j + q3 k, Euler factorization
//! q = r exp(-i phi/2) exp(-j theta/2) exp(-k psi/2), and coframe defined by
//! d(conj q) (conj q)^{-1} = sigma_0 + sigma_1 i + sigma_2 j + sigma_3 k.

use crate::{Error, Result};

/// Threshold on |cos theta| below which the Euler chart degenerates.
const GIMBAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl Quaternion {
    pub fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Self {
        Quaternion { q0, q1, q2, q3 }
    }

    pub fn one() -> Self {
        Quaternion::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.q0, self.q1, self.q2, self.q3]
    }

    pub fn norm_sq(self) -> f64 {
        self.q0 * self.q0 + self.q1 * self.q1 + self.q2 * self.q2 + self.q3 * self.q3
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn conj(self) -> Self {
        Quaternion::new(self.q0, -self.q1, -self.q2, -self.q3)
    }

    pub fn scale(self, s: f64) -> Self {
        Quaternion::new(s * self.q0, s * self.q1, s * self.q2, s * self.q3)
    }

    pub fn add(self, o: Self) -> Self {
        Quaternion::new(self.q0 + o.q0, self.q1 + o.q1, self.q2 + o.q2, self.q3 + o.q3)
    }

    /// Hamilton product self * o (i j = k).
    pub fn mul(self, o: Self) -> Self {
        let (a0, a1, a2, a3) = (self.q0, self.q1, self.q2, self.q3);
        let (b0, b1, b2, b3) = (o.q0, o.q1, o.q2, o.q3);
        Quaternion::new(
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        )
    }

    pub fn inverse(self) -> Result<Self> {
        let n2 = self.norm_sq();
        if n2 == 0.0 {
            return Err(Error::ZeroQuaternion);
        }
        Ok(self.conj().scale(1.0 / n2))
    }

    /// q v conj(q) for a purely imaginary v; this is |q|^2 times the
    /// rotation of v by the unit quaternion q/|q|.
    pub fn sandwich(self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion::new(0.0, v[0], v[1], v[2]);
        let r = self.mul(p).mul(self.conj());
        [r.q1, r.q2, r.q3]
    }

    /// Proper rotation of v by the unit direction of q: q v conj(q)/|q|^2.
    pub fn rotate_vector(self, v: [f64; 3]) -> Result<[f64; 3]> {
        let n2 = self.norm_sq();
        if n2 == 0.0 {
            return Err(Error::ZeroQuaternion);
        }
        let w = self.sandwich(v);
        Ok([w[0] / n2, w[1] / n2, w[2] / n2])
    }

    /// q = r exp(-i phi/2) exp(-j theta/2) exp(-k psi/2), r > 0.
    pub fn from_euler(r: f64, phi: f64, theta: f64, psi: f64) -> Result<Self> {
        if r <= 0.0 {
            return Err(Error::NonPositiveRadius(r));
        }
        let ei = Quaternion::new((phi / 2.0).cos(), -(phi / 2.0).sin(), 0.0, 0.0);
        let ej = Quaternion::new((theta / 2.0).cos(), 0.0, -(theta / 2.0).sin(), 0.0);
        let ek = Quaternion::new((psi / 2.0).cos(), 0.0, 0.0, -(psi / 2.0).sin());
        Ok(ei.mul(ej).mul(ek).scale(r))
    }

    /// Inverse of `from_euler`, with theta in (-pi/2, pi/2) up to the
    /// chart's gimbal locus |cos theta| = 0, where it fails.
    pub fn to_euler(self) -> Result<(f64, f64, f64, f64)> {
        let r = self.norm();
        if r == 0.0 {
            return Err(Error::ZeroQuaternion);
        }
        let u = self.scale(1.0 / r);
        let (q0, q1, q2, q3) = (u.q0, u.q1, u.q2, u.q3);
        let sin_theta = (-2.0 * (q1 * q3 + q0 * q2)).clamp(-1.0, 1.0);
        let cos_theta = (1.0 - sin_theta * sin_theta).sqrt();
        if cos_theta < GIMBAL_TOL {
            return Err(Error::GimbalLock(cos_theta));
        }
        let theta = sin_theta.asin();
        let phi = (2.0 * (q2 * q3 - q0 * q1)).atan2(q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3);
        let psi = (2.0 * (q1 * q2 - q0 * q3)).atan2(q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3);
        Ok((r, phi, theta, psi))
    }
}

/// Matrix S with sigma_a = S[a][mu] dq_mu, the components of
/// d(conj q) (conj q)^{-1} in the coordinate coframe.
pub fn sigma_matrix(q: Quaternion) -> Result<[[f64; 4]; 4]> {
    let n2 = q.norm_sq();
    if n2 == 0.0 {
        return Err(Error::ZeroQuaternion);
    }
    let (q0, q1, q2, q3) = (q.q0, q.q1, q.q2, q.q3);
    let mut s = [
        [q0, q1, q2, q3],
        [q1, -q0, -q3, q2],
        [q2, q3, -q0, -q1],
        [q3, -q2, q1, -q0],
    ];
    for row in s.iter_mut() {
        for v in row.iter_mut() {
            *v /= n2;
        }
    }
    Ok(s)
}

/// Evaluate the coframe on a tangent 4-vector: (sigma_0(v), .., sigma_3(v)).
/// The radial direction v = q gives (1, 0, 0, 0).
pub fn left_invariant_eval(q: Quaternion, v: [f64; 4]) -> Result<[f64; 4]> {
    let s = sigma_matrix(q)?;
    let mut out = [0.0; 4];
    for a in 0..4 {
        for mu in 0..4 {
            out[a] += s[a][mu] * v[mu];
        }
    }
    Ok(out)
}

/// Generators of the scaling/rotation action q -> u q, as coordinate
/// components of vector fields: X_a = hx[a][mu] d/dq_mu.
pub fn hx_generators(q: Quaternion) -> [[f64; 4]; 4] {
    let (q0, q1, q2, q3) = (q.q0, q.q1, q.q2, q.q3);
    [
        [q0, q1, q2, q3],
        [q1, -q0, q3, -q2],
        [q2, -q3, -q0, q1],
        [q3, q2, -q1, -q0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levi_civita;

    fn is_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    fn sample_q() -> Quaternion {
        Quaternion::new(0.7, -0.4, 1.1, 0.3)
    }

    #[test]
    fn product_norm_and_inverse() {
        let a = sample_q();
        let b = Quaternion::new(-0.2, 0.9, 0.5, -1.3);
        assert!(is_close(a.mul(b).norm(), a.norm() * b.norm(), 1e-12));
        let id = a.mul(a.inverse().unwrap());
        assert!(is_close(id.q0, 1.0, 1e-12));
        assert!(is_close(id.q1, 0.0, 1e-12));
        assert!(is_close(id.q2, 0.0, 1e-12));
        assert!(is_close(id.q3, 0.0, 1e-12));
        assert!(Quaternion::new(0.0, 0.0, 0.0, 0.0).inverse().is_err());
    }

    #[test]
    fn hamilton_table() {
        let i = Quaternion::new(0.0, 1.0, 0.0, 0.0);
        let j = Quaternion::new(0.0, 0.0, 1.0, 0.0);
        let k = Quaternion::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!(i.mul(j), k);
        assert_eq!(j.mul(k), i);
        assert_eq!(k.mul(i), j);
        assert_eq!(i.mul(i).q0, -1.0);
    }

    #[test]
    fn euler_roundtrip() {
        for &(r, phi, theta, psi) in &[
            (1.0, 0.3, 0.2, -0.7),
            (2.5, -2.0, 1.2, 3.0),
            (0.4, 2.9, -1.4, -2.8),
        ] {
            let q = Quaternion::from_euler(r, phi, theta, psi).unwrap();
            let (r2, phi2, theta2, psi2) = q.to_euler().unwrap();
            assert!(is_close(r, r2, 1e-12));
            assert!(is_close(phi, phi2, 1e-12));
            assert!(is_close(theta, theta2, 1e-12));
            assert!(is_close(psi, psi2, 1e-12));
        }
        assert!(Quaternion::from_euler(-1.0, 0.0, 0.0, 0.0).is_err());
        // Gimbal locus theta = pi/2.
        let locked = Quaternion::from_euler(1.0, 0.3, std::f64::consts::FRAC_PI_2, 0.5).unwrap();
        assert!(locked.to_euler().is_err());
    }

    /// Independent oracle: the conjugation action of the Euler factors must
    /// compose the three elementary axis rotations by -phi, -theta, -psi.
    #[test]
    fn rotation_matches_euler_axis_rotations() {
        let (phi, theta, psi) = (0.8, -0.5, 1.7);
        let q = Quaternion::from_euler(1.9, phi, theta, psi).unwrap();

        let rx = |a: f64, v: [f64; 3]| {
            [v[0], a.cos() * v[1] - a.sin() * v[2], a.sin() * v[1] + a.cos() * v[2]]
        };
        let ry = |a: f64, v: [f64; 3]| {
            [a.cos() * v[0] + a.sin() * v[2], v[1], -a.sin() * v[0] + a.cos() * v[2]]
        };
        let rz = |a: f64, v: [f64; 3]| {
            [a.cos() * v[0] - a.sin() * v[1], a.sin() * v[0] + a.cos() * v[1], v[2]]
        };

        let v = [0.3, -1.2, 0.7];
        let got = q.rotate_vector(v).unwrap();
        let want = rx(-phi, ry(-theta, rz(-psi, v)));
        for a in 0..3 {
            assert!(is_close(got[a], want[a], 1e-12), "component {a}: {got:?} vs {want:?}");
        }
    }

    /// sigma_0 = dr/r and sigma_3 = (d psi - sin theta d phi)/2 in the Euler
    /// chart: pull the coordinate expression back numerically.
    #[test]
    fn sigma_euler_components() {
        let (r, phi, theta, psi) = (1.3, 0.4, -0.9, 2.1);
        let h = 1e-6;
        // Numeric Jacobian dq_mu / d(r, phi, theta, psi).
        let mut jac = [[0.0; 4]; 4];
        for (col, e) in [(0, [h, 0.0, 0.0, 0.0]), (1, [0.0, h, 0.0, 0.0]),
                         (2, [0.0, 0.0, h, 0.0]), (3, [0.0, 0.0, 0.0, h])] {
            let qp = Quaternion::from_euler(r + e[0], phi + e[1], theta + e[2], psi + e[3]).unwrap();
            let qm = Quaternion::from_euler(r - e[0], phi - e[1], theta - e[2], psi - e[3]).unwrap();
            for mu in 0..4 {
                jac[mu][col] = (qp.to_array()[mu] - qm.to_array()[mu]) / (2.0 * h);
            }
        }
        let q = Quaternion::from_euler(r, phi, theta, psi).unwrap();
        let s = sigma_matrix(q).unwrap();
        let mut pulled = [[0.0; 4]; 4]; // sigma_a in d(r,phi,theta,psi) basis
        for a in 0..4 {
            for col in 0..4 {
                for mu in 0..4 {
                    pulled[a][col] += s[a][mu] * jac[mu][col];
                }
            }
        }
        let (ct, st) = (theta.cos(), theta.sin());
        let (cp, sp) = (psi.cos(), psi.sin());
        let want = [
            [1.0 / r, 0.0, 0.0, 0.0],
            [0.0, ct * cp / 2.0, -sp / 2.0, 0.0],
            [0.0, ct * sp / 2.0, cp / 2.0, 0.0],
            [0.0, -st / 2.0, 0.0, 0.5],
        ];
        for a in 0..4 {
            for col in 0..4 {
                assert!(is_close(pulled[a][col], want[a][col], 1e-8),
                        "sigma_{a} component {col}");
            }
        }
    }

    #[test]
    fn coframe_eval_special_directions() {
        let q = sample_q();
        let s = left_invariant_eval(q, q.to_array()).unwrap();
        assert!(is_close(s[0], 1.0, 1e-12));
        for a in 1..4 {
            assert!(is_close(s[a], 0.0, 1e-12));
        }
        // At q = 1, sigma_1 = q1 dq0 - q0 dq1 picks out -v1.
        let s = left_invariant_eval(Quaternion::one(), [0.0, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s, [0.0, 1.0, 0.0, 0.0]);
    }

    /// Structure equations d sigma_0 = 0, d sigma_i = eps_ijk sigma_j ^ sigma_k,
    /// checked by central differencing the coefficient matrix S over q.
    #[test]
    fn sigma_structure_equations() {
        let q = sample_q();
        let h = 1e-5;
        // dS[a][nu][mu] = d_nu S[a][mu]
        let mut ds = [[[0.0; 4]; 4]; 4];
        for nu in 0..4 {
            let mut qp = q.to_array();
            let mut qm = q.to_array();
            qp[nu] += h;
            qm[nu] -= h;
            let sp = sigma_matrix(Quaternion::from_array(qp)).unwrap();
            let sm = sigma_matrix(Quaternion::from_array(qm)).unwrap();
            for a in 0..4 {
                for mu in 0..4 {
                    ds[a][nu][mu] = (sp[a][mu] - sm[a][mu]) / (2.0 * h);
                }
            }
        }
        let s = sigma_matrix(q).unwrap();
        // (d sigma_a)_{nu mu} and the wedge sides as antisymmetric matrices.
        for a in 0..4 {
            for nu in 0..4 {
                for mu in 0..4 {
                    let lhs = ds[a][nu][mu] - ds[a][mu][nu];
                    let mut rhs = 0.0;
                    if a > 0 {
                        for j in 1..4 {
                            for k in 1..4 {
                                rhs += levi_civita(a - 1, j - 1, k - 1)
                                    * (s[j][nu] * s[k][mu] - s[j][mu] * s[k][nu]);
                            }
                        }
                    }
                    assert!(is_close(lhs, rhs, 1e-8), "a={a} nu={nu} mu={mu}");
                }
            }
        }
    }

    /// [X_i, X_0] = 0 and [X_i, X_j] = 2 eps_ijk X_k; the fields are linear
    /// in q so finite-difference brackets are exact to rounding.
    #[test]
    fn generator_brackets() {
        let q = sample_q();
        let h = 1e-5;
        let bracket = |a: usize, b: usize| -> [f64; 4] {
            let mut out = [0.0; 4];
            let xa = hx_generators(q)[a];
            let xb = hx_generators(q)[b];
            for nu in 0..4 {
                let mut qp = q.to_array();
                let mut qm = q.to_array();
                qp[nu] += h;
                qm[nu] -= h;
                let dxb = hx_generators(Quaternion::from_array(qp))[b];
                let dxb_m = hx_generators(Quaternion::from_array(qm))[b];
                let dxa = hx_generators(Quaternion::from_array(qp))[a];
                let dxa_m = hx_generators(Quaternion::from_array(qm))[a];
                for mu in 0..4 {
                    out[mu] += xa[nu] * (dxb[mu] - dxb_m[mu]) / (2.0 * h)
                        - xb[nu] * (dxa[mu] - dxa_m[mu]) / (2.0 * h);
                }
            }
            out
        };
        for i in 1..4 {
            let b = bracket(i, 0);
            for mu in 0..4 {
                assert!(is_close(b[mu], 0.0, 1e-9), "[X_{i}, X_0] component {mu}");
            }
            for j in 1..4 {
                let b = bracket(i, j);
                let x = hx_generators(q);
                for mu in 0..4 {
                    let mut want = 0.0;
                    for k in 1..4 {
                        want += 2.0 * levi_civita(i - 1, j - 1, k - 1) * x[k][mu];
                    }
                    assert!(is_close(b[mu], want, 1e-8), "[X_{i}, X_{j}] component {mu}");
                }
            }
        }
    }

    /// The imaginary coframe components are invariant under q -> lambda q,
    /// while sigma_0 scales the radial direction only: S(lambda q) lambda = S(q).
    #[test]
    fn sigma_scale_covariance() {
        let q = sample_q();
        let lam = 1.7;
        let s1 = sigma_matrix(q).unwrap();
        let s2 = sigma_matrix(q.scale(lam)).unwrap();
        for a in 0..4 {
            for mu in 0..4 {
                assert!(is_close(lam * s2[a][mu], s1[a][mu], 1e-12));
            }
        }
    }
}
