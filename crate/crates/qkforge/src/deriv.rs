//! Central-difference derivative engine.
//!
//! All downstream geometry (Higgs fields, connections, curvature residuals)
//! is produced by differentiating scalar fields numerically, so accuracy is
//! configurable: second-order stencils are the default, fourth-order ones
//! are available for the checks whose tolerances sit near the second-order
//! noise floor (e.g. fiber-independence sweeps at 1e-8). Step sizes follow
//! the usual truncation/roundoff balance h ~ eps^(1/(k+p)) for a k-th
//! derivative at accuracy order p, scaled by max(1, |x_i|), and can be
//! overridden per engine for nested differentiation.

use nalgebra::DMatrix;

use crate::Result;

pub const EPS: f64 = f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accuracy {
    Order2,
    Order4,
}

impl Accuracy {
    fn order(self) -> f64 {
        match self {
            Accuracy::Order2 => 2.0,
            Accuracy::Order4 => 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Deriv {
    pub accuracy: Accuracy,
    /// Fixed step; when `None` the balanced default for the derivative
    /// order is used.
    pub step: Option<f64>,
}

impl Default for Deriv {
    fn default() -> Self {
        Deriv { accuracy: Accuracy::Order2, step: None }
    }
}

impl Deriv {
    pub fn order2() -> Self {
        Deriv::default()
    }

    pub fn order4() -> Self {
        Deriv { accuracy: Accuracy::Order4, step: None }
    }

    pub fn with_step(self, h: f64) -> Self {
        Deriv { step: Some(h), ..self }
    }

    /// Step for a k-th derivative along coordinate value `x`.
    fn h(&self, k: f64, x: f64) -> f64 {
        match self.step {
            Some(h) => h,
            None => EPS.powf(1.0 / (k + self.accuracy.order())) * x.abs().max(1.0),
        }
    }

    /// First partial d f / d x_i.
    pub fn partial<F>(&self, f: F, x: &[f64], i: usize) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let h = self.h(1.0, x[i]);
        let eval = |s: f64| -> Result<f64> {
            let mut y = x.to_vec();
            y[i] += s;
            f(&y)
        };
        match self.accuracy {
            Accuracy::Order2 => Ok((eval(h)? - eval(-h)?) / (2.0 * h)),
            Accuracy::Order4 => Ok(
                (-eval(2.0 * h)? + 8.0 * eval(h)? - 8.0 * eval(-h)? + eval(-2.0 * h)?)
                    / (12.0 * h),
            ),
        }
    }

    pub fn gradient<F>(&self, f: F, x: &[f64]) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        (0..x.len()).map(|i| self.partial(&f, x, i)).collect()
    }

    /// Richardson-extrapolated first partial: combines the stencil at step
    /// h and h/2 to cancel the leading truncation term, raising the
    /// effective order by two. Useful where high derivatives of `f` blow
    /// up near a singular locus.
    pub fn partial_richardson<F>(&self, f: F, x: &[f64], i: usize) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let coarse = self.partial(&f, x, i)?;
        let fine = Deriv { step: Some(self.h(1.0, x[i]) / 2.0), ..*self }.partial(&f, x, i)?;
        let p = 2.0f64.powf(self.accuracy.order());
        Ok((p * fine - coarse) / (p - 1.0))
    }

    /// Richardson-extrapolated gradient.
    pub fn gradient_richardson<F>(&self, f: F, x: &[f64]) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        (0..x.len()).map(|i| self.partial_richardson(&f, x, i)).collect()
    }

    /// Second partial d^2 f / d x_i d x_j.
    pub fn second<F>(&self, f: F, x: &[f64], i: usize, j: usize) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let eval2 = |si: f64, sj: f64| -> Result<f64> {
            let mut y = x.to_vec();
            y[i] += si;
            y[j] += sj;
            f(&y)
        };
        if i == j {
            let h = self.h(2.0, x[i]);
            match self.accuracy {
                Accuracy::Order2 => {
                    Ok((eval2(h, 0.0)? - 2.0 * eval2(0.0, 0.0)? + eval2(-h, 0.0)?) / (h * h))
                }
                Accuracy::Order4 => Ok((-eval2(2.0 * h, 0.0)? + 16.0 * eval2(h, 0.0)?
                    - 30.0 * eval2(0.0, 0.0)?
                    + 16.0 * eval2(-h, 0.0)?
                    - eval2(-2.0 * h, 0.0)?)
                    / (12.0 * h * h)),
            }
        } else {
            let hi = self.h(2.0, x[i]);
            let hj = self.h(2.0, x[j]);
            match self.accuracy {
                Accuracy::Order2 => Ok((eval2(hi, hj)? - eval2(hi, -hj)? - eval2(-hi, hj)?
                    + eval2(-hi, -hj)?)
                    / (4.0 * hi * hj)),
                Accuracy::Order4 => {
                    // Compose two fourth-order first-derivative stencils.
                    let w = [(-2.0, -1.0), (-1.0, 8.0), (1.0, -8.0), (2.0, 1.0)];
                    let mut acc = 0.0;
                    for &(a, wa) in &w {
                        for &(b, wb) in &w {
                            acc += wa * wb * eval2(a * hi, b * hj)?;
                        }
                    }
                    Ok(acc / (144.0 * hi * hj))
                }
            }
        }
    }

    pub fn hessian<F>(&self, f: F, x: &[f64]) -> Result<DMatrix<f64>>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.second(&f, x, i, j)?;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }

    /// Third partial as an outer central difference (in x_k) of the inner
    /// second-derivative stencil. The outer step should normally be set
    /// explicitly via `with_step` on `outer` to stay above the inner noise.
    pub fn third<F>(&self, outer: &Deriv, f: F, x: &[f64], i: usize, j: usize, k: usize) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let h = match outer.step {
            Some(h) => h,
            None => 1e-3 * x[k].abs().max(1.0),
        };
        let mut yp = x.to_vec();
        let mut ym = x.to_vec();
        yp[k] += h;
        ym[k] -= h;
        Ok((self.second(&f, &yp, i, j)? - self.second(&f, &ym, i, j)?) / (2.0 * h))
    }

    /// Jacobian d f_a / d x_i of a vector-valued map, as an (out_dim x n)
    /// matrix.
    pub fn jacobian<F>(&self, f: F, x: &[f64], out_dim: usize) -> Result<DMatrix<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let n = x.len();
        let mut jac = DMatrix::zeros(out_dim, n);
        for i in 0..n {
            let h = self.h(1.0, x[i]);
            let eval = |s: f64| -> Result<Vec<f64>> {
                let mut y = x.to_vec();
                y[i] += s;
                f(&y)
            };
            let col: Vec<f64> = match self.accuracy {
                Accuracy::Order2 => {
                    let p = eval(h)?;
                    let m = eval(-h)?;
                    (0..out_dim).map(|a| (p[a] - m[a]) / (2.0 * h)).collect()
                }
                Accuracy::Order4 => {
                    let p2 = eval(2.0 * h)?;
                    let p1 = eval(h)?;
                    let m1 = eval(-h)?;
                    let m2 = eval(-2.0 * h)?;
                    (0..out_dim)
                        .map(|a| (-p2[a] + 8.0 * p1[a] - 8.0 * m1[a] + m2[a]) / (12.0 * h))
                        .collect()
                }
            };
            for a in 0..out_dim {
                jac[(a, i)] = col[a];
            }
        }
        Ok(jac)
    }
}
