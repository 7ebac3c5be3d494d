//! Effective diffusion of the homogenised slow variable.
//!
//! `Sigma(x, xb) = Gamma(2H+1)/2 sum_k int F_k(x, y) (L^{1-2H} F_k)(xb, y) mu(dy)`
//! is computed spectrally, and independently through the Green–Kubo
//! integral of the mollified noise autocovariance against the semigroup.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::gamma::gamma;

use crate::chain::ChainModel;
use crate::coefficients::{mu_average, Field};
use crate::error::{invalid, Error, Result};
use crate::fbm::{eta_dd_integral, eta_dd_integral_away, unit_mollifier_autoconvolution, HurstParam};
use crate::quadrature::{integrate_graded_vec, integrate_vec, Tolerance};

/// Half-width of the support of the mollifier autoconvolution (unit scale).
const RHO_SUPPORT: f64 = 12.0;

fn check_centred(chain: &ChainModel, h: HurstParam, f: &[f64], what: &str) -> Result<()> {
    if h.value() > 0.5 && chain.mean(f).abs() > 1e-10 * crate::chain::sup_norm(f).max(1.0) {
        return invalid(format!("{what} must be centred under mu for H > 1/2"));
    }
    Ok(())
}

/// `C(f, g) = Gamma(2H+1)/2 (<f, L^{1-2H} g> + <L^{1-2H} f, g>)`.
///
/// At `H = 1/2` this is `<f, g>` for the centred parts.
pub fn pair_covariance(chain: &ChainModel, h: HurstParam, f: &[f64], g: &[f64]) -> Result<f64> {
    check_centred(chain, h, f, "f")?;
    check_centred(chain, h, g, "g")?;
    let alpha = 1.0 - 2.0 * h.value();
    let lf = chain.fractional_power(alpha, f)?;
    let lg = chain.fractional_power(alpha, g)?;
    Ok(0.5 * gamma(2.0 * h.value() + 1.0) * (chain.inner(f, &lg) + chain.inner(&lf, g)))
}

/// Matrix `C(f_i, g_j)`.
pub fn pair_covariance_matrix(chain: &ChainModel, h: HurstParam, fs: &[Vec<f64>], gs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(fs.len(), gs.len());
    for (i, f) in fs.iter().enumerate() {
        for (j, g) in gs.iter().enumerate() {
            out[(i, j)] = pair_covariance(chain, h, f, g)?;
        }
    }
    Ok(out)
}

/// `Gamma(2H+1)/2 <f, L^{1-2H} g>`, the mean of the limiting second order
/// process per unit time.
pub fn second_order_shift(chain: &ChainModel, h: HurstParam, f: &[f64], g: &[f64]) -> Result<f64> {
    let lg = chain.fractional_power(1.0 - 2.0 * h.value(), g)?;
    Ok(0.5 * gamma(2.0 * h.value() + 1.0) * chain.inner(f, &lg))
}

/// Raw-kernel constant `int_0^inf (<f, P_t g> + <g, P_t f>) t^{2H-2} dt`
/// for centred `f, g` and `H > 1/2`, by quadrature over the semigroup.
pub fn raw_kernel_constant(chain: &ChainModel, h: HurstParam, f: &[f64], g: &[f64]) -> Result<f64> {
    if h.value() <= 0.5 {
        return invalid("the raw kernel t^{2H-2} is integrable only for H > 1/2");
    }
    check_centred(chain, h, f, "f")?;
    check_centred(chain, h, g, "g")?;
    let expo = 2.0 * h.value() - 2.0;
    let integrand = |t: f64, out: &mut [f64]| {
        let pg = chain.semigroup_apply(t, g).expect("valid time");
        let pf = chain.semigroup_apply(t, f).expect("valid time");
        out[0] = (chain.inner(f, &pg) + chain.inner(g, &pf)) * t.powf(expo);
    };
    let t0 = 1.0 / chain.gap();
    let tol = Tolerance::new(1e-13, 1e-11);
    let near = integrate_graded_vec(integrand, 0.0, t0, 1.0 / (2.0 * h.value() - 1.0), 1, tol)?;
    let far = integrate_vec(integrand, t0, 40.0 * t0, 1, tol)?;
    Ok(near.value[0] + far.value[0])
}

/// Closed form of [`raw_kernel_constant`]:
/// `Gamma(2H-1) (<f, L^{1-2H} g> + <g, L^{1-2H} f>)`.
pub fn raw_kernel_closed_form(chain: &ChainModel, h: HurstParam, f: &[f64], g: &[f64]) -> Result<f64> {
    let alpha = 1.0 - 2.0 * h.value();
    let lf = chain.fractional_power(alpha, f)?;
    let lg = chain.fractional_power(alpha, g)?;
    Ok(gamma(2.0 * h.value() - 1.0) * (chain.inner(f, &lg) + chain.inner(g, &lf)))
}

/// Autocovariance `C_v(s) = 1/2 int rho(v - s) eta''(v) dv` of the unit-width
/// mollified noise, `rho` being the mollifier's autoconvolution.
///
/// The noise of width `delta` has autocovariance `delta^{2H-2} C_v(t / delta)`.
pub fn driver_autocovariance(h: HurstParam, s: f64) -> Result<f64> {
    let s = s.abs();
    let phi = |v: f64| unit_mollifier_autoconvolution(v - s);
    if s <= RHO_SUPPORT {
        Ok(0.5 * eta_dd_integral(h, s - RHO_SUPPORT, s + RHO_SUPPORT, phi)?)
    } else {
        Ok(0.5 * eta_dd_integral_away(h, s, RHO_SUPPORT, phi)?)
    }
}

/// Green–Kubo approximation with its quadrature error estimate.
#[derive(Debug, Clone)]
pub struct GreenKubo {
    pub sigma: DMatrix<f64>,
    pub abs_err: f64,
}

/// Effective diffusion for a chain, a diffusion field and an optional drift.
#[derive(Clone)]
pub struct EffectiveDiffusion {
    chain: ChainModel,
    field: Arc<dyn Field>,
    drift: Option<Arc<dyn Field>>,
    hurst: HurstParam,
}

impl EffectiveDiffusion {
    pub fn new(chain: ChainModel, field: Arc<dyn Field>, drift: Option<Arc<dyn Field>>, hurst: HurstParam) -> Result<Self> {
        if field.states() != chain.n() {
            return invalid(format!("field has {} states, chain has {}", field.states(), chain.n()));
        }
        if let Some(d) = &drift {
            if d.states() != chain.n() || d.dim() != field.dim() || d.noise_dim() != 1 {
                return invalid("drift field must be d x 1 on the same states");
            }
        }
        if hurst.value() > 0.5 {
            // Spot-check centring; closed-form fields are validated exactly upstream.
            let d = field.dim();
            let mut probes = vec![vec![0.0; d]];
            for i in 0..d {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                probes.push(e);
            }
            for x in &probes {
                let avg = mu_average(field.as_ref(), x, chain.mu());
                if avg.iter().any(|v| v.abs() > 1e-10) {
                    return invalid("for H > 1/2 the diffusion field must be centred under mu");
                }
            }
        }
        Ok(EffectiveDiffusion {
            chain,
            field,
            drift,
            hurst,
        })
    }

    pub fn chain(&self) -> &ChainModel {
        &self.chain
    }

    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn field(&self) -> &Arc<dyn Field> {
        &self.field
    }

    pub fn drift(&self) -> Option<&Arc<dyn Field>> {
        self.drift.as_ref()
    }

    /// Per-state coefficient columns: `cols[k][i][y] = F_ik(x, y)`.
    fn columns(&self, x: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let (d, m, n) = (self.field.dim(), self.field.noise_dim(), self.chain.n());
        let mut buf = vec![0.0; d * m];
        let mut cols = vec![vec![vec![0.0; n]; d]; m];
        for y in 0..n {
            self.field.value_into(x, y, &mut buf);
            for i in 0..d {
                for k in 0..m {
                    cols[k][i][y] = buf[i * m + k];
                }
            }
        }
        cols
    }

    /// Spectral formula for `Sigma(x, xb)`.
    ///
    /// At `H = 1/2` constants are kept, giving the classical
    /// `1/2 sum_k <F_k(x) F_k(xb)>_mu`.
    pub fn sigma(&self, x: &[f64], xbar: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let a = self.columns(x);
        let b = self.columns(xbar);
        let h = self.hurst.value();
        let c = 0.5 * gamma(2.0 * h + 1.0);
        let mut out = DMatrix::zeros(d, d);
        for k in 0..a.len() {
            for j in 0..d {
                let lb = if self.hurst.is_brownian() {
                    b[k][j].clone()
                } else {
                    self.chain.fractional_power(1.0 - 2.0 * h, &b[k][j])?
                };
                for i in 0..d {
                    out[(i, j)] += c * self.chain.inner(&a[k][i], &lb);
                }
            }
        }
        Ok(out)
    }

    /// Green–Kubo approximation
    /// `Sigma_delta = sum_k int_0^inf R_delta(t) <F_k(x), P_t F_k(xb)>_mu dt`
    /// with `R_delta(t) = delta^{2H-2} C_v(t / delta)`.
    ///
    /// The time integral is truncated at `max(40 / gap, 50 delta)`.
    pub fn sigma_green_kubo(&self, x: &[f64], xbar: &[f64], delta: f64) -> Result<GreenKubo> {
        if !(delta > 0.0) {
            return invalid("delta must be positive");
        }
        let d = self.dim();
        let n = self.chain.n();
        let a = self.columns(x);
        let b = self.columns(xbar);
        let mu = self.chain.mu().to_vec();
        let q = self.chain.q().clone();
        let h = self.hurst;
        let mut failure: Option<Error> = None;
        let mut integrand = |s: f64, out: &mut [f64]| {
            let cv = match driver_autocovariance(h, s) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            };
            let p = (&q * (delta * s)).exp();
            out.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..a.len() {
                for j in 0..d {
                    let pb = &p * DVector::from_column_slice(&b[k][j]);
                    for i in 0..d {
                        let mut acc = 0.0;
                        for y in 0..n {
                            acc += mu[y] * a[k][i][y] * pb[y];
                        }
                        out[i * d + j] += cv * acc;
                    }
                }
            }
        };
        let s_end = (40.0 / self.chain.gap()).max(50.0 * delta) / delta;
        let tol = Tolerance {
            abs: 1e-12,
            rel: 1e-9,
            max_intervals: 4000,
        };
        let split = RHO_SUPPORT.min(s_end);
        let near = integrate_vec(&mut integrand, 0.0, split, d * d, tol)?;
        let far = if s_end > split {
            integrate_vec(&mut integrand, split, s_end, d * d, tol)?
        } else {
            crate::quadrature::Quad {
                value: vec![0.0; d * d],
                abs_err: 0.0,
                evals: 0,
                intervals: 0,
            }
        };
        if let Some(e) = failure {
            return Err(e);
        }
        let scale = delta.powf(2.0 * h.value() - 1.0);
        let sigma = DMatrix::from_fn(d, d, |i, j| scale * (near.value[i * d + j] + far.value[i * d + j]));
        Ok(GreenKubo {
            sigma,
            abs_err: scale * (near.abs_err + far.abs_err),
        })
    }

    /// `G_i(x) = sum_j (d/dxb_j) Sigma_ji(x, xb) at xb = x`, by central
    /// differences with step `1e-4 (1 + |x|)` and one Richardson step.
    pub fn drift_correction(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-4 * (1.0 + norm);
        let mut g = vec![0.0; d];
        for j in 0..d {
            let diff = |step: f64| -> Result<DMatrix<f64>> {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += step;
                xm[j] -= step;
                Ok((self.sigma(x, &xp)? - self.sigma(x, &xm)?) / (2.0 * step))
            };
            let coarse = diff(h)?;
            let fine = diff(0.5 * h)?;
            let rich = (fine * 4.0 - coarse) / 3.0;
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += rich[(j, i)];
            }
        }
        Ok(g)
    }

    /// `F0bar(x) = int F0(x, y) mu(dy)`, zero without a drift field.
    pub fn drift_mean(&self, x: &[f64]) -> Vec<f64> {
        match &self.drift {
            Some(f0) => mu_average(f0.as_ref(), x, self.chain.mu()).as_slice().to_vec(),
            None => vec![0.0; self.dim()],
        }
    }

    /// Raw block matrix `Sigma_ij(x_a, x_b) + Sigma_ji(x_b, x_a)`.
    fn w_blocks(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let q = points.len();
        let mut m = DMatrix::zeros(q * d, q * d);
        for a in 0..q {
            for b in a..q {
                let s_ab = self.sigma(&points[a], &points[b])?;
                let s_ba = if a == b { s_ab.clone() } else { self.sigma(&points[b], &points[a])? };
                for i in 0..d {
                    for j in 0..d {
                        let v = s_ab[(i, j)] + s_ba[(j, i)];
                        m[(a * d + i, b * d + j)] = v;
                        m[(b * d + j, a * d + i)] = v;
                    }
                }
            }
        }
        Ok(m)
    }

    /// Covariance per unit time of `(W(x_1), .., W(x_q))`: symmetrised, with
    /// rounding-level negative eigenvalues clipped to zero.
    pub fn w_field_covariance(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let (vecs, vals) = self.w_field_spectrum(points)?;
        Ok(&vecs * DMatrix::from_diagonal(&vals) * vecs.transpose())
    }

    fn w_field_spectrum(&self, points: &[Vec<f64>]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if points.is_empty() {
            return invalid("at least one point is required");
        }
        let m = self.w_blocks(points)?;
        let sym = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let norm = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let worst = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        if worst < -1e-10 * norm {
            return Err(Error::Numerical(format!(
                "field covariance is indefinite: eigenvalue {worst:.3e} against norm {norm:.3e}"
            )));
        }
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        Ok((eig.eigenvectors, vals))
    }

    /// Factor `A` with `A A^T` equal to [`Self::w_field_covariance`]:
    /// Cholesky when it succeeds, the symmetric square root otherwise
    /// (e.g. coincident points).
    pub fn w_field_factor(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let (vecs, vals) = self.w_field_spectrum(points)?;
        let cov = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        if let Some(ch) = cov.clone().cholesky() {
            let l = ch.l();
            if l.iter().all(|v| v.is_finite()) {
                return Ok(l);
            }
        }
        Ok(&vecs * DMatrix::from_diagonal(&vals.map(f64::sqrt)))
    }

    /// Generator of the limit process applied to `g` at `x`:
    /// `sum_ij Sigma_ji(x, x) d_i d_j g + (G + F0bar) . grad g`.
    ///
    /// Derivatives of `g` are taken by central differences; diagnostic use.
    pub fn generator_apply(&self, g: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        let s = self.sigma(x, x)?;
        let drift: Vec<f64> = self
            .drift_correction(x)?
            .iter()
            .zip(self.drift_mean(x))
            .map(|(a, b)| a + b)
            .collect();
        let h = 1e-3 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
        let shifted = |di: usize, si: f64, dj: usize, sj: f64| {
            let mut y = x.to_vec();
            y[di] += si;
            y[dj] += sj;
            g(&y)
        };
        let mut total = 0.0;
        for i in 0..d {
            let grad = (shifted(i, h, i, 0.0) - shifted(i, -h, i, 0.0)) / (2.0 * h);
            total += drift[i] * grad;
            for j in 0..d {
                let hess = if i == j {
                    (shifted(i, h, i, 0.0) - 2.0 * g(x) + shifted(i, -h, i, 0.0)) / (h * h)
                } else {
                    (shifted(i, h, j, h) - shifted(i, h, j, -h) - shifted(i, -h, j, h) + shifted(i, -h, j, -h))
                        / (4.0 * h * h)
                };
                total += s[(j, i)] * hess;
            }
        }
        Ok(total)
    }
}
