//! First and second order processes of the fast-chain-modulated noise.
//!
//! `J_{s,t}(f) = eps^{1/2-H} sum_k f(Y_{r_k / eps}) dB_k` and its iterated
//! counterpart are computed as left-point sums on a common grid. The second
//! order sum carries half of the diagonal, `sum_{k<l} a_k b_l + 1/2 sum_k
//! a_k b_k`, which is the exact iterated integral of the piecewise-linear
//! interpolation of the driver. Chen's relation and the geometric identity
//! then hold up to rounding.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chain::{ChainModel, ChainPath};
use crate::error::{invalid, Result};
use crate::fbm::{fgn_autocovariance, FbmPath, HurstParam, MollifiedDerivative, Mollifier, PathOrigin};
use crate::quadrature::{integrate_graded, Tolerance};
use crate::rng::{self, tag};

/// Source of noise increments on a uniform grid.
#[derive(Clone, Copy)]
pub enum Driver<'a> {
    /// `dB_k = B'^delta(r_k) h`.
    Mollified(&'a MollifiedDerivative),
    /// Raw increments `B(r_{k+1}) - B(r_k)`, the `delta -> 0` limit.
    Increments(&'a FbmPath),
}

impl Driver<'_> {
    fn step(&self) -> f64 {
        match self {
            Driver::Mollified(d) => d.dt(),
            Driver::Increments(p) => p.grid().dt,
        }
    }

    fn n_steps(&self) -> usize {
        match self {
            Driver::Mollified(d) => d.n_steps(),
            Driver::Increments(p) => p.grid().n_steps,
        }
    }

    fn n_components(&self) -> usize {
        match self {
            Driver::Mollified(d) => d.n_components(),
            Driver::Increments(p) => p.grid().n_components,
        }
    }

    fn delta(&self) -> Option<f64> {
        match self {
            Driver::Mollified(d) => Some(d.delta()),
            Driver::Increments(_) => None,
        }
    }

    fn origin(&self) -> PathOrigin {
        match self {
            Driver::Mollified(d) => d.origin(),
            Driver::Increments(p) => p.origin(),
        }
    }

    fn increments(&self, c: usize) -> Vec<f64> {
        match self {
            Driver::Mollified(d) => {
                let h = d.dt();
                d.values(c)[..d.n_steps()].iter().map(|v| v * h).collect()
            }
            Driver::Increments(p) => (0..p.grid().n_steps).map(|k| p.increment(c, k)).collect(),
        }
    }
}

/// Where an increment came from; Chen checks refuse to mix provenances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Provenance {
    pub origin: PathOrigin,
    pub h: f64,
    pub delta: Option<f64>,
    pub eps: f64,
}

/// `(Z, ZZ)` over `[s, t]` for a list of observables. Index `i * m + c`
/// refers to observable `i` against noise component `c`.
#[derive(Debug, Clone)]
pub struct RoughIncrement {
    pub s: f64,
    pub t: f64,
    pub z: DVector<f64>,
    pub zz: DMatrix<f64>,
    pub provenance: Provenance,
}

/// `sum_{k<l} a_k b_l + 1/2 sum_k a_k b_k`.
pub fn iterated_sum(a: &[f64], b: &[f64]) -> f64 {
    let mut prefix = 0.0;
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (prefix + 0.5 * x) * y;
        prefix += x;
    }
    acc
}

/// Noise increments paired with the fast chain sampled at the left grid points.
pub struct Lift {
    h: f64,
    n_steps: usize,
    incr: Vec<Vec<f64>>,
    states: Vec<usize>,
    scale: f64,
    provenance: Provenance,
}

impl Lift {
    /// The chain path is read at `r_k / eps`; it must cover `T / eps`.
    pub fn new(driver: Driver<'_>, chain_path: &ChainPath, eps: f64, hurst: HurstParam) -> Result<Self> {
        if !(eps > 0.0) {
            return invalid("eps must be positive");
        }
        let h = driver.step();
        let n_steps = driver.n_steps();
        let horizon = n_steps as f64 * h;
        if chain_path.horizon * (1.0 + 1e-12) < horizon / eps {
            return invalid(format!(
                "chain path covers {} but {} is needed",
                chain_path.horizon,
                horizon / eps
            ));
        }
        let mut cursor = chain_path.cursor();
        let states = (0..n_steps).map(|k| cursor.state_at(k as f64 * h / eps)).collect();
        let incr = (0..driver.n_components()).map(|c| driver.increments(c)).collect();
        Ok(Lift {
            h,
            n_steps,
            incr,
            states,
            scale: eps.powf(0.5 - hurst.value()),
            provenance: Provenance {
                origin: driver.origin(),
                h,
                delta: driver.delta(),
                eps,
            },
        })
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_components(&self) -> usize {
        self.incr.len()
    }

    /// Grid index of `t`, which must be a grid point in `[0, T]`.
    pub fn index(&self, t: f64) -> Result<usize> {
        let x = t / self.h;
        let k = x.round();
        if (x - k).abs() > 1e-6 || k < 0.0 || k as usize > self.n_steps {
            return invalid(format!("time {t} is not a grid point of [0, {}]", self.n_steps as f64 * self.h));
        }
        Ok(k as usize)
    }

    fn range(&self, s: f64, t: f64) -> Result<(usize, usize)> {
        let (a, b) = (self.index(s)?, self.index(t)?);
        if a > b {
            return invalid(format!("interval [{s}, {t}] is reversed"));
        }
        Ok((a, b))
    }

    /// Weighted increments `eps^{1/2-H} f(Y_k) dB^c_k` on `[a, b)`.
    fn weights(&self, f: &[f64], c: usize, a: usize, b: usize) -> Vec<f64> {
        (a..b).map(|k| self.scale * f[self.states[k]] * self.incr[c][k]).collect()
    }

    /// `J_{s,t}(f)`, one entry per noise component.
    pub fn first_order(&self, f: &[f64], s: f64, t: f64) -> Result<Vec<f64>> {
        let (a, b) = self.range(s, t)?;
        Ok((0..self.n_components())
            .map(|c| self.weights(f, c, a, b).iter().sum())
            .collect())
    }

    /// `JJ_{s,t}(f, g)` as an `m x m` matrix over noise components.
    pub fn second_order(&self, f: &[f64], g: &[f64], s: f64, t: f64) -> Result<DMatrix<f64>> {
        let (a, b) = self.range(s, t)?;
        let m = self.n_components();
        let wf: Vec<Vec<f64>> = (0..m).map(|c| self.weights(f, c, a, b)).collect();
        let wg: Vec<Vec<f64>> = (0..m).map(|c| self.weights(g, c, a, b)).collect();
        Ok(DMatrix::from_fn(m, m, |i, j| iterated_sum(&wf[i], &wg[j])))
    }

    /// `(Z, ZZ)` for every pair of (observable, component).
    pub fn increment(&self, fs: &[Vec<f64>], s: f64, t: f64) -> Result<RoughIncrement> {
        let (a, b) = self.range(s, t)?;
        let m = self.n_components();
        let w: Vec<Vec<f64>> = fs
            .iter()
            .flat_map(|f| (0..m).map(move |c| (f, c)))
            .map(|(f, c)| self.weights(f, c, a, b))
            .collect();
        let q = w.len();
        let z = DVector::from_iterator(q, w.iter().map(|v| v.iter().sum()));
        let zz = DMatrix::from_fn(q, q, |i, j| iterated_sum(&w[i], &w[j]));
        Ok(RoughIncrement {
            s,
            t,
            z,
            zz,
            provenance: self.provenance,
        })
    }
}

/// `J_{s,t}(f)` for a single evaluation.
pub fn first_order(
    f: &[f64],
    chain_path: &ChainPath,
    driver: Driver<'_>,
    eps: f64,
    hurst: HurstParam,
    s: f64,
    t: f64,
) -> Result<Vec<f64>> {
    Lift::new(driver, chain_path, eps, hurst)?.first_order(f, s, t)
}

/// `JJ_{s,t}(f, g)` for a single evaluation.
#[allow(clippy::too_many_arguments)]
pub fn second_order(
    f: &[f64],
    g: &[f64],
    chain_path: &ChainPath,
    driver: Driver<'_>,
    eps: f64,
    hurst: HurstParam,
    s: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    Lift::new(driver, chain_path, eps, hurst)?.second_order(f, g, s, t)
}

/// `max |ZZ_{s,t} - ZZ_{s,u} - ZZ_{u,t} - Z_{s,u} (x) Z_{u,t}|`.
pub fn chen_residual(st: &RoughIncrement, su: &RoughIncrement, ut: &RoughIncrement) -> Result<f64> {
    if st.provenance != su.provenance || st.provenance != ut.provenance {
        return invalid("increments come from different paths or discretisations");
    }
    if su.s != st.s || su.t != ut.s || ut.t != st.t {
        return invalid("increments do not form s <= u <= t");
    }
    if st.zz.shape() != su.zz.shape() || st.zz.shape() != ut.zz.shape() {
        return invalid("increments have different observable sets");
    }
    let chen = &st.zz - &su.zz - &ut.zz - &su.z * ut.z.transpose();
    Ok(chen.amax())
}

/// `max |sym(ZZ) - Z (x) Z / 2|`.
pub fn geometric_residual(inc: &RoughIncrement) -> f64 {
    let sym = (&inc.zz + inc.zz.transpose()) * 0.5;
    (sym - &inc.z * inc.z.transpose() * 0.5).amax()
}

/// Deterministic-integrand mean `E int_s^t g(r) int_s^r f(u) dB_u dB_r` of the
/// canonical (mollification-limit) lift.
///
/// For `H <= 1/2`:
/// `H(2H-1) int g(r) int_s^r (f(u) - f(r)) (r-u)^{2H-2} du dr
///  + H int g(r) f(r) (r-s)^{2H-1} dr`;
/// for `H > 1/2` the absolutely convergent
/// `H(2H-1) int g(r) int_s^r f(u) (r-u)^{2H-2} du dr`.
/// With `f = g = 1` both give `(t-s)^{2H} / 2`.
pub fn mean_iterated_deterministic<F, G>(f: F, g: G, s: f64, t: f64, hurst: HurstParam) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if !(t > s) {
        return invalid(format!("interval [{s}, {t}] is empty"));
    }
    let h = hurst.value();
    let c = h * (2.0 * h - 1.0);
    let inner_tol = Tolerance::new(1e-13, 1e-11);
    let outer_tol = Tolerance::new(1e-11, 1e-9);
    let mut failure = None;
    let total = if h <= 0.5 {
        let k = 1.0 / (2.0 * h);
        integrate_graded(
            |r| {
                let fr = f(r);
                let inner = if c == 0.0 {
                    0.0
                } else {
                    // w = r - u.
                    integrate_graded(|w| (f(r - w) - fr) * w.powf(2.0 * h - 2.0), 0.0, r - s, k, inner_tol)
                        .unwrap_or_else(|e| {
                            failure.get_or_insert(e);
                            0.0
                        })
                };
                g(r) * (c * inner + h * fr * (r - s).powf(2.0 * h - 1.0))
            },
            s,
            t,
            k,
            outer_tol,
        )?
    } else {
        let k = (1.0 / (2.0 * h - 1.0)).min(8.0);
        integrate_graded(
            |r| {
                let inner = integrate_graded(|w| f(r - w) * w.powf(2.0 * h - 2.0), 0.0, r - s, k, inner_tol)
                    .unwrap_or_else(|e| {
                        failure.get_or_insert(e);
                        0.0
                    });
                c * g(r) * inner
            },
            s,
            t,
            k,
            outer_tol,
        )?
    };
    match failure {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// Autocovariance `E[B'^delta(r_k) B'^delta(r_{k+m})]` of the discretely
/// mollified derivative of an exact two-sided fBM, for lags `0..len`.
pub fn mollified_derivative_autocovariance(moll: &Mollifier, hurst: HurstParam, len: usize) -> Vec<f64> {
    let dt = moll.dt();
    let k = moll.half_width() as isize;
    // w(q) = sum_i phi'_i phi'_{i+q}
    let w: Vec<f64> = (-2 * k..=2 * k)
        .map(|q| {
            let lo = (-k).max(-k - q);
            let hi = k.min(k - q);
            (lo..=hi).map(|i| moll.dphi(i) * moll.dphi(i + q)).sum()
        })
        .collect();
    let two_h = 2.0 * hurst.value();
    (0..len as isize)
        .map(|m| {
            let mut acc = 0.0;
            for (idx, wq) in w.iter().enumerate() {
                let q = idx as isize - 2 * k;
                acc += wq * (((m - q) as f64) * dt).abs().powf(two_h);
            }
            -0.5 * dt * dt * acc
        })
        .collect()
}

/// Exact mean of the discrete second order sum `iterated_sum(f v h, g v h)`
/// for deterministic samples `f_k, g_k` against `v = B'^delta` on the grid.
pub fn mollified_mean_exact(f: &[f64], g: &[f64], moll: &Mollifier, hurst: HurstParam) -> Result<f64> {
    if f.len() != g.len() {
        return invalid("f and g need the same number of samples");
    }
    let n = f.len();
    let cov = mollified_derivative_autocovariance(moll, hurst, n.max(1));
    let h = moll.dt();
    let mut acc = 0.0;
    for l in 0..n {
        let mut row = 0.5 * f[l] * cov[0];
        for k in 0..l {
            row += f[k] * cov[l - k];
        }
        acc += row * g[l];
    }
    Ok(acc * h * h)
}

/// Exact `Var J_{0,T}(f)` for the increment driver with grid step `h` and a
/// stationary chain: `eps^{1-2H} sum_{k,l} <f, P_{|k-l| h / eps} f> gamma(k-l)`.
pub fn discrete_first_order_variance(
    chain: &ChainModel,
    hurst: HurstParam,
    f: &[f64],
    eps: f64,
    h: f64,
    n_steps: usize,
) -> Result<f64> {
    let corr = lagged_correlations(chain, f, f, eps, h, n_steps)?;
    let mut acc = n_steps as f64 * corr[0] * fgn_autocovariance(hurst, h, 0);
    for j in 1..n_steps {
        acc += 2.0 * (n_steps - j) as f64 * corr[j] * fgn_autocovariance(hurst, h, j);
    }
    Ok(eps.powf(1.0 - 2.0 * hurst.value()) * acc)
}

/// Exact `E JJ_{0,T}(f, g)` for the increment driver (single component):
/// `eps^{1-2H} (sum_{k<l} <f, P_{(l-k) h/eps} g> gamma(l-k) + 1/2 N <fg> gamma(0))`.
pub fn discrete_second_order_mean(
    chain: &ChainModel,
    hurst: HurstParam,
    f: &[f64],
    g: &[f64],
    eps: f64,
    h: f64,
    n_steps: usize,
) -> Result<f64> {
    let corr = lagged_correlations(chain, f, g, eps, h, n_steps)?;
    let mut acc = 0.5 * n_steps as f64 * corr[0] * fgn_autocovariance(hurst, h, 0);
    for j in 1..n_steps {
        acc += (n_steps - j) as f64 * corr[j] * fgn_autocovariance(hurst, h, j);
    }
    Ok(eps.powf(1.0 - 2.0 * hurst.value()) * acc)
}

/// `<f, P_{j h / eps} g>_mu` for `j = 0..n`.
fn lagged_correlations(chain: &ChainModel, f: &[f64], g: &[f64], eps: f64, h: f64, n: usize) -> Result<Vec<f64>> {
    let p = chain.transition_matrix(h / eps)?;
    let mut v = DVector::from_column_slice(g);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(chain.inner(f, v.as_slice()));
        v = &p * v;
    }
    Ok(out)
}

/// Variances of the Wick-renormalised same-path form and of the
/// independent-copy form, with Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChaosDomination {
    pub var_same: f64,
    pub se_same: f64,
    pub var_indep: f64,
    pub se_indep: f64,
}

impl ChaosDomination {
    /// `var_same <= 2 var_indep (1 + 3 r)` with `r` the larger relative error.
    pub fn dominated(&self) -> bool {
        let rel = |v: f64, se: f64| if v > 0.0 { se / v } else { 0.0 };
        let r = rel(self.var_same, self.se_same).max(rel(self.var_indep, self.se_indep));
        self.var_same <= 2.0 * self.var_indep * (1.0 + 3.0 * r)
    }
}

/// Exact variances `2 tr((K_s C)^2)` and `tr(K C K^T C)` for a bilinear form
/// `K(x, y) = x^T K y` of fGn increment vectors with covariance `C`.
pub fn chaos_variances_exact(kernel: &DMatrix<f64>, hurst: HurstParam, dt: f64) -> (f64, f64) {
    let n = kernel.nrows();
    let c = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(hurst, dt, i.abs_diff(j)));
    let ks = (kernel + kernel.transpose()) * 0.5;
    let a = &ks * &c;
    let same = 2.0 * (&a * &a).trace();
    let indep = (kernel * &c * kernel.transpose() * &c).trace();
    (same, indep)
}

/// Monte Carlo estimate of the variances of `K(B, B) - E K(B, B)` and
/// `K(B, B~)` over `n_samples` draws of fGn increments with step `dt`.
pub fn chaos_domination_check(
    kernel: &DMatrix<f64>,
    hurst: HurstParam,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ChaosDomination> {
    let n = kernel.nrows();
    if kernel.ncols() != n || n == 0 {
        return invalid("kernel must be a non-empty square matrix");
    }
    if n_samples < 2 {
        return invalid("at least two samples are required");
    }
    let c = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(hurst, dt, i.abs_diff(j)));
    let chol = c
        .clone()
        .cholesky()
        .ok_or_else(|| crate::Error::Numerical("fGn covariance is not positive definite".into()))?
        .l();
    let mean_same = (kernel * &c).trace();
    let mut same = Vec::with_capacity(n_samples);
    let mut indep = Vec::with_capacity(n_samples);
    let mut z = vec![0.0; n];
    for i in 0..n_samples {
        let mut rng = rng::stream(&[tag::KERNEL, seed, i as u64]);
        rng::fill_normal(&mut rng, &mut z);
        let x = &chol * DVector::from_column_slice(&z);
        rng::fill_normal(&mut rng, &mut z);
        let y = &chol * DVector::from_column_slice(&z);
        same.push(x.dot(&(kernel * &x)) - mean_same);
        indep.push(x.dot(&(kernel * &y)));
    }
    let (var_same, se_same) = variance_with_error(&same);
    let (var_indep, se_indep) = variance_with_error(&indep);
    Ok(ChaosDomination {
        var_same,
        se_same,
        var_indep,
        se_indep,
    })
}

/// Sample variance about a known zero mean and the standard error of that
/// estimate, `sd(x^2) / sqrt(n)`.
fn variance_with_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{fbm_covariance, mollified_derivative, FbmGrid, FbmSampler};
    use statrs::function::gamma::gamma;

    fn hp(h: f64) -> HurstParam {
        HurstParam::new(h).unwrap()
    }

    fn setup(h: f64, dt: f64, n: usize, m: usize, seed: u64) -> (FbmPath, ChainPath, ChainModel) {
        let grid = FbmGrid::new(hp(h), dt, n, m).unwrap();
        let path = FbmSampler::new(grid, 64, 64).unwrap().sample(seed, 0);
        let chain = ChainModel::two_state(1.0, 2.0).unwrap();
        let y = chain.sample_trajectory(n as f64 * dt / 0.1 + 1.0, seed).unwrap();
        (path, y, chain)
    }

    #[test]
    fn iterated_sum_small_case() {
        assert_eq!(iterated_sum(&[1.0, 2.0], &[3.0, 4.0]), 4.0 + 0.5 * (3.0 + 8.0));
        assert_eq!(iterated_sum(&[], &[]), 0.0);
    }

    #[test]
    fn zero_observable_and_flat_increments() {
        let (path, y, _) = setup(0.5, 0.01, 200, 2, 3);
        let lift = Lift::new(Driver::Increments(&path), &y, 1.0, hp(0.5)).unwrap();
        assert!(lift.first_order(&[0.0, 0.0], 0.0, 2.0).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(lift.second_order(&[0.0, 0.0], &[1.0, 3.0], 0.0, 2.0).unwrap().amax(), 0.0);
        let j = lift.first_order(&[1.0, 1.0], 0.5, 1.5).unwrap();
        for (c, jc) in j.iter().enumerate() {
            let want = path.values(c)[150] - path.values(c)[50];
            assert!((jc - want).abs() < 1e-12);
        }
        // Geometric identity for f = g = 1.
        let zz = lift.second_order(&[1.0, 1.0], &[1.0, 1.0], 0.5, 1.5).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let sym = 0.5 * (zz[(a, b)] + zz[(b, a)]);
                assert!((sym - 0.5 * j[a] * j[b]).abs() < 1e-12);
            }
        }
        assert!(lift.first_order(&[1.0, 1.0], 0.505, 1.0).is_err());
        assert!(lift.first_order(&[1.0, 1.0], 1.0, 0.5).is_err());
        assert!(lift.first_order(&[1.0, 1.0], 0.0, 2.5).is_err());
    }

    #[test]
    fn chen_and_geometric_on_mollified_paths() {
        let (path, y, _) = setup(0.4, 0.001, 2000, 2, 9);
        let moll = Mollifier::new(0.005, 0.001).unwrap();
        let d = mollified_derivative(&path, &moll).unwrap();
        let lift = Lift::new(Driver::Mollified(&d), &y, 0.1, hp(0.4)).unwrap();
        let fs = vec![vec![1.0, -0.5], vec![0.3, 2.0]];
        for (s, u, t) in [(0.0, 0.7, 2.0), (0.25, 0.25, 1.0), (0.1, 1.999, 2.0)] {
            let st = lift.increment(&fs, s, t).unwrap();
            let su = lift.increment(&fs, s, u).unwrap();
            let ut = lift.increment(&fs, u, t).unwrap();
            let r = chen_residual(&st, &su, &ut).unwrap();
            assert!(r <= 1e-12 * (1.0 + st.zz.amax()), "{r}");
            if s == u {
                assert_eq!(r, 0.0);
            }
            assert!(geometric_residual(&st) <= 1e-12 * (1.0 + st.zz.amax()));
        }
        let st = lift.increment(&fs, 0.0, 1.0).unwrap();
        let su = lift.increment(&fs, 0.0, 0.5).unwrap();
        let mut ut = lift.increment(&fs, 0.5, 1.0).unwrap();
        ut.provenance.eps = 0.2;
        assert!(chen_residual(&st, &su, &ut).is_err());
    }

    #[test]
    fn deterministic_means_closed_forms() {
        for h in [0.4, 0.5, 0.75] {
            let one = mean_iterated_deterministic(|_| 1.0, |_| 1.0, 0.0, 1.0, hp(h)).unwrap();
            assert!((one - 0.5).abs() < 1e-8, "H={h}: {one}");
            let shifted = mean_iterated_deterministic(|_| 1.0, |_| 1.0, 0.3, 2.3, hp(h)).unwrap();
            assert!((shifted - 0.5 * 2f64.powf(2.0 * h)).abs() < 1e-8);
            assert_eq!(mean_iterated_deterministic(|_| 0.0, |r| r, 0.0, 1.0, hp(h)).unwrap(), 0.0);
            // mean(1, r) + mean(r, 1) = E[B_1 int r dB] = 1/2.
            let a = mean_iterated_deterministic(|_| 1.0, |r| r, 0.0, 1.0, hp(h)).unwrap();
            let b = mean_iterated_deterministic(|r| r, |_| 1.0, 0.0, 1.0, hp(h)).unwrap();
            assert!((a + b - 0.5).abs() < 1e-8, "H={h}");
            // mean(r, r) = Var(int r dB) / 2 = 1 / (4H + 4).
            let c = mean_iterated_deterministic(|r| r, |r| r, 0.0, 1.0, hp(h)).unwrap();
            assert!((c - 1.0 / (4.0 * h + 4.0)).abs() < 1e-8, "H={h}: {c}");
        }
    }

    #[test]
    fn mollified_covariance_matches_dense_computation() {
        let h = hp(0.4);
        let dt = 0.01;
        let moll = Mollifier::new(0.04, dt).unwrap();
        let k = moll.half_width() as isize;
        let n = 12usize;
        let cov = mollified_derivative_autocovariance(&moll, h, n);
        // Dense: v_a = sum_j phi'_j B((a - j) dt) dt with the exact covariance of B.
        let v_cov = |a: isize, b: isize| {
            let mut acc = 0.0;
            for i in -k..=k {
                for j in -k..=k {
                    acc += moll.dphi(i) * moll.dphi(j) * fbm_covariance(h, (a - i) as f64 * dt, (b - j) as f64 * dt);
                }
            }
            acc * dt * dt
        };
        for m in [0, 1, 5, 11] {
            let dense = v_cov(3, 3 + m as isize);
            assert!((dense - cov[m]).abs() < 1e-9 * cov[0].abs(), "m={m}: {dense} {}", cov[m]);
        }
        let f: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let g: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut dense = 0.0;
        for l in 0..n {
            for kk in 0..=l {
                let w = if kk == l { 0.5 } else { 1.0 };
                dense += w * f[kk] * g[l] * v_cov(kk as isize, l as isize);
            }
        }
        let exact = mollified_mean_exact(&f, &g, &moll, h).unwrap();
        assert!((exact - dense * dt * dt).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn discrete_oracles() {
        let chain = ChainModel::two_state(1.0, 1.0).unwrap();
        let f = [1.0, -1.0];
        let v = discrete_first_order_variance(&chain, hp(0.5), &f, 0.01, 0.01 / 16.0, 1600).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let m = discrete_second_order_mean(&chain, hp(0.5), &f, &f, 0.01, 0.01 / 16.0, 1600).unwrap();
        assert!((m - 0.5).abs() < 1e-12);
        for h in [0.4, 0.75] {
            let eps = 1e-3;
            let v = discrete_first_order_variance(&chain, hp(h), &f, eps, eps / 64.0, 64000).unwrap();
            let target = gamma(2.0 * h + 1.0) * 2f64.powf(1.0 - 2.0 * h);
            assert!((v - target).abs() < 0.01 * target, "H={h}: {v} {target}");
            let m = discrete_second_order_mean(&chain, hp(h), &f, &f, eps, eps / 64.0, 64000).unwrap();
            assert!((m - 0.5 * target).abs() < 0.01 * target, "H={h}: {m}");
        }
    }

    #[test]
    fn chaos_examples() {
        let n = 8;
        let anti = DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64) * 0.3);
        let (same, indep) = chaos_variances_exact(&anti, hp(0.4), 0.1);
        assert!(same.abs() < 1e-12 && indep > 0.0);
        let mc = chaos_domination_check(&anti, hp(0.4), 0.1, 500, 1).unwrap();
        assert!(mc.var_same < 1e-20 && mc.dominated());
        let k = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) as f64).sin());
        for h in [0.4, 0.75] {
            let (same, indep) = chaos_variances_exact(&k, hp(h), 0.1);
            assert!(same <= 2.0 * indep * (1.0 + 1e-12));
            let mc = chaos_domination_check(&k, hp(h), 0.1, 4000, 2).unwrap();
            assert!((mc.var_same - same).abs() < 4.0 * mc.se_same, "{mc:?} {same}");
            assert!((mc.var_indep - indep).abs() < 4.0 * mc.se_indep, "{mc:?} {indep}");
        }
        // Symmetric kernels attain the factor two.
        let sym = &k + k.transpose();
        let (same, indep) = chaos_variances_exact(&sym, hp(0.75), 0.1);
        assert!((same - 2.0 * indep).abs() < 1e-10 * same);
    }
}
