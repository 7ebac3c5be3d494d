//! Finite-state continuous-time Markov chains.
//!
//! The generator is stored in the usual CTMC convention `Q` (off-diagonal
//! rates, rows summing to zero). The positive operator `L = -Q` is the one
//! whose fractional powers appear in the effective diffusion.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::partitions::{mobius_coefficient, set_partitions};
use crate::quadrature::{integrate_graded_vec, integrate_vec, Tolerance};
use crate::rng::{self, tag, Stream};

/// Per-state values of a scalar observable.
pub type Observable = Vec<f64>;

/// Sup norm, the natural norm on functions of a finite state space.
pub fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone)]
struct Spectral {
    lambda: Vec<Complex<f64>>,
    right: DMatrix<Complex<f64>>,
    left: DMatrix<Complex<f64>>,
    zero: usize,
    condition: f64,
}

/// Irreducible finite-state chain with its invariant law and spectral data.
#[derive(Debug, Clone)]
pub struct ChainModel {
    q: DMatrix<f64>,
    mu: Vec<f64>,
    gap: f64,
    spectral: Spectral,
}

/// Condition number above which `L` is treated as defective.
pub const MAX_EIGVEC_CONDITION: f64 = 1e8;

impl ChainModel {
    /// Validates the generator given as rows and precomputes `mu`, the
    /// spectral gap and an eigendecomposition of `L = -Q`.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return invalid("generator must be a non-empty square matrix");
        }
        let q = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::from_matrix(q)
    }

    pub fn from_matrix(q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        if n == 0 || q.ncols() != n {
            return invalid("generator must be a non-empty square matrix");
        }
        if q.iter().any(|v| !v.is_finite()) {
            return invalid("generator has non-finite entries");
        }
        let scale = q.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..n {
                if i != j && q[(i, j)] < 0.0 {
                    return invalid(format!("negative rate Q[{i}][{j}] = {}", q[(i, j)]));
                }
            }
            let s: f64 = q.row(i).sum();
            if s.abs() > 1e-12 * scale {
                return invalid(format!("row {i} of the generator sums to {s}, not 0"));
            }
        }
        check_irreducible(&q)?;
        let mu = stationary_measure(&q)?;
        let spectral = spectral_data(&q)?;
        let gap = spectral
            .lambda
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != spectral.zero)
            .map(|(_, l)| l.re)
            .fold(f64::INFINITY, f64::min);
        if gap <= 1e-10 {
            return Err(Error::Numerical(format!("spectral gap {gap} is not positive")));
        }
        Ok(ChainModel { q, mu, gap, spectral })
    }

    /// Two-state chain with rate `a` for 0 -> 1 and `b` for 1 -> 0.
    pub fn two_state(a: f64, b: f64) -> Result<Self> {
        Self::new(&[vec![-a, a], vec![b, -b]])
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Smallest real part of a nonzero eigenvalue of `L`; infinite for one state.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// Eigenvalues of `L = -Q`.
    pub fn eigenvalues(&self) -> &[Complex<f64>] {
        &self.spectral.lambda
    }

    /// Frobenius-norm bound on the eigenvector condition number.
    pub fn eigenvector_condition(&self) -> f64 {
        self.spectral.condition
    }

    /// `<f>_mu`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.mu.iter().zip(f).map(|(m, v)| m * v).sum()
    }

    /// `<f, g>_mu`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.mu.iter().zip(f).zip(g).map(|((m, a), b)| m * a * b).sum()
    }

    pub fn center(&self, f: &[f64]) -> Observable {
        let m = self.mean(f);
        f.iter().map(|v| v - m).collect()
    }

    /// Detailed balance `mu_i Q_ij = mu_j Q_ji` up to `tol` relative.
    pub fn is_reversible(&self, tol: f64) -> bool {
        let n = self.n();
        let scale = self.q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (0..n).all(|i| {
            (0..n).all(|j| (self.mu[i] * self.q[(i, j)] - self.mu[j] * self.q[(j, i)]).abs() <= tol * scale)
        })
    }

    /// `P_t = exp(Q t)` by scaling and squaring.
    pub fn transition_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t >= 0.0) {
            return invalid(format!("semigroup time {t} must be nonnegative"));
        }
        if t == 0.0 {
            return Ok(DMatrix::identity(self.n(), self.n()));
        }
        Ok((&self.q * t).exp())
    }

    /// `(P_t f)(y) = E[f(Y_t) | Y_0 = y]`.
    pub fn semigroup_apply(&self, t: f64, f: &[f64]) -> Result<Observable> {
        self.check_len(f)?;
        let p = self.transition_matrix(t)?;
        Ok((p * DVector::from_column_slice(f)).as_slice().to_vec())
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n() {
            return invalid(format!("observable has {} entries for a {}-state chain", f.len(), self.n()));
        }
        Ok(())
    }

    fn check_power(&self, alpha: f64, f: &[f64]) -> Result<()> {
        self.check_len(f)?;
        if !(alpha > -1.0 && alpha < 1.0) {
            return invalid(format!("fractional power {alpha} outside (-1, 1)"));
        }
        if alpha < 0.0 && self.mean(f).abs() > 1e-10 * sup_norm(f).max(1.0) {
            return invalid(format!(
                "negative power {alpha} needs a mean-zero observable, mean is {}",
                self.mean(f)
            ));
        }
        Ok(())
    }

    /// `L^alpha f` by eigendecomposition on the mean-zero complement.
    ///
    /// Constants are mapped to zero. At `alpha = 0` this is the projection
    /// onto mean-zero functions, i.e. the identity there.
    pub fn fractional_power(&self, alpha: f64, f: &[f64]) -> Result<Observable> {
        self.check_power(alpha, f)?;
        if alpha == 0.0 {
            return Ok(self.center(f));
        }
        let sp = &self.spectral;
        if sp.condition > MAX_EIGVEC_CONDITION {
            return Err(Error::Numerical(format!(
                "generator is numerically defective (eigenvector condition {:.3e})",
                sp.condition
            )));
        }
        let n = self.n();
        let fc = DVector::from_iterator(n, f.iter().map(|v| Complex::new(*v, 0.0)));
        let coeff = &sp.left * fc;
        let mut out = vec![Complex::new(0.0, 0.0); n];
        for j in 0..n {
            if j == sp.zero {
                continue;
            }
            let w = sp.lambda[j].powf(alpha) * coeff[j];
            for (i, o) in out.iter_mut().enumerate() {
                *o += sp.right[(i, j)] * w;
            }
        }
        let scale = out.iter().fold(1.0_f64, |m, z| m.max(z.re.abs()));
        let imag = out.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
        if imag > 1e-9 * scale {
            return Err(Error::Numerical(format!(
                "fractional power has imaginary residue {imag:.3e}"
            )));
        }
        Ok(out.iter().map(|z| z.re).collect())
    }

    /// Independent evaluation of `L^alpha f` from the integral definitions
    /// `Gamma(-alpha)^{-1} int_0^inf t^{-alpha-1} P_t f dt` (alpha < 0) and
    /// `Gamma(-alpha)^{-1} int_0^inf t^{-alpha-1} (P_t f - f) dt` (alpha > 0).
    ///
    /// The integral is truncated at `T* = 40 / gap`; for alpha > 0 the
    /// non-decaying part `<f> - f` of the tail is added in closed form.
    pub fn fractional_power_quadrature(&self, alpha: f64, f: &[f64]) -> Result<PowerQuadrature> {
        self.check_power(alpha, f)?;
        if alpha == 0.0 {
            return Ok(PowerQuadrature {
                value: self.center(f),
                tail_bound: 0.0,
            });
        }
        let n = self.n();
        if n == 1 {
            return Ok(PowerQuadrature {
                value: vec![0.0],
                tail_bound: 0.0,
            });
        }
        let t_star = 40.0 / self.gap;
        let t0 = (1.0 / self.gap).min(t_star);
        let norm = sup_norm(f).max(1e-300);
        let tol = Tolerance {
            abs: 1e-14 * norm,
            rel: 1e-12,
            max_intervals: 2000,
        };
        let fv = DVector::from_column_slice(f);
        let q = self.q.clone();
        let integrand = |t: f64, out: &mut [f64]| {
            let w = t.powf(-alpha - 1.0);
            let v = if alpha < 0.0 {
                (&q * t).exp() * &fv
            } else {
                semigroup_minus_identity(&q, t, &fv)
            };
            for i in 0..n {
                out[i] = w * v[i];
            }
        };
        let grade = if alpha < 0.0 { 1.0 / (-alpha) } else { 1.0 / (1.0 - alpha) };
        let near = integrate_graded_vec(integrand, 0.0, t0, grade, n, tol)?;
        let far = integrate_vec(integrand, t0, t_star, n, tol)?;
        let mean = self.mean(f);
        let g = gamma(-alpha);
        let mut value = vec![0.0; n];
        for i in 0..n {
            let mut v = near.value[i] + far.value[i];
            if alpha > 0.0 {
                v += (mean - f[i]) * t_star.powf(-alpha) / alpha;
            }
            value[i] = v / g;
        }
        let tail_bound = self.spectral.condition * norm * t_star.powf(-alpha - 1.0) * (-40.0f64).exp()
            / (self.gap * g.abs());
        Ok(PowerQuadrature { value, tail_bound })
    }

    /// Exact simulation on `[0, horizon]` started from `mu`.
    pub fn sample_trajectory(&self, horizon: f64, seed: u64) -> Result<ChainPath> {
        self.sample_trajectory_keyed(horizon, &[seed])
    }

    /// As [`Self::sample_trajectory`] with an arbitrary stream key.
    pub fn sample_trajectory_keyed(&self, horizon: f64, keys: &[u64]) -> Result<ChainPath> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return invalid(format!("horizon {horizon} must be positive"));
        }
        let mut key = vec![tag::CHAIN];
        key.extend_from_slice(keys);
        let mut rng = rng::stream(&key);
        let mut state = draw(&mut rng, &self.mu);
        let mut times = vec![0.0];
        let mut states = vec![state];
        let mut t = 0.0;
        let n = self.n();
        let mut rates = vec![0.0; n];
        loop {
            let rate = -self.q[(state, state)];
            if rate <= 0.0 {
                break;
            }
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / rate;
            if t > horizon {
                break;
            }
            for (j, r) in rates.iter_mut().enumerate() {
                *r = if j == state { 0.0 } else { self.q[(state, j)] };
            }
            state = draw(&mut rng, &rates);
            times.push(t);
            states.push(state);
        }
        Ok(ChainPath {
            jump_times: times,
            states,
            horizon,
        })
    }

    /// `E[prod_{i in subset} f_i(Y_{s_i})]` for sorted times, by the operator
    /// product `mu( f_{a_1} P_{t_1} f_{a_2} P_{t_2} ... f_{a_l} )`.
    pub fn joint_moment(&self, fs: &[&[f64]], times: &[f64]) -> Result<f64> {
        if fs.len() != times.len() {
            return invalid("one time per observable is required");
        }
        if fs.is_empty() {
            return Ok(1.0);
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return invalid("times must be sorted");
        }
        for f in fs {
            self.check_len(f)?;
        }
        let last = fs.len() - 1;
        let mut g = DVector::from_column_slice(fs[last]);
        for i in (0..last).rev() {
            let p = self.transition_matrix(times[i + 1] - times[i])?;
            g = p * g;
            for (y, v) in g.iter_mut().enumerate() {
                *v *= fs[i][y];
            }
        }
        Ok(self.mu.iter().zip(g.iter()).map(|(m, v)| m * v).sum())
    }

    /// Joint cumulant `E_c(f_1(Y_{s_1}), ..., f_k(Y_{s_k}))` from moments over
    /// all set partitions with Möbius weights `(|D| - 1)! (-1)^{|D| - 1}`.
    pub fn joint_cumulant(&self, fs: &[&[f64]], times: &[f64]) -> Result<f64> {
        let k = fs.len();
        if k == 0 || k > 10 {
            return invalid(format!("joint cumulants are supported for 1 to 10 observables, got {k}"));
        }
        if times.len() != k {
            return invalid("one time per observable is required");
        }
        let moments = self.subset_moments(fs, times)?;
        let mut total = 0.0;
        for p in set_partitions(k) {
            let mut prod = mobius_coefficient(p.len());
            for block in &p {
                prod *= moments[mask(block)];
            }
            total += prod;
        }
        Ok(total)
    }

    /// Moments `E X^A` for every subset `A`, indexed by bit mask.
    pub fn subset_moments(&self, fs: &[&[f64]], times: &[f64]) -> Result<Vec<f64>> {
        let k = fs.len();
        let mut out = vec![0.0; 1 << k];
        for (m, slot) in out.iter_mut().enumerate() {
            let idx: Vec<usize> = (0..k).filter(|i| m & (1 << i) != 0).collect();
            let sub_f: Vec<&[f64]> = idx.iter().map(|&i| fs[i]).collect();
            let sub_t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
            *slot = self.joint_moment(&sub_f, &sub_t)?;
        }
        Ok(out)
    }
}

fn mask(block: &[usize]) -> usize {
    block.iter().fold(0, |m, &i| m | (1 << i))
}

/// Outcome of [`ChainModel::fractional_power_quadrature`].
#[derive(Debug, Clone)]
pub struct PowerQuadrature {
    pub value: Observable,
    /// Bound on the discarded exponentially small tail.
    pub tail_bound: f64,
}

fn draw(rng: &mut Stream, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u: f64 = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn reach(q: &DMatrix<f64>, transpose: bool) -> Vec<bool> {
    let n = q.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let rate = if transpose { q[(j, i)] } else { q[(i, j)] };
            if i != j && rate > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

fn check_irreducible(q: &DMatrix<f64>) -> Result<()> {
    let forward = reach(q, false);
    let missing: Vec<usize> = (0..forward.len()).filter(|&i| !forward[i]).collect();
    if !missing.is_empty() {
        return invalid(format!("reducible chain: states {missing:?} are unreachable from state 0"));
    }
    let backward = reach(q, true);
    let missing: Vec<usize> = (0..backward.len()).filter(|&i| !backward[i]).collect();
    if !missing.is_empty() {
        return invalid(format!("reducible chain: states {missing:?} cannot return to state 0"));
    }
    Ok(())
}

/// Unique probability vector with `mu Q = 0` for an irreducible generator.
pub fn stationary_measure(q: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = q.nrows();
    check_irreducible(q)?;
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular system for the invariant measure".into()))?;
    if mu.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Numerical(format!("invariant measure {mu:?} is not positive")));
    }
    let s = mu.sum();
    Ok(mu.iter().map(|m| m / s).collect())
}

/// `(P_t - I) f` without cancellation for small `t`.
fn semigroup_minus_identity(q: &DMatrix<f64>, t: f64, f: &DVector<f64>) -> DVector<f64> {
    let scale = t * q.abs().max();
    if scale > 0.5 {
        return (q * t).exp() * f - f;
    }
    let mut term = f.clone();
    let mut acc = DVector::zeros(f.len());
    for k in 1..40 {
        term = q * &term * (t / k as f64);
        acc += &term;
        if term.amax() <= 1e-17 * acc.amax() {
            break;
        }
    }
    acc
}

fn spectral_data(q: &DMatrix<f64>) -> Result<Spectral> {
    let n = q.nrows();
    let l = faer::Mat::<f64>::from_fn(n, n, |i, j| -q[(i, j)]);
    let evd = l
        .eigen()
        .map_err(|e| Error::Numerical(format!("eigendecomposition of the generator failed: {e:?}")))?;
    let u = evd.U();
    let s = evd.S().column_vector();
    let lambda: Vec<Complex<f64>> = (0..n).map(|j| s[j]).collect();
    let right = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    let zero = (0..n)
        .min_by(|&a, &b| lambda[a].norm().total_cmp(&lambda[b].norm()))
        .unwrap_or(0);
    let left = right
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(n, n, Complex::new(f64::INFINITY, 0.0)));
    let condition = right.norm() * left.norm();
    let condition = if condition.is_finite() { condition } else { f64::INFINITY };
    Ok(Spectral {
        lambda,
        right,
        left,
        zero,
        condition,
    })
}

/// Piecewise-constant, right-continuous trajectory of the chain.
#[derive(Debug, Clone)]
pub struct ChainPath {
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl ChainPath {
    /// State at time `t` (binary search).
    pub fn state_at(&self, t: f64) -> usize {
        let i = self.jump_times.partition_point(|&s| s <= t);
        self.states[i.saturating_sub(1)]
    }

    pub fn jumps(&self) -> usize {
        self.jump_times.len() - 1
    }

    /// Cursor for fast lookups along non-decreasing times.
    pub fn cursor(&self) -> ChainCursor<'_> {
        ChainCursor { path: self, idx: 0 }
    }

    /// Time spent in each state on `[0, horizon]`.
    pub fn occupation(&self, n: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n];
        for (i, &s) in self.states.iter().enumerate() {
            let end = self.jump_times.get(i + 1).copied().unwrap_or(self.horizon);
            occ[s] += end - self.jump_times[i];
        }
        occ
    }

    /// `int_0^T f(Y_s) g(Y_{s + lag}) ds`, integrated exactly over the
    /// merged jump times. Requires `T + lag <= horizon`.
    pub fn lagged_product_integral(&self, f: &[f64], g: &[f64], lag: f64, t_end: f64) -> Result<f64> {
        if lag < 0.0 || t_end + lag > self.horizon * (1.0 + 1e-12) {
            return invalid(format!(
                "lagged integral needs T + lag <= {}, got {}",
                self.horizon,
                t_end + lag
            ));
        }
        let mut cuts: Vec<f64> = Vec::with_capacity(2 * self.jump_times.len() + 2);
        cuts.push(0.0);
        cuts.push(t_end);
        for &s in &self.jump_times {
            if s > 0.0 && s < t_end {
                cuts.push(s);
            }
            if s - lag > 0.0 && s - lag < t_end {
                cuts.push(s - lag);
            }
        }
        cuts.sort_by(f64::total_cmp);
        let mut a = self.cursor();
        let mut b = self.cursor();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let mid = 0.5 * (w[0] + w[1]);
            total += len * f[a.state_at(mid)] * g[b.state_at(mid + lag)];
        }
        Ok(total)
    }
}

/// Monotone lookup helper; falls back to binary search when time goes back.
pub struct ChainCursor<'a> {
    path: &'a ChainPath,
    idx: usize,
}

impl ChainCursor<'_> {
    pub fn state_at(&mut self, t: f64) -> usize {
        let times = &self.path.jump_times;
        if t < times[self.idx] {
            self.idx = times.partition_point(|&s| s <= t).saturating_sub(1);
        }
        while self.idx + 1 < times.len() && times[self.idx + 1] <= t {
            self.idx += 1;
        }
        self.path.states[self.idx]
    }
}
