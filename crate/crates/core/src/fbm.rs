//! Exact sampling of fractional Brownian motion, mollified derivatives and
//! the regularised second derivative of `|t|^{2H}`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use statrs::function::erf::erf;

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, integrate_graded, Tolerance};
use crate::rng::{self, tag, Stream};

/// Hurst parameter restricted to `(1/3, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 1.0 / 3.0 && h < 1.0) {
            return invalid(format!("Hurst parameter {h} outside (1/3, 1)"));
        }
        Ok(HurstParam(h))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `alpha_H = H (1 - 2H)`, zero exactly at `H = 1/2`.
    pub fn alpha(self) -> f64 {
        self.0 * (1.0 - 2.0 * self.0)
    }

    pub fn is_brownian(self) -> bool {
        self.0 == 0.5
    }
}

/// Uniform time grid for an `m`-component fBM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmGrid {
    pub hurst: HurstParam,
    pub dt: f64,
    pub n_steps: usize,
    pub n_components: usize,
}

impl FbmGrid {
    pub fn new(hurst: HurstParam, dt: f64, n_steps: usize, n_components: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("grid step {dt} must be positive"));
        }
        if n_steps == 0 {
            return invalid("grid needs at least one step");
        }
        if n_components == 0 {
            return invalid("fBM needs at least one component");
        }
        Ok(FbmGrid {
            hurst,
            dt,
            n_steps,
            n_components,
        })
    }

    /// Time of grid index `k`, computed from the integer index.
    pub fn time(&self, k: isize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// Autocovariance of fractional Gaussian noise with step `dt` at lag `k`.
pub fn fgn_autocovariance(h: HurstParam, dt: f64, k: usize) -> f64 {
    let two_h = 2.0 * h.value();
    let k = k as f64;
    let raw = if k == 0.0 {
        1.0
    } else {
        0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).powf(two_h))
    };
    raw * dt.powf(two_h)
}

/// `Cov(B_s, B_t) = (|s|^{2H} + |t|^{2H} - |t - s|^{2H}) / 2`.
///
/// Negative times are accepted and refer to the two-sided process.
pub fn fbm_covariance(h: HurstParam, s: f64, t: f64) -> f64 {
    let two_h = 2.0 * h.value();
    0.5 * (s.abs().powf(two_h) + t.abs().powf(two_h) - (t - s).abs().powf(two_h))
}

enum SamplerKind {
    Circulant {
        fft: Arc<dyn Fft<f64>>,
        sqrt_eig: Vec<f64>,
        clipped: f64,
    },
    Cholesky(DMatrix<f64>),
}

/// Exact sampler for `n` consecutive fGn increments.
///
/// Uses circulant embedding of the Toeplitz covariance; falls back to a dense
/// Cholesky factor for short sequences or when the embedding has negative
/// eigenvalues beyond rounding.
pub struct FgnSampler {
    hurst: HurstParam,
    dt: f64,
    n: usize,
    kind: SamplerKind,
}

const CHOLESKY_BELOW: usize = 64;
const MAX_CHOLESKY: usize = 4096;

impl FgnSampler {
    pub fn new(hurst: HurstParam, dt: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("cannot sample zero increments");
        }
        if n >= CHOLESKY_BELOW {
            if let Some(kind) = Self::circulant(hurst, dt, n) {
                return Ok(FgnSampler { hurst, dt, n, kind });
            }
        }
        if n > MAX_CHOLESKY {
            return Err(Error::Numerical(format!(
                "circulant embedding failed and {n} increments is too many for the Cholesky fallback"
            )));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(hurst, dt, i.abs_diff(j)));
        let chol = cov.cholesky().ok_or_else(|| {
            Error::Numerical(format!("fGn covariance of size {n} is not positive definite after rounding"))
        })?;
        Ok(FgnSampler {
            hurst,
            dt,
            n,
            kind: SamplerKind::Cholesky(chol.l()),
        })
    }

    fn circulant(hurst: HurstParam, dt: f64, n: usize) -> Option<SamplerKind> {
        let mut half = n.next_power_of_two();
        let mut planner = FftPlanner::new();
        for _ in 0..3 {
            let size = 2 * half;
            let mut c: Vec<Complex64> = (0..size)
                .map(|j| {
                    let lag = if j <= half { j } else { size - j };
                    Complex64::new(fgn_autocovariance(hurst, dt, lag), 0.0)
                })
                .collect();
            let fft = planner.plan_fft_forward(size);
            fft.process(&mut c);
            let max = c.iter().fold(0.0_f64, |m, z| m.max(z.re));
            let min = c.iter().fold(f64::INFINITY, |m, z| m.min(z.re));
            if min >= -1e-10 * max {
                let clipped = if min < 0.0 { -min } else { 0.0 };
                let sqrt_eig = c.iter().map(|z| (z.re.max(0.0) / size as f64).sqrt()).collect();
                return Some(SamplerKind::Circulant { fft, sqrt_eig, clipped });
            }
            half *= 2;
        }
        None
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_circulant(&self) -> bool {
        matches!(self.kind, SamplerKind::Circulant { .. })
    }

    /// Largest negative eigenvalue magnitude clipped from the embedding.
    pub fn clipped_mass(&self) -> f64 {
        match &self.kind {
            SamplerKind::Circulant { clipped, .. } => *clipped,
            SamplerKind::Cholesky(_) => 0.0,
        }
    }

    /// Autocovariance actually realised by the sampler, lags `0..n`.
    ///
    /// For the circulant method this inverts the (clipped) spectrum; for
    /// Cholesky it is the first row of `L L^T`.
    pub fn realised_autocovariance(&self) -> Vec<f64> {
        match &self.kind {
            SamplerKind::Circulant { sqrt_eig, .. } => {
                let size = sqrt_eig.len();
                let mut spec: Vec<Complex64> = sqrt_eig.iter().map(|s| Complex64::new(s * s, 0.0)).collect();
                let mut planner = FftPlanner::new();
                planner.plan_fft_inverse(size).process(&mut spec);
                spec.iter().take(self.n).map(|z| z.re).collect()
            }
            SamplerKind::Cholesky(l) => (0..self.n).map(|k| l.row(0).dot(&l.row(k))).collect(),
        }
    }

    /// Target autocovariance `gamma(k)`, lags `0..n`.
    pub fn target_autocovariance(&self) -> Vec<f64> {
        (0..self.n).map(|k| fgn_autocovariance(self.hurst, self.dt, k)).collect()
    }

    /// Draws `n` increments into `out`.
    pub fn sample_into(&self, rng: &mut Stream, out: &mut [f64]) {
        assert_eq!(out.len(), self.n);
        match &self.kind {
            SamplerKind::Circulant { fft, sqrt_eig, .. } => {
                let mut w: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|s| Complex64::new(s * rng::normal(rng), s * rng::normal(rng)))
                    .collect();
                fft.process(&mut w);
                for (o, z) in out.iter_mut().zip(&w) {
                    *o = z.re;
                }
            }
            SamplerKind::Cholesky(l) => {
                let mut z = vec![0.0; self.n];
                rng::fill_normal(rng, &mut z);
                for i in 0..self.n {
                    let row = l.row(i);
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += row[j] * z[j];
                    }
                    out[i] = acc;
                }
            }
        }
    }
}

/// Identifies the random stream a path came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub struct PathOrigin {
    pub seed: u64,
    pub path: u64,
}

/// Sampled multi-component fBM on a uniform grid.
///
/// Values are stored with optional padding: `lead` grid points before time 0
/// and `trail` points after the horizon, so that `at(c, k)` is defined for
/// `-lead <= k <= n_steps + trail`. The value at index 0 is exactly zero.
#[derive(Debug, Clone)]
pub struct FbmPath {
    grid: FbmGrid,
    lead: usize,
    trail: usize,
    data: Vec<Vec<f64>>,
    origin: PathOrigin,
}

impl FbmPath {
    /// Wraps explicit values (shape `n_components x (n_steps + 1)`).
    pub fn from_values(grid: FbmGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.n_components || values.iter().any(|v| v.len() != grid.n_steps + 1) {
            return invalid("path values do not match the grid shape");
        }
        if values.iter().any(|v| v[0] != 0.0) {
            return invalid("paths must start at the origin");
        }
        Ok(FbmPath {
            grid,
            lead: 0,
            trail: 0,
            data: values,
            origin: PathOrigin { seed: 0, path: 0 },
        })
    }

    pub fn grid(&self) -> &FbmGrid {
        &self.grid
    }

    pub fn origin(&self) -> PathOrigin {
        self.origin
    }

    pub fn lead(&self) -> usize {
        self.lead
    }

    pub fn trail(&self) -> usize {
        self.trail
    }

    /// Values of component `c` on `0..=n_steps`.
    pub fn values(&self, c: usize) -> &[f64] {
        &self.data[c][self.lead..=self.lead + self.grid.n_steps]
    }

    /// Value of component `c` at grid index `k`, which may lie in the padding.
    pub fn at(&self, c: usize, k: isize) -> f64 {
        self.data[c][(k + self.lead as isize) as usize]
    }

    /// Increment `B(t_{k+1}) - B(t_k)` of component `c`.
    pub fn increment(&self, c: usize, k: usize) -> f64 {
        let i = k + self.lead;
        self.data[c][i + 1] - self.data[c][i]
    }

    /// Writes `t,comp0,comp1,...` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for c in 0..self.grid.n_components {
            s.push_str(&format!(",comp{c}"));
        }
        s.push('\n');
        for k in 0..=self.grid.n_steps {
            s.push_str(&format!("{:.16e}", self.grid.time(k as isize)));
            for c in 0..self.grid.n_components {
                s.push_str(&format!(",{:.16e}", self.values(c)[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Reusable ensemble sampler: one circulant embedding serves every path.
pub struct FbmSampler {
    grid: FbmGrid,
    lead: usize,
    trail: usize,
    fgn: FgnSampler,
}

impl FbmSampler {
    /// Paths are sampled on `[-lead dt, (n_steps + trail) dt]` and shifted so
    /// that `B(0) = 0`, which yields an exact two-sided fBM on that window.
    pub fn new(grid: FbmGrid, lead: usize, trail: usize) -> Result<Self> {
        let fgn = FgnSampler::new(grid.hurst, grid.dt, lead + grid.n_steps + trail)?;
        Ok(FbmSampler { grid, lead, trail, fgn })
    }

    pub fn grid(&self) -> &FbmGrid {
        &self.grid
    }

    pub fn increments(&self) -> &FgnSampler {
        &self.fgn
    }

    /// Path number `path` of the ensemble keyed by `seed`.
    pub fn sample(&self, seed: u64, path: u64) -> FbmPath {
        let total = self.fgn.len();
        let mut incr = vec![0.0; total];
        let data = (0..self.grid.n_components)
            .map(|c| {
                let mut rng = rng::stream(&[tag::FBM, seed, path, c as u64]);
                self.fgn.sample_into(&mut rng, &mut incr);
                let mut v = Vec::with_capacity(total + 1);
                let mut acc = 0.0;
                v.push(0.0);
                for x in &incr {
                    acc += x;
                    v.push(acc);
                }
                let shift = v[self.lead];
                v.iter_mut().for_each(|x| *x -= shift);
                v
            })
            .collect();
        FbmPath {
            grid: self.grid,
            lead: self.lead,
            trail: self.trail,
            data,
            origin: PathOrigin { seed, path },
        }
    }
}

/// Samples one path on `grid`; deterministic in `(seed, component)`.
pub fn sample_fbm(grid: FbmGrid, seed: u64) -> Result<FbmPath> {
    Ok(FbmSampler::new(grid, 0, 0)?.sample(seed, 0))
}

/// Cut-off of the Gaussian mollifier in standard deviations.
pub const MOLLIFIER_CUTOFF: f64 = 6.0;

fn truncated_gaussian_norm() -> f64 {
    (2.0 * std::f64::consts::PI).sqrt() * erf(MOLLIFIER_CUTOFF / std::f64::consts::SQRT_2)
}

/// Truncated, renormalised standard Gaussian density (unit scale).
pub fn unit_mollifier(u: f64) -> f64 {
    if u.abs() > MOLLIFIER_CUTOFF {
        0.0
    } else {
        (-0.5 * u * u).exp() / truncated_gaussian_norm()
    }
}

/// Self-convolution of [`unit_mollifier`], supported on `[-12, 12]`.
pub fn unit_mollifier_autoconvolution(v: f64) -> f64 {
    let c = MOLLIFIER_CUTOFF;
    let lo = (-c).max(v - c);
    let hi = c.min(v + c);
    if hi <= lo {
        return 0.0;
    }
    let z = truncated_gaussian_norm();
    let pi = std::f64::consts::PI;
    (-0.25 * v * v).exp() * 0.5 * pi.sqrt() * (erf(hi - 0.5 * v) - erf(lo - 0.5 * v)) / (z * z)
}

/// Gaussian mollifier `phi_delta(t) = phi(t / delta) / delta` sampled on a grid.
#[derive(Debug, Clone)]
pub struct Mollifier {
    delta: f64,
    dt: f64,
    half: usize,
    phi: Vec<f64>,
    dphi: Vec<f64>,
}

impl Mollifier {
    /// Samples `phi_delta` and `phi_delta'` at offsets `-K..=K` grid steps.
    ///
    /// The samples are rescaled so that the discrete mass is one and the
    /// discrete derivative reproduces linear functions exactly.
    pub fn new(delta: f64, dt: f64) -> Result<Self> {
        if !(delta > 0.0 && dt > 0.0) {
            return invalid("mollifier width and grid step must be positive");
        }
        if delta < 4.0 * dt * (1.0 - 1e-12) {
            return invalid(format!("mollifier width {delta} is below the resolution limit 4 dt = {}", 4.0 * dt));
        }
        let half = (MOLLIFIER_CUTOFF * delta / dt).floor() as usize;
        let size = 2 * half + 1;
        let mut phi = vec![0.0; size];
        let mut dphi = vec![0.0; size];
        for i in 0..=half {
            let u = i as f64 * dt / delta;
            let p = unit_mollifier(u) / delta;
            let dp = -u * unit_mollifier(u) / (delta * delta);
            phi[half + i] = p;
            phi[half - i] = p;
            dphi[half + i] = dp;
            dphi[half - i] = -dp;
        }
        let mass: f64 = phi.iter().sum::<f64>() * dt;
        phi.iter_mut().for_each(|p| *p /= mass);
        let slope: f64 = -(0..size)
            .map(|j| dphi[j] * (j as f64 - half as f64) * dt)
            .sum::<f64>()
            * dt;
        dphi.iter_mut().for_each(|p| *p /= slope);
        Ok(Mollifier {
            delta,
            dt,
            half,
            phi,
            dphi,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid points on each side of the centre.
    pub fn half_width(&self) -> usize {
        self.half
    }

    /// `phi_delta(i dt)` for `-K <= i <= K`.
    pub fn phi(&self, i: isize) -> f64 {
        self.phi[(i + self.half as isize) as usize]
    }

    /// `phi_delta'(i dt)` for `-K <= i <= K`.
    pub fn dphi(&self, i: isize) -> f64 {
        self.dphi[(i + self.half as isize) as usize]
    }

    /// Continuous density `phi_delta(t)`.
    pub fn density(&self, t: f64) -> f64 {
        unit_mollifier(t / self.delta) / self.delta
    }
}

/// `B^delta'` sampled on the path grid, with cubic interpolation in between.
#[derive(Debug, Clone)]
pub struct MollifiedDerivative {
    dt: f64,
    n_steps: usize,
    delta: f64,
    values: Vec<Vec<f64>>,
    origin: PathOrigin,
}

impl MollifiedDerivative {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_components(&self) -> usize {
        self.values.len()
    }

    pub fn origin(&self) -> PathOrigin {
        self.origin
    }

    pub fn values(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    /// Value at grid index `k`.
    pub fn at(&self, c: usize, k: usize) -> f64 {
        self.values[c][k]
    }

    /// Value at an arbitrary time in `[0, T]` by four-point Lagrange
    /// interpolation (exact at grid points).
    pub fn eval(&self, c: usize, t: f64) -> f64 {
        let v = &self.values[c];
        let x = t / self.dt;
        let j = (x.floor() as isize).clamp(0, self.n_steps as isize);
        let frac = x - j as f64;
        if frac.abs() < 1e-12 {
            return v[j as usize];
        }
        let base = (j - 1).clamp(0, self.n_steps as isize - 3) as usize;
        let s = x - base as f64;
        let (y0, y1, y2, y3) = (v[base], v[base + 1], v[base + 2], v[base + 3]);
        let l0 = -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0;
        let l1 = s * (s - 2.0) * (s - 3.0) / 2.0;
        let l2 = -s * (s - 1.0) * (s - 3.0) / 2.0;
        let l3 = s * (s - 1.0) * (s - 2.0) / 6.0;
        l0 * y0 + l1 * y1 + l2 * y2 + l3 * y3
    }
}

/// Builds the mollified derivative `sum_j phi_delta'(t_k - t_j) B(t_j) dt`.
///
/// Paths sampled with at least `K` points of padding on each side are used
/// as is. Otherwise the path is continued below zero antisymmetrically,
/// `B(-t) = -B~(t)`, and past the horizon by `B(T + s) = B(T) + B^(s)`, with
/// `B~`, `B^` independent fBMs drawn from streams tied to the path origin.
/// The window of width `6 delta` at either end is then not an exact sample.
pub fn mollified_derivative(path: &FbmPath, moll: &Mollifier) -> Result<MollifiedDerivative> {
    let grid = path.grid();
    if (moll.dt() - grid.dt).abs() > 1e-12 * grid.dt {
        return invalid("mollifier was sampled for a different grid step");
    }
    let k = moll.half_width();
    let n = grid.n_steps;
    let extended = extend_path(path, k)?;
    let values = extended
        .iter()
        .map(|ext| {
            (0..=n)
                .map(|i| {
                    let centre = i + k;
                    let mut acc = 0.0;
                    for j in -(k as isize)..=(k as isize) {
                        acc += moll.dphi(j) * ext[(centre as isize - j) as usize];
                    }
                    acc * grid.dt
                })
                .collect()
        })
        .collect();
    Ok(MollifiedDerivative {
        dt: grid.dt,
        n_steps: n,
        delta: moll.delta(),
        values,
        origin: path.origin(),
    })
}

/// Mollified path `B^delta(t_k) = sum_j phi_delta(t_k - t_j) B(t_j) dt`.
pub fn mollified_path(path: &FbmPath, moll: &Mollifier) -> Result<Vec<Vec<f64>>> {
    let grid = path.grid();
    let k = moll.half_width();
    let extended = extend_path(path, k)?;
    Ok(extended
        .iter()
        .map(|ext| {
            (0..=grid.n_steps)
                .map(|i| {
                    let centre = i + k;
                    let mut acc = 0.0;
                    for j in -(k as isize)..=(k as isize) {
                        acc += moll.phi(j) * ext[(centre as isize - j) as usize];
                    }
                    acc * grid.dt
                })
                .collect()
        })
        .collect())
}

/// Values on indices `-k..=n+k`, using padding where present and
/// independent continuations otherwise.
fn extend_path(path: &FbmPath, k: usize) -> Result<Vec<Vec<f64>>> {
    let grid = path.grid();
    let n = grid.n_steps;
    let need_left = k.saturating_sub(path.lead());
    let need_right = k.saturating_sub(path.trail());
    let cont_grid = |len: usize| FbmGrid::new(grid.hurst, grid.dt, len.max(1), 1);
    let left = if need_left > 0 {
        Some(FbmSampler::new(cont_grid(k)?, 0, 0)?)
    } else {
        None
    };
    let right = if need_right > 0 {
        Some(FbmSampler::new(cont_grid(k)?, 0, 0)?)
    } else {
        None
    };
    let origin = path.origin();
    let mut out = Vec::with_capacity(grid.n_components);
    for c in 0..grid.n_components {
        let mut ext = Vec::with_capacity(n + 2 * k + 1);
        let tilde = left.as_ref().map(|s| {
            let mut rng = rng::stream(&[tag::FBM_LEFT, origin.seed, origin.path, c as u64]);
            continuation(s, &mut rng)
        });
        for i in (1..=k).rev() {
            ext.push(match &tilde {
                Some(b) => -b[i],
                None => path.at(c, -(i as isize)),
            });
        }
        ext.extend_from_slice(path.values(c));
        let hat = right.as_ref().map(|s| {
            let mut rng = rng::stream(&[tag::FBM_RIGHT, origin.seed, origin.path, c as u64]);
            continuation(s, &mut rng)
        });
        let end = path.values(c)[n];
        for i in 1..=k {
            ext.push(match &hat {
                Some(b) => end + b[i],
                None => path.at(c, (n + i) as isize),
            });
        }
        out.push(ext);
    }
    Ok(out)
}

fn continuation(sampler: &FbmSampler, rng: &mut Stream) -> Vec<f64> {
    let mut incr = vec![0.0; sampler.increments().len()];
    sampler.increments().sample_into(rng, &mut incr);
    let mut v = vec![0.0];
    let mut acc = 0.0;
    for x in incr {
        acc += x;
        v.push(acc);
    }
    v
}

/// The distribution `eta'' `, second derivative of `|t|^{2H}`.
#[derive(Debug, Clone, Copy)]
pub struct EtaKernel {
    pub hurst: HurstParam,
}

impl EtaKernel {
    /// Pointwise value `-2 alpha_H |t|^{2H-2}` away from the origin.
    pub fn pointwise(&self, t: f64) -> f64 {
        let h = self.hurst.value();
        -2.0 * self.hurst.alpha() * t.abs().powf(2.0 * h - 2.0)
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, phi: F) -> Result<f64> {
        eta_dd_integral(self.hurst, a, b, phi)
    }
}

/// Pairs `eta''` with a test function on `[a, b]`, `a <= 0 <= b`.
///
/// The value `phi(0)` is subtracted so the singular power is integrated
/// against a function vanishing at the origin; the power-law remainder is
/// added in closed form:
/// `-2 alpha_H int |t|^{2H-2} (phi - phi(0)) + 2H phi(0) (|a|^{2H-1} + |b|^{2H-1})`,
/// where a side of zero length contributes nothing. For `H > 1/2` this equals
/// the absolutely convergent `int -2 alpha_H |t|^{2H-2} phi`. At `H = 1/2`,
/// `eta'' = 2 delta_0` and the result is `2 phi(0)` (`phi(0)` when one
/// endpoint is the origin).
///
/// The test function must vanish near `a` and `b` unless they are zero, and
/// its support must be resolved by the interval (no narrow bump inside a
/// long interval).
pub fn eta_dd_integral<F: Fn(f64) -> f64>(h: HurstParam, a: f64, b: f64, phi: F) -> Result<f64> {
    if a > 0.0 || b < 0.0 {
        return invalid(format!("interval [{a}, {b}] must contain the origin"));
    }
    if a >= b {
        return invalid(format!("empty interval [{a}, {b}]"));
    }
    let p0 = phi(0.0);
    if h.is_brownian() {
        let sides = (a < 0.0) as u8 + (b > 0.0) as u8;
        return Ok(p0 * sides as f64);
    }
    let hv = h.value();
    let exponent = 2.0 * hv - 2.0;
    let tol = Tolerance::new(1e-9, 1e-12);
    // Grading t = L u^{1/H} maps t^{2H-1} to a linear function of u.
    let k = 1.0 / hv;
    let mut singular = 0.0;
    let mut closed = 0.0;
    if b > 0.0 {
        singular += integrate_graded(|t| t.powf(exponent) * (phi(t) - p0), 0.0, b, k, tol)?;
        closed += b.powf(2.0 * hv - 1.0);
    }
    if a < 0.0 {
        singular += integrate_graded(|t| t.powf(exponent) * (phi(-t) - p0), 0.0, -a, k, tol)?;
        closed += (-a).powf(2.0 * hv - 1.0);
    }
    Ok(-2.0 * h.alpha() * singular + 2.0 * hv * p0 * closed)
}

/// Pairs `eta''` with a smooth `phi` supported in `[c - w, c + w]` when that
/// window does not contain the origin; no regularisation is needed there.
pub fn eta_dd_integral_away<F: Fn(f64) -> f64>(h: HurstParam, c: f64, w: f64, phi: F) -> Result<f64> {
    if (c - w) * (c + w) <= 0.0 {
        return invalid("window contains the origin; use eta_dd_integral");
    }
    let kernel = EtaKernel { hurst: h };
    integrate(|t| kernel.pointwise(t) * phi(t), c - w, c + w, Tolerance::new(1e-12, 1e-11))
}
