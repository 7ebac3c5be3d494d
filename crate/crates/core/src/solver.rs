//! Pathwise integration of the mollified slow/fast system and Euler–Maruyama
//! simulation of the limiting n-point motion.

use std::sync::Arc;

use nalgebra::DVector;

use crate::chain::ChainModel;
use crate::coefficients::Field;
use crate::effective::EffectiveDiffusion;
use crate::error::{invalid, Error, Result};
use crate::fbm::{mollified_derivative, FbmGrid, FbmSampler, HurstParam, MollifiedDerivative, Mollifier, PathOrigin};
use crate::rng::{self, tag};

/// Threshold on `|X|` treated as a blow-up.
pub const BLOW_UP: f64 = 1e8;

/// Parameters of `dX = eps^{1/2-H} F(X, Y_{t/eps}) B'^delta dt + F0(X, Y_{t/eps}) dt`.
#[derive(Clone)]
pub struct SlowFastSpec {
    pub field: Arc<dyn Field>,
    pub drift: Option<Arc<dyn Field>>,
    pub chain: ChainModel,
    pub hurst: HurstParam,
    pub eps: f64,
    pub delta: f64,
    pub horizon: f64,
    /// RK4 step.
    pub step: f64,
    /// Grid of the sampled fBM; `B'^delta` is interpolated in between.
    pub noise_step: f64,
}

impl SlowFastSpec {
    /// Uses a noise grid of `delta / 8` and the largest admissible RK4 step
    /// dividing it, `min(delta, eps) / 20` or finer.
    pub fn new(
        field: Arc<dyn Field>,
        drift: Option<Arc<dyn Field>>,
        chain: ChainModel,
        hurst: HurstParam,
        eps: f64,
        delta: f64,
        horizon: f64,
    ) -> Result<Self> {
        let noise_step = delta / 8.0;
        let limit = eps.min(delta) / 20.0;
        let sub = (noise_step / limit).ceil().max(1.0);
        let spec = SlowFastSpec {
            field,
            drift,
            chain,
            hurst,
            eps,
            delta,
            horizon,
            step: noise_step / sub,
            noise_step,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.delta > 0.0 && self.horizon > 0.0 && self.step > 0.0 && self.noise_step > 0.0) {
            return invalid("eps, delta, horizon and steps must be positive");
        }
        let limit = self.eps.min(self.delta) / 20.0;
        if self.step > limit * (1.0 + 1e-9) {
            return invalid(format!(
                "step {} violates the resolution rule h <= min(delta, eps) / 20 = {limit}",
                self.step
            ));
        }
        if self.delta < 4.0 * self.noise_step * (1.0 - 1e-12) {
            return invalid("noise grid must resolve delta with at least four points");
        }
        let f = &self.field;
        if f.states() != self.chain.n() {
            return invalid("field and chain have different state counts");
        }
        if let Some(d) = &self.drift {
            if d.dim() != f.dim() || d.noise_dim() != 1 || d.states() != self.chain.n() {
                return invalid("drift field must be d x 1 on the same states");
            }
        }
        if self.hurst.value() > 0.5 {
            let x = vec![0.0; f.dim()];
            let avg = crate::coefficients::mu_average(f.as_ref(), &x, self.chain.mu());
            if avg.iter().any(|v| v.abs() > 1e-10) {
                return invalid("for H > 1/2 the diffusion field must be centred under mu");
            }
        }
        Ok(())
    }

    fn n_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

/// Stored positions: `states[r][a * d + i]` is coordinate `i` of point `a`
/// at `times[r]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub n_points: usize,
    pub dim: usize,
    pub origin: PathOrigin,
}

impl Trajectory {
    pub fn endpoint(&self) -> &[f64] {
        self.states.last().expect("trajectories store the endpoint")
    }

    /// Final position of point `a`.
    pub fn endpoint_of(&self, a: usize) -> &[f64] {
        &self.endpoint()[a * self.dim..(a + 1) * self.dim]
    }
}

/// Reusable solver: the fBM embedding and mollifier are built once.
pub struct SlowFastSolver {
    spec: SlowFastSpec,
    sampler: FbmSampler,
    moll: Mollifier,
}

impl SlowFastSolver {
    pub fn new(spec: SlowFastSpec) -> Result<Self> {
        spec.validate()?;
        let moll = Mollifier::new(spec.delta, spec.noise_step)?;
        let n_noise = (spec.horizon / spec.noise_step).ceil() as usize + 4;
        let grid = FbmGrid::new(spec.hurst, spec.noise_step, n_noise, spec.field.noise_dim())?;
        let pad = moll.half_width() + 1;
        let sampler = FbmSampler::new(grid, pad, pad)?;
        Ok(SlowFastSolver { spec, sampler, moll })
    }

    pub fn spec(&self) -> &SlowFastSpec {
        &self.spec
    }

    /// The mollified noise used for path number `path` of ensemble `seed`.
    pub fn noise(&self, seed: u64, path: u64) -> Result<MollifiedDerivative> {
        mollified_derivative(&self.sampler.sample(seed, path), &self.moll)
    }

    /// Integrates every point of `x0` under one realisation of `(B, Y)`.
    ///
    /// With `record_every = Some(k)` every `k`-th step is stored; the
    /// endpoint is always stored.
    pub fn solve(&self, x0: &[Vec<f64>], seed: u64, path: u64, record_every: Option<usize>) -> Result<Trajectory> {
        let spec = &self.spec;
        let d = spec.field.dim();
        let m = spec.field.noise_dim();
        if x0.is_empty() || x0.iter().any(|x| x.len() != d) {
            return invalid(format!("initial points must be a non-empty list of {d}-vectors"));
        }
        let noise = self.noise(seed, path)?;
        let y = spec.chain.sample_trajectory_keyed(spec.horizon / spec.eps * (1.0 + 1e-9) + 1e-9, &[seed, path])?;
        let mut cursor = y.cursor();
        let q = x0.len();
        let scale = spec.eps.powf(0.5 - spec.hurst.value());
        let h = spec.step;
        let n = spec.n_steps();
        let mut x: Vec<f64> = x0.concat();
        let mut times = vec![0.0];
        let mut states = vec![x.clone()];
        let mut work = Rhs::new(d, m);
        let mut k = [vec![0.0; q * d], vec![0.0; q * d], vec![0.0; q * d], vec![0.0; q * d]];
        let mut tmp = vec![0.0; q * d];
        let mut bdot = vec![0.0; m];
        for step in 0..n {
            let t = step as f64 * h;
            let stage_times = [t, t + 0.5 * h, t + 0.5 * h, t + h];
            let coef = [0.0, 0.5, 0.5, 1.0];
            for s in 0..4 {
                let ts = stage_times[s];
                for (c, b) in bdot.iter_mut().enumerate() {
                    *b = scale * noise.eval(c, ts);
                }
                let state = cursor.state_at(ts / spec.eps);
                for i in 0..q * d {
                    tmp[i] = if s == 0 { x[i] } else { x[i] + coef[s] * h * k[s - 1][i] };
                }
                work.eval(spec, &tmp, q, state, &bdot, &mut k[s]);
            }
            for i in 0..q * d {
                x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            if let Some(i) = x.iter().position(|v| !(v.abs() <= BLOW_UP)) {
                return Err(Error::Numerical(format!(
                    "blow-up at t = {:.6}: point {} coordinate {} reached {:.3e}",
                    (step + 1) as f64 * h,
                    i / d,
                    i % d,
                    x[i]
                )));
            }
            let last = step + 1 == n;
            if last || record_every.is_some_and(|r| (step + 1) % r.max(1) == 0) {
                times.push((step + 1) as f64 * h);
                states.push(x.clone());
            }
        }
        Ok(Trajectory {
            times,
            states,
            n_points: q,
            dim: d,
            origin: PathOrigin { seed, path },
        })
    }
}

/// Scratch buffers for the right-hand side.
struct Rhs {
    f: Vec<f64>,
    f0: Vec<f64>,
}

impl Rhs {
    fn new(d: usize, m: usize) -> Self {
        Rhs {
            f: vec![0.0; d * m],
            f0: vec![0.0; d],
        }
    }

    fn eval(&mut self, spec: &SlowFastSpec, x: &[f64], q: usize, state: usize, bdot: &[f64], out: &mut [f64]) {
        let d = spec.field.dim();
        let m = bdot.len();
        for a in 0..q {
            let xa = &x[a * d..(a + 1) * d];
            spec.field.value_into(xa, state, &mut self.f);
            if let Some(f0) = &spec.drift {
                f0.value_into(xa, state, &mut self.f0);
            }
            for i in 0..d {
                let mut v = if spec.drift.is_some() { self.f0[i] } else { 0.0 };
                for c in 0..m {
                    v += self.f[i * m + c] * bdot[c];
                }
                out[a * d + i] = v;
            }
        }
    }
}

/// One-shot convenience wrapper around [`SlowFastSolver`].
pub fn solve_slow_fast(spec: &SlowFastSpec, x0: &[Vec<f64>], seed: u64) -> Result<Trajectory> {
    SlowFastSolver::new(spec.clone())?.solve(x0, seed, 0, None)
}

/// Euler–Maruyama for the n-point motion of
/// `dX = W(X, dt) + G(X) dt + F0bar(X) dt`, with the field covariance frozen
/// at the left endpoint of each step.
///
/// Coincident points share one noise row, so they stay together exactly.
pub fn solve_limit_npoint(
    eff: &EffectiveDiffusion,
    x0: &[Vec<f64>],
    horizon: f64,
    dt: f64,
    seed: u64,
    path: u64,
    record_every: Option<usize>,
) -> Result<Trajectory> {
    let d = eff.dim();
    if x0.is_empty() || x0.iter().any(|x| x.len() != d) {
        return invalid(format!("initial points must be a non-empty list of {d}-vectors"));
    }
    if !(dt > 0.0 && horizon > 0.0) || dt > horizon / 100.0 * (1.0 + 1e-12) {
        return invalid(format!("SDE step {dt} must be positive and at most horizon / 100"));
    }
    let n = (horizon / dt).round() as usize;
    let mut rng = rng::stream(&[tag::SDE, seed, path]);
    let mut x: Vec<Vec<f64>> = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![x.concat()];
    let sq = dt.sqrt();
    for step in 0..n {
        // Distinct positions and the map from points to them.
        let mut unique: Vec<Vec<f64>> = Vec::new();
        let mut slot = Vec::with_capacity(x.len());
        for p in &x {
            match unique.iter().position(|u| u == p) {
                Some(i) => slot.push(i),
                None => {
                    slot.push(unique.len());
                    unique.push(p.clone());
                }
            }
        }
        let factor = eff.w_field_factor(&unique)?;
        let mut z = vec![0.0; factor.ncols()];
        rng::fill_normal(&mut rng, &mut z);
        let noise = &factor * DVector::from_vec(z);
        let drifts: Vec<Vec<f64>> = unique
            .iter()
            .map(|u| {
                let g = eff.drift_correction(u)?;
                Ok(g.iter().zip(eff.drift_mean(u)).map(|(a, b)| a + b).collect())
            })
            .collect::<Result<_>>()?;
        for (p, &s) in x.iter_mut().zip(&slot) {
            for i in 0..d {
                p[i] += noise[s * d + i] * sq + drifts[s][i] * dt;
            }
        }
        if let Some(p) = x.iter().position(|p| p.iter().any(|v| !(v.abs() <= BLOW_UP))) {
            return Err(Error::Numerical(format!(
                "limit SDE blow-up at t = {:.6} for point {p}",
                (step + 1) as f64 * dt
            )));
        }
        let last = step + 1 == n;
        if last || record_every.is_some_and(|r| (step + 1) % r.max(1) == 0) {
            times.push((step + 1) as f64 * dt);
            states.push(x.concat());
        }
    }
    Ok(Trajectory {
        times,
        states,
        n_points: x0.len(),
        dim: d,
        origin: PathOrigin { seed, path },
    })
}
