//! Monte Carlo experiments built on the rest of the crate.
//!
//! Every runner takes an [`ExperimentConfig`] and returns a judged
//! [`StatReport`]. Paths are keyed by `(base seed, experiment id, path)` and
//! reduced in path order, so reports do not depend on the worker count.

pub mod config;
pub mod report;

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::chain::ChainModel;
use crate::coefficients::Field;
use crate::effective::{pair_covariance, second_order_shift, EffectiveDiffusion};
use crate::error::{Error, Result};
use crate::fbm::{mollified_derivative, FbmGrid, FbmPath, FbmSampler, HurstParam, Mollifier};
use crate::graph::LabelledGraph;
use crate::rng;
use crate::rough::{chen_residual, discrete_first_order_variance, geometric_residual, Driver, Lift};
use crate::solver::{solve_limit_npoint, SlowFastSolver, SlowFastSpec};
use crate::stats::{
    batch_mean, batch_statistic, covariance, energy_permutation_test, jarque_bera, k_statistics, log_log_slope, variance, Estimate,
};

pub use config::{DeltaSetting, DriverKind, ExperimentConfig};
pub use report::{emit_outputs, write_text, RowKind, StatReport, StatRow};

/// Experiment identifiers mixed into the random streams.
pub mod experiment_id {
    pub const CLT: u64 = 1;
    pub const SECOND_ORDER: u64 = 2;
    pub const HOMOGENIZE: u64 = 3;
    pub const LIMIT: u64 = 4;
    pub const LLN: u64 = 5;
    pub const ROUGH: u64 = 6;
    pub const SAMPLE_FBM: u64 = 7;
    pub const SIMULATE: u64 = 8;
    pub const PERMUTATION: u64 = 9;
}

/// Seed of the ensemble for one experiment.
pub fn experiment_seed(base: u64, id: u64) -> u64 {
    rng::stream(&[base, id]).next_u64()
}

/// Maps `f` over `0..n` in parallel, keeping index order.
fn par_map<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let run = || (0..n).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    if workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?
            .install(run)
    }
}

/// `cols[i][k][y] = F_ik(y)` for a field that must not depend on `x`.
fn state_columns(field: &dyn Field) -> Result<Vec<Vec<Vec<f64>>>> {
    let (d, m, n) = (field.dim(), field.noise_dim(), field.states());
    let eval = |x: &[f64]| {
        let mut buf = vec![0.0; d * m];
        let mut cols = vec![vec![vec![0.0; n]; m]; d];
        for y in 0..n {
            field.value_into(x, y, &mut buf);
            for i in 0..d {
                for k in 0..m {
                    cols[i][k][y] = buf[i * m + k];
                }
            }
        }
        cols
    };
    let base = eval(&vec![0.0; d]);
    for probe in [vec![0.37; d], vec![-1.3; d]] {
        let other = eval(&probe);
        let diff = base
            .iter()
            .flatten()
            .flatten()
            .zip(other.iter().flatten().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if diff > 1e-12 {
            return Err(Error::Config(
                "this experiment needs a diffusion field that does not depend on x".into(),
            ));
        }
    }
    Ok(base)
}

fn report_times(times: &[f64], horizon: f64) -> Vec<f64> {
    if times.is_empty() {
        vec![horizon]
    } else {
        times.to_vec()
    }
}

/// Builds one realisation of the first/second order processes.
struct LiftFactory {
    kind: DriverKind,
    sampler: FbmSampler,
    moll: Option<Mollifier>,
    chain: ChainModel,
    eps: f64,
    hurst: HurstParam,
    seed: u64,
    chain_horizon: f64,
}

impl LiftFactory {
    fn new(cfg: &ExperimentConfig, section: &config::CltSection, chain: ChainModel, m: usize, t_max: f64, id: u64) -> Result<Self> {
        let hurst = cfg.hurst();
        let eps = cfg.model.epsilon;
        let h = eps / section.grid_ratio as f64;
        let (dt, moll) = match section.driver {
            DriverKind::Increments => (h, None),
            DriverKind::Mollified => {
                let delta = cfg.delta();
                let dt = h.min(delta / 8.0);
                (dt, Some(Mollifier::new(delta, dt)?))
            }
        };
        let n_steps = (t_max / dt).round().max(1.0) as usize;
        let grid = FbmGrid::new(hurst, dt, n_steps, m)?;
        let pad = moll.as_ref().map_or(0, |m| m.half_width() + 1);
        Ok(LiftFactory {
            kind: section.driver,
            sampler: FbmSampler::new(grid, pad, pad)?,
            moll,
            chain,
            eps,
            hurst,
            seed: experiment_seed(cfg.mc.seed, id),
            chain_horizon: n_steps as f64 * dt / eps * (1.0 + 1e-9),
        })
    }

    fn step(&self) -> f64 {
        self.sampler.grid().dt
    }

    fn lift(&self, p: usize) -> Result<Lift> {
        let path: FbmPath = self.sampler.sample(self.seed, p as u64);
        let chain_path = self.chain.sample_trajectory_keyed(self.chain_horizon, &[self.seed, p as u64])?;
        match self.kind {
            DriverKind::Increments => Lift::new(Driver::Increments(&path), &chain_path, self.eps, self.hurst),
            DriverKind::Mollified => {
                let md = mollified_derivative(&path, self.moll.as_ref().expect("mollified driver"))?;
                Lift::new(Driver::Mollified(&md), &chain_path, self.eps, self.hurst)
            }
        }
    }

    /// Snaps report times to the grid.
    fn grid_time(&self, t: f64) -> f64 {
        (t / self.step()).round() * self.step()
    }
}

fn tag(t: f64) -> String {
    format!("t={t}")
}

/// Functional CLT for `Z_t = sqrt(eps) int_0^{t/eps} F(Y_r) dB_r`.
pub fn run_clt_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    let rm = cfg.resolve()?;
    let cols = state_columns(rm.field.as_ref())?;
    let (d, m) = (rm.field.dim(), rm.field.noise_dim());
    let times = report_times(&cfg.clt.times, rm.horizon);
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let factory = LiftFactory::new(cfg, &cfg.clt, rm.chain.clone(), m, t_max, experiment_id::CLT)?;
    let grid_times: Vec<f64> = times.iter().map(|&t| factory.grid_time(t)).collect();
    let samples: Vec<Vec<f64>> = par_map(cfg.mc.workers, cfg.mc.n_paths, |p| {
        let lift = factory.lift(p)?;
        let mut z = Vec::with_capacity(times.len() * d);
        for &t in &grid_times {
            for row in &cols {
                let mut acc = 0.0;
                for (k, f) in row.iter().enumerate() {
                    acc += lift.first_order(f, 0.0, t)?[k];
                }
                z.push(acc);
            }
        }
        Ok(z)
    })?;
    let eff = EffectiveDiffusion::new(rm.chain.clone(), rm.field.clone(), None, rm.hurst)?;
    let x0 = vec![0.0; d];
    let sigma = eff.sigma(&x0, &x0)?;
    let sym = &sigma + sigma.transpose();
    let mut rep = StatReport::new("clt");
    rep.warnings = rm.warnings.clone();
    let b = cfg.mc.batches;
    let oracle = |t: f64| {
        format!(
            "t (Sigma + Sigma^T), Sigma = Gamma(2H+1)/2 sum_k <F_k, L^(1-2H) F_k>_mu (spectral); H={}, t={t}",
            rm.hurst.value()
        )
    };
    for (ti, &t) in grid_times.iter().enumerate() {
        let col = |i: usize| -> Vec<f64> { samples.iter().map(|z| z[ti * d + i]).collect() };
        for i in 0..d {
            let zi = col(i);
            if cfg.mc.wants("mean") {
                rep.push(StatRow::mean(format!("mean_{i}@{}", tag(t)), batch_mean(&zi, b)?, 0.0, "centred limit"));
            }
            if cfg.mc.wants("cov") {
                for j in i..d {
                    let zj = col(j);
                    let pairs: Vec<(f64, f64)> = zi.iter().cloned().zip(zj).collect();
                    let est = batch_statistic(&pairs, b, covariance)?;
                    let name = if i == j { format!("var_{i}@{}", tag(t)) } else { format!("cov_{i}_{j}@{}", tag(t)) };
                    rep.push(StatRow::mean(name, est, t * sym[(i, j)], oracle(t)));
                }
                if d == 1 && m == 1 && cfg.clt.driver == DriverKind::Increments {
                    let n = (t / factory.step()).round() as usize;
                    let exact = discrete_first_order_variance(&rm.chain, rm.hurst, &cols[0][0], rm.eps, factory.step(), n)?;
                    rep.push(StatRow::info(format!("var_discrete_exact_{i}@{}", tag(t)), exact, 0.0));
                }
            }
            if cfg.mc.wants("cumulants") {
                // k-statistics need a few samples per batch.
                let kb = b.min(zi.len() / 8).max(2);
                let k3 = batch_statistic(&zi, kb, |x| k_statistics(x)[2])?;
                let k4 = batch_statistic(&zi, kb, |x| k_statistics(x)[3])?;
                rep.push(StatRow::mean(format!("k3_{i}@{}", tag(t)), k3, 0.0, "Gaussian limit"));
                rep.push(StatRow::mean(format!("k4_{i}@{}", tag(t)), k4, 0.0, "Gaussian limit"));
            }
            if cfg.mc.wants("normality") && variance(&zi) > 0.0 {
                let jb = jarque_bera(&zi)?;
                rep.push(StatRow::distribution(format!("jarque_bera_{i}@{}", tag(t)), jb.statistic, jb.p_value, "Jarque-Bera, chi^2(2)"));
            }
        }
    }
    rep.judge(cfg.mc.z_threshold, cfg.mc.p_threshold, cfg.mc.bonferroni);
    Ok(rep)
}

/// Means and covariances of `(J, JJ)` against their limits: `J` has covariance
/// `t C(f, g)` and `JJ(f, g)` has mean `t Gamma(2H+1)/2 <f, L^{1-2H} g>`.
pub fn run_second_order_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    let rm = cfg.resolve()?;
    let cols = state_columns(rm.field.as_ref())?;
    let m = rm.field.noise_dim();
    // Observable o = (i, k) drives noise component k.
    let obs: Vec<(usize, usize, Vec<f64>)> = cols
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(k, f)| (i, k, f.clone())))
        .collect();
    let fs: Vec<Vec<f64>> = obs.iter().map(|o| o.2.clone()).collect();
    let times = report_times(&cfg.second_order.times, rm.horizon);
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let factory = LiftFactory::new(cfg, &cfg.second_order, rm.chain.clone(), m, t_max, experiment_id::SECOND_ORDER)?;
    let grid_times: Vec<f64> = times.iter().map(|&t| factory.grid_time(t)).collect();
    let q = obs.len();
    let idx = |o: usize| o * m + obs[o].1;
    let samples: Vec<Vec<f64>> = par_map(cfg.mc.workers, cfg.mc.n_paths, |p| {
        let lift = factory.lift(p)?;
        let mut out = Vec::with_capacity(times.len() * (q + q * q));
        for &t in &grid_times {
            let inc = lift.increment(&fs, 0.0, t)?;
            for o in 0..q {
                out.push(inc.z[idx(o)]);
            }
            for a in 0..q {
                for b in 0..q {
                    out.push(inc.zz[(idx(a), idx(b))]);
                }
            }
        }
        Ok(out)
    })?;
    let mut rep = StatReport::new("second_order");
    rep.warnings = rm.warnings.clone();
    let nb = cfg.mc.batches;
    let h = rm.hurst;
    let stride = q + q * q;
    let label = |o: usize| format!("{}.{}", obs[o].0, obs[o].1);
    for (ti, &t) in grid_times.iter().enumerate() {
        let col = |c: usize| -> Vec<f64> { samples.iter().map(|s| s[ti * stride + c]).collect() };
        for a in 0..q {
            let ja = col(a);
            if cfg.mc.wants("mean") {
                rep.push(StatRow::mean(format!("mean_j_{}@{}", label(a), tag(t)), batch_mean(&ja, nb)?, 0.0, "centred limit"));
            }
            if cfg.mc.wants("cov") {
                for b in a..q {
                    let target = if obs[a].1 == obs[b].1 { t * pair_covariance(&rm.chain, h, &fs[a], &fs[b])? } else { 0.0 };
                    let pairs: Vec<(f64, f64)> = ja.iter().cloned().zip(col(b)).collect();
                    rep.push(StatRow::mean(
                        format!("cov_j_{}_{}@{}", label(a), label(b), tag(t)),
                        batch_statistic(&pairs, nb, covariance)?,
                        target,
                        format!("t C(f, g), C = Gamma(2H+1)/2 (<f, L^(1-2H) g> + <L^(1-2H) f, g>); H={}", h.value()),
                    ));
                }
            }
        }
        if cfg.mc.wants("shift") {
            for a in 0..q {
                for b in 0..q {
                    let target = if obs[a].1 == obs[b].1 { t * second_order_shift(&rm.chain, h, &fs[a], &fs[b])? } else { 0.0 };
                    let v = col(q + a * q + b);
                    rep.push(StatRow::mean(
                        format!("mean_jj_{}_{}@{}", label(a), label(b), tag(t)),
                        batch_mean(&v, nb)?,
                        target,
                        format!("t Gamma(2H+1)/2 <f, L^(1-2H) g>_mu; H={}", h.value()),
                    ));
                }
            }
        }
    }
    rep.judge(cfg.mc.z_threshold, cfg.mc.p_threshold, cfg.mc.bonferroni);
    Ok(rep)
}

/// Difference of two independent sample statistics as an estimate.
fn difference(a: Estimate, b: Estimate) -> Estimate {
    Estimate {
        value: a.value - b.value,
        stderr: a.stderr.hypot(b.stderr),
    }
}

fn coordinate(samples: &[Vec<f64>], i: usize) -> Vec<f64> {
    samples.iter().map(|s| s[i]).collect()
}

/// Compares one-point samples coordinate by coordinate.
fn compare_samples(
    rep: &mut StatReport,
    cfg: &ExperimentConfig,
    suffix: &str,
    fast: &[Vec<f64>],
    limit: &[Vec<f64>],
    perm_seed: u64,
) -> Result<()> {
    let nb = cfg.mc.batches;
    for i in 0..fast.first().map_or(0, |v| v.len()) {
        let (a, b) = (coordinate(fast, i), coordinate(limit, i));
        let (ma, mb) = (batch_mean(&a, nb)?, batch_mean(&b, nb)?);
        let (va, vb) = (batch_statistic(&a, nb, variance)?, batch_statistic(&b, nb, variance)?);
        rep.push(StatRow::info(format!("mean_slowfast_{i}{suffix}"), ma.value, ma.stderr));
        rep.push(StatRow::info(format!("mean_limit_{i}{suffix}"), mb.value, mb.stderr));
        rep.push(StatRow::info(format!("var_slowfast_{i}{suffix}"), va.value, va.stderr));
        rep.push(StatRow::info(format!("var_limit_{i}{suffix}"), vb.value, vb.stderr));
        rep.push(StatRow::mean(format!("mean_diff_{i}{suffix}"), difference(ma, mb), 0.0, "limit SDE ensemble"));
        rep.push(StatRow::mean(format!("var_diff_{i}{suffix}"), difference(va, vb), 0.0, "limit SDE ensemble"));
        if variance(&a) > 0.0 || variance(&b) > 0.0 {
            let test = energy_permutation_test(&a, &b, cfg.homogenize.n_permutations, perm_seed ^ i as u64)?;
            rep.push(StatRow::distribution(
                format!("energy_{i}{suffix}"),
                test.statistic,
                test.p_value,
                format!("energy distance, {} permutations", test.n_permutations),
            ));
        }
    }
    Ok(())
}

/// Endpoints of the slow/fast system against the limiting SDE.
pub fn run_homogenization_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    let rm = cfg.resolve()?;
    let d = rm.field.dim();
    let hs = &cfg.homogenize;
    let x0 = if hs.x0.is_empty() { vec![0.0; d] } else { hs.x0.clone() };
    if x0.len() != d {
        return Err(Error::Config(format!("homogenize.x0 must have {d} entries")));
    }
    let dt = hs.sde_step.unwrap_or(rm.horizon / 400.0);
    let eff = EffectiveDiffusion::new(rm.chain.clone(), rm.field.clone(), rm.drift.clone(), rm.hurst)?;
    let seed_fast = experiment_seed(cfg.mc.seed, experiment_id::HOMOGENIZE);
    let seed_limit = experiment_seed(cfg.mc.seed, experiment_id::LIMIT);
    let perm_seed = experiment_seed(cfg.mc.seed, experiment_id::PERMUTATION);
    let n = cfg.mc.n_paths;
    let w = cfg.mc.workers;
    let solver_for = |eps: f64, delta: f64| -> Result<SlowFastSolver> {
        SlowFastSolver::new(SlowFastSpec::new(
            rm.field.clone(),
            rm.drift.clone(),
            rm.chain.clone(),
            rm.hurst,
            eps,
            delta,
            rm.horizon,
        )?)
    };
    let endpoints = |solver: &SlowFastSolver, pts: &[Vec<f64>], salt: u64| -> Result<Vec<Vec<f64>>> {
        par_map(w, n, |p| Ok(solver.solve(pts, seed_fast ^ salt, p as u64, None)?.endpoint().to_vec()))
    };
    let limit = |pts: &[Vec<f64>], salt: u64| -> Result<Vec<Vec<f64>>> {
        par_map(w, n, |p| Ok(solve_limit_npoint(&eff, pts, rm.horizon, dt, seed_limit ^ salt, p as u64, None)?.endpoint().to_vec()))
    };

    let mut rep = StatReport::new("homogenize");
    rep.warnings = rm.warnings.clone();
    let solver = solver_for(rm.eps, rm.delta)?;
    // With a second point the one-point law is read off the first point of
    // the two-point motion, so every path is integrated once.
    let mut pts = vec![x0.clone()];
    if let Some(x1) = &hs.two_point {
        if x1.len() != d {
            return Err(Error::Config(format!("homogenize.two_point must have {d} entries")));
        }
        pts.push(x1.clone());
    }
    let fast_all = endpoints(&solver, &pts, 0)?;
    let lim_all = limit(&pts, 0)?;
    let first = |s: &[Vec<f64>]| -> Vec<Vec<f64>> { s.iter().map(|v| v[..d].to_vec()).collect() };
    let (fast, lim) = (first(&fast_all), first(&lim_all));
    compare_samples(&mut rep, cfg, "", &fast, &lim, perm_seed)?;

    if pts.len() == 2 {
        let nb = cfg.mc.batches;
        for i in 0..d {
            let pairs = |s: &[Vec<f64>]| -> Vec<(f64, f64)> { s.iter().map(|v| (v[i], v[d + i])).collect() };
            let ca = batch_statistic(&pairs(&fast_all), nb, covariance)?;
            let cb = batch_statistic(&pairs(&lim_all), nb, covariance)?;
            rep.push(StatRow::info(format!("two_point_cov_slowfast_{i}"), ca.value, ca.stderr));
            rep.push(StatRow::info(format!("two_point_cov_limit_{i}"), cb.value, cb.stderr));
            rep.push(StatRow::mean(
                format!("two_point_cov_diff_{i}"),
                difference(ca, cb),
                0.0,
                "two-point motion of the limit SDE with field covariance Sigma(x, xb)",
            ));
        }
    }

    if let Some(alt) = &hs.alternate_delta {
        let delta = alt.resolve(rm.eps)?;
        let fast_alt = endpoints(&solver_for(rm.eps, delta)?, &[x0.clone()], 3)?;
        compare_samples(&mut rep, cfg, &format!("_alt_delta={delta}"), &fast_alt, &lim, perm_seed ^ 3)?;
    }

    if !hs.eps_sweep.is_empty() {
        let mut sweep: Vec<f64> = hs.eps_sweep.clone();
        sweep.sort_by(|a, b| b.total_cmp(a));
        let lim0 = coordinate(&lim, 0);
        let mut energies = Vec::new();
        for (j, &eps) in sweep.iter().enumerate() {
            let delta = cfg.model.delta.resolve(eps)?;
            let f = endpoints(&solver_for(eps, delta)?, &[x0.clone()], 10 + j as u64)?;
            let e = crate::stats::energy_distance(&coordinate(&f, 0), &lim0)?;
            rep.push(StatRow::info(format!("energy_sweep@eps={eps}"), e, 0.0));
            energies.push(e);
        }
        if energies.windows(2).any(|w| w[1] > w[0]) {
            rep.warnings.push("energy distance is not monotone along the eps sweep".into());
        }
    }
    rep.judge(cfg.mc.z_threshold, cfg.mc.p_threshold, cfg.mc.bonferroni);
    Ok(rep)
}

/// RMS error of ergodic averages of `f(Y_s) g(Y_{s+lag})` and its rate in `T`.
pub fn run_lln_check(cfg: &ExperimentConfig) -> Result<StatReport> {
    let chain = cfg.chain()?;
    let ls = &cfg.lln;
    let n = chain.n();
    let default_f = || -> Result<Vec<f64>> {
        let rm = cfg.resolve()?;
        let mut buf = vec![0.0; rm.field.dim() * rm.field.noise_dim()];
        Ok((0..n)
            .map(|y| {
                rm.field.value_into(&vec![0.0; rm.field.dim()], y, &mut buf);
                buf[0]
            })
            .collect())
    };
    let f = if ls.f.is_empty() { default_f()? } else { ls.f.clone() };
    let g = if ls.g.is_empty() { f.clone() } else { ls.g.clone() };
    if f.len() != n || g.len() != n {
        return Err(Error::Config(format!("lln.f and lln.g need {n} entries")));
    }
    let target = chain.inner(&f, &chain.semigroup_apply(ls.lag, &g)?);
    let seed = experiment_seed(cfg.mc.seed, experiment_id::LLN);
    let nb = cfg.mc.batches.min(ls.n_seeds / 2).max(2);
    let mut rep = StatReport::new("lln");
    let mut horizons = ls.horizons.clone();
    horizons.sort_by(f64::total_cmp);
    let mut rms = Vec::new();
    for &t in &horizons {
        let errs: Vec<f64> = par_map(cfg.mc.workers, ls.n_seeds, |s| {
            let path = chain.sample_trajectory_keyed(t + ls.lag, &[seed, t.to_bits(), s as u64])?;
            Ok(path.lagged_product_integral(&f, &g, ls.lag, t)? / t - target)
        })?;
        let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
        let ms = batch_mean(&sq, nb)?;
        let r = ms.value.sqrt();
        let se = if r > 0.0 { ms.stderr / (2.0 * r) } else { 0.0 };
        rep.push(StatRow::info(format!("rms@T={t}"), r, se));
        rep.push(StatRow::mean(
            format!("bias@T={t}"),
            batch_mean(&errs, nb)?,
            0.0,
            format!("stationary start, target <f, P_lag g>_mu = {target}"),
        ));
        rms.push(r);
    }
    if rms.iter().all(|r| *r == 0.0) {
        rep.push(StatRow::info("rms_identically_zero", 0.0, 0.0));
        rep.warnings.push("ergodic averages are exact; the rate is undefined".into());
    } else {
        let fit = log_log_slope(&horizons, &rms)?;
        rep.push(StatRow::fit(
            "rate_slope",
            Estimate {
                value: fit.slope,
                stderr: fit.slope_stderr,
            },
            -0.5,
            ls.slope_tolerance,
            "log-log slope of RMS against T",
        ));
    }
    rep.judge(cfg.mc.z_threshold, cfg.mc.p_threshold, cfg.mc.bonferroni);
    Ok(rep)
}

/// Spectral effective diffusion and its Green–Kubo approximations.
pub fn run_sigma(cfg: &ExperimentConfig) -> Result<StatReport> {
    let rm = cfg.resolve()?;
    let d = rm.field.dim();
    let pick = |v: &[f64]| if v.is_empty() { vec![0.0; d] } else { v.to_vec() };
    let (x, xb) = (pick(&cfg.sigma.x), pick(&cfg.sigma.xbar));
    if x.len() != d || xb.len() != d {
        return Err(Error::Config(format!("sigma.x and sigma.xbar need {d} entries")));
    }
    let eff = EffectiveDiffusion::new(rm.chain.clone(), rm.field.clone(), rm.drift.clone(), rm.hurst)?;
    let sigma = eff.sigma(&x, &xb)?;
    let mut rep = StatReport::new("sigma");
    rep.warnings = rm.warnings.clone();
    for i in 0..d {
        for j in 0..d {
            rep.push(StatRow::info(format!("sigma_{i}_{j}"), sigma[(i, j)], 0.0));
        }
    }
    let norm = sigma.norm().max(f64::MIN_POSITIVE);
    let mut errs = Vec::new();
    for &delta in &cfg.sigma.deltas {
        let gk = eff.sigma_green_kubo(&x, &xb, delta)?;
        let err = (&gk.sigma - &sigma).norm() / norm;
        rep.push(StatRow::info(format!("green_kubo_rel_err@delta={delta}"), err, gk.abs_err / norm).with_target(0.0));
        errs.push(err);
    }
    let violations = errs.windows(2).filter(|w| w[1] >= w[0]).count();
    rep.push(StatRow::fit(
        "green_kubo_monotone_violations",
        Estimate {
            value: violations as f64,
            stderr: 0.0,
        },
        0.0,
        0.0,
        "error strictly decreasing along the listed deltas",
    ));
    rep.judge(cfg.mc.z_threshold, cfg.mc.p_threshold, cfg.mc.bonferroni);
    Ok(rep)
}

/// Chen and geometric residuals of one mollified lift over random triples.
pub fn run_rough_check(cfg: &ExperimentConfig) -> Result<StatReport> {
    let rm = cfg.resolve()?;
    let (d, m) = (rm.field.dim(), rm.field.noise_dim());
    let n = rm.chain.n();
    let mut buf = vec![0.0; d * m];
    let mut fs = vec![vec![0.0; n]; d * m];
    for y in 0..n {
        rm.field.value_into(&vec![0.0; d], y, &mut buf);
        for (c, v) in buf.iter().enumerate() {
            fs[c][y] = *v;
        }
    }
    let dt = rm.delta / cfg.rough.points_per_delta as f64;
    let n_steps = (rm.horizon / dt).round() as usize;
    let moll = Mollifier::new(rm.delta, dt)?;
    let pad = moll.half_width() + 1;
    let sampler = FbmSampler::new(FbmGrid::new(rm.hurst, dt, n_steps, m)?, pad, pad)?;
    let seed = experiment_seed(cfg.mc.seed, experiment_id::ROUGH);
    let path = sampler.sample(seed, 0);
    let md = mollified_derivative(&path, &moll)?;
    let chain_path = rm.chain.sample_trajectory_keyed(n_steps as f64 * dt / rm.eps * (1.0 + 1e-9), &[seed])?;
    let lift = Lift::new(Driver::Mollified(&md), &chain_path, rm.eps, rm.hurst)?;
    let mut rng = rng::stream(&[seed, 1]);
    let (mut chen, mut geo) = (0.0f64, 0.0f64);
    for _ in 0..cfg.rough.n_triples {
        let mut k = [0usize; 3];
        k.iter_mut().for_each(|v| *v = rng.random_range(0..=n_steps));
        k.sort_unstable();
        let [a, b, c] = k.map(|i| i as f64 * dt);
        let st = lift.increment(&fs, a, c)?;
        let su = lift.increment(&fs, a, b)?;
        let ut = lift.increment(&fs, b, c)?;
        let scale = st.zz.amax().max(su.z.amax() * ut.z.amax()).max(1e-300);
        chen = chen.max(chen_residual(&st, &su, &ut)? / scale);
        let gscale = (st.z.amax() * st.z.amax()).max(1e-300);
        geo = geo.max(geometric_residual(&st) / gscale);
    }
    let tol = cfg.rough.tolerance;
    let mut rep = StatReport::new("rough_check");
    let exact = |v: f64| Estimate { value: v, stderr: 0.0 };
    rep.push(StatRow::fit("chen_residual_max", exact(chen), 0.0, tol, "relative Chen defect"));
    rep.push(StatRow::fit("geometric_residual_max", exact(geo), 0.0, tol, "relative defect of sym(ZZ) = Z Z^T / 2"));
    rep.judge(cfg.mc.z_threshold, cfg.mc.p_threshold, cfg.mc.bonferroni);
    Ok(rep)
}

/// One fBM path as CSV (`t` then one column per component).
pub fn sample_fbm_csv(cfg: &ExperimentConfig) -> Result<String> {
    let s = &cfg.sample_fbm;
    let dt = s.dt.unwrap_or(cfg.model.horizon / s.n_steps as f64);
    let grid = FbmGrid::new(cfg.hurst(), dt, s.n_steps, s.components).map_err(|e| Error::Config(e.to_string()))?;
    let path = FbmSampler::new(grid, 0, 0)?.sample(experiment_seed(cfg.mc.seed, experiment_id::SAMPLE_FBM), 0);
    Ok(path.to_csv())
}

/// One slow/fast trajectory as CSV (`t` then `x_a_i`).
pub fn simulate_csv(cfg: &ExperimentConfig) -> Result<String> {
    let rm = cfg.resolve()?;
    let d = rm.field.dim();
    let x0 = if cfg.simulate.x0.is_empty() { vec![vec![0.0; d]] } else { cfg.simulate.x0.clone() };
    let solver = SlowFastSolver::new(SlowFastSpec::new(
        rm.field.clone(),
        rm.drift.clone(),
        rm.chain.clone(),
        rm.hurst,
        rm.eps,
        rm.delta,
        rm.horizon,
    )?)?;
    let traj = solver.solve(&x0, experiment_seed(cfg.mc.seed, experiment_id::SIMULATE), 0, Some(cfg.simulate.record_every))?;
    let mut out = String::from("t");
    for a in 0..traj.n_points {
        for i in 0..d {
            out.push_str(&format!(",x_{a}_{i}"));
        }
    }
    out.push('\n');
    for (t, s) in traj.times.iter().zip(&traj.states) {
        out.push_str(&format!("{t:e}"));
        for v in s {
            out.push_str(&format!(",{v:e}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Regularity and integrability verdicts with witnesses.
pub fn graph_check(text: &str) -> Result<StatReport> {
    let g = LabelledGraph::parse(text)?;
    let reg = g.is_regular().map_err(|e| Error::Config(e.to_string()))?;
    let int = g.is_integrable().map_err(|e| Error::Config(e.to_string()))?;
    let mut rep = StatReport::new("graph_check");
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    rep.push(StatRow::info("regular", flag(reg.holds), 0.0));
    rep.push(StatRow::info("integrable", flag(int.holds), 0.0));
    rep.push(StatRow::info("components", g.n_components() as f64, 0.0));
    if let Some(w) = reg.witness {
        rep.warnings.push(format!("not regular: subset {w:?} violates the power-counting condition"));
    }
    if let Some(w) = int.witness {
        rep.warnings.push(format!("not integrable: tight partition {w:?} violates the decay condition"));
    }
    Ok(rep)
}

/// Dispatches on the command-line experiment names.
pub fn run_named(name: &str, cfg: &ExperimentConfig) -> Result<StatReport> {
    match name {
        "clt" => run_clt_experiment(cfg),
        "second-order" => run_second_order_experiment(cfg),
        "homogenize" => run_homogenization_experiment(cfg),
        "lln" => run_lln_check(cfg),
        "sigma" => run_sigma(cfg),
        "rough-check" => run_rough_check(cfg),
        other => Err(Error::Config(format!("unknown experiment '{other}'"))),
    }
}
