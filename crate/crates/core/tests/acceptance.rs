//! Acceptance suite. Each test prints one `criterion N [PASS|FAIL]` line and
//! then asserts it.

use std::sync::Arc;

use fracavg_core::chain::ChainModel;
use fracavg_core::coefficients::{Basis, CoefficientField, FieldKind, Term};
use fracavg_core::effective::{second_order_shift, EffectiveDiffusion};
use fracavg_core::fbm::{fbm_covariance, mollified_derivative, FbmGrid, FbmSampler, FgnSampler, HurstParam, Mollifier};
use fracavg_core::graph::{build_cumulant_graph, main_term_check, quotient, spanning_forest_beta, Edge, LabelledGraph};
use fracavg_core::harness::{self, ExperimentConfig};
use fracavg_core::rng::{normal, stream};
use fracavg_core::rough::{
    chaos_domination_check, chaos_variances_exact, iterated_sum, mean_iterated_deterministic, mollified_mean_exact,
    Driver, Lift,
};
use fracavg_core::stats::{batch_mean, batch_statistic, covariance, k_statistics, log_log_slope};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::{gamma, gamma_li};

fn hurst(h: f64) -> HurstParam {
    HurstParam::new(h).unwrap()
}

fn verdict(n: usize, title: &str, pass: bool, detail: &str) {
    println!("criterion {n} [{}] {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

/// Rates of order one, not reversible.
fn three_state(scale: f64) -> ChainModel {
    let base = [[-1.5, 0.9, 0.6], [0.3, -0.9, 0.6], [0.9, 0.45, -1.35]];
    let rows: Vec<Vec<f64>> = base.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    ChainModel::new(&rows).unwrap()
}

#[test]
fn c01_fbm_exactness() {
    let mut worst = 0.0f64;
    for h in [0.35, 0.5, 0.75, 0.9] {
        for n in [16, 100, 1024] {
            let s = FgnSampler::new(hurst(h), 1.0 / n as f64, n).unwrap();
            let err = s
                .realised_autocovariance()
                .iter()
                .zip(s.target_autocovariance())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
        }
    }
    let n_paths = 5000;
    let n = 32;
    let pairs = [(8usize, 16usize), (16, 32), (32, 32), (4, 28), (24, 8)];
    let mut max_z = 0.0f64;
    for h in [0.35, 0.5, 0.75, 0.9] {
        let sampler = FbmSampler::new(FbmGrid::new(hurst(h), 1.0 / n as f64, n, 1).unwrap(), 0, 0).unwrap();
        let paths: Vec<Vec<f64>> = (0..n_paths as u64).map(|p| sampler.sample(17, p).values(0).to_vec()).collect();
        for &(a, b) in &pairs {
            let xy: Vec<(f64, f64)> = paths.iter().map(|v| (v[a], v[b])).collect();
            let est = batch_statistic(&xy, 20, covariance).unwrap();
            let target = fbm_covariance(hurst(h), a as f64 / n as f64, b as f64 / n as f64);
            max_z = max_z.max(est.z(target).abs());
        }
    }
    let pass = worst <= 1e-10 && max_z <= 4.0;
    verdict(
        1,
        "fBM exactness",
        pass,
        &format!("max |realised - target autocovariance| = {worst:.2e} (<= 1e-10); max |z| over 20 empirical covariances = {max_z:.2} (<= 4)"),
    );
}

#[test]
fn c02_fractional_power_cross_validation() {
    let mut rng = stream(&[2024]);
    let mut worst = 0.0f64;
    let mut chains = 0;
    while chains < 20 {
        let mut q = vec![vec![0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    q[i][j] = rng.random_range(0.1..2.0);
                }
            }
            q[i][i] = -q[i].iter().sum::<f64>();
        }
        let Ok(chain) = ChainModel::new(&q) else { continue };
        chains += 1;
        let f = chain.center(&[normal(&mut rng), normal(&mut rng), normal(&mut rng)]);
        for alpha in [-0.5, -0.2, 0.3] {
            let a = chain.fractional_power(alpha, &f).unwrap();
            let b = chain.fractional_power_quadrature(alpha, &f).unwrap().value;
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(diff / norm);
        }
    }
    verdict(
        2,
        "fractional power cross-validation",
        worst <= 1e-6,
        &format!("20 random 3-state chains, alpha in {{-0.5, -0.2, 0.3}}: max relative difference {worst:.2e} (<= 1e-6)"),
    );
}

fn two_column_field(chain: &ChainModel) -> CoefficientField {
    let f = chain.center(&[1.0, -0.5, 2.0]);
    let g = chain.center(&[0.3, 1.0, -1.0]);
    let coeffs = (0..3).flat_map(|y| [f[y], g[y]]).collect();
    CoefficientField::new(2, 1, 3, FieldKind::Diffusion, vec![Term { basis: Basis::Const, coeffs }]).unwrap()
}

#[test]
fn c03_green_kubo_convergence() {
    let chain = three_state(0.5);
    let field = Arc::new(two_column_field(&chain));
    let deltas = [0.2, 0.1, 0.05, 0.025];
    let errors = |h: f64| -> Vec<f64> {
        let eff = EffectiveDiffusion::new(chain.clone(), field.clone(), None, hurst(h)).unwrap();
        let x = [0.0, 0.0];
        let s = eff.sigma(&x, &x).unwrap();
        deltas
            .iter()
            .map(|&d| (eff.sigma_green_kubo(&x, &x, d).unwrap().sigma - &s).norm() / s.norm())
            .collect()
    };
    let mut pass = true;
    let mut detail = String::new();
    for h in [0.6, 0.75] {
        let e = errors(h);
        let ok = e.windows(2).all(|w| w[1] < w[0]) && e[3] <= 0.05;
        pass &= ok;
        detail += &format!("H={h}: errors {:?}; ", e.iter().map(|v| format!("{:.2}%", 100.0 * v)).collect::<Vec<_>>());
    }
    let low = errors(0.4);
    detail += &format!(
        "(info H=0.4: {:?}, error ~ (delta/tau)^(2H))",
        low.iter().map(|v| format!("{:.2}%", 100.0 * v)).collect::<Vec<_>>()
    );
    verdict(3, "Green-Kubo convergence", pass, &detail);
}

/// `(J_{0,1}(f_a), JJ_{0,1}(f_a, f_b))` on raw increments with step `eps / 16`.
fn first_second_ensemble(chain: &ChainModel, h: f64, fs: &[Vec<f64>], eps: f64, n_paths: usize, seed: u64) -> Vec<(Vec<f64>, DMatrix<f64>)> {
    let dt = eps / 16.0;
    let n = (1.0 / dt).round() as usize;
    let sampler = FbmSampler::new(FbmGrid::new(hurst(h), dt, n, 1).unwrap(), 0, 0).unwrap();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path = sampler.sample(seed, p as u64);
            let cp = chain.sample_trajectory_keyed(n as f64 * dt / eps * (1.0 + 1e-9), &[seed, p as u64]).unwrap();
            let lift = Lift::new(Driver::Increments(&path), &cp, eps, hurst(h)).unwrap();
            let inc = lift.increment(fs, 0.0, n as f64 * dt).unwrap();
            (inc.z.iter().cloned().collect(), inc.zz)
        })
        .collect()
}

#[test]
fn c04_functional_clt() {
    let chain = ChainModel::two_state(1.0, 1.0).unwrap();
    let f = vec![1.0, -1.0];
    let mut pass = true;
    let mut detail = String::new();
    for (i, h) in [0.4, 0.5, 0.75].into_iter().enumerate() {
        let ens = first_second_ensemble(&chain, h, &[f.clone()], 1e-3, 10_000, 400 + i as u64);
        let z: Vec<f64> = ens.iter().map(|e| e.0[0]).collect();
        let target = gamma(2.0 * h + 1.0) * 2f64.powf(1.0 - 2.0 * h);
        let var = batch_statistic(&z, 20, |x| k_statistics(x)[1]).unwrap();
        let k4 = batch_statistic(&z, 20, |x| k_statistics(x)[3]).unwrap();
        let (zv, zk) = (var.z(target), k4.z(0.0));
        pass &= zv.abs() <= 3.0 && zk.abs() <= 3.0;
        detail += &format!(
            "H={h}: Var={:.4}+-{:.4} target {target:.4} (z={zv:.2}), k4={:.3}+-{:.3} (z={zk:.2}); ",
            var.value, var.stderr, k4.value, k4.stderr
        );
    }
    verdict(4, "functional CLT", pass, &detail);
}

#[test]
fn c05_second_order_shift() {
    let chain = three_state(1.0);
    assert!(!chain.is_reversible(1e-9));
    let f = chain.center(&[1.0, -0.5, 2.0]);
    let g = chain.center(&[0.3, 1.0, -1.0]);
    let mut pass = true;
    let mut detail = String::new();
    for (i, h) in [0.4, 0.75, 0.5].into_iter().enumerate() {
        let ens = first_second_ensemble(&chain, h, &[f.clone(), g.clone()], 1e-3, 10_000, 500 + i as u64);
        // Target from the quadrature representation of L^{1-2H}, independent of the spectral route.
        let target = |a: &[f64], b: &[f64]| -> f64 {
            if h == 0.5 {
                0.5 * chain.inner(a, b)
            } else {
                let lb = chain.fractional_power_quadrature(1.0 - 2.0 * h, b).unwrap().value;
                0.5 * gamma(2.0 * h + 1.0) * chain.inner(a, &lb)
            }
        };
        for (a, b, name) in [(0, 1, "JJ(f,g)"), (1, 0, "JJ(g,f)")] {
            let obs = [&f, &g];
            let t = target(obs[a], obs[b]);
            let spectral = second_order_shift(&chain, hurst(h), obs[a], obs[b]).unwrap();
            assert!((t - spectral).abs() <= 1e-6 * t.abs().max(1e-3));
            let v: Vec<f64> = ens.iter().map(|e| e.1[(a, b)]).collect();
            let est = batch_mean(&v, 20).unwrap();
            let z = est.z(t);
            pass &= z.abs() <= 3.0;
            detail += &format!("H={h} {name}: {:.4}+-{:.4} target {t:.4} (z={z:.2}); ", est.value, est.stderr);
        }
    }
    verdict(5, "second-order shift", pass, &detail);
}

fn rough_config(h: f64, coeffs: &str, noise_dim: usize) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        r#"
[model]
hurst = {h}
epsilon = 0.01
delta = 0.001
horizon = 1.0
[chain]
generator = [[-1.5, 0.9, 0.6], [0.3, -0.9, 0.6], [0.9, 0.45, -1.35]]
[coefficients]
noise_dim = {noise_dim}
diffusion = [{{ basis = "const", coeffs = {coeffs} }}]
[mc]
seed = 6
"#
    ))
    .unwrap()
}

#[test]
fn c06_chen_and_geometric() {
    let mut worst = (0.0f64, 0.0f64);
    for (h, coeffs, m) in [(0.4, "[1.0, 0.5, -0.5, 1.0, 2.0, 0.0]", 2), (0.75, "[0.6, -0.6, 0.0]", 1)] {
        let cfg = rough_config(h, coeffs, m);
        let cfg = if h > 0.5 {
            let mut c = cfg;
            c.coefficients.auto_center = true;
            c
        } else {
            cfg
        };
        let rep = harness::run_rough_check(&cfg).unwrap();
        worst.0 = worst.0.max(rep.row("chen_residual_max").unwrap().estimate);
        worst.1 = worst.1.max(rep.row("geometric_residual_max").unwrap().estimate);
    }
    verdict(
        6,
        "Chen relation and geometric identity",
        worst.0 <= 1e-9 && worst.1 <= 1e-9,
        &format!("100 random triples per run, H in {{0.4, 0.75}}: max relative Chen residual {:.2e}, geometric {:.2e} (<= 1e-9)", worst.0, worst.1),
    );
}

#[test]
fn c07_mean_iterated_integral() {
    let h = hurst(0.4);
    type Obs = fn(f64) -> f64;
    // The gap to the continuum value is a boundary layer of size ~ delta^(2H) f(s) g(s), so
    // its relative size depends on the pair. The last pair has a strongly cancelling
    // mean and is reported without gating.
    let pairs: [(&str, f64, f64, Obs, Obs, bool); 3] = [
        ("exp(r), 1+r on [0,1]", 0.0, 1.0, |r| r.exp(), |r| 1.0 + r, true),
        ("cos(r), cos(2r) on [0,1]", 0.0, 1.0, |r| r.cos(), |r| (2.0 * r).cos(), true),
        ("1+sin(3r)/2, cos(2r) on [0.1,1.1]", 0.1, 1.1, |r| 1.0 + 0.5 * (3.0 * r).sin(), |r| (2.0 * r).cos(), false),
    ];
    let mut pass = true;
    let mut detail = String::new();
    for (pi, &(name, s, t, f, g, gated)) in pairs.iter().enumerate() {
        let oracle = mean_iterated_deterministic(f, g, s, t, h).unwrap();
        let mut errs = Vec::new();
        let mut z = 0.0;
        for delta in [4e-3, 2e-3, 1e-3] {
            let dt = delta / 4.0;
            let n = ((t - s) / dt).round() as usize;
            let fk: Vec<f64> = (0..n).map(|k| f(s + k as f64 * dt)).collect();
            let gk: Vec<f64> = (0..n).map(|k| g(s + k as f64 * dt)).collect();
            let moll = Mollifier::new(delta, dt).unwrap();
            let exact = mollified_mean_exact(&fk, &gk, &moll, h).unwrap();
            if delta == 1e-3 && gated {
                // Ensemble of 10^4 mollified paths against the exact mollified mean.
                let n_total = (t / dt).round() as usize;
                let pad = moll.half_width() + 1;
                let sampler = FbmSampler::new(FbmGrid::new(h, dt, n_total, 1).unwrap(), pad, pad).unwrap();
                let k0 = (s / dt).round() as usize;
                let samples: Vec<f64> = (0..10_000u64)
                    .into_par_iter()
                    .map(|p| {
                        let md = mollified_derivative(&sampler.sample(77 + pi as u64, p), &moll).unwrap();
                        let v = &md.values(0)[k0..k0 + n];
                        let a: Vec<f64> = v.iter().zip(&fk).map(|(x, y)| x * y * dt).collect();
                        let b: Vec<f64> = v.iter().zip(&gk).map(|(x, y)| x * y * dt).collect();
                        iterated_sum(&a, &b)
                    })
                    .collect();
                let est = batch_mean(&samples, 20).unwrap();
                z = est.z(exact);
                let mc_err = (est.value - oracle).abs() / oracle.abs();
                detail += &format!("{name}: ensemble {:.5}+-{:.5} vs exact mollified (z={z:.2}), vs continuum {:.3}%; ", est.value, est.stderr, 100.0 * mc_err);
            }
            errs.push((exact - oracle).abs() / oracle.abs());
        }
        let ok = errs.windows(2).all(|w| w[1] < w[0]) && errs[2] <= 0.01 && z.abs() <= 3.0;
        if gated {
            pass &= ok;
        }
        detail += &format!(
            "{name}{}: continuum {oracle:.5}, exact mollified rel. error at delta=4e-3,2e-3,1e-3 {:?}; ",
            if gated { "" } else { " (info)" },
            errs.iter().map(|e| format!("{:.3}%", 100.0 * e)).collect::<Vec<_>>()
        );
    }
    verdict(7, "mean iterated-integral oracle", pass, &format!("{detail}tolerance 1% at delta=1e-3, |z| <= 3"));
}

#[test]
fn c08_homogenization_endpoint() {
    let cfg = ExperimentConfig::from_toml(
        r#"
[model]
hurst = 0.4
epsilon = 0.01
delta = "eps^2"
horizon = 1.0
[chain]
generator = [[-1.0, 1.0], [1.0, -1.0]]
[coefficients]
diffusion = [
  { basis = "const", coeffs = [1.0, -1.0] },
  { basis = "sin", params = [1.0, 0.0], coeffs = [0.5, -0.5] },
]
drift = [{ basis = "tanh", params = [1.0, 0.0], coeffs = [-0.5, -0.5] }]
[mc]
n_paths = 2000
seed = 8
[homogenize]
x0 = [0.0]
two_point = [0.5]
sde_step = 0.0025
n_permutations = 499
"#,
    )
    .unwrap();
    let rep = harness::run_homogenization_experiment(&cfg).unwrap();
    let row = |n: &str| rep.row(n).unwrap_or_else(|| panic!("missing {n}"));
    let e = row("energy_0");
    let (m, v, c) = (row("mean_diff_0"), row("var_diff_0"), row("two_point_cov_diff_0"));
    let pass = e.p_value.unwrap() >= 0.01 && m.pass && v.pass && c.pass;
    verdict(
        8,
        "homogenization endpoint",
        pass,
        &format!(
            "energy distance {:.2e} p={:.3}; mean {:.4} vs {:.4} (z={:.2}); var {:.4} vs {:.4} (z={:.2}); two-point cov {:.4} vs {:.4} (z={:.2})",
            e.estimate,
            e.p_value.unwrap(),
            row("mean_slowfast_0").estimate,
            row("mean_limit_0").estimate,
            m.z.unwrap(),
            row("var_slowfast_0").estimate,
            row("var_limit_0").estimate,
            v.z.unwrap(),
            row("two_point_cov_slowfast_0").estimate,
            row("two_point_cov_limit_0").estimate,
            c.z.unwrap()
        ),
    );
}

fn random_graph(rng: &mut fracavg_core::rng::Stream) -> LabelledGraph {
    let n = rng.random_range(2..=6);
    let n_edges = rng.random_range(1..=8);
    let mut edges = Vec::new();
    for _ in 0..n_edges {
        let u = rng.random_range(0..n);
        let mut v = rng.random_range(0..n);
        if v == u {
            v = (u + 1) % n;
        }
        edges.push(Edge::new(u, v, -rng.random_range(0.0..2.5), -rng.random_range(0.0..2.5)));
    }
    LabelledGraph::new(n, edges).unwrap()
}

#[test]
fn c09_graph_machinery() {
    let h = hurst(0.75);
    let kappa = 0.1;
    let partition = vec![vec![0, 2], vec![1, 3, 4], vec![5, 6, 7], vec![8, 9]];
    let pairing = vec![(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)];
    let cg = build_cumulant_graph(&partition, &pairing, h).unwrap();
    let q = quotient(&partition, &pairing);
    let fb = spanning_forest_beta(&cg, kappa, h).unwrap();
    let (p, m) = (5.0, q.components as f64);
    let forest_one_based: Vec<(usize, usize)> = fb.forest.iter().map(|&(a, b)| (a + 1, b + 1)).collect();
    let instance_ok = q.components == 2
        && forest_one_based == vec![(1, 2), (5, 6)]
        && fb.feasible
        && (fb.worst_case_exponent - (p - kappa * (p - m))).abs() < 1e-12
        && fb.exponent <= fb.worst_case_exponent + 1e-12;

    let mut rng = stream(&[909]);
    let (mut steep_ok, mut deletion_ok, mut deletion_cases) = (true, true, 0);
    for _ in 0..200 {
        let g = random_graph(&mut rng);
        let steep: Vec<Edge> = g.edges().iter().map(|e| Edge { alpha_plus: e.alpha_plus.min(-1.0) - 0.01, ..*e }).collect();
        steep_ok &= LabelledGraph::new(g.n_vertices(), steep).unwrap().is_integrable().unwrap().holds;
        for i in 0..g.edges().len() {
            let smaller = g.without_edges(&[i]);
            if smaller.components() == g.components() && smaller.is_integrable().unwrap().holds {
                deletion_cases += 1;
                deletion_ok &= g.is_integrable().unwrap().holds;
            }
        }
    }
    verdict(
        9,
        "graph machinery",
        instance_ok && steep_ok && deletion_ok,
        &format!(
            "ten-vertex instance: m={}, T={forest_one_based:?}, forest exponent m+(1-k)|T| = {:.2}, bound p-k(p-m) = {:.2} (5-3k), feasible={}; \
             steep-tail integrability on 200 random graphs: {steep_ok}; edge deletion ({deletion_cases} component-preserving deletions): {deletion_ok}",
            q.components, fb.exponent, fb.worst_case_exponent, fb.feasible
        ),
    );
}

#[test]
fn c10_main_term_extraction() {
    let chain = ChainModel::two_state(1.0, 1.0).unwrap();
    let h = hurst(0.75);
    let f = vec![1.0, -1.0];
    let lambda = 2.0;
    let a = 2.0 * h.value() - 1.0;
    let mut devs = Vec::new();
    let mut oracle_err = 0.0f64;
    let mut prefactor = 0.0;
    let mut gammas = (0.0, 0.0);
    for l in [10.0, 30.0, 100.0] {
        let r = main_term_check(&chain, h, &[f.clone(), f.clone()], &[(0.0, l), (0.0, l)]).unwrap();
        let closed = 2.0 * (l * gamma_li(a, lambda * l) / lambda.powf(a) - gamma_li(a + 1.0, lambda * l) / lambda.powf(a + 1.0));
        oracle_err = oracle_err.max((r.integral - closed).abs() / closed);
        devs.push((r.ratio - 1.0).abs());
        prefactor = r.measured_prefactor;
        gammas = (r.gamma_2h_minus_1, r.gamma_1_minus_2h);
    }
    let pass = devs.windows(2).all(|w| w[1] < w[0]) && devs[2] <= 0.02 && oracle_err <= 1e-6;
    verdict(
        10,
        "main-term extraction",
        pass,
        &format!(
            "|ratio - 1| at L=10,30,100: {:?} (<= 2% at 100); quadrature vs incomplete-gamma closed form {oracle_err:.1e}; \
             measured prefactor at L=100 {prefactor:.4} vs Gamma(2H-1) = {:.4} and Gamma(1-2H) = {:.4}",
            devs.iter().map(|d| format!("{:.3}%", 100.0 * d)).collect::<Vec<_>>(),
            gammas.0,
            gammas.1
        ),
    );
}

#[test]
fn c11_chaos_domination() {
    let mut rng = stream(&[1111]);
    let mut ok = true;
    let mut exact_ok = true;
    let mut worst_ratio = 0.0f64;
    for h in [0.4, 0.75] {
        for k in 0..50u64 {
            let kernel = DMatrix::from_fn(8, 8, |_, _| normal(&mut rng));
            let dt = 1.0 / 8.0;
            let r = chaos_domination_check(&kernel, hurst(h), dt, 4000, k + (h * 100.0) as u64 * 1000).unwrap();
            ok &= r.dominated();
            worst_ratio = worst_ratio.max(r.var_same / (2.0 * r.var_indep));
            let (same, indep) = chaos_variances_exact(&kernel, hurst(h), dt);
            exact_ok &= same <= 2.0 * indep * (1.0 + 1e-12);
        }
    }
    verdict(
        11,
        "chaos domination",
        ok && exact_ok,
        &format!("100 kernels (50 per H in {{0.4, 0.75}}): MC bound holds={ok}, exact bound holds={exact_ok}, max Var(same)/(2 Var(indep)) = {worst_ratio:.3}"),
    );
}

#[test]
fn c12_lln_rate() {
    let cfg = ExperimentConfig::from_toml(
        r#"
[model]
hurst = 0.5
[chain]
generator = [[-1.5, 0.9, 0.6], [0.3, -0.9, 0.6], [0.9, 0.45, -1.35]]
[mc]
seed = 12
[lln]
f = [1.0, -0.5, 2.0]
g = [0.3, 1.0, -1.0]
lag = 0.5
horizons = [10.0, 30.0, 100.0, 300.0, 1000.0]
n_seeds = 400
"#,
    )
    .unwrap();
    let rep = harness::run_lln_check(&cfg).unwrap();
    let slope = rep.row("rate_slope").unwrap();
    verdict(
        12,
        "LLN rate",
        slope.pass && rep.all_pass(),
        &format!("log-log slope {:.3} +- {:.3} (target -0.5 +- 0.1); bias rows pass: {}", slope.estimate, slope.stderr, rep.all_pass()),
    );
}

/// RMS of `J` and `JJ` over windows of each length.
fn moment_scaling(h: f64, lags: &[f64], n_paths: usize) -> (Vec<f64>, Vec<f64>) {
    let chain = ChainModel::two_state(1.0, 1.0).unwrap();
    let f = vec![1.0, -1.0];
    let eps = 1e-2;
    let dt = 2.5e-5;
    let horizon: f64 = lags.iter().cloned().fold(0.0, f64::max) * 2.0;
    let n = (horizon / dt).round() as usize;
    let sampler = FbmSampler::new(FbmGrid::new(hurst(h), dt, n, 1).unwrap(), 0, 0).unwrap();
    let per_path: Vec<Vec<(f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path = sampler.sample(1313, p as u64);
            let cp = chain.sample_trajectory_keyed(n as f64 * dt / eps * (1.0 + 1e-9), &[1313, p as u64]).unwrap();
            let lift = Lift::new(Driver::Increments(&path), &cp, eps, hurst(h)).unwrap();
            lags.iter()
                .map(|&lag| {
                    let k = (lag / dt).round() as usize;
                    let windows = (n / k).min(64);
                    let (mut j2, mut jj2) = (0.0, 0.0);
                    for w in 0..windows {
                        let (s, t) = ((w * k) as f64 * dt, ((w + 1) * k) as f64 * dt);
                        j2 += lift.first_order(&f, s, t).unwrap()[0].powi(2);
                        jj2 += lift.second_order(&f, &f, s, t).unwrap()[(0, 0)].powi(2);
                    }
                    (j2 / windows as f64, jj2 / windows as f64)
                })
                .collect()
        })
        .collect();
    let rms = |pick: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        (0..lags.len())
            .map(|i| (per_path.iter().map(|v| pick(&v[i])).sum::<f64>() / n_paths as f64).sqrt())
            .collect()
    };
    (rms(|x| x.0), rms(|x| x.1))
}

#[test]
fn c13_moment_scaling_regimes() {
    let short = [1e-4, 2e-4, 4e-4, 8e-4];
    let long = [0.16, 0.32, 0.64, 1.28];
    let mut pass = true;
    let mut detail = String::new();
    for h in [0.4, 0.75] {
        let (js, jjs) = moment_scaling(h, &short, 200);
        let (jl, jjl) = moment_scaling(h, &long, 200);
        let slope = |x: &[f64], y: &[f64]| log_log_slope(x, y).unwrap().slope;
        let fitted = [slope(&short, &js), slope(&long, &jl), slope(&short, &jjs), slope(&long, &jjl)];
        let targets = [h, 0.5, 2.0 * h, 1.0];
        let ok = fitted.iter().zip(&targets).all(|(a, b)| (a - b).abs() <= 0.1);
        pass &= ok;
        detail += &format!(
            "H={h}: J short {:.3} (H), J long {:.3} (1/2), JJ short {:.3} (2H), JJ long {:.3} (1); ",
            fitted[0], fitted[1], fitted[2], fitted[3]
        );
    }
    verdict(13, "moment-scaling regimes", pass, &detail);
}

