//! Adaptive Gauss–Kronrod quadrature and Gauss–Legendre rules.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Outcome of an adaptive integration.
#[derive(Debug, Clone)]
pub struct Quad {
    pub value: Vec<f64>,
    pub abs_err: f64,
    pub evals: usize,
    pub intervals: usize,
}

/// Tolerances and limits for [`integrate_vec`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            max_intervals: 4000,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-10, 1e-10)
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    err: f64,
}

fn gk15<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Segment {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    f(c, buf);
    for i in 0..dim {
        kron[i] = WGK[7] * buf[i];
        gauss[i] = WG[3] * buf[i];
    }
    for (j, &x) in XGK.iter().enumerate().take(7) {
        for sign in [-1.0, 1.0] {
            f(c + sign * h * x, buf);
            for i in 0..dim {
                kron[i] += WGK[j] * buf[i];
                if j % 2 == 1 {
                    gauss[i] += WG[j / 2] * buf[i];
                }
            }
        }
    }
    let mut err: f64 = 0.0;
    for i in 0..dim {
        kron[i] *= h;
        gauss[i] *= h;
        err = err.max((kron[i] - gauss[i]).abs());
    }
    Segment { a, b, value: kron, err }
}

/// Integrates a vector-valued function over `[a, b]` by globally adaptive
/// bisection of 15-point Kronrod segments.
///
/// The error estimate is the max-norm difference between the Kronrod and
/// the embedded Gauss rule, summed over segments.
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, dim: usize, tol: Tolerance) -> Result<Quad>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite integration limits [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quad {
            value: vec![0.0; dim],
            abs_err: 0.0,
            evals: 0,
            intervals: 0,
        });
    }
    let mut buf = vec![0.0; dim];
    let mut segs = vec![gk15(&mut f, a, b, dim, &mut buf)];
    let mut evals = 15;
    loop {
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for s in &segs {
            for i in 0..dim {
                total[i] += s.value[i];
            }
            err += s.err;
        }
        let scale = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !total.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite integrand on [{a}, {b}]")));
        }
        if err <= tol.abs.max(tol.rel * scale) {
            return Ok(Quad {
                value: total,
                abs_err: err,
                evals,
                intervals: segs.len(),
            });
        }
        if segs.len() >= tol.max_intervals {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] stopped at {} intervals with estimated error {err:.3e} (requested {:.3e})",
                segs.len(),
                tol.abs.max(tol.rel * scale)
            )));
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, be), (i, s)| if s.err > be { (i, s.err) } else { (bi, be) });
        let s = segs.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] cannot bisect further near {mid}; estimated error {err:.3e}"
            )));
        }
        segs.push(gk15(&mut f, s.a, mid, dim, &mut buf));
        segs.push(gk15(&mut f, mid, s.b, dim, &mut buf));
        evals += 30;
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    integrate_vec(|x, out| out[0] = f(x), a, b, 1, tol).map(|q| q.value[0])
}

/// Integrates over `[a, b]` after the substitution `t = a + (b - a) u^k`,
/// which smooths algebraic singularities located at `a`.
///
/// With `k = 1/(1 + p)` an integrand behaving like `(t - a)^p` becomes
/// constant in `u`.
pub fn integrate_graded<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, k: f64, tol: Tolerance) -> Result<f64> {
    let len = b - a;
    integrate(
        |u| {
            if u <= 0.0 {
                return 0.0;
            }
            let t = a + len * u.powf(k);
            f(t) * len * k * u.powf(k - 1.0)
        },
        0.0,
        1.0,
        tol,
    )
}

/// Vector version of [`integrate_graded`].
pub fn integrate_graded_vec<F>(mut f: F, a: f64, b: f64, k: f64, dim: usize, tol: Tolerance) -> Result<Quad>
where
    F: FnMut(f64, &mut [f64]),
{
    let len = b - a;
    integrate_vec(
        |u, out| {
            if u <= 0.0 {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let t = a + len * u.powf(k);
            f(t, out);
            let jac = len * k * u.powf(k - 1.0);
            out.iter_mut().for_each(|v| *v *= jac);
        },
        0.0,
        1.0,
        dim,
        tol,
    )
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[a, b]` and split into `panels` equal panels.
pub fn composite_legendre(a: f64, b: f64, n: usize, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(n * panels);
    let mut weights = Vec::with_capacity(n * panels);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(lo + 0.5 * width * (xi + 1.0));
            weights.push(0.5 * width * wi);
        }
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, Tolerance::default()).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn algebraic_singularity_with_grading() {
        // integral of t^{-0.8} over [0, 1] is 5.
        let v = integrate_graded(|t| t.powf(-0.8), 0.0, 1.0, 5.0, Tolerance::default()).unwrap();
        assert!((v - 5.0).abs() < 1e-10);
        let v = integrate(|t| if t > 0.0 { t.powf(-0.5) } else { 0.0 }, 0.0, 1.0, Tolerance::new(1e-8, 1e-8))
            .unwrap();
        assert!((v - 2.0).abs() < 1e-7);
    }

    #[test]
    fn non_convergence_is_reported() {
        let tol = Tolerance {
            abs: 1e-14,
            rel: 0.0,
            max_intervals: 10,
        };
        let err = integrate(|t| (1.0 / t).sin(), 1e-6, 1.0, tol).unwrap_err();
        assert!(err.to_string().contains("estimated error"));
    }

    #[test]
    fn legendre_rule_integrates_degree_2n_minus_1() {
        for n in [1, 2, 5, 12, 40] {
            let (x, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}");
            let deg = 2 * n - 1;
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((m - exact).abs() < 1e-12, "n={n}");
        }
    }

    proptest! {
        #[test]
        fn linear_in_integrand(c1 in -3.0..3.0f64, c2 in -3.0..3.0f64, w in 0.5..4.0f64) {
            let tol = Tolerance::new(1e-12, 1e-12);
            let f = |x: f64| (w * x).sin();
            let g = |x: f64| (-x * x).exp();
            let lhs = integrate(|x| c1 * f(x) + c2 * g(x), -1.0, 1.5, tol).unwrap();
            let rhs = c1 * integrate(f, -1.0, 1.5, tol).unwrap() + c2 * integrate(g, -1.0, 1.5, tol).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn additive_over_subintervals(m in -0.9..0.9f64) {
            let tol = Tolerance::new(1e-13, 1e-13);
            let f = |x: f64| (3.0 * x).cos() * (1.0 + x * x);
            let whole = integrate(f, -1.0, 1.0, tol).unwrap();
            let parts = integrate(f, -1.0, m, tol).unwrap() + integrate(f, m, 1.0, tol).unwrap();
            prop_assert!((whole - parts).abs() < 1e-11);
        }
    }
}
