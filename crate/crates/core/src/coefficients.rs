//! Slow-equation coefficients `F(x, y)` (diffusion, `d x m`) and `F0(x, y)`
//! (drift, `d x 1`), expanded as `sum_j psi_j(x) c_j(y)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fbm::HurstParam;

/// Highest derivative order available in closed form.
pub const MAX_DERIVATIVE: usize = 4;

/// Anything that can evaluate a coefficient and its derivatives.
///
/// Values are written row-major into a `d * m` buffer.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn states(&self) -> usize;

    /// `F(x, state)`.
    fn value_into(&self, x: &[f64], state: usize, out: &mut [f64]);

    /// `D^ell F(x, state)` for a multi-index with `|ell| <= 4`.
    fn derivative_into(&self, x: &[f64], state: usize, ell: &[usize], out: &mut [f64]) -> Result<()>;
}

fn check_multi_index(ell: &[usize], d: usize) -> Result<usize> {
    if ell.len() != d {
        return invalid(format!("multi-index has {} entries for dimension {d}", ell.len()));
    }
    let order: usize = ell.iter().sum();
    if order > MAX_DERIVATIVE {
        return invalid(format!("derivative order {order} exceeds {MAX_DERIVATIVE}"));
    }
    Ok(order)
}

/// Scalar basis functions with bounded derivatives of every order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "lowercase")]
pub enum Basis {
    Const,
    /// `sin(k . x + phase)`
    Sin { k: Vec<f64>, phase: f64 },
    /// `cos(k . x + phase)`
    Cos { k: Vec<f64>, phase: f64 },
    /// `tanh(k . x + shift)`
    Tanh { k: Vec<f64>, shift: f64 },
    /// `exp(-|x - center|^2 / (2 width^2))`
    Gauss { center: Vec<f64>, width: f64 },
}

fn hermite(n: usize, z: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => z,
        2 => z * z - 1.0,
        3 => z * z * z - 3.0 * z,
        _ => z.powi(4) - 6.0 * z * z + 3.0,
    }
}

fn tanh_derivative(n: usize, z: f64) -> f64 {
    let t = z.tanh();
    let s = 1.0 - t * t;
    match n {
        0 => t,
        1 => s,
        2 => -2.0 * t * s,
        3 => -2.0 * s * s + 4.0 * t * t * s,
        _ => 16.0 * t * s * s - 8.0 * t * t * t * s,
    }
}

impl Basis {
    /// Builds a basis function from its name and flat parameter list.
    ///
    /// Parameters: `const` none; `sin`/`cos` the wave vector then the phase;
    /// `tanh` the slope vector then the shift; `gauss` the centre then the width.
    pub fn parse(name: &str, params: &[f64], d: usize) -> Result<Self> {
        let need = |n: usize| -> Result<()> {
            if params.len() != n {
                return Err(Error::Config(format!(
                    "basis `{name}` takes {n} parameters in dimension {d}, got {}",
                    params.len()
                )));
            }
            Ok(())
        };
        match name {
            "const" => {
                need(0)?;
                Ok(Basis::Const)
            }
            "sin" | "cos" | "tanh" => {
                need(d + 1)?;
                let k = params[..d].to_vec();
                let last = params[d];
                Ok(match name {
                    "sin" => Basis::Sin { k, phase: last },
                    "cos" => Basis::Cos { k, phase: last },
                    _ => Basis::Tanh { k, shift: last },
                })
            }
            "gauss" => {
                need(d + 1)?;
                if !(params[d] > 0.0) {
                    return Err(Error::Config(format!("gauss width must be positive, got {}", params[d])));
                }
                Ok(Basis::Gauss {
                    center: params[..d].to_vec(),
                    width: params[d],
                })
            }
            other => Err(Error::Config(format!(
                "unknown basis `{other}` (expected const, sin, cos, tanh or gauss)"
            ))),
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match self {
            Basis::Const => None,
            Basis::Sin { k, .. } | Basis::Cos { k, .. } | Basis::Tanh { k, .. } => Some(k.len()),
            Basis::Gauss { center, .. } => Some(center.len()),
        }
    }

    fn affine(k: &[f64], x: &[f64], c: f64) -> f64 {
        k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Basis::Const => 1.0,
            Basis::Sin { k, phase } => Self::affine(k, x, *phase).sin(),
            Basis::Cos { k, phase } => Self::affine(k, x, *phase).cos(),
            Basis::Tanh { k, shift } => Self::affine(k, x, *shift).tanh(),
            Basis::Gauss { center, width } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// `D^ell psi(x)`; the caller guarantees `|ell| <= 4`.
    pub fn derivative(&self, x: &[f64], ell: &[usize]) -> f64 {
        let order: usize = ell.iter().sum();
        if order == 0 {
            return self.value(x);
        }
        let chain = |k: &[f64]| -> f64 { k.iter().zip(ell).map(|(a, &e)| a.powi(e as i32)).product() };
        match self {
            Basis::Const => 0.0,
            Basis::Sin { k, phase } => {
                chain(k) * (Self::affine(k, x, *phase) + order as f64 * std::f64::consts::FRAC_PI_2).sin()
            }
            Basis::Cos { k, phase } => {
                chain(k) * (Self::affine(k, x, *phase) + order as f64 * std::f64::consts::FRAC_PI_2).cos()
            }
            Basis::Tanh { k, shift } => chain(k) * tanh_derivative(order, Self::affine(k, x, *shift)),
            Basis::Gauss { center, width } => {
                let mut acc = self.value(x);
                for ((xi, ci), &e) in x.iter().zip(center).zip(ell) {
                    let z = (xi - ci) / width;
                    let sign = if e % 2 == 0 { 1.0 } else { -1.0 };
                    acc *= sign * hermite(e, z) / width.powi(e as i32);
                }
                acc
            }
        }
    }
}

/// Whether a field multiplies the noise or acts as a drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Diffusion,
    Drift,
}

/// One basis function with its state-dependent coefficient array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub basis: Basis,
    /// Row-major `[state][i][k]`, length `n * d * m`.
    pub coeffs: Vec<f64>,
}

/// Closed-form coefficient field `F(x, y) = sum_j psi_j(x) c_j(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    d: usize,
    m: usize,
    n: usize,
    kind: FieldKind,
    terms: Vec<Term>,
}

impl CoefficientField {
    pub fn new(d: usize, m: usize, n: usize, kind: FieldKind, terms: Vec<Term>) -> Result<Self> {
        if d == 0 || m == 0 || n == 0 {
            return invalid("field dimensions must be positive");
        }
        if kind == FieldKind::Drift && m != 1 {
            return invalid("drift fields have a single column");
        }
        for (j, t) in terms.iter().enumerate() {
            if t.coeffs.len() != n * d * m {
                return Err(Error::Config(format!(
                    "term {j}: expected {} coefficients ({n} states x {d} x {m}), got {}",
                    n * d * m,
                    t.coeffs.len()
                )));
            }
            if let Some(dim) = t.basis.input_dim() {
                if dim != d {
                    return Err(Error::Config(format!("term {j}: basis acts on R^{dim}, field on R^{d}")));
                }
            }
            if t.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!("term {j}: non-finite coefficient")));
            }
        }
        Ok(CoefficientField { d, m, n, kind, terms })
    }

    /// The zero field.
    pub fn zero(d: usize, m: usize, n: usize, kind: FieldKind) -> Result<Self> {
        Self::new(d, m, n, kind, Vec::new())
    }

    /// Scalar `psi(x) c(y)` with `d = m = 1`.
    pub fn scalar(basis: Basis, c: &[f64], kind: FieldKind) -> Result<Self> {
        Self::new(
            1,
            1,
            c.len(),
            kind,
            vec![Term {
                basis,
                coeffs: c.to_vec(),
            }],
        )
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// `D^ell F(x, state)` as a `d x m` matrix.
    pub fn evaluate(&self, x: &[f64], state: usize, ell: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = vec![0.0; self.d * self.m];
        self.derivative_into(x, state, ell, &mut out)?;
        Ok(DMatrix::from_row_slice(self.d, self.m, &out))
    }

    /// `int F(x, y) mu(dy)` as a `d x m` matrix.
    pub fn mu_average(&self, x: &[f64], mu: &[f64]) -> DMatrix<f64> {
        mu_average(self, x, mu)
    }

    /// Subtracts `<c_j>_mu` from every coefficient array.
    pub fn center(&self, mu: &[f64]) -> CoefficientField {
        let block = self.d * self.m;
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut coeffs = t.coeffs.clone();
                for e in 0..block {
                    let mean: f64 = (0..self.n).map(|y| mu[y] * t.coeffs[y * block + e]).sum();
                    for y in 0..self.n {
                        coeffs[y * block + e] -= mean;
                    }
                }
                Term {
                    basis: t.basis.clone(),
                    coeffs,
                }
            })
            .collect();
        CoefficientField { terms, ..self.clone() }
    }

    /// Largest `|<c_j>_mu|` over terms and entries.
    pub fn centering_defect(&self, mu: &[f64]) -> f64 {
        let block = self.d * self.m;
        let mut worst: f64 = 0.0;
        for t in &self.terms {
            for e in 0..block {
                let mean: f64 = (0..self.n).map(|y| mu[y] * t.coeffs[y * block + e]).sum();
                worst = worst.max(mean.abs());
            }
        }
        worst
    }

    /// Empirical `sup (1 + |x|)^kappa |D^ell F(x, y)|` over `|x| <= radius`
    /// along each coordinate axis and the diagonal.
    pub fn decay_sweep(&self, kappa: f64, ell: &[usize], radius: f64) -> Result<f64> {
        check_multi_index(ell, self.d)?;
        let mut out = vec![0.0; self.d * self.m];
        let mut worst: f64 = 0.0;
        let steps = 2000;
        let mut directions: Vec<Vec<f64>> = (0..self.d)
            .map(|i| (0..self.d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        directions.push(vec![1.0 / (self.d as f64).sqrt(); self.d]);
        for dir in &directions {
            for s in 0..=steps {
                let r = -radius + 2.0 * radius * s as f64 / steps as f64;
                let x: Vec<f64> = dir.iter().map(|v| v * r).collect();
                let weight = (1.0 + r.abs()).powf(kappa);
                for y in 0..self.n {
                    self.derivative_into(&x, y, ell, &mut out)?;
                    let norm = out.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    worst = worst.max(weight * norm);
                }
            }
        }
        Ok(worst)
    }
}

impl Field for CoefficientField {
    fn dim(&self) -> usize {
        self.d
    }

    fn noise_dim(&self) -> usize {
        self.m
    }

    fn states(&self) -> usize {
        self.n
    }

    fn value_into(&self, x: &[f64], state: usize, out: &mut [f64]) {
        let block = self.d * self.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            let psi = t.basis.value(x);
            let c = &t.coeffs[state * block..(state + 1) * block];
            for (o, ci) in out.iter_mut().zip(c) {
                *o += psi * ci;
            }
        }
    }

    fn derivative_into(&self, x: &[f64], state: usize, ell: &[usize], out: &mut [f64]) -> Result<()> {
        check_multi_index(ell, self.d)?;
        if state >= self.n {
            return invalid(format!("state {state} out of range for {} states", self.n));
        }
        let block = self.d * self.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            let psi = t.basis.derivative(x, ell);
            let c = &t.coeffs[state * block..(state + 1) * block];
            for (o, ci) in out.iter_mut().zip(c) {
                *o += psi * ci;
            }
        }
        Ok(())
    }
}

type Callback = dyn Fn(&[f64], usize, &[usize], &mut [f64]) + Send + Sync;

/// Library-level field given by a closure `(x, state, ell, out)`.
///
/// The closure must supply derivatives up to order four; it is trusted.
pub struct CallbackField {
    d: usize,
    m: usize,
    n: usize,
    zero: Vec<usize>,
    f: Box<Callback>,
}

impl CallbackField {
    pub fn new<F>(d: usize, m: usize, n: usize, f: F) -> Self
    where
        F: Fn(&[f64], usize, &[usize], &mut [f64]) + Send + Sync + 'static,
    {
        CallbackField {
            d,
            m,
            n,
            zero: vec![0; d],
            f: Box::new(f),
        }
    }
}

impl Field for CallbackField {
    fn dim(&self) -> usize {
        self.d
    }

    fn noise_dim(&self) -> usize {
        self.m
    }

    fn states(&self) -> usize {
        self.n
    }

    fn value_into(&self, x: &[f64], state: usize, out: &mut [f64]) {
        (self.f)(x, state, &self.zero, out);
    }

    fn derivative_into(&self, x: &[f64], state: usize, ell: &[usize], out: &mut [f64]) -> Result<()> {
        check_multi_index(ell, self.d)?;
        (self.f)(x, state, ell, out);
        Ok(())
    }
}

/// `sum_y mu_y F(x, y)` as a `d x m` matrix.
pub fn mu_average(field: &dyn Field, x: &[f64], mu: &[f64]) -> DMatrix<f64> {
    let (d, m) = (field.dim(), field.noise_dim());
    let mut acc = vec![0.0; d * m];
    let mut buf = vec![0.0; d * m];
    for (y, w) in mu.iter().enumerate() {
        field.value_into(x, y, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += w * b;
        }
    }
    DMatrix::from_row_slice(d, m, &acc)
}

/// Enforces the centring requirement of diffusion fields for `H > 1/2`.
///
/// With `auto_center` an uncentred field is centred and a warning returned;
/// otherwise it is an error.
pub fn prepare_diffusion(
    field: CoefficientField,
    mu: &[f64],
    hurst: HurstParam,
    auto_center: bool,
) -> Result<(CoefficientField, Option<String>)> {
    if field.kind() != FieldKind::Diffusion || hurst.value() <= 0.5 {
        return Ok((field, None));
    }
    let defect = field.centering_defect(mu);
    if defect <= 1e-10 {
        return Ok((field, None));
    }
    if auto_center {
        let msg = format!("diffusion field was not centred (defect {defect:.3e}); centring it as requested");
        return Ok((field.center(mu), Some(msg)));
    }
    Err(Error::Config(format!(
        "for H > 1/2 the diffusion field must be centred under mu (defect {defect:.3e}); set auto_center to centre it"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_field() -> CoefficientField {
        let terms = vec![
            Term {
                basis: Basis::Const,
                coeffs: vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.5, 3.0, -2.0],
            },
            Term {
                basis: Basis::Sin {
                    k: vec![1.0, -0.5],
                    phase: 0.3,
                },
                coeffs: vec![0.2, 1.0, 0.0, 0.0, -1.0, 1.0, 0.3, 0.3],
            },
            Term {
                basis: Basis::Tanh {
                    k: vec![0.7, 0.2],
                    shift: -0.1,
                },
                coeffs: vec![1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 0.0, 0.0],
            },
            Term {
                basis: Basis::Gauss {
                    center: vec![0.5, -0.5],
                    width: 0.8,
                },
                coeffs: vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0],
            },
        ];
        // d = 2, m = 2, n = 2.
        CoefficientField::new(2, 2, 2, FieldKind::Diffusion, terms).unwrap()
    }

    #[test]
    fn constant_basis() {
        let f = CoefficientField::scalar(Basis::Const, &[1.0, -1.0], FieldKind::Diffusion).unwrap();
        assert_eq!(f.evaluate(&[3.0], 1, &[0]).unwrap()[(0, 0)], -1.0);
        assert_eq!(f.evaluate(&[3.0], 1, &[2]).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn tanh_derivative_example() {
        let f = CoefficientField::scalar(
            Basis::Tanh {
                k: vec![1.0],
                shift: 0.0,
            },
            &[2.0, 3.0],
            FieldKind::Diffusion,
        )
        .unwrap();
        let x = 0.7f64;
        let sech2 = 1.0 / x.cosh().powi(2);
        assert!((f.evaluate(&[x], 1, &[1]).unwrap()[(0, 0)] - 3.0 * sech2).abs() < 1e-14);
    }

    #[test]
    fn order_above_four_rejected() {
        let f = sample_field();
        assert!(f.evaluate(&[0.0, 0.0], 0, &[3, 2]).is_err());
        assert!(f.evaluate(&[0.0, 0.0], 0, &[1]).is_err());
    }

    #[test]
    fn gaussian_bumps_decay() {
        let f = CoefficientField::scalar(
            Basis::Gauss {
                center: vec![1.0],
                width: 2.0,
            },
            &[1.0],
            FieldKind::Diffusion,
        )
        .unwrap();
        let sup = f.decay_sweep(3.0, &[0], 50.0).unwrap();
        assert!(sup.is_finite() && sup < 50.0);
        assert!(f.evaluate(&[50.0], 0, &[0]).unwrap()[(0, 0)] < 1e-100);
    }

    #[test]
    fn averages_and_centering() {
        let f = CoefficientField::scalar(Basis::Const, &[1.0, 3.0], FieldKind::Drift).unwrap();
        assert!((f.mu_average(&[0.0], &[0.75, 0.25])[(0, 0)] - 1.5).abs() < 1e-15);
        let c = f.center(&[0.5, 0.5]);
        assert_eq!(c.terms()[0].coeffs, vec![-1.0, 1.0]);
        let flat = CoefficientField::scalar(Basis::Const, &[2.0, 2.0], FieldKind::Drift).unwrap();
        assert!(flat.center(&[0.3, 0.7]).terms()[0].coeffs.iter().all(|v| v.abs() < 1e-15));
        assert!((flat.mu_average(&[1.0], &[0.3, 0.7])[(0, 0)] - 2.0).abs() < 1e-15);
        let g = sample_field();
        let mu = [0.4, 0.6];
        let cg = g.center(&mu);
        assert!(cg.mu_average(&[0.3, -1.2], &mu).iter().all(|v| v.abs() < 1e-14));
        assert_eq!(cg.center(&mu), cg.center(&mu).center(&mu));
    }

    #[test]
    fn centering_required_above_half() {
        let f = CoefficientField::scalar(Basis::Const, &[1.0, 0.0], FieldKind::Diffusion).unwrap();
        let h = HurstParam::new(0.7).unwrap();
        assert!(prepare_diffusion(f.clone(), &[0.5, 0.5], h, false).is_err());
        let (c, warn) = prepare_diffusion(f.clone(), &[0.5, 0.5], h, true).unwrap();
        assert!(warn.is_some());
        assert!(c.centering_defect(&[0.5, 0.5]) < 1e-15);
        let h = HurstParam::new(0.4).unwrap();
        assert!(prepare_diffusion(f, &[0.5, 0.5], h, false).is_ok());
    }

    #[test]
    fn parse_errors_are_precise() {
        let e = Basis::parse("sin", &[1.0], 2).unwrap_err();
        assert!(e.to_string().contains("takes 3 parameters"));
        assert!(Basis::parse("spline", &[], 1).is_err());
        assert!(Basis::parse("gauss", &[0.0, -1.0], 1).is_err());
        assert_eq!(Basis::parse("const", &[], 3).unwrap(), Basis::Const);
    }

    #[test]
    fn callback_field_matches_closed_form() {
        let cb = CallbackField::new(1, 1, 2, |x, y, ell, out| {
            let c = [1.0, -1.0][y];
            out[0] = c * if ell[0] % 2 == 0 { 1.0 } else { 0.0 } * x[0].cos()
                * if ell[0] % 4 >= 2 { -1.0 } else { 1.0 }
                + c * if ell[0] % 2 == 1 { 1.0 } else { 0.0 } * x[0].sin() * if ell[0] % 4 == 1 { -1.0 } else { 1.0 };
        });
        let closed = CoefficientField::scalar(
            Basis::Cos {
                k: vec![1.0],
                phase: 0.0,
            },
            &[1.0, -1.0],
            FieldKind::Diffusion,
        )
        .unwrap();
        let mut a = [0.0];
        let mut b = [0.0];
        for order in 0..=4 {
            cb.derivative_into(&[0.4], 1, &[order], &mut a).unwrap();
            closed.derivative_into(&[0.4], 1, &[order], &mut b).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-14, "order {order}");
        }
    }

    proptest! {
        #[test]
        fn finite_differences_match_derivatives(x0 in -2.0..2.0f64, x1 in -2.0..2.0f64, y in 0usize..2,
                                                 axis in 0usize..2, order in 0usize..4) {
            let f = sample_field();
            let x = [x0, x1];
            let mut ell = [0usize, 0];
            ell[axis] = order;
            let mut next = ell;
            next[axis] += 1;
            let exact = f.evaluate(&x, y, &next).unwrap();
            let fd = |h: f64| {
                let mut xp = x;
                let mut xm = x;
                xp[axis] += h;
                xm[axis] -= h;
                (f.evaluate(&xp, y, &ell).unwrap() - f.evaluate(&xm, y, &ell).unwrap()) / (2.0 * h)
            };
            for h in [1e-3, 1e-4] {
                let e1 = (fd(h) - &exact).abs().max();
                let e2 = (fd(h / 2.0) - &exact).abs().max();
                prop_assert!(e1 < 1e-4);
                // Central differences are second order: halving h divides the error by 4.
                if e1 > 1e-8 {
                    let ratio = e1 / e2;
                    prop_assert!((ratio - 4.0).abs() < 0.4, "h={} ratio={}", h, ratio);
                }
            }
        }

        #[test]
        fn average_of_values_is_mu_average(x0 in -3.0..3.0f64, x1 in -3.0..3.0f64, w in 0.05..0.95f64) {
            let f = sample_field();
            let mu = [w, 1.0 - w];
            let direct = f.evaluate(&[x0, x1], 0, &[0, 0]).unwrap() * w
                + f.evaluate(&[x0, x1], 1, &[0, 0]).unwrap() * (1.0 - w);
            let avg = f.mu_average(&[x0, x1], &mu);
            prop_assert!((direct - avg).abs().max() < 1e-14);
        }
    }
}
