//! Power counting for labelled graphs of integrable kernels.
//!
//! A graph encodes `int prod_e K_e(s_{e+} - s_{e-}) ds`, each edge carrying
//! the exponents of its kernel at the origin (`alpha_minus`) and at infinity
//! (`alpha_plus`). Regularity is local integrability, integrability over
//! tight partitions controls the large-scale growth.

use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::chain::ChainModel;
use crate::effective::raw_kernel_closed_form;
use crate::error::{invalid, Error, Result};
use crate::fbm::HurstParam;
use crate::partitions::{pairings, set_partitions, singleton_free_partitions, Partition};
use crate::quadrature::{gauss_legendre, integrate, integrate_graded, Tolerance};

/// Largest vertex count for subset enumeration.
pub const MAX_SUBSET_VERTICES: usize = 20;
/// Largest vertex count for partition enumeration.
pub const MAX_PARTITION_VERTICES: usize = 12;
/// Largest `p` for pairing and partition enumeration.
pub const MAX_PAIRING_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub minus: usize,
    pub plus: usize,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub norm: f64,
}

impl Edge {
    pub fn new(minus: usize, plus: usize, alpha_minus: f64, alpha_plus: f64) -> Self {
        Edge {
            minus,
            plus,
            alpha_minus,
            alpha_plus,
            norm: 1.0,
        }
    }
}

/// Multigraph without self-loops and with nonpositive labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelledGraph {
    n: usize,
    edges: Vec<Edge>,
}

/// Outcome of a check over subsets or partitions, with a violating witness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict<W> {
    pub holds: bool,
    pub witness: Option<W>,
}

/// Result of the weighted integrability test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundExponent {
    pub feasible: bool,
    /// `m + sum_e beta(e)`, the power of `L` in the bound.
    pub exponent: f64,
    pub witness: Option<Partition>,
}

impl LabelledGraph {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        for (i, e) in edges.iter().enumerate() {
            if e.minus >= n || e.plus >= n {
                return invalid(format!("edge {i} ({}, {}) leaves the {n} vertices", e.minus, e.plus));
            }
            if e.minus == e.plus {
                return invalid(format!("edge {i} is a self-loop at vertex {}", e.minus));
            }
            if !(e.alpha_minus <= 0.0 && e.alpha_plus <= 0.0) {
                return invalid(format!("edge {i} has a positive or undefined label"));
            }
            if !(e.norm >= 0.0) {
                return invalid(format!("edge {i} has a negative kernel norm"));
            }
        }
        Ok(LabelledGraph { n, edges })
    }

    /// Reads `n` on the first line and `u v alpha_minus alpha_plus` per edge.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (ln, first) = lines.next().ok_or_else(|| Error::Config("graph file is empty".into()))?;
        let n: usize = first
            .parse()
            .map_err(|_| Error::Config(format!("line {ln}: expected a vertex count, found '{first}'")))?;
        let mut edges = Vec::new();
        for (ln, l) in lines {
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!("line {ln}: expected 'u v alpha_minus alpha_plus'")));
            }
            let u: usize = parts[0].parse().map_err(|_| Error::Config(format!("line {ln}: bad vertex '{}'", parts[0])))?;
            let v: usize = parts[1].parse().map_err(|_| Error::Config(format!("line {ln}: bad vertex '{}'", parts[1])))?;
            let am: f64 = parts[2].parse().map_err(|_| Error::Config(format!("line {ln}: bad label '{}'", parts[2])))?;
            let ap: f64 = parts[3].parse().map_err(|_| Error::Config(format!("line {ln}: bad label '{}'", parts[3])))?;
            edges.push(Edge::new(u, v, am, ap));
        }
        LabelledGraph::new(n, edges).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Copy without the edges whose indices are listed.
    pub fn without_edges(&self, remove: &[usize]) -> LabelledGraph {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !remove.contains(i))
            .map(|(_, e)| *e)
            .collect();
        LabelledGraph { n: self.n, edges }
    }

    /// Component label of every vertex, labels numbered from zero.
    pub fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.n);
        for e in &self.edges {
            uf.union(e.minus, e.plus);
        }
        uf.labels()
    }

    pub fn n_components(&self) -> usize {
        self.components().iter().max().map_or(0, |m| m + 1)
    }

    /// Weinberg's condition `sum_{e inside V0} alpha_minus(e) + |V0| > 1` for
    /// every subset with at least two vertices. Singletons would give exactly
    /// one for any graph and are left out.
    pub fn is_regular(&self) -> Result<Verdict<Vec<usize>>> {
        if self.n > MAX_SUBSET_VERTICES {
            return invalid(format!("regularity check limited to {MAX_SUBSET_VERTICES} vertices"));
        }
        let masks: Vec<(u32, f64)> = self
            .edges
            .iter()
            .map(|e| ((1u32 << e.minus) | (1u32 << e.plus), e.alpha_minus))
            .collect();
        for subset in 1u32..(1u32 << self.n) {
            let size = subset.count_ones();
            if size < 2 {
                continue;
            }
            let inner: f64 = masks.iter().filter(|(m, _)| m & subset == *m).map(|(_, a)| a).sum();
            if inner + size as f64 <= 1.0 {
                let witness = (0..self.n).filter(|v| subset & (1 << v) != 0).collect();
                return Ok(Verdict {
                    holds: false,
                    witness: Some(witness),
                });
            }
        }
        Ok(Verdict {
            holds: true,
            witness: None,
        })
    }

    /// Partitions with a block meeting every connected component, except the
    /// single block (which fails the strict inequality for every graph).
    pub fn tight_partitions(&self) -> Result<Vec<Partition>> {
        if self.n > MAX_PARTITION_VERTICES {
            return invalid(format!("partition enumeration limited to {MAX_PARTITION_VERTICES} vertices"));
        }
        let comp = self.components();
        let n_comp = comp.iter().max().map_or(0, |m| m + 1);
        Ok(set_partitions(self.n)
            .into_iter()
            .filter(|p| p.len() >= 2)
            .filter(|p| {
                p.iter().any(|block| {
                    let mut seen = vec![false; n_comp];
                    block.iter().for_each(|&v| seen[comp[v]] = true);
                    seen.iter().all(|s| *s)
                })
            })
            .collect())
    }

    /// `sum_{e across blocks} (alpha_plus(e) - beta(e)) + |P| < 1` for every
    /// tight partition.
    fn weighted_integrability(&self, beta: &[f64]) -> Result<Verdict<Partition>> {
        for p in self.tight_partitions()? {
            let mut block = vec![0; self.n];
            for (b, vs) in p.iter().enumerate() {
                vs.iter().for_each(|&v| block[v] = b);
            }
            let cross: f64 = self
                .edges
                .iter()
                .zip(beta)
                .filter(|(e, _)| block[e.minus] != block[e.plus])
                .map(|(e, b)| e.alpha_plus - b)
                .sum();
            if cross + p.len() as f64 >= 1.0 {
                return Ok(Verdict {
                    holds: false,
                    witness: Some(p),
                });
            }
        }
        Ok(Verdict {
            holds: true,
            witness: None,
        })
    }

    pub fn is_integrable(&self) -> Result<Verdict<Partition>> {
        self.weighted_integrability(&vec![0.0; self.edges.len()])
    }

    /// Integrability with labels lowered by `beta`, and the resulting power
    /// `m + sum beta` of the large-scale bound.
    pub fn bound_exponent(&self, beta: &[f64]) -> Result<BoundExponent> {
        if beta.len() != self.edges.len() {
            return invalid("one beta per edge is required");
        }
        if beta.iter().any(|b| !(*b >= 0.0)) {
            return invalid("beta must be nonnegative");
        }
        let v = self.weighted_integrability(beta)?;
        Ok(BoundExponent {
            feasible: v.holds,
            exponent: self.n_components() as f64 + beta.iter().sum::<f64>(),
            witness: v.witness,
        })
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when the two were in different sets.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }

    fn labels(&mut self) -> Vec<usize> {
        let n = self.parent.len();
        let mut map = vec![usize::MAX; n];
        let mut next = 0;
        (0..n)
            .map(|v| {
                let r = self.find(v);
                if map[r] == usize::MAX {
                    map[r] = next;
                    next += 1;
                }
                map[r]
            })
            .collect()
    }
}

/// Graph on `2p` vertices for one (partition, pairing) term of a moment
/// expansion: pairing edges carry `|t|^{2H-2}` (labels `(2H-2, 2H-2)`),
/// partition edges carry exponentially decaying cumulants (labels `(0, -2)`).
#[derive(Debug, Clone, Serialize)]
pub struct CumulantGraph {
    pub graph: LabelledGraph,
    pub partition: Partition,
    pub pairing: Vec<(usize, usize)>,
    /// Indices in `graph.edges()` of the pairing edges, in pairing order.
    pub pairing_edges: Vec<usize>,
}

pub fn build_cumulant_graph(partition: &Partition, pairing: &[(usize, usize)], hurst: HurstParam) -> Result<CumulantGraph> {
    let n = 2 * pairing.len();
    let mut seen = vec![0usize; n];
    for &(a, b) in pairing {
        if a >= n || b >= n || a == b {
            return invalid("pairing does not match 2p elements");
        }
        seen[a] += 1;
        seen[b] += 1;
    }
    if seen.iter().any(|&c| c != 1) {
        return invalid("pairing must use every element exactly once");
    }
    let mut covered = vec![0usize; n];
    for block in partition {
        if block.len() < 2 {
            return invalid("partition blocks must have at least two elements");
        }
        for &v in block {
            if v >= n {
                return invalid("partition element out of range");
            }
            covered[v] += 1;
        }
    }
    if covered.iter().any(|&c| c != 1) {
        return invalid("partition must cover every element exactly once");
    }
    let a = 2.0 * hurst.value() - 2.0;
    let mut edges: Vec<Edge> = pairing.iter().map(|&(u, v)| Edge::new(u, v, a, a)).collect();
    for block in partition {
        for (i, &u) in block.iter().enumerate() {
            for &v in &block[i + 1..] {
                edges.push(Edge::new(u, v, 0.0, -2.0));
            }
        }
    }
    Ok(CumulantGraph {
        graph: LabelledGraph::new(n, edges)?,
        partition: partition.clone(),
        pairing: pairing.to_vec(),
        pairing_edges: (0..pairing.len()).collect(),
    })
}

/// Quotient of the pairing by the partition, self-loops removed.
#[derive(Debug, Clone, Serialize)]
pub struct Quotient {
    pub n_blocks: usize,
    pub edges: Vec<(usize, usize)>,
    pub components: usize,
}

pub fn quotient(partition: &Partition, pairing: &[(usize, usize)]) -> Quotient {
    let n = partition.iter().map(|b| b.len()).sum::<usize>();
    let mut block = vec![0; n];
    for (i, b) in partition.iter().enumerate() {
        b.iter().for_each(|&v| block[v] = i);
    }
    let edges: Vec<(usize, usize)> = pairing
        .iter()
        .map(|&(u, v)| (block[u], block[v]))
        .filter(|(a, b)| a != b)
        .collect();
    let mut uf = UnionFind::new(partition.len());
    for &(a, b) in &edges {
        uf.union(a, b);
    }
    let components = uf.labels().iter().max().map_or(0, |m| m + 1);
    Quotient {
        n_blocks: partition.len(),
        edges,
        components,
    }
}

/// Weights `beta = 1 - kappa` on a set of pairing edges projecting to a
/// maximal spanning forest of the quotient, zero elsewhere.
#[derive(Debug, Clone, Serialize)]
pub struct ForestBeta {
    pub beta: Vec<f64>,
    /// Pairing edges selected, as vertex pairs.
    pub forest: Vec<(usize, usize)>,
    /// Connected components `m` of the quotient.
    pub components: usize,
    pub n_blocks: usize,
    pub kappa: f64,
    /// `m + (1 - kappa) |T|`.
    pub exponent: f64,
    /// `p - kappa (p - m)`, the bound obtained from `|T| <= p - m`.
    pub worst_case_exponent: f64,
    pub feasible: bool,
}

pub fn spanning_forest_beta(cg: &CumulantGraph, kappa: f64, hurst: HurstParam) -> Result<ForestBeta> {
    if !(kappa > 0.0 && kappa < 2.0 - 2.0 * hurst.value()) {
        return invalid(format!("kappa must lie in (0, 2 - 2H), got {kappa}"));
    }
    let q = quotient(&cg.partition, &cg.pairing);
    let n = cg.graph.n_vertices();
    let mut block = vec![0; n];
    for (i, b) in cg.partition.iter().enumerate() {
        b.iter().for_each(|&v| block[v] = i);
    }
    let mut uf = UnionFind::new(cg.partition.len());
    let mut beta = vec![0.0; cg.graph.edges().len()];
    let mut forest = Vec::new();
    for (k, &(u, v)) in cg.pairing.iter().enumerate() {
        if block[u] != block[v] && uf.union(block[u], block[v]) {
            beta[cg.pairing_edges[k]] = 1.0 - kappa;
            forest.push((u, v));
        }
    }
    let bound = cg.graph.bound_exponent(&beta)?;
    let p = cg.pairing.len() as f64;
    let m = q.components as f64;
    Ok(ForestBeta {
        exponent: m + (1.0 - kappa) * forest.len() as f64,
        worst_case_exponent: p - kappa * (p - m),
        beta,
        forest,
        components: q.components,
        n_blocks: q.n_blocks,
        kappa,
        feasible: bound.feasible,
    })
}

/// Every (singleton-free partition, pairing) of `2p` elements.
pub fn enumerate_pairings_partitions(p: usize) -> Result<Vec<(Partition, Vec<(usize, usize)>)>> {
    if p == 0 || p > MAX_PAIRING_ORDER {
        return invalid(format!("p must lie in 1..={MAX_PAIRING_ORDER}"));
    }
    let parts = singleton_free_partitions(2 * p);
    let pairs = pairings(2 * p);
    let mut out = Vec::with_capacity(parts.len() * pairs.len());
    for part in &parts {
        for pair in &pairs {
            out.push((part.clone(), pair.clone()));
        }
    }
    Ok(out)
}

/// Integral over a box of `E prod f_j(Y_{t_j}) prod_k |t_{2k} - t_{2k-1}|^{2H-2}`
/// compared with its main term.
#[derive(Debug, Clone, Serialize)]
pub struct MainTermReport {
    pub p: usize,
    /// `sup_i |M_i - L_i|`.
    pub scale: f64,
    pub integral: f64,
    pub main_term: f64,
    pub remainder: f64,
    pub ratio: f64,
    /// Integral divided by `prod overlap * (<f, L^{1-2H} g> + <g, L^{1-2H} f>)`.
    pub measured_prefactor: f64,
    pub gamma_2h_minus_1: f64,
    pub gamma_1_minus_2h: f64,
    pub abs_err: f64,
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Pair correlation `r -> E f(Y_0) g(Y_r)` for either sign of `r`.
fn pair_correlation(chain: &ChainModel, f: &[f64], g: &[f64], r: f64) -> f64 {
    if r >= 0.0 {
        chain.inner(f, &chain.semigroup_apply(r, g).expect("valid time"))
    } else {
        chain.inner(g, &chain.semigroup_apply(-r, f).expect("valid time"))
    }
}

/// `int int_{I1 x I2} E f(Y_s) g(Y_t) |t - s|^{2H-2} ds dt` reduced to one
/// dimension in `r = t - s` with the trapezoidal overlap weight.
pub fn pair_integral(chain: &ChainModel, hurst: HurstParam, f: &[f64], g: &[f64], i1: (f64, f64), i2: (f64, f64)) -> Result<f64> {
    let h = hurst.value();
    let weight = |r: f64| overlap(i1, (i2.0 - r, i2.1 - r));
    let lo = i2.0 - i1.1;
    let hi = i2.1 - i1.0;
    let cut = 60.0 / chain.gap();
    let (lo, hi) = (lo.max(-cut), hi.min(cut));
    if hi <= lo {
        return Ok(0.0);
    }
    let mut pts = vec![lo, hi, i2.0 - i1.0, i2.1 - i1.1, 0.0];
    pts.retain(|&x| x >= lo && x <= hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let grade = (1.0 / (2.0 * h - 1.0).abs()).clamp(1.0, 8.0);
    let tol = Tolerance::new(1e-13, 1e-11);
    let expo = 2.0 * h - 2.0;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let kernel = |r: f64| weight(r) * pair_correlation(chain, f, g, r) * r.abs().powf(expo);
        total += if a == 0.0 {
            integrate_graded(kernel, 0.0, b, grade, tol)?
        } else if b == 0.0 {
            integrate_graded(|u| kernel(-u), 0.0, -a, grade, tol)?
        } else {
            integrate(kernel, a, b, tol)?
        };
    }
    Ok(total)
}

/// Nodes and weights for `int_{I1} int_{I2} F(s, t) |t - s|^{2H-2} dt ds`,
/// graded on either side of the diagonal.
fn pair_rule(i1: (f64, f64), i2: (f64, f64), hurst: HurstParam, n: usize, panels: usize) -> Vec<(f64, f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let h = hurst.value();
    let grade = (1.0 / (2.0 * h - 1.0).abs()).clamp(1.0, 8.0);
    let mut out = Vec::new();
    let len = (i1.1 - i1.0) / panels as f64;
    for pnl in 0..panels {
        let a = i1.0 + pnl as f64 * len;
        for (xi, wi) in x.iter().zip(&w) {
            let s = a + 0.5 * len * (xi + 1.0);
            let ws = 0.5 * len * wi;
            // r = t - s on [i2.0 - s, i2.1 - s], split at zero.
            let (rl, rh) = (i2.0 - s, i2.1 - s);
            let mut segs = Vec::new();
            if rl < 0.0 && rh > 0.0 {
                segs.push((0.0, rh, 1.0));
                segs.push((0.0, -rl, -1.0));
            } else if rl >= 0.0 {
                segs.push((rl, rh, 1.0));
            } else {
                segs.push((-rh, -rl, -1.0));
            }
            for (u0, u1, sign) in segs {
                for (yj, wj) in x.iter().zip(&w) {
                    let v = 0.5 * (yj + 1.0);
                    // Graded only when the segment touches the diagonal.
                    let (r_abs, jac) = if u0 == 0.0 {
                        (u1 * v.powf(grade), u1 * grade * v.powf(grade - 1.0))
                    } else {
                        (u0 + (u1 - u0) * v, u1 - u0)
                    };
                    if r_abs <= 0.0 {
                        continue;
                    }
                    let wt = ws * 0.5 * wj * jac * r_abs.powf(2.0 * h - 2.0);
                    out.push((s, s + sign * r_abs, wt));
                }
            }
        }
    }
    out
}

/// Main-term extraction for `p = 1` (one-dimensional reduction) and `p = 2`
/// (nested product rule, diagnostic accuracy). Observables must be centred.
pub fn main_term_check(
    chain: &ChainModel,
    hurst: HurstParam,
    fs: &[Vec<f64>],
    intervals: &[(f64, f64)],
) -> Result<MainTermReport> {
    let p = fs.len() / 2;
    if !(p == 1 || p == 2) || fs.len() != 2 * p || intervals.len() != 2 * p {
        return invalid("main_term_check needs 2 or 4 observables and matching intervals");
    }
    if hurst.value() <= 0.5 {
        return invalid("the raw kernel |t|^{2H-2} requires H > 1/2");
    }
    for (i, f) in fs.iter().enumerate() {
        if chain.mean(f).abs() > 1e-10 * crate::chain::sup_norm(f).max(1.0) {
            return invalid(format!("observable {i} is not centred"));
        }
    }
    if intervals.iter().any(|(a, b)| !(b > a)) {
        return invalid("intervals must have positive length");
    }
    let scale = intervals.iter().map(|(a, b)| b - a).fold(0.0, f64::max);
    let h = hurst.value();
    let alpha = 1.0 - 2.0 * h;
    let mut main_term = 1.0;
    let mut bare = 1.0;
    for k in 0..p {
        let (f, g) = (&fs[2 * k], &fs[2 * k + 1]);
        let ov = overlap(intervals[2 * k], intervals[2 * k + 1]);
        main_term *= ov * raw_kernel_closed_form(chain, hurst, g, f)?;
        let lf = chain.fractional_power(alpha, f)?;
        let lg = chain.fractional_power(alpha, g)?;
        bare *= ov * (chain.inner(f, &lg) + chain.inner(g, &lf));
    }
    let (integral, abs_err) = if p == 1 {
        let v = pair_integral(chain, hurst, &fs[0], &fs[1], intervals[0], intervals[1])?;
        (v, 1e-10 * v.abs().max(1.0))
    } else {
        let coarse = four_point_integral(chain, hurst, fs, intervals, 8)?;
        let fine = four_point_integral(chain, hurst, fs, intervals, 12)?;
        (fine, (fine - coarse).abs())
    };
    let remainder = integral - main_term;
    Ok(MainTermReport {
        p,
        scale,
        integral,
        main_term,
        remainder,
        ratio: if main_term != 0.0 { integral / main_term } else { f64::NAN },
        measured_prefactor: if bare != 0.0 { integral / bare } else { f64::NAN },
        gamma_2h_minus_1: gamma(2.0 * h - 1.0).powi(p as i32),
        gamma_1_minus_2h: gamma(1.0 - 2.0 * h).powi(p as i32),
        abs_err,
    })
}

fn four_point_integral(chain: &ChainModel, hurst: HurstParam, fs: &[Vec<f64>], iv: &[(f64, f64)], n: usize) -> Result<f64> {
    let panels = (iv.iter().map(|(a, b)| b - a).fold(0.0, f64::max) * chain.gap()).ceil().max(1.0) as usize;
    let first = pair_rule(iv[0], iv[1], hurst, n, panels);
    let second = pair_rule(iv[2], iv[3], hurst, n, panels);
    let refs: Vec<&[f64]> = fs.iter().map(|f| f.as_slice()).collect();
    let mut total = 0.0;
    for &(t1, t2, w1) in &first {
        for &(t3, t4, w2) in &second {
            let times = [t1, t2, t3, t4];
            let mut order = [0usize, 1, 2, 3];
            order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
            let sf: Vec<&[f64]> = order.iter().map(|&i| refs[i]).collect();
            let st: Vec<f64> = order.iter().map(|&i| times[i]).collect();
            total += w1 * w2 * chain.joint_moment(&sf, &st)?;
        }
    }
    Ok(total)
}
