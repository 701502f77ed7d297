//! Gauss-Lobatto-Legendre nodal basis, its dual edge-function basis, and
//! Gauss-Legendre quadrature on the canonical element `[-1, 1]`.
//!
//! The nodal functions `l_i` are the degree-`p` Lagrange polynomials through
//! the `p + 1` GLL points. The edge functions are
//!
//! ```text
//! e_i(ξ) = -Σ_{k=0}^{i} dl_k/dξ,   i = 0, …, p-1
//! ```
//!
//! which makes `∫_{ξ_j}^{ξ_{j+1}} e_i dξ = δ_ij`. Both families may be
//! evaluated at any real coordinate, including outside the canonical element.

use nalgebra::DMatrix;

use crate::dd::Dd;
use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;
const NODE_SNAP: f64 = 1e-14;

/// Evaluates the Legendre polynomial `P_n` and `P_{n-1}` at `x` by the
/// three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

fn legendre_pair_dd(n: usize, x: Dd) -> (Dd, Dd) {
    let mut p_prev = Dd::ONE;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let next = (Dd::from(2.0 * kf - 1.0) * x * p - Dd::from(kf - 1.0) * p_prev) / Dd::from(kf);
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// Polishes a Gauss point with one Newton step in double-double and returns
/// the point together with its weight `2 / ((1 - x²) P_q'(x)²)`.
fn polish_gauss(q: usize, x: f64) -> (f64, f64) {
    let qd = Dd::from(q as f64);
    let deriv = |x: Dd| {
        let (pq, pm) = legendre_pair_dd(q, x);
        let one_m_x2 = (Dd::ONE - x) * (Dd::ONE + x);
        (pq, qd * (pm - x * pq) / one_m_x2, one_m_x2)
    };
    let x0 = Dd::from(x);
    let (pq, dp, _) = deriv(x0);
    let x1 = x0 - pq / dp;
    let (_, dp, one_m_x2) = deriv(x1);
    let w = Dd::from(2.0) / (one_m_x2 * dp * dp);
    (x1.to_f64(), w.to_f64())
}

/// Legendre polynomial `P_n(x)`.
pub fn legendre(n: usize, x: f64) -> f64 {
    legendre_pair(n, x).0
}

/// Derivative `P_n'(x)`, valid on the whole real line.
pub fn legendre_derivative(n: usize, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    // P_n' = Σ_{k ≡ n-1 mod 2, k < n} (2k+1) P_k
    let mut sum = 0.0;
    let mut p_km1 = 1.0;
    let mut p_k = x;
    for k in 0..n {
        let pk = match k {
            0 => 1.0,
            1 => x,
            _ => {
                let kf = k as f64;
                let next = ((2.0 * kf - 1.0) * x * p_k - (kf - 1.0) * p_km1) / kf;
                p_km1 = p_k;
                p_k = next;
                next
            }
        };
        if (n - 1 - k).is_multiple_of(2) {
            sum += (2 * k + 1) as f64 * pk;
        }
    }
    sum
}

/// Gauss-Lobatto-Legendre nodes and weights for `p + 1` points.
///
/// Newton iteration on `(1 - ξ²) P_p'(ξ)` from Chebyshev-Gauss-Lobatto
/// initial guesses.
pub fn gll_nodes_weights(p: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if p < 1 {
        return Err(Error::InvalidDegree(p));
    }
    let n = p + 1;
    let pf = p as f64;
    let mut nodes = vec![0.0; n];
    for (k, node) in nodes.iter_mut().enumerate() {
        // ascending order
        let mut x = -(std::f64::consts::PI * k as f64 / pf).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (pp, pm) = legendre_pair(p, x);
            // (1-x²)P_p' = p (P_{p-1} - x P_p), and the Newton update for the
            // interior roots of this polynomial reduces to the classical form.
            let dx = (x * pp - pm) / ((pf + 1.0) * pp);
            x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
        *node = x;
    }
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    for k in 0..n / 2 {
        let sym = 0.5 * (nodes[p - k] - nodes[k]);
        nodes[k] = -sym;
        nodes[p - k] = sym;
    }
    if n % 2 == 1 {
        nodes[p / 2] = 0.0;
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let lp = legendre(p, x);
            2.0 / (pf * (pf + 1.0) * lp * lp)
        })
        .collect();
    Ok((nodes, weights))
}

/// A one-dimensional quadrature rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Highest polynomial degree integrated exactly (Gauss-Legendre).
    pub fn exactness(&self) -> usize {
        2 * self.points.len() - 1
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Integrates `f` over `[a, b]` by the affine image of the rule.
    pub fn integrate_on(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self.integrate(|x| f(mid + half * x))
    }
}

/// Gauss-Legendre rule with `q` points, exact for degree `2q - 1`.
pub fn gauss_rule(q: usize) -> Result<QuadratureRule> {
    if q < 1 {
        return Err(Error::InvalidQuadrature(q));
    }
    let qf = q as f64;
    let mut points = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (qf + 0.5)).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (pq, pm) = legendre_pair(q, x);
            let dp = qf * (x * pq - pm) / (x * x - 1.0);
            let dx = pq / dp;
            x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
        (points[i], weights[i]) = polish_gauss(q, x);
    }
    for i in 0..q / 2 {
        let sym = 0.5 * (points[q - 1 - i] - points[i]);
        points[i] = -sym;
        points[q - 1 - i] = sym;
        let w = 0.5 * (weights[i] + weights[q - 1 - i]);
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        points[q / 2] = 0.0;
    }
    Ok(QuadratureRule { points, weights })
}

/// Degree-`p` GLL Lagrange basis together with its edge-function basis.
#[derive(Debug, Clone)]
pub struct NodalEdgeBasis {
    degree: usize,
    nodes: Vec<f64>,
    node_weights: Vec<f64>,
    bary: Vec<f64>,
    /// Barycentric weights in double-double precision.
    bary_dd: Vec<Dd>,
    /// `derivative_matrix[(j, k)] = dl_k/dξ (ξ_j)`, stored row-major.
    derivative_matrix: Vec<f64>,
}

impl NodalEdgeBasis {
    pub fn new(p: usize) -> Result<Self> {
        let (nodes, node_weights) = gll_nodes_weights(p)?;
        let n = p + 1;
        let bary: Vec<f64> = (0..n)
            .map(|i| {
                let prod: f64 = (0..n)
                    .filter(|&k| k != i)
                    .map(|k| nodes[i] - nodes[k])
                    .product();
                1.0 / prod
            })
            .collect();
        let bary_dd: Vec<Dd> = (0..n)
            .map(|i| {
                let prod = (0..n)
                    .filter(|&k| k != i)
                    .fold(Dd::ONE, |acc, k| acc * Dd::diff(nodes[i], nodes[k]));
                Dd::ONE / prod
            })
            .collect();
        let mut derivative_matrix = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = 0.0;
            for k in 0..n {
                if k != j {
                    let d = bary[k] / (bary[j] * (nodes[j] - nodes[k]));
                    derivative_matrix[j * n + k] = d;
                    diag -= d;
                }
            }
            derivative_matrix[j * n + j] = diag;
        }
        Ok(Self {
            degree: p,
            nodes,
            node_weights,
            bary,
            bary_dd,
            derivative_matrix,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// `dl_k/dξ` at node `ξ_j`.
    pub fn derivative_at_node(&self, j: usize, k: usize) -> f64 {
        self.derivative_matrix[j * (self.degree + 1) + k]
    }

    /// Value of the `i`-th Lagrange polynomial at any real `ξ`.
    pub fn eval_nodal(&self, i: usize, xi: f64) -> Result<f64> {
        if i > self.degree {
            return Err(Error::IndexOutOfRange {
                what: "nodal basis",
                index: i,
                len: self.degree + 1,
            });
        }
        let mut buf = vec![0.0; self.degree + 1];
        self.nodal_values(xi, &mut buf);
        Ok(buf[i])
    }

    /// Value of the `i`-th edge function at any real `ξ`.
    pub fn eval_edge(&self, i: usize, xi: f64) -> Result<f64> {
        if i >= self.degree {
            return Err(Error::IndexOutOfRange {
                what: "edge basis",
                index: i,
                len: self.degree,
            });
        }
        let mut buf = vec![0.0; self.degree];
        self.edge_values(xi, &mut buf);
        Ok(buf[i])
    }

    /// Derivative of the `i`-th Lagrange polynomial at any real `ξ`.
    pub fn eval_nodal_derivative(&self, i: usize, xi: f64) -> Result<f64> {
        if i > self.degree {
            return Err(Error::IndexOutOfRange {
                what: "nodal basis",
                index: i,
                len: self.degree + 1,
            });
        }
        let mut buf = vec![0.0; self.degree + 1];
        self.nodal_derivatives(xi, &mut buf);
        Ok(buf[i])
    }

    /// All `p + 1` nodal values at `ξ` (barycentric second form).
    pub fn nodal_values(&self, xi: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.degree + 1);
        if let Some(j) = self
            .nodes
            .iter()
            .position(|&node| (xi - node).abs() <= NODE_SNAP)
        {
            out.fill(0.0);
            out[j] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for (o, (&node, &w)) in out.iter_mut().zip(self.nodes.iter().zip(&self.bary)) {
            let t = w / (xi - node);
            *o = t;
            denom += t;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }

    /// All `p + 1` nodal derivatives at `ξ`.
    ///
    /// Uses the product-rule expansion, which has no singularity at the nodes.
    pub fn nodal_derivatives(&self, xi: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.degree + 1);
        let mut d = vec![Dd::ZERO; self.degree + 1];
        self.nodal_derivatives_dd(xi, &mut d);
        for (o, v) in out.iter_mut().zip(&d) {
            *o = v.to_f64();
        }
    }

    /// `l_i'(ξ) = w_i Σ_m Π_{k≠i,m} (ξ − ξ_k)` in double-double, with prefix
    /// and suffix products over the factors `k ≠ i`.
    fn nodal_derivatives_dd(&self, xi: f64, out: &mut [Dd]) {
        let n = self.degree + 1;
        let diffs: Vec<Dd> = self.nodes.iter().map(|&node| Dd::diff(xi, node)).collect();
        let mut factors = Vec::with_capacity(n);
        let mut prefix = vec![Dd::ONE; n];
        for i in 0..n {
            factors.clear();
            factors.extend((0..n).filter(|&k| k != i).map(|k| diffs[k]));
            let m = factors.len();
            for k in 0..m {
                prefix[k + 1] = prefix[k] * factors[k];
            }
            let mut suffix = Dd::ONE;
            let mut sum = Dd::ZERO;
            for k in (0..m).rev() {
                sum = sum + prefix[k] * suffix;
                suffix = suffix * factors[k];
            }
            out[i] = sum * self.bary_dd[i];
        }
    }

    /// All `p` edge-function values at `ξ`.
    pub fn edge_values(&self, xi: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.degree);
        let mut e = vec![Dd::ZERO; self.degree];
        self.edge_values_dd(xi, &mut e);
        for (o, v) in out.iter_mut().zip(&e) {
            *o = v.to_f64();
        }
    }

    pub(crate) fn edge_values_dd(&self, xi: f64, out: &mut [Dd]) {
        let p = self.degree;
        let mut d = vec![Dd::ZERO; p + 1];
        self.nodal_derivatives_dd(xi, &mut d);
        // e_i = −Σ_{k≤i} l_k' = Σ_{k>i} l_k'; take the shorter sum
        let half = p / 2;
        let mut acc = Dd::ZERO;
        for i in 0..half {
            acc = acc - d[i];
            out[i] = acc;
        }
        acc = Dd::ZERO;
        for i in (half..p).rev() {
            acc = acc + d[i + 1];
            out[i] = acc;
        }
    }

    /// Reference edge mass matrix `∫ e_i e_j dξ` under `rule`, accumulated in
    /// double-double and rounded once.
    pub fn edge_mass(&self, rule: &QuadratureRule) -> DMatrix<f64> {
        let p = self.degree;
        let mut acc = vec![Dd::ZERO; p * p];
        let mut e = vec![Dd::ZERO; p];
        for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
            self.edge_values_dd(xi, &mut e);
            let w = Dd::from(w);
            for i in 0..p {
                let we = w * e[i];
                for j in i..p {
                    acc[i * p + j] = acc[i * p + j] + we * e[j];
                }
            }
        }
        DMatrix::from_fn(p, p, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            acc[a * p + b].to_f64()
        })
    }
}

/// Element-wise L² projection onto the edge functions, carried out in
/// double-double: `M c = b` with `M = ∫ e_i e_j dξ` and `b_i = Σ_q w_q e_i(ξ_q) f_q`.
#[derive(Debug, Clone)]
pub(crate) struct EdgeProjector {
    p: usize,
    weights: Vec<f64>,
    /// `e_i(ξ_q)` at index `q p + i`.
    values: Vec<Dd>,
    /// Unit lower factor and diagonal of `M = L D Lᵀ`.
    lower: Vec<Dd>,
    diag: Vec<Dd>,
}

impl EdgeProjector {
    pub(crate) fn new(basis: &NodalEdgeBasis, rule: &QuadratureRule) -> Self {
        let p = basis.degree();
        let mut values = vec![Dd::ZERO; rule.len() * p];
        for (q, &xi) in rule.points.iter().enumerate() {
            basis.edge_values_dd(xi, &mut values[q * p..(q + 1) * p]);
        }
        let mut m = vec![Dd::ZERO; p * p];
        for (q, &w) in rule.weights.iter().enumerate() {
            let e = &values[q * p..(q + 1) * p];
            for i in 0..p {
                let we = Dd::from(w) * e[i];
                for j in 0..p {
                    m[i * p + j] = m[i * p + j] + we * e[j];
                }
            }
        }
        let mut lower = vec![Dd::ZERO; p * p];
        let mut diag = vec![Dd::ZERO; p];
        for j in 0..p {
            let mut d = m[j * p + j];
            for k in 0..j {
                d = d - lower[j * p + k] * lower[j * p + k] * diag[k];
            }
            diag[j] = d;
            lower[j * p + j] = Dd::ONE;
            for i in j + 1..p {
                let mut v = m[i * p + j];
                for k in 0..j {
                    v = v - lower[i * p + k] * lower[j * p + k] * diag[k];
                }
                lower[i * p + j] = v / d;
            }
        }
        Self {
            p,
            weights: rule.weights.clone(),
            values,
            lower,
            diag,
        }
    }

    /// `scale · M⁻¹ b` for samples `f_q` at the rule points.
    pub(crate) fn project(&self, f: &[f64], scale: f64, out: &mut [f64]) {
        let p = self.p;
        let mut c = vec![Dd::ZERO; p];
        for (q, (&w, &fq)) in self.weights.iter().zip(f).enumerate() {
            let wf = Dd::from(w) * Dd::from(fq);
            for i in 0..p {
                c[i] = c[i] + wf * self.values[q * p + i];
            }
        }
        for i in 0..p {
            for k in 0..i {
                c[i] = c[i] - self.lower[i * p + k] * c[k];
            }
        }
        for i in 0..p {
            c[i] = c[i] / self.diag[i];
        }
        for i in (0..p).rev() {
            for k in i + 1..p {
                c[i] = c[i] - self.lower[k * p + i] * c[k];
            }
        }
        for (o, v) in out.iter_mut().zip(&c) {
            *o = (*v * Dd::from(scale)).to_f64();
        }
    }
}

/// Shorthand for [`NodalEdgeBasis::new`].
pub fn build_basis(p: usize) -> Result<NodalEdgeBasis> {
    NodalEdgeBasis::new(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gll_nodes_low_degree() {
        let b1 = build_basis(1).unwrap();
        assert_eq!(b1.nodes(), &[-1.0, 1.0]);

        let b2 = build_basis(2).unwrap();
        assert_abs_diff_eq!(b2.nodes()[1], 0.0, epsilon = 1e-15);

        let b3 = build_basis(3).unwrap();
        let expected = [-1.0, -0.447213595499958, 0.447213595499958, 1.0];
        for (a, b) in b3.nodes().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn gll_nodes_are_roots_found_by_bisection() {
        // independent oracle: bisection on (1-x²)P_p'(x) over a fine bracket grid
        for p in 2..=10 {
            let f = |x: f64| (1.0 - x * x) * legendre_derivative(p, x);
            let mut roots = vec![-1.0];
            let m = 4000;
            for s in 1..m - 1 {
                let mut a = -1.0 + 2.0 * s as f64 / m as f64;
                let mut b = -1.0 + 2.0 * (s + 1) as f64 / m as f64;
                if f(a) * f(b) < 0.0 {
                    for _ in 0..200 {
                        let c = 0.5 * (a + b);
                        if f(a) * f(c) <= 0.0 {
                            b = c;
                        } else {
                            a = c;
                        }
                    }
                    roots.push(0.5 * (a + b));
                } else if f(a) == 0.0 {
                    roots.push(a);
                }
            }
            roots.push(1.0);
            let basis = build_basis(p).unwrap();
            assert_eq!(roots.len(), p + 1, "p = {p}");
            for (a, b) in basis.nodes().iter().zip(&roots) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn gll_invariants() {
        for p in 1..=12 {
            let b = build_basis(p).unwrap();
            let sum: f64 = b.node_weights().iter().sum();
            assert_abs_diff_eq!(sum, 2.0, epsilon = 1e-13);
            for k in 0..=p {
                assert_eq!(b.nodes()[k], -b.nodes()[p - k]);
            }
            for i in 0..=p {
                for j in 0..=p {
                    let v = b.eval_nodal(i, b.nodes()[j]).unwrap();
                    assert_eq!(v, if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(build_basis(0).unwrap_err(), Error::InvalidDegree(0));
        assert!(gauss_rule(0).is_err());
        let b = build_basis(3).unwrap();
        assert!(b.eval_nodal(4, 0.0).is_err());
        assert!(b.eval_edge(3, 0.0).is_err());
    }

    #[test]
    fn nodal_examples() {
        let b3 = build_basis(3).unwrap();
        assert_eq!(b3.eval_nodal(1, b3.nodes()[1]).unwrap(), 1.0);
        assert_eq!(b3.eval_nodal(1, b3.nodes()[2]).unwrap(), 0.0);
        let b2 = build_basis(2).unwrap();
        assert_abs_diff_eq!(b2.eval_nodal(0, 0.5).unwrap(), -0.125, epsilon = 1e-15);
    }

    #[test]
    fn edge_examples() {
        let b1 = build_basis(1).unwrap();
        assert_abs_diff_eq!(b1.eval_edge(0, 0.3).unwrap(), 0.5, epsilon = 1e-15);

        let g16 = gauss_rule(16).unwrap();
        let b2 = build_basis(2).unwrap();
        let int = g16.integrate_on(-1.0, 0.0, |x| b2.eval_edge(0, x).unwrap());
        assert_abs_diff_eq!(int, 1.0, epsilon = 1e-14);

        let b3 = build_basis(3).unwrap();
        for i in 0..3 {
            let total = g16.integrate(|x| b3.eval_edge(i, x).unwrap());
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn edge_integral_duality() {
        let g = gauss_rule(16).unwrap();
        for p in 1..=8 {
            let b = build_basis(p).unwrap();
            let nodes = b.nodes();
            for i in 0..p {
                for j in 0..p {
                    let v = g.integrate_on(nodes[j], nodes[j + 1], |x| b.eval_edge(i, x).unwrap());
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(v, want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn gauss_examples() {
        let g1 = gauss_rule(1).unwrap();
        assert_eq!(g1.points, vec![0.0]);
        assert_abs_diff_eq!(g1.weights[0], 2.0, epsilon = 1e-15);
        let g2 = gauss_rule(2).unwrap();
        assert_abs_diff_eq!(g2.points[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(g2.weights[0], 1.0, epsilon = 1e-15);
        let g3 = gauss_rule(3).unwrap();
        assert_abs_diff_eq!(g3.integrate(|x| x.powi(4)), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn gauss_exactness() {
        for q in 1..=20 {
            let g = gauss_rule(q).unwrap();
            for d in 0..=g.exactness() {
                let exact = if d % 2 == 1 {
                    0.0
                } else {
                    2.0 / (d as f64 + 1.0)
                };
                let got = g.integrate(|x| x.powi(d as i32));
                assert!(
                    (got - exact).abs() <= 1e-13 * exact.abs().max(1.0),
                    "q={q} d={d}"
                );
            }
        }
    }

    #[test]
    fn derivative_identity_matches_incidence() {
        // d/dξ Σ a_i l_i = Σ_j (a_{j+1} - a_j) e_j
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for p in 1..=6 {
            let b = build_basis(p).unwrap();
            let a: Vec<f64> = (0..=p).map(|_| next()).collect();
            for _ in 0..100 {
                let xi = next();
                let mut dl = vec![0.0; p + 1];
                b.nodal_derivatives(xi, &mut dl);
                let lhs: f64 = a.iter().zip(&dl).map(|(x, y)| x * y).sum();
                let mut e = vec![0.0; p];
                b.edge_values(xi, &mut e);
                let rhs: f64 = (0..p).map(|j| (a[j + 1] - a[j]) * e[j]).sum();
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn derivative_matrix_consistent() {
        for p in 1..=8 {
            let b = build_basis(p).unwrap();
            let mut d = vec![0.0; p + 1];
            for j in 0..=p {
                b.nodal_derivatives(b.nodes()[j], &mut d);
                for k in 0..=p {
                    assert_abs_diff_eq!(d[k], b.derivative_at_node(j, k), epsilon = 1e-10);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(p in 1usize..=10, xi in -1.0f64..1.0) {
            let b = build_basis(p).unwrap();
            let mut v = vec![0.0; p + 1];
            b.nodal_values(xi, &mut v);
            let s: f64 = v.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn partition_of_unity_extrapolated(p in 1usize..=10, xi in -2.0f64..2.0) {
            // outside the element the values grow with the Lebesgue function,
            // and the rounding of their sum grows with it
            let b = build_basis(p).unwrap();
            let mut v = vec![0.0; p + 1];
            b.nodal_values(xi, &mut v);
            let s: f64 = v.iter().sum();
            let lebesgue: f64 = v.iter().map(|x| x.abs()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12_f64.max(4.0 * (p + 1) as f64 * f64::EPSILON * lebesgue));
        }

        #[test]
        fn derivative_matches_finite_difference(p in 1usize..=10, xi in -0.999f64..0.999, i in 0usize..11) {
            let b = build_basis(p).unwrap();
            let i = i % (p + 1);
            let h = 1e-6;
            let fd = (b.eval_nodal(i, xi + h).unwrap() - b.eval_nodal(i, xi - h).unwrap()) / (2.0 * h);
            let d = b.eval_nodal_derivative(i, xi).unwrap();
            prop_assert!((fd - d).abs() <= 1e-5 * d.abs().max(1.0));
        }
    }
}
