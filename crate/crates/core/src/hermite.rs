//! Normalized probabilists' Hermite polynomials and Hermite analytics of
//! activation functions.
//!
//! `h_s` is orthonormal under the standard Gaussian measure:
//! `h_0 = 1`, `h_1 = x`, `sqrt(s+1) h_{s+1} = x h_s - sqrt(s) h_{s-1}`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest polynomial index evaluated by [`hermite_eval`].
pub const MAX_DEGREE: usize = 64;
pub const DEFAULT_S_MAX: usize = 32;
pub const DEFAULT_COEFF_TOL: f64 = 1e-10;
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;
/// Tolerance of the orthonormality self-check run on every quadrature rule.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// `h_s(x)` by forward recurrence. `s` is clamped to [`MAX_DEGREE`].
pub fn hermite_eval(s: usize, x: f64) -> f64 {
    let s = s.min(MAX_DEGREE);
    match s {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for k in 1..s {
                let kf = k as f64;
                let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// `h_0(x), ..., h_{s_max}(x)` in one pass.
pub fn hermite_all(s_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(s_max + 1);
    out.push(1.0);
    if s_max == 0 {
        return out;
    }
    out.push(x);
    for k in 1..s_max {
        let kf = k as f64;
        let next = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
        out.push(next);
    }
    out
}

/// Gauss–Hermite rule for `E_{X~N(0,1)}[f(X)]`, i.e. weights summing to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes from the Jacobi matrix eigenvalues (Golub–Welsch), polished by
    /// Newton on `h_n`; weights from the Christoffel formula
    /// `w_i = 1 / sum_{k<n} h_k(x_i)^2`, which keeps tail weights relatively accurate.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("quadrature needs at least one node".into()));
        }
        if n == 1 {
            return Ok(GaussHermite {
                nodes: vec![0.0],
                weights: vec![1.0],
            });
        }
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (hn, hn1) = scaled_pair(n, *x);
                let step = hn / ((n as f64).sqrt() * hn1);
                if !step.is_finite() {
                    break;
                }
                *x -= step;
                if step.abs() < 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        // exact symmetry of the rule
        for i in 0..n / 2 {
            let avg = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -avg;
            nodes[n - 1 - i] = avg;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }

        let weights: Vec<f64> = nodes.iter().map(|&x| christoffel_weight(n, x)).collect();
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(GaussHermite { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Max `|E[h_i h_j] - delta_ij|` over `0 <= i, j <= s_max` under this rule.
    pub fn orthonormality_error(&self, s_max: usize) -> f64 {
        let table: Vec<Vec<f64>> = self.nodes.iter().map(|&x| hermite_all(s_max, x)).collect();
        let mut worst = 0.0f64;
        for i in 0..=s_max {
            for j in i..=s_max {
                let e: f64 = table
                    .iter()
                    .zip(&self.weights)
                    .map(|(h, &w)| w * h[i] * h[j])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((e - target).abs());
            }
        }
        worst
    }
}

/// `(h_n(x), h_{n-1}(x))` up to a common positive factor.
fn scaled_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (1.0f64, x);
    for k in 1..n {
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            prev *= 1e-150;
            cur *= 1e-150;
        }
    }
    (cur, prev)
}

fn christoffel_weight(n: usize, x: f64) -> f64 {
    const SCALE: f64 = 1e-150;
    let (mut prev, mut cur) = (1.0f64, x);
    let mut sum = 1.0 + x * x;
    let mut rescales = 0i32;
    for k in 1..n - 1 {
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
        sum += cur * cur;
        if cur.abs() > 1e150 {
            prev *= SCALE;
            cur *= SCALE;
            sum *= SCALE * SCALE;
            rescales += 1;
        }
    }
    if rescales > 0 {
        0.0
    } else {
        1.0 / sum
    }
}

/// Activation functions selectable by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `erf(x)`
    Erf,
    /// Piecewise-linear interpolation through `(knots[i], values[i])`,
    /// constant outside the knot range.
    Table { knots: Vec<f64>, values: Vec<f64> },
}

impl Activation {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "erf" | "erf-like" => Ok(Activation::Erf),
            other => Err(Error::InvalidParameter(format!(
                "unknown activation '{other}' (expected tanh, erf-like, or a table)"
            ))),
        }
    }

    pub fn table(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidParameter(
                "table activation needs >= 2 knots and matching values".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("table knots must be strictly increasing".into()));
        }
        if values.iter().chain(&knots).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("table entries must be finite".into()));
        }
        Ok(Activation::Table { knots, values })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Erf => "erf-like",
            Activation::Table { .. } => "table",
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Erf => libm::erf(x),
            Activation::Table { knots, values } => {
                let last = knots.len() - 1;
                if x <= knots[0] {
                    return values[0];
                }
                if x >= knots[last] {
                    return values[last];
                }
                let i = knots.partition_point(|&k| k <= x) - 1;
                let t = (x - knots[i]) / (knots[i + 1] - knots[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            Activation::Tanh | Activation::Erf => 1.0,
            Activation::Table { values, .. } => values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }
}

/// An activation together with its Hermite data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub activation: Activation,
    /// `a_0 .. a_{S_max}`
    pub hermite_coeffs: Vec<f64>,
    /// Gaussian L2 norm `sqrt(E sigma(X)^2)`.
    pub l2_norm: f64,
    pub sup_norm: f64,
    /// The degree bound `K` the spec was built for.
    pub k: usize,
    /// Minimal `K' >= K` with a nonzero coefficient.
    pub kprime: usize,
    pub coeff_tol: f64,
    pub quad_nodes: usize,
}

impl ActivationSpec {
    pub fn new(activation: Activation, k: usize) -> Result<Self> {
        Self::with_options(activation, k, DEFAULT_S_MAX, 2 * DEFAULT_S_MAX + 32, DEFAULT_COEFF_TOL)
    }

    pub fn with_options(
        activation: Activation,
        k: usize,
        s_max: usize,
        quad_nodes: usize,
        coeff_tol: f64,
    ) -> Result<Self> {
        let rule = GaussHermite::new(quad_nodes)?;
        let coeffs = coeffs_with_rule(&|x| activation.eval(x), s_max, &rule)?;
        let l2_norm = rule.expectation(|x| activation.eval(x).powi(2)).sqrt();
        let parseval: f64 = coeffs.iter().map(|a| a * a).sum();
        if parseval > l2_norm * l2_norm + 1e-6 {
            return Err(Error::Numerical(format!(
                "Parseval partial sum {parseval} exceeds ||sigma||^2 = {}",
                l2_norm * l2_norm
            )));
        }
        let kprime = select_kprime(&coeffs, k, coeff_tol)?;
        Ok(ActivationSpec {
            sup_norm: activation.sup_norm(),
            activation,
            hermite_coeffs: coeffs,
            l2_norm,
            k,
            kprime,
            coeff_tol,
            quad_nodes,
        })
    }

    pub fn name(&self) -> &'static str {
        self.activation.name()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.activation.eval(x)
    }

    pub fn s_max(&self) -> usize {
        self.hermite_coeffs.len() - 1
    }

    /// `a_{K'}`
    pub fn a_kprime(&self) -> f64 {
        self.hermite_coeffs[self.kprime]
    }

    /// `sqrt(max(0, ||sigma||^2 - sum_{u < t} a_u^2))`, the L2 mass of the
    /// expansion from index `t` on.
    pub fn parseval_residual(&self, t: usize) -> f64 {
        let head: f64 = self.hermite_coeffs.iter().take(t).map(|a| a * a).sum();
        (self.l2_norm * self.l2_norm - head).max(0.0).sqrt()
    }

    /// `E[sigma(r X)^2]` for `X ~ N(0,1)`.
    pub fn scaled_second_moment(&self, r: f64) -> Result<f64> {
        let rule = GaussHermite::new(self.quad_nodes)?;
        Ok(rule.expectation(|x| self.eval(r * x).powi(2)))
    }
}

fn coeffs_with_rule(sigma: &dyn Fn(f64) -> f64, s_max: usize, rule: &GaussHermite) -> Result<Vec<f64>> {
    let err = rule.orthonormality_error(s_max);
    if !(err <= ORTHONORMALITY_TOL) {
        return Err(Error::QuadratureCheck {
            max_err: err,
            tol: ORTHONORMALITY_TOL,
        });
    }
    let mut coeffs = vec![0.0; s_max + 1];
    for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
        if w == 0.0 {
            continue;
        }
        let fx = sigma(x);
        for (c, h) in coeffs.iter_mut().zip(hermite_all(s_max, x)) {
            *c += w * fx * h;
        }
    }
    Ok(coeffs)
}

/// `a_s = E[sigma(X) h_s(X)]` for `s <= s_max` by Gauss–Hermite quadrature.
pub fn hermite_coeffs(sigma: &dyn Fn(f64) -> f64, s_max: usize, quad_nodes: usize) -> Result<Vec<f64>> {
    if s_max > MAX_DEGREE {
        return Err(Error::InvalidParameter(format!("S_max {s_max} exceeds {MAX_DEGREE}")));
    }
    if quad_nodes < 2 * s_max + 32 {
        return Err(Error::InvalidParameter(format!(
            "quad_nodes {quad_nodes} < 2*S_max+32 = {}",
            2 * s_max + 32
        )));
    }
    let rule = GaussHermite::new(quad_nodes)?;
    coeffs_with_rule(sigma, s_max, &rule)
}

/// Minimal `K' >= k` with `|a_{K'}| > coeff_tol`.
pub fn select_kprime(coeffs: &[f64], k: usize, coeff_tol: f64) -> Result<usize> {
    coeffs
        .iter()
        .enumerate()
        .skip(k)
        .find(|(_, a)| a.abs() > coeff_tol)
        .map(|(s, _)| s)
        .ok_or(Error::NoCoefficientAboveK { k, tol: coeff_tol })
}

/// Value of the shifted coefficient `a_s(r)` with a bound on the truncated tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shifted {
    pub value: f64,
    pub tail: f64,
}

/// `a_s(r) = sum_j a_{s+2j} sqrt((s+2j)!/s!) (r^2-1)^j / (j! 2^j)`.
///
/// Summation stops once the Cauchy–Schwarz majorant of the remaining terms,
/// `R_{s+2J} 2^{s/2} (2|r^2-1|)^J / sqrt(1 - 4|r^2-1|^2)` with `R_t` the
/// Parseval residual, drops below `tail_tol`, or when the stored
/// coefficients run out (the majorant is then reported as `tail`).
pub fn a_shifted(s: usize, r: f64, spec: &ActivationSpec, tail_tol: f64) -> Result<Shifted> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("a_shifted needs r > 0, got {r}")));
    }
    let delta = r * r - 1.0;
    let eps = delta.abs();
    if eps >= 0.5 {
        return Err(Error::OutsideConvergence(eps));
    }
    let coeffs = &spec.hermite_coeffs;
    if s >= coeffs.len() {
        return Ok(Shifted {
            value: 0.0,
            tail: spec.parseval_residual(s) * 2f64.powf(s as f64 / 2.0) / (1.0 - 4.0 * eps * eps).sqrt(),
        });
    }
    if eps == 0.0 {
        return Ok(Shifted {
            value: coeffs[s],
            tail: 0.0,
        });
    }
    let geom = 2.0 * eps;
    let denom = (1.0 - 4.0 * eps * eps).sqrt();
    let pref = 2f64.powf(s as f64 / 2.0) / denom;
    let majorant = |j: usize| spec.parseval_residual(s + 2 * j) * pref * geom.powi(j as i32);

    let mut value = 0.0;
    let mut c = 1.0;
    let mut j = 0usize;
    loop {
        let idx = s + 2 * j;
        if idx >= coeffs.len() {
            return Ok(Shifted {
                value,
                tail: majorant(j),
            });
        }
        if j > 0 && majorant(j) < tail_tol {
            return Ok(Shifted {
                value,
                tail: majorant(j),
            });
        }
        if j > 0 {
            let jf = j as f64;
            c *= ((idx as f64) * (idx as f64 - 1.0)).sqrt() * delta / (2.0 * jf);
        }
        value += coeffs[idx] * c;
        j += 1;
    }
}
