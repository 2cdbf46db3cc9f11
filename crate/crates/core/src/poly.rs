//! Sparse multivariate polynomials over `R^n`.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_TERM_CAP: usize = 1_000_000;

/// Monomial as sorted `(variable, exponent)` pairs with positive exponents.
/// Ordered like the dense exponent vectors it stands for (lexicographic alpha).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Mono(Vec<(u32, u32)>);

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j) = (0, 0);
        loop {
            match (a.get(i), b.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(&(va, ea)), Some(&(vb, eb))) => {
                    if va != vb {
                        // the one with the smaller variable index has a positive
                        // exponent where the other has zero
                        return if va < vb { Ordering::Greater } else { Ordering::Less };
                    }
                    if ea != eb {
                        return ea.cmp(&eb);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Mono {
    fn from_dense(alpha: &[u32]) -> Self {
        Mono(
            alpha
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| (i as u32, e))
                .collect(),
        )
    }

    fn to_dense(&self, dim: usize) -> Vec<u32> {
        let mut a = vec![0; dim];
        for &(v, e) in &self.0 {
            a[v as usize] = e;
        }
        a
    }

    fn degree(&self) -> usize {
        self.0.iter().map(|&(_, e)| e as usize).sum()
    }

    fn mul(&self, other: &Mono) -> Mono {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            match (a.get(i), b.get(j)) {
                (Some(&x), None) => {
                    out.push(x);
                    i += 1;
                }
                (None, Some(&y)) => {
                    out.push(y);
                    j += 1;
                }
                (Some(&(va, ea)), Some(&(vb, eb))) => {
                    if va < vb {
                        out.push((va, ea));
                        i += 1;
                    } else if vb < va {
                        out.push((vb, eb));
                        j += 1;
                    } else {
                        out.push((va, ea + eb));
                        i += 1;
                        j += 1;
                    }
                }
                (None, None) => unreachable!(),
            }
        }
        Mono(out)
    }
}

/// Multivariate polynomial on `R^dim`. Zero coefficients are never stored;
/// terms are kept in lexicographic order of their exponent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoly {
    dim: usize,
    terms: BTreeMap<Mono, f64>,
}

impl SparsePoly {
    pub fn zero(dim: usize) -> Self {
        SparsePoly {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_mono(Mono(Vec::new()), c);
        p
    }

    /// `x_i`
    pub fn variable(dim: usize, i: usize) -> Result<Self> {
        if i >= dim {
            return Err(Error::InvalidParameter(format!("variable {i} outside dim {dim}")));
        }
        let mut p = Self::zero(dim);
        p.add_mono(Mono(vec![(i as u32, 1)]), 1.0);
        Ok(p)
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Result<Self> {
        let mut p = Self::zero(dim);
        for (alpha, c) in terms {
            p.add_term(alpha, c)?;
        }
        Ok(p)
    }

    /// Adds `c x^alpha` for a dense exponent vector, merging with an existing
    /// term and dropping exact zeros.
    pub fn add_term(&mut self, alpha: Vec<u32>, c: f64) -> Result<()> {
        check_dim(self.dim, alpha.len())?;
        if !c.is_finite() {
            return Err(Error::InvalidParameter("polynomial coefficient must be finite".into()));
        }
        self.add_mono(Mono::from_dense(&alpha), c);
        Ok(())
    }

    fn add_mono(&mut self, m: Mono, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, other: &SparsePoly, c: f64) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        if !c.is_finite() {
            return Err(Error::InvalidParameter("polynomial coefficient must be finite".into()));
        }
        for (m, &v) in &other.terms {
            self.add_mono(m.clone(), c * v);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Terms as dense exponent vectors, in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (Vec<u32>, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m.to_dense(self.dim), c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, alpha: &[u32]) -> f64 {
        if alpha.len() != self.dim {
            return 0.0;
        }
        self.terms.get(&Mono::from_dense(alpha)).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Mono::degree).max().unwrap_or(0)
    }

    /// Every exponent is 0 or 1.
    pub fn is_multilinear(&self) -> bool {
        self.terms.keys().all(|m| m.0.iter().all(|&(_, e)| e <= 1))
    }

    /// Sorted indices of variables appearing with a nonzero exponent.
    pub fn variables(&self) -> Vec<usize> {
        let mut used = vec![false; self.dim];
        for m in self.terms.keys() {
            for &(v, _) in &m.0 {
                used[v as usize] = true;
            }
        }
        used.iter().enumerate().filter(|(_, &u)| u).map(|(i, _)| i).collect()
    }

    pub fn scale(&self, c: f64) -> SparsePoly {
        let mut out = Self::zero(self.dim);
        for (m, &v) in &self.terms {
            out.add_mono(m.clone(), v * c);
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (m, &c) in &self.terms {
            let mut mono = c;
            for &(v, e) in &m.0 {
                mono *= x[v as usize].powi(e as i32);
            }
            total += mono;
        }
        total
    }

    fn mul(&self, other: &SparsePoly, cap: usize) -> Result<SparsePoly> {
        check_dim(self.dim, other.dim)?;
        let mut out = Self::zero(self.dim);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                out.add_mono(a.mul(b), ca * cb);
                if out.terms.len() > cap {
                    return Err(Error::TermCap {
                        terms: out.terms.len(),
                        cap,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// `p(x)`; errors on a dimension mismatch.
pub fn poly_eval(p: &SparsePoly, x: &[f64]) -> Result<f64> {
    p.eval(x)
}

/// Euclidean norm of the coefficient vector.
pub fn coeff_norm(p: &SparsePoly) -> f64 {
    p.terms.values().map(|c| c * c).sum::<f64>().sqrt()
}

/// Index into a truth table of length `2^K` for the sign pattern `z`:
/// bit `b` is set iff `z_b >= 0` (so `sign(0) = +1`).
pub fn table_index(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold(0, |acc, (b, &v)| if v >= 0.0 { acc | (1 << b) } else { acc })
}

/// Sign pattern of table entry `i` over `k` inputs (inverse of [`table_index`]).
pub fn table_corner(i: usize, k: usize) -> Vec<f64> {
    (0..k).map(|b| if (i >> b) & 1 == 1 { 1.0 } else { -1.0 }).collect()
}

/// The unique multilinear polynomial agreeing with a `{+-1}` truth table,
/// placed on coordinates `coord_map` of `R^embed_dim`.
pub fn multilinear_extension(truth_table: &[f64], embed_dim: usize, coord_map: &[usize]) -> Result<SparsePoly> {
    let k = coord_map.len();
    if truth_table.len() != 1usize << k {
        return Err(Error::InvalidParameter(format!(
            "truth table has {} entries, expected 2^{k}",
            truth_table.len()
        )));
    }
    if let Some(&bad) = truth_table.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::NonSignEntry(bad));
    }
    let mut seen = vec![false; embed_dim];
    for &c in coord_map {
        if c >= embed_dim || seen[c] {
            return Err(Error::InvalidParameter(format!(
                "coordinate map must be injective into [0,{embed_dim})"
            )));
        }
        seen[c] = true;
    }
    // Walsh–Hadamard in the basis z_b in {-1,+1}: entry with bit b set has z_b = +1.
    let mut f = truth_table.to_vec();
    let mut h = 1;
    while h < f.len() {
        for i in (0..f.len()).step_by(2 * h) {
            for j in i..i + h {
                let (lo, hi) = (f[j], f[j + h]);
                // lo: z_b = -1, hi: z_b = +1; even part goes to lo, odd part to hi
                f[j] = lo + hi;
                f[j + h] = hi - lo;
            }
        }
        h *= 2;
    }
    let norm = (1usize << k) as f64;
    let mut p = SparsePoly::zero(embed_dim);
    for (mask, v) in f.iter().enumerate() {
        let mut alpha = vec![0u32; embed_dim];
        for (b, &c) in coord_map.iter().enumerate() {
            if (mask >> b) & 1 == 1 {
                alpha[c] = 1;
            }
        }
        p.add_term(alpha, v / norm)?;
    }
    Ok(p)
}

/// `(L, Bsup) = ((n+1)^{(K+1)/2} K |p|_co, (n+1)^{K/2} |p|_co)` with
/// `K = degree(p)`, `n = dim(p)`: an l_inf-Lipschitz constant and a sup bound
/// of `p` over `[-1,1]^n`.
pub fn lip_sup_bounds(p: &SparsePoly) -> (f64, f64) {
    let k = p.degree() as f64;
    let n1 = p.dim() as f64 + 1.0;
    let norm = coeff_norm(p);
    (n1.powf((k + 1.0) / 2.0) * k * norm, n1.powf(k / 2.0) * norm)
}

/// `q(y) = p(A y)` expanded exactly, where `a` lists the rows of `A`
/// (`p.dim()` rows of length `target_dim`).
pub fn compose_linear(p: &SparsePoly, a: &[Vec<f64>], cap: usize) -> Result<SparsePoly> {
    check_dim(p.dim(), a.len())?;
    let target_dim = a.first().map_or(0, |r| r.len());
    for row in a {
        check_dim(target_dim, row.len())?;
    }
    let linear: Vec<SparsePoly> = a
        .iter()
        .map(|row| {
            let mut l = SparsePoly::zero(target_dim);
            for (j, &c) in row.iter().enumerate() {
                if !c.is_finite() {
                    return Err(Error::InvalidParameter("matrix entries must be finite".into()));
                }
                l.add_mono(Mono(vec![(j as u32, 1)]), c);
            }
            Ok(l)
        })
        .collect::<Result<_>>()?;

    // powers of each linear form, built on demand
    let mut powers: Vec<Vec<SparsePoly>> = vec![vec![SparsePoly::constant(target_dim, 1.0)]; p.dim()];
    let mut out = SparsePoly::zero(target_dim);
    for (m, &c) in &p.terms {
        let mut mono = SparsePoly::constant(target_dim, c);
        for &(v, e) in &m.0 {
            let i = v as usize;
            while powers[i].len() <= e as usize {
                let next = powers[i].last().expect("nonempty").mul(&linear[i], cap)?;
                powers[i].push(next);
            }
            mono = mono.mul(&powers[i][e as usize], cap)?;
        }
        for (b, v) in mono.terms {
            out.add_mono(b, v);
        }
        if out.num_terms() > cap {
            return Err(Error::TermCap {
                terms: out.num_terms(),
                cap,
            });
        }
    }

    let r = a
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let qn = coeff_norm(&out);
    let bound = composition_norm_bound(p, r);
    if qn > bound * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Numerical(format!(
            "composed coefficient norm {qn} exceeds its bound {bound}"
        )));
    }
    Ok(out)
}

/// `|p|_co R^K (n+1)^{K/2}`, the composition bound as usually stated; it
/// presumes `R >= 1` and counts tensor entries rather than merged monomials.
pub fn composition_norm_bound_stated(p: &SparsePoly, r: f64) -> f64 {
    let k = p.degree() as i32;
    coeff_norm(p) * r.powi(k) * (p.dim() as f64 + 1.0).powf(k as f64 / 2.0)
}

/// `|p|_co max(1,R)^K (n+1)^{K/2} sqrt(K!)`: a bound on `|p(A .)|_co` valid
/// for every `R` (constants are not shrunk by `R^K`, and merging the `K!/beta!`
/// tensor entries of a monomial costs at most `sqrt(K!)`).
pub fn composition_norm_bound(p: &SparsePoly, r: f64) -> f64 {
    let k = p.degree();
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    coeff_norm(p) * r.max(1.0).powi(k as i32) * (p.dim() as f64 + 1.0).powf(k as f64 / 2.0) * fact.sqrt()
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    alpha: Vec<u32>,
    coeff: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    dim: usize,
    terms: Vec<TermRepr>,
}

impl Serialize for SparsePoly {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyRepr {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| TermRepr {
                    alpha: m.to_dense(self.dim),
                    coeff: c,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparsePoly {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PolyRepr::deserialize(d)?;
        SparsePoly::from_terms(repr.dim, repr.terms.into_iter().map(|t| (t.alpha, t.coeff)))
            .map_err(serde::de::Error::custom)
    }
}
