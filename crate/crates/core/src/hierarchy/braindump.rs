//! The brain-dump teacher: a depth-r circuit of K-juntas whose labels are
//! random signed majorities of each layer's wires.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{random_subset, random_table, sign, sign_check, Junta};
use crate::error::{check_dim, Error, Result};
use crate::poly::{compose_linear, multilinear_extension, SparsePoly, DEFAULT_TERM_CAP};
use crate::ptf::PtfClaim;
use crate::rng::{self, Rng};

/// A member of `W_{d,k}`: `k` distinct coordinates with signs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedSubset {
    pub idx: Vec<usize>,
    pub sign: Vec<i8>,
}

impl SignedSubset {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.sign)
            .map(|(&i, &s)| s as f64 * x[i])
            .sum()
    }

    pub fn dense(&self, d: usize) -> Vec<f64> {
        let mut w = vec![0.0; d];
        for (&i, &s) in self.idx.iter().zip(&self.sign) {
            w[i] = s as f64;
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainDumpModel {
    pub d: usize,
    /// Junta size `K` of the gates.
    pub k_junta: usize,
    /// Majority fan-in `k` (odd).
    pub fanout: usize,
    pub q_labels: usize,
    /// `gates[i][j]` computes `G^{i+1}_j` from `G^i`.
    pub gates: Vec<Vec<Junta>>,
    /// `weights[i][j]` defines label `j` of level `i+1`.
    pub weights: Vec<Vec<SignedSubset>>,
}

pub fn gen_braindump(d: usize, r: usize, k_junta: usize, fanout: usize, q_labels: usize, seed: u64) -> Result<BrainDumpModel> {
    if fanout % 2 == 0 || fanout == 0 || fanout > d {
        return Err(Error::Infeasible(format!("fanout k={fanout} must be odd and in [1, d={d}]")));
    }
    if k_junta == 0 || k_junta > d || r == 0 || q_labels == 0 {
        return Err(Error::Infeasible(format!(
            "need 1 <= K <= d and r, q_labels >= 1 (K={k_junta}, d={d}, r={r}, q={q_labels})"
        )));
    }
    let mut rng: Rng = rng::stream(seed, rng::STREAM_GENERATOR);
    let mut gates = Vec::with_capacity(r);
    let mut weights = Vec::with_capacity(r);
    for _ in 0..r {
        gates.push(
            (0..d)
                .map(|_| {
                    let deps = random_subset(&mut rng, d, k_junta);
                    let table = random_table(&mut rng, k_junta);
                    Junta { deps, table }
                })
                .collect(),
        );
        weights.push((0..q_labels).map(|_| random_signed_subset(&mut rng, d, fanout)).collect());
    }
    Ok(BrainDumpModel {
        d,
        k_junta,
        fanout,
        q_labels,
        gates,
        weights,
    })
}

fn random_signed_subset(rng: &mut Rng, d: usize, k: usize) -> SignedSubset {
    let idx = random_subset(rng, d, k);
    let sign = (0..k).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
    SignedSubset { idx, sign }
}

impl BrainDumpModel {
    pub fn r(&self) -> usize {
        self.gates.len()
    }

    pub fn n(&self) -> usize {
        self.r() * self.q_labels
    }

    /// `G^0 = x, .., G^r`.
    pub fn wires(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.d, x.len())?;
        sign_check(x)?;
        let mut out = vec![x.to_vec()];
        for layer in &self.gates {
            let prev = out.last().expect("nonempty");
            let next = layer.iter().map(|g| g.eval(prev)).collect();
            out.push(next);
        }
        Ok(out)
    }

    /// All `n = r q_labels` labels, level 1 first.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let wires = self.wires(x)?;
        let mut y = Vec::with_capacity(self.n());
        for (i, ws) in self.weights.iter().enumerate() {
            for w in ws {
                y.push(sign(w.dot(&wires[i + 1])));
            }
        }
        Ok(y)
    }

    /// `|(1/(q alpha_{d,k})) W Psi(x) - x|_inf` with `W` the level-`level` weights
    /// (1-based) and `Psi(x) = sign(W^T x)`.
    pub fn reconstruction_error(&self, level: usize, x: &[f64]) -> Result<f64> {
        let est = self.reconstruct(level, x)?;
        Ok(est.iter().zip(x).map(|(e, v)| (e - v).abs()).fold(0.0, f64::max))
    }

    /// `(1/(q alpha)) W sign(W^T x)`
    pub fn reconstruct(&self, level: usize, x: &[f64]) -> Result<Vec<f64>> {
        if level == 0 || level > self.r() {
            return Err(Error::InvalidParameter(format!("level {level} outside 1..={}", self.r())));
        }
        check_dim(self.d, x.len())?;
        let alpha = alpha_dk(self.d, self.fanout)?;
        let mut acc = vec![0.0; self.d];
        for w in &self.weights[level - 1] {
            let s = sign(w.dot(x));
            for (&i, &sg) in w.idx.iter().zip(&w.sign) {
                acc[i] += s * sg as f64;
            }
        }
        let scale = 1.0 / (self.q_labels as f64 * alpha);
        Ok(acc.into_iter().map(|v| v * scale).collect())
    }

    /// Per-coordinate sample mean and standard error of `w_j sign(<w, x>)`
    /// over the level's weight vectors.
    pub fn majority_correlation(&self, level: usize, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        if level == 0 || level > self.r() {
            return Err(Error::InvalidParameter(format!("level {level} outside 1..={}", self.r())));
        }
        let q = self.q_labels as f64;
        let mut sum = vec![0.0; self.d];
        let mut sumsq = vec![0.0; self.d];
        for w in &self.weights[level - 1] {
            let s = sign(w.dot(x));
            for (&i, &sg) in w.idx.iter().zip(&w.sign) {
                let v = s * sg as f64;
                sum[i] += v;
                sumsq[i] += v * v;
            }
        }
        Ok(sum
            .iter()
            .zip(&sumsq)
            .map(|(&s, &ss)| {
                let mean = s / q;
                let var = if q > 1.0 { (ss - q * mean * mean).max(0.0) / (q - 1.0) } else { 0.0 };
                (mean, (var / q).sqrt())
            })
            .collect())
    }

    /// Explicit witness of label `t` of level `level` as a polynomial of the
    /// previous level's labels: `2 sum_l w_l p_l(R y)` with `R` the majority
    /// reconstruction map (level 1 reads the raw input, `R = I`). The pool is
    /// the `|L_{level-1}|` lower labels (or the `d` inputs). Opt-in because it
    /// expands to `O(d q^K)` terms; restricted to `d <= 12`, `K <= 2`.
    pub fn exact_witness(&self, level: usize, t: usize) -> Result<PtfClaim> {
        let wires = self.witness_wires(level)?;
        self.combine_witness(level, t, &wires)
    }

    /// All witnesses of a level; see [`exact_witness`](Self::exact_witness).
    pub fn exact_witnesses(&self, level: usize) -> Result<Vec<PtfClaim>> {
        let wires = self.witness_wires(level)?;
        (0..self.q_labels).map(|t| self.combine_witness(level, t, &wires)).collect()
    }

    /// `p_l(R y)` for every wire `l` of the level.
    pub(crate) fn witness_wires(&self, level: usize) -> Result<Vec<SparsePoly>> {
        if self.d > 12 || self.k_junta > 2 {
            return Err(Error::InvalidParameter(
                "exact brain-dump witnesses are limited to d <= 12 and K <= 2".into(),
            ));
        }
        if level == 0 || level > self.r() {
            return Err(Error::InvalidParameter(format!("level {level} outside 1..={}", self.r())));
        }
        let rows: Vec<Vec<f64>> = if level == 1 {
            (0..self.d)
                .map(|i| {
                    let mut r = vec![0.0; self.d];
                    r[i] = 1.0;
                    r
                })
                .collect()
        } else {
            let pool_dim = (level - 1) * self.q_labels;
            let offset = (level - 2) * self.q_labels;
            let scale = 1.0 / (self.q_labels as f64 * alpha_dk(self.d, self.fanout)?);
            let mut rows = vec![vec![0.0; pool_dim]; self.d];
            for (j, w) in self.weights[level - 2].iter().enumerate() {
                for (&i, &s) in w.idx.iter().zip(&w.sign) {
                    rows[i][offset + j] = s as f64 * scale;
                }
            }
            rows
        };
        self.gates[level - 1]
            .iter()
            .map(|g| {
                let ext = multilinear_extension(&g.table, self.d, &g.deps)?;
                compose_linear(&ext, &rows, DEFAULT_TERM_CAP)
            })
            .collect()
    }

    pub(crate) fn combine_witness(&self, level: usize, t: usize, wires: &[SparsePoly]) -> Result<PtfClaim> {
        let w = &self.weights[level - 1][t];
        let mut total = SparsePoly::zero(wires[0].dim());
        for (&l, &s) in w.idx.iter().zip(&w.sign) {
            total.add_scaled(&wires[l], 2.0 * s as f64)?;
        }
        let m = crate::poly::coeff_norm(&total).max(f64::MIN_POSITIVE);
        PtfClaim::new(self.k_junta, m, 2.0 * self.fanout as f64 + 1.0, 1.0, total)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn binom(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(c)
}

/// `alpha_{d,k} = (k/d) C(k-1,(k-1)/2) / 2^{k-1}` as a reduced fraction.
pub fn alpha_dk_exact(d: usize, k: usize) -> Result<(u128, u128)> {
    if k % 2 == 0 || k == 0 || k > d {
        return Err(Error::Infeasible(format!("alpha_(d,k) needs odd k in [1,d], got d={d} k={k}")));
    }
    if k > 120 {
        return Err(Error::InvalidParameter(format!("k={k} too large for exact evaluation")));
    }
    let c = binom(k as u64 - 1, (k as u64 - 1) / 2).ok_or_else(|| Error::Numerical("binomial overflow".into()))?;
    let num = k as u128 * c;
    let den = (d as u128)
        .checked_mul(1u128 << (k - 1))
        .ok_or_else(|| Error::Numerical("alpha denominator overflow".into()))?;
    let g = gcd(num, den);
    Ok((num / g, den / g))
}

pub fn alpha_dk(d: usize, k: usize) -> Result<f64> {
    let (n, m) = alpha_dk_exact(d, k)?;
    Ok(n as f64 / m as f64)
}

/// `sqrt(pi k) C(2k,k) / 4^k`, which tends to 1.
pub fn central_binomial_ratio(k: usize) -> f64 {
    let mut v = 1.0;
    for i in 1..=k {
        v *= (2 * i - 1) as f64 / (2 * i) as f64;
    }
    (std::f64::consts::PI * k as f64).sqrt() * v
}

/// One grid point of the extended Chernoff check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffCell {
    pub q: usize,
    pub p_plus: f64,
    pub p_minus: f64,
    pub eps: f64,
    pub empirical: f64,
    pub bound: f64,
    pub ok: bool,
}

/// For i.i.d. `X_i in {-1,0,1}` with mean `mu`, estimates
/// `P(|(1/(q|mu|)) sum X_i - mu/|mu|| >= eps)` over `trials` and compares with
/// `4 exp(-q eps^2 mu^2 / (12 P(X != 0)))`; a cell is ok when the frequency
/// is at most twice the bound.
pub fn extended_chernoff_cell(q: usize, p_plus: f64, p_minus: f64, eps: f64, trials: usize, rng: &mut Rng) -> ChernoffCell {
    let mu = p_plus - p_minus;
    let nz = p_plus + p_minus;
    let mut hits = 0usize;
    for _ in 0..trials {
        let mut s = 0i64;
        for _ in 0..q {
            let u: f64 = rng.gen();
            if u < p_plus {
                s += 1;
            } else if u < nz {
                s -= 1;
            }
        }
        let dev = (s as f64 / (q as f64 * mu.abs()) - mu.signum()).abs();
        if dev >= eps {
            hits += 1;
        }
    }
    let empirical = hits as f64 / trials as f64;
    let bound = 4.0 * (-(q as f64) * eps * eps * mu * mu / (12.0 * nz)).exp();
    ChernoffCell {
        q,
        p_plus,
        p_minus,
        eps,
        empirical,
        bound,
        ok: empirical <= 2.0 * bound,
    }
}

pub fn extended_chernoff_grid(trials: usize, seed: u64) -> Vec<ChernoffCell> {
    let mut rng = rng::stream(seed, "extended-chernoff");
    let mut out = Vec::new();
    for &q in &[50usize, 200, 1000] {
        for &(pp, pm) in &[(0.3, 0.1), (0.05, 0.01), (0.6, 0.35), (0.2, 0.0)] {
            for &eps in &[0.1, 0.3, 0.5] {
                out.push(extended_chernoff_cell(q, pp, pm, eps, trials, &mut rng));
            }
        }
    }
    out
}
