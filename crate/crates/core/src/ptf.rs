//! Robust polynomial threshold function claims: a witness `p` with
//! `1 <= p(x') f(x) <= B` for every `x'` in the truncated l_inf ball of radius `xi`.

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::poly::{coeff_norm, lip_sup_bounds, SparsePoly};
use crate::rng::Rng;

pub const DEFAULT_PERTURBATIONS: usize = 64;
/// Above this many witness variables corner enumeration falls back to sampling.
const MAX_CORNER_VARS: usize = 16;
const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtfClaim {
    pub k: usize,
    pub m: f64,
    pub b: f64,
    pub xi: f64,
    pub witness: SparsePoly,
}

impl PtfClaim {
    pub fn new(k: usize, m: f64, b: f64, xi: f64, witness: SparsePoly) -> Result<Self> {
        if !(b >= 1.0) {
            return Err(Error::InvalidParameter(format!("PTF margin bound B={b} must be >= 1")));
        }
        if !(xi > 0.0 && xi <= 1.0) {
            return Err(Error::InvalidParameter(format!("PTF radius xi={xi} must lie in (0,1]")));
        }
        if !(m > 0.0) {
            return Err(Error::InvalidParameter(format!("PTF norm bound M={m} must be positive")));
        }
        Ok(PtfClaim { k, m, b, xi, witness })
    }

    /// Degree and coefficient-norm conditions on the witness.
    pub fn structurally_valid(&self) -> bool {
        self.witness.degree() <= self.k && coeff_norm(&self.witness) <= self.m * (1.0 + SLACK)
    }
}

/// `{x' in [-1,1]^d : |x - x'|_inf <= r}`
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl TruncatedBall {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.center.len()
            && x.iter().zip(&self.center).all(|(&a, &c)| {
                (-1.0..=1.0).contains(&a) && (a - c).abs() <= self.radius
            })
    }

    /// Per-coordinate interval `[max(-1, c-r), min(1, c+r)]`.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        let c = self.center[i];
        ((c - self.radius).max(-1.0), (c + self.radius).min(1.0))
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.center.len())
            .map(|i| {
                let (lo, hi) = self.interval(i);
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect()
    }
}

/// How thoroughly the ball around each point was explored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckCoverage {
    /// Multilinear witness: all ball corners over its variables were tested,
    /// so a pass is a proof on the sampled points.
    CornerExact,
    /// Random perturbations only: a pass is evidence, a failure is a certificate.
    Sampled,
    /// Only the points themselves (radius ignored).
    PointsOnly,
    /// No data points.
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtfReport {
    pub holds: bool,
    pub structural_ok: bool,
    pub worst_margin_low: f64,
    pub worst_margin_high: f64,
    pub coverage: CheckCoverage,
    /// Index of the first point with a violating perturbation.
    pub first_violation: Option<usize>,
    pub points_tested: usize,
}

fn check_impl(
    points: &[Vec<f64>],
    labels: &[f64],
    claim: &PtfClaim,
    perturbations: usize,
    seed: u64,
    points_only: bool,
) -> Result<PtfReport> {
    check_dim(points.len(), labels.len())?;
    let p = &claim.witness;
    for x in points {
        check_dim(p.dim(), x.len())?;
    }
    let structural_ok = claim.structurally_valid();
    if points.is_empty() {
        return Ok(PtfReport {
            holds: structural_ok,
            structural_ok,
            worst_margin_low: f64::INFINITY,
            worst_margin_high: f64::NEG_INFINITY,
            coverage: CheckCoverage::NoData,
            first_violation: None,
            points_tested: 0,
        });
    }
    let vars = p.variables();
    let coverage = if points_only {
        CheckCoverage::PointsOnly
    } else if p.is_multilinear() && vars.len() <= MAX_CORNER_VARS {
        CheckCoverage::CornerExact
    } else {
        CheckCoverage::Sampled
    };
    let mut rng = Rng::seed_from_u64(seed);
    let mut low = f64::INFINITY;
    let mut high = f64::NEG_INFINITY;
    let mut first_violation = None;

    for (idx, (x, &f)) in points.iter().zip(labels).enumerate() {
        let mut local_low = f64::INFINITY;
        let mut local_high = f64::NEG_INFINITY;
        let mut record = |v: f64| {
            let margin = v * f;
            local_low = local_low.min(margin);
            local_high = local_high.max(margin);
        };
        record(p.eval_unchecked(x));
        if !points_only {
            let ball = TruncatedBall {
                center: x.clone(),
                radius: claim.xi,
            };
            if coverage == CheckCoverage::CornerExact {
                let mut y = x.clone();
                for mask in 0..1usize << vars.len() {
                    for (b, &v) in vars.iter().enumerate() {
                        let (lo, hi) = ball.interval(v);
                        y[v] = if (mask >> b) & 1 == 1 { hi } else { lo };
                    }
                    record(p.eval_unchecked(&y));
                }
            }
            for _ in 0..perturbations {
                let y = ball.sample(&mut rng);
                record(p.eval_unchecked(&y));
            }
        }
        if first_violation.is_none() && (local_low < 1.0 - SLACK || local_high > claim.b + SLACK) {
            first_violation = Some(idx);
        }
        low = low.min(local_low);
        high = high.max(local_high);
    }
    Ok(PtfReport {
        holds: structural_ok && first_violation.is_none(),
        structural_ok,
        worst_margin_low: low,
        worst_margin_high: high,
        coverage,
        first_violation,
        points_tested: points.len(),
    })
}

/// Tests `1 <= p(x') f(x) <= B` at each point and over its `xi`-ball: all
/// corners over the witness variables when `p` is multilinear, plus
/// `perturbations` uniform samples.
pub fn ptf_check(
    points: &[Vec<f64>],
    labels: &[f64],
    claim: &PtfClaim,
    perturbations: usize,
    seed: u64,
) -> Result<PtfReport> {
    check_impl(points, labels, claim, perturbations, seed, false)
}

/// Margin test at the points only, ignoring the robustness radius.
pub fn ptf_check_points(points: &[Vec<f64>], labels: &[f64], claim: &PtfClaim) -> Result<PtfReport> {
    check_impl(points, labels, claim, 0, 0, true)
}

/// `(K, M, Bsup, L)` -> `(K, 2M, 2 Bsup + 1, 1/(2L))` witnessed by `2p`, given
/// a sup bound `bsup` and l_inf-Lipschitz constant `lip` of `p` on the domain.
pub fn refine_ptf(claim: &PtfClaim, bsup: f64, lip: f64) -> Result<PtfClaim> {
    if !(lip > 0.0) || !(bsup >= 0.0) {
        return Err(Error::InvalidParameter("refine_ptf needs L > 0 and Bsup >= 0".into()));
    }
    PtfClaim::new(
        claim.k,
        2.0 * claim.m,
        2.0 * bsup + 1.0,
        (1.0 / (2.0 * lip)).min(1.0),
        claim.witness.scale(2.0),
    )
}

/// [`refine_ptf`] with the generic polynomial bounds of [`lip_sup_bounds`]
/// evaluated at the claimed norm bound `M`.
pub fn refine_ptf_generic(claim: &PtfClaim) -> Result<PtfClaim> {
    let norm = coeff_norm(&claim.witness);
    let (l, b) = lip_sup_bounds(&claim.witness);
    let scale = if norm > 0.0 { claim.m / norm } else { 1.0 };
    refine_ptf(claim, b * scale, l * scale)
}
