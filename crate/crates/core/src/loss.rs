//! Margin losses: `l_eta(z) = 1 - z/eta` on `[0,eta]`, `0` on `[eta,1]`, `+inf` elsewhere.
//!
//! Optimization uses a finite barrier: outside `[0,1]` the value is the boundary
//! value plus `barrier * dist(z,[0,1])`. Reported metrics use [`extended`] which
//! maps those points back to `+inf`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when auditing whether a margin lies in `[0,1]`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    #[serde(rename = "B")]
    pub b: f64,
    pub xi: f64,
    pub m: usize,
    pub g_size: usize,
    pub barrier: f64,
}

impl LossParams {
    /// Barrier slope defaults to `1e4 * max(2B, 1/xi)`.
    pub fn new(b: f64, xi: f64, m: usize, g_size: usize) -> Result<Self> {
        let barrier = Self::min_barrier(b, xi);
        Self::with_barrier(b, xi, m, g_size, barrier)
    }

    pub fn min_barrier(b: f64, xi: f64) -> f64 {
        1e4 * (2.0 * b).max(1.0 / xi)
    }

    pub fn with_barrier(b: f64, xi: f64, m: usize, g_size: usize, barrier: f64) -> Result<Self> {
        if !(b >= 1.0) || !(xi > 0.0 && xi <= 1.0) || m == 0 || g_size == 0 {
            return Err(Error::InvalidParameter(format!(
                "loss needs B >= 1, xi in (0,1], m,|G| >= 1 (got B={b}, xi={xi}, m={m}, |G|={g_size})"
            )));
        }
        let lp = LossParams {
            b,
            xi,
            m,
            g_size,
            barrier,
        };
        if !(lp.eta1() <= lp.eta2()) {
            return Err(Error::InvalidParameter(format!(
                "need 1/(2B) <= 1 - xi/2 (got {} > {})",
                lp.eta1(),
                lp.eta2()
            )));
        }
        let need = Self::min_barrier(b, xi);
        if !(barrier >= need) {
            return Err(Error::InvalidParameter(format!("barrier slope {barrier} below {need}")));
        }
        Ok(lp)
    }

    pub fn eta1(&self) -> f64 {
        1.0 / (2.0 * self.b)
    }

    pub fn eta2(&self) -> f64 {
        1.0 - self.xi / 2.0
    }

    /// `1/(4 m |G|)`
    pub fn mix(&self) -> f64 {
        1.0 / (4.0 * self.m as f64 * self.g_size as f64)
    }

    /// `(1/32) min(1/B, xi)`
    pub fn gamma(&self) -> f64 {
        (1.0 / self.b).min(self.xi) / 32.0
    }

    /// Loss threshold `1/(2 m |G|)` below which geometric decay is expected.
    pub fn decay_threshold(&self) -> f64 {
        1.0 / (2.0 * self.m as f64 * self.g_size as f64)
    }

    /// `margin_loss` as a piecewise-linear function of the margin.
    pub fn pieces(&self) -> Pieces {
        let (e1, e2, c, lam) = (self.eta1(), self.eta2(), self.mix(), self.barrier);
        Pieces {
            breaks: [0.0, e1, e2, 1.0],
            values: [1.0 + c, c * (1.0 - e1 / e2), 0.0, 0.0],
            slopes: [-lam * (1.0 + c), -1.0 / e1 - c / e2, -c / e2, 0.0, lam * (1.0 + c)],
        }
    }
}

pub fn feasible(z: f64) -> bool {
    (-FEASIBILITY_TOL..=1.0 + FEASIBILITY_TOL).contains(&z)
}

/// Surrogate value of `l_eta(z)`.
pub fn base_loss(z: f64, eta: f64, barrier: f64) -> f64 {
    if z < 0.0 {
        1.0 - barrier * z
    } else if z <= eta {
        1.0 - z / eta
    } else if z <= 1.0 {
        0.0
    } else {
        barrier * (z - 1.0)
    }
}

/// `l_{eta1}(z) + (1/(4m|G|)) l_{eta2}(z)`, surrogate value.
pub fn margin_loss(z: f64, lp: &LossParams) -> f64 {
    base_loss(z, lp.eta1(), lp.barrier) + lp.mix() * base_loss(z, lp.eta2(), lp.barrier)
}

/// `max_{0<=t<=eps} l(z - t)`; by convexity the max sits at an endpoint.
pub fn robust_loss(z: f64, eps: f64, lp: &LossParams) -> f64 {
    margin_loss(z, lp).max(margin_loss(z - eps, lp))
}

/// Maps a surrogate value back to the extended-value loss.
pub fn extended(value: f64, all_feasible: bool) -> f64 {
    if all_feasible {
        value
    } else {
        f64::INFINITY
    }
}

/// A convex piecewise-linear function given by its breakpoints, the values there,
/// and the slopes of the `breaks.len() + 1` segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pieces {
    pub breaks: [f64; 4],
    pub values: [f64; 4],
    pub slopes: [f64; 5],
}

impl Pieces {
    pub fn eval(&self, z: f64) -> f64 {
        let b = &self.breaks;
        if z <= b[0] {
            return self.values[0] + self.slopes[0] * (z - b[0]);
        }
        for k in 1..b.len() {
            if z <= b[k] {
                return self.values[k - 1] + self.slopes[k] * (z - b[k - 1]);
            }
        }
        self.values[3] + self.slopes[4] * (z - b[3])
    }

    /// Right derivative.
    pub fn slope_at(&self, z: f64) -> f64 {
        let k = self.breaks.iter().take_while(|&&b| z >= b).count();
        self.slopes[k]
    }

    /// `argmin_z  a h(z) + (z - z0)^2 / 2`.
    pub fn prox(&self, z0: f64, a: f64) -> f64 {
        for (k, &s) in self.slopes.iter().enumerate() {
            let z = z0 - a * s;
            if k > 0 && z < self.breaks[k - 1] {
                return self.breaks[k - 1];
            }
            if k == self.breaks.len() || z <= self.breaks[k] {
                return z;
            }
        }
        unreachable!()
    }

    /// Convex conjugate `h*(u) = sup_z u z - h(z)`; `+inf` outside the slope range.
    pub fn conjugate(&self, u: f64) -> f64 {
        let s = &self.slopes;
        if u < s[0] || u > s[4] {
            return f64::INFINITY;
        }
        let k = (0..4).find(|&k| u <= s[k + 1]).unwrap_or(3);
        u * self.breaks[k] - self.values[k]
    }
}

/// `1.5 x - 0.5 x^3`
pub fn cubic_push(x: f64) -> f64 {
    1.5 * x - 0.5 * x * x * x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicPushReport {
    #[serde(rename = "B")]
    pub b: f64,
    pub xi: f64,
    pub gamma: f64,
    pub points: usize,
    pub violations: usize,
    /// `max l(q(x) - gamma) - e^{-gamma} l(x)`
    pub worst_slack: f64,
}

/// Checks `l(q(x) - gamma) <= e^{-gamma} l(x)` on an even grid of `[1/(4B), 1]`,
/// with `l` the extended-value margin loss (points landing outside `[0,1]` count as violations).
pub fn cubic_push_check(lp: &LossParams, points: usize) -> CubicPushReport {
    let gamma = lp.gamma();
    let decay = (-gamma).exp();
    let lo = 1.0 / (4.0 * lp.b);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..points {
        let x = if points == 1 {
            lo
        } else {
            lo + (1.0 - lo) * i as f64 / (points - 1) as f64
        };
        let z = cubic_push(x) - gamma;
        let lhs = extended(margin_loss(z, lp), feasible(z));
        let rhs = decay * margin_loss(x, lp);
        let slack = lhs - rhs;
        worst = worst.max(slack);
        if !(lhs <= rhs) {
            violations += 1;
        }
    }
    CubicPushReport {
        b: lp.b,
        xi: lp.xi,
        gamma,
        points,
        violations,
        worst_slack: worst,
    }
}
