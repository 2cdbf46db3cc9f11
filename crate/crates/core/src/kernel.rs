//! The random-neuron kernel `k(x,y) = E[sigma(w.x+b) sigma(w.y+b)]` for a
//! beta-Xavier pair, both as a Hermite series and by Monte Carlo, plus the
//! beta/delta bound formulas used to pick the bias magnitude.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::hermite::{a_shifted, ActivationSpec, DEFAULT_TAIL_TOL};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelQuery {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub beta: f64,
    /// Truncation index `S` of the series.
    pub series_terms: usize,
}

impl KernelQuery {
    pub fn new(x: Vec<f64>, y: Vec<f64>, beta: f64, series_terms: usize) -> Result<Self> {
        let q = KernelQuery {
            x,
            y,
            beta,
            series_terms,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.x.len(), self.y.len())?;
        if self.x.is_empty() {
            return Err(Error::InvalidParameter("kernel query needs n >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!("beta {} outside [0,1]", self.beta)));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("kernel query inputs must be finite".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// `((1-beta^2) <x,y>/n + beta^2)`
    fn cross(&self, a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
        (1.0 - self.beta * self.beta) * dot / self.n() as f64 + self.beta * self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    /// Bound on `|value - k(x,y)|` from series truncation and from the
    /// truncated shifted-coefficient sums.
    pub tail: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// `sum_{s<=S} a_s(r_x) a_s(r_y) c^s` with `c = (1-beta^2)<x,y>/n + beta^2`
/// and `r_x = sqrt((1-beta^2)|x|^2/n + beta^2)`.
pub fn kernel_analytic(q: &KernelQuery, spec: &ActivationSpec) -> Result<KernelValue> {
    q.validate()?;
    if q.series_terms > spec.s_max() {
        return Err(Error::InvalidParameter(format!(
            "series_terms {} exceeds S_max {}",
            q.series_terms,
            spec.s_max()
        )));
    }
    let rx = q.cross(&q.x, &q.x).sqrt();
    let ry = q.cross(&q.y, &q.y).sqrt();
    let c = q.cross(&q.x, &q.y);
    if rx == 0.0 || ry == 0.0 {
        // a degenerate pre-activation is the constant 0
        let s0 = spec.eval(0.0);
        return Ok(KernelValue {
            value: s0 * s0,
            tail: 0.0,
        });
    }
    let rho = c / (rx * ry);
    if rho.abs() > 1.0 + 1e-12 {
        return Err(Error::CorrelationOutOfRange(rho));
    }
    let rho = rho.clamp(-1.0, 1.0);

    let shifted = |r: f64| -> Result<Vec<(f64, f64)>> {
        (0..=q.series_terms)
            .map(|s| a_shifted(s, r, spec, DEFAULT_TAIL_TOL).map(|v| (v.value, v.tail)))
            .collect()
    };
    let ax = shifted(rx)?;
    let ay = shifted(ry)?;

    let mut value = 0.0;
    let mut coeff_err = 0.0;
    let mut cs = 1.0;
    for s in 0..=q.series_terms {
        let (vx, ex) = ax[s];
        let (vy, ey) = ay[s];
        value += vx * vy * cs;
        coeff_err += (ex * vy.abs() + ey * vx.abs() + ex * ey) * cs.abs();
        cs *= c;
    }

    // Hermite mass of sigma(r X) above index S, made conservative by
    // shrinking each computed coefficient by its error bound.
    let residual = |r: f64, a: &[(f64, f64)]| -> Result<f64> {
        let total = spec.scaled_second_moment(r)?;
        let mut head = 0.0;
        let mut rs = 1.0;
        for &(v, e) in a {
            let lower = (v.abs() - e).max(0.0) * rs;
            head += lower * lower;
            rs *= r;
        }
        Ok((total - head).max(0.0) + 1e-15 * total)
    };
    let tx = residual(rx, &ax)?;
    let ty = residual(ry, &ay)?;
    let series_tail = (tx * ty).sqrt() * rho.abs().powi(q.series_terms as i32 + 1);

    Ok(KernelValue {
        value,
        tail: series_tail + coeff_err,
    })
}

/// Monte-Carlo estimate over i.i.d. `w ~ N(0,(1-beta^2)/n I)`, `b ~ N(0,beta^2)`.
pub fn kernel_mc(q: &KernelQuery, spec: &ActivationSpec, samples: usize, seed: u64) -> Result<McEstimate> {
    q.validate()?;
    if samples == 0 {
        return Err(Error::InvalidParameter("kernel_mc needs samples >= 1".into()));
    }
    let n = q.n();
    let w_sd = ((1.0 - q.beta * q.beta) / n as f64).sqrt();
    let mut rng = Rng::seed_from_u64(seed);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 0..samples {
        let mut ux = 0.0;
        let mut uy = 0.0;
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            ux += z * q.x[i];
            uy += z * q.y[i];
        }
        let b: f64 = StandardNormal.sample(&mut rng);
        let b = q.beta * b;
        let v = spec.eval(w_sd * ux + b) * spec.eval(w_sd * uy + b);
        let delta = v - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = if samples > 1 { m2 / (samples - 1) as f64 } else { 0.0 };
    Ok(McEstimate {
        estimate: mean,
        stderr: (var / samples as f64).sqrt(),
    })
}

/// `(1-beta^2)/sqrt(1-2(1-beta^2)^2)`, decreasing on `[3/4, 1]`.
fn beta_shape(beta: f64) -> f64 {
    let t = 1.0 - beta * beta;
    t / (1.0 - 2.0 * t * t).sqrt()
}

/// Left-hand side of the beta condition:
/// `(|sigma| / |a_K'|) 2^{(K'+2)/2} (1-beta^2)/sqrt(1-2(1-beta^2)^2)`.
pub fn beta_condition(spec: &ActivationSpec, beta: f64) -> f64 {
    let kp = spec.kprime as f64;
    spec.l2_norm / spec.a_kprime().abs() * 2f64.powf((kp + 2.0) / 2.0) * beta_shape(beta)
}

/// Minimal `beta in [3/4, 1)` with `beta_condition(beta) <= eps/2`, by bisection to 1e-10.
pub fn beta_threshold(spec: &ActivationSpec, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("beta_threshold needs eps > 0, got {eps}")));
    }
    let target = eps / 2.0;
    let ok = |b: f64| beta_condition(spec, b) <= target;
    let mut lo = 0.75;
    if ok(lo) {
        return Ok(lo);
    }
    let mut hi = 1.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi >= 1.0 || !ok(hi) {
        return Err(Error::Numerical(format!("no beta < 1 meets the threshold for eps={eps}")));
    }
    Ok(hi)
}

/// Failure probability bound for approximating a degree-K polynomial of
/// coefficient norm `m_norm` with `q` random neurons in dimension `n`.
///
/// Returns 1 when the width is too small for the norm condition, and
/// `min(1, 2 exp(-q a^4 beta^{4K'-4K} (1-beta^2)^{2K} eps^4 / (512 n^{2K} M^4 |sigma|_inf^4)))`
/// otherwise. The cap keeps the bound nonincreasing in `q` across the switch.
pub fn delta_bound(eps: f64, beta: f64, q: usize, m_norm: f64, n: usize, spec: &ActivationSpec) -> Result<f64> {
    if !(eps > 0.0) || q == 0 || !(m_norm > 0.0) || n == 0 {
        return Err(Error::InvalidParameter("delta_bound arguments must be positive".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta_bound needs beta in (0,1), got {beta}")));
    }
    let k = spec.k as i32;
    let kp = spec.kprime as i32;
    let a = spec.a_kprime();
    let sup = spec.sup_norm;
    let qf = q as f64;
    let nf = n as f64;
    let omb = 1.0 - beta * beta;

    let norm_cond = (4.0 * sup / (eps * qf.sqrt()))
        * (1.0 / (a * a * beta.powi(2 * kp - 2 * k)))
        * (nf / omb).powi(k)
        * m_norm
        * m_norm;
    if norm_cond > 1.0 {
        return Ok(1.0);
    }
    let expo = qf * a.powi(4) * beta.powi(4 * kp - 4 * k) * omb.powi(2 * k) * eps.powi(4)
        / (512.0 * nf.powi(2 * k) * m_norm.powi(4) * sup.powi(4));
    Ok((2.0 * (-expo).exp()).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{hermite_eval, Activation};
    use nalgebra::DMatrix;
    use rand::Rng as _;

    fn tanh_spec(k: usize) -> ActivationSpec {
        ActivationSpec::new(Activation::Tanh, k).unwrap()
    }

    #[test]
    fn beta_one_gives_full_norm() {
        let spec = tanh_spec(1);
        let q = KernelQuery::new(vec![0.3, -2.0], vec![1.0, 5.0], 1.0, spec.s_max()).unwrap();
        let v = kernel_analytic(&q, &spec).unwrap();
        let parseval: f64 = spec.hermite_coeffs.iter().map(|a| a * a).sum();
        assert!((v.value - parseval).abs() < 1e-12);
        assert!((v.value - spec.l2_norm.powi(2)).abs() <= 1e-6 + v.tail);
    }

    #[test]
    fn beta_zero_orthogonal_unit_inputs() {
        let spec = ActivationSpec::new(Activation::Table {
            knots: vec![-1.0, 1.0],
            values: vec![0.0, 1.0],
        }, 1)
        .unwrap();
        let q = KernelQuery::new(vec![1.0, 1.0], vec![1.0, -1.0], 0.0, 16).unwrap();
        let v = kernel_analytic(&q, &spec).unwrap();
        let a0 = spec.hermite_coeffs[0];
        assert!((v.value - a0 * a0).abs() < 1e-14);
    }

    #[test]
    fn correlation_out_of_range_cannot_arise_from_valid_inputs() {
        let spec = tanh_spec(1);
        let q = KernelQuery::new(vec![1.0, 0.0], vec![1.0, 0.0], 0.3, 8).unwrap();
        // x = y gives rho = 1 exactly, which is allowed
        assert!(kernel_analytic(&q, &spec).is_ok());
    }

    #[test]
    fn analytic_matches_mc_on_a_few_queries() {
        let spec = tanh_spec(1);
        let mut rng = Rng::seed_from_u64(11);
        for t in 0..6 {
            let n = 5;
            let x: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let q = KernelQuery::new(x, y, 0.9, spec.s_max()).unwrap();
            let a = kernel_analytic(&q, &spec).unwrap();
            let m = kernel_mc(&q, &spec, 40_000, 100 + t).unwrap();
            assert!(
                (a.value - m.estimate).abs() <= 4.0 * m.stderr + a.tail,
                "{} vs {} +- {}",
                a.value,
                m.estimate,
                m.stderr
            );
        }
    }

    #[test]
    fn mc_diagonal_is_nonnegative_and_deterministic() {
        let spec = tanh_spec(1);
        let q = KernelQuery::new(vec![0.5, -0.5, 1.0], vec![0.5, -0.5, 1.0], 0.7, 8).unwrap();
        let a = kernel_mc(&q, &spec, 2000, 3).unwrap();
        let b = kernel_mc(&q, &spec, 2000, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.estimate >= -3.0 * a.stderr);
    }

    #[test]
    fn gram_matrix_is_psd() {
        let spec = tanh_spec(1);
        let mut rng = Rng::seed_from_u64(5);
        let n = 6;
        let pts: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect();
        let gram = DMatrix::from_fn(8, 8, |i, j| {
            let q = KernelQuery::new(pts[i].clone(), pts[j].clone(), 0.85, spec.s_max()).unwrap();
            kernel_analytic(&q, &spec).unwrap().value
        });
        let eig = gram.symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-8);
    }

    #[test]
    fn hermite_derivative_identity() {
        for s in 1..=8usize {
            for &x in &[-1.7, -0.3, 0.4, 1.1, 2.5] {
                let h = 1e-5;
                let fd = (hermite_eval(s, x + h) - hermite_eval(s, x - h)) / (2.0 * h);
                let exact = (s as f64).sqrt() * hermite_eval(s - 1, x);
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "s={s} x={x}");
            }
        }
    }

    #[test]
    fn beta_threshold_floor_and_monotone() {
        let spec = tanh_spec(2);
        assert_eq!(beta_threshold(&spec, 1e6).unwrap(), 0.75);
        let mut prev = 0.0;
        for eps in [1.0, 0.5, 0.25, 0.1, 0.05, 0.01] {
            let b = beta_threshold(&spec, eps).unwrap();
            assert!(b >= prev);
            assert!(beta_condition(&spec, b) <= eps / 2.0);
            prev = b;
        }
        assert!(beta_threshold(&spec, 0.0).is_err());
    }

    #[test]
    fn delta_bound_branches() {
        let spec = tanh_spec(1);
        assert_eq!(delta_bound(0.1, 0.9, 10, 1.0, 4, &spec).unwrap(), 1.0);
        let q = 20_000_000usize;
        let d1 = delta_bound(0.5, 0.9, q, 1.0, 2, &spec).unwrap();
        let d2 = delta_bound(0.5, 0.9, 2 * q, 1.0, 2, &spec).unwrap();
        assert!(d1 < 1.0);
        assert!((d2 - d1 * d1 / 2.0).abs() <= 1e-12 * d1);
    }
}
