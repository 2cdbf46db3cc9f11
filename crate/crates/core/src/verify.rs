//! Property suites behind the `verify-*` subcommands.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hermite::{Activation, ActivationSpec, GaussHermite};
use crate::hierarchy::{alpha_dk, alpha_dk_exact, central_binomial_ratio, gen_braindump, ProximityMap};
use crate::kernel::{beta_threshold, delta_bound, kernel_analytic, kernel_mc, KernelQuery};
use crate::loss::{base_loss, cubic_push_check, margin_loss, CubicPushReport, LossParams};
use crate::mat::Mat;
use crate::metrics::{rf_fit, RfFitReport};
use crate::resnet::{features, init_network, OrthogonalMode};
use crate::rng::{self, Rng};

/// Random vector with `|x|^2 / n` uniform in `[0.5, 1.5]`, which keeps the
/// kernel series inside its convergence domain.
pub fn random_query_vector(rng: &mut Rng, n: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = (n as f64 * rng.gen_range(0.5..1.5)).sqrt();
    g.into_iter().map(|v| v * target / norm).collect()
}

pub fn boolean_vector(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCell {
    pub n: usize,
    pub beta: f64,
    pub queries: usize,
    pub agree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSuite {
    pub orthonormality_error: f64,
    pub cells: Vec<KernelCell>,
    /// `(eps, beta_threshold(eps))`
    pub thresholds: Vec<(f64, f64)>,
    pub threshold_monotone: bool,
    /// `(q, delta)` at `eps = 0.1`, `beta = beta_threshold(0.1)`.
    pub deltas: Vec<(usize, f64)>,
    pub delta_monotone: bool,
    pub pass: bool,
}

/// Orthonormality, analytic-vs-MC kernel agreement (>= 95% of queries within
/// `3 stderr + tail`), and monotonicity of `beta_threshold` and `delta_bound`.
pub fn kernel_suite(queries: usize, mc_samples: usize, seed: u64) -> Result<KernelSuite> {
    let spec = ActivationSpec::new(Activation::Tanh, 2)?;
    let orthonormality_error = GaussHermite::new(64)?.orthonormality_error(12);
    let mut rng = rng::stream(seed, rng::STREAM_VERIFICATION);
    let mut cells = Vec::new();
    for &n in &[4usize, 16] {
        for &beta in &[0.8, 0.95] {
            let mut agree = 0;
            for i in 0..queries {
                let x = random_query_vector(&mut rng, n);
                let y = random_query_vector(&mut rng, n);
                let q = KernelQuery::new(x, y, beta, spec.s_max())?;
                let a = kernel_analytic(&q, &spec)?;
                let mc = kernel_mc(&q, &spec, mc_samples, rng::derive_u64(seed, &format!("kernel-mc/{n}/{beta}/{i}")))?;
                if (a.value - mc.estimate).abs() <= 3.0 * mc.stderr + a.tail {
                    agree += 1;
                }
            }
            cells.push(KernelCell {
                n,
                beta,
                queries,
                agree,
            });
        }
    }
    let thresholds = [0.02, 0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&e| Ok((e, beta_threshold(&spec, e)?)))
        .collect::<Result<Vec<_>>>()?;
    let threshold_monotone = thresholds.windows(2).all(|w| w[1].1 <= w[0].1);
    let b = beta_threshold(&spec, 0.1)?;
    let deltas = [1usize << 10, 1 << 14, 1 << 18, 1 << 22, 1 << 26]
        .iter()
        .map(|&q| Ok((q, delta_bound(0.1, b, q, 1.0, 8, &spec)?)))
        .collect::<Result<Vec<_>>>()?;
    let delta_monotone = deltas.windows(2).all(|w| w[1].1 <= w[0].1);
    let need = (queries as f64 * 0.95).ceil() as usize;
    let pass = orthonormality_error <= 1e-8
        && cells.iter().all(|c| c.agree >= need)
        && threshold_monotone
        && delta_monotone;
    Ok(KernelSuite {
        orthonormality_error,
        cells,
        thresholds,
        threshold_monotone,
        deltas,
        delta_monotone,
        pass,
    })
}

/// Random degree-`<= 2` polynomial on `{+-1}^n`, scaled so `max |p| = 1` on the cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub n: usize,
    pub constant: f64,
    pub linear: Vec<f64>,
    /// `(i, j, c)` with `i < j`.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Quadratic {
    pub fn random(rng: &mut Rng, n: usize) -> Self {
        let mut q = Quadratic {
            n,
            constant: rng.gen_range(-1.0..1.0),
            linear: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            pairs: (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| (i, j, rng.gen_range(-1.0..1.0)))
                .collect(),
        };
        let mut max = 0.0f64;
        for code in 0..1u64 << n {
            let x: Vec<f64> = (0..n).map(|b| if code >> b & 1 == 1 { 1.0 } else { -1.0 }).collect();
            max = max.max(q.eval(&x).abs());
        }
        q.constant /= max;
        q.linear.iter_mut().for_each(|v| *v /= max);
        q.pairs.iter_mut().for_each(|p| p.2 /= max);
        q
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant
            + self.linear.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            + self.pairs.iter().map(|&(i, j, c)| c * x[i] * x[j]).sum::<f64>()
    }
}

/// Ridge parameter of the random-features fit, per feature (`eps_fit = RF_RIDGE q`).
pub const RF_RIDGE: f64 = 1e-8;

/// `Phi^0` of a fresh beta-Xavier layer on `points`, one row per point.
pub fn feature_matrix(points: &[Vec<f64>], q_width: usize, beta: f64, spec: &ActivationSpec, seed: u64) -> Result<Mat> {
    let n = points[0].len();
    let net = init_network(n, 1, q_width, 2, &ProximityMap::singleton(), beta, OrthogonalMode::Identity, spec.clone(), seed)?;
    let mut data = Vec::with_capacity(points.len() * q_width);
    for x in points {
        data.extend(features(&net, 1, &[x.clone()])?.remove(0));
    }
    Mat::from_vec(points.len(), q_width, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfRun {
    pub seed: u64,
    pub report: RfFitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfSweep {
    pub n: usize,
    pub points: usize,
    pub beta: f64,
    pub eps: f64,
    /// `(q_width, median max-error, runs with error <= eps)`
    pub summary: Vec<(usize, f64, usize)>,
    pub runs: Vec<RfRun>,
    pub pass: bool,
}

/// Ridge random-features fits of random normalized quadratics; passes when the
/// widest fit is within `eps` on >= 90% of seeds and the median error strictly
/// improves from the narrowest to the widest width.
pub fn rf_sweep(n: usize, points: usize, widths: &[usize], seeds: u64, eps: f64, seed: u64) -> Result<RfSweep> {
    let spec = ActivationSpec::new(Activation::Tanh, 2)?;
    let beta = beta_threshold(&spec, eps)?;
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for &q in widths {
        let mut errs = Vec::new();
        for s in 0..seeds {
            let mut rng = rng::substream(seed, "rf-target", s);
            let target = Quadratic::random(&mut rng, n);
            let xs: Vec<Vec<f64>> = (0..points).map(|_| boolean_vector(&mut rng, n)).collect();
            let t: Vec<f64> = xs.iter().map(|x| target.eval(x)).collect();
            let phi = feature_matrix(&xs, q, beta, &spec, rng::derive_u64(seed, &format!("rf-init/{s}")))?;
            let mut report = rf_fit(&phi, &t, RF_RIDGE * q as f64, &format!("quadratic/{s}"))?;
            report.delta_bound = Some(delta_bound(eps, beta, q, 1.0, n, &spec)?);
            report.w.clear();
            errs.push(report.max_error);
            runs.push(RfRun { seed: s, report });
        }
        let mut sorted = errs.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        summary.push((q, median, errs.iter().filter(|&&e| e <= eps).count()));
    }
    let last = summary.last().copied().unwrap_or((0, f64::NAN, 0));
    let first = summary.first().copied().unwrap_or(last);
    let pass = last.2 as f64 >= 0.9 * seeds as f64 && (summary.len() < 2 || last.1 < first.1);
    Ok(RfSweep {
        n,
        points,
        beta,
        eps,
        summary,
        runs,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainDumpSuite {
    pub d: usize,
    pub k: usize,
    pub q_labels: usize,
    pub runs: usize,
    pub reconstruction_ok: usize,
    pub worst_reconstruction: f64,
    /// Coordinates (over all runs) whose majority correlation is within 4 stderr of `alpha x_j`.
    pub correlation_ok: usize,
    pub correlation_total: usize,
    pub alpha_10_3: (u128, u128),
    /// Largest `|ratio - 1|` of the central binomial asymptotics over `k in 20..=200`.
    pub binomial_worst: f64,
    pub pass: bool,
}

pub fn braindump_suite(d: usize, k: usize, q_labels: usize, runs: usize, seed: u64) -> Result<BrainDumpSuite> {
    let model = gen_braindump(d, 1, 2, k, q_labels, seed)?;
    let alpha = alpha_dk(d, k)?;
    let mut rng = rng::stream(seed, rng::STREAM_VERIFICATION);
    let (mut rec_ok, mut worst, mut corr_ok, mut corr_total) = (0, 0.0f64, 0, 0);
    for _ in 0..runs {
        let x = boolean_vector(&mut rng, d);
        let e = model.reconstruction_error(1, &x)?;
        worst = worst.max(e);
        rec_ok += (e <= 0.25) as usize;
        for (j, (mean, se)) in model.majority_correlation(1, &x)?.into_iter().enumerate() {
            corr_total += 1;
            corr_ok += ((mean - alpha * x[j]).abs() <= 4.0 * se) as usize;
        }
    }
    let alpha_10_3 = alpha_dk_exact(10, 3)?;
    let binomial_worst = (20..=200).map(|k| (central_binomial_ratio(k) - 1.0).abs()).fold(0.0, f64::max);
    let pass = rec_ok as f64 >= 0.95 * runs as f64
        && corr_ok as f64 >= 0.99 * corr_total as f64
        && alpha_10_3 == (3, 20)
        && binomial_worst <= 0.02;
    Ok(BrainDumpSuite {
        d,
        k,
        q_labels,
        runs,
        reconstruction_ok: rec_ok,
        worst_reconstruction: worst,
        correlation_ok: corr_ok,
        correlation_total: corr_total,
        alpha_10_3,
        binomial_worst,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSuite {
    pub unit_checks_ok: bool,
    pub grid: Vec<CubicPushReport>,
    pub pass: bool,
}

/// The `(B, xi)` grid of the cubic-push check.
pub const CUBIC_PUSH_GRID: [(f64, f64); 4] = [(1.0, 1.0), (2.0, 0.5), (3.0, 0.25), (10.0, 0.1)];

/// Cubic-push inequality on [`CUBIC_PUSH_GRID`] for several mixture weights,
/// plus the closed-form loss values.
pub fn loss_suite(points: usize) -> Result<LossSuite> {
    let mut grid = Vec::new();
    for &(b, xi) in &CUBIC_PUSH_GRID {
        for &m in &[1usize, 100, 2000] {
            grid.push(cubic_push_check(&LossParams::new(b, xi, m, 1)?, points));
        }
    }
    let lp = LossParams::new(2.0, 0.5, 10, 2)?;
    let c = 1.0 / 80.0;
    let e1 = lp.eta1();
    let unit_checks_ok = base_loss(0.0, 0.3, lp.barrier) == 1.0
        && base_loss(0.3, 0.3, lp.barrier) == 0.0
        && base_loss(1.0, 0.3, lp.barrier) == 0.0
        && (margin_loss(0.0, &lp) - (1.0 + c)).abs() < 1e-15
        && margin_loss(1.0, &lp) == 0.0
        && (margin_loss(e1, &lp) - c * (1.0 - e1 / lp.eta2())).abs() < 1e-15;
    let pass = unit_checks_ok && grid.iter().all(|r| r.violations == 0);
    Ok(LossSuite {
        unit_checks_ok,
        grid,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_vectors_stay_in_domain() {
        let mut rng = rng::stream(1, "t");
        for _ in 0..100 {
            let x = random_query_vector(&mut rng, 7);
            let r2 = x.iter().map(|v| v * v).sum::<f64>() / 7.0;
            assert!((0.5..=1.5).contains(&r2));
        }
    }

    #[test]
    fn quadratic_is_normalized() {
        let mut rng = rng::stream(2, "t");
        let q = Quadratic::random(&mut rng, 5);
        let mut max = 0.0f64;
        for code in 0..32u64 {
            let x: Vec<f64> = (0..5).map(|b| if code >> b & 1 == 1 { 1.0 } else { -1.0 }).collect();
            max = max.max(q.eval(&x).abs());
        }
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_suites_run() {
        let k = kernel_suite(4, 20_000, 1).unwrap();
        assert!(k.orthonormality_error < 1e-8 && k.threshold_monotone && k.delta_monotone);
        let l = loss_suite(1000).unwrap();
        assert!(l.pass, "{l:?}");
        let b = braindump_suite(16, 3, 2000, 5, 1).unwrap();
        assert_eq!(b.alpha_10_3, (3, 20));
        let r = rf_sweep(4, 32, &[64], 2, 0.1, 1).unwrap();
        assert_eq!(r.runs.len(), 2);
    }
}
