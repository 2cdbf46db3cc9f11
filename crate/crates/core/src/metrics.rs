//! Diagnostics over predictions and training traces.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::loss::{feasible, robust_loss, LossParams};
use crate::mat::{dot, Mat};
use crate::resnet::Field;
use crate::train::TrainTrace;

/// `Err_{S,gamma}`: fraction of samples with some (label, location) margin below `gamma`.
pub fn margin_error(predictions: &[Field], labels: &[Field], gamma: f64) -> Result<f64> {
    check_dim(labels.len(), predictions.len())?;
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let mut bad = 0usize;
    for (p, y) in predictions.iter().zip(labels) {
        check_dim(y.len(), p.len())?;
        let mut any = false;
        for (pg, yg) in p.iter().zip(y) {
            check_dim(yg.len(), pg.len())?;
            any |= pg.iter().zip(yg).any(|(a, b)| a * b < gamma);
        }
        bad += any as usize;
    }
    Ok(bad as f64 / predictions.len() as f64)
}

/// [`margin_error`] over flattened rows `s |G| + g`.
pub fn margin_error_rows(fhat: &Mat, y: &Mat, g_size: usize, gamma: f64) -> Result<f64> {
    check_dim(y.rows(), fhat.rows())?;
    check_dim(y.cols(), fhat.cols())?;
    if g_size == 0 || y.rows() % g_size != 0 {
        return Err(Error::InvalidParameter(format!("{} rows do not split into |G|={g_size}", y.rows())));
    }
    let m = y.rows() / g_size;
    if m == 0 {
        return Ok(0.0);
    }
    let bad = (0..m)
        .filter(|&s| {
            (s * g_size..(s + 1) * g_size).any(|i| fhat.row(i).iter().zip(y.row(i)).any(|(a, b)| a * b < gamma))
        })
        .count();
    Ok(bad as f64 / m as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDecay {
    pub label: usize,
    /// Layers `k` with `l^k <= 1/(2m|G|)` that have a successor.
    pub layers_below: Vec<usize>,
    /// `max (l^{k+1} - eps_opt/(1-e^{-gamma})) / l^k` over those layers with `l^k > 0`.
    pub max_ratio: Option<f64>,
    /// No ratio above the floor was observable.
    pub at_floor: bool,
    pub pass: bool,
    /// `l^{k+1} <= l^k + eps_opt` for every layer from the first one below threshold on.
    pub monotone_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub threshold: f64,
    pub gamma: f64,
    pub labels: Vec<LabelDecay>,
}

impl DecayReport {
    pub fn all_pass(&self) -> bool {
        self.labels.iter().all(|l| l.pass)
    }

    pub fn all_monotone(&self) -> bool {
        self.labels.iter().all(|l| l.monotone_after)
    }
}

fn trace_loss(t: &TrainTrace, k: usize, j: usize) -> f64 {
    if k == 0 || t.record(k, j).feasible {
        t.loss(k, j)
    } else {
        f64::INFINITY
    }
}

pub fn decay_report(trace: &TrainTrace) -> DecayReport {
    let lp = &trace.loss;
    let gamma = lp.gamma();
    let threshold = lp.decay_threshold();
    let floor = trace.eps_opt / (1.0 - (-gamma).exp());
    let decay = (-gamma).exp();
    let last = trace.depth() - 1;
    let labels = (0..trace.n)
        .map(|j| {
            let mut layers_below = Vec::new();
            let mut max_ratio: Option<f64> = None;
            let mut first_below = None;
            for k in 0..last {
                let l = trace_loss(trace, k, j);
                if l <= threshold {
                    first_below.get_or_insert(k);
                    layers_below.push(k);
                    if l > 0.0 {
                        let r = (trace_loss(trace, k + 1, j) - floor) / l;
                        if r > 0.0 {
                            max_ratio = Some(max_ratio.map_or(r, |m: f64| m.max(r)));
                        }
                    }
                }
            }
            let monotone_after = first_below.map_or(true, |k0| {
                (k0..last).all(|k| trace_loss(trace, k + 1, j) <= trace_loss(trace, k, j) + trace.eps_opt)
            });
            LabelDecay {
                label: j,
                at_floor: max_ratio.is_none(),
                pass: max_ratio.map_or(true, |r| r <= decay),
                max_ratio,
                layers_below,
                monotone_after,
            }
        })
        .collect();
    DecayReport {
        threshold,
        gamma,
        labels,
    }
}

/// First layer at which every label of each level has a positive margin on all
/// samples; `levels` are label index ranges.
pub fn acquisition_layers(trace: &TrainTrace, levels: &[std::ops::Range<usize>]) -> Vec<Option<usize>> {
    levels
        .iter()
        .map(|range| (1..trace.depth()).find(|&k| range.clone().all(|j| trace.record(k, j).worst_margin > 0.0)))
        .collect()
}

/// Acquisition layers that occur are nondecreasing in the level index.
pub fn acquisition_monotone(acq: &[Option<usize>]) -> bool {
    let seen: Vec<usize> = acq.iter().flatten().copied().collect();
    seen.windows(2).all(|w| w[0] <= w[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `loss[k][j]`, `k = 0..D-1` (row 0 is the untrained network).
    pub loss: Vec<Vec<f64>>,
    pub err_0: Vec<f64>,
    pub err_half: Vec<f64>,
    pub acquisition: Vec<Option<usize>>,
    pub acquisition_monotone: bool,
    pub decay: DecayReport,
    pub converged: bool,
}

impl MetricsReport {
    pub fn new(trace: &TrainTrace, levels: &[std::ops::Range<usize>]) -> Self {
        let loss = (0..trace.depth())
            .map(|k| (0..trace.n).map(|j| trace_loss(trace, k, j)).collect())
            .collect();
        let acquisition = acquisition_layers(trace, levels);
        MetricsReport {
            loss,
            err_0: trace.layers.iter().map(|l| l.err_0).collect(),
            err_half: trace.layers.iter().map(|l| l.err_half).collect(),
            acquisition_monotone: acquisition_monotone(&acquisition),
            acquisition,
            decay: decay_report(trace),
            converged: trace.layers.iter().all(|l| l.converged),
        }
    }

    /// Plain-text tables.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "layer  err_0     err_1/2   mean_loss");
        for (k, row) in self.loss.iter().enumerate() {
            let mean = row.iter().sum::<f64>() / row.len().max(1) as f64;
            let (e0, eh) = if k == 0 {
                (1.0, 1.0)
            } else {
                (self.err_0[k - 1], self.err_half[k - 1])
            };
            let _ = writeln!(s, "{k:<5}  {e0:<8.4}  {eh:<8.4}  {mean:.6e}");
        }
        let _ = writeln!(s, "\nlevel  acquired_at");
        for (i, a) in self.acquisition.iter().enumerate() {
            let a = a.map_or("-".to_string(), |k| k.to_string());
            let _ = writeln!(s, "{:<5}  {a}", i + 1);
        }
        let _ = writeln!(s, "acquisition nondecreasing: {}", self.acquisition_monotone);
        let _ = writeln!(
            s,
            "\ndecay (threshold {:.3e}, gamma {:.4}): pass={} monotone={}",
            self.decay.threshold,
            self.decay.gamma,
            self.decay.all_pass(),
            self.decay.all_monotone()
        );
        for l in &self.decay.labels {
            let r = l.max_ratio.map_or("floor".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(s, "  label {:<3} below={:<3} ratio={r}", l.label, l.layers_below.len());
        }
        let _ = writeln!(s, "all solves converged: {}", self.converged);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfFitReport {
    pub q_width: usize,
    pub target: String,
    pub weight_norm: f64,
    pub max_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_bound: Option<f64>,
    pub w: Vec<f64>,
}

/// Ridge fit `min_w sum (<w,phi(x)> - p(x))^2 + eps_fit |w|^2`, solved in the dual
/// `w = Phi^T (Phi Phi^T + eps_fit I)^{-1} p`.
pub fn rf_fit(features: &Mat, targets: &[f64], eps_fit: f64, target: &str) -> Result<RfFitReport> {
    let (n, q) = (features.rows(), features.cols());
    if n == 0 {
        return Err(Error::InvalidParameter("rf_fit needs at least one point".into()));
    }
    check_dim(n, targets.len())?;
    if !(eps_fit > 0.0) {
        return Err(Error::InvalidParameter(format!("eps_fit must be positive, got {eps_fit}")));
    }
    let gram = DMatrix::from_fn(n, n, |i, j| {
        dot(features.row(i), features.row(j)) + if i == j { eps_fit } else { 0.0 }
    });
    let chol = gram.cholesky().ok_or_else(|| Error::IllConditioned("ridge Gram matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    if (lo / hi).powi(2) < 1e-14 {
        return Err(Error::IllConditioned(format!("ridge Gram condition estimate {:.3e}", (hi / lo).powi(2))));
    }
    let alpha = chol.solve(&DVector::from_column_slice(targets));
    let w = features.matvec_t(alpha.as_slice());
    let max_error = (0..n)
        .map(|i| (dot(&w, features.row(i)) - targets[i]).abs())
        .fold(0.0f64, f64::max);
    Ok(RfFitReport {
        q_width: q,
        target: target.into(),
        weight_norm: dot(&w, &w).sqrt(),
        max_error,
        delta_bound: None,
        w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustAudit {
    /// Surrogate value; meaningful as the true loss only when `feasible`.
    pub value: f64,
    pub feasible: bool,
}

/// Sample-averaged robust loss `(1/N) sum l^{rob,eps}(y p)`.
pub fn robust_loss_audit(predictions: &[f64], labels: &[f64], eps: f64, lp: &LossParams) -> Result<RobustAudit> {
    check_dim(labels.len(), predictions.len())?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("robust radius must be >= 0, got {eps}")));
    }
    let n = predictions.len().max(1) as f64;
    let mut value = 0.0;
    let mut ok = true;
    for (p, y) in predictions.iter().zip(labels) {
        let z = p * y;
        value += robust_loss(z, eps, lp);
        ok &= feasible(z) && feasible(z - eps);
    }
    Ok(RobustAudit {
        value: value / n,
        feasible: ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::margin_loss;
    use crate::train::{LabelRecord, LayerSummary, SolveStatus, TRACE_VERSION};

    fn field(v: &[f64]) -> Field {
        vec![v.to_vec()]
    }

    #[test]
    fn margin_error_cases() {
        let y: Vec<Field> = vec![field(&[1.0, -1.0]), field(&[-1.0, -1.0]), field(&[1.0, 1.0])];
        assert_eq!(margin_error(&y, &y, 1.0).unwrap(), 0.0);
        let zero: Vec<Field> = vec![field(&[0.0, 0.0]); 3];
        assert_eq!(margin_error(&zero, &y, 0.1).unwrap(), 1.0);
        let mut one_bad = y.clone();
        one_bad[1][0][1] = 0.5;
        assert!((margin_error(&one_bad, &y, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(margin_error(&one_bad, &y, 0.0).unwrap() <= margin_error(&one_bad, &y, 0.6).unwrap());
        let fm = Mat::from_vec(3, 2, one_bad.iter().flat_map(|f| f[0].clone()).collect()).unwrap();
        let ym = Mat::from_vec(3, 2, y.iter().flat_map(|f| f[0].clone()).collect()).unwrap();
        assert_eq!(margin_error_rows(&fm, &ym, 1, 0.0).unwrap(), margin_error(&one_bad, &y, 0.0).unwrap());
    }

    pub(crate) fn synthetic_trace(losses: &[Vec<f64>], lp: LossParams, eps_opt: f64) -> TrainTrace {
        let n = losses[0].len();
        let records = losses[1..]
            .iter()
            .enumerate()
            .flat_map(|(k, row)| {
                row.iter().enumerate().map(move |(j, &l)| LabelRecord {
                    layer: k + 1,
                    label: j,
                    loss: l,
                    worst_margin: if l < 0.5 { 0.1 } else { -0.1 },
                    feasible: true,
                    cert: 0.0,
                    iters: 1,
                    status: SolveStatus::Converged,
                })
            })
            .collect();
        TrainTrace {
            version: TRACE_VERSION,
            n,
            eps_opt,
            theory_eps_opt: 0.0,
            manifest_hash: None,
            loss: lp,
            initial_loss: losses[0].clone(),
            layers: (1..losses.len())
                .map(|k| LayerSummary {
                    layer: k,
                    err_0: 0.0,
                    err_half: 0.0,
                    converged: true,
                })
                .collect(),
            records,
        }
    }

    #[test]
    fn decay_exact_factor_passes() {
        let lp = LossParams::new(1.0, 1.0, 10, 1).unwrap();
        let g = lp.gamma();
        let floor = 1e-9 / (1.0 - (-g).exp());
        let mut l = 0.04;
        let mut rows = vec![vec![1.0]];
        for _ in 0..6 {
            rows.push(vec![l]);
            l = l * (-g).exp() + floor;
        }
        let rep = decay_report(&synthetic_trace(&rows, lp, 1e-9));
        assert!(rep.all_pass() && rep.all_monotone(), "{rep:?}");
        assert!(!rep.labels[0].at_floor);
        // a trace that stalls fails the flag
        let mut stall = rows.clone();
        stall[5][0] = stall[4][0];
        assert!(!decay_report(&synthetic_trace(&stall, lp, 1e-9)).all_pass());
    }

    #[test]
    fn decay_at_floor_after_perfect_fit() {
        let lp = LossParams::new(1.0, 1.0, 10, 1).unwrap();
        let rows = vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]];
        let t = synthetic_trace(&rows, lp, 1e-4);
        let rep = decay_report(&t);
        assert!(rep.labels.iter().all(|l| l.at_floor && l.pass));
        assert_eq!(rep, decay_report(&t));
        let m = MetricsReport::new(&t, &[0..1, 1..2]);
        assert_eq!(m.acquisition, vec![Some(1), Some(1)]);
        assert!(m.render().contains("acquisition nondecreasing: true"));
    }

    #[test]
    fn acquisition_order() {
        assert!(acquisition_monotone(&[Some(1), None, Some(3)]));
        assert!(!acquisition_monotone(&[Some(2), Some(1)]));
    }

    #[test]
    fn rf_fit_zero_and_exact() {
        let phi = Mat::from_fn(5, 20, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let r = rf_fit(&phi, &[0.0; 5], 1e-8, "zero").unwrap();
        assert_eq!(r.max_error, 0.0);
        assert_eq!(r.weight_norm, 0.0);
        let t = [0.3, -0.2, 0.9, 0.0, -1.0];
        let r = rf_fit(&phi, &t, 1e-10, "any").unwrap();
        assert!(r.max_error < 1e-6, "{}", r.max_error);
        let dup = Mat::from_fn(3, 2, |i, j| if i < 2 { 1.0 + j as f64 } else { 0.5 });
        assert!(matches!(rf_fit(&dup, &[1.0, 1.0, 0.0], 1e-30, "dup"), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn robust_audit_cases() {
        let lp = LossParams::new(2.0, 0.5, 4, 1).unwrap();
        let p = [0.9, -0.3, 0.5, 0.2];
        let y = [1.0, -1.0, 1.0, 1.0];
        let a = robust_loss_audit(&p, &y, 0.0, &lp).unwrap();
        let direct = p.iter().zip(&y).map(|(a, b)| margin_loss(a * b, &lp)).sum::<f64>() / 4.0;
        assert_eq!(a.value, direct);
        let ones = robust_loss_audit(&[1.0; 4], &[1.0; 4], 0.2, &lp).unwrap();
        assert_eq!(ones.value, 0.0);
        assert!(ones.feasible);
        assert!(!robust_loss_audit(&p, &y, 0.25, &lp).unwrap().feasible);
    }
}
