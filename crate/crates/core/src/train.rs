//! Layerwise training. At layer `k` the prediction for label `j` is
//! `f^{k-1}_j + <w, Phi^{k-1}>` with `w` the `j`-th row of `W^D W^k_2`, so each
//! label is an independent ridge-regularized piecewise-linear problem
//! `F_j(w) = (1/(m|G|)) sum l(y (r + <w,phi>)) + (eps_opt/2)|w|^2`.
//!
//! The solver is stochastic dual coordinate ascent with exact one-dimensional
//! prox steps; its duality gap bounds `F_j(w) - min F_j`.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Dataset;
use crate::loss::{feasible, margin_loss, LossParams};
use crate::mat::{dot, Mat};
use crate::metrics::margin_error_rows;
use crate::resnet::{Field, ResNetParams};
use crate::rng;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub eps_opt: f64,
    /// Epoch cap per label solve.
    pub max_iters: usize,
    #[serde(default = "default_true")]
    pub parallel_labels: bool,
    /// Master seed; each (layer, label) solve gets its own sub-stream.
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eps_opt: 1e-4,
            max_iters: 2000,
            parallel_labels: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_opt > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParameter("eps_opt must be > 0 and max_iters >= 1".into()));
        }
        Ok(())
    }

    /// `(1 - e^{-gamma}) xi / (16 m^2 |G|^2)`; reported, not enforced.
    pub fn theory_eps_opt(lp: &LossParams) -> f64 {
        let mg = (lp.m * lp.g_size) as f64;
        (1.0 - (-lp.gamma()).exp()) * lp.xi / (16.0 * mg * mg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
}

impl SolveStatus {
    fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "converged" => Some(SolveStatus::Converged),
            "max_iters" => Some(SolveStatus::MaxIters),
            _ => None,
        }
    }
}

/// `F(w)` and a subgradient (right derivatives at kinks).
pub fn layer_objective(
    w: &[f64],
    phi: &Mat,
    residual: &[f64],
    labels: &[f64],
    lp: &LossParams,
    eps_opt: f64,
) -> (f64, Vec<f64>) {
    let pieces = lp.pieces();
    let n = phi.rows() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; w.len()];
    for i in 0..phi.rows() {
        let row = phi.row(i);
        let z = labels[i] * (residual[i] + dot(w, row));
        value += pieces.eval(z);
        let s = pieces.slope_at(z) * labels[i] / n;
        if s != 0.0 {
            for (g, &p) in grad.iter_mut().zip(row) {
                *g += s * p;
            }
        }
    }
    let ww = dot(w, w);
    for (g, &wi) in grad.iter_mut().zip(w) {
        *g += eps_opt * wi;
    }
    (value / n + 0.5 * eps_opt * ww, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSolve {
    pub w: Vec<f64>,
    pub objective: f64,
    /// Duality-gap upper bound on `F(w) - min F`.
    pub cert: f64,
    pub iters: usize,
    pub status: SolveStatus,
}

fn margins(w: &[f64], phi: &Mat, residual: &[f64], labels: &[f64]) -> Vec<f64> {
    (0..phi.rows()).map(|i| labels[i] * (residual[i] + dot(w, phi.row(i)))).collect()
}

fn all_feasible(z: &[f64]) -> bool {
    z.iter().all(|&v| feasible(v))
}

/// Minimizes the layer objective for one label.
pub fn solve_label(
    phi: &Mat,
    residual: &[f64],
    labels: &[f64],
    lp: &LossParams,
    cfg: &TrainConfig,
    stream_index: u64,
) -> Result<LabelSolve> {
    cfg.validate()?;
    let n = phi.rows();
    if n == 0 || residual.len() != n || labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: residual.len().min(labels.len()),
        });
    }
    Ok(sdca(phi, residual, labels, lp, cfg, stream_index))
}

fn sdca(phi: &Mat, residual: &[f64], labels: &[f64], lp: &LossParams, cfg: &TrainConfig, stream_index: u64) -> LabelSolve {
    let (n, q) = (phi.rows(), phi.cols());
    let lam = cfg.eps_opt;
    let lam_n = lam * n as f64;
    let pieces = lp.pieces();
    let c: Vec<f64> = (0..n).map(|i| labels[i] * residual[i]).collect();
    let sq: Vec<f64> = (0..n).map(|i| dot(phi.row(i), phi.row(i))).collect();
    let mut rng = rng::substream(cfg.seed, rng::STREAM_TRAINING, stream_index);
    let mut order: Vec<usize> = (0..n).collect();

    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; q];

    // w = 0 is the comparator the non-degradation guarantee is stated against
    let z0 = margins(&w, phi, residual, labels);
    let p0 = z0.iter().map(|&z| pieces.eval(z)).sum::<f64>() / n as f64;
    let anchor_feasible = all_feasible(&z0);
    let mut best: Option<(f64, Vec<f64>)> = anchor_feasible.then(|| (p0, w.clone()));
    let mut best_dual = f64::NEG_INFINITY;
    let mut fallback = (p0, w.clone());
    let target = 0.5 * cfg.eps_opt;

    let mut epochs = 0;
    while epochs < cfg.max_iters {
        order.shuffle(&mut rng);
        for &i in &order {
            if sq[i] == 0.0 {
                continue;
            }
            let row = phi.row(i);
            let a = sq[i] / lam_n;
            let z_cur = c[i] + labels[i] * dot(&w, row);
            let z_shift = z_cur - a * alpha[i];
            let z_new = pieces.prox(z_shift, a);
            // z_new = z_shift - a u with u = -alpha_new a subgradient at z_new
            let new_alpha = (z_new - z_shift) / a;
            let d = new_alpha - alpha[i];
            if d != 0.0 {
                alpha[i] = new_alpha;
                let s = d * labels[i] / lam_n;
                for (wk, &p) in w.iter_mut().zip(row) {
                    *wk += s * p;
                }
            }
        }
        epochs += 1;

        // resynchronize w with alpha in a fixed order, then evaluate both objectives
        w.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            if alpha[i] != 0.0 {
                let s = alpha[i] * labels[i] / lam_n;
                for (wk, &p) in w.iter_mut().zip(phi.row(i)) {
                    *wk += s * p;
                }
            }
        }
        let ww = dot(&w, &w);
        let z = margins(&w, phi, residual, labels);
        let primal = z.iter().map(|&v| pieces.eval(v)).sum::<f64>() / n as f64 + 0.5 * lam * ww;
        let conj: f64 = (0..n).map(|i| pieces.conjugate(-alpha[i]) - alpha[i] * c[i]).sum();
        let dual = -conj / n as f64 - 0.5 * lam * ww;
        best_dual = best_dual.max(dual);
        if primal < fallback.0 {
            fallback = (primal, w.clone());
        }
        if all_feasible(&z) {
            if best.as_ref().map_or(true, |b| primal < b.0) {
                best = Some((primal, w.clone()));
            }
        } else if anchor_feasible {
            // pull back toward the feasible anchor w = 0
            let t: Vec<f64> = z.iter().zip(&c).map(|(zi, ci)| zi - ci).collect();
            let (theta, value) = feasible_pullback(&pieces, &c, &t, 0.5 * lam * ww);
            if theta > 0.0 && best.as_ref().map_or(true, |b| value < b.0) {
                best = Some((value, w.iter().map(|v| v * theta).collect()));
            }
        }
        if let Some((p, _)) = &best {
            if p - best_dual <= target {
                break;
            }
        }
    }
    let (objective, w) = best.unwrap_or(fallback);
    let cert = (objective - best_dual).max(0.0);
    LabelSolve {
        w,
        objective,
        cert,
        iters: epochs,
        status: if cert <= target {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIters
        },
    }
}

/// Minimizes `theta -> (1/N) sum h(c_i + theta t_i) + theta^2 r` over the
/// feasible part of `[0,1]` (margins in `[0,1]`, assuming they are at `theta = 0`).
fn feasible_pullback(pieces: &crate::loss::Pieces, c: &[f64], t: &[f64], r: f64) -> (f64, f64) {
    let mut hi = 1.0f64;
    for (&ci, &ti) in c.iter().zip(t) {
        if ti > 0.0 {
            hi = hi.min((1.0 - ci) / ti);
        } else if ti < 0.0 {
            hi = hi.min(-ci / ti);
        }
    }
    let hi = hi.max(0.0);
    let n = c.len() as f64;
    let f = |th: f64| c.iter().zip(t).map(|(ci, ti)| pieces.eval(ci + th * ti)).sum::<f64>() / n + th * th * r;
    let (mut a, mut b) = (0.0, hi);
    for _ in 0..80 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let th = 0.5 * (a + b);
    // the end points can beat the bracket on a piecewise-linear function
    [(th, f(th)), (hi, f(hi)), (0.0, f(0.0))]
        .into_iter()
        .filter(|(x, _)| c.iter().zip(t).all(|(ci, ti)| feasible(ci + x * ti)))
        .fold((0.0, f(0.0)), |acc, cand| if cand.1 < acc.1 { cand } else { acc })
}

/// Per-sample hidden state `Gamma^k` and the flattened predictions `f^k`
/// (row `s |G| + g`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub gamma: Vec<Field>,
    pub fhat: Mat,
}

/// Flattened `+-1` labels, row `s |G| + g`.
pub fn label_matrix(dataset: &Dataset) -> Mat {
    let rows: Vec<f64> = dataset.samples.iter().flat_map(|s| s.y.iter().flatten().copied()).collect();
    let g = dataset.meta.g;
    Mat::from_vec(dataset.m() * g, dataset.meta.n, rows).expect("validated dataset shape")
}

impl LayerState {
    /// State before layer 1: `Gamma^0 = x`, and layer 1 has no residual path.
    pub fn initial(params: &ResNetParams, dataset: &Dataset) -> Result<Self> {
        if dataset.meta.d != params.d || dataset.meta.n != params.n || dataset.meta.g != params.num_locations() {
            return Err(Error::Config(format!(
                "dataset (d={}, n={}, |G|={}) does not match network (d={}, n={}, |G|={})",
                dataset.meta.d,
                dataset.meta.n,
                dataset.meta.g,
                params.d,
                params.n,
                params.num_locations()
            )));
        }
        Ok(LayerState {
            gamma: dataset.samples.iter().map(|s| s.x.clone()).collect(),
            fhat: Mat::zeros(dataset.m() * params.num_locations(), params.n),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub layer: usize,
    pub label: usize,
    /// `l_{S,j}(f^k)` (surrogate value; see `feasible`).
    pub loss: f64,
    pub worst_margin: f64,
    pub feasible: bool,
    pub cert: f64,
    pub iters: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub err_0: f64,
    pub err_half: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub version: u32,
    pub n: usize,
    pub eps_opt: f64,
    pub theory_eps_opt: f64,
    pub loss: LossParams,
    /// `l_{S,j}(f^0)` per label, `f^0 = 0`.
    pub initial_loss: Vec<f64>,
    pub layers: Vec<LayerSummary>,
    pub records: Vec<LabelRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

fn features_matrix(params: &ResNetParams, k: usize, gamma: &[Field]) -> (Mat, Vec<Field>) {
    let per_sample: Vec<Field> = gamma.par_iter().map(|g| params.features_from(k, g)).collect();
    let q = params.q_width;
    let data: Vec<f64> = per_sample.iter().flat_map(|f| f.iter().flatten().copied()).collect();
    let rows = data.len() / q;
    (Mat::from_vec(rows, q, data).expect("feature shape"), per_sample)
}

fn column(m: &Mat, j: usize) -> Vec<f64> {
    (0..m.rows()).map(|i| m[(i, j)]).collect()
}

/// `l_{S,j}` (surrogate), worst margin and feasibility for every label.
pub fn label_losses(fhat: &Mat, y: &Mat, lp: &LossParams) -> Vec<(f64, f64, bool)> {
    (0..y.cols())
        .map(|j| {
            let mut loss = 0.0;
            let mut worst = f64::INFINITY;
            let mut feas = true;
            for i in 0..y.rows() {
                let z = fhat[(i, j)] * y[(i, j)];
                loss += margin_loss(z, lp);
                worst = worst.min(z);
                feas &= feasible(z);
            }
            (loss / y.rows() as f64, worst, feas)
        })
        .collect()
}

/// Trains layer `k` for all labels and advances the state.
pub fn train_layer(
    params: &mut ResNetParams,
    k: usize,
    state: &LayerState,
    y: &Mat,
    lp: &LossParams,
    cfg: &TrainConfig,
) -> Result<(LayerState, Vec<LabelRecord>)> {
    cfg.validate()?;
    if k == 0 || k >= params.depth {
        return Err(Error::InvalidParameter(format!("layer {k} outside 1..{}", params.depth)));
    }
    if params.layers[k - 1..].iter().any(|l| !l.w2.is_zero()) {
        return Err(Error::InvalidParameter(format!("layers >= {k} must be untrained")));
    }
    let (phi, per_sample) = features_matrix(params, k, &state.gamma);
    let n = params.n;
    let solve = |j: usize| {
        let r = column(&state.fhat, j);
        let lab = column(y, j);
        solve_label(&phi, &r, &lab, lp, cfg, (k * n + j) as u64)
    };
    let solves: Vec<LabelSolve> = if cfg.parallel_labels {
        (0..n).into_par_iter().map(solve).collect::<Result<_>>()?
    } else {
        (0..n).map(solve).collect::<Result<_>>()?
    };

    // W^k_2 = (W^D)^T V with V's rows the per-label solutions
    let v = Mat::from_fn(n, params.q_width, |j, i| solves[j].w[i]);
    params.layer_mut(k).w2 = params.wd.transpose().matmul(&v)?;

    let gamma: Vec<Field> = state
        .gamma
        .par_iter()
        .zip(per_sample.par_iter())
        .map(|(g, f)| params.apply_layer(k, g, f))
        .collect();
    let fdata: Vec<f64> = gamma.iter().flat_map(|g| params.readout(g).into_iter().flatten()).collect();
    let fhat = Mat::from_vec(state.fhat.rows(), n, fdata)?;

    let records = label_losses(&fhat, y, lp)
        .into_iter()
        .zip(&solves)
        .enumerate()
        .map(|(j, ((loss, worst, feas), s))| LabelRecord {
            layer: k,
            label: j,
            loss,
            worst_margin: worst,
            feasible: feas,
            cert: s.cert,
            iters: s.iters,
            status: s.status,
        })
        .collect();
    Ok((LayerState { gamma, fhat }, records))
}

/// Trains layers `1..D-1` in order; always runs every layer.
pub fn train_all(params: &mut ResNetParams, dataset: &Dataset, lp: &LossParams, cfg: &TrainConfig) -> Result<TrainTrace> {
    train_all_with(params, dataset, lp, cfg, |_, _| {})
}

/// As [`train_all`], calling `on_layer(k, records)` after each layer.
pub fn train_all_with(
    params: &mut ResNetParams,
    dataset: &Dataset,
    lp: &LossParams,
    cfg: &TrainConfig,
    mut on_layer: impl FnMut(usize, &[LabelRecord]),
) -> Result<TrainTrace> {
    params.check_orthogonality()?;
    if lp.m != dataset.m() || lp.g_size != params.num_locations() {
        return Err(Error::Config(format!(
            "loss parameters (m={}, |G|={}) do not match the data (m={}, |G|={})",
            lp.m,
            lp.g_size,
            dataset.m(),
            params.num_locations()
        )));
    }
    let y = label_matrix(dataset);
    let mut state = LayerState::initial(params, dataset)?;
    let initial_loss = label_losses(&state.fhat, &y, lp).into_iter().map(|t| t.0).collect();
    let g = params.num_locations();
    let mut layers = Vec::new();
    let mut records = Vec::new();
    for k in 1..params.depth {
        let (next, recs) = train_layer(params, k, &state, &y, lp, cfg)?;
        state = next;
        layers.push(LayerSummary {
            layer: k,
            err_0: margin_error_rows(&state.fhat, &y, g, 0.0)?,
            err_half: margin_error_rows(&state.fhat, &y, g, 0.5)?,
            converged: recs.iter().all(|r| r.status == SolveStatus::Converged),
        });
        on_layer(k, &recs);
        records.extend(recs);
    }
    Ok(TrainTrace {
        version: TRACE_VERSION,
        n: params.n,
        eps_opt: cfg.eps_opt,
        theory_eps_opt: TrainConfig::theory_eps_opt(lp),
        loss: *lp,
        initial_loss,
        layers,
        records,
        manifest_hash: None,
    })
}

const CSV_HEADER: [&str; 8] = ["layer", "label", "loss", "worst_margin", "feasible", "cert", "iters", "status"];

impl TrainTrace {
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    /// `l_{S,j}(f^k)`, with `k = 0` the initial loss.
    pub fn loss(&self, k: usize, j: usize) -> f64 {
        if k == 0 {
            self.initial_loss[j]
        } else {
            self.records[(k - 1) * self.n + j].loss
        }
    }

    pub fn record(&self, k: usize, j: usize) -> &LabelRecord {
        &self.records[(k - 1) * self.n + j]
    }

    /// CSV with one row per (layer, label); floats in shortest round-trip form.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.layer.to_string(),
                r.label.to_string(),
                r.loss.to_string(),
                r.worst_margin.to_string(),
                r.feasible.to_string(),
                r.cert.to_string(),
                r.iters.to_string(),
                r.status.as_str().to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ascii"))
    }

    /// Parses the record rows of [`to_csv`](Self::to_csv).
    pub fn records_from_csv(s: &str) -> Result<Vec<LabelRecord>> {
        let mut rd = csv::Reader::from_reader(s.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        if header != CSV_HEADER {
            return Err(Error::Config(format!("unexpected trace header {header:?}")));
        }
        rd.records()
            .map(|row| {
                let row = row?;
                let f = |i: usize| -> Result<&str> { row.get(i).ok_or_else(|| Error::Config("short trace row".into())) };
                let bad = |what: &str| Error::Config(format!("bad {what} in trace row"));
                Ok(LabelRecord {
                    layer: f(0)?.parse().map_err(|_| bad("layer"))?,
                    label: f(1)?.parse().map_err(|_| bad("label"))?,
                    loss: f(2)?.parse().map_err(|_| bad("loss"))?,
                    worst_margin: f(3)?.parse().map_err(|_| bad("worst_margin"))?,
                    feasible: f(4)?.parse().map_err(|_| bad("feasible"))?,
                    cert: f(5)?.parse().map_err(|_| bad("cert"))?,
                    iters: f(6)?.parse().map_err(|_| bad("iters"))?,
                    status: SolveStatus::parse(f(7)?).ok_or_else(|| bad("status"))?,
                })
            })
            .collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let s = self.to_csv()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: TrainTrace = serde_json::from_str(&s).map_err(|e| Error::Corrupt {
            path: path.into(),
            reason: e.to_string(),
        })?;
        if t.version != TRACE_VERSION {
            return Err(Error::VersionMismatch {
                found: t.version,
                expected: TRACE_VERSION,
            });
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{Activation, ActivationSpec};
    use crate::hierarchy::{gen_junta_hierarchy, sample_dataset, ProximityMap, Target};
    use crate::resnet::{init_network, OrthogonalMode};
    use nalgebra::{DMatrix, DVector};
    use rand::Rng as _;

    fn toy(seed: u64, n: usize, q: usize) -> (Mat, Vec<f64>, Vec<f64>) {
        let mut rng = rng::stream(seed, "toy");
        let phi = Mat::from_fn(n, q, |_, _| rng.gen_range(-1.0..1.0));
        let labels = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let resid = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        (phi, resid, labels)
    }

    /// Exact minimizer by enumerating which piece (segment interior or kink)
    /// every point sits on and solving the resulting KKT system.
    pub(crate) fn kkt_oracle(phi: &Mat, resid: &[f64], labels: &[f64], lp: &LossParams, lam: f64) -> f64 {
        let p = lp.pieces();
        let (n, q) = (phi.rows(), phi.cols());
        let a: Vec<Vec<f64>> = (0..n).map(|i| phi.row(i).iter().map(|v| v * labels[i]).collect()).collect();
        let c: Vec<f64> = (0..n).map(|i| labels[i] * resid[i]).collect();
        let gram = |i: usize, j: usize| dot(&a[i], &a[j]);
        let ln = lam * n as f64;
        let lo = |k: usize| if k == 0 { f64::NEG_INFINITY } else { p.breaks[k - 1] };
        let hi = |k: usize| if k == 4 { f64::INFINITY } else { p.breaks[k] };
        let mut best = f64::INFINITY;
        let states = 9usize;
        for code in 0..states.pow(n as u32) {
            let st: Vec<usize> = (0..n).map(|i| (code / states.pow(i as u32)) % states).collect();
            let kinks: Vec<usize> = (0..n).filter(|&i| st[i] >= 5).collect();
            let mut s = vec![0.0; n];
            for i in 0..n {
                if st[i] < 5 {
                    s[i] = p.slopes[st[i]];
                }
            }
            if !kinks.is_empty() {
                let m = DMatrix::from_fn(kinks.len(), kinks.len(), |r, t| gram(kinks[r], kinks[t]));
                let rhs = DVector::from_fn(kinks.len(), |r, _| {
                    let i = kinks[r];
                    let free: f64 = (0..n).filter(|&j| st[j] < 5).map(|j| gram(i, j) * s[j]).sum();
                    ln * (c[i] - p.breaks[st[i] - 5]) - free
                });
                let Some(sol) = m.lu().solve(&rhs) else { continue };
                for (r, &i) in kinks.iter().enumerate() {
                    s[i] = sol[r];
                }
            }
            let w: Vec<f64> = (0..q).map(|t| -(0..n).map(|i| s[i] * a[i][t]).sum::<f64>() / ln).collect();
            let ok = (0..n).all(|i| {
                let z = c[i] + dot(&w, &a[i]);
                let tol = 1e-9 * (1.0 + s[i].abs());
                if st[i] < 5 {
                    z >= lo(st[i]) - 1e-12 && z <= hi(st[i]) + 1e-12
                } else {
                    let b = st[i] - 5;
                    s[i] >= p.slopes[b] - tol && s[i] <= p.slopes[b + 1] + tol
                }
            });
            if ok {
                let (v, _) = layer_objective(&w, phi, resid, labels, lp, lam);
                best = best.min(v);
            }
        }
        best
    }

    #[test]
    fn sdca_matches_kkt_oracle_on_toys() {
        let lp = LossParams::new(2.0, 0.5, 4, 1).unwrap();
        let cfg = TrainConfig {
            max_iters: 100_000,
            ..TrainConfig::default()
        };
        for seed in 0..5 {
            let (phi, r, y) = toy(seed, 4, 8);
            let s = solve_label(&phi, &r, &y, &lp, &cfg, 0).unwrap();
            let oracle = kkt_oracle(&phi, &r, &y, &lp, cfg.eps_opt);
            assert_eq!(s.status, SolveStatus::Converged);
            assert!(s.objective >= oracle - 1e-9, "{} < {oracle}", s.objective);
            assert!(s.objective - oracle <= cfg.eps_opt / 2.0, "seed {seed}: {} vs {oracle}", s.objective);
            let (v, _) = layer_objective(&s.w, &phi, &r, &y, &lp, cfg.eps_opt);
            assert!((v - s.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_is_strongly_convex_and_subgradient_matches_fd() {
        let lp = LossParams::new(3.0, 0.25, 30, 1).unwrap();
        let (phi, r, y) = toy(4, 30, 10);
        let eps = 1e-3;
        let mut rng = rng::stream(9, "t");
        let scale = 0.05;
        for _ in 0..200 {
            let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-scale..scale)).collect();
            let w2: Vec<f64> = (0..10).map(|_| rng.gen_range(-scale..scale)).collect();
            let (f1, g1) = layer_objective(&w, &phi, &r, &y, &lp, eps);
            let (f2, _) = layer_objective(&w2, &phi, &r, &y, &lp, eps);
            let d: Vec<f64> = w2.iter().zip(&w).map(|(a, b)| a - b).collect();
            let rhs = f1 + dot(&d, &g1) + 0.5 * eps * dot(&d, &d);
            assert!(f2 >= rhs - 1e-12 * (1.0 + f2.abs()));
        }
        let mut checked = 0;
        for _ in 0..50 {
            let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-scale..scale)).collect();
            let d: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (f0, g) = layer_objective(&w, &phi, &r, &y, &lp, eps);
            let h = 1e-7;
            let wp: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + h * b).collect();
            let wm: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a - h * b).collect();
            let (fp, _) = layer_objective(&wp, &phi, &r, &y, &lp, eps);
            let (fm, _) = layer_objective(&wm, &phi, &r, &y, &lp, eps);
            // smooth point: one-sided slopes agree
            if ((fp - f0) - (f0 - fm)).abs() > 1e-12 * (1.0 + f0.abs()) {
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            let an = dot(&g, &d);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn fitted_residual_gives_near_zero_update() {
        let lp = LossParams::new(2.0, 0.5, 20, 1).unwrap();
        let (phi, _, y) = toy(2, 20, 16);
        let r: Vec<f64> = y.iter().map(|v| 0.9 * v).collect();
        let s = solve_label(&phi, &r, &y, &lp, &TrainConfig::default(), 0).unwrap();
        assert!(dot(&s.w, &s.w).sqrt() < 1e-9);
        assert!(s.objective <= 1e-4);
    }

    fn small_problem(d: usize, m: usize) -> (ResNetParams, Dataset, LossParams) {
        let p = ProximityMap::singleton();
        let h = gen_junta_hierarchy(d, 6, 2, &p, &[3, 3], 4).unwrap();
        let ds = sample_dataset(&Target::Junta(h), m, 4).unwrap();
        let spec = ActivationSpec::new(Activation::Tanh, 2).unwrap();
        let net = init_network(d, 6, 128, 4, &p, 0.6, OrthogonalMode::Random, spec, 4).unwrap();
        let lp = LossParams::new(3.0, 0.125, m, 1).unwrap();
        (net, ds, lp)
    }

    #[test]
    fn train_all_invariants() {
        let (mut net, ds, lp) = small_problem(6, 64);
        let wd = net.wd.clone();
        let cfg = TrainConfig {
            max_iters: 300,
            ..TrainConfig::default()
        };
        let trace = train_all(&mut net, &ds, &lp, &cfg).unwrap();
        assert_eq!(trace.layers.len(), 3);
        assert_eq!(trace.records.len(), 18);
        assert_eq!(net.wd, wd);
        for k in 1..4 {
            for j in 0..6 {
                let rec = trace.record(k, j);
                assert_eq!((rec.layer, rec.label), (k, j));
                assert!(rec.feasible);
                assert!(trace.loss(k, j) <= trace.loss(k - 1, j) + cfg.eps_opt, "k={k} j={j}");
            }
        }
        // trained predictions agree with the forward pass
        let y = label_matrix(&ds);
        let mut f = Vec::new();
        for s in &ds.samples {
            f.extend(crate::resnet::forward(&net, &s.x, 3).unwrap().1.into_iter().flatten());
        }
        let fhat = Mat::from_vec(ds.m(), 6, f).unwrap();
        let losses = label_losses(&fhat, &y, &lp);
        for j in 0..6 {
            assert!((losses[j].0 - trace.loss(3, j)).abs() < 1e-9);
        }
        let csv = trace.to_csv().unwrap();
        assert!(csv.starts_with("layer,label,loss,worst_margin,feasible,cert,iters,status\n"));
        assert_eq!(TrainTrace::records_from_csv(&csv).unwrap(), trace.records);
    }

    #[test]
    fn per_label_solves_are_independent_and_deterministic() {
        let (net, ds, lp) = small_problem(6, 40);
        let cfg = TrainConfig {
            max_iters: 50,
            ..TrainConfig::default()
        };
        let y = label_matrix(&ds);
        let st = LayerState::initial(&net, &ds).unwrap();
        let (mut a, mut b) = (net.clone(), net.clone());
        let (_, ra) = train_layer(&mut a, 1, &st, &y, &lp, &cfg).unwrap();
        let seq = TrainConfig {
            parallel_labels: false,
            ..cfg.clone()
        };
        let (_, rb) = train_layer(&mut b, 1, &st, &y, &lp, &seq).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        // a single-label solve reproduces row j of W^D W^1_2 bit for bit
        let (phi, _) = features_matrix(&net, 1, &st.gamma);
        let v = net.wd.matmul(&a.layer(1).w2).unwrap();
        let j = 2;
        let s = solve_label(&phi, &column(&st.fhat, j), &column(&y, j), &lp, &cfg, j as u64 + 6).unwrap();
        for (x, z) in s.w.iter().zip(v.row(j)) {
            assert!((x - z).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        // layers must be trained in order
        assert!(train_layer(&mut a, 1, &st, &y, &lp, &cfg).is_err());
    }

    #[test]
    fn trace_json_roundtrip() {
        let (mut net, ds, lp) = small_problem(4, 16);
        let cfg = TrainConfig {
            max_iters: 20,
            ..TrainConfig::default()
        };
        let t = train_all(&mut net, &ds, &lp, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.json");
        t.save_json(&p).unwrap();
        assert_eq!(TrainTrace::load_json(&p).unwrap(), t);
    }
}
