//! Residual network with proximity-concatenated layer inputs:
//! `Psi_1(x) = W^1_2 sigma(W^1_1 E(x) + b^1)`,
//! `Psi_k(x) = x + W^k_2 sigma(W^k_1 E(x) + b^k)` for `2 <= k <= D-1`,
//! and an orthogonal read-out `W^D`.

use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hermite::ActivationSpec;
use crate::hierarchy::ProximityMap;
use crate::mat::{dot, Mat};
use crate::rng::{self, Rng};

pub const ORTHOGONALITY_TOL: f64 = 1e-8;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrthogonalMode {
    /// QR of a Gaussian matrix with the positive-diagonal convention.
    #[default]
    Random,
    Identity,
}

/// A beta-Xavier pair: `W` entries i.i.d. `N(0,(1-beta^2)/fan_in)`, `b` entries i.i.d. `N(0,beta^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XavierPair {
    pub w: Mat,
    pub b: Vec<f64>,
    pub beta: f64,
}

impl XavierPair {
    pub fn sample(q: usize, fan_in: usize, beta: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta {beta} outside [0,1]")));
        }
        if fan_in == 0 || q == 0 {
            return Err(Error::InvalidParameter("Xavier pair needs positive shapes".into()));
        }
        let sd = ((1.0 - beta * beta) / fan_in as f64).sqrt();
        let w = Mat::from_fn(q, fan_in, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        });
        let b = (0..q)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                beta * z
            })
            .collect();
        Ok(XavierPair { w, b, beta })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w1: Mat,
    pub b: Vec<f64>,
    pub w2: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetParams {
    pub d: usize,
    pub n: usize,
    pub q_width: usize,
    pub depth: usize,
    pub proximity: ProximityMap,
    pub beta: f64,
    pub activation: ActivationSpec,
    pub orthogonal_mode: OrthogonalMode,
    pub seed: u64,
    /// Layers `1..=D-1`.
    pub layers: Vec<Layer>,
    pub wd: Mat,
}

/// Per-location vectors `v[g]`.
pub type Field = Vec<Vec<f64>>;

#[allow(clippy::too_many_arguments)]
pub fn init_network(
    d: usize,
    n: usize,
    q_width: usize,
    depth: usize,
    proximity: &ProximityMap,
    beta: f64,
    orthogonal_mode: OrthogonalMode,
    activation: ActivationSpec,
    seed: u64,
) -> Result<ResNetParams> {
    if depth < 2 {
        return Err(Error::InvalidParameter(format!("depth D={depth} must be >= 2")));
    }
    if d == 0 || n == 0 || q_width == 0 {
        return Err(Error::InvalidParameter("d, n and q_width must be positive".into()));
    }
    let w = proximity.width();
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    let mut layers = Vec::with_capacity(depth - 1);
    for k in 1..depth {
        let fan_in = if k == 1 { w * d } else { w * n };
        let pair = XavierPair::sample(q_width, fan_in, beta, &mut rng)?;
        layers.push(Layer {
            w1: pair.w,
            b: pair.b,
            w2: Mat::zeros(n, q_width),
        });
    }
    let wd = match orthogonal_mode {
        OrthogonalMode::Identity => Mat::identity(n),
        OrthogonalMode::Random => random_orthogonal(n, &mut rng)?,
    };
    Ok(ResNetParams {
        d,
        n,
        q_width,
        depth,
        proximity: proximity.clone(),
        beta,
        activation,
        orthogonal_mode,
        seed,
        layers,
        wd,
    })
}

fn random_orthogonal(n: usize, rng: &mut Rng) -> Result<Mat> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let out = Mat::from_fn(n, n, |i, j| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * s
    });
    let err = out.orthogonality_error();
    if err > ORTHOGONALITY_TOL {
        return Err(Error::Numerical(format!("QR produced a non-orthogonal W^D (error {err:e})")));
    }
    Ok(out)
}

/// `E_g(x)` for per-location vectors.
pub fn proximity_concat(proximity: &ProximityMap, x: &[Vec<f64>], g: usize) -> Result<Vec<f64>> {
    proximity.concat(x, g)
}

impl ResNetParams {
    pub fn layer(&self, k: usize) -> &Layer {
        &self.layers[k - 1]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut Layer {
        &mut self.layers[k - 1]
    }

    pub fn num_locations(&self) -> usize {
        self.proximity.num_locations()
    }

    pub fn check_orthogonality(&self) -> Result<()> {
        let err = self.wd.orthogonality_error();
        if err > ORTHOGONALITY_TOL {
            return Err(Error::Numerical(format!("W^D orthogonality error {err:e} exceeds {ORTHOGONALITY_TOL:e}")));
        }
        Ok(())
    }

    fn check_input(&self, x: &[Vec<f64>]) -> Result<()> {
        check_dim(self.num_locations(), x.len())?;
        for row in x {
            check_dim(self.d, row.len())?;
        }
        Ok(())
    }

    /// `Phi^{k-1}` from `Gamma^{k-1}`: `sigma(W^k_1 E_g(Gamma^{k-1}) + b^k)` per location.
    pub fn features_from(&self, k: usize, gamma_prev: &[Vec<f64>]) -> Field {
        let layer = self.layer(k);
        (0..self.num_locations())
            .map(|g| {
                let e = self.proximity.concat_prefix(gamma_prev, g, gamma_prev[0].len());
                (0..self.q_width)
                    .map(|i| self.activation.eval(dot(layer.w1.row(i), &e) + layer.b[i]))
                    .collect()
            })
            .collect()
    }

    /// `Gamma^k` from `Gamma^{k-1}` and the layer's features.
    pub fn apply_layer(&self, k: usize, gamma_prev: &[Vec<f64>], phi: &[Vec<f64>]) -> Field {
        let w2 = &self.layer(k).w2;
        phi.iter()
            .enumerate()
            .map(|(g, f)| {
                let delta = w2.matvec(f);
                if k == 1 {
                    delta
                } else {
                    gamma_prev[g].iter().zip(&delta).map(|(a, b)| a + b).collect()
                }
            })
            .collect()
    }

    /// `W^D v` per location.
    pub fn readout(&self, gamma: &[Vec<f64>]) -> Field {
        gamma.iter().map(|v| self.wd.matvec(v)).collect()
    }
}

/// `(Gamma^k, f_hat^k)`; `k = 0` returns the input for both.
pub fn forward(params: &ResNetParams, x: &[Vec<f64>], upto: usize) -> Result<(Field, Field)> {
    params.check_input(x)?;
    if upto >= params.depth {
        return Err(Error::InvalidParameter(format!("layer {upto} outside 0..{}", params.depth)));
    }
    let mut gamma: Field = x.to_vec();
    if upto == 0 {
        return Ok((gamma.clone(), gamma));
    }
    for k in 1..=upto {
        let phi = params.features_from(k, &gamma);
        gamma = params.apply_layer(k, &gamma, &phi);
    }
    let f_hat = params.readout(&gamma);
    Ok((gamma, f_hat))
}

/// `Phi^{k-1}(x)`, `1 <= k <= D-1`.
pub fn features(params: &ResNetParams, k: usize, x: &[Vec<f64>]) -> Result<Field> {
    if k == 0 || k >= params.depth {
        return Err(Error::InvalidParameter(format!("feature layer {k} outside 1..{}", params.depth)));
    }
    let (gamma, _) = forward(params, x, k - 1)?;
    Ok(params.features_from(k, &gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Hash of the run manifest this checkpoint belongs to, when produced by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    /// Echo of the experiment configuration, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub params: ResNetParams,
}

impl Checkpoint {
    pub fn new(params: ResNetParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            manifest_hash: None,
            config: None,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Loads and re-validates the `W^D` orthogonality invariant.
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |reason: String| Error::Corrupt {
            path: path.into(),
            reason,
        };
        let v: serde_json::Value = serde_json::from_str(&s).map_err(|e| corrupt(e.to_string()))?;
        let found = v
            .get("version")
            .and_then(|x| x.as_u64())
            .ok_or_else(|| corrupt("missing version".into()))? as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(v).map_err(|e| corrupt(e.to_string()))?;
        ck.params.check_orthogonality().map_err(|e| corrupt(e.to_string()))?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::Activation;
    use crate::hierarchy::{make_proximity, ProximityKind};
    use crate::kernel::{kernel_analytic, KernelQuery};
    use rand::Rng as _;

    fn spec() -> ActivationSpec {
        ActivationSpec::new(Activation::Tanh, 1).unwrap()
    }

    fn boolean_field(rng: &mut Rng, g: usize, d: usize) -> Field {
        (0..g)
            .map(|_| (0..d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect()
    }

    fn small_net(mode: OrthogonalMode) -> ResNetParams {
        let p = make_proximity(ProximityKind::Window1d, 3, 1).unwrap();
        init_network(4, 5, 16, 4, &p, 0.7, mode, spec(), 9).unwrap()
    }

    #[test]
    fn shapes_and_invariants() {
        let net = small_net(OrthogonalMode::Random);
        assert_eq!(net.layers.len(), 3);
        assert_eq!((net.layer(1).w1.rows(), net.layer(1).w1.cols()), (16, 12));
        assert_eq!((net.layer(2).w1.rows(), net.layer(2).w1.cols()), (16, 15));
        assert!(net.layers.iter().all(|l| l.w2.is_zero() && l.w2.rows() == 5));
        net.check_orthogonality().unwrap();
        let id = small_net(OrthogonalMode::Identity);
        assert_eq!(id.wd, Mat::identity(5));
        assert_eq!(net, small_net(OrthogonalMode::Random));
    }

    #[test]
    fn qr_has_positive_diagonal_convention() {
        let mut rng = rng::stream(3, "t");
        let q = random_orthogonal(6, &mut rng).unwrap();
        assert!(q.orthogonality_error() < 1e-12);
    }

    #[test]
    fn untrained_output_is_zero() {
        let net = small_net(OrthogonalMode::Random);
        let mut rng = rng::stream(1, "t");
        for _ in 0..5 {
            let x = boolean_field(&mut rng, 3, 4);
            for k in 1..4 {
                let (gamma, f) = forward(&net, &x, k).unwrap();
                assert!(gamma.iter().chain(&f).all(|v| v.iter().all(|&a| a == 0.0)));
            }
        }
    }

    #[test]
    fn xavier_moments() {
        let p = ProximityMap::singleton();
        let net = init_network(100, 3, 200, 3, &p, 0.6, OrthogonalMode::Identity, spec(), 2).unwrap();
        let w = &net.layer(1).w1;
        let n = w.data().len() as f64;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / n;
        let target = (1.0 - 0.36) / 100.0;
        assert!((var - target).abs() <= 5.0 * (2.0 / n).sqrt() * target);
        let b = &net.layer(1).b;
        let bvar = b.iter().map(|v| v * v).sum::<f64>() / b.len() as f64;
        assert!((bvar - 0.36).abs() < 0.36 * 5.0 * (2.0 / 200f64).sqrt());
    }

    #[test]
    fn hand_built_neuron() {
        // d = n = 1, W^D = I, one neuron with w = 0, b large: sigma(b) ~ 1
        let p = ProximityMap::singleton();
        let mut net = init_network(1, 1, 1, 2, &p, 0.5, OrthogonalMode::Identity, spec(), 0).unwrap();
        net.layer_mut(1).w1[(0, 0)] = 0.0;
        net.layer_mut(1).b[0] = 20.0;
        net.layer_mut(1).w2[(0, 0)] = 0.75;
        let (_, f) = forward(&net, &[vec![1.0]], 1).unwrap();
        assert!((f[0][0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn residual_identity_and_readout() {
        let mut net = small_net(OrthogonalMode::Random);
        let mut rng = rng::stream(2, "t");
        for l in net.layers.iter_mut() {
            for i in [0, 3] {
                for v in l.w2.row_mut(i).iter_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
        let x = boolean_field(&mut rng, 3, 4);
        let (g3, f3) = forward(&net, &x, 3).unwrap();
        for (gv, fv) in g3.iter().zip(&f3) {
            let expect = net.wd.matvec(gv);
            for (a, b) in expect.iter().zip(fv) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        // zeroing layer 3's W2 makes it the identity
        let mut cut = net.clone();
        cut.layer_mut(3).w2 = Mat::zeros(5, 16);
        let (g2, _) = forward(&net, &x, 2).unwrap();
        let (g3c, _) = forward(&cut, &x, 3).unwrap();
        assert_eq!(g2, g3c);
    }

    #[test]
    fn affine_in_one_w2() {
        let mut net = small_net(OrthogonalMode::Random);
        let mut rng = rng::stream(4, "t");
        for v in net.layer_mut(1).w2.row_mut(1).iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let x = boolean_field(&mut rng, 3, 4);
        let dir = Mat::from_fn(5, 16, |_, _| rng.gen_range(-1.0..1.0));
        let at = |t: f64| {
            let mut n2 = net.clone();
            let base = n2.layer(2).w2.clone();
            n2.layer_mut(2).w2 = Mat::from_fn(5, 16, |i, j| base[(i, j)] + t * dir[(i, j)]);
            forward(&n2, &x, 2).unwrap().1
        };
        let (f0, f1, f3) = (at(0.0), at(1.0), at(3.0));
        for g in 0..3 {
            for j in 0..5 {
                let pred = f0[g][j] + 3.0 * (f1[g][j] - f0[g][j]);
                assert!((pred - f3[g][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn features_bounded_deterministic_and_match_kernel() {
        let p = ProximityMap::singleton();
        let d = 6;
        let net = init_network(d, 2, 4000, 2, &p, 0.8, OrthogonalMode::Identity, spec(), 5).unwrap();
        let mut rng = rng::stream(5, "t");
        let x = boolean_field(&mut rng, 1, d);
        let phi = features(&net, 1, &x).unwrap();
        assert_eq!(phi, features(&net, 1, &x).unwrap());
        assert!(phi[0].iter().all(|v| v.abs() < 1.0));
        let second = phi[0].iter().map(|v| v * v).sum::<f64>() / 4000.0;
        let sd = (phi[0].iter().map(|v| v.powi(4)).sum::<f64>() / 4000.0 - second * second).sqrt() / 4000f64.sqrt();
        let spec = spec();
        let q = KernelQuery::new(x[0].clone(), x[0].clone(), 0.8, spec.s_max()).unwrap();
        let k = kernel_analytic(&q, &spec).unwrap();
        assert!((second - k.value).abs() <= 4.0 * sd + k.tail, "{second} vs {}", k.value);
    }

    #[test]
    fn checkpoint_roundtrip_and_orthogonality_check() {
        let net = small_net(OrthogonalMode::Random);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::new(net.clone()).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params, net);
        let mut bad = net;
        bad.wd[(0, 0)] += 1e-3;
        Checkpoint::new(bad).save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Corrupt { .. })));
    }
}
