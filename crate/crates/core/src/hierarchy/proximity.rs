use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityKind {
    Singleton,
    Window1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProximitySpec {
    pub kind: ProximityKind,
    #[serde(rename = "T")]
    pub t: usize,
    pub w_half: usize,
}

/// `e: G -> G^w` over locations `0..|G|`, with `e_1(g) = g`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ProximitySpec", into = "ProximitySpec")]
pub struct ProximityMap {
    spec: ProximitySpec,
    map: Vec<Vec<usize>>,
}

/// Singleton: one location, `e(g) = (g)`. Window1d: `T` locations on a line,
/// `e(g) = (g, g-1, .., g-w_half, g+1, .., g+w_half)` clamped into range.
pub fn make_proximity(kind: ProximityKind, t: usize, w_half: usize) -> Result<ProximityMap> {
    ProximityMap::try_from(ProximitySpec { kind, t, w_half })
}

impl TryFrom<ProximitySpec> for ProximityMap {
    type Error = Error;

    fn try_from(spec: ProximitySpec) -> Result<Self> {
        if spec.t == 0 {
            return Err(Error::InvalidParameter("proximity needs T >= 1".into()));
        }
        let map = match spec.kind {
            ProximityKind::Singleton => vec![vec![0]],
            ProximityKind::Window1d => {
                let last = spec.t as i64 - 1;
                (0..spec.t as i64)
                    .map(|g| {
                        let mut e = vec![g as usize];
                        for o in 1..=spec.w_half as i64 {
                            e.push((g - o).clamp(0, last) as usize);
                        }
                        for o in 1..=spec.w_half as i64 {
                            e.push((g + o).clamp(0, last) as usize);
                        }
                        e
                    })
                    .collect()
            }
        };
        Ok(ProximityMap { spec, map })
    }
}

impl From<ProximityMap> for ProximitySpec {
    fn from(p: ProximityMap) -> Self {
        p.spec
    }
}

impl ProximityMap {
    pub fn singleton() -> Self {
        make_proximity(ProximityKind::Singleton, 1, 0).expect("valid")
    }

    pub fn spec(&self) -> ProximitySpec {
        self.spec
    }

    pub fn num_locations(&self) -> usize {
        self.map.len()
    }

    pub fn width(&self) -> usize {
        self.map[0].len()
    }

    /// `e(g)`
    pub fn neighbors(&self, g: usize) -> &[usize] {
        &self.map[g]
    }

    /// `E_g(v) = (v_{e_1(g)} | .. | v_{e_w(g)})` for per-location vectors `v`.
    pub fn concat(&self, v: &[Vec<f64>], g: usize) -> Result<Vec<f64>> {
        check_dim(self.num_locations(), v.len())?;
        let len = v.first().map_or(0, |r| r.len());
        let mut out = Vec::with_capacity(self.width() * len);
        for &h in self.neighbors(g) {
            check_dim(len, v[h].len())?;
            out.extend_from_slice(&v[h]);
        }
        Ok(out)
    }

    /// Like [`concat`](Self::concat) but taking only the first `prefix` entries per location.
    pub fn concat_prefix(&self, v: &[Vec<f64>], g: usize, prefix: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width() * prefix);
        for &h in self.neighbors(g) {
            out.extend_from_slice(&v[h][..prefix]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton() {
        let p = make_proximity(ProximityKind::Singleton, 1, 0).unwrap();
        assert_eq!(p.num_locations(), 1);
        assert_eq!(p.width(), 1);
        assert_eq!(p.neighbors(0), &[0]);
    }

    #[test]
    fn window_interior_and_clamped() {
        let p = make_proximity(ProximityKind::Window1d, 5, 1).unwrap();
        assert_eq!(p.width(), 3);
        // locations are 0-based here: g=2 is the third location
        assert_eq!(p.neighbors(2), &[2, 1, 3]);
        assert_eq!(p.neighbors(0), &[0, 0, 1]);
        assert_eq!(p.neighbors(4), &[4, 3, 4]);
        for g in 0..5 {
            assert_eq!(p.neighbors(g)[0], g);
        }
    }

    #[test]
    fn concat_follows_e_order() {
        let p = make_proximity(ProximityKind::Window1d, 3, 1).unwrap();
        let v = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(p.concat(&v, 1).unwrap(), vec![2.0, 1.0, 3.0]);
        assert_eq!(p.concat(&v, 0).unwrap(), vec![1.0, 1.0, 2.0]);
        let s = ProximityMap::singleton();
        assert_eq!(s.concat(&[vec![4.0, 5.0]], 0).unwrap(), vec![4.0, 5.0]);
    }

    #[test]
    fn serde_roundtrip() {
        let p = make_proximity(ProximityKind::Window1d, 4, 2).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"kind":"window1d","T":4,"w_half":2}"#);
        let back: ProximityMap = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
