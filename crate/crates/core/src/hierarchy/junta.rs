use serde::{Deserialize, Serialize};

use super::proximity::ProximityMap;
use super::{random_subset, random_table, sign_check, Junta};
use crate::error::{check_dim, Error, Result};
use crate::poly::multilinear_extension;
use crate::ptf::{refine_ptf, PtfClaim};
use crate::rng::{self, Rng};

/// One label: a junta over the pool `E_g(previous level)` and its certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDef {
    /// 1-based level.
    pub level: usize,
    /// Dimension of the pool the junta reads from.
    pub pool_dim: usize,
    pub junta: Junta,
    pub witness: Option<PtfClaim>,
}

/// Nested levels `L_1 ⊆ .. ⊆ L_r = [n]`, stored as cumulative prefix sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    /// `cum[i]` = `|L_{i+1}|`
    pub cum: Vec<usize>,
    pub proximity: ProximityMap,
    pub labels: Vec<LabelDef>,
}

/// Equal split of `n` labels over `r` levels (earlier levels take the remainder).
pub fn default_level_sizes(n: usize, r: usize) -> Vec<usize> {
    (0..r).map(|i| n / r + usize::from(i < n % r)).collect()
}

/// The certificate radius `1/(K 2^{(K+2)/2})` of junta witnesses.
pub fn junta_xi(k: usize) -> f64 {
    1.0 / (k as f64 * 2f64.powf((k as f64 + 2.0) / 2.0))
}

impl Hierarchy {
    pub fn r(&self) -> usize {
        self.cum.len()
    }

    /// `|L_i|` for 1-based `i`, with `|L_0| = 0`.
    pub fn level_len(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.cum[i - 1]
        }
    }

    /// Label indices of `L_i \ L_{i-1}`.
    pub fn level_range(&self, i: usize) -> std::ops::Range<usize> {
        self.level_len(i - 1)..self.level_len(i)
    }

    /// Pool vector of label `j` at location `g`: `E_g(x)` for level 1,
    /// `E_g(y restricted to L_{i-1})` above.
    pub fn pool(&self, j: usize, x: &[Vec<f64>], y: &[Vec<f64>], g: usize) -> Vec<f64> {
        let level = self.labels[j].level;
        if level == 1 {
            self.proximity.concat_prefix(x, g, self.d)
        } else {
            self.proximity.concat_prefix(y, g, self.level_len(level - 1))
        }
    }

    /// `y[g][j]` for every location and label, evaluated level by level.
    pub fn eval(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let gsize = self.proximity.num_locations();
        check_dim(gsize, x.len())?;
        for row in x {
            check_dim(self.d, row.len())?;
            sign_check(row)?;
        }
        let mut y = vec![vec![0.0; self.n]; gsize];
        for level in 1..=self.r() {
            for j in self.level_range(level) {
                for g in 0..gsize {
                    let pool = self.pool(j, x, &y, g);
                    y[g][j] = self.labels[j].junta.eval(&pool);
                }
            }
        }
        Ok(y)
    }
}

/// Random junta hierarchy: level-1 labels are non-constant K-juntas of
/// `E_g(x)`, level-i labels non-constant K-juntas of `E_g` of the labels in
/// `L_{i-1}`. Each label carries the `(K, 2, 3, 1/(K 2^{(K+2)/2}))` witness
/// obtained by refining its multilinear extension.
pub fn gen_junta_hierarchy(
    d: usize,
    n: usize,
    k: usize,
    proximity: &ProximityMap,
    level_sizes: &[usize],
    seed: u64,
) -> Result<Hierarchy> {
    let r = level_sizes.len();
    if d == 0 || n == 0 || r == 0 || k == 0 {
        return Err(Error::InvalidParameter("d, n, r, K must be positive".into()));
    }
    if level_sizes.iter().sum::<usize>() != n || level_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter(format!(
            "level sizes {level_sizes:?} must be positive and sum to n={n}"
        )));
    }
    let w = proximity.width();
    let mut cum = Vec::with_capacity(r);
    let mut acc = 0;
    for &s in level_sizes {
        acc += s;
        cum.push(acc);
    }
    let mut rng: Rng = rng::stream(seed, rng::STREAM_GENERATOR);
    let lip = k as f64 * 2f64.powf(k as f64 / 2.0);
    let mut labels = Vec::with_capacity(n);
    for level in 1..=r {
        let pool_dim = if level == 1 { w * d } else { w * cum[level - 2] };
        if k > pool_dim {
            return Err(Error::Infeasible(format!(
                "level {level} needs K={k} dependencies but its pool has {pool_dim} coordinates"
            )));
        }
        let start = if level == 1 { 0 } else { cum[level - 2] };
        for _ in start..cum[level - 1] {
            let deps = random_subset(&mut rng, pool_dim, k);
            let table = random_table(&mut rng, k);
            let ext = multilinear_extension(&table, pool_dim, &deps)?;
            let plain = PtfClaim::new(k, 1.0, 1.0, 1.0, ext)?;
            let witness = refine_ptf(&plain, 1.0, lip)?;
            labels.push(LabelDef {
                level,
                pool_dim,
                junta: Junta { deps, table },
                witness: Some(witness),
            });
        }
    }
    Ok(Hierarchy {
        d,
        n,
        k,
        cum,
        proximity: proximity.clone(),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::proximity::{make_proximity, ProximityKind};
    use crate::poly::table_corner;
    use rand::Rng as _;

    #[test]
    fn level_sizes_split() {
        assert_eq!(default_level_sizes(12, 3), vec![4, 4, 4]);
        assert_eq!(default_level_sizes(7, 3), vec![3, 2, 2]);
    }

    #[test]
    fn single_dictator() {
        let h = gen_junta_hierarchy(3, 1, 1, &ProximityMap::singleton(), &[1], 4).unwrap();
        let j = &h.labels[0].junta;
        assert_eq!(j.deps.len(), 1);
        // non-constant 1-junta: dictator or its negation
        assert!(j.table == vec![-1.0, 1.0] || j.table == vec![1.0, -1.0]);
        let xi = h.labels[0].witness.as_ref().unwrap().xi;
        assert_eq!(xi, junta_xi(1));
    }

    #[test]
    fn certificate_parameters() {
        let h = gen_junta_hierarchy(10, 12, 2, &ProximityMap::singleton(), &[4, 4, 4], 9).unwrap();
        for l in &h.labels {
            let w = l.witness.as_ref().unwrap();
            assert_eq!((w.k, w.m, w.b), (2, 2.0, 3.0));
            assert!((w.xi - 1.0 / 8.0).abs() < 1e-15);
        }
        assert_eq!(h.labels[5].pool_dim, 4);
        assert_eq!(h.labels[9].pool_dim, 8);
    }

    #[test]
    fn infeasible_pool() {
        let err = gen_junta_hierarchy(2, 2, 3, &ProximityMap::singleton(), &[1, 1], 1).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn r1_labels_are_juntas_of_input() {
        let p = make_proximity(ProximityKind::Window1d, 3, 1).unwrap();
        let h = gen_junta_hierarchy(4, 3, 2, &p, &[3], 2).unwrap();
        let mut rng = rng::stream(0, "t");
        let x: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect();
        let y = h.eval(&x).unwrap();
        for g in 0..3 {
            let pool = p.concat(&x, g).unwrap();
            for j in 0..3 {
                let lab = &h.labels[j].junta;
                let z: Vec<f64> = lab.deps.iter().map(|&i| pool[i]).collect();
                let idx = (0..4).find(|&i| table_corner(i, 2) == z).unwrap();
                assert_eq!(y[g][j], lab.table[idx]);
            }
        }
    }

    #[test]
    fn level_monotonicity_under_mutation() {
        let h = gen_junta_hierarchy(6, 9, 2, &ProximityMap::singleton(), &[3, 3, 3], 5).unwrap();
        let mut h2 = h.clone();
        for j in 6..9 {
            for t in h2.labels[j].junta.table.iter_mut() {
                *t = -*t;
            }
        }
        let mut rng = rng::stream(1, "t");
        for _ in 0..50 {
            let x = vec![(0..6).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect::<Vec<_>>()];
            let a = h.eval(&x).unwrap();
            let b = h2.eval(&x).unwrap();
            assert_eq!(a[0][..6], b[0][..6]);
            assert_ne!(a[0][6..], b[0][6..]);
        }
    }

    #[test]
    fn non_boolean_input_rejected() {
        let h = gen_junta_hierarchy(2, 1, 1, &ProximityMap::singleton(), &[1], 1).unwrap();
        assert!(matches!(h.eval(&[vec![0.5, 1.0]]), Err(Error::Domain(_))));
    }
}
