//! Big/small block planner and the exact block-sum decomposition
//! S_[nt] = sum_{j<=[kt]} Y_j + sum_{j<=[kt]} Z_j + R_{n,t}.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Floor that absorbs last-ulp dust from closed-form speed evaluation, so
/// quantities that are integers in exact arithmetic floor to that integer.
pub fn stable_floor(x: f64) -> u64 {
    (x + (1e-12 * x.abs()).max(1e-9)).floor() as u64
}

/// Block plan: k alternating big (p) and small (q) blocks inside 1..n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockScheme {
    pub n: u64,
    /// Big-block length.
    pub p: u64,
    /// Small-block length.
    pub q: u64,
    /// Number of (big, small) pairs.
    pub k: u64,
    /// The epsilon used by the planner.
    pub epsilon: f64,
}

/// Asymptotic constraints on the planner parameters, reported per n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    /// Must tend to zero.
    pub epsilon: f64,
    /// epsilon^2 n a_n^2, must tend to infinity.
    pub eps2_n_an2: f64,
    /// epsilon^2 n a_n / log(n a_n), must tend to infinity.
    pub eps2_n_an_over_log: f64,
}

impl BlockScheme {
    /// 0-based half-open index range of the j-th big block (j from 0).
    pub fn big_block(&self, j: u64) -> Range<usize> {
        let start = (j * (self.p + self.q)) as usize;
        start..start + self.p as usize
    }

    /// 0-based half-open index range of the j-th small block.
    pub fn small_block(&self, j: u64) -> Range<usize> {
        let start = (j * (self.p + self.q) + self.p) as usize;
        start..start + self.q as usize
    }

    /// Indices covered by the k block pairs; the tail n - covered feeds R.
    pub fn covered(&self) -> u64 {
        self.k * (self.p + self.q)
    }

    pub fn diagnostics(&self, a_n: f64) -> BlockDiagnostics {
        let nf = self.n as f64;
        let e2 = self.epsilon * self.epsilon;
        BlockDiagnostics {
            epsilon: self.epsilon,
            eps2_n_an2: e2 * nf * a_n * a_n,
            eps2_n_an_over_log: e2 * nf * a_n / (nf * a_n).ln(),
        }
    }
}

/// Plan blocks with p = [eps n a_n], q = [eps^2 n a_n], k = [n/(p+q)].
/// The default epsilon is (n a_n^2)^{-1/4}; an override must lie in (0, 1).
pub fn plan_blocks(n: u64, a_n: f64, epsilon: Option<f64>) -> Result<BlockScheme> {
    if !(a_n > 0.0) || !a_n.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "a_n = {a_n} must be positive"
        )));
    }
    let nf = n as f64;
    let eps = match epsilon {
        Some(e) => e,
        None => (nf * a_n * a_n).powf(-0.25),
    };
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::BlockPlanInfeasible {
            n,
            reason: format!("epsilon = {eps} outside (0, 1); n a_n^2 too small for the default"),
        });
    }
    let p = stable_floor(eps * nf * a_n);
    let q = stable_floor(eps * eps * nf * a_n);
    if q < 1 {
        return Err(Error::BlockPlanInfeasible {
            n,
            reason: format!("small block q = [{}] < 1", eps * eps * nf * a_n),
        });
    }
    if p < 1 {
        return Err(Error::BlockPlanInfeasible {
            n,
            reason: "big block p < 1".into(),
        });
    }
    if p + q > n {
        return Err(Error::BlockPlanInfeasible {
            n,
            reason: format!("p + q = {} exceeds n", p + q),
        });
    }
    let k = n / (p + q);
    Ok(BlockScheme {
        n,
        p,
        q,
        k,
        epsilon: eps,
    })
}

/// Block sums and the remainder evaluated on a t-grid.
#[derive(Debug, Clone, Serialize)]
pub struct BlockSums {
    /// Big-block sums Y_j, j = 1..k.
    pub y: Vec<f64>,
    /// Small-block sums Z_j.
    pub z: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// R_{n,t} for each grid t.
    pub remainder: Vec<f64>,
}

/// Exact decomposition of the series over the scheme.
pub fn block_sums(series: &[f64], scheme: &BlockScheme, t_grid: &[f64]) -> Result<BlockSums> {
    if series.len() != scheme.n as usize {
        return Err(Error::SeriesTooShort {
            got: series.len(),
            needed: scheme.n as usize,
        });
    }
    if t_grid.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::InvalidParameter("t grid must lie in [0, 1]".into()));
    }
    let y: Vec<f64> = (0..scheme.k)
        .map(|j| series[scheme.big_block(j)].iter().sum())
        .collect();
    let z: Vec<f64> = (0..scheme.k)
        .map(|j| series[scheme.small_block(j)].iter().sum())
        .collect();
    let mut prefix = Vec::with_capacity(series.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in series {
        acc += x;
        prefix.push(acc);
    }
    let yz_prefix: Vec<f64> = {
        let mut v = Vec::with_capacity(scheme.k as usize + 1);
        v.push(0.0);
        let mut a = 0.0;
        for j in 0..scheme.k as usize {
            a += y[j] + z[j];
            v.push(a);
        }
        v
    };
    let remainder = t_grid
        .iter()
        .map(|&t| {
            let nt = (scheme.n as f64 * t).floor() as usize;
            let kt = ((scheme.k as f64 * t).floor() as usize).min(scheme.k as usize);
            prefix[nt] - yz_prefix[kt]
        })
        .collect();
    Ok(BlockSums {
        y,
        z,
        t_grid: t_grid.to_vec(),
        remainder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planner_matches_closed_form_arithmetic() {
        // n = 10^6, a_n = n^{-0.4}: eps = 10^{-0.3}, (p, q, k) = (1995, 1000, 333)
        let n = 1_000_000u64;
        let a = (n as f64).powf(-0.4);
        let s = plan_blocks(n, a, None).unwrap();
        assert_eq!((s.p, s.q, s.k), (1995, 1000, 333));
        assert!((s.epsilon - 0.5011872336272722).abs() < 1e-12);

        // n = 10^4, a_n = 0.05: eps = 25^{-1/4}, eps^2 = 0.2 exactly
        let s = plan_blocks(10_000, 0.05, None).unwrap();
        assert_eq!((s.p, s.q, s.k), (223, 100, 30));
        assert!((s.epsilon - 25f64.powf(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn planner_rejects_degenerate_regimes() {
        // default epsilon >= 1 when n a_n^2 <= 1
        assert!(matches!(
            plan_blocks(100, 0.001, None),
            Err(Error::BlockPlanInfeasible { .. })
        ));
        // explicit small epsilon drives q = [0.9] = 0
        let err = plan_blocks(100, 0.001, Some(0.3)).unwrap_err();
        match err {
            Error::BlockPlanInfeasible { reason, .. } => {
                assert!(reason.contains("q"), "{reason}")
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn hand_enumerated_block_sums() {
        let series: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        let scheme = BlockScheme {
            n: 10,
            p: 2,
            q: 1,
            k: 3,
            epsilon: 0.5,
        };
        let bs = block_sums(&series, &scheme, &[0.5, 1.0]).unwrap();
        assert_eq!(bs.y, vec![3.0, 9.0, 15.0]);
        assert_eq!(bs.z, vec![3.0, 6.0, 9.0]);
        // t = 1: everything but the trailing element 10
        assert_eq!(bs.remainder[1], 10.0);
        // t = 0.5: prefix(5) = 15 minus first pair 3 + 3
        assert_eq!(bs.remainder[0], 9.0);
    }

    #[test]
    fn zero_series_gives_zero_sums() {
        let scheme = BlockScheme {
            n: 10,
            p: 2,
            q: 1,
            k: 3,
            epsilon: 0.5,
        };
        let bs = block_sums(&[0.0; 10], &scheme, &[1.0]).unwrap();
        assert!(bs.y.iter().chain(&bs.z).all(|&v| v == 0.0));
        assert_eq!(bs.remainder[0], 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let scheme = BlockScheme {
            n: 10,
            p: 2,
            q: 1,
            k: 3,
            epsilon: 0.5,
        };
        assert!(block_sums(&[1.0; 9], &scheme, &[1.0]).is_err());
    }

    #[test]
    fn stable_floor_absorbs_dust() {
        assert_eq!(stable_floor(999.9999999999997), 1000);
        assert_eq!(stable_floor(1000.0000000000002), 1000);
        assert_eq!(stable_floor(999.99), 999);
        assert_eq!(stable_floor(0.9), 0);
    }

    #[test]
    fn diagnostics_move_the_right_way_for_power_law_speeds() {
        // a_n = n^{-gamma}, gamma in (0, 1/2): epsilon decreasing, the two
        // growth diagnostics increasing along the grid
        for gamma in [0.1, 0.25, 0.4] {
            let grid = [10_000u64, 40_000, 160_000, 640_000];
            let mut prev: Option<BlockDiagnostics> = None;
            for &n in &grid {
                let a = (n as f64).powf(-gamma);
                let s = plan_blocks(n, a, None).unwrap();
                let d = s.diagnostics(a);
                if let Some(p) = prev {
                    assert!(d.epsilon < p.epsilon);
                    assert!(d.eps2_n_an2 > p.eps2_n_an2);
                    assert!(d.eps2_n_an_over_log > p.eps2_n_an_over_log);
                }
                prev = Some(d);
            }
        }
    }
}
