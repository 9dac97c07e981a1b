//! Constructive coupling of big-block sums against independent copies.
//!
//! At the start of each big block the coupled chain draws its state from the
//! stationary law by maximal coupling (overlap construction) against the
//! actual chain's conditional law given the state at the end of the previous
//! big block, a gap of q + 1 steps. Inside blocks both chains consume the
//! same uniforms, so once the states agree the block sums agree exactly.
//! The empirical mean |Y_j - Y*_j| is reported next to the p tau(q) target;
//! the target is a diagnostic, not an asserted bound.

use crate::dependence::blocking::BlockScheme;
use crate::dependence::chain::FiniteMarkovChain;
use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::stats::{correlation, mean_var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

const COUPLE_STREAM: u64 = 0xC0;
const MDEP_STREAM: u64 = 0x3D;

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub replicas: u64,
    /// Empirical E|Y_j - Y*_j| over replicas and blocks j >= 2.
    pub mean_abs_gap: f64,
    pub se_abs_gap: f64,
    /// p * rho_hat^q, the geometric-fit version of the coupling target.
    pub bound_p_tau_q: f64,
    pub rho_hat: f64,
    /// Fraction of block starts where the maximal coupling matched states.
    pub coupling_success_rate: f64,
    /// Largest |corr(Y*_i, Y*_j)| over block pairs.
    pub max_abs_pairwise_corr: f64,
    /// 3 / sqrt(replicas).
    pub corr_threshold: f64,
    /// Pooled mean of the coupled block sums (should be near 0).
    pub y_star_mean: f64,
    /// Pooled variance of the coupled block sums (should match Var(S_p)).
    pub y_star_var: f64,
}

/// Couple big-block sums of the chain against near-independent copies.
pub fn couple_blocks(
    chain: &FiniteMarkovChain,
    scheme: &BlockScheme,
    n_replicas: u64,
    seed: u64,
) -> Result<CouplingReport> {
    if scheme.q == 0 {
        return Err(Error::InvalidParameter(
            "coupling needs a positive small-block length q".into(),
        ));
    }
    if scheme.k < 2 {
        return Err(Error::InvalidParameter(
            "coupling diagnostics need at least two big blocks".into(),
        ));
    }
    let gap = chain.transition_power(scheme.q as usize + 1);
    let overlap = precompute_overlap(chain, &gap);

    let per_replica: Vec<ReplicaOutcome> = (0..n_replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[COUPLE_STREAM, r]);
            run_replica(chain, scheme, &gap, &overlap, &mut rng)
        })
        .collect();

    let k = scheme.k as usize;
    let gaps: Vec<f64> = per_replica.iter().map(|o| o.mean_gap).collect();
    let (mean_abs_gap, var_gap) = mean_var(&gaps);
    let se_abs_gap = (var_gap / n_replicas as f64).sqrt();
    let successes: u64 = per_replica.iter().map(|o| o.coupled_starts).sum();
    let coupling_success_rate = successes as f64 / (n_replicas as f64 * (k as f64 - 1.0));

    // pairwise correlations of the coupled block sums across replicas
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(per_replica.len()); k];
    for o in &per_replica {
        for (j, &v) in o.y_star.iter().enumerate() {
            cols[j].push(v);
        }
    }
    let max_abs_pairwise_corr = max_pairwise_corr(&cols);
    let pooled: Vec<f64> = cols.iter().flatten().copied().collect();
    let (y_star_mean, y_star_var) = mean_var(&pooled);

    let profile = chain.tau_profile(&(1..=20).collect::<Vec<_>>())?;
    let bound = scheme.p as f64 * profile.rho_hat.powi(scheme.q as i32);

    Ok(CouplingReport {
        replicas: n_replicas,
        mean_abs_gap,
        se_abs_gap,
        bound_p_tau_q: bound,
        rho_hat: profile.rho_hat,
        coupling_success_rate,
        max_abs_pairwise_corr,
        corr_threshold: 3.0 / (n_replicas as f64).sqrt(),
        y_star_mean,
        y_star_var,
    })
}

struct ReplicaOutcome {
    y_star: Vec<f64>,
    mean_gap: f64,
    coupled_starts: u64,
}

struct Overlap {
    /// min(nu_y, pi_y) per anchor state, plus its total mass.
    min_mass: Vec<Vec<f64>>,
    mass: Vec<f64>,
    /// cumulative residual (pi - min)^+ / (1 - mass) per anchor state.
    residual_cum: Vec<Vec<f64>>,
}

fn precompute_overlap(chain: &FiniteMarkovChain, gap: &[Vec<f64>]) -> Overlap {
    let s = chain.size();
    let pi = chain.stationary();
    let mut min_mass = Vec::with_capacity(s);
    let mut mass = Vec::with_capacity(s);
    let mut residual_cum = Vec::with_capacity(s);
    for anchor in 0..s {
        let m: Vec<f64> = (0..s).map(|y| gap[anchor][y].min(pi[y])).collect();
        let total: f64 = m.iter().sum();
        let rem = 1.0 - total;
        let mut cum = Vec::with_capacity(s);
        let mut acc = 0.0;
        for y in 0..s {
            let res = if rem > 0.0 {
                (pi[y] - m[y]).max(0.0) / rem
            } else {
                0.0
            };
            acc += res;
            cum.push(acc);
        }
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        min_mass.push(m);
        mass.push(total);
        residual_cum.push(cum);
    }
    Overlap {
        min_mass,
        mass,
        residual_cum,
    }
}

fn run_replica(
    chain: &FiniteMarkovChain,
    scheme: &BlockScheme,
    gap: &[Vec<f64>],
    overlap: &Overlap,
    rng: &mut ChaCha8Rng,
) -> ReplicaOutcome {
    let k = scheme.k as usize;
    let mut y = vec![0.0; k];
    let mut y_star = vec![0.0; k];
    let mut coupled_starts = 0u64;

    let mut state = chain.draw_stationary(rng);
    let mut anchor = state;
    for j in 0..k {
        let mut coupled = if j == 0 {
            // first block has no preceding gap; couple trivially
            None
        } else {
            // advance the actual chain one step into the block, then draw the
            // coupled state maximally against nu = P^{q+1}(anchor, .)
            let u_step: f64 = rng.random();
            state = chain.step(state, u_step);
            let u_accept: f64 = rng.random();
            let nu_at = gap[anchor][state];
            let accept = if nu_at > 0.0 {
                u_accept < overlap.min_mass[anchor][state] / nu_at
            } else {
                false
            };
            let c = if accept {
                coupled_starts += 1;
                state
            } else {
                let u_res: f64 = rng.random();
                let cum = &overlap.residual_cum[anchor];
                debug_assert!(overlap.mass[anchor] < 1.0 + 1e-12);
                cum.iter()
                    .position(|&cv| u_res < cv)
                    .unwrap_or(chain.size() - 1)
            };
            y[j] += chain.value(state);
            y_star[j] += chain.value(c);
            Some(c)
        };
        // remaining steps of the big block share uniforms
        let start = if j == 0 { 0 } else { 1 };
        for _ in start..scheme.p {
            let u: f64 = rng.random();
            state = chain.step(state, u);
            y[j] += chain.value(state);
            match coupled.as_mut() {
                Some(c) => {
                    *c = chain.step(*c, u);
                    y_star[j] += chain.value(*c);
                }
                None => y_star[j] += chain.value(state),
            }
        }
        anchor = state;
        // small block: actual chain only
        for _ in 0..scheme.q {
            let u: f64 = rng.random();
            state = chain.step(state, u);
        }
    }
    let mean_gap = y
        .iter()
        .zip(&y_star)
        .skip(1)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / (k as f64 - 1.0);
    ReplicaOutcome {
        y_star,
        mean_gap,
        coupled_starts,
    }
}

/// Largest absolute pairwise correlation among the columns.
pub fn max_pairwise_corr(cols: &[Vec<f64>]) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            best = best.max(correlation(&cols[i], &cols[j]).abs());
        }
    }
    best
}

/// Stationary m-dependent series: moving-window sums of i.i.d. innovations.
#[derive(Debug, Clone)]
pub struct MovingWindowSeries {
    pub window: usize,
    pub innovation: Dist,
}

impl MovingWindowSeries {
    /// x_i = sum of the last `window` innovations; entries at distance
    /// greater than window - 1 are independent.
    pub fn sample(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let m = self.window.max(1);
        let mut buf: Vec<f64> = (0..m).map(|_| self.innovation.sample(rng)).collect();
        let mut head = 0usize;
        let mut sum: f64 = buf.iter().sum();
        (0..len)
            .map(|_| {
                let out = sum;
                let fresh = self.innovation.sample(rng);
                sum += fresh - buf[head];
                buf[head] = fresh;
                head = (head + 1) % m;
                out
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceReport {
    pub replicas: u64,
    pub blocks: u64,
    pub max_abs_pairwise_corr: f64,
    pub corr_threshold: f64,
}

/// Pairwise correlations of big-block sums of an m-dependent series. With
/// q >= window the gaps sever all dependence, so the blocks are exactly
/// independent and the correlations are pure noise.
pub fn m_dependent_block_independence(
    series: &MovingWindowSeries,
    scheme: &BlockScheme,
    n_replicas: u64,
    seed: u64,
) -> Result<IndependenceReport> {
    if scheme.k < 2 {
        return Err(Error::InvalidParameter(
            "need at least two big blocks".into(),
        ));
    }
    let k = scheme.k as usize;
    let rows: Vec<Vec<f64>> = (0..n_replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[MDEP_STREAM, r]);
            let path = series.sample(scheme.n as usize, &mut rng);
            (0..scheme.k)
                .map(|j| path[scheme.big_block(j)].iter().sum())
                .collect()
        })
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); k];
    for row in &rows {
        for (j, &v) in row.iter().enumerate() {
            cols[j].push(v);
        }
    }
    Ok(IndependenceReport {
        replicas: n_replicas,
        blocks: scheme.k,
        max_abs_pairwise_corr: max_pairwise_corr(&cols),
        corr_threshold: 3.0 / (n_replicas as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupled_sums_match_marginal_moments() {
        let chain = FiniteMarkovChain::two_state(0.9);
        let scheme = BlockScheme {
            n: 200,
            p: 30,
            q: 10,
            k: 5,
            epsilon: 0.3,
        };
        let rep = couple_blocks(&chain, &scheme, 2000, 11).unwrap();
        // tau(10) = 0.8^10 ~ 0.107, so the target is ~3.2 while blocks of 30
        // steps have sd ~ sqrt(30 * 9); the gap must be far below a trivial
        // bound and the coupling should succeed most of the time.
        assert!(rep.coupling_success_rate > 0.8, "{rep:?}");
        assert!(rep.mean_abs_gap < 2.0 * rep.bound_p_tau_q, "{rep:?}");
        assert!((rep.rho_hat - 0.8).abs() < 1e-6);
        assert!(rep.max_abs_pairwise_corr < 5.0 * rep.corr_threshold);
        // coupled sums carry the stationary block law: Var(S_30) exactly
        let want_var = 30.0 * chain.variance_growth(&[30]).ratios[0].1;
        assert!(rep.y_star_mean.abs() < 0.5, "{rep:?}");
        assert!(
            (rep.y_star_var - want_var).abs() / want_var < 0.1,
            "var {} vs {want_var}",
            rep.y_star_var
        );
    }

    #[test]
    fn coupling_bound_geometric_evaluation() {
        let chain = FiniteMarkovChain::two_state(0.9);
        let scheme = BlockScheme {
            n: 10_000,
            p: 100,
            q: 50,
            k: 66,
            epsilon: 0.3,
        };
        // p rho^q = 100 * 0.8^50
        let rep = couple_blocks(&chain, &scheme, 4, 5).unwrap();
        assert!((rep.bound_p_tau_q - 100.0 * 0.8_f64.powi(50)).abs() < 1e-9);
        assert!((rep.bound_p_tau_q - 1.4272476927059637e-3).abs() < 1e-12);
    }

    #[test]
    fn zero_q_rejected() {
        let chain = FiniteMarkovChain::two_state(0.9);
        let scheme = BlockScheme {
            n: 100,
            p: 10,
            q: 0,
            k: 10,
            epsilon: 0.3,
        };
        assert!(couple_blocks(&chain, &scheme, 10, 1).is_err());
    }

    #[test]
    fn m_dependent_blocks_decorrelate() {
        let series = MovingWindowSeries {
            window: 3,
            innovation: Dist::Normal { sigma: 1.0 },
        };
        let scheme = BlockScheme {
            n: 125,
            p: 20,
            q: 5,
            k: 5,
            epsilon: 0.3,
        };
        let rep = m_dependent_block_independence(&series, &scheme, 4000, 17).unwrap();
        assert!(rep.max_abs_pairwise_corr <= rep.corr_threshold, "{rep:?}");
    }

    #[test]
    fn moving_window_has_expected_variance() {
        let series = MovingWindowSeries {
            window: 4,
            innovation: Dist::Rademacher,
        };
        let mut rng = substream(3, &[9]);
        let path = series.sample(50_000, &mut rng);
        let (m, v) = mean_var(&path);
        assert!(m.abs() < 0.06, "mean {m}");
        assert!((v - 4.0).abs() < 0.2, "var {v}");
    }
}
