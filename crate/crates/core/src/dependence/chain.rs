//! Finite-state stationary Markov chains with exact dependence coefficients.
//!
//! The alpha coefficient is computed between the sigma-fields of X_0 and X_k
//! (two coordinates; the Markov property makes this the natural reduction,
//! and a conservative summed variant is provided). tau_1 is the averaged
//! 1-Wasserstein distance between the conditional law of X_k given X_0 and
//! the stationary law, which is exact by finite summation.

use crate::error::{Error, Result};
use crate::stats::ols_fit;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Exhaustive subset enumeration is limited to this many states.
pub const MAX_ALPHA_STATES: usize = 20;

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;
const CENTERING_TOL: f64 = 1e-10;

/// Serializable chain description: `{"values": [...], "transition": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub values: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FiniteMarkovChain {
    values: Vec<f64>,
    transition: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    cum_rows: Vec<Vec<f64>>,
    cum_pi: Vec<f64>,
}

impl FiniteMarkovChain {
    /// Build and validate; the state values must already be centered under
    /// the stationary law.
    pub fn new(values: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let chain = Self::build(values, transition)?;
        let mean: f64 = chain
            .stationary
            .iter()
            .zip(&chain.values)
            .map(|(p, v)| p * v)
            .sum();
        if mean.abs() > CENTERING_TOL {
            return Err(Error::InvalidChain(format!(
                "state values not centered under the stationary law (mean {mean:.3e})"
            )));
        }
        Ok(chain)
    }

    /// Build after shifting the values so they are centered under pi.
    pub fn new_centered(values: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let chain = Self::build(values, transition)?;
        let mean: f64 = chain
            .stationary
            .iter()
            .zip(&chain.values)
            .map(|(p, v)| p * v)
            .sum();
        let shifted = chain.values.iter().map(|v| v - mean).collect();
        Self::build(shifted, chain.transition)
    }

    fn build(values: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let s = values.len();
        if s == 0 {
            return Err(Error::InvalidChain("empty state space".into()));
        }
        if transition.len() != s || transition.iter().any(|r| r.len() != s) {
            return Err(Error::InvalidChain(format!(
                "transition matrix must be {s}x{s}"
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0 + ROW_SUM_TOL).contains(&p)) {
                return Err(Error::InvalidChain(format!(
                    "row {i} has entries outside [0,1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidChain(format!("row {i} sums to {sum}, not 1")));
            }
        }
        let stationary = solve_stationary(&transition)?;
        // verify pi P = pi
        for y in 0..s {
            let lhs: f64 = (0..s).map(|x| stationary[x] * transition[x][y]).sum();
            if (lhs - stationary[y]).abs() > STATIONARY_TOL {
                return Err(Error::InvalidChain(
                    "stationary equation residual exceeds tolerance".into(),
                ));
            }
        }
        let cum_rows = transition.iter().map(|r| cumulative(r)).collect();
        let cum_pi = cumulative(&stationary);
        Ok(FiniteMarkovChain {
            values,
            transition,
            stationary,
            cum_rows,
            cum_pi,
        })
    }

    /// Symmetric two-state chain on values +/-1 with the given stay probability.
    pub fn two_state(stay: f64) -> Self {
        Self::new(
            vec![1.0, -1.0],
            vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
        )
        .expect("two-state chain is always valid for stay in [0,1]")
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn stationary_variance(&self) -> f64 {
        self.stationary
            .iter()
            .zip(&self.values)
            .map(|(p, v)| p * v * v)
            .sum()
    }

    /// P^k by repeated multiplication; k = 0 gives the identity.
    pub fn transition_power(&self, k: usize) -> Vec<Vec<f64>> {
        let s = self.size();
        let mut out: Vec<Vec<f64>> = (0..s)
            .map(|i| (0..s).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for _ in 0..k {
            out = mat_mul(&out, &self.transition);
        }
        out
    }

    /// Cov(X_0, X_k) under stationarity, exact.
    pub fn cov_lag(&self, k: usize) -> f64 {
        let s = self.size();
        let mut w = self.values.clone();
        for _ in 0..k {
            let mut next = vec![0.0; s];
            for i in 0..s {
                next[i] = (0..s).map(|j| self.transition[i][j] * w[j]).sum();
            }
            w = next;
        }
        (0..s)
            .map(|i| self.stationary[i] * self.values[i] * w[i])
            .sum()
    }

    /// Strong mixing coefficient between sigma(X_0) and sigma(X_k):
    /// max over A, B of |P(X_0 in A, X_k in B) - P(A) P(B)|.
    ///
    /// A is enumerated exhaustively (Gray code); for fixed A the optimal B
    /// collects the states with positive deviation, so the value is
    /// sum_y (sum_{s in A} D_{sy})^+ with D_{sy} = pi_s (P^k_{sy} - pi_y).
    pub fn alpha_exact(&self, k: usize) -> Result<f64> {
        let s = self.size();
        if s > MAX_ALPHA_STATES {
            return Err(Error::StateSpaceTooLarge(s, MAX_ALPHA_STATES));
        }
        let pk = self.transition_power(k);
        let mut d = vec![vec![0.0; s]; s];
        for i in 0..s {
            for y in 0..s {
                d[i][y] = self.stationary[i] * (pk[i][y] - self.stationary[y]);
            }
        }
        let mut col = vec![0.0; s];
        let mut best = 0.0_f64;
        let mut prev_gray: u32 = 0;
        for i in 1u32..(1 << s) {
            let gray = i ^ (i >> 1);
            let flipped = (prev_gray ^ gray).trailing_zeros() as usize;
            let sign = if gray & (1 << flipped) != 0 {
                1.0
            } else {
                -1.0
            };
            for y in 0..s {
                col[y] += sign * d[flipped][y];
            }
            let val: f64 = col.iter().map(|&c| c.max(0.0)).sum();
            best = best.max(val);
            prev_gray = gray;
        }
        Ok(best)
    }

    /// Conservative proxy for alpha against the whole future:
    /// sum of the two-coordinate coefficients over lags k..k+horizon.
    pub fn alpha_future_sum(&self, k: usize, horizon: usize) -> Result<f64> {
        let mut total = 0.0;
        for lag in k..k + horizon {
            total += self.alpha_exact(lag)?;
        }
        Ok(total)
    }

    /// tau coefficient at the single-coordinate level:
    /// sum_s pi_s W_1(law(X_k | X_0 = s), law(X_k)).
    pub fn tau1_exact(&self, k: usize) -> Result<f64> {
        let s = self.size();
        if s > MAX_ALPHA_STATES {
            return Err(Error::StateSpaceTooLarge(s, MAX_ALPHA_STATES));
        }
        let pk = self.transition_power(k);
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        let mut total = 0.0;
        for i in 0..s {
            total += self.stationary[i] * w1_sorted(&self.values, &order, &pk[i], &self.stationary);
        }
        Ok(total)
    }

    /// Exact coefficients over a lag grid with the comparison bound
    /// 4 ||X_0||_inf alpha(k) and a geometric fit of tau_1.
    pub fn tau_profile(&self, lags: &[usize]) -> Result<TauProfile> {
        let mut tau1 = Vec::with_capacity(lags.len());
        let mut alpha = Vec::with_capacity(lags.len());
        let mut tau_upper = Vec::with_capacity(lags.len());
        for &k in lags {
            let t = self.tau1_exact(k)?;
            let a = self.alpha_exact(k)?;
            tau1.push(t);
            alpha.push(a);
            tau_upper.push(4.0 * self.sup_norm() * a);
        }
        // geometric fit on the positive tau values
        let pts: Vec<(f64, f64)> = lags
            .iter()
            .zip(&tau1)
            .filter(|(_, &t)| t > 0.0)
            .map(|(&k, &t)| (k as f64, t.ln()))
            .collect();
        let rho_hat = if pts.len() >= 2 {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (slope, _, _) = ols_fit(&xs, &ys);
            slope.exp().min(1.0)
        } else {
            0.0
        };
        Ok(TauProfile {
            lags: lags.to_vec(),
            tau1,
            alpha,
            tau_upper,
            rho_hat,
        })
    }

    /// Var(S_n)/n over a grid, plus the limit
    /// sigma^2 = Var(X_0) + 2 sum_k Cov(X_0, X_k).
    pub fn variance_growth(&self, n_grid: &[u64]) -> VarianceGrowth {
        let var0 = self.stationary_variance();
        let n_max = n_grid.iter().copied().max().unwrap_or(1) as usize;
        // covariances up to the largest n requested, and further until the
        // geometric tail is negligible for the limit
        let mut covs = Vec::new();
        let mut k = 1usize;
        let mut tail_sum = 0.0;
        loop {
            let c = self.cov_lag(k);
            covs.push(c);
            tail_sum += c;
            let done_for_grid = k >= n_max.saturating_sub(1);
            let negligible = c.abs() < 1e-16 * var0.max(1e-300) && k > 8;
            if (done_for_grid && negligible) || k > 2_000_000 {
                break;
            }
            k += 1;
        }
        let sigma2 = var0 + 2.0 * tail_sum;
        let ratios = n_grid
            .iter()
            .map(|&n| {
                let nf = n as f64;
                let mut acc = 0.0;
                for (idx, c) in covs.iter().enumerate() {
                    let lag = (idx + 1) as f64;
                    if lag >= nf {
                        break;
                    }
                    acc += (1.0 - lag / nf) * c;
                }
                (n, var0 + 2.0 * acc)
            })
            .collect();
        VarianceGrowth { ratios, sigma2 }
    }

    /// One transition by inverse CDF on the row of `state`.
    pub fn step(&self, state: usize, u: f64) -> usize {
        search_cumulative(&self.cum_rows[state], u)
    }

    pub fn draw_stationary(&self, rng: &mut ChaCha8Rng) -> usize {
        search_cumulative(&self.cum_pi, rng.random::<f64>())
    }

    /// Stationary path of `len` values.
    pub fn sample_path(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut state = self.draw_stationary(rng);
        (0..len)
            .map(|_| {
                state = self.step(state, rng.random::<f64>());
                self.values[state]
            })
            .collect()
    }

    pub fn value(&self, state: usize) -> f64 {
        self.values[state]
    }
}

impl TryFrom<ChainSpec> for FiniteMarkovChain {
    type Error = Error;
    fn try_from(spec: ChainSpec) -> Result<Self> {
        FiniteMarkovChain::new(spec.values, spec.transition)
    }
}

/// Exact dependence coefficients on a lag grid.
#[derive(Debug, Clone, Serialize)]
pub struct TauProfile {
    pub lags: Vec<usize>,
    pub tau1: Vec<f64>,
    pub alpha: Vec<f64>,
    /// 4 ||X_0||_inf alpha(k), the upper half of the bracket.
    pub tau_upper: Vec<f64>,
    /// Geometric decay rate fitted to tau_1 by log-linear regression.
    pub rho_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceGrowth {
    /// (n, Var(S_n)/n).
    pub ratios: Vec<(u64, f64)>,
    pub sigma2: f64,
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0; // absorb rounding so search never falls off the end
    }
    out
}

fn search_cumulative(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = a.len();
    let mut out = vec![vec![0.0; s]; s];
    for i in 0..s {
        for l in 0..s {
            let ail = a[i][l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..s {
                out[i][j] += ail * b[l][j];
            }
        }
    }
    out
}

/// W_1 between two pmfs on the shared (sorted by `order`) support.
fn w1_sorted(values: &[f64], order: &[usize], p: &[f64], q: &[f64]) -> f64 {
    let mut fp = 0.0;
    let mut fq = 0.0;
    let mut total = 0.0;
    for w in order.windows(2) {
        fp += p[w[0]];
        fq += q[w[0]];
        total += (fp - fq).abs() * (values[w[1]] - values[w[0]]);
    }
    total
}

/// Solve pi P = pi, sum pi = 1 by dense elimination with partial pivoting.
fn solve_stationary(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let s = p.len();
    let mut a = vec![vec![0.0; s + 1]; s];
    for i in 0..s {
        for j in 0..s {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - p[j][i];
        }
    }
    for j in 0..s {
        a[s - 1][j] = 1.0;
    }
    a[s - 1][s] = 1.0;
    // elimination
    for col in 0..s {
        let pivot = (col..s)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-13 {
            return Err(Error::InvalidChain(
                "no unique stationary distribution (reducible chain?)".into(),
            ));
        }
        a.swap(col, pivot);
        for row in 0..s {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for j in col..=s {
                a[row][j] -= f * a[col][j];
            }
        }
    }
    let mut pi: Vec<f64> = (0..s).map(|i| a[i][s] / a[i][i]).collect();
    let total: f64 = pi.iter().sum();
    for v in &mut pi {
        *v /= total;
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
    }
    if pi.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidChain("negative stationary mass".into()));
    }
    Ok(pi)
}
