//! Numerical evaluation of the sufficient/necessary tail conditions, with
//! per-n diagnostics and a declared finite-grid verdict heuristic.
//!
//! Every condition is asymptotic; a finite grid can only exhibit a trend.
//! The verdict rule is fixed here once: over the last third of the grid,
//! a diagnostic heading to its target monotonically with either a strong
//! log-log fit (R^2 >= 0.9) or an already-negligible value passes; a flat
//! or wrong-direction trend fails; anything else is inconclusive.

use crate::error::{Error, Result};
use crate::models::TriangularArrayModel;
use crate::speed::SpeedSequence;
use crate::stats::{logsumexp, ols_fit};
use serde::Serialize;
use std::collections::BTreeMap;

// ---------------------------------------------------------------------------
// reports and verdicts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Diagnostic must tend to 0.
    Zero,
    /// Diagnostic must tend to -infinity.
    NegInfinity,
    /// Diagnostic must eventually sit at or below 1.
    BoundedByOne,
    /// Diagnostic must stay bounded (stabilize).
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// The parameters a checker actually used.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CheckerParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_grid_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub route: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition_id: String,
    pub n_grid: Vec<u64>,
    /// Per-n diagnostic; -inf is a legitimate value, NaN marks "unavailable".
    pub diagnostics: Vec<f64>,
    pub target: Target,
    pub verdict: Verdict,
    pub params: CheckerParams,
    /// Side sequences (e.g. the smallest empirical C1 per n).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<String, Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ConditionReport {
    fn new(
        id: &str,
        n_grid: Vec<u64>,
        diagnostics: Vec<f64>,
        target: Target,
        params: CheckerParams,
    ) -> Self {
        let verdict = verdict_for(&diagnostics, &n_grid, target);
        ConditionReport {
            condition_id: id.to_string(),
            n_grid,
            diagnostics,
            target,
            verdict,
            params,
            aux: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

fn tail_slice<T>(xs: &[T]) -> &[T] {
    let len = xs.len();
    let take = (len.div_ceil(3)).max(3.min(len));
    &xs[len - take..]
}

fn nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-300)
}

fn nondecreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9) - 1e-300)
}

fn flat(xs: &[f64]) -> bool {
    if xs.len() < 3 {
        return false; // too short to call a trend
    }
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 && min == 0.0 {
        return false;
    }
    (max - min).abs() <= 1e-3 * max.abs().max(min.abs())
}

/// Log-log fit of |diagnostic| against n over the tail; (slope, r2).
fn loglog_fit(ns: &[u64], xs: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(xs)
        .filter(|(_, &x)| x.is_finite() && x > 0.0)
        .map(|(&n, &x)| ((n as f64).ln(), x.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (slope, _, r2) = ols_fit(&x, &y);
    Some((slope, r2))
}

/// The fixed verdict heuristic described in the module docs.
pub fn verdict_for(diagnostics: &[f64], n_grid: &[u64], target: Target) -> Verdict {
    if diagnostics.is_empty() || diagnostics.iter().any(|d| d.is_nan()) {
        return Verdict::Inconclusive;
    }
    let tail = tail_slice(diagnostics);
    let tail_n = tail_slice(n_grid);
    match target {
        Target::Zero => {
            if tail.iter().any(|d| !d.is_finite()) {
                return Verdict::Fail;
            }
            let abs: Vec<f64> = tail.iter().map(|d| d.abs()).collect();
            if abs.iter().all(|&d| d <= 1e-14) {
                return Verdict::Pass;
            }
            if flat(&abs) {
                return Verdict::Fail;
            }
            if !nonincreasing(&abs) {
                return Verdict::Inconclusive;
            }
            if *abs.last().unwrap() <= 1e-10 {
                return Verdict::Pass;
            }
            match loglog_fit(tail_n, &abs) {
                Some((slope, r2)) if slope <= -0.05 && r2 >= 0.9 => Verdict::Pass,
                _ => Verdict::Inconclusive,
            }
        }
        Target::NegInfinity => {
            if tail.iter().any(|&d| d > 0.0 || d == f64::INFINITY) {
                return Verdict::Fail;
            }
            if tail.iter().all(|&d| d == f64::NEG_INFINITY) {
                return Verdict::Pass;
            }
            if tail.contains(&f64::NEG_INFINITY) {
                // mixed exact zeros and positive probabilities
                return if *tail.last().unwrap() == f64::NEG_INFINITY {
                    Verdict::Pass
                } else {
                    Verdict::Inconclusive
                };
            }
            let mags: Vec<f64> = tail.iter().map(|&d| -d).collect();
            if flat(&mags) {
                return Verdict::Fail;
            }
            if !nondecreasing(&mags) {
                return Verdict::Inconclusive;
            }
            if *mags.last().unwrap() >= 20.0 {
                return Verdict::Pass;
            }
            match loglog_fit(tail_n, &mags) {
                Some((slope, r2)) if slope >= 0.05 && r2 >= 0.9 => Verdict::Pass,
                Some((slope, r2)) if slope <= -0.05 && r2 >= 0.9 => Verdict::Fail,
                // nondecreasing but with vanishing log-log growth: the
                // magnitude is levelling off at a finite value
                Some((slope, _)) if slope.abs() < 0.02 => Verdict::Fail,
                _ => Verdict::Inconclusive,
            }
        }
        Target::BoundedByOne => {
            if tail.iter().all(|&d| d <= 1.0 + 1e-12) {
                Verdict::Pass
            } else if tail.iter().all(|&d| d > 1.0) && nondecreasing(tail) {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            }
        }
        Target::Bounded => {
            if tail.iter().any(|d| !d.is_finite()) {
                return Verdict::Fail;
            }
            if flat(tail) || nonincreasing(&tail.iter().map(|d| d.abs()).collect::<Vec<_>>()) {
                return Verdict::Pass;
            }
            match loglog_fit(tail_n, &tail.iter().map(|d| d.abs()).collect::<Vec<_>>()) {
                Some((slope, r2)) if slope >= 0.05 && r2 >= 0.9 => Verdict::Fail,
                _ => Verdict::Inconclusive,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// core checks
// ---------------------------------------------------------------------------

/// The family of tail/moment conditions evaluated per n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoreCheck {
    /// s_n^{-2} sum_j E[X^2 ; |X| >= eps s_n sqrt(a_n)] -> 0.
    Lindeberg { epsilon: f64 },
    /// a_n sum_j E[e^{beta |X|/(sqrt(a_n) s_n)} ; band] -> 0,
    /// band = (sqrt(a_n) s_n, s_n/sqrt(a_n)).
    ExpBanded { beta: f64 },
    /// Same with band (eps sqrt(a_n) s_n, inf).
    ExpFull { beta: f64, epsilon: f64 },
    /// max_u a_n sum_j P(|X| > u sqrt(a_n) s_n) e^{beta u} / C1 <= 1
    /// over u in [1, 1/a_n] (extended down to eps when given).
    TailGrid {
        beta: f64,
        c1: f64,
        epsilon: Option<f64>,
    },
    /// a_n log P(max_j |X_nj| >= s_n/sqrt(a_n)) -> -inf.
    MaxNeg,
}

struct RowLawData {
    a_n: f64,
    s_n: f64,
    /// (multiplicity, law) groups, None when only Monte Carlo access exists.
    groups: Option<Vec<(u64, crate::dist::EntryLaw)>>,
}

fn row_data(model: &TriangularArrayModel, a: &SpeedSequence, n: u64) -> Result<RowLawData> {
    let a_n = a.value(n)?;
    if !(a_n < 1.0) {
        return Err(Error::DegenerateBands { n, a: a_n });
    }
    let s_n = model.total_variance(n)?.sqrt();
    Ok(RowLawData {
        a_n,
        s_n,
        groups: model.row_law_groups(n)?,
    })
}

/// Default u-grid: 64 log-spaced points on [1, 1/a_n], with a 32-point
/// extension on [eps, 1) when an epsilon is supplied.
pub fn default_u_grid(a_n: f64, epsilon: Option<f64>) -> Vec<f64> {
    let mut grid = Vec::new();
    if let Some(eps) = epsilon {
        if eps < 1.0 && eps > 0.0 {
            let ratio = (1.0 / eps).powf(1.0 / 32.0);
            let mut u = eps;
            for _ in 0..32 {
                grid.push(u);
                u *= ratio;
            }
        }
    }
    let hi = 1.0 / a_n;
    let ratio = hi.powf(1.0 / 63.0);
    let mut u = 1.0;
    for _ in 0..63 {
        grid.push(u);
        u *= ratio;
    }
    grid.push(hi);
    grid
}

/// Evaluate one core condition over the model's n-grid.
pub fn check_core(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    check: CoreCheck,
) -> Result<ConditionReport> {
    let n_grid = model.n_grid().to_vec();
    let mut diagnostics = Vec::with_capacity(n_grid.len());
    let mut notes = Vec::new();
    let mut empirical_c1 = Vec::new();
    for &n in &n_grid {
        let data = row_data(model, a, n)?;
        let Some(groups) = &data.groups else {
            diagnostics.push(f64::NAN);
            if notes.is_empty() {
                notes.push(
                    "entry law only available by Monte Carlo; core diagnostics skipped".into(),
                );
            }
            continue;
        };
        let root_a = data.a_n.sqrt();
        let lo_band = root_a * data.s_n;
        let hi_band = data.s_n / root_a;
        let d = match check {
            CoreCheck::Lindeberg { epsilon } => {
                let c = epsilon * lo_band;
                let sum: f64 = groups
                    .iter()
                    .map(|(m, law)| *m as f64 * law.second_at_least(c))
                    .sum();
                sum / (data.s_n * data.s_n)
            }
            CoreCheck::ExpBanded { beta } => {
                let g = beta / lo_band;
                let terms: Vec<f64> = groups
                    .iter()
                    .map(|(m, law)| (*m as f64).ln() + law.log_exp_band(g, lo_band, hi_band))
                    .collect();
                data.a_n * logsumexp(&terms).exp()
            }
            CoreCheck::ExpFull { beta, epsilon } => {
                let g = beta / lo_band;
                let terms: Vec<f64> = groups
                    .iter()
                    .map(|(m, law)| {
                        (*m as f64).ln() + law.log_exp_band(g, epsilon * lo_band, f64::INFINITY)
                    })
                    .collect();
                data.a_n * logsumexp(&terms).exp()
            }
            CoreCheck::TailGrid { beta, c1, epsilon } => {
                let u_grid = default_u_grid(data.a_n, epsilon);
                let mut best = f64::NEG_INFINITY;
                for &u in &u_grid {
                    let x = u * lo_band;
                    let terms: Vec<f64> = groups
                        .iter()
                        .map(|(m, law)| (*m as f64).ln() + law.log_tail(x))
                        .collect();
                    let log_val = data.a_n.ln() + logsumexp(&terms) + beta * u;
                    best = best.max(log_val);
                }
                empirical_c1.push(best.exp());
                (best - c1.ln()).exp()
            }
            CoreCheck::MaxNeg => {
                let log_p = log_prob_max_exceeds(groups, hi_band);
                data.a_n * log_p
            }
        };
        diagnostics.push(d);
    }
    let (id, target, params) = match check {
        CoreCheck::Lindeberg { epsilon } => (
            "lindeberg",
            Target::Zero,
            CheckerParams {
                epsilon: Some(epsilon),
                ..Default::default()
            },
        ),
        CoreCheck::ExpBanded { beta } => (
            "exp_banded",
            Target::Zero,
            CheckerParams {
                beta: Some(beta),
                ..Default::default()
            },
        ),
        CoreCheck::ExpFull { beta, epsilon } => (
            "exp_full",
            Target::Zero,
            CheckerParams {
                beta: Some(beta),
                epsilon: Some(epsilon),
                ..Default::default()
            },
        ),
        CoreCheck::TailGrid { beta, c1, epsilon } => (
            "tail_grid",
            Target::BoundedByOne,
            CheckerParams {
                beta: Some(beta),
                c1: Some(c1),
                epsilon,
                u_grid_len: Some(64 + if epsilon.is_some() { 32 } else { 0 }),
                ..Default::default()
            },
        ),
        CoreCheck::MaxNeg => ("max_neg", Target::NegInfinity, CheckerParams::default()),
    };
    let mut report = ConditionReport::new(id, n_grid, diagnostics, target, params);
    if !empirical_c1.is_empty() {
        report.aux.insert("empirical_c1".into(), empirical_c1);
    }
    report.notes = notes;
    Ok(report)
}

/// ln P(max_j |X_nj| >= c) for independent entries given as (count, law).
fn log_prob_max_exceeds(groups: &[(u64, crate::dist::EntryLaw)], c: f64) -> f64 {
    let log_tails: Vec<(u64, f64)> = groups
        .iter()
        .map(|(m, law)| (*m, law.log_tail(c)))
        .collect();
    let max_lt = log_tails
        .iter()
        .map(|&(_, lt)| lt)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_lt == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max_lt < -40.0 {
        // union bound is exact to second order here
        let terms: Vec<f64> = log_tails
            .iter()
            .map(|&(m, lt)| (m as f64).ln() + lt)
            .collect();
        return logsumexp(&terms);
    }
    let mut log_one_minus = 0.0;
    for &(m, lt) in &log_tails {
        let t = lt.exp();
        if t >= 1.0 {
            return 0.0;
        }
        log_one_minus += m as f64 * (-t).ln_1p();
    }
    (-log_one_minus.exp_m1()).ln()
}

// ---------------------------------------------------------------------------
// regularity and the derived range function c(x)
// ---------------------------------------------------------------------------

/// Knots of f(n) = s_n^2 a_n, g(n) = s_n^2/a_n, l(n) = s_n^2/k_n on the grid,
/// with piecewise-linear interpolation between consecutive integers and an
/// on-demand inverse for c(x) = f^{-1}(g(x)).
#[derive(Debug, Clone, Serialize)]
pub struct RegularityFns {
    pub grid: Vec<u64>,
    pub f_knots: Vec<f64>,
    pub g_knots: Vec<f64>,
    pub l_knots: Vec<f64>,
    /// Monotonicity violations found on the grid; empty means RC holds there.
    pub violations: Vec<String>,
    /// Largest n the inverse search will visit; beyond it the sup range in
    /// downstream checks is truncated and flagged, never extrapolated.
    pub cap: u64,
}

fn f_of(model: &TriangularArrayModel, a: &SpeedSequence, n: u64) -> Result<f64> {
    Ok(model.total_variance(n)? * a.value(n)?)
}

fn g_of(model: &TriangularArrayModel, a: &SpeedSequence, n: u64) -> Result<f64> {
    Ok(model.total_variance(n)? / a.value(n)?)
}

fn interp(model: &TriangularArrayModel, a: &SpeedSequence, x: f64, f: bool) -> Result<f64> {
    let lo = x.floor() as u64;
    let eval = |n: u64| {
        if f {
            f_of(model, a, n)
        } else {
            g_of(model, a, n)
        }
    };
    let v_lo = eval(lo.max(1))?;
    if x == lo as f64 {
        return Ok(v_lo);
    }
    let v_hi = eval(lo + 1)?;
    Ok(v_lo + (x - lo as f64) * (v_hi - v_lo))
}

pub fn build_regularity(model: &TriangularArrayModel, a: &SpeedSequence) -> Result<RegularityFns> {
    let grid = model.n_grid().to_vec();
    let mut f_knots = Vec::with_capacity(grid.len());
    let mut g_knots = Vec::with_capacity(grid.len());
    let mut l_knots = Vec::with_capacity(grid.len());
    for &n in &grid {
        f_knots.push(f_of(model, a, n)?);
        g_knots.push(g_of(model, a, n)?);
        l_knots.push(model.total_variance(n)? / model.row_size(n)? as f64);
    }
    let mut violations = Vec::new();
    if f_knots.windows(2).any(|w| w[1] <= w[0]) {
        violations.push("f(n) = s_n^2 a_n is not strictly increasing on the grid".into());
    }
    if g_knots.windows(2).any(|w| w[1] <= w[0]) {
        violations.push("g(n) = s_n^2/a_n is not strictly increasing on the grid".into());
    }
    if l_knots.windows(2).any(|w| w[1] < w[0] * (1.0 - 1e-12)) {
        violations.push("l(n) = s_n^2/k_n is decreasing on the grid".into());
    }
    Ok(RegularityFns {
        grid,
        f_knots,
        g_knots,
        l_knots,
        violations,
        cap: 1 << 42,
    })
}

impl RegularityFns {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// c(x) = f^{-1}(g(x)); the bool marks truncation at the cap (or at the
    /// last n where the closed forms stay evaluable).
    pub fn c_of(
        &self,
        model: &TriangularArrayModel,
        a: &SpeedSequence,
        x: f64,
    ) -> Result<(f64, bool)> {
        let y = interp(model, a, x, false)?;
        // bracket y between f(lo) and f(hi) by doubling, then bisect
        let mut lo = 1u64;
        let f_lo = f_of(model, a, lo)?;
        if y <= f_lo {
            return Ok((1.0, false));
        }
        let mut hi = lo;
        loop {
            if hi >= self.cap {
                hi = self.cap;
                match f_of(model, a, hi) {
                    Ok(v) if v >= y => break,
                    _ => return Ok((hi as f64, true)),
                }
            }
            let next = (hi * 2).min(self.cap);
            match f_of(model, a, next) {
                Ok(v) => {
                    hi = next;
                    if v >= y {
                        break;
                    }
                }
                Err(_) => {
                    // speed table exhausted: truncate at the last valid n
                    return Ok((hi as f64, true));
                }
            }
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if f_of(model, a, mid)? < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let f_lo = f_of(model, a, lo)?;
        let f_hi = f_of(model, a, hi)?;
        let t = if f_hi > f_lo {
            ((y - f_lo) / (f_hi - f_lo)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Ok((lo as f64 + t, false))
    }
}

/// Log-spaced integer subgrid of [lo, hi] with both endpoints, deduplicated.
fn log_int_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    if hi <= lo {
        return vec![lo];
    }
    let mut out = Vec::with_capacity(points + 2);
    let ratio = (hi as f64 / lo as f64).powf(1.0 / points.max(1) as f64);
    let mut x = lo as f64;
    for _ in 0..=points {
        out.push((x.round() as u64).clamp(lo, hi));
        x *= ratio;
    }
    out.push(hi);
    out.sort_unstable();
    out.dedup();
    out
}

/// The range condition: a_n log(sup_{n <= m <= c(n+1)} sup_i k_n
/// P(|X_mi| > s_n/sqrt(a_n))) -> -inf. The sup over m is taken on a
/// log-spaced integer subgrid (exact for families whose per-entry tails are
/// constant or monotone in m, which covers every family here).
pub fn check_onecondm(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    rc: &RegularityFns,
) -> Result<ConditionReport> {
    let n_grid = model.n_grid().to_vec();
    let mut diagnostics = Vec::with_capacity(n_grid.len());
    let mut notes: Vec<String> = rc.violations.clone();
    let mut truncated_any = false;
    for &n in &n_grid {
        let a_n = a.value(n)?;
        let s_n = model.total_variance(n)?.sqrt();
        let threshold = s_n / a_n.sqrt();
        let k_n = model.row_size(n)? as f64;
        let (c_hi, truncated) = rc.c_of(model, a, n as f64 + 1.0)?;
        truncated_any |= truncated;
        let m_hi = (c_hi.floor() as u64).max(n);
        let mut best = f64::NEG_INFINITY;
        for m in log_int_grid(n, m_hi, 64) {
            let Some(groups) = model.row_law_groups(m)? else {
                diagnostics.push(f64::NAN);
                best = f64::NAN;
                break;
            };
            for (_, law) in &groups {
                best = best.max(law.log_tail(threshold));
            }
        }
        if best.is_nan() {
            continue;
        }
        diagnostics.push(a_n * (k_n.ln() + best));
    }
    if truncated_any {
        notes.push(format!(
            "sup range truncated at cap {} (no extrapolation beyond tabulated speeds)",
            rc.cap
        ));
    }
    let mut report = ConditionReport::new(
        "onecondm",
        n_grid,
        diagnostics,
        Target::NegInfinity,
        CheckerParams::default(),
    );
    report.notes = notes;
    Ok(report)
}

// ---------------------------------------------------------------------------
// sufficient-condition routes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SufficientRoute {
    /// (A_nk, B_n) envelope: A = o(sqrt(a_n) s_n) and B s^{-2} sum A^2 <= C.
    MomentEnvelope,
    /// Coefficient route: max|c|/(sqrt(a_n) s_n) -> 0 and the innovation
    /// tail at s_n/(C_n sqrt(a_n)) with C_n the sup of |c| over the c-range.
    LinearCoeffs,
    /// i.i.d. route: a_n log(n P(|X| > sigma sqrt(n/a_n))) -> -inf.
    Iid,
}

pub fn check_sufficient(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    route: SufficientRoute,
) -> Result<Vec<ConditionReport>> {
    let n_grid = model.n_grid().to_vec();
    match route {
        SufficientRoute::MomentEnvelope => {
            let mut d1 = Vec::new();
            let mut d2 = Vec::new();
            for &n in &n_grid {
                let a_n = a.value(n)?;
                let s2 = model.total_variance(n)?;
                let env = model.moment_envelope(n)?;
                let a_max = env.a.iter().cloned().fold(0.0, f64::max);
                d1.push(a_max / (a_n.sqrt() * s2.sqrt()));
                let sum_a2: f64 = env.a.iter().map(|x| x * x).sum();
                d2.push(env.b * sum_a2 / s2);
            }
            Ok(vec![
                ConditionReport::new(
                    "envelope_a_small",
                    n_grid.clone(),
                    d1,
                    Target::Zero,
                    CheckerParams {
                        route: Some("moment_envelope".into()),
                        ..Default::default()
                    },
                ),
                ConditionReport::new(
                    "envelope_b_sum_bounded",
                    n_grid,
                    d2,
                    Target::Bounded,
                    CheckerParams {
                        route: Some("moment_envelope".into()),
                        ..Default::default()
                    },
                ),
            ])
        }
        SufficientRoute::LinearCoeffs => {
            let rc = build_regularity(model, a)?;
            let mut d1 = Vec::new();
            let mut d2 = Vec::new();
            for &n in &n_grid {
                let a_n = a.value(n)?;
                let s_n = model.total_variance(n)?.sqrt();
                let groups = model.row_law_groups(n)?.ok_or_else(|| {
                    Error::InvalidParameter("linear route needs closed-form coefficients".into())
                })?;
                // here each group's law is innovation scaled by one |c|
                let c_max_here = groups
                    .iter()
                    .map(|(_, law)| law.scale.abs())
                    .fold(0.0, f64::max);
                d1.push(c_max_here / (a_n.sqrt() * s_n));
                // C_n: sup over m in [n, c(n+1)] of the coefficient sup;
                // coefficient tables here do not vary with m
                let (c_hi, _) = rc.c_of(model, a, n as f64 + 1.0)?;
                let mut c_n = c_max_here;
                for m in log_int_grid(n, c_hi.floor() as u64, 16) {
                    if let Some(gs) = model.row_law_groups(m)? {
                        c_n = gs
                            .iter()
                            .map(|(_, law)| law.scale.abs())
                            .fold(c_n, f64::max);
                    }
                }
                let k_n = model.row_size(n)? as f64;
                // innovation tail: divide the argument back by the scale
                let innovation = crate::dist::EntryLaw {
                    dist: groups[0].1.dist.clone(),
                    scale: 1.0,
                };
                let lt = innovation.log_tail(s_n / (c_n * a_n.sqrt()));
                d2.push(a_n * (k_n.ln() + lt));
            }
            Ok(vec![
                ConditionReport::new(
                    "linear_coeff_small",
                    n_grid.clone(),
                    d1,
                    Target::Zero,
                    CheckerParams {
                        route: Some("linear_coeffs".into()),
                        ..Default::default()
                    },
                ),
                ConditionReport::new(
                    "linear_innovation_tail",
                    n_grid,
                    d2,
                    Target::NegInfinity,
                    CheckerParams {
                        route: Some("linear_coeffs".into()),
                        ..Default::default()
                    },
                ),
            ])
        }
        SufficientRoute::Iid => {
            let mut d = Vec::new();
            for &n in &n_grid {
                let a_n = a.value(n)?;
                let groups = model.row_law_groups(n)?.ok_or_else(|| {
                    Error::InvalidParameter("iid route needs a closed-form entry law".into())
                })?;
                if groups.len() != 1 {
                    return Err(Error::InvalidParameter(
                        "iid route applies to identically distributed entries".into(),
                    ));
                }
                let law = &groups[0].1;
                let sigma = law.variance().sqrt();
                let nf = n as f64;
                let lt = law.log_tail(sigma * (nf / a_n).sqrt());
                d.push(a_n * (nf.ln() + lt));
            }
            Ok(vec![ConditionReport::new(
                "iid_tail",
                n_grid,
                d,
                Target::NegInfinity,
                CheckerParams {
                    route: Some("iid".into()),
                    ..Default::default()
                },
            )])
        }
    }
}

// ---------------------------------------------------------------------------
// the exponential counterexample
// ---------------------------------------------------------------------------

/// Closed-form speed-scaled log tail of the counterexample entry:
/// a_n log P(sqrt(a_n)/s_n (E - 1) >= t) = -a_n - t sqrt(a_n) s_n.
pub fn exp_counterexample_logtail(t: f64, a_n: f64, s_n: f64) -> f64 {
    -a_n - t * a_n.sqrt() * s_n
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleCheck {
    pub report: ConditionReport,
    /// Estimated limsup of the diagnostic over the grid tail.
    pub limsup: f64,
    /// -t^2/8, the level the limsup must not exceed for the deviation
    /// principle to be possible.
    pub threshold: f64,
    /// True when the limsup exceeds -t^2/8: raised exactly when a_n s_n^2
    /// stays bounded and t is large enough.
    pub necessity_violated: bool,
}

pub fn check_exp_counterexample(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    t: f64,
) -> Result<CounterexampleCheck> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter("level t must be positive".into()));
    }
    let n_grid = model.n_grid().to_vec();
    let mut diagnostics = Vec::with_capacity(n_grid.len());
    for &n in &n_grid {
        let a_n = a.value(n)?;
        let s_n = model.total_variance(n)?.sqrt();
        diagnostics.push(exp_counterexample_logtail(t, a_n, s_n));
    }
    let limsup = tail_slice(&diagnostics)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = -t * t / 8.0;
    let report = ConditionReport::new(
        "exp_counterexample_logtail",
        n_grid,
        diagnostics,
        Target::NegInfinity,
        CheckerParams {
            level: Some(t),
            ..Default::default()
        },
    );
    Ok(CounterexampleCheck {
        report,
        limsup,
        threshold,
        necessity_violated: limsup > threshold,
    })
}

// ---------------------------------------------------------------------------
// quantitative two-way comparison between the banded exponential moment and
// the tail-grid constant (the two sides of the equivalence argument)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Comment1Bounds {
    /// ln of the empirical C1 for the capped tails at level beta.
    pub log_forward_lhs: f64,
    /// ln of the banded exponential diagnostic at beta (its upper bound).
    pub log_forward_rhs: f64,
    /// ln of the banded exponential diagnostic at beta/2.
    pub log_converse_lhs: f64,
    /// ln of 2 C1 e^{-beta/2} with the empirical C1.
    pub log_converse_rhs: f64,
}

/// Evaluate both directions of the banded-moment <-> tail-bound equivalence
/// at one n, as finite-n inequalities (forward and converse).
pub fn comment1_bounds(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    n: u64,
    beta: f64,
    u_points: usize,
) -> Result<Comment1Bounds> {
    let data = row_data(model, a, n)?;
    let groups = data.groups.as_ref().ok_or_else(|| {
        Error::ExactLawUnavailable("equivalence bounds need closed-form tails".into())
    })?;
    let lo = data.a_n.sqrt() * data.s_n;
    let hi = data.s_n / data.a_n.sqrt();
    let banded = |g: f64| -> f64 {
        let terms: Vec<f64> = groups
            .iter()
            .map(|(m, law)| (*m as f64).ln() + law.log_exp_band(g, lo, hi))
            .collect();
        data.a_n.ln() + logsumexp(&terms)
    };
    // empirical C1 for the truncated entries: capped tails vanish above 1/a_n
    let mut log_c1 = f64::NEG_INFINITY;
    let ratio = (1.0 / data.a_n).powf(1.0 / (u_points.max(2) as f64 - 1.0));
    let mut u = 1.0;
    for _ in 0..u_points {
        let x = u * lo;
        let terms: Vec<f64> = groups
            .iter()
            .map(|(m, law)| {
                let capped = crate::stats::log_diff_exp(
                    law.log_tail(x).max(law.log_tail(hi)),
                    law.log_tail(hi),
                );
                (*m as f64).ln() + capped
            })
            .collect();
        log_c1 = log_c1.max(data.a_n.ln() + logsumexp(&terms) + beta * u);
        u *= ratio;
    }
    Ok(Comment1Bounds {
        log_forward_lhs: log_c1,
        log_forward_rhs: banded(beta / lo),
        log_converse_lhs: banded(0.5 * beta / lo),
        log_converse_rhs: std::f64::consts::LN_2 + log_c1 - 0.5 * beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Dist;
    use crate::models::{
        BandwidthSpec, CoeffSpec, DensitySpec, FamilySpec, KSpec, KernelSpec, ModelSpec,
    };
    use crate::speed::SpeedSequence;
    use std::collections::BTreeMap;

    fn iid_model(dist: Dist, speed: SpeedSequence, n_grid: Vec<u64>) -> TriangularArrayModel {
        ModelSpec {
            family: FamilySpec::Iid { dist, k: KSpec::N },
            speed,
            n_grid,
        }
        .build()
        .unwrap()
    }

    fn table_speed(pairs: &[(u64, f64)]) -> SpeedSequence {
        SpeedSequence::Table {
            values: BTreeMap::from_iter(pairs.iter().cloned()),
        }
    }

    #[test]
    fn lindeberg_gaussian_oracle_value() {
        // n a_n = 25, eps = 1: diagnostic = 2(5 phi(5) + Q(5)) = 1.54405e-5
        let speed = table_speed(&[(2500, 0.01)]);
        let m = iid_model(Dist::Normal { sigma: 1.0 }, speed.clone(), vec![2500]);
        let r = check_core(&m, &speed, CoreCheck::Lindeberg { epsilon: 1.0 }).unwrap();
        let want = 1.5440498291101365e-5;
        assert!(
            (r.diagnostics[0] - want).abs() < 1e-15,
            "{} vs {want}",
            r.diagnostics[0]
        );
    }

    #[test]
    fn lindeberg_monotone_in_epsilon() {
        let speed = SpeedSequence::power_law(0.5);
        let m = iid_model(Dist::CenteredExponential, speed.clone(), vec![100, 1000]);
        let mut prev = f64::INFINITY;
        for eps in [0.5, 1.0, 2.0, 4.0] {
            let r = check_core(&m, &speed, CoreCheck::Lindeberg { epsilon: eps }).unwrap();
            assert!(r.diagnostics[0] <= prev + 1e-15);
            prev = r.diagnostics[0];
        }
    }

    #[test]
    fn exp_banded_empty_band_for_bounded_entries() {
        // Rademacher entries are bounded by 1 < sqrt(a_n) s_n when n a_n > 1
        let speed = table_speed(&[(100, 0.04)]);
        let m = iid_model(Dist::Rademacher, speed.clone(), vec![100]);
        let r = check_core(&m, &speed, CoreCheck::ExpBanded { beta: 3.0 }).unwrap();
        assert_eq!(r.diagnostics[0], 0.0);
    }

    #[test]
    fn tail_grid_exponential_oracle() {
        // n = 1e4, a_n = 0.01, beta = 5: max over u >= 1 of
        // 100 e^{-(1+10u)} e^{5u} attained at u = 1: 100 e^{-6}
        let speed = table_speed(&[(10_000, 0.01)]);
        let m = iid_model(Dist::CenteredExponential, speed.clone(), vec![10_000]);
        let r = check_core(
            &m,
            &speed,
            CoreCheck::TailGrid {
                beta: 5.0,
                c1: 1.0,
                epsilon: None,
            },
        )
        .unwrap();
        let want = 100.0 * (-6.0f64).exp();
        assert!(
            (r.diagnostics[0] - want).abs() < 1e-9 * want,
            "{} vs {want}",
            r.diagnostics[0]
        );
        assert_eq!(r.verdict, Verdict::Pass);
        let c1 = &r.aux["empirical_c1"];
        assert!((c1[0] - want).abs() < 1e-9 * want);
        // the raw tail sum at u = 1 has the closed form a_n n e^{-(1+10u)}
        let tail_sum = 0.01 * 1e4 * (-11.0f64).exp();
        assert!((tail_sum - 1.6701700790245659e-3).abs() < 1e-12);
    }

    #[test]
    fn max_neg_strongly_negative_for_gaussian() {
        let speed = SpeedSequence::power_law(0.5);
        let grid = vec![100u64, 400, 1600, 6400];
        let m = iid_model(Dist::Normal { sigma: 1.0 }, speed.clone(), grid);
        let r = check_core(&m, &speed, CoreCheck::MaxNeg).unwrap();
        assert!(r.diagnostics.iter().all(|&d| d < -5.0));
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.diagnostics);
    }

    #[test]
    fn max_neg_exactly_neg_inf_for_bounded() {
        let speed = table_speed(&[(100, 0.04), (400, 0.02)]);
        let m = iid_model(Dist::Rademacher, speed.clone(), vec![100, 400]);
        let r = check_core(&m, &speed, CoreCheck::MaxNeg).unwrap();
        assert!(r.diagnostics.iter().all(|&d| d == f64::NEG_INFINITY));
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn mc_only_families_are_inconclusive_not_fatal() {
        use crate::dependence::chain::ChainSpec;
        let spec = ModelSpec {
            family: FamilySpec::DependentBlocks {
                chain: ChainSpec {
                    values: vec![1.0, -1.0],
                    transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
                },
                epsilon: None,
            },
            speed: SpeedSequence::power_law(0.4),
            n_grid: vec![10_000],
        };
        let m = spec.build().unwrap();
        let speed = m.speed().clone();
        let r = check_core(&m, &speed, CoreCheck::ExpBanded { beta: 1.0 }).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn regularity_knots_and_inverse() {
        // s_n^2 = n, a_n = n^{-1/2}: f = sqrt(n), g = n^{3/2}, c(4) = 64
        let speed = SpeedSequence::power_law(0.5);
        let m = iid_model(Dist::Normal { sigma: 1.0 }, speed.clone(), vec![4, 16, 64]);
        let rc = build_regularity(&m, &speed).unwrap();
        assert!(rc.is_valid(), "{:?}", rc.violations);
        assert!((rc.f_knots[0] - 2.0).abs() < 1e-12);
        assert!((rc.g_knots[0] - 8.0).abs() < 1e-12);
        let (c4, truncated) = rc.c_of(&m, &speed, 4.0).unwrap();
        assert!(!truncated);
        assert!((c4 - 64.0).abs() < 1e-6, "c(4) = {c4}");
    }

    #[test]
    fn regularity_flags_constant_speed() {
        // constant a_n: g grows iff s_n^2 does; f = C s_n^2 still increasing,
        // so only validity of the decrease requirement on a_n is external
        let speed = SpeedSequence::Constant { value: 0.04 };
        let m = iid_model(Dist::Normal { sigma: 1.0 }, speed.clone(), vec![4, 16, 64]);
        let rc = build_regularity(&m, &speed).unwrap();
        assert!(rc.is_valid());
        // l(n) = 1 constant: nondecreasing passes
        assert!(rc.l_knots.iter().all(|&l| (l - 1.0).abs() < 1e-12));
    }

    #[test]
    fn onecondm_gaussian_oracle() {
        // n = 100, a_n = 0.04 via a_n = 0.4 n^{-1/2}: diagnostic
        // 0.04 ln(100 * 2 Q(50)) = -49.98132...
        let speed = SpeedSequence::PowerLaw {
            gamma: 0.5,
            coeff: 0.4,
        };
        let m = iid_model(
            Dist::Normal { sigma: 1.0 },
            speed.clone(),
            vec![100, 400, 1600],
        );
        let rc = build_regularity(&m, &speed).unwrap();
        let r = check_onecondm(&m, &speed, &rc).unwrap();
        let want = 0.04 * (200.0f64.ln() - 1254.8313611394199);
        assert!(
            (r.diagnostics[0] - want).abs() < 1e-6 * want.abs(),
            "{} vs {want}",
            r.diagnostics[0]
        );
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn onecondm_bounded_entries_pass_immediately() {
        let speed = SpeedSequence::PowerLaw {
            gamma: 0.5,
            coeff: 0.4,
        };
        let m = iid_model(Dist::Rademacher, speed.clone(), vec![16, 64, 256]);
        let rc = build_regularity(&m, &speed).unwrap();
        let r = check_onecondm(&m, &speed, &rc).unwrap();
        assert!(r.diagnostics.iter().all(|&d| d == f64::NEG_INFINITY));
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn onecondm_bounded_speed_counterexample_fails() {
        // a_n = 1/n keeps a_n s_n^2 = 1; the diagnostic tends to -1, not -inf
        let speed = SpeedSequence::power_law(1.0);
        let m = ModelSpec {
            family: FamilySpec::ExpCounterexample {
                coeffs: CoeffSpec::Constant { value: 1.0 },
                k: Some(KSpec::N),
            },
            speed: speed.clone(),
            n_grid: vec![100, 1000, 10_000, 100_000],
        }
        .build()
        .unwrap();
        let rc = build_regularity(&m, &speed).unwrap();
        let r = check_onecondm(&m, &speed, &rc).unwrap();
        assert!(
            r.diagnostics.iter().all(|&d| d > -1.2 && d < -0.9),
            "{:?}",
            r.diagnostics
        );
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn tail_sum_nonincreasing_in_u() {
        let speed = table_speed(&[(10_000, 0.01)]);
        let m = iid_model(Dist::CenteredExponential, speed.clone(), vec![10_000]);
        let groups = m.row_law_groups(10_000).unwrap().unwrap();
        let a_n = 0.01f64;
        let s_n = m.total_variance(10_000).unwrap().sqrt();
        let mut prev = f64::INFINITY;
        for &u in &default_u_grid(a_n, None) {
            let x = u * a_n.sqrt() * s_n;
            let sum: f64 = groups.iter().map(|(c, law)| *c as f64 * law.tail(x)).sum();
            assert!(sum <= prev * (1.0 + 1e-12), "u = {u}");
            prev = sum;
        }
    }

    #[test]
    fn sufficient_iid_exponential_oracle() {
        // n = 1e4, a_n = 0.01: 0.01 (ln 1e4 - 1001) = -9.9178966
        let speed = SpeedSequence::power_law(0.5);
        let m = iid_model(
            Dist::CenteredExponential,
            speed.clone(),
            vec![100, 1000, 10_000],
        );
        let rs = check_sufficient(&m, &speed, SufficientRoute::Iid).unwrap();
        let d = rs[0].diagnostics[2];
        assert!((d - (-9.917896596280238)).abs() < 1e-9, "diagnostic {d}");
        assert_eq!(rs[0].verdict, Verdict::Pass);
    }

    #[test]
    fn sufficient_linear_unit_coeffs() {
        let speed = SpeedSequence::power_law(0.5);
        let m = ModelSpec {
            family: FamilySpec::Linear {
                innovation: Dist::Normal { sigma: 1.0 },
                coeffs: CoeffSpec::Constant { value: 1.0 },
                k: Some(KSpec::N),
            },
            speed: speed.clone(),
            n_grid: vec![100, 10_000],
        }
        .build()
        .unwrap();
        let rs = check_sufficient(&m, &speed, SufficientRoute::LinearCoeffs).unwrap();
        // max|c| / (sqrt(a_n) s_n) = 1/sqrt(n a_n): n = 1e4, a = 0.01 -> 0.1
        assert!((rs[0].diagnostics[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sufficient_kernel_envelope_ratio() {
        let speed = SpeedSequence::power_law(0.5);
        let m = ModelSpec {
            family: FamilySpec::Kernel {
                kernel: KernelSpec::Uniform,
                bandwidth: BandwidthSpec::Constant { value: 1e-3 },
                point: 0.0,
                density: DensitySpec::Normal {
                    mu: 0.0,
                    sigma: 1.0,
                },
            },
            speed: speed.clone(),
            n_grid: vec![1000, 10_000],
        }
        .build()
        .unwrap();
        let rs = check_sufficient(&m, &speed, SufficientRoute::MomentEnvelope).unwrap();
        // B s^{-2} sum A^2 = 4 C^2 ||f||_inf / Var -> 4.0016
        let d = rs[1].diagnostics[1];
        assert!((d - 4.001596572662025).abs() < 1e-9, "{d}");
        assert_eq!(rs[1].verdict, Verdict::Pass);
    }

    #[test]
    fn counterexample_flag_tracks_level() {
        // a_n = 1/n keeps a_n s_n^2 = 1: limit is -t, violated iff t > 8
        let speed = SpeedSequence::power_law(1.0);
        let m = ModelSpec {
            family: FamilySpec::ExpCounterexample {
                coeffs: CoeffSpec::Constant { value: 1.0 },
                k: Some(KSpec::N),
            },
            speed: speed.clone(),
            n_grid: vec![100, 1000, 10_000],
        }
        .build()
        .unwrap();
        let at = |t: f64| check_exp_counterexample(&m, &speed, t).unwrap();
        assert!(!at(1.0).necessity_violated);
        assert!(!at(7.9).necessity_violated);
        assert!(at(9.0).necessity_violated);
        // scalar closed form
        assert!((exp_counterexample_logtail(1.0, 0.01, 10.0) - (-1.01)).abs() < 1e-15);
        // growing a_n s_n^2 never violates
        let grow = SpeedSequence::power_law(0.5);
        let m2 = ModelSpec {
            family: FamilySpec::ExpCounterexample {
                coeffs: CoeffSpec::Constant { value: 1.0 },
                k: Some(KSpec::N),
            },
            speed: grow.clone(),
            n_grid: vec![100, 1000, 10_000],
        }
        .build()
        .unwrap();
        assert!(
            !check_exp_counterexample(&m2, &grow, 9.0)
                .unwrap()
                .necessity_violated
        );
    }

    #[test]
    fn verdict_rules() {
        let grid: Vec<u64> = vec![10, 100, 1000, 10_000, 100_000, 1_000_000];
        // clean power decay passes Zero
        let dec: Vec<f64> = grid.iter().map(|&n| 5.0 / (n as f64).sqrt()).collect();
        assert_eq!(verdict_for(&dec, &grid, Target::Zero), Verdict::Pass);
        // flat nonzero fails Zero
        let flat = vec![0.3; 6];
        assert_eq!(verdict_for(&flat, &grid, Target::Zero), Verdict::Fail);
        // non-monotone tail is inconclusive
        let wobble = vec![0.3, 0.2, 0.1, 0.2, 0.05, 0.21];
        assert_eq!(
            verdict_for(&wobble, &grid, Target::Zero),
            Verdict::Inconclusive
        );
        // growing magnitude passes NegInfinity
        let neg: Vec<f64> = grid.iter().map(|&n| -((n as f64).powf(0.3))).collect();
        assert_eq!(verdict_for(&neg, &grid, Target::NegInfinity), Verdict::Pass);
        // bounded magnitude fails NegInfinity
        let stuck = vec![-1.0, -1.0001, -1.0002, -1.00021, -1.00022, -1.00022];
        assert_eq!(
            verdict_for(&stuck, &grid, Target::NegInfinity),
            Verdict::Fail
        );
        // all -inf passes
        let infs = vec![f64::NEG_INFINITY; 6];
        assert_eq!(
            verdict_for(&infs, &grid, Target::NegInfinity),
            Verdict::Pass
        );
    }

    #[test]
    fn comment1_bounds_hold_on_gaussian_and_exponential() {
        let speed = SpeedSequence::power_law(0.5);
        for dist in [Dist::Normal { sigma: 1.0 }, Dist::CenteredExponential] {
            let m = iid_model(dist.clone(), speed.clone(), vec![400, 1600, 6400]);
            for &n in m.n_grid() {
                let b = comment1_bounds(&m, &speed, n, 3.0, 2048).unwrap();
                assert!(
                    b.log_forward_lhs <= b.log_forward_rhs + 1e-9,
                    "{dist:?} n={n}: forward {} vs {}",
                    b.log_forward_lhs,
                    b.log_forward_rhs
                );
                assert!(
                    b.log_converse_lhs <= b.log_converse_rhs + 0.05,
                    "{dist:?} n={n}: converse {} vs {}",
                    b.log_converse_lhs,
                    b.log_converse_rhs
                );
            }
        }
    }
}
