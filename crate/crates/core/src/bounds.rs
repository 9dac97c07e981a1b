//! Closed-form exponential inequalities and the cumulant-limit diagnostic.
//! These curves serve as analytic ceilings that Monte Carlo estimates must
//! stay under; all probability bounds are clamped at 1 where they are vacuous.

use crate::dependence::chain::FiniteMarkovChain;
use crate::error::{Error, Result};
use crate::models::TriangularArrayModel;
use crate::rng::substream;
use crate::speed::SpeedSequence;
use crate::stats::logsumexp;
use rayon::prelude::*;
use serde::Serialize;

const CUMULANT_MC_STREAM: u64 = 0xCC;
const CALIBRATE_STREAM: u64 = 0xCA;

/// P(|sum X_j| >= t) <= exp(-(t/2B) arcsinh(Bt/(2 s^2))) for independent
/// centered entries bounded by B with total variance s^2.
pub fn prokhorov_bound(t: f64, b: f64, s2: f64) -> Result<f64> {
    if !(t > 0.0 && b > 0.0 && s2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prokhorov_bound needs positive inputs, got t={t}, B={b}, s2={s2}"
        )));
    }
    let exponent = -(t / (2.0 * b)) * (b * t / (2.0 * s2)).asinh();
    Ok(exponent.exp().min(1.0))
}

/// P(max_{j<=m} |S_j| > x) <= K exp(-C2 x / sqrt(m)) with
/// C2 = sqrt(log(1/rho)) / (e ||X_0||_inf), for geometric tau decay rho.
pub fn geo_tau_max_bound(x: f64, m: u64, rho: f64, sup_norm: f64, k: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho = {rho} must lie in (0, 1)"
        )));
    }
    if !(x >= 0.0 && m >= 1 && sup_norm > 0.0 && k > 0.0) {
        return Err(Error::InvalidParameter(
            "geo_tau_max_bound needs x >= 0, m >= 1, sup_norm > 0, K > 0".into(),
        ));
    }
    let c2 = (1.0 / rho).ln().sqrt() / (std::f64::consts::E * sup_norm);
    Ok((k.ln() - c2 * x / (m as f64).sqrt()).exp().min(1.0))
}

/// A bound curve that can be tabulated to CSV-ready points.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundCurve {
    Prokhorov {
        b: f64,
        s2: f64,
    },
    GeoTauMax {
        rho: f64,
        sup_norm: f64,
        k: f64,
        m: u64,
    },
}

impl BoundCurve {
    pub fn eval(&self, t: f64) -> Result<f64> {
        match self {
            BoundCurve::Prokhorov { b, s2 } => prokhorov_bound(t, *b, *s2),
            BoundCurve::GeoTauMax {
                rho,
                sup_norm,
                k,
                m,
            } => geo_tau_max_bound(t, *m, *rho, *sup_norm, *k),
        }
    }

    /// (t, bound) pairs for export.
    pub fn tabulate(&self, t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
        t_grid.iter().map(|&t| Ok((t, self.eval(t)?))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CumulantMode {
    /// Use the per-entry log-mgf (requires a closed-form entry law).
    Analytic,
    /// Estimate ln E exp by a sample mean over whole rows; requires bounded
    /// entries and carries a plug-in bias flag.
    Empirical { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct CumulantCheck {
    /// (n, a_n sum_j ln E exp(t X_nj / (sqrt(a_n) s_n))).
    pub values: Vec<(u64, f64)>,
    /// t^2/2 under the unit-variance normalization.
    pub target: f64,
    /// Plug-in log-of-mean estimates are biased; flagged, never corrected.
    pub biased: bool,
}

/// Speed-scaled row cumulant at argument t, over the model grid.
pub fn cumulant_check(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    t: f64,
    mode: CumulantMode,
) -> Result<CumulantCheck> {
    let mut values = Vec::with_capacity(model.n_grid().len());
    for &n in model.n_grid() {
        let a_n = a.value(n)?;
        let s_n = model.total_variance(n)?.sqrt();
        let theta = t / (a_n.sqrt() * s_n);
        let v = match mode {
            CumulantMode::Analytic => a_n * model.row_log_mgf(n, theta)?,
            CumulantMode::Empirical { samples, seed } => {
                if model.row_abs_bound(n)?.is_none() {
                    return Err(Error::MgfUnavailable(
                        "empirical cumulant needs a.s.-bounded entries".into(),
                    ));
                }
                let k = model.row_size(n)?;
                let mut rng = substream(seed, &[CUMULANT_MC_STREAM, n]);
                let mut exps = Vec::with_capacity(samples as usize);
                for _ in 0..samples {
                    let mut s = 0.0;
                    for j in 0..k {
                        s += model.sample_entry(n, j, &mut rng)?;
                    }
                    exps.push(theta * s);
                }
                a_n * (logsumexp(&exps) - (samples as f64).ln())
            }
        };
        values.push((n, v));
    }
    Ok(CumulantCheck {
        values,
        target: 0.5 * t * t,
        biased: matches!(mode, CumulantMode::Empirical { .. }),
    })
}

/// Fit the smallest K that makes the geometric maximal bound valid on a
/// simulated pilot of the chain. Calibration only; callers must report it.
pub fn calibrate_k(
    chain: &FiniteMarkovChain,
    m: u64,
    x_grid: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<f64> {
    let profile = chain.tau_profile(&(1..=10).collect::<Vec<_>>())?;
    let rho = profile.rho_hat;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fitted rho = {rho} outside (0, 1); geometric bound inapplicable"
        )));
    }
    let c2 = (1.0 / rho).ln().sqrt() / (std::f64::consts::E * chain.sup_norm());
    let maxima: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[CALIBRATE_STREAM, r]);
            let path = chain.sample_path(m as usize, &mut rng);
            let mut s = 0.0;
            let mut worst = 0.0_f64;
            for x in path {
                s += x;
                worst = worst.max(s.abs());
            }
            worst
        })
        .collect();
    let mut k_hat = 0.0_f64;
    for &x in x_grid {
        let hits = maxima.iter().filter(|&&w| w > x).count();
        let p = hits as f64 / replicas as f64;
        let decay = (-c2 * x / (m as f64).sqrt()).exp();
        k_hat = k_hat.max(p / decay);
    }
    Ok(k_hat)
}
