//! Three-way truncation of a row at |X| <= sqrt(a_n) s_n,
//! (sqrt(a_n) s_n, s_n/sqrt(a_n)], and above, each part centered by its own
//! expectation, plus the residual bound for the top band.
//!
//! The uncentered low part is bounded by sqrt(a_n) s_n; after centering the
//! bound doubles, and it is the factor-2 bound that is asserted here.

use crate::dist::EntryLaw;
use crate::error::{Error, Result};
use crate::models::{ProbValue, RowSample, TriangularArrayModel};
use crate::rng::substream;
use serde::Serialize;

const RESIDUAL_MC_STREAM: u64 = 0x7E;

/// One row split into centered low/mid/high components.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedRow {
    pub low: Vec<f64>,
    pub mid: Vec<f64>,
    pub high: Vec<f64>,
    /// Per entry: E of the raw low/mid/high indicator parts.
    pub centers: Vec<[f64; 3]>,
    /// (sqrt(a_n) s_n, s_n / sqrt(a_n)) in the original scale.
    pub thresholds: (f64, f64),
}

/// Centers of the three indicator parts for one entry law.
pub fn band_centers(law: &EntryLaw, c1: f64, c2: f64) -> [f64; 3] {
    let above_c1 = law.mean_above(c1);
    let above_c2 = law.mean_above(c2);
    [-above_c1, above_c1 - above_c2, above_c2]
}

/// Split a sampled row with exact centering from the entry laws.
pub fn truncate_row(
    row: &RowSample,
    model: &TriangularArrayModel,
    a_n: f64,
) -> Result<TruncatedRow> {
    if !(a_n > 0.0 && a_n < 1.0) {
        return Err(Error::DegenerateBands { n: row.n, a: a_n });
    }
    let moments = model.row_moments(row.n)?;
    let s_n = moments.s2.sqrt();
    let c1 = a_n.sqrt() * s_n;
    let c2 = s_n / a_n.sqrt();
    let mut centers = Vec::with_capacity(row.values.len());
    for j in 0..row.values.len() as u64 {
        let law = model.entry_law(row.n, j)?.ok_or_else(|| {
            Error::ExactLawUnavailable(
                "truncation centers need a closed-form entry law; \
                 estimate centers separately and use truncate_row_with_centers"
                    .into(),
            )
        })?;
        centers.push(band_centers(&law, c1, c2));
    }
    Ok(truncate_row_with_centers(row, &centers, (c1, c2)))
}

/// Split with caller-provided centers (e.g. Monte Carlo estimates).
pub fn truncate_row_with_centers(
    row: &RowSample,
    centers: &[[f64; 3]],
    thresholds: (f64, f64),
) -> TruncatedRow {
    let (c1, c2) = thresholds;
    let k = row.values.len();
    let mut low = Vec::with_capacity(k);
    let mut mid = Vec::with_capacity(k);
    let mut high = Vec::with_capacity(k);
    for (j, &x) in row.values.iter().enumerate() {
        let a = x.abs();
        let (l, m, h) = if a <= c1 {
            (x, 0.0, 0.0)
        } else if a <= c2 {
            (0.0, x, 0.0)
        } else {
            (0.0, 0.0, x)
        };
        low.push(l - centers[j][0]);
        mid.push(m - centers[j][1]);
        high.push(h - centers[j][2]);
    }
    TruncatedRow {
        low,
        mid,
        high,
        centers: centers.to_vec(),
        thresholds,
    }
}

/// Second-moment split of one entry across the three bands; the cross
/// covariances are exactly -m_A m_B for disjoint indicator parts.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VariancePartition {
    pub var_low: f64,
    pub var_mid: f64,
    pub var_high: f64,
    /// Sum of the three pairwise covariances.
    pub cov_sum: f64,
}

pub fn variance_partition(law: &EntryLaw, c1: f64, c2: f64) -> VariancePartition {
    let total = law.variance();
    let above_c1 = law.second_above(c1);
    let above_c2 = law.second_above(c2);
    let [m_low, m_mid, m_high] = band_centers(law, c1, c2);
    let var_low = (total - above_c1) - m_low * m_low;
    let var_mid = (above_c1 - above_c2) - m_mid * m_mid;
    let var_high = above_c2 - m_high * m_high;
    let cov_sum = -(m_low * m_mid + m_low * m_high + m_mid * m_high);
    VariancePartition {
        var_low,
        var_mid,
        var_high,
        cov_sum,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualBound {
    /// The closed bound a_n on the normalized top-band first moment.
    pub bound: f64,
    /// sqrt(a_n) sum_j E[|X_nj|/s_n ; |X_nj|/s_n > 1/sqrt(a_n)].
    pub empirical: ProbValue,
}

/// Bound and empirical value for the top-band residual, on the row
/// normalized to unit total variance.
pub fn residual_bound(model: &TriangularArrayModel, a_n: f64, n: u64) -> Result<ResidualBound> {
    if !(a_n > 0.0 && a_n < 1.0) {
        return Err(Error::DegenerateBands { n, a: a_n });
    }
    let moments = model.row_moments(n)?;
    let s_n = moments.s2.sqrt();
    let c2 = s_n / a_n.sqrt();
    let k = model.row_size(n)?;
    let empirical = match model.row_law_groups(n)? {
        Some(groups) => {
            let sum: f64 = groups
                .iter()
                .map(|(count, law)| *count as f64 * law.abs_mean_above(c2))
                .sum();
            ProbValue::Exact {
                value: a_n.sqrt() * sum / s_n,
            }
        }
        None => {
            // Monte Carlo over whole rows; entries beyond c2 are rare, so the
            // estimator is the mean over replicated rows of the banded sum.
            let samples = 20_000u64;
            let mut rng = substream(RESIDUAL_MC_STREAM, &[n, a_n.to_bits()]);
            let mut vals = Vec::with_capacity(samples as usize);
            for _ in 0..samples {
                let mut acc = 0.0;
                for j in 0..k {
                    let x = model.sample_entry(n, j, &mut rng)?;
                    if x.abs() > c2 {
                        acc += x.abs();
                    }
                }
                vals.push(a_n.sqrt() * acc / s_n);
            }
            let (mean, var) = crate::stats::mean_var(&vals);
            ProbValue::MonteCarlo {
                estimate: mean,
                se: (var / samples as f64).sqrt(),
                samples,
            }
        }
    };
    Ok(ResidualBound {
        bound: a_n,
        empirical,
    })
}
