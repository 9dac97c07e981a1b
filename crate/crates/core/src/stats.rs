//! Scalar numerics shared across the crate: Gaussian density/tail in linear
//! and log scale, stable log-space accumulation, and small regression helpers.
//!
//! The log tail `ln Q(z)` is needed far outside the range where `erfc`
//! survives in f64 (diagnostics evaluate it at z of several hundred), so for
//! z >= 1 it is computed as `ln phi(z) + ln R(z)` with the Mills ratio `R`
//! evaluated by the Laplace continued fraction.

use statrs::function::gamma::ln_gamma;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Standard normal density.
pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Maclaurin series for erf, used for |x| <= 1 where it converges in a few
/// dozen alternating terms to full f64 accuracy.
fn erf_series(x: f64) -> f64 {
    debug_assert!(x.abs() <= 1.0 + 1e-12);
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..60 {
        term *= -x2 / n as f64;
        let inc = term / (2 * n + 1) as f64;
        sum += inc;
        if inc.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// Mills ratio Q(z)/phi(z) by the Laplace continued fraction
/// R(z) = 1/(z+ 1/(z+ 2/(z+ ...))), evaluated bottom-up. Accurate to a few
/// ulps for z >= 1 with the depths below.
fn mills_cf(z: f64) -> f64 {
    let depth = if z >= 8.0 {
        64
    } else if z >= 1.5 {
        250
    } else {
        900
    };
    let mut v = z;
    for k in (1..=depth).rev() {
        v = z + k as f64 / v;
    }
    1.0 / v
}

/// Standard normal upper tail Q(z) = P(Z > z); no underflow until the
/// density itself underflows (z ~ 38).
pub fn norm_q(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - norm_q(-z);
    }
    if z < 1.0 {
        0.5 * (1.0 - erf_series(z / std::f64::consts::SQRT_2))
    } else {
        phi(z) * mills_cf(z)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    norm_q(-x)
}

/// ln Q(z), finite for all representable z (Q never underflows in log scale).
pub fn log_norm_q(z: f64) -> f64 {
    if z < 0.0 {
        // ln(1 - Q(-z)); Q(-z) is small only when z is very negative.
        let q = norm_q(-z);
        if q < 1e-12 {
            // expansion of ln(1 - q)
            return -q - 0.5 * q * q;
        }
        return (1.0 - q).ln();
    }
    if z < 1.0 {
        return norm_q(z).ln();
    }
    -0.5 * z * z - LN_SQRT_2PI + mills_cf(z).ln()
}

/// ln(2 Q(z)): log of the two-sided standard normal tail P(|Z| > z), z >= 0.
pub fn log_norm_two_sided(z: f64) -> f64 {
    std::f64::consts::LN_2 + log_norm_q(z)
}

/// log(sum exp(x_i)) with the usual max shift; -inf entries are transparent.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m; // all -inf (empty sum) or an explicit +inf
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// log(exp(a) - exp(b)) for a >= b; -inf when the difference vanishes.
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    debug_assert!(a >= b, "log_diff_exp needs a >= b, got {a} < {b}");
    let d = -(-(a - b)).exp_m1(); // 1 - exp(b - a)
    if d <= 0.0 {
        f64::NEG_INFINITY
    } else {
        a + d.ln()
    }
}

/// Kahan-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for x in xs {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// Sample mean and (n-1)-normalized variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(xs.iter().cloned()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(xs.iter().map(|&x| (x - mean) * (x - mean)));
    (mean, ss / (n as f64 - 1.0))
}

/// Ordinary least squares fit y = a + b x; returns (slope, intercept, r2).
/// r2 is 1.0 for a perfect fit and NaN when y is constant.
pub fn ols_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|&v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        f64::NAN
    } else {
        slope * sxy / syy
    };
    (slope, intercept, r2)
}

/// ln C(n, k).
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// ln P(Bin(n, 1/2) >= k), exact log-space binomial sum.
pub fn log_binom_half_sf(n: u64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k > n {
        return f64::NEG_INFINITY;
    }
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let terms: Vec<f64> = (k..=n).map(|j| ln_choose(n, j) - ln2n).collect();
    logsumexp(&terms)
}

/// Pearson correlation of two equal-length samples.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    let n = x.len() as f64;
    let cov: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0);
    cov / (vx * vy).sqrt()
}
