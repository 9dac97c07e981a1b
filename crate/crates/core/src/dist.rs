//! Entry-level laws with exact moment, tail, and cumulant data.
//!
//! Every model family reduces its entries to a scaled innovation
//! `X = scale * xi` where `xi` follows one of the closed-form laws below.
//! Checkers need the laws far out in the tail, so everything that can
//! underflow is exposed in log scale (`log_tail`, `log_exp_band`, ...).
//!
//! Band conventions follow the truncation scheme used throughout:
//! `second_above` / `mean_above` are strict (`|X| > c`), the Lindeberg
//! moment `second_at_least` is weak (`|X| >= c`), and `log_exp_band(g, a, b)`
//! integrates over the open band `a < |X| < b`.

use crate::stats::{log_diff_exp, log_norm_q, logsumexp, phi};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Centered innovation law with closed-form tails and cumulants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    /// N(0, sigma^2).
    Normal { sigma: f64 },
    /// E - 1 with E standard exponential; P(X > x) = e^{-(1+x)} for x >= -1.
    CenteredExponential,
    /// +/-1 with equal probability.
    Rademacher,
    /// Two atoms lo < 0 < hi with P(X = hi) = p_hi; must be centered.
    TwoPoint { lo: f64, hi: f64, p_hi: f64 },
}

impl Dist {
    pub fn variance(&self) -> f64 {
        match self {
            Dist::Normal { sigma } => sigma * sigma,
            Dist::CenteredExponential => 1.0,
            Dist::Rademacher => 1.0,
            Dist::TwoPoint { lo, hi, p_hi } => (1.0 - p_hi) * lo * lo + p_hi * hi * hi,
        }
    }

    /// Essential supremum of |X|, when finite.
    pub fn abs_bound(&self) -> Option<f64> {
        match self {
            Dist::Normal { .. } | Dist::CenteredExponential => None,
            Dist::Rademacher => Some(1.0),
            Dist::TwoPoint { lo, hi, .. } => Some(lo.abs().max(hi.abs())),
        }
    }

    /// ln P(|X| > x), x >= 0.
    pub fn log_tail(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        match self {
            Dist::Normal { sigma } => std::f64::consts::LN_2 + log_norm_q(x / sigma),
            Dist::CenteredExponential => {
                if x >= 1.0 {
                    -(1.0 + x)
                } else {
                    // right tail plus the bounded left piece P(E < 1 - x)
                    let p = (-(1.0 + x)).exp() + (-(-(1.0 - x)).exp_m1());
                    p.ln()
                }
            }
            Dist::Rademacher => {
                if x < 1.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                let mut p = 0.0;
                if lo.abs() > x {
                    p += 1.0 - p_hi;
                }
                if hi.abs() > x {
                    p += p_hi;
                }
                p.ln()
            }
        }
    }

    pub fn tail(&self, x: f64) -> f64 {
        self.log_tail(x).exp()
    }

    /// Probability mass at |X| = c (zero for continuous laws).
    pub fn atom_abs_mass(&self, c: f64) -> f64 {
        match self {
            Dist::Normal { .. } | Dist::CenteredExponential => 0.0,
            Dist::Rademacher => {
                if c == 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                let mut m = 0.0;
                if lo.abs() == c {
                    m += 1.0 - p_hi;
                }
                if hi.abs() == c {
                    m += p_hi;
                }
                m
            }
        }
    }

    /// E[X^2 ; |X| > c] (strict).
    pub fn second_above(&self, c: f64) -> f64 {
        debug_assert!(c >= 0.0);
        match self {
            Dist::Normal { sigma } => {
                let u = c / sigma;
                2.0 * sigma * sigma * (u * phi(u) + log_norm_q(u).exp())
            }
            Dist::CenteredExponential => {
                // right: int_{1+c}^inf (x-1)^2 e^{-x} dx = e^{-(1+c)} (c^2 + 2c + 2)
                let right = (-(1.0 + c)).exp() * (c * c + 2.0 * c + 2.0);
                let left = if c < 1.0 {
                    // int_0^{1-c} (x-1)^2 e^{-x} dx = 1 - e^{-(1-c)} ((1-c)^2 + 1)
                    let w = 1.0 - c;
                    1.0 - (-w).exp() * (w * w + 1.0)
                } else {
                    0.0
                };
                right + left
            }
            Dist::Rademacher => {
                if c < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                let mut s = 0.0;
                if lo.abs() > c {
                    s += (1.0 - p_hi) * lo * lo;
                }
                if hi.abs() > c {
                    s += p_hi * hi * hi;
                }
                s
            }
        }
    }

    /// E[X^2 ; |X| >= c] (weak, as in the Lindeberg sum).
    pub fn second_at_least(&self, c: f64) -> f64 {
        self.second_above(c) + c * c * self.atom_abs_mass(c)
    }

    /// Signed E[X ; |X| > c].
    pub fn mean_above(&self, c: f64) -> f64 {
        debug_assert!(c >= 0.0);
        match self {
            Dist::Normal { .. } | Dist::Rademacher => 0.0,
            Dist::CenteredExponential => {
                let right = (1.0 + c) * (-(1.0 + c)).exp();
                let left = if c < 1.0 {
                    -(1.0 - c) * (-(1.0 - c)).exp()
                } else {
                    0.0
                };
                right + left
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                let mut s = 0.0;
                if lo.abs() > c {
                    s += (1.0 - p_hi) * lo;
                }
                if hi.abs() > c {
                    s += p_hi * hi;
                }
                s
            }
        }
    }

    /// E[|X| ; |X| > c].
    pub fn abs_mean_above(&self, c: f64) -> f64 {
        debug_assert!(c >= 0.0);
        match self {
            Dist::Normal { sigma } => 2.0 * sigma * phi(c / sigma),
            Dist::CenteredExponential => {
                let right = (1.0 + c) * (-(1.0 + c)).exp();
                let left = if c < 1.0 {
                    (1.0 - c) * (-(1.0 - c)).exp()
                } else {
                    0.0
                };
                right + left
            }
            Dist::Rademacher => {
                if c < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                let mut s = 0.0;
                if lo.abs() > c {
                    s += (1.0 - p_hi) * lo.abs();
                }
                if hi.abs() > c {
                    s += p_hi * hi.abs();
                }
                s
            }
        }
    }

    /// Open interval on which the log-mgf is finite.
    pub fn mgf_domain(&self) -> (f64, f64) {
        match self {
            Dist::CenteredExponential => (f64::NEG_INFINITY, 1.0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// psi(theta) = ln E exp(theta X); caller must stay inside `mgf_domain`.
    pub fn log_mgf(&self, theta: f64) -> f64 {
        match self {
            Dist::Normal { sigma } => 0.5 * theta * theta * sigma * sigma,
            Dist::CenteredExponential => -(1.0 - theta).ln() - theta,
            Dist::Rademacher => {
                // ln cosh, stable for large |theta|
                let a = theta.abs();
                a + (0.5 * (1.0 + (-2.0 * a).exp())).ln()
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                logsumexp(&[(1.0 - p_hi).ln() + theta * lo, p_hi.ln() + theta * hi])
            }
        }
    }

    /// psi'(theta): the tilted mean.
    pub fn dlog_mgf(&self, theta: f64) -> f64 {
        match self {
            Dist::Normal { sigma } => theta * sigma * sigma,
            Dist::CenteredExponential => theta / (1.0 - theta),
            Dist::Rademacher => theta.tanh(),
            Dist::TwoPoint { lo, hi, p_hi } => {
                let (w_lo, w_hi) = two_point_tilted_weights(*lo, *hi, *p_hi, theta);
                w_lo * lo + w_hi * hi
            }
        }
    }

    /// psi''(theta): the tilted variance.
    pub fn d2log_mgf(&self, theta: f64) -> f64 {
        match self {
            Dist::Normal { sigma } => sigma * sigma,
            Dist::CenteredExponential => {
                let d = 1.0 - theta;
                1.0 / (d * d)
            }
            Dist::Rademacher => {
                let t = theta.tanh();
                1.0 - t * t
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                let (w_lo, w_hi) = two_point_tilted_weights(*lo, *hi, *p_hi, theta);
                let m = w_lo * lo + w_hi * hi;
                w_lo * lo * lo + w_hi * hi * hi - m * m
            }
        }
    }

    /// ln E[e^{g |X|} ; a < |X| < b], g >= 0, 0 <= a < b. Returns +inf when
    /// the integral diverges (only possible for b = inf outside the domain).
    pub fn log_exp_band(&self, g: f64, a: f64, b: f64) -> f64 {
        debug_assert!(g >= 0.0 && a >= 0.0 && b > a);
        match self {
            Dist::Normal { sigma } => {
                let s = *sigma;
                let shift = 0.5 * g * g * s * s;
                let za = (a - g * s * s) / s;
                if b.is_finite() {
                    let zb = (b - g * s * s) / s;
                    std::f64::consts::LN_2 + shift + log_diff_exp(log_norm_q(za), log_norm_q(zb))
                } else {
                    std::f64::consts::LN_2 + shift + log_norm_q(za)
                }
            }
            Dist::CenteredExponential => {
                // right piece: xi in (a, b) <=> E in (1+a, 1+b)
                let right = if b.is_finite() {
                    if (g - 1.0).abs() < 1e-14 {
                        (b - a).ln() - 1.0
                    } else if g > 1.0 {
                        log_diff_exp((g - 1.0) * (1.0 + b) - g, (g - 1.0) * (1.0 + a) - g)
                            - (g - 1.0).ln()
                    } else {
                        log_diff_exp((g - 1.0) * (1.0 + a) - g, (g - 1.0) * (1.0 + b) - g)
                            - (1.0 - g).ln()
                    }
                } else if g < 1.0 {
                    (g - 1.0) * (1.0 + a) - g - (1.0 - g).ln()
                } else {
                    return f64::INFINITY;
                };
                // left piece: xi in (-b, -a), xi >= -1 <=> E in (max(0, 1-b), 1-a)
                let left = if a < 1.0 {
                    let lo = (1.0 - b).max(0.0);
                    let up = 1.0 - a;
                    g + log_diff_exp(-(1.0 + g) * lo, -(1.0 + g) * up) - (1.0 + g).ln()
                } else {
                    f64::NEG_INFINITY
                };
                logsumexp(&[right, left])
            }
            Dist::Rademacher => {
                if a < 1.0 && 1.0 < b {
                    g
                } else {
                    f64::NEG_INFINITY
                }
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                let mut terms = Vec::with_capacity(2);
                let (la, ha) = (lo.abs(), hi.abs());
                if a < la && la < b {
                    terms.push((1.0 - p_hi).ln() + g * la);
                }
                if a < ha && ha < b {
                    terms.push(p_hi.ln() + g * ha);
                }
                logsumexp(&terms)
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Dist::Normal { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }
            Dist::CenteredExponential => sample_exp(rng) - 1.0,
            Dist::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                if rng.random::<f64>() < *p_hi {
                    *hi
                } else {
                    *lo
                }
            }
        }
    }

    /// Sample from the exponentially tilted law dP_theta ~ e^{theta x} dP.
    pub fn tilted_sample(&self, theta: f64, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Dist::Normal { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                theta * sigma * sigma + sigma * z
            }
            Dist::CenteredExponential => sample_exp(rng) / (1.0 - theta) - 1.0,
            Dist::Rademacher => {
                let p_plus = 1.0 / (1.0 + (-2.0 * theta).exp());
                if rng.random::<f64>() < p_plus {
                    1.0
                } else {
                    -1.0
                }
            }
            Dist::TwoPoint { lo, hi, p_hi } => {
                let (_, w_hi) = two_point_tilted_weights(*lo, *hi, *p_hi, theta);
                if rng.random::<f64>() < w_hi {
                    *hi
                } else {
                    *lo
                }
            }
        }
    }
}

fn sample_exp(rng: &mut ChaCha8Rng) -> f64 {
    // 1 - U in (0, 1], so the log never sees zero.
    -(1.0 - rng.random::<f64>()).ln()
}

fn two_point_tilted_weights(lo: f64, hi: f64, p_hi: f64, theta: f64) -> (f64, f64) {
    let l_lo = (1.0 - p_hi).ln() + theta * lo;
    let l_hi = p_hi.ln() + theta * hi;
    let z = logsumexp(&[l_lo, l_hi]);
    ((l_lo - z).exp(), (l_hi - z).exp())
}

/// An entry law `X = scale * xi`; `scale` may be negative or zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryLaw {
    pub dist: Dist,
    pub scale: f64,
}

impl EntryLaw {
    pub fn new(dist: Dist, scale: f64) -> Self {
        EntryLaw { dist, scale }
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale * self.dist.variance()
    }

    pub fn abs_bound(&self) -> Option<f64> {
        if self.scale == 0.0 {
            return Some(0.0);
        }
        self.dist.abs_bound().map(|b| b * self.scale.abs())
    }

    pub fn log_tail(&self, x: f64) -> f64 {
        if self.scale == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.dist.log_tail(x / self.scale.abs())
    }

    pub fn tail(&self, x: f64) -> f64 {
        self.log_tail(x).exp()
    }

    pub fn second_above(&self, c: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale * self.scale * self.dist.second_above(c / self.scale.abs())
    }

    pub fn second_at_least(&self, c: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale * self.scale * self.dist.second_at_least(c / self.scale.abs())
    }

    pub fn mean_above(&self, c: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale * self.dist.mean_above(c / self.scale.abs())
    }

    pub fn abs_mean_above(&self, c: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale.abs() * self.dist.abs_mean_above(c / self.scale.abs())
    }

    pub fn mgf_domain(&self) -> (f64, f64) {
        let (lo, hi) = self.dist.mgf_domain();
        if self.scale == 0.0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else if self.scale > 0.0 {
            (lo / self.scale, hi / self.scale)
        } else {
            (hi / self.scale, lo / self.scale)
        }
    }

    pub fn log_mgf(&self, theta: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.dist.log_mgf(self.scale * theta)
    }

    pub fn dlog_mgf(&self, theta: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale * self.dist.dlog_mgf(self.scale * theta)
    }

    pub fn d2log_mgf(&self, theta: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale * self.scale * self.dist.d2log_mgf(self.scale * theta)
    }

    pub fn log_exp_band(&self, g: f64, a: f64, b: f64) -> f64 {
        if self.scale == 0.0 {
            return f64::NEG_INFINITY;
        }
        let s = self.scale.abs();
        self.dist.log_exp_band(g * s, a / s, b / s)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.scale * self.dist.sample(rng)
    }

    pub fn tilted_sample(&self, theta: f64, rng: &mut ChaCha8Rng) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale * self.dist.tilted_sample(self.scale * theta, rng)
    }
}
