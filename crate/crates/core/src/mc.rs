//! Crude and exponentially tilted Monte Carlo for speed-scaled tail
//! probabilities of row sums and their partial-sum paths.
//!
//! Batches run in parallel; each batch draws from a substream keyed by
//! (seed, n, batch index) and the reduction is in ascending batch order, so
//! estimates are bit-identical for any worker count. Everything that can
//! underflow is carried in log scale: importance weights are log-weights
//! and every estimate exposes `log_p` next to `p_hat`.

use crate::error::{Error, Result};
use crate::models::{RowPlan, TriangularArrayModel};
use crate::rng::substream;
use crate::speed::SpeedSequence;
use crate::stats::mean_var;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

const CRUDE_STREAM: u64 = 0x10;
const TILT_STREAM: u64 = 0x11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub samples_per_batch: u64,
    pub batches: u64,
    pub seed: u64,
    /// CI multiplier; 3 unless stated otherwise.
    pub confidence: f64,
}

impl McConfig {
    pub fn new(samples_per_batch: u64, batches: u64, seed: u64) -> Self {
        McConfig {
            samples_per_batch,
            batches,
            seed,
            confidence: 3.0,
        }
    }

    pub fn total_samples(&self) -> u64 {
        self.samples_per_batch * self.batches
    }
}

/// Whether event levels refer to the raw sum S_n or to the speed-scaled
/// process sqrt(a_n) W_n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventScale {
    Raw,
    Moderate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    EndpointAtLeast { level: f64 },
    SupAtLeast { level: f64 },
    IncrementAtLeast { t1: f64, t2: f64, level: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub scale: EventScale,
}

impl Event {
    pub fn endpoint_raw(level: f64) -> Self {
        Event {
            kind: EventKind::EndpointAtLeast { level },
            scale: EventScale::Raw,
        }
    }

    pub fn endpoint_moderate(level: f64) -> Self {
        Event {
            kind: EventKind::EndpointAtLeast { level },
            scale: EventScale::Moderate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    Tilted,
    Crude,
}

/// A tail probability with its uncertainty, in both linear and log scale.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailEstimate {
    pub p_hat: f64,
    /// ln p, finite even when p_hat underflows; -inf on zero hits.
    pub log_p: f64,
    pub se: f64,
    pub rel_se: f64,
    /// Probability-scale interval; (0, 3/N) on zero hits (rule of three).
    pub ci: (f64, f64),
    /// a_n ln p.
    pub log_scaled: f64,
    pub method: Method,
    /// Effective sample size of the weighted hits (tilted only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    pub zero_hits: bool,
    pub samples: u64,
}

// ---------------------------------------------------------------------------
// event evaluation plumbing
// ---------------------------------------------------------------------------

/// A row statistic check compiled against one (model, n, event).
#[derive(Debug, Clone)]
enum Check {
    /// S_n >= thr (thr in raw-sum units).
    Endpoint { thr: f64 },
    /// max over prefix sums (including the empty prefix) >= thr.
    Sup { thr: f64 },
    /// S_{j2} - S_{j1} >= thr.
    Increment { j1: u64, j2: u64, thr: f64 },
}

struct CompiledEvent {
    check: Check,
    a_n: f64,
}

fn compile_event(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    event: Event,
    n: u64,
) -> Result<CompiledEvent> {
    let a_n = a.value(n)?;
    let s_n = model.total_variance(n)?.sqrt();
    let factor = match event.scale {
        EventScale::Raw => 1.0,
        EventScale::Moderate => a_n.sqrt() / s_n,
    };
    let check = match event.kind {
        EventKind::EndpointAtLeast { level } => {
            if !level.is_finite() && level < 0.0 {
                Check::Endpoint {
                    thr: f64::NEG_INFINITY,
                }
            } else {
                Check::Endpoint {
                    thr: level / factor,
                }
            }
        }
        EventKind::SupAtLeast { level } => Check::Sup {
            thr: level / factor,
        },
        EventKind::IncrementAtLeast { t1, t2, level } => {
            if !(0.0..=1.0).contains(&t1) || !(0.0..=1.0).contains(&t2) || t2 < t1 {
                return Err(Error::UnsupportedEvent(
                    "increment event needs 0 <= t1 <= t2 <= 1".into(),
                ));
            }
            // variance-time indices: W(t) holds S_i for partials up to t s^2
            let moments = model.row_moments(n)?;
            let pos = |t: f64| -> u64 {
                moments
                    .partials
                    .iter()
                    .take_while(|&&p| p <= t * moments.s2)
                    .count() as u64
            };
            Check::Increment {
                j1: pos(t1),
                j2: pos(t2),
                thr: level / factor,
            }
        }
    };
    Ok(CompiledEvent { check, a_n })
}

impl Check {
    /// Evaluate the indicator on a fresh row from `plan`; also returns S_n.
    fn run(&self, plan: &RowPlan, rng: &mut ChaCha8Rng) -> (bool, f64) {
        match *self {
            Check::Endpoint { thr } => {
                let mut s = 0.0;
                plan.visit_row(rng, |x| s += x);
                (s >= thr, s)
            }
            Check::Sup { thr } => {
                let mut s = 0.0;
                let mut best = 0.0_f64; // empty prefix
                plan.visit_row(rng, |x| {
                    s += x;
                    best = best.max(s);
                });
                (best >= thr, s)
            }
            Check::Increment { j1, j2, thr } => {
                let mut s = 0.0;
                let mut idx = 0u64;
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                plan.visit_row(rng, |x| {
                    s += x;
                    idx += 1;
                    if idx == j1 {
                        s1 = s;
                    }
                    if idx == j2 {
                        s2 = s;
                    }
                });
                if j1 == 0 {
                    s1 = 0.0;
                }
                if j2 == 0 {
                    s2 = 0.0;
                }
                (s2 - s1 >= thr, s)
            }
        }
    }
}

/// Online log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, lw: f64) {
        if lw == f64::NEG_INFINITY {
            return;
        }
        if lw <= self.max {
            self.sum += (lw - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - lw).exp() + 1.0;
            self.max = lw;
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

// ---------------------------------------------------------------------------
// crude estimation
// ---------------------------------------------------------------------------

/// Plain indicator average over parallel deterministic batches.
pub fn crude_tail(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    event: Event,
    n: u64,
    cfg: &McConfig,
) -> Result<TailEstimate> {
    let compiled = compile_event(model, a, event, n)?;
    let plan = model.row_plan(n)?;
    let m = cfg.samples_per_batch;
    let hits: Vec<u64> = (0..cfg.batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(cfg.seed, &[CRUDE_STREAM, n, b]);
            let mut h = 0u64;
            for _ in 0..m {
                if compiled.check.run(&plan, &mut rng).0 {
                    h += 1;
                }
            }
            h
        })
        .collect();
    let total: u64 = hits.iter().sum();
    let n_samples = cfg.total_samples();
    let p = total as f64 / n_samples as f64;
    let batch_means: Vec<f64> = hits.iter().map(|&h| h as f64 / m as f64).collect();
    let (_, var_b) = mean_var(&batch_means);
    let se = (var_b / cfg.batches as f64).sqrt();
    Ok(finish_estimate(
        p,
        if p > 0.0 { p.ln() } else { f64::NEG_INFINITY },
        se,
        compiled.a_n,
        Method::Crude,
        None,
        n_samples,
        cfg.confidence,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish_estimate(
    p_hat: f64,
    log_p: f64,
    se: f64,
    a_n: f64,
    method: Method,
    ess: Option<f64>,
    samples: u64,
    confidence: f64,
) -> TailEstimate {
    let zero_hits = log_p == f64::NEG_INFINITY;
    let ci = if zero_hits {
        (0.0, 3.0 / samples as f64)
    } else {
        (
            (p_hat - confidence * se).max(0.0),
            (p_hat + confidence * se).min(1.0),
        )
    };
    TailEstimate {
        p_hat,
        log_p,
        se,
        rel_se: if p_hat > 0.0 { se / p_hat } else { f64::NAN },
        ci,
        log_scaled: a_n * log_p,
        method,
        ess,
        zero_hits,
        samples,
    }
}

// ---------------------------------------------------------------------------
// exponential tilting
// ---------------------------------------------------------------------------

/// A solved tilt: theta with sum_j psi_j'(theta) = target.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TiltPlan {
    pub n: u64,
    pub theta: f64,
    pub target: f64,
    /// sum_j psi_j(theta), the log normalizer of the tilted row.
    pub log_norm: f64,
}

/// Solve the strictly convex tilt equation by safeguarded Newton.
pub fn tilt_solve(model: &TriangularArrayModel, n: u64, target: f64) -> Result<TiltPlan> {
    let (dom_lo, dom_hi) = model.row_mgf_domain(n)?;
    let residual_tol = 1e-8 * target.abs().max(1.0);
    if target == 0.0 {
        return Ok(TiltPlan {
            n,
            theta: 0.0,
            target,
            log_norm: 0.0,
        });
    }
    // bracket the root; entries are centered so g(0) = -target
    let g = |theta: f64| -> Result<f64> { Ok(model.row_dlog_mgf(n, theta)? - target) };
    let (mut lo, mut hi);
    if target > 0.0 {
        lo = 0.0;
        let mut probe = if dom_hi.is_finite() {
            dom_hi - 0.5 * (dom_hi - lo)
        } else {
            1.0
        };
        let mut found = false;
        for _ in 0..200 {
            if g(probe)? >= 0.0 {
                found = true;
                break;
            }
            lo = probe;
            probe = if dom_hi.is_finite() {
                dom_hi - 0.5 * (dom_hi - probe)
            } else {
                probe * 2.0
            };
        }
        if !found {
            return Err(Error::TargetUnattainable {
                target,
                lo: dom_lo,
                hi: dom_hi,
            });
        }
        hi = probe;
    } else {
        hi = 0.0;
        let mut probe = if dom_lo.is_finite() {
            dom_lo + 0.5 * (hi - dom_lo)
        } else {
            -1.0
        };
        let mut found = false;
        for _ in 0..200 {
            if g(probe)? <= 0.0 {
                found = true;
                break;
            }
            hi = probe;
            probe = if dom_lo.is_finite() {
                dom_lo + 0.5 * (probe - dom_lo)
            } else {
                probe * 2.0
            };
        }
        if !found {
            return Err(Error::TargetUnattainable {
                target,
                lo: dom_lo,
                hi: dom_hi,
            });
        }
        lo = probe;
    }
    // Newton with bisection fallback inside [lo, hi]
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gv = g(theta)?;
        if gv.abs() <= residual_tol {
            return Ok(TiltPlan {
                n,
                theta,
                target,
                log_norm: model.row_log_mgf(n, theta)?,
            });
        }
        if gv > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        let dg = model.row_d2log_mgf(n, theta)?;
        let newton = theta - gv / dg;
        theta = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::TargetUnattainable {
        target,
        lo: dom_lo,
        hi: dom_hi,
    })
}

/// Importance-sampled endpoint tail under the tilted law; weights are kept
/// as log-weights throughout.
pub fn is_tail(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    event: Event,
    n: u64,
    plan: &TiltPlan,
    cfg: &McConfig,
) -> Result<TailEstimate> {
    if !matches!(event.kind, EventKind::EndpointAtLeast { .. }) {
        return Err(Error::UnsupportedEvent(
            "tilted sampling targets endpoint events".into(),
        ));
    }
    let compiled = compile_event(model, a, event, n)?;
    let Check::Endpoint { thr } = compiled.check else {
        unreachable!()
    };
    // guarantees closed-form entry laws, so tilted sampling cannot fail below
    model.row_mgf_domain(n)?;
    let row_plan = model.row_plan(n)?;
    let theta = plan.theta;
    let log_norm = plan.log_norm;
    let m = cfg.samples_per_batch;
    let per_batch: Vec<(f64, f64)> = (0..cfg.batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(cfg.seed, &[TILT_STREAM, n, b]);
            let mut w = LogSum::new();
            let mut w2 = LogSum::new();
            for _ in 0..m {
                let mut s = 0.0;
                row_plan
                    .visit_row_tilted(theta, &mut rng, |x| s += x)
                    .expect("validated by tilt_solve");
                if s >= thr {
                    let lw = log_norm - theta * s;
                    w.add(lw);
                    w2.add(2.0 * lw);
                }
            }
            (w.value(), w2.value())
        })
        .collect();
    let n_samples = cfg.total_samples();
    let mut all_w = LogSum::new();
    let mut all_w2 = LogSum::new();
    for &(lw, lw2) in &per_batch {
        all_w.add(lw);
        all_w2.add(lw2);
    }
    let log_p = all_w.value() - (n_samples as f64).ln();
    if log_p == f64::NEG_INFINITY {
        return Ok(finish_estimate(
            0.0,
            f64::NEG_INFINITY,
            0.0,
            compiled.a_n,
            Method::Tilted,
            Some(0.0),
            n_samples,
            cfg.confidence,
        ));
    }
    // relative SE across batch means, computed under a common shift
    let log_means: Vec<f64> = per_batch
        .iter()
        .map(|&(lw, _)| lw - (m as f64).ln())
        .collect();
    let shift = log_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = log_means.iter().map(|&x| (x - shift).exp()).collect();
    let (mean_r, var_r) = mean_var(&shifted);
    let rel_se = if mean_r > 0.0 {
        (var_r / cfg.batches as f64).sqrt() / mean_r
    } else {
        f64::NAN
    };
    let p_hat = log_p.exp();
    let ess = (2.0 * all_w.value() - all_w2.value()).exp();
    let mut est = finish_estimate(
        p_hat,
        log_p,
        rel_se * p_hat,
        compiled.a_n,
        Method::Tilted,
        Some(ess),
        n_samples,
        cfg.confidence,
    );
    est.rel_se = rel_se;
    Ok(est)
}

// ---------------------------------------------------------------------------
// curves
// ---------------------------------------------------------------------------

/// Event template for a deviation curve; the level comes from the t-grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveEvent {
    Endpoint,
    Sup,
    Increment { t1: f64, t2: f64 },
}

impl CurveEvent {
    fn event(&self, level: f64) -> Event {
        let kind = match *self {
            CurveEvent::Endpoint => EventKind::EndpointAtLeast { level },
            CurveEvent::Sup => EventKind::SupAtLeast { level },
            CurveEvent::Increment { t1, t2 } => EventKind::IncrementAtLeast { t1, t2, level },
        };
        Event {
            kind,
            scale: EventScale::Moderate,
        }
    }

    /// Closed-form rate infimum at the given level.
    fn rate(&self, level: f64) -> f64 {
        match *self {
            CurveEvent::Endpoint | CurveEvent::Sup => {
                if level <= 0.0 {
                    0.0
                } else {
                    0.5 * level * level
                }
            }
            CurveEvent::Increment { t1, t2 } => {
                if level <= 0.0 {
                    0.0
                } else if t2 == t1 {
                    f64::INFINITY
                } else {
                    0.5 * level * level / (t2 - t1)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveCell {
    pub n: u64,
    pub a_n: f64,
    pub t: f64,
    pub method: Method,
    pub p_hat: f64,
    pub se: f64,
    pub log_scaled: f64,
    /// Closed-form rate infimum of the event.
    pub rate: f64,
    /// log_scaled + rate; tends to 0 from below when the principle holds.
    pub gap: f64,
}

/// Speed-scaled deviation curve over (n, t) with automatic method selection:
/// exact sum law, else tilted sampling when the row has an mgf, else crude.
pub fn mdp_curve(
    model: &TriangularArrayModel,
    a: &SpeedSequence,
    curve_event: CurveEvent,
    t_grid: &[f64],
    cfg: &McConfig,
    force: Option<Method>,
) -> Result<Vec<CurveCell>> {
    if t_grid.is_empty() || model.n_grid().is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    let mut cells = Vec::with_capacity(t_grid.len() * model.n_grid().len());
    for &n in model.n_grid() {
        let a_n = a.value(n)?;
        let s_n = model.total_variance(n)?.sqrt();
        let sum_law = model.sum_law(n)?;
        let has_mgf = model.row_mgf_domain(n).is_ok();
        for &t in t_grid {
            let event = curve_event.event(t);
            let method = force.unwrap_or(match (&curve_event, &sum_law, has_mgf) {
                (CurveEvent::Endpoint, Some(_), _) => Method::Analytic,
                (CurveEvent::Endpoint, None, true) => Method::Tilted,
                _ => Method::Crude,
            });
            let est = match method {
                Method::Analytic => {
                    let law = sum_law.as_ref().ok_or_else(|| {
                        Error::InvalidParameter("no exact sum law for this model".into())
                    })?;
                    if !matches!(curve_event, CurveEvent::Endpoint) {
                        return Err(Error::UnsupportedEvent(
                            "analytic route covers endpoint events".into(),
                        ));
                    }
                    let thr = t * s_n / a_n.sqrt();
                    let log_p = law.log_sf(thr);
                    finish_estimate(
                        log_p.exp(),
                        log_p,
                        0.0,
                        a_n,
                        Method::Analytic,
                        None,
                        0,
                        cfg.confidence,
                    )
                }
                Method::Tilted => {
                    let thr = t * s_n / a_n.sqrt();
                    let plan = tilt_solve(model, n, thr)?;
                    is_tail(model, a, event, n, &plan, cfg)?
                }
                Method::Crude => crude_tail(model, a, event, n, cfg)?,
            };
            let rate = curve_event.rate(t);
            cells.push(CurveCell {
                n,
                a_n,
                t,
                method: est.method,
                p_hat: est.p_hat,
                se: est.se,
                log_scaled: est.log_scaled,
                rate,
                gap: est.log_scaled + rate,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Dist;
    use crate::models::{FamilySpec, KSpec, ModelSpec};
    use crate::speed::SpeedSequence;
    use std::collections::BTreeMap;

    fn iid(dist: Dist, speed: SpeedSequence, n_grid: Vec<u64>) -> TriangularArrayModel {
        ModelSpec {
            family: FamilySpec::Iid { dist, k: KSpec::N },
            speed,
            n_grid,
        }
        .build()
        .unwrap()
    }

    fn poisson_cdf(lambda: f64, k_max: u64) -> f64 {
        let mut term = (-lambda).exp();
        let mut sum = term;
        for k in 1..=k_max {
            term *= lambda / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn crude_matches_binomial_oracle() {
        let speed = SpeedSequence::power_law(0.5);
        let m = iid(Dist::Rademacher, speed.clone(), vec![100]);
        let cfg = McConfig::new(25_000, 8, 42);
        let est = crude_tail(&m, &speed, Event::endpoint_raw(20.0), 100, &cfg).unwrap();
        let oracle = crate::stats::log_binom_half_sf(100, 60).exp();
        assert!(
            (est.p_hat - oracle).abs() <= 3.0 * est.se,
            "{} vs {oracle} (se {})",
            est.p_hat,
            est.se
        );
        assert!(est.ci.0 <= est.p_hat && est.p_hat <= est.ci.1);
    }

    #[test]
    fn certain_event_has_unit_probability() {
        let speed = SpeedSequence::power_law(0.5);
        let m = iid(Dist::Rademacher, speed.clone(), vec![16]);
        let cfg = McConfig::new(1000, 2, 7);
        let est = crude_tail(&m, &speed, Event::endpoint_raw(f64::NEG_INFINITY), 16, &cfg).unwrap();
        assert_eq!(est.p_hat, 1.0);
        assert_eq!(est.log_scaled, 0.0);
    }

    #[test]
    fn zero_hits_flagged_with_rule_of_three() {
        let speed = SpeedSequence::power_law(0.5);
        let m = iid(Dist::Rademacher, speed.clone(), vec![16]);
        let cfg = McConfig::new(500, 2, 7);
        let est = crude_tail(&m, &speed, Event::endpoint_raw(100.0), 16, &cfg).unwrap();
        assert!(est.zero_hits);
        assert_eq!(est.p_hat, 0.0);
        assert_eq!(est.log_scaled, f64::NEG_INFINITY);
        assert!((est.ci.1 - 3.0 / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn tilt_solves_closed_forms() {
        let speed = SpeedSequence::power_law(0.5);
        // centered exponential sum, n = 10, raw target 10
        // (the uncentered Gamma(10) at 20): 10 theta/(1-theta) = 10
        let m = iid(Dist::CenteredExponential, speed.clone(), vec![10]);
        let plan = tilt_solve(&m, 10, 10.0).unwrap();
        // residual contract is 1e-8 max(1, |target|), so theta is a
        // factor 1/psi'' looser
        assert!((plan.theta - 0.5).abs() < 1e-6, "theta {}", plan.theta);
        // gaussian: theta = target / n
        let g = iid(Dist::Normal { sigma: 1.0 }, speed.clone(), vec![25]);
        let plan = tilt_solve(&g, 25, 5.0).unwrap();
        assert!((plan.theta - 0.2).abs() < 1e-6);
        // zero target is the untilted law
        assert_eq!(tilt_solve(&g, 25, 0.0).unwrap().theta, 0.0);
        // negative target for the asymmetric law
        let plan = tilt_solve(&m, 10, -5.0).unwrap();
        assert!(plan.theta < 0.0);
        // unattainable target for bounded sums
        let r = iid(Dist::Rademacher, speed.clone(), vec![10]);
        assert!(matches!(
            tilt_solve(&r, 10, 20.0),
            Err(Error::TargetUnattainable { .. })
        ));
    }

    #[test]
    fn zero_tilt_reduces_to_crude_exactly() {
        let speed = SpeedSequence::power_law(0.5);
        let m = iid(Dist::CenteredExponential, speed.clone(), vec![10]);
        let cfg = McConfig::new(5_000, 4, 9);
        let plan = tilt_solve(&m, 10, 0.0).unwrap();
        let ev = Event::endpoint_raw(2.0);
        let a = is_tail(&m, &speed, ev, 10, &plan, &cfg).unwrap();
        // same seed stream, unit weights: identical batch hits, but the
        // crude path uses its own stream tag, so compare against a manual
        // crude run on the tilt stream by checking agreement within noise
        let b = crude_tail(&m, &speed, ev, 10, &cfg).unwrap();
        let combined = (a.se * a.se + b.se * b.se).sqrt();
        assert!(
            (a.p_hat - b.p_hat).abs() <= 3.0 * combined,
            "{} vs {}",
            a.p_hat,
            b.p_hat
        );
        // weights are exactly 1: se structure matches a bernoulli average
        assert!(a.ess.unwrap() > 0.9 * (a.p_hat * cfg.total_samples() as f64));
    }

    #[test]
    fn gamma_tail_importance_sampling() {
        // P(Gamma(10) >= 20) = P(Pois(20) <= 9) = 4.9954e-3; centered sum
        // level is 20 - 10 = 10
        let speed = SpeedSequence::power_law(0.5);
        let m = iid(Dist::CenteredExponential, speed.clone(), vec![10]);
        let oracle = poisson_cdf(20.0, 9);
        assert!((oracle - 0.0049954123083075785).abs() < 1e-15);
        let plan = tilt_solve(&m, 10, 10.0).unwrap();
        let cfg = McConfig::new(12_500, 8, 31);
        let est = is_tail(&m, &speed, Event::endpoint_raw(10.0), 10, &plan, &cfg).unwrap();
        assert!(
            (est.p_hat - oracle).abs() <= 3.0 * est.se,
            "{} vs {oracle} ({})",
            est.p_hat,
            est.se
        );
        assert!(est.rel_se <= 0.01, "rel se {}", est.rel_se);
        assert!(est.ess.unwrap() > 1000.0);
    }

    #[test]
    fn is_tail_tracks_a_deep_gaussian_tail_in_log_scale() {
        // moderate endpoint t = 1 at a_n = 0.01: p = Q(10) ~ 7.6e-24; the
        // log-scaled estimate must sit within 0.01 of a_n ln Q(10)
        let speed = SpeedSequence::Table {
            values: BTreeMap::from([(100u64, 0.01f64)]),
        };
        let m = iid(Dist::Normal { sigma: 1.0 }, speed.clone(), vec![100]);
        let thr = 1.0 * 10.0 / 0.1; // t s_n / sqrt(a_n)
        let plan = tilt_solve(&m, 100, thr).unwrap();
        let cfg = McConfig::new(12_500, 8, 4);
        let est = is_tail(&m, &speed, Event::endpoint_moderate(1.0), 100, &plan, &cfg).unwrap();
        let want = 0.01 * crate::stats::log_norm_q(10.0);
        assert!(
            (est.log_scaled - want).abs() <= 0.01,
            "{} vs {want}",
            est.log_scaled
        );
        assert!(est.p_hat < 1e-20 && est.p_hat > 0.0);
    }

    #[test]
    fn crude_and_tilted_agree_on_moderate_events() {
        let speed = SpeedSequence::power_law(0.5);
        let m = iid(Dist::CenteredExponential, speed.clone(), vec![50]);
        // P(S_50 >= 10) is around 0.08: both estimators see plenty of hits
        let ev = Event::endpoint_raw(10.0);
        let cfg = McConfig::new(12_500, 8, 13);
        let plan = tilt_solve(&m, 50, 10.0).unwrap();
        let a = is_tail(&m, &speed, ev, 50, &plan, &cfg).unwrap();
        let b = crude_tail(&m, &speed, ev, 50, &cfg).unwrap();
        let combined = (a.se * a.se + b.se * b.se).sqrt();
        assert!(
            (a.p_hat - b.p_hat).abs() <= 3.0 * combined,
            "tilted {} vs crude {}",
            a.p_hat,
            b.p_hat
        );
    }

    #[test]
    fn gaussian_endpoint_matches_exact_tail() {
        let speed = SpeedSequence::Table {
            values: BTreeMap::from([(100u64, 0.04f64)]),
        };
        let m = iid(Dist::Normal { sigma: 1.0 }, speed.clone(), vec![100]);
        let cfg = McConfig::new(12_500, 8, 3);
        // moderate endpoint t = 0.3: P(N >= 0.3/0.2) = Q(1.5)
        let est = crude_tail(&m, &speed, Event::endpoint_moderate(0.3), 100, &cfg).unwrap();
        let want = crate::stats::norm_q(1.5);
        assert!((est.p_hat - want).abs() <= 3.0 * est.se);
    }

    #[test]
    fn mdp_curve_gaussian_analytic_values() {
        let mut values = BTreeMap::new();
        for (n, a) in [(100u64, 0.04f64), (200, 0.01), (300, 1e-3), (400, 1e-4)] {
            values.insert(n, a);
        }
        let speed = SpeedSequence::Table { values };
        let m = iid(
            Dist::Normal { sigma: 1.0 },
            speed.clone(),
            vec![100, 200, 300, 400],
        );
        let cfg = McConfig::new(100, 2, 1);
        let cells = mdp_curve(&m, &speed, CurveEvent::Endpoint, &[1.0], &cfg, None).unwrap();
        assert!(cells.iter().all(|c| c.method == Method::Analytic));
        let ls: Vec<f64> = cells.iter().map(|c| c.log_scaled).collect();
        assert!((ls[0] - (-0.6025999357595491)).abs() < 1e-9);
        assert!((ls[1] - (-0.5323128515051248)).abs() < 1e-9);
        assert!((ls[2] - (-0.5043738136849417)).abs() < 1e-9);
        assert!((ls[3] - (-0.5005524208694205)).abs() < 1e-9);
        // monotone approach to -1/2 from below as a_n decreases
        assert!(ls.windows(2).all(|w| w[0] < w[1]));
        assert!((cells[0].gap - (0.5 - 0.6025999357595491)).abs() < 1e-9);
    }

    #[test]
    fn mdp_curve_t_zero() {
        let speed = SpeedSequence::Table {
            values: BTreeMap::from([(100u64, 0.04f64)]),
        };
        let m = iid(Dist::Normal { sigma: 1.0 }, speed.clone(), vec![100]);
        let cfg = McConfig::new(100, 2, 1);
        let cells = mdp_curve(&m, &speed, CurveEvent::Endpoint, &[0.0], &cfg, None).unwrap();
        // P = 1/2: log_scaled = a_n ln(1/2), rate 0
        assert!((cells[0].log_scaled - 0.04 * 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(cells[0].rate, 0.0);
    }

    #[test]
    fn determinism_same_seed_same_bits() {
        let speed = SpeedSequence::power_law(0.5);
        let m = iid(Dist::CenteredExponential, speed.clone(), vec![50]);
        let cfg = McConfig::new(2_000, 4, 99);
        let ev = Event::endpoint_raw(5.0);
        let a = crude_tail(&m, &speed, ev, 50, &cfg).unwrap();
        let b = crude_tail(&m, &speed, ev, 50, &cfg).unwrap();
        assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }

    #[test]
    fn sup_event_dominates_endpoint() {
        let speed = SpeedSequence::power_law(0.5);
        let m = iid(Dist::Rademacher, speed.clone(), vec![64]);
        let cfg = McConfig::new(10_000, 4, 5);
        let sup = crude_tail(
            &m,
            &speed,
            Event {
                kind: EventKind::SupAtLeast { level: 8.0 },
                scale: EventScale::Raw,
            },
            64,
            &cfg,
        )
        .unwrap();
        let end = crude_tail(&m, &speed, Event::endpoint_raw(8.0), 64, &cfg).unwrap();
        assert!(sup.p_hat >= end.p_hat);
    }

    #[test]
    fn increment_event_on_half_interval() {
        // iid unit-variance entries: W(3/4) - W(1/4) spans half the variance
        let speed = SpeedSequence::Table {
            values: BTreeMap::from([(64u64, 0.04f64)]),
        };
        let m = iid(Dist::Normal { sigma: 1.0 }, speed.clone(), vec![64]);
        let cfg = McConfig::new(25_000, 8, 17);
        let ev = Event {
            kind: EventKind::IncrementAtLeast {
                t1: 0.25,
                t2: 0.75,
                level: 0.2,
            },
            scale: EventScale::Moderate,
        };
        let est = crude_tail(&m, &speed, ev, 64, &cfg).unwrap();
        // increment is N(0, 1/2) in W-scale: P(sqrt(a) W-inc >= 0.2)
        // = Q(0.2 / (sqrt(0.04) sqrt(0.5))) = Q(sqrt 2)
        let want = crate::stats::norm_q(0.2 / (0.2 * 0.5f64.sqrt()));
        assert!(
            (est.p_hat - want).abs() <= 3.5 * est.se,
            "{} vs {want}",
            est.p_hat
        );
    }
}
