//! Partial-sum paths on [0, 1] in variance time, and the quadratic rate
//! functional with its finite-dimensional and event-infimum forms.
//!
//! Step paths carry the value S_{n,i-1}/s_n on [s^2_{n,i-1}/s^2_n,
//! s^2_{ni}/s^2_n) with the full sum at t = 1; linear paths interpolate the
//! same nodes. Zero-variance entries contribute no breakpoint: their knot
//! collapses onto the previous one and the later value wins.
//!
//! Event infima are returned in two independent ways: the closed form and a
//! projected-gradient minimization of the discretized quadratic
//! (1/2) sum (dz_i)^2 / dt on a uniform grid with the event as constraint.

use crate::error::{Error, Result};
use crate::models::{RowMoments, RowSample};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Step,
    Linear,
}

/// Step or piecewise-linear function on [0, 1] with a lazy scalar multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPath", into = "RawPath")]
pub struct PiecewisePath {
    kind: PathKind,
    knots: Vec<f64>,
    values: Vec<f64>,
    scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawPath {
    kind: PathKind,
    knots: Vec<f64>,
    values: Vec<f64>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    scale: f64,
}

fn one() -> f64 {
    1.0
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_one(x: &f64) -> bool {
    *x == 1.0
}

impl From<PiecewisePath> for RawPath {
    fn from(p: PiecewisePath) -> Self {
        RawPath {
            kind: p.kind,
            knots: p.knots,
            values: p.values,
            scale: p.scale,
        }
    }
}

impl TryFrom<RawPath> for PiecewisePath {
    type Error = Error;
    fn try_from(r: RawPath) -> Result<Self> {
        PiecewisePath::new(r.kind, r.knots, r.values, r.scale)
    }
}

impl PiecewisePath {
    pub fn new(kind: PathKind, knots: Vec<f64>, values: Vec<f64>, scale: f64) -> Result<Self> {
        if knots.len() != values.len() || knots.len() < 2 {
            return Err(Error::InvalidParameter(
                "knots and values must be equal-length, length >= 2".into(),
            ));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter(
                "knots must start at 0 and end at 1".into(),
            ));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "knots must be strictly increasing".into(),
            ));
        }
        if kind == PathKind::Linear && values[0] != 0.0 {
            return Err(Error::InvalidParameter(
                "linear paths must start at 0".into(),
            ));
        }
        Ok(PiecewisePath {
            kind,
            knots,
            values,
            scale,
        })
    }

    pub fn step(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(PathKind::Step, knots, values, 1.0)
    }

    pub fn linear(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(PathKind::Linear, knots, values, 1.0)
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Path value at t in [0, 1].
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        if t >= 1.0 {
            return self.scale * self.values.last().unwrap();
        }
        // segment with knots[i] <= t < knots[i+1]
        let i = match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(ins) => ins - 1,
        };
        match self.kind {
            PathKind::Step => self.scale * self.values[i],
            PathKind::Linear => {
                let w = (t - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
                self.scale * (self.values[i] + w * (self.values[i + 1] - self.values[i]))
            }
        }
    }

    /// Supremum over [0, 1]; both kinds attain it at a node.
    pub fn sup(&self) -> f64 {
        let m = if self.scale >= 0.0 {
            self.values
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            self.values.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        self.scale * m
    }

    pub fn endpoint(&self) -> f64 {
        self.scale * self.values.last().unwrap()
    }

    pub fn increment(&self, t1: f64, t2: f64) -> f64 {
        self.eval(t2) - self.eval(t1)
    }
}

/// Build the Donsker path of a row in variance time.
pub fn donsker_path(
    row: &RowSample,
    moments: &RowMoments,
    kind: PathKind,
) -> Result<PiecewisePath> {
    if !(moments.s2 > 0.0) {
        return Err(Error::ZeroTotalVariance(row.n));
    }
    let s_n = moments.s2.sqrt();
    let k = row.values.len();
    assert_eq!(k, moments.partials.len(), "row/moments length mismatch");
    let mut knots = Vec::with_capacity(k + 1);
    let mut values = Vec::with_capacity(k + 1);
    knots.push(0.0);
    values.push(0.0);
    let mut sum = 0.0;
    for i in 0..k {
        sum += row.values[i];
        let b = moments.partials[i] / moments.s2;
        let v = sum / s_n;
        if b == *knots.last().unwrap() {
            // zero-variance entry: no breakpoint, the later value wins
            *values.last_mut().unwrap() = v;
        } else {
            knots.push(b);
            values.push(v);
        }
    }
    // accumulation makes the last breakpoint exactly 1
    debug_assert_eq!(*knots.last().unwrap(), 1.0);
    PiecewisePath::new(kind, knots, values, 1.0)
}

/// Quadratic rate of one path: (1/2) int (z')^2 for absolutely continuous z
/// vanishing at 0, +inf otherwise. Step paths with a jump are not absolutely
/// continuous; jumpless step paths are constant.
pub fn rate_i(path: &PiecewisePath) -> f64 {
    let s = path.scale;
    if s * path.values[0] != 0.0 {
        return f64::INFINITY;
    }
    match path.kind {
        PathKind::Step => {
            let jumps = path.values.windows(2).any(|w| s * w[0] != s * w[1]);
            if jumps {
                f64::INFINITY
            } else {
                0.0
            }
        }
        PathKind::Linear => {
            let mut acc = 0.0;
            for i in 1..path.values.len() {
                let dv = s * (path.values[i] - path.values[i - 1]);
                let dt = path.knots[i] - path.knots[i - 1];
                acc += dv * dv / dt;
            }
            0.5 * acc
        }
    }
}

/// Finite-dimensional rate over (t_1 <= ... <= t_m, u_1..u_m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePartition {
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateForm {
    /// sum (1/2) (u_l - u_{l-1})^2 / (t_l - t_{l-1}) with u_0 = 0.
    Levels,
    /// sum (1/2) u_l^2 / (t_l - t_{l-1}).
    Increments,
}

pub fn rate_im(partition: &RatePartition, form: RateForm) -> Result<f64> {
    let m = partition.times.len();
    if m == 0 || partition.levels.len() != m {
        return Err(Error::InvalidParameter(
            "partition needs m >= 1 times and as many levels".into(),
        ));
    }
    let mut t_prev = 0.0;
    for &t in &partition.times {
        if t < t_prev || t > 1.0 {
            return Err(Error::InvalidParameter(
                "times must be sorted inside [0, 1]".into(),
            ));
        }
        t_prev = t;
    }
    let mut acc = 0.0;
    let mut u_prev = 0.0;
    let mut t_prev = 0.0;
    for l in 0..m {
        let dt = partition.times[l] - t_prev;
        let du = match form {
            RateForm::Levels => partition.levels[l] - u_prev,
            RateForm::Increments => partition.levels[l],
        };
        if dt == 0.0 {
            if du != 0.0 {
                return Ok(f64::INFINITY);
            }
        } else {
            acc += 0.5 * du * du / dt;
        }
        u_prev = partition.levels[l];
        t_prev = partition.times[l];
    }
    Ok(acc)
}

/// Path events whose rate infimum has a closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(clippy::derive_partial_eq_without_eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathEvent {
    /// z(1) >= level.
    EndpointAtLeast { level: f64 },
    /// sup_t z(t) >= level.
    SupAtLeast { level: f64 },
    /// z(t2) - z(t1) >= level.
    IncrementAtLeast { t1: f64, t2: f64, level: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventInfimum {
    pub closed_form: f64,
    /// Discretized quadratic minimization on a grid of the given size.
    pub grid_value: f64,
    pub grid_size: usize,
}

/// Infimum of the rate over an event, with the grid cross-check.
pub fn rate_event_infimum(event: PathEvent, grid_size: usize) -> Result<EventInfimum> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter("grid_size must be >= 2".into()));
    }
    let closed_form = match event {
        PathEvent::EndpointAtLeast { level } | PathEvent::SupAtLeast { level } => {
            if level <= 0.0 {
                0.0
            } else {
                0.5 * level * level
            }
        }
        PathEvent::IncrementAtLeast { t1, t2, level } => {
            if !(0.0..=1.0).contains(&t1) || !(0.0..=1.0).contains(&t2) || t2 < t1 {
                return Err(Error::InvalidParameter(
                    "increment event needs 0 <= t1 <= t2 <= 1".into(),
                ));
            }
            if level <= 0.0 {
                0.0
            } else if t2 == t1 {
                f64::INFINITY
            } else {
                0.5 * level * level / (t2 - t1)
            }
        }
    };
    let grid_value = grid_event_infimum(event, grid_size)?;
    Ok(EventInfimum {
        closed_form,
        grid_value,
        grid_size,
    })
}

/// Rescale a rate value by the kernel variance factor f(x) int K^2.
pub fn kernel_rate(value: f64, fx: f64, k2: f64) -> Result<f64> {
    let denom = fx * k2;
    if !(denom > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel rate scale f(x) int K^2 = {denom} must be positive"
        )));
    }
    Ok(value / denom)
}

// ---------------------------------------------------------------------------
// discretized minimization
// ---------------------------------------------------------------------------

/// Minimize (N/2) sum (z_i - z_{i-1})^2 over grid paths (z_0 = 0) subject to
/// the event, by projected gradient with Nesterov momentum and restarts.
type Projection = Box<dyn Fn(&mut [f64])>;

fn grid_event_infimum(event: PathEvent, n: usize) -> Result<f64> {
    let level = match event {
        PathEvent::EndpointAtLeast { level }
        | PathEvent::SupAtLeast { level }
        | PathEvent::IncrementAtLeast { level, .. } => level,
    };
    if level <= 0.0 {
        return Ok(0.0);
    }
    let project: Projection = match event {
        PathEvent::EndpointAtLeast { level } => Box::new(move |z: &mut [f64]| {
            let last = z.len() - 1;
            if z[last] < level {
                z[last] = level;
            }
        }),
        PathEvent::SupAtLeast { level } => Box::new(move |z: &mut [f64]| {
            let (mut arg, mut best) = (0usize, f64::NEG_INFINITY);
            for (i, &v) in z.iter().enumerate() {
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            if best < level {
                z[arg] = level;
            }
        }),
        PathEvent::IncrementAtLeast { t1, t2, level } => {
            if t2 <= t1 {
                return Ok(f64::INFINITY);
            }
            let i1 = (t1 * n as f64).round() as usize;
            let i2 = (t2 * n as f64).round() as usize;
            if i1 == i2 {
                return Ok(f64::INFINITY);
            }
            Box::new(move |z: &mut [f64]| {
                // z is indexed 1..=N here; index 0 of the slice is z_1
                let a = i1; // 0 means the pinned origin
                let b = i2 - 1;
                let za = if a == 0 { 0.0 } else { z[a - 1] };
                let d = level - (z[b] - za);
                if d > 0.0 {
                    if a == 0 {
                        z[b] += d;
                    } else {
                        z[b] += 0.5 * d;
                        z[a - 1] -= 0.5 * d;
                    }
                }
            })
        }
    };
    // start from the constant-level path (feasible but far from optimal)
    let mut z = vec![level; n];
    project(&mut z);
    Ok(pgd(&mut z, n, &project))
}

/// Minimize with z pinned at the grid images of (times, levels); the free
/// coordinates relax. Used to cross-check the finite-dimensional rate.
pub fn grid_infimum_through_points(times: &[f64], levels: &[f64], n: usize) -> Result<f64> {
    if times.len() != levels.len() || times.is_empty() {
        return Err(Error::InvalidParameter("need matching times/levels".into()));
    }
    let pins: Vec<(usize, f64)> = times
        .iter()
        .zip(levels)
        .map(|(&t, &u)| ((t * n as f64).round() as usize, u))
        .collect();
    if pins.iter().any(|&(i, _)| i == 0 || i > n) {
        return Err(Error::InvalidParameter(
            "pinned times must map to grid indices in 1..=N".into(),
        ));
    }
    let project = move |z: &mut [f64]| {
        for &(i, u) in &pins {
            z[i - 1] = u;
        }
    };
    let mut z = vec![0.0; n];
    project(&mut z);
    Ok(pgd(&mut z, n, &project))
}

fn objective(z: &[f64], n: usize) -> f64 {
    let nf = n as f64;
    let mut acc = z[0] * z[0];
    for i in 1..z.len() {
        let d = z[i] - z[i - 1];
        acc += d * d;
    }
    0.5 * nf * acc
}

fn gradient(z: &[f64], n: usize, g: &mut [f64]) {
    let nf = n as f64;
    let last = z.len() - 1;
    for i in 0..=last {
        let prev = if i == 0 { 0.0 } else { z[i - 1] };
        let mut v = z[i] - prev;
        if i < last {
            v -= z[i + 1] - z[i];
        }
        g[i] = nf * v;
    }
}

/// Projected gradient with Nesterov momentum, restart on objective increase,
/// fixed 1e-10 tolerance on the iterate displacement.
fn pgd(z: &mut Vec<f64>, n: usize, project: &dyn Fn(&mut [f64])) -> f64 {
    let dim = z.len();
    let eta = 1.0 / (4.0 * n as f64);
    let mut y = z.clone();
    let mut g = vec![0.0; dim];
    let mut t_mom = 1.0_f64;
    let mut f_prev = objective(z, n);
    let mut just_restarted = false;
    let max_iter = 4_000_000usize;
    for _ in 0..max_iter {
        gradient(&y, n, &mut g);
        let mut z_next = y.clone();
        for i in 0..dim {
            z_next[i] -= eta * g[i];
        }
        project(&mut z_next);
        let f_next = objective(&z_next, n);
        if f_next > f_prev * (1.0 + 1e-12) && !just_restarted {
            // momentum overshot: restart from the last accepted iterate
            t_mom = 1.0;
            y.copy_from_slice(z);
            just_restarted = true;
            continue;
        }
        just_restarted = false;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_mom * t_mom).sqrt());
        let beta = (t_mom - 1.0) / t_next;
        let mut delta = 0.0_f64;
        for i in 0..dim {
            let d = z_next[i] - z[i];
            delta = delta.max(d.abs());
            y[i] = z_next[i] + beta * d;
        }
        project(&mut y);
        *z = z_next;
        t_mom = t_next;
        f_prev = f_next;
        if delta <= 1e-10 {
            break;
        }
    }
    objective(z, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_ramp() -> PiecewisePath {
        PiecewisePath::linear(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn rate_of_identity_ramp() {
        assert!((rate_i(&linear_ramp()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rate_of_piecewise_ramp() {
        // (0, 0.5, 1) -> (0, 1, 1): (1/2)(2^2 * 0.5 + 0) = 1
        let p = PiecewisePath::linear(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        assert!((rate_i(&p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_path_and_jumps() {
        let z = PiecewisePath::linear(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(rate_i(&z), 0.0);
        let s = PiecewisePath::step(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(rate_i(&s), f64::INFINITY);
        let flat = PiecewisePath::step(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(rate_i(&flat), 0.0);
        // nonzero start is not reachable from 0
        let off = PiecewisePath::step(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(rate_i(&off), f64::INFINITY);
    }

    #[test]
    fn scaling_is_quadratic() {
        let p = PiecewisePath::linear(vec![0.0, 0.25, 1.0], vec![0.0, -0.7, 0.4]).unwrap();
        let r1 = rate_i(&p);
        let r3 = rate_i(&p.clone().with_scale(3.0));
        assert!((r3 - 9.0 * r1).abs() < 1e-12 * r1.max(1.0));
    }

    #[test]
    fn donsker_step_path_hand_example() {
        let row = RowSample {
            n: 4,
            seed: 0,
            values: vec![0.5, -0.5, 0.5, 0.5],
        };
        let m = RowMoments {
            variances: vec![0.25; 4],
            s2: 1.0,
            partials: vec![0.25, 0.5, 0.75, 1.0],
        };
        let p = donsker_path(&row, &m, PathKind::Step).unwrap();
        assert_eq!(p.knots(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(p.values(), &[0.0, 0.5, 0.0, 0.5, 1.0]);
        assert_eq!(p.eval(0.1), 0.0);
        assert_eq!(p.eval(0.3), 0.5);
        assert_eq!(p.eval(0.6), 0.0);
        assert_eq!(p.eval(0.8), 0.5);
        assert_eq!(p.eval(1.0), 1.0);
        let l = donsker_path(&row, &m, PathKind::Linear).unwrap();
        assert!((l.eval(0.5) - 0.0).abs() < 1e-15);
        assert!((l.eval(0.375) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_entries_collapse_knots() {
        let row = RowSample {
            n: 3,
            seed: 0,
            values: vec![1.0, 0.0, 1.0],
        };
        let m = RowMoments {
            variances: vec![0.5, 0.0, 0.5],
            s2: 1.0,
            partials: vec![0.5, 0.5, 1.0],
        };
        let p = donsker_path(&row, &m, PathKind::Step).unwrap();
        assert_eq!(p.knots(), &[0.0, 0.5, 1.0]);
        assert_eq!(p.values(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn rate_im_forms_match_spec_examples() {
        // levels: t = (0.5, 1), u = (1, 1) -> 1/2 * 1 / 0.5 = 1
        let p = RatePartition {
            times: vec![0.5, 1.0],
            levels: vec![1.0, 1.0],
        };
        assert!((rate_im(&p, RateForm::Levels).unwrap() - 1.0).abs() < 1e-15);
        // increments single time: lambda^2 / 2
        let q = RatePartition {
            times: vec![1.0],
            levels: vec![1.0],
        };
        assert!((rate_im(&q, RateForm::Increments).unwrap() - 0.5).abs() < 1e-15);
        // all-zero levels
        let z = RatePartition {
            times: vec![0.3, 0.7],
            levels: vec![0.0, 0.0],
        };
        assert_eq!(rate_im(&z, RateForm::Levels).unwrap(), 0.0);
    }

    #[test]
    fn rate_im_coincident_times() {
        let p = RatePartition {
            times: vec![0.5, 0.5],
            levels: vec![1.0, 2.0],
        };
        assert_eq!(rate_im(&p, RateForm::Levels).unwrap(), f64::INFINITY);
        let ok = RatePartition {
            times: vec![0.5, 0.5],
            levels: vec![1.0, 1.0],
        };
        assert!(rate_im(&ok, RateForm::Levels).unwrap().is_finite());
    }

    #[test]
    fn levels_and_increments_agree_under_difference_map() {
        let times = vec![0.2, 0.5, 0.9];
        let levels = vec![0.3, -0.4, 1.1];
        let incs: Vec<f64> = {
            let mut prev = 0.0;
            levels
                .iter()
                .map(|&u| {
                    let d = u - prev;
                    prev = u;
                    d
                })
                .collect()
        };
        let a = rate_im(
            &RatePartition {
                times: times.clone(),
                levels,
            },
            RateForm::Levels,
        )
        .unwrap();
        let b = rate_im(
            &RatePartition {
                times,
                levels: incs,
            },
            RateForm::Increments,
        )
        .unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn event_infima_match_grid_minimizer() {
        let cases = [
            (PathEvent::EndpointAtLeast { level: 1.0 }, 0.5),
            (PathEvent::SupAtLeast { level: 2.0 }, 2.0),
            (
                PathEvent::IncrementAtLeast {
                    t1: 0.25,
                    t2: 0.75,
                    level: 1.0,
                },
                1.0,
            ),
        ];
        for (event, want) in cases {
            let inf = rate_event_infimum(event, 64).unwrap();
            assert!(
                (inf.closed_form - want).abs() < 1e-12,
                "{event:?} closed form"
            );
            assert!(
                (inf.grid_value - inf.closed_form).abs() < 1e-6,
                "{event:?}: grid {} vs closed {}",
                inf.grid_value,
                inf.closed_form
            );
        }
        // nonpositive levels cost nothing
        let e = rate_event_infimum(PathEvent::EndpointAtLeast { level: -2.0 }, 64).unwrap();
        assert_eq!(e.closed_form, 0.0);
        assert_eq!(e.grid_value, 0.0);
    }

    #[test]
    fn kernel_rate_scaling() {
        let fx = 0.3989422804014327; // standard normal at 0
        let got = kernel_rate(0.5, fx, 1.0).unwrap();
        assert!((got - 1.2533141373155003).abs() < 1e-12);
        assert_eq!(kernel_rate(0.0, fx, 1.0).unwrap(), 0.0);
        assert!(kernel_rate(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn path_json_round_trip() {
        let p = linear_ramp();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"kind\":\"linear\""));
        assert!(!s.contains("scale"));
        let back: PiecewisePath = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        // invalid knots rejected on deserialization
        let bad = r#"{"kind":"step","knots":[0.0,0.5],"values":[0.0,1.0]}"#;
        assert!(serde_json::from_str::<PiecewisePath>(bad).is_err());
    }
}
