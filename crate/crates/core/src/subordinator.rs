//! Stable subordinators on an equidistant inner grid and the step-function
//! approximation of their inverse.
//!
//! The subordinator `D` has Laplace exponent `drift * s + s^alpha`. Paths are
//! sampled on the grid `i * delta` by accumulating independent increments
//! `delta^(1/alpha) * Z + drift * delta`, where `Z` is a unit-step draw of the
//! stable law from the Chambers-Mallows-Stuck representation
//!
//! ```text
//! Z = sin(a (V + pi/2)) / cos(V)^(1/a) * (cos(V - a (V + pi/2)) / W)^((1 - a)/a)
//! ```
//!
//! with `V ~ Uniform(-pi/2, pi/2)` and `W ~ Exp(1)`. The `delta^(1/alpha)`
//! factor is the self-similarity of the stable law: an increment over a step
//! of length `delta` has the law of `delta^(1/alpha)` times a unit-step
//! increment.
//!
//! The inverse is approximated by
//! `E~(t) = (min{n : D(n delta) > t} - 1) * delta`, a non-decreasing step
//! function with jumps of size `delta`, which sits within `delta` below the
//! true first-passage time.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::rng::{derive_stream, RandomStream, StreamKey, Substream};
use crate::stats::MeanAccumulator;

/// Default cap on the number of stored grid values.
pub const DEFAULT_GRID_CAP: usize = 1 << 31;

/// Where the jump part of each increment comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncrementLaw {
    Stable,
    /// Forces every stable increment to zero, leaving only the drift. With
    /// `drift = 1` this gives `D(t) = t` and hence `E(t) = t`; used to check
    /// the scheme against classical Euler-Maruyama.
    Suppressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorSpec {
    pub alpha: f64,
    pub drift: f64,
    pub inner_step: f64,
    pub law: IncrementLaw,
}

impl SubordinatorSpec {
    pub fn new(alpha: f64, drift: f64, inner_step: f64) -> Result<Self> {
        let spec = SubordinatorSpec {
            alpha,
            drift,
            inner_step,
            law: IncrementLaw::Stable,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Pure-drift clock `D(t) = drift * t`. `alpha` is kept for reporting.
    pub fn drift_only(alpha: f64, drift: f64, inner_step: f64) -> Result<Self> {
        let spec = SubordinatorSpec {
            alpha,
            drift,
            inner_step,
            law: IncrementLaw::Suppressed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_inner_step(self, inner_step: f64) -> Result<Self> {
        let spec = SubordinatorSpec { inner_step, ..self };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(Error::config(format!(
                "drift must be finite and non-negative, got {}",
                self.drift
            )));
        }
        if !(self.inner_step > 0.0 && self.inner_step.is_finite()) {
            return Err(Error::config(format!(
                "inner step must be positive, got {}",
                self.inner_step
            )));
        }
        if self.law == IncrementLaw::Suppressed && self.drift == 0.0 {
            return Err(Error::config(
                "a clock without stable increments needs a positive drift",
            ));
        }
        Ok(())
    }

    /// The convergence theory only covers alpha in (1/2, 1).
    pub fn within_theory(&self) -> bool {
        self.alpha > 0.5 && self.alpha < 1.0
    }

    pub fn check_theory_window(&self) -> Result<()> {
        if self.within_theory() {
            Ok(())
        } else {
            Err(Error::OutOfTheory { alpha: self.alpha })
        }
    }

    /// `drift * s + s^alpha`.
    pub fn laplace_exponent(&self, s: f64) -> f64 {
        let jump = match self.law {
            IncrementLaw::Stable => s.powf(self.alpha),
            IncrementLaw::Suppressed => 0.0,
        };
        self.drift * s + jump
    }

    fn increment(&self, scale: f64, stream: &mut RandomStream) -> f64 {
        let jump = match self.law {
            IncrementLaw::Stable => {
                let v = stream.uniform_half_angle();
                let w = stream.exponential_unit();
                scale * unit_stable_from_draws(self.alpha, v, w)
            }
            IncrementLaw::Suppressed => 0.0,
        };
        jump + self.drift * self.inner_step
    }
}

/// Unit-step stable draw evaluated at given `V` and `W`.
pub fn unit_stable_from_draws(alpha: f64, v: f64, w: f64) -> f64 {
    let shifted = alpha * (v + FRAC_PI_2);
    let head = shifted.sin() / v.cos().powf(1.0 / alpha);
    let tail = ((v - shifted).cos() / w).powf((1.0 - alpha) / alpha);
    head * tail
}

/// Stable increment over a step of length `delta`: `delta^(1/alpha) * Z`.
pub fn stable_increment_from_draws(alpha: f64, delta: f64, v: f64, w: f64) -> f64 {
    delta.powf(1.0 / alpha) * unit_stable_from_draws(alpha, v, w)
}

/// Draws one stable increment over a step of length `delta`.
///
/// Panics if the result is not finite and positive, which can only happen if
/// the stream hands out a closed-interval uniform.
pub fn sample_stable_increment(alpha: f64, delta: f64, stream: &mut RandomStream) -> f64 {
    let v = stream.uniform_half_angle();
    let w = stream.exponential_unit();
    let z = stable_increment_from_draws(alpha, delta, v, w);
    assert!(
        z.is_finite() && z > 0.0,
        "stable increment {z} from V = {v}, W = {w}"
    );
    z
}

/// Cumulative subordinator values `D(i * delta)` up to the first value that
/// exceeds the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorPathGrid {
    spec: SubordinatorSpec,
    values: Vec<f64>,
    horizon: f64,
}

impl SubordinatorPathGrid {
    /// Wraps precomputed values. They must start at zero, increase strictly,
    /// and end above `horizon`.
    pub fn from_values(spec: SubordinatorSpec, values: Vec<f64>, horizon: f64) -> Result<Self> {
        if values.first() != Some(&0.0) {
            return Err(Error::config("subordinator grid must start at 0"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                "subordinator grid must be strictly increasing",
            ));
        }
        if horizon.is_nan() || horizon <= 0.0 || *values.last().unwrap() <= horizon {
            return Err(Error::config(
                "subordinator grid must end above the horizon",
            ));
        }
        Ok(SubordinatorPathGrid {
            spec,
            values,
            horizon,
        })
    }

    pub fn spec(&self) -> &SubordinatorSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn inner_step(&self) -> f64 {
        self.spec.inner_step
    }

    /// `E~(t)`, located by binary search.
    pub fn inverse_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(self.inverse_unchecked(t))
    }

    pub(crate) fn inverse_unchecked(&self, t: f64) -> f64 {
        // First index with D(n delta) > t; at least 1 since D(0) = 0 <= t.
        let n = self.values.partition_point(|&d| d <= t);
        (n - 1) as f64 * self.spec.inner_step
    }
}

/// Samples `D` on the inner grid until it passes `horizon`.
pub fn sample_path(
    spec: &SubordinatorSpec,
    horizon: f64,
    stream: &mut RandomStream,
) -> Result<SubordinatorPathGrid> {
    sample_path_capped(spec, horizon, stream, DEFAULT_GRID_CAP)
}

pub fn sample_path_capped(
    spec: &SubordinatorSpec,
    horizon: f64,
    stream: &mut RandomStream,
    cap: usize,
) -> Result<SubordinatorPathGrid> {
    spec.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let scale = spec.inner_step.powf(1.0 / spec.alpha);
    let mut values = Vec::with_capacity(estimated_len(spec, horizon).min(cap));
    let mut d = 0.0;
    values.push(d);
    while d <= horizon {
        if values.len() >= cap {
            return Err(Error::GridTooLarge { cap });
        }
        let z = spec.increment(scale, stream);
        debug_assert!(z.is_finite() && z > 0.0);
        d += z;
        values.push(d);
    }
    Ok(SubordinatorPathGrid {
        spec: *spec,
        values,
        horizon,
    })
}

/// Rough first-passage count from the mean of `E(horizon)`, used as a
/// capacity hint only.
fn estimated_len(spec: &SubordinatorSpec, horizon: f64) -> usize {
    let mean_e = match spec.law {
        IncrementLaw::Stable if spec.drift == 0.0 => inverse_mean(spec.alpha, horizon),
        _ => horizon / spec.drift.max(1e-12),
    };
    let guess = 1.5 * mean_e / spec.inner_step + 16.0;
    if guess.is_finite() {
        guess.min(1e8) as usize
    } else {
        16
    }
}

/// `D(n_steps * delta)` without storing the path.
pub fn sample_value_after(
    spec: &SubordinatorSpec,
    n_steps: usize,
    stream: &mut RandomStream,
) -> f64 {
    let scale = spec.inner_step.powf(1.0 / spec.alpha);
    (0..n_steps).map(|_| spec.increment(scale, stream)).sum()
}

/// `E[E(t)] = t^alpha / Gamma(1 + alpha)` for the driftless stable case.
pub fn inverse_mean(alpha: f64, t: f64) -> f64 {
    t.powf(alpha) / gamma(1.0 + alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

/// Monte Carlo estimate of `E[|E(t_b) - E(t_a)|^order]` using `E~`.
///
/// Path `i` uses the subordinator stream of realization `i` under `seed`, so
/// the estimate does not depend on the thread count.
pub fn empirical_moment(
    spec: &SubordinatorSpec,
    t_a: f64,
    t_b: f64,
    order: u32,
    n_paths: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if !(t_a >= 0.0 && t_a < t_b) {
        return Err(Error::domain(format!(
            "need 0 <= a < b, got a = {t_a}, b = {t_b}"
        )));
    }
    if order == 0 {
        return Err(Error::domain("moment order must be at least 1"));
    }
    if n_paths == 0 {
        return Err(Error::config("need at least one path"));
    }
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut stream = derive_stream(StreamKey::new(seed, i, Substream::Subordinator));
            let path = sample_path(spec, t_b, &mut stream)?;
            let inc = path.inverse_unchecked(t_b) - path.inverse_unchecked(t_a);
            Ok(inc.abs().powi(order as i32))
        })
        .collect::<Result<_>>()?;
    let acc: MeanAccumulator = samples.into_iter().collect();
    Ok(MomentEstimate {
        mean: acc.mean(),
        std_error: acc.std_error(),
        paths: n_paths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Two-sided bounds on `E[|E(b) - E(a)|^n]` for the inverse stable
/// subordinator, `0 < a < b`:
///
/// ```text
/// r^(1-alpha) n! (b-a)^(n alpha) / (Gamma((n-1) alpha + 2) Gamma(alpha))
///   <= E[...] <=
/// r^(1-alpha) n! (b-a)^(n alpha) / Gamma(n alpha + 1),     r = (b - a) / b
/// ```
pub fn lemma3_bounds(alpha: f64, t_a: f64, t_b: f64, order: u32) -> Result<MomentBounds> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(t_a > 0.0 && t_a < t_b && t_b.is_finite()) {
        return Err(Error::domain(format!(
            "bounds need 0 < a < b, got a = {t_a}, b = {t_b}"
        )));
    }
    if order == 0 {
        return Err(Error::domain("moment order must be at least 1"));
    }
    let n = order as f64;
    let width = t_b - t_a;
    let common = (width / t_b).powf(1.0 - alpha) * factorial(order) * width.powf(n * alpha);
    Ok(MomentBounds {
        lower: common / (gamma((n - 1.0) * alpha + 2.0) * gamma(alpha)),
        upper: common / gamma(n * alpha + 1.0),
    })
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}
