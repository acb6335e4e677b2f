//! Strong-convergence studies and the statistical checks on the clock.
//!
//! A study draws `M` independent realizations. Each realization builds its
//! drivers once at the reference step, solves there, then coarsens the same
//! drivers to every ladder step and records the distance between the coarse
//! and reference terminal values. Averaging gives the L1 error per step, and
//! an ordinary least-squares fit of `log2 error` against `log2 dt` gives the
//! empirical rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, StreamKey, Substream};
use crate::sde::SdeSystem;
use crate::solver::em_terminal;
use crate::stats::MeanAccumulator;
use crate::subordinator::{empirical_moment, lemma3_bounds, sample_value_after, SubordinatorSpec};
use crate::timechange::{build_fine_drivers, step_count, RealizationId};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default ladder of coarsening factors relative to the reference step.
pub const DEFAULT_LADDER: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `dt_ref = 2^-13`, `M = 2000`.
    Desk,
    /// `dt_ref = 2^-15`, `M = 10^4`.
    Paper,
}

impl Profile {
    pub fn dt_ref(self) -> f64 {
        match self {
            Profile::Desk => 1.0 / 8192.0,
            Profile::Paper => 1.0 / 32768.0,
        }
    }

    pub fn samples(self) -> usize {
        match self {
            Profile::Desk => 2000,
            Profile::Paper => 10_000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub system: SdeSystem,
    pub spec: SubordinatorSpec,
    pub horizon: f64,
    pub dt_ref: f64,
    pub ladder: Vec<usize>,
    pub samples: usize,
    pub master_seed: u64,
    pub allow_out_of_theory: bool,
}

impl ConvergenceConfig {
    /// Study of `system` under an `(alpha, drift)` clock with the profile's
    /// reference step and sample count. The inner step of the subordinator
    /// equals the reference step.
    pub fn new(system: SdeSystem, alpha: f64, drift: f64, profile: Profile) -> Result<Self> {
        let dt_ref = profile.dt_ref();
        Ok(ConvergenceConfig {
            system,
            spec: SubordinatorSpec::new(alpha, drift, dt_ref)?,
            horizon: 1.0,
            dt_ref,
            ladder: DEFAULT_LADDER.to_vec(),
            samples: profile.samples(),
            master_seed: 0,
            allow_out_of_theory: false,
        })
    }

    /// Changes the reference step and moves the inner step along with it.
    pub fn with_dt_ref(mut self, dt_ref: f64) -> Result<Self> {
        self.spec = self.spec.with_inner_step(dt_ref)?;
        self.dt_ref = dt_ref;
        Ok(self)
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_ladder(mut self, ladder: Vec<usize>) -> Self {
        self.ladder = ladder;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !self.allow_out_of_theory {
            self.spec.check_theory_window()?;
        }
        let steps = step_count(self.horizon, self.dt_ref)?;
        if self.ladder.is_empty() {
            return Err(Error::config("ladder must not be empty"));
        }
        if self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("ladder must be strictly increasing"));
        }
        if let Some(&f) = self.ladder.iter().find(|&&f| f == 0 || steps % f != 0) {
            return Err(Error::config(format!(
                "ladder factor {f} does not divide T / dt_ref = {steps}"
            )));
        }
        if self.samples < 2 {
            return Err(Error::config("need at least two samples"));
        }
        Ok(())
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            system: self.system.name().to_owned(),
            system_params: self
                .system
                .params()
                .iter()
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            alpha: self.spec.alpha,
            drift: self.spec.drift,
            inner_step: self.spec.inner_step,
            increment_law: self.spec.law,
            horizon: self.horizon,
            dt_ref: self.dt_ref,
            ladder: self.ladder.clone(),
            samples: self.samples,
            master_seed: self.master_seed,
            out_of_theory: !self.spec.within_theory(),
        }
    }
}

/// Fully resolved study parameters, as echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub system: String,
    pub system_params: Vec<(String, f64)>,
    pub alpha: f64,
    pub drift: f64,
    pub inner_step: f64,
    pub increment_law: crate::subordinator::IncrementLaw,
    pub horizon: f64,
    pub dt_ref: f64,
    pub ladder: Vec<usize>,
    pub samples: usize,
    pub master_seed: u64,
    pub out_of_theory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub factor: usize,
    pub dt: f64,
    pub error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub entries: Vec<LadderEntry>,
    pub fitted_rate: f64,
    pub fit_intercept: f64,
    pub r_squared: f64,
    pub theoretical_rate: f64,
}

/// `(1 + alpha) / 4`, or the classical 1/2 once the clock has a positive drift.
pub fn theoretical_rate(alpha: f64, drift: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if drift > 0.0 {
        Ok(0.5)
    } else {
        Ok((1.0 + alpha) / 4.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(log2 dt, log2 error)`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 2 {
        return Err(Error::domain("need at least two points"));
    }
    if points.iter().any(|&(h, e)| !(h > 0.0 && e > 0.0)) {
        return Err(Error::domain("step sizes and errors must be positive"));
    }
    // Fixed summation order makes the fit independent of the input order.
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xy: Vec<(f64, f64)> = pts.iter().map(|&(h, e)| (h.log2(), e.log2())).collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("all step sizes are equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xy
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Euclidean distance between the coarse and reference terminal values of
/// realization `index`, one entry per ladder factor.
pub fn realization_errors(config: &ConvergenceConfig, index: u64) -> Result<Vec<f64>> {
    let id = RealizationId {
        master_seed: config.master_seed,
        index,
    };
    let fine = build_fine_drivers(
        &config.spec,
        config.horizon,
        config.dt_ref,
        config.system.m(),
        id,
    )?;
    let reference = em_terminal(&config.system, &fine)?;
    config
        .ladder
        .iter()
        .map(|&factor| {
            let coarse = fine.coarsen(factor)?;
            let x = em_terminal(&config.system, &coarse)?;
            Ok(x.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt())
        })
        .collect()
}

/// Runs the study on the current rayon pool. The result is bit-identical for
/// any pool size: realizations are keyed by index and reduced in index order.
pub fn run_convergence_study(config: &ConvergenceConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let per_realization: Vec<Vec<f64>> = (0..config.samples as u64)
        .into_par_iter()
        .map(|j| {
            realization_errors(config, j).map_err(|e| Error::Realization {
                realization: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(config.ladder.len());
    for (level, &factor) in config.ladder.iter().enumerate() {
        let acc: MeanAccumulator = per_realization.iter().map(|errs| errs[level]).collect();
        let dt = config.dt_ref * factor as f64;
        if acc.mean() == 0.0 {
            return Err(Error::DegenerateCoupling { dt });
        }
        entries.push(LadderEntry {
            factor,
            dt,
            error: acc.mean(),
            std_error: acc.std_error(),
        });
    }
    let points: Vec<(f64, f64)> = entries.iter().map(|e| (e.dt, e.error)).collect();
    let fit = fit_loglog(&points)?;
    Ok(ConvergenceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.echo(),
        entries,
        fitted_rate: fit.slope,
        fit_intercept: fit.intercept,
        r_squared: fit.r_squared,
        theoretical_rate: theoretical_rate(config.spec.alpha, config.spec.drift)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub t_a: f64,
    pub t_b: f64,
    pub order: u32,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

/// Compares Monte Carlo moments of inverse-subordinator increments with their
/// two-sided bounds; a row passes when the estimate lies in
/// `[lower - 3 SE, upper + 3 SE]`.
pub fn verify_moment_bounds(
    spec: &SubordinatorSpec,
    grid: &[(f64, f64, u32)],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MomentCheck>> {
    grid.iter()
        .map(|&(t_a, t_b, order)| {
            let bounds = lemma3_bounds(spec.alpha, t_a, t_b, order)?;
            let est = empirical_moment(spec, t_a, t_b, order, n_paths, seed)?;
            let pass = est.mean >= bounds.lower - 3.0 * est.std_error
                && est.mean <= bounds.upper + 3.0 * est.std_error;
            Ok(MomentCheck {
                t_a,
                t_b,
                order,
                estimate: est.mean,
                std_error: est.std_error,
                lower: bounds.lower,
                upper: bounds.upper,
                pass,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceCheck {
    pub s: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub exact: f64,
}

impl LaplaceCheck {
    /// Distance from the exact transform in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.exact).abs() / self.std_error
    }
}

/// Empirical `E[exp(-s D(horizon))]` against `exp(-horizon * psi(s))`, with `D`
/// built from `horizon / inner_step` increments.
pub fn laplace_check(
    spec: &SubordinatorSpec,
    horizon: f64,
    s_values: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<LaplaceCheck>> {
    let steps = step_count(horizon, spec.inner_step)?;
    let terminal: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut stream = derive_stream(StreamKey::new(seed, i, Substream::Subordinator));
            sample_value_after(spec, steps, &mut stream)
        })
        .collect();
    Ok(s_values
        .iter()
        .map(|&s| {
            let acc: MeanAccumulator = terminal.iter().map(|d| (-s * d).exp()).collect();
            LaplaceCheck {
                s,
                empirical: acc.mean(),
                std_error: acc.std_error(),
                exact: (-horizon * spec.laplace_exponent(s)).exp(),
            }
        })
        .collect())
}
