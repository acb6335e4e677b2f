//! Equidistant-step Euler-Maruyama and the duality cross-check.

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::sde::SdeSystem;
use crate::timechange::{RealizationId, TimeChangeDrivers};

/// Piecewise-constant numerical trajectory: `X~(t) = X_n` on `[t_n, t_{n+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrajectory {
    dt: f64,
    d: usize,
    /// `(N + 1) x d`, row-major.
    states: Vec<f64>,
    origin: Option<RealizationId>,
}

impl EmTrajectory {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.d..(n + 1) * self.d]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn origin(&self) -> Option<RealizationId> {
        self.origin
    }
}

fn check_dims(system: &SdeSystem, drivers: &TimeChangeDrivers) -> Result<()> {
    if system.m() != drivers.dims() {
        return Err(Error::config(format!(
            "system '{}' expects {} Brownian components, drivers carry {}",
            system.name(),
            system.m(),
            drivers.dims()
        )));
    }
    Ok(())
}

struct Stepper<'a> {
    system: &'a SdeSystem,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(system: &'a SdeSystem) -> Self {
        Stepper {
            system,
            f: vec![0.0; system.d()],
            g: vec![0.0; system.d() * system.m()],
        }
    }

    /// `x += f(x) de + g(x) db`.
    fn step(&mut self, x: &mut [f64], de: f64, db: &[f64]) {
        let m = self.system.m();
        self.system.drift_into(x, &mut self.f);
        self.system.diffusion_into(x, &mut self.g);
        for (i, xi) in x.iter_mut().enumerate() {
            let row = &self.g[i * m..(i + 1) * m];
            let noise: f64 = row.iter().zip(db).map(|(gij, dbj)| gij * dbj).sum();
            *xi += self.f[i] * de + noise;
        }
    }
}

fn run_em(
    system: &SdeSystem,
    drivers: &TimeChangeDrivers,
    mut record: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    check_dims(system, drivers)?;
    let mut x = system.initial_state().to_vec();
    let mut stepper = Stepper::new(system);
    record(&x);
    for (n, &de) in drivers.delta_e().iter().enumerate() {
        // Both increments vanish on a flat stretch of E.
        if de != 0.0 {
            stepper.step(&mut x, de, drivers.delta_b(n));
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: n });
            }
        }
        record(&x);
    }
    Ok(x)
}

/// `X_{n+1} = X_n + f(X_n) dE_n + g(X_n) dB_n`, keeping every state.
pub fn em_solve(system: &SdeSystem, drivers: &TimeChangeDrivers) -> Result<EmTrajectory> {
    let d = system.d();
    let mut states = Vec::with_capacity((drivers.steps() + 1) * d);
    run_em(system, drivers, |x| states.extend_from_slice(x))?;
    Ok(EmTrajectory {
        dt: drivers.dt(),
        d,
        states,
        origin: drivers.origin(),
    })
}

/// Same recursion as [`em_solve`], returning only `X_N`.
pub fn em_terminal(system: &SdeSystem, drivers: &TimeChangeDrivers) -> Result<Vec<f64>> {
    run_em(system, drivers, |_| {})
}

/// Independent estimate of `X(T)` through the duality with the classical SDE.
///
/// Runs classical Euler-Maruyama for `dY = f(Y) du + g(Y) dW(u)` on the
/// operational interval `[0, E(T)]` with `inner_refine * N` equal steps and
/// returns `Y(E(T))`. `W` is the Brownian path the drivers already fix at the
/// nodes `E(t_n)`; values between nodes are filled in by Brownian bridges using
/// normals from `bridge`, so the estimate uses the same noise as the scheme.
pub fn duality_solve(
    system: &SdeSystem,
    drivers: &TimeChangeDrivers,
    inner_refine: usize,
    bridge: &mut RandomStream,
) -> Result<Vec<f64>> {
    check_dims(system, drivers)?;
    if inner_refine == 0 {
        return Err(Error::config("inner refinement must be at least 1"));
    }
    let total = drivers.e_terminal();
    let mut x = system.initial_state().to_vec();
    if total == 0.0 {
        return Ok(x);
    }
    let m = system.m();
    let nodes = drivers.e_values();
    let op_steps = inner_refine * drivers.steps();
    let h = total / op_steps as f64;

    let mut stepper = Stepper::new(system);
    let mut prev_u = 0.0;
    let mut prev_b = vec![0.0; m];
    let mut next_b = vec![0.0; m];
    let mut db = vec![0.0; m];
    let mut k = 1;
    for j in 1..=op_steps {
        let u = if j == op_steps { total } else { j as f64 * h };
        // First node at or beyond u.
        k += nodes[k..].partition_point(|&e| e < u);
        let (u_r, b_r) = (nodes[k], drivers.b_value(k));
        let (u_l, b_l): (f64, &[f64]) = if prev_u >= nodes[k - 1] {
            (prev_u, &prev_b)
        } else {
            (nodes[k - 1], drivers.b_value(k - 1))
        };
        for c in 0..m {
            let xi = bridge.standard_normal();
            next_b[c] = if u_r == u {
                b_r[c]
            } else {
                let w = (u - u_l) / (u_r - u_l);
                let var = (u - u_l) * (u_r - u) / (u_r - u_l);
                b_l[c] + w * (b_r[c] - b_l[c]) + var.sqrt() * xi
            };
            db[c] = next_b[c] - prev_b[c];
        }
        stepper.step(&mut x, u - prev_u, &db);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: j });
        }
        std::mem::swap(&mut prev_b, &mut next_b);
        prev_u = u;
    }
    Ok(x)
}
