//! Autonomous time-changed SDEs `dX = f(X) dE + g(X) dB(E)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Writes `f(x)` (length `d`) into the output slice.
pub type DriftFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
/// Writes `g(x)` as a row-major `d x m` matrix into the output slice.
pub type DiffusionFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
/// Closed-form `X(T)` given `E(T)` and `B(E(T))`.
pub type OracleFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub struct SdeSystem {
    name: String,
    d: usize,
    m: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    initial_state: Vec<f64>,
    oracle: Option<Arc<OracleFn>>,
    params: BTreeMap<String, f64>,
    lipschitz: Option<f64>,
}

impl fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSystem")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("initial_state", &self.initial_state)
            .field("params", &self.params)
            .field("has_oracle", &self.oracle.is_some())
            .finish()
    }
}

impl SdeSystem {
    pub fn new(
        name: impl Into<String>,
        m: usize,
        initial_state: Vec<f64>,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        let d = initial_state.len();
        if d == 0 || m == 0 {
            return Err(Error::config(
                "state and noise dimensions must be at least 1",
            ));
        }
        if initial_state.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("initial state must be finite"));
        }
        Ok(SdeSystem {
            name: name.into(),
            d,
            m,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            initial_state,
            oracle: None,
            params: BTreeMap::new(),
            lipschitz: None,
        })
    }

    pub fn with_oracle(
        mut self,
        oracle: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.oracle = Some(Arc::new(oracle));
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }

    /// Lipschitz constant for the tests; the solver never reads it.
    pub fn with_lipschitz(mut self, k: f64) -> Self {
        self.lipschitz = Some(k);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn has_oracle(&self) -> bool {
        self.oracle.is_some()
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out);
        debug_assert!(
            !x.iter().all(|v| v.is_finite()) || out.iter().all(|v| v.is_finite()),
            "drift of {} returned a non-finite value",
            self.name
        );
    }

    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out);
        debug_assert!(
            !x.iter().all(|v| v.is_finite()) || out.iter().all(|v| v.is_finite()),
            "diffusion of {} returned a non-finite value",
            self.name
        );
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.drift_into(x, &mut out);
        out
    }

    /// Row-major `d x m`.
    pub fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d * self.m];
        self.diffusion_into(x, &mut out);
        out
    }

    pub fn oracle(&self, e_terminal: f64, b_terminal: &[f64]) -> Option<Vec<f64>> {
        self.oracle.as_ref().map(|o| o(e_terminal, b_terminal))
    }
}

/// The coupled two-dimensional example with two independent noises:
///
/// ```text
/// dX1 = -(X1 + X2) dE + 2 (X1 + X2) dB1(E)
/// dX2 = -2 (X1 + X2) dE +  (X1 + X2) dB2(E)
/// ```
///
/// started from `(1, 2)`.
pub fn builtin_paper_example() -> SdeSystem {
    SdeSystem::new(
        "paper2d",
        2,
        vec![1.0, 2.0],
        |x, out| {
            let s = x[0] + x[1];
            out[0] = -s;
            out[1] = -2.0 * s;
        },
        |x, out| {
            let s = x[0] + x[1];
            out[0] = 2.0 * s;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = s;
        },
    )
    .expect("static system")
    .with_lipschitz(3.0 * 5f64.sqrt())
}

/// `dX = -lambda X dE`, `X(0) = 1`, solved by `exp(-lambda E(T))`.
pub fn builtin_exponential_decay(lambda: f64) -> SdeSystem {
    SdeSystem::new(
        "expdecay",
        1,
        vec![1.0],
        move |x, out| out[0] = -lambda * x[0],
        |_, out| out[0] = 0.0,
    )
    .expect("static system")
    .with_param("lambda", lambda)
    .with_lipschitz(lambda.abs())
    .with_oracle(move |e, _| vec![(-lambda * e).exp()])
}

/// Time-changed geometric Brownian motion `dX = mu X dE + sigma X dB(E)`,
/// `X(0) = 1`. Composing the classical solution with `E` gives
/// `X(T) = exp((mu - sigma^2 / 2) E(T) + sigma B(E(T)))`.
pub fn builtin_geometric(mu: f64, sigma: f64) -> SdeSystem {
    SdeSystem::new(
        "geometric",
        1,
        vec![1.0],
        move |x, out| out[0] = mu * x[0],
        move |x, out| out[0] = sigma * x[0],
    )
    .expect("static system")
    .with_param("mu", mu)
    .with_param("sigma", sigma)
    .with_lipschitz(mu.abs() + sigma.abs())
    .with_oracle(move |e, b| vec![((mu - 0.5 * sigma * sigma) * e + sigma * b[0]).exp()])
}

pub const BUILTIN_NAMES: [&str; 3] = ["paper2d", "expdecay", "geometric"];

/// Looks up a builtin by name. Unknown parameter keys are rejected.
pub fn builtin_by_name(name: &str, params: &BTreeMap<String, f64>) -> Result<SdeSystem> {
    let allowed: &[&str] = match name {
        "paper2d" => &[],
        "expdecay" => &["lambda"],
        "geometric" => &["mu", "sigma"],
        other => {
            return Err(Error::config(format!(
                "unknown system '{other}', expected one of {BUILTIN_NAMES:?}"
            )))
        }
    };
    if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::config(format!(
            "system '{name}' has no parameter '{bad}' (accepted: {allowed:?})"
        )));
    }
    let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
    Ok(match name {
        "paper2d" => builtin_paper_example(),
        "expdecay" => builtin_exponential_decay(get("lambda", 1.0)),
        _ => builtin_geometric(get("mu", 0.5), get("sigma", 0.5)),
    })
}
