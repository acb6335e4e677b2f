//! Coupled drivers `(E(t_n), dE_n, dB_n)` on the outer equidistant grid.
//!
//! One realization samples a single subordinator path and a single sequence
//! of Brownian normals at the finest resolution. Coarser resolutions are
//! obtained by subsampling the cumulative values, so every resolution sees the
//! same `(E, B o E)` path. This is what makes pathwise strong errors
//! meaningful.

use crate::error::{Error, Result};
use crate::rng::{derive_stream, StreamKey, Substream};
use crate::subordinator::{sample_path, SubordinatorSpec};

/// Identifies the realization a set of drivers was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RealizationId {
    pub master_seed: u64,
    pub index: u64,
}

/// Driver increments for one realization at one resolution.
///
/// Both `E` and `B o E` are kept in cumulative form next to their
/// increments. Coarsening subsamples the cumulative arrays and differences
/// them, so chained coarsenings agree bit for bit with a single one.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChangeDrivers {
    dt: f64,
    steps: usize,
    dims: usize,
    e_values: Vec<f64>,
    delta_e: Vec<f64>,
    /// `(steps + 1) x dims`, row-major.
    b_values: Vec<f64>,
    /// `steps x dims`, row-major.
    delta_b: Vec<f64>,
    origin: Option<RealizationId>,
}

/// Number of outer steps `horizon / dt`, which must be an integer.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!(
            "need positive horizon and step, got T = {horizon}, dt = {dt}"
        )));
    }
    let ratio = horizon / dt;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::config(format!(
            "T / dt = {ratio} is not a positive integer"
        )));
    }
    Ok(n as usize)
}

impl TimeChangeDrivers {
    /// Assembles drivers from an inverse-subordinator grid and raw normals.
    ///
    /// `e_values` has `steps + 1` entries; `normals` has `steps * dims`
    /// entries and is scaled by `sqrt(dE_n)` step by step.
    pub fn from_parts(
        dt: f64,
        e_values: Vec<f64>,
        normals: &[f64],
        dims: usize,
        origin: Option<RealizationId>,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::config("Brownian dimension must be at least 1"));
        }
        if e_values.len() < 2 || e_values[0] != 0.0 {
            return Err(Error::config(
                "E grid must start at 0 and have at least one step",
            ));
        }
        let steps = e_values.len() - 1;
        if normals.len() != steps * dims {
            return Err(Error::config(format!(
                "expected {} normals, got {}",
                steps * dims,
                normals.len()
            )));
        }
        let delta_e: Vec<f64> = e_values.windows(2).map(|w| w[1] - w[0]).collect();
        if delta_e.iter().any(|&de| de.is_nan() || de < 0.0) {
            return Err(Error::config("E grid must be non-decreasing"));
        }
        let mut delta_b = Vec::with_capacity(steps * dims);
        let mut b_values = Vec::with_capacity((steps + 1) * dims);
        b_values.extend(std::iter::repeat_n(0.0, dims));
        for (n, &de) in delta_e.iter().enumerate() {
            let scale = de.sqrt();
            for k in 0..dims {
                let db = scale * normals[n * dims + k];
                delta_b.push(db);
                let prev = b_values[n * dims + k];
                b_values.push(prev + db);
            }
        }
        Ok(TimeChangeDrivers {
            dt,
            steps,
            dims,
            e_values,
            delta_e,
            b_values,
            delta_b,
            origin,
        })
    }

    /// Assembles drivers from ready-made increments, accumulating left to
    /// right. `delta_b` is `steps x dims`, row-major.
    pub fn from_increments(
        dt: f64,
        delta_e: Vec<f64>,
        delta_b: Vec<f64>,
        dims: usize,
        origin: Option<RealizationId>,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::config("Brownian dimension must be at least 1"));
        }
        let steps = delta_e.len();
        if steps == 0 || delta_b.len() != steps * dims {
            return Err(Error::config("increment arrays are empty or mismatched"));
        }
        if delta_e.iter().any(|&de| de.is_nan() || de < 0.0) {
            return Err(Error::config("E increments must be non-negative"));
        }
        let mut e_values = Vec::with_capacity(steps + 1);
        e_values.push(0.0);
        for &de in &delta_e {
            e_values.push(e_values.last().unwrap() + de);
        }
        let mut b_values = vec![0.0; dims];
        for n in 0..steps {
            for k in 0..dims {
                b_values.push(b_values[n * dims + k] + delta_b[n * dims + k]);
            }
        }
        Ok(TimeChangeDrivers {
            dt,
            steps,
            dims,
            e_values,
            delta_e,
            b_values,
            delta_b,
            origin,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn origin(&self) -> Option<RealizationId> {
        self.origin
    }

    /// `t_n = n * dt`.
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn e_values(&self) -> &[f64] {
        &self.e_values
    }

    pub fn delta_e(&self) -> &[f64] {
        &self.delta_e
    }

    /// `dB_n` as an `m`-vector.
    pub fn delta_b(&self, n: usize) -> &[f64] {
        &self.delta_b[n * self.dims..(n + 1) * self.dims]
    }

    /// `B(E(t_n))` as an `m`-vector.
    pub fn b_value(&self, n: usize) -> &[f64] {
        &self.b_values[n * self.dims..(n + 1) * self.dims]
    }

    /// `E(T)`.
    pub fn e_terminal(&self) -> f64 {
        self.e_values[self.steps]
    }

    /// `B(E(T))`.
    pub fn b_terminal(&self) -> &[f64] {
        self.b_value(self.steps)
    }

    /// Block sums over `factor` consecutive steps. `factor = 1` is the
    /// identity.
    pub fn coarsen(&self, factor: usize) -> Result<TimeChangeDrivers> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::config(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.steps
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let steps = self.steps / factor;
        let dims = self.dims;
        let e_values: Vec<f64> = self.e_values.iter().step_by(factor).copied().collect();
        let delta_e: Vec<f64> = e_values.windows(2).map(|w| w[1] - w[0]).collect();
        let mut b_values = Vec::with_capacity((steps + 1) * dims);
        for k in 0..=steps {
            b_values.extend_from_slice(self.b_value(k * factor));
        }
        let mut delta_b = Vec::with_capacity(steps * dims);
        for k in 0..steps {
            for j in 0..dims {
                delta_b.push(b_values[(k + 1) * dims + j] - b_values[k * dims + j]);
            }
        }
        Ok(TimeChangeDrivers {
            dt: self.dt * factor as f64,
            steps,
            dims,
            e_values,
            delta_e,
            b_values,
            delta_b,
            origin: self.origin,
        })
    }
}

/// Samples the drivers of realization `id` at resolution `dt_fine`.
///
/// The subordinator is sampled with its own inner step, `E~` is evaluated
/// on `t_n = n * dt_fine`, and `dB_n = sqrt(dE_n) * xi_n`. The `m` normals of
/// step `n` are always drawn, even when `dE_n = 0`, so the position of the
/// Brownian stream depends on `n` alone.
pub fn build_fine_drivers(
    spec: &SubordinatorSpec,
    horizon: f64,
    dt_fine: f64,
    dims: usize,
    id: RealizationId,
) -> Result<TimeChangeDrivers> {
    let steps = step_count(horizon, dt_fine)?;
    if dims == 0 {
        return Err(Error::config("Brownian dimension must be at least 1"));
    }
    let mut sub_stream = derive_stream(StreamKey::new(
        id.master_seed,
        id.index,
        Substream::Subordinator,
    ));
    let path = sample_path(spec, horizon, &mut sub_stream)?;
    let e_values: Vec<f64> = (0..=steps)
        .map(|n| path.inverse_unchecked((n as f64 * dt_fine).min(horizon)))
        .collect();

    let mut bm_stream = derive_stream(StreamKey::new(
        id.master_seed,
        id.index,
        Substream::Brownian,
    ));
    let normals: Vec<f64> = (0..steps * dims)
        .map(|_| bm_stream.standard_normal())
        .collect();
    TimeChangeDrivers::from_parts(dt_fine, e_values, &normals, dims, Some(id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(index: u64) -> RealizationId {
        RealizationId {
            master_seed: 17,
            index,
        }
    }

    fn drivers(alpha: f64, index: u64) -> TimeChangeDrivers {
        let dt = 1.0 / 256.0;
        let spec = SubordinatorSpec::new(alpha, 0.0, dt).unwrap();
        build_fine_drivers(&spec, 1.0, dt, 2, id(index)).unwrap()
    }

    #[test]
    fn step_count_checks_divisibility() {
        assert_eq!(step_count(1.0, 0.25).unwrap(), 4);
        assert_eq!(step_count(1.0, 1.0 / 32768.0).unwrap(), 32768);
        assert!(step_count(1.0, 0.3).is_err());
        assert!(step_count(1.0, 2.0).is_err());
        assert!(step_count(0.0, 0.1).is_err());
    }

    #[test]
    fn pure_drift_drivers() {
        let dt = 1.0 / 128.0;
        let spec = SubordinatorSpec::drift_only(0.7, 1.0, dt).unwrap();
        let d = build_fine_drivers(&spec, 1.0, dt, 1, id(0)).unwrap();
        assert!(d.delta_e().iter().all(|&de| de == dt));
        assert_eq!(d.e_terminal(), 1.0);
    }

    #[test]
    fn invariants_hold() {
        for i in 0..10 {
            let d = drivers(0.6, i);
            assert_eq!(d.e_values()[0], 0.0);
            assert!(d.delta_e().iter().all(|&de| de >= 0.0));
            let total: f64 = d.delta_e().iter().sum();
            assert_eq!(total, d.e_terminal());
            for n in 0..d.steps() {
                if d.delta_e()[n] == 0.0 {
                    assert!(d.delta_b(n).iter().all(|&x| x == 0.0));
                }
            }
            assert_eq!(d.origin(), Some(id(i)));
        }
    }

    #[test]
    fn coarse_values_are_subsampled() {
        let d = drivers(0.7, 3);
        let c = d.coarsen(8).unwrap();
        assert_eq!(c.steps(), 32);
        assert_eq!(c.dt(), 8.0 / 256.0);
        for k in 0..=c.steps() {
            assert_eq!(c.e_values()[k], d.e_values()[8 * k]);
            assert_eq!(c.b_value(k), d.b_value(8 * k));
        }
        assert_eq!(
            c.delta_e().iter().sum::<f64>(),
            d.delta_e().iter().sum::<f64>()
        );
    }

    #[test]
    fn coarse_increments_are_block_sums() {
        let d = drivers(0.8, 4);
        let c = d.coarsen(4).unwrap();
        for k in 0..c.steps() {
            let de: f64 = d.delta_e()[4 * k..4 * k + 4].iter().sum();
            assert_eq!(c.delta_e()[k], de);
            for j in 0..2 {
                let db: f64 = (4 * k..4 * k + 4).map(|n| d.delta_b(n)[j]).sum();
                assert!((c.delta_b(k)[j] - db).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coarsening_composes() {
        let d = drivers(0.65, 5);
        assert_eq!(
            d.coarsen(2).unwrap().coarsen(2).unwrap(),
            d.coarsen(4).unwrap()
        );
        assert_eq!(
            d.coarsen(4).unwrap().coarsen(8).unwrap(),
            d.coarsen(32).unwrap()
        );
        assert_eq!(d.coarsen(1).unwrap(), d);
    }

    #[test]
    fn coarsen_rejects_bad_factors() {
        let d = drivers(0.65, 6);
        assert!(d.coarsen(0).is_err());
        assert!(d.coarsen(3).is_err());
        assert!(d.coarsen(512).is_err());
    }

    #[test]
    fn brownian_normals_do_not_depend_on_alpha() {
        // Same seed, different clocks: where both have dE > 0 the underlying
        // normals are the same, so dB / sqrt(dE) agrees.
        let a = drivers(0.6, 7);
        let b = drivers(0.9, 7);
        let mut compared = 0;
        for n in 0..a.steps() {
            let (ea, eb) = (a.delta_e()[n], b.delta_e()[n]);
            if ea > 0.0 && eb > 0.0 {
                for j in 0..2 {
                    let xa = a.delta_b(n)[j] / ea.sqrt();
                    let xb = b.delta_b(n)[j] / eb.sqrt();
                    assert!((xa - xb).abs() < 1e-12);
                }
                compared += 1;
            }
        }
        assert!(compared > 0);
    }

    #[test]
    fn from_parts_validates() {
        assert!(TimeChangeDrivers::from_parts(0.5, vec![0.0, 0.5], &[1.0], 0, None).is_err());
        assert!(TimeChangeDrivers::from_parts(0.5, vec![0.1, 0.5], &[1.0], 1, None).is_err());
        assert!(
            TimeChangeDrivers::from_parts(0.5, vec![0.0, 0.5, 0.4], &[1.0, 1.0], 1, None).is_err()
        );
        assert!(TimeChangeDrivers::from_parts(0.5, vec![0.0, 0.5], &[1.0, 2.0], 1, None).is_err());
        let d = TimeChangeDrivers::from_parts(0.5, vec![0.0, 0.25, 0.25], &[2.0, 3.0], 1, None)
            .unwrap();
        assert_eq!(d.delta_b(0), &[1.0]);
        assert_eq!(d.delta_b(1), &[0.0]);
        assert_eq!(d.b_terminal(), &[1.0]);
    }
}
