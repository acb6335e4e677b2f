use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use tcsde::analysis::DEFAULT_LADDER;
use tcsde::sde::{builtin_by_name, builtin_paper_example};
use tcsde::subordinator::sample_path;
use tcsde::{
    build_fine_drivers, derive_stream, em_solve, em_terminal, run_convergence_study,
    verify_moment_bounds, ConvergenceConfig, ConvergenceReport, Profile, RealizationId, SdeSystem,
    StreamKey, SubordinatorSpec, Substream,
};

use crate::output::{
    join_floats, open_sink, sha256_file, write_study_outputs, Header, TOOL_VERSION,
};
use crate::{ConvergeArgs, ReproArgs, SimulateArgs, SolveArgs, VerifyMomentsArgs};

fn parse_params(raw: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in raw {
        let Some((k, v)) = item.split_once('=') else {
            bail!("parameter '{item}' is not of the form key=value");
        };
        let v: f64 = v
            .trim()
            .parse()
            .with_context(|| format!("parameter '{k}' has a non-numeric value"))?;
        if out.insert(k.trim().to_owned(), v).is_some() {
            bail!("parameter '{k}' given twice");
        }
    }
    Ok(out)
}

fn system_from(name: &str, raw: &[String]) -> Result<SdeSystem> {
    Ok(builtin_by_name(name, &parse_params(raw)?)?)
}

fn params_string(system: &SdeSystem) -> String {
    system
        .params()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Number of grid points `k h` in `[0, end]`, tolerating rounding at `end`.
fn grid_len(end: f64, h: f64) -> usize {
    (end / h + 1e-9).floor() as usize + 1
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = SubordinatorSpec::new(a.alpha, a.drift, a.delta)?;
    if !(a.horizon > 0.0 && a.horizon.is_finite()) {
        bail!("--horizon must be positive, got {}", a.horizon);
    }
    let h = a.grid_step.unwrap_or(a.delta);
    if !(h > 0.0 && h.is_finite()) {
        bail!("--grid-step must be positive, got {h}");
    }
    let mut stream = derive_stream(StreamKey::new(
        a.seed,
        a.realization,
        Substream::Subordinator,
    ));
    let path = sample_path(&spec, a.horizon, &mut stream)?;

    let header = Header::new("simulate")
        .with("alpha", a.alpha)
        .with("drift", a.drift)
        .with("delta", a.delta)
        .with("horizon", a.horizon)
        .with("seed", a.seed)
        .with("realization", a.realization)
        .with("grid_step", h)
        .with("output", if a.inverse { "inverse" } else { "path" })
        .with("out_of_theory", !spec.within_theory());
    let mut w = open_sink(a.out.as_deref())?;
    header.write(&mut w)?;
    if a.inverse {
        writeln!(w, "t,E_tilde")?;
        for k in 0..grid_len(a.horizon, h) {
            let t = (k as f64 * h).min(a.horizon);
            writeln!(w, "{t},{}", path.inverse_at(t)?)?;
        }
    } else {
        writeln!(w, "t,D")?;
        let values = path.values();
        let end = (values.len() - 1) as f64 * a.delta;
        for k in 0..grid_len(end, h) {
            let u = k as f64 * h;
            let i = ((u / a.delta + 1e-9).floor() as usize).min(values.len() - 1);
            writeln!(w, "{u},{}", values[i])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn solve(a: SolveArgs) -> Result<()> {
    let system = system_from(&a.system, &a.params)?;
    let delta = a.delta.unwrap_or(a.dt);
    let spec = SubordinatorSpec::new(a.alpha, a.drift, delta)?;
    let id = RealizationId {
        master_seed: a.seed,
        index: a.realization,
    };
    let drivers = build_fine_drivers(&spec, a.horizon, a.dt, system.m(), id)?;

    let mut header = Header::new("solve")
        .with("system", system.name())
        .with("params", params_string(&system))
        .with("initial_state", join_floats(system.initial_state()))
        .with("alpha", a.alpha)
        .with("drift", a.drift)
        .with("dt", a.dt)
        .with("delta", delta)
        .with("T", a.horizon)
        .with("seed", a.seed)
        .with("realization", a.realization)
        .with("keep_path", a.keep_path)
        .with("out_of_theory", !spec.within_theory())
        .with("E_T", drivers.e_terminal());
    if let Some(x) = system.oracle(drivers.e_terminal(), drivers.b_terminal()) {
        header = header.with("oracle_X_T", join_floats(&x));
    }

    let mut w = open_sink(a.out.as_deref())?;
    header.write(&mut w)?;
    let columns: Vec<String> = (1..=system.d()).map(|i| format!("X_{i}")).collect();
    writeln!(w, "n,t,E,{}", columns.join(","))?;
    let n_last = drivers.steps();
    if a.keep_path {
        let traj = em_solve(&system, &drivers)?;
        for n in 0..=n_last {
            writeln!(
                w,
                "{n},{},{},{}",
                drivers.t(n),
                drivers.e_values()[n],
                join_floats(traj.state(n))
            )?;
        }
    } else {
        let x = em_terminal(&system, &drivers)?;
        writeln!(
            w,
            "{n_last},{},{},{}",
            drivers.t(n_last),
            drivers.e_terminal(),
            join_floats(&x)
        )?;
    }
    w.flush()?;

    if let Some(path) = &a.dump_drivers {
        let mut w = open_sink(Some(path))?;
        header.write(&mut w)?;
        let columns: Vec<String> = (1..=system.m()).map(|j| format!("dB_{j}")).collect();
        writeln!(w, "n,t,E,dE,{}", columns.join(","))?;
        for n in 0..n_last {
            writeln!(
                w,
                "{n},{},{},{},{}",
                drivers.t(n),
                drivers.e_values()[n],
                drivers.delta_e()[n],
                join_floats(drivers.delta_b(n))
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

struct StudyPlan {
    system: SdeSystem,
    profile: Profile,
    drift: f64,
    dt_ref: Option<f64>,
    samples: Option<usize>,
    ladder: Vec<usize>,
    seed: u64,
    allow_out_of_theory: bool,
}

impl StudyPlan {
    fn config(&self, alpha: f64) -> Result<ConvergenceConfig> {
        let mut cfg = ConvergenceConfig::new(self.system.clone(), alpha, self.drift, self.profile)?
            .with_ladder(self.ladder.clone())
            .with_seed(self.seed);
        if let Some(dt) = self.dt_ref {
            cfg = cfg.with_dt_ref(dt)?;
        }
        if let Some(m) = self.samples {
            cfg = cfg.with_samples(m);
        }
        cfg.allow_out_of_theory = self.allow_out_of_theory;
        Ok(cfg)
    }

    fn header(&self, command: &str, alphas: &[f64], first: &ConvergenceConfig) -> Header {
        let outside: Vec<f64> = alphas
            .iter()
            .copied()
            .filter(|&a| !(a > 0.5 && a < 1.0))
            .collect();
        Header::new(command)
            .with("system", self.system.name())
            .with("params", params_string(&self.system))
            .with("initial_state", join_floats(self.system.initial_state()))
            .with("alphas", join_floats(alphas))
            .with("drift", self.drift)
            .with("profile", self.profile.name())
            .with("horizon", first.horizon)
            .with("dt_ref", first.dt_ref)
            .with("inner_step", first.spec.inner_step)
            .with("samples", first.samples)
            .with(
                "ladder",
                first
                    .ladder
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            )
            .with("seed", self.seed)
            .with("out_of_theory_alphas", join_floats(&outside))
    }

    /// Validates every configuration first, then runs them in order.
    fn run(&self, label: &str, alphas: &[f64]) -> Result<Vec<ConvergenceReport>> {
        let configs = alphas
            .iter()
            .map(|&a| {
                let cfg = self.config(a)?;
                cfg.validate()?;
                Ok(cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut reports = Vec::with_capacity(configs.len());
        for (i, cfg) in configs.iter().enumerate() {
            let start = Instant::now();
            let r = run_convergence_study(cfg).with_context(|| {
                format!("study alpha={} drift={}", cfg.spec.alpha, cfg.spec.drift)
            })?;
            eprintln!(
                "[{label} {}/{}] alpha={} drift={} fitted={:.4} theoretical={:.4} r2={:.4} ({:.1}s){}",
                i + 1,
                configs.len(),
                cfg.spec.alpha,
                cfg.spec.drift,
                r.fitted_rate,
                r.theoretical_rate,
                r.r_squared,
                start.elapsed().as_secs_f64(),
                if r.config.out_of_theory { " [out of theory]" } else { "" }
            );
            reports.push(r);
        }
        Ok(reports)
    }
}

pub fn converge(a: ConvergeArgs) -> Result<()> {
    let plan = StudyPlan {
        system: system_from(&a.system, &a.params)?,
        profile: a.profile.into(),
        drift: a.drift,
        dt_ref: a.dt_ref,
        samples: a.samples,
        ladder: a.ladder,
        seed: a.seed,
        allow_out_of_theory: a.allow_out_of_theory,
    };
    let reports = plan.run("converge", &a.alpha)?;
    let header = plan.header("converge", &a.alpha, &plan.config(a.alpha[0])?);
    let files = write_study_outputs(&a.out_dir, &header, &reports)
        .with_context(|| format!("writing to {}", a.out_dir.display()))?;
    for f in files.written {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn parse_grid_row(raw: &str) -> Result<(f64, f64, u32)> {
    let parts: Vec<&str> = raw.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        bail!("grid row '{raw}' is not of the form a:b:n");
    };
    let a: f64 = a
        .trim()
        .parse()
        .with_context(|| format!("grid row '{raw}'"))?;
    let b: f64 = b
        .trim()
        .parse()
        .with_context(|| format!("grid row '{raw}'"))?;
    let n: u32 = n
        .trim()
        .parse()
        .with_context(|| format!("grid row '{raw}'"))?;
    Ok((a, b, n))
}

pub fn verify_moments(a: VerifyMomentsArgs) -> Result<()> {
    let grid: Vec<(f64, f64, u32)> = if a.grid.is_empty() {
        vec![(0.5, 1.0, 1), (0.5, 1.0, 2), (0.5, 1.0, 4)]
    } else {
        a.grid
            .iter()
            .map(|g| parse_grid_row(g))
            .collect::<Result<_>>()?
    };
    if a.paths < 2 {
        bail!("--paths must be at least 2");
    }
    let specs = a
        .alpha
        .iter()
        .map(|&alpha| SubordinatorSpec::new(alpha, 0.0, a.delta))
        .collect::<tcsde::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for spec in &specs {
        for c in verify_moment_bounds(spec, &grid, a.paths, a.seed)? {
            rows.push((spec.alpha, c));
        }
    }
    let header = Header::new("verify-moments")
        .with("alphas", join_floats(&a.alpha))
        .with(
            "grid",
            grid.iter()
                .map(|(x, y, n)| format!("{x}:{y}:{n}"))
                .collect::<Vec<_>>()
                .join(","),
        )
        .with("paths", a.paths)
        .with("delta", a.delta)
        .with("seed", a.seed);
    let mut w = open_sink(a.out.as_deref())?;
    header.write(&mut w)?;
    writeln!(w, "alpha,a,b,n,estimate,stderr,lower,upper,pass")?;
    for (alpha, c) in &rows {
        writeln!(
            w,
            "{alpha},{},{},{},{},{},{},{},{}",
            c.t_a, c.t_b, c.order, c.estimate, c.std_error, c.lower, c.upper, c.pass
        )?;
    }
    w.flush()?;
    let passed = rows.iter().filter(|(_, c)| c.pass).count();
    eprintln!("{passed}/{} rows within bounds", rows.len());
    Ok(())
}

pub const REPRO_ALPHAS: [f64; 7] = [0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9];
pub const REPRO_DRIFT_ALPHAS: [f64; 2] = [0.6, 0.8];

#[derive(Serialize)]
struct ManifestStudy {
    directory: &'static str,
    drift: f64,
    alphas: Vec<f64>,
}

#[derive(Serialize)]
struct ManifestConfig {
    profile: &'static str,
    system: String,
    horizon: f64,
    dt_ref: f64,
    samples: usize,
    ladder: Vec<usize>,
    studies: Vec<ManifestStudy>,
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    schema_version: u32,
    config: ManifestConfig,
    master_seed: u64,
    duration_secs: f64,
    files: Vec<ManifestFile>,
}

pub fn repro(a: ReproArgs) -> Result<()> {
    let start = Instant::now();
    let profile: Profile = a.profile.into();
    let plan = |drift: f64| StudyPlan {
        system: builtin_paper_example(),
        profile,
        drift,
        dt_ref: a.dt_ref,
        samples: a.samples,
        ladder: DEFAULT_LADDER.to_vec(),
        seed: a.seed,
        allow_out_of_theory: false,
    };
    let studies = [
        ("table", plan(0.0), &REPRO_ALPHAS[..]),
        ("drift", plan(1.0), &REPRO_DRIFT_ALPHAS[..]),
    ];
    let first = studies[0].1.config(REPRO_ALPHAS[0])?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let staging = a.out_dir.join(".staging");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let staged = (|| -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for (dir, plan, alphas) in &studies {
            let reports = plan.run(dir, alphas)?;
            let header = plan.header("repro", alphas, &plan.config(alphas[0])?);
            files.extend(write_study_outputs(&staging.join(dir), &header, &reports)?.written);
        }
        Ok(files)
    })();
    let staged = match staged {
        Ok(f) => f,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };

    for (dir, _, _) in &studies {
        let target = a.out_dir.join(dir);
        if target.exists() {
            fs::remove_dir_all(&target)?;
        }
        fs::rename(staging.join(dir), &target)?;
    }
    fs::remove_dir_all(&staging)?;

    let mut files = Vec::new();
    for path in &staged {
        let rel = path
            .strip_prefix(&staging)
            .expect("staged under staging dir");
        files.push(ManifestFile {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(&a.out_dir.join(rel))?,
        });
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION,
        schema_version: tcsde::analysis::REPORT_SCHEMA_VERSION,
        config: ManifestConfig {
            profile: profile.name(),
            system: first.system.name().to_owned(),
            horizon: first.horizon,
            dt_ref: first.dt_ref,
            samples: first.samples,
            ladder: first.ladder.clone(),
            studies: studies
                .iter()
                .map(|(dir, plan, alphas)| ManifestStudy {
                    directory: dir,
                    drift: plan.drift,
                    alphas: alphas.to_vec(),
                })
                .collect(),
        },
        master_seed: a.seed,
        duration_secs: start.elapsed().as_secs_f64(),
        files,
    };
    write_manifest(&a.out_dir.join("manifest.json"), &manifest)?;
    eprintln!("wrote {}", a.out_dir.join("manifest.json").display());
    Ok(())
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
