use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tcsde::analysis::{ConvergenceReport, REPORT_SCHEMA_VERSION};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `# key=value` comment lines that open every CSV/DAT file.
#[derive(Debug, Clone, Default)]
pub struct Header {
    lines: Vec<String>,
}

impl Header {
    pub fn new(command: &str) -> Self {
        Header {
            lines: vec![
                format!("tcsde {command}"),
                format!("tool_version={TOOL_VERSION}"),
                format!("schema_version={REPORT_SCHEMA_VERSION}"),
            ],
        }
    }

    pub fn with(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.lines.push(format!("{key}={value}"));
        self
    }

    pub fn write(&self, w: &mut impl Write) -> io::Result<()> {
        for line in &self.lines {
            writeln!(w, "# {line}")?;
        }
        Ok(())
    }
}

/// Writes to a file, or to stdout for `-` or no path.
pub fn open_sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    match path {
        Some(p) if p != Path::new("-") => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Ok(Box::new(BufWriter::new(File::create(p)?)))
        }
        _ => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

pub fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// The four study artifacts for a sweep of reports that share a system.
pub struct StudyFiles {
    pub written: Vec<PathBuf>,
}

pub fn write_study_outputs(
    dir: &Path,
    header: &Header,
    reports: &[ConvergenceReport],
) -> io::Result<StudyFiles> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    let doc = serde_json::json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "reports": reports,
    });
    let mut f = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut f, &doc)?;
    writeln!(f)?;
    f.flush()?;
    written.push(path);

    let path = dir.join("errors.csv");
    let mut f = BufWriter::new(File::create(&path)?);
    header.write(&mut f)?;
    writeln!(f, "alpha,dt,error,stderr")?;
    for r in reports {
        for e in &r.entries {
            writeln!(f, "{},{},{},{}", r.config.alpha, e.dt, e.error, e.std_error)?;
        }
    }
    f.flush()?;
    written.push(path);

    let path = dir.join("rates.csv");
    let mut f = BufWriter::new(File::create(&path)?);
    header.write(&mut f)?;
    writeln!(f, "alpha,theoretical,fitted,r2")?;
    for r in reports {
        writeln!(
            f,
            "{},{},{},{}",
            r.config.alpha, r.theoretical_rate, r.fitted_rate, r.r_squared
        )?;
    }
    f.flush()?;
    written.push(path);

    // One block per alpha, separated by two blank lines (gnuplot `index`).
    let path = dir.join("loglog.dat");
    let mut f = BufWriter::new(File::create(&path)?);
    header.write(&mut f)?;
    writeln!(f, "# columns: log2_dt log2_err fit")?;
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            writeln!(f, "\n")?;
        }
        writeln!(f, "# alpha={} drift={}", r.config.alpha, r.config.drift)?;
        for e in &r.entries {
            let x = e.dt.log2();
            writeln!(
                f,
                "{} {} {}",
                x,
                e.error.log2(),
                r.fit_intercept + r.fitted_rate * x
            )?;
        }
    }
    f.flush()?;
    written.push(path);

    Ok(StudyFiles { written })
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    io::copy(&mut f, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}
