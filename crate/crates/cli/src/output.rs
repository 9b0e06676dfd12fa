//! Fixed output dialects: `#`-commented CSV and JSON with a metadata object.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const TOOL: &str = "icpm";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub rtol: f64,
    pub atol: f64,
    pub event_tol: f64,
    pub quad_tol: f64,
}

impl Metadata {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_sha256: cfg.hash(),
            rtol: cfg.integrator.tolerances.rtol,
            atol: cfg.integrator.tolerances.atol,
            event_tol: cfg.integrator.event_tol,
            quad_tol: cfg.design.quad_tol,
        }
    }

    fn comment_block(&self, extra: &[(String, String)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tool: {} {}", self.tool, self.version);
        let _ = writeln!(s, "# config_sha256: {}", self.config_sha256);
        let _ = writeln!(s, "# rtol: {}", num(self.rtol));
        let _ = writeln!(s, "# atol: {}", num(self.atol));
        let _ = writeln!(s, "# event_tol: {}", num(self.event_tol));
        let _ = writeln!(s, "# quad_tol: {}", num(self.quad_tol));
        for (k, v) in extra {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s
    }
}

/// A float with 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A CSV table built in memory and written in one go.
#[derive(Debug, Clone)]
pub struct CsvTable {
    columns: Vec<String>,
    extra: Vec<(String, String)>,
    body: String,
}

impl CsvTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, extra: Vec::new(), body: String::new() }
    }

    /// Adds a `# key: value` line to the header block.
    pub fn note(&mut self, key: &str, value: impl Into<String>) {
        self.extra.push((key.into(), value.into()));
    }

    pub fn push(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    pub fn rows(&self) -> usize {
        self.body.lines().count()
    }

    pub fn render(&self, meta: &Metadata) -> String {
        let mut s = meta.comment_block(&self.extra);
        s.push_str(&self.columns.join(","));
        s.push('\n');
        s.push_str(&self.body);
        s
    }
}

#[derive(Serialize)]
struct WithMetadata<'a, T: Serialize> {
    metadata: &'a Metadata,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with `metadata` as the first key.
pub fn render_json<T: Serialize>(meta: &Metadata, body: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(&WithMetadata { metadata: meta, body })
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    s.push('\n');
    Ok(s)
}

/// Writes every `(name, content)` pair into `dir`, creating it if needed.
pub fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (name, content) in files {
        fs::write(dir.join(name), content)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_keep_seventeen_digits() {
        let s = num(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(num(f64::NAN), "NaN");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn csv_has_comment_header_and_lf() {
        let meta = Metadata::from_config(&ExperimentConfig::default());
        let mut t = CsvTable::new(vec!["a".into(), "b".into()]);
        t.note("model", "cart-pendulum");
        t.push(&[num(1.0), num(2.0)]);
        let s = t.render(&meta);
        assert!(!s.contains('\r'));
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[..7].iter().all(|l| l.starts_with('#')));
        assert_eq!(lines[6], "# model: cart-pendulum");
        assert_eq!(lines[7], "a,b");
        assert_eq!(t.rows(), 1);
    }

    #[test]
    fn json_leads_with_metadata() {
        let meta = Metadata::from_config(&ExperimentConfig::default());
        #[derive(Serialize)]
        struct Body {
            x: f64,
        }
        let s = render_json(&meta, &Body { x: 1.5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["metadata"]["tool"], "icpm");
        assert_eq!(v["x"], 1.5);
        assert!(s.trim_start().starts_with("{\n  \"metadata\""));
    }
}
