//! Artifact files: CSV tables with a provenance header and JSON sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, RunConfig, VERSION};

/// Rows of string cells under named columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip text of a float, in exponent form outside
/// `[1e-4, 1e6)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e6).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// [`num`], or an empty cell for `None`.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Every file a command produces passes through one writer, which stamps the
/// tool version and configuration hash.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    config_hash: String,
    written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    artifact: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: &'a str,
    config: &'a RunConfig,
    files: Vec<String>,
    summary: &'a T,
}

impl ArtifactWriter {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out).map_err(|source| CliError::Output {
            path: cfg.out.clone(),
            source,
        })?;
        Ok(Self {
            dir: cfg.out.clone(),
            config_hash: cfg.hash(),
            written: Vec::new(),
        })
    }

    pub fn header(&self) -> String {
        format!("# hyqa {VERSION} config={}\n", self.config_hash)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Write `<name>.csv`.
    pub fn table(&mut self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        let mut buf = self.header().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let io = |e: csv::Error| CliError::Output {
                path: self.dir.join(format!("{name}.csv")),
                source: std::io::Error::other(e),
            };
            w.write_record(&table.columns).map_err(io)?;
            for row in &table.rows {
                w.write_record(row).map_err(io)?;
            }
            w.flush().map_err(|source| CliError::Output {
                path: self.dir.join(format!("{name}.csv")),
                source,
            })?;
        }
        self.put(&format!("{name}.csv"), &buf)
    }

    /// Write the `<command>.json` sidecar listing every file written so far.
    pub fn sidecar<T: Serialize>(&mut self, command: &str, cfg: &RunConfig, summary: &T) -> Result<PathBuf, CliError> {
        let files = self
            .written
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect();
        let doc = Sidecar {
            artifact: "hyqa",
            version: VERSION,
            command,
            config_hash: &self.config_hash,
            config: &RunConfig {
                out: PathBuf::new(),
                jobs: None,
                ..cfg.clone()
            },
            files,
            summary,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Output {
            path: self.dir.join(format!("{command}.json")),
            source: std::io::Error::other(e),
        })?;
        text.push('\n');
        self.put(&format!("{command}.json"), text.as_bytes())
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_carries_header_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let mut t = Table::new(["s", "x"]);
        t.push(vec![num(0.5), num(1.0 / 3.0)]);
        let mut w = ArtifactWriter::new(&cfg).unwrap();
        let p = w.table("demo", &t).unwrap();
        let first = fs::read_to_string(&p).unwrap();
        assert!(first.starts_with(&format!("# hyqa {VERSION} config={}\n", cfg.hash())));
        assert!(first.ends_with("s,x\n0.5,0.3333333333333333\n"));
        assert_eq!(num(1.5e-9), "1.5e-9");
        assert_eq!(num(-2.5e7), "-2.5e7");
        assert_eq!(num(1.5e-9).parse::<f64>().unwrap(), 1.5e-9);
        w.sidecar("demo", &cfg, &serde_json::json!({"n": 1})).unwrap();
        let mut again = ArtifactWriter::new(&cfg).unwrap();
        again.table("demo", &t).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), first);
        let side: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("demo.json")).unwrap()).unwrap();
        assert_eq!(side["files"], serde_json::json!(["demo.csv"]));
        assert_eq!(side["config_hash"], cfg.hash());
    }
}
