//! Output artifact paths, atomic writes, and provenance metadata.
//!
//! Every output carries the run's config hash and seed: JSON artifacts embed
//! a `meta` object; CSV artifacts (whose headers are pinned) get a
//! `<file>.meta.json` sidecar instead.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;
use crate::error::CliError;

/// Provenance stamp for output artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn of(cfg: &ResolvedConfig) -> Self {
        Self {
            config_hash: cfg.config_hash.clone(),
            seed: cfg.seed,
        }
    }
}

/// Well-known artifact locations under the output directory.
pub struct Paths<'a> {
    out: &'a Path,
}

impl<'a> Paths<'a> {
    pub fn new(cfg: &'a ResolvedConfig) -> Self {
        Self { out: &cfg.out_dir }
    }

    pub fn cache_csv(&self) -> PathBuf {
        self.out.join("cache").join("prices.csv")
    }

    pub fn stats_csv(&self) -> PathBuf {
        self.out.join("stats").join("stats.csv")
    }

    pub fn covariance_csv(&self) -> PathBuf {
        self.out.join("stats").join("covariance.csv")
    }

    pub fn correlation_csv(&self) -> PathBuf {
        self.out.join("stats").join("correlation.csv")
    }

    pub fn frontier_csv(&self) -> PathBuf {
        self.out.join("frontier.csv")
    }

    pub fn portfolio_json(&self) -> PathBuf {
        self.out.join("portfolio.json")
    }

    pub fn checkpoint(&self, ticker: &str) -> PathBuf {
        self.out.join("models").join(format!("{ticker}.json"))
    }

    pub fn history_csv(&self, ticker: &str) -> PathBuf {
        self.out.join("models").join(format!("{ticker}_history.csv"))
    }

    pub fn predicted_csv(&self) -> PathBuf {
        self.out.join("predicted.csv")
    }

    pub fn backtest_json(&self) -> PathBuf {
        self.out.join("backtest.json")
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.out.join("summary.csv")
    }
}

/// Writes via a temp file in the target directory, then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Data(format!("cannot rename into {}: {e}", path.display())))?;
    Ok(())
}

/// Writes a CSV artifact plus its metadata sidecar.
pub fn write_csv_artifact(path: &Path, text: &str, meta: &Meta) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())?;
    let sidecar = sidecar_path(path);
    let meta_json = serde_json::to_string_pretty(meta)
        .map_err(|e| CliError::Data(format!("cannot serialize meta: {e}")))?;
    write_atomic(&sidecar, format!("{meta_json}\n").as_bytes())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes a JSON artifact (already carrying its embedded meta).
pub fn write_json_artifact<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("cannot serialize {}: {e}", path.display())))?;
    write_atomic(path, format!("{text}\n").as_bytes())
}

/// Reads a required upstream artifact, mapping absence to a data error
/// naming the producing command.
pub fn read_required(path: &Path, producer: &str) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::missing_artifact(path, producer));
    }
    fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(
            sidecar_path(Path::new("out/frontier.csv")),
            PathBuf::from("out/frontier.csv.meta.json")
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("file.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn missing_artifact_names_producer() {
        let err = read_required(Path::new("/nope/portfolio.json"), "optimize").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("portfolio.json"), "{msg}");
        assert!(msg.contains("portopt optimize"), "{msg}");
        assert_eq!(err.exit_code(), 3);
    }
}
