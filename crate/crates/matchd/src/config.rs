//! Service configuration, read from a JSON file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Environment variable whose value replaces the configured file path.
pub const CONFIG_ENV: &str = "TM_CONFIG";
pub const DEFAULT_CONFIG_PATH: &str = "matchd.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub tokenizer: PathBuf,
    pub checkpoint: PathBuf,
    pub index: PathBuf,
    pub documents: PathBuf,
    #[serde(default = "default_k")]
    pub default_k: usize,
    #[serde(default = "default_limit")]
    pub max_request_bytes: usize,
    /// Allowed browser origin; any origin when absent.
    #[serde(default)]
    pub cors_origin: Option<String>,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_k() -> usize {
    10
}

fn default_limit() -> usize {
    1 << 20
}

impl ServiceConfig {
    pub fn new(tokenizer: PathBuf, checkpoint: PathBuf, index: PathBuf, documents: PathBuf) -> Self {
        Self {
            listen: default_listen(),
            tokenizer,
            checkpoint,
            index,
            documents,
            default_k: default_k(),
            max_request_bytes: default_limit(),
            cors_origin: None,
        }
    }

    /// Relative artifact paths are resolved against the config file's
    /// directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut config: Self = serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.tokenizer, &mut config.checkpoint, &mut config.index, &mut config.documents] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.default_k >= 1, "default_k must be at least 1");
        anyhow::ensure!(self.max_request_bytes >= 1, "max_request_bytes must be positive");
        for (name, p) in [("tokenizer", &self.tokenizer), ("checkpoint", &self.checkpoint), ("index", &self.index), ("documents", &self.documents)] {
            anyhow::ensure!(p.is_file(), "{name} path {} does not exist", p.display());
        }
        Ok(())
    }
}

/// `TM_CONFIG` when set, else the path given on the command line, else
/// `matchd.json`.
pub fn resolve_config_path(cli: Option<&Path>) -> PathBuf {
    match std::env::var_os(CONFIG_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => cli.map_or_else(|| PathBuf::from(DEFAULT_CONFIG_PATH), Path::to_path_buf),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["tok.json", "model.tmck", "docs.tmix", "docs.jsonl"] {
            std::fs::write(dir.path().join(f), b"x").unwrap();
        }
        let path = dir.path().join("matchd.json");
        std::fs::write(&path, r#"{"tokenizer":"tok.json","checkpoint":"model.tmck","index":"docs.tmix","documents":"docs.jsonl"}"#).unwrap();
        let c = ServiceConfig::load(&path).unwrap();
        assert_eq!(c.default_k, 10);
        assert_eq!(c.max_request_bytes, 1 << 20);
        assert_eq!(c.index, dir.path().join("docs.tmix"));

        std::fs::write(&path, r#"{"tokenizer":"tok.json","checkpoint":"missing","index":"docs.tmix","documents":"docs.jsonl"}"#).unwrap();
        assert!(ServiceConfig::load(&path).is_err());
        std::fs::write(&path, r#"{"tokenizer":"tok.json","checkpoint":"model.tmck","index":"docs.tmix","documents":"docs.jsonl","default_k":0}"#).unwrap();
        assert!(ServiceConfig::load(&path).is_err());
    }
}
