//! `key=value` run manifests written next to every output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::RunConfig;
use crate::error::{io_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<PathBuf>,
    /// Extra `key=value` lines, e.g. per-system settings.
    pub extra: Vec<(String, String)>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            outputs: Vec::new(),
            extra: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("command={}\n", self.command));
        s.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        s.push_str(&format!("seed={}\n", self.config.seed));
        s.push_str(&format!("started_unix={:.3}\n", self.started_unix));
        s.push_str(&format!("finished_unix={:.3}\n", self.finished_unix));
        for (i, p) in self.outputs.iter().enumerate() {
            s.push_str(&format!("output.{i}={}\n", p.display()));
        }
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        for (k, v) in self.config.entries() {
            s.push_str(&format!("config.{k}={v}\n"));
        }
        s
    }

    /// Stamps the finish time and writes the manifest to `path`.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(self.render().as_bytes()).map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_reloads_as_config() {
        let cfg = RunConfig {
            seed: 11,
            agents: 5,
            ..RunConfig::default()
        };
        let mut m = RunManifest::start("network", &cfg);
        m.outputs.push("out/metrics.csv".into());
        m.extra.push(("decentralized.recovery".into(), "keep-latest".into()));
        let text = m.render();
        assert!(text.starts_with("command=network\n"));
        assert!(text.contains("\nseed=11\n"));
        let mut back = RunConfig::default();
        back.apply_text(&text, "manifest").unwrap();
        assert_eq!(back, cfg);
    }
}
