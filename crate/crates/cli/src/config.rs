//! Resolved run configuration. Built-in defaults are overridden by a
//! `key = value` file, which is overridden by command-line flags. A run
//! manifest is itself a valid config file: its `config.` keys are applied
//! and the metadata keys are ignored.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fusegp_core::agent::{LearnConfig, StreamLength};
use fusegp_core::fusion::LossRecovery;
use fusegp_core::netsim::{validate_loss_rate, AgentTemplate, SimConfig, TopologyKind};
use fusegp_core::synthetic::SyntheticSpec;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Dataset directory; defaults to `out`.
    pub data: Option<PathBuf>,
    /// Worker threads for multi-seed commands; 0 picks the core count.
    pub threads: usize,

    pub input_dim: usize,
    pub blocks_per_stream: usize,
    pub block_size: usize,
    pub test_size: usize,
    pub signal_scale: f64,
    /// Observation noise of the generated data.
    pub data_noise_std: f64,
    pub jitter: f64,

    pub vocab_size: usize,
    pub bank_size: usize,
    /// Standardized dimension; defaults to `input_dim`.
    pub std_dim: Option<usize>,
    /// Noise std assumed by the agents.
    pub noise_std: f64,
    pub shared_bank: bool,
    pub learning_rate: f64,
    pub rate_decay: f64,
    pub grad_samples: usize,
    pub hyperlearning: bool,
    pub hyper_period: usize,
    pub grad_clip: Option<f64>,
    pub stream_length: StreamLength,

    pub agents: usize,
    pub topology: TopologyKind,
    pub recovery: LossRecovery,
    pub loss_rate: f64,
    pub loss_grid: Vec<f64>,
    pub seeds: usize,
    pub fusion_period: usize,
    pub checkpoints: Option<usize>,
    pub wall_clock: bool,
    /// Write every transmitted fusion message to `messages.bin`.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let learn = LearnConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: None,
            threads: 0,
            input_dim: 2,
            blocks_per_stream: 100,
            block_size: 10,
            test_size: 400,
            signal_scale: 1.0,
            data_noise_std: 0.1,
            jitter: 1e-8,
            vocab_size: 50,
            bank_size: 10,
            std_dim: None,
            noise_std: 0.1,
            shared_bank: true,
            learning_rate: learn.learning_rate,
            rate_decay: learn.rate_decay,
            grad_samples: learn.grad_samples,
            hyperlearning: learn.hyperlearning,
            hyper_period: learn.hyper_period,
            grad_clip: learn.grad_clip,
            stream_length: learn.stream_length,
            agents: 20,
            topology: TopologyKind::RandomTree,
            recovery: LossRecovery::KeepLatest,
            loss_rate: 0.0,
            loss_grid: vec![0.0, 0.2, 0.4, 0.6],
            seeds: 20,
            fusion_period: 10,
            checkpoints: None,
            wall_clock: false,
            trace: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("invalid value `{value}` for {key}: {e}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if value == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

pub fn parse_topology(value: &str) -> Result<TopologyKind> {
    match value {
        "line" => Ok(TopologyKind::Line),
        "star" => Ok(TopologyKind::Star),
        "random-tree" => Ok(TopologyKind::RandomTree),
        other => {
            let edges = other.strip_prefix("custom:").ok_or_else(|| {
                CliError::Config(format!(
                    "unknown topology `{other}` (expected line, star, random-tree or custom:a-b;c-d…)"
                ))
            })?;
            edges
                .split(';')
                .filter(|e| !e.is_empty())
                .map(|e| {
                    let (a, b) = e
                        .split_once('-')
                        .ok_or_else(|| CliError::Config(format!("edge `{e}` is not of the form a-b")))?;
                    Ok((parse("topology", a)?, parse("topology", b)?))
                })
                .collect::<Result<Vec<_>>>()
                .map(TopologyKind::Custom)
        }
    }
}

fn topology_name(t: &TopologyKind) -> String {
    match t {
        TopologyKind::Line => "line".into(),
        TopologyKind::Star => "star".into(),
        TopologyKind::RandomTree => "random-tree".into(),
        TopologyKind::Custom(edges) => {
            let e: Vec<String> = edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
            format!("custom:{}", e.join(";"))
        }
    }
}

fn list(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn optional<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

const METADATA_KEYS: [&str; 5] = ["command", "version", "started_unix", "finished_unix", "agents_used"];
const METADATA_PREFIXES: [&str; 3] = ["output.", "decentralized.", "centralized."];

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data" => self.data = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "threads" => self.threads = parse(key, v)?,
            "input_dim" => self.input_dim = parse(key, v)?,
            "blocks_per_stream" => self.blocks_per_stream = parse(key, v)?,
            "block_size" => self.block_size = parse(key, v)?,
            "test_size" => self.test_size = parse(key, v)?,
            "signal_scale" => self.signal_scale = parse(key, v)?,
            "data_noise_std" => self.data_noise_std = parse(key, v)?,
            "jitter" => self.jitter = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "bank_size" => self.bank_size = parse(key, v)?,
            "std_dim" => self.std_dim = parse_optional(key, v, "auto")?,
            "noise_std" => self.noise_std = parse(key, v)?,
            "shared_bank" => self.shared_bank = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "rate_decay" => self.rate_decay = parse(key, v)?,
            "grad_samples" => self.grad_samples = parse(key, v)?,
            "hyperlearning" => self.hyperlearning = parse(key, v)?,
            "hyper_period" => self.hyper_period = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse_optional(key, v, "none")?,
            "stream_length" => {
                self.stream_length = match parse_optional(key, v, "unbounded")? {
                    Some(n) => StreamLength::Known(n),
                    None => StreamLength::Unbounded,
                }
            }
            "agents" => self.agents = parse(key, v)?,
            "topology" => self.topology = parse_topology(v)?,
            "recovery" => {
                self.recovery = match v {
                    "keep-latest" => LossRecovery::KeepLatest,
                    "drop-round" => LossRecovery::DropRound,
                    _ => return Err(CliError::Config(format!("unknown recovery `{v}` (keep-latest or drop-round)"))),
                }
            }
            "loss_rate" => self.loss_rate = parse(key, v)?,
            "loss_grid" => {
                self.loss_grid = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            "seeds" => self.seeds = parse(key, v)?,
            "fusion_period" => self.fusion_period = parse(key, v)?,
            "checkpoints" => self.checkpoints = parse_optional(key, v, "all")?,
            "wall_clock" => self.wall_clock = parse(key, v)?,
            "trace" => self.trace = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let stream_length = match self.stream_length {
            StreamLength::Known(n) => n.to_string(),
            StreamLength::Unbounded => "unbounded".into(),
        };
        let recovery = match self.recovery {
            LossRecovery::KeepLatest => "keep-latest",
            LossRecovery::DropRound => "drop-round",
        };
        vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("threads", self.threads.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("blocks_per_stream", self.blocks_per_stream.to_string()),
            ("block_size", self.block_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("signal_scale", self.signal_scale.to_string()),
            ("data_noise_std", self.data_noise_std.to_string()),
            ("jitter", self.jitter.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("bank_size", self.bank_size.to_string()),
            ("std_dim", optional(&self.std_dim, "auto")),
            ("noise_std", self.noise_std.to_string()),
            ("shared_bank", self.shared_bank.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("rate_decay", self.rate_decay.to_string()),
            ("grad_samples", self.grad_samples.to_string()),
            ("hyperlearning", self.hyperlearning.to_string()),
            ("hyper_period", self.hyper_period.to_string()),
            ("grad_clip", optional(&self.grad_clip, "none")),
            ("stream_length", stream_length),
            ("agents", self.agents.to_string()),
            ("topology", topology_name(&self.topology)),
            ("recovery", recovery.into()),
            ("loss_rate", self.loss_rate.to_string()),
            ("loss_grid", list(&self.loss_grid)),
            ("seeds", self.seeds.to_string()),
            ("fusion_period", self.fusion_period.to_string()),
            ("checkpoints", optional(&self.checkpoints, "all")),
            ("wall_clock", self.wall_clock.to_string()),
            ("trace", self.trace.to_string()),
        ]
    }

    /// Applies a `key = value` text. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at_line = |message: String| CliError::Parse {
                source_name: source_name.to_string(),
                line: i as u64 + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at_line(format!("expected key = value, found `{line}`")))?;
            let key = key.trim();
            if METADATA_KEYS.contains(&key) || METADATA_PREFIXES.iter().any(|p| key.starts_with(p)) {
                continue;
            }
            let key = key.strip_prefix("config.").unwrap_or(key);
            self.set(key, value).map_err(|e| at_line(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults, then the optional file, then the flag overrides in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = file {
            cfg.apply_file(p)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let config_err = |e: fusegp_core::Error| CliError::Config(e.to_string());
        validate_loss_rate(self.loss_rate).map_err(config_err)?;
        for &r in &self.loss_grid {
            validate_loss_rate(r).map_err(config_err)?;
        }
        if self.seeds == 0 {
            return Err(CliError::Config("seeds must be at least 1".into()));
        }
        self.synthetic_spec().validate().map_err(config_err)?;
        self.sim_config(self.agents.max(1)).validate().map_err(config_err)?;
        Ok(())
    }

    pub fn data_dir(&self) -> &Path {
        self.data.as_deref().unwrap_or(&self.out)
    }

    pub fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            learning_rate: self.learning_rate,
            rate_decay: self.rate_decay,
            grad_samples: self.grad_samples,
            stream_length: self.stream_length,
            hyperlearning: self.hyperlearning,
            hyper_period: self.hyper_period,
            grad_clip: self.grad_clip,
            seed: 0,
        }
    }

    pub fn agent_template(&self) -> AgentTemplate {
        AgentTemplate {
            vocab_size: self.vocab_size,
            bank_size: self.bank_size,
            input_dim: self.input_dim,
            std_dim: self.std_dim.unwrap_or(self.input_dim),
            signal_scale: self.signal_scale,
            noise_std: self.noise_std,
            jitter: self.jitter,
            shared_bank: self.shared_bank,
            learn: self.learn_config(),
        }
    }

    pub fn sim_config(&self, n_agents: usize) -> SimConfig {
        SimConfig {
            topology: self.topology.clone(),
            loss_rate: self.loss_rate,
            fusion_period: self.fusion_period,
            recovery: self.recovery,
            max_checkpoints: self.checkpoints,
            record_messages: self.trace,
            ..SimConfig::new(n_agents, self.agent_template(), self.seed)
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            signal_scale: self.signal_scale,
            noise_std: self.data_noise_std,
            blocks_per_stream: self.blocks_per_stream,
            block_size: self.block_size,
            test_size: self.test_size,
            jitter: self.jitter,
            ..SyntheticSpec::with_defaults(self.input_dim, self.seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# team\nagents = 7\nseed=3\nloss_grid = 0, 0.5\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &[("seed", "9".into())]).unwrap();
        assert_eq!(cfg.agents, 7);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.loss_grid, vec![0.0, 0.5]);
        assert_eq!(cfg.vocab_size, RunConfig::default().vocab_size);
    }

    #[test]
    fn entries_round_trip() {
        let mut cfg = RunConfig {
            grad_clip: None,
            checkpoints: Some(0),
            topology: TopologyKind::Custom(vec![(0, 1), (1, 2)]),
            stream_length: StreamLength::Known(40),
            data: Some("d".into()),
            ..RunConfig::default()
        };
        cfg.std_dim = Some(3);
        let text: String = cfg.entries().iter().map(|(k, v)| format!("config.{k}={v}\n")).collect();
        let mut back = RunConfig::default();
        back.apply_text(&format!("command=gen\noutput.0=x\n{text}"), "manifest").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn loss_rate_of_one_is_a_config_error() {
        let e = RunConfig::resolve(None, &[("loss_rate", "1".into())]).unwrap_err();
        assert!(matches!(e, CliError::Config(_)), "{e}");
        let e = RunConfig::resolve(None, &[("loss_grid", "0,1.2".into())]).unwrap_err();
        assert!(matches!(e, CliError::Config(_)), "{e}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let mut cfg = RunConfig::default();
        let e = cfg.apply_text("seed = 1\nnonsense = 2\n", "f.conf").unwrap_err();
        assert!(e.to_string().starts_with("f.conf, line 2"), "{e}");
    }
}
