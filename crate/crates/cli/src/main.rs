use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusegp_core::synthetic::generate;

use fusegp::config::RunConfig;
use fusegp::error::io_err;
use fusegp::experiments::{clock_for, load_dataset, loss_sweep, save_dataset, team_run, with_threads, StreamData};
use fusegp::manifest::RunManifest;
use fusegp::metrics::{write_checkpoints, write_loss_rows};
use fusegp::trace::write_trace;
use fusegp::verify::{run_suite, Suite};
use fusegp::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "fusegp", version, about = "Online sparse GP agents with decentralized fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate two synthetic streams and a mixed test set.
    Gen,
    /// Two agents sharing the pooled stream, fusing every period.
    TwoAgent,
    /// A team of agents on a tree.
    Network,
    /// Decentralized vs centralized fusion over a grid of loss rates.
    LossSweep,
    /// Run a verification suite (or `all`).
    Verify {
        #[arg(value_name = "SUITE")]
        suite: String,
    },
}

#[derive(Args, Debug, Default)]
struct Shared {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key = value` config file (a run manifest also works).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for multi-seed work; 1 runs serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    vocab_size: Option<usize>,
    #[arg(long, global = true)]
    bank_size: Option<usize>,
    #[arg(long, global = true)]
    agents: Option<usize>,
    #[arg(long, global = true)]
    loss_rate: Option<f64>,
    #[arg(long, global = true)]
    fusion_period: Option<usize>,
    /// line, star, random-tree or custom:a-b;c-d…
    #[arg(long, global = true)]
    topology: Option<String>,
    /// Dataset directory (defaults to --out).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Record elapsed milliseconds in the wall_ms column.
    #[arg(long, global = true)]
    wall_clock: bool,
    /// Write every fusion message to <command>-messages.bin.
    #[arg(long, global = true)]
    trace: bool,
    #[arg(long, global = true)]
    input_dim: Option<usize>,
    #[arg(long, global = true)]
    blocks_per_stream: Option<usize>,
    #[arg(long, global = true)]
    block_size: Option<usize>,
    #[arg(long, global = true)]
    test_size: Option<usize>,
    /// Maximum number of checkpoints to record.
    #[arg(long, global = true)]
    checkpoints: Option<usize>,
    /// Number of seeds for the loss sweep.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Comma-separated loss rates for the loss sweep.
    #[arg(long, global = true)]
    loss_grid: Option<String>,
    #[arg(long, global = true)]
    hyperlearning: Option<bool>,
}

impl Shared {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn put<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        let mut o = Vec::new();
        put(&mut o, "seed", &self.seed);
        put(&mut o, "out", &self.out.as_ref().map(|p| p.display().to_string()));
        put(&mut o, "threads", &self.threads);
        put(&mut o, "vocab_size", &self.vocab_size);
        put(&mut o, "bank_size", &self.bank_size);
        put(&mut o, "agents", &self.agents);
        put(&mut o, "loss_rate", &self.loss_rate);
        put(&mut o, "fusion_period", &self.fusion_period);
        put(&mut o, "topology", &self.topology);
        put(&mut o, "data", &self.data.as_ref().map(|p| p.display().to_string()));
        put(&mut o, "input_dim", &self.input_dim);
        put(&mut o, "blocks_per_stream", &self.blocks_per_stream);
        put(&mut o, "block_size", &self.block_size);
        put(&mut o, "test_size", &self.test_size);
        put(&mut o, "checkpoints", &self.checkpoints);
        put(&mut o, "seeds", &self.seeds);
        put(&mut o, "loss_grid", &self.loss_grid);
        put(&mut o, "hyperlearning", &self.hyperlearning);
        if self.wall_clock {
            o.push(("wall_clock", "true".into()));
        }
        if self.trace {
            o.push(("trace", "true".into()));
        }
        o
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Loads the dataset and adopts its input dimension.
fn dataset_for(cfg: &mut RunConfig) -> Result<StreamData> {
    let data = load_dataset(cfg.data_dir())?;
    cfg.input_dim = data.input_dim();
    cfg.validate()?;
    Ok(data)
}

fn run_team(name: &str, n_agents: Option<usize>, mut cfg: RunConfig) -> Result<()> {
    let mut manifest = RunManifest::start(name, &cfg);
    let data = dataset_for(&mut cfg)?;
    let n = n_agents.unwrap_or(cfg.agents);
    manifest.config = cfg.clone();
    manifest.extra.push(("agents_used".into(), n.to_string()));
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let clock = clock_for(&cfg);
    let trace = team_run(&cfg, n, &data, clock.as_ref())?;
    let metrics = cfg.out.join(format!("{name}-metrics.csv"));
    write_checkpoints(create(&metrics)?, &trace.records)?;
    manifest.outputs.push(metrics);
    if cfg.trace {
        let path = cfg.out.join(format!("{name}-messages.bin"));
        write_trace(create(&path)?, &trace.messages)?;
        manifest.outputs.push(path);
    }
    manifest.finish(&cfg.out.join(format!("{name}.manifest")))
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = RunConfig::resolve(cli.shared.config.as_deref(), &cli.shared.overrides())?;
    match cli.command {
        Command::Gen => {
            let mut manifest = RunManifest::start("gen", &cfg);
            let data = generate(&cfg.synthetic_spec())?;
            manifest.outputs = save_dataset(&cfg.out, &data)?;
            manifest.finish(&cfg.out.join("gen.manifest"))?;
        }
        Command::TwoAgent => run_team("two-agent", Some(2), cfg)?,
        Command::Network => run_team("network", None, cfg)?,
        Command::LossSweep => {
            let mut manifest = RunManifest::start("loss-sweep", &cfg);
            let data = dataset_for(&mut cfg)?;
            manifest.config = cfg.clone();
            let recovery = cfg.entries().into_iter().find(|(k, _)| *k == "recovery").map(|(_, v)| v).unwrap_or_default();
            let topology = cfg.entries().into_iter().find(|(k, _)| *k == "topology").map(|(_, v)| v).unwrap_or_default();
            manifest.extra.extend([
                ("decentralized.protocol".into(), "tree message passing".into()),
                ("decentralized.topology".into(), topology),
                ("decentralized.recovery".into(), recovery),
                ("decentralized.rounds".into(), "diameter, or 2*diameter under loss".into()),
                ("centralized.protocol".into(), "server fuses surviving uploads".into()),
                ("centralized.upload_loss".into(), "independent per agent at the same rate".into()),
            ]);
            std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
            let rows = loss_sweep(&cfg, &data)?;
            let path = cfg.out.join("loss-sweep.csv");
            write_loss_rows(create(&path)?, &rows)?;
            manifest.outputs.push(path);
            manifest.finish(&cfg.out.join("loss-sweep.manifest"))?;
        }
        Command::Verify { suite } => {
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let seed = cfg.seed;
            let reports = with_threads(cfg.threads, || suites.iter().map(|&s| run_suite(s, seed)).collect::<Result<Vec<_>>>())??;
            let mut ok = true;
            for r in &reports {
                println!("{r}");
                ok &= r.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ CliError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
