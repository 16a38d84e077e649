//! The experiment protocols behind the commands: two-agent and team runs,
//! the disparity scenario and the transmission-loss sweep.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fusegp_core::data::Block;
use fusegp_core::netsim::{
    disparity_plan, run_experiment, run_loss_comparison, shuffle_blocks, Clock, DispatchPlan, LossPoint, NullClock,
    SimConfig, SimTrace,
};
use fusegp_core::rng::derive_seed;
use fusegp_core::synthetic::SyntheticData;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{label_in_order, read_dataset_file, write_dataset_file, write_test_set};
use crate::error::{io_err, CliError, Result};
use crate::metrics::LossRow;

/// Milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock {
    start: Instant,
}

impl StdClock {
    pub fn start() -> Self {
        Self { start: Instant::now() }
    }
}

impl Clock for StdClock {
    fn elapsed_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }
}

pub fn clock_for(cfg: &RunConfig) -> Box<dyn Clock> {
    if cfg.wall_clock {
        Box::new(StdClock::start())
    } else {
        Box::new(NullClock)
    }
}

/// Two training streams and a mixed test set.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamData {
    pub streams: [Vec<Block>; 2],
    pub test: Block,
}

impl From<SyntheticData> for StreamData {
    fn from(d: SyntheticData) -> Self {
        Self {
            streams: d.streams,
            test: d.test,
        }
    }
}

impl StreamData {
    pub fn input_dim(&self) -> usize {
        self.test.input_dim()
    }

    /// Both streams interleaved in a seeded random arrival order.
    pub fn arrivals(&self, seed: u64) -> Vec<Block> {
        shuffle_blocks(&[&self.streams[0], &self.streams[1]], derive_seed(seed, "arrival", 0))
    }
}

pub const DATASET_FILES: [&str; 3] = ["stream1.csv", "stream2.csv", "test.csv"];

pub fn save_dataset(dir: &Path, data: &SyntheticData) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let d = data.test.input_dim();
    let paths: Vec<PathBuf> = DATASET_FILES.iter().map(|f| dir.join(f)).collect();
    for (s, path) in data.streams.iter().zip(&paths) {
        write_dataset_file(path, d, &label_in_order(s))?;
    }
    let f = std::fs::File::create(&paths[2]).map_err(io_err(&paths[2]))?;
    write_test_set(std::io::BufWriter::new(f), &data.test, &data.test_domains)?;
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> Result<StreamData> {
    let mut files = DATASET_FILES.iter().map(|f| read_dataset_file(&dir.join(f)));
    let (s1, s2, test) = (files.next().unwrap()?, files.next().unwrap()?, files.next().unwrap()?);
    if s1.input_dim != test.input_dim || s2.input_dim != test.input_dim {
        return Err(CliError::Config(format!(
            "dataset files in {} disagree on the input dimension",
            dir.display()
        )));
    }
    Ok(StreamData {
        test: test.pooled()?,
        streams: [s1.into_blocks(), s2.into_blocks()],
    })
}

/// Runs `f` on a pool of `threads` workers (0: one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Team run on the pooled arrivals with the configured number of agents.
pub fn team_run(cfg: &RunConfig, n_agents: usize, data: &StreamData, clock: &dyn Clock) -> Result<SimTrace> {
    let sim = cfg.sim_config(n_agents);
    Ok(run_experiment(&sim, &data.arrivals(cfg.seed), &data.test, clock)?)
}

/// Checkpoint RMSEs of the two agents in the disparity scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparityOutcome {
    pub frozen_pre: f64,
    pub frozen_post: f64,
    pub active_pre: f64,
    pub active_post: f64,
}

/// Agent 0 ingests `frozen_after` arrivals and stops; agent 1 ingests the
/// next `active_blocks`. A single fusion sweep follows the last block.
pub fn disparity_run(cfg: &RunConfig, data: &StreamData, frozen_after: usize, active_blocks: usize) -> Result<DisparityOutcome> {
    let total = frozen_after + active_blocks;
    let arrivals = data.arrivals(cfg.seed);
    if arrivals.len() < total {
        return Err(CliError::Config(format!(
            "disparity run needs {total} blocks but the streams hold {}",
            arrivals.len()
        )));
    }
    let sim = SimConfig {
        dispatch: DispatchPlan::Fixed(disparity_plan(frozen_after, active_blocks)),
        fusion_period: total,
        max_checkpoints: None,
        ..cfg.sim_config(2)
    };
    let trace = run_experiment(&sim, &arrivals[..total], &data.test, &NullClock)?;
    let at: Vec<_> = trace.at(total).collect();
    Ok(DisparityOutcome {
        frozen_pre: at[0].rmse_pre,
        frozen_post: at[0].rmse_post,
        active_pre: at[1].rmse_pre,
        active_post: at[1].rmse_post,
    })
}

/// Decentralized and centralized RMSE at every rate of `cfg.loss_grid` for
/// one seed.
pub fn loss_points(cfg: &RunConfig, seed: u64, data: &StreamData) -> Result<Vec<LossPoint>> {
    let sim = SimConfig {
        seed,
        ..cfg.sim_config(cfg.agents)
    };
    Ok(run_loss_comparison(&sim, &data.arrivals(seed), &data.test, &cfg.loss_grid)?)
}

/// Per-seed results in, two rows (decentralized, centralized) per rate out.
pub fn aggregate_loss(per_seed: &[Vec<LossPoint>]) -> Vec<LossRow> {
    let n = per_seed.len();
    let rates = per_seed.first().map_or(0, Vec::len);
    let stats = |values: Vec<f64>| {
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        (mean, (var / n as f64).sqrt())
    };
    let mut rows = Vec::with_capacity(2 * rates);
    for r in 0..rates {
        let rate = per_seed[0][r].loss_rate;
        let (dm, ds) = stats(per_seed.iter().map(|p| p[r].decentralized).collect());
        let (cm, cs) = stats(per_seed.iter().map(|p| p[r].centralized).collect());
        let complete = per_seed.iter().map(|p| p[r].complete_fraction).sum::<f64>() / n as f64;
        rows.push(LossRow {
            loss_rate: rate,
            system: "decentralized",
            seeds: n,
            mean_rmse_post: dm,
            std_error: ds,
            complete_fraction: complete,
        });
        rows.push(LossRow {
            loss_rate: rate,
            system: "centralized",
            seeds: n,
            mean_rmse_post: cm,
            std_error: cs,
            complete_fraction: 1.0,
        });
    }
    rows
}

/// Seeds `cfg.seed .. cfg.seed + cfg.seeds` on one dataset, in parallel.
/// Results are collected in seed order, so the output does not depend on
/// the thread count.
pub fn loss_sweep(cfg: &RunConfig, data: &StreamData) -> Result<Vec<LossRow>> {
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect();
    let per_seed = with_threads(cfg.threads, || {
        seeds
            .par_iter()
            .map(|&s| loss_points(cfg, s, data))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(aggregate_loss(&per_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fusegp_core::synthetic::generate;

    fn small_cfg() -> RunConfig {
        RunConfig {
            blocks_per_stream: 6,
            block_size: 5,
            test_size: 40,
            vocab_size: 10,
            bank_size: 4,
            agents: 4,
            seeds: 3,
            fusion_period: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn dataset_files_round_trip() {
        let cfg = small_cfg();
        let data = generate(&cfg.synthetic_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, StreamData::from(data));
    }

    #[test]
    fn sweep_is_thread_count_invariant() {
        let cfg = small_cfg();
        let data: StreamData = generate(&cfg.synthetic_spec()).unwrap().into();
        let one = loss_sweep(&RunConfig { threads: 1, ..cfg.clone() }, &data).unwrap();
        let many = loss_sweep(&RunConfig { threads: 3, ..cfg }, &data).unwrap();
        assert_eq!(one, many);
        assert_eq!(one.len(), 8);
        assert!((one[0].mean_rmse_post - one[1].mean_rmse_post).abs() <= 1e-10);
    }

    #[test]
    fn disparity_needs_enough_blocks() {
        let cfg = small_cfg();
        let data: StreamData = generate(&cfg.synthetic_spec()).unwrap().into();
        assert!(disparity_run(&cfg, &data, 5, 100).is_err());
        let out = disparity_run(&cfg, &data, 2, 10).unwrap();
        assert!(out.frozen_pre.is_finite() && out.active_post.is_finite());
    }
}
