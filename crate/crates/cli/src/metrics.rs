//! Metric files. Checkpoint files use the header
//! `batch_index,agent_id,rmse_pre,rmse_post,ess,wall_ms`.

use std::io::Write;

use fusegp_core::netsim::CheckpointRecord;

use crate::error::{CliError, Result};

pub const CHECKPOINT_HEADER: [&str; 6] = ["batch_index", "agent_id", "rmse_pre", "rmse_post", "ess", "wall_ms"];

fn write_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("writing metrics: {e}"))
}

pub fn write_checkpoints<W: Write>(out: W, records: &[CheckpointRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CHECKPOINT_HEADER).map_err(write_err)?;
    for r in records {
        w.write_record([
            r.batch_index.to_string(),
            r.agent_id.to_string(),
            r.rmse_pre.to_string(),
            r.rmse_post.to_string(),
            r.ess.to_string(),
            r.wall_ms.to_string(),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}

/// One row of a loss sweep: mean over seeds of the per-seed team mean RMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub loss_rate: f64,
    pub system: &'static str,
    pub seeds: usize,
    pub mean_rmse_post: f64,
    pub std_error: f64,
    /// Mean fraction of agents whose assembly covered the whole team
    /// (always 1 for the centralized system's single model).
    pub complete_fraction: f64,
}

pub const LOSS_HEADER: [&str; 6] = ["loss_rate", "system", "seeds", "mean_rmse_post", "std_error", "complete_fraction"];

pub fn write_loss_rows<W: Write>(out: W, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOSS_HEADER).map_err(write_err)?;
    for r in rows {
        w.write_record([
            r.loss_rate.to_string(),
            r.system.to_string(),
            r.seeds.to_string(),
            r.mean_rmse_post.to_string(),
            r.std_error.to_string(),
            r.complete_fraction.to_string(),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}
