//! Experiment drivers. Each returns rows sorted by configuration key; work is
//! spread over rayon with one derived random stream per cell, trial chunk or
//! repeat, so output is independent of thread count and scheduling.

mod metarl;
mod mse;
mod optimize;

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

pub use metarl::{
    run_metarl_training, run_metarl_validation, MetaTrainingConfig, MetaValidationConfig, TrainingReport, TrainingRow,
    ValidationRow,
};
pub use mse::{run_mse_sweep, MseSweepConfig, ReferenceMode, SweepRow};
pub use optimize::{
    run_toy_optimization, run_toy_optimization_grid, CurvePoint, OptimizeRow, OptimizeSummary, ToyOptimizeConfig,
};

/// Trials are processed in fixed-size chunks, each with its own stream.
pub(crate) const TRIAL_CHUNK: usize = 2048;

/// Writes `rows` as CSV with a header line.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
