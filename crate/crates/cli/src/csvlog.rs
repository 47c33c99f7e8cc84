//! Tidy CSV output for training logs.

use std::path::Path;

use ortho_hydra_core::harness::TrainLog;

use crate::error::{CliError, Result};

pub fn header(log: &TrainLog) -> Vec<String> {
    let mut cols: Vec<String> = ["step", "task_loss", "balance_loss", "entropy_mean"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..log.layers).map(|l| format!("entropy_layer_{l}")));
    cols.extend((0..log.experts).map(|e| format!("util_expert_{e}")));
    cols.extend(
        ["grad_norm_total", "grad_norm_router", "cross_gram_max", "expert_divergence"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header(log)).map_err(|e| csv_err(path, e))?;
    for row in &log.rows {
        let mut rec = vec![
            row.step.to_string(),
            row.task_loss.to_string(),
            row.balance_loss.to_string(),
            row.entropy_mean.to_string(),
        ];
        rec.extend(row.entropy_layers.iter().map(f64::to_string));
        rec.extend(row.utilization.iter().map(f64::to_string));
        rec.extend(
            [row.grad_norm_total, row.grad_norm_router, row.cross_gram_max, row.expert_divergence]
                .iter()
                .map(f64::to_string),
        );
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One row per logged step, one `H̄` column per run. Runs must share their
/// logging schedule.
pub fn write_entropy_comparison(path: &Path, runs: &[(&str, &TrainLog)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut head = vec!["step".to_string()];
    head.extend(runs.iter().map(|(name, _)| format!("entropy_{name}")));
    w.write_record(&head).map_err(|e| csv_err(path, e))?;
    let steps = runs.first().map_or(0, |(_, l)| l.rows.len());
    for i in 0..steps {
        let mut rec = vec![runs[0].1.rows[i].step.to_string()];
        rec.extend(runs.iter().map(|(_, l)| l.rows[i].entropy_mean.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
