//! `ablate-k` and `ablate-batch`: sweep the neighborhood size or the batch
//! size with everything else held fixed, fanning runs across the worker
//! pool and merging results by sweep key.

use serde::Serialize;

use crate::experiments::{run_parallel, RunContext};
use crate::experiments::train_exp::{history_csv, run_training};
use crate::LabError;

#[derive(Serialize)]
pub struct SweepPoint {
    pub value: usize,
    pub test_accuracy_inductive: f64,
    pub test_accuracy_transductive: f64,
    pub train_accuracy: f64,
}

#[derive(Serialize)]
pub struct SweepSummary {
    pub parameter: String,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
    pub best_value: usize,
    pub best_accuracy: f64,
    /// Rule-of-thumb optimum: batch size divided by class count.
    pub heuristic_optimum: usize,
    /// Whether the largest swept value scored strictly below the best.
    pub largest_below_best: bool,
}

fn sweep(
    ctx: &RunContext,
    parameter: &str,
    key: &str,
    values: Vec<usize>,
) -> Result<SweepSummary, LabError> {
    let jobs: Vec<_> = values
        .iter()
        .map(|&v| {
            let mut cfg = ctx.cfg.clone();
            cfg.set(key, v);
            let seed = ctx.seed;
            move || run_training(&cfg, seed).map(|(_, history, result)| (v, history, result))
        })
        .collect();

    let mut points = Vec::new();
    for outcome in run_parallel(jobs) {
        let (v, history, result) = outcome?;
        let dir = ctx.subdir(&format!("{parameter}_{v}"))?;
        std::fs::write(dir.join("history.csv"), history_csv(&history))?;
        crate::experiments::write_json_file(&dir.join("result.json"), &result)?;
        points.push(SweepPoint {
            value: v,
            test_accuracy_inductive: result.test_accuracy_inductive,
            test_accuracy_transductive: result.test_accuracy_transductive,
            train_accuracy: result.train_accuracy,
        });
    }

    let best = points
        .iter()
        .max_by(|a, b| {
            a.test_accuracy_inductive
                .total_cmp(&b.test_accuracy_inductive)
        })
        .expect("non-empty sweep");
    let largest = points.iter().max_by_key(|p| p.value).expect("non-empty");
    let batch = ctx.cfg.get_usize("train.batch_size", 64)?;
    let classes = ctx.cfg.get_usize("dataset.classes", 8)?;
    Ok(SweepSummary {
        parameter: parameter.to_string(),
        seed: ctx.seed,
        best_value: best.value,
        best_accuracy: best.test_accuracy_inductive,
        heuristic_optimum: (batch / classes).max(1),
        largest_below_best: largest.test_accuracy_inductive < best.test_accuracy_inductive,
        points,
    })
}

pub fn run_k(ctx: &RunContext) -> Result<(), LabError> {
    ctx.echo_config()?;
    let batch = ctx.cfg.get_usize("train.batch_size", 64)?;
    let defaults = [2, 4, 8, batch - 1];
    let values = ctx.cfg.get_usize_list("ablate.k_values", &defaults)?;
    for &v in &values {
        if v >= batch {
            return Err(LabError::Config(format!(
                "ablate.k_values entry {v} must stay below train.batch_size {batch}"
            )));
        }
    }
    let summary = sweep(ctx, "k", "model.k", values)?;
    println!(
        "ablate-k: best k = {} ({:.4}); k = B-1 below best: {}",
        summary.best_value, summary.best_accuracy, summary.largest_below_best
    );
    ctx.write_json("summary.json", &summary)
}

pub fn run_batch(ctx: &RunContext) -> Result<(), LabError> {
    ctx.echo_config()?;
    let k = ctx.cfg.get_usize("model.k", 8)?;
    let defaults = [16, 32, 64, 128];
    let values = ctx.cfg.get_usize_list("ablate.batch_sizes", &defaults)?;
    for &v in &values {
        if v <= k {
            return Err(LabError::Config(format!(
                "ablate.batch_sizes entry {v} must exceed model.k {k}"
            )));
        }
    }
    let summary = sweep(ctx, "batch", "train.batch_size", values)?;
    println!(
        "ablate-batch: best B = {} ({:.4})",
        summary.best_value, summary.best_accuracy
    );
    ctx.write_json("summary.json", &summary)
}
