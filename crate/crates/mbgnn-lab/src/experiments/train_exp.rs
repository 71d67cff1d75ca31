//! `train`: fit the configured classifier on the configured dataset, record
//! the per-epoch history, and checkpoint the result.

use std::fmt::Write as _;

use mbgnn_core::data::Dataset;
use mbgnn_core::model::Classifier;
use mbgnn_core::train::{evaluate_inductive, evaluate_transductive, train, EpochStats, TrainConfig};
use serde::Serialize;

use crate::builders::{build_classifier, build_optimizer, DataShape};
use crate::checkpoint;
use crate::config::Config;
use crate::dataset::DatasetSource;
use crate::experiments::RunContext;
use crate::LabError;

#[derive(Serialize)]
pub struct TrainResult {
    pub seed: u64,
    pub model_kind: String,
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy_inductive: f64,
    pub test_accuracy_transductive: f64,
    pub final_loss: f64,
}

pub fn train_config(cfg: &Config) -> Result<TrainConfig, LabError> {
    Ok(TrainConfig {
        epochs: cfg.get_usize("train.epochs", 30)?,
        batch_size: cfg.get_usize("train.batch_size", 64)?,
        eval_subsample: cfg.get_usize("train.eval_subsample", 512)?,
        transductive_subsample: cfg.get_usize("train.transductive_subsample", 0)?,
    })
}

pub fn shape_of(train_set: &Dataset) -> DataShape {
    DataShape {
        input_dim: train_set.dim(),
        classes: train_set.classes,
        image_shape: train_set.image_shape,
    }
}

/// Train per config; returns the model, history, and final full-set metrics.
pub fn run_training(
    cfg: &Config,
    seed: u64,
) -> Result<(Classifier, Vec<EpochStats>, TrainResult), LabError> {
    let source = DatasetSource::from_config(cfg)?;
    let (train_set, test_set) = source.load(cfg, seed)?;
    let shape = shape_of(&train_set);
    let mut clf = build_classifier(cfg, &shape, seed)?;
    let mut opt = build_optimizer(cfg)?;
    let tc = train_config(cfg)?;
    let history = train(&mut clf, &train_set, &test_set, &mut opt, &tc, seed)?;

    let train_acc = evaluate_inductive(&clf, &train_set, tc.batch_size)?;
    let test_acc = evaluate_inductive(&clf, &test_set, tc.batch_size)?;
    let trans_acc = evaluate_transductive(&clf, &test_set, &train_set, tc.batch_size, seed)?;
    let result = TrainResult {
        seed,
        model_kind: cfg.get_str("model.kind", "mbgnn").to_string(),
        epochs: tc.epochs,
        train_accuracy: train_acc,
        test_accuracy_inductive: test_acc,
        test_accuracy_transductive: trans_acc,
        final_loss: history.last().map_or(0.0, |h| h.loss),
    };
    Ok((clf, history, result))
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_acc,test_acc_inductive,test_acc_transductive,loss\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            h.epoch, h.train_acc, h.test_acc_inductive, h.test_acc_transductive, h.loss
        );
    }
    out
}

pub fn run(ctx: &RunContext) -> Result<(), LabError> {
    ctx.echo_config()?;
    let (clf, history, result) = run_training(&ctx.cfg, ctx.seed)?;
    ctx.write_text("history.csv", &history_csv(&history))?;
    ctx.write_json("result.json", &result)?;

    let source = DatasetSource::from_config(&ctx.cfg)?;
    let (train_set, _) = source.load(&ctx.cfg, ctx.seed)?;
    let shape = shape_of(&train_set);
    checkpoint::save(&ctx.subdir("checkpoint")?, &clf, &ctx.cfg, &shape)?;
    println!(
        "train: inductive {:.4} transductive {:.4}",
        result.test_accuracy_inductive, result.test_accuracy_transductive
    );
    Ok(())
}
