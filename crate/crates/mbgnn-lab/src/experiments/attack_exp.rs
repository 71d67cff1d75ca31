//! `attack`: run simBA against the trained model under the transductive
//! query protocol. Each target sees a frozen companion batch, so the model
//! is a deterministic function of the query point; every target gets its own
//! direction stream and query counter.

use mbgnn_core::matrix::DenseMatrix;
use mbgnn_core::model::Classifier;
use mbgnn_core::robust::{aggregate_attacks, simba_attack, AttackOutcome};
use mbgnn_core::rng::{stream, SeededRng};
use mbgnn_core::stats::{histogram, sample_std};
use serde::Serialize;

use crate::dataset::DatasetSource;
use crate::experiments::train_exp::{run_training, train_config};
use crate::experiments::{run_parallel, RunContext};
use crate::LabError;

#[derive(Serialize)]
pub struct TargetRecord {
    pub index: usize,
    pub label: usize,
    pub initially_correct: bool,
    pub success: bool,
    pub queries: usize,
    pub perturbation_norm: f64,
}

#[derive(Serialize)]
pub struct AttackReport {
    pub seed: u64,
    pub model_kind: String,
    pub epsilon: f64,
    pub budget: usize,
    pub targets_requested: usize,
    pub targets_attacked: usize,
    pub skipped_initially_misclassified: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_queries: f64,
    pub median_queries: f64,
    /// Query counts of successful attacks, bucketed into 20 equal bins over
    /// [0, budget].
    pub query_histogram: Vec<usize>,
    pub records: Vec<TargetRecord>,
}

/// Attack test rows in order until `targets` initially-correct samples have
/// been attacked. Rows are processed in fixed-size chunks so the outcome set
/// does not depend on the worker count.
pub fn attack_model(
    clf: &Classifier,
    test_features: &DenseMatrix,
    test_labels: &[usize],
    pool: &DenseMatrix,
    batch_size: usize,
    eps: f64,
    budget: usize,
    targets: usize,
    seed: u64,
) -> Result<Vec<(usize, AttackOutcome)>, LabError> {
    const CHUNK: usize = 32;
    let mut outcomes: Vec<(usize, AttackOutcome)> = Vec::new();
    let mut attacked = 0usize;
    let mut row = 0usize;
    while attacked < targets && row < test_features.rows() {
        let hi = (row + CHUNK).min(test_features.rows());
        let jobs: Vec<_> = (row..hi)
            .map(|i| {
                move || -> Result<(usize, AttackOutcome), LabError> {
                    let x = test_features.row(i);
                    let mut batch = match clf {
                        Classifier::Baseline(_) => DenseMatrix::zeros(1, test_features.cols()),
                        Classifier::Mbgnn(_) => {
                            let mut pool_rng =
                                SeededRng::substream(seed, &[stream::ATTACK, i as u64, 0]);
                            clf.sample_transductive_batch(x, pool, batch_size, &mut pool_rng)?
                        }
                    };
                    let mut query = |point: &[f64]| {
                        clf.transductive_probabilities(point, &mut batch)
                            .map_err(Into::into)
                    };
                    let mut dir_rng = SeededRng::substream(seed, &[stream::ATTACK, i as u64, 1]);
                    let outcome =
                        simba_attack(&mut query, x, test_labels[i], eps, budget, &mut dir_rng)?;
                    Ok((i, outcome))
                }
            })
            .collect();
        for result in run_parallel(jobs) {
            let (i, outcome) = result?;
            if attacked >= targets {
                break;
            }
            if outcome.initially_correct {
                attacked += 1;
            }
            outcomes.push((i, outcome));
        }
        row = hi;
    }
    Ok(outcomes)
}

pub fn run(ctx: &RunContext) -> Result<(), LabError> {
    ctx.echo_config()?;
    let source = DatasetSource::from_config(&ctx.cfg)?;
    let (train_set, test_set) = source.load(&ctx.cfg, ctx.seed)?;
    let tc = train_config(&ctx.cfg)?;
    let (clf, _, _) = run_training(&ctx.cfg, ctx.seed)?;

    let dim = test_set.dim();
    // Default epsilon: 0.2 of the input scale (feature standard deviation).
    let input_scale = sample_std(train_set.features.as_slice());
    let eps = ctx.cfg.get_f64("attack.epsilon", 0.2 * input_scale)?;
    let budget = ctx.cfg.get_usize("attack.budget", 10 * dim)?;
    let targets = ctx.cfg.get_usize("attack.targets", 200)?;

    let outcomes = attack_model(
        &clf,
        &test_set.features,
        &test_set.labels,
        &train_set.features,
        tc.batch_size,
        eps,
        budget,
        targets,
        ctx.seed,
    )?;

    let bare: Vec<AttackOutcome> = outcomes.iter().map(|(_, o)| o.clone()).collect();
    let agg = aggregate_attacks(&bare);
    let successful: Vec<f64> = bare
        .iter()
        .filter(|o| o.success)
        .map(|o| o.queries as f64)
        .collect();
    let report = AttackReport {
        seed: ctx.seed,
        model_kind: ctx.cfg.get_str("model.kind", "mbgnn").to_string(),
        epsilon: eps,
        budget,
        targets_requested: targets,
        targets_attacked: agg.targets - agg.skipped,
        skipped_initially_misclassified: agg.skipped,
        successes: agg.successes,
        success_rate: agg.success_rate,
        mean_queries: agg.mean_queries,
        median_queries: agg.median_queries,
        query_histogram: histogram(&successful, 0.0, budget as f64, 20),
        records: outcomes
            .iter()
            .map(|(i, o)| TargetRecord {
                index: *i,
                label: test_set.labels[*i],
                initially_correct: o.initially_correct,
                success: o.success,
                queries: o.queries,
                perturbation_norm: o.perturbation_norm,
            })
            .collect(),
    };
    println!(
        "attack: {} targets, success rate {:.4}, median queries {}",
        report.targets_attacked, report.success_rate, report.median_queries
    );
    ctx.write_json("attack.json", &report)
}
