//! Mini-batch training, inductive/transductive evaluation, and the
//! finite-difference gradient certification harness.
//!
//! All randomness is drawn from substreams of the run seed (data shuffles,
//! drop-feature coins, evaluation pools), so a run is a pure function of
//! (model init, dataset, config, seed).

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::math;
use crate::matrix::{CoreError, DenseMatrix, Result};
use crate::model::{Classifier, Phase};
use crate::optim::Optimizer;
use crate::rng::{stream, SeededRng};
use crate::tape::Tape;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Rows of train/test sampled for the per-epoch accuracy history
    /// (full sets are used when smaller).
    pub eval_subsample: usize,
    /// Test rows per epoch scored transductively for the history; 0 disables
    /// (transductive columns then report -1).
    pub transductive_subsample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            eval_subsample: 512,
            transductive_subsample: 0,
        }
    }
}

/// One row of the training history CSV.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc_inductive: f64,
    pub test_acc_transductive: f64,
    pub loss: f64,
}

/// Train the classifier in place; returns the per-epoch history.
pub fn train(
    clf: &mut Classifier,
    train_set: &Dataset,
    test_set: &Dataset,
    optimizer: &mut Optimizer,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    if train_set.is_empty() {
        return Err(CoreError::Data(String::from("empty training set")));
    }
    if cfg.batch_size < clf.min_batch() {
        return Err(CoreError::Parameter(alloc::format!(
            "batch size {} below model minimum {}",
            cfg.batch_size,
            clf.min_batch()
        )));
    }

    let mut dropout_rng = SeededRng::substream(seed, &[stream::DROPOUT]);
    let mut history = Vec::with_capacity(cfg.epochs);

    // Fixed evaluation subsets so the history is comparable across epochs.
    let mut eval_rng = SeededRng::substream(seed, &[stream::EVAL]);
    let train_eval = subsample_indices(train_set.len(), cfg.eval_subsample, &mut eval_rng);
    let test_eval = subsample_indices(test_set.len(), cfg.eval_subsample, &mut eval_rng);
    let trans_eval = subsample_indices(test_set.len(), cfg.transductive_subsample, &mut eval_rng);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = SeededRng::substream(seed, &[stream::DATA, epoch as u64]);
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < clf.min_batch() {
                continue;
            }
            let batch = train_set.subset(chunk);
            let mut tape = Tape::new();
            let rec = clf.record_forward(&mut tape, &batch.features, Phase::Train(&mut dropout_rng))?;
            let loss = tape.softmax_cross_entropy(rec.logits, &batch.labels)?;
            let loss_value = tape.value(loss).scalar_value().expect("scalar");
            if !loss_value.is_finite() {
                return Err(CoreError::Diverged(alloc::format!(
                    "loss became {loss_value} at epoch {epoch} (seed {seed})"
                )));
            }
            loss_sum += loss_value;
            batches += 1;

            let mut grads = tape.backward(loss)?;
            let per_param: Vec<Option<DenseMatrix>> =
                rec.param_ids.iter().map(|&id| grads.take(id)).collect();
            optimizer.begin_step();
            let mut idx = 0;
            clf.visit_params_mut(&mut |p| {
                optimizer.apply(idx, p, per_param[idx].as_ref());
                idx += 1;
            });
        }

        let train_acc = evaluate_inductive_on(clf, train_set, &train_eval, cfg.batch_size)?;
        let test_acc = evaluate_inductive_on(clf, test_set, &test_eval, cfg.batch_size)?;
        let trans_acc = if trans_eval.is_empty() {
            -1.0
        } else {
            evaluate_transductive_on(clf, test_set, &trans_eval, train_set, cfg.batch_size, seed)?
        };
        history.push(EpochStats {
            epoch,
            train_acc,
            test_acc_inductive: test_acc,
            test_acc_transductive: trans_acc,
            loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
        });
    }
    Ok(history)
}

fn subsample_indices(n: usize, limit: usize, rng: &mut SeededRng) -> Vec<usize> {
    if limit == 0 || n == 0 {
        return Vec::new();
    }
    if n <= limit {
        (0..n).collect()
    } else {
        rng.sample_indices(n, limit)
    }
}

/// Inductive accuracy over the whole set, scored in batches of `batch_size`.
/// A final short batch is padded by wrapping around to the first rows; padded
/// rows are not scored.
pub fn evaluate_inductive(clf: &Classifier, set: &Dataset, batch_size: usize) -> Result<f64> {
    let all: Vec<usize> = (0..set.len()).collect();
    evaluate_inductive_on(clf, set, &all, batch_size)
}

fn evaluate_inductive_on(
    clf: &Classifier,
    set: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let scored = chunk.len();
        let mut rows: Vec<usize> = chunk.to_vec();
        // Wrap-around padding keeps short tails batchable for graph models.
        let mut filler = 0;
        while rows.len() < clf.min_batch() {
            rows.push(indices[filler % indices.len()]);
            filler += 1;
        }
        let batch = set.subset(&rows);
        let preds = clf.predict_inductive(&batch.features)?;
        for i in 0..scored {
            if preds[i] == batch.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Transductive accuracy: each selected test row is classified inside a batch
/// of `batch_size - 1` training-pool rows. The pool draw for test row `i`
/// comes from `substream(seed, [EVAL, i])`, so severity sweeps that reuse the
/// same seed see identical pools.
pub fn evaluate_transductive(
    clf: &Classifier,
    test_set: &Dataset,
    pool: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let all: Vec<usize> = (0..test_set.len()).collect();
    evaluate_transductive_on(clf, test_set, &all, pool, batch_size, seed)
}

fn evaluate_transductive_on(
    clf: &Classifier,
    test_set: &Dataset,
    indices: &[usize],
    pool: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for &i in indices {
        let mut rng = SeededRng::substream(seed, &[stream::EVAL, i as u64]);
        let pred =
            clf.predict_transductive(test_set.features.row(i), &pool.features, batch_size, &mut rng)?;
        if pred == test_set.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// One offending entry from a finite-difference sweep.
#[derive(Clone, Debug)]
pub struct FdEntry {
    pub name: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Worst offenders sorted by descending relative error (at most 10).
    pub worst: Vec<FdEntry>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Compare every analytic gradient entry against central finite differences
/// of the Eval-phase loss. When a parameter has more than `max_per_param`
/// entries, a seeded subsample is checked instead. Relative error is
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_difference_check(
    clf: &mut Classifier,
    x: &DenseMatrix,
    labels: &[usize],
    step: f64,
    tolerance: f64,
    max_per_param: usize,
    rng: &mut SeededRng,
) -> Result<FdReport> {
    if step <= 0.0 {
        return Err(CoreError::Parameter(alloc::format!(
            "finite-difference step {step} must be positive"
        )));
    }

    // Analytic gradients, aligned with the parameter visitation order.
    let mut tape = Tape::new();
    let rec = clf.record_forward(&mut tape, x, Phase::Eval)?;
    let loss = tape.softmax_cross_entropy(rec.logits, labels)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Option<DenseMatrix>> =
        rec.param_ids.iter().map(|&id| grads.take(id)).collect();

    let mut names: Vec<String> = Vec::new();
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    clf.visit_params(&mut |name, p| {
        names.push(String::from(name));
        shapes.push(p.shape());
    });

    let mut entries: Vec<FdEntry> = Vec::new();
    let mut checked = 0usize;
    let mut max_rel = 0.0f64;

    for (pidx, (rows, cols)) in shapes.iter().enumerate() {
        let total = rows * cols;
        let picks: Vec<usize> = if total <= max_per_param {
            (0..total).collect()
        } else {
            rng.sample_indices(total, max_per_param)
        };
        for &flat in &picks {
            let (r, c) = (flat / cols, flat % cols);
            let base = perturb(clf, pidx, r, c, step);
            let plus = eval_loss(clf, x, labels)?;
            perturb_set(clf, pidx, r, c, base - step);
            let minus = eval_loss(clf, x, labels)?;
            perturb_set(clf, pidx, r, c, base);

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pidx]
                .as_ref()
                .map_or(0.0, |g| g.get(r, c));
            let rel = math::abs(a - numeric) / 1.0f64.max(math::abs(a));
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
            }
            if rel > tolerance {
                entries.push(FdEntry {
                    name: names[pidx].clone(),
                    row: r,
                    col: c,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }

    entries.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    entries.truncate(10);
    Ok(FdReport {
        checked,
        max_rel_err: max_rel,
        tolerance,
        worst: entries,
    })
}

fn eval_loss(clf: &Classifier, x: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let rec = clf.record_forward(&mut tape, x, Phase::Eval)?;
    let loss = tape.softmax_cross_entropy(rec.logits, labels)?;
    Ok(tape.value(loss).scalar_value().expect("scalar"))
}

/// Add `delta` to entry (r, c) of parameter `pidx`; returns the old value.
fn perturb(clf: &mut Classifier, pidx: usize, r: usize, c: usize, delta: f64) -> f64 {
    let mut old = 0.0;
    let mut idx = 0;
    clf.visit_params_mut(&mut |p| {
        if idx == pidx {
            old = p.get(r, c);
            p.set(r, c, old + delta);
        }
        idx += 1;
    });
    old
}

fn perturb_set(clf: &mut Classifier, pidx: usize, r: usize, c: usize, value: f64) {
    let mut idx = 0;
    clf.visit_params_mut(&mut |p| {
        if idx == pidx {
            p.set(r, c, value);
        }
        idx += 1;
    });
}
