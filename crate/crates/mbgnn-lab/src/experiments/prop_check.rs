//! `prop-check`: numerically verify the perturbation-attenuation property
//! across k values and mixing variants, reporting frozen-neighborhood ratios
//! (the provable quantity) alongside the descriptive unfrozen ones.

use mbgnn_core::model::{Encoder, EncoderNet};
use mbgnn_core::robust::{verify_attenuation, AttenuationVariant};
use mbgnn_core::rng::{stream, SeededRng};
use serde::Serialize;

use crate::config::Config;
use crate::experiments::RunContext;
use crate::LabError;

#[derive(Serialize)]
pub struct VariantReport {
    pub variant: String,
    pub k: usize,
    pub expected_ratio: f64,
    pub measured_ratio: f64,
    pub max_relative_error: f64,
    pub trials: usize,
    pub mean_unfrozen_postnonlin_ratio: f64,
    pub neighborhood_changes: usize,
    pub passed: bool,
}

#[derive(Serialize)]
pub struct PropCheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub all_passed: bool,
    pub checks: Vec<VariantReport>,
}

const TOLERANCE: f64 = 1e-9;

pub fn run_checks(cfg: &Config, seed: u64) -> Result<PropCheckReport, LabError> {
    let k_values = cfg.get_usize_list("prop.k_values", &[1, 3, 7, 15])?;
    let dim = cfg.get_usize("prop.dim", 8)?;
    let trials = cfg.get_usize("prop.trials", 10)?;
    let alpha = cfg.get_f64("prop.alpha", 0.7)?;
    let p = cfg.get_f64("prop.p", 0.35)?;
    let classes = 5usize;

    let mut checks = Vec::new();
    let mut all_passed = true;
    for &k in &k_values {
        let batch_size = cfg.get_usize("prop.batch_size", 0)?;
        let batch_size = if batch_size > k { batch_size } else { k + 5 };
        for (name, variant) in [
            ("gcn_self_loop", AttenuationVariant::GcnSelfLoop),
            ("weighted_add", AttenuationVariant::WeightedAdd(alpha)),
            ("dropfeat_eval", AttenuationVariant::DropFeatEval(p)),
        ] {
            let mut rng = SeededRng::substream(seed, &[stream::INIT, k as u64]);
            let encoder = EncoderNet::init(
                Encoder::Mlp {
                    widths: vec![dim, dim + 4, dim],
                },
                &mut rng,
            )?;
            let w = rng.gaussian_matrix(dim, classes, 1.0)?;
            let mut worst_err = 0.0f64;
            let mut worst_ratio = variant.expected_ratio(k);
            let mut unfrozen_sum = 0.0;
            let mut changes = 0usize;
            for t in 0..trials {
                let mut trial_rng =
                    SeededRng::substream(seed, &[stream::DATA, k as u64, t as u64]);
                let batch = trial_rng.gaussian_matrix(batch_size, dim, 1.0)?;
                let dx: Vec<f64> = (0..dim).map(|_| 0.3 * trial_rng.next_gaussian()).collect();
                let report =
                    verify_attenuation(&encoder, &w, &batch, k, &dx, batch_size - 1, variant)?;
                let expected = report.expected;
                let rel = (report.ratio_frozen - expected).abs() / expected.abs().max(1e-300);
                if rel > worst_err {
                    worst_err = rel;
                    worst_ratio = report.ratio_frozen;
                }
                unfrozen_sum += report.ratio_unfrozen_postnonlin;
                if report.neighborhood_changed {
                    changes += 1;
                }
            }
            let passed = worst_err <= TOLERANCE;
            all_passed &= passed;
            checks.push(VariantReport {
                variant: name.to_string(),
                k,
                expected_ratio: variant.expected_ratio(k),
                measured_ratio: worst_ratio,
                max_relative_error: worst_err,
                trials,
                mean_unfrozen_postnonlin_ratio: unfrozen_sum / trials as f64,
                neighborhood_changes: changes,
                passed,
            });
        }
    }
    Ok(PropCheckReport {
        seed,
        tolerance: TOLERANCE,
        all_passed,
        checks,
    })
}

pub fn run(ctx: &RunContext) -> Result<(), LabError> {
    ctx.echo_config()?;
    let report = run_checks(&ctx.cfg, ctx.seed)?;
    for c in &report.checks {
        println!(
            "prop-check: k={:2} {:14} expected {:.9} measured {:.9} ({})",
            c.k,
            c.variant,
            c.expected_ratio,
            c.measured_ratio,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    ctx.write_json("prop_check.json", &report)?;
    if !report.all_passed {
        return Err(LabError::Data(
            "attenuation ratios exceeded tolerance".into(),
        ));
    }
    Ok(())
}
