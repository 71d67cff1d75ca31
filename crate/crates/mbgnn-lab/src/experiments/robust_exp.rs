//! `robust`: transductive accuracy under graded input corruption for the
//! configured model, with a matched baseline (same encoder, linear head)
//! trained alongside for the comparison the curves exist to make.

use mbgnn_core::robust::{robustness_curve, Corruption};
use serde::Serialize;

use crate::config::Config;
use crate::dataset::DatasetSource;
use crate::experiments::train_exp::{run_training, train_config};
use crate::experiments::RunContext;
use crate::LabError;

#[derive(Serialize)]
pub struct CurvePoint {
    pub severity: f64,
    pub accuracy: f64,
}

#[derive(Serialize)]
pub struct RobustnessResult {
    pub seed: u64,
    pub corruption: String,
    pub model_kind: String,
    pub model_curve: Vec<CurvePoint>,
    pub baseline_curve: Option<Vec<CurvePoint>>,
    /// model minus baseline accuracy at the largest severity.
    pub gap_at_top_severity: Option<f64>,
}

pub fn corruption_builder(cfg: &Config) -> Result<Box<dyn Fn(f64) -> Corruption>, LabError> {
    match cfg.get_str("robust.kind", "noise") {
        "noise" => Ok(Box::new(|s| Corruption::PixelGaussianNoise { sigma: s })),
        "blur" => Ok(Box::new(|s| Corruption::GaussianBlur { sigma: s })),
        other => Err(LabError::Config(format!(
            "robust.kind `{other}` is not one of noise|blur"
        ))),
    }
}

pub fn run(ctx: &RunContext) -> Result<(), LabError> {
    ctx.echo_config()?;
    let severities = ctx
        .cfg
        .get_f64_list("robust.severities", &[0.0, 0.5, 1.0, 1.5, 2.0])?;
    let corruption = corruption_builder(&ctx.cfg)?;
    let tc = train_config(&ctx.cfg)?;

    let source = DatasetSource::from_config(&ctx.cfg)?;
    let (train_set, test_set) = source.load(&ctx.cfg, ctx.seed)?;

    let (clf, _, _) = run_training(&ctx.cfg, ctx.seed)?;
    let model_curve = robustness_curve(
        &clf,
        &test_set,
        &train_set,
        corruption.as_ref(),
        &severities,
        tc.batch_size,
        ctx.seed,
    )?;

    let model_kind = ctx.cfg.get_str("model.kind", "mbgnn").to_string();
    let baseline_curve = if model_kind != "baseline" {
        let mut base_cfg = ctx.cfg.clone();
        base_cfg.set("model.kind", "baseline");
        let (base, _, _) = run_training(&base_cfg, ctx.seed)?;
        Some(robustness_curve(
            &base,
            &test_set,
            &train_set,
            corruption.as_ref(),
            &severities,
            tc.batch_size,
            ctx.seed,
        )?)
    } else {
        None
    };

    let gap = baseline_curve.as_ref().map(|b| {
        let top_model = model_curve.last().map_or(0.0, |p| p.1);
        let top_base = b.last().map_or(0.0, |p| p.1);
        top_model - top_base
    });
    let result = RobustnessResult {
        seed: ctx.seed,
        corruption: ctx.cfg.get_str("robust.kind", "noise").to_string(),
        model_kind,
        model_curve: model_curve
            .iter()
            .map(|&(severity, accuracy)| CurvePoint { severity, accuracy })
            .collect(),
        baseline_curve: baseline_curve.map(|c| {
            c.iter()
                .map(|&(severity, accuracy)| CurvePoint { severity, accuracy })
                .collect()
        }),
        gap_at_top_severity: gap,
    };
    if let Some(g) = result.gap_at_top_severity {
        println!("robust: gap at top severity = {g:.4}");
    }
    ctx.write_json("robustness.json", &result)
}
