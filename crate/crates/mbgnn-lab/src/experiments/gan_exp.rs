//! `gan`: train a small GAN on a Gaussian ring with the configured
//! discriminator head and track NDB along the way. Emits the trajectory as
//! CSV, per-evaluation bin z-scores as a JSON sidecar, and generated samples
//! as MBGT tensors.

use std::fmt::Write as _;

use mbgnn_core::data::RingMixture;
use mbgnn_core::gan::{
    train_gan, DiscHead, DiscriminatorNet, GanConfig, GanRunResult, GeneratorNet, McMbgnnLayer,
    PsiMode,
};
use mbgnn_core::model::{he_init, Encoder, EncoderNet};
use mbgnn_core::rng::{stream, SeededRng};
use serde::Serialize;

use crate::config::Config;
use crate::experiments::RunContext;
use crate::{mbgt, LabError};

#[derive(Serialize)]
pub struct GanSummary {
    pub seed: u64,
    pub head: String,
    pub iterations: usize,
    pub initial_ndb: f64,
    pub final_ndb: f64,
    pub min_ndb: f64,
    pub max_ndb: f64,
}

#[derive(Serialize)]
pub struct BinZRecord {
    pub iteration: usize,
    pub ndb: f64,
    pub z_scores: Vec<f64>,
}

pub fn gan_config(cfg: &Config) -> Result<GanConfig, LabError> {
    Ok(GanConfig {
        iterations: cfg.get_usize("gan.iterations", 3000)?,
        batch_size: cfg.get_usize("gan.batch_size", 64)?,
        lr_generator: cfg.get_f64("gan.lr_gen", 2e-4)?,
        lr_discriminator: cfg.get_f64("gan.lr_disc", 1e-4)?,
        adam_beta1: cfg.get_f64("gan.adam_beta1", 0.5)?,
        ndb_every: cfg.get_usize("gan.ndb_every", 500)?,
        ndb_bins: cfg.get_usize("gan.ndb_bins", 20)?,
        ndb_samples: cfg.get_usize("gan.ndb_samples", 2000)?,
        ndb_significance: cfg.get_f64("gan.ndb_significance", 0.05)?,
    })
}

pub fn build_gan_nets(
    cfg: &Config,
    seed: u64,
) -> Result<(GeneratorNet, DiscriminatorNet), LabError> {
    let noise_dim = cfg.get_usize("gan.noise_dim", 8)?;
    let gen_hidden = cfg.get_usize("gan.gen_hidden", 32)?;
    let disc_hidden = cfg.get_usize("gan.disc_hidden", 32)?;
    let disc_feat = cfg.get_usize("gan.disc_feat", 16)?;
    let mut rng = SeededRng::substream(seed, &[stream::INIT]);

    let out_scale = cfg.get_f64("gan.out_scale", 4.0)?;
    let generator = GeneratorNet::init(vec![noise_dim, gen_hidden, gen_hidden, 2], out_scale, &mut rng)?;
    let encoder = EncoderNet::init(
        Encoder::Mlp {
            widths: vec![2, disc_hidden, disc_feat],
        },
        &mut rng,
    )?;
    let head = match cfg.get_str("gan.head", "plain") {
        "plain" => DiscHead::Plain {
            weight: he_init(&mut rng, disc_feat, 1, disc_feat),
            bias: mbgnn_core::DenseMatrix::zeros(1, 1),
        },
        "minibatch_disc" => DiscHead::Mc(McMbgnnLayer::minibatch_discrimination(
            disc_feat,
            cfg.get_usize("gan.heads", 4)?,
            cfg.get_usize("gan.proj_dim", 8)?,
            cfg.get_usize("gan.batch_size", 64)?,
            &mut rng,
        )?),
        "mc_mbgnn" => {
            let psi = match cfg.get_str("gan.psi", "abs_diff") {
                "abs_diff" => PsiMode::AbsDiff,
                "concat" => PsiMode::Concat,
                other => {
                    return Err(LabError::Config(format!(
                        "gan.psi `{other}` is not one of abs_diff|concat"
                    )))
                }
            };
            DiscHead::Mc(McMbgnnLayer::init(
                disc_feat,
                cfg.get_usize("gan.heads", 4)?,
                cfg.get_usize("gan.proj_dim", 8)?,
                cfg.get_usize("gan.phi_hidden", 8)?,
                cfg.get_usize("gan.feat_dim", 4)?,
                psi,
                cfg.get_usize("gan.batch_size", 64)?,
                &mut rng,
            )?)
        }
        other => {
            return Err(LabError::Config(format!(
                "gan.head `{other}` is not one of plain|minibatch_disc|mc_mbgnn"
            )))
        }
    };
    Ok((generator, DiscriminatorNet { encoder, head }))
}

pub fn ring_from_config(cfg: &Config) -> Result<RingMixture, LabError> {
    Ok(RingMixture::new(
        cfg.get_usize("gan.modes", 8)?,
        cfg.get_f64("gan.radius", 2.0)?,
        cfg.get_f64("gan.sigma", 0.05)?,
    )?)
}

pub fn run_gan(cfg: &Config, seed: u64) -> Result<GanRunResult, LabError> {
    let (mut generator, mut discriminator) = build_gan_nets(cfg, seed)?;
    let ring = ring_from_config(cfg)?;
    let gc = gan_config(cfg)?;
    Ok(train_gan(
        &mut generator,
        &mut discriminator,
        &|n, rng| ring.sample(n, rng),
        &gc,
        seed,
    )?)
}

pub fn trajectory_csv(result: &GanRunResult) -> String {
    let mut out = String::from("step,ndb\n");
    for point in &result.trajectory {
        let _ = writeln!(out, "{},{}", point.iteration, point.report.ndb);
    }
    out
}

pub fn run(ctx: &RunContext) -> Result<(), LabError> {
    ctx.echo_config()?;
    let result = run_gan(&ctx.cfg, ctx.seed)?;

    ctx.write_text("ndb_trajectory.csv", &trajectory_csv(&result))?;
    let sidecar: Vec<BinZRecord> = result
        .trajectory
        .iter()
        .map(|p| BinZRecord {
            iteration: p.iteration,
            ndb: p.report.ndb,
            z_scores: p.report.bins.iter().map(|b| b.z).collect(),
        })
        .collect();
    ctx.write_json("ndb_bins.json", &sidecar)?;
    mbgt::write_matrix(&ctx.out.join("generated_samples.mbgt"), &result.final_samples)?;

    let ndbs: Vec<f64> = result.trajectory.iter().map(|p| p.report.ndb).collect();
    let summary = GanSummary {
        seed: ctx.seed,
        head: ctx.cfg.get_str("gan.head", "plain").to_string(),
        iterations: gan_config(&ctx.cfg)?.iterations,
        initial_ndb: *ndbs.first().expect("at least one evaluation"),
        final_ndb: *ndbs.last().expect("at least one evaluation"),
        min_ndb: ndbs.iter().copied().fold(f64::INFINITY, f64::min),
        max_ndb: ndbs.iter().copied().fold(0.0, f64::max),
    };
    println!(
        "gan ({}): ndb {} -> {}",
        summary.head, summary.initial_ndb, summary.final_ndb
    );
    ctx.write_json("summary.json", &summary)
}
