//! Construct classifiers and GAN nets from a resolved [`Config`].

use mbgnn_core::model::{
    AttnSpec, BaselineModel, Classifier, CombineMode, Encoder, LayerSpec, MbgnnModel, ModelSpec,
};
use mbgnn_core::optim::Optimizer;
use mbgnn_core::rng::{stream, SeededRng};

use crate::config::Config;
use crate::LabError;

/// Model shape resolved against the dataset it will train on.
#[derive(Clone, Copy, Debug)]
pub struct DataShape {
    pub input_dim: usize,
    pub classes: usize,
    pub image_shape: Option<(usize, usize, usize)>,
}

pub fn build_encoder(cfg: &Config, shape: &DataShape) -> Result<Encoder, LabError> {
    match cfg.get_str("model.encoder", "mlp") {
        "identity" => Ok(Encoder::Identity {
            dim: shape.input_dim,
        }),
        "mlp" => {
            let tail = cfg.get_usize_list("model.mlp_widths", &[32, 32])?;
            let mut widths = vec![shape.input_dim];
            widths.extend(tail);
            Ok(Encoder::Mlp { widths })
        }
        "tiny_conv" => {
            let Some((height, width, channels)) = shape.image_shape else {
                return Err(LabError::Config(
                    "tiny_conv needs dataset.image_height/width[/channels]".into(),
                ));
            };
            Ok(Encoder::TinyConv {
                height,
                width,
                channels,
                conv1: cfg.get_usize("model.conv1", 4)?,
                conv2: cfg.get_usize("model.conv2", 8)?,
                out: cfg.get_usize("model.embed_dim", 16)?,
            })
        }
        other => Err(LabError::Config(format!(
            "model.encoder `{other}` is not one of identity|mlp|tiny_conv"
        ))),
    }
}

pub fn combine_mode(cfg: &Config) -> Result<CombineMode, LabError> {
    match cfg.get_str("model.combine", "dropfeat") {
        "concat" => Ok(CombineMode::Concat),
        "sum" | "weighted_add" => Ok(CombineMode::WeightedAdd(cfg.get_f64("model.alpha", 0.5)?)),
        "dropfeat" | "drop_feat" => Ok(CombineMode::DropFeat(cfg.get_f64("model.p", 0.5)?)),
        other => Err(LabError::Config(format!(
            "model.combine `{other}` is not one of concat|sum|dropfeat"
        ))),
    }
}

/// Build the configured classifier; weights come from the `INIT` substream
/// of `seed`.
pub fn build_classifier(
    cfg: &Config,
    shape: &DataShape,
    seed: u64,
) -> Result<Classifier, LabError> {
    let encoder = build_encoder(cfg, shape)?;
    let mut rng = SeededRng::substream(seed, &[stream::INIT]);
    match cfg.get_str("model.kind", "mbgnn") {
        "baseline" => Ok(Classifier::Baseline(BaselineModel::init(
            encoder,
            shape.classes,
            &mut rng,
        )?)),
        kind @ ("mbgnn" | "attn_mbgnn") => {
            let mode = combine_mode(cfg)?;
            let layers = cfg.get_usize("model.layers", 1)?;
            let hidden = cfg.get_usize("model.hidden", 32)?;
            let attention = if kind == "attn_mbgnn" {
                Some(AttnSpec {
                    heads: cfg.get_usize("model.heads", 2)?,
                    proj_dim: cfg.get_usize("model.attn_dim", 16)?,
                    hidden: cfg.get_usize("model.attn_hidden", 16)?,
                })
            } else {
                None
            };
            let spec = ModelSpec {
                encoder,
                layers: (0..layers)
                    .map(|_| LayerSpec {
                        out_dim: hidden,
                        mode,
                        attention: attention.clone(),
                    })
                    .collect(),
                k: cfg.get_usize("model.k", 8)?,
                classes: shape.classes,
            };
            Ok(Classifier::Mbgnn(MbgnnModel::init(spec, &mut rng)?))
        }
        other => Err(LabError::Config(format!(
            "model.kind `{other}` is not one of baseline|mbgnn|attn_mbgnn"
        ))),
    }
}

pub fn build_optimizer(cfg: &Config) -> Result<Optimizer, LabError> {
    match cfg.get_str("train.optimizer", "adam") {
        "adam" => Ok(Optimizer::adam(cfg.get_f64("train.lr", 1e-3)?)),
        "sgd" => Ok(Optimizer::sgd(
            cfg.get_f64("train.lr", 1e-3)?,
            cfg.get_f64("train.momentum", 0.0)?,
        )),
        other => Err(LabError::Config(format!(
            "train.optimizer `{other}` is not one of adam|sgd"
        ))),
    }
}
