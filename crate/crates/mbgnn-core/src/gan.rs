//! GAN lab: MC-MBGNN discriminator head (edge-feature aggregation over the
//! complete batch graph, self pairs included), the classical mini-batch
//! discrimination features it generalizes, and a desk-scale GAN training
//! loop on 2-D mixtures with NDB evaluated along the way.
//!
//! Real and fake batches are always processed separately, each under its own
//! complete graph. The discriminator loss is binary cross-entropy; the
//! generator uses the non-saturating form (maximize log D on fakes).

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{Edges, LEAKY_SLOPE};
use crate::math;
use crate::matrix::{matmul, CoreError, DenseMatrix, Result};
use crate::model::{he_init, EncoderNet, ParamBinder};
use crate::ndb::{ndb_score, NdbReport};
use crate::optim::Optimizer;
use crate::rng::{stream, SeededRng};
use crate::tape::{NodeId, Tape};

/// Pairwise edge feature: absolute difference or concatenation of the
/// projected endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsiMode {
    AbsDiff,
    Concat,
}

/// Edge scorer phi. The fixed variant `exp(-||z||_1)` with scalar output is
/// the classical mini-batch discrimination kernel.
#[derive(Clone, Debug)]
pub enum PhiNet {
    Learned {
        w1: DenseMatrix,
        b1: DenseMatrix,
        w2: DenseMatrix,
        b2: DenseMatrix,
    },
    FixedExpNegL1,
}

/// One aggregation head: a projection plus its edge scorer.
#[derive(Clone, Debug)]
pub struct McHead {
    pub proj: DenseMatrix,
    pub phi: PhiNet,
}

/// MC-MBGNN layer: per head, edge features are scored and summed over every
/// j in the batch (j = i included); the aggregates are concatenated with the
/// node features and mapped to one logit per sample.
#[derive(Clone, Debug)]
pub struct McMbgnnLayer {
    pub heads: Vec<McHead>,
    pub psi: PsiMode,
    pub w_out: DenseMatrix,
    pub b_out: DenseMatrix,
}

impl McMbgnnLayer {
    /// Learned heads: phi is a one-hidden-layer LeakyReLU network from the
    /// edge feature to `feat_dim` values per edge. `expected_batch` only
    /// scales the output-layer init: the aggregated edge features are sums
    /// over the whole batch, so their rows of `w_out` start `1/B` as large
    /// to keep initial logits O(1).
    pub fn init(
        in_dim: usize,
        heads: usize,
        proj_dim: usize,
        phi_hidden: usize,
        feat_dim: usize,
        psi: PsiMode,
        expected_batch: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if heads == 0 || proj_dim == 0 || phi_hidden == 0 || feat_dim == 0 {
            return Err(CoreError::Parameter(
                "mc-mbgnn sizes must be positive".into(),
            ));
        }
        let phi_in = match psi {
            PsiMode::AbsDiff => proj_dim,
            PsiMode::Concat => 2 * proj_dim,
        };
        let head_list: Vec<McHead> = (0..heads)
            .map(|_| McHead {
                proj: he_init(rng, in_dim, proj_dim, in_dim),
                phi: PhiNet::Learned {
                    w1: he_init(rng, phi_in, phi_hidden, phi_in),
                    b1: DenseMatrix::zeros(1, phi_hidden),
                    w2: he_init(rng, phi_hidden, feat_dim, phi_hidden),
                    b2: DenseMatrix::zeros(1, feat_dim),
                },
            })
            .collect();
        let cat = in_dim + heads * feat_dim;
        let w_out = scaled_output_init(cat, in_dim, expected_batch, rng);
        Ok(McMbgnnLayer {
            heads: head_list,
            psi,
            w_out,
            b_out: DenseMatrix::zeros(1, 1),
        })
    }

    /// Classical mini-batch discrimination as a trainable head: fixed
    /// `exp(-||.||_1)` scorer over absolute differences, scalar aggregates.
    pub fn minibatch_discrimination(
        in_dim: usize,
        heads: usize,
        proj_dim: usize,
        expected_batch: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if heads == 0 || proj_dim == 0 {
            return Err(CoreError::Parameter(
                "minibatch discrimination sizes must be positive".into(),
            ));
        }
        let head_list: Vec<McHead> = (0..heads)
            .map(|_| McHead {
                proj: he_init(rng, in_dim, proj_dim, in_dim),
                phi: PhiNet::FixedExpNegL1,
            })
            .collect();
        let cat = in_dim + heads;
        let w_out = scaled_output_init(cat, in_dim, expected_batch, rng);
        Ok(McMbgnnLayer {
            heads: head_list,
            psi: PsiMode::AbsDiff,
            w_out,
            b_out: DenseMatrix::zeros(1, 1),
        })
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &DenseMatrix)) {
        for (n, head) in self.heads.iter().enumerate() {
            f(&format!("mc.{n}.proj"), &head.proj);
            if let PhiNet::Learned { w1, b1, w2, b2 } = &head.phi {
                f(&format!("mc.{n}.phi_w1"), w1);
                f(&format!("mc.{n}.phi_b1"), b1);
                f(&format!("mc.{n}.phi_w2"), w2);
                f(&format!("mc.{n}.phi_b2"), b2);
            }
        }
        f("mc.out.weight", &self.w_out);
        f("mc.out.bias", &self.b_out);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut DenseMatrix)) {
        for head in self.heads.iter_mut() {
            f(&mut head.proj);
            if let PhiNet::Learned { w1, b1, w2, b2 } = &mut head.phi {
                f(w1);
                f(b1);
                f(w2);
                f(b2);
            }
        }
        f(&mut self.w_out);
        f(&mut self.b_out);
    }

    fn bind(&self, tape: &mut Tape, binder: &mut ParamBinder) -> Vec<NodeId> {
        let mut ids = Vec::new();
        self.visit_params(&mut |_, p| {
            ids.push(binder.bind(tape, p));
        });
        ids
    }

    /// Record the head on pre-bound parameter ids (in `visit_params` order);
    /// returns the per-sample logit column.
    fn record_bound(&self, tape: &mut Tape, ids: &[NodeId], h: NodeId) -> Result<NodeId> {
        let batch = tape.value(h).rows();
        let edges = Edges::complete_with_self(batch);
        let mut parts = Vec::with_capacity(1 + self.heads.len());
        parts.push(h);
        let mut cursor = 0usize;
        let next = |n: usize, cursor: &mut usize| {
            let s = *cursor;
            *cursor += n;
            s
        };
        for head in &self.heads {
            let proj_id = ids[next(1, &mut cursor)];
            let u = tape.matmul(h, proj_id)?;
            let z = match self.psi {
                PsiMode::AbsDiff => tape.edge_abs_diff(u, edges.clone())?,
                PsiMode::Concat => tape.edge_concat_pair(u, edges.clone())?,
            };
            let scored = match &head.phi {
                PhiNet::Learned { .. } => {
                    let s = next(4, &mut cursor);
                    let (w1, b1, w2, b2) = (ids[s], ids[s + 1], ids[s + 2], ids[s + 3]);
                    let hid = tape.matmul(z, w1)?;
                    let hid = tape.add_bias(hid, b1)?;
                    let hid = tape.leaky_relu(hid, LEAKY_SLOPE);
                    let out = tape.matmul(hid, w2)?;
                    tape.add_bias(out, b2)?
                }
                PhiNet::FixedExpNegL1 => {
                    let l1 = tape.row_l1(z);
                    let neg = tape.scale(l1, -1.0);
                    tape.exp(neg)
                }
            };
            let agg = tape.edge_sum(scored, batch)?;
            parts.push(agg);
        }
        let w_out = ids[next(1, &mut cursor)];
        let b_out = ids[next(1, &mut cursor)];
        let cat = tape.concat_cols(&parts)?;
        let z = tape.matmul(cat, w_out)?;
        tape.add_bias(z, b_out)
    }

    /// Per-head aggregated edge features (no output layer), for inspection
    /// and the reduction check.
    pub fn aggregated_features(&self, h: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let hid = tape.leaf(h.clone());
        let ids = self.bind(&mut tape, &mut binder);
        // Rebuild just the aggregation part per head.
        let batch = h.rows();
        let edges = Edges::complete_with_self(batch);
        let mut out = Vec::with_capacity(self.heads.len());
        let mut cursor = 0usize;
        for head in &self.heads {
            let proj_id = ids[cursor];
            cursor += 1;
            let u = tape.matmul(hid, proj_id)?;
            let z = match self.psi {
                PsiMode::AbsDiff => tape.edge_abs_diff(u, edges.clone())?,
                PsiMode::Concat => tape.edge_concat_pair(u, edges.clone())?,
            };
            let scored = match &head.phi {
                PhiNet::Learned { .. } => {
                    let (w1, b1, w2, b2) = (ids[cursor], ids[cursor + 1], ids[cursor + 2], ids[cursor + 3]);
                    cursor += 4;
                    let hidn = tape.matmul(z, w1)?;
                    let hidn = tape.add_bias(hidn, b1)?;
                    let hidn = tape.leaky_relu(hidn, LEAKY_SLOPE);
                    let o = tape.matmul(hidn, w2)?;
                    tape.add_bias(o, b2)?
                }
                PhiNet::FixedExpNegL1 => {
                    let l1 = tape.row_l1(z);
                    let neg = tape.scale(l1, -1.0);
                    tape.exp(neg)
                }
            };
            let agg = tape.edge_sum(scored, batch)?;
            out.push(tape.value(agg).clone());
        }
        Ok(out)
    }
}

/// Per-sample sigmoid scores of the MC-MBGNN head over one batch.
pub fn mc_mbgnn_forward(layer: &McMbgnnLayer, h_batch: &DenseMatrix) -> Result<Vec<f64>> {
    if h_batch.rows() == 0 {
        return Err(CoreError::Data(String::from("empty batch")));
    }
    let mut tape = Tape::new();
    let mut binder = ParamBinder::new();
    let hid = tape.leaf(h_batch.clone());
    let ids = layer.bind(&mut tape, &mut binder);
    let logits = layer.record_bound(&mut tape, &ids, hid)?;
    Ok(tape
        .value(logits)
        .as_slice()
        .iter()
        .map(|&z| math::sigmoid(z))
        .collect())
}

/// Classical mini-batch discrimination features, computed directly from the
/// per-pair definition: `feat[i][n] = sum_j exp(-||W_n h_i - W_n h_j||_1)`
/// with j running over the whole batch, i included.
pub fn minibatch_discrimination_features(
    h: &DenseMatrix,
    projections: &[DenseMatrix],
) -> Result<DenseMatrix> {
    let b = h.rows();
    let mut out = DenseMatrix::zeros(b, projections.len());
    for (n, proj) in projections.iter().enumerate() {
        let u = matmul(h, proj)?;
        for i in 0..b {
            let mut acc = 0.0;
            for j in 0..b {
                let mut l1 = 0.0;
                for (a, bb) in u.row(i).iter().zip(u.row(j)) {
                    l1 += math::abs(a - bb);
                }
                acc += math::exp(-l1);
            }
            out.set(i, n, acc);
        }
    }
    Ok(out)
}

/// Discriminator head options for the GAN runs.
#[derive(Clone, Debug)]
pub enum DiscHead {
    Plain {
        weight: DenseMatrix,
        bias: DenseMatrix,
    },
    Mc(McMbgnnLayer),
}

/// Discriminator: MLP feature encoder plus a head producing one logit per
/// sample.
#[derive(Clone, Debug)]
pub struct DiscriminatorNet {
    pub encoder: EncoderNet,
    pub head: DiscHead,
}

impl DiscriminatorNet {
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &DenseMatrix)) {
        self.encoder.visit_params(f);
        match &self.head {
            DiscHead::Plain { weight, bias } => {
                f("disc.head.weight", weight);
                f("disc.head.bias", bias);
            }
            DiscHead::Mc(layer) => layer.visit_params(f),
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut DenseMatrix)) {
        self.encoder.visit_params_mut(f);
        match &mut self.head {
            DiscHead::Plain { weight, bias } => {
                f(weight);
                f(bias);
            }
            DiscHead::Mc(layer) => layer.visit_params_mut(f),
        }
    }

    /// Bind all parameters once; the ids can then drive several forwards on
    /// the same tape (real and fake batches are recorded separately).
    pub fn bind(&self, tape: &mut Tape, binder: &mut ParamBinder) -> DiscBinding {
        let start = binder.ids.len();
        self.visit_params(&mut |_, p| {
            binder.bind(tape, p);
        });
        DiscBinding {
            ids: binder.ids[start..].to_vec(),
            encoder_params: {
                let mut n = 0;
                self.encoder.visit_params(&mut |_, _| n += 1);
                n
            },
        }
    }

    /// Record one batch through encoder and head; returns per-sample logits.
    pub fn record_bound(
        &self,
        tape: &mut Tape,
        binding: &DiscBinding,
        x: NodeId,
    ) -> Result<NodeId> {
        let enc_ids = &binding.ids[..binding.encoder_params];
        let head_ids = &binding.ids[binding.encoder_params..];
        let h = self.record_encoder(tape, enc_ids, x)?;
        match &self.head {
            DiscHead::Plain { .. } => {
                let z = tape.matmul(h, head_ids[0])?;
                tape.add_bias(z, head_ids[1])
            }
            DiscHead::Mc(layer) => layer.record_bound(tape, head_ids, h),
        }
    }

    fn record_encoder(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        // MLP-only re-walk against pre-bound ids.
        match &self.encoder.params {
            crate::model::EncoderParams::Identity => Ok(x),
            crate::model::EncoderParams::Mlp(layers) => {
                let mut h = x;
                let last = layers.len() - 1;
                for i in 0..layers.len() {
                    let z = tape.matmul(h, ids[2 * i])?;
                    h = tape.add_bias(z, ids[2 * i + 1])?;
                    if i < last {
                        h = tape.relu(h);
                    }
                }
                Ok(h)
            }
            crate::model::EncoderParams::TinyConv { .. } => Err(CoreError::Parameter(
                "GAN discriminator uses MLP encoders at this scale".into(),
            )),
        }
    }

    /// Eval scores in (0, 1).
    pub fn scores(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let xid = tape.leaf(x.clone());
        let binding = self.bind(&mut tape, &mut binder);
        let logits = self.record_bound(&mut tape, &binding, xid)?;
        Ok(tape
            .value(logits)
            .as_slice()
            .iter()
            .map(|&z| math::sigmoid(z))
            .collect())
    }
}

/// Output-layer init with the aggregated-feature rows shrunk by the batch
/// size their sums scale with.
fn scaled_output_init(
    cat: usize,
    node_rows: usize,
    expected_batch: usize,
    rng: &mut SeededRng,
) -> DenseMatrix {
    let mut w = he_init(rng, cat, 1, cat);
    if expected_batch > 1 {
        let inv = 1.0 / expected_batch as f64;
        for r in node_rows..cat {
            let v = w.get(r, 0) * inv;
            w.set(r, 0, v);
        }
    }
    w
}

pub struct DiscBinding {
    ids: Vec<NodeId>,
    encoder_params: usize,
}

impl DiscBinding {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Generator: MLP from Gaussian noise to sample space. With `out_scale`
/// set, the output is `out_scale * tanh(.)`, bounding samples the way the
/// usual tanh-ended generator does; 0 leaves the output linear.
#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub net: EncoderNet,
    pub out_scale: f64,
}

impl GeneratorNet {
    pub fn init(widths: Vec<usize>, out_scale: f64, rng: &mut SeededRng) -> Result<Self> {
        if out_scale < 0.0 {
            return Err(CoreError::Parameter(format!(
                "negative generator output scale {out_scale}"
            )));
        }
        let mut net = EncoderNet::init(crate::model::Encoder::Mlp { widths }, rng)?;
        if out_scale > 0.0 {
            // Start the squashed output near the center: a saturated tanh at
            // init leaves the generator without usable gradients.
            if let crate::model::EncoderParams::Mlp(layers) = &mut net.params {
                if let Some((w, _)) = layers.last_mut() {
                    *w = w.scale(0.1);
                }
            }
        }
        Ok(GeneratorNet { net, out_scale })
    }

    pub fn noise_dim(&self) -> usize {
        self.net.kind.in_dim()
    }

    pub fn record(&self, tape: &mut Tape, binder: &mut ParamBinder, noise: NodeId) -> Result<NodeId> {
        let raw = self.net.record(tape, binder, noise)?;
        if self.out_scale > 0.0 {
            let squashed = tape.tanh(raw);
            Ok(tape.scale(squashed, self.out_scale))
        } else {
            Ok(raw)
        }
    }

    pub fn generate(&self, noise: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let nid = tape.leaf(noise.clone());
        let out = self.record(&mut tape, &mut binder, nid)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Debug)]
pub struct GanConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Adam first-moment decay for both nets (0.5 is the usual GAN setting).
    pub adam_beta1: f64,
    /// Evaluate NDB every this many iterations (and always at the end).
    pub ndb_every: usize,
    pub ndb_bins: usize,
    pub ndb_samples: usize,
    pub ndb_significance: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            iterations: 3000,
            batch_size: 64,
            lr_generator: 2e-4,
            lr_discriminator: 1e-4,
            adam_beta1: 0.5,
            ndb_every: 500,
            ndb_bins: 20,
            ndb_samples: 2000,
            ndb_significance: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NdbPoint {
    pub iteration: usize,
    pub report: NdbReport,
}

#[derive(Clone, Debug)]
pub struct GanRunResult {
    pub trajectory: Vec<NdbPoint>,
    /// Samples generated from the fixed evaluation noise after training.
    pub final_samples: DenseMatrix,
}

/// Alternating non-saturating GAN training. The NDB reference set and the
/// evaluation noise are drawn once up front, so with zero learning rates the
/// whole trajectory is constant. A non-finite loss aborts the run.
pub fn train_gan(
    generator: &mut GeneratorNet,
    discriminator: &mut DiscriminatorNet,
    sampler: &dyn Fn(usize, &mut SeededRng) -> DenseMatrix,
    cfg: &GanConfig,
    seed: u64,
) -> Result<GanRunResult> {
    if cfg.batch_size == 0 || cfg.iterations == 0 {
        return Err(CoreError::Parameter(
            "gan needs positive batch size and iterations".into(),
        ));
    }
    let mut data_rng = SeededRng::substream(seed, &[stream::DATA]);
    let mut noise_rng = SeededRng::substream(seed, &[stream::GAN]);
    let mut ndb_ref_rng = SeededRng::substream(seed, &[stream::NDB, 0]);
    let mut ndb_noise_rng = SeededRng::substream(seed, &[stream::NDB, 1]);

    let ndb_reference = sampler(cfg.ndb_samples, &mut ndb_ref_rng);
    let eval_noise = ndb_noise_rng
        .gaussian_matrix(cfg.ndb_samples, generator.noise_dim(), 1.0)?;

    let mut opt_g = Optimizer::adam_with_beta1(cfg.lr_generator, cfg.adam_beta1);
    let mut opt_d = Optimizer::adam_with_beta1(cfg.lr_discriminator, cfg.adam_beta1);
    let mut trajectory = Vec::new();

    let evaluate = |iteration: usize,
                        generator: &GeneratorNet,
                        trajectory: &mut Vec<NdbPoint>|
     -> Result<()> {
        let generated = generator.generate(&eval_noise)?;
        let report = ndb_score(
            &ndb_reference,
            &generated,
            cfg.ndb_bins,
            cfg.ndb_significance,
            seed,
        )?;
        trajectory.push(NdbPoint { iteration, report });
        Ok(())
    };

    evaluate(0, generator, &mut trajectory)?;

    for it in 0..cfg.iterations {
        // Discriminator step: real up, detached fakes down.
        let real = sampler(cfg.batch_size, &mut data_rng);
        let noise = noise_rng.gaussian_matrix(cfg.batch_size, generator.noise_dim(), 1.0)?;
        let fake = generator.generate(&noise)?;

        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let binding = discriminator.bind(&mut tape, &mut binder);
        let real_id = tape.leaf(real);
        let fake_id = tape.leaf(fake);
        let real_logits = discriminator.record_bound(&mut tape, &binding, real_id)?;
        let fake_logits = discriminator.record_bound(&mut tape, &binding, fake_id)?;
        let ones = Rc::new(alloc::vec![1.0; cfg.batch_size]);
        let zeros = Rc::new(alloc::vec![0.0; cfg.batch_size]);
        let loss_real = tape.sigmoid_bce_mean(real_logits, ones.clone())?;
        let loss_fake = tape.sigmoid_bce_mean(fake_logits, zeros)?;
        let loss_d = tape.add(loss_real, loss_fake)?;
        let loss_d_value = tape.value(loss_d).scalar_value().expect("scalar");
        if !loss_d_value.is_finite() {
            return Err(CoreError::Diverged(format!(
                "discriminator loss {loss_d_value} at iteration {it} (seed {seed})"
            )));
        }
        let mut grads = tape.backward(loss_d)?;
        let per_param: Vec<Option<DenseMatrix>> =
            binding.ids.iter().map(|&id| grads.take(id)).collect();
        opt_d.begin_step();
        let mut idx = 0;
        discriminator.visit_params_mut(&mut |p| {
            opt_d.apply(idx, p, per_param[idx].as_ref());
            idx += 1;
        });

        // Generator step: push fakes toward the real label.
        let noise = noise_rng.gaussian_matrix(cfg.batch_size, generator.noise_dim(), 1.0)?;
        let mut tape = Tape::new();
        let mut gen_binder = ParamBinder::new();
        let noise_id = tape.leaf(noise);
        let fake_id = generator.record(&mut tape, &mut gen_binder, noise_id)?;
        let gen_ids = gen_binder.ids.clone();
        let mut disc_binder = ParamBinder::new();
        let binding = discriminator.bind(&mut tape, &mut disc_binder);
        let fake_logits = discriminator.record_bound(&mut tape, &binding, fake_id)?;
        let loss_g = tape.sigmoid_bce_mean(fake_logits, ones)?;
        let loss_g_value = tape.value(loss_g).scalar_value().expect("scalar");
        if !loss_g_value.is_finite() {
            return Err(CoreError::Diverged(format!(
                "generator loss {loss_g_value} at iteration {it} (seed {seed})"
            )));
        }
        let mut grads = tape.backward(loss_g)?;
        let per_param: Vec<Option<DenseMatrix>> =
            gen_ids.iter().map(|&id| grads.take(id)).collect();
        opt_g.begin_step();
        let mut idx = 0;
        generator.net.visit_params_mut(&mut |p| {
            opt_g.apply(idx, p, per_param[idx].as_ref());
            idx += 1;
        });

        let step = it + 1;
        if step % cfg.ndb_every == 0 || step == cfg.iterations {
            evaluate(step, generator, &mut trajectory)?;
        }
    }

    let final_samples = generator.generate(&eval_noise)?;
    Ok(GanRunResult {
        trajectory,
        final_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RingMixture;
    use alloc::vec;

    #[test]
    fn identical_embeddings_give_equal_scores_and_b_phi0() {
        let mut rng = SeededRng::new(1);
        let layer = McMbgnnLayer::init(3, 2, 4, 4, 2, PsiMode::AbsDiff, 1, &mut rng).unwrap();
        let b = 5;
        let h = DenseMatrix::from_fn(b, 3, |_, j| [0.4, -1.0, 2.0][j]);
        let scores = mc_mbgnn_forward(&layer, &h).unwrap();
        for s in &scores {
            assert!((s - scores[0]).abs() < 1e-12);
            assert!(*s > 0.0 && *s < 1.0);
        }
        // Each aggregate equals B * phi(0).
        let aggs = layer.aggregated_features(&h).unwrap();
        for (head, agg) in layer.heads.iter().zip(&aggs) {
            let PhiNet::Learned { w1, b1, w2, b2 } = &head.phi else {
                panic!()
            };
            // phi(0) = w2^T leaky(b1) + b2, leaky is elementwise.
            let hidden = b1.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
            let phi0 = matmul(&hidden, w2).unwrap().add(b2).unwrap();
            for i in 0..b {
                for (c, &want) in phi0.row(0).iter().enumerate() {
                    assert!(
                        (agg.get(i, c) - b as f64 * want).abs() < 1e-9,
                        "row {i} col {c}"
                    );
                }
            }
        }
    }

    #[test]
    fn reduction_to_minibatch_discrimination() {
        let mut rng = SeededRng::new(2);
        let layer = McMbgnnLayer::minibatch_discrimination(4, 3, 5, 1, &mut rng).unwrap();
        let h = rng.gaussian_matrix(6, 4, 1.0).unwrap();
        let aggs = layer.aggregated_features(&h).unwrap();
        let projs: Vec<DenseMatrix> = layer.heads.iter().map(|hd| hd.proj.clone()).collect();
        let direct = minibatch_discrimination_features(&h, &projs).unwrap();
        for (n, agg) in aggs.iter().enumerate() {
            assert_eq!(agg.cols(), 1);
            for i in 0..6 {
                assert!(
                    (agg.get(i, 0) - direct.get(i, n)).abs() < 1e-9,
                    "head {n} row {i}: {} vs {}",
                    agg.get(i, 0),
                    direct.get(i, n)
                );
            }
        }
    }

    #[test]
    fn random_batch_matches_per_pair_oracle() {
        // Learned phi, N = 2: brute-force the aggregation per pair.
        let mut rng = SeededRng::new(3);
        let layer = McMbgnnLayer::init(3, 2, 3, 4, 2, PsiMode::AbsDiff, 1, &mut rng).unwrap();
        let h = rng.gaussian_matrix(4, 3, 1.0).unwrap();
        let aggs = layer.aggregated_features(&h).unwrap();
        for (head, agg) in layer.heads.iter().zip(&aggs) {
            let u = matmul(&h, &head.proj).unwrap();
            let PhiNet::Learned { w1, b1, w2, b2 } = &head.phi else {
                panic!()
            };
            for i in 0..4 {
                let mut want = vec![0.0; 2];
                for j in 0..4 {
                    let z = DenseMatrix::from_fn(1, 3, |_, c| math::abs(u.get(i, c) - u.get(j, c)));
                    let mut hid = matmul(&z, w1).unwrap().add(b1).unwrap();
                    hid = hid.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
                    let out = matmul(&hid, w2).unwrap().add(b2).unwrap();
                    for (c, w) in want.iter_mut().enumerate() {
                        *w += out.get(0, c);
                    }
                }
                for (c, &w) in want.iter().enumerate() {
                    assert!((agg.get(i, c) - w).abs() < 1e-12, "row {i} col {c}");
                }
            }
        }
    }

    #[test]
    fn batch_of_one_is_defined() {
        let mut rng = SeededRng::new(4);
        let layer = McMbgnnLayer::init(2, 1, 2, 3, 2, PsiMode::Concat, 1, &mut rng).unwrap();
        let h = rng.gaussian_matrix(1, 2, 1.0).unwrap();
        let scores = mc_mbgnn_forward(&layer, &h).unwrap();
        assert_eq!(scores.len(), 1);
        assert!(scores[0] > 0.0 && scores[0] < 1.0);
    }

    #[test]
    fn scores_permutation_equivariant_and_sum_symmetric() {
        let mut rng = SeededRng::new(5);
        let layer = McMbgnnLayer::init(3, 2, 3, 3, 2, PsiMode::AbsDiff, 1, &mut rng).unwrap();
        let h = rng.gaussian_matrix(5, 3, 1.0).unwrap();
        let scores = mc_mbgnn_forward(&layer, &h).unwrap();
        let perm = [3usize, 1, 4, 0, 2];
        let hp = DenseMatrix::from_fn(5, 3, |i, j| h.get(perm[i], j));
        let scores_p = mc_mbgnn_forward(&layer, &hp).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!((scores_p[i] - scores[p]).abs() < 1e-9);
        }
    }

    #[test]
    fn mc_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(6);
        let mut disc = DiscriminatorNet {
            encoder: EncoderNet::init(
                crate::model::Encoder::Mlp {
                    widths: vec![2, 6, 4],
                },
                &mut rng,
            )
            .unwrap(),
            head: DiscHead::Mc(
                McMbgnnLayer::init(4, 2, 3, 3, 2, PsiMode::AbsDiff, 1, &mut rng).unwrap(),
            ),
        };
        // Self pairs feed exact zeros into phi; zero biases would then park
        // the LeakyReLU input on its kink, where central differences straddle
        // two subgradients. Random biases keep the check at smooth points.
        let mut jitter = SeededRng::new(60);
        disc.visit_params_mut(&mut |p| {
            for v in p.as_mut_slice() {
                *v += 0.05 * jitter.next_gaussian();
            }
        });
        let x = rng.gaussian_matrix(5, 2, 1.0).unwrap();
        let targets = Rc::new(vec![1.0, 0.0, 1.0, 0.0, 1.0]);

        let loss_of = |d: &DiscriminatorNet| -> f64 {
            let mut tape = Tape::new();
            let mut binder = ParamBinder::new();
            let binding = d.bind(&mut tape, &mut binder);
            let xid = tape.leaf(x.clone());
            let logits = d.record_bound(&mut tape, &binding, xid).unwrap();
            let l = tape.sigmoid_bce_mean(logits, targets.clone()).unwrap();
            tape.value(l).scalar_value().unwrap()
        };

        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let binding = disc.bind(&mut tape, &mut binder);
        let xid = tape.leaf(x.clone());
        let logits = disc.record_bound(&mut tape, &binding, xid).unwrap();
        let l = tape.sigmoid_bce_mean(logits, targets.clone()).unwrap();
        let mut grads = tape.backward(l).unwrap();
        let analytic: Vec<Option<DenseMatrix>> =
            binding.ids.iter().map(|&id| grads.take(id)).collect();

        // Spot-check a handful of entries in every parameter block.
        let step = 1e-6;
        let mut pidx = 0;
        let mut failures = Vec::new();
        disc.clone().visit_params(&mut |name, p| {
            for flat in [0usize, p.len() / 2, p.len() - 1] {
                let (r, c) = (flat / p.cols(), flat % p.cols());
                let mut bumped = disc.clone();
                let mut i = 0;
                bumped.visit_params_mut(&mut |q| {
                    if i == pidx {
                        q.set(r, c, q.get(r, c) + step);
                    }
                    i += 1;
                });
                let plus = loss_of(&bumped);
                let mut bumped = disc.clone();
                let mut i = 0;
                bumped.visit_params_mut(&mut |q| {
                    if i == pidx {
                        q.set(r, c, q.get(r, c) - step);
                    }
                    i += 1;
                });
                let minus = loss_of(&bumped);
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic[pidx].as_ref().map_or(0.0, |g| g.get(r, c));
                let rel = math::abs(a - numeric) / 1.0f64.max(math::abs(a));
                if rel > 1e-4 {
                    failures.push((String::from(name), r, c, a, numeric));
                }
            }
            pidx += 1;
        });
        assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
    }

    #[test]
    fn zero_lr_gan_has_constant_ndb_trajectory() {
        let mut rng = SeededRng::new(7);
        let mut gen = GeneratorNet::init(vec![4, 8, 2], 4.0, &mut rng).unwrap();
        let mut disc = DiscriminatorNet {
            encoder: EncoderNet::init(
                crate::model::Encoder::Mlp {
                    widths: vec![2, 8, 4],
                },
                &mut rng,
            )
            .unwrap(),
            head: DiscHead::Plain {
                weight: he_init(&mut rng, 4, 1, 4),
                bias: DenseMatrix::zeros(1, 1),
            },
        };
        let ring = RingMixture::new(8, 2.0, 0.05).unwrap();
        let cfg = GanConfig {
            iterations: 20,
            batch_size: 16,
            lr_generator: 0.0,
            lr_discriminator: 0.0,
            adam_beta1: 0.5,
            ndb_every: 10,
            ndb_bins: 5,
            ndb_samples: 200,
            ndb_significance: 0.05,
        };
        let result = train_gan(
            &mut gen,
            &mut disc,
            &|n, r| ring.sample(n, r),
            &cfg,
            42,
        )
        .unwrap();
        let first = result.trajectory[0].report.ndb;
        for point in &result.trajectory {
            assert_eq!(point.report.ndb, first, "iteration {}", point.iteration);
        }
    }
}
