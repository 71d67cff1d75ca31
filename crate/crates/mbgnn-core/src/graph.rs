//! Per-batch graph induction: top-k cosine neighborhoods and learned
//! multi-head attention weights over those neighborhoods.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::math;
use crate::matrix::{cosine_similarity_matrix, matmul, CoreError, DenseMatrix, Result};

/// Neighborhood structure of one mini-batch: for each of `batch_size` nodes,
/// an ordered list of exactly `k` neighbor indices, plus optional per-head
/// attention weights aligned with those lists.
///
/// Invariants: no self references, no duplicates, all indices in
/// `[0, batch_size)`. When weights are present, each per-node row is a
/// probability vector (nonnegative, sums to 1).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGraph {
    batch_size: usize,
    k: usize,
    neighbors: Vec<usize>,
    /// `weights[n][i * k + j]` = weight of neighbor slot `j` of node `i` for head `n`.
    weights: Option<Vec<Vec<f64>>>,
}

impl BatchGraph {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn heads(&self) -> usize {
        self.weights.as_ref().map_or(0, |w| w.len())
    }

    pub fn weights(&self) -> Option<&[Vec<f64>]> {
        self.weights.as_deref()
    }

    pub fn head_weights(&self, head: usize, i: usize) -> &[f64] {
        let w = self.weights.as_ref().expect("graph has no weights");
        &w[head][i * self.k..(i + 1) * self.k]
    }

    /// Dense 0/1 adjacency (1 where j is a neighbor of i).
    pub fn dense_adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.batch_size, self.batch_size);
        for i in 0..self.batch_size {
            for &j in self.neighbors(i) {
                a.set(i, j, 1.0);
            }
        }
        a
    }

    /// Frozen edge list view for recording on a tape.
    pub fn edges(&self) -> Rc<Edges> {
        Rc::new(Edges {
            nodes: self.batch_size,
            per_node: self.k,
            idx: self.neighbors.clone(),
        })
    }
}

/// Immutable edge lists with a fixed number of slots per node. This is the
/// form tape operations hold on to; neighbor structure never carries a
/// gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Edges {
    pub nodes: usize,
    pub per_node: usize,
    /// `idx[i * per_node + s]` = target of slot `s` of node `i`.
    pub idx: Vec<usize>,
}

impl Edges {
    /// Complete graph including self edges (used by the MC-MBGNN head, which
    /// aggregates over every j in the batch, i itself included).
    pub fn complete_with_self(nodes: usize) -> Rc<Edges> {
        let mut idx = Vec::with_capacity(nodes * nodes);
        for _ in 0..nodes {
            idx.extend(0..nodes);
        }
        Rc::new(Edges {
            nodes,
            per_node: nodes,
            idx,
        })
    }

    pub fn targets(&self, i: usize) -> &[usize] {
        &self.idx[i * self.per_node..(i + 1) * self.per_node]
    }
}

/// Build the top-k cosine neighborhood graph over the rows of `h`.
///
/// Neighbor lists hold the k largest off-diagonal similarities of each row,
/// sorted by (similarity descending, index ascending); ties always go to the
/// lower index.
pub fn topk_graph(h: &DenseMatrix, k: usize) -> Result<BatchGraph> {
    let b = h.rows();
    if k == 0 || k >= b {
        return Err(CoreError::Parameter(format!(
            "k = {k} must satisfy 1 <= k <= B-1 with B = {b}"
        )));
    }
    let sim = cosine_similarity_matrix(h);
    let mut neighbors = Vec::with_capacity(b * k);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(b - 1);
    for i in 0..b {
        candidates.clear();
        for j in 0..b {
            if j != i {
                candidates.push((sim.get(i, j), j));
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        neighbors.extend(candidates[..k].iter().map(|&(_, j)| j));
    }
    Ok(BatchGraph {
        batch_size: b,
        k,
        neighbors,
        weights: None,
    })
}

/// Uniform neighbor average: row i of the output is `(1/k) * sum_{j in N(i)} hbar_j`.
pub fn neighbor_mean(g: &BatchGraph, hbar: &DenseMatrix) -> Result<DenseMatrix> {
    if hbar.rows() != g.batch_size() {
        return Err(CoreError::Shape(format!(
            "neighbor_mean: {} embedding rows vs batch of {}",
            hbar.rows(),
            g.batch_size()
        )));
    }
    let d = hbar.cols();
    let inv_k = 1.0 / g.k() as f64;
    let mut out = DenseMatrix::zeros(g.batch_size(), d);
    for i in 0..g.batch_size() {
        let orow = out.row_mut(i);
        for &j in g.neighbors(i) {
            let nrow = hbar.row(j);
            for c in 0..d {
                orow[c] += nrow[c];
            }
        }
        for v in orow.iter_mut() {
            *v *= inv_k;
        }
    }
    Ok(out)
}

/// Per-head parameters of the attention scorer: a linear transform followed
/// by a one-hidden-layer network with LeakyReLU(0.2) that maps the
/// elementwise absolute difference of transformed embeddings to a scalar
/// score.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    /// d x d' transform applied to both endpoints.
    pub proj: DenseMatrix,
    /// d' x hidden.
    pub phi_w1: DenseMatrix,
    /// 1 x hidden.
    pub phi_b1: DenseMatrix,
    /// hidden x 1.
    pub phi_w2: DenseMatrix,
    /// 1 x 1.
    pub phi_b2: DenseMatrix,
}

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub heads: Vec<AttentionHead>,
}

impl AttentionHead {
    /// Scalar score of the edge feature `z = |u_i - u_j|`.
    pub fn score(&self, z: &[f64]) -> f64 {
        let hidden = self.phi_w1.cols();
        let mut total = self.phi_b2.get(0, 0);
        for hcol in 0..hidden {
            let mut acc = self.phi_b1.get(0, hcol);
            for (r, &zr) in z.iter().enumerate() {
                acc += zr * self.phi_w1.get(r, hcol);
            }
            let act = if acc >= 0.0 { acc } else { LEAKY_SLOPE * acc };
            total += act * self.phi_w2.get(hcol, 0);
        }
        total
    }
}

/// Attach per-head attention weights to a top-k graph.
///
/// For each head n, weight of edge (i, j) is the softmax over j in N(i) of
/// `phi(|W_n h_i - W_n h_j|)`; self connections stay excluded because the
/// neighbor lists never contain them.
pub fn attention_weights(
    h: &DenseMatrix,
    g: &BatchGraph,
    params: &AttentionParams,
) -> Result<BatchGraph> {
    let b = g.batch_size();
    let k = g.k();
    if h.rows() != b {
        return Err(CoreError::Shape(format!(
            "attention_weights: {} rows vs batch {b}",
            h.rows()
        )));
    }
    let mut weights = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let u = matmul(h, &head.proj)?;
        let dp = u.cols();
        let mut w = Vec::with_capacity(b * k);
        let mut scores = Vec::with_capacity(k);
        let mut z = alloc::vec![0.0; dp];
        for i in 0..b {
            scores.clear();
            for &j in g.neighbors(i) {
                let (ui, uj) = (u.row(i), u.row(j));
                for c in 0..dp {
                    z[c] = math::abs(ui[c] - uj[c]);
                }
                scores.push(head.score(&z));
            }
            let mx = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
            let mut sum = 0.0;
            for s in scores.iter_mut() {
                *s = math::exp(*s - mx);
                sum += *s;
            }
            w.extend(scores.iter().map(|&e| e / sum));
        }
        weights.push(w);
    }
    Ok(BatchGraph {
        batch_size: b,
        k,
        neighbors: g.neighbors.clone(),
        weights: Some(weights),
    })
}

/// Attention-weighted neighbor aggregation averaged over heads:
/// row i = `(1/N) * sum_n sum_{j in N(i)} w[n][i][j] * hbar_j`.
pub fn attention_neighbor_mean(g: &BatchGraph, hbar: &DenseMatrix) -> Result<DenseMatrix> {
    let heads = g.heads();
    if heads == 0 {
        return Err(CoreError::Parameter(
            "attention_neighbor_mean on a graph without weights".into(),
        ));
    }
    if hbar.rows() != g.batch_size() {
        return Err(CoreError::Shape(format!(
            "attention_neighbor_mean: {} rows vs batch of {}",
            hbar.rows(),
            g.batch_size()
        )));
    }
    let d = hbar.cols();
    let mut out = DenseMatrix::zeros(g.batch_size(), d);
    for n in 0..heads {
        for i in 0..g.batch_size() {
            let ws = g.head_weights(n, i);
            for (slot, &j) in g.neighbors(i).iter().enumerate() {
                let w = ws[slot];
                let nrow = hbar.row(j);
                let orow = out.row_mut(i);
                for c in 0..d {
                    orow[c] += w * nrow[c];
                }
            }
        }
    }
    Ok(out.scale(1.0 / heads as f64))
}
