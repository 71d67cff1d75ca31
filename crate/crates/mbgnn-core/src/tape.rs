//! Tape-based reverse-mode differentiation.
//!
//! Every forward operation appends a node holding its value and enough
//! structure to run the local backward rule. Node inputs always precede the
//! node itself, so one reverse sweep over the tape is a valid topological
//! traversal. Graph neighbor structure enters only as frozen [`Edges`]
//! constants: top-k selection carries no gradient.
//!
//! Subgradient conventions: ReLU has gradient 0 at exactly 0; LeakyReLU uses
//! its negative-side slope at 0; |x| uses 0 at 0.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::Edges;
use crate::math;
use crate::matrix::{matmul, matmul_nt, matmul_tn, CoreError, DenseMatrix, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Geometry of a same-padded 2-D convolution expressed through im2col.
/// Images are row-major `(y, x, channel)` flattened into one matrix row per
/// sample; the kernel size must be odd.
#[derive(Clone, Debug)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }
}

enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    LinComb { ca: f64, a: NodeId, cb: f64, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    RowScale { x: NodeId, mask: Rc<Vec<f64>> },
    ConcatCols { parts: Vec<NodeId> },
    Reshape { x: NodeId },
    NeighborMean { x: NodeId, edges: Rc<Edges> },
    EdgeAbsDiff { u: NodeId, edges: Rc<Edges> },
    EdgeConcatPair { u: NodeId, edges: Rc<Edges> },
    EdgeSoftmax { scores: NodeId, per_node: usize },
    EdgeWeightedSum { weights: NodeId, x: NodeId, edges: Rc<Edges> },
    EdgeSum { p: NodeId, per_node: usize },
    RowL1 { x: NodeId },
    Exp { x: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, labels: Rc<Vec<usize>> },
    SigmoidBceMean { logits: NodeId, targets: Rc<Vec<f64>> },
    Im2Col { x: NodeId, geom: Rc<ConvGeom> },
    AvgPool2 { x: NodeId, height: usize, width: usize, channels: usize },
}

struct TapeNode {
    value: DenseMatrix,
    op: Op,
}

/// Recorded computation graph; values are computed eagerly as ops are pushed.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<DenseMatrix> {
        self.grads[id.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> NodeId {
        self.nodes.push(TapeNode { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: DenseMatrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul { a, b }))
    }

    /// Broadcast-add a 1 x d bias row onto every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(CoreError::Shape(format!(
                "add_bias: bias {:?} onto {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut v = xv.clone();
        for i in 0..v.rows() {
            for (o, &b) in v.row_mut(i).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(v, Op::AddBias { x, bias }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    /// `ca * a + cb * b` with constant coefficients.
    pub fn lin_comb(&mut self, ca: f64, a: NodeId, cb: f64, b: NodeId) -> Result<NodeId> {
        let mut v = self.value(a).scale(ca);
        v.axpy(cb, self.value(b))?;
        Ok(self.push(v, Op::LinComb { ca, a, cb, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale { x, c })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| if t > 0.0 { t } else { 0.0 });
        self.push(v, Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let v = self.value(x).map(|t| if t > 0.0 { t } else { slope * t });
        self.push(v, Op::LeakyRelu { x, slope })
    }

    /// Multiply row i of `x` by the constant `mask[i]`.
    pub fn row_scale(&mut self, x: NodeId, mask: Rc<Vec<f64>>) -> Result<NodeId> {
        let xv = self.value(x);
        if mask.len() != xv.rows() {
            return Err(CoreError::Shape(format!(
                "row_scale: {} mask entries vs {} rows",
                mask.len(),
                xv.rows()
            )));
        }
        let mut v = xv.clone();
        for i in 0..v.rows() {
            let m = mask[i];
            for o in v.row_mut(i) {
                *o *= m;
            }
        }
        Ok(self.push(v, Op::RowScale { x, mask }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = DenseMatrix::concat_cols(&values)?;
        Ok(self.push(
            v,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Reinterpret the row-major buffer under a new shape (same length).
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.len() != rows * cols {
            return Err(CoreError::Shape(format!(
                "reshape {:?} -> {rows}x{cols}",
                xv.shape()
            )));
        }
        let v = DenseMatrix::from_vec(rows, cols, xv.as_slice().to_vec())?;
        Ok(self.push(v, Op::Reshape { x }))
    }

    /// Uniform neighbor mean over frozen edges: out row i is the average of
    /// `x` rows listed as targets of node i.
    pub fn neighbor_mean(&mut self, x: NodeId, edges: Rc<Edges>) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rows() != edges.nodes {
            return Err(CoreError::Shape(format!(
                "neighbor_mean: {} rows vs {} nodes",
                xv.rows(),
                edges.nodes
            )));
        }
        let inv = 1.0 / edges.per_node as f64;
        let mut v = DenseMatrix::zeros(edges.nodes, xv.cols());
        for i in 0..edges.nodes {
            let orow = v.row_mut(i);
            for &j in edges.targets(i) {
                for (o, &t) in orow.iter_mut().zip(xv.row(j)) {
                    *o += t;
                }
            }
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        Ok(self.push(v, Op::NeighborMean { x, edges }))
    }

    /// Per-edge elementwise absolute difference `|u_i - u_j|`; output has one
    /// row per edge slot, ordered node-major.
    pub fn edge_abs_diff(&mut self, u: NodeId, edges: Rc<Edges>) -> Result<NodeId> {
        let uv = self.value(u);
        if uv.rows() != edges.nodes {
            return Err(CoreError::Shape(format!(
                "edge_abs_diff: {} rows vs {} nodes",
                uv.rows(),
                edges.nodes
            )));
        }
        let d = uv.cols();
        let mut v = DenseMatrix::zeros(edges.nodes * edges.per_node, d);
        for i in 0..edges.nodes {
            for (slot, &j) in edges.targets(i).iter().enumerate() {
                let orow = v.row_mut(i * edges.per_node + slot);
                for ((o, &a), &b) in orow.iter_mut().zip(uv.row(i)).zip(uv.row(j)) {
                    *o = math::abs(a - b);
                }
            }
        }
        Ok(self.push(v, Op::EdgeAbsDiff { u, edges }))
    }

    /// Per-edge concatenation `[u_i ; u_j]`, one row per edge slot.
    pub fn edge_concat_pair(&mut self, u: NodeId, edges: Rc<Edges>) -> Result<NodeId> {
        let uv = self.value(u);
        if uv.rows() != edges.nodes {
            return Err(CoreError::Shape(format!(
                "edge_concat_pair: {} rows vs {} nodes",
                uv.rows(),
                edges.nodes
            )));
        }
        let d = uv.cols();
        let mut v = DenseMatrix::zeros(edges.nodes * edges.per_node, 2 * d);
        for i in 0..edges.nodes {
            for (slot, &j) in edges.targets(i).iter().enumerate() {
                let orow = v.row_mut(i * edges.per_node + slot);
                orow[..d].copy_from_slice(uv.row(i));
                orow[d..].copy_from_slice(uv.row(j));
            }
        }
        Ok(self.push(v, Op::EdgeConcatPair { u, edges }))
    }

    /// Softmax over each node's block of `per_node` consecutive score rows.
    /// `scores` must be a single-column matrix.
    pub fn edge_softmax(&mut self, scores: NodeId, per_node: usize) -> Result<NodeId> {
        let sv = self.value(scores);
        if sv.cols() != 1 || per_node == 0 || sv.rows() % per_node != 0 {
            return Err(CoreError::Shape(format!(
                "edge_softmax: {:?} with block {per_node}",
                sv.shape()
            )));
        }
        let mut v = sv.clone();
        let blocks = sv.rows() / per_node;
        for b in 0..blocks {
            let r = b * per_node;
            let mut mx = f64::NEG_INFINITY;
            for s in 0..per_node {
                mx = mx.max(v.get(r + s, 0));
            }
            let mut sum = 0.0;
            for s in 0..per_node {
                let e = math::exp(v.get(r + s, 0) - mx);
                v.set(r + s, 0, e);
                sum += e;
            }
            for s in 0..per_node {
                let e = v.get(r + s, 0);
                v.set(r + s, 0, e / sum);
            }
        }
        Ok(self.push(v, Op::EdgeSoftmax { scores, per_node }))
    }

    /// Weighted neighbor aggregation: out row i = sum over slots of
    /// `weights[edge] * x[target]`. `weights` is single-column, edge-ordered.
    pub fn edge_weighted_sum(
        &mut self,
        weights: NodeId,
        x: NodeId,
        edges: Rc<Edges>,
    ) -> Result<NodeId> {
        let (wv, xv) = (self.value(weights), self.value(x));
        if wv.cols() != 1 || wv.rows() != edges.nodes * edges.per_node {
            return Err(CoreError::Shape(format!(
                "edge_weighted_sum: weights {:?} for {} edges",
                wv.shape(),
                edges.nodes * edges.per_node
            )));
        }
        if xv.rows() != edges.nodes {
            return Err(CoreError::Shape(format!(
                "edge_weighted_sum: {} rows vs {} nodes",
                xv.rows(),
                edges.nodes
            )));
        }
        let d = xv.cols();
        let mut v = DenseMatrix::zeros(edges.nodes, d);
        for i in 0..edges.nodes {
            let orow = v.row_mut(i);
            for (slot, &j) in edges.targets(i).iter().enumerate() {
                let w = wv.get(i * edges.per_node + slot, 0);
                for (o, &t) in orow.iter_mut().zip(xv.row(j)) {
                    *o += w * t;
                }
            }
        }
        Ok(self.push(v, Op::EdgeWeightedSum { weights, x, edges }))
    }

    /// Sum each node's block of `per_node` consecutive rows.
    pub fn edge_sum(&mut self, p: NodeId, per_node: usize) -> Result<NodeId> {
        let pv = self.value(p);
        if per_node == 0 || pv.rows() % per_node != 0 {
            return Err(CoreError::Shape(format!(
                "edge_sum: {:?} with block {per_node}",
                pv.shape()
            )));
        }
        let nodes = pv.rows() / per_node;
        let mut v = DenseMatrix::zeros(nodes, pv.cols());
        for i in 0..nodes {
            let orow = v.row_mut(i);
            for s in 0..per_node {
                for (o, &t) in orow.iter_mut().zip(pv.row(i * per_node + s)) {
                    *o += t;
                }
            }
        }
        Ok(self.push(v, Op::EdgeSum { p, per_node }))
    }

    /// Per-row L1 norm, producing a single-column matrix.
    pub fn row_l1(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut v = DenseMatrix::zeros(xv.rows(), 1);
        for i in 0..xv.rows() {
            let mut acc = 0.0;
            for &t in xv.row(i) {
                acc += math::abs(t);
            }
            v.set(i, 0, acc);
        }
        self.push(v, Op::RowL1 { x })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(math::exp);
        self.push(v, Op::Exp { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(math::sigmoid);
        self.push(v, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(math::tanh);
        self.push(v, Op::Tanh { x })
    }

    /// Mean softmax cross-entropy over the batch, as a 1x1 node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(CoreError::Shape(format!(
                "softmax_cross_entropy: {} labels vs {} rows",
                labels.len(),
                lv.rows()
            )));
        }
        let classes = lv.cols();
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(CoreError::Data(format!(
                    "label {y} out of range for {classes} classes"
                )));
            }
            let row = lv.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for &v in row {
                sum += math::exp(v - mx);
            }
            total += mx + math::ln(sum) - row[y];
        }
        let v = DenseMatrix::scalar(total / labels.len() as f64);
        Ok(self.push(
            v,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: Rc::new(labels.to_vec()),
            },
        ))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against targets, computed
    /// from raw logits for stability. `targets` is row-major and must match
    /// the logits length.
    pub fn sigmoid_bce_mean(&mut self, logits: NodeId, targets: Rc<Vec<f64>>) -> Result<NodeId> {
        let lv = self.value(logits);
        if targets.len() != lv.len() {
            return Err(CoreError::Shape(format!(
                "sigmoid_bce_mean: {} targets vs {} logits",
                targets.len(),
                lv.len()
            )));
        }
        let mut total = 0.0;
        for (&z, &t) in lv.as_slice().iter().zip(targets.iter()) {
            total += math::ln_1p_exp(z) - z * t;
        }
        let v = DenseMatrix::scalar(total / targets.len() as f64);
        Ok(self.push(v, Op::SigmoidBceMean { logits, targets }))
    }

    /// Zero-padded same-size im2col: input rows are flattened images, output
    /// rows are flattened kernel patches, ordered (sample, y, x).
    pub fn im2col(&mut self, x: NodeId, geom: Rc<ConvGeom>) -> Result<NodeId> {
        let xv = self.value(x);
        let (h, w, c, k) = (geom.height, geom.width, geom.channels, geom.kernel);
        if k % 2 == 0 {
            return Err(CoreError::Parameter(format!("even conv kernel {k}")));
        }
        if xv.cols() != h * w * c {
            return Err(CoreError::Shape(format!(
                "im2col: {} cols vs {h}x{w}x{c}",
                xv.cols()
            )));
        }
        let pad = (k - 1) / 2;
        let batch = xv.rows();
        let mut v = DenseMatrix::zeros(batch * h * w, geom.patch_len());
        for b in 0..batch {
            let img = xv.row(b);
            for y in 0..h {
                for xx in 0..w {
                    let orow = v.row_mut((b * h + y) * w + xx);
                    let mut col = 0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - pad as isize;
                            let sx = xx as isize + kx as isize - pad as isize;
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                let base = (sy as usize * w + sx as usize) * c;
                                orow[col..col + c].copy_from_slice(&img[base..base + c]);
                            }
                            col += c;
                        }
                    }
                }
            }
        }
        Ok(self.push(v, Op::Im2Col { x, geom }))
    }

    /// 2x2 average pooling with stride 2 on flattened images; height and
    /// width must be even.
    pub fn avg_pool2(
        &mut self,
        x: NodeId,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        if height % 2 != 0 || width % 2 != 0 {
            return Err(CoreError::Parameter(format!(
                "avg_pool2 on odd image {height}x{width}"
            )));
        }
        if xv.cols() != height * width * channels {
            return Err(CoreError::Shape(format!(
                "avg_pool2: {} cols vs {height}x{width}x{channels}",
                xv.cols()
            )));
        }
        let (oh, ow) = (height / 2, width / 2);
        let mut v = DenseMatrix::zeros(xv.rows(), oh * ow * channels);
        for b in 0..xv.rows() {
            let img = xv.row(b);
            let orow = v.row_mut(b);
            for y in 0..oh {
                for xx in 0..ow {
                    for ch in 0..channels {
                        let mut acc = 0.0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                acc += img[((2 * y + dy) * width + 2 * xx + dx) * channels + ch];
                            }
                        }
                        orow[(y * ow + xx) * channels + ch] = acc * 0.25;
                    }
                }
            }
        }
        Ok(self.push(
            v,
            Op::AvgPool2 {
                x,
                height,
                width,
                channels,
            },
        ))
    }

    /// Reverse sweep from a scalar root; returns per-node gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).scalar_value().is_none() {
            return Err(CoreError::Parameter(String::from(
                "backward root must be a 1x1 scalar",
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(DenseMatrix::scalar(1.0));

        for id in (0..=root.0).rev() {
            let g = match grads[id].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let da = matmul_nt(&g, self.value(*b))?;
                    let db = matmul_tn(self.value(*a), &g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::AddBias { x, bias } => {
                    let mut db = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, g)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::LinComb { ca, a, cb, b } => {
                    accumulate(&mut grads, *a, g.scale(*ca))?;
                    accumulate(&mut grads, *b, g.scale(*cb))?;
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads, *x, g.scale(*c))?;
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (o, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if v <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (o, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if v <= 0.0 {
                            *o *= slope;
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::RowScale { x, mask } => {
                    let mut dx = g;
                    for i in 0..dx.rows() {
                        let m = mask[i];
                        for o in dx.row_mut(i) {
                            *o *= m;
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut dp = DenseMatrix::zeros(g.rows(), pc);
                        for i in 0..g.rows() {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + pc]);
                        }
                        offset += pc;
                        accumulate(&mut grads, p, dp)?;
                    }
                }
                Op::Reshape { x } => {
                    let (r, c) = self.value(*x).shape();
                    let dx = DenseMatrix::from_vec(r, c, g.as_slice().to_vec())?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::NeighborMean { x, edges } => {
                    let inv = 1.0 / edges.per_node as f64;
                    let mut dx = DenseMatrix::zeros(self.value(*x).rows(), g.cols());
                    for i in 0..edges.nodes {
                        for &j in edges.targets(i) {
                            for (o, &v) in dx.row_mut(j).iter_mut().zip(g.row(i)) {
                                *o += inv * v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::EdgeAbsDiff { u, edges } => {
                    let uv = self.value(*u);
                    let mut du = DenseMatrix::zeros(uv.rows(), uv.cols());
                    for i in 0..edges.nodes {
                        for (slot, &j) in edges.targets(i).iter().enumerate() {
                            let grow = g.row(i * edges.per_node + slot);
                            for c in 0..uv.cols() {
                                let diff = uv.get(i, c) - uv.get(j, c);
                                let s = if diff > 0.0 {
                                    1.0
                                } else if diff < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                };
                                let gv = s * grow[c];
                                du.set(i, c, du.get(i, c) + gv);
                                du.set(j, c, du.get(j, c) - gv);
                            }
                        }
                    }
                    accumulate(&mut grads, *u, du)?;
                }
                Op::EdgeConcatPair { u, edges } => {
                    let uv = self.value(*u);
                    let d = uv.cols();
                    let mut du = DenseMatrix::zeros(uv.rows(), d);
                    for i in 0..edges.nodes {
                        for (slot, &j) in edges.targets(i).iter().enumerate() {
                            let grow = g.row(i * edges.per_node + slot);
                            for c in 0..d {
                                du.set(i, c, du.get(i, c) + grow[c]);
                                du.set(j, c, du.get(j, c) + grow[d + c]);
                            }
                        }
                    }
                    accumulate(&mut grads, *u, du)?;
                }
                Op::EdgeSoftmax { scores, per_node } => {
                    let y = &self.nodes[id].value;
                    let blocks = y.rows() / per_node;
                    let mut ds = DenseMatrix::zeros(y.rows(), 1);
                    for b in 0..blocks {
                        let r = b * per_node;
                        let mut dot = 0.0;
                        for s in 0..*per_node {
                            dot += y.get(r + s, 0) * g.get(r + s, 0);
                        }
                        for s in 0..*per_node {
                            let yv = y.get(r + s, 0);
                            ds.set(r + s, 0, yv * (g.get(r + s, 0) - dot));
                        }
                    }
                    accumulate(&mut grads, *scores, ds)?;
                }
                Op::EdgeWeightedSum { weights, x, edges } => {
                    let (wv, xv) = (self.value(*weights), self.value(*x));
                    let mut dw = DenseMatrix::zeros(wv.rows(), 1);
                    let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for i in 0..edges.nodes {
                        let grow = g.row(i);
                        for (slot, &j) in edges.targets(i).iter().enumerate() {
                            let e = i * edges.per_node + slot;
                            let mut dot = 0.0;
                            for (gc, &t) in grow.iter().zip(xv.row(j)) {
                                dot += gc * t;
                            }
                            dw.set(e, 0, dw.get(e, 0) + dot);
                            let w = wv.get(e, 0);
                            for (o, &gc) in dx.row_mut(j).iter_mut().zip(grow) {
                                *o += w * gc;
                            }
                        }
                    }
                    accumulate(&mut grads, *weights, dw)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::EdgeSum { p, per_node } => {
                    let pv = self.value(*p);
                    let mut dp = DenseMatrix::zeros(pv.rows(), pv.cols());
                    for i in 0..g.rows() {
                        for s in 0..*per_node {
                            dp.row_mut(i * per_node + s).copy_from_slice(g.row(i));
                        }
                    }
                    accumulate(&mut grads, *p, dp)?;
                }
                Op::RowL1 { x } => {
                    let xv = self.value(*x);
                    let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for i in 0..xv.rows() {
                        let gi = g.get(i, 0);
                        for (o, &v) in dx.row_mut(i).iter_mut().zip(xv.row(i)) {
                            *o = if v > 0.0 {
                                gi
                            } else if v < 0.0 {
                                -gi
                            } else {
                                0.0
                            };
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Exp { x } => {
                    let dx = g.hadamard(&self.nodes[id].value)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Sigmoid { x } => {
                    let y = &self.nodes[id].value;
                    let dx = DenseMatrix::from_fn(y.rows(), y.cols(), |i, j| {
                        let s = y.get(i, j);
                        g.get(i, j) * s * (1.0 - s)
                    });
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[id].value;
                    let dx = DenseMatrix::from_fn(y.rows(), y.cols(), |i, j| {
                        let t = y.get(i, j);
                        g.get(i, j) * (1.0 - t * t)
                    });
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let gv = g.scalar_value().expect("scalar grad");
                    let lv = self.value(*logits);
                    let sm = crate::matrix::row_softmax(lv);
                    let scale = gv / labels.len() as f64;
                    let mut dl = sm;
                    for (i, &y) in labels.iter().enumerate() {
                        dl.set(i, y, dl.get(i, y) - 1.0);
                        for o in dl.row_mut(i) {
                            *o *= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, dl)?;
                }
                Op::SigmoidBceMean { logits, targets } => {
                    let gv = g.scalar_value().expect("scalar grad");
                    let lv = self.value(*logits);
                    let scale = gv / targets.len() as f64;
                    let mut dl = DenseMatrix::zeros(lv.rows(), lv.cols());
                    for (o, (&z, &t)) in dl
                        .as_mut_slice()
                        .iter_mut()
                        .zip(lv.as_slice().iter().zip(targets.iter()))
                    {
                        *o = scale * (math::sigmoid(z) - t);
                    }
                    accumulate(&mut grads, *logits, dl)?;
                }
                Op::Im2Col { x, geom } => {
                    let xv = self.value(*x);
                    let (h, w, c, k) = (geom.height, geom.width, geom.channels, geom.kernel);
                    let pad = (k - 1) / 2;
                    let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for b in 0..xv.rows() {
                        let drow = dx.row_mut(b);
                        for y in 0..h {
                            for xx in 0..w {
                                let grow = g.row((b * h + y) * w + xx);
                                let mut col = 0;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let sy = y as isize + ky as isize - pad as isize;
                                        let sx = xx as isize + kx as isize - pad as isize;
                                        if sy >= 0
                                            && sy < h as isize
                                            && sx >= 0
                                            && sx < w as isize
                                        {
                                            let base = (sy as usize * w + sx as usize) * c;
                                            for ch in 0..c {
                                                drow[base + ch] += grow[col + ch];
                                            }
                                        }
                                        col += c;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::AvgPool2 {
                    x,
                    height,
                    width,
                    channels,
                } => {
                    let xv = self.value(*x);
                    let (ow, c) = (width / 2, *channels);
                    let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for b in 0..xv.rows() {
                        let grow = g.row(b);
                        let drow = dx.row_mut(b);
                        for y in 0..height / 2 {
                            for xx in 0..ow {
                                for ch in 0..c {
                                    let gv = 0.25 * grow[(y * ow + xx) * c + ch];
                                    for dy in 0..2 {
                                        for dxp in 0..2 {
                                            drow[((2 * y + dy) * width + 2 * xx + dxp) * c + ch] +=
                                                gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], id: NodeId, delta: DenseMatrix) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.axpy(1.0, &delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}
