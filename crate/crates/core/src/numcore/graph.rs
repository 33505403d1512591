//! Reverse-mode automatic differentiation on an eager tape.
//!
//! Every builder method runs the forward computation immediately and records
//! the operation. `backward` replays the tape in reverse creation order,
//! which is a valid reverse topological order because inputs always precede
//! their consumers. A graph is built for one forward pass and discarded.
//!
//! Softmax and log-softmax subtract the lane maximum before exponentiating,
//! so unbounded inner-product scores never overflow.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// a[m,k] · b[k,n]; b may be a vector ([k] treated as n = 1).
    Matmul(NodeId, NodeId),
    /// aᵀ · b for a[k,m], b[k,n]: pairwise inner products of columns.
    MatmulTN(NodeId, NodeId),
    /// Stack inputs as consecutive row blocks (vectors are stacked end to end).
    ConcatRows(Vec<NodeId>),
    /// Place inputs side by side as column blocks; vector inputs are single columns.
    ConcatCols(Vec<NodeId>),
    SliceRange { x: NodeId, start: usize, len: usize },
    Col { x: NodeId, j: usize },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Softmax { x: NodeId, axis: usize },
    LogSoftmax { x: NodeId, axis: usize },
    /// axis 1: out[i] = x[i, idx[i]]; axis 0: out[j] = x[idx[j], j].
    Gather { x: NodeId, axis: usize, indices: Vec<usize> },
    /// -ln(max(x, floor)) elementwise; zero gradient on the clamped branch.
    NegLogFloor { x: NodeId, floor: f64 },
    Scale { x: NodeId, c: f64 },
    Sum(NodeId),
    Mean(NodeId),
    /// mask entries are 0 or 1/(1-ratio); applied identically in backward.
    Dropout { x: NodeId, mask: Tensor },
    /// out[l, :] = table[indices[l], :]; backward scatter-adds into the table.
    EmbeddingLookup { table: NodeId, indices: Vec<usize> },
    /// 1-D convolution over rows of x[len, in_dim] with w[filters, window·in_dim]
    /// and bias b[filters], max-pooled over positions; argmax recorded per filter.
    Conv1dMaxpool {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        window: usize,
        argmax: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Present in train mode; drives dropout masks. Eval graphs carry none,
    /// which makes dropout the identity.
    rng: Option<ChaCha8Rng>,
}

/// Per-graph cache of parameter leaf nodes, so a parameter used by many
/// sentences in one batch enters the tape exactly once.
#[derive(Debug, Default)]
pub struct GraphParams {
    nodes: Vec<Option<NodeId>>,
}

impl GraphParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, g: &mut Graph, store: &ParamStore, id: ParamId) -> NodeId {
        if self.nodes.len() <= id.0 {
            self.nodes.resize(id.0 + 1, None);
        }
        *self.nodes[id.0].get_or_insert_with(|| g.param(store, id))
    }
}

/// Visit every lane of `shape` reduced along `axis` as (start, stride, len).
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    match shape.len() {
        1 => f(0, 1, shape[0]),
        2 => {
            let (m, n) = (shape[0], shape[1]);
            if axis == 1 {
                for i in 0..m {
                    f(i * n, 1, n);
                }
            } else {
                for j in 0..n {
                    f(j, n, m);
                }
            }
        }
        _ => unreachable!("softmax supports rank 1 and 2 only"),
    }
}

impl Graph {
    pub fn new_eval() -> Self {
        Graph {
            nodes: Vec::new(),
            rng: None,
        }
    }

    pub fn new_train(rng: ChaCha8Rng) -> Self {
        Graph {
            nodes: Vec::new(),
            rng: Some(rng),
        }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn shape_err(op: &'static str, details: String) -> Error {
        Error::ShapeMismatch { op, details }
    }

    // ---- leaves ----------------------------------------------------------

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf { param: None }, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Bring a trainable parameter into the graph. Gradients reaching this
    /// node are accumulated into the store by `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let value = store.value(id).clone();
        self.push(value, Op::Leaf { param: Some(id) }, true)
    }

    // ---- elementwise -----------------------------------------------------

    fn binary_same_shape(
        &mut self,
        opname: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Self::shape_err(
                opname,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = &self.nodes[x.0].value;
        let value = Tensor::from_vec(v.shape(), v.data().iter().map(|&a| f(a)).collect()).unwrap();
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| 1.0 / (1.0 + (-a).exp()), Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |a| c * a, Op::Scale { x, c })
    }

    pub fn neg_log_floor(&mut self, x: NodeId, floor: f64) -> NodeId {
        self.unary(x, |a| -a.max(floor).ln(), Op::NegLogFloor { x, floor })
    }

    // ---- matrix products -------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || va.cols() != vb.rows() {
            return Err(Self::shape_err(
                "matmul",
                format!("{:?} · {:?}", va.shape(), vb.shape()),
            ));
        }
        let out_shape = if vb.rank() == 1 {
            vec![va.rows()]
        } else {
            vec![va.rows(), vb.cols()]
        };
        let mut out = Tensor::zeros(&out_shape);
        matmul_acc(va, vb, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Matmul(a, b), needs))
    }

    /// aᵀ · b without materializing the transpose.
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.rows() != vb.rows() {
            return Err(Self::shape_err(
                "matmul_tn",
                format!("{:?}ᵀ · {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = Tensor::zeros(&[va.cols(), vb.cols()]);
        matmul_tn_acc(va, vb, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatmulTN(a, b), needs))
    }

    // ---- structure -------------------------------------------------------

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat_rows", "no inputs".into()));
        }
        let first = &self.nodes[parts[0].0].value;
        let rank = first.rank();
        let cols = first.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rank() != rank || v.cols() != cols {
                return Err(Self::shape_err(
                    "concat_rows",
                    format!("{:?} into block of width {}", v.shape(), cols),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let shape = if rank == 1 {
            vec![rows]
        } else {
            vec![rows, cols]
        };
        let value = Tensor::from_vec(&shape, data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat_cols", "no inputs".into()));
        }
        let rows = self.nodes[parts[0].0].value.rows();
        let mut total_cols = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows() != rows {
                return Err(Self::shape_err(
                    "concat_cols",
                    format!("{:?} into block of height {}", v.shape(), rows),
                ));
            }
            total_cols += v.cols();
        }
        let mut value = Tensor::zeros(&[rows, total_cols]);
        let mut off = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            let c = v.cols();
            for r in 0..rows {
                for j in 0..c {
                    value.data_mut()[r * total_cols + off + j] = v.data()[r * c + j];
                }
            }
            off += c;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Contiguous sub-vector of a rank-1 node.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 1 || start + len > v.len() {
            return Err(Self::shape_err(
                "slice",
                format!("[{start}..{}] of {:?}", start + len, v.shape()),
            ));
        }
        let value = Tensor::vector(v.data()[start..start + len].to_vec());
        let needs = self.needs(x);
        Ok(self.push(value, Op::SliceRange { x, start, len }, needs))
    }

    /// Column j of a matrix as a vector.
    pub fn col(&mut self, x: NodeId, j: usize) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 || j >= v.cols() {
            return Err(Self::shape_err(
                "col",
                format!("column {j} of {:?}", v.shape()),
            ));
        }
        let (m, n) = (v.rows(), v.cols());
        let data = (0..m).map(|i| v.data()[i * n + j]).collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(data), Op::Col { x, j }, needs))
    }

    pub fn gather(&mut self, x: NodeId, axis: usize, indices: Vec<usize>) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 {
            return Err(Self::shape_err("gather", format!("rank {}", v.rank())));
        }
        let (m, n) = (v.rows(), v.cols());
        let (lanes, bound) = if axis == 1 { (m, n) } else { (n, m) };
        if indices.len() != lanes || indices.iter().any(|&i| i >= bound) {
            return Err(Self::shape_err(
                "gather",
                format!("{} indices (< {bound}) for axis {axis} of {:?}", indices.len(), v.shape()),
            ));
        }
        let data = if axis == 1 {
            (0..m).map(|i| v.data()[i * n + indices[i]]).collect()
        } else {
            (0..n).map(|j| v.data()[indices[j] * n + j]).collect()
        };
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(data), Op::Gather { x, axis, indices }, needs))
    }

    // ---- reductions and normalizations -----------------------------------

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(m), Op::Mean(x), needs)
    }

    fn softmax_like(&mut self, x: NodeId, axis: usize, log: bool) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.rank() > 2 || (v.rank() == 2 && axis > 1) {
            return Err(Self::shape_err(
                "softmax",
                format!("axis {axis} of {:?}", v.shape()),
            ));
        }
        let mut data = v.data().to_vec();
        for_each_lane(v.shape(), axis, |start, stride, len| {
            let mut max = f64::NEG_INFINITY;
            for l in 0..len {
                max = max.max(data[start + l * stride]);
            }
            let mut z = 0.0;
            for l in 0..len {
                z += (data[start + l * stride] - max).exp();
            }
            let lse = max + z.ln();
            for l in 0..len {
                let idx = start + l * stride;
                data[idx] = if log {
                    data[idx] - lse
                } else {
                    (data[idx] - lse).exp()
                };
            }
        });
        let value = Tensor::from_vec(v.shape(), data)?;
        let needs = self.needs(x);
        let op = if log {
            Op::LogSoftmax { x, axis }
        } else {
            Op::Softmax { x, axis }
        };
        Ok(self.push(value, op, needs))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.softmax_like(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.softmax_like(x, axis, true)
    }

    // ---- stochastic and embedding ops ------------------------------------

    /// Inverted-scaling dropout. Identity in eval mode or at ratio 0.
    pub fn dropout(&mut self, x: NodeId, ratio: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Self::shape_err(
                "dropout",
                format!("ratio {ratio} outside [0,1)"),
            ));
        }
        let rng = match self.rng.as_mut() {
            Some(rng) if ratio > 0.0 => rng,
            _ => return Ok(x),
        };
        let v = &self.nodes[x.0].value;
        let keep_scale = 1.0 / (1.0 - ratio);
        let mask_data: Vec<f64> = (0..v.len())
            .map(|_| {
                if rng.gen::<f64>() < ratio {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let mask = Tensor::from_vec(v.shape(), mask_data)?;
        let data = v
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&a, &m)| a * m)
            .collect();
        let value = Tensor::from_vec(v.shape(), data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, needs))
    }

    /// Rows of `table` selected by `indices`, as a [len(indices), dim] matrix.
    pub fn embedding_lookup(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let t = &self.nodes[table.0].value;
        if t.rank() != 2 {
            return Err(Self::shape_err("embedding_lookup", "table must be 2-D".into()));
        }
        let (rows, dim) = (t.rows(), t.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Self::shape_err(
                "embedding_lookup",
                format!("index {bad} out of {rows} rows"),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in &indices {
            data.extend_from_slice(&t.data()[i * dim..(i + 1) * dim]);
        }
        let value = Tensor::from_vec(&[indices.len(), dim], data)?;
        let needs = self.needs(table);
        Ok(self.push(value, Op::EmbeddingLookup { table, indices }, needs))
    }

    /// Slide `w` over windows of rows of `x`, add bias, take the position-wise
    /// max per filter. Output is a [filters] vector.
    pub fn conv1d_maxpool(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        window: usize,
    ) -> Result<NodeId> {
        let (vx, vw, vb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        let (len, in_dim) = (vx.rows(), vx.cols());
        let filters = vw.rows();
        if vx.rank() != 2
            || vw.rank() != 2
            || vw.cols() != window * in_dim
            || vb.len() != filters
            || len < window
        {
            return Err(Self::shape_err(
                "conv1d_maxpool",
                format!(
                    "x {:?}, w {:?}, b {:?}, window {window}",
                    vx.shape(),
                    vw.shape(),
                    vb.shape()
                ),
            ));
        }
        let positions = len - window + 1;
        let patch = window * in_dim;
        let mut out = vec![f64::NEG_INFINITY; filters];
        let mut argmax = vec![0usize; filters];
        for p in 0..positions {
            let xwin = &vx.data()[p * in_dim..p * in_dim + patch];
            for f in 0..filters {
                let wrow = &vw.data()[f * patch..(f + 1) * patch];
                let mut s = vb.data()[f];
                for (xv, wv) in xwin.iter().zip(wrow) {
                    s += xv * wv;
                }
                if s > out[f] {
                    out[f] = s;
                    argmax[f] = p;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::vector(out),
            Op::Conv1dMaxpool {
                x,
                w,
                b,
                window,
                argmax,
            },
            needs,
        ))
    }

    // ---- backward --------------------------------------------------------

    fn acc(&mut self, id: NodeId, delta: Tensor) {
        let node = &mut self.nodes[id.0];
        if !node.needs_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(g) => g.add_assign(&delta),
            None => node.grad = Some(delta),
        }
    }

    /// Accumulate d(loss)/d(param) into the store for every parameter the
    /// loss depends on. The tape's own gradient buffers are consumed.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        self.acc(loss, Tensor::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.take().unwrap();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf { param } => {
                    if let Some(pid) = param {
                        store.get_mut(pid).grad.add_assign(&g);
                    }
                }
                Op::Add(a, b) => {
                    self.acc(a, g.clone());
                    self.acc(b, g);
                }
                Op::Sub(a, b) => {
                    let mut gb = g.clone();
                    gb.scale(-1.0);
                    self.acc(a, g);
                    self.acc(b, gb);
                }
                Op::Mul(a, b) => {
                    let va = self.nodes[a.0].value.clone();
                    let vb = &self.nodes[b.0].value;
                    let da = Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect(),
                    )?;
                    let db = Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect(),
                    )?;
                    self.acc(a, da);
                    self.acc(b, db);
                }
                Op::Matmul(a, b) => {
                    // out = a·b  ⇒  da = g·bᵀ, db = aᵀ·g
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut da = Tensor::zeros(va.shape());
                    let mut db = Tensor::zeros(vb.shape());
                    matmul_nt_acc(&g, vb, &mut da);
                    matmul_tn_acc(va, &g, &mut db);
                    self.acc(a, da);
                    self.acc(b, db);
                }
                Op::MatmulTN(a, b) => {
                    // out = aᵀ·b  ⇒  da = b·gᵀ, db = a·g
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut da = Tensor::zeros(va.shape());
                    let mut db = Tensor::zeros(vb.shape());
                    matmul_nt_acc(vb, &g, &mut da);
                    matmul_acc(va, &g, &mut db);
                    self.acc(a, da);
                    self.acc(b, db);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let v = &self.nodes[p.0].value;
                        let n = v.len();
                        let delta = Tensor::from_vec(v.shape(), g.data()[off..off + n].to_vec())?;
                        off += n;
                        self.acc(p, delta);
                    }
                }
                Op::ConcatCols(parts) => {
                    let total_cols = self.nodes[i].value.cols();
                    let rows = self.nodes[i].value.rows();
                    let mut off = 0;
                    for p in parts {
                        let v = &self.nodes[p.0].value;
                        let c = v.cols();
                        let mut delta = Tensor::zeros(v.shape());
                        for r in 0..rows {
                            for j in 0..c {
                                delta.data_mut()[r * c + j] = g.data()[r * total_cols + off + j];
                            }
                        }
                        off += c;
                        self.acc(p, delta);
                    }
                }
                Op::SliceRange { x, start, len } => {
                    let v = &self.nodes[x.0].value;
                    let mut delta = Tensor::zeros(v.shape());
                    delta.data_mut()[start..start + len].copy_from_slice(g.data());
                    self.acc(x, delta);
                }
                Op::Col { x, j } => {
                    let v = &self.nodes[x.0].value;
                    let n = v.cols();
                    let mut delta = Tensor::zeros(v.shape());
                    for (r, &gv) in g.data().iter().enumerate() {
                        delta.data_mut()[r * n + j] = gv;
                    }
                    self.acc(x, delta);
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[i].value;
                    let delta = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gv, &yv)| gv * (1.0 - yv * yv))
                            .collect(),
                    )?;
                    self.acc(x, delta);
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[i].value;
                    let delta = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                            .collect(),
                    )?;
                    self.acc(x, delta);
                }
                Op::Exp(x) => {
                    let y = &self.nodes[i].value;
                    let delta = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gv, &yv)| gv * yv)
                            .collect(),
                    )?;
                    self.acc(x, delta);
                }
                Op::Softmax { x, axis } => {
                    let y = &self.nodes[i].value;
                    let mut delta = Tensor::zeros(y.shape());
                    let (yd, gd) = (y.data(), g.data());
                    let dd = delta.data_mut();
                    for_each_lane(y.shape(), axis, |start, stride, len| {
                        let mut dot = 0.0;
                        for l in 0..len {
                            let idx = start + l * stride;
                            dot += gd[idx] * yd[idx];
                        }
                        for l in 0..len {
                            let idx = start + l * stride;
                            dd[idx] = yd[idx] * (gd[idx] - dot);
                        }
                    });
                    self.acc(x, delta);
                }
                Op::LogSoftmax { x, axis } => {
                    let y = &self.nodes[i].value;
                    let mut delta = Tensor::zeros(y.shape());
                    let (yd, gd) = (y.data(), g.data());
                    let dd = delta.data_mut();
                    for_each_lane(y.shape(), axis, |start, stride, len| {
                        let mut gsum = 0.0;
                        for l in 0..len {
                            gsum += gd[start + l * stride];
                        }
                        for l in 0..len {
                            let idx = start + l * stride;
                            dd[idx] = gd[idx] - yd[idx].exp() * gsum;
                        }
                    });
                    self.acc(x, delta);
                }
                Op::Gather { x, axis, indices } => {
                    let v = &self.nodes[x.0].value;
                    let n = v.cols();
                    let mut delta = Tensor::zeros(v.shape());
                    for (lane, &idx) in indices.iter().enumerate() {
                        let flat = if axis == 1 { lane * n + idx } else { idx * n + lane };
                        delta.data_mut()[flat] += g.data()[lane];
                    }
                    self.acc(x, delta);
                }
                Op::NegLogFloor { x, floor } => {
                    let v = &self.nodes[x.0].value;
                    let delta = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(v.data())
                            .map(|(&gv, &xv)| if xv > floor { -gv / xv } else { 0.0 })
                            .collect(),
                    )?;
                    self.acc(x, delta);
                }
                Op::Scale { x, c } => {
                    let mut delta = g;
                    delta.scale(c);
                    self.acc(x, delta);
                }
                Op::Sum(x) => {
                    let v = &self.nodes[x.0].value;
                    let gv = g.item();
                    let delta = Tensor::from_vec(v.shape(), vec![gv; v.len()])?;
                    self.acc(x, delta);
                }
                Op::Mean(x) => {
                    let v = &self.nodes[x.0].value;
                    let gv = g.item() / v.len() as f64;
                    let delta = Tensor::from_vec(v.shape(), vec![gv; v.len()])?;
                    self.acc(x, delta);
                }
                Op::Dropout { x, mask } => {
                    let delta = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(mask.data())
                            .map(|(&gv, &m)| gv * m)
                            .collect(),
                    )?;
                    self.acc(x, delta);
                }
                Op::EmbeddingLookup { table, indices } => {
                    let t = &self.nodes[table.0].value;
                    let dim = t.cols();
                    let mut delta = Tensor::zeros(t.shape());
                    for (l, &idx) in indices.iter().enumerate() {
                        let grow = &g.data()[l * dim..(l + 1) * dim];
                        let trow = &mut delta.data_mut()[idx * dim..(idx + 1) * dim];
                        for (tv, &gv) in trow.iter_mut().zip(grow) {
                            *tv += gv;
                        }
                    }
                    self.acc(table, delta);
                }
                Op::Conv1dMaxpool {
                    x,
                    w,
                    b,
                    window,
                    argmax,
                } => {
                    let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let in_dim = vx.cols();
                    let patch = window * in_dim;
                    let mut dx = Tensor::zeros(vx.shape());
                    let mut dw = Tensor::zeros(vw.shape());
                    let mut db = Tensor::zeros(self.nodes[b.0].value.shape());
                    for (f, &p) in argmax.iter().enumerate() {
                        let gv = g.data()[f];
                        if gv == 0.0 {
                            continue;
                        }
                        db.data_mut()[f] += gv;
                        let xwin = &vx.data()[p * in_dim..p * in_dim + patch];
                        let wrow = &vw.data()[f * patch..(f + 1) * patch];
                        let dwrow = &mut dw.data_mut()[f * patch..(f + 1) * patch];
                        for (u, (&xv, dwv)) in xwin.iter().zip(dwrow.iter_mut()).enumerate() {
                            *dwv += gv * xv;
                            dx.data_mut()[p * in_dim + u] += gv * wrow[u];
                        }
                    }
                    self.acc(x, dx);
                    self.acc(w, dw);
                    self.acc(b, db);
                }
            }
        }
        Ok(())
    }
}
