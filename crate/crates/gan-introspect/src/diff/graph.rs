//! Reverse-mode compute graph over [`Tensor`] values.
//!
//! A `Graph` records primitive applications in topological order during the
//! forward pass and caches every forward value. `backward` walks the nodes
//! once in reverse order, applying each primitive's adjoint and accumulating
//! gradients into the inputs. Graphs are single-threaded by construction;
//! distinct graphs are independent.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::diff::kernels as k;
use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(0);

/// Index of a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Owning store for trainable parameters, shared across graph builds.
///
/// Each store carries a process-unique identity so that parameters from
/// two different stores (e.g. generator and discriminator) never alias
/// inside one graph. Clones receive a fresh identity.
#[derive(Debug)]
pub struct ParamStore {
    store_id: u64,
    tensors: Vec<Tensor>,
    requires_grad: Vec<bool>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            store_id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            tensors: self.tensors.clone(),
            requires_grad: self.requires_grad.clone(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            store_id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            tensors: Vec::new(),
            requires_grad: Vec::new(),
        }
    }

    pub fn add(&mut self, t: Tensor) -> ParamId {
        self.tensors.push(t);
        self.requires_grad.push(true);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) {
        assert_eq!(self.tensors[id.0].shape(), t.shape(), "param shape is fixed");
        self.tensors[id.0] = t;
    }

    pub fn requires_grad(&self, id: ParamId) -> bool {
        self.requires_grad[id.0]
    }

    pub fn set_requires_grad(&mut self, id: ParamId, flag: bool) {
        self.requires_grad[id.0] = flag;
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        stride: (usize, usize),
        pad: (usize, usize),
    },
    Conv1d {
        stride: usize,
        pad: usize,
    },
    ConvT2d {
        stride: (usize, usize),
        pad: (usize, usize),
    },
    Glu,
    InstanceNorm {
        eps: f64,
    },
    CondInstanceNorm {
        eps: f64,
        codes: Vec<usize>,
    },
    GlobalSumPool,
    FullyConnected,
    Reshape2dTo1d,
    Reshape1dTo2d,
    Reshape,
    RowSelect {
        rows: Vec<usize>,
    },
    BatchDot,
    Add,
    Sub,
    Mul,
    AddScalar,
    MulScalar(f64),
    Abs,
    Sigmoid,
    Ln,
    Mean,
    Sum,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn by_node(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

/// Per-parameter gradients extracted from a [`Gradients`] set.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    by_param: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads {
            by_param: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn insert(&mut self, id: ParamId, g: Tensor) {
        self.by_param[id.0] = Some(g);
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_map: HashMap<(u64, ParamId), NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Kind labels of every node in insertion order; used by structural
    /// assertions (e.g. that a network contains no additive skip path).
    pub fn op_kinds(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|n| match &n.op {
                Op::Leaf => "leaf",
                Op::Conv2d { .. } => "conv2d",
                Op::Conv1d { .. } => "conv1d",
                Op::ConvT2d { .. } => "conv_transpose2d",
                Op::Glu => "glu",
                Op::InstanceNorm { .. } => "instance_norm",
                Op::CondInstanceNorm { .. } => "cond_instance_norm",
                Op::GlobalSumPool => "global_sum_pool",
                Op::FullyConnected => "fully_connected",
                Op::Reshape2dTo1d => "reshape_2d_to_1d",
                Op::Reshape1dTo2d => "reshape_1d_to_2d",
                Op::Reshape => "reshape",
                Op::RowSelect { .. } => "row_select",
                Op::BatchDot => "batch_dot",
                Op::Add => "add",
                Op::Sub => "sub",
                Op::Mul => "mul",
                Op::AddScalar => "add_scalar",
                Op::MulScalar(_) => "mul_scalar",
                Op::Abs => "abs",
                Op::Sigmoid => "sigmoid",
                Op::Ln => "ln",
                Op::Mean => "mean",
                Op::Sum => "sum",
            })
            .collect()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf (no gradient).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Leaf with an explicit gradient flag; used for parameters and for
    /// checking gradients w.r.t. network inputs.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            needs_grad: requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated requests for the same parameter
    /// return the same node so gradients accumulate across uses.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.param_with_grad(store, id, store.requires_grad(id))
    }

    /// Parameter leaf with gradients disabled regardless of the store flag.
    /// Used to treat one network as a constant while training the other.
    pub fn param_detached(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.param_with_grad(store, id, false)
    }

    fn param_with_grad(&mut self, store: &ParamStore, id: ParamId, grad: bool) -> NodeId {
        let key = (store.store_id, id);
        if let Some(&node) = self.param_map.get(&key) {
            return node;
        }
        let node = self.leaf(store.get(id).clone(), grad);
        self.param_map.insert(key, node);
        node
    }

    // ------------------------------------------------------------------
    // network primitives
    // ------------------------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<NodeId> {
        let out = k::conv2d_fwd(
            self.value(x),
            self.value(w),
            Some(self.value(b)),
            stride,
            pad,
        )?;
        Ok(self.push(Op::Conv2d { stride, pad }, vec![x, w, b], out))
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (bs, c, l) = k::dims3(self.value(x))?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 {
            return Err(Error::ShapeError(format!(
                "conv1d weight must be 3-d, got {:?}",
                ws
            )));
        }
        let x4 = self.value(x).reshaped(vec![bs, c, 1, l])?;
        let w4 = self.value(w).reshaped(vec![ws[0], ws[1], 1, ws[2]])?;
        let out4 = k::conv2d_fwd(&x4, &w4, Some(self.value(b)), (1, stride), (0, pad))?;
        let os = out4.shape().to_vec();
        let out = out4.reshaped(vec![os[0], os[1], os[3]])?;
        Ok(self.push(Op::Conv1d { stride, pad }, vec![x, w, b], out))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<NodeId> {
        if stride.0 < 1 || stride.1 < 1 {
            return Err(Error::ShapeError("conv_transpose2d stride must be >= 1".into()));
        }
        let (_bs, cin, h, win) = k::dims4(self.value(x))?;
        let (wcin, cout, kh, kw) = k::dims4(self.value(w))?;
        if wcin != cin {
            return Err(Error::ShapeError(format!(
                "conv_transpose2d channel mismatch: input {}, weight {}",
                cin, wcin
            )));
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::ShapeError("conv_transpose2d bias shape".into()));
        }
        let oh = k::convt_out_len(h, kh, stride.0, pad.0)?;
        let ow = k::convt_out_len(win, kw, stride.1, pad.1)?;
        let mut out = k::conv2d_bwd_input(self.value(x), self.value(w), stride, pad, (oh, ow))?;
        let bias = self.value(b).data().to_vec();
        {
            let (bs2, c2, h2, w2) = k::dims4(&out)?;
            let od = out.data_mut();
            for bi in 0..bs2 {
                for co in 0..c2 {
                    let base = ((bi * c2) + co) * h2 * w2;
                    let bv = bias[co];
                    od[base..base + h2 * w2].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        Ok(self.push(Op::ConvT2d { stride, pad }, vec![x, w, b], out))
    }

    /// Gated linear unit along the channel axis: first half gated by the
    /// sigmoid of the second half.
    pub fn glu(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 2 || shape[1] % 2 != 0 {
            return Err(Error::ShapeError(format!(
                "glu needs an even channel count, got {:?}",
                shape
            )));
        }
        let (bs, c) = (shape[0], shape[1]);
        let half = c / 2;
        let sp: usize = shape[2..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[1] = half;
        let mut out = Tensor::zeros(&out_shape);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for b in 0..bs {
                for ch in 0..half {
                    let abase = ((b * c) + ch) * sp;
                    let gbase = ((b * c) + half + ch) * sp;
                    let obase = ((b * half) + ch) * sp;
                    for s in 0..sp {
                        od[obase + s] = xd[abase + s] * sigmoid(xd[gbase + s]);
                    }
                }
            }
        }
        Ok(self.push(Op::Glu, vec![x], out))
    }

    pub fn instance_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let c = self.channel_count(x)?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::ShapeError("instance_norm affine shape".into()));
        }
        let out = in_forward(
            self.value(x),
            |_b, ch| (self.value(gamma).data()[ch], self.value(beta).data()[ch]),
            eps,
        )?;
        Ok(self.push(Op::InstanceNorm { eps }, vec![x, gamma, beta], out))
    }

    /// Conditional instance normalization: scale/shift rows selected per
    /// sample by a domain code.
    pub fn cond_instance_norm(
        &mut self,
        x: NodeId,
        gamma_table: NodeId,
        beta_table: NodeId,
        codes: &[usize],
        eps: f64,
    ) -> Result<NodeId> {
        let c = self.channel_count(x)?;
        let bs = self.value(x).dim(0);
        if codes.len() != bs {
            return Err(Error::ShapeError(format!(
                "cond_instance_norm: {} codes for batch of {}",
                codes.len(),
                bs
            )));
        }
        let gshape = self.value(gamma_table).shape().to_vec();
        if gshape.len() != 2 || gshape[1] != c || self.value(beta_table).shape() != gshape {
            return Err(Error::ShapeError("cond_instance_norm table shape".into()));
        }
        for &code in codes {
            if code >= gshape[0] {
                return Err(Error::UnknownDomain(code));
            }
        }
        let gt = self.value(gamma_table).data();
        let bt = self.value(beta_table).data();
        let out = in_forward(
            self.value(x),
            |b, ch| (gt[codes[b] * c + ch], bt[codes[b] * c + ch]),
            eps,
        )?;
        Ok(self.push(
            Op::CondInstanceNorm {
                eps,
                codes: codes.to_vec(),
            },
            vec![x, gamma_table, beta_table],
            out,
        ))
    }

    /// Sum over every spatial position, producing (batch, channels).
    pub fn global_sum_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 3 {
            return Err(Error::ShapeError(format!(
                "global_sum_pool needs spatial axes, got {:?}",
                shape
            )));
        }
        let (bs, c) = (shape[0], shape[1]);
        let sp: usize = shape[2..].iter().product();
        let mut out = Tensor::zeros(&[bs, c]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for b in 0..bs {
                for ch in 0..c {
                    let base = ((b * c) + ch) * sp;
                    od[b * c + ch] = xd[base..base + sp].iter().sum();
                }
            }
        }
        Ok(self.push(Op::GlobalSumPool, vec![x], out))
    }

    pub fn fully_connected(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] {
            return Err(Error::ShapeError(format!(
                "fully_connected: input {:?} vs weight {:?}",
                xs, ws
            )));
        }
        if self.value(b).shape() != [ws[0]] {
            return Err(Error::ShapeError("fully_connected bias shape".into()));
        }
        let (bs, f, o) = (xs[0], xs[1], ws[0]);
        let mut out = Tensor::zeros(&[bs, o]);
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = self.value(b).data();
            let od = out.data_mut();
            for bi in 0..bs {
                for oi in 0..o {
                    let mut acc = bd[oi];
                    let xrow = &xd[bi * f..(bi + 1) * f];
                    let wrow = &wd[oi * f..(oi + 1) * f];
                    for (xv, wv) in xrow.iter().zip(wrow) {
                        acc += xv * wv;
                    }
                    od[bi * o + oi] = acc;
                }
            }
        }
        Ok(self.push(Op::FullyConnected, vec![x, w, b], out))
    }

    /// Fold (channels, height) into a single channel axis: (B,C,H,W) -> (B,C*H,W).
    pub fn reshape_2d_to_1d(&mut self, x: NodeId) -> Result<NodeId> {
        let (bs, c, h, w) = k::dims4(self.value(x))?;
        let out = self.value(x).reshaped(vec![bs, c * h, w])?;
        Ok(self.push(Op::Reshape2dTo1d, vec![x], out))
    }

    /// Split the channel axis back out: (B,C,L) -> (B,C/height,height,L).
    pub fn reshape_1d_to_2d(&mut self, x: NodeId, height: usize) -> Result<NodeId> {
        let (bs, c, l) = k::dims3(self.value(x))?;
        if height == 0 || c % height != 0 {
            return Err(Error::ShapeError(format!(
                "reshape_1d_to_2d: {} channels not divisible by height {}",
                c, height
            )));
        }
        let out = self.value(x).reshaped(vec![bs, c / height, height, l])?;
        Ok(self.push(Op::Reshape1dTo2d, vec![x], out))
    }

    /// Relabel axes without moving data.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape, vec![x], out))
    }

    /// Select one row of a (rows, cols) table per batch element.
    pub fn row_select(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let ts = self.value(table).shape().to_vec();
        if ts.len() != 2 {
            return Err(Error::ShapeError("row_select table must be 2-d".into()));
        }
        for &r in rows {
            if r >= ts[0] {
                return Err(Error::ShapeError(format!(
                    "row_select: row {} out of {}",
                    r, ts[0]
                )));
            }
        }
        let c = ts[1];
        let mut out = Tensor::zeros(&[rows.len(), c]);
        {
            let td = self.value(table).data();
            let od = out.data_mut();
            for (b, &r) in rows.iter().enumerate() {
                od[b * c..(b + 1) * c].copy_from_slice(&td[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(
            Op::RowSelect {
                rows: rows.to_vec(),
            },
            vec![table],
            out,
        ))
    }

    /// Per-sample dot product of two (batch, features) tensors -> (batch,).
    pub fn batch_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ashape = self.value(a).shape().to_vec();
        if ashape.len() != 2 || self.value(b).shape() != ashape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "batch_dot: {:?} vs {:?}",
                ashape,
                self.value(b).shape()
            )));
        }
        let (bs, f) = (ashape[0], ashape[1]);
        let mut out = Tensor::zeros(&[bs]);
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            let od = out.data_mut();
            for bi in 0..bs {
                od[bi] = ad[bi * f..(bi + 1) * f]
                    .iter()
                    .zip(&bd[bi * f..(bi + 1) * f])
                    .map(|(x, y)| x * y)
                    .sum();
            }
        }
        Ok(self.push(Op::BatchDot, vec![a, b], out))
    }

    // ------------------------------------------------------------------
    // elementwise / reduction glue for losses
    // ------------------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(Op::Mul, a, b, |x, y| x * y)
    }

    fn zip_op(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(op, vec![a, b], value))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v + c).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(Op::AddScalar, vec![x], value)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(Op::MulScalar(c), vec![x], value)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.abs()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(Op::Abs, vec![x], value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| sigmoid(*v)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(Op::Sigmoid, vec![x], value)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.ln()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(Op::Ln, vec![x], value)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let v = self.value(x).data().iter().sum::<f64>() / n;
        self.push(Op::Mean, vec![x], Tensor::scalar(v))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).data().iter().sum::<f64>();
        self.push(Op::Sum, vec![x], Tensor::scalar(v))
    }

    fn channel_count(&self, x: NodeId) -> Result<usize> {
        let s = self.value(x).shape();
        if s.len() < 3 {
            return Err(Error::ShapeError(format!(
                "expected a (batch, channels, spatial..) tensor, got {:?}",
                s
            )));
        }
        Ok(s[1])
    }

    // ------------------------------------------------------------------
    // backward
    // ------------------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss node. Visits each node exactly
    /// once in reverse topological (= reverse insertion) order.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ContractViolation(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Collect gradients for every parameter of `store` that received one.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (&(sid, pid), &node) in &self.param_map {
            if sid != store.store_id {
                continue;
            }
            if let Some(g) = grads.by_node(node) {
                out.insert(pid, g.clone());
            }
        }
        out
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let ins = &node.inputs;
        let needs = |i: usize| self.nodes[ins[i].0].needs_grad;
        let val = |i: usize| &self.nodes[ins[i].0].value;

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { stride, pad } => {
                let (x, w) = (val(0), val(1));
                if needs(0) {
                    let (_, _, h, win) = k::dims4(x)?;
                    let dx = k::conv2d_bwd_input(g, w, *stride, *pad, (h, win))?;
                    accumulate(&mut grads[ins[0].0], dx);
                }
                if needs(1) {
                    let (_, _, kh, kw) = k::dims4(w)?;
                    let dw = k::conv2d_bwd_weight(g, x, *stride, *pad, (kh, kw))?;
                    accumulate(&mut grads[ins[1].0], dw);
                }
                if needs(2) {
                    accumulate(&mut grads[ins[2].0], k::conv2d_bwd_bias(g)?);
                }
            }
            Op::Conv1d { stride, pad } => {
                let (bs, c, l) = k::dims3(val(0))?;
                let ws = val(1).shape().to_vec();
                let x4 = val(0).reshaped(vec![bs, c, 1, l])?;
                let w4 = val(1).reshaped(vec![ws[0], ws[1], 1, ws[2]])?;
                let gs = g.shape().to_vec();
                let g4 = g.reshaped(vec![gs[0], gs[1], 1, gs[2]])?;
                if needs(0) {
                    let dx4 = k::conv2d_bwd_input(&g4, &w4, (1, *stride), (0, *pad), (1, l))?;
                    accumulate(&mut grads[ins[0].0], dx4.reshaped(vec![bs, c, l])?);
                }
                if needs(1) {
                    let dw4 =
                        k::conv2d_bwd_weight(&g4, &x4, (1, *stride), (0, *pad), (1, ws[2]))?;
                    accumulate(&mut grads[ins[1].0], dw4.reshaped(ws.clone())?);
                }
                if needs(2) {
                    accumulate(&mut grads[ins[2].0], k::conv2d_bwd_bias(&g4)?);
                }
            }
            Op::ConvT2d { stride, pad } => {
                let (x, w) = (val(0), val(1));
                if needs(0) {
                    // adjoint of the transposed conv is the plain conv
                    let dx = k::conv2d_fwd(g, w, None, *stride, *pad)?;
                    accumulate(&mut grads[ins[0].0], dx);
                }
                if needs(1) {
                    let (_, _, kh, kw) = k::dims4(w)?;
                    let dw = k::conv2d_bwd_weight(x, g, *stride, *pad, (kh, kw))?;
                    accumulate(&mut grads[ins[1].0], dw);
                }
                if needs(2) {
                    accumulate(&mut grads[ins[2].0], k::conv2d_bwd_bias(g)?);
                }
            }
            Op::Glu => {
                if needs(0) {
                    let x = val(0);
                    let shape = x.shape().to_vec();
                    let (bs, c) = (shape[0], shape[1]);
                    let half = c / 2;
                    let sp: usize = shape[2..].iter().product();
                    let mut dx = Tensor::zeros(&shape);
                    let xd = x.data();
                    let gd = g.data();
                    let dxd = dx.data_mut();
                    for b in 0..bs {
                        for ch in 0..half {
                            let abase = ((b * c) + ch) * sp;
                            let gbase = ((b * c) + half + ch) * sp;
                            let obase = ((b * half) + ch) * sp;
                            for s in 0..sp {
                                let sig = sigmoid(xd[gbase + s]);
                                let go = gd[obase + s];
                                dxd[abase + s] += go * sig;
                                dxd[gbase + s] += go * xd[abase + s] * sig * (1.0 - sig);
                            }
                        }
                    }
                    accumulate(&mut grads[ins[0].0], dx);
                }
            }
            Op::InstanceNorm { eps } => {
                let gamma = val(1).data();
                let c = val(0).shape()[1];
                let (dx, dgamma, dbeta) = in_backward(
                    val(0),
                    g,
                    |_b, ch| gamma[ch],
                    *eps,
                    needs(0),
                    needs(1) || needs(2),
                )?;
                if needs(0) {
                    accumulate(&mut grads[ins[0].0], dx.unwrap());
                }
                if needs(1) {
                    let mut dg = Tensor::zeros(&[c]);
                    for (i, v) in dgamma.as_ref().unwrap().iter().enumerate() {
                        dg.data_mut()[i % c] += v;
                    }
                    accumulate(&mut grads[ins[1].0], dg);
                }
                if needs(2) {
                    let mut db = Tensor::zeros(&[c]);
                    for (i, v) in dbeta.as_ref().unwrap().iter().enumerate() {
                        db.data_mut()[i % c] += v;
                    }
                    accumulate(&mut grads[ins[2].0], db);
                }
            }
            Op::CondInstanceNorm { eps, codes } => {
                let c = val(0).shape()[1];
                let gt = val(1).data();
                let (dx, dgamma, dbeta) = in_backward(
                    val(0),
                    g,
                    |b, ch| gt[codes[b] * c + ch],
                    *eps,
                    needs(0),
                    needs(1) || needs(2),
                )?;
                if needs(0) {
                    accumulate(&mut grads[ins[0].0], dx.unwrap());
                }
                // scatter per-sample affine grads into the selected table rows
                if needs(1) {
                    let mut dg = Tensor::zeros(val(1).shape());
                    for (i, v) in dgamma.as_ref().unwrap().iter().enumerate() {
                        let (b, ch) = (i / c, i % c);
                        dg.data_mut()[codes[b] * c + ch] += v;
                    }
                    accumulate(&mut grads[ins[1].0], dg);
                }
                if needs(2) {
                    let mut db = Tensor::zeros(val(2).shape());
                    for (i, v) in dbeta.as_ref().unwrap().iter().enumerate() {
                        let (b, ch) = (i / c, i % c);
                        db.data_mut()[codes[b] * c + ch] += v;
                    }
                    accumulate(&mut grads[ins[2].0], db);
                }
            }
            Op::GlobalSumPool => {
                if needs(0) {
                    let shape = val(0).shape().to_vec();
                    let (bs, c) = (shape[0], shape[1]);
                    let sp: usize = shape[2..].iter().product();
                    let mut dx = Tensor::zeros(&shape);
                    let gd = g.data();
                    let dxd = dx.data_mut();
                    for b in 0..bs {
                        for ch in 0..c {
                            let base = ((b * c) + ch) * sp;
                            let gv = gd[b * c + ch];
                            dxd[base..base + sp].iter_mut().for_each(|v| *v += gv);
                        }
                    }
                    accumulate(&mut grads[ins[0].0], dx);
                }
            }
            Op::FullyConnected => {
                let (x, w) = (val(0), val(1));
                let (bs, f) = (x.shape()[0], x.shape()[1]);
                let o = w.shape()[0];
                let gd = g.data();
                if needs(0) {
                    let mut dx = Tensor::zeros(x.shape());
                    let wd = w.data();
                    let dxd = dx.data_mut();
                    for bi in 0..bs {
                        for oi in 0..o {
                            let gv = gd[bi * o + oi];
                            if gv == 0.0 {
                                continue;
                            }
                            let wrow = &wd[oi * f..(oi + 1) * f];
                            let xrow = &mut dxd[bi * f..(bi + 1) * f];
                            for (xv, wv) in xrow.iter_mut().zip(wrow) {
                                *xv += gv * wv;
                            }
                        }
                    }
                    accumulate(&mut grads[ins[0].0], dx);
                }
                if needs(1) {
                    let mut dw = Tensor::zeros(w.shape());
                    let xd = x.data();
                    let dwd = dw.data_mut();
                    for bi in 0..bs {
                        for oi in 0..o {
                            let gv = gd[bi * o + oi];
                            if gv == 0.0 {
                                continue;
                            }
                            let xrow = &xd[bi * f..(bi + 1) * f];
                            let wrow = &mut dwd[oi * f..(oi + 1) * f];
                            for (wv, xv) in wrow.iter_mut().zip(xrow) {
                                *wv += gv * xv;
                            }
                        }
                    }
                    accumulate(&mut grads[ins[1].0], dw);
                }
                if needs(2) {
                    let mut db = Tensor::zeros(&[o]);
                    for bi in 0..bs {
                        for oi in 0..o {
                            db.data_mut()[oi] += gd[bi * o + oi];
                        }
                    }
                    accumulate(&mut grads[ins[2].0], db);
                }
            }
            Op::Reshape | Op::Reshape2dTo1d | Op::Reshape1dTo2d => {
                if needs(0) {
                    let back = g.reshaped(val(0).shape().to_vec())?;
                    accumulate(&mut grads[ins[0].0], back);
                }
            }
            Op::RowSelect { rows } => {
                if needs(0) {
                    let c = val(0).shape()[1];
                    let mut dt = Tensor::zeros(val(0).shape());
                    let gd = g.data();
                    for (b, &r) in rows.iter().enumerate() {
                        let dst = &mut dt.data_mut()[r * c..(r + 1) * c];
                        for (dv, gv) in dst.iter_mut().zip(&gd[b * c..(b + 1) * c]) {
                            *dv += gv;
                        }
                    }
                    accumulate(&mut grads[ins[0].0], dt);
                }
            }
            Op::BatchDot => {
                let (a, b) = (val(0), val(1));
                let (bs, f) = (a.shape()[0], a.shape()[1]);
                let gd = g.data();
                if needs(0) {
                    let mut da = Tensor::zeros(a.shape());
                    for bi in 0..bs {
                        let gv = gd[bi];
                        let src = &b.data()[bi * f..(bi + 1) * f];
                        let dst = &mut da.data_mut()[bi * f..(bi + 1) * f];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += gv * sv;
                        }
                    }
                    accumulate(&mut grads[ins[0].0], da);
                }
                if needs(1) {
                    let mut db = Tensor::zeros(b.shape());
                    for bi in 0..bs {
                        let gv = gd[bi];
                        let src = &a.data()[bi * f..(bi + 1) * f];
                        let dst = &mut db.data_mut()[bi * f..(bi + 1) * f];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += gv * sv;
                        }
                    }
                    accumulate(&mut grads[ins[1].0], db);
                }
            }
            Op::Add => {
                if needs(0) {
                    accumulate(&mut grads[ins[0].0], g.clone());
                }
                if needs(1) {
                    accumulate(&mut grads[ins[1].0], g.clone());
                }
            }
            Op::Sub => {
                if needs(0) {
                    accumulate(&mut grads[ins[0].0], g.clone());
                }
                if needs(1) {
                    let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                    accumulate(
                        &mut grads[ins[1].0],
                        Tensor::new(g.shape().to_vec(), neg)?,
                    );
                }
            }
            Op::Mul => {
                if needs(0) {
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(val(1).data())
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    accumulate(&mut grads[ins[0].0], Tensor::new(g.shape().to_vec(), d)?);
                }
                if needs(1) {
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(val(0).data())
                        .map(|(gv, av)| gv * av)
                        .collect();
                    accumulate(&mut grads[ins[1].0], Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::AddScalar => {
                if needs(0) {
                    accumulate(&mut grads[ins[0].0], g.clone());
                }
            }
            Op::MulScalar(c) => {
                if needs(0) {
                    let d: Vec<f64> = g.data().iter().map(|v| v * c).collect();
                    accumulate(&mut grads[ins[0].0], Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::Abs => {
                if needs(0) {
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(val(0).data())
                        .map(|(gv, xv)| gv * xv.signum() * if *xv == 0.0 { 0.0 } else { 1.0 })
                        .collect();
                    accumulate(&mut grads[ins[0].0], Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::Sigmoid => {
                if needs(0) {
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(val(0).data())
                        .map(|(gv, xv)| {
                            let s = sigmoid(*xv);
                            gv * s * (1.0 - s)
                        })
                        .collect();
                    accumulate(&mut grads[ins[0].0], Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::Ln => {
                if needs(0) {
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(val(0).data())
                        .map(|(gv, xv)| gv / xv)
                        .collect();
                    accumulate(&mut grads[ins[0].0], Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::Mean => {
                if needs(0) {
                    let n = val(0).len() as f64;
                    let gv = g.item() / n;
                    accumulate(&mut grads[ins[0].0], Tensor::filled(val(0).shape(), gv));
                }
            }
            Op::Sum => {
                if needs(0) {
                    let gv = g.item();
                    accumulate(&mut grads[ins[0].0], Tensor::filled(val(0).shape(), gv));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), delta.shape());
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        None => *slot = Some(delta),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Shared forward for instance norm variants: per (sample, channel) statistics
/// over the spatial axes, then an affine map chosen by `affine(b, ch)`.
fn in_forward(
    x: &Tensor,
    affine: impl Fn(usize, usize) -> (f64, f64),
    eps: f64,
) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if shape.len() < 3 {
        return Err(Error::ShapeError(format!(
            "instance norm needs spatial axes, got {:?}",
            shape
        )));
    }
    let (bs, c) = (shape[0], shape[1]);
    let sp: usize = shape[2..].iter().product();
    let mut out = Tensor::zeros(&shape);
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..bs {
        for ch in 0..c {
            let base = ((b * c) + ch) * sp;
            let slice = &xd[base..base + sp];
            let mean = slice.iter().sum::<f64>() / sp as f64;
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sp as f64;
            let denom = var.sqrt() + eps;
            let (gamma, beta) = affine(b, ch);
            for (o, v) in od[base..base + sp].iter_mut().zip(slice) {
                *o = gamma * (v - mean) / denom + beta;
            }
        }
    }
    Ok(out)
}

/// Backward for instance norm variants. Returns `dx` plus elementwise
/// buffers holding per-(b,spatial) contributions to the affine gradients
/// (`dy*xhat` and `dy`), which callers reduce into gamma/beta layouts.
#[allow(clippy::type_complexity)]
fn in_backward(
    x: &Tensor,
    g: &Tensor,
    gamma_of: impl Fn(usize, usize) -> f64,
    eps: f64,
    want_dx: bool,
    want_affine: bool,
) -> Result<(Option<Tensor>, Option<Vec<f64>>, Option<Vec<f64>>)> {
    let shape = x.shape().to_vec();
    let (bs, c) = (shape[0], shape[1]);
    let sp: usize = shape[2..].iter().product();
    let xd = x.data();
    let gd = g.data();

    let mut dx = if want_dx {
        Some(Tensor::zeros(&shape))
    } else {
        None
    };
    // per (b, ch): summed over spatial
    let mut dgamma = if want_affine {
        Some(vec![0.0; bs * c])
    } else {
        None
    };
    let mut dbeta = if want_affine {
        Some(vec![0.0; bs * c])
    } else {
        None
    };

    for b in 0..bs {
        for ch in 0..c {
            let base = ((b * c) + ch) * sp;
            let slice = &xd[base..base + sp];
            let gout = &gd[base..base + sp];
            let mean = slice.iter().sum::<f64>() / sp as f64;
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sp as f64;
            let sigma = var.sqrt();
            let denom = sigma + eps;
            let gamma = gamma_of(b, ch);

            let mut sum_gy = 0.0; // sum of upstream grads, pre-gamma
            let mut sum_gy_xhat = 0.0;
            for (gv, v) in gout.iter().zip(slice) {
                let xhat = (v - mean) / denom;
                sum_gy += gv;
                sum_gy_xhat += gv * xhat;
            }
            if let Some(dg) = dgamma.as_mut() {
                dg[b * c + ch] = sum_gy_xhat;
            }
            if let Some(db) = dbeta.as_mut() {
                db[b * c + ch] = sum_gy;
            }
            if let Some(dx) = dx.as_mut() {
                let n = sp as f64;
                let mean_g = gamma * sum_gy / n;
                let mean_g_xhat = gamma * sum_gy_xhat / n;
                let dxd = dx.data_mut();
                for i in 0..sp {
                    let xhat = (slice[i] - mean) / denom;
                    let gi = gamma * gout[i];
                    // d/dx of gamma*(x-mu)/(sigma(x)+eps); the sigma term
                    // vanishes when the channel is exactly constant.
                    let curv = if sigma > 0.0 {
                        xhat * mean_g_xhat / sigma
                    } else {
                        0.0
                    };
                    dxd[base + i] += (gi - mean_g) / denom - curv;
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = g.leaf(Tensor::randn(&[2, 3], 1.0, &mut rng), true);
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.by_node(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_dot_is_twice_input() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Tensor::randn(&[5], 1.0, &mut rng);
        let x = g.leaf(t.clone(), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        for (gv, xv) in grads.by_node(x).unwrap().data().iter().zip(t.data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_is_contract_violation() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(matches!(
            g.backward(x),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn conv1d_same_padding_and_identity_kernel() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Tensor::randn(&[1, 1, 32], 1.0, &mut rng);
        let xn = g.input(x.clone());
        let w = g.input(Tensor::zeros(&[2, 1, 5]));
        let b = g.input(Tensor::zeros(&[2]));
        let y = g.conv1d(xn, w, b, 1, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 32], "k=5 s=1 p=2 preserves length");

        let eye = g.input(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let b1 = g.input(Tensor::zeros(&[1]));
        let same = g.conv1d(xn, eye, b1, 1, 0).unwrap();
        assert_eq!(g.value(same).data(), x.data());
    }

    #[test]
    fn conv_transpose_doubles_geometry() {
        let mut g = Graph::new();
        let xn = g.input(Tensor::zeros(&[1, 2, 4, 8]));
        let w = g.input(Tensor::zeros(&[2, 3, 4, 4]));
        let b = g.input(Tensor::zeros(&[3]));
        let y = g.conv_transpose2d(xn, w, b, (2, 2), (1, 1)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 8, 16]);
    }

    #[test]
    fn glu_with_zero_gate_halves_values() {
        let mut g = Graph::new();
        let mut x = Tensor::zeros(&[1, 2, 1, 3]);
        x.data_mut()[..3].copy_from_slice(&[2.0, -4.0, 6.0]);
        let xn = g.input(x);
        let y = g.glu(xn).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn glu_saturates_to_value_half() {
        let mut g = Graph::new();
        let mut x = Tensor::zeros(&[1, 2, 1, 2]);
        x.data_mut().copy_from_slice(&[3.0, -1.0, 50.0, 50.0]);
        let xn = g.input(x);
        let y = g.glu(xn).unwrap();
        assert!((g.value(y).data()[0] - 3.0).abs() < 1e-12);
        assert!((g.value(y).data()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn glu_rejects_odd_channels() {
        let mut g = Graph::new();
        let xn = g.input(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(matches!(g.glu(xn), Err(Error::ShapeError(_))));
    }

    #[test]
    fn instance_norm_constant_channel_returns_beta() {
        let mut g = Graph::new();
        let xn = g.input(Tensor::filled(&[1, 1, 4], 7.5));
        let gamma = g.input(Tensor::filled(&[1], 2.0));
        let beta = g.input(Tensor::filled(&[1], -3.0));
        let y = g.instance_norm(xn, gamma, beta, 1e-5).unwrap();
        for v in g.value(y).data() {
            assert!((v + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cond_instance_norm_beta_shifts_by_code() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[2, 2, 6], 1.0, &mut rng);
        // identical rows duplicated per batch element; codes differ
        let mut xx = Tensor::zeros(&[2, 2, 6]);
        xx.data_mut()[..12].copy_from_slice(&x.data()[..12]);
        xx.data_mut()[12..].copy_from_slice(&x.data()[..12]);
        let xn = g.input(xx);
        let gt = g.input(Tensor::filled(&[2, 2], 1.0));
        let mut beta = Tensor::zeros(&[2, 2]);
        beta.data_mut().copy_from_slice(&[0.5, 0.5, -1.5, -1.5]);
        let bt = g.input(beta);
        let y = g.cond_instance_norm(xn, gt, bt, &[0, 1], 1e-5).unwrap();
        let out = g.value(y).data();
        for i in 0..12 {
            let diff = out[i] - out[12 + i];
            assert!((diff - 2.0).abs() < 1e-12, "beta offset should be 0.5 - (-1.5)");
        }
    }

    #[test]
    fn cond_instance_norm_unknown_code() {
        let mut g = Graph::new();
        let xn = g.input(Tensor::zeros(&[1, 2, 4]));
        let gt = g.input(Tensor::filled(&[3, 2], 1.0));
        let bt = g.input(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            g.cond_instance_norm(xn, gt, bt, &[3], 1e-5),
            Err(Error::UnknownDomain(3))
        ));
    }

    #[test]
    fn global_sum_pool_counts_ones() {
        let mut g = Graph::new();
        let xn = g.input(Tensor::filled(&[1, 3, 4, 5], 1.0));
        let y = g.global_sum_pool(xn).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3]);
        assert_eq!(g.value(y).data(), &[20.0, 20.0, 20.0]);
    }

    #[test]
    fn global_sum_pool_single_position_is_identity() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = Tensor::randn(&[2, 4, 1, 1], 1.0, &mut rng);
        let xn = g.input(x.clone());
        let y = g.global_sum_pool(xn).unwrap();
        assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn fully_connected_zero_weight_broadcasts_bias() {
        let mut g = Graph::new();
        let xn = g.input(Tensor::filled(&[3, 5], 2.0));
        let w = g.input(Tensor::zeros(&[2, 5]));
        let b = g.input(Tensor::new(vec![2], vec![0.25, -1.5]).unwrap());
        let y = g.fully_connected(xn, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, -1.5, 0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn reshape_round_trip_is_exact() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = Tensor::randn(&[1, 4, 3, 10], 1.0, &mut rng);
        let xn = g.input(t.clone());
        let folded = g.reshape_2d_to_1d(xn).unwrap();
        assert_eq!(g.value(folded).shape(), &[1, 12, 10]);
        let back = g.reshape_1d_to_2d(folded, 3).unwrap();
        assert_eq!(g.value(back).shape(), t.shape());
        assert_eq!(g.value(back).data(), t.data());
    }

    #[test]
    fn fully_connected_identity() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        let xn = g.input(x.clone());
        let wn = g.input(eye);
        let bn = g.input(Tensor::zeros(&[4]));
        let y = g.fully_connected(xn, wn, bn).unwrap();
        for (a, b) in g.value(y).data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn param_nodes_are_deduplicated() {
        let mut store = ParamStore::new();
        let p = store.add(Tensor::filled(&[2], 3.0));
        let mut g = Graph::new();
        let a = g.param(&store, p);
        let b = g.param(&store, p);
        assert_eq!(a, b);
        // x used twice: grads accumulate
        let prod = g.mul(a, b).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        let pg = g.param_grads(&grads, &store);
        assert_eq!(pg.get(p).unwrap().data(), &[6.0, 6.0]);
    }
}
