//! Single-use gradient tape.
//!
//! Forward ops append nodes; `backward` walks the tape once in reverse and
//! hands back every gradient. A consumed tape rejects further use, which is
//! what rules out stale-graph bugs at this scale.

use std::collections::HashMap;
use std::rc::Rc;

use super::{kernels, ParamId, ParamSet, Tensor};
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// rhs is a row vector matching the trailing dimension of lhs.
    TrailingRow,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    /// a * b^T where b is stored untransposed.
    MatmulBt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId, bc: Broadcast },
    Sub { a: NodeId, b: NodeId, bc: Broadcast },
    Mul { a: NodeId, b: NodeId, bc: Broadcast },
    Scale { a: NodeId, c: f64 },
    Relu { a: NodeId },
    Gelu { a: NodeId },
    Tanh { a: NodeId },
    Sigmoid { a: NodeId },
    Mean { a: NodeId },
    Sum { a: NodeId },
    Mse { a: NodeId, b: NodeId },
    BceLogits { a: NodeId, targets: Tensor },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    SliceRows { a: NodeId, start: usize },
    SliceCols { a: NodeId, start: usize },
    SelectRows { a: NodeId, idx: Rc<Vec<usize>> },
    /// Per output row, the mean of a set of input rows; empty sets give zero.
    SegmentMean { a: NodeId, segs: Rc<Vec<Vec<usize>>> },
    SoftmaxRows { a: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    consumed: bool,
}

/// Gradients produced by one backward pass, addressable by tape node or by
/// parameter id.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: HashMap<ParamId, NodeId>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|n| self.node(*n))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract("tape already consumed by backward".into()));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        self.nodes.len() - 1
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient (inputs under test, noise probes).
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a parameter. Repeated requests for the same parameter
    /// return the same node so its gradient accumulates across uses.
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(ps.value(id).clone(), Op::Leaf, true);
        self.param_nodes.insert(id, n);
        n
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let (sa, sb) = (&self.nodes[a].value, &self.nodes[b].value);
        if sa.shape.len() != 2 || sb.shape.len() != 2 || sa.shape[1] != sb.shape[0] {
            return Err(Error::dim("matmul", &sa.shape, &sb.shape));
        }
        let (m, k, n) = (sa.shape[0], sa.shape[1], sb.shape[1]);
        let data = kernels::matmul(&sa.data, &sb.data, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::Matmul { a, b }, rg))
    }

    /// a[m x n] * b[r x n]^T -> [m x r]
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let (sa, sb) = (&self.nodes[a].value, &self.nodes[b].value);
        if sa.shape.len() != 2 || sb.shape.len() != 2 || sa.shape[1] != sb.shape[1] {
            return Err(Error::dim("matmul_bt", &sa.shape, &sb.shape));
        }
        let (m, n, r) = (sa.shape[0], sa.shape[1], sb.shape[0]);
        let data = kernels::matmul_a_bt(&sa.data, &sb.data, m, n, r);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, r], data }, Op::MatmulBt { a, b }, rg))
    }

    fn broadcast_kind(&self, op: &str, a: NodeId, b: NodeId) -> Result<Broadcast> {
        let (sa, sb) = (&self.nodes[a].value, &self.nodes[b].value);
        if sa.shape == sb.shape {
            return Ok(Broadcast::Same);
        }
        if sb.numel() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if sa.shape.len() == 2 && sb.rows() == 1 && sb.cols() == sa.shape[1] {
            return Ok(Broadcast::TrailingRow);
        }
        Err(Error::dim(op, &sa.shape, &sb.shape))
    }

    fn zip_broadcast(
        &mut self,
        a: NodeId,
        b: NodeId,
        bc: Broadcast,
        f: impl Fn(f64, f64) -> f64,
    ) -> Tensor {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let mut data = Vec::with_capacity(ta.numel());
        match bc {
            Broadcast::Same => {
                data.extend(ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)));
            }
            Broadcast::Scalar => {
                let y = tb.data[0];
                data.extend(ta.data.iter().map(|&x| f(x, y)));
            }
            Broadcast::TrailingRow => {
                let n = ta.cols();
                for row in ta.data.chunks_exact(n) {
                    data.extend(row.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)));
                }
            }
        }
        Tensor { shape: ta.shape.clone(), data }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let bc = self.broadcast_kind("add", a, b)?;
        let v = self.zip_broadcast(a, b, bc, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add { a, b, bc }, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let bc = self.broadcast_kind("sub", a, b)?;
        let v = self.zip_broadcast(a, b, bc, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub { a, b, bc }, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let bc = self.broadcast_kind("mul", a, b)?;
        let v = self.zip_broadcast(a, b, bc, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul { a, b, bc }, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check_live()?;
        let ta = &self.nodes[a].value;
        let v = Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|&x| x * c).collect() };
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Scale { a, c }, rg))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let ta = &self.nodes[a].value;
        let v = Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|&x| f(x)).collect() };
        let rg = self.rg(&[a]);
        self.push(v, op, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_live()?;
        Ok(self.unary(a, |x| x.max(0.0), Op::Relu { a }))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_live()?;
        Ok(self.unary(a, gelu, Op::Gelu { a }))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_live()?;
        Ok(self.unary(a, f64::tanh, Op::Tanh { a }))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_live()?;
        Ok(self.unary(a, sigmoid, Op::Sigmoid { a }))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let ta = &self.nodes[a].value;
        if ta.numel() == 0 {
            return Err(Error::Contract("mean of empty tensor".into()));
        }
        let v = ta.data.iter().sum::<f64>() / ta.numel() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(v), Op::Mean { a }, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let v = self.nodes[a].value.data.iter().sum::<f64>();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(v), Op::Sum { a }, rg))
    }

    /// Mean squared error over all elements. Shapes must match exactly.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape != tb.shape {
            return Err(Error::dim("mse", &ta.shape, &tb.shape));
        }
        if ta.numel() == 0 {
            return Err(Error::Contract("mse of empty tensor".into()));
        }
        let n = ta.numel() as f64;
        let v = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(v), Op::Mse { a, b }, rg))
    }

    /// Mean binary cross entropy of logits against fixed 0/1 targets,
    /// computed in the numerically stable form.
    pub fn bce_logits(&mut self, a: NodeId, targets: &Tensor) -> Result<NodeId> {
        self.check_live()?;
        let ta = &self.nodes[a].value;
        if ta.shape != targets.shape {
            return Err(Error::dim("bce_logits", &ta.shape, &targets.shape));
        }
        if ta.numel() == 0 {
            return Err(Error::Contract("bce of empty tensor".into()));
        }
        let n = ta.numel() as f64;
        let v = ta
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&x, &z)| x.max(0.0) - x * z + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(v), Op::BceLogits { a, targets: targets.clone() }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.check_live()?;
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of nothing".into()));
        }
        let cols = self.nodes[parts[0]].value.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = &self.nodes[p].value;
            if t.shape.len() != 2 || t.cols() != cols {
                return Err(Error::dim("concat_rows", &self.nodes[parts[0]].value.shape, &t.shape));
            }
            rows += t.rows();
            data.extend_from_slice(&t.data);
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor { shape: vec![rows, cols], data },
            Op::ConcatRows { parts: parts.to_vec() },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.check_live()?;
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of nothing".into()));
        }
        let rows = self.nodes[parts[0]].value.rows();
        let mut cols = 0;
        for &p in parts {
            let t = &self.nodes[p].value;
            if t.shape.len() != 2 || t.rows() != rows {
                return Err(Error::dim("concat_cols", &self.nodes[parts[0]].value.shape, &t.shape));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p].value.row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor { shape: vec![rows, cols], data },
            Op::ConcatCols { parts: parts.to_vec() },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check_live()?;
        let t = &self.nodes[a].value;
        if t.shape.len() != 2 || start + len > t.rows() {
            return Err(Error::Contract(format!(
                "slice_rows {start}..{} out of {:?}",
                start + len,
                t.shape
            )));
        }
        let c = t.cols();
        let data = t.data[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![len, c], data }, Op::SliceRows { a, start }, rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check_live()?;
        let t = &self.nodes[a].value;
        if t.shape.len() != 2 || start + len > t.cols() {
            return Err(Error::Contract(format!(
                "slice_cols {start}..{} out of {:?}",
                start + len,
                t.shape
            )));
        }
        let (rows, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * c + start..r * c + start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![rows, len], data }, Op::SliceCols { a, start }, rg))
    }

    /// Gather rows by index; duplicates allowed, gradients scatter-add.
    pub fn select_rows(&mut self, a: NodeId, idx: Rc<Vec<usize>>) -> Result<NodeId> {
        self.check_live()?;
        let t = &self.nodes[a].value;
        if t.shape.len() != 2 {
            return Err(Error::Contract("select_rows wants rank 2".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Contract(format!("row index {bad} out of {} rows", t.rows())));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![idx.len(), c], data }, Op::SelectRows { a, idx }, rg))
    }

    /// Output row s is the mean of input rows `segs[s]`; empty segments
    /// produce a zero row.
    pub fn segment_mean(&mut self, a: NodeId, segs: Rc<Vec<Vec<usize>>>) -> Result<NodeId> {
        self.check_live()?;
        let t = &self.nodes[a].value;
        if t.shape.len() != 2 {
            return Err(Error::Contract("segment_mean wants rank 2".into()));
        }
        let c = t.cols();
        let mut data = vec![0.0; segs.len() * c];
        for (s, seg) in segs.iter().enumerate() {
            if seg.is_empty() {
                continue;
            }
            if let Some(&bad) = seg.iter().find(|&&i| i >= t.rows()) {
                return Err(Error::Contract(format!(
                    "segment row {bad} out of {} rows",
                    t.rows()
                )));
            }
            let out = &mut data[s * c..(s + 1) * c];
            for &i in seg {
                for (o, &x) in out.iter_mut().zip(t.row(i)) {
                    *o += x;
                }
            }
            let inv = 1.0 / seg.len() as f64;
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor { shape: vec![segs.len(), c], data },
            Op::SegmentMean { a, segs },
            rg,
        ))
    }

    /// Row-wise softmax with the max-subtraction trick.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_live()?;
        let t = &self.nodes[a].value;
        if t.shape.len() != 2 {
            return Err(Error::Contract("softmax_rows wants rank 2".into()));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data.chunks_exact(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / z));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: t.shape.clone(), data }, Op::SoftmaxRows { a }, rg))
    }

    /// Reverse pass from a scalar loss. Consumes the tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        self.check_live()?;
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { by_node: grads, params: self.param_nodes.clone() })
    }

    fn propagate(&self, id: NodeId, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if self.nodes[*a].requires_grad {
                    let da = kernels::matmul_a_bt(&g.data, &tb.data, m, n, k);
                    acc(grads, *a, &ta.shape, &da);
                }
                if self.nodes[*b].requires_grad {
                    let db = kernels::matmul_at_b(&ta.data, &g.data, m, k, n);
                    acc(grads, *b, &tb.shape, &db);
                }
            }
            Op::MatmulBt { a, b } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, n, r) = (ta.shape[0], ta.shape[1], tb.shape[0]);
                if self.nodes[*a].requires_grad {
                    let da = kernels::matmul(&g.data, &tb.data, m, r, n);
                    acc(grads, *a, &ta.shape, &da);
                }
                if self.nodes[*b].requires_grad {
                    let db = kernels::matmul_at_b(&g.data, &ta.data, m, r, n);
                    acc(grads, *b, &tb.shape, &db);
                }
            }
            Op::Add { a, b, bc } => {
                if self.nodes[*a].requires_grad {
                    acc(grads, *a, &self.nodes[*a].value.shape, &g.data);
                }
                if self.nodes[*b].requires_grad {
                    let db = reduce_to(g, *bc, self.nodes[*b].value.numel());
                    acc(grads, *b, &self.nodes[*b].value.shape, &db);
                }
            }
            Op::Sub { a, b, bc } => {
                if self.nodes[*a].requires_grad {
                    acc(grads, *a, &self.nodes[*a].value.shape, &g.data);
                }
                if self.nodes[*b].requires_grad {
                    let mut db = reduce_to(g, *bc, self.nodes[*b].value.numel());
                    for v in &mut db {
                        *v = -*v;
                    }
                    acc(grads, *b, &self.nodes[*b].value.shape, &db);
                }
            }
            Op::Mul { a, b, bc } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.nodes[*a].requires_grad {
                    let da = broadcast_mul(g, tb, *bc);
                    acc(grads, *a, &ta.shape, &da);
                }
                if self.nodes[*b].requires_grad {
                    let gx: Vec<f64> = g.data.iter().zip(&ta.data).map(|(&gv, &av)| gv * av).collect();
                    let gx = Tensor { shape: g.shape.clone(), data: gx };
                    let db = reduce_to(&gx, *bc, tb.numel());
                    acc(grads, *b, &tb.shape, &db);
                }
            }
            Op::Scale { a, c } => {
                if self.nodes[*a].requires_grad {
                    let da: Vec<f64> = g.data.iter().map(|&v| v * c).collect();
                    acc(grads, *a, &self.nodes[*a].value.shape, &da);
                }
            }
            Op::Relu { a } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect();
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::Gelu { a } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let da: Vec<f64> =
                        g.data.iter().zip(&ta.data).map(|(&gv, &x)| gv * gelu_grad(x)).collect();
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::Tanh { a } => {
                if self.nodes[*a].requires_grad {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(&gv, &y)| gv * (1.0 - y * y))
                        .collect();
                    acc(grads, *a, &self.nodes[*a].value.shape, &da);
                }
            }
            Op::Sigmoid { a } => {
                if self.nodes[*a].requires_grad {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(&gv, &y)| gv * y * (1.0 - y))
                        .collect();
                    acc(grads, *a, &self.nodes[*a].value.shape, &da);
                }
            }
            Op::Mean { a } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let gv = g.data[0] / ta.numel() as f64;
                    let da = vec![gv; ta.numel()];
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::Sum { a } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let da = vec![g.data[0]; ta.numel()];
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::Mse { a, b } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let scale = 2.0 * g.data[0] / ta.numel() as f64;
                if self.nodes[*a].requires_grad {
                    let da: Vec<f64> =
                        ta.data.iter().zip(&tb.data).map(|(&x, &y)| scale * (x - y)).collect();
                    acc(grads, *a, &ta.shape, &da);
                }
                if self.nodes[*b].requires_grad {
                    let db: Vec<f64> =
                        ta.data.iter().zip(&tb.data).map(|(&x, &y)| -scale * (x - y)).collect();
                    acc(grads, *b, &tb.shape, &db);
                }
            }
            Op::BceLogits { a, targets } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let scale = g.data[0] / ta.numel() as f64;
                    let da: Vec<f64> = ta
                        .data
                        .iter()
                        .zip(&targets.data)
                        .map(|(&x, &z)| scale * (sigmoid(x) - z))
                        .collect();
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::ConcatRows { parts } => {
                let c = node.value.cols();
                let mut start = 0;
                for &p in parts {
                    let rows = self.nodes[p].value.rows();
                    if self.nodes[p].requires_grad {
                        let dg = &g.data[start * c..(start + rows) * c];
                        acc(grads, p, &self.nodes[p].value.shape, dg);
                    }
                    start += rows;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut start = 0;
                for &p in parts {
                    let pc = self.nodes[p].value.cols();
                    if self.nodes[p].requires_grad {
                        let mut dg = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            dg.extend_from_slice(&g.data[r * total + start..r * total + start + pc]);
                        }
                        acc(grads, p, &self.nodes[p].value.shape, &dg);
                    }
                    start += pc;
                }
            }
            Op::SliceRows { a, start } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let c = ta.cols();
                    let mut da = vec![0.0; ta.numel()];
                    da[start * c..start * c + g.numel()].copy_from_slice(&g.data);
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::SliceCols { a, start } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let (c, len) = (ta.cols(), g.cols());
                    let mut da = vec![0.0; ta.numel()];
                    for r in 0..g.rows() {
                        da[r * c + start..r * c + start + len]
                            .copy_from_slice(&g.data[r * len..(r + 1) * len]);
                    }
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::SelectRows { a, idx } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let c = ta.cols();
                    let mut da = vec![0.0; ta.numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &gv) in da[i * c..(i + 1) * c].iter_mut().zip(&g.data[r * c..(r + 1) * c]) {
                            *o += gv;
                        }
                    }
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::SegmentMean { a, segs } => {
                if self.nodes[*a].requires_grad {
                    let ta = &self.nodes[*a].value;
                    let c = ta.cols();
                    let mut da = vec![0.0; ta.numel()];
                    for (s, seg) in segs.iter().enumerate() {
                        if seg.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / seg.len() as f64;
                        let gr = &g.data[s * c..(s + 1) * c];
                        for &i in seg {
                            for (o, &gv) in da[i * c..(i + 1) * c].iter_mut().zip(gr) {
                                *o += gv * inv;
                            }
                        }
                    }
                    acc(grads, *a, &ta.shape, &da);
                }
            }
            Op::SoftmaxRows { a } => {
                if self.nodes[*a].requires_grad {
                    let y = &node.value;
                    let c = y.cols();
                    let mut da = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let yr = &y.data[r * c..(r + 1) * c];
                        let gr = &g.data[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        for ((o, &yv), &gv) in da[r * c..(r + 1) * c].iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(grads, *a, &self.nodes[*a].value.shape, &da);
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], contrib: &[f64]) {
    match &mut grads[id] {
        Some(t) => {
            for (o, &v) in t.data.iter_mut().zip(contrib) {
                *o += v;
            }
        }
        slot => {
            *slot = Some(Tensor { shape: shape.to_vec(), data: contrib.to_vec() });
        }
    }
}

/// Collapse a full-shape gradient onto a broadcast operand.
fn reduce_to(g: &Tensor, bc: Broadcast, numel: usize) -> Vec<f64> {
    match bc {
        Broadcast::Same => g.data.clone(),
        Broadcast::Scalar => vec![g.data.iter().sum::<f64>()],
        Broadcast::TrailingRow => {
            let mut out = vec![0.0; numel];
            for row in g.data.chunks_exact(numel) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out
        }
    }
}

/// Elementwise g * b with b broadcast to g's shape.
fn broadcast_mul(g: &Tensor, b: &Tensor, bc: Broadcast) -> Vec<f64> {
    match bc {
        Broadcast::Same => g.data.iter().zip(&b.data).map(|(&gv, &bv)| gv * bv).collect(),
        Broadcast::Scalar => g.data.iter().map(|&gv| gv * b.data[0]).collect(),
        Broadcast::TrailingRow => {
            let n = b.numel();
            let mut out = Vec::with_capacity(g.numel());
            for row in g.data.chunks_exact(n) {
                out.extend(row.iter().zip(&b.data).map(|(&gv, &bv)| gv * bv));
            }
            out
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(2, 3, &[0.0; 6]));
        let b = tape.constant(t2(2, 3, &[0.0; 6]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn mean_then_backward_gives_uniform_grad() {
        let mut tape = Tape::new();
        let x = tape.input(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let m = tape.mean(x).unwrap();
        assert_eq!(tape.value(m).item(), 2.5);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.node(x).unwrap().data, vec![0.25; 4]);
    }

    #[test]
    fn tape_is_single_use() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.scale(x, 2.0).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.scale(x, 1.0).is_err());
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn shared_param_accumulates_across_uses() {
        // loss = mean(w) + mean(w): grad must be 2/n per element.
        let mut ps = ParamSet::new();
        let w = ps.add("w", t2(1, 4, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let mut tape = Tape::new();
        let w1 = tape.param(&ps, w);
        let w2 = tape.param(&ps, w);
        assert_eq!(w1, w2);
        let m1 = tape.mean(w1).unwrap();
        let m2 = tape.mean(w2).unwrap();
        let s = tape.add(m1, m2).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(w).unwrap().data, vec![0.5; 4]);
    }

    #[test]
    fn sum_loss_grad_is_ones() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", t2(2, 3, &[0.5; 6])).unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(&ps, w);
        let l = tape.sum(wn).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.param(w).unwrap().data, vec![1.0; 6]);
    }

    #[test]
    fn broadcast_rules_are_exact() {
        let mut tape = Tape::new();
        let a = tape.input(t2(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let row = tape.input(t2(1, 3, &[10., 20., 30.]));
        let s = tape.add(a, row).unwrap();
        assert_eq!(tape.value(s).data, vec![11., 22., 33., 14., 25., 36.]);
        // mismatched inner dim is refused
        let bad = tape.input(t2(1, 2, &[0., 0.]));
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn scalar_broadcast_reduces_grad() {
        let mut tape = Tape::new();
        let a = tape.input(t2(2, 2, &[1., 2., 3., 4.]));
        let c = tape.input(Tensor::scalar(5.0));
        let s = tape.mul(a, c).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.node(c).unwrap().data, vec![10.0]); // sum of a
        assert_eq!(g.node(a).unwrap().data, vec![5.0; 4]);
    }

    #[test]
    fn select_rows_scatter_adds_duplicates() {
        let mut tape = Tape::new();
        let a = tape.input(t2(2, 2, &[1., 2., 3., 4.]));
        let sel = tape.select_rows(a, Rc::new(vec![0, 0, 1])).unwrap();
        let l = tape.sum(sel).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.node(a).unwrap().data, vec![2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn segment_mean_empty_segment_is_zero() {
        let mut tape = Tape::new();
        let a = tape.input(t2(2, 2, &[2., 4., 6., 8.]));
        let segs = Rc::new(vec![vec![0, 1], vec![]]);
        let m = tape.segment_mean(a, segs).unwrap();
        assert_eq!(tape.value(m).data, vec![4.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let a = tape.input(t2(2, 3, &[1., 2., 3., -1., 0., 1.]));
        let s = tape.softmax_rows(a).unwrap();
        let v = tape.value(s);
        for r in 0..2 {
            let sum: f64 = v.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.input(t2(1, 2, &[1., 2.]));
        assert!(tape.backward(a).is_err());
    }
}
