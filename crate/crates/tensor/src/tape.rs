use std::cell::{Cell, Ref, RefCell};

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::ops::{self, matmul_dims, transpose_data, transpose_split};
use crate::tensor::Tensor;
use crate::MASK_VALUE;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    Transpose(usize, usize, usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Gather { table: usize, ids: Vec<usize> },
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Relu(usize),
    Dropout { x: usize, mask: Vec<f32> },
    MaskedFill { x: usize, mask: Vec<bool> },
    Sum(usize),
    Mean(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a, _, _)
            | Op::Reshape(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::Gather { table, .. } => vec![*table],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Dropout { x, .. } | Op::MaskedFill { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order; [`Tape::backward`] replays them in
/// reverse. A tape is single-threaded and meant to live for one forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    seed: u64,
    dropout_streams: Cell<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// Dropout masks on this tape are drawn from ChaCha streams keyed by
    /// `seed`, one stream per dropout call in recording order.
    pub fn with_seed(seed: u64) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            seed,
            dropout_streams: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn param(&self, value: &Tensor) -> Var<'_> {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let needs_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].needs_grad)
        };
        self.push(value, op, needs_grad)
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            // keep the gradient of interior nodes available to callers
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f32])) {
    if !nodes[id].needs_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0f32; nodes[id].value.numel()]);
    f(slot);
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn backprop(nodes: &[Node], id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (dims, _) = matmul_dims(av.shape(), bv.shape()).expect("recorded shapes");
            let ops::MatmulDims { batch, m, k, n, shared_rhs } = dims;
            accumulate(grads, nodes, *a, |ga| {
                for bi in 0..batch {
                    let boff = if shared_rhs { 0 } else { bi * k * n };
                    kernels::matmul_a_bt_acc(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &bv.data()[boff..boff + k * n],
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for bi in 0..batch {
                    let boff = if shared_rhs { 0 } else { bi * k * n };
                    kernels::matmul_at_b_acc(
                        &av.data()[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut gb[boff..boff + k * n],
                        m,
                        k,
                        n,
                    );
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, |ga| add_into(ga, g));
            accumulate(grads, nodes, *b, |gb| {
                for chunk in g.chunks_exact(gb.len().max(1)) {
                    add_into(gb, chunk);
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            let w = bv.len().max(1);
            accumulate(grads, nodes, *a, |ga| {
                for (gac, gc) in ga.chunks_exact_mut(w).zip(g.chunks_exact(w)) {
                    for ((x, &gi), &bi) in gac.iter_mut().zip(gc).zip(bv) {
                        *x += gi * bi;
                    }
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for (gc, ac) in g.chunks_exact(w).zip(av.chunks_exact(w)) {
                    for ((x, &gi), &ai) in gb.iter_mut().zip(gc).zip(ac) {
                        *x += gi * ai;
                    }
                }
            });
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, |ga| {
            for (x, &gi) in ga.iter_mut().zip(g) {
                *x += gi * c;
            }
        }),
        Op::Transpose(a, d0, d1) => accumulate(grads, nodes, *a, |ga| {
            let mut tmp = vec![0f32; g.len()];
            transpose_data(g, &mut tmp, transpose_split(out.shape(), *d0, *d1));
            add_into(ga, &tmp);
        }),
        Op::Reshape(a) => accumulate(grads, nodes, *a, |ga| add_into(ga, g)),
        Op::Concat(parts) => {
            let width = out.last_dim();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.last_dim();
                accumulate(grads, nodes, p, |gp| {
                    for (r, gr) in gp.chunks_exact_mut(w.max(1)).enumerate() {
                        add_into(gr, &g[r * width + offset..r * width + offset + w]);
                    }
                });
                offset += w;
            }
        }
        Op::Gather { table, ids } => accumulate(grads, nodes, *table, |gt| {
            let d = out.last_dim();
            for (r, &id) in ids.iter().enumerate() {
                add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
            }
        }),
        Op::Softmax(a) => accumulate(grads, nodes, *a, |ga| {
            let d = out.last_dim();
            for ((gar, gr), yr) in ga
                .chunks_exact_mut(d)
                .zip(g.chunks_exact(d))
                .zip(out.data().chunks_exact(d))
            {
                let s: f64 = gr.iter().zip(yr).map(|(&gi, &yi)| gi as f64 * yi as f64).sum();
                for ((x, &gi), &yi) in gar.iter_mut().zip(gr).zip(yr) {
                    *x += (yi as f64 * (gi as f64 - s)) as f32;
                }
            }
        }),
        Op::LogSoftmax(a) => accumulate(grads, nodes, *a, |ga| {
            let d = out.last_dim();
            for ((gar, gr), yr) in ga
                .chunks_exact_mut(d)
                .zip(g.chunks_exact(d))
                .zip(out.data().chunks_exact(d))
            {
                let s: f64 = gr.iter().map(|&gi| gi as f64).sum();
                for ((x, &gi), &yi) in gar.iter_mut().zip(gr).zip(yr) {
                    *x += (gi as f64 - (yi as f64).exp() * s) as f32;
                }
            }
        }),
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let gamma = nodes[*gain].value.data();
            let d = gamma.len();
            accumulate(grads, nodes, *x, |gx| {
                for (r, ((gxr, gr), hr)) in gx
                    .chunks_exact_mut(d)
                    .zip(g.chunks_exact(d))
                    .zip(xhat.chunks_exact(d))
                    .enumerate()
                {
                    let mut mean_dh = 0f64;
                    let mut mean_dh_h = 0f64;
                    for i in 0..d {
                        let dh = gr[i] as f64 * gamma[i] as f64;
                        mean_dh += dh;
                        mean_dh_h += dh * hr[i] as f64;
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    let rs = rstd[r] as f64;
                    for i in 0..d {
                        let dh = gr[i] as f64 * gamma[i] as f64;
                        gxr[i] += (rs * (dh - mean_dh - hr[i] as f64 * mean_dh_h)) as f32;
                    }
                }
            });
            accumulate(grads, nodes, *gain, |gg| {
                for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for i in 0..d {
                        gg[i] += gr[i] * hr[i];
                    }
                }
            });
            accumulate(grads, nodes, *bias, |gb| {
                for gr in g.chunks_exact(d) {
                    add_into(gb, gr);
                }
            });
        }
        Op::Relu(a) => {
            let av = nodes[*a].value.data();
            accumulate(grads, nodes, *a, |ga| {
                for ((x, &gi), &ai) in ga.iter_mut().zip(g).zip(av) {
                    if ai > 0.0 {
                        *x += gi;
                    }
                }
            });
        }
        Op::Dropout { x, mask } => accumulate(grads, nodes, *x, |gx| {
            for ((v, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                *v += gi * m;
            }
        }),
        Op::MaskedFill { x, mask } => accumulate(grads, nodes, *x, |gx| {
            for ((v, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                if !m {
                    *v += gi;
                }
            }
        }),
        Op::Sum(a) => accumulate(grads, nodes, *a, |ga| {
            for x in ga.iter_mut() {
                *x += g[0];
            }
        }),
        Op::Mean(a) => accumulate(grads, nodes, *a, |ga| {
            let c = g[0] / ga.len().max(1) as f32;
            for x in ga.iter_mut() {
                *x += c;
            }
        }),
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; all zeros when `var` does
    /// not influence the loss.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        let shape = var.shape();
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        let shape = var.shape();
        match self.grads[var.id].take() {
            Some(g) => Tensor::new(shape, g).expect("gradient matches value shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.value(self.id))
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let v = self.tape.value(self.id).matmul(&self.tape.value(rhs.id))?;
        Ok(self.tape.record(v, Op::MatMul(self.id, rhs.id)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let v = self.tape.value(self.id).add(&self.tape.value(rhs.id))?;
        Ok(self.tape.record(v, Op::Add(self.id, rhs.id)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let v = self.tape.value(self.id).mul(&self.tape.value(rhs.id))?;
        Ok(self.tape.record(v, Op::Mul(self.id, rhs.id)))
    }

    pub fn scale(self, c: f32) -> Var<'t> {
        let v = self.tape.value(self.id).scale(c);
        self.tape.record(v, Op::Scale(self.id, c))
    }

    pub fn transpose(self, d0: usize, d1: usize) -> Result<Var<'t>> {
        let v = self.tape.value(self.id).transpose(d0, d1)?;
        Ok(self.tape.record(v, Op::Transpose(self.id, d0, d1)))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let v = self.tape.value(self.id).reshape(shape)?;
        Ok(self.tape.record(v, Op::Reshape(self.id)))
    }

    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        parts.iter().for_each(|p| first.same_tape(p));
        let v = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| first.tape.value(p.id)).collect();
            let refs: Vec<&Tensor> = vals.iter().map(|r| &**r).collect();
            Tensor::concat_last(&refs)?
        };
        Ok(first
            .tape
            .record(v, Op::Concat(parts.iter().map(|p| p.id).collect())))
    }

    /// Embedding lookup into a `[vocab, d]` table.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>> {
        let v = self.tape.value(self.id).gather_rows(ids)?;
        Ok(self.tape.record(
            v,
            Op::Gather {
                table: self.id,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn softmax_last(self) -> Var<'t> {
        let v = self.tape.value(self.id).softmax_last();
        self.tape.record(v, Op::Softmax(self.id))
    }

    pub fn log_softmax_last(self) -> Var<'t> {
        let v = self.tape.value(self.id).log_softmax_last();
        self.tape.record(v, Op::LogSoftmax(self.id))
    }

    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&gain);
        self.same_tape(&bias);
        let ln = self
            .tape
            .value(self.id)
            .layer_norm_full(&self.tape.value(gain.id), &self.tape.value(bias.id))?;
        Ok(self.tape.record(
            ln.out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat: ln.xhat,
                rstd: ln.rstd,
            },
        ))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.tape.value(self.id).relu();
        self.tape.record(v, Op::Relu(self.id))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is zero.
    pub fn dropout(self, p: f32, train: bool) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self);
        }
        let stream = self.tape.dropout_streams.get();
        self.tape.dropout_streams.set(stream + 1);
        let (v, mask) = {
            let x = self.tape.value(self.id);
            let mask = ops::dropout_mask(x.numel(), p, self.tape.seed, stream);
            let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
            (Tensor::new(x.shape().to_vec(), data)?, mask)
        };
        Ok(self.tape.record(v, Op::Dropout { x: self.id, mask }))
    }

    /// Fill positions where `mask` is true with [`MASK_VALUE`].
    pub fn masked_fill(self, mask: &[bool]) -> Result<Var<'t>> {
        let v = self.tape.value(self.id).masked_fill(mask, MASK_VALUE)?;
        Ok(self.tape.record(
            v,
            Op::MaskedFill {
                x: self.id,
                mask: mask.to_vec(),
            },
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let v = self.tape.value(self.id).sum();
        self.tape.record(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.tape.value(self.id).mean();
        self.tape.record(v, Op::Mean(self.id))
    }
}
