//! Tape-based reverse-mode autodiff over `Tensor`.
//!
//! Graphs are built per step out of `Var` nodes; `backward` walks the tape
//! once and returns gradients keyed by node id. Graph construction is
//! single-threaded; the heavy kernels parallelize internally.

use crate::tensor::{matmul as t_matmul, matmul_nt, matmul_tn, Tensor};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackwardFn = Box<dyn Fn(&Tensor, &[Var]) -> Vec<Option<Tensor>>>;

pub struct VarNode {
    id: u64,
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// Handle to a node in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<VarNode>);

impl Var {
    pub fn leaf(value: Tensor) -> Var {
        Var(Rc::new(VarNode { id: fresh_id(), value, parents: vec![], backward: None }))
    }

    fn unary(value: Tensor, parent: &Var, back: BackwardFn) -> Var {
        Var(Rc::new(VarNode {
            id: fresh_id(),
            value,
            parents: vec![parent.clone()],
            backward: Some(back),
        }))
    }

    fn nary(value: Tensor, parents: Vec<Var>, back: BackwardFn) -> Var {
        Var(Rc::new(VarNode { id: fresh_id(), value, parents, backward: Some(back) }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn scalar_value(&self) -> f32 {
        assert_eq!(self.0.value.numel(), 1, "scalar_value needs a 1-element tensor");
        self.0.value.data()[0]
    }
}

/// Gradients from one backward pass, keyed by node id.
pub struct Grads {
    map: HashMap<u64, Tensor>,
}

impl Grads {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        self.map.get(&v.id())
    }
}

/// Reverse-mode sweep from a scalar root.
pub fn backward(root: &Var) -> Grads {
    assert_eq!(root.value().numel(), 1, "backward needs a scalar root");
    // Post-order DFS.
    let mut order: Vec<Var> = vec![];
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Var, usize)> = vec![(root.clone(), 0)];
    while let Some((node, child)) = stack.pop() {
        if child == 0 && !visited.insert(node.id()) {
            continue;
        }
        if child < node.0.parents.len() {
            let next = node.0.parents[child].clone();
            stack.push((node, child + 1));
            if !visited.contains(&next.id()) {
                stack.push((next, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut map: HashMap<u64, Tensor> = HashMap::new();
    map.insert(root.id(), Tensor::scalar(1.0));
    for node in order.iter().rev() {
        let Some(back) = node.0.backward.as_ref() else { continue };
        let Some(gout) = map.get(&node.id()).cloned() else { continue };
        let parent_grads = back(&gout, &node.0.parents);
        assert_eq!(parent_grads.len(), node.0.parents.len());
        for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
            if let Some(pg) = pg {
                match map.get_mut(&parent.id()) {
                    Some(acc) => acc.add_inplace(&pg),
                    None => {
                        map.insert(parent.id(), pg);
                    }
                }
            }
        }
    }
    Grads { map }
}

// ---------------------------------------------------------------------------
// elementwise and arithmetic ops

pub fn add(a: &Var, b: &Var) -> Var {
    let value = a.value().zip(b.value(), |x, y| x + y);
    Var::nary(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
    )
}

pub fn sub(a: &Var, b: &Var) -> Var {
    let value = a.value().zip(b.value(), |x, y| x - y);
    Var::nary(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.scale(-1.0))]),
    )
}

pub fn mul(a: &Var, b: &Var) -> Var {
    let value = a.value().zip(b.value(), |x, y| x * y);
    Var::nary(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            let da = g.zip(parents[1].value(), |gv, bv| gv * bv);
            let db = g.zip(parents[0].value(), |gv, av| gv * av);
            vec![Some(da), Some(db)]
        }),
    )
}

pub fn scale(a: &Var, s: f32) -> Var {
    Var::unary(
        a.value().scale(s),
        a,
        Box::new(move |g, _| vec![Some(g.scale(s))]),
    )
}

pub fn add_scalar(a: &Var, s: f32) -> Var {
    Var::unary(
        a.value().map(|v| v + s),
        a,
        Box::new(|g, _| vec![Some(g.clone())]),
    )
}

pub fn square(a: &Var) -> Var {
    Var::unary(
        a.value().map(|v| v * v),
        a,
        Box::new(|g, parents| {
            vec![Some(g.zip(parents[0].value(), |gv, av| gv * 2.0 * av))]
        }),
    )
}

pub fn relu(a: &Var) -> Var {
    Var::unary(
        a.value().map(|v| v.max(0.0)),
        a,
        Box::new(|g, parents| {
            vec![Some(g.zip(parents[0].value(), |gv, av| if av > 0.0 { gv } else { 0.0 }))]
        }),
    )
}

pub fn tanh(a: &Var) -> Var {
    let value = a.value().map(|v| v.tanh());
    let cache = value.clone();
    Var::unary(
        value,
        a,
        Box::new(move |g, _| vec![Some(g.zip(&cache, |gv, tv| gv * (1.0 - tv * tv)))]),
    )
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(a: &Var) -> Var {
    let value = a.value().map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p());
    Var::unary(
        value,
        a,
        Box::new(|g, parents| {
            // d softplus = sigmoid(x)
            vec![Some(g.zip(parents[0].value(), |gv, av| {
                gv * (1.0 / (1.0 + (-av).exp()))
            }))]
        }),
    )
}

/// Mish activation: x * tanh(softplus(x)), built from primitives.
pub fn mish(a: &Var) -> Var {
    let t = tanh(&softplus(a));
    mul(a, &t)
}

pub fn sum_all(a: &Var) -> Var {
    let value = Tensor::scalar(a.value().sum());
    let shape = a.shape().to_vec();
    Var::unary(
        value,
        a,
        Box::new(move |g, _| {
            let gv = g.data()[0];
            vec![Some(Tensor::full(&shape, gv))]
        }),
    )
}

pub fn mean_all(a: &Var) -> Var {
    let n = a.value().numel() as f32;
    scale(&sum_all(a), 1.0 / n)
}

/// Mean squared error between same-shape tensors.
pub fn mse(a: &Var, b: &Var) -> Var {
    mean_all(&square(&sub(a, b)))
}

// ---------------------------------------------------------------------------
// linear algebra

pub fn matmul(a: &Var, b: &Var) -> Var {
    let value = t_matmul(a.value(), b.value());
    Var::nary(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            let da = matmul_nt(g, parents[1].value());
            let db = matmul_tn(parents[0].value(), g);
            vec![Some(da), Some(db)]
        }),
    )
}

/// x [m, n] + bias [n] broadcast over rows.
pub fn add_bias(x: &Var, b: &Var) -> Var {
    let (m, n) = (x.value().rows(), x.value().cols());
    assert_eq!(b.value().numel(), n, "bias length must match columns");
    let mut out = x.value().clone();
    for row in out.data_mut().chunks_mut(n) {
        for (o, &bv) in row.iter_mut().zip(b.value().data()) {
            *o += bv;
        }
    }
    Var::nary(
        out,
        vec![x.clone(), b.clone()],
        Box::new(move |g, _| {
            let mut db = vec![0.0f32; n];
            for row in g.data().chunks(n) {
                for (d, &gv) in db.iter_mut().zip(row) {
                    *d += gv;
                }
            }
            vec![Some(g.clone()), Some(Tensor::from_vec(&[n], db))]
        }),
    )
}

/// Fully connected layer: x*W + b.
pub fn linear(x: &Var, w: &Var, b: Option<&Var>) -> Var {
    let y = matmul(x, w);
    match b {
        Some(b) => add_bias(&y, b),
        None => y,
    }
}

pub fn reshape(a: &Var, shape: &[usize]) -> Var {
    let value = a.value().clone().reshaped(shape);
    let back_shape = a.shape().to_vec();
    Var::unary(
        value,
        a,
        Box::new(move |g, _| vec![Some(g.clone().reshaped(&back_shape))]),
    )
}

/// Concatenate 2-d tensors along columns.
pub fn concat_cols(parts: &[Var]) -> Var {
    assert!(!parts.is_empty());
    let m = parts[0].value().rows();
    let widths: Vec<usize> = parts.iter().map(|p| p.value().cols()).collect();
    let total: usize = widths.iter().sum();
    let mut out = Tensor::zeros(&[m, total]);
    {
        let od = out.data_mut();
        let mut off = 0usize;
        for (p, &w) in parts.iter().zip(&widths) {
            assert_eq!(p.value().rows(), m, "concat_cols rows must match");
            for i in 0..m {
                od[i * total + off..i * total + off + w]
                    .copy_from_slice(&p.value().data()[i * w..(i + 1) * w]);
            }
            off += w;
        }
    }
    let widths_b = widths.clone();
    Var::nary(
        out,
        parts.to_vec(),
        Box::new(move |g, _| {
            let total: usize = widths_b.iter().sum();
            let m = g.rows();
            let mut grads = vec![];
            let mut off = 0usize;
            for &w in &widths_b {
                let mut part = Tensor::zeros(&[m, w]);
                for i in 0..m {
                    part.data_mut()[i * w..(i + 1) * w]
                        .copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                }
                grads.push(Some(part));
                off += w;
            }
            grads
        }),
    )
}

/// Columns [lo, hi) of a 2-d tensor.
pub fn slice_cols(a: &Var, lo: usize, hi: usize) -> Var {
    let (m, n) = (a.value().rows(), a.value().cols());
    assert!(lo < hi && hi <= n);
    let w = hi - lo;
    let mut out = Tensor::zeros(&[m, w]);
    for i in 0..m {
        out.data_mut()[i * w..(i + 1) * w]
            .copy_from_slice(&a.value().data()[i * n + lo..i * n + hi]);
    }
    Var::unary(
        out,
        a,
        Box::new(move |g, _| {
            let mut da = Tensor::zeros(&[m, n]);
            for i in 0..m {
                da.data_mut()[i * n + lo..i * n + hi].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            vec![Some(da)]
        }),
    )
}

// ---------------------------------------------------------------------------
// network-specific ops

/// Row gather from an embedding table [vocab, dim] by index list.
pub fn embedding(table: &Var, indices: &[usize]) -> Var {
    let (v, e) = (table.value().rows(), table.value().cols());
    let mut out = Tensor::zeros(&[indices.len(), e]);
    for (i, &idx) in indices.iter().enumerate() {
        assert!(idx < v, "embedding index {idx} out of range {v}");
        out.data_mut()[i * e..(i + 1) * e]
            .copy_from_slice(&table.value().data()[idx * e..(idx + 1) * e]);
    }
    let idx = indices.to_vec();
    Var::unary(
        out,
        table,
        Box::new(move |g, _| {
            let mut dt = Tensor::zeros(&[v, e]);
            for (i, &ix) in idx.iter().enumerate() {
                let dst = &mut dt.data_mut()[ix * e..(ix + 1) * e];
                for (d, &gv) in dst.iter_mut().zip(&g.data()[i * e..(i + 1) * e]) {
                    *d += gv;
                }
            }
            vec![Some(dt)]
        }),
    )
}

/// Inverted dropout; identity in eval mode.
pub fn dropout(a: &Var, p: f32, train: bool, rng: &mut ChaCha12Rng) -> Var {
    if !train || p <= 0.0 {
        return a.clone();
    }
    assert!(p < 1.0, "dropout probability must be below 1");
    let keep = 1.0 - p;
    let mask: Vec<f32> = (0..a.value().numel())
        .map(|_| if rng.gen_range(0.0f32..1.0) < p { 0.0 } else { 1.0 / keep })
        .collect();
    let mask = Tensor::from_vec(a.shape(), mask);
    let value = a.value().zip(&mask, |x, m| x * m);
    Var::unary(
        value,
        a,
        Box::new(move |g, _| vec![Some(g.zip(&mask, |gv, m| gv * m))]),
    )
}

/// Symmetric max over groups of `group` consecutive rows: [b*group, c] -> [b, c].
/// Gradient routes to each argmax row.
pub fn maxpool_rows(a: &Var, group: usize) -> Var {
    let (m, c) = (a.value().rows(), a.value().cols());
    assert!(group > 0 && m % group == 0, "rows must divide into groups");
    let b = m / group;
    let mut out = Tensor::full(&[b, c], f32::NEG_INFINITY);
    let mut argmax = vec![0usize; b * c];
    for i in 0..m {
        let g = i / group;
        for j in 0..c {
            let v = a.value().data()[i * c + j];
            if v > out.data()[g * c + j] {
                out.data_mut()[g * c + j] = v;
                argmax[g * c + j] = i;
            }
        }
    }
    Var::unary(
        out,
        a,
        Box::new(move |g, _| {
            let mut da = Tensor::zeros(&[m, c]);
            for gi in 0..b {
                for j in 0..c {
                    let src = argmax[gi * c + j];
                    da.data_mut()[src * c + j] += g.data()[gi * c + j];
                }
            }
            vec![Some(da)]
        }),
    )
}

/// FiLM over channels-last temporal rows: x is [b*t, c], gamma/beta are
/// [b, c]; y[(b,t), c] = gamma[b,c] * x + beta[b,c].
pub fn film_rows(x: &Var, gamma: &Var, beta: &Var, t: usize) -> Var {
    let (m, c) = (x.value().rows(), x.value().cols());
    assert!(m % t == 0);
    let b = m / t;
    assert_eq!(gamma.value().shape(), &[b, c]);
    assert_eq!(beta.value().shape(), &[b, c]);
    let mut out = Tensor::zeros(&[m, c]);
    for i in 0..m {
        let bi = i / t;
        for j in 0..c {
            out.data_mut()[i * c + j] = gamma.value().data()[bi * c + j]
                * x.value().data()[i * c + j]
                + beta.value().data()[bi * c + j];
        }
    }
    Var::nary(
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, parents| {
            let xv = parents[0].value();
            let gv = parents[1].value();
            let mut dx = Tensor::zeros(&[m, c]);
            let mut dgamma = Tensor::zeros(&[b, c]);
            let mut dbeta = Tensor::zeros(&[b, c]);
            for i in 0..m {
                let bi = i / t;
                for j in 0..c {
                    let go = g.data()[i * c + j];
                    dx.data_mut()[i * c + j] = go * gv.data()[bi * c + j];
                    dgamma.data_mut()[bi * c + j] += go * xv.data()[i * c + j];
                    dbeta.data_mut()[bi * c + j] += go;
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    )
}

/// 1-d temporal convolution in channels-last layout via im2col.
///
/// x: [b*t_in, c_in] with batch b and length t_in; w: [k*c_in, c_out];
/// bias: [c_out]. Zero padding `pad`, stride `stride`.
/// Output: [b * t_out, c_out] with t_out = (t_in + 2 pad - k) / stride + 1.
pub fn conv1d_rows(
    x: &Var,
    w: &Var,
    bias: &Var,
    batch: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Var {
    let (m, c_in) = (x.value().rows(), x.value().cols());
    assert_eq!(m, batch * t_in, "x rows must equal batch * t_in");
    assert_eq!(w.value().rows(), k * c_in, "kernel rows must be k * c_in");
    let c_out = w.value().cols();
    assert!(t_in + 2 * pad >= k, "kernel longer than padded input");
    let t_out = (t_in + 2 * pad - k) / stride + 1;

    // im2col: each output row gathers its k input rows.
    let mut cols = Tensor::zeros(&[batch * t_out, k * c_in]);
    {
        let cd = cols.data_mut();
        let xd = x.value().data();
        for bi in 0..batch {
            for to in 0..t_out {
                let row = bi * t_out + to;
                for kk in 0..k {
                    let ti = (to * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t_in as isize {
                        continue;
                    }
                    let src = (bi * t_in + ti as usize) * c_in;
                    let dst = row * (k * c_in) + kk * c_in;
                    cd[dst..dst + c_in].copy_from_slice(&xd[src..src + c_in]);
                }
            }
        }
    }

    let mut value = t_matmul(&cols, w.value());
    for row in value.data_mut().chunks_mut(c_out) {
        for (o, &bv) in row.iter_mut().zip(bias.value().data()) {
            *o += bv;
        }
    }

    Var::nary(
        value,
        vec![x.clone(), w.clone(), bias.clone()],
        Box::new(move |g, parents| {
            let w = parents[1].value();
            // dW = cols^T g ; dcols = g W^T ; db = column sum.
            let dw = matmul_tn(&cols, g);
            let dcols = matmul_nt(g, w);
            let mut db = vec![0.0f32; c_out];
            for row in g.data().chunks(c_out) {
                for (d, &gv) in db.iter_mut().zip(row) {
                    *d += gv;
                }
            }
            // col2im scatter-add.
            let mut dx = Tensor::zeros(&[batch * t_in, c_in]);
            {
                let dd = dx.data_mut();
                let cd = dcols.data();
                for bi in 0..batch {
                    for to in 0..t_out {
                        let row = bi * t_out + to;
                        for kk in 0..k {
                            let ti = (to * stride + kk) as isize - pad as isize;
                            if ti < 0 || ti >= t_in as isize {
                                continue;
                            }
                            let dst = (bi * t_in + ti as usize) * c_in;
                            let src = row * (k * c_in) + kk * c_in;
                            for (d, &v) in dd[dst..dst + c_in].iter_mut().zip(&cd[src..src + c_in])
                            {
                                *d += v;
                            }
                        }
                    }
                }
            }
            vec![Some(dx), Some(dw), Some(Tensor::from_vec(&[c_out], db))]
        }),
    )
}

/// Nearest-neighbor temporal upsample by 2 in channels-last layout:
/// [b*t, c] -> [b*2t, c].
pub fn upsample2_rows(x: &Var, batch: usize, t: usize) -> Var {
    let (m, c) = (x.value().rows(), x.value().cols());
    assert_eq!(m, batch * t);
    let mut out = Tensor::zeros(&[batch * 2 * t, c]);
    for bi in 0..batch {
        for ti in 0..t {
            let src = (bi * t + ti) * c;
            for rep in 0..2 {
                let dst = (bi * 2 * t + 2 * ti + rep) * c;
                out.data_mut()[dst..dst + c]
                    .copy_from_slice(&x.value().data()[src..src + c]);
            }
        }
    }
    Var::unary(
        out,
        x,
        Box::new(move |g, _| {
            let mut dx = Tensor::zeros(&[batch * t, c]);
            for bi in 0..batch {
                for ti in 0..t {
                    let dst = (bi * t + ti) * c;
                    for rep in 0..2 {
                        let src = (bi * 2 * t + 2 * ti + rep) * c;
                        for (d, &v) in dx.data_mut()[dst..dst + c]
                            .iter_mut()
                            .zip(&g.data()[src..src + c])
                        {
                            *d += v;
                        }
                    }
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Per-sample weighting: x [b, n] scaled row-wise by constant weights [b].
pub fn scale_rows(x: &Var, weights: &[f32]) -> Var {
    let (m, n) = (x.value().rows(), x.value().cols());
    assert_eq!(m, weights.len());
    let mut out = x.value().clone();
    for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
        for o in row.iter_mut() {
            *o *= weights[i];
        }
    }
    let ws = weights.to_vec();
    Var::unary(
        out,
        x,
        Box::new(move |g, _| {
            let mut dx = g.clone();
            for (i, row) in dx.data_mut().chunks_mut(n).enumerate() {
                for o in row.iter_mut() {
                    *o *= ws[i];
                }
            }
            vec![Some(dx)]
        }),
    )
}
