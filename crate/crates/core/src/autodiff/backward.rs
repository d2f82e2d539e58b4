use super::{Graph, Gradients, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, conv1d_backward, depthwise_backward, Tensor};

pub(super) fn run(g: &Graph, loss: Var) -> Result<Gradients> {
    let loss_value = g.value(loss);
    if loss_value.numel() != 1 {
        return Err(Error::invalid(
            "backward",
            format!("loss must be scalar, got shape {:?}", loss_value.shape()),
        ));
    }
    if !loss_value.is_finite() {
        return Err(Error::NonFinite {
            op: g.nodes[loss.0].op.kind().name(),
            scope: g.scope_of(loss).to_string(),
        });
    }

    let n = loss.0 + 1;
    // nodes that lie on some path to the loss
    let mut live = vec![false; n];
    live[loss.0] = true;
    for id in (0..n).rev() {
        if live[id] {
            for input in g.nodes[id].op.inputs() {
                live[input.0] = true;
            }
        }
    }

    let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

    for id in (0..n).rev() {
        let Some(upstream) = grads[id].take() else {
            continue;
        };
        let node = &g.nodes[id];
        if let Op::Leaf = node.op {
            grads[id] = Some(upstream);
            continue;
        }
        let kind = node.op.kind();
        let mut contributions = local_grads(g, &node.op, &node.value, &upstream)?;
        if g.fault == Some(kind) {
            for (_, t) in contributions.iter_mut() {
                *t = t.scale(1.5);
            }
        }
        for (input, grad) in contributions {
            if !live[input.0] {
                continue;
            }
            if !grad.is_finite() {
                return Err(Error::NonFinite {
                    op: kind.name(),
                    scope: g.scope_of(Var(id)).to_string(),
                });
            }
            match &mut grads[input.0] {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => *slot = Some(grad),
            }
        }
    }

    let entries = g
        .params
        .iter()
        .map(|&p| {
            let grad = if p.0 < n { grads[p.0].take() } else { None };
            (p, grad.unwrap_or_else(|| Tensor::zeros(g.shape(p))))
        })
        .collect();
    Ok(Gradients { entries })
}

fn unary_map(x: &Tensor, up: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = x.data().iter().zip(up.data()).map(|(&a, &u)| f(a, u)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn local_grads(g: &Graph, op: &Op, out: &Tensor, up: &Tensor) -> Result<Vec<(Var, Tensor)>> {
    let v = |var: Var| g.value(var);
    Ok(match op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, up.clone()), (*b, up.clone())],
        Op::Sub(a, b) => vec![(*a, up.clone()), (*b, up.scale(-1.0))],
        Op::Mul(a, b) => vec![(*a, up.mul(v(*b))?), (*b, up.mul(v(*a))?)],
        Op::Scale(a, f) => vec![(*a, up.scale(*f))],
        Op::Relu(a) => vec![(*a, unary_map(v(*a), up, |x, u| if x > 0.0 { u } else { 0.0 }))],
        Op::Sigmoid(a) => vec![(*a, unary_map(out, up, |s, u| u * s * (1.0 - s)))],
        Op::Tanh(a) => vec![(*a, unary_map(out, up, |t, u| u * (1.0 - t * t)))],
        Op::MatMul(a, b) => {
            let (av, bv) = (v(*a), v(*b));
            let (m, k, n) = (av.dim(0), av.dim(1), bv.dim(1));
            let mut da = vec![0.0; m * k];
            tensor::matmul_bt_into(up.data(), bv.data(), &mut da, m, n, k);
            let mut db = vec![0.0; k * n];
            tensor::matmul_at_into(av.data(), up.data(), &mut db, m, k, n);
            vec![(*a, Tensor::new(vec![m, k], da)?), (*b, Tensor::new(vec![k, n], db)?)]
        }
        Op::Reshape(a) => vec![(*a, up.reshape(g.shape(*a))?)],
        Op::Sum(a) => vec![(*a, Tensor::full(g.shape(*a), up.data()[0]))],
        Op::Conv1d { x, w, b, dilation, anticausal } => {
            let (dx, dw, db) = conv1d_backward(v(*x), v(*w), up, *dilation, *anticausal);
            vec![(*x, dx), (*w, dw), (*b, db)]
        }
        Op::Depthwise { x, k, dilation } => {
            let (dx, dk) = depthwise_backward(v(*x), v(*k), up, *dilation);
            vec![(*x, dx), (*k, dk)]
        }
        Op::Pointwise { x, k } => {
            let (xv, kv) = (v(*x), v(*k));
            let (ci, t, co) = (xv.dim(0), xv.dim(1), kv.dim(0));
            let mut dx = vec![0.0; ci * t];
            tensor::matmul_at_into(kv.data(), up.data(), &mut dx, co, ci, t);
            let mut dk = vec![0.0; co * ci];
            tensor::matmul_bt_into(up.data(), xv.data(), &mut dk, co, t, ci);
            vec![(*x, Tensor::new(vec![ci, t], dx)?), (*k, Tensor::new(vec![co, ci], dk)?)]
        }
        Op::BiasAdd { x, b } => {
            let db = row_sums(up.data(), up.dim(0), up.dim(1));
            vec![(*x, up.clone()), (*b, Tensor::new(vec![db.len()], db)?)]
        }
        Op::ChannelScale { x, s } => {
            let (xv, sv) = (v(*x), v(*s));
            let t = xv.dim(1);
            let mut dx = up.data().to_vec();
            let mut ds = vec![0.0; sv.numel()];
            if t > 0 {
                for (c, row) in dx.chunks_exact_mut(t).enumerate() {
                    let xr = &xv.data()[c * t..(c + 1) * t];
                    ds[c] = row.iter().zip(xr).map(|(u, x)| u * x).sum();
                    row.iter_mut().for_each(|u| *u *= sv.data()[c]);
                }
            }
            vec![(*x, Tensor::new(xv.shape().to_vec(), dx)?), (*s, Tensor::new(vec![ds.len()], ds)?)]
        }
        Op::AvgPoolTime(x) => {
            let (c, t) = (g.shape(*x)[0], g.shape(*x)[1]);
            let inv = 1.0 / t as f64;
            let data = (0..c).flat_map(|ch| std::iter::repeat_n(up.data()[ch] * inv, t)).collect();
            vec![(*x, Tensor::new(vec![c, t], data)?)]
        }
        Op::Concat(parts) => {
            let sizes: Vec<usize> = parts.iter().map(|p| g.shape(*p)[0]).collect();
            let pieces = tensor::split_channels(up, &sizes)?;
            parts.iter().copied().zip(pieces).collect()
        }
        Op::Slice { x, start } => {
            let xs = g.shape(*x);
            let inner: usize = xs[1..].iter().product();
            let mut d = Tensor::zeros(xs);
            d.data_mut()[start * inner..start * inner + up.numel()].copy_from_slice(up.data());
            vec![(*x, d)]
        }
        Op::ReverseTime(x) => vec![(*x, tensor::reverse_time(up)?)],
        Op::Dropout { x, mask } => {
            let data = up.data().iter().zip(mask).map(|(u, m)| u * m).collect();
            vec![(*x, Tensor::new(up.shape().to_vec(), data)?)]
        }
        Op::Dense { x, w, b } => {
            let (xv, wv) = (v(*x), v(*w));
            let (co, ci) = (wv.dim(0), wv.dim(1));
            let u = up.data();
            let mut dx = vec![0.0; ci];
            let mut dw = vec![0.0; co * ci];
            for o in 0..co {
                let wr = &wv.data()[o * ci..(o + 1) * ci];
                for i in 0..ci {
                    dx[i] += u[o] * wr[i];
                    dw[o * ci + i] = u[o] * xv.data()[i];
                }
            }
            vec![
                (*x, Tensor::new(vec![ci], dx)?),
                (*w, Tensor::new(vec![co, ci], dw)?),
                (*b, up.clone()),
            ]
        }
        Op::LstmScan(scan) => scan.backward(v(scan.x), v(scan.w_ih), v(scan.w_hh), up),
        Op::CrossEntropy { logits, label, probs } => {
            let u = up.data()[0];
            let mut d: Vec<f64> = probs.iter().map(|p| p * u).collect();
            d[*label] -= u;
            vec![(*logits, Tensor::new(vec![d.len()], d)?)]
        }
    })
}

fn row_sums(data: &[f64], c: usize, t: usize) -> Vec<f64> {
    if t == 0 {
        return vec![0.0; c];
    }
    data.chunks_exact(t).map(|r| r.iter().sum()).collect()
}
