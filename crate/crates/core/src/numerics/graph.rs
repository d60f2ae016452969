use super::ops::{self, MatmulPlan, NormStats};
use super::{ParamSet, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    MatMul {
        a: Var,
        b: Var,
        plan: MatmulPlan,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<T>,
    },
    Gelu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    SliceLast {
        x: Var,
        start: usize,
    },
    SplitHeads {
        x: Var,
        heads: usize,
    },
    MergeHeads {
        x: Var,
    },
    TransposeLast2 {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in topological order, so
/// the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NumericFault(format!(
                "non-finite output from {} on shape {:?}",
                op_name(&op),
                value.shape()
            )));
        }
        let requires_grad =
            matches!(op, Op::Param(_)) || inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to parameter `id` of the set passed to [`Graph::backward`].
    pub fn param(&mut self, params: &ParamSet<T>, id: usize) -> Var {
        self.nodes.push(Node {
            value: params.by_id(id).value.clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = ops::matmul_plan(self.value(a).shape(), self.value(b).shape())?;
        let out = ops::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul { a, b, plan }, &[a, b])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(w), self.value(b))?;
        self.push(out, Op::Linear { x, w, b }, &[x, w, b])
    }

    /// `a + b`, where `b`'s shape must equal a trailing suffix of `a`'s shape
    /// (it is repeated over the leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add", sa, sb));
        }
        let bd = self.value(b).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_exact_mut(bd.len()) {
            for (o, &v) in chunk.iter_mut().zip(bd) {
                *o += v;
            }
        }
        self.push(out, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push(out, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = ops::softmax(self.value(x), axis)?;
        self.push(out, Op::Softmax { x, axis }, &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, stats) =
            ops::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            &[x, gamma, beta],
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = ops::gelu(self.value(x));
        self.push(out, Op::Gelu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid { x }, &[x])
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if len == 0 || start + len > d {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of last dim {d}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(t.len() / d * len);
        for row in t.data().chunks_exact(d) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(&shape, data)?;
        self.push(out, Op::SliceLast { x, start }, &[x])
    }

    /// `[.., N, H·d] → [.., H, N, d]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() < 2 || heads == 0 || !s[s.len() - 1].is_multiple_of(heads) {
            return Err(Error::shape("split_heads", s, &[heads]));
        }
        let (n, hd) = (s[s.len() - 2], s[s.len() - 1]);
        let d = hd / heads;
        let lead = t.len() / (n * hd);
        let mut data = vec![T::zero(); t.len()];
        permute_heads(t.data(), &mut data, lead, n, heads, d, true);
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend([heads, n, d]);
        let out = Tensor::new(&shape, data)?;
        self.push(out, Op::SplitHeads { x, heads }, &[x])
    }

    /// `[.., H, N, d] → [.., N, H·d]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() < 3 {
            return Err(Error::shape("merge_heads", s, &[]));
        }
        let (heads, n, d) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
        let lead = t.len() / (heads * n * d);
        let mut data = vec![T::zero(); t.len()];
        permute_heads(t.data(), &mut data, lead, n, heads, d, false);
        let mut shape = s[..s.len() - 3].to_vec();
        shape.extend([n, heads * d]);
        let out = Tensor::new(&shape, data)?;
        self.push(out, Op::MergeHeads { x }, &[x])
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::shape("transpose", t.shape(), &[]));
        }
        let out = transpose_last2(t);
        self.push(out, Op::TransposeLast2 { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x }, &[x])
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape("mse", p.shape(), t.shape()));
        }
        let n = T::of(p.len() as f64);
        let total: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.push(
            Tensor::scalar(total / n),
            Op::Mse { pred, target },
            &[pred, target],
        )
    }

    /// Reverse sweep from `loss`, accumulating `∂loss/∂θ` into the `grad` of
    /// every parameter leaf. Repeated calls accumulate.
    pub fn backward(&self, loss: Var, params: &mut ParamSet<T>) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = Accumulator {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => params.by_id_mut(*id).grad.add_assign(&dy)?,
                Op::MatMul { a, b, plan } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if acc.wants(*a) {
                        let mut ga = Tensor::zeros(ta.shape());
                        ops::matmul_backward(plan, ta, tb, &dy, Some(&mut ga), None);
                        acc.add(*a, ga)?;
                    }
                    if acc.wants(*b) {
                        let mut gb = Tensor::zeros(tb.shape());
                        ops::matmul_backward(plan, ta, tb, &dy, None, Some(&mut gb));
                        acc.add(*b, gb)?;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (din, dout) = (tw.shape()[0], tw.shape()[1]);
                    let rows = tx.len() / din;
                    if acc.wants(*x) {
                        let mut gx = Tensor::zeros(tx.shape());
                        ops::gemm(
                            rows,
                            dout,
                            din,
                            dy.data(),
                            false,
                            tw.data(),
                            true,
                            gx.data_mut(),
                            false,
                        );
                        acc.add(*x, gx)?;
                    }
                    if acc.wants(*w) {
                        let mut gw = Tensor::zeros(tw.shape());
                        ops::gemm(
                            din,
                            rows,
                            dout,
                            tx.data(),
                            true,
                            dy.data(),
                            false,
                            gw.data_mut(),
                            false,
                        );
                        acc.add(*w, gw)?;
                    }
                    if acc.wants(*b) {
                        let mut gb = Tensor::zeros(&[dout]);
                        for row in dy.data().chunks_exact(dout) {
                            for (g, &v) in gb.data_mut().iter_mut().zip(row) {
                                *g += v;
                            }
                        }
                        acc.add(*b, gb)?;
                    }
                }
                Op::Add { a, b } => {
                    if acc.wants(*b) {
                        let tb = self.value(*b);
                        let mut gb = Tensor::zeros(tb.shape());
                        for chunk in dy.data().chunks_exact(tb.len()) {
                            for (g, &v) in gb.data_mut().iter_mut().zip(chunk) {
                                *g += v;
                            }
                        }
                        acc.add(*b, gb)?;
                    }
                    if acc.wants(*a) {
                        acc.add(*a, dy)?;
                    }
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if acc.wants(*a) {
                        let g = zip_map(&dy, tb, |d, y| d * y);
                        acc.add(*a, g)?;
                    }
                    if acc.wants(*b) {
                        let g = zip_map(&dy, ta, |d, x| d * x);
                        acc.add(*b, g)?;
                    }
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    acc.add(*x, dy.map(|v| v * f))?;
                }
                Op::Softmax { x, axis } => {
                    let mut gx = Tensor::zeros(dy.shape());
                    ops::softmax_backward(&node.value, &dy, *axis, &mut gx);
                    acc.add(*x, gx)?;
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    stats,
                } => {
                    let (tx, tg) = (self.value(*x), self.value(*gamma));
                    let mut gx = acc.wants(*x).then(|| Tensor::zeros(tx.shape()));
                    let mut gg = acc.wants(*gamma).then(|| Tensor::zeros(tg.shape()));
                    let mut gb = acc.wants(*beta).then(|| Tensor::zeros(tg.shape()));
                    ops::layer_norm_backward(
                        tx,
                        tg,
                        stats,
                        &dy,
                        gx.as_mut(),
                        gg.as_mut(),
                        gb.as_mut(),
                    );
                    for (v, g) in [(*x, gx), (*gamma, gg), (*beta, gb)] {
                        if let Some(g) = g {
                            acc.add(v, g)?;
                        }
                    }
                }
                Op::Gelu { x } => {
                    let g = zip_map(&dy, self.value(*x), |d, v| d * ops::gelu_grad(v));
                    acc.add(*x, g)?;
                }
                Op::Sigmoid { x } => {
                    let g = zip_map(&dy, &node.value, |d, s| d * s * (T::one() - s));
                    acc.add(*x, g)?;
                }
                Op::SliceLast { x, start } => {
                    let tx = self.value(*x);
                    let (d, len) = (tx.last_dim(), dy.last_dim());
                    let mut gx = Tensor::zeros(tx.shape());
                    for (dst, src) in gx
                        .data_mut()
                        .chunks_exact_mut(d)
                        .zip(dy.data().chunks_exact(len))
                    {
                        dst[*start..*start + len].copy_from_slice(src);
                    }
                    acc.add(*x, gx)?;
                }
                Op::SplitHeads { x, heads } => {
                    let s = self.value(*x).shape();
                    let (n, hd) = (s[s.len() - 2], s[s.len() - 1]);
                    let lead = dy.len() / (n * hd);
                    let mut gx = Tensor::zeros(s);
                    permute_heads(dy.data(), gx.data_mut(), lead, n, *heads, hd / heads, false);
                    acc.add(*x, gx)?;
                }
                Op::MergeHeads { x } => {
                    let s = self.value(*x).shape();
                    let (heads, n, d) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
                    let lead = dy.len() / (heads * n * d);
                    let mut gx = Tensor::zeros(s);
                    permute_heads(dy.data(), gx.data_mut(), lead, n, heads, d, true);
                    acc.add(*x, gx)?;
                }
                Op::TransposeLast2 { x } => {
                    acc.add(*x, transpose_last2(&dy))?;
                }
                Op::Reshape { x } => {
                    let shape = self.value(*x).shape().to_vec();
                    acc.add(*x, dy.reshape(&shape)?)?;
                }
                Op::Sum { x } => {
                    let g = dy.item();
                    acc.add(*x, Tensor::full(self.value(*x).shape(), g))?;
                }
                Op::Mse { pred, target } => {
                    let (tp, tt) = (self.value(*pred), self.value(*target));
                    let scale = dy.item() * T::of(2.0) / T::of(tp.len() as f64);
                    let diff = zip_map(tp, tt, |a, b| (a - b) * scale);
                    if acc.wants(*target) {
                        acc.add(*target, diff.map(|v| -v))?;
                    }
                    if acc.wants(*pred) {
                        acc.add(*pred, diff)?;
                    }
                }
            }
        }
        Ok(())
    }
}

struct Accumulator<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
}

impl<T: Real> Accumulator<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, g: Tensor<T>) -> Result<()> {
        if !self.wants(v) {
            return Ok(());
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data).expect("zip_map over equal shapes")
}

/// Moves data between the `[lead, N, H, d]` and `[lead, H, N, d]` layouts.
fn permute_heads<T: Real>(
    src: &[T],
    dst: &mut [T],
    lead: usize,
    n: usize,
    heads: usize,
    d: usize,
    to_heads: bool,
) {
    for l in 0..lead {
        let base = l * n * heads * d;
        for t in 0..n {
            for h in 0..heads {
                let tokens_major = base + (t * heads + h) * d;
                let heads_major = base + (h * n + t) * d;
                let (from, to) = if to_heads {
                    (tokens_major, heads_major)
                } else {
                    (heads_major, tokens_major)
                };
                dst[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
}

fn transpose_last2<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
    let mut data = vec![T::zero(); t.len()];
    for (src, dst) in t
        .data()
        .chunks_exact(m * n)
        .zip(data.chunks_exact_mut(m * n))
    {
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape.swap(r - 2, r - 1);
    Tensor::new(&shape, data).expect("transpose keeps element count")
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::MatMul { .. } => "matmul",
        Op::Linear { .. } => "linear",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gelu { .. } => "gelu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::SliceLast { .. } => "slice",
        Op::SplitHeads { .. } => "split_heads",
        Op::MergeHeads { .. } => "merge_heads",
        Op::TransposeLast2 { .. } => "transpose",
        Op::Reshape { .. } => "reshape",
        Op::Sum { .. } => "sum",
        Op::Mse { .. } => "mse",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Parameter;

    fn single(value: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push(Parameter::new("p", Tensor::scalar(value), true))
            .unwrap();
        ps
    }

    #[test]
    fn identity_loss_has_unit_grad() {
        let mut ps = single(4.0);
        let mut g = Graph::new();
        let p = g.param(&ps, 0);
        g.backward(p, &mut ps).unwrap();
        assert_eq!(ps.by_id(0).grad.item(), 1.0);
    }

    #[test]
    fn square_grad_is_six_at_three() {
        let mut ps = single(3.0);
        let mut g = Graph::new();
        let p = g.param(&ps, 0);
        let sq = g.mul(p, p).unwrap();
        g.backward(sq, &mut ps).unwrap();
        assert_eq!(ps.by_id(0).grad.item(), 6.0);
    }

    #[test]
    fn repeated_backward_accumulates_exactly() {
        let mut ps = single(1.5);
        let mut g = Graph::new();
        let p = g.param(&ps, 0);
        let x = g.input(Tensor::scalar(0.25));
        let y = g.mul(p, p).unwrap();
        let y = g.add(y, x).unwrap();
        g.backward(y, &mut ps).unwrap();
        let once = ps.by_id(0).grad.item();
        g.backward(y, &mut ps).unwrap();
        assert_eq!(ps.by_id(0).grad.item(), 2.0 * once);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut ps = ParamSet::<f32>::new();
        ps.push(Parameter::new("w", Tensor::zeros(&[2]), true))
            .unwrap();
        let mut g = Graph::new();
        let w = g.param(&ps, 0);
        assert!(matches!(g.backward(w, &mut ps), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_forward_is_a_numeric_fault() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::scalar(f32::MAX));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NumericFault(_))));
    }

    #[test]
    fn split_then_merge_heads_round_trips() {
        let data: Vec<f64> = (0..2 * 3 * 8).map(|v| v as f64).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[2, 3, 8], data.clone()).unwrap());
        let h = g.split_heads(x, 4).unwrap();
        assert_eq!(g.value(h).shape(), &[2, 4, 3, 2]);
        // batch 0, head 1, token 2 holds columns 2..4 of token 2
        assert_eq!(
            &g.value(h).data()[(3 + 2) * 2..(3 + 2) * 2 + 2],
            &[18.0, 19.0]
        );
        let m = g.merge_heads(h).unwrap();
        assert_eq!(g.value(m).data(), &data[..]);
    }
}
