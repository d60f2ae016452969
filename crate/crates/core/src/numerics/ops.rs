//! Forward kernels shared by the tape and by direct tensor callers, plus the
//! backward kernels the tape needs.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// `c (+)= op(a)·op(b)` for row-major slices; `ta`/`tb` read the stored
/// matrix transposed. `a` is stored as `m×k` (or `k×m` when transposed).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the slices cover the strided regions checked above and `c` is a
    // distinct mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batch layout of a broadcast matmul.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
    /// For each output matrix, the index of the `a` and `b` matrices feeding it.
    pub pairs: Vec<(usize, usize)>,
}

pub(crate) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(Error::shape("matmul", a, b));
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let rank = ab.len().max(bb.len());
    let pad = |s: &[usize]| -> Vec<usize> {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(ab), pad(bb));
    let mut batch = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        if x != y && x != 1 && y != 1 {
            return Err(Error::shape("matmul", a, b));
        }
        batch.push(x.max(y));
    }
    let total: usize = batch.iter().product();
    let mut pairs = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        let (mut ia, mut ib) = (0, 0);
        for d in 0..rank {
            ia = ia * pa[d] + if pa[d] == 1 { 0 } else { idx[d] };
            ib = ib * pb[d] + if pb[d] == 1 { 0 } else { idx[d] };
        }
        pairs.push((ia, ib));
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < batch[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let mut out_shape = batch;
    out_shape.extend([m, n]);
    Ok(MatmulPlan {
        m,
        k,
        n,
        out_shape,
        pairs,
    })
}

/// Matrix product over the last two axes, broadcasting leading batch axes of
/// size 1.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let plan = matmul_plan(a.shape(), b.shape())?;
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![T::zero(); plan.pairs.len() * m * n];
    for (i, &(ia, ib)) in plan.pairs.iter().enumerate() {
        gemm(
            m,
            k,
            n,
            &a.data()[ia * m * k..],
            false,
            &b.data()[ib * k * n..],
            false,
            &mut out[i * m * n..],
            false,
        );
    }
    Tensor::new(&plan.out_shape, out)
}

pub(crate) fn matmul_backward<T: Real>(
    plan: &MatmulPlan,
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
    ga: Option<&mut Tensor<T>>,
    gb: Option<&mut Tensor<T>>,
) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    if let Some(ga) = ga {
        for (i, &(ia, ib)) in plan.pairs.iter().enumerate() {
            // dA = dC · Bᵀ
            gemm(
                m,
                n,
                k,
                &dc.data()[i * m * n..],
                false,
                &b.data()[ib * k * n..],
                true,
                &mut ga.data_mut()[ia * m * k..],
                true,
            );
        }
    }
    if let Some(gb) = gb {
        for (i, &(ia, ib)) in plan.pairs.iter().enumerate() {
            // dB = Aᵀ · dC
            gemm(
                k,
                m,
                n,
                &a.data()[ia * m * k..],
                true,
                &dc.data()[i * m * n..],
                false,
                &mut gb.data_mut()[ib * k * n..],
                true,
            );
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::InvalidArgument(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(src[at(j)]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            let inv = T::one() / total;
            for j in 0..len {
                out[at(j)] *= inv;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_backward<T: Real>(
    y: &Tensor<T>,
    dy: &Tensor<T>,
    axis: usize,
    gx: &mut Tensor<T>,
) {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let (y, dy) = (y.data(), dy.data());
    let gx = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot += y[at(j)] * dy[at(j)];
            }
            for j in 0..len {
                gx[at(j)] += y[at(j)] * (dy[at(j)] - dot);
            }
        }
    }
}

/// Per-row statistics saved by the layer-norm forward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let d = x.last_dim();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    let rows = x.len() / d;
    let inv_d = T::one() / T::of(d as f64);
    let (g, b) = (gamma.data(), beta.data());
    let mut out = vec![T::zero(); x.len()];
    let mut stats = NormStats {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    for (row, dst) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rstd = T::one() / (var + eps).sqrt();
        for j in 0..d {
            dst[j] = (row[j] - mean) * rstd * g[j] + b[j];
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((Tensor::new(x.shape(), out)?, stats))
}

/// Layer normalization over the last axis with biased variance.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layer_norm_forward(x, gamma, beta, eps).map(|(y, _)| y)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats<T>,
    dy: &Tensor<T>,
    gx: Option<&mut Tensor<T>>,
    gg: Option<&mut Tensor<T>>,
    gb: Option<&mut Tensor<T>>,
) {
    let d = x.last_dim();
    let inv_d = T::one() / T::of(d as f64);
    let g = gamma.data();
    let xs = x.data().chunks_exact(d);
    let dys = dy.data().chunks_exact(d);
    let mut gx = gx.map(|t| t.data_mut());
    let mut gg = gg.map(|t| t.data_mut());
    let mut gb = gb.map(|t| t.data_mut());
    let mut xhat = vec![T::zero(); d];
    for (r, (row, drow)) in xs.zip(dys).enumerate() {
        let (mean, rstd) = (stats.mean[r], stats.rstd[r]);
        for j in 0..d {
            xhat[j] = (row[j] - mean) * rstd;
        }
        if let Some(gg) = gg.as_deref_mut() {
            for j in 0..d {
                gg[j] += drow[j] * xhat[j];
            }
        }
        if let Some(gb) = gb.as_deref_mut() {
            for j in 0..d {
                gb[j] += drow[j];
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            let (mut s1, mut s2) = (T::zero(), T::zero());
            for j in 0..d {
                let dxh = drow[j] * g[j];
                s1 += dxh;
                s2 += dxh * xhat[j];
            }
            let dst = &mut gx[r * d..(r + 1) * d];
            for j in 0..d {
                let dxh = drow[j] * g[j];
                dst[j] += rstd * (dxh - inv_d * s1 - xhat[j] * inv_d * s2);
            }
        }
    }
}

/// Exact (erf-based) GELU, `x·Φ(x)`.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub(crate) fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// `x·w + b` over the last axis of `x`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let din = x.last_dim();
    if w.rank() != 2 || w.shape()[0] != din || b.shape() != [w.shape()[1]] {
        return Err(Error::shape("linear", x.shape(), w.shape()));
    }
    let dout = w.shape()[1];
    let rows = x.len() / din;
    let mut out = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(
        rows,
        din,
        dout,
        x.data(),
        false,
        w.data(),
        false,
        &mut out,
        true,
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::new(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let i = Tensor::<f32>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let b = Tensor::<f32>::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&i, &b).unwrap(), b);
        let r = Tensor::<f32>::from_rows(&[&[1.0, 2.0]]).unwrap();
        let c = Tensor::<f32>::from_rows(&[&[3.0], &[4.0]]).unwrap();
        assert_eq!(matmul(&r, &c).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = rand_tensor(&[3, 4], 1);
        let b = rand_tensor(&[4, 2], 2);
        let c = matmul(&a, &b).unwrap();
        for (x, y) in c.data().iter().zip(triple_loop(&a, &b)) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_broadcasts_batch_of_one() {
        let a = rand_tensor(&[2, 3, 3, 4], 3);
        let b = rand_tensor(&[1, 4, 5], 4);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3, 5]);
        let b2 = b.clone().reshape(&[4, 5]).unwrap();
        for batch in 0..6 {
            let ai = Tensor::new(&[3, 4], a.data()[batch * 12..(batch + 1) * 12].to_vec()).unwrap();
            let want = triple_loop(&ai, &b2);
            for (x, y) in c.data()[batch * 15..(batch + 1) * 15].iter().zip(want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::<f64>::zeros(&[3]), 0).unwrap();
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let x = Tensor::<f64>::new(&[2], vec![0.0, 2f64.ln()]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((y.data()[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = rand_tensor(&[4, 3], 9);
        let y = softmax(&x, 0).unwrap();
        for col in 0..3 {
            let s: f64 = (0..4).map(|r| y.data()[r * 3 + col]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let x = Tensor::<f32>::new(&[3], vec![1000.0, 1000.0, -1000.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::<f64>::full(&[4], 1.0);
        let zero = Tensor::<f64>::zeros(&[4]);
        let c = Tensor::<f64>::full(&[1, 4], 5.0);
        let y = layer_norm(&c, &one, &zero, 1e-6).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));

        let x = Tensor::<f64>::new(&[1, 2], vec![1.0, 3.0]).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn gelu_values() {
        let x = Tensor::<f64>::new(&[3], vec![0.0, 1.0, -10.0]).unwrap();
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        // 1·Φ(1) with Φ(1) = 0.841344746068543
        assert!((y.data()[1] - 0.841_345).abs() < 1e-6);
        assert!(y.data()[2].abs() < 1e-6);
        let big = gelu_scalar(30.0f64);
        assert!((big - 30.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let num = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - num).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::<f32>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f32>::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::<f32>::new(&[1], vec![0.5]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[3.5]);

        let x = rand_tensor(&[5, 3], 11);
        let eye = Tensor::<f64>::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]])
            .unwrap();
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
    }
}
