//! Forward kernels and their vector-Jacobian products.
//!
//! Every function here is pure; the [`Graph`](super::Graph) records which
//! kernel produced a node and calls the matching `*_backward` on the way back.

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Epsilon used by every layer norm in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return dim_err(format!("matmul of {:?} by {:?}: inner dimensions differ", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a.data(), (k, 1), b.data(), (n, 1), T::zero(), &mut out, (n, 1));
    Tensor::new(vec![m, n], out)
}

/// Gradients of `a * b` given the upstream gradient of the product.
pub fn matmul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (m, k) = a.dims2().expect("matrix");
    let (_, n) = b.dims2().expect("matrix");
    let mut ga = vec![T::zero(); m * k];
    // dA = dC * B^T
    T::gemm(m, n, k, T::one(), grad.data(), (n, 1), b.data(), (1, n), T::zero(), &mut ga, (k, 1));
    let mut gb = vec![T::zero(); k * n];
    // dB = A^T * dC
    T::gemm(k, m, n, T::one(), a.data(), (1, k), grad.data(), (n, 1), T::zero(), &mut gb, (n, 1));
    (Tensor::new(vec![m, k], ga).expect("shape"), Tensor::new(vec![k, n], gb).expect("shape"))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Adds a vector of length `d` to every row of an `n x d` matrix.
pub fn add_row<T: Scalar>(a: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, d) = a.dims2()?;
    if bias.numel() != d {
        return dim_err(format!("row bias {:?} does not match matrix {:?}", bias.shape(), a.shape()));
    }
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(d) {
        for (x, &b) in row.iter_mut().zip(bias.data()) {
            *x += b;
        }
    }
    Ok(out)
}

pub fn column_sums<T: Scalar>(grad: &Tensor<T>, bias_shape: &[usize]) -> Tensor<T> {
    let d = *grad.shape().last().expect("nonempty");
    let mut out = vec![T::zero(); d];
    for row in grad.data().chunks(d) {
        for (o, &g) in out.iter_mut().zip(row) {
            *o += g;
        }
    }
    Tensor::new(bias_shape.to_vec(), out).expect("bias shape")
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return dim_err(format!("elementwise product of {:?} and {:?}", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    x.map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let (c, a, half, three) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5), T::of(3.0));
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| {
            let u = c * (v + a * v * v * v);
            let t = u.tanh();
            let du = c * (T::one() + three * a * v * v);
            g * (half * (T::one() + t) + half * v * (T::one() - t * t) * du)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape")
}

/// Softmax along `axis`, stabilized by subtracting the maximum.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return dim_err(format!("softmax axis {axis} out of range for shape {shape:?}"));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| data[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (data[idx(j)] - max).exp();
                data[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                data[idx(j)] /= total;
            }
        }
    }
    Ok(out)
}

/// Backward of softmax over the last axis given its output `y`.
pub fn softmax_last_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let d = *y.shape().last().expect("nonempty");
    let mut out = Vec::with_capacity(y.numel());
    for (yr, gr) in y.data().chunks(d).zip(grad.data().chunks(d)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(y.shape().to_vec(), out).expect("shape")
}

fn check_affine<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<usize> {
    let d = *x.shape().last().expect("nonempty");
    if gain.numel() != d || bias.numel() != d {
        return dim_err(format!(
            "layer norm affine {:?}/{:?} does not match last dimension of {:?}",
            gain.shape(),
            bias.shape(),
            x.shape()
        ));
    }
    Ok(d)
}

/// Normalizes each row over the last dimension, then applies `gain` and `bias`.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let d = check_affine(x, gain, bias)?;
    let eps = T::of(eps);
    let inv_d = T::one() / T::of(d as f64);
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(d) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let inv_std = T::one() / (var + eps).sqrt();
        out.extend(row.iter().zip(gain.data().iter().zip(bias.data())).map(|(&v, (&g, &b))| (v - mean) * inv_std * g + b));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns gradients with respect to `(x, gain, bias)`.
pub fn layer_norm_backward<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, grad: &Tensor<T>, eps: f64) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = *x.shape().last().expect("nonempty");
    let eps = T::of(eps);
    let inv_d = T::one() / T::of(d as f64);
    let mut gx = Vec::with_capacity(x.numel());
    let mut gg = vec![T::zero(); d];
    let mut gb = vec![T::zero(); d];
    let mut xhat = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for (row, grow) in x.data().chunks(d).zip(grad.data().chunks(d)) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let inv_std = T::one() / (var + eps).sqrt();
        for j in 0..d {
            xhat[j] = (row[j] - mean) * inv_std;
            dxhat[j] = grow[j] * gain.data()[j];
            gg[j] += grow[j] * xhat[j];
            gb[j] += grow[j];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dxhat_xhat = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        gx.extend((0..d).map(|j| inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat)));
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        Tensor::new(gain.shape().to_vec(), gg).expect("shape"),
        Tensor::new(gain.shape().to_vec(), gb).expect("shape"),
    )
}

/// Selects rows of `table` by index (embedding lookup).
pub fn gather<T: Scalar>(table: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let (rows, d) = table.dims2()?;
    if indices.is_empty() {
        return dim_err("gather with no indices");
    }
    let mut out = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= rows {
            return dim_err(format!("gather index {i} out of range for {rows} rows"));
        }
        out.extend_from_slice(table.row(i));
    }
    Tensor::new(vec![indices.len(), d], out)
}

pub fn gather_backward<T: Scalar>(table_shape: &[usize], indices: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(table_shape);
    let d = table_shape[1];
    for (k, &i) in indices.iter().enumerate() {
        let src = grad.row(k);
        for (o, &g) in out.data_mut()[i * d..(i + 1) * d].iter_mut().zip(src) {
            *o += g;
        }
    }
    out
}

/// Mean negative log-likelihood of `targets` under a softmax over the first
/// `n_classes` logit columns. Rows whose target is `None` are ignored.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[Option<usize>], n_classes: usize) -> Result<T> {
    let (n, c) = logits.dims2()?;
    check_targets(n, c, targets, n_classes)?;
    let counted = targets.iter().flatten().count();
    if counted == 0 {
        return Err(Error::InvalidInput("cross entropy without any target rows".into()));
    }
    let mut total = T::zero();
    for (i, t) in targets.iter().enumerate() {
        if let Some(t) = *t {
            let row = &logits.row(i)[..n_classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[t];
        }
    }
    Ok(total / T::of(counted as f64))
}

fn check_targets(n: usize, c: usize, targets: &[Option<usize>], n_classes: usize) -> Result<()> {
    if targets.len() != n {
        return dim_err(format!("{} targets for {n} logit rows", targets.len()));
    }
    if n_classes == 0 || n_classes > c {
        return dim_err(format!("{n_classes} classes requested from {c} logit columns"));
    }
    if let Some(bad) = targets.iter().flatten().find(|&&t| t >= n_classes) {
        return Err(Error::InvalidInput(format!("target {bad} outside {n_classes} classes")));
    }
    Ok(())
}

pub fn cross_entropy_backward<T: Scalar>(logits: &Tensor<T>, targets: &[Option<usize>], n_classes: usize, upstream: T) -> Tensor<T> {
    let (_, c) = logits.dims2().expect("matrix");
    let counted = targets.iter().flatten().count();
    let scale = upstream / T::of(counted as f64);
    let mut out = Tensor::zeros(logits.shape());
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let row = &logits.row(i)[..n_classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let total = row.iter().map(|&v| (v - max).exp()).sum::<T>();
        let dst = &mut out.data_mut()[i * c..i * c + n_classes];
        for (j, o) in dst.iter_mut().enumerate() {
            let p = (row[j] - max).exp() / total;
            let onehot = if j == t { T::one() } else { T::zero() };
            *o = scale * (p - onehot);
        }
    }
    out
}
