//! Masked multi-head scaled dot-product attention.

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Which key positions each query position may attend to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttentionMask {
    /// No restriction.
    Full,
    /// Explicit `n x n` matrix: `allowed[i * n + j]` lets position `i` attend to `j`.
    Dense { n: usize, allowed: Vec<bool> },
    /// The first `n_ctx` positions attend to each other; every later position
    /// attends to those `n_ctx` positions and to itself.
    Context { n_ctx: usize },
}

impl AttentionMask {
    pub fn dense(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return dim_err("attention mask must be square");
        }
        Ok(Self::Dense { n, allowed: rows.concat() })
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            Self::Full => true,
            Self::Dense { n, allowed } => allowed[i * n + j],
            Self::Context { n_ctx } => j < *n_ctx || i == j,
        }
    }

    pub fn to_dense(&self, n: usize) -> Vec<Vec<bool>> {
        (0..n).map(|i| (0..n).map(|j| self.allows(i, j)).collect()).collect()
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Self::Full => Ok(()),
            Self::Dense { n: m, allowed } => {
                if *m != n || allowed.len() != n * n {
                    return dim_err(format!("{m}x{m} mask applied to {n} positions"));
                }
                match allowed.chunks(n).position(|row| !row.iter().any(|&a| a)) {
                    Some(row) => Err(Error::Contract(format!("attention mask row {row} allows no positions"))),
                    None => Ok(()),
                }
            }
            Self::Context { n_ctx } if *n_ctx <= n => Ok(()),
            Self::Context { n_ctx } => dim_err(format!("context of {n_ctx} exceeds {n} positions")),
        }
    }

    /// Number of leading key columns scored by a dense product.
    fn key_span(&self, n: usize) -> usize {
        match self {
            Self::Context { n_ctx } => *n_ctx,
            _ => n,
        }
    }
}

/// Attention probabilities for one head. `p` is `n x span`; `p_self` holds the
/// extra self-attention weight of rows past the context span.
struct HeadProbs<T> {
    p: Vec<T>,
    p_self: Vec<T>,
}

struct Layout {
    n: usize,
    d: usize,
    dh: usize,
    span: usize,
}

fn layout<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, mask: &AttentionMask, heads: usize) -> Result<Layout> {
    let (n, d) = q.dims2()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return dim_err(format!("attention inputs disagree: q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()));
    }
    if heads == 0 || d % heads != 0 {
        return dim_err(format!("width {d} is not divisible into {heads} heads"));
    }
    mask.validate(n)?;
    Ok(Layout { n, d, dh: d / heads, span: mask.key_span(n) })
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn head_probs<T: Scalar>(q: &[T], k: &[T], mask: &AttentionMask, l: &Layout, h: usize) -> HeadProbs<T> {
    let Layout { n, d, dh, span } = *l;
    let off = h * dh;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut p = vec![T::zero(); n * span];
    let mut p_self = vec![T::zero(); n];
    if span > 0 {
        T::gemm(n, dh, span, scale, &q[off..], (d, 1), &k[off..], (1, d), T::zero(), &mut p, (span, 1));
    }
    for i in 0..n {
        let row = &mut p[i * span..(i + 1) * span];
        let self_score = (i >= span).then(|| scale * dot(&q[i * d + off..i * d + off + dh], &k[i * d + off..i * d + off + dh]));
        let allowed = match mask {
            AttentionMask::Dense { n, allowed } => Some(&allowed[i * n..i * n + span]),
            _ => None,
        };
        let mut max = self_score.unwrap_or(T::neg_infinity());
        let mut total = T::zero();
        match allowed {
            None => {
                max = row.iter().copied().fold(max, T::max);
                for s in row.iter_mut() {
                    *s -= max;
                }
                T::exp_in_place(row);
                total = row.iter().copied().sum();
            }
            Some(a) => {
                for (s, &ok) in row.iter().zip(a) {
                    if ok && *s > max {
                        max = *s;
                    }
                }
                for (s, &ok) in row.iter_mut().zip(a) {
                    *s = if ok { (*s - max).exp() } else { T::zero() };
                    total += *s;
                }
            }
        }
        if let Some(s) = self_score {
            p_self[i] = (s - max).exp();
            total += p_self[i];
        }
        let inv = T::one() / total;
        for s in row.iter_mut() {
            *s *= inv;
        }
        p_self[i] *= inv;
    }
    HeadProbs { p, p_self }
}

/// `softmax(q k^T / sqrt(d_head) + mask) v`, computed independently per head on
/// contiguous column blocks of width `d / heads`.
pub fn attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, mask: &AttentionMask, heads: usize) -> Result<Tensor<T>> {
    let l = layout(q, k, v, mask, heads)?;
    let Layout { n, d, dh, span } = l;
    let mut out = vec![T::zero(); n * d];
    for h in 0..heads {
        let off = h * dh;
        let HeadProbs { p, p_self } = head_probs(q.data(), k.data(), mask, &l, h);
        if span > 0 {
            T::gemm(n, span, dh, T::one(), &p, (span, 1), &v.data()[off..], (d, 1), T::zero(), &mut out[off..], (d, 1));
        }
        for i in span..n {
            let w = p_self[i];
            for t in 0..dh {
                out[i * d + off + t] += w * v.data()[i * d + off + t];
            }
        }
    }
    Tensor::new(vec![n, d], out)
}

/// Gradients of [`attention`] with respect to `(q, k, v)`.
pub fn attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &AttentionMask,
    heads: usize,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let l = layout(q, k, v, mask, heads)?;
    let Layout { n, d, dh, span } = l;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), grad.data());
    let mut gq = vec![T::zero(); n * d];
    let mut gk = vec![T::zero(); n * d];
    let mut gv = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); n * span];
    for h in 0..heads {
        let off = h * dh;
        let HeadProbs { p, p_self } = head_probs(qd, kd, mask, &l, h);
        let mut ds_self = vec![T::zero(); n];
        if span > 0 {
            // dP = dO V^T
            T::gemm(n, dh, span, T::one(), &gd[off..], (d, 1), &vd[off..], (1, d), T::zero(), &mut dp, (span, 1));
        }
        for i in 0..n {
            let row_p = &p[i * span..(i + 1) * span];
            let row_dp = &mut dp[i * span..(i + 1) * span];
            let dp_self = if i >= span { dot(&gd[i * d + off..i * d + off + dh], &vd[i * d + off..i * d + off + dh]) } else { T::zero() };
            let r = dot(row_p, row_dp) + dp_self * p_self[i];
            for (g, &pv) in row_dp.iter_mut().zip(row_p) {
                *g = pv * (*g - r);
            }
            ds_self[i] = p_self[i] * (dp_self - r);
        }
        let ds = &dp;
        if span > 0 {
            // dQ = scale dS K, dK = scale dS^T Q, dV = P^T dO
            T::gemm(n, span, dh, scale, ds, (span, 1), &kd[off..], (d, 1), T::zero(), &mut gq[off..], (d, 1));
            T::gemm(span, n, dh, scale, ds, (1, span), &qd[off..], (d, 1), T::zero(), &mut gk[off..], (d, 1));
            T::gemm(span, n, dh, T::one(), &p, (1, span), &gd[off..], (d, 1), T::zero(), &mut gv[off..], (d, 1));
        }
        for i in span..n {
            let base = i * d + off;
            for t in 0..dh {
                gq[base + t] += scale * ds_self[i] * kd[base + t];
                gk[base + t] += scale * ds_self[i] * qd[base + t];
                gv[base + t] += p_self[i] * gd[base + t];
            }
        }
    }
    Ok((Tensor::new(vec![n, d], gq)?, Tensor::new(vec![n, d], gk)?, Tensor::new(vec![n, d], gv)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn self_only_mask_returns_values() {
        let q = t(&[3, 2], &[0.3, -1.0, 2.0, 0.5, 1.0, 1.0]);
        let v = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eye: Vec<Vec<bool>> = (0..3).map(|i| (0..3).map(|j| i == j).collect()).collect();
        let out = attention(&q, &q, &v, &AttentionMask::dense(&eye).unwrap(), 1).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn uniform_scores_average_unmasked_values() {
        let q = t(&[3, 2], &[1.0; 6]);
        let v = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 8.0, 9.0]);
        let rows = vec![vec![true, true, false], vec![true, true, true], vec![false, false, true]];
        let out = attention(&q, &q, &v, &AttentionMask::dense(&rows).unwrap(), 1).unwrap();
        let want = [2.0, 3.0, 4.0, 5.0, 8.0, 9.0];
        for (g, w) in out.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn three_tokens_against_hand_weights() {
        // 1-d head: scores are q_i * k_j.
        let q = t(&[3, 1], &[1.0, 0.0, 2.0]);
        let k = t(&[3, 1], &[0.0, 1.0, -1.0]);
        let v = t(&[3, 1], &[10.0, 20.0, 40.0]);
        let out = attention(&q, &k, &v, &AttentionMask::Full, 1).unwrap();
        let expect = |scores: [f64; 3]| {
            let e: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let z: f64 = e.iter().sum();
            (e[0] * 10.0 + e[1] * 20.0 + e[2] * 40.0) / z
        };
        let want = [expect([0.0, 1.0, -1.0]), expect([0.0, 0.0, 0.0]), expect([0.0, 2.0, -2.0])];
        for (g, w) in out.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn fully_masked_row_is_a_contract_violation() {
        let q = t(&[2, 1], &[1.0, 1.0]);
        let mask = AttentionMask::dense(&[vec![true, false], vec![false, false]]).unwrap();
        assert!(matches!(attention(&q, &q, &q, &mask, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn all_true_dense_equals_full() {
        let q = t(&[3, 4], &[0.1, -0.2, 0.3, 0.9, 1.0, 0.5, -0.7, 0.2, 0.0, 0.4, 0.8, -1.0]);
        let dense = AttentionMask::dense(&vec![vec![true; 3]; 3]).unwrap();
        let a = attention(&q, &q, &q, &AttentionMask::Full, 2).unwrap();
        let b = attention(&q, &q, &q, &dense, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn context_mask_matches_its_dense_form() {
        let vals: Vec<f64> = (0..20).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect();
        let x = t(&[5, 4], &vals);
        let ctx = AttentionMask::Context { n_ctx: 3 };
        let dense = AttentionMask::dense(&ctx.to_dense(5)).unwrap();
        let a = attention(&x, &x, &x, &ctx, 2).unwrap();
        let b = attention(&x, &x, &x, &dense, 2).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
        assert_eq!(
            AttentionMask::Context { n_ctx: 2 }.to_dense(3),
            vec![vec![true, true, false], vec![true, true, false], vec![true, true, true]]
        );
    }
}
