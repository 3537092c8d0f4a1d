//! Multi-head scaled dot-product attention over independent groups.
//!
//! Queries are `[groups * tq, c]`, keys and values `[groups * tk, c]`; rows of
//! group `b` are contiguous. Logits are materialized `chunk` query rows at a
//! time, so without a backward pass the extra memory is `O(chunk * tk)`;
//! when gradients are needed the probabilities are kept for the reverse
//! pass.

use super::ops::gemm;
use super::{Graph, Var};

struct Dims {
    groups: usize,
    tq: usize,
    tk: usize,
    heads: usize,
    d: usize,
    chunk: usize,
}

impl Dims {
    fn c(&self) -> usize {
        self.heads * self.d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[m, n] = a[m, k] * b[k, n]` for strided views; small products skip
/// the packed kernel.
#[allow(clippy::too_many_arguments)]
fn mm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), out: &mut [f64]) {
    if m * k * n >= 2048 {
        gemm(m, k, n, a, (sa.0 as isize, sa.1 as isize), b, (sb.0 as isize, sb.1 as isize), 0.0, out);
        return;
    }
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * sa.0 + t * sa.1] * b[t * sb.0 + j * sb.1];
            }
            out[i * n + j] = acc;
        }
    }
}

fn forward(q: &[f64], k: &[f64], v: &[f64], dm: &Dims, keep: bool) -> (Vec<f64>, Vec<f64>) {
    let (c, d, tk) = (dm.c(), dm.d, dm.tk);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; dm.groups * dm.tq * c];
    let mut probs = if keep { vec![0.0; dm.groups * dm.heads * dm.tq * tk] } else { Vec::new() };
    let rows_max = dm.chunk.min(dm.tq).max(1);
    let mut block = vec![0.0; rows_max * tk];
    let mut tmp = vec![0.0; rows_max * d];
    for b in 0..dm.groups {
        for h in 0..dm.heads {
            let off = h * d;
            let kv = (b * tk) * c + off;
            let mut i0 = 0;
            while i0 < dm.tq {
                let rows = (i0 + dm.chunk).min(dm.tq) - i0;
                let q0 = (b * dm.tq + i0) * c + off;
                let s = &mut block[..rows * tk];
                mm(rows, d, tk, &q[q0..], (c, 1), &k[kv..], (1, c), s);
                for row in s.chunks_mut(tk) {
                    let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x * scale));
                    let mut sum = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x * scale - mx).exp();
                        sum += *x;
                    }
                    let inv = 1.0 / sum;
                    row.iter_mut().for_each(|x| *x *= inv);
                }
                if keep {
                    let p0 = ((b * dm.heads + h) * dm.tq + i0) * tk;
                    probs[p0..p0 + rows * tk].copy_from_slice(s);
                }
                let o = &mut tmp[..rows * d];
                mm(rows, tk, d, s, (tk, 1), &v[kv..], (c, 1), o);
                for r in 0..rows {
                    out[q0 + r * c..q0 + r * c + d].copy_from_slice(&o[r * d..(r + 1) * d]);
                }
                i0 += rows;
            }
        }
    }
    (out, probs)
}

struct Saved<'a> {
    q: &'a [f64],
    k: &'a [f64],
    v: &'a [f64],
    out: &'a [f64],
    probs: &'a [f64],
}

fn backward(sv: &Saved, dout: &[f64], dm: &Dims, dq: &mut [f64], dk: &mut [f64], dv: &mut [f64]) {
    let (c, d, tk) = (dm.c(), dm.d, dm.tk);
    let scale = 1.0 / (d as f64).sqrt();
    let rows_max = dm.chunk.min(dm.tq).max(1);
    let mut ds = vec![0.0; rows_max * tk];
    let mut t_kd = vec![0.0; tk * d];
    let mut t_qd = vec![0.0; rows_max * d];
    let add_rows = |dst: &mut [f64], base: usize, src: &[f64], rows: usize| {
        for r in 0..rows {
            for (a, b) in dst[base + r * c..base + r * c + d].iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *a += b;
            }
        }
    };
    for b in 0..dm.groups {
        for h in 0..dm.heads {
            let off = h * d;
            let kv = (b * tk) * c + off;
            let mut i0 = 0;
            while i0 < dm.tq {
                let rows = (i0 + dm.chunk).min(dm.tq) - i0;
                let q0 = (b * dm.tq + i0) * c + off;
                let p0 = ((b * dm.heads + h) * dm.tq + i0) * tk;
                let p = &sv.probs[p0..p0 + rows * tk];
                let ds = &mut ds[..rows * tk];
                mm(rows, d, tk, &dout[q0..], (c, 1), &sv.v[kv..], (1, c), ds);
                for r in 0..rows {
                    let at = q0 + r * c;
                    let delta = dot(&dout[at..at + d], &sv.out[at..at + d]);
                    for j in 0..tk {
                        ds[r * tk + j] = p[r * tk + j] * (ds[r * tk + j] - delta) * scale;
                    }
                }
                mm(tk, rows, d, p, (1, tk), &dout[q0..], (c, 1), &mut t_kd);
                add_rows(dv, kv, &t_kd, tk);
                mm(tk, rows, d, ds, (1, tk), &sv.q[q0..], (c, 1), &mut t_kd);
                add_rows(dk, kv, &t_kd, tk);
                let tq = &mut t_qd[..rows * d];
                mm(rows, tk, d, ds, (tk, 1), &sv.k[kv..], (c, 1), tq);
                add_rows(dq, q0, tq, rows);
                i0 += rows;
            }
        }
    }
}

impl Graph<'_> {
    /// Grouped multi-head attention; see the module docs for layouts.
    pub fn attention(&self, q: &Var, k: &Var, v: &Var, groups: usize, heads: usize, chunk: usize) -> Var {
        let c = q.cols();
        assert!(heads > 0 && c % heads == 0, "attention: width {c} not divisible by {heads} heads");
        assert_eq!(k.cols(), c);
        assert_eq!(v.cols(), c);
        assert_eq!(q.rows() % groups, 0);
        assert_eq!(k.rows() % groups, 0);
        assert_eq!(k.rows(), v.rows());
        let dm = Dims {
            groups,
            tq: q.rows() / groups,
            tk: k.rows() / groups,
            heads,
            d: c / heads,
            chunk: chunk.max(1),
        };
        let needs = self.grad_enabled() && [q, k, v].iter().any(|x| x.requires_grad());
        let (out, probs) = forward(&q.data, &k.data, &v.data, &dm, needs);
        let saved_out = std::rc::Rc::new(out.clone());
        let (qd, kd, vd) = (q.data.clone(), k.data.clone(), v.data.clone());
        let (qi, ki, vi) = (q.id, k.id, v.id);
        let shape = [q.rows(), c];
        self.record(out, shape, &[q, k, v], move |g, sink| {
            let mut dq = vec![0.0; qd.len()];
            let mut dk = vec![0.0; kd.len()];
            let mut dv = vec![0.0; vd.len()];
            let sv = Saved { q: &qd, k: &kd, v: &vd, out: &saved_out, probs: &probs };
            backward(&sv, g, &dm, &mut dq, &mut dk, &mut dv);
            sink.add(qi, &dq);
            sink.add(ki, &dk);
            sink.add(vi, &dv);
        })
    }
}

/// Reference attention that materializes the full probability tensor
/// `[groups, heads, tq, tk]`. Used as an oracle for the chunked kernel.
pub fn naive_attention(q: &[f64], k: &[f64], v: &[f64], groups: usize, c: usize, heads: usize) -> Vec<f64> {
    let d = c / heads;
    let tq = q.len() / c / groups;
    let tk = k.len() / c / groups;
    let scale = 1.0 / (d as f64).sqrt();
    let mut probs = vec![0.0; groups * heads * tq * tk];
    for b in 0..groups {
        for h in 0..heads {
            for i in 0..tq {
                let base = ((b * heads + h) * tq + i) * tk;
                for j in 0..tk {
                    let mut s = 0.0;
                    for t in 0..d {
                        s += q[(b * tq + i) * c + h * d + t] * k[(b * tk + j) * c + h * d + t];
                    }
                    probs[base + j] = s * scale;
                }
                let row = &mut probs[base..base + tk];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|s| (s - mx).exp()).sum();
                row.iter_mut().for_each(|s| *s = (*s - mx).exp() / z);
            }
        }
    }
    let mut out = vec![0.0; groups * tq * c];
    for b in 0..groups {
        for h in 0..heads {
            for i in 0..tq {
                for j in 0..tk {
                    let p = probs[((b * heads + h) * tq + i) * tk + j];
                    for t in 0..d {
                        out[(b * tq + i) * c + h * d + t] += p * v[(b * tk + j) * c + h * d + t];
                    }
                }
            }
        }
    }
    out
}
