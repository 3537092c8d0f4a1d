use super::{Graph, Var};
use std::rc::Rc;

/// `c = beta * c + a * b` for strided row-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    // SAFETY: the callers pass buffers sized for the given strides; `c` is
    // contiguous row-major `[m, n]`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Graph<'_> {
    /// `x [n, i] · w [i, o] + b [1, o]`.
    pub fn linear(&self, x: &Var, w: &Var, b: Option<&Var>) -> Var {
        let (n, i) = (x.rows(), x.cols());
        assert_eq!(w.rows(), i, "linear: input width {} vs weight rows {}", i, w.rows());
        let o = w.cols();
        let mut y = vec![0.0; n * o];
        if let Some(b) = b {
            assert_eq!(b.data.len(), o);
            for r in 0..n {
                y[r * o..(r + 1) * o].copy_from_slice(&b.data);
            }
        }
        gemm(n, i, o, &x.data, (i as isize, 1), &w.data, (o as isize, 1), 1.0, &mut y);
        let (xd, wd) = (x.data.clone(), w.data.clone());
        let (xi, wi, bi) = (x.id, w.id, b.and_then(|b| b.id));
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        self.record(y, [n, o], &inputs, move |g, sink| {
            if let Some(id) = xi {
                gemm(n, o, i, g, (o as isize, 1), &wd, (1, o as isize), 1.0, sink.slot(id));
            }
            if let Some(id) = wi {
                gemm(i, n, o, &xd, (1, i as isize), g, (o as isize, 1), 1.0, sink.slot(id));
            }
            if let Some(id) = bi {
                let s = sink.slot(id);
                for r in 0..n {
                    for (a, v) in s.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                        *a += v;
                    }
                }
            }
        })
    }

    pub fn add(&self, a: &Var, b: &Var) -> Var {
        assert_eq!(a.shape, b.shape, "add: shape mismatch");
        let y = a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect();
        let (ai, bi) = (a.id, b.id);
        self.record(y, a.shape, &[a, b], move |g, sink| {
            sink.add(ai, g);
            sink.add(bi, g);
        })
    }

    /// Adds a `[1, c]` row to every row of `x`.
    pub fn add_row(&self, x: &Var, row: &Var) -> Var {
        let c = x.cols();
        assert_eq!(row.data.len(), c);
        let mut y = x.to_vec();
        for r in y.chunks_mut(c) {
            for (a, b) in r.iter_mut().zip(row.data.iter()) {
                *a += b;
            }
        }
        let (xi, ri) = (x.id, row.id);
        self.record(y, x.shape, &[x, row], move |g, sink| {
            sink.add(xi, g);
            if let Some(id) = ri {
                let s = sink.slot(id);
                for r in g.chunks(c) {
                    for (a, b) in s.iter_mut().zip(r) {
                        *a += b;
                    }
                }
            }
        })
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Var {
        assert_eq!(a.shape, b.shape, "mul: shape mismatch");
        let y = a.data.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect();
        let (ad, bd) = (a.data.clone(), b.data.clone());
        let (ai, bi) = (a.id, b.id);
        self.record(y, a.shape, &[a, b], move |g, sink| {
            if let Some(id) = ai {
                for ((s, g), b) in sink.slot(id).iter_mut().zip(g).zip(bd.iter()) {
                    *s += g * b;
                }
            }
            if let Some(id) = bi {
                for ((s, g), a) in sink.slot(id).iter_mut().zip(g).zip(ad.iter()) {
                    *s += g * a;
                }
            }
        })
    }

    pub fn scale(&self, a: &Var, s: f64) -> Var {
        let y = a.data.iter().map(|x| x * s).collect();
        let ai = a.id;
        self.record(y, a.shape, &[a], move |g, sink| {
            if let Some(id) = ai {
                for (a, g) in sink.slot(id).iter_mut().zip(g) {
                    *a += s * g;
                }
            }
        })
    }

    pub fn gelu(&self, x: &Var) -> Var {
        let y = x.data.iter().map(|&v| 0.5 * v * (1.0 + erf(v * INV_SQRT_2))).collect();
        let (xd, xi) = (x.data.clone(), x.id);
        self.record(y, x.shape, &[x], move |g, sink| {
            if let Some(id) = xi {
                for ((s, g), &v) in sink.slot(id).iter_mut().zip(g).zip(xd.iter()) {
                    let d = 0.5 * (1.0 + erf(v * INV_SQRT_2)) + v * INV_SQRT_2PI * (-0.5 * v * v).exp();
                    *s += g * d;
                }
            }
        })
    }

    pub fn sigmoid(&self, x: &Var) -> Var {
        let y: Vec<f64> = x.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let yd = Rc::new(y.clone());
        let xi = x.id;
        self.record(y, x.shape, &[x], move |g, sink| {
            if let Some(id) = xi {
                for ((s, g), y) in sink.slot(id).iter_mut().zip(g).zip(yd.iter()) {
                    *s += g * y * (1.0 - y);
                }
            }
        })
    }

    /// Layer normalization over each row.
    pub fn layer_norm(&self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Var {
        let (n, c) = (x.rows(), x.cols());
        assert_eq!(gamma.data.len(), c);
        assert_eq!(beta.data.len(), c);
        let mut xhat = vec![0.0; n * c];
        let mut rstd = vec![0.0; n];
        let mut y = vec![0.0; n * c];
        for r in 0..n {
            let row = &x.data[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                y[r * c + j] = h * gamma.data[j] + beta.data[j];
            }
        }
        let gd = gamma.data.clone();
        let (xi, gi, bi) = (x.id, gamma.id, beta.id);
        self.record(y, x.shape, &[x, gamma, beta], move |g, sink| {
            if let Some(id) = gi {
                let s = sink.slot(id);
                for r in 0..n {
                    for j in 0..c {
                        s[j] += g[r * c + j] * xhat[r * c + j];
                    }
                }
            }
            if let Some(id) = bi {
                let s = sink.slot(id);
                for r in 0..n {
                    for j in 0..c {
                        s[j] += g[r * c + j];
                    }
                }
            }
            if let Some(id) = xi {
                let s = sink.slot(id);
                let mut dxhat = vec![0.0; c];
                for r in 0..n {
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        dxhat[j] = g[r * c + j] * gd[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xh[j];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        s[r * c + j] += rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
                    }
                }
            }
        })
    }

    /// `[n, a] ++ [n, b] -> [n, a + b]`.
    pub fn concat_cols(&self, a: &Var, b: &Var) -> Var {
        let n = a.rows();
        assert_eq!(b.rows(), n, "concat_cols: row mismatch");
        let (ca, cb) = (a.cols(), b.cols());
        let c = ca + cb;
        let mut y = vec![0.0; n * c];
        for r in 0..n {
            y[r * c..r * c + ca].copy_from_slice(a.row(r));
            y[r * c + ca..(r + 1) * c].copy_from_slice(b.row(r));
        }
        let (ai, bi) = (a.id, b.id);
        self.record(y, [n, c], &[a, b], move |g, sink| {
            if let Some(id) = ai {
                let s = sink.slot(id);
                for r in 0..n {
                    for j in 0..ca {
                        s[r * ca + j] += g[r * c + j];
                    }
                }
            }
            if let Some(id) = bi {
                let s = sink.slot(id);
                for r in 0..n {
                    for j in 0..cb {
                        s[r * cb + j] += g[r * c + ca + j];
                    }
                }
            }
        })
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&self, x: &Var, start: usize, len: usize) -> Var {
        let (n, c) = (x.rows(), x.cols());
        assert!(start + len <= c);
        let mut y = Vec::with_capacity(n * len);
        for r in 0..n {
            y.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let xi = x.id;
        self.record(y, [n, len], &[x], move |g, sink| {
            if let Some(id) = xi {
                let s = sink.slot(id);
                for r in 0..n {
                    for j in 0..len {
                        s[r * c + start + j] += g[r * len + j];
                    }
                }
            }
        })
    }

    /// Scales each row to unit Euclidean length. Rows with norm below `eps`
    /// become the sentinel `(0, .., 0, 1)` with zero gradient; their indices
    /// are returned alongside.
    pub fn normalize_rows(&self, x: &Var, eps: f64) -> (Var, Vec<usize>) {
        let (n, c) = (x.rows(), x.cols());
        let mut y = vec![0.0; n * c];
        let mut inv = vec![0.0; n];
        let mut degenerate = Vec::new();
        for r in 0..n {
            let row = x.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < eps {
                y[r * c + c - 1] = 1.0;
                degenerate.push(r);
            } else {
                inv[r] = 1.0 / norm;
                for j in 0..c {
                    y[r * c + j] = row[j] / norm;
                }
            }
        }
        let yd = Rc::new(y.clone());
        let xi = x.id;
        let out = self.record(y, [n, c], &[x], move |g, sink| {
            if let Some(id) = xi {
                let s = sink.slot(id);
                for r in 0..n {
                    if inv[r] == 0.0 {
                        continue;
                    }
                    let yr = &yd[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        s[r * c + j] += inv[r] * (gr[j] - yr[j] * dot);
                    }
                }
            }
        });
        (out, degenerate)
    }

    /// Mean over rows of the squared Euclidean row error against a constant
    /// target, restricted to rows with `weights[r] > 0`.
    pub fn mse_rows(&self, pred: &Var, target: &[f64], weights: Option<&[f64]>) -> Var {
        let (n, c) = (pred.rows(), pred.cols());
        assert_eq!(target.len(), n * c);
        let w: Vec<f64> = match weights {
            Some(w) => w.to_vec(),
            None => vec![1.0; n],
        };
        let total: f64 = w.iter().sum();
        assert!(total > 0.0, "mse_rows: no weighted rows");
        let mut loss = 0.0;
        for r in 0..n {
            if w[r] > 0.0 {
                let e: f64 = (0..c).map(|j| (pred.data[r * c + j] - target[r * c + j]).powi(2)).sum();
                loss += w[r] * e;
            }
        }
        loss /= total;
        let pd = pred.data.clone();
        let t = target.to_vec();
        let pi = pred.id;
        self.record(vec![loss], [1, 1], &[pred], move |g, sink| {
            if let Some(id) = pi {
                let s = sink.slot(id);
                for r in 0..n {
                    if w[r] > 0.0 {
                        for j in 0..c {
                            s[r * c + j] += g[0] * 2.0 * w[r] * (pd[r * c + j] - t[r * c + j]) / total;
                        }
                    }
                }
            }
        })
    }

    pub fn sum(&self, x: &Var) -> Var {
        let s = x.data.iter().sum();
        let xi = x.id;
        self.record(vec![s], [1, 1], &[x], move |g, sink| {
            if let Some(id) = xi {
                sink.slot(id).iter_mut().for_each(|a| *a += g[0]);
            }
        })
    }

    /// Sum of `x * weights` with constant weights; a convenient scalar probe
    /// for gradient checks.
    pub fn weighted_sum(&self, x: &Var, weights: &[f64]) -> Var {
        assert_eq!(weights.len(), x.data.len());
        let s = x.data.iter().zip(weights).map(|(a, b)| a * b).sum();
        let w = weights.to_vec();
        let xi = x.id;
        self.record(vec![s], [1, 1], &[x], move |g, sink| {
            if let Some(id) = xi {
                for (a, w) in sink.slot(id).iter_mut().zip(&w) {
                    *a += g[0] * w;
                }
            }
        })
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&self, x: &Var, p: f64) -> Var {
        if !self.training() || p <= 0.0 {
            return x.clone();
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..x.data.len()).map(|_| if self.uniform() < keep { 1.0 / keep } else { 0.0 }).collect();
        let y = x.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let xi = x.id;
        self.record(y, x.shape, &[x], move |g, sink| {
            if let Some(id) = xi {
                for ((s, g), m) in sink.slot(id).iter_mut().zip(g).zip(&mask) {
                    *s += g * m;
                }
            }
        })
    }
}
