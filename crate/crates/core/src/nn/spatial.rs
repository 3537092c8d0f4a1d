//! Spatial ops on batched channels-last feature maps.
//!
//! A batch of `n` maps of size `h x w` with `c` channels is stored as a
//! `[n * h * w, c]` matrix, row index `(b * h + y) * w + x`. Resampling,
//! padding-aware patch extraction and strided interleaving are all sparse
//! linear maps between rows, expressed as a [`RowMix`].

use super::{Graph, Var};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Sparse row operator in CSR form: output row `r` is
/// `sum(w[e] * input[idx[e]])` over `e in offsets[r]..offsets[r + 1]`.
#[derive(Debug, Clone)]
pub struct RowMix {
    in_rows: usize,
    offsets: Vec<usize>,
    idx: Vec<u32>,
    w: Vec<f64>,
}

impl RowMix {
    pub fn new(in_rows: usize) -> Self {
        RowMix { in_rows, offsets: vec![0], idx: Vec::new(), w: Vec::new() }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (i, w) in entries {
            debug_assert!(i < self.in_rows);
            self.idx.push(i as u32);
            self.w.push(w);
        }
        self.offsets.push(self.idx.len());
    }

    /// Pure gather; `None` yields a zero row.
    pub fn gather(in_rows: usize, rows: impl IntoIterator<Item = Option<usize>>) -> Self {
        let mut m = RowMix::new(in_rows);
        for r in rows {
            m.push_row(r.map(|i| (i, 1.0)));
        }
        m
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    pub fn out_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        self.idx[a..b].iter().zip(&self.w[a..b]).map(|(&i, &w)| (i as usize, w))
    }

    /// Applies the operator to a plain row-major buffer of width `c`.
    pub fn apply(&self, x: &[f64], c: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.in_rows * c, "RowMix::apply: input rows");
        let mut y = vec![0.0; self.out_rows() * c];
        for r in 0..self.out_rows() {
            let out = &mut y[r * c..(r + 1) * c];
            for (i, w) in self.entries(r) {
                for (o, v) in out.iter_mut().zip(&x[i * c..(i + 1) * c]) {
                    *o += w * v;
                }
            }
        }
        y
    }

    fn apply_transpose(&self, g: &[f64], c: usize, dx: &mut [f64]) {
        for r in 0..self.out_rows() {
            let gr = &g[r * c..(r + 1) * c];
            for (i, w) in self.entries(r) {
                for (d, v) in dx[i * c..(i + 1) * c].iter_mut().zip(gr) {
                    *d += w * v;
                }
            }
        }
    }
}

/// Source sampling position for `align_corners = false` resizing.
fn resize_taps(out_i: usize, n_in: usize, n_out: usize) -> [(usize, f64); 2] {
    let src = ((out_i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(n_in - 1);
    let t = src - i0 as f64;
    [(i0, 1.0 - t), (i1, t)]
}

/// Bilinear resize of `batch` maps from `hi x wi` to `ho x wo`.
pub fn bilinear_resize_mix(batch: usize, hi: usize, wi: usize, ho: usize, wo: usize) -> RowMix {
    let mut m = RowMix::new(batch * hi * wi);
    for b in 0..batch {
        for y in 0..ho {
            let ty = resize_taps(y, hi, ho);
            for x in 0..wo {
                let tx = resize_taps(x, wi, wo);
                let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4);
                for &(yy, wy) in &ty {
                    for &(xx, wx) in &tx {
                        let w = wy * wx;
                        if w != 0.0 {
                            let i = (b * hi + yy) * wi + xx;
                            match entries.iter_mut().find(|e| e.0 == i) {
                                Some(e) => e.1 += w,
                                None => entries.push((i, w)),
                            }
                        }
                    }
                }
                m.push_row(entries);
            }
        }
    }
    m
}

/// `k x k` zero-padded patches: output row `((b, y, x), tap)` so that a
/// reshape to `[batch * h * w, k * k * c]` gives im2col columns.
pub fn im2col_mix(batch: usize, h: usize, w: usize, k: usize) -> RowMix {
    let r = (k / 2) as isize;
    let mut rows = Vec::with_capacity(batch * h * w * k * k);
    for b in 0..batch {
        for y in 0..h as isize {
            for x in 0..w as isize {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        rows.push(if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                            Some((b * h + yy as usize) * w + xx as usize)
                        } else {
                            None
                        });
                    }
                }
            }
        }
    }
    RowMix::gather(batch * h * w, rows)
}

/// Non-overlapping `s x s` patches; reshape the result to
/// `[batch * (h / s) * (w / s), s * s * c]`.
pub fn patchify_mix(batch: usize, h: usize, w: usize, s: usize) -> RowMix {
    assert!(h % s == 0 && w % s == 0, "patchify: {h}x{w} not divisible by {s}");
    let (ho, wo) = (h / s, w / s);
    let mut rows = Vec::with_capacity(batch * h * w);
    for b in 0..batch {
        for y in 0..ho {
            for x in 0..wo {
                for dy in 0..s {
                    for dx in 0..s {
                        rows.push(Some((b * h + y * s + dy) * w + x * s + dx));
                    }
                }
            }
        }
    }
    RowMix::gather(batch * h * w, rows)
}

/// One-dimensional depthwise filter with edge replication, along x
/// (`horizontal`) or y. `taps[t]` applies at offset `t - left`.
pub fn depthwise_kernel_mix(batch: usize, h: usize, w: usize, taps: &[f64], left: usize, horizontal: bool) -> RowMix {
    let mut m = RowMix::new(batch * h * w);
    for b in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let mut entries: Vec<(usize, f64)> = Vec::with_capacity(taps.len());
                for (t, &wt) in taps.iter().enumerate() {
                    let off = t as isize - left as isize;
                    let (yy, xx) = if horizontal {
                        (y as isize, (x as isize + off).clamp(0, w as isize - 1))
                    } else {
                        ((y as isize + off).clamp(0, h as isize - 1), x as isize)
                    };
                    let i = (b * h + yy as usize) * w + xx as usize;
                    match entries.iter_mut().find(|e| e.0 == i) {
                        Some(e) => e.1 += wt,
                        None => entries.push((i, wt)),
                    }
                }
                m.push_row(entries);
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MixKey {
    Resize(usize, usize, usize, usize, usize),
    Im2col(usize, usize, usize, usize),
    Patchify(usize, usize, usize, usize),
    Other(String),
}

/// Memoizes operators that depend only on shapes.
#[derive(Default)]
pub struct SpatialCache {
    mixes: RefCell<HashMap<MixKey, Rc<RowMix>>>,
}

impl SpatialCache {
    pub fn get(&self, key: MixKey, build: impl FnOnce() -> RowMix) -> Rc<RowMix> {
        if let Some(m) = self.mixes.borrow().get(&key) {
            return m.clone();
        }
        let m = Rc::new(build());
        self.mixes.borrow_mut().insert(key, m.clone());
        m
    }

    pub fn resize(&self, batch: usize, hi: usize, wi: usize, ho: usize, wo: usize) -> Rc<RowMix> {
        self.get(MixKey::Resize(batch, hi, wi, ho, wo), || bilinear_resize_mix(batch, hi, wi, ho, wo))
    }

    pub fn im2col(&self, batch: usize, h: usize, w: usize, k: usize) -> Rc<RowMix> {
        self.get(MixKey::Im2col(batch, h, w, k), || im2col_mix(batch, h, w, k))
    }

    pub fn patchify(&self, batch: usize, h: usize, w: usize, s: usize) -> Rc<RowMix> {
        self.get(MixKey::Patchify(batch, h, w, s), || patchify_mix(batch, h, w, s))
    }
}

impl Graph<'_> {
    pub fn mix_rows(&self, x: &Var, mix: &Rc<RowMix>) -> Var {
        let c = x.cols();
        assert_eq!(x.rows(), mix.in_rows(), "mix_rows: operator expects {} rows, got {}", mix.in_rows(), x.rows());
        let y = mix.apply(&x.data, c);
        let m = mix.clone();
        let xi = x.id;
        self.record(y, [mix.out_rows(), c], &[x], move |g, sink| {
            if let Some(id) = xi {
                m.apply_transpose(g, c, sink.slot(id));
            }
        })
    }

    /// Depthwise `k x k` convolution with zero padding `k / 2`.
    /// `weight` is `[k * k, c]` (tap-major), `bias` `[1, c]`.
    #[allow(clippy::too_many_arguments)]
    pub fn depthwise_conv(&self, x: &Var, weight: &Var, bias: &Var, batch: usize, h: usize, w: usize, k: usize) -> Var {
        let c = x.cols();
        assert_eq!(x.rows(), batch * h * w);
        assert_eq!(weight.shape(), [k * k, c]);
        let r = (k / 2) as isize;
        let mut y = vec![0.0; x.data.len()];
        for out in y.chunks_mut(c) {
            out.copy_from_slice(&bias.data);
        }
        let (hh, ww) = (h as isize, w as isize);
        for b in 0..batch {
            for yy in 0..hh {
                for xx in 0..ww {
                    let o = ((b * h) as isize + yy) as usize * w + xx as usize;
                    for dy in -r..=r {
                        let sy = yy + dy;
                        if sy < 0 || sy >= hh {
                            continue;
                        }
                        for dx in -r..=r {
                            let sx = xx + dx;
                            if sx < 0 || sx >= ww {
                                continue;
                            }
                            let i = ((b * h) as isize + sy) as usize * w + sx as usize;
                            let t = ((dy + r) * k as isize + dx + r) as usize;
                            let wt = &weight.data[t * c..(t + 1) * c];
                            let src = &x.data[i * c..(i + 1) * c];
                            let dst = &mut y[o * c..(o + 1) * c];
                            for j in 0..c {
                                dst[j] += wt[j] * src[j];
                            }
                        }
                    }
                }
            }
        }
        let (xd, wd) = (x.data.clone(), weight.data.clone());
        let (xi, wi, bi) = (x.id, weight.id, bias.id);
        self.record(y, x.shape, &[x, weight, bias], move |g, sink| {
            if let Some(id) = bi {
                let s = sink.slot(id);
                for gr in g.chunks(c) {
                    for (a, v) in s.iter_mut().zip(gr) {
                        *a += v;
                    }
                }
            }
            let mut dx = if xi.is_some() { vec![0.0; xd.len()] } else { Vec::new() };
            let mut dw = if wi.is_some() { vec![0.0; wd.len()] } else { Vec::new() };
            for b in 0..batch {
                for yy in 0..hh {
                    for xx in 0..ww {
                        let o = ((b * h) as isize + yy) as usize * w + xx as usize;
                        let go = &g[o * c..(o + 1) * c];
                        for dy in -r..=r {
                            let sy = yy + dy;
                            if sy < 0 || sy >= hh {
                                continue;
                            }
                            for dx_ in -r..=r {
                                let sx = xx + dx_;
                                if sx < 0 || sx >= ww {
                                    continue;
                                }
                                let i = ((b * h) as isize + sy) as usize * w + sx as usize;
                                let t = ((dy + r) * k as isize + dx_ + r) as usize;
                                if xi.is_some() {
                                    let wt = &wd[t * c..(t + 1) * c];
                                    let d = &mut dx[i * c..(i + 1) * c];
                                    for j in 0..c {
                                        d[j] += wt[j] * go[j];
                                    }
                                }
                                if wi.is_some() {
                                    let src = &xd[i * c..(i + 1) * c];
                                    let d = &mut dw[t * c..(t + 1) * c];
                                    for j in 0..c {
                                        d[j] += src[j] * go[j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            sink.add(xi, &dx);
            sink.add(wi, &dw);
        })
    }
}
