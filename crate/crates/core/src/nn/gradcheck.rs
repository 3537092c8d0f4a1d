//! Central finite-difference gradient checking.
//!
//! Only forward evaluations of the loss are used to form the numerical
//! estimate, so the check is independent of every hand-written backward.

use super::{Graph, ParamId, ParamStore, Var};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with a small absolute floor so that entries whose true
/// gradient vanishes are judged on absolute error.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Compares analytic parameter gradients of the scalar returned by `f`
/// against central differences, for up to `per_param` randomly chosen
/// elements of each listed parameter. `f` must be deterministic (build its
/// graph with `training = false`).
pub fn check_param_grads(
    store: &mut ParamStore,
    params: &[ParamId],
    per_param: usize,
    eps: f64,
    seed: u64,
    f: impl Fn(&Graph) -> Var,
) -> GradCheckReport {
    let grads = {
        let g = Graph::new(store, false, 0);
        let loss = f(&g);
        g.backward(&loss)
    };
    let mut rng = Rng::new(seed);
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for &pid in params {
        let n = store.value(pid).len();
        let picks = if n <= per_param { (0..n).collect() } else { rng.choose_distinct(n, per_param) };
        for i in picks {
            let orig = store.value(pid)[i];
            store.value_mut(pid)[i] = orig + eps;
            let up = f(&Graph::inference(store)).scalar();
            store.value_mut(pid)[i] = orig - eps;
            let down = f(&Graph::inference(store)).scalar();
            store.value_mut(pid)[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(pid).map_or(0.0, |g| g[i]);
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            if e >= report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((store.name(pid).to_string(), i, analytic, numeric));
            }
        }
    }
    report
}

/// Same as [`check_param_grads`] but for a free input tensor: `f` receives
/// the graph and the input as a `Var`.
pub fn check_input_grads(
    store: &ParamStore,
    input: &[f64],
    shape: [usize; 2],
    picks: usize,
    eps: f64,
    seed: u64,
    f: impl Fn(&Graph, &Var) -> Var,
) -> GradCheckReport {
    let analytic = {
        let g = Graph::new(store, false, 0);
        let x = g.input(input.to_vec(), shape[0], shape[1]);
        let loss = f(&g, &x);
        let (_, ins) = g.backward_with_inputs(&loss, &[&x]);
        ins.into_iter().next().flatten().unwrap_or_else(|| vec![0.0; input.len()])
    };
    let mut rng = Rng::new(seed);
    let n = input.len();
    let idx = if n <= picks { (0..n).collect() } else { rng.choose_distinct(n, picks) };
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    let eval = |data: Vec<f64>| {
        let g = Graph::inference(store);
        let x = g.constant(data, shape[0], shape[1]);
        f(&g, &x).scalar()
    };
    for i in idx {
        let mut up = input.to_vec();
        up[i] += eps;
        let mut down = input.to_vec();
        down[i] -= eps;
        let numeric = (eval(up) - eval(down)) / (2.0 * eps);
        let e = rel_err(analytic[i], numeric);
        report.checked += 1;
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst = Some(("input".into(), i, analytic[i], numeric));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{naive_attention, RowMix};
    use std::rc::Rc;

    fn randn(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    fn probe(n: usize, seed: u64) -> Vec<f64> {
        randn(&mut Rng::new(seed), n)
    }

    fn assert_ok(r: &GradCheckReport) {
        assert!(r.max_rel_err < 1e-5, "gradient check failed: {r:?}");
    }

    #[test]
    fn linear_layernorm_gelu() {
        let mut rng = Rng::new(1);
        let mut s = ParamStore::new();
        let w = s.add("w", 5, 4, randn(&mut rng, 20), true);
        let b = s.add("b", 1, 4, randn(&mut rng, 4), false);
        let gm = s.add("g", 1, 4, randn(&mut rng, 4), false);
        let bt = s.add("bt", 1, 4, randn(&mut rng, 4), false);
        let x = randn(&mut rng, 15);
        let pr = probe(12, 9);
        let r = check_param_grads(&mut s, &[w, b, gm, bt], 50, 1e-6, 0, |g| {
            let x = g.constant(x.clone(), 3, 5);
            let y = g.linear(&x, &g.param(w), Some(&g.param(b)));
            let y = g.layer_norm(&y, &g.param(gm), &g.param(bt), 1e-6);
            let y = g.gelu(&y);
            g.weighted_sum(&y, &pr)
        });
        assert_ok(&r);
        let r = check_input_grads(&s, &x, [3, 5], 100, 1e-6, 0, |g, x| {
            let y = g.linear(x, &g.param(w), Some(&g.param(b)));
            let y = g.sigmoid(&g.layer_norm(&y, &g.param(gm), &g.param(bt), 1e-6));
            g.weighted_sum(&y, &pr)
        });
        assert_ok(&r);
    }

    #[test]
    fn attention_grads_and_chunking() {
        let mut rng = Rng::new(2);
        let s = ParamStore::new();
        let (groups, tq, tk, c) = (2, 5, 3, 4);
        let q = randn(&mut rng, groups * tq * c);
        let k = randn(&mut rng, groups * tk * c);
        let v = randn(&mut rng, groups * tk * c);
        let pr = probe(groups * tq * c, 3);
        for chunk in [1, 2, 64] {
            let r = check_input_grads(&s, &q, [groups * tq, c], 100, 1e-6, 0, |g, x| {
                let kk = g.constant(k.clone(), groups * tk, c);
                let vv = g.constant(v.clone(), groups * tk, c);
                g.weighted_sum(&g.attention(x, &kk, &vv, groups, 2, chunk), &pr)
            });
            assert_ok(&r);
            let r = check_input_grads(&s, &k, [groups * tk, c], 100, 1e-6, 0, |g, x| {
                let qq = g.constant(q.clone(), groups * tq, c);
                let vv = g.constant(v.clone(), groups * tk, c);
                g.weighted_sum(&g.attention(&qq, x, &vv, groups, 2, chunk), &pr)
            });
            assert_ok(&r);
            let r = check_input_grads(&s, &v, [groups * tk, c], 100, 1e-6, 0, |g, x| {
                let qq = g.constant(q.clone(), groups * tq, c);
                let kk = g.constant(k.clone(), groups * tk, c);
                g.weighted_sum(&g.attention(&qq, &kk, x, groups, 2, chunk), &pr)
            });
            assert_ok(&r);
            let g = Graph::inference(&s);
            let out = g.attention(
                &g.constant(q.clone(), groups * tq, c),
                &g.constant(k.clone(), groups * tk, c),
                &g.constant(v.clone(), groups * tk, c),
                groups,
                2,
                chunk,
            );
            let naive = naive_attention(&q, &k, &v, groups, c, 2);
            for (a, b) in out.data().iter().zip(&naive) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mix_conv_normalize_concat() {
        let mut rng = Rng::new(4);
        let mut s = ParamStore::new();
        let (b, h, w, c) = (2, 4, 3, 3);
        let dw = s.add("dw", 9, c, randn(&mut rng, 9 * c), true);
        let db = s.add("db", 1, c, randn(&mut rng, c), false);
        let x = randn(&mut rng, b * h * w * c);
        let mut mix = RowMix::new(b * h * w);
        for r in 0..7 {
            mix.push_row([(r, 0.3), ((r * 5 + 1) % (b * h * w), -1.2)]);
        }
        let mix = Rc::new(mix);
        let pr = probe(7 * 3, 5);
        let f = |g: &Graph, x: &Var| {
            let y = g.depthwise_conv(x, &g.param(dw), &g.param(db), b, h, w, 3);
            let m = g.mix_rows(&y, &mix);
            let cat = g.concat_cols(&m, &g.slice_cols(&m, 1, 2));
            let (n, _) = g.normalize_rows(&g.slice_cols(&cat, 1, 3), 1e-12);
            g.weighted_sum(&n, &pr)
        };
        assert_ok(&check_input_grads(&s, &x, [b * h * w, c], 200, 1e-6, 0, f));
        assert_ok(&check_param_grads(&mut s, &[dw, db], 100, 1e-6, 0, |g| {
            let xv = g.constant(x.clone(), b * h * w, c);
            f(g, &xv)
        }));
    }

    #[test]
    fn mse_rows_gradient() {
        let mut rng = Rng::new(5);
        let s = ParamStore::new();
        let x = randn(&mut rng, 12);
        let t = randn(&mut rng, 12);
        let w = [1.0, 0.0, 1.0, 1.0];
        assert_ok(&check_input_grads(&s, &x, [4, 3], 12, 1e-6, 0, |g, x| g.mse_rows(x, &t, Some(&w))));
    }
}
