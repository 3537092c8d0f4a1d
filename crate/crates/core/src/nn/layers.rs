use super::{Graph, ParamId, ParamStore, Var};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// LeCun-normal weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Self {
        let weight = store.add_normal(&format!("{name}.weight"), in_dim, out_dim, (1.0 / in_dim as f64).sqrt(), rng);
        let bias = bias.then(|| store.add_const(&format!("{name}.bias"), 1, out_dim, 0.0));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, &w, b.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add_const(&format!("{name}.gamma"), 1, dim, 1.0),
            beta: store.add_const(&format!("{name}.beta"), 1, dim, 0.0),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Var {
        g.layer_norm(x, &g.param(self.gamma), &g.param(self.beta), self.eps)
    }
}

/// Two linear layers with a GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut Rng) -> Self {
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), dims[0], dims[1], true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), dims[1], dims[2], true, rng),
        }
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Var {
        let h = self.fc1.forward(g, x);
        self.fc2.forward(g, &g.gelu(&h))
    }
}

/// Pre-normalization Transformer block: multi-head attention and a
/// feed-forward network (inner width twice the model width), each wrapped in
/// a residual connection.
///
/// When the input width differs from the model width the projected query
/// takes the place of the identity shortcut.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub q_dim: usize,
    pub kv_dim: usize,
    pub dim: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Query rows per logits block.
    pub chunk: usize,
    ln_kv: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln_ff: LayerNorm,
    ff: Mlp,
}

impl TransformerBlock {
    /// Self-attention block mapping width `in_dim` to `dim`.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, dim: usize, heads: usize, dropout: f64, rng: &mut Rng) -> Self {
        Self::build(store, name, in_dim, in_dim, dim, heads, dropout, rng)
    }

    /// Cross-attention block: queries of width `dim` attend over a key/value
    /// set of width `kv_dim`.
    pub fn cross(store: &mut ParamStore, name: &str, kv_dim: usize, dim: usize, heads: usize, dropout: f64, rng: &mut Rng) -> Self {
        Self::build(store, name, dim, kv_dim, dim, heads, dropout, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        store: &mut ParamStore,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        dim: usize,
        heads: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(dim % heads == 0, "{name}: width {dim} not divisible by {heads} heads");
        TransformerBlock {
            q_dim,
            kv_dim,
            dim,
            heads,
            dropout,
            chunk: 64,
            ln_kv: LayerNorm::new(store, &format!("{name}.ln1"), kv_dim),
            q: Linear::new(store, &format!("{name}.q"), q_dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), kv_dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), kv_dim, dim, true, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff: Mlp::new(store, &format!("{name}.ff"), [dim, 2 * dim, dim], rng),
        }
    }

    fn feed_forward(&self, g: &Graph, x: &Var) -> Var {
        let f = self.ff.forward(g, &self.ln_ff.forward(g, x));
        g.add(x, &g.dropout(&f, self.dropout))
    }

    /// Self-attention within each of `groups` contiguous row groups.
    pub fn forward(&self, g: &Graph, x: &Var, groups: usize) -> Var {
        debug_assert_eq!(self.q_dim, self.kv_dim);
        let h = self.ln_kv.forward(g, x);
        let q = self.q.forward(g, &h);
        let k = self.k.forward(g, &h);
        let v = self.v.forward(g, &h);
        let a = self.o.forward(g, &g.attention(&q, &k, &v, groups, self.heads, self.chunk));
        let a = g.dropout(&a, self.dropout);
        let x1 = if x.cols() == self.dim { g.add(x, &a) } else { g.add(&q, &a) };
        self.feed_forward(g, &x1)
    }

    /// Queries `[groups * tq, dim]` attend over `kv [groups * tk, kv_dim]`.
    pub fn forward_cross(&self, g: &Graph, queries: &Var, kv: &Var, groups: usize) -> Var {
        let h = self.ln_kv.forward(g, kv);
        let q = self.q.forward(g, queries);
        let k = self.k.forward(g, &h);
        let v = self.v.forward(g, &h);
        let a = self.o.forward(g, &g.attention(&q, &k, &v, groups, self.heads, self.chunk));
        let a = g.dropout(&a, self.dropout);
        let x1 = g.add(queries, &a);
        self.feed_forward(g, &x1)
    }
}
