//! A small reverse-mode automatic differentiation engine over row-major
//! `f64` matrices.
//!
//! Every value is a [`Var`]: a shared buffer plus a shape, optionally linked
//! to a node on the [`Graph`] tape. Ops record closures that push gradients
//! to their inputs; [`Graph::backward`] replays them in reverse. When
//! gradients are disabled nothing is recorded and intermediates are freed as
//! soon as the last `Var` referencing them is dropped.

mod attention;
pub mod gradcheck;
mod layers;
mod ops;
mod optim;
mod params;
mod spatial;

pub use attention::naive_attention;
pub use layers::{LayerNorm, Linear, Mlp, TransformerBlock};
pub use optim::AdamW;
pub use params::{load_checkpoint, save_checkpoint, Checkpoint, ParamId, ParamStore};
pub use spatial::{
    bilinear_resize_mix, depthwise_kernel_mix, im2col_mix, patchify_mix, MixKey, RowMix, SpatialCache,
};

use crate::rng::Rng;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// A value in the graph. Two dimensional shapes `[rows, cols]` are the norm;
/// scalars are `[1, 1]`.
#[derive(Clone, Debug)]
pub struct Var {
    data: Rc<Vec<f64>>,
    shape: [usize; 2],
    id: Option<usize>,
}

impl Var {
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    /// Same buffer viewed with another shape. Shares the tape node, since
    /// the flat gradient is identical.
    pub fn reshape(&self, rows: usize, cols: usize) -> Var {
        assert_eq!(rows * cols, self.data.len(), "reshape changes element count");
        Var { data: self.data.clone(), shape: [rows, cols], id: self.id }
    }
}

type Backward = Box<dyn Fn(&[f64], &mut GradSink)>;

struct Node {
    backward: Option<Backward>,
    param: Option<ParamId>,
    len: usize,
}

/// Gradient buffers indexed by tape node, filled lazily during backward.
pub struct GradSink {
    slots: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl GradSink {
    /// Accumulation buffer for `id`, zero-initialized on first access.
    pub(crate) fn slot(&mut self, id: usize) -> &mut [f64] {
        let len = self.lens[id];
        self.slots[id].get_or_insert_with(|| vec![0.0; len])
    }

    pub(crate) fn add(&mut self, id: Option<usize>, grad: &[f64]) {
        if let Some(id) = id {
            for (a, g) in self.slot(id).iter_mut().zip(grad) {
                *a += g;
            }
        }
    }
}

/// Gradients for parameters, keyed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct Grads {
    pub by_param: HashMap<ParamId, Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(|v| v.as_slice())
    }

    /// Adds `other` scaled by `scale` into `self`.
    pub fn accumulate(&mut self, other: &Grads, scale: f64) {
        for (id, g) in &other.by_param {
            let e = self.by_param.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in e.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.by_param.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// The tape. Holds a borrowed parameter store; parameters enter the graph
/// as leaves through [`Graph::param`].
pub struct Graph<'p> {
    store: &'p ParamStore,
    tape: RefCell<Vec<Node>>,
    param_vars: RefCell<HashMap<ParamId, Var>>,
    grad_enabled: bool,
    training: bool,
    rng: RefCell<Rng>,
}

impl<'p> Graph<'p> {
    /// Graph recording gradients. `training` enables dropout.
    pub fn new(store: &'p ParamStore, training: bool, seed: u64) -> Self {
        Graph {
            store,
            tape: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
            grad_enabled: true,
            training,
            rng: RefCell::new(Rng::new(seed)),
        }
    }

    /// Inference graph: no tape, no dropout.
    pub fn inference(store: &'p ParamStore) -> Self {
        Graph {
            store,
            tape: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
            grad_enabled: false,
            training: false,
            rng: RefCell::new(Rng::new(0)),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub(crate) fn uniform(&self) -> f64 {
        self.rng.borrow_mut().uniform()
    }

    /// A constant (no gradient).
    pub fn constant(&self, data: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "constant: data length does not match shape");
        Var { data: Rc::new(data), shape: [rows, cols], id: None }
    }

    /// A leaf that receives a gradient but is not a stored parameter; used by
    /// gradient checks on inputs.
    pub fn input(&self, data: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols);
        let id = self.push_node(None, None, data.len());
        Var { data: Rc::new(data), shape: [rows, cols], id }
    }

    /// Parameter leaf, shared across uses within this graph.
    pub fn param(&self, pid: ParamId) -> Var {
        if let Some(v) = self.param_vars.borrow().get(&pid) {
            return v.clone();
        }
        let value = self.store.value(pid);
        let [rows, cols] = self.store.shape(pid);
        let id = self.push_node(None, Some(pid), value.len());
        let var = Var { data: value, shape: [rows, cols], id };
        self.param_vars.borrow_mut().insert(pid, var.clone());
        var
    }

    fn push_node(&self, backward: Option<Backward>, param: Option<ParamId>, len: usize) -> Option<usize> {
        if !self.grad_enabled {
            return None;
        }
        let mut tape = self.tape.borrow_mut();
        tape.push(Node { backward, param, len });
        Some(tape.len() - 1)
    }

    /// Records the result of an op. `backward` is only kept when at least one
    /// input requires a gradient.
    pub(crate) fn record(
        &self,
        data: Vec<f64>,
        shape: [usize; 2],
        inputs: &[&Var],
        backward: impl Fn(&[f64], &mut GradSink) + 'static,
    ) -> Var {
        debug_assert_eq!(data.len(), shape[0] * shape[1]);
        let needs = self.grad_enabled && inputs.iter().any(|v| v.id.is_some());
        let id = if needs { self.push_node(Some(Box::new(backward)), None, data.len()) } else { None };
        Var { data: Rc::new(data), shape, id }
    }

    /// Reverse pass from a scalar. Returns parameter gradients, and input
    /// gradients for leaves created with [`Graph::input`] via `inputs`.
    pub fn backward(&self, loss: &Var) -> Grads {
        self.backward_with_inputs(loss, &[]).0
    }

    pub fn backward_with_inputs(&self, loss: &Var, inputs: &[&Var]) -> (Grads, Vec<Option<Vec<f64>>>) {
        assert_eq!(loss.data.len(), 1, "backward needs a scalar");
        let tape = self.tape.borrow();
        let mut sink = GradSink {
            slots: (0..tape.len()).map(|_| None).collect(),
            lens: tape.iter().map(|n| n.len).collect(),
        };
        let Some(root) = loss.id else {
            return (Grads::default(), inputs.iter().map(|_| None).collect());
        };
        sink.slot(root)[0] = 1.0;
        let mut grads = Grads::default();
        for id in (0..=root).rev() {
            let Some(g) = sink.slots[id].take() else { continue };
            let node = &tape[id];
            if let Some(b) = &node.backward {
                b(&g, &mut sink);
            }
            if let Some(pid) = node.param {
                grads.by_param.insert(pid, g);
            } else if inputs.iter().any(|v| v.id == Some(id)) {
                sink.slots[id] = Some(g);
            }
        }
        let ins = inputs.iter().map(|v| v.id.and_then(|i| sink.slots[i].take())).collect();
        (grads, ins)
    }
}
