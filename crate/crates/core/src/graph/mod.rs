//! Layer graph with a forward pass and a reverse-mode backward pass.
//!
//! A [`LayerGraph`] is a DAG of at most nine layer kinds stored in
//! topological order: every node only reads nodes created before it, node 0
//! is the input, and the last node is the per-sample scalar output. Branches
//! fan out by having several nodes read the same upstream node, and they
//! join again through [`LayerKind::AddMerge`].
//!
//! [`LayerGraph::forward`] records a [`GradTape`] of every node output plus
//! the auxiliary state the backward pass needs (pool argmaxes, normalized
//! activations, dropout masks). [`LayerGraph::backward`] walks the nodes in
//! reverse, summing gradients where branches fan out.

mod layers;

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use layers::{
    activation, batchnorm_forward, dropout, ActivationKind, BatchNormState, Conv2dLayer,
    DenseLayer, Mode,
};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{
    self, conv2d, conv2d_backward, maxpool2_backward, maxpool2_with_indices, ConvSpec, Element,
    Tensor,
};
use layers::{BatchNormCache, BatchStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Input,
    Conv2D,
    BatchNorm,
    ReLU,
    Sigmoid,
    MaxPool2,
    Dense,
    Dropout,
    Flatten,
    AddMerge,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Input => "Input",
            LayerKind::Conv2D => "Conv2D",
            LayerKind::BatchNorm => "BatchNorm",
            LayerKind::ReLU => "ReLU",
            LayerKind::Sigmoid => "Sigmoid",
            LayerKind::MaxPool2 => "MaxPool2",
            LayerKind::Dense => "Dense",
            LayerKind::Dropout => "Dropout",
            LayerKind::Flatten => "Flatten",
            LayerKind::AddMerge => "AddMerge",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Input,
    Conv2D(Conv2dLayer<T>),
    BatchNorm(BatchNormState<T>),
    Activation(ActivationKind),
    MaxPool2,
    Dense(DenseLayer<T>),
    Dropout { rate: f64 },
    Flatten,
    AddMerge,
}

impl<T: Element> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Input => LayerKind::Input,
            Layer::Conv2D(_) => LayerKind::Conv2D,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Activation(ActivationKind::Relu) => LayerKind::ReLU,
            Layer::Activation(ActivationKind::Sigmoid) => LayerKind::Sigmoid,
            Layer::MaxPool2 => LayerKind::MaxPool2,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Dropout { .. } => LayerKind::Dropout,
            Layer::Flatten => LayerKind::Flatten,
            Layer::AddMerge => LayerKind::AddMerge,
        }
    }

    fn trainable(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv2D(c) => vec![("kernel", &c.kernels), ("bias", &c.bias)],
            Layer::BatchNorm(b) => vec![("gamma", &b.gamma), ("beta", &b.beta)],
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            _ => Vec::new(),
        }
    }

    fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2D(c) => vec![&mut c.kernels, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    fn state(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut all = self.trainable();
        if let Layer::BatchNorm(b) = self {
            all.push(("moving_mean", &b.moving_mean));
            all.push(("moving_var", &b.moving_var));
        }
        all
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv2D(c) => vec![("kernel", &mut c.kernels), ("bias", &mut c.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &mut b.gamma),
                ("beta", &mut b.beta),
                ("moving_mean", &mut b.moving_mean),
                ("moving_var", &mut b.moving_var),
            ],
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode<T = f32> {
    pub id: String,
    pub layer: Layer<T>,
    pub inputs: Vec<usize>,
    /// Per-sample output shape (no batch axis).
    pub output_shape: Vec<usize>,
}

/// Topology-only view of a node, used to compare graphs structurally.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSummary {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    pub output_shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGraph<T = f32> {
    nodes: Vec<LayerNode<T>>,
    index: HashMap<String, usize>,
    version: u64,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug)]
pub struct GradTape<T = f32> {
    mode: Mode,
    version: u64,
    outputs: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

#[derive(Debug)]
enum Aux<T> {
    None,
    Pool(Vec<u32>),
    Norm(BatchNormCache<T>),
    Mask(Vec<T>),
}

impl<T: Element> GradTape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The graph output, `(B, 1)`.
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().expect("tape always holds the input node")
    }

    pub fn node_output(&self, index: usize) -> Option<&Tensor<T>> {
        self.outputs.get(index)
    }
}

/// Parameter gradients in the graph's trainable-parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}

fn node_err(node: &str, err: impl std::fmt::Display) -> Error {
    Error::Graph {
        node: node.to_string(),
        detail: err.to_string(),
    }
}

fn with_batch(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

impl<T: Element> LayerGraph<T> {
    pub fn nodes(&self) -> &[LayerNode<T>] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode<T>> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].output_shape
    }

    /// Incremented whenever trainable parameters are handed out mutably.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.nodes.iter().filter(|n| n.layer.kind() == kind).count()
    }

    pub fn structure(&self) -> Vec<NodeSummary> {
        self.nodes
            .iter()
            .map(|n| NodeSummary {
                id: n.id.clone(),
                kind: n.layer.kind(),
                inputs: n.inputs.iter().map(|&i| self.nodes[i].id.clone()).collect(),
                output_shape: n.output_shape.clone(),
            })
            .collect()
    }

    /// Trainable parameters as `(node.param, tensor)` in a fixed order.
    pub fn trainable(&self) -> Vec<(String, &Tensor<T>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.layer
                    .trainable()
                    .into_iter()
                    .map(move |(p, t)| (format!("{}.{p}", n.id), t))
            })
            .collect()
    }

    /// Mutable trainable parameters in [`LayerGraph::trainable`] order.
    /// Invalidates any outstanding tape.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.version += 1;
        self.nodes
            .iter_mut()
            .flat_map(|n| n.layer.trainable_mut())
            .collect()
    }

    /// All persistent tensors, trainable or not (batch-norm moving stats).
    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.layer
                    .state()
                    .into_iter()
                    .map(move |(p, t)| (format!("{}.{p}", n.id), t))
            })
            .collect()
    }

    /// Replaces every persistent tensor. Names and shapes must match
    /// [`LayerGraph::state`] exactly.
    pub fn load_state(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let expected = self.state().len();
        if tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let mut source = tensors.iter();
        for node in &mut self.nodes {
            let id = node.id.clone();
            for (param, slot) in node.layer.state_mut() {
                let (name, t) = source.next().expect("length checked above");
                let want = format!("{id}.{param}");
                if *name != want {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` found where `{want}` was expected"
                    )));
                }
                if t.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` has shape {:?}, graph expects {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t.clone();
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    fn run(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        seed: u64,
    ) -> Result<(GradTape<T>, Vec<(usize, BatchStats)>)> {
        let input = &self.nodes[0];
        if batch.rank() != input.output_shape.len() + 1 || batch.shape()[1..] != input.output_shape {
            return Err(node_err(
                &input.id,
                format!(
                    "batch shape {:?} does not match (B, {:?})",
                    batch.shape(),
                    input.output_shape
                ),
            ));
        }
        let b = batch.shape()[0];
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        let mut stats = Vec::new();
        outputs.push(batch.clone());
        aux.push(Aux::None);

        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let x = &outputs[node.inputs[0]];
            let fail = |e: Error| node_err(&node.id, e);
            let (out, extra) = match &node.layer {
                Layer::Input => return Err(node_err(&node.id, "second input node")),
                Layer::Conv2D(c) => (conv2d(x, &c.kernels, &c.bias, &c.spec).map_err(fail)?, Aux::None),
                Layer::BatchNorm(state) => match mode {
                    Mode::Train => {
                        let (y, cache, s) = layers::batchnorm_train(x, state).map_err(fail)?;
                        stats.push((i, s));
                        (y, Aux::Norm(cache))
                    }
                    Mode::Infer => (layers::batchnorm_infer(x, state).map_err(fail)?, Aux::None),
                },
                Layer::Activation(kind) => (activation(x, *kind), Aux::None),
                Layer::MaxPool2 => {
                    let (y, arg) = maxpool2_with_indices(x).map_err(fail)?;
                    (y, Aux::Pool(arg))
                }
                Layer::Dense(d) => (d.forward(x).map_err(fail)?, Aux::None),
                Layer::Dropout { rate } => {
                    if mode == Mode::Train && *rate > 0.0 {
                        let mut rng: ChaCha8Rng = seed::rng(seed, &[i as u64]);
                        let mask = layers::dropout_mask::<T, _>(x.len(), *rate, &mut rng);
                        let y = Tensor::from_parts(
                            x.shape().to_vec(),
                            x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
                        );
                        (y, Aux::Mask(mask))
                    } else {
                        (x.clone(), Aux::None)
                    }
                }
                Layer::Flatten => (
                    x.clone().reshape(with_batch(b, &node.output_shape)).map_err(fail)?,
                    Aux::None,
                ),
                Layer::AddMerge => (
                    tensor::add(x, &outputs[node.inputs[1]]).map_err(fail)?,
                    Aux::None,
                ),
            };
            outputs.push(out);
            aux.push(extra);
        }
        Ok((
            GradTape {
                mode,
                version: self.version,
                outputs,
                aux,
            },
            stats,
        ))
    }

    /// Runs the graph on a `(B, ...)` batch. Train mode uses mini-batch
    /// statistics (and folds them into the moving averages) and samples
    /// dropout masks from `seed`; infer mode is deterministic.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode, seed: u64) -> Result<(Tensor<T>, GradTape<T>)> {
        let (tape, stats) = self.run(batch, mode, seed)?;
        for (i, s) in stats {
            if let Layer::BatchNorm(state) = &mut self.nodes[i].layer {
                state.apply_batch_stats(&s);
            }
        }
        Ok((tape.output().clone(), tape))
    }

    /// Infer-mode forward pass returning only the `(B, 1)` output.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let (tape, _) = self.run(batch, Mode::Infer, 0)?;
        Ok(tape.output().clone())
    }

    /// Infer-mode output of one named node for the whole batch.
    pub fn node_output(&self, batch: &Tensor<T>, id: &str) -> Result<Tensor<T>> {
        let idx = self
            .node_index(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        let (mut tape, _) = self.run(batch, Mode::Infer, 0)?;
        Ok(tape.outputs.swap_remove(idx))
    }

    /// Gradients of the loss with respect to every trainable parameter,
    /// given `loss_grad = dL/d(output)` for a train-mode tape.
    pub fn backward(&self, tape: &GradTape<T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        self.backprop(tape, loss_grad, false).map(|(g, _)| g)
    }

    /// As [`LayerGraph::backward`], additionally returning `dL/d(output)`
    /// of every node, indexed like [`LayerGraph::nodes`].
    pub fn backward_retain(
        &self,
        tape: &GradTape<T>,
        loss_grad: &Tensor<T>,
    ) -> Result<(Gradients<T>, Vec<Option<Tensor<T>>>)> {
        self.backprop(tape, loss_grad, true)
    }

    fn backprop(
        &self,
        tape: &GradTape<T>,
        loss_grad: &Tensor<T>,
        retain: bool,
    ) -> Result<(Gradients<T>, Vec<Option<Tensor<T>>>)> {
        if tape.version != self.version {
            return Err(Error::StaleTape {
                tape: tape.version,
                graph: self.version,
            });
        }
        if tape.mode != Mode::Train {
            return Err(Error::InvalidArgument(
                "backward needs a train-mode tape".into(),
            ));
        }
        if loss_grad.shape() != tape.output().shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss gradient {:?} vs output {:?}",
                    loss_grad.shape(),
                    tape.output().shape()
                ),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut retained: Vec<Option<Tensor<T>>> = vec![None; if retain { n } else { 0 }];
        let mut param_grads: Vec<Option<(Tensor<T>, Tensor<T>)>> = vec![None; n];
        grads[n - 1] = Some(loss_grad.clone());

        fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
            *slot = Some(match slot.take() {
                Some(prev) => tensor::add(&prev, &g)?,
                None => g,
            });
            Ok(())
        }

        for i in (1..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let fail = |e: Error| node_err(&node.id, e);
            let src = node.inputs[0];
            let x = &tape.outputs[src];
            let feeds_input = src == 0;
            match (&node.layer, &tape.aux[i]) {
                (Layer::Conv2D(c), _) => {
                    let cg = conv2d_backward(x, &c.kernels, &g, &c.spec, retain || !feeds_input)
                        .map_err(fail)?;
                    param_grads[i] = Some((cg.kernels, cg.bias));
                    if let Some(dx) = cg.input {
                        accumulate(&mut grads[src], dx)?;
                    }
                }
                (Layer::BatchNorm(state), Aux::Norm(cache)) => {
                    let (dx, dgamma, dbeta) = layers::batchnorm_backward(&g, cache, &state.gamma);
                    param_grads[i] = Some((dgamma, dbeta));
                    accumulate(&mut grads[src], dx)?;
                }
                (Layer::Activation(kind), _) => {
                    let dx = layers::activation_backward(&tape.outputs[i], &g, *kind).map_err(fail)?;
                    accumulate(&mut grads[src], dx)?;
                }
                (Layer::MaxPool2, Aux::Pool(arg)) => {
                    let dx = maxpool2_backward(x.shape(), arg, &g).map_err(fail)?;
                    accumulate(&mut grads[src], dx)?;
                }
                (Layer::Dense(d), _) => {
                    let (dx, dw, db) = d.backward(x, &g);
                    param_grads[i] = Some((dw, db));
                    accumulate(&mut grads[src], dx)?;
                }
                (Layer::Dropout { .. }, Aux::Mask(mask)) => {
                    let dx = Tensor::from_parts(
                        g.shape().to_vec(),
                        g.data().iter().zip(mask).map(|(&v, &m)| v * m).collect(),
                    );
                    accumulate(&mut grads[src], dx)?;
                }
                (Layer::Dropout { .. }, Aux::None) => accumulate(&mut grads[src], g.clone())?,
                (Layer::Flatten, _) => {
                    let dx = g.clone().reshape(x.shape().to_vec()).map_err(fail)?;
                    accumulate(&mut grads[src], dx)?;
                }
                (Layer::AddMerge, _) => {
                    accumulate(&mut grads[node.inputs[1]], g.clone())?;
                    accumulate(&mut grads[src], g.clone())?;
                }
                (layer, _) => {
                    return Err(node_err(
                        &node.id,
                        format!("tape has no cached state for {}", layer.kind().name()),
                    ))
                }
            }
            if retain {
                retained[i] = Some(g);
            }
        }
        if retain {
            retained[0] = grads[0].take();
        }

        let mut entries = Vec::new();
        for (node, pg) in self.nodes.iter().zip(param_grads) {
            let params = node.layer.trainable();
            if params.is_empty() {
                continue;
            }
            let (ga, gb) = match pg {
                Some(pair) => pair,
                // node does not influence the output
                None => (
                    Tensor::zeros(params[0].1.shape().to_vec())?,
                    Tensor::zeros(params[1].1.shape().to_vec())?,
                ),
            };
            entries.push((format!("{}.{}", node.id, params[0].0), ga));
            entries.push((format!("{}.{}", node.id, params[1].0), gb));
        }
        Ok((Gradients { entries }, retained))
    }
}

/// Handle to a node under construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef(usize);

/// Incremental graph construction with eager shape propagation.
///
/// Weights are He-uniform (limit `sqrt(6 / fan_in)`), biases zero, batch
/// norm starts at `gamma = 1, beta = 0`. Draws are taken in f64 in node
/// order so that an f32 and an f64 graph built from the same seed hold the
/// same weights up to rounding.
pub struct GraphBuilder<T = f32> {
    nodes: Vec<LayerNode<T>>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl<T: Element> GraphBuilder<T> {
    pub fn new(input_shape: &[usize], seed: u64) -> Result<(Self, NodeRef)> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(node_err("input", format!("invalid input shape {input_shape:?}")));
        }
        let mut b = Self {
            nodes: Vec::new(),
            index: HashMap::new(),
            rng: seed::rng(seed, &[0x1417]),
        };
        let r = b.push("input", Layer::Input, vec![], input_shape.to_vec())?;
        Ok((b, r))
    }

    pub fn shape(&self, r: NodeRef) -> &[usize] {
        &self.nodes[r.0].output_shape
    }

    fn push(&mut self, id: &str, layer: Layer<T>, inputs: Vec<usize>, shape: Vec<usize>) -> Result<NodeRef> {
        if self.index.contains_key(id) {
            return Err(node_err(id, "duplicate node id"));
        }
        let i = self.nodes.len();
        self.index.insert(id.to_string(), i);
        self.nodes.push(LayerNode {
            id: id.to_string(),
            layer,
            inputs,
            output_shape: shape,
        });
        Ok(NodeRef(i))
    }

    fn he_uniform(&mut self, shape: Vec<usize>, fan_in: usize) -> Result<Tensor<T>> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::of(rng.random_range(-limit..limit)))
    }

    /// Stride-1 "same" convolution with `filters` output channels.
    pub fn conv(&mut self, id: &str, from: NodeRef, filters: usize, kernel_size: usize) -> Result<NodeRef> {
        let [h, w, c] = *self.shape(from) else {
            return Err(node_err(id, format!("conv needs (H, W, C) input, got {:?}", self.shape(from))));
        };
        let spec = ConvSpec::same(kernel_size, c, filters);
        let g = spec.geometry(h, w).map_err(|e| node_err(id, e))?;
        let kernels = self.he_uniform(vec![kernel_size, kernel_size, c, filters], kernel_size * kernel_size * c)?;
        let bias = Tensor::zeros([filters])?;
        self.push(
            id,
            Layer::Conv2D(Conv2dLayer { spec, kernels, bias }),
            vec![from.0],
            vec![g.out_h, g.out_w, filters],
        )
    }

    pub fn batch_norm(&mut self, id: &str, from: NodeRef, epsilon: f64, momentum: f64) -> Result<NodeRef> {
        let shape = self.shape(from).to_vec();
        let c = *shape.last().expect("shapes are non-empty");
        let state = BatchNormState::new(c, epsilon, momentum).map_err(|e| node_err(id, e))?;
        self.push(id, Layer::BatchNorm(state), vec![from.0], shape)
    }

    pub fn relu(&mut self, id: &str, from: NodeRef) -> Result<NodeRef> {
        let shape = self.shape(from).to_vec();
        self.push(id, Layer::Activation(ActivationKind::Relu), vec![from.0], shape)
    }

    pub fn sigmoid(&mut self, id: &str, from: NodeRef) -> Result<NodeRef> {
        let shape = self.shape(from).to_vec();
        self.push(id, Layer::Activation(ActivationKind::Sigmoid), vec![from.0], shape)
    }

    pub fn maxpool(&mut self, id: &str, from: NodeRef) -> Result<NodeRef> {
        let shape = self.shape(from).to_vec();
        match shape[..] {
            [h, w, c] if h % 2 == 0 && w % 2 == 0 => {
                self.push(id, Layer::MaxPool2, vec![from.0], vec![h / 2, w / 2, c])
            }
            _ => Err(node_err(id, format!("cannot 2x2-pool shape {shape:?}"))),
        }
    }

    pub fn flatten(&mut self, id: &str, from: NodeRef) -> Result<NodeRef> {
        let n = self.shape(from).iter().product();
        self.push(id, Layer::Flatten, vec![from.0], vec![n])
    }

    pub fn dense(&mut self, id: &str, from: NodeRef, units: usize) -> Result<NodeRef> {
        let [n_in] = *self.shape(from) else {
            return Err(node_err(id, format!("dense needs a flat input, got {:?}", self.shape(from))));
        };
        if units == 0 {
            return Err(node_err(id, "dense layer needs at least one unit"));
        }
        let weight = self.he_uniform(vec![n_in, units], n_in)?;
        let bias = Tensor::zeros([units])?;
        self.push(id, Layer::Dense(DenseLayer { weight, bias }), vec![from.0], vec![units])
    }

    pub fn dropout(&mut self, id: &str, from: NodeRef, rate: f64) -> Result<NodeRef> {
        layers::check_dropout_rate(rate).map_err(|e| node_err(id, e))?;
        let shape = self.shape(from).to_vec();
        self.push(id, Layer::Dropout { rate }, vec![from.0], shape)
    }

    pub fn add(&mut self, id: &str, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(node_err(
                id,
                format!("add-merge operands differ: {sa:?} vs {sb:?}"),
            ));
        }
        if a == b {
            return Err(node_err(id, "add-merge needs two distinct upstream nodes"));
        }
        self.push(id, Layer::AddMerge, vec![a.0, b.0], sa)
    }

    /// Seals the graph. `output` must be the most recently added node and
    /// produce one value per sample; every other node must feed something.
    pub fn finish(self, output: NodeRef) -> Result<LayerGraph<T>> {
        let last = self.nodes.len() - 1;
        let out_node = &self.nodes[output.0];
        if output.0 != last {
            return Err(node_err(&out_node.id, "output must be the last node added"));
        }
        if out_node.output_shape != [1] {
            return Err(node_err(
                &out_node.id,
                format!("terminal node must yield one value per sample, got {:?}", out_node.output_shape),
            ));
        }
        let mut consumed = vec![false; self.nodes.len()];
        for n in &self.nodes {
            for &i in &n.inputs {
                consumed[i] = true;
            }
        }
        if let Some(i) = (0..last).find(|&i| !consumed[i]) {
            return Err(node_err(&self.nodes[i].id, "dangling node: output is never used"));
        }
        Ok(LayerGraph {
            nodes: self.nodes,
            index: self.index,
            version: 0,
        })
    }
}

#[cfg(test)]
mod tests;
