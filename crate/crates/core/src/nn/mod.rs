//! Minimal neural substrate: dense, 1-D convolution, and GRU layers wired
//! into a static feed-forward graph with exact analytic gradients.
//!
//! Networks are built once through [`NetworkBuilder`] and never change shape
//! afterwards. Nodes reference only earlier nodes, so evaluation in
//! construction order is a topological sweep and reverse order is a valid
//! backpropagation schedule. Everything is `f64` and batch size is one; the
//! sizes involved make verifiability worth more than throughput.

mod checkpoint;
mod gru;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor, FORMAT_VERSION};
pub use tensor::{Param, ParamId, ParamSet, Tensor};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer `{layer}`: expected input shape {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },
    #[error("layer `{layer}`: {reason}")]
    BadSpec { layer: String, reason: String },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint has no tensor named `{0}`")]
    MissingParam(String),
    #[error("checkpoint format version {got} unsupported (expected {expected})")]
    Version { got: u32, expected: u32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum LayerSpec {
    /// External input, bound to `inputs[slot]` at evaluation time.
    Input { slot: usize },
    /// `y = act(W x + b)`; params `[weight [out, in], bias [out]]`.
    Dense { activation: Activation },
    /// Valid (unpadded) 1-D convolution over `[channels, len]`; params
    /// `[weight [filters, channels, kernel], bias [filters]]`.
    Conv1d {
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    /// Gated recurrent unit over `[len, features]`, emitting all states.
    Gru { units: usize },
    /// Final row of a `[len, d]` sequence.
    LastRow,
    /// Row-major flatten to 1-D.
    Flatten,
    /// Concatenation of 1-D inputs.
    Concat,
}

#[derive(Debug, Clone)]
struct Node {
    name: String,
    spec: LayerSpec,
    inputs: Vec<NodeId>,
    params: Vec<ParamId>,
    out_shape: Vec<usize>,
}

/// A static feed-forward graph plus its parameters.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    pub params: ParamSet,
    input_shapes: Vec<Vec<usize>>,
    output: NodeId,
}

/// All intermediate tensors of one forward pass.
#[derive(Debug)]
pub struct Activations {
    values: Vec<Tensor>,
    gru: Vec<Option<gru::GruCache>>,
}

impl Activations {
    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.values[node.0]
    }
}

pub struct NetworkBuilder {
    nodes: Vec<Node>,
    params: ParamSet,
    input_shapes: Vec<Vec<usize>>,
    init: rand_chacha::ChaCha8Rng,
}

impl NetworkBuilder {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        let mut init = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rand_chacha::rand_core::RngCore::next_u64(&mut init); // decouple from raw seed
        NetworkBuilder {
            nodes: Vec::new(),
            params: ParamSet::new(),
            input_shapes: Vec::new(),
            init,
        }
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].out_shape
    }

    /// Output shape of an already-added node.
    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.shape_of(id)
    }

    /// Uniform init scaled by fan-in.
    fn init_tensor(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        use rand::Rng;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len)
            .map(|_| self.init.random_range(-bound..bound))
            .collect();
        Tensor::from_vec(shape, data).expect("sized by construction")
    }

    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        let slot = self.input_shapes.len();
        self.input_shapes.push(shape.to_vec());
        self.push(Node {
            name: format!("input{slot}"),
            spec: LayerSpec::Input { slot },
            inputs: Vec::new(),
            params: Vec::new(),
            out_shape: shape.to_vec(),
        })
    }

    pub fn dense(
        &mut self,
        name: &str,
        input: NodeId,
        units: usize,
        activation: Activation,
    ) -> Result<NodeId, NnError> {
        let in_shape = self.shape_of(input).to_vec();
        if in_shape.len() != 1 {
            return Err(NnError::ShapeMismatch {
                layer: name.into(),
                expected: "[in]".into(),
                got: format!("{in_shape:?}"),
            });
        }
        if units == 0 {
            return Err(NnError::BadSpec {
                layer: name.into(),
                reason: "units must be positive".into(),
            });
        }
        let fan_in = in_shape[0];
        let weight = self.init_tensor(&[units, fan_in], fan_in);
        let w = self.params.add(&format!("{name}.weight"), weight)?;
        let b = self
            .params
            .add(&format!("{name}.bias"), Tensor::zeros(&[units]))?;
        Ok(self.push(Node {
            name: name.into(),
            spec: LayerSpec::Dense { activation },
            inputs: vec![input],
            params: vec![w, b],
            out_shape: vec![units],
        }))
    }

    pub fn conv1d(
        &mut self,
        name: &str,
        input: NodeId,
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    ) -> Result<NodeId, NnError> {
        let in_shape = self.shape_of(input).to_vec();
        if in_shape.len() != 2 {
            return Err(NnError::ShapeMismatch {
                layer: name.into(),
                expected: "[channels, len]".into(),
                got: format!("{in_shape:?}"),
            });
        }
        let (channels, len) = (in_shape[0], in_shape[1]);
        if filters == 0 || kernel == 0 || stride == 0 {
            return Err(NnError::BadSpec {
                layer: name.into(),
                reason: "filters, kernel and stride must be positive".into(),
            });
        }
        if kernel > len {
            return Err(NnError::BadSpec {
                layer: name.into(),
                reason: format!("kernel {kernel} exceeds input length {len}"),
            });
        }
        let out_len = (len - kernel) / stride + 1;
        let fan_in = channels * kernel;
        let weight = self.init_tensor(&[filters, channels, kernel], fan_in);
        let w = self.params.add(&format!("{name}.weight"), weight)?;
        let b = self
            .params
            .add(&format!("{name}.bias"), Tensor::zeros(&[filters]))?;
        Ok(self.push(Node {
            name: name.into(),
            spec: LayerSpec::Conv1d {
                kernel,
                stride,
                activation,
            },
            inputs: vec![input],
            params: vec![w, b],
            out_shape: vec![filters, out_len],
        }))
    }

    pub fn gru(&mut self, name: &str, input: NodeId, units: usize) -> Result<NodeId, NnError> {
        let in_shape = self.shape_of(input).to_vec();
        if in_shape.len() != 2 {
            return Err(NnError::ShapeMismatch {
                layer: name.into(),
                expected: "[len, features]".into(),
                got: format!("{in_shape:?}"),
            });
        }
        if units == 0 {
            return Err(NnError::BadSpec {
                layer: name.into(),
                reason: "units must be positive".into(),
            });
        }
        let (len, feat) = (in_shape[0], in_shape[1]);
        let mut params = Vec::new();
        for gate in ["z", "r", "n"] {
            let w = self.init_tensor(&[units, feat], feat);
            params.push(self.params.add(&format!("{name}.w{gate}"), w)?);
            let u = self.init_tensor(&[units, units], units);
            params.push(self.params.add(&format!("{name}.u{gate}"), u)?);
            params.push(
                self.params
                    .add(&format!("{name}.b{gate}"), Tensor::zeros(&[units]))?,
            );
        }
        Ok(self.push(Node {
            name: name.into(),
            spec: LayerSpec::Gru { units },
            inputs: vec![input],
            params,
            out_shape: vec![len, units],
        }))
    }

    pub fn last_row(&mut self, name: &str, input: NodeId) -> Result<NodeId, NnError> {
        let in_shape = self.shape_of(input).to_vec();
        if in_shape.len() != 2 {
            return Err(NnError::ShapeMismatch {
                layer: name.into(),
                expected: "[len, d]".into(),
                got: format!("{in_shape:?}"),
            });
        }
        let d = in_shape[1];
        Ok(self.push(Node {
            name: name.into(),
            spec: LayerSpec::LastRow,
            inputs: vec![input],
            params: Vec::new(),
            out_shape: vec![d],
        }))
    }

    pub fn flatten(&mut self, name: &str, input: NodeId) -> NodeId {
        let n: usize = self.shape_of(input).iter().product();
        self.push(Node {
            name: name.into(),
            spec: LayerSpec::Flatten,
            inputs: vec![input],
            params: Vec::new(),
            out_shape: vec![n],
        })
    }

    pub fn concat(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId, NnError> {
        let mut total = 0;
        for &id in inputs {
            let s = self.shape_of(id);
            if s.len() != 1 {
                return Err(NnError::ShapeMismatch {
                    layer: name.into(),
                    expected: "[n] (1-D inputs only)".into(),
                    got: format!("{s:?}"),
                });
            }
            total += s[0];
        }
        Ok(self.push(Node {
            name: name.into(),
            spec: LayerSpec::Concat,
            inputs: inputs.to_vec(),
            params: Vec::new(),
            out_shape: vec![total],
        }))
    }

    pub fn finish(self, output: NodeId) -> Network {
        Network {
            nodes: self.nodes,
            params: self.params,
            input_shapes: self.input_shapes,
            output,
        }
    }
}

impl Network {
    pub fn output_node(&self) -> NodeId {
        self.output
    }

    pub fn input_shapes(&self) -> &[Vec<usize>] {
        &self.input_shapes
    }

    pub fn forward(&self, inputs: &[Tensor]) -> Result<Activations, NnError> {
        if inputs.len() != self.input_shapes.len() {
            return Err(NnError::BadSpec {
                layer: "forward".into(),
                reason: format!(
                    "expected {} inputs, got {}",
                    self.input_shapes.len(),
                    inputs.len()
                ),
            });
        }
        for (i, (t, s)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(NnError::ShapeMismatch {
                    layer: format!("input{i}"),
                    expected: format!("{s:?}"),
                    got: format!("{:?}", t.shape()),
                });
            }
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut gru_caches: Vec<Option<gru::GruCache>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut cache = None;
            let value = match &node.spec {
                LayerSpec::Input { slot } => inputs[*slot].clone(),
                LayerSpec::Dense { activation } => {
                    let x = &values[node.inputs[0].0];
                    let w = &self.params.get(node.params[0]).value;
                    let b = &self.params.get(node.params[1]).value;
                    let (units, fan_in) = (w.shape()[0], w.shape()[1]);
                    let mut out = b.data().to_vec();
                    let wd = w.data();
                    let xd = x.data();
                    for o in 0..units {
                        let row = &wd[o * fan_in..(o + 1) * fan_in];
                        let mut acc = 0.0;
                        for (wv, xv) in row.iter().zip(xd) {
                            acc += wv * xv;
                        }
                        out[o] = activation.apply(out[o] + acc);
                    }
                    Tensor::vector(out)
                }
                LayerSpec::Conv1d {
                    kernel,
                    stride,
                    activation,
                } => {
                    let x = &values[node.inputs[0].0];
                    let w = &self.params.get(node.params[0]).value;
                    let b = &self.params.get(node.params[1]).value;
                    let (channels, len) = (x.shape()[0], x.shape()[1]);
                    let filters = w.shape()[0];
                    let out_len = (len - kernel) / stride + 1;
                    let mut out = Tensor::zeros(&[filters, out_len]);
                    let wd = w.data();
                    let xd = x.data();
                    for f in 0..filters {
                        for j in 0..out_len {
                            let mut acc = b.data()[f];
                            for c in 0..channels {
                                let wrow = &wd[(f * channels + c) * kernel..];
                                let xrow = &xd[c * len + j * stride..];
                                for t in 0..*kernel {
                                    acc += wrow[t] * xrow[t];
                                }
                            }
                            out.data_mut()[f * out_len + j] = activation.apply(acc);
                        }
                    }
                    out
                }
                LayerSpec::Gru { units } => {
                    let x = &values[node.inputs[0].0];
                    let p = self.gru_params(node);
                    let (hs, c) = gru::forward(x, &p, *units);
                    cache = Some(c);
                    hs
                }
                LayerSpec::LastRow => {
                    let x = &values[node.inputs[0].0];
                    let len = x.shape()[0];
                    Tensor::vector(x.row(len - 1).to_vec())
                }
                LayerSpec::Flatten => {
                    let x = &values[node.inputs[0].0];
                    Tensor::vector(x.data().to_vec())
                }
                LayerSpec::Concat => {
                    let mut data = Vec::new();
                    for &id in &node.inputs {
                        data.extend_from_slice(values[id.0].data());
                    }
                    Tensor::vector(data)
                }
            };
            debug_assert_eq!(value.shape(), node.out_shape.as_slice(), "{}", node.name);
            values.push(value);
            gru_caches.push(cache);
        }
        Ok(Activations {
            values,
            gru: gru_caches,
        })
    }

    pub fn output<'a>(&self, acts: &'a Activations) -> &'a Tensor {
        &acts.values[self.output.0]
    }

    fn gru_params<'a>(&'a self, node: &Node) -> gru::GruParams<'a> {
        let p = |i: usize| self.params.get(node.params[i]).value.data();
        gru::GruParams {
            wz: p(0),
            uz: p(1),
            bz: p(2),
            wr: p(3),
            ur: p(4),
            br: p(5),
            wn: p(6),
            un: p(7),
            bn: p(8),
        }
    }

    /// Gradients for every parameter tensor given the gradient of a scalar
    /// loss with respect to the network output. Activations must come from a
    /// matching `forward` call. Frozen tensors get zero gradients.
    pub fn backward(
        &self,
        acts: &Activations,
        grad_output: &Tensor,
    ) -> Result<Vec<Tensor>, NnError> {
        let out_shape = &self.nodes[self.output.0].out_shape;
        if grad_output.shape() != out_shape.as_slice() {
            return Err(NnError::ShapeMismatch {
                layer: "output gradient".into(),
                expected: format!("{out_shape:?}"),
                got: format!("{:?}", grad_output.shape()),
            });
        }
        if acts.values.len() != self.nodes.len() {
            return Err(NnError::BadSpec {
                layer: "backward".into(),
                reason: "activations do not match this network".into(),
            });
        }
        let mut param_grads = self.params.zero_grads();
        let mut node_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        node_grads[self.output.0] = Some(grad_output.clone());

        for (idx, node) in self.nodes.iter().enumerate().rev() {
            let Some(grad) = node_grads[idx].take() else {
                continue;
            };
            match &node.spec {
                LayerSpec::Input { .. } => {}
                LayerSpec::Dense { activation } => {
                    let x = &acts.values[node.inputs[0].0];
                    let y = &acts.values[idx];
                    let w = &self.params.get(node.params[0]).value;
                    let (units, fan_in) = (w.shape()[0], w.shape()[1]);
                    let mut gz = vec![0.0; units];
                    for o in 0..units {
                        gz[o] = grad.data()[o] * activation.derivative_from_output(y.data()[o]);
                    }
                    {
                        let gw = param_grads[node.params[0].0].data_mut();
                        for o in 0..units {
                            let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                            for (g, xv) in row.iter_mut().zip(x.data()) {
                                *g += gz[o] * xv;
                            }
                        }
                        let gb = param_grads[node.params[1].0].data_mut();
                        for (g, gzo) in gb.iter_mut().zip(&gz) {
                            *g += gzo;
                        }
                    }
                    let mut gx = Tensor::zeros(x.shape());
                    {
                        let gxd = gx.data_mut();
                        let wd = w.data();
                        for o in 0..units {
                            let row = &wd[o * fan_in..(o + 1) * fan_in];
                            for (g, wv) in gxd.iter_mut().zip(row) {
                                *g += gz[o] * wv;
                            }
                        }
                    }
                    accumulate(&mut node_grads[node.inputs[0].0], gx);
                }
                LayerSpec::Conv1d {
                    kernel,
                    stride,
                    activation,
                } => {
                    let x = &acts.values[node.inputs[0].0];
                    let y = &acts.values[idx];
                    let w = &self.params.get(node.params[0]).value;
                    let (channels, len) = (x.shape()[0], x.shape()[1]);
                    let filters = w.shape()[0];
                    let out_len = y.shape()[1];
                    let mut gx = Tensor::zeros(x.shape());
                    for f in 0..filters {
                        for j in 0..out_len {
                            let gy = grad.data()[f * out_len + j]
                                * activation.derivative_from_output(y.data()[f * out_len + j]);
                            if gy == 0.0 {
                                continue;
                            }
                            param_grads[node.params[1].0].data_mut()[f] += gy;
                            for c in 0..channels {
                                let base_w = (f * channels + c) * kernel;
                                let base_x = c * len + j * stride;
                                for t in 0..*kernel {
                                    param_grads[node.params[0].0].data_mut()[base_w + t] +=
                                        gy * x.data()[base_x + t];
                                    gx.data_mut()[base_x + t] += gy * w.data()[base_w + t];
                                }
                            }
                        }
                    }
                    accumulate(&mut node_grads[node.inputs[0].0], gx);
                }
                LayerSpec::Gru { units } => {
                    let x = &acts.values[node.inputs[0].0];
                    let hs = &acts.values[idx];
                    let cache = acts.gru[idx].as_ref().expect("gru cache");
                    let p = self.gru_params(node);
                    // Split mutable borrows: take the nine grad tensors out.
                    let ids: Vec<usize> = node.params.iter().map(|p| p.0).collect();
                    let mut taken: Vec<Tensor> = ids
                        .iter()
                        .map(|&i| std::mem::replace(&mut param_grads[i], Tensor::zeros(&[0])))
                        .collect();
                    let gx = {
                        let mut it = taken.iter_mut();
                        let (wz, uz, bz) = (
                            it.next().unwrap(),
                            it.next().unwrap(),
                            it.next().unwrap(),
                        );
                        let (wr, ur, br) = (
                            it.next().unwrap(),
                            it.next().unwrap(),
                            it.next().unwrap(),
                        );
                        let (wn, un, bn) = (
                            it.next().unwrap(),
                            it.next().unwrap(),
                            it.next().unwrap(),
                        );
                        let mut grads = gru::GruGrads {
                            wz: wz.data_mut(),
                            uz: uz.data_mut(),
                            bz: bz.data_mut(),
                            wr: wr.data_mut(),
                            ur: ur.data_mut(),
                            br: br.data_mut(),
                            wn: wn.data_mut(),
                            un: un.data_mut(),
                            bn: bn.data_mut(),
                        };
                        gru::backward(x, hs, cache, &p, &mut grads, &grad, *units)
                    };
                    for (i, t) in ids.into_iter().zip(taken) {
                        param_grads[i] = t;
                    }
                    accumulate(&mut node_grads[node.inputs[0].0], gx);
                }
                LayerSpec::LastRow => {
                    let x = &acts.values[node.inputs[0].0];
                    let mut gx = Tensor::zeros(x.shape());
                    let len = x.shape()[0];
                    gx.row_mut(len - 1).copy_from_slice(grad.data());
                    accumulate(&mut node_grads[node.inputs[0].0], gx);
                }
                LayerSpec::Flatten => {
                    let x = &acts.values[node.inputs[0].0];
                    let gx = grad.reshaped(x.shape())?;
                    accumulate(&mut node_grads[node.inputs[0].0], gx);
                }
                LayerSpec::Concat => {
                    let mut offset = 0;
                    for &id in &node.inputs {
                        let n = acts.values[id.0].len();
                        let piece =
                            Tensor::vector(grad.data()[offset..offset + n].to_vec());
                        accumulate(&mut node_grads[id.0], piece);
                        offset += n;
                    }
                }
            }
        }

        for (grad, param) in param_grads.iter_mut().zip(self.params.iter()) {
            if !param.trainable {
                *grad = Tensor::zeros(param.value.shape());
            }
        }
        Ok(param_grads)
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(grad.data()) {
                *a += b;
            }
        }
        None => *slot = Some(grad),
    }
}

/// One plain SGD step: `theta -= lr * grad` for every trainable tensor.
pub fn sgd_step(params: &mut ParamSet, grads: &[Tensor], learning_rate: f64) {
    debug_assert!(learning_rate > 0.0);
    for (param, grad) in params.iter_mut().zip(grads) {
        if !param.trainable {
            continue;
        }
        for (v, g) in param.value.data_mut().iter_mut().zip(grad.data()) {
            *v -= learning_rate * g;
        }
    }
}

/// A scalar loss over the network output, with its gradient.
pub trait Loss {
    fn value(&self, output: &Tensor) -> f64;
    fn grad(&self, output: &Tensor) -> Tensor;
}

/// `0.5 * sum((y - target)^2)`.
pub struct QuadraticLoss {
    pub target: Tensor,
}

impl Loss for QuadraticLoss {
    fn value(&self, output: &Tensor) -> f64 {
        output
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(y, t)| 0.5 * (y - t) * (y - t))
            .sum()
    }

    fn grad(&self, output: &Tensor) -> Tensor {
        let data = output
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(y, t)| y - t)
            .collect();
        Tensor::from_vec(output.shape(), data).expect("same shape")
    }
}

/// Compare analytic gradients against central finite differences.
///
/// Returns the worst relative discrepancy over every checked element,
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check(
    net: &mut Network,
    inputs: &[Tensor],
    loss: &dyn Loss,
    epsilon: f64,
) -> Result<f64, NnError> {
    gradient_check_sampled(net, inputs, loss, epsilon, usize::MAX, 0)
}

/// Like [`gradient_check`] but probing at most `max_per_tensor` elements of
/// each parameter tensor (deterministically sampled from `seed`).
pub fn gradient_check_sampled(
    net: &mut Network,
    inputs: &[Tensor],
    loss: &dyn Loss,
    epsilon: f64,
    max_per_tensor: usize,
    seed: u64,
) -> Result<f64, NnError> {
    assert!(epsilon > 0.0);
    let acts = net.forward(inputs)?;
    let grad_out = loss.grad(net.output(&acts));
    let analytic = net.backward(&acts, &grad_out)?;

    let mut worst = 0.0f64;
    let n_params = net.params.len();
    for p in 0..n_params {
        let len = net.params.get(ParamId(p)).value.len();
        let indices: Vec<usize> = if len <= max_per_tensor {
            (0..len).collect()
        } else {
            // Deterministic sample without replacement.
            let mut picked: Vec<usize> = Vec::with_capacity(max_per_tensor);
            let mut i = 0u64;
            while picked.len() < max_per_tensor {
                let cand = (crate::mix::hash3(seed, p as u64, i) % len as u64) as usize;
                if !picked.contains(&cand) {
                    picked.push(cand);
                }
                i += 1;
            }
            picked
        };
        for e in indices {
            let orig = net.params.get(ParamId(p)).value.data()[e];
            net.params.get_mut(ParamId(p)).value.data_mut()[e] = orig + epsilon;
            let up = loss.value(net.output(&net.forward(inputs)?));
            net.params.get_mut(ParamId(p)).value.data_mut()[e] = orig - epsilon;
            let down = loss.value(net.output(&net.forward(inputs)?));
            net.params.get_mut(ParamId(p)).value.data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[p].data()[e];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_param(net: &mut Network, name: &str, values: &[f64]) {
        let p = net.params.by_name_mut(name).unwrap();
        p.value.data_mut().copy_from_slice(values);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut b = NetworkBuilder::new(0);
        let x = b.input(&[3]);
        let d = b.dense("d", x, 3, Activation::Linear).unwrap();
        let mut net = b.finish(d);
        set_param(
            &mut net,
            "d.weight",
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let input = Tensor::vector(vec![0.5, -2.0, 3.25]);
        let acts = net.forward(&[input.clone()]).unwrap();
        assert_eq!(net.output(&acts), &input);
    }

    #[test]
    fn zero_params_emit_bias() {
        let mut b = NetworkBuilder::new(0);
        let x = b.input(&[4]);
        let d = b.dense("d", x, 2, Activation::Linear).unwrap();
        let mut net = b.finish(d);
        let w_len = net.params.by_name("d.weight").unwrap().value.len();
        set_param(&mut net, "d.weight", &vec![0.0; w_len]);
        set_param(&mut net, "d.bias", &[7.0, -1.0]);
        let acts = net.forward(&[Tensor::vector(vec![1.0, 2.0, 3.0, 4.0])]).unwrap();
        assert_eq!(net.output(&acts).data(), &[7.0, -1.0]);
    }

    #[test]
    fn conv_output_length_is_valid_padding() {
        let mut b = NetworkBuilder::new(1);
        let x = b.input(&[1, 8]);
        let c = b.conv1d("c", x, 5, 3, 1, Activation::Linear).unwrap();
        let net = b.finish(c);
        let acts = net.forward(&[Tensor::zeros(&[1, 8])]).unwrap();
        assert_eq!(net.output(&acts).shape(), &[5, 6]);
    }

    #[test]
    fn kernel_wider_than_input_is_rejected() {
        let mut b = NetworkBuilder::new(1);
        let x = b.input(&[1, 2]);
        let err = b.conv1d("c", x, 4, 3, 1, Activation::Relu).unwrap_err();
        assert!(matches!(err, NnError::BadSpec { .. }));
    }

    #[test]
    fn forward_is_deterministic_and_shape_checked() {
        let mut b = NetworkBuilder::new(9);
        let x = b.input(&[1, 8]);
        let c = b.conv1d("c", x, 4, 3, 1, Activation::Relu).unwrap();
        let f = b.flatten("f", c);
        let d = b.dense("d", f, 1, Activation::Linear).unwrap();
        let net = b.finish(d);
        let input = Tensor::from_vec(&[1, 8], (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        let a = net.forward(&[input.clone()]).unwrap();
        let b2 = net.forward(&[input]).unwrap();
        assert_eq!(net.output(&a), net.output(&b2));
        let err = net.forward(&[Tensor::zeros(&[2, 8])]).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradients() {
        let mut b = NetworkBuilder::new(3);
        let x = b.input(&[4]);
        let h = b.dense("h", x, 5, Activation::Relu).unwrap();
        let d = b.dense("d", h, 2, Activation::Linear).unwrap();
        let net = b.finish(d);
        let acts = net.forward(&[Tensor::vector(vec![1.0, -1.0, 0.5, 2.0])]).unwrap();
        let grads = net.backward(&acts, &Tensor::zeros(&[2])).unwrap();
        for g in grads {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_dense_gradient_is_outer_product() {
        let mut b = NetworkBuilder::new(4);
        let x = b.input(&[3]);
        let d = b.dense("d", x, 1, Activation::Linear).unwrap();
        let net = b.finish(d);
        let input = Tensor::vector(vec![2.0, -3.0, 0.5]);
        let acts = net.forward(&[input.clone()]).unwrap();
        let grads = net.backward(&acts, &Tensor::scalar(1.5)).unwrap();
        let gw = &grads[0];
        for (g, xv) in gw.data().iter().zip(input.data()) {
            assert!((g - 1.5 * xv).abs() < 1e-12);
        }
        assert_eq!(grads[1].data(), &[1.5]);
    }

    #[test]
    fn frozen_tensor_gets_zero_gradient_and_no_update() {
        let mut b = NetworkBuilder::new(5);
        let x = b.input(&[2]);
        let h = b.dense("h", x, 3, Activation::Relu).unwrap();
        let d = b.dense("d", h, 1, Activation::Linear).unwrap();
        let mut net = b.finish(d);
        net.params.by_name_mut("h.weight").unwrap().trainable = false;
        let before = net.params.by_name("h.weight").unwrap().value.clone();
        let acts = net.forward(&[Tensor::vector(vec![1.0, 2.0])]).unwrap();
        let grads = net.backward(&acts, &Tensor::scalar(1.0)).unwrap();
        let frozen_idx = 0; // h.weight added first
        assert!(grads[frozen_idx].data().iter().all(|&v| v == 0.0));
        sgd_step(&mut net.params, &grads, 0.1);
        assert_eq!(net.params.by_name("h.weight").unwrap().value, before);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut params = ParamSet::new();
        params.add("w", Tensor::vector(vec![1.0])).unwrap();
        let grads = vec![Tensor::vector(vec![2.0])];
        sgd_step(&mut params, &grads, 0.5);
        assert_eq!(params.by_name("w").unwrap().value.data(), &[0.0]);
        // Zero gradient leaves parameters alone.
        let grads = vec![Tensor::vector(vec![0.0])];
        sgd_step(&mut params, &grads, 0.5);
        assert_eq!(params.by_name("w").unwrap().value.data(), &[0.0]);
    }

    #[test]
    fn linear_network_gradcheck_is_tight() {
        let mut b = NetworkBuilder::new(6);
        let x = b.input(&[4]);
        let h = b.dense("h", x, 3, Activation::Linear).unwrap();
        let d = b.dense("d", h, 2, Activation::Linear).unwrap();
        let mut net = b.finish(d);
        let input = Tensor::vector(vec![0.3, -0.8, 1.2, 0.1]);
        let loss = QuadraticLoss {
            target: Tensor::vector(vec![0.5, -0.25]),
        };
        let err = gradient_check(&mut net, &[input], &loss, 1e-4).unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn every_layer_kind_gradchecks() {
        // conv -> flatten -> concat with dense path -> dense, plus GRU stack.
        let mut b = NetworkBuilder::new(7);
        let seq = b.input(&[2, 8]);
        let vec_in = b.input(&[3]);
        let ts = b.input(&[8, 2]);
        let c = b.conv1d("c", seq, 4, 3, 2, Activation::Relu).unwrap();
        let cf = b.flatten("cf", c);
        let dv = b.dense("dv", vec_in, 5, Activation::Relu).unwrap();
        let g1 = b.gru("g1", ts, 6).unwrap();
        let g2 = b.gru("g2", g1, 5).unwrap();
        let gl = b.last_row("gl", g2).unwrap();
        let cat = b.concat("cat", &[cf, dv, gl]).unwrap();
        let out = b.dense("out", cat, 2, Activation::Linear).unwrap();
        let mut net = b.finish(out);
        let inputs = vec![
            Tensor::from_vec(&[2, 8], (0..16).map(|i| ((i * 37 % 23) as f64 - 11.0) / 9.0).collect()).unwrap(),
            Tensor::vector(vec![0.4, -1.1, 0.7]),
            Tensor::from_vec(&[8, 2], (0..16).map(|i| ((i * 29 % 19) as f64 - 9.0) / 7.0).collect()).unwrap(),
        ];
        let loss = QuadraticLoss {
            target: Tensor::vector(vec![0.3, -0.6]),
        };
        let err = gradient_check(&mut net, &inputs, &loss, 1e-4).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gru_zero_input_follows_bias_recurrence() {
        let units = 4;
        let mut b = NetworkBuilder::new(8);
        let x = b.input(&[5, 3]);
        let g = b.gru("g", x, units).unwrap();
        let net = b.finish(g);
        let acts = net.forward(&[Tensor::zeros(&[5, 3])]).unwrap();
        let hs = net.output(&acts);

        // Independent scalar recurrence driven by biases only. With zero
        // input and zero initial state the weight matrices only act through
        // h_prev, so replay the same equations per unit.
        let bz = net.params.by_name("g.bz").unwrap().value.clone();
        let br = net.params.by_name("g.br").unwrap().value.clone();
        let bn = net.params.by_name("g.bn").unwrap().value.clone();
        let uz = net.params.by_name("g.uz").unwrap().value.clone();
        let ur = net.params.by_name("g.ur").unwrap().value.clone();
        let un = net.params.by_name("g.un").unwrap().value.clone();
        let mut h = vec![0.0f64; units];
        for t in 0..5 {
            let mut az = bz.data().to_vec();
            let mut ar = br.data().to_vec();
            for o in 0..units {
                for i in 0..units {
                    az[o] += uz.data()[o * units + i] * h[i];
                    ar[o] += ur.data()[o * units + i] * h[i];
                }
            }
            let z: Vec<f64> = az.iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect();
            let r: Vec<f64> = ar.iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect();
            let mut an = bn.data().to_vec();
            for o in 0..units {
                for i in 0..units {
                    an[o] += un.data()[o * units + i] * (r[i] * h[i]);
                }
            }
            let n: Vec<f64> = an.iter().map(|a| a.tanh()).collect();
            let next: Vec<f64> = (0..units)
                .map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i])
                .collect();
            for (a, b) in hs.row(t).iter().zip(&next) {
                assert!((a - b).abs() < 1e-12);
            }
            h = next;
        }
    }
}
