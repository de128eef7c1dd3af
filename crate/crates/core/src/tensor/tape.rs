use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::ops::{self, Activation, ConvSpec};
use super::{FeatureMap, Gradients, ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter handles of a convolution layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvParams {
    pub spec: ConvSpec,
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// Parameter handles of a dense layer; weight is `(outputs, inputs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub outputs: usize,
    pub activation: Activation,
}

enum Op {
    Input,
    Param(ParamId),
    Conv {
        input: NodeId,
        params: ConvParams,
        padded: Vec<f64>,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Combine(Vec<(NodeId, f64)>),
    Gather(Vec<(NodeId, usize)>),
    Dense {
        input: NodeId,
        params: DenseParams,
    },
    SoftmaxPool {
        input: NodeId,
        logits: ParamId,
        weights: Vec<f64>,
    },
    Mean(NodeId),
    WeightedSquaredError {
        input: NodeId,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: FeatureMap,
    op: Op,
}

/// Records layer-level operations against a borrowed [`ParameterStore`]
/// and replays their adjoints in reverse order.
///
/// A tape is single-threaded and single-use: record a forward pass, call
/// [`backward`](Tape::backward) on a scalar node, drop it.
pub struct Tape<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterStore {
        self.params
    }

    fn push(&mut self, value: FeatureMap, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &FeatureMap {
        &self.nodes[node.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, node: NodeId) -> Result<f64> {
        let v = self.value(node);
        if v.len() != 1 {
            return Err(Error::usage(format!(
                "node {} is {}x{}, not a scalar",
                node.0,
                v.channels(),
                v.length()
            )));
        }
        Ok(v.values()[0])
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: FeatureMap) -> NodeId {
        self.push(value, Op::Input)
    }

    /// A parameter entry viewed as a `channels`-row feature map.
    pub fn parameter(&mut self, id: ParamId, channels: usize) -> Result<NodeId> {
        let values = self.params.values(id).to_vec();
        if channels == 0 || values.len() % channels != 0 {
            return Err(Error::Shape {
                op: "parameter",
                detail: format!(
                    "`{}` has {} values, not divisible into {channels} channels",
                    self.params.entry(id).name,
                    values.len()
                ),
            });
        }
        let length = values.len() / channels;
        Ok(self.push(FeatureMap::from_raw(channels, length, values), Op::Param(id)))
    }

    pub fn conv1d(&mut self, input: NodeId, params: ConvParams) -> Result<NodeId> {
        let kernel = self.params.values(params.kernel);
        let bias = self.params.values(params.bias);
        let (value, padded) = ops::conv1d_forward(self.value(input), kernel, bias, &params.spec)?;
        Ok(self.push(
            value,
            Op::Conv {
                input,
                params,
                padded,
            },
        ))
    }

    pub fn maxpool1d(&mut self, input: NodeId, window: usize) -> Result<NodeId> {
        let (value, argmax) = ops::maxpool1d_forward(self.value(input), window)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    /// Element-wise `Σ coef·node` over same-shaped nodes.
    pub fn combine(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::usage("combine needs at least one term"));
        };
        let shape = self.value(first).shape();
        let mut out = vec![0.0; shape.0 * shape.1];
        for &(node, coef) in terms {
            let v = self.value(node);
            if v.shape() != shape {
                return Err(Error::Shape {
                    op: "combine",
                    detail: format!("{:?} vs {:?}", v.shape(), shape),
                });
            }
            for (o, x) in out.iter_mut().zip(v.values()) {
                *o += coef * x;
            }
        }
        Ok(self.push(
            FeatureMap::from_raw(shape.0, shape.1, out),
            Op::Combine(terms.to_vec()),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.combine(&[(a, 1.0), (b, 1.0)])
    }

    /// Picks flat elements from other nodes into a 1×n map.
    pub fn gather(&mut self, sources: &[(NodeId, usize)]) -> Result<NodeId> {
        if sources.is_empty() {
            return Err(Error::usage("gather needs at least one source"));
        }
        let mut out = Vec::with_capacity(sources.len());
        for &(node, idx) in sources {
            let v = self.value(node);
            if idx >= v.len() {
                return Err(Error::Shape {
                    op: "gather",
                    detail: format!("index {idx} out of range for node of {} values", v.len()),
                });
            }
            out.push(v.values()[idx]);
        }
        Ok(self.push(
            FeatureMap::from_raw(1, out.len(), out),
            Op::Gather(sources.to_vec()),
        ))
    }

    pub fn dense(&mut self, input: NodeId, params: DenseParams) -> Result<NodeId> {
        let x = self.value(input).values();
        let w = self.params.values(params.weight);
        if w.len() != params.outputs * x.len() {
            return Err(Error::Shape {
                op: "dense",
                detail: format!(
                    "weight `{}` has {} values, expected {}x{}",
                    self.params.entry(params.weight).name,
                    w.len(),
                    params.outputs,
                    x.len()
                ),
            });
        }
        let bias = params.bias.map(|b| self.params.values(b));
        if let Some(b) = bias {
            if b.len() != params.outputs {
                return Err(Error::Shape {
                    op: "dense",
                    detail: format!("bias has {} values, expected {}", b.len(), params.outputs),
                });
            }
        }
        let y = ops::dense_forward(x, w, bias, params.outputs, params.activation);
        Ok(self.push(
            FeatureMap::from_raw(1, params.outputs, y),
            Op::Dense { input, params },
        ))
    }

    /// `Σ_j softmax(logits)_j · x_j`, a learned convex combination.
    pub fn softmax_pool(&mut self, input: NodeId, logits: ParamId) -> Result<NodeId> {
        let x = self.value(input).values();
        let l = self.params.values(logits);
        if l.len() != x.len() {
            return Err(Error::Shape {
                op: "softmax_pool",
                detail: format!("{} logits for {} inputs", l.len(), x.len()),
            });
        }
        let weights = softmax(l);
        let y = weights.iter().zip(x).map(|(w, v)| w * v).sum();
        Ok(self.push(
            FeatureMap::from_raw(1, 1, vec![y]),
            Op::SoftmaxPool {
                input,
                logits,
                weights,
            },
        ))
    }

    /// Unweighted mean of all elements.
    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input).values();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(FeatureMap::from_raw(1, 1, vec![m]), Op::Mean(input))
    }

    /// `Σ_j w_j (t_j − x_j)²` as a scalar.
    pub fn weighted_squared_error(
        &mut self,
        input: NodeId,
        target: &[f64],
        weights: &[f64],
    ) -> Result<NodeId> {
        let x = self.value(input).values();
        if target.len() != x.len() || weights.len() != x.len() {
            return Err(Error::Shape {
                op: "weighted_squared_error",
                detail: format!(
                    "{} predictions, {} targets, {} weights",
                    x.len(),
                    target.len(),
                    weights.len()
                ),
            });
        }
        let y = x
            .iter()
            .zip(target)
            .zip(weights)
            .map(|((p, t), w)| w * (t - p) * (t - p))
            .sum();
        Ok(self.push(
            FeatureMap::from_raw(1, 1, vec![y]),
            Op::WeightedSquaredError {
                input,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }

    /// Fingerprint of every piecewise-linear branch taken (ReLU masks and
    /// pool winners). Two forward passes with equal signatures lie on the
    /// same smooth piece.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Conv { params, .. } if params.spec.activation == Activation::Relu => {
                    for v in node.value.values() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::Dense { params, .. } if params.activation == Activation::Relu => {
                    for v in node.value.values() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a scalar node. `seed` is ∂loss/∂output.
    /// Parameters the tape never touched get zero gradient.
    pub fn backward(&self, output: NodeId, seed: f64) -> Result<Gradients> {
        self.backward_visiting(output, seed, |_| {})
    }

    /// [`backward`](Self::backward) that reports each node index as its
    /// adjoint is propagated.
    pub fn backward_visiting(
        &self,
        output: NodeId,
        seed: f64,
        mut visit: impl FnMut(usize),
    ) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::usage(format!("node {} is not on this tape", output.0)));
        }
        if self.nodes[output.0].value.len() != 1 {
            let (c, l) = self.nodes[output.0].value.shape();
            return Err(Error::usage(format!(
                "backward needs a scalar terminal, node {} is {c}x{l}",
                output.0
            )));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(vec![seed]);

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            visit(idx);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (d, v) in grads.get_mut(*id).iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                Op::Conv {
                    input,
                    params,
                    padded,
                } => {
                    let in_len = self.nodes[input.0].value.length();
                    let in_size = self.nodes[input.0].value.len();
                    let needs_input = self.reaches_gradient(*input);
                    let mut g_in = needs_input.then(|| vec![0.0; in_size]);
                    let kernel = self.params.values(params.kernel);
                    let mut gk = std::mem::take(&mut grads.grads[params.kernel.0]);
                    let mut gb = std::mem::take(&mut grads.grads[params.bias.0]);
                    ops::conv1d_backward(
                        &params.spec,
                        in_len,
                        padded,
                        &node.value,
                        &g,
                        kernel,
                        &mut gk,
                        &mut gb,
                        g_in.as_deref_mut(),
                    );
                    grads.grads[params.kernel.0] = gk;
                    grads.grads[params.bias.0] = gb;
                    if let Some(gi) = g_in {
                        accumulate(&mut adj[input.0], gi);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let mut gi = vec![0.0; self.nodes[input.0].value.len()];
                    for (&a, v) in argmax.iter().zip(&g) {
                        gi[a] += v;
                    }
                    accumulate(&mut adj[input.0], gi);
                }
                Op::Combine(terms) => {
                    for &(n, coef) in terms {
                        accumulate(&mut adj[n.0], g.iter().map(|v| coef * v).collect());
                    }
                }
                Op::Gather(sources) => {
                    for (&(n, i), v) in sources.iter().zip(&g) {
                        let slot = adj[n.0]
                            .get_or_insert_with(|| vec![0.0; self.nodes[n.0].value.len()]);
                        slot[i] += v;
                    }
                }
                Op::Dense { input, params } => {
                    let x = self.nodes[input.0].value.values();
                    let n = x.len();
                    let mut g_pre = g.clone();
                    if params.activation == Activation::Relu {
                        for (gp, y) in g_pre.iter_mut().zip(node.value.values()) {
                            if *y <= 0.0 {
                                *gp = 0.0;
                            }
                        }
                    }
                    if let Some(b) = params.bias {
                        for (d, v) in grads.get_mut(b).iter_mut().zip(&g_pre) {
                            *d += v;
                        }
                    }
                    let w = self.params.values(params.weight);
                    let gw = grads.get_mut(params.weight);
                    for (o, &go) in g_pre.iter().enumerate() {
                        if go != 0.0 {
                            for (d, xv) in gw[o * n..(o + 1) * n].iter_mut().zip(x) {
                                *d += go * xv;
                            }
                        }
                    }
                    if self.reaches_gradient(*input) {
                        let mut gi = vec![0.0; n];
                        for (o, &go) in g_pre.iter().enumerate() {
                            if go != 0.0 {
                                for (d, wv) in gi.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                                    *d += go * wv;
                                }
                            }
                        }
                        accumulate(&mut adj[input.0], gi);
                    }
                }
                Op::SoftmaxPool {
                    input,
                    logits,
                    weights,
                } => {
                    let gy = g[0];
                    let x = self.nodes[input.0].value.values();
                    let y = node.value.values()[0];
                    for (d, (w, xv)) in grads.get_mut(*logits).iter_mut().zip(weights.iter().zip(x))
                    {
                        *d += gy * w * (xv - y);
                    }
                    accumulate(&mut adj[input.0], weights.iter().map(|w| gy * w).collect());
                }
                Op::Mean(input) => {
                    let n = self.nodes[input.0].value.len();
                    accumulate(&mut adj[input.0], vec![g[0] / n as f64; n]);
                }
                Op::WeightedSquaredError {
                    input,
                    target,
                    weights,
                } => {
                    let gy = g[0];
                    let x = self.nodes[input.0].value.values();
                    let gi = x
                        .iter()
                        .zip(target)
                        .zip(weights)
                        .map(|((p, t), w)| gy * 2.0 * w * (p - t))
                        .collect();
                    accumulate(&mut adj[input.0], gi);
                }
            }
        }
        Ok(grads)
    }

    /// Whether any parameter lies upstream of `node`.
    fn reaches_gradient(&self, node: NodeId) -> bool {
        !matches!(self.nodes[node.0].op, Op::Input)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

/// Max-shifted softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::ConvSpec;

    #[test]
    fn linear_scalar_gradient() {
        let mut store = ParameterStore::new();
        let p = store.add_with_values("p", &[1], vec![2.0]).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.parameter(p, 1).unwrap();
        let y = tape.combine(&[(x, 3.0)]).unwrap();
        let g = tape.backward(y, 1.0).unwrap();
        assert_eq!(g.get(p), &[3.0]);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let mut store = ParameterStore::new();
        let p = store.add_with_values("p", &[1], vec![-1.0]).unwrap();
        let k = store.add_with_values("k", &[1, 1, 1], vec![1.0]).unwrap();
        let b = store.add("b", &[1]).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.parameter(p, 1).unwrap();
        let spec = ConvSpec::new(1, 1, 1, 1, 0, Activation::Relu);
        let y = tape
            .conv1d(x, ConvParams { spec, kernel: k, bias: b })
            .unwrap();
        let g = tape.backward(y, 1.0).unwrap();
        assert_eq!(g.get(p), &[0.0]);

        // exactly at the kink
        store.values_mut(p)[0] = 0.0;
        let mut tape = Tape::new(&store);
        let x = tape.parameter(p, 1).unwrap();
        let y = tape
            .conv1d(x, ConvParams { spec, kernel: k, bias: b })
            .unwrap();
        assert_eq!(tape.backward(y, 1.0).unwrap().get(p), &[0.0]);
    }

    #[test]
    fn untouched_parameters_get_zero() {
        let mut store = ParameterStore::new();
        let p = store.add_with_values("p", &[2], vec![1.0, 2.0]).unwrap();
        let q = store.add_with_values("q", &[3], vec![1.0, 1.0, 1.0]).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.parameter(p, 1).unwrap();
        let m = tape.mean(x);
        let g = tape.backward(m, 1.0).unwrap();
        assert_eq!(g.get(p), &[0.5, 0.5]);
        assert_eq!(g.get(q), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_terminal_is_usage_error() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(FeatureMap::from_row(&[1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x, 1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn replay_visits_in_reverse_recording_order() {
        let mut store = ParameterStore::new();
        let p = store.add_with_values("p", &[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.parameter(p, 1).unwrap();
        let pooled = tape.maxpool1d(x, 2).unwrap();
        let sum = tape.add(pooled, pooled).unwrap();
        let m = tape.mean(sum);
        let mut visited = Vec::new();
        tape.backward_visiting(m, 1.0, |i| visited.push(i)).unwrap();
        assert_eq!(visited, vec![3, 2, 1, 0]);
    }

    #[test]
    fn softmax_pool_of_uniform_logits_is_mean() {
        let mut store = ParameterStore::new();
        let l = store.add("logits", &[4]).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.input(FeatureMap::from_row(&[1.0, 2.0, 3.0, 6.0]).unwrap());
        let y = tape.softmax_pool(x, l).unwrap();
        assert!((tape.scalar(y).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let w = softmax(&[1e6, 0.0, -1e6]);
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 0.0);
        assert!(w.iter().all(|v| v.is_finite()));
    }
}
