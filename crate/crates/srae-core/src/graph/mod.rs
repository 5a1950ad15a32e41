//! Differentiable computation graphs over the SRAE operator set.
//!
//! Graphs are built once, are immutable afterwards, and evaluate purely:
//! identical bindings give bitwise-identical outputs. Reverse-mode gradients
//! are computed with `f64` adjoints and pruned to the requested parameter
//! subset.

mod gradcheck;
mod ops;

pub use gradcheck::{finite_diff_check, FdEntry, FdReport};
pub use ops::OpKind;

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{GTensor, Scalar, Tensor};

/// Index of a node inside its graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub enum NodeKind {
    /// Leaf bound at evaluation time by name.
    Input(String),
    /// Leaf bound from a [`ParamSource`] by name.
    Param(String),
    /// Leaf with a fixed value (frozen weights, one-hot labels, ...).
    Const(Tensor),
    Op(OpKind, Vec<NodeId>),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
}

/// Source of named parameter tensors during evaluation.
pub trait ParamSource {
    fn get_param(&self, name: &str) -> Option<&Tensor>;
}

/// Evaluation with no trainable parameters.
pub struct NoParams;

impl ParamSource for NoParams {
    fn get_param(&self, _name: &str) -> Option<&Tensor> {
        None
    }
}

impl ParamSource for BTreeMap<String, Tensor> {
    fn get_param(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

/// Named input bindings for one evaluation.
pub type Inputs<'a> = BTreeMap<&'a str, &'a Tensor>;

/// An acyclic, topologically ordered operation graph.
#[derive(Debug, Clone)]
pub struct OpGraph {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, NodeId>,
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, NodeId>,
    leaves: BTreeMap<String, NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, kind: NodeKind) -> NodeId {
        if let NodeKind::Op(op, inputs) = &kind {
            assert_eq!(op.arity(), inputs.len(), "wrong arity for {op:?}");
            for id in inputs {
                assert!(id.0 < self.nodes.len(), "op input must precede the op");
            }
        }
        self.nodes.push(Node { kind });
        NodeId(self.nodes.len() - 1)
    }

    /// Named evaluation-time leaf. Repeated calls with the same name return
    /// the same node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let id = self.push(NodeKind::Input(name.to_owned()));
        self.leaves.insert(name.to_owned(), id);
        id
    }

    /// Named trainable-parameter leaf; deduplicated like [`Self::input`].
    pub fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let id = self.push(NodeKind::Param(name.to_owned()));
        self.leaves.insert(name.to_owned(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(NodeKind::Const(value))
    }

    pub fn op(&mut self, kind: OpKind, inputs: &[NodeId]) -> NodeId {
        self.push(NodeKind::Op(kind, inputs.to_vec()))
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        self.op(OpKind::Conv2d { stride, pad }, &[x, k, b])
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.op(OpKind::Dense, &[x, w, b])
    }

    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::UpsampleNearest2, &[x])
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        self.op(OpKind::LeakyRelu { slope }, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::Tanh, &[x])
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::Exp, &[x])
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::Log, &[x])
    }

    pub fn clamp_min(&mut self, x: NodeId, min: f32) -> NodeId {
        self.op(OpKind::ClampMin { min }, &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::SoftmaxLast, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.op(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.op(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.op(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> NodeId {
        self.op(OpKind::Scale { factor }, &[x])
    }

    pub fn add_scalar(&mut self, x: NodeId, value: f32) -> NodeId {
        self.op(OpKind::AddScalar { value }, &[x])
    }

    pub fn tile_spatial(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        self.op(OpKind::TileSpatial { rows, cols }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::GlobalAvgPool, &[x])
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.op(OpKind::ConcatChannels, &[a, b])
    }

    pub fn squared_l2(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::SquaredL2, &[x])
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::MeanAll, &[x])
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.op(OpKind::SumAll, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        self.op(OpKind::Reshape { shape }, &[x])
    }

    /// Registers a named graph output.
    pub fn output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_owned(), id);
    }

    pub fn build(self) -> OpGraph {
        OpGraph { nodes: self.nodes, outputs: self.outputs }
    }
}

impl OpGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn outputs(&self) -> &BTreeMap<String, NodeId> {
        &self.outputs
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    fn node_name(&self, id: NodeId) -> String {
        match &self.nodes[id.0].kind {
            NodeKind::Input(n) => format!("input:{n}"),
            NodeKind::Param(n) => format!("param:{n}"),
            NodeKind::Const(_) => format!("const#{}", id.0),
            NodeKind::Op(op, _) => format!("{op:?}#{}", id.0),
        }
    }

    /// Names of all parameter leaves, in node order.
    pub fn param_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Param(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Parameter leaves reachable going upward from `target` (i.e. the
    /// parameters `target` depends on).
    pub fn param_ancestors(&self, target: NodeId) -> BTreeSet<&str> {
        let marked = self.mark_ancestors(&[target]);
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| marked[*i])
            .filter_map(|(_, n)| match &n.kind {
                NodeKind::Param(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    fn mark_ancestors(&self, targets: &[NodeId]) -> Vec<bool> {
        let mut marked = vec![false; self.nodes.len()];
        for t in targets {
            marked[t.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if !marked[i] {
                continue;
            }
            if let NodeKind::Op(_, ins) = &self.nodes[i].kind {
                for j in ins {
                    marked[j.0] = true;
                }
            }
        }
        marked
    }

    fn forward<S: Scalar>(
        &self,
        inputs: &Inputs,
        params: &dyn ParamSource,
        needed: &[bool],
    ) -> Result<Vec<Option<GTensor<S>>>> {
        let mut values: Vec<Option<GTensor<S>>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if !needed[i] {
                continue;
            }
            let value: GTensor<S> = match &node.kind {
                NodeKind::Input(name) => inputs
                    .get(name.as_str())
                    .ok_or_else(|| Error::contract(format!("unbound input `{name}`")))?
                    .cast(),
                NodeKind::Param(name) => params
                    .get_param(name)
                    .ok_or_else(|| Error::contract(format!("unbound parameter `{name}`")))?
                    .cast(),
                NodeKind::Const(t) => t.cast(),
                NodeKind::Op(op, ins) => {
                    let in_vals: Vec<&GTensor<S>> =
                        ins.iter().map(|j| values[j.0].as_ref().unwrap()).collect();
                    let out = op.forward(&in_vals).map_err(|e| match e {
                        Error::Shape { msg, .. } => Error::shape(self.node_name(NodeId(i)), msg),
                        other => other,
                    })?;
                    if out.data().iter().any(|v| !v.to_f64().is_finite()) {
                        return Err(Error::NonFinite { node: self.node_name(NodeId(i)) });
                    }
                    out
                }
            };
            values[i] = Some(value);
        }
        Ok(values)
    }

    /// Evaluates the requested nodes. Pure: identical bindings yield
    /// bitwise-identical results.
    pub fn eval<S: Scalar>(
        &self,
        inputs: &Inputs,
        params: &dyn ParamSource,
        targets: &[NodeId],
    ) -> Result<Vec<GTensor<S>>> {
        let needed = self.mark_ancestors(targets);
        let values = self.forward::<S>(inputs, params, &needed)?;
        Ok(targets.iter().map(|t| values[t.0].clone().unwrap()).collect())
    }

    /// Evaluates every registered output by name.
    pub fn evaluate(
        &self,
        inputs: &Inputs,
        params: &dyn ParamSource,
    ) -> Result<BTreeMap<String, Tensor>> {
        let ids: Vec<NodeId> = self.outputs.values().copied().collect();
        let vals = self.eval::<f32>(inputs, params, &ids)?;
        Ok(self.outputs.keys().cloned().zip(vals).collect())
    }

    /// Forward value of `loss` plus `dLoss/dParam` for every parameter leaf
    /// whose name passes `wrt`. Parameters not reachable from the loss get
    /// zero gradients.
    pub fn loss_and_grads(
        &self,
        inputs: &Inputs,
        params: &dyn ParamSource,
        loss: NodeId,
        wrt: &dyn Fn(&str) -> bool,
    ) -> Result<(f32, BTreeMap<String, Tensor>)> {
        let (loss, _, grads) = self.backprop(inputs, params, loss, wrt, &[])?;
        Ok((loss, grads))
    }

    /// Like [`Self::loss_and_grads`], additionally returning the forward
    /// values of `watch` (scalar nodes, e.g. individual loss terms) from the
    /// same pass.
    pub fn backprop(
        &self,
        inputs: &Inputs,
        params: &dyn ParamSource,
        loss: NodeId,
        wrt: &dyn Fn(&str) -> bool,
        watch: &[NodeId],
    ) -> Result<(f32, Vec<f32>, BTreeMap<String, Tensor>)> {
        let mut targets = vec![loss];
        targets.extend_from_slice(watch);
        let needed = self.mark_ancestors(&targets);
        let values = self.forward::<f32>(inputs, params, &needed)?;
        let loss_val = values[loss.0].as_ref().unwrap();
        if loss_val.numel() != 1 {
            return Err(Error::contract(format!(
                "loss node `{}` must evaluate to a scalar, got shape {:?}",
                self.node_name(loss),
                loss_val.shape()
            )));
        }
        let loss_scalar = loss_val.data()[0];
        let watched: Vec<f32> = watch
            .iter()
            .map(|w| {
                let v = values[w.0].as_ref().unwrap();
                if v.numel() != 1 {
                    return Err(Error::contract(format!(
                        "watched node `{}` must be scalar",
                        self.node_name(*w)
                    )));
                }
                Ok(v.data()[0])
            })
            .collect::<Result<_>>()?;

        // reach[i]: some wrt-parameter is in node i's subtree.
        let mut reach = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            reach[i] = match &node.kind {
                NodeKind::Param(name) => wrt(name),
                NodeKind::Op(_, ins) => ins.iter().any(|j| reach[j.0]),
                _ => false,
            };
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(vec![1.0]);

        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        for i in (0..=loss.0).rev() {
            let Some(adj) = adjoints[i].take() else { continue };
            if !needed[i] || !reach[i] {
                continue;
            }
            match &self.nodes[i].kind {
                NodeKind::Param(name) => {
                    let shape = values[i].as_ref().unwrap().shape().to_vec();
                    grads.insert(name.clone(), Tensor::from_f64_data(shape, &adj)?);
                }
                NodeKind::Op(op, ins) => {
                    let in_vals: Vec<&GTensor<f32>> =
                        ins.iter().map(|j| values[j.0].as_ref().unwrap()).collect();
                    let need: Vec<bool> = ins.iter().map(|j| reach[j.0]).collect();
                    let contribs =
                        op.backward(&in_vals, values[i].as_ref().unwrap(), &adj, &need);
                    for (j, contrib) in ins.iter().zip(contribs) {
                        let Some(contrib) = contrib else { continue };
                        match adjoints[j.0].as_mut() {
                            Some(acc) => {
                                for (a, c) in acc.iter_mut().zip(&contrib) {
                                    *a += c;
                                }
                            }
                            None => adjoints[j.0] = Some(contrib),
                        }
                    }
                }
                _ => {}
            }
        }

        // Zero tensors for wrt-parameters never reached by the backward pass.
        for node in &self.nodes {
            if let NodeKind::Param(name) = &node.kind {
                if wrt(name) && !grads.contains_key(name) {
                    let shape = params
                        .get_param(name)
                        .ok_or_else(|| Error::contract(format!("unbound parameter `{name}`")))?
                        .shape()
                        .to_vec();
                    grads.insert(name.clone(), Tensor::zeros(shape));
                }
            }
        }

        Ok((loss_scalar, watched, grads))
    }
}
