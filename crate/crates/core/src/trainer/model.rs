//! Executes an [`ArchGraph`] on the tape.

use crate::archgraph::{validate, Activation, ArchGraph, LayerKind, NodeId, Resample};
use crate::tensor::init::glorot_init_stream;
use crate::tensor::{Tape, Tensor, TensorError, Var};

use super::{Result, TrainError};

/// Where a node's parameters sit in [`Model::tensors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub node: NodeId,
    pub weight: usize,
    pub bias: Option<usize>,
}

/// A graph plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub graph: ArchGraph,
    pub slots: Vec<ParamSlot>,
    /// Per node in topological order: weight, then bias if any.
    pub tensors: Vec<Tensor<f32>>,
}

fn weight_shape(graph: &ArchGraph, id: NodeId) -> Option<Vec<usize>> {
    let n = graph.node(id);
    match n.kind {
        LayerKind::Conv => {
            let k = n.kernel_width.unwrap_or(1);
            Some(vec![n.channels_out, n.channels_in, k, k])
        }
        LayerKind::Upsample(Resample::Standard) => Some(vec![n.channels_in, n.channels_out, 2, 2]),
        LayerKind::Dense => Some(vec![n.channels_out, n.channels_in]),
        _ => None,
    }
}

impl Model {
    /// Glorot-uniform weights with one random stream per node; zero biases.
    pub fn init(graph: &ArchGraph, seed: u64) -> Result<Self> {
        let violations = validate(graph);
        if !violations.is_empty() {
            return Err(TrainError::Contract(format!("invalid graph: {}", violations[0])));
        }
        if graph.spec.spatial_dims != 2 {
            return Err(TrainError::Contract(format!(
                "training supports 2D graphs only, got {}D",
                graph.spec.spatial_dims
            )));
        }
        if graph.nodes.iter().any(|n| {
            matches!(
                n.kind,
                LayerKind::Downsample(Resample::ParameterFree) | LayerKind::Upsample(Resample::ParameterFree)
            )
        }) {
            return Err(TrainError::Contract("parameter-free resampling is analytic only".into()));
        }
        let mut slots = Vec::new();
        let mut tensors = Vec::new();
        for &id in &graph.topo_order {
            let Some(shape) = weight_shape(graph, id) else { continue };
            let node = graph.node(id);
            tensors.push(glorot_init_stream(&shape, seed, id.0 as u64));
            let weight = tensors.len() - 1;
            let bias = node.has_bias.then(|| {
                tensors.push(Tensor::zeros(&[node.channels_out]));
                tensors.len() - 1
            });
            slots.push(ParamSlot { node: id, weight, bias });
        }
        Ok(Model { graph: graph.clone(), slots, tensors })
    }

    pub fn param_count(&self) -> u64 {
        self.tensors.iter().map(|t| t.len() as u64).sum()
    }

    /// Expected `(channels, height, width)`-compatibility of an input batch.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let spec = &self.graph.spec;
        let divisor = 1usize << spec.depth;
        let ok = shape.len() == 4
            && shape[1] == spec.in_channels
            && shape[2] % divisor == 0
            && shape[3] % divisor == 0
            && shape[2] >> spec.depth >= spec.kernel_width
            && shape[3] >> spec.depth >= spec.kernel_width;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Contract(format!(
                "input batch {shape:?} incompatible with spec: need (b, {}, h, w) with h, w divisible by {divisor} \
                 and at least kernel width {} at the coarsest level",
                spec.in_channels, spec.kernel_width
            )))
        }
    }

    /// Records the parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape<f32>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Forward pass of `x`, returning the output probabilities.
    pub fn forward(&self, tape: &mut Tape<f32>, vars: &[Var], x: Var) -> Result<Var> {
        let g = &self.graph;
        let mut values: Vec<Option<Var>> = vec![None; g.nodes.len()];
        let mut slots = vec![None; g.nodes.len()];
        for s in &self.slots {
            slots[s.node.0] = Some((vars[s.weight], s.bias.map(|b| vars[b])));
        }
        let mut out = None;
        for &id in &g.topo_order {
            let preds: Vec<Var> = g
                .predecessors(id)
                .iter()
                .map(|p| values[p.0].expect("topological order visits predecessors first"))
                .collect();
            let first = preds.first().copied();
            let single = || first.ok_or_else(|| TrainError::Contract(format!("node {id} has no input")));
            let param = || slots[id.0].ok_or_else(|| TrainError::Contract(format!("node {id} has no parameters")));
            let v = match g.node(id).kind {
                LayerKind::Input => x,
                LayerKind::Conv => {
                    let (w, b) = param()?;
                    tape.conv2d(single()?, w, b)?
                }
                LayerKind::Activation(Activation::Relu) => tape.relu(single()?),
                LayerKind::Activation(Activation::Sigmoid) => tape.sigmoid(single()?),
                LayerKind::Activation(Activation::Softmax) => tape.softmax(single()?)?,
                LayerKind::Downsample(_) => tape.maxpool2(single()?)?,
                LayerKind::Upsample(_) => {
                    let (w, b) = param()?;
                    tape.conv_transpose2(single()?, w, b)?
                }
                LayerKind::Add => {
                    if preds.len() != 2 {
                        return Err(TrainError::Contract(format!("add node {id} needs two inputs")));
                    }
                    tape.add(preds[0], preds[1])?
                }
                LayerKind::Concat => tape.concat(&preds)?,
                LayerKind::GlobalMaxPool => tape.global_maxpool(single()?)?,
                LayerKind::Dense => {
                    let (w, b) = param()?;
                    tape.dense(single()?, w, b)?
                }
                LayerKind::Output => {
                    let v = single()?;
                    out = Some(v);
                    v
                }
            };
            values[id.0] = Some(v);
        }
        out.ok_or_else(|| TrainError::Contract("graph has no output".into()))
    }

    /// Inference on a batch `(b, c, h, w)`.
    pub fn predict(&self, batch: Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(batch.shape())?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(batch);
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}
