//! Architecture graphs for U-Net style backbones in full and pocket variants.
//!
//! A full network doubles the channel width at every downsampling step; a
//! pocket network keeps every convolution (except the final output layer) at
//! `base_channels`. Both variants of one [`ArchSpec`] produce graphs with the
//! same nodes and edges, differing only in the channel annotations.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Unet,
    Resnet,
    Densenet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Segmentation,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    Add,
    Concat,
}

/// Declarative description of a network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub block_kind: BlockKind,
    pub spatial_dims: u8,
    /// Number of downsampling operations.
    pub depth: usize,
    pub base_channels: usize,
    pub convs_per_block: usize,
    pub kernel_width: usize,
    pub pocket: bool,
    pub in_channels: usize,
    pub num_outputs: usize,
    pub head: Head,
    pub skip_mode: SkipMode,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            block_kind: BlockKind::Unet,
            spatial_dims: 2,
            depth: 3,
            base_channels: 16,
            convs_per_block: 2,
            kernel_width: 3,
            pocket: false,
            in_channels: 1,
            num_outputs: 1,
            head: Head::Segmentation,
            skip_mode: SkipMode::Add,
        }
    }
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Unet => "unet",
            BlockKind::Resnet => "resnet",
            BlockKind::Densenet => "densenet",
        }
    }
}

impl Head {
    pub fn name(&self) -> &'static str {
        match self {
            Head::Segmentation => "segmentation",
            Head::Classification => "classification",
        }
    }
}

impl ArchSpec {
    /// The same spec with the other channel-width schedule.
    pub fn counterpart(&self) -> Self {
        Self {
            pocket: !self.pocket,
            ..*self
        }
    }

    pub fn with_pocket(self, pocket: bool) -> Self {
        Self { pocket, ..self }
    }

    /// Returns one message per violated field constraint.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("depth", self.depth),
            ("base_channels", self.base_channels),
            ("convs_per_block", self.convs_per_block),
            ("kernel_width", self.kernel_width),
            ("in_channels", self.in_channels),
            ("num_outputs", self.num_outputs),
        ];
        for (name, value) in positive {
            if value == 0 {
                out.push(format!("{name} must be at least 1"));
            }
        }
        if !matches!(self.spatial_dims, 2 | 3) {
            out.push(format!(
                "spatial_dims must be 2 or 3, got {}",
                self.spatial_dims
            ));
        }
        if self.block_kind == BlockKind::Resnet && self.convs_per_block < 2 {
            out.push("resnet blocks need convs_per_block >= 2 for the shortcut".into());
        }
        // Widths grow as base_channels * 2^depth; keep that inside usize.
        if self.depth >= 48 || self.base_channels.checked_shl(self.depth as u32).is_none() {
            out.push("depth too large for channel arithmetic".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ArchError::InvalidSpec(problems))
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ArchError {
    #[error("depth level {level} outside 0..={depth}")]
    DepthOutOfRange { level: usize, depth: usize },
    #[error("invalid spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        message: String,
        line: usize,
        column: usize,
    },
    #[error("graph has {} invariant violation(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),
}

/// Channel width of the convolutions at resolution depth `level` (0 = finest).
pub fn channels_at_depth(spec: &ArchSpec, level: usize) -> Result<usize, ArchError> {
    if level > spec.depth {
        return Err(ArchError::DepthOutOfRange {
            level,
            depth: spec.depth,
        });
    }
    Ok(if spec.pocket {
        spec.base_channels
    } else {
        spec.base_channels << level
    })
}

/// Version of the on-disk spec JSON layout.
pub const SPEC_FORMAT_VERSION: u32 = 1;

pub fn spec_to_file(spec: &ArchSpec) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(spec).expect("ArchSpec serializes");
    bytes.push(b'\n');
    bytes
}

pub fn spec_from_file(bytes: &[u8]) -> Result<ArchSpec, ArchError> {
    let spec: ArchSpec = serde_json::from_slice(bytes).map_err(|e| ArchError::Parse {
        message: e.to_string(),
        line: e.line(),
        column: e.column(),
    })?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
}

/// How a resampling node changes resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    /// Max-pool 2x2 going down, learnable stride-2 transposed conv going up.
    Standard,
    /// Parameter-free: max-pool plus channel duplication going down, nearest
    /// neighbour plus channel pair-summing going up. Analytic use only.
    ParameterFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv,
    Activation(Activation),
    Downsample(Resample),
    Upsample(Resample),
    Add,
    Concat,
    GlobalMaxPool,
    Dense,
    Output,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv => "conv",
            LayerKind::Activation(Activation::Relu) => "relu",
            LayerKind::Activation(Activation::Sigmoid) => "sigmoid",
            LayerKind::Activation(Activation::Softmax) => "softmax",
            LayerKind::Downsample(_) => "downsample",
            LayerKind::Upsample(_) => "upsample",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
            LayerKind::GlobalMaxPool => "global_maxpool",
            LayerKind::Dense => "dense",
            LayerKind::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: NodeId,
    pub kind: LayerKind,
    /// Resolution depth, 0 = finest.
    pub depth_level: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    /// Stencil width; conv nodes only.
    pub kernel_width: Option<usize>,
    pub has_bias: bool,
}

/// Which graph invariant a [`Violation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Invariant {
    SpecValid,
    NodeIds,
    EdgeEndpoints,
    Acyclic,
    SingleOutput,
    Reachable,
    ChannelFlow,
    MergeChannels,
    ResolutionStep,
    /// Every conv but the output layer emits `base_channels`.
    PocketWidth,
    /// Conv width at depth d is `base_channels * 2^d`.
    FullWidth,
    ConvKernel,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Invariant::SpecValid => "spec constraints",
            Invariant::NodeIds => "node ids match positions",
            Invariant::EdgeEndpoints => "edge endpoints exist",
            Invariant::Acyclic => "acyclic",
            Invariant::SingleOutput => "exactly one output node",
            Invariant::Reachable => "reachable from input",
            Invariant::ChannelFlow => "channels_in matches predecessors",
            Invariant::MergeChannels => "merge input channels",
            Invariant::ResolutionStep => "resolution depth steps",
            Invariant::PocketWidth => "pocket constant-width rule",
            Invariant::FullWidth => "full channel-doubling rule",
            Invariant::ConvKernel => "conv kernel width",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: Option<NodeId>,
    pub invariant: Invariant,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(id) => write!(f, "[{}] {}: {}", id, self.invariant, self.detail),
            None => write!(f, "[graph] {}: {}", self.invariant, self.detail),
        }
    }
}

/// A concrete layer DAG. Predecessor order follows edge order, which fixes
/// the channel layout of concat nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchGraph {
    pub spec: ArchSpec,
    pub nodes: Vec<LayerNode>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub topo_order: Vec<NodeId>,
}

impl ArchGraph {
    /// Assembles a graph and derives a topological order. Cyclic input yields
    /// a partial order, which [`validate`] reports.
    pub fn from_parts(spec: ArchSpec, nodes: Vec<LayerNode>, edges: Vec<(NodeId, NodeId)>) -> Self {
        let topo_order = topological_order(nodes.len(), &edges);
        Self {
            spec,
            nodes,
            edges,
            topo_order,
        }
    }

    pub fn node(&self, id: NodeId) -> &LayerNode {
        &self.nodes[id.0]
    }

    pub fn predecessors(&self, id: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|(_, to)| *to == id)
            .map(|(from, _)| *from)
            .collect()
    }

    pub fn successors(&self, id: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|(from, _)| *from == id)
            .map(|(_, to)| *to)
            .collect()
    }

    pub fn input(&self) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.kind == LayerKind::Input)
            .map(|n| n.id)
    }

    pub fn output(&self) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.kind == LayerKind::Output)
            .map(|n| n.id)
    }

    /// The parametric layer that produces the network output: walk back from
    /// the output node through activations to the first conv or dense node.
    pub fn output_layer(&self) -> Option<NodeId> {
        let mut cur = self.output()?;
        for _ in 0..self.nodes.len() {
            let preds = self.predecessors(cur);
            if preds.len() != 1 {
                return None;
            }
            cur = preds[0];
            match self.node(cur).kind {
                LayerKind::Conv | LayerKind::Dense => return Some(cur),
                LayerKind::Activation(_) => continue,
                _ => return None,
            }
        }
        None
    }

    pub fn conv_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == LayerKind::Conv).count()
    }

    /// Resolution transitions in execution order: `true` for a descent.
    pub fn resolution_trace(&self) -> Vec<bool> {
        self.topo_order
            .iter()
            .filter_map(|id| match self.node(*id).kind {
                LayerKind::Downsample(_) => Some(true),
                LayerKind::Upsample(_) => Some(false),
                _ => None,
            })
            .collect()
    }

    /// Same nodes and edges, ignoring channel annotations.
    pub fn same_topology(&self, other: &ArchGraph) -> bool {
        self.edges == other.edges
            && self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.kind == b.kind
                    && a.depth_level == b.depth_level
                    && a.kernel_width == b.kernel_width
                    && a.has_bias == b.has_bias
            })
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph arch {\n  rankdir=TB;\n  node [shape=box, fontname=\"monospace\"];\n");
        for node in &self.nodes {
            let kernel = node
                .kernel_width
                .map(|k| format!(" k={k}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "  {} [label=\"{} {}{} d={} {}->{}\"];\n",
                node.id,
                node.id,
                node.kind.name(),
                kernel,
                node.depth_level,
                node.channels_in,
                node.channels_out
            ));
        }
        for (from, to) in &self.edges {
            out.push_str(&format!("  {from} -> {to};\n"));
        }
        out.push_str("}\n");
        out
    }

    /// One line per node: id, kind, depth, channel flow.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{:<6} {:<15} {:>5} {:>8} {:>8} {:>3}\n",
            "node", "kind", "depth", "ch_in", "ch_out", "k"
        );
        for id in &self.topo_order {
            let n = self.node(*id);
            out.push_str(&format!(
                "{:<6} {:<15} {:>5} {:>8} {:>8} {:>3}\n",
                n.id.to_string(),
                n.kind.name(),
                n.depth_level,
                n.channels_in,
                n.channels_out,
                n.kernel_width.map(|k| k.to_string()).unwrap_or_else(|| "-".into())
            ));
        }
        out
    }
}

fn topological_order(len: usize, edges: &[(NodeId, NodeId)]) -> Vec<NodeId> {
    let mut indegree = vec![0usize; len];
    let mut adj = vec![Vec::new(); len];
    for &(from, to) in edges {
        if from.0 < len && to.0 < len {
            indegree[to.0] += 1;
            adj[from.0].push(to.0);
        }
    }
    // Lowest-id-first keeps the order stable for a given edge list.
    let mut ready: std::collections::BTreeSet<usize> =
        (0..len).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(len);
    while let Some(next) = ready.pop_first() {
        order.push(NodeId(next));
        for &to in &adj[next] {
            indegree[to] -= 1;
            if indegree[to] == 0 {
                ready.insert(to);
            }
        }
    }
    order
}

/// Checks every graph invariant; an empty list means the graph is well formed.
pub fn validate(graph: &ArchGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |node: Option<NodeId>, invariant: Invariant, detail: String| {
        out.push(Violation {
            node,
            invariant,
            detail,
        })
    };

    for problem in graph.spec.problems() {
        push(None, Invariant::SpecValid, problem);
    }
    for (pos, node) in graph.nodes.iter().enumerate() {
        if node.id.0 != pos {
            push(
                Some(node.id),
                Invariant::NodeIds,
                format!("node at position {pos} has id {}", node.id),
            );
        }
    }
    let n = graph.nodes.len();
    let mut endpoints_ok = true;
    for &(from, to) in &graph.edges {
        if from.0 >= n || to.0 >= n {
            endpoints_ok = false;
            push(
                None,
                Invariant::EdgeEndpoints,
                format!("edge {from} -> {to} references a missing node"),
            );
        }
    }
    if !endpoints_ok {
        return out;
    }

    let recomputed = topological_order(n, &graph.edges);
    if recomputed.len() != n {
        push(None, Invariant::Acyclic, "graph contains a cycle".into());
        return out;
    }
    if graph.topo_order.len() != n || !is_topological(&graph.topo_order, &graph.edges, n) {
        push(
            None,
            Invariant::Acyclic,
            "topo_order is not a topological permutation of the nodes".into(),
        );
    }

    let outputs: Vec<_> = graph
        .nodes
        .iter()
        .filter(|x| x.kind == LayerKind::Output)
        .collect();
    if outputs.len() != 1 {
        push(
            None,
            Invariant::SingleOutput,
            format!("found {} output nodes", outputs.len()),
        );
    }
    let inputs: Vec<_> = graph
        .nodes
        .iter()
        .filter(|x| x.kind == LayerKind::Input)
        .collect();
    if inputs.len() != 1 {
        push(
            None,
            Invariant::Reachable,
            format!("found {} input nodes, expected 1", inputs.len()),
        );
    } else {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([inputs[0].id.0]);
        seen[inputs[0].id.0] = true;
        while let Some(cur) = queue.pop_front() {
            for &(from, to) in &graph.edges {
                if from.0 == cur && !seen[to.0] {
                    seen[to.0] = true;
                    queue.push_back(to.0);
                }
            }
        }
        for (i, reached) in seen.iter().enumerate() {
            if !reached {
                push(
                    Some(NodeId(i)),
                    Invariant::Reachable,
                    "not reachable from the input node".into(),
                );
            }
        }
    }

    let output_layer = graph.output_layer();
    for node in &graph.nodes {
        let preds: Vec<&LayerNode> = graph
            .predecessors(node.id)
            .into_iter()
            .map(|p| graph.node(p))
            .collect();
        check_node(graph, node, &preds, output_layer, &mut push);
    }
    out
}

fn is_topological(order: &[NodeId], edges: &[(NodeId, NodeId)], n: usize) -> bool {
    let mut pos = vec![usize::MAX; n];
    for (i, id) in order.iter().enumerate() {
        if id.0 >= n || pos[id.0] != usize::MAX {
            return false;
        }
        pos[id.0] = i;
    }
    edges.iter().all(|(from, to)| pos[from.0] < pos[to.0])
}

fn check_node(
    graph: &ArchGraph,
    node: &LayerNode,
    preds: &[&LayerNode],
    output_layer: Option<NodeId>,
    push: &mut impl FnMut(Option<NodeId>, Invariant, String),
) {
    let id = Some(node.id);
    let spec = &graph.spec;
    let arity_ok = match node.kind {
        LayerKind::Input => preds.is_empty(),
        LayerKind::Add | LayerKind::Concat => preds.len() >= 2,
        _ => preds.len() == 1,
    };
    if !arity_ok {
        push(
            id,
            Invariant::ChannelFlow,
            format!("{} node has {} predecessor(s)", node.kind.name(), preds.len()),
        );
        return;
    }

    match node.kind {
        LayerKind::Input => {
            if node.channels_out != spec.in_channels || node.depth_level != 0 {
                push(
                    id,
                    Invariant::ChannelFlow,
                    format!(
                        "input must carry in_channels={} at depth 0",
                        spec.in_channels
                    ),
                );
            }
        }
        LayerKind::Add => {
            let first = preds[0].channels_out;
            if preds.iter().any(|p| p.channels_out != first) {
                push(
                    id,
                    Invariant::MergeChannels,
                    format!(
                        "add inputs have unequal channels {:?}",
                        preds.iter().map(|p| p.channels_out).collect::<Vec<_>>()
                    ),
                );
            } else if node.channels_in != first || node.channels_out != first {
                push(
                    id,
                    Invariant::MergeChannels,
                    format!("add of {first}-channel inputs annotated {}->{}", node.channels_in, node.channels_out),
                );
            }
        }
        LayerKind::Concat => {
            let sum: usize = preds.iter().map(|p| p.channels_out).sum();
            if node.channels_in != sum || node.channels_out != sum {
                push(
                    id,
                    Invariant::MergeChannels,
                    format!(
                        "concat inputs sum to {sum} channels but node is annotated {}->{}",
                        node.channels_in, node.channels_out
                    ),
                );
            }
        }
        _ => {
            if node.channels_in != preds[0].channels_out {
                push(
                    id,
                    Invariant::ChannelFlow,
                    format!(
                        "channels_in {} but predecessor {} emits {}",
                        node.channels_in, preds[0].id, preds[0].channels_out
                    ),
                );
            }
        }
    }

    let passthrough = matches!(
        node.kind,
        LayerKind::Activation(_) | LayerKind::Output | LayerKind::GlobalMaxPool | LayerKind::Downsample(Resample::Standard)
    );
    if passthrough && node.channels_in != node.channels_out {
        push(
            id,
            Invariant::ChannelFlow,
            format!("{} must preserve channels", node.kind.name()),
        );
    }

    // Resolution bookkeeping.
    if let Some(first) = preds.first() {
        let expected = match node.kind {
            LayerKind::Downsample(_) => Some(first.depth_level + 1),
            LayerKind::Upsample(_) => first.depth_level.checked_sub(1),
            _ => Some(first.depth_level),
        };
        if preds.iter().any(|p| p.depth_level != first.depth_level) {
            push(
                id,
                Invariant::ResolutionStep,
                "merged inputs live at different depths".into(),
            );
        } else if expected != Some(node.depth_level) {
            push(
                id,
                Invariant::ResolutionStep,
                format!(
                    "{} at depth {} after a node at depth {}",
                    node.kind.name(),
                    node.depth_level,
                    first.depth_level
                ),
            );
        }
    }
    if node.depth_level > spec.depth {
        push(
            id,
            Invariant::ResolutionStep,
            format!("depth {} exceeds spec depth {}", node.depth_level, spec.depth),
        );
    }

    if node.kind == LayerKind::Conv {
        match node.kernel_width {
            Some(k) if k >= 1 => {}
            _ => push(id, Invariant::ConvKernel, "conv without a kernel width".into()),
        }
        if Some(node.id) != output_layer && node.depth_level <= spec.depth {
            let expected = if spec.pocket {
                spec.base_channels
            } else {
                spec.base_channels << node.depth_level
            };
            if node.channels_out != expected {
                let invariant = if spec.pocket {
                    Invariant::PocketWidth
                } else {
                    Invariant::FullWidth
                };
                push(
                    id,
                    invariant,
                    format!(
                        "conv at depth {} emits {} channels, expected {expected}",
                        node.depth_level, node.channels_out
                    ),
                );
            }
        }
    }
}

/// Graph construction switches that do not belong in the spec file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildOptions {
    /// Drop biases and use parameter-free resampling so block convolutions at
    /// depth d map `base_channels * 2^d` (or `base_channels`) onto itself and
    /// the totals line up with the closed forms.
    pub closed_form_comparable: bool,
}

pub fn build_graph(spec: &ArchSpec) -> Result<ArchGraph, ArchError> {
    build_graph_with(spec, BuildOptions::default())
}

pub fn build_graph_with(spec: &ArchSpec, options: BuildOptions) -> Result<ArchGraph, ArchError> {
    spec.validate()?;
    let mut b = Builder {
        spec: *spec,
        bias: !options.closed_form_comparable,
        resample: if options.closed_form_comparable {
            Resample::ParameterFree
        } else {
            Resample::Standard
        },
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    let width = |d: usize| channels_at_depth(spec, d).expect("level within depth");

    let input = b.push(LayerKind::Input, 0, spec.in_channels, spec.in_channels, None, &[]);
    let mut cur = b.block(input, 0, width(0));
    let mut skips = vec![cur];
    for level in 1..=spec.depth {
        let ch = b.node_channels(cur);
        let down_out = match b.resample {
            Resample::Standard => ch,
            Resample::ParameterFree => width(level),
        };
        let down = b.push(LayerKind::Downsample(b.resample), level, ch, down_out, None, &[cur]);
        cur = b.block(down, level, width(level));
        skips.push(cur);
    }

    let last = match spec.head {
        Head::Segmentation => {
            for level in (0..spec.depth).rev() {
                let ch = b.node_channels(cur);
                let up = b.push(
                    LayerKind::Upsample(b.resample),
                    level,
                    ch,
                    width(level),
                    None,
                    &[cur],
                );
                let skip = skips[level];
                let skip_ch = b.node_channels(skip);
                let merged = match spec.skip_mode {
                    SkipMode::Add => b.push(LayerKind::Add, level, skip_ch, skip_ch, None, &[skip, up]),
                    SkipMode::Concat => {
                        let sum = skip_ch + width(level);
                        b.push(LayerKind::Concat, level, sum, sum, None, &[skip, up])
                    }
                };
                cur = b.block(merged, level, width(level));
            }
            let ch = b.node_channels(cur);
            b.push(LayerKind::Conv, 0, ch, spec.num_outputs, Some(1), &[cur])
        }
        Head::Classification => {
            let ch = b.node_channels(cur);
            let pool = b.push(LayerKind::GlobalMaxPool, spec.depth, ch, ch, None, &[cur]);
            b.push(LayerKind::Dense, spec.depth, ch, spec.num_outputs, None, &[pool])
        }
    };
    let level = b.nodes[last.0].depth_level;
    let phi = if spec.num_outputs == 1 {
        Activation::Sigmoid
    } else {
        Activation::Softmax
    };
    let act = b.push(
        LayerKind::Activation(phi),
        level,
        spec.num_outputs,
        spec.num_outputs,
        None,
        &[last],
    );
    b.push(LayerKind::Output, level, spec.num_outputs, spec.num_outputs, None, &[act]);

    let graph = ArchGraph::from_parts(*spec, b.nodes, b.edges);
    let violations = validate(&graph);
    if violations.is_empty() {
        Ok(graph)
    } else {
        Err(ArchError::InvalidGraph(violations))
    }
}

struct Builder {
    spec: ArchSpec,
    bias: bool,
    resample: Resample,
    nodes: Vec<LayerNode>,
    edges: Vec<(NodeId, NodeId)>,
}

impl Builder {
    fn push(
        &mut self,
        kind: LayerKind,
        depth_level: usize,
        channels_in: usize,
        channels_out: usize,
        kernel_width: Option<usize>,
        preds: &[NodeId],
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        let has_bias = self.bias
            && (matches!(kind, LayerKind::Conv | LayerKind::Dense)
                || kind == LayerKind::Upsample(Resample::Standard));
        self.nodes.push(LayerNode {
            id,
            kind,
            depth_level,
            channels_in,
            channels_out,
            kernel_width,
            has_bias,
        });
        self.edges.extend(preds.iter().map(|p| (*p, id)));
        id
    }

    fn node_channels(&self, id: NodeId) -> usize {
        self.nodes[id.0].channels_out
    }

    fn conv_relu(&mut self, from: NodeId, level: usize, width: usize) -> NodeId {
        let k = self.spec.kernel_width;
        let cin = self.node_channels(from);
        let conv = self.push(LayerKind::Conv, level, cin, width, Some(k), &[from]);
        self.push(
            LayerKind::Activation(Activation::Relu),
            level,
            width,
            width,
            None,
            &[conv],
        )
    }

    /// One Block at `level`, returning its output node.
    fn block(&mut self, input: NodeId, level: usize, width: usize) -> NodeId {
        let nu = self.spec.convs_per_block;
        match self.spec.block_kind {
            BlockKind::Unet => {
                let mut cur = input;
                for _ in 0..nu {
                    cur = self.conv_relu(cur, level, width);
                }
                cur
            }
            BlockKind::Resnet => {
                // The shortcut leaves from the first activation, which already
                // has the block width, so it needs no projection.
                let first = self.conv_relu(input, level, width);
                let mut cur = first;
                for _ in 1..nu {
                    cur = self.conv_relu(cur, level, width);
                }
                self.push(LayerKind::Add, level, width, width, None, &[first, cur])
            }
            BlockKind::Densenet => {
                let mut features = vec![input];
                let mut cur = input;
                for i in 0..nu {
                    let src = if i == 0 {
                        input
                    } else {
                        let sum: usize = features.iter().map(|f| self.node_channels(*f)).sum();
                        let preds = features.clone();
                        self.push(LayerKind::Concat, level, sum, sum, None, &preds)
                    };
                    cur = self.conv_relu(src, level, width);
                    features.push(cur);
                }
                cur
            }
        }
    }
}
