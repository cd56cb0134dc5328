//! Parameter, MAC and activation-memory accounting.
//!
//! Closed forms count `C` convolutions per resolution level whose widths
//! double per level (full) or stay fixed (pocket). Structural counts walk a
//! concrete [`ArchGraph`]. All FLOP figures are multiply-accumulates (MACs);
//! byte figures assume 32-bit storage.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archgraph::{validate, ArchGraph, LayerKind, Resample, Violation};

pub const BYTES_PER_VALUE: u64 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("argument {0} must be at least 1")]
    NonPositive(&'static str),
    #[error("integer overflow evaluating {0}")]
    Overflow(&'static str),
    #[error("graph failed validation ({} violation(s)); first: {}", .0.len(), .0[0])]
    Contract(Vec<Violation>),
    #[error("input shape {shape:?} must have {dims} extents divisible by {divisor}")]
    Shape {
        shape: Vec<usize>,
        dims: usize,
        divisor: usize,
    },
}

/// Arguments shared by the closed-form counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedFormArgs {
    /// Convolutions per resolution level.
    pub convs_per_level: u64,
    pub kernel_width: u64,
    pub spatial_dims: u32,
    pub c_in: u64,
    pub c_out: u64,
    pub depth: u32,
}

impl ClosedFormArgs {
    fn per_level(&self) -> Result<u128, CostError> {
        let checks = [
            ("C", self.convs_per_level),
            ("k", self.kernel_width),
            ("n", u64::from(self.spatial_dims)),
            ("c_in", self.c_in),
            ("c_out", self.c_out),
        ];
        for (name, v) in checks {
            if v == 0 {
                return Err(CostError::NonPositive(name));
            }
        }
        let stencil = u128::from(self.kernel_width)
            .checked_pow(self.spatial_dims)
            .ok_or(CostError::Overflow("k^n"))?;
        [self.convs_per_level, self.c_in, self.c_out]
            .into_iter()
            .try_fold(stencil, |acc, v| acc.checked_mul(u128::from(v)))
            .ok_or(CostError::Overflow("C k^n c_in c_out"))
    }
}

/// `(1/3) C k^n c_in c_out (4^(D+1) - 1)`, evaluated exactly.
pub fn n_full_closed_form(args: ClosedFormArgs) -> Result<u128, CostError> {
    let base = args.per_level()?;
    let geometric = 4u128
        .checked_pow(args.depth + 1)
        .ok_or(CostError::Overflow("4^(D+1)"))?
        - 1;
    // 4^(D+1) - 1 is always a multiple of 3.
    base.checked_mul(geometric / 3)
        .ok_or(CostError::Overflow("n_full"))
}

/// The pocket count as usually quoted: `D C k^n c_in c_out`.
pub fn n_pocket_closed_form(args: ClosedFormArgs) -> Result<u128, CostError> {
    if args.depth == 0 {
        return Err(CostError::NonPositive("D"));
    }
    args.per_level()?
        .checked_mul(u128::from(args.depth))
        .ok_or(CostError::Overflow("n_pocket"))
}

/// The pocket sum taken over every level `d = 0..=D`: `(D+1) C k^n c_in c_out`.
/// This is what a graph with `D` downsamplings actually contains per path.
pub fn n_pocket_all_levels(args: ClosedFormArgs) -> Result<u128, CostError> {
    args.per_level()?
        .checked_mul(u128::from(args.depth) + 1)
        .ok_or(CostError::Overflow("n_pocket (all levels)"))
}

/// `(4^(D+1) - 1) / (3D)` as an exact rational.
pub fn savings(depth: u32) -> Result<Ratio<u128>, CostError> {
    if depth == 0 {
        return Err(CostError::NonPositive("D"));
    }
    let num = 4u128
        .checked_pow(depth + 1)
        .ok_or(CostError::Overflow("4^(D+1)"))?
        - 1;
    Ok(Ratio::new(num, 3 * u128::from(depth)))
}

pub fn ratio_to_f64(r: &Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_params: u64,
    pub params_by_depth: BTreeMap<usize, u64>,
    /// Parameters of the final output layer (exempt from the pocket rule).
    pub output_params: u64,
    pub param_bytes: u64,
    /// Forward MACs for the whole batch; present once an input shape is known.
    pub forward_macs: Option<u64>,
    /// Store-all-activations bytes for the batch.
    pub activation_bytes: Option<u64>,
    pub input_shape: Option<Vec<usize>>,
    pub batch: Option<usize>,
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("# FLOPs are reported as multiply-accumulates (MACs); bytes assume f32\n");
        let _ = writeln!(out, "{:<20} {:>16}", "total_params", self.total_params);
        let _ = writeln!(out, "{:<20} {:>16}", "output_params", self.output_params);
        let _ = writeln!(out, "{:<20} {:>16}", "param_bytes", self.param_bytes);
        if let Some(m) = self.forward_macs {
            let _ = writeln!(out, "{:<20} {:>16}", "forward_macs", m);
        }
        if let Some(a) = self.activation_bytes {
            let _ = writeln!(out, "{:<20} {:>16}", "activation_bytes", a);
        }
        for (level, count) in &self.params_by_depth {
            let _ = writeln!(out, "{:<20} {:>16}", format!("params[depth={level}]"), count);
        }
        out
    }

    pub const CSV_HEADER: &'static str =
        "total_params,output_params,param_bytes,forward_macs,activation_bytes";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.total_params,
            self.output_params,
            self.param_bytes,
            opt(self.forward_macs),
            opt(self.activation_bytes)
        )
    }
}

fn pow_usize(base: usize, exp: u8) -> u64 {
    (base as u64).pow(u32::from(exp))
}

/// Parameters owned by one node of `graph`.
pub fn node_params(graph: &ArchGraph, id: crate::archgraph::NodeId) -> u64 {
    let node = graph.node(id);
    let n = graph.spec.spatial_dims;
    let bias = if node.has_bias { node.channels_out as u64 } else { 0 };
    let (cin, cout) = (node.channels_in as u64, node.channels_out as u64);
    match node.kind {
        LayerKind::Conv => pow_usize(node.kernel_width.unwrap_or(1), n) * cin * cout + bias,
        LayerKind::Upsample(Resample::Standard) => pow_usize(2, n) * cin * cout + bias,
        LayerKind::Dense => cin * cout + bias,
        _ => 0,
    }
}

fn checked_graph(graph: &ArchGraph) -> Result<(), CostError> {
    let violations = validate(graph);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CostError::Contract(violations))
    }
}

pub fn count_params(graph: &ArchGraph) -> Result<CostReport, CostError> {
    checked_graph(graph)?;
    let mut by_depth = BTreeMap::new();
    for level in 0..=graph.spec.depth {
        by_depth.insert(level, 0u64);
    }
    let mut total = 0u64;
    for node in &graph.nodes {
        let p = node_params(graph, node.id);
        *by_depth.entry(node.depth_level).or_insert(0) += p;
        total += p;
    }
    let output_params = graph
        .output_layer()
        .map(|id| node_params(graph, id))
        .unwrap_or(0);
    Ok(CostReport {
        total_params: total,
        params_by_depth: by_depth,
        output_params,
        param_bytes: total * BYTES_PER_VALUE,
        forward_macs: None,
        activation_bytes: None,
        input_shape: None,
        batch: None,
    })
}

/// Adds forward MACs and the store-all activation bound for `input_shape`
/// (spatial extents only) and `batch` samples.
pub fn estimate_costs(
    graph: &ArchGraph,
    input_shape: &[usize],
    batch: usize,
) -> Result<CostReport, CostError> {
    let mut report = count_params(graph)?;
    let dims = usize::from(graph.spec.spatial_dims);
    let divisor = 1usize << graph.spec.depth;
    if input_shape.len() != dims || input_shape.iter().any(|&s| s == 0 || s % divisor != 0) {
        return Err(CostError::Shape {
            shape: input_shape.to_vec(),
            dims,
            divisor,
        });
    }
    let volume_at = |level: usize| -> u64 { input_shape.iter().map(|&s| (s >> level) as u64).product() };

    // Nodes downstream of a global pool carry one value per channel.
    let mut pooled = vec![false; graph.nodes.len()];
    let mut macs = 0u64;
    let mut values = 0u64;
    for &id in &graph.topo_order {
        let node = graph.node(id);
        let preds = graph.predecessors(id);
        pooled[id.0] = node.kind == LayerKind::GlobalMaxPool || preds.iter().any(|p| pooled[p.0]);
        let volume = if pooled[id.0] { 1 } else { volume_at(node.depth_level) };
        let (cin, cout) = (node.channels_in as u64, node.channels_out as u64);
        macs += match node.kind {
            LayerKind::Conv => {
                pow_usize(node.kernel_width.unwrap_or(1), graph.spec.spatial_dims) * cin * cout * volume
            }
            // Every output pixel of a stride-2 transposed conv reads one input pixel.
            LayerKind::Upsample(Resample::Standard) => cin * cout * volume,
            LayerKind::Dense => cin * cout,
            _ => 0,
        };
        if node.kind != LayerKind::Output {
            values += cout * volume;
        }
    }
    let batch64 = batch as u64;
    report.forward_macs = Some(macs * batch64);
    report.activation_bytes = Some(values * batch64 * BYTES_PER_VALUE);
    report.input_shape = Some(input_shape.to_vec());
    report.batch = Some(batch);
    Ok(report)
}

/// `1234567` as `"1,234,567"`.
pub fn group_digits(n: u128) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Side-by-side closed-form figures for a spec, including both pocket sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormSummary {
    pub args: ClosedFormArgs,
    pub n_full: u128,
    pub n_pocket: u128,
    pub n_pocket_all_levels: u128,
    pub savings: f64,
    pub savings_exact: String,
    pub savings_approx: f64,
}

pub fn closed_form_summary(args: ClosedFormArgs) -> Result<ClosedFormSummary, CostError> {
    let s = savings(args.depth)?;
    Ok(ClosedFormSummary {
        args,
        n_full: n_full_closed_form(args)?,
        n_pocket: n_pocket_closed_form(args)?,
        n_pocket_all_levels: n_pocket_all_levels(args)?,
        savings: ratio_to_f64(&s),
        savings_exact: format!("{}/{}", s.numer(), s.denom()),
        savings_approx: 4f64.powi(args.depth as i32) / f64::from(args.depth),
    })
}

impl ClosedFormSummary {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let a = &self.args;
        let _ = writeln!(
            out,
            "closed form: C={} k={} n={} c_in={} c_out={} D={}",
            a.convs_per_level, a.kernel_width, a.spatial_dims, a.c_in, a.c_out, a.depth
        );
        let _ = writeln!(out, "{:<28} {:>16}", "n_full", group_digits(self.n_full));
        let _ = writeln!(out, "{:<28} {:>16}", "n_pocket (D * C k^n c c)", group_digits(self.n_pocket));
        let _ = writeln!(out, "{:<28} {:>16}", "n_pocket (D+1 levels)", group_digits(self.n_pocket_all_levels));
        let _ = writeln!(out, "{:<28} {:>16}", "savings (exact)", self.savings_exact);
        let _ = writeln!(out, "{:<28} {:>16.4}", "savings", self.savings);
        let _ = writeln!(out, "{:<28} {:>16.4}", "savings ~ 4^D / D", self.savings_approx);
        out.push_str(
            "note: summing the pocket count over all D+1 levels gives (D+1) C k^n c_in c_out; \
             the D-multiple form is the one the savings ratio divides by\n",
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archgraph::{build_graph, ArchSpec, LayerNode, NodeId};

    fn args(c: u64, k: u64, n: u32, cin: u64, cout: u64, d: u32) -> ClosedFormArgs {
        ClosedFormArgs {
            convs_per_level: c,
            kernel_width: k,
            spatial_dims: n,
            c_in: cin,
            c_out: cout,
            depth: d,
        }
    }

    fn brute_full(a: ClosedFormArgs) -> u128 {
        (0..=a.depth)
            .map(|d| {
                let scale = 1u128 << d;
                u128::from(a.convs_per_level)
                    * u128::from(a.kernel_width).pow(a.spatial_dims)
                    * (u128::from(a.c_in) * scale)
                    * (u128::from(a.c_out) * scale)
            })
            .sum()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(n_full_closed_form(args(2, 3, 2, 16, 16, 3)).unwrap(), 391_680);
        assert_eq!(n_full_closed_form(args(1, 1, 2, 1, 1, 0)).unwrap(), 1);
        let a3 = args(2, 3, 3, 16, 16, 4);
        assert_eq!(n_full_closed_form(a3).unwrap(), brute_full(a3));

        assert_eq!(n_pocket_closed_form(args(2, 3, 2, 16, 16, 3)).unwrap(), 13_824);
        assert_eq!(n_pocket_closed_form(args(1, 3, 2, 8, 8, 1)).unwrap(), 576);
        assert_eq!(n_pocket_all_levels(args(2, 3, 2, 16, 16, 3)).unwrap(), 18_432);
        let ratio = 391_680f64 / 13_824f64;
        assert!((ratio - 28.333_333).abs() < 1e-5);
    }

    #[test]
    fn savings_examples() {
        assert_eq!(savings(3).unwrap(), Ratio::new(255, 9));
        assert_eq!(savings(4).unwrap(), Ratio::new(1023, 12));
        assert!((ratio_to_f64(&savings(4).unwrap()) - 85.25).abs() < 1e-12);
        // The 4^D / D shorthand undershoots the exact ratio.
        assert!(ratio_to_f64(&savings(4).unwrap()) >= 4f64.powi(4) / 4.0);
        assert_eq!(savings(0), Err(CostError::NonPositive("D")));
    }

    #[test]
    fn closed_form_errors() {
        assert_eq!(
            n_full_closed_form(args(0, 3, 2, 1, 1, 1)),
            Err(CostError::NonPositive("C"))
        );
        assert!(matches!(
            n_full_closed_form(args(u64::MAX, u64::MAX, 3, u64::MAX, 1, 60)),
            Err(CostError::Overflow(_))
        ));
    }

    fn single_conv(cin: usize, cout: usize) -> ArchGraph {
        let spec = ArchSpec {
            depth: 1,
            in_channels: cin,
            base_channels: cout,
            num_outputs: cout,
            ..ArchSpec::default()
        };
        let node = |id, kind, cin, cout, k: Option<usize>, bias| LayerNode {
            id: NodeId(id),
            kind,
            depth_level: 0,
            channels_in: cin,
            channels_out: cout,
            kernel_width: k,
            has_bias: bias,
        };
        let nodes = vec![
            node(0, LayerKind::Input, cin, cin, None, false),
            node(1, LayerKind::Conv, cin, cout, Some(3), true),
            node(2, LayerKind::Output, cout, cout, None, false),
        ];
        ArchGraph::from_parts(spec, nodes, vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))])
    }

    #[test]
    fn single_conv_counts() {
        let g = single_conv(16, 32);
        assert_eq!(count_params(&g).unwrap().total_params, 4_640);
        let g = single_conv(16, 16);
        let r = estimate_costs(&g, &[64, 64], 1).unwrap();
        assert_eq!(r.forward_macs, Some(9_437_184));
    }

    #[test]
    fn unvalidated_graph_is_rejected() {
        let mut g = build_graph(&ArchSpec::default()).unwrap();
        g.nodes[1].channels_in = 7;
        assert!(matches!(count_params(&g), Err(CostError::Contract(_))));
    }

    #[test]
    fn shape_must_divide() {
        let g = build_graph(&ArchSpec::default()).unwrap();
        assert!(matches!(estimate_costs(&g, &[60, 64], 1), Err(CostError::Shape { .. })));
        assert!(matches!(estimate_costs(&g, &[64], 1), Err(CostError::Shape { .. })));
    }

    #[test]
    fn activation_bytes_scale_and_order() {
        let full = build_graph(&ArchSpec::default()).unwrap();
        let pocket = build_graph(&ArchSpec::default().with_pocket(true)).unwrap();
        for batch in [1, 2, 4, 8] {
            let f = estimate_costs(&full, &[64, 64], batch).unwrap();
            let p = estimate_costs(&pocket, &[64, 64], batch).unwrap();
            assert!(p.activation_bytes < f.activation_bytes);
            let f2 = estimate_costs(&full, &[64, 64], 2 * batch).unwrap();
            assert_eq!(f2.activation_bytes.unwrap(), 2 * f.activation_bytes.unwrap());
        }
    }

    #[test]
    fn report_totals_are_consistent() {
        let g = build_graph(&ArchSpec::default()).unwrap();
        let r = count_params(&g).unwrap();
        assert_eq!(r.total_params, r.params_by_depth.values().sum::<u64>());
        assert_eq!(r.param_bytes, 4 * r.total_params);
        assert_eq!(r.output_params, 17);
        let back: CostReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_table().contains("MACs"));
        assert_eq!(r.csv_row().split(',').count(), CostReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn topological_reordering_keeps_count() {
        let g = build_graph(&ArchSpec::default()).unwrap();
        let base = count_params(&g).unwrap();
        // Reverse the node vector and remap ids; the count must not move.
        let n = g.nodes.len();
        let remap = |id: NodeId| NodeId(n - 1 - id.0);
        let mut nodes: Vec<LayerNode> = g.nodes.iter().rev().cloned().collect();
        for node in &mut nodes {
            node.id = remap(node.id);
        }
        let edges = g.edges.iter().map(|(a, b)| (remap(*a), remap(*b))).collect();
        let h = ArchGraph::from_parts(g.spec, nodes, edges);
        let other = count_params(&h).unwrap();
        assert_eq!(base.total_params, other.total_params);
        assert_eq!(base.params_by_depth, other.params_by_depth);
    }

    #[test]
    fn default_unet_full_to_pocket_ratio() {
        let spec = ArchSpec::default();
        let full = count_params(&build_graph(&spec).unwrap()).unwrap().total_params;
        let pocket = count_params(&build_graph(&spec.with_pocket(true)).unwrap()).unwrap().total_params;
        assert_eq!((full, pocket), (433_361, 33_457));
        let ratio = full as f64 / pocket as f64;
        assert!((10.0..=30.0).contains(&ratio), "{ratio}");
    }
}
