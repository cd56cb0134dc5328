//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run all with `cargo test --test acceptance`, or a subset by number:
//! `cargo test --test acceptance -- 1 8 9`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use pocketnet::archgraph::{build_graph, build_graph_with, ArchSpec, BlockKind, BuildOptions};
use pocketnet::bench::profile;
use pocketnet::costmodel::{
    count_params, n_full_closed_form, n_pocket_all_levels, n_pocket_closed_form, savings, ClosedFormArgs,
};
use pocketnet::data::{gen_blobs, Dataset};
use pocketnet::multigrid::{sine_rhs, solve, GridHierarchy, SmootherConfig};
use pocketnet::tensor::{Tape, Tensor};
use pocketnet::trainer::stats::Method;
use pocketnet::trainer::{auc, cross_validate, saturation_sweep, wilcoxon_signed_rank, TrainConfig, TrainError};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Epoch budget for the training criteria; keeps the whole suite near a
/// quarter of an hour on one core.
const EPOCHS: usize = 20;

fn training_config() -> TrainConfig {
    TrainConfig { epochs: EPOCHS, ..TrainConfig::default() }
}

fn args(c: u64, k: u64, n: u32, c_in: u64, c_out: u64, d: u32) -> ClosedFormArgs {
    ClosedFormArgs { convs_per_level: c, kernel_width: k, spatial_dims: n, c_in, c_out, depth: d }
}

fn closed_form_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(1);
    for _ in 0..50 {
        let a = args(
            r.random_range(1..=4),
            r.random_range(1..=7),
            r.random_range(1..=3),
            r.random_range(1..=64),
            r.random_range(1..=64),
            r.random_range(1..=8),
        );
        let per_level = u128::from(a.convs_per_level)
            * u128::from(a.kernel_width).pow(a.spatial_dims)
            * u128::from(a.c_in)
            * u128::from(a.c_out);
        let brute: u128 = (0..=a.depth).map(|d| per_level * 4u128.pow(d)).sum();
        let full = n_full_closed_form(a).map_err(|e| e.to_string())?;
        let pocket = n_pocket_closed_form(a).map_err(|e| e.to_string())?;
        if full != brute {
            return Err(format!("{a:?}: closed form {full} vs sum {brute}"));
        }
        if savings(a.depth).map_err(|e| e.to_string())? != Ratio::new(full, pocket) {
            return Err(format!("{a:?}: savings differs from {full}/{pocket}"));
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(1), format!("50 tuples exact in {:.3} s", elapsed.as_secs_f64()))
}

fn graph_formula_agreement() -> Outcome {
    let comparable = BuildOptions { closed_form_comparable: true };
    let mut checked = 0;
    for depth in 1..=5usize {
        let c0 = 4;
        let spec = ArchSpec { depth, base_channels: c0, in_channels: c0, ..ArchSpec::default() };
        // Encoder blocks cover levels 0..=D, decoder blocks 0..D.
        let cf = |d: u32| args(spec.convs_per_block as u64, 3, 2, c0 as u64, c0 as u64, d);
        let d = depth as u32;
        let full = n_full_closed_form(cf(d)).unwrap() + n_full_closed_form(cf(d - 1)).unwrap();
        let pocket = n_pocket_all_levels(cf(d)).unwrap() + n_pocket_all_levels(cf(d - 1)).unwrap();
        for (pocket_flag, expected) in [(false, full), (true, pocket)] {
            let g = build_graph_with(&spec.with_pocket(pocket_flag), comparable).map_err(|e| e.to_string())?;
            let report = count_params(&g).map_err(|e| e.to_string())?;
            let body = u128::from(report.total_params - report.output_params);
            if body != expected {
                return Err(format!("unet D={depth} pocket={pocket_flag}: graph {body} vs closed form {expected}"));
            }
            checked += 1;
        }
    }

    // D=2, c0=4, nu=2, k=3, one input channel, biases and learned upsampling.
    let conv = |cin: u64, cout: u64| 9 * cin * cout + cout;
    let tconv = |cin: u64, cout: u64| 4 * cin * cout + cout;
    let head = 4 + 1;
    let unet_full = conv(1, 4) + conv(4, 4)
        + conv(4, 8) + conv(8, 8)
        + conv(8, 16) + conv(16, 16)
        + tconv(16, 8) + conv(8, 8) + conv(8, 8)
        + tconv(8, 4) + conv(4, 4) + conv(4, 4)
        + head;
    let unet_pocket = conv(1, 4) + conv(4, 4) + 2 * (conv(4, 4) + conv(4, 4))
        + 2 * (tconv(4, 4) + conv(4, 4) + conv(4, 4))
        + head;
    let dense_full = conv(1, 4) + conv(5, 4)
        + conv(4, 8) + conv(12, 8)
        + conv(8, 16) + conv(24, 16)
        + tconv(16, 8) + conv(8, 8) + conv(16, 8)
        + tconv(8, 4) + conv(4, 4) + conv(8, 4)
        + head;
    let dense_pocket = conv(1, 4) + conv(5, 4) + 2 * (conv(4, 4) + conv(8, 4))
        + 2 * (tconv(4, 4) + conv(4, 4) + conv(8, 4))
        + head;
    let fixtures = [
        (BlockKind::Unet, false, unet_full, 6677),
        (BlockKind::Unet, true, unet_pocket, 1513),
        // Residual shortcuts carry no weights.
        (BlockKind::Resnet, false, unet_full, 6677),
        (BlockKind::Resnet, true, unet_pocket, 1513),
        (BlockKind::Densenet, false, dense_full, 8873),
        (BlockKind::Densenet, true, dense_pocket, 2125),
    ];
    for (kind, pocket, hand, frozen) in fixtures {
        let spec = ArchSpec { block_kind: kind, depth: 2, base_channels: 4, pocket, ..ArchSpec::default() };
        let got = count_params(&build_graph(&spec).unwrap()).unwrap().total_params;
        if got != hand || hand != frozen {
            return Err(format!("{} pocket={pocket}: graph {got}, hand count {hand}, fixture {frozen}", kind.name()));
        }
        checked += 1;
    }
    Ok(format!("{checked} graphs match their closed forms or hand counts"))
}

fn table_ratio_anchor() -> Outcome {
    let spec = ArchSpec { depth: 4, ..ArchSpec::default() };
    let full = count_params(&build_graph(&spec).unwrap()).unwrap().total_params;
    let pocket = count_params(&build_graph(&spec.with_pocket(true)).unwrap()).unwrap().total_params;
    let ratio = full as f64 / pocket as f64;
    let shallow = ArchSpec::default();
    let shallow_ratio = count_params(&build_graph(&shallow).unwrap()).unwrap().total_params as f64
        / count_params(&build_graph(&shallow.with_pocket(true)).unwrap()).unwrap().total_params as f64;
    check(
        (10.0..=30.0).contains(&ratio),
        format!(
            "D=4 full {full} / pocket {pocket} = {ratio:.2} (D=3 gives {shallow_ratio:.2}; 5.5 M / 0.150 M = {:.1})",
            5.5e6 / 0.150e6
        ),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cases = common::gradient_suite(20);
    let elapsed = start.elapsed();
    let worst = cases.iter().max_by(|a, b| a.error.total_cmp(&b.error)).unwrap();
    let failing: Vec<&str> = cases.iter().filter(|c| !(c.error <= 1e-4)).map(|c| c.name.as_str()).collect();
    check(
        failing.is_empty() && cases.len() >= 20 && elapsed < Duration::from_secs(30),
        format!(
            "{} cases, worst {:.2e} ({}), {:.1} s{}",
            cases.len(),
            worst.error,
            worst.name,
            elapsed.as_secs_f64(),
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }
        ),
    )
}

fn dice_loss_identities() -> Outcome {
    let mut r = common::rng(5);
    let y = common::positive_tensor(&mut r, &[2, 1, 5, 5]);
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(y.clone());
    let b = tape.constant(y);
    let zero = tape.constant(Tensor::zeros(&[2, 1, 5, 5]));
    let truth = tape.constant(Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap());
    let half = tape.constant(Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap());
    let mut value = |p, q| tape.dice_l2_loss(p, q).map(|l| tape.value(l).item()).map_err(|e| e.to_string());
    let (same, empty, third) = (value(a, b)?, value(a, zero)?, value(truth, half)?);
    check(
        same.abs() <= 1e-12 && (empty - 1.0).abs() <= 1e-12 && (third - 1.0 / 3.0).abs() <= 1e-12,
        format!("loss(Y,Y) = {same:e}, loss(Y,0) = {empty}, hand case = {third}"),
    )
}

fn desk_scale_comparability() -> Outcome {
    let start = Instant::now();
    let data = Dataset::Segmentation(gen_blobs(7, 200, 64, 0.2).unwrap());
    let report = cross_validate(&ArchSpec::default(), &data, 5, &training_config()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (full, pocket) = (report.a.mean, report.b.mean);
    let gap = (full - pocket).abs();
    check(
        full >= 0.85 && pocket >= 0.85 && gap <= 0.05 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "mean Dice full {full:.4}, pocket {pocket:.4}, gap {gap:.4}, {EPOCHS} epochs, {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn memory_time_directionality() -> Outcome {
    let data = Dataset::Segmentation(gen_blobs(7, 32, 64, 0.2).unwrap());
    let batches = [1, 2, 4, 8];
    let spec = ArchSpec::default();
    let run = |pocket| profile(&build_graph(&spec.with_pocket(pocket)).unwrap(), &data, &batches, 13, 7);
    let full = run(false).map_err(|e| e.to_string())?;
    let pocket = run(true).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut rows = Vec::new();
    for (f, p) in full.iter().zip(&pocket) {
        ok &= p.peak_alloc_bytes < f.peak_alloc_bytes;
        if f.batch_size >= 4 {
            ok &= p.mean_step_seconds < f.mean_step_seconds;
        }
        rows.push(format!(
            "b{} peak {:.1}/{:.1} MB step {:.3}/{:.3} s",
            f.batch_size,
            f.peak_alloc_bytes as f64 / 1e6,
            p.peak_alloc_bytes as f64 / 1e6,
            f.mean_step_seconds,
            p.mean_step_seconds
        ));
    }
    check(ok, format!("full/pocket {}", rows.join("; ")))
}

fn multigrid_convergence() -> Outcome {
    let hier = GridHierarchy::poisson_1d(7).map_err(|e| e.to_string())?;
    let finest = hier.depth();
    let f = sine_rhs(&hier);
    let report = solve(&hier, &f, 1e-8, 20, &SmootherConfig::default()).map_err(|e| e.to_string())?;
    let a: DMatrix<f64> = hier.dense_operator(finest);
    let direct = a.lu().solve(&DVector::from_vec(f)).ok_or("dense operator is singular")?;
    let err = report.solution.iter().zip(direct.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    let rel = *report.relative_residuals.last().unwrap();
    check(
        hier.size(finest) == 127 && report.converged && report.cycles <= 20 && rel <= 1e-8 && err <= 1e-6,
        format!("{} points, {} cycles, relative residual {rel:.2e}, max error vs direct {err:.2e}", hier.size(finest), report.cycles),
    )
}

fn statistics_oracles() -> Outcome {
    let mut r = common::rng(9);
    let (mut tested, mut worst) = (0, 0.0f64);
    while tested < 100 {
        let n = r.random_range(5..=10);
        // Half-integer grids make ties and zero differences common.
        let a: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..8u8)) * 0.5).collect();
        let b: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..8u8)) * 0.5).collect();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        match wilcoxon_signed_rank(&a, &b) {
            Ok(res) => {
                if res.method != Method::Exact {
                    return Err(format!("n={n} did not use the exact distribution"));
                }
                worst = worst.max((res.p_value - common::brute_force_wilcoxon(&diffs)).abs());
                tested += 1;
            }
            Err(TrainError::Domain(_) | TrainError::Degenerate(_)) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    let mut auc_worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(2..60);
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..25u8)) / 25.0).collect();
        let got = auc(&labels, &scores).map_err(|e| e.to_string())?;
        auc_worst = auc_worst.max((got - common::pairwise_auc(&labels, &scores)).abs());
    }
    check(
        worst <= 1e-12 && auc_worst <= 1e-12,
        format!("100 Wilcoxon samples max |dp| {worst:.1e}; 100 AUC sets max |d| {auc_worst:.1e}"),
    )
}

fn saturation_sweep_gain() -> Outcome {
    let train = Dataset::Segmentation(gen_blobs(7, 200, 64, 0.2).unwrap());
    let test = Dataset::Segmentation(gen_blobs(8, 100, 64, 0.2).unwrap());
    let report = saturation_sweep(&ArchSpec::default(), &train, &test, &[0.1, 0.25, 0.5, 1.0], &training_config())
        .map_err(|e| e.to_string())?;
    let (first, last) = (&report.points[0], report.points.last().unwrap());
    let (gain_full, gain_pocket) = (last.full - first.full, last.pocket - first.pocket);
    let curve: Vec<String> =
        report.points.iter().map(|p| format!("{}: {:.3}/{:.3}", p.fraction, p.full, p.pocket)).collect();
    check(
        gain_full >= 0.02 && gain_pocket >= 0.02,
        format!("gain full {gain_full:.4}, pocket {gain_pocket:.4} (full/pocket {})", curve.join(", ")),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("closed-form equivalence", closed_form_equivalence),
        ("graph/formula agreement", graph_formula_agreement),
        ("full/pocket ratio anchor", table_ratio_anchor),
        ("gradient suite", gradient_suite),
        ("dice-loss identities", dice_loss_identities),
        ("desk-scale comparability", desk_scale_comparability),
        ("memory/time directionality", memory_time_directionality),
        ("multigrid convergence", multigrid_convergence),
        ("statistics oracles", statistics_oracles),
        ("saturation sweep", saturation_sweep_gain),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS {number:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {number:>2} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
