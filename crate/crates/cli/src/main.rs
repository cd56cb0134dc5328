//! `pocketnet`: inspect, count, train, compare and profile full and pocket
//! architectures, and run the multigrid reference solver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pocketnet::archgraph::{build_graph, spec_from_file, ArchSpec, Head};
use pocketnet::bench::{profile, sweep_report};
use pocketnet::costmodel::{closed_form_summary, count_params, estimate_costs, ClosedFormArgs};
use pocketnet::data::{
    export, gen_blobs, gen_twoclass, import, kfold_split, ClassBalance, Dataset, Manifest,
};
use pocketnet::io::write_atomic;
use pocketnet::multigrid::{sine_rhs, solve, GridHierarchy, SmootherConfig};
use pocketnet::trainer::{
    auc, cross_validate, evaluate, saturation_sweep, train, LossKind, TrainConfig,
};

/// Seed used whenever `--seed` is not given.
const DEFAULT_SEED: u64 = 7;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (spec format 1)");

#[derive(Debug, Parser)]
#[command(name = "pocketnet", version = VERSION, about = "Full and pocket CNN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the layer graph of a spec as a text summary and DOT.
    Inspect {
        #[arg(long)]
        spec: PathBuf,
        /// Write the DOT graph here instead of stdout.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Count parameters, MACs and activation memory.
    Count {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Also print the closed-form full and pocket counts for the spec.
        #[arg(long)]
        closed_form: bool,
        /// Input side length for MAC and activation estimates.
        #[arg(long)]
        input: Option<usize>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Train one model and report held-out metrics.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Folds used to carve out the held-out test split (one fold is held out).
        #[arg(long, default_value_t = 5)]
        holdout_folds: usize,
        /// Directory for history.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold cross-validation of the full and pocket variants of a spec.
    Crossval {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Directory for report.csv and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test metric of both variants against the training-set fraction.
    Saturate {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Test set directory; generated from `--test-count` when absent.
        #[arg(long)]
        test_data: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        test_count: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1.0")]
        fractions: Vec<f64>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Peak memory and step time of both variants over batch sizes.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 13)]
        steps: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Solve a 1D or 2D Poisson problem with V-cycles.
    Mgsolve {
        /// Finest grid has 2^m - 1 interior points per axis.
        #[arg(long, default_value_t = 7)]
        m: u32,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        dims: u8,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 2)]
        nu1: usize,
        #[arg(long, default_value_t = 2)]
        nu2: usize,
        #[arg(long, default_value_t = 2.0 / 3.0)]
        omega: f64,
        #[arg(long, default_value_t = 20)]
        max_cycles: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as NPY files plus a manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Generator::Blobs)]
        kind: Generator,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Noise standard deviation (blobs only).
        #[arg(long, default_value_t = 0.2)]
        noise: f32,
        #[arg(long, value_enum, default_value_t = Balance::Covidx)]
        balance: Balance,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    Blobs,
    Twoclass,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Balance {
    Balanced,
    Covidx,
}

/// Where the samples come from: a `gen-data` directory or an inline generator.
#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long, conflicts_with_all = ["count", "size", "noise", "data_seed"])]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0.2)]
    noise: f32,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    data_seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    no_normalize: bool,
}

impl TrainArgs {
    fn config(&self, spec: &ArchSpec) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            plateau_patience: self.patience,
            seed: self.seed,
            loss: match spec.head {
                Head::Segmentation => LossKind::DiceL2,
                Head::Classification => LossKind::CrossEntropy,
            },
            augment: !self.no_augment,
            normalize: !self.no_normalize,
            ..TrainConfig::default()
        }
    }
}

impl DataArgs {
    fn load(&self, spec: &ArchSpec) -> Result<Dataset> {
        self.load_with(spec, self.count, self.data_seed)
    }

    fn load_with(&self, spec: &ArchSpec, count: usize, seed: u64) -> Result<Dataset> {
        if let Some(dir) = &self.data {
            let (dataset, _) = import(dir).with_context(|| format!("reading {}", dir.display()))?;
            return Ok(dataset);
        }
        Ok(match spec.head {
            Head::Segmentation => Dataset::Segmentation(gen_blobs(seed, count, self.size, self.noise)?),
            Head::Classification => Dataset::Classification(gen_twoclass(
                seed,
                count,
                self.size,
                ClassBalance::Balanced,
            )?),
        })
    }
}

fn read_spec(path: &Path) -> Result<ArchSpec> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    spec_from_file(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, contents.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn closed_form_args(spec: &ArchSpec) -> ClosedFormArgs {
    ClosedFormArgs {
        convs_per_level: spec.convs_per_block as u64,
        kernel_width: spec.kernel_width as u64,
        spatial_dims: u32::from(spec.spatial_dims),
        c_in: spec.base_channels as u64,
        c_out: spec.base_channels as u64,
        depth: spec.depth as u32,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Inspect { spec, dot } => {
            let graph = build_graph(&read_spec(&spec)?)?;
            print!("{}", graph.summary());
            match dot {
                Some(path) => write(&path, &graph.to_dot())?,
                None => print!("{}", graph.to_dot()),
            }
        }
        Command::Count { spec, format, closed_form, input, batch } => {
            let spec = read_spec(&spec)?;
            let graph = build_graph(&spec)?;
            let report = match input {
                Some(side) => {
                    let shape = vec![side; usize::from(spec.spatial_dims)];
                    estimate_costs(&graph, &shape, batch)?
                }
                None => count_params(&graph)?,
            };
            let summary = if closed_form { Some(closed_form_summary(closed_form_args(&spec))?) } else { None };
            match format {
                Format::Table => {
                    print!("{}", report.to_table());
                    if let Some(s) = summary {
                        println!();
                        print!("{}", s.to_table());
                    }
                }
                Format::Json => {
                    let value = serde_json::json!({ "report": report, "closed_form": summary });
                    println!("{}", serde_json::to_string_pretty(&value)?);
                }
            }
        }
        Command::Train { spec, data, train: targs, holdout_folds, out } => {
            let spec = read_spec(&spec)?;
            let graph = build_graph(&spec)?;
            let dataset = data.load(&spec)?;
            let config = targs.config(&spec);
            let folds = kfold_split(dataset.len(), holdout_folds, config.seed)?;
            let test = folds[0].clone();
            let fit: Vec<usize> = folds[1..].concat();
            let outcome = train(&graph, &dataset.subset(&fit), &config)?;
            let eval = evaluate(&outcome.model, &dataset, &test, &config)?;
            let mean = eval.values.iter().sum::<f64>() / eval.values.len().max(1) as f64;
            let auc_value = match dataset {
                Dataset::Classification(_) => Some(auc(&eval.labels, &eval.scores)?),
                Dataset::Segmentation(_) => None,
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("history.csv"), &outcome.history.to_csv())?;
            let summary = serde_json::json!({
                "architecture": spec.block_kind.name(),
                "pocket": spec.pocket,
                "params": outcome.model.param_count(),
                "epochs_run": outcome.epochs_run,
                "final_lr": outcome.final_lr,
                "test_count": test.len(),
                "excluded": eval.excluded,
                "mean_metric": mean,
                "auc": auc_value,
            });
            write(&out.join("summary.json"), &format!("{}\n", serde_json::to_string_pretty(&summary)?))?;
            println!(
                "params {}  epochs {}  held-out mean {:.4}{}",
                outcome.model.param_count(),
                outcome.epochs_run,
                mean,
                auc_value.map(|a| format!("  auc {a:.4}")).unwrap_or_default()
            );
        }
        Command::Crossval { spec, k, data, train: targs, out } => {
            let spec = read_spec(&spec)?;
            let dataset = data.load(&spec)?;
            let report = cross_validate(&spec, &dataset, k, &targs.config(&spec))?;
            print!("{}", report.to_table());
            if let Some(dir) = out {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                write(&dir.join("report.csv"), &report.to_csv())?;
                write(&dir.join("report.json"), &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
            }
        }
        Command::Saturate { spec, data, test_data, test_count, fractions, train: targs, csv } => {
            let spec = read_spec(&spec)?;
            let train_set = data.load(&spec)?;
            let test_set = match test_data {
                Some(dir) => import(&dir).with_context(|| format!("reading {}", dir.display()))?.0,
                None if data.data.is_some() => bail!("--test-data is required with --data"),
                None => data.load_with(&spec, test_count, data.data_seed.wrapping_add(1))?,
            };
            let report = saturation_sweep(&spec, &train_set, &test_set, &fractions, &targs.config(&spec))?;
            let text = report.to_csv();
            print!("{text}");
            if let Some(path) = csv {
                write(&path, &text)?;
            }
        }
        Command::Bench { spec, data, batches, steps, seed, csv } => {
            let spec = read_spec(&spec)?;
            let dataset = data.load(&spec)?;
            let mut records = Vec::new();
            for variant in [spec.with_pocket(false), spec.with_pocket(true)] {
                records.extend(profile(&build_graph(&variant)?, &dataset, &batches, steps, seed)?);
            }
            let report = sweep_report(&records)?;
            print!("{}", report.csv);
            eprint!("{}", report.summary);
            if let Some(path) = csv {
                write(&path, &report.csv)?;
            }
        }
        Command::Mgsolve { m, dims, tol, nu1, nu2, omega, max_cycles, csv } => {
            let hier = match dims {
                1 => GridHierarchy::poisson_1d(m)?,
                _ => GridHierarchy::poisson_2d(m)?,
            };
            let cfg = SmootherConfig { omega, nu1, nu2 };
            let report = solve(&hier, &sine_rhs(&hier), tol, max_cycles, &cfg)?;
            let last = report.relative_residuals.last().copied().unwrap_or(f64::NAN);
            println!("{} after {} cycles, relative residual {last:e}", report.status(), report.cycles);
            if let Some(path) = csv {
                write(&path, &report.residual_csv())?;
            }
            if !report.converged {
                bail!("no convergence to {tol:e} within {max_cycles} cycles");
            }
        }
        Command::GenData { out, kind, count, size, noise, balance, seed } => {
            let (dataset, params) = match kind {
                Generator::Blobs => (
                    Dataset::Segmentation(gen_blobs(seed, count, size, noise)?),
                    serde_json::json!({ "noise_sigma": noise }),
                ),
                Generator::Twoclass => {
                    let balance = match balance {
                        Balance::Balanced => ClassBalance::Balanced,
                        Balance::Covidx => ClassBalance::COVIDX,
                    };
                    (
                        Dataset::Classification(gen_twoclass(seed, count, size, balance)?),
                        serde_json::json!({ "balance": format!("{balance:?}") }),
                    )
                }
            };
            let manifest = Manifest {
                kind: String::new(),
                generator: format!("{kind:?}").to_lowercase(),
                seed,
                count,
                size,
                params,
                labels: None,
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            export(&out, &dataset, manifest)?;
            println!("wrote {count} {} samples to {}", dataset.kind(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
