//! `densiprune` command-line front end.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use densiprune::cost::CostConventions;
use densiprune::experiment::{self, parse_shape};
use densiprune::tables::reproduce_tables;
use densiprune::{Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "densiprune", version, about = "Activation-density driven pruning in training")]
struct Cli {
    /// Emit machine-readable JSON on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ConventionArgs {
    /// Count one bias parameter per output channel.
    #[arg(long)]
    include_bias: bool,
    /// Leave residual projection convs out of the totals.
    #[arg(long)]
    no_projections: bool,
}

impl ConventionArgs {
    fn conventions(&self) -> CostConventions {
        CostConventions {
            include_bias: self.include_bias,
            count_projections: !self.no_projections,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one architecture without pruning.
    Train(RunArgs),
    /// Prune in training, then train the final network.
    PruneRun(RunArgs),
    /// Compare MACs and parameters of two architectures.
    Cost {
        /// Baseline architecture file or built-in name.
        baseline: String,
        /// Pruned architecture file or built-in name.
        pruned: String,
        /// Input shape override, e.g. 3x32x32.
        #[arg(long)]
        input: Option<String>,
        /// Class-count override.
        #[arg(long)]
        classes: Option<usize>,
        #[command(flatten)]
        conventions: ConventionArgs,
    },
    /// Recompute the published complexity tables and reduction ratios.
    ReproduceTables {
        #[command(flatten)]
        conventions: ConventionArgs,
    },
    /// Export channel-mean activation maps of one test image.
    ExportColormap {
        #[command(flatten)]
        run: RunArgs,
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Measured-layer indices, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        /// Index into the test set.
        #[arg(long, default_value_t = 0)]
        image: usize,
    },
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn print_json<S: serde::Serialize>(value: &S) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<bool> {
    experiment::init_thread_pool()?;
    let mut stdout = std::io::stdout();
    let mut sink = std::io::sink();
    let out: &mut dyn Write = if cli.json { &mut sink } else { &mut stdout };
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let t = experiment::cmd_train(&cfg, out)?;
            if cli.json {
                print_json(&t.metrics);
            } else {
                println!(
                    "trained {} for {} epochs: test accuracy {:.2}%",
                    t.arch.name,
                    t.history.len(),
                    100.0 * t.metrics.final_test_accuracy
                );
            }
        }
        Command::PruneRun(args) => {
            let cfg = load_config(&args)?;
            let r = experiment::cmd_prune_run(&cfg, out)?;
            if cli.json {
                print_json(&serde_json::json!({
                    "stages": r.stages,
                    "events": r.events,
                    "final_index": r.final_index,
                    "final": r.final_metrics,
                    "cost": r.cost,
                }));
            }
        }
        Command::Cost {
            baseline,
            pruned,
            input,
            classes,
            conventions,
        } => {
            let input = input.as_deref().map(parse_shape).transpose()?;
            let a = experiment::resolve_arch_arg(&baseline, input, classes)?;
            let b = experiment::resolve_arch_arg(&pruned, input, classes)?;
            let c = experiment::cmd_cost(&a, &b, conventions.conventions())?;
            if cli.json {
                print_json(&c);
            } else {
                print!("{}", experiment::format_cost(&c));
            }
        }
        Command::ReproduceTables { conventions } => {
            let r = reproduce_tables(conventions.conventions())?;
            if cli.json {
                print_json(&r);
            } else {
                print!("{}", experiment::format_tables(&r));
            }
            return Ok(r.cells_pass());
        }
        Command::ExportColormap {
            run,
            checkpoint,
            layers,
            image,
        } => {
            let cfg = load_config(&run)?;
            let (export, paths) = experiment::cmd_export_colormap(&cfg, &checkpoint, &layers, image)?;
            if cli.json {
                print_json(&serde_json::json!({
                    "layer_indices": export.layer_indices,
                    "image_index": export.image_index,
                    "files": paths,
                }));
            } else {
                for p in paths {
                    println!("{}", p.display());
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            exit(&e)
        }
    }
}

fn exit(e: &Error) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
