//! Command-line entry points: dataset generation, partition and schedule
//! debugging, training, evaluation, ablation sweeps, CSV reporting.
//!
//! Every failure exits nonzero with a single machine-readable JSON line on
//! stderr. MESHSIM_THREADS caps the worker pool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use meshsim::adaptive::{divide_mesh_graph, tune_mp_steps, SubgraphPartition};
use meshsim::harness::{
    ablate, evaluate, gen_dataset, load_dataset, report, train, write_dataset, DatasetSpec,
    RunConfig,
};
use meshsim::hierarchy::io::read_multilevel;
use meshsim::mesh::io::read_mesh;
use meshsim::model::load_checkpoint;

#[derive(Parser)]
#[command(name = "meshsim", about = "Hierarchical mesh-graph network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory from a dataset spec file.
    GenDataset {
        /// Dataset spec (JSON); "desk" or "paper" select the built-in recipes.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a mesh file's directed edges into direction groups.
    Partition {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tune the per-(level, group) step table for a hierarchy directory.
    TuneSteps {
        /// Directory holding hierarchy.json and the level mesh files.
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        cap: u32,
    },
    /// Train one run config on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Run config the checkpoint was trained with.
        #[arg(long)]
        config: PathBuf,
    },
    /// Train every config in a list and write their run directories.
    Ablate {
        /// JSON array of run configs.
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flatten run.json files under a directory into one CSV.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::GenDataset { spec, out } => {
            let spec = match spec.as_str() {
                "desk" => DatasetSpec::desk_default(),
                "paper" => DatasetSpec::paper_scale(),
                path => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| format!("reading {path}: {e}"))?;
                    serde_json::from_str(&text).map_err(|e| format!("parsing {path}: {e}"))?
                }
            };
            let dataset = gen_dataset(&spec).map_err(|e| e.to_string())?;
            write_dataset(&out, &dataset).map_err(|e| e.to_string())?;
            println!(
                "{{\"samples\":{},\"train\":{},\"val\":{},\"test\":{}}}",
                dataset.samples.len(),
                dataset.splits.train.len(),
                dataset.splits.val.len(),
                dataset.splits.test.len()
            );
            Ok(())
        }
        Command::Partition { mesh, groups, seed } => {
            let (graph, _) = read_mesh(&mesh).map_err(|e| e.to_string())?;
            let partition = divide_mesh_graph(&graph, groups, seed).map_err(|e| e.to_string())?;
            let json = serde_json::to_string(&partition).map_err(|e| e.to_string())?;
            println!("{json}");
            Ok(())
        }
        Command::TuneSteps {
            hierarchy,
            groups,
            seed,
            cap,
        } => {
            let (multilevel, _) = read_multilevel(&hierarchy).map_err(|e| e.to_string())?;
            let partitions: Vec<SubgraphPartition> = multilevel
                .levels
                .iter()
                .map(|g| divide_mesh_graph(g, groups, seed))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let schedule =
                tune_mp_steps(&multilevel, &partitions, cap).map_err(|e| e.to_string())?;
            let json = serde_json::to_string(&schedule).map_err(|e| e.to_string())?;
            println!("{json}");
            Ok(())
        }
        Command::Train {
            config,
            dataset,
            out,
        } => {
            let config: RunConfig = read_json(&config)?;
            let dataset = load_dataset(&dataset).map_err(|e| e.to_string())?;
            let outcome = train(&dataset, &config, Some(&out)).map_err(|e| e.to_string())?;
            println!(
                "{{\"run_id\":\"{}\",\"best_epoch\":{},\"test_rmse\":{}}}",
                outcome.metrics.run_id, outcome.metrics.best_epoch, outcome.metrics.test_rmse
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            config,
        } => {
            let config: RunConfig = read_json(&config)?;
            let dataset = load_dataset(&dataset).map_err(|e| e.to_string())?;
            let ckpt = load_checkpoint(&checkpoint).map_err(|e| e.to_string())?;
            let result = evaluate(&dataset, &ckpt.params, &ckpt.normalization, &config, &split)
                .map_err(|e| e.to_string())?;
            let json = serde_json::to_string(&result).map_err(|e| e.to_string())?;
            println!("{json}");
            Ok(())
        }
        Command::Ablate {
            configs,
            dataset,
            out,
        } => {
            let configs: Vec<RunConfig> = read_json(&configs)?;
            let dataset = load_dataset(&dataset).map_err(|e| e.to_string())?;
            let metrics = ablate(&dataset, &configs, Some(&out)).map_err(|e| e.to_string())?;
            for m in &metrics {
                println!(
                    "{{\"run_id\":\"{}\",\"test_rmse\":{}}}",
                    m.run_id, m.test_rmse
                );
            }
            Ok(())
        }
        Command::Report { runs, csv } => {
            let count = report(&runs, &csv).map_err(|e| e.to_string())?;
            println!("{{\"runs\":{count},\"csv\":\"{}\"}}", csv.display());
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("reading {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("parsing {}: {e}", path.display()))
}

fn main() -> ExitCode {
    meshsim::init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            let line = serde_json::json!({ "error": message });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
