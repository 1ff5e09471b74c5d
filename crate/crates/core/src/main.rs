use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hmf::checkpoint;
use hmf::experiment::{
    check_feedback, collect_reports, enumerate_cells, evaluate_test, group_reports, prepare_dataset, run_grid, run_job,
    write_summary, ExperimentConfig,
};
use hmf::interpret::{build_cluster_report, render_table, reports_to_csv, Labels, ReportOptions, Side};
use hmf::{Error, Result};

#[derive(Parser)]
#[command(name = "hmf", version, about = "Hierarchical matrix factorization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    User,
    Item,
}

#[derive(Subcommand)]
enum Command {
    /// Load, split and filter the dataset and print its statistics.
    Ingest(Common),
    /// Train one model with the first value of every grid list.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the test subset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full grid over all seeds, then select and summarize.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Concurrent training jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Rebuild the summary from existing run reports.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Cluster-level interpretation tables from a checkpoint.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "user")]
        side: SideArg,
        /// Comma-separated cluster ids; defaults to every cluster.
        #[arg(long, value_delimiter = ',')]
        targets: Vec<usize>,
        /// `id,label` CSV for the counterpart side.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long, default_value_t = 10)]
        k_neighbors: usize,
        #[arg(long, default_value_t = 5)]
        k_rows: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    checkpoint::write_atomic(path, text.as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(common) => {
            let config = common.load()?;
            let data = prepare_dataset(&config.dataset)?;
            let stats = data.stats();
            write_file(&config.output.dir.join("dataset.json"), &serde_json::to_string_pretty(&stats)?)?;
            print_json(&stats)
        }
        Command::Train { common, seed } => {
            let config = common.load()?;
            let data = prepare_dataset(&config.dataset)?;
            check_feedback(&config, &data)?;
            let grid = config.resolve_grid(&data.stats());
            let cell = enumerate_cells(&config, &grid).swap_remove(0);
            let seed = seed.unwrap_or(grid.seeds[0]);
            let (report, artifact) = run_job(&data, &cell, seed, &config.output.dir)?;
            eprintln!("artifacts in {}", artifact.dir.display());
            print_json(&report.test)
        }
        Command::Evaluate { common, checkpoint: path, seed } => {
            let config = common.load()?;
            let data = prepare_dataset(&config.dataset)?;
            let ckpt = checkpoint::load(&path)?;
            if ckpt.index.user_ids() != data.index.user_ids() || ckpt.index.item_ids() != data.index.item_ids() {
                return Err(Error::Checkpoint("checkpoint ids do not match the configured dataset".into()));
            }
            print_json(&evaluate_test(&ckpt.params, &data, config.task(), seed)?)
        }
        Command::Grid { common, jobs } => {
            let config = common.load()?;
            print_json(&run_grid(&config, jobs)?)
        }
        Command::Report { common } => {
            let config = common.load()?;
            let cells = group_reports(collect_reports(&config.output.dir)?);
            print_json(&write_summary(&config.output.dir, &cells)?)
        }
        Command::Interpret { checkpoint: path, side, targets, labels, level, k_neighbors, k_rows, out } => {
            let ckpt = checkpoint::load(&path)?;
            let side = match side {
                SideArg::User => Side::User,
                SideArg::Item => Side::Item,
            };
            let targets = if targets.is_empty() {
                let own = match side {
                    Side::User => &ckpt.params.user,
                    Side::Item => &ckpt.params.item,
                };
                let count = own.logits.get(level.saturating_sub(1)).map_or(0, |m| m.cols());
                (0..count).collect()
            } else {
                targets
            };
            let labels = Labels::load_optional(labels.as_deref());
            if labels.is_none() {
                log::warn!("no metadata; labelling objects by index");
            }
            let options = ReportOptions { level, k_neighbors, k_rows };
            let reports = build_cluster_report(&ckpt.params, &ckpt.index, side, &targets, labels.as_ref(), &options)?;
            let text: String = reports.iter().map(render_table).collect::<Vec<_>>().join("\n");
            if let Some(dir) = out {
                write_file(&dir.join(format!("interpret-{}.csv", side.name())), &reports_to_csv(&reports)?)?;
                write_file(&dir.join(format!("interpret-{}.txt", side.name())), &text)?;
            }
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
