//! `sparse-evo` command-line runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparse_evo::experiment::{
    compare_report, load_checkpoint, parse_config, read_metrics, run, subsample_experiment, DEFAULT_THRESHOLD,
};
use sparse_evo::topology::sparsity_stats;

#[derive(Parser)]
#[command(name = "sparse-evo", version, about = "Sparse MLP training with evolving topology")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a config file.
    Run { config: PathBuf },
    /// Compare metrics files from runs of equal length.
    Compare {
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        /// Accuracy for the epochs-to-threshold column.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rerun a config on fractions of its training set.
    Subsample {
        config: PathBuf,
        #[arg(long, required = true, value_delimiter = ',')]
        fractions: Vec<f64>,
    },
    /// Summarize a checkpoint.
    Inspect { checkpoint: PathBuf },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), String> {
    match command {
        Command::Run { config } => {
            let cfg = parse_config(&config).map_err(|e| e.to_string())?;
            let summary = run(&cfg).map_err(|e| e.to_string())?;
            println!("metrics     {}", summary.metrics_path.display());
            println!("config      {}", summary.config_path.display());
            if let Some(p) = &summary.checkpoint_path {
                println!("checkpoint  {}", p.display());
            }
            println!("epochs      {}", summary.rows.len());
            if let Some(last) = summary.rows.last() {
                println!("test acc    {:.4}", last.test_accuracy);
                println!("connections {}", last.active_connections);
            }
            match summary.aborted {
                Some(reason) => Err(format!("run aborted: {reason}")),
                None => Ok(()),
            }
        }
        Command::Compare { files, threshold, csv } => {
            let logs = files
                .iter()
                .map(read_metrics)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let report = compare_report(&logs, threshold).map_err(|e| e.to_string())?;
            print!("{}", report.to_text());
            if let Some(path) = csv {
                report.write_csv(&path).map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Command::Subsample { config, fractions } => {
            let cfg = parse_config(&config).map_err(|e| e.to_string())?;
            let grid = subsample_experiment(&cfg, &fractions).map_err(|e| e.to_string())?;
            println!("fraction  train  final acc  best acc");
            for r in &grid.rows {
                let note = if r.aborted { "  (aborted)" } else { "" };
                println!(
                    "{:>8}  {:>5}  {:>9.4}  {:>8.4}{note}",
                    r.fraction, r.train_samples, r.final_accuracy, r.best_accuracy
                );
            }
            println!("grid written to {}", cfg.output_dir.join(format!("{}.subsample.csv", cfg.name)).display());
            Ok(())
        }
        Command::Inspect { checkpoint } => {
            let net = load_checkpoint(&checkpoint).map_err(|e| e.to_string())?;
            let mask = net.mask();
            let stats = sparsity_stats(mask);
            let sizes: Vec<String> = mask.layer_sizes().iter().map(usize::to_string).collect();
            println!("layers      {}", sizes.join(" "));
            println!("epsilon     {}", mask.epsilon());
            println!("budget      {}", mask.budget());
            println!("connections {} of {} (mu {:.4})", stats.active, stats.possible, stats.mu);
            for (l, layer) in mask.layers().iter().enumerate() {
                let w = net.weights(l);
                let mean_abs = if w.is_empty() { 0.0 } else { w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64 };
                println!(
                    "layer {:<4} {} of {} connections, mean |w| {:.4}",
                    l + 1,
                    layer.len(),
                    layer.capacity(),
                    mean_abs
                );
            }
            Ok(())
        }
    }
}
