//! Side-by-side comparison of finished runs and the training-fraction grid.

use std::fmt::Write as _;
use std::path::Path;

use crate::data;
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::runner::{load_datasets, run_with_datasets, MetricsLog};
use crate::seeds::{derive_seed, Stream};

pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// First epoch with the best test accuracy.
    pub best_epoch: usize,
    /// First epoch whose test accuracy reaches the threshold.
    pub epochs_to_threshold: Option<usize>,
    /// Active connections after the last epoch.
    pub final_connections: usize,
    pub final_mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub threshold: f64,
    pub epochs: usize,
    pub rows: Vec<ComparisonRow>,
}

/// First epoch whose test accuracy is at least `threshold`.
pub fn epochs_to_threshold(log: &MetricsLog, threshold: f64) -> Option<usize> {
    log.rows.iter().find(|m| m.test_accuracy >= threshold).map(|m| m.epoch)
}

pub fn compare_report(logs: &[MetricsLog], threshold: f64) -> Result<ComparisonReport> {
    if logs.len() < 2 {
        return Err(Error::Parameter(format!("need at least two metrics files, got {}", logs.len())));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let epochs = logs[0].rows.len();
    if let Some(log) = logs.iter().find(|l| l.rows.len() != epochs) {
        return Err(Error::Consistency(format!(
            "{} has {} epochs, {} has {epochs}",
            log.label,
            log.rows.len(),
            logs[0].label
        )));
    }
    if epochs == 0 {
        return Err(Error::EmptyInput("metrics files hold no epochs".into()));
    }
    let rows = logs
        .iter()
        .map(|log| {
            let last = log.rows.last().unwrap();
            let best = log
                .rows
                .iter()
                .fold(&log.rows[0], |b, m| if m.test_accuracy > b.test_accuracy { m } else { b });
            ComparisonRow {
                label: log.label.clone(),
                final_accuracy: last.test_accuracy,
                best_accuracy: best.test_accuracy,
                best_epoch: best.epoch,
                epochs_to_threshold: epochs_to_threshold(log, threshold),
                final_connections: last.active_connections,
                final_mu: last.mu,
            }
        })
        .collect();
    Ok(ComparisonReport { threshold, epochs, rows })
}

impl ComparisonReport {
    pub const CSV_HEADER: [&'static str; 7] = [
        "run",
        "final_accuracy",
        "best_accuracy",
        "best_epoch",
        "epochs_to_threshold",
        "final_connections",
        "final_mu",
    ];

    /// CSV text; an unreached threshold is an empty cell.
    pub fn to_csv(&self) -> String {
        let mut s = Self::CSV_HEADER.join(",");
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{:?},{:?},{},{},{},{:?}",
                r.label,
                r.final_accuracy,
                r.best_accuracy,
                r.best_epoch,
                r.epochs_to_threshold.map_or(String::new(), |e| e.to_string()),
                r.final_connections,
                r.final_mu
            )
            .unwrap();
        }
        s
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let to_thr = format!("epochs to {:.0}%", self.threshold * 100.0);
        let header = ["run", "final acc", "best acc", "best epoch", to_thr.as_str(), "connections", "mu"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    format!("{:.4}", r.final_accuracy),
                    format!("{:.4}", r.best_accuracy),
                    r.best_epoch.to_string(),
                    r.epochs_to_threshold.map_or("-".into(), |e| e.to_string()),
                    r.final_connections.to_string(),
                    format!("{:.4}", r.final_mu),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut s = format!("{} epochs per run\n", self.epochs);
        let mut line = |cells: Vec<&str>| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            s.push_str(padded.join("  ").trim_end());
            s.push('\n');
        };
        line(header.to_vec());
        for row in &body {
            line(row.iter().map(String::as_str).collect());
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleRow {
    pub fraction: f64,
    pub train_samples: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Set when the run hit a numeric abort.
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleGrid {
    pub name: String,
    pub rows: Vec<SubsampleRow>,
}

impl SubsampleGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,train_samples,final_accuracy,best_accuracy,aborted\n");
        for r in &self.rows {
            writeln!(
                s,
                "{:?},{},{:?},{:?},{}",
                r.fraction, r.train_samples, r.final_accuracy, r.best_accuracy, r.aborted
            )
            .unwrap();
        }
        s
    }
}

/// Name of the run trained on `fraction` of the training set.
pub fn subsample_run_name(base: &str, fraction: f64) -> String {
    format!("{base}.f{fraction}")
}

/// Runs the config once per training-set fraction. Each run keeps a
/// stratified, seeded subset of the training split and writes its own
/// outputs under `<name>.f<fraction>`; the grid goes to
/// `<name>.subsample.csv`.
pub fn subsample_experiment(config: &ExperimentConfig, fractions: &[f64]) -> Result<SubsampleGrid> {
    if fractions.is_empty() {
        return Err(Error::Parameter("no fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Parameter(format!("fraction must lie in (0, 1], got {f}")));
    }
    let (train, test) = load_datasets(config)?;
    let classes = *config.layers.last().unwrap();
    let labelled = train.clone().with_classes(classes)?;
    // Fail before any training if a fraction would wipe out a class.
    for &f in fractions {
        data::stratified_indices(&labelled, f, derive_seed(config.seed, Stream::Subsample, 0))?;
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let mut cfg = config.clone();
        cfg.name = subsample_run_name(&config.name, f);
        cfg.dataset.train_subsample = f;
        let summary = run_with_datasets(&cfg, train.clone(), test.clone())?;
        let accs: Vec<f64> = summary.rows.iter().map(|m| m.test_accuracy).collect();
        rows.push(SubsampleRow {
            fraction: f,
            train_samples: summary.train_samples,
            final_accuracy: accs.last().copied().unwrap_or(f64::NAN),
            best_accuracy: accs.iter().copied().fold(f64::NAN, f64::max),
            aborted: summary.aborted.is_some(),
        });
    }
    let grid = SubsampleGrid {
        name: config.name.clone(),
        rows,
    };
    let path = config.output_dir.join(format!("{}.subsample.csv", config.name));
    std::fs::write(&path, grid.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(grid)
}
