//! The train, evolve, evaluate loop and its on-disk outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::evolution::{evolve_epoch, EpochEvolutionReport, EvolutionParams, ImportanceInputs, Strategy};
use crate::experiment::checkpoint::save_checkpoint;
use crate::experiment::config::{DatasetSource, Density, ExperimentConfig};
use crate::net::{backward, evaluate, forward, forward_with_dropout, sgd_step, SparseNetwork};
use crate::paths::FeatureNorms;
use crate::seeds::{derive_seed, rng_for, Stream};
use crate::sensitivity::SensitivityAccumulator;
use crate::topology::calibrate_epsilon;

/// Column order of the metrics CSV.
pub const METRICS_HEADER: [&str; 14] = [
    "epoch",
    "train_loss",
    "train_accuracy",
    "test_accuracy",
    "active_connections",
    "mu",
    "lambda",
    "zeta",
    "delta",
    "C_prim",
    "C_sec",
    "removed_count",
    "added_count",
    "epoch_wall_ms",
];

/// Prefix of the line appended to a metrics file when a run aborts.
pub const ABORT_MARKER: &str = "# aborted";

/// One metrics row. `lambda`, `zeta` and `delta` are the values the
/// epoch's evolution step ran with; train statistics are measured after it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub active_connections: usize,
    pub mu: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub delta: f64,
    pub c_prim: f64,
    pub c_sec: f64,
    pub removed_count: usize,
    pub added_count: usize,
    pub epoch_wall_ms: f64,
}

impl EpochMetrics {
    /// The row as CSV fields, reals in shortest round-trip form.
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            format!("{:?}", self.train_loss),
            format!("{:?}", self.train_accuracy),
            format!("{:?}", self.test_accuracy),
            self.active_connections.to_string(),
            format!("{:?}", self.mu),
            format!("{:?}", self.lambda),
            format!("{:?}", self.zeta),
            format!("{:?}", self.delta),
            format!("{:?}", self.c_prim),
            format!("{:?}", self.c_sec),
            self.removed_count.to_string(),
            self.added_count.to_string(),
            format!("{:.3}", self.epoch_wall_ms),
        ]
    }

    pub fn from_record(fields: &[&str]) -> std::result::Result<Self, String> {
        if fields.len() != METRICS_HEADER.len() {
            return Err(format!("expected {} fields, got {}", METRICS_HEADER.len(), fields.len()));
        }
        let f = |i: usize| {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("{} is not a number: {:?}", METRICS_HEADER[i], fields[i]))
        };
        let u = |i: usize| {
            fields[i]
                .trim()
                .parse::<usize>()
                .map_err(|_| format!("{} is not a count: {:?}", METRICS_HEADER[i], fields[i]))
        };
        Ok(EpochMetrics {
            epoch: u(0)?,
            train_loss: f(1)?,
            train_accuracy: f(2)?,
            test_accuracy: f(3)?,
            active_connections: u(4)?,
            mu: f(5)?,
            lambda: f(6)?,
            zeta: f(7)?,
            delta: f(8)?,
            c_prim: f(9)?,
            c_sec: f(10)?,
            removed_count: u(11)?,
            added_count: u(12)?,
            epoch_wall_ms: f(13)?,
        })
    }
}

/// Train and test splits as the config describes them, before subsampling
/// and normalization.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let spec = &config.dataset;
    let split_seed = derive_seed(config.seed, Stream::Data, 1);
    let (train, test) = match &spec.source {
        DatasetSource::Synthetic {
            classes,
            dims,
            separation,
            train_samples,
            test_samples,
        } => {
            let gen = data::GaussianClasses::new(
                *classes,
                *dims,
                *separation,
                derive_seed(config.seed, Stream::Data, 0),
            )?;
            (gen.sample(*train_samples, 0)?, gen.sample(*test_samples, 1)?)
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test,
        } => {
            let train = data::load_idx(train_images, train_labels)?;
            match test {
                Some((i, l)) => (train, data::load_idx(i, l)?),
                None => data::split(&train, spec.train_fraction, split_seed)?,
            }
        }
        DatasetSource::Csv {
            train,
            test,
            label_column,
        } => {
            let train = data::load_csv(train, *label_column)?;
            match test {
                Some(t) => (train, data::load_csv(t, *label_column)?),
                None => data::split(&train, spec.train_fraction, split_seed)?,
            }
        }
    };
    Ok((train, test))
}

/// Owns one run: the network, its data and the controller state.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    net: SparseNetwork,
    params: EvolutionParams,
    epoch: usize,
    last_report: Option<EpochEvolutionReport>,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let (train, test) = load_datasets(&config)?;
        Trainer::with_datasets(config, train, test)
    }

    /// Builds a run on already loaded splits; subsampling, normalization
    /// and network initialization follow the config.
    pub fn with_datasets(config: ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        let inputs = config.layers[0];
        let classes = *config.layers.last().unwrap();
        for ds in [&train, &test] {
            if ds.dims() != inputs {
                return Err(Error::InputShape {
                    expected: inputs,
                    got: ds.dims(),
                });
            }
        }
        let train = train.with_classes(classes)?;
        let test = test.with_classes(classes)?;
        let train = data::stratified_subsample(
            &train,
            config.dataset.train_subsample,
            derive_seed(config.seed, Stream::Subsample, 0),
        )?;
        let (train, test) = if config.dataset.normalize {
            let (train, mut others) = data::normalize(&train, &[test])?;
            (train, others.pop().unwrap())
        } else {
            (train, test)
        };

        let mut rng = rng_for(config.seed, Stream::Init, 0);
        let mut net = match (config.strategy, config.density) {
            (Strategy::Dense, _) => SparseNetwork::dense(&config.layers, &mut rng)?,
            (_, Density::Epsilon(eps)) => SparseNetwork::erdos_renyi(&config.layers, eps, &mut rng)?,
            (_, Density::TargetMu(mu)) => {
                let eps = calibrate_epsilon(&config.layers, mu)?;
                SparseNetwork::erdos_renyi(&config.layers, eps, &mut rng)?
            }
        };
        if !config.budget_preserving {
            let capacity = net.mask().capacity();
            net.set_budget(capacity)?;
        }
        Ok(Trainer {
            params: config.params,
            config,
            train,
            test,
            net,
            epoch: 0,
            last_report: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn network(&self) -> &SparseNetwork {
        &self.net
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn params(&self) -> &EvolutionParams {
        &self.params
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn last_report(&self) -> Option<&EpochEvolutionReport> {
        self.last_report.as_ref()
    }

    /// One epoch of SGD, the evolution step, then evaluation.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let cfg = &self.config;
        let seed = cfg.seed;
        let e = epoch as u64;

        let mut norms = FeatureNorms::new(self.net.depth());
        let mut acc = SensitivityAccumulator::new(&self.net);
        let mut dropout_rng = rng_for(seed, Stream::Dropout, e);
        let use_dropout = cfg.strategy == Strategy::Dense && cfg.dropout > 0.0;
        let order = data::batches(self.train.len(), cfg.batch_size, derive_seed(seed, Stream::Shuffle, 0), e)?;
        for indices in order {
            let (x, y) = self.train.batch(&indices);
            let trace = if use_dropout {
                forward_with_dropout(&self.net, &x, cfg.dropout, &mut dropout_rng)?
            } else {
                forward(&self.net, &x)?
            };
            let (loss, grads) = backward(&self.net, &trace, &y)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            match cfg.strategy {
                Strategy::PathWeight => norms.update(&trace),
                Strategy::Sensitivity => acc.accumulate(&grads)?,
                _ => {}
            }
            sgd_step(&mut self.net, &grads, cfg.learning_rate)?;
        }

        let inputs = match cfg.strategy {
            Strategy::PathWeight => ImportanceInputs::FeatureNorms(&norms),
            Strategy::Sensitivity => ImportanceInputs::Sensitivity(&acc),
            _ => ImportanceInputs::None,
        };
        let mut evo_rng = rng_for(seed, Stream::Evolution, e);
        let report = evolve_epoch(
            &mut self.net,
            cfg.strategy,
            &mut self.params,
            &cfg.constants,
            &cfg.settings,
            inputs,
            &mut evo_rng,
        )?;

        let train_eval = evaluate(&self.net, &self.train)?;
        let test_eval = evaluate(&self.net, &self.test)?;
        if !train_eval.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss after epoch {epoch}")));
        }
        let mask = self.net.mask();
        let metrics = EpochMetrics {
            epoch,
            train_loss: train_eval.loss,
            train_accuracy: train_eval.accuracy,
            test_accuracy: test_eval.accuracy,
            active_connections: mask.active_count(),
            mu: mask.active_count() as f64 / mask.capacity() as f64,
            lambda: report.params_before.lambda,
            zeta: report.params_before.zeta,
            delta: report.params_before.delta,
            c_prim: report.c_prim,
            c_sec: report.c_sec,
            removed_count: report.removed.len(),
            added_count: report.added.len(),
            // Kept at the logged precision so rows read back compare equal.
            epoch_wall_ms: format!("{:.3}", start.elapsed().as_secs_f64() * 1e3).parse().unwrap(),
        };
        self.epoch = epoch;
        self.last_report = Some(report);
        Ok(metrics)
    }
}

/// What a run left behind.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics_path: PathBuf,
    pub config_path: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
    pub rows: Vec<EpochMetrics>,
    pub train_samples: usize,
    /// Diagnostic of a numeric abort; the metrics file then ends with an
    /// abort marker line.
    pub aborted: Option<String>,
}

pub fn metrics_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(format!("{}.metrics.csv", config.name))
}

pub fn checkpoint_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(format!("{}.checkpoint", config.name))
}

/// Runs the configured experiment, writing `<name>.config` (the effective
/// config), `<name>.metrics.csv` and `<name>.checkpoint` into the output
/// directory.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    run_trainer(Trainer::new(config.clone())?)
}

/// [`run`] on already loaded splits.
pub fn run_with_datasets(config: &ExperimentConfig, train: Dataset, test: Dataset) -> Result<RunSummary> {
    run_trainer(Trainer::with_datasets(config.clone(), train, test)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn run_trainer(mut trainer: Trainer) -> Result<RunSummary> {
    let config = trainer.config().clone();
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let config_path = config.output_dir.join(format!("{}.config", config.name));
    fs::write(&config_path, config.render()).map_err(|e| Error::io(&config_path, e))?;

    let metrics_path = metrics_path(&config);
    let mut out = create(&metrics_path)?;
    let io = |e| Error::io(&metrics_path, e);
    writeln!(out, "{}", METRICS_HEADER.join(",")).map_err(io)?;
    let mut rows = Vec::with_capacity(config.epochs);
    let mut aborted = None;
    for _ in 0..config.epochs {
        match trainer.run_epoch() {
            Ok(m) => {
                writeln!(out, "{}", m.to_record().join(",")).map_err(io)?;
                out.flush().map_err(io)?;
                rows.push(m);
            }
            Err(Error::Numeric(msg)) => {
                writeln!(out, "{ABORT_MARKER} at epoch {}: {msg}", trainer.epoch() + 1).map_err(io)?;
                aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    out.flush().map_err(io)?;

    let checkpoint_path = if config.checkpoint && aborted.is_none() {
        let p = checkpoint_path(&config);
        save_checkpoint(trainer.network(), &p)?;
        Some(p)
    } else {
        None
    };
    Ok(RunSummary {
        metrics_path,
        config_path,
        checkpoint_path,
        rows,
        train_samples: trainer.train_set().len(),
        aborted,
    })
}

/// A metrics file read back: its rows and the abort diagnostic, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub label: String,
    pub rows: Vec<EpochMetrics>,
    pub aborted: Option<String>,
}

/// Reads a metrics CSV. The label is the file name without
/// `.metrics.csv` (or without its extension).
pub fn read_metrics(path: impl AsRef<Path>) -> Result<MetricsLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput(format!("{} is empty", path.display())))?
        .1;
    if header.split(',').map(str::trim).ne(METRICS_HEADER) {
        return Err(Error::format(path, "row 1", "unexpected metrics header"));
    }
    let mut rows = Vec::new();
    let mut aborted = None;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(ABORT_MARKER) {
            aborted = Some(rest.trim().to_string());
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let m = EpochMetrics::from_record(&fields).map_err(|msg| Error::format(path, format!("row {}", i + 1), msg))?;
        if m.epoch != rows.len() + 1 {
            return Err(Error::format(path, format!("row {}", i + 1), "epochs must count up from 1"));
        }
        rows.push(m);
    }
    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let label = name
        .strip_suffix(".metrics.csv")
        .map(str::to_string)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or(name);
    Ok(MetricsLog { label, rows, aborted })
}
