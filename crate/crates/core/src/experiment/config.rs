//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys, repeated keys, unparsable values and out-of-range values
//! are rejected with the line number. Relative paths resolve against the
//! directory holding the config file. Every key is optional:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `name` | `experiment` | prefix of every output file |
//! | `dataset` | `synthetic` | `synthetic`, `idx` or `csv` |
//! | `classes`, `dims`, `separation` | `3`, `20`, `6.0` | synthetic Gaussian classes |
//! | `train_samples`, `test_samples` | `3000`, `1000` | synthetic split sizes |
//! | `train_images`, `train_labels` | | IDX training files (required for `idx`) |
//! | `test_images`, `test_labels` | | IDX test files (else split off train) |
//! | `train_csv`, `test_csv` | | CSV files (`train_csv` required for `csv`) |
//! | `label_column` | `0` | CSV label column |
//! | `train_fraction` | `0.8` | train share when no test file is given |
//! | `train_subsample` | `1.0` | stratified fraction of the training set used |
//! | `normalize` | `true` | standardize features with train statistics |
//! | `layers` | `20,64,64,3` | neurons per layer, input to output |
//! | `strategy` | `set` | `dense`, `set`, `path_weight` or `sensitivity` |
//! | `epsilon` / `target_mu` | `target_mu = 0.1` | initial density, at most one of the two |
//! | `learning_rate`, `batch_size`, `epochs` | `0.05`, `32`, `100` | SGD |
//! | `time_varying` | `false` | adaptive controller on or off |
//! | `lambda`, `zeta`, `delta` | `0.05`, `0.3`, `1.0` | `0.2`, `0.5`, `2.0` when time-varying |
//! | `lambda_min`, `lambda_max`, `zeta_min`, `zeta_max` | `0.0001`, `0.9` | clamp range |
//! | `delta_min`, `delta_max` | `0.1`, `10.0` | clamp range |
//! | `k1`, `k2`, `k3`, `k4` | `2.0`, `0.5`, `0.1`, `0.5` | controller constants |
//! | `sensitivity_form` | `paper` | `paper` or `classical` |
//! | `path_cap` | `10000` | most weak paths examined per epoch |
//! | `budget_preserving` | `true` | `false` lets regrowth fill up to full capacity |
//! | `dropout` | `0.5` | hidden-layer dropout, dense strategy only |
//! | `seed` | `1` | master seed |
//! | `output_dir` | `runs` | where metrics and checkpoints go |
//! | `checkpoint` | `true` | write the final network |

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evolution::{
    initial_params, Bounds, ControllerConstants, EvolutionParams, EvolutionSettings, ParamMode, Strategy,
};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        dims: usize,
        separation: f64,
        train_samples: usize,
        test_samples: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
        label_column: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    /// Train share of a file-based dataset that has no separate test file.
    pub train_fraction: f64,
    pub train_subsample: f64,
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Epsilon(f64),
    TargetMu(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub layers: Vec<usize>,
    pub strategy: Strategy,
    pub density: Density,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub params: EvolutionParams,
    pub constants: ControllerConstants,
    pub settings: EvolutionSettings,
    pub budget_preserving: bool,
    pub dropout: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub checkpoint: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            dataset: DatasetSpec {
                source: DatasetSource::Synthetic {
                    classes: 3,
                    dims: 20,
                    separation: 6.0,
                    train_samples: 3000,
                    test_samples: 1000,
                },
                train_fraction: 0.8,
                train_subsample: 1.0,
                normalize: true,
            },
            layers: vec![20, 64, 64, 3],
            strategy: Strategy::Set,
            density: Density::TargetMu(0.1),
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 100,
            params: initial_params(ParamMode::Fixed),
            constants: ControllerConstants::default(),
            settings: EvolutionSettings::default(),
            budget_preserving: true,
            dropout: 0.5,
            seed: 1,
            output_dir: PathBuf::from("runs"),
            checkpoint: true,
        }
    }
}

const KEYS: &[&str] = &[
    "name",
    "dataset",
    "classes",
    "dims",
    "separation",
    "train_samples",
    "test_samples",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_csv",
    "test_csv",
    "label_column",
    "train_fraction",
    "train_subsample",
    "normalize",
    "layers",
    "strategy",
    "epsilon",
    "target_mu",
    "learning_rate",
    "batch_size",
    "epochs",
    "time_varying",
    "lambda",
    "zeta",
    "delta",
    "lambda_min",
    "lambda_max",
    "zeta_min",
    "zeta_max",
    "delta_min",
    "delta_max",
    "k1",
    "k2",
    "k3",
    "k4",
    "sensitivity_form",
    "path_cap",
    "budget_preserving",
    "dropout",
    "seed",
    "output_dir",
    "checkpoint",
];

/// Key/value pairs with the line each came from.
struct Entries {
    values: HashMap<&'static str, (usize, String)>,
}

fn config_error(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut values: HashMap<&'static str, (usize, String)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_error(line, format!("expected `key = value`, got {content:?}")))?;
            let key = key.trim();
            let value = value.trim();
            let known = KEYS
                .iter()
                .copied()
                .find(|k| *k == key)
                .ok_or_else(|| config_error(line, format!("unknown key {key:?}")))?;
            if value.is_empty() {
                return Err(config_error(line, format!("{key} has no value")));
            }
            if let Some((first, _)) = values.insert(known, (line, value.to_string())) {
                return Err(config_error(line, format!("{key} already set on line {first}")));
            }
        }
        Ok(Entries { values })
    }

    fn line(&self, key: &str) -> usize {
        self.values.get(key).map_or(0, |(l, _)| *l)
    }

    fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn get<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| config_error(*line, format!("{key} must be {what}, got {v:?}"))),
        }
    }

    fn check<T: Copy>(&self, key: &str, value: Option<T>, ok: impl Fn(T) -> bool, range: &str) -> Result<Option<T>> {
        match value {
            Some(v) if !ok(v) => Err(config_error(self.line(key), format!("{key} must be {range}"))),
            other => Ok(other),
        }
    }

    fn float(&self, key: &str, ok: impl Fn(f64) -> bool, range: &str) -> Result<Option<f64>> {
        let v = self.get::<f64>(key, "a number")?;
        self.check(key, v, |x| x.is_finite() && ok(x), range)
    }

    fn count(&self, key: &str, min: usize) -> Result<Option<usize>> {
        let v = self.get::<usize>(key, "a non-negative integer")?;
        self.check(key, v, |x| x >= min, &format!("at least {min}"))
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.get::<bool>(key, "true or false")
    }

    fn path(&self, key: &str, base: &Path) -> Option<PathBuf> {
        self.values.get(key).map(|(_, v)| base.join(v))
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config_str(&text, base)
}

/// Parses config text, resolving relative paths against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let e = Entries::parse(text)?;
    let mut cfg = ExperimentConfig::default();

    if let Some((_, v)) = e.raw("name") {
        cfg.name = v.clone();
    }

    let source = e.raw("dataset").map_or("synthetic", |(_, v)| v.as_str());
    let source_line = e.line("dataset");
    let synthetic_keys = ["classes", "dims", "separation", "train_samples", "test_samples"];
    let idx_keys = ["train_images", "train_labels", "test_images", "test_labels"];
    let csv_keys = ["train_csv", "test_csv", "label_column"];
    let foreign: Vec<&str> = match source {
        "synthetic" => idx_keys.iter().chain(&csv_keys).copied().collect(),
        "idx" => synthetic_keys.iter().chain(&csv_keys).copied().collect(),
        "csv" => synthetic_keys.iter().chain(&idx_keys).copied().collect(),
        other => {
            return Err(config_error(
                source_line,
                format!("dataset must be synthetic, idx or csv, got {other:?}"),
            ))
        }
    };
    if let Some(k) = foreign.iter().find(|k| e.has(k)) {
        return Err(config_error(e.line(k), format!("{k} does not apply to dataset = {source}")));
    }
    cfg.dataset.source = match source {
        "synthetic" => {
            let DatasetSource::Synthetic {
                classes,
                dims,
                separation,
                train_samples,
                test_samples,
            } = cfg.dataset.source
            else {
                unreachable!()
            };
            DatasetSource::Synthetic {
                classes: e.count("classes", 1)?.unwrap_or(classes),
                dims: e.count("dims", 1)?.unwrap_or(dims),
                separation: e.float("separation", |x| x > 0.0, "positive")?.unwrap_or(separation),
                train_samples: e.count("train_samples", 1)?.unwrap_or(train_samples),
                test_samples: e.count("test_samples", 1)?.unwrap_or(test_samples),
            }
        }
        "idx" => {
            let required = |k: &str| {
                e.path(k, base)
                    .ok_or_else(|| config_error(source_line, format!("dataset = idx needs {k}")))
            };
            let test = match (e.path("test_images", base), e.path("test_labels", base)) {
                (Some(i), Some(l)) => Some((i, l)),
                (None, None) => None,
                (Some(_), None) => return Err(config_error(e.line("test_images"), "test_images needs test_labels")),
                (None, Some(_)) => return Err(config_error(e.line("test_labels"), "test_labels needs test_images")),
            };
            DatasetSource::Idx {
                train_images: required("train_images")?,
                train_labels: required("train_labels")?,
                test,
            }
        }
        _ => DatasetSource::Csv {
            train: e
                .path("train_csv", base)
                .ok_or_else(|| config_error(source_line, "dataset = csv needs train_csv"))?,
            test: e.path("test_csv", base),
            label_column: e.count("label_column", 0)?.unwrap_or(0),
        },
    };
    if let Some(v) = e.float("train_fraction", |x| x > 0.0 && x < 1.0, "in (0, 1)")? {
        cfg.dataset.train_fraction = v;
    }
    if let Some(v) = e.float("train_subsample", |x| x > 0.0 && x <= 1.0, "in (0, 1]")? {
        cfg.dataset.train_subsample = v;
    }
    if let Some(v) = e.flag("normalize")? {
        cfg.dataset.normalize = v;
    }

    if let Some((line, v)) = e.raw("layers") {
        let layers: Vec<usize> = v
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| config_error(*line, format!("layers must be a comma-separated list of sizes, got {v:?}")))?;
        if layers.len() < 2 || layers.contains(&0) {
            return Err(config_error(*line, "layers needs at least two sizes, all positive"));
        }
        cfg.layers = layers;
    }
    if let Some((line, v)) = e.raw("strategy") {
        cfg.strategy = v.parse().map_err(|err: Error| config_error(*line, err.to_string()))?;
    }

    match (e.has("epsilon"), e.has("target_mu")) {
        (true, true) => {
            let line = e.line("epsilon").max(e.line("target_mu"));
            return Err(config_error(line, "set epsilon or target_mu, not both"));
        }
        (true, false) => cfg.density = Density::Epsilon(e.float("epsilon", |x| x > 0.0, "positive")?.unwrap()),
        (false, true) => {
            cfg.density = Density::TargetMu(e.float("target_mu", |x| x > 0.0 && x <= 1.0, "in (0, 1]")?.unwrap())
        }
        (false, false) => {}
    }

    if let Some(v) = e.float("learning_rate", |x| x > 0.0, "positive")? {
        cfg.learning_rate = v;
    }
    if let Some(v) = e.count("batch_size", 1)? {
        cfg.batch_size = v;
    }
    if let Some(v) = e.count("epochs", 1)? {
        cfg.epochs = v;
    }

    let time_varying = e.flag("time_varying")?.unwrap_or(false);
    let mut params = initial_params(if time_varying { ParamMode::TimeVarying } else { ParamMode::Fixed });
    let bound = |min_key: &str, max_key: &str, b: Bounds, hi: f64| -> Result<Bounds> {
        let min = e.float(min_key, |x| x > 0.0 && x < hi, "positive and below the hard limit")?;
        let max = e.float(max_key, |x| x > 0.0 && x < hi, "positive and below the hard limit")?;
        let out = Bounds::new(min.unwrap_or(b.min), max.unwrap_or(b.max));
        if out.min > out.max {
            return Err(config_error(e.line(min_key).max(e.line(max_key)), format!("{min_key} exceeds {max_key}")));
        }
        Ok(out)
    };
    params.lambda_bounds = bound("lambda_min", "lambda_max", params.lambda_bounds, 1.0)?;
    params.zeta_bounds = bound("zeta_min", "zeta_max", params.zeta_bounds, 1.0)?;
    params.delta_bounds = bound("delta_min", "delta_max", params.delta_bounds, f64::INFINITY)?;
    for (key, slot) in [
        ("lambda", &mut params.lambda),
        ("zeta", &mut params.zeta),
        ("delta", &mut params.delta),
    ] {
        if let Some(v) = e.float(key, |x| x > 0.0, "positive")? {
            *slot = v;
        }
    }
    if let Err(err) = params.validate() {
        let line = ["lambda", "zeta", "delta", "lambda_min", "lambda_max", "zeta_min", "zeta_max", "delta_min", "delta_max"]
            .iter()
            .map(|k| e.line(k))
            .max()
            .unwrap_or(0);
        return Err(config_error(line, err.to_string()));
    }
    cfg.params = params;

    let mut constants = cfg.constants;
    for (key, slot) in [
        ("k1", &mut constants.k1),
        ("k2", &mut constants.k2),
        ("k3", &mut constants.k3),
        ("k4", &mut constants.k4),
    ] {
        if let Some(v) = e.float(key, |x| x >= 0.0, "non-negative")? {
            *slot = v;
        }
    }
    if let Err(err) = constants.validate() {
        let line = ["k1", "k2", "k3", "k4"].iter().map(|k| e.line(k)).max().unwrap_or(0);
        return Err(config_error(line, err.to_string()));
    }
    cfg.constants = constants;

    if let Some((line, v)) = e.raw("sensitivity_form") {
        cfg.settings.sensitivity_form = v.parse().map_err(|m: String| config_error(*line, m))?;
    }
    if let Some(v) = e.count("path_cap", 1)? {
        cfg.settings.path_cap = v;
    }
    if let Some(v) = e.flag("budget_preserving")? {
        cfg.budget_preserving = v;
    }
    if let Some(v) = e.float("dropout", |x| (0.0..1.0).contains(&x), "in [0, 1)")? {
        cfg.dropout = v;
    }
    if let Some(v) = e.get::<u64>("seed", "a non-negative integer")? {
        cfg.seed = v;
    }
    if let Some(p) = e.path("output_dir", base) {
        cfg.output_dir = p;
    }
    if let Some(v) = e.flag("checkpoint")? {
        cfg.checkpoint = v;
    }
    Ok(cfg)
}

impl ExperimentConfig {
    /// Renders the config as text that parses back to an equal value
    /// (paths are written as stored, so render with an empty base).
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").unwrap();
        };
        kv("name", &self.name);
        match &self.dataset.source {
            DatasetSource::Synthetic {
                classes,
                dims,
                separation,
                train_samples,
                test_samples,
            } => {
                kv("dataset", &"synthetic");
                kv("classes", classes);
                kv("dims", dims);
                kv("separation", &Float(*separation));
                kv("train_samples", train_samples);
                kv("test_samples", test_samples);
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test,
            } => {
                kv("dataset", &"idx");
                kv("train_images", &train_images.display());
                kv("train_labels", &train_labels.display());
                if let Some((i, l)) = test {
                    kv("test_images", &i.display());
                    kv("test_labels", &l.display());
                }
            }
            DatasetSource::Csv {
                train,
                test,
                label_column,
            } => {
                kv("dataset", &"csv");
                kv("train_csv", &train.display());
                if let Some(t) = test {
                    kv("test_csv", &t.display());
                }
                kv("label_column", label_column);
            }
        }
        kv("train_fraction", &Float(self.dataset.train_fraction));
        kv("train_subsample", &Float(self.dataset.train_subsample));
        kv("normalize", &self.dataset.normalize);
        let layers: Vec<String> = self.layers.iter().map(usize::to_string).collect();
        kv("layers", &layers.join(","));
        kv("strategy", &self.strategy);
        match self.density {
            Density::Epsilon(v) => kv("epsilon", &Float(v)),
            Density::TargetMu(v) => kv("target_mu", &Float(v)),
        }
        kv("learning_rate", &Float(self.learning_rate));
        kv("batch_size", &self.batch_size);
        kv("epochs", &self.epochs);
        let p = &self.params;
        kv("time_varying", &p.time_varying);
        kv("lambda", &Float(p.lambda));
        kv("zeta", &Float(p.zeta));
        kv("delta", &Float(p.delta));
        kv("lambda_min", &Float(p.lambda_bounds.min));
        kv("lambda_max", &Float(p.lambda_bounds.max));
        kv("zeta_min", &Float(p.zeta_bounds.min));
        kv("zeta_max", &Float(p.zeta_bounds.max));
        kv("delta_min", &Float(p.delta_bounds.min));
        kv("delta_max", &Float(p.delta_bounds.max));
        kv("k1", &Float(self.constants.k1));
        kv("k2", &Float(self.constants.k2));
        kv("k3", &Float(self.constants.k3));
        kv("k4", &Float(self.constants.k4));
        kv("sensitivity_form", &self.settings.sensitivity_form);
        kv("path_cap", &self.settings.path_cap);
        kv("budget_preserving", &self.budget_preserving);
        kv("dropout", &Float(self.dropout));
        kv("seed", &self.seed);
        kv("output_dir", &self.output_dir.display());
        kv("checkpoint", &self.checkpoint);
        s
    }
}

/// Shortest text that parses back to the same `f64`.
struct Float(f64);

impl std::fmt::Display for Float {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_str(text, Path::new(""))
    }

    fn error_line(text: &str) -> usize {
        match parse(text) {
            Err(Error::Config { line, .. }) => line,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_body_is_the_default() {
        assert_eq!(parse("").unwrap(), ExperimentConfig::default());
        assert_eq!(parse("# nothing here\n\n   \n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn strategy_parses() {
        let cfg = parse("strategy = path_weight").unwrap();
        assert_eq!(cfg.strategy, Strategy::PathWeight);
        assert_eq!(error_line("\nstrategy = magnitude"), 2);
    }

    #[test]
    fn out_of_range_values_are_positioned() {
        assert_eq!(error_line("seed = 3\nzeta = 1.5\n"), 2);
        assert_eq!(error_line("learning_rate = -1"), 1);
        assert_eq!(error_line("a\n"), 1);
        assert_eq!(error_line("\n\nbogus = 1"), 3);
        assert_eq!(error_line("epochs = ten"), 1);
        assert_eq!(error_line("epochs = 1\nepochs = 2"), 2);
        assert_eq!(error_line("layers = 4,0,2"), 1);
        assert_eq!(error_line("k1 = 0.5"), 1);
        assert_eq!(error_line("epsilon = 2\ntarget_mu = 0.1"), 2);
        assert_eq!(error_line("dataset = idx\ntrain_images = a"), 1);
        assert_eq!(error_line("dataset = idx\nclasses = 3"), 2);
    }

    #[test]
    fn time_varying_changes_starting_params() {
        let cfg = parse("time_varying = true").unwrap();
        assert_eq!(cfg.params, initial_params(ParamMode::TimeVarying));
        let cfg = parse("time_varying = true\nzeta = 0.25").unwrap();
        assert_eq!(cfg.params.zeta, 0.25);
    }

    #[test]
    fn render_round_trips() {
        let texts = [
            "",
            "strategy = sensitivity\nepsilon = 3\nsensitivity_form = classical\nlayers = 5,7,2",
            "dataset = idx\ntrain_images = a\ntrain_labels = b\ntest_images = c\ntest_labels = d",
            "dataset = csv\ntrain_csv = t.csv\nlabel_column = 4\ntime_varying = true\nseed = 99",
        ];
        for text in texts {
            let cfg = parse(text).unwrap();
            assert_eq!(parse(&cfg.render()).unwrap(), cfg, "{text}");
        }
    }

    #[test]
    fn relative_paths_resolve_against_the_base() {
        let cfg = parse_config_str("dataset = csv\ntrain_csv = t.csv\noutput_dir = out", Path::new("/cfg")).unwrap();
        assert_eq!(
            cfg.dataset.source,
            DatasetSource::Csv {
                train: PathBuf::from("/cfg/t.csv"),
                test: None,
                label_column: 0
            }
        );
        assert_eq!(cfg.output_dir, PathBuf::from("/cfg/out"));
    }
}
