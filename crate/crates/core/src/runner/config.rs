use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::optimizers::{AnnealSchedule, InnerOptimizer, Method, MethodConfig};
use crate::quantization::QuantLevels;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Blobs,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Blobs => "blobs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mnist" => Some(DatasetKind::Mnist),
            "blobs" => Some(DatasetKind::Blobs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Lenet300,
    MlpSmall,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Lenet300 => "lenet300",
            Arch::MlpSmall => "mlp_small",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lenet300" => Some(Arch::Lenet300),
            "mlp_small" => Some(Arch::MlpSmall),
            _ => None,
        }
    }
}

/// Synthetic blob dataset shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobsConfig {
    pub classes: usize,
    pub per_class: usize,
    pub eval_per_class: usize,
    pub dim: usize,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            classes: 4,
            per_class: 250,
            eval_per_class: 100,
            dim: 16,
        }
    }
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub arch: Arch,
    pub method: MethodConfig,
    pub levels: QuantLevels,
    pub batch: usize,
    pub iters: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
    pub blobs: BlobsConfig,
    /// Half-width of the uniform initialization of `ũ`.
    pub aux_init: f64,
    /// Training examples used to recompute batch-norm statistics before
    /// each evaluation.
    pub calibration_samples: usize,
    /// Record wall-clock time in the metrics. Off makes metrics files
    /// byte-identical across runs.
    pub timing: bool,
}

impl ExperimentConfig {
    /// Defaults of the MNIST setup with the given required fields.
    pub fn new(dataset: DatasetKind, arch: Arch, method: Method) -> Self {
        ExperimentConfig {
            dataset,
            arch,
            method: MethodConfig::new(method),
            levels: QuantLevels::binary(),
            batch: 100,
            iters: 20_000,
            eval_every: 500,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            data_dir: PathBuf::from("data/mnist"),
            blobs: BlobsConfig::default(),
            aux_init: 0.01,
            calibration_samples: 10_000,
            timing: true,
        }
    }
}

/// Every recognized key, in serialization order, with its default value.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("dataset", "(required) mnist | blobs"),
    ("arch", "(required) lenet300 | mlp_small"),
    ("method", "(required) ref | bc | picm | pgd_sparsemax | pmf"),
    ("levels", "-1,1"),
    ("batch", "100"),
    ("iters", "20000"),
    ("eval_every", "500"),
    ("seed", "0"),
    ("out_dir", "runs"),
    ("data_dir", "data/mnist"),
    ("optimizer", "adam"),
    ("lr", "0.001"),
    ("lr_interval", "7000"),
    ("lr_scale", "0.2"),
    ("momentum", "0"),
    ("weight_decay", "0"),
    ("store_aux", "true"),
    ("clip_aux", "true for bc and picm, false otherwise"),
    ("beta0", "1"),
    ("rho", "1.2"),
    ("anneal_period", "100"),
    ("aux_init", "0.01"),
    ("calibration_samples", "10000"),
    ("timing", "true"),
    ("blobs_classes", "4"),
    ("blobs_per_class", "250"),
    ("blobs_eval_per_class", "100"),
    ("blobs_dim", "16"),
];

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| parse_err(line, format!("`{key}`: cannot parse `{raw}`")))
}

fn positive_f64(line: usize, key: &str, raw: &str) -> Result<f64> {
    let v: f64 = value(line, key, raw)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(parse_err(line, format!("`{key}` must be positive, got {raw}")));
    }
    Ok(v)
}

fn non_negative_f64(line: usize, key: &str, raw: &str) -> Result<f64> {
    let v: f64 = value(line, key, raw)?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(parse_err(line, format!("`{key}` must be non-negative, got {raw}")));
    }
    Ok(v)
}

fn at_least<T: std::str::FromStr + PartialOrd + std::fmt::Display + Copy>(
    line: usize,
    key: &str,
    raw: &str,
    min: T,
) -> Result<T> {
    let v: T = value(line, key, raw)?;
    if v < min {
        return Err(parse_err(line, format!("`{key}` must be at least {min}, got {raw}")));
    }
    Ok(v)
}

fn flag(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(parse_err(line, format!("`{key}` must be true or false, got `{raw}`"))),
    }
}

/// Parses the flat `key = value` format: one pair per line, `#` starts a
/// comment, blank lines are ignored.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut last_line = 0;
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, val) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim().to_string();
        let val = val.trim().trim_matches('"').to_string();
        if !CONFIG_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(parse_err(line, format!("unknown key `{key}`")));
        }
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(parse_err(line, format!("duplicate key `{key}` (first set on line {first})")));
        }
        entries.push((line, key, val));
    }

    let required = |name: &str| -> Result<(usize, String)> {
        entries
            .iter()
            .find(|(_, k, _)| k == name)
            .map(|(l, _, v)| (*l, v.clone()))
            .ok_or_else(|| parse_err(last_line + 1, format!("missing required key `{name}`")))
    };
    let (l, raw) = required("dataset")?;
    let dataset = DatasetKind::parse(&raw).ok_or_else(|| parse_err(l, format!("unknown dataset `{raw}`")))?;
    let (l, raw) = required("arch")?;
    let arch = Arch::parse(&raw).ok_or_else(|| parse_err(l, format!("unknown arch `{raw}`")))?;
    let (l, raw) = required("method")?;
    let method = Method::parse(&raw).ok_or_else(|| parse_err(l, format!("unknown method `{raw}`")))?;

    let mut cfg = ExperimentConfig::new(dataset, arch, method);
    let (mut beta0, mut rho, mut period) = (1.0, 1.2, 100u64);
    for (line, key, raw) in &entries {
        let (line, raw) = (*line, raw.as_str());
        let m = &mut cfg.method;
        match key.as_str() {
            "dataset" | "arch" | "method" => {}
            "levels" => {
                let values = raw
                    .split(',')
                    .map(|s| value::<f64>(line, "levels", s.trim()))
                    .collect::<Result<Vec<_>>>()?;
                cfg.levels = QuantLevels::new(values).map_err(|e| parse_err(line, e.to_string()))?;
            }
            "batch" => cfg.batch = at_least(line, key, raw, 1usize)?,
            "iters" => cfg.iters = at_least(line, key, raw, 1u64)?,
            "eval_every" => cfg.eval_every = at_least(line, key, raw, 1u64)?,
            "seed" => cfg.seed = value(line, key, raw)?,
            "out_dir" => cfg.out_dir = PathBuf::from(raw),
            "data_dir" => cfg.data_dir = PathBuf::from(raw),
            "optimizer" => {
                m.optimizer = InnerOptimizer::parse(raw)
                    .ok_or_else(|| parse_err(line, format!("unknown optimizer `{raw}`")))?
            }
            "lr" => m.lr = positive_f64(line, key, raw)?,
            "lr_interval" => m.lr_interval = at_least(line, key, raw, 1u64)?,
            "lr_scale" => {
                m.lr_scale = positive_f64(line, key, raw)?;
                if m.lr_scale > 1.0 {
                    return Err(parse_err(line, format!("`lr_scale` must be at most 1, got {raw}")));
                }
            }
            "momentum" => {
                m.momentum = non_negative_f64(line, key, raw)?;
                if m.momentum >= 1.0 {
                    return Err(parse_err(line, format!("`momentum` must be below 1, got {raw}")));
                }
            }
            "weight_decay" => m.weight_decay = non_negative_f64(line, key, raw)?,
            "store_aux" => m.store_aux = flag(line, key, raw)?,
            "clip_aux" => m.clip_aux = flag(line, key, raw)?,
            "beta0" => beta0 = positive_f64(line, key, raw)?,
            "rho" => {
                rho = positive_f64(line, key, raw)?;
                if rho <= 1.0 {
                    return Err(parse_err(line, format!("`rho` must exceed 1, got {raw}")));
                }
            }
            "anneal_period" => period = at_least(line, key, raw, 1u64)?,
            "aux_init" => cfg.aux_init = non_negative_f64(line, key, raw)?,
            "calibration_samples" => cfg.calibration_samples = at_least(line, key, raw, 1usize)?,
            "timing" => cfg.timing = flag(line, key, raw)?,
            "blobs_classes" => cfg.blobs.classes = at_least(line, key, raw, 2usize)?,
            "blobs_per_class" => cfg.blobs.per_class = at_least(line, key, raw, 1usize)?,
            "blobs_eval_per_class" => cfg.blobs.eval_per_class = at_least(line, key, raw, 1usize)?,
            "blobs_dim" => cfg.blobs.dim = at_least(line, key, raw, 1usize)?,
            other => unreachable!("key `{other}` passed the allow-list"),
        }
    }
    cfg.method.schedule = AnnealSchedule::new(beta0, rho, period).map_err(|e| parse_err(last_line + 1, e.to_string()))?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Writes every key explicitly; `parse_config_str` inverts it exactly.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let m = &cfg.method;
    let levels: Vec<String> = cfg.levels.values().iter().map(|v| v.to_string()).collect();
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put("dataset", cfg.dataset.name().into());
    put("arch", cfg.arch.name().into());
    put("method", m.method.name().into());
    put("levels", levels.join(","));
    put("batch", cfg.batch.to_string());
    put("iters", cfg.iters.to_string());
    put("eval_every", cfg.eval_every.to_string());
    put("seed", cfg.seed.to_string());
    put("out_dir", cfg.out_dir.display().to_string());
    put("data_dir", cfg.data_dir.display().to_string());
    put("optimizer", m.optimizer.name().into());
    put("lr", m.lr.to_string());
    put("lr_interval", m.lr_interval.to_string());
    put("lr_scale", m.lr_scale.to_string());
    put("momentum", m.momentum.to_string());
    put("weight_decay", m.weight_decay.to_string());
    put("store_aux", m.store_aux.to_string());
    put("clip_aux", m.clip_aux.to_string());
    put("beta0", m.schedule.beta0.to_string());
    put("rho", m.schedule.rho.to_string());
    put("anneal_period", m.schedule.period.to_string());
    put("aux_init", cfg.aux_init.to_string());
    put("calibration_samples", cfg.calibration_samples.to_string());
    put("timing", cfg.timing.to_string());
    put("blobs_classes", cfg.blobs.classes.to_string());
    put("blobs_per_class", cfg.blobs.per_class.to_string());
    put("blobs_eval_per_class", cfg.blobs.eval_per_class.to_string());
    put("blobs_dim", cfg.blobs.dim.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MNIST_PMF: &str = "\
# LeNet-300 binary, MNIST column
dataset = mnist
arch = lenet300
method = pmf
optimizer = adam
lr = 0.001
lr_interval = 7000
lr_scale = 0.2
weight_decay = 0
rho = 1.2
batch = 100
iters = 20000
";

    #[test]
    fn mnist_reference_config() {
        let cfg = parse_config_str(MNIST_PMF).unwrap();
        assert_eq!(cfg.dataset, DatasetKind::Mnist);
        assert_eq!(cfg.arch, Arch::Lenet300);
        let m = &cfg.method;
        assert_eq!(m.method, Method::Pmf);
        assert_eq!(m.optimizer, InnerOptimizer::Adam);
        assert_eq!((m.lr, m.lr_interval, m.lr_scale, m.weight_decay), (0.001, 7000, 0.2, 0.0));
        assert_eq!(m.schedule, AnnealSchedule::new(1.0, 1.2, 100).unwrap());
        assert_eq!((cfg.batch, cfg.iters), (100, 20_000));
        assert!(m.store_aux);
        assert_eq!(cfg.levels, QuantLevels::binary());
    }

    #[test]
    fn round_trip() {
        let mut cfg = parse_config_str(MNIST_PMF).unwrap();
        cfg.levels = QuantLevels::new(vec![-2.0, -1.0, 1.0, 2.0]).unwrap();
        cfg.method.lr = 0.1 + 0.2;
        cfg.method.store_aux = false;
        cfg.timing = false;
        cfg.out_dir = PathBuf::from("some/where");
        let text = serialize_config(&cfg);
        assert_eq!(parse_config_str(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), CONFIG_KEYS.len());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dup = "dataset = blobs\narch = mlp_small\nmethod = pmf\nlr = 0.1\n\nlr = 0.2\n";
        match parse_config_str(dup).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("duplicate"));
            }
            e => panic!("{e:?}"),
        }
        let unknown = "dataset = blobs\nbogus = 1\n";
        assert!(matches!(parse_config_str(unknown), Err(Error::Parse { line: 2, .. })));
        let typed = "dataset = blobs\narch = mlp_small\nmethod = pmf\nbatch = many\n";
        assert!(matches!(parse_config_str(typed), Err(Error::Parse { line: 4, .. })));
        let missing = "dataset = blobs\narch = mlp_small\n";
        match parse_config_str(missing).unwrap_err() {
            Error::Parse { message, .. } => assert!(message.contains("method")),
            e => panic!("{e:?}"),
        }
        let bad_levels = "dataset = blobs\narch = mlp_small\nmethod = pmf\nlevels = 1,-1\n";
        assert!(matches!(parse_config_str(bad_levels), Err(Error::Parse { line: 4, .. })));
        assert!(parse_config_str("dataset blobs\n").is_err());
    }

    #[test]
    fn levels_and_comments() {
        let text = "dataset = blobs # inline\narch = mlp_small\nmethod = bc\nlevels = -1, 1\n";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.levels.values(), &[-1.0, 1.0]);
        assert!(cfg.method.clip_aux);
    }

    #[test]
    fn every_key_is_documented_once() {
        let mut keys: Vec<&str> = CONFIG_KEYS.iter().map(|(k, _)| *k).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), CONFIG_KEYS.len());
    }
}
