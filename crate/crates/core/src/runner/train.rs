use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{serialize_config, Arch, DatasetKind, ExperimentConfig};
use super::metrics::{format_sig9, MetricsRow, MetricsWriter};
use crate::data::{batch_iterator, load_mnist, synthetic_blob_splits, DatasetSplit, Splits};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, fan_in_uniform_init, BatchNormStats, Mode, Network, NetworkSpec, Tensor};
use crate::optimizers::{
    bc_step, final_quantize, pgd_sparsemax_step, picm_step, pmf_direct_step, pmf_step, ref_step,
    LossGrad, Method, OptimizerState,
};
use crate::quantization::{collapse, lift_gradient, write_pqw, AuxField, QuantLevels, QuantizedWeights, SimplexField};
use crate::simplex::{softmax_into, sparsemax_into, Temperature};

const PREDICT_CHUNK: usize = 1000;

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    match cfg.dataset {
        DatasetKind::Mnist => load_mnist(&cfg.data_dir),
        DatasetKind::Blobs => synthetic_blob_splits(
            cfg.blobs.classes,
            cfg.blobs.per_class,
            cfg.blobs.eval_per_class,
            cfg.blobs.dim,
            cfg.seed,
        ),
    }
}

pub fn build_network(arch: Arch, inputs: usize, classes: usize) -> Result<Network> {
    let spec = match arch {
        Arch::Lenet300 => {
            if inputs != 784 || classes != 10 {
                return Err(Error::Shape(format!(
                    "lenet300 expects 784 inputs and 10 classes, the dataset has {inputs} and {classes}"
                )));
            }
            NetworkSpec::lenet300()
        }
        Arch::MlpSmall => NetworkSpec::mlp_small(inputs, classes),
    };
    Network::new(spec)
}

/// Mean cross-entropy on a batch and its gradient with respect to `params`.
fn batch_loss_grad(net: &Network, params: &[f64], x: &Tensor, labels: &[usize]) -> Result<LossGrad> {
    let (logits, cache) = net.forward(params, x, Mode::Train)?;
    let (loss, dlogits) = cross_entropy(&logits, labels)?;
    Ok(LossGrad {
        loss,
        grad: cache.backward(&dlogits)?,
    })
}

/// Batch-norm statistics of one train-mode pass of `params` over `split`.
pub fn calibrate_batchnorm(net: &Network, params: &[f64], split: &DatasetSplit) -> Result<BatchNormStats> {
    let (_, cache) = net.forward(params, &split.images, Mode::Train)?;
    Ok(BatchNormStats::from_batch(cache.batch_stats()))
}

/// Top-1 accuracy in eval mode with the given normalization statistics.
pub fn evaluate(net: &Network, params: &[f64], stats: &BatchNormStats, split: &DatasetSplit) -> Result<f64> {
    let predictions = net.predict(params, stats, split.images.data(), PREDICT_CHUNK)?;
    let correct = predictions
        .iter()
        .zip(&split.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / split.len() as f64)
}

/// Recalibrates normalization on `calibration`, then evaluates on `split`.
pub fn evaluate_calibrated(
    net: &Network,
    params: &[f64],
    calibration: &DatasetSplit,
    split: &DatasetSplit,
) -> Result<f64> {
    let stats = calibrate_batchnorm(net, params, calibration)?;
    evaluate(net, params, &stats, split)
}

/// Variables a method optimizes.
enum Vars {
    Float(Vec<f64>),
    Sign(Vec<f64>),
    Aux(AuxField),
    Direct(SimplexField),
}

/// A snapshot of decoded weights: level indices for quantized methods, plain
/// floats for the reference.
#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Quantized(QuantizedWeights),
    Float(Vec<f64>),
}

impl Snapshot {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Snapshot::Quantized(q) => q.values(),
            Snapshot::Float(w) => w.clone(),
        }
    }
}

fn project_rows(aux: &AuxField, beta: f64, sparse: bool) -> SimplexField {
    let d = aux.d();
    let mut data = vec![0.0; aux.as_slice().len()];
    let mut scratch = Vec::new();
    for (row, out) in aux.rows().zip(data.chunks_exact_mut(d)) {
        if sparse {
            sparsemax_into(row, beta, out, &mut scratch);
        } else {
            softmax_into(row, beta, out);
        }
    }
    SimplexField::new(d, data).expect("projection rows lie on the simplex")
}

impl Vars {
    fn init(cfg: &ExperimentConfig, net: &Network, rng: &mut ChaCha8Rng) -> Self {
        let m = net.param_count();
        let d = cfg.levels.d();
        match cfg.method.method {
            Method::Ref => Vars::Float(fan_in_uniform_init(net, rng)),
            Method::Bc => Vars::Sign(fan_in_uniform_init(net, rng)),
            Method::Pmf if !cfg.method.store_aux => {
                let aux = AuxField::uniform(m, d, cfg.aux_init, rng);
                Vars::Direct(project_rows(&aux, cfg.method.schedule.beta0, false))
            }
            Method::Pmf | Method::PgdSparsemax | Method::Picm => {
                Vars::Aux(AuxField::uniform(m, d, cfg.aux_init, rng))
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Vars::Float(w) | Vars::Sign(w) => w.len(),
            Vars::Aux(a) => a.as_slice().len(),
            Vars::Direct(u) => u.as_slice().len(),
        }
    }

    fn quantized(&self, levels: &QuantLevels) -> Result<Snapshot> {
        Ok(match self {
            Vars::Float(w) => Snapshot::Float(w.clone()),
            Vars::Sign(w) => {
                let idx = w.iter().map(|&x| u16::from(x >= 0.0)).collect();
                Snapshot::Quantized(QuantizedWeights::new(idx, levels.clone())?)
            }
            Vars::Aux(a) => Snapshot::Quantized(final_quantize(a, levels)?),
            Vars::Direct(u) => Snapshot::Quantized(QuantizedWeights::from_argmax(u.as_slice(), levels)?),
        })
    }

    /// The relaxed weights the method trains through.
    fn continuous(&self, method: Method, levels: &QuantLevels, beta: f64) -> Result<Vec<f64>> {
        match self {
            Vars::Float(w) | Vars::Sign(w) => Ok(w.clone()),
            Vars::Direct(u) => collapse(u, levels),
            Vars::Aux(a) => match method {
                Method::Picm => a.collapse(levels),
                Method::PgdSparsemax => collapse(&project_rows(a, beta, true), levels),
                _ => collapse(&project_rows(a, beta, false), levels),
            },
        }
    }
}

fn step(
    vars: &mut Vars,
    cfg: &ExperimentConfig,
    net: &Network,
    state: &mut OptimizerState,
    beta: Temperature,
    x: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    let levels = &cfg.levels;
    let mc = &cfg.method;
    let in_w = |w: &[f64]| batch_loss_grad(net, w, x, labels);
    let in_u = |u: &SimplexField| -> Result<LossGrad> {
        let w = collapse(u, levels)?;
        let LossGrad { loss, grad } = batch_loss_grad(net, &w, x, labels)?;
        Ok(LossGrad {
            loss,
            grad: lift_gradient(&grad, levels),
        })
    };
    match vars {
        Vars::Float(w) => ref_step(w, in_w, mc, state),
        Vars::Sign(w) => bc_step(w, levels, in_w, mc, state).map(|(loss, _)| loss),
        Vars::Direct(u) => pmf_direct_step(u, beta, in_u, mc, state),
        Vars::Aux(a) => match mc.method {
            Method::Picm => picm_step(a, levels, in_u, mc, state),
            Method::PgdSparsemax => pgd_sparsemax_step(a, beta, in_u, mc, state),
            _ => pmf_step(a, beta, in_u, mc, state),
        }
        .map(|(loss, _)| loss),
    }
}

/// Where a run's files went.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub weights: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub param_count: usize,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub best_iter: u64,
    pub best_val_acc_quantized: f64,
    pub test_acc_quantized: f64,
    pub final_val_acc_quantized: f64,
    pub final_val_acc_continuous: f64,
    pub weights_bytes: u64,
    pub elapsed_seconds: f64,
    pub rows: Vec<MetricsRow>,
    pub best: Snapshot,
    pub artifacts: RunArtifacts,
}

impl RunSummary {
    pub fn to_text(&self, cfg: &ExperimentConfig) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("method", self.method.name().into());
        put("seed", self.seed.to_string());
        put("param_count", self.param_count.to_string());
        put("iters", cfg.iters.to_string());
        put("initial_train_loss", format_sig9(self.initial_train_loss));
        put("final_train_loss", format_sig9(self.final_train_loss));
        put("best_iter", self.best_iter.to_string());
        put("best_val_acc_quantized", format_sig9(self.best_val_acc_quantized));
        put("test_acc_quantized", format_sig9(self.test_acc_quantized));
        put("final_val_acc_quantized", format_sig9(self.final_val_acc_quantized));
        put("final_val_acc_continuous", format_sig9(self.final_val_acc_continuous));
        put("weights_file", self.artifacts.weights.display().to_string());
        put("weights_bytes", self.weights_bytes.to_string());
        put("elapsed_seconds", format_sig9(self.elapsed_seconds));
        s.push_str("\n# config\n");
        s.push_str(&serialize_config(cfg));
        s
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads the little-endian `f64` weight dump written for reference runs.
pub fn read_float_weights(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format("payload", format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Trains `cfg` on preloaded `splits`, writing metrics, the best weights, a
/// config echo and a summary into `cfg.out_dir`.
pub fn run_experiment_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<RunSummary> {
    cfg.method.validate()?;
    if cfg.method.method == Method::Bc && !cfg.levels.is_binary_sign() {
        return Err(Error::UnsupportedDimension("bc needs levels = -1,1".into()));
    }
    if cfg.method.method == Method::Picm && cfg.levels.d() != 2 {
        return Err(Error::UnsupportedDimension("picm needs exactly two levels".into()));
    }
    let start = Instant::now();
    let elapsed = || if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };

    let train = &splits.train;
    let net = build_network(cfg.arch, train.dim(), train.class_count)?;
    let calibration = train.head(cfg.calibration_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vars = Vars::init(cfg, &net, &mut rng);
    let mut state = OptimizerState::new(vars.len(), cfg.method.optimizer);

    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let weights_name = match cfg.method.method {
        Method::Ref => "weights.f64",
        _ => "weights.pqw",
    };
    let artifacts = RunArtifacts {
        weights: dir.join(weights_name),
        metrics: dir.join("metrics.csv"),
        summary: dir.join("summary.txt"),
        config: dir.join("config.txt"),
        dir,
    };
    write_file(&artifacts.config, serialize_config(cfg).as_bytes())?;
    let mut writer = MetricsWriter::create(&artifacts.metrics)?;

    let n = train.len();
    let b = cfg.batch;
    let mut epoch = 0u64;
    let mut order = batch_iterator(n, b, cfg.seed, epoch)?;
    let mut cursor = 0usize;
    let mut window_loss = 0.0;
    let mut window_count = 0u64;
    let mut initial_train_loss = f64::NAN;
    let mut rows = Vec::new();
    let mut best: Option<(u64, f64, Snapshot)> = None;

    for k in 0..cfg.iters {
        if cursor >= n {
            epoch += 1;
            order = batch_iterator(n, b, cfg.seed, epoch)?;
            cursor = 0;
        }
        let idx = &order.order()[cursor..(cursor + b).min(n)];
        cursor += idx.len();
        let (x, labels) = train.gather(idx);
        let beta = cfg.method.schedule.beta_at(k);
        let loss = step(&mut vars, cfg, &net, &mut state, beta, &x, &labels)?;
        if k == 0 {
            initial_train_loss = loss;
        }
        window_loss += loss;
        window_count += 1;

        let done = k + 1;
        if done % cfg.eval_every == 0 || done == cfg.iters {
            let snapshot = vars.quantized(&cfg.levels)?;
            let qw = snapshot.values();
            let acc_q = evaluate_calibrated(&net, &qw, &calibration, &splits.val)?;
            let cw = vars.continuous(cfg.method.method, &cfg.levels, cfg.method.schedule.beta_at(done).get())?;
            let acc_c = evaluate_calibrated(&net, &cw, &calibration, &splits.val)?;
            let row = MetricsRow {
                iter: done,
                train_loss: window_loss / window_count as f64,
                val_acc_quantized: acc_q,
                val_acc_continuous: acc_c,
                beta: cfg.method.schedule.beta_at(done).get(),
                lr: cfg.method.lr_at(done),
                elapsed_seconds: elapsed(),
            };
            writer.push(&row)?;
            rows.push(row);
            window_loss = 0.0;
            window_count = 0;
            if best.as_ref().is_none_or(|(_, acc, _)| acc_q > *acc) {
                best = Some((done, acc_q, snapshot));
            }
        }
    }

    let (best_iter, best_val, best_snapshot) = best.expect("the final iteration is always evaluated");
    let test_acc = evaluate_calibrated(&net, &best_snapshot.values(), &calibration, &splits.test)?;
    match &best_snapshot {
        Snapshot::Quantized(q) => write_pqw(&artifacts.weights, q)?,
        Snapshot::Float(w) => {
            let bytes: Vec<u8> = w.iter().flat_map(|v| v.to_le_bytes()).collect();
            write_file(&artifacts.weights, &bytes)?;
        }
    }
    let weights_bytes = std::fs::metadata(&artifacts.weights)
        .map_err(|e| Error::io(&artifacts.weights, e))?
        .len();
    let last = *rows.last().expect("at least one evaluation");
    let summary = RunSummary {
        method: cfg.method.method,
        seed: cfg.seed,
        param_count: net.param_count(),
        initial_train_loss,
        final_train_loss: last.train_loss,
        best_iter,
        best_val_acc_quantized: best_val,
        test_acc_quantized: test_acc,
        final_val_acc_quantized: last.val_acc_quantized,
        final_val_acc_continuous: last.val_acc_continuous,
        weights_bytes,
        elapsed_seconds: elapsed(),
        rows,
        best: best_snapshot,
        artifacts,
    };
    write_file(&summary.artifacts.summary, summary.to_text(cfg).as_bytes())?;
    Ok(summary)
}

/// Loads the configured dataset and trains.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let splits = load_splits(cfg)?;
    run_experiment_on(cfg, &splits)
}

/// Validation and test accuracy of a weight vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Evaluates decoded weights the same way training evaluates snapshots.
pub fn evaluate_weights(weights: &[f64], cfg: &ExperimentConfig, splits: &Splits) -> Result<EvalReport> {
    let net = build_network(cfg.arch, splits.train.dim(), splits.train.class_count)?;
    if weights.len() != net.param_count() {
        return Err(Error::Shape(format!(
            "{} weights for a network with {} parameters",
            weights.len(),
            net.param_count()
        )));
    }
    let calibration = splits.train.head(cfg.calibration_samples);
    let stats = calibrate_batchnorm(&net, weights, &calibration)?;
    Ok(EvalReport {
        val_acc: evaluate(&net, weights, &stats, &splits.val)?,
        test_acc: evaluate(&net, weights, &stats, &splits.test)?,
    })
}
