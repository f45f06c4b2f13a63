//! Training steps for every method, plus the inner optimizers (SGD with
//! momentum, Adam) that move the optimized variables.

mod schedule;
mod steps;

pub use schedule::{anneal_update, step_decay, AnnealSchedule};
pub use steps::{
    bc_step, final_quantize, pgd_softmax_update, pgd_sparsemax_step, picm_step, pmf_direct_step,
    pmf_step, ref_step, LossGrad,
};

use crate::error::{Error, Result};
use crate::simplex::flush_subnormal;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Full-precision reference.
    Ref,
    /// BinaryConnect.
    Bc,
    /// Proximal ICM (hardmax projection, binary only).
    Picm,
    PgdSparsemax,
    Pmf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ref => "ref",
            Method::Bc => "bc",
            Method::Picm => "picm",
            Method::PgdSparsemax => "pgd_sparsemax",
            Method::Pmf => "pmf",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_lowercase().as_str() {
            "ref" => Some(Method::Ref),
            "bc" => Some(Method::Bc),
            "picm" => Some(Method::Picm),
            "pgd_sparsemax" => Some(Method::PgdSparsemax),
            "pmf" => Some(Method::Pmf),
            _ => None,
        }
    }

    /// Whether the method optimizes auxiliary variables on the simplex.
    pub fn uses_simplex(self) -> bool {
        matches!(self, Method::Picm | Method::PgdSparsemax | Method::Pmf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerOptimizer {
    Sgd,
    Adam,
}

impl InnerOptimizer {
    pub fn name(self) -> &'static str {
        match self {
            InnerOptimizer::Sgd => "sgd",
            InnerOptimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<InnerOptimizer> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Some(InnerOptimizer::Sgd),
            "adam" => Some(InnerOptimizer::Adam),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    pub lr: f64,
    pub lr_interval: u64,
    pub lr_scale: f64,
    pub optimizer: InnerOptimizer,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Keep the unconstrained `ũ` between steps. When false, PMF iterates
    /// directly on `u` with the softmax PGD update.
    pub store_aux: bool,
    /// Clip the optimized variables after each update so the decoded
    /// continuous weight stays in `[min q, max q]` (BC and PICM).
    pub clip_aux: bool,
    pub schedule: AnnealSchedule,
}

impl MethodConfig {
    /// Defaults of the MNIST column of the hyperparameter table.
    pub fn new(method: Method) -> Self {
        MethodConfig {
            method,
            lr: 0.001,
            lr_interval: 7000,
            lr_scale: 0.2,
            optimizer: InnerOptimizer::Adam,
            momentum: 0.0,
            weight_decay: 0.0,
            store_aux: true,
            clip_aux: matches!(method, Method::Bc | Method::Picm),
            schedule: AnnealSchedule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale <= 1.0) {
            return Err(Error::Domain(format!(
                "lr_scale must lie in (0, 1], got {}",
                self.lr_scale
            )));
        }
        if self.lr_interval == 0 {
            return Err(Error::Domain("lr_interval must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Domain(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        AnnealSchedule::new(self.schedule.beta0, self.schedule.rho, self.schedule.period)?;
        Ok(())
    }

    pub fn lr_at(&self, iter: u64) -> f64 {
        step_decay(self.lr, self.lr_scale, self.lr_interval, iter)
    }
}

/// Learning rate at `iter` under `cfg`'s step decay.
pub fn lr_at(iter: u64, cfg: &MethodConfig) -> f64 {
    cfg.lr_at(iter)
}

/// Inner-optimizer buffers for one set of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub velocity: Vec<f64>,
    pub last_finite_loss: Option<f64>,
}

impl OptimizerState {
    /// Fresh state for `len` variables; only the buffers `optimizer` needs
    /// are allocated.
    pub fn new(len: usize, optimizer: InnerOptimizer) -> Self {
        let (moments, velocity) = match optimizer {
            InnerOptimizer::Adam => (len, 0),
            InnerOptimizer::Sgd => (0, len),
        };
        OptimizerState {
            step: 0,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            velocity: vec![0.0; velocity],
            last_finite_loss: None,
        }
    }

    pub(crate) fn divergence(&self) -> Error {
        Error::Divergence {
            iter: self.step,
            last_finite_loss: self.last_finite_loss,
        }
    }

    /// Rejects a non-finite loss or gradient, otherwise records the loss.
    pub(crate) fn accept(&mut self, loss: f64, grad: &[f64]) -> Result<()> {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(self.divergence());
        }
        self.last_finite_loss = Some(loss);
        Ok(())
    }

    /// One inner-optimizer update of `vars` at the scheduled learning rate,
    /// with weight decay folded into the gradient. Advances `step`.
    pub(crate) fn apply(&mut self, vars: &mut [f64], grads: &mut [f64], cfg: &MethodConfig) -> Result<()> {
        if vars.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} variables but {} gradient entries",
                vars.len(),
                grads.len()
            )));
        }
        if cfg.weight_decay > 0.0 {
            for (g, &x) in grads.iter_mut().zip(vars.iter()) {
                *g += cfg.weight_decay * x;
            }
        }
        let lr = cfg.lr_at(self.step);
        match cfg.optimizer {
            InnerOptimizer::Adam => adam_update(self, vars, grads, lr)?,
            InnerOptimizer::Sgd => sgd_update(self, vars, grads, lr, cfg.momentum)?,
        }
        self.step += 1;
        if vars.iter().any(|v| !v.is_finite()) {
            return Err(self.divergence());
        }
        Ok(())
    }
}

/// Bias-corrected Adam. Uses `state.step + 1` as the time index and leaves
/// `state.step` untouched.
pub fn adam_update(state: &mut OptimizerState, vars: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    let n = vars.len();
    if grads.len() != n {
        return Err(Error::Shape(format!("{n} variables but {} gradients", grads.len())));
    }
    if state.first_moment.len() != n || state.second_moment.len() != n {
        state.first_moment = vec![0.0; n];
        state.second_moment = vec![0.0; n];
    }
    let t = (state.step + 1).min(i32::MAX as u64) as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = flush_subnormal(ADAM_BETA1 * state.first_moment[i] + (1.0 - ADAM_BETA1) * g);
        let v = flush_subnormal(ADAM_BETA2 * state.second_moment[i] + (1.0 - ADAM_BETA2) * g * g);
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        vars[i] -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// SGD with heavy-ball momentum `v ← μv + g`, `x ← x − lr·v`. Leaves
/// `state.step` untouched.
pub fn sgd_update(
    state: &mut OptimizerState,
    vars: &mut [f64],
    grads: &[f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let n = vars.len();
    if grads.len() != n {
        return Err(Error::Shape(format!("{n} variables but {} gradients", grads.len())));
    }
    if momentum == 0.0 {
        for (x, g) in vars.iter_mut().zip(grads) {
            *x -= lr * g;
        }
        return Ok(());
    }
    if state.velocity.len() != n {
        state.velocity = vec![0.0; n];
    }
    for i in 0..n {
        let v = flush_subnormal(momentum * state.velocity[i] + grads[i]);
        state.velocity[i] = v;
        vars[i] -= lr * v;
    }
    Ok(())
}
