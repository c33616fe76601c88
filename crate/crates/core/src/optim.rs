//! Parameter update rules.
//!
//! `EwSgdm` is SGD with momentum whose gradient at level `l` is multiplied by
//! `S^(l-1)` before it enters the velocity buffer:
//!
//! ```text
//! g' = S^(l-1) · g
//! v  = β·v + g'
//! θ  = θ − η·v
//! ```
//!
//! A level-`l` kernel is applied `L / S^l` times per window, so the weighted
//! accumulated gradient carries the same `L / S` effective count at every
//! level. Encoder and decoder kernels of the same level share a weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::model::{KUNet, Kernel};
use crate::train::mse_grad_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum OptimizerKind {
    #[serde(rename = "SGD")]
    #[value(name = "sgd")]
    Sgd,
    #[serde(rename = "SGDM")]
    #[value(name = "sgdm")]
    Sgdm,
    #[serde(rename = "Adam")]
    #[value(name = "adam")]
    Adam,
    #[serde(rename = "EW-SGDM")]
    #[value(name = "ew-sgdm")]
    EwSgdm,
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Sgdm => "SGDM",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::EwSgdm => "EW-SGDM",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::Adam => "adam",
            OptimizerKind::EwSgdm => "ew-sgdm",
        }
    }
}

/// `S^(l-1)` for `l ≥ 1`.
pub fn level_weight(level: usize, base: f64) -> Result<f64> {
    if level < 1 {
        return Err(Error::InvalidConfig(format!(
            "level must be >= 1, got {level}"
        )));
    }
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "weight base must be positive, got {base}"
        )));
    }
    Ok((1..level).fold(1.0, |w, _| w * base))
}

/// Per-level gradient weights, indexed from level 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    weights: Vec<f64>,
}

impl WeightSchedule {
    /// `weights[l] = S^(l-1)` for `l = 1..=depth`.
    pub fn exponential(base: f64, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        let weights = (1..=depth)
            .map(|l| level_weight(l, base))
            .collect::<Result<_>>()?;
        Ok(Self { weights })
    }

    /// Weight at level `l` is the product of the grouping factors below it;
    /// equal to `S^(l-1)` when every multiple is `S`.
    pub fn from_multiples(multiples: &[usize]) -> Self {
        let mut weights = vec![1.0];
        for &m in multiples {
            weights.push(weights.last().unwrap() * m as f64);
        }
        Self { weights }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, level: usize) -> Option<f64> {
        level
            .checked_sub(1)
            .and_then(|i| self.weights.get(i))
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// SGDM/EW-SGDM momentum, and Adam's first-moment decay.
    pub momentum: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Exponent base for EW-SGDM. `None` derives the schedule from the
    /// net's grouping factors.
    pub ew_base: Option<f64>,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            momentum: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ew_base: None,
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_ew_base(mut self, base: f64) -> Self {
        self.ew_base = Some(base);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x.is_finite() && (0.0..1.0).contains(&x);
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr must be >= 0, got {}",
                self.lr
            )));
        }
        if !unit(self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !unit(self.adam_beta2) || !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig(
                "adam beta2 must be in [0, 1) and eps > 0".into(),
            ));
        }
        if let Some(b) = self.ew_base {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "ew base must be > 0, got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// `θ ← θ − η·g`
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    check_shapes(param, grad)?;
    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// `v ← β·v + w·g; θ ← θ − η·v`. `weight = 1` is plain SGDM.
pub fn sgdm_step(
    param: &mut Matrix,
    grad: &Matrix,
    velocity: &mut Matrix,
    lr: f64,
    momentum: f64,
    weight: f64,
) -> Result<()> {
    check_shapes(param, grad)?;
    check_shapes(velocity, grad)?;
    for ((p, v), &g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grad.data())
    {
        *v = momentum * *v + weight * g;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// 1-based step index used for bias correction.
    pub t: u64,
}

/// Bias-corrected Adam: `θ ← θ − η·m̂/(√v̂ + ε)`.
pub fn adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    hp: AdamParams,
) -> Result<()> {
    check_shapes(param, grad)?;
    check_shapes(m, grad)?;
    check_shapes(v, grad)?;
    let t = i32::try_from(hp.t.max(1)).unwrap_or(i32::MAX);
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, m), v), &g) in param
        .data_mut()
        .iter_mut()
        .zip(m.data_mut())
        .zip(v.data_mut())
        .zip(grad.data())
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

fn check_shapes(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "optimizer step",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Optimizer with its per-parameter buffers, laid out kernel by kernel in
/// [`KUNet::kernels`] order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step_count: u64,
    schedule: Option<WeightSchedule>,
    velocity: Vec<Vec<Matrix>>,
    moment1: Vec<Vec<Matrix>>,
    moment2: Vec<Vec<Matrix>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, net: &KUNet) -> Result<Self> {
        config.validate()?;
        let zeros = || -> Vec<Vec<Matrix>> {
            net.kernels()
                .map(|k| {
                    k.params()
                        .map(|p| Matrix::zeros(p.rows(), p.cols()))
                        .collect()
                })
                .collect()
        };
        let (velocity, moment1, moment2) = match config.kind {
            OptimizerKind::Sgd => (vec![], vec![], vec![]),
            OptimizerKind::Sgdm | OptimizerKind::EwSgdm => (zeros(), vec![], vec![]),
            OptimizerKind::Adam => (vec![], zeros(), zeros()),
        };
        let schedule = match (config.kind, config.ew_base) {
            (OptimizerKind::EwSgdm, Some(base)) => {
                Some(WeightSchedule::exponential(base, net.depth())?)
            }
            (OptimizerKind::EwSgdm, None) => {
                Some(WeightSchedule::from_multiples(&net.config().multiples))
            }
            _ => None,
        };
        Ok(Self {
            config,
            step_count: 0,
            schedule,
            velocity,
            moment1,
            moment2,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn schedule(&self) -> Option<&WeightSchedule> {
        self.schedule.as_ref()
    }

    pub fn velocity(&self) -> &[Vec<Matrix>] {
        &self.velocity
    }

    pub fn moments(&self) -> (&[Vec<Matrix>], &[Vec<Matrix>]) {
        (&self.moment1, &self.moment2)
    }

    /// Multiplier applied to this kernel's gradient before the update.
    pub fn gradient_weight(&self, kernel: &Kernel) -> Result<f64> {
        match &self.schedule {
            None => Ok(1.0),
            Some(s) => s.weight(kernel.level()).ok_or_else(|| Error::MissingLevel {
                kernel: kernel.id.to_string(),
                level: kernel.level(),
            }),
        }
    }

    /// Applies one update to every parameter of `net` from its gradient buffers.
    pub fn step(&mut self, net: &mut KUNet) -> Result<()> {
        let weights = net
            .kernels()
            .map(|k| self.gradient_weight(k))
            .collect::<Result<Vec<_>>>()?;
        self.step_count += 1;
        let cfg = self.config.clone();
        for (ki, kernel) in net.kernels_mut().enumerate() {
            for (ti, (param, grad)) in kernel.params_and_grads_mut().enumerate() {
                match cfg.kind {
                    OptimizerKind::Sgd => sgd_step(param, grad, cfg.lr)?,
                    OptimizerKind::Sgdm | OptimizerKind::EwSgdm => sgdm_step(
                        param,
                        grad,
                        &mut self.velocity[ki][ti],
                        cfg.lr,
                        cfg.momentum,
                        weights[ki],
                    )?,
                    OptimizerKind::Adam => adam_step(
                        param,
                        grad,
                        &mut self.moment1[ki][ti],
                        &mut self.moment2[ki][ti],
                        AdamParams {
                            lr: cfg.lr,
                            beta1: cfg.momentum,
                            beta2: cfg.adam_beta2,
                            eps: cfg.adam_eps,
                            t: self.step_count,
                        },
                    )?,
                }
            }
        }
        Ok(())
    }

    /// Order-sensitive fingerprint of all auxiliary buffers and the step count.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.step_count;
        for buf in self
            .velocity
            .iter()
            .chain(&self.moment1)
            .chain(&self.moment2)
        {
            for m in buf {
                for x in m.data() {
                    h = (h ^ x.to_bits()).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Result of [`weighted_grad_identity_check`] at one level.
#[derive(Debug, Clone, Serialize)]
pub struct LevelIdentity {
    pub level: usize,
    pub weight: f64,
    /// Encoder applications per window.
    pub invocations: usize,
    /// Applications actually observed during the constant-window forward.
    pub observed_invocations: u64,
    /// `weight × invocations`; the same at every level when the schedule
    /// matches the hierarchy.
    pub effective_invocations: f64,
    /// Max relative deviation of the weighted gradient from `weight × raw`.
    pub weighted_rel_err: f64,
    /// Max relative deviation of the accumulated constant-window gradient
    /// from `invocations × single-patch gradient`.
    pub collapse_rel_err: f64,
    pub weighted_pass: bool,
    pub collapse_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub levels: Vec<LevelIdentity>,
    pub weighted_tol: f64,
    pub collapse_tol: f64,
}

impl IdentityReport {
    pub fn all_pass(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.weighted_pass && l.collapse_pass)
    }
}

pub const WEIGHTED_TOL: f64 = 1e-12;
pub const COLLAPSE_TOL: f64 = 1e-10;

/// Empirical check of the gradient-accumulation identities.
///
/// 1. On `(inputs, targets)`, the gradient that EW-SGDM feeds into its
///    velocity buffer at level `l` equals `weight(l) ×` the raw accumulated
///    gradient. The weighted side is read back from a real optimizer step
///    with zero momentum.
/// 2. On a constant window every level-`l` encoder patch is identical, so
///    the gradient of the per-patch probe loss `½‖φ(x)‖²` accumulated over
///    all patches equals the invocation count times the gradient of one
///    patch in isolation.
pub fn weighted_grad_identity_check(
    net: &KUNet,
    inputs: &Matrix,
    targets: &Matrix,
    schedule: &WeightSchedule,
) -> Result<IdentityReport> {
    if schedule.depth() != net.depth() {
        return Err(Error::InvalidConfig(format!(
            "schedule depth {} does not match net depth {}",
            schedule.depth(),
            net.depth()
        )));
    }
    let mut raw_net = net.clone();
    raw_net.zero_grads();
    let pred = raw_net.forward_batch(inputs)?;
    raw_net.backward_batch(&mse_grad_matrix(&pred, targets)?)?;

    let mut stepped = raw_net.clone();
    let mut ew = Optimizer::new(
        OptimizerConfig::new(OptimizerKind::EwSgdm, 0.0).with_momentum(0.0),
        &stepped,
    )?;
    ew.schedule = Some(schedule.clone());
    ew.step(&mut stepped)?;

    let mut weighted_err = vec![0.0f64; net.depth()];
    for (ki, kernel) in raw_net.kernels().enumerate() {
        let w = schedule
            .weight(kernel.level())
            .ok_or_else(|| Error::MissingLevel {
                kernel: kernel.id.to_string(),
                level: kernel.level(),
            })?;
        for (g, v) in kernel.grads().zip(&ew.velocity[ki]) {
            let err = max_rel_err(v.data(), &g.scale(w).into_vec());
            let slot = &mut weighted_err[kernel.level() - 1];
            *slot = slot.max(err);
        }
    }

    let mut probe = net.clone();
    probe.reset_applications();
    let constant = Matrix::filled(1, net.config().lookback, 1.0);
    probe.forward_batch(&constant)?;
    let observed = probe.recorded_applications();
    let counts = net.invocation_counts();

    let mut levels = Vec::with_capacity(net.depth());
    for level in 1..=net.depth() {
        let kernel = probe.encoder_kernel(level);
        let x = kernel
            .cache()
            .ok_or(Error::BackwardBeforeForward)?
            .input()
            .clone();
        let (y_all, cache_all) = kernel.evaluate(&x)?;
        let (_, total) = kernel.gradients(&cache_all, &y_all)?;
        let single_x = Matrix::from_vec(1, x.cols(), x.row(0).to_vec())?;
        let (y_one, cache_one) = kernel.evaluate(&single_x)?;
        let (_, single) = kernel.gradients(&cache_one, &y_one)?;

        let n = counts[&level];
        let collapse_err = total
            .iter()
            .zip(&single)
            .map(|(t, s)| max_rel_err(t.data(), &s.scale(n as f64).into_vec()))
            .fold(0.0, f64::max);
        let weight = schedule.weight(level).unwrap();
        levels.push(LevelIdentity {
            level,
            weight,
            invocations: n,
            observed_invocations: observed[&level],
            effective_invocations: weight * n as f64,
            weighted_rel_err: weighted_err[level - 1],
            collapse_rel_err: collapse_err,
            weighted_pass: weighted_err[level - 1] <= WEIGHTED_TOL,
            collapse_pass: collapse_err <= COLLAPSE_TOL && observed[&level] == n as u64,
        });
    }
    Ok(IdentityReport {
        levels,
        weighted_tol: WEIGHTED_TOL,
        collapse_tol: COLLAPSE_TOL,
    })
}

/// `max |a − b| / max |b|`, zero when both are identically zero.
fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
