//! MSE loss, evaluation and the epoch loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Normalization, Part, SeriesDataset, WindowSet};
use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};
use crate::model::{KUNet, KUNetConfig, KernelKind};
use crate::optim::{Optimizer, OptimizerConfig};

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            left: (pred.len(), 1),
            right: (target.len(), 1),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse of empty sequences"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `∂ mse / ∂ pred_i = 2·(pred_i − target_i) / n`
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "mse_grad",
            left: (pred.len(), 1),
            right: (target.len(), 1),
        });
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect())
}

/// Gradient of the batch loss, the mean of per-window MSEs.
pub fn mse_grad_matrix(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_grad",
            left: pred.shape(),
            right: target.shape(),
        });
    }
    let g = mse_grad(pred.data(), target.data())?;
    Matrix::from_vec(pred.rows(), pred.cols(), g)
}

fn load_batch(
    windows: &WindowSet<'_>,
    origins: &[usize],
    norm: Normalization,
) -> Result<(Matrix, Matrix)> {
    let (l, t) = (windows.lookback(), windows.horizon());
    let mut x = Matrix::zeros(origins.len(), l);
    let mut y = Matrix::zeros(origins.len(), t);
    for (i, &o) in origins.iter().enumerate() {
        let pair = windows.at_origin(o);
        pair.write_into(
            norm,
            &mut x.data_mut()[i * l..(i + 1) * l],
            &mut y.data_mut()[i * t..(i + 1) * t],
        );
    }
    Ok((x, y))
}

const EVAL_BATCH: usize = 256;

/// Mean per-window MSE over `windows`. Parameters and gradient buffers are
/// left untouched.
pub fn evaluate(net: &mut KUNet, windows: &WindowSet<'_>, norm: Normalization) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Empty("evaluation windows"));
    }
    let mut total = 0.0;
    for chunk in windows.origins().chunks(EVAL_BATCH) {
        let (x, y) = load_batch(windows, chunk, norm)?;
        let pred = net.predict(&x)?;
        for i in 0..pred.rows() {
            total += mse(pred.row(i), y.row(i))?;
        }
    }
    Ok(total / windows.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub stride: usize,
    pub eval_stride: usize,
    pub normalization: Normalization,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig) -> Self {
        Self {
            epochs: 50,
            patience: 20,
            batch_size: 64,
            optimizer,
            seed: 0,
            stride: 1,
            eval_stride: 1,
            normalization: Normalization::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.stride == 0 || self.eval_stride == 0 {
            return Err(Error::InvalidConfig(
                "batch size and strides must be at least 1".into(),
            ));
        }
        if self.patience > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "patience ({}) exceeds epochs ({})",
                self.patience, self.epochs
            )));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    /// Mean |g′| per kernel, where `g′` is the gradient as the optimizer
    /// consumes it (level-weighted for EW-SGDM). Taken from the first batch
    /// of the epoch; column order follows [`RunRecord::kernels`].
    pub grad_stats: Vec<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub net: KUNetConfig,
    pub kernel: KernelKind,
    pub train: TrainConfig,
    /// Kernel names, encoder bottom-up then decoder top-down.
    pub kernels: Vec<String>,
    pub rows: Vec<EpochRow>,
    pub best_epoch: Option<usize>,
}

impl RunRecord {
    pub fn best_row(&self) -> Option<&EpochRow> {
        let best = self.best_epoch?;
        self.rows.iter().find(|r| r.epoch == best)
    }

    pub fn final_train_mse(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_mse)
    }

    /// Drops wall-clock timings so serialized output depends only on inputs.
    pub fn strip_timing(&mut self) {
        for r in &mut self.rows {
            r.seconds = None;
        }
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["epoch", "train_mse", "val_mse", "test_mse"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.kernels.iter().map(|k| format!("grad_{k}")));
        h.push("seconds".into());
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.epoch.to_string(),
                r.train_mse.to_string(),
                r.val_mse.to_string(),
                r.test_mse.to_string(),
            ];
            rec.extend(r.grad_stats.iter().map(f64::to_string));
            rec.push(r.seconds.map(|s| s.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Trains `net` in place and restores the parameters of the best validation
/// epoch before returning.
pub fn train(net: &mut KUNet, data: &SeriesDataset, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let (l, t) = (net.config().lookback, net.config().horizon);
    let train_w = data.windows(Part::Train, l, t, cfg.stride)?;
    let val_w = data.windows(Part::Val, l, t, cfg.eval_stride)?;
    let test_w = data.windows(Part::Test, l, t, cfg.eval_stride)?;

    let mut record = RunRecord {
        dataset: data.name.clone(),
        net: net.config().clone(),
        kernel: net.kind(),
        train: cfg.clone(),
        kernels: net.kernels().map(|k| k.id.to_string()).collect(),
        rows: Vec::new(),
        best_epoch: None,
    };

    let mut opt = Optimizer::new(cfg.optimizer.clone(), net)?;
    let grad_weights = net
        .kernels()
        .map(|k| opt.gradient_weight(k))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = Rng::seed_from(cfg.seed);
    let mut order = train_w.origins().to_vec();
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut grad_stats = vec![0.0; grad_weights.len()];
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = load_batch(&train_w, batch, cfg.normalization)?;
            net.zero_grads();
            let pred = net.forward_batch(&x)?;
            let loss = mse(pred.data(), y.data())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi + 1,
                    value: loss,
                });
            }
            loss_sum += loss * batch.len() as f64;
            net.backward_batch(&mse_grad_matrix(&pred, &y)?)?;
            if bi == 0 {
                for ((s, k), w) in grad_stats.iter_mut().zip(net.kernels()).zip(&grad_weights) {
                    *s = w * k.mean_abs_grad();
                }
            }
            opt.step(net)?;
        }
        net.clear_cache();
        let train_mse = loss_sum / order.len() as f64;
        let val_mse = evaluate(net, &val_w, cfg.normalization)?;
        let test_mse = evaluate(net, &test_w, cfg.normalization)?;
        record.rows.push(EpochRow {
            epoch,
            train_mse,
            val_mse,
            test_mse,
            grad_stats,
            seconds: Some(started.elapsed().as_secs_f64()),
        });

        if val_mse < best_val {
            best_val = val_mse;
            record.best_epoch = Some(epoch);
            best_params = Some(net.flat_params());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some(p) = best_params {
        net.set_flat_params(&p)?;
    }
    Ok(record)
}
