use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::data::{Normalization, SeriesKind, DEFAULT_SERIES_LEN};
use crate::error::{Error, Result};
use crate::model::{KUNetConfig, KernelKind};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::train::TrainConfig;

pub const ADAM_LR_GRID: [f64; 3] = [1e-5, 5e-5, 1e-4];
pub const SGD_LR_GRID: [f64; 3] = [1e-3, 5e-3, 1e-2];
pub const DEFAULT_OPTIMIZERS: [OptimizerKind; 3] = [
    OptimizerKind::Sgdm,
    OptimizerKind::EwSgdm,
    OptimizerKind::Adam,
];

/// Experiment settings as given on the command line or in a TOML file.
///
/// Every field is optional so a flag layer can be laid over a file layer;
/// unset fields fall back to the defaults of [`ExperimentConfig`].
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigLayer {
    /// Synthetic benchmark series [default: ds1]
    #[arg(long, value_enum)]
    pub dataset: Option<SeriesKind>,
    /// Read the series from a `t,value` CSV instead of generating it
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Length of the generated series [default: 20000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Std of Gaussian noise added to the generated series [default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Seed for the generated series noise [default: 0]
    #[arg(long)]
    pub data_seed: Option<u64>,

    /// Look-back window L [default: 512]
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Forecasting horizon T [default: 512]
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Raw patch length at the bottom level [default: 8]
    #[arg(long)]
    pub unit_len: Option<usize>,
    /// Grouping factor of each higher level, comma separated [default: 8,8]
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub multiples: Option<Vec<usize>>,
    /// Hidden width of MLP kernels [default: 128]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Kernel type [default: mlp]
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,

    /// Optimizers to compare, comma separated [default: sgdm,ew-sgdm,adam]
    #[arg(long, value_enum, value_delimiter = ',', ignore_case = true)]
    pub optimizers: Option<Vec<OptimizerKind>>,
    /// Learning rates for every optimizer, comma separated
    /// [default: 1e-5,5e-5,1e-4 for Adam; 1e-3,5e-3,1e-2 for the SGD family]
    #[arg(long, value_delimiter = ',')]
    pub lr_grid: Option<Vec<f64>>,
    /// EW-SGDM weight bases, comma separated, e.g. 4,6,8 for a base sweep
    /// [default: the grouping factor]
    #[arg(long, value_delimiter = ',')]
    pub ew_base: Option<Vec<f64>>,
    /// Momentum for SGDM and EW-SGDM, first-moment decay for Adam [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,

    /// Maximum number of epochs [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs, capped at --epochs [default: 20]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Windows per mini-batch [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Offset between consecutive training windows [default: 1]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Offset between consecutive validation and test windows [default: 1]
    #[arg(long)]
    pub eval_stride: Option<usize>,
    /// Per-window normalization [default: none]
    #[arg(long, value_enum)]
    pub normalization: Option<Normalization>,
    /// Run seeds, comma separated [default: 0]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,

    /// Output directory [default: runs]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Runs executed in parallel [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Record per-epoch wall-clock seconds (makes output non-reproducible) [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,
}

impl ConfigLayer {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win over those in `base`.
    pub fn over(self, base: ConfigLayer) -> ConfigLayer {
        macro_rules! pick {
            ($($f:ident),* $(,)?) => {
                ConfigLayer { $($f: self.$f.or(base.$f)),* }
            };
        }
        pick!(
            dataset,
            data,
            n,
            noise,
            data_seed,
            lookback,
            horizon,
            unit_len,
            multiples,
            hidden,
            kernel,
            optimizers,
            lr_grid,
            ew_base,
            momentum,
            epochs,
            patience,
            batch_size,
            stride,
            eval_stride,
            normalization,
            seeds,
            out,
            jobs,
            timing,
        )
    }

    pub fn resolve(self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let net = KUNetConfig {
            lookback: self.lookback.unwrap_or(d.net.lookback),
            horizon: self.horizon.unwrap_or(d.net.horizon),
            unit_len: self.unit_len.unwrap_or(d.net.unit_len),
            multiples: self.multiples.unwrap_or(d.net.multiples),
            hidden_dim: self.hidden.unwrap_or(d.net.hidden_dim),
        };
        let cfg = ExperimentConfig {
            dataset: self.dataset.unwrap_or(d.dataset),
            data_path: self.data,
            n: self.n.unwrap_or(d.n),
            noise: self.noise.unwrap_or(d.noise),
            data_seed: self.data_seed.unwrap_or(d.data_seed),
            net,
            kernel: self.kernel.unwrap_or(d.kernel),
            optimizers: self.optimizers.unwrap_or(d.optimizers),
            lr_grid: self.lr_grid,
            ew_bases: self.ew_base,
            momentum: self.momentum.unwrap_or(d.momentum),
            epochs: self.epochs.unwrap_or(d.epochs),
            patience: self.patience.unwrap_or(d.patience),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            stride: self.stride.unwrap_or(d.stride),
            eval_stride: self.eval_stride.unwrap_or(d.eval_stride),
            normalization: self.normalization.unwrap_or(d.normalization),
            seeds: self.seeds.unwrap_or(d.seeds),
            out: self.out.unwrap_or(d.out),
            jobs: self.jobs.unwrap_or(d.jobs),
            timing: self.timing.unwrap_or(d.timing),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: SeriesKind,
    pub data_path: Option<PathBuf>,
    pub n: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub net: KUNetConfig,
    pub kernel: KernelKind,
    pub optimizers: Vec<OptimizerKind>,
    /// `None` selects the per-family default grid.
    pub lr_grid: Option<Vec<f64>>,
    /// `None` derives the EW-SGDM schedule from the grouping factors.
    pub ew_bases: Option<Vec<f64>>,
    pub momentum: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub stride: usize,
    pub eval_stride: usize,
    pub normalization: Normalization,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: SeriesKind::Ds1,
            data_path: None,
            n: DEFAULT_SERIES_LEN,
            noise: 0.0,
            data_seed: 0,
            net: KUNetConfig::default(),
            kernel: KernelKind::Mlp,
            optimizers: DEFAULT_OPTIMIZERS.to_vec(),
            lr_grid: None,
            ew_bases: None,
            momentum: 0.9,
            epochs: 50,
            patience: 20,
            batch_size: 64,
            stride: 1,
            eval_stride: 1,
            normalization: Normalization::None,
            seeds: vec![0],
            out: PathBuf::from("runs"),
            jobs: 1,
            timing: false,
        }
    }
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub ew_base: Option<f64>,
    pub seed: u64,
}

impl RunSpec {
    /// File stem shared by the run's CSV and JSON.
    pub fn stem(&self, dataset: &str) -> String {
        let base = match (self.optimizer, self.ew_base) {
            (OptimizerKind::EwSgdm, Some(b)) => format!("_base{b}"),
            _ => String::new(),
        };
        format!(
            "{dataset}_{}_lr{}{base}_seed{}",
            self.optimizer.slug(),
            self.lr,
            self.seed
        )
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.optimizers.is_empty() {
            return bad("at least one optimizer is required");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.jobs == 0 {
            return bad("--jobs must be at least 1");
        }
        if matches!(&self.lr_grid, Some(g) if g.is_empty()) {
            return bad("--lr-grid must not be empty");
        }
        if matches!(&self.ew_bases, Some(b) if b.is_empty()) {
            return bad("--ew-base must not be empty");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("--noise must be a finite non-negative number");
        }
        for spec in self.runs() {
            self.train_config(&spec).validate()?;
        }
        Ok(())
    }

    pub fn lr_grid_for(&self, kind: OptimizerKind) -> Vec<f64> {
        match (&self.lr_grid, kind) {
            (Some(g), _) => g.clone(),
            (None, OptimizerKind::Adam) => ADAM_LR_GRID.to_vec(),
            (None, _) => SGD_LR_GRID.to_vec(),
        }
    }

    /// The cartesian product optimizer × lr × ew base × seed, in that
    /// nesting order.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &optimizer in &self.optimizers {
            let bases: Vec<Option<f64>> = match (optimizer, &self.ew_bases) {
                (OptimizerKind::EwSgdm, Some(b)) => b.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            for lr in self.lr_grid_for(optimizer) {
                for &ew_base in &bases {
                    for &seed in &self.seeds {
                        out.push(RunSpec {
                            optimizer,
                            lr,
                            ew_base,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn train_config(&self, spec: &RunSpec) -> TrainConfig {
        let mut opt = OptimizerConfig::new(spec.optimizer, spec.lr).with_momentum(self.momentum);
        opt.ew_base = spec.ew_base;
        TrainConfig {
            epochs: self.epochs,
            patience: self.patience.min(self.epochs),
            batch_size: self.batch_size,
            optimizer: opt,
            seed: spec.seed,
            stride: self.stride,
            eval_stride: self.eval_stride,
            normalization: self.normalization,
        }
    }
}
