use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, RunSpec};
use crate::data::{generate_with_noise, redundancy, SeriesDataset, SeriesKind};
use crate::error::{Error, Result};
use crate::math::Rng;
use crate::model::{KUNet, KUNetConfig};
use crate::optim::{weighted_grad_identity_check, IdentityReport, OptimizerKind, WeightSchedule};
use crate::train::{train, RunRecord};

/// Rows in the random batch used by the gradient-identity check.
const ANALYZE_BATCH: usize = 4;

/// Writes a synthetic series to `out` as a `t,value` CSV.
pub fn cmd_generate(
    kind: SeriesKind,
    n: usize,
    seed: u64,
    noise: f64,
    out: &Path,
) -> Result<SeriesDataset> {
    let data = generate_with_noise(kind, n, noise, &mut Rng::seed_from(seed))?;
    data.write_csv(out)?;
    Ok(data)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<SeriesDataset> {
    match &cfg.data_path {
        Some(path) => {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into());
            SeriesDataset::read_csv(name, path)
        }
        None => generate_with_noise(
            cfg.dataset,
            cfg.n,
            cfg.noise,
            &mut Rng::seed_from(cfg.data_seed),
        ),
    }
}

/// Trains one sweep point from a fresh net. The net initialisation and the
/// shuffle order depend only on `spec.seed`, so runs that differ only in
/// optimizer or lr start from the same weights.
pub fn run_one(cfg: &ExperimentConfig, data: &SeriesDataset, spec: &RunSpec) -> Result<RunRecord> {
    let mut rng = Rng::seed_from(spec.seed);
    let mut net = KUNet::build(cfg.net.clone(), cfg.kernel, &mut rng)?;
    let mut train_cfg = cfg.train_config(spec);
    train_cfg.seed = rng.next_u64();
    let mut record = train(&mut net, data, &train_cfg)?;
    if !cfg.timing {
        record.strip_timing();
    }
    Ok(record)
}

/// One line of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Weight base actually used by EW-SGDM; empty for other optimizers or
    /// when the schedule follows unequal grouping factors.
    pub ew_base: Option<f64>,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_val_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub csv: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub record: RunRecord,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Runs the whole sweep, writing one CSV and one JSON per run plus
/// `summary.csv`. Rows of the returned summary are sorted by test MSE,
/// runs without a best epoch last.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<(Vec<RunOutcome>, Vec<SummaryRow>)> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let specs = cfg.runs();

    let run = |spec: &RunSpec| -> Result<RunOutcome> {
        let record = run_one(cfg, &data, spec)?;
        let stem = spec.stem(&data.name);
        let csv = cfg.out.join(format!("{stem}.csv"));
        let json = cfg.out.join(format!("{stem}.json"));
        record.save_csv(&csv)?;
        record.save_json(&json)?;
        Ok(RunOutcome {
            spec: spec.clone(),
            record,
            csv,
            json,
        })
    };

    let outcomes: Vec<RunOutcome> = if cfg.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| specs.par_iter().map(run).collect::<Result<_>>())?
    } else {
        specs.iter().map(run).collect::<Result<_>>()?
    };

    let summary = summarize(&cfg.net, &outcomes);
    write_summary(&summary, &cfg.out.join("summary.csv"))?;
    Ok((outcomes, summary))
}

pub fn summarize(net: &KUNetConfig, outcomes: &[RunOutcome]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = outcomes
        .iter()
        .map(|o| {
            let best = o.record.best_row();
            let ew_base = match o.spec.optimizer {
                OptimizerKind::EwSgdm => o
                    .spec
                    .ew_base
                    .or_else(|| net.common_multiple().map(|m| m as f64)),
                _ => None,
            };
            SummaryRow {
                optimizer: o.spec.optimizer,
                lr: o.spec.lr,
                ew_base,
                seed: o.spec.seed,
                best_epoch: o.record.best_epoch,
                best_val_mse: best.map(|r| r.val_mse),
                test_mse: best.map(|r| r.test_mse),
                csv: o.csv.clone(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &SummaryRow| r.test_mse.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b))
    });
    rows
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "optimizer",
        "lr",
        "ew_base",
        "seed",
        "best_epoch",
        "best_val_mse",
        "test_mse",
    ])?;
    for r in rows {
        w.write_record([
            r.optimizer.label().to_string(),
            r.lr.to_string(),
            opt(r.ew_base.map(|b| b.to_string())),
            r.seed.to_string(),
            opt(r.best_epoch.map(|e| e.to_string())),
            opt(r.best_val_mse.map(|v| v.to_string())),
            opt(r.test_mse.map(|v| v.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub net: KUNetConfig,
    pub redundancy: f64,
    /// Encoder kernel applications per window, bottom-up.
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
    pub identity: IdentityReport,
}

/// Static properties of the hierarchy plus the gradient-identity check on
/// a freshly initialised net.
pub fn cmd_analyze(cfg: &ExperimentConfig) -> Result<AnalyzeReport> {
    cfg.net.validate()?;
    let depth = cfg.net.depth();
    let schedule = match cfg.ew_bases.as_deref() {
        Some([base, ..]) => WeightSchedule::exponential(*base, depth)?,
        _ => WeightSchedule::from_multiples(&cfg.net.multiples),
    };
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let mut rng = Rng::seed_from(seed);
    let net = KUNet::build(cfg.net.clone(), cfg.kernel, &mut rng)?;
    let inputs = rng.normal(ANALYZE_BATCH, cfg.net.lookback, 0.0, 1.0);
    let targets = rng.normal(ANALYZE_BATCH, cfg.net.horizon, 0.0, 1.0);
    let identity = weighted_grad_identity_check(&net, &inputs, &targets, &schedule)?;
    Ok(AnalyzeReport {
        redundancy: redundancy(cfg.net.lookback, cfg.net.unit_len)?,
        counts: cfg.net.patch_counts(),
        weights: schedule.weights().to_vec(),
        net: cfg.net.clone(),
        identity,
    })
}

fn joined<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for AnalyzeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = &self.net;
        writeln!(
            f,
            "lookback {} horizon {} unit_len {} multiples {:?} depth {}",
            n.lookback,
            n.horizon,
            n.unit_len,
            n.multiples,
            n.depth()
        )?;
        writeln!(f, "redundancy {}", self.redundancy)?;
        writeln!(f, "counts {}", joined(&self.counts))?;
        writeln!(f, "weights {}", joined(&self.weights))?;
        writeln!(
            f,
            "{:>5} {:>8} {:>8} {:>9} {:>9} {:>13} {:>13} {:>6}",
            "level",
            "patches",
            "observed",
            "weight",
            "effective",
            "weighted_err",
            "collapse_err",
            "check"
        )?;
        for l in &self.identity.levels {
            writeln!(
                f,
                "{:>5} {:>8} {:>8} {:>9} {:>9} {:>13.3e} {:>13.3e} {:>6}",
                l.level,
                l.invocations,
                l.observed_invocations,
                l.weight,
                l.effective_invocations,
                l.weighted_rel_err,
                l.collapse_rel_err,
                if l.weighted_pass && l.collapse_pass {
                    "PASS"
                } else {
                    "FAIL"
                }
            )?;
        }
        write!(
            f,
            "identity {} (weighted tol {:e}, collapse tol {:e})",
            if self.identity.all_pass() {
                "PASS"
            } else {
                "FAIL"
            },
            self.identity.weighted_tol,
            self.identity.collapse_tol
        )
    }
}
