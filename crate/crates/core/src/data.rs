//! Synthetic sinusoid benchmarks, chronological splits and sliding windows.
//!
//! All three series are sums of five sines over the frequencies
//! `{1, 2, 4, 8, 16}` cycles per `PERIOD` steps:
//!
//! * `ds1`: `Σ sin(2π f_k t / P)`
//! * `ds2`: `Σ sin(2π f_k t / P + kπ/5)`
//! * `ds3`: `sin(2π t / 8P) · Σ (1/k) sin(2π f_k t / P + kπ/5)`
//!
//! Windows are never copied up front: a [`WindowSet`] keeps only origin
//! indices and hands out borrowed [`WindowPair`]s.

use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Rng;

pub const PERIOD: f64 = 512.0;
pub const FREQUENCIES: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
pub const DEFAULT_SERIES_LEN: usize = 20_000;
/// Twice the default look-back plus horizon (512 + 512).
pub const MIN_SERIES_LEN: usize = 2 * (512 + 512);
pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Ds1,
    Ds2,
    Ds3,
}

impl SeriesKind {
    pub fn name(self) -> &'static str {
        match self {
            SeriesKind::Ds1 => "ds1",
            SeriesKind::Ds2 => "ds2",
            SeriesKind::Ds3 => "ds3",
        }
    }

    /// Noise-free value at time step `t`.
    pub fn value_at(self, t: usize) -> f64 {
        let t = t as f64;
        let phase = |k: usize| k as f64 * PI / 5.0;
        let omega = |f: f64| 2.0 * PI * f * t / PERIOD;
        match self {
            SeriesKind::Ds1 => FREQUENCIES.iter().map(|&f| omega(f).sin()).sum(),
            SeriesKind::Ds2 => FREQUENCIES
                .iter()
                .enumerate()
                .map(|(i, &f)| (omega(f) + phase(i + 1)).sin())
                .sum(),
            SeriesKind::Ds3 => {
                let sum: f64 = FREQUENCIES
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| (omega(f) + phase(i + 1)).sin() / (i + 1) as f64)
                    .sum();
                (2.0 * PI * t / (8.0 * PERIOD)).sin() * sum
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

/// Raw univariate series with chronological split boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    values: Vec<f64>,
    train_end: usize,
    val_end: usize,
}

pub fn generate(kind: SeriesKind, n: usize, rng: &mut Rng) -> Result<SeriesDataset> {
    generate_with_noise(kind, n, 0.0, rng)
}

/// Like [`generate`], with additive `Normal(0, noise_std²)` noise drawn from
/// `rng`. No draws are made when `noise_std == 0`.
pub fn generate_with_noise(
    kind: SeriesKind,
    n: usize,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<SeriesDataset> {
    if n < MIN_SERIES_LEN {
        return Err(Error::SeriesTooShort {
            len: n,
            min: MIN_SERIES_LEN,
        });
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise std must be finite and >= 0, got {noise_std}"
        )));
    }
    let values = (0..n)
        .map(|t| {
            let v = kind.value_at(t);
            if noise_std > 0.0 {
                v + noise_std * rng.standard_normal()
            } else {
                v
            }
        })
        .collect();
    SeriesDataset::new(kind.name(), values)
}

impl SeriesDataset {
    /// Wraps raw values with the default 0.7/0.1/0.2 split.
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let mut ds = SeriesDataset {
            name: name.into(),
            values,
            train_end: 0,
            val_end: 0,
        };
        ds.apply_split(DEFAULT_RATIOS)?;
        Ok(ds)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn train_end(&self) -> usize {
        self.train_end
    }

    pub fn val_end(&self) -> usize {
        self.val_end
    }

    /// Returns a copy re-partitioned by `ratios` (train, val, test).
    pub fn split(&self, ratios: [f64; 3]) -> Result<SeriesDataset> {
        let mut out = self.clone();
        out.apply_split(ratios)?;
        Ok(out)
    }

    fn apply_split(&mut self, ratios: [f64; 3]) -> Result<()> {
        if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be positive, got {ratios:?}"
            )));
        }
        let total: f64 = ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must sum to 1, got {total}"
            )));
        }
        let n = self.values.len() as f64;
        // The slack absorbs representation error such as 0.7 + 0.1 < 0.8.
        let cut = |frac: f64| (frac * n + 1e-6).floor() as usize;
        let train_end = cut(ratios[0]);
        let val_end = cut(ratios[0] + ratios[1]);
        if !(0 < train_end && train_end < val_end && val_end < self.values.len()) {
            return Err(Error::InvalidConfig(format!(
                "split {ratios:?} of {} points leaves an empty partition",
                self.values.len()
            )));
        }
        self.train_end = train_end;
        self.val_end = val_end;
        Ok(())
    }

    pub fn part_range(&self, part: Part) -> Range<usize> {
        match part {
            Part::Train => 0..self.train_end,
            Part::Val => self.train_end..self.val_end,
            Part::Test => self.val_end..self.values.len(),
        }
    }

    pub fn part(&self, part: Part) -> &[f64] {
        &self.values[self.part_range(part)]
    }

    pub fn windows(
        &self,
        part: Part,
        lookback: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<WindowSet<'_>> {
        if stride == 0 || lookback == 0 || horizon == 0 {
            return Err(Error::InvalidConfig(
                "lookback, horizon and stride must be at least 1".into(),
            ));
        }
        let range = self.part_range(part);
        let span = lookback + horizon;
        if range.len() < span {
            return Err(Error::PartitionTooShort {
                part: part.name(),
                len: range.len(),
                needed: span,
            });
        }
        let count = (range.len() - span) / stride + 1;
        let origins = (0..count).map(|i| range.start + i * stride).collect();
        Ok(WindowSet {
            values: &self.values,
            origins,
            lookback,
            horizon,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "value"])?;
        for (t, v) in self.values.iter().enumerate() {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(name: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            value: f64,
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        for (i, row) in r.deserialize::<Row>().enumerate() {
            let row = row?;
            if row.t != i {
                return Err(Error::InvalidConfig(format!(
                    "dataset rows must be consecutive from t = 0, row {i} has t = {}",
                    row.t
                )));
            }
            values.push(row.value);
        }
        SeriesDataset::new(name, values)
    }
}

/// Look-back window and the horizon that follows it, contiguous in the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPair<'a> {
    pub input: &'a [f64],
    pub target: &'a [f64],
    pub origin: usize,
}

/// Optional per-window normalization applied before the model sees data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    None,
    /// Subtract the last look-back value from input and target.
    LastValue,
}

impl WindowPair<'_> {
    /// Writes input and target into the provided buffers, normalized.
    pub fn write_into(&self, norm: Normalization, input: &mut [f64], target: &mut [f64]) {
        let offset = match norm {
            Normalization::None => 0.0,
            Normalization::LastValue => *self.input.last().unwrap_or(&0.0),
        };
        for (o, &x) in input.iter_mut().zip(self.input) {
            *o = x - offset;
        }
        for (o, &x) in target.iter_mut().zip(self.target) {
            *o = x - offset;
        }
    }
}

#[derive(Debug, Clone)]
pub struct WindowSet<'a> {
    values: &'a [f64],
    origins: Vec<usize>,
    lookback: usize,
    horizon: usize,
}

impl<'a> WindowSet<'a> {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    pub fn get(&self, i: usize) -> WindowPair<'a> {
        self.at_origin(self.origins[i])
    }

    /// Window starting at absolute index `origin` of the source series.
    pub fn at_origin(&self, origin: usize) -> WindowPair<'a> {
        let split = origin + self.lookback;
        WindowPair {
            input: &self.values[origin..split],
            target: &self.values[split..split + self.horizon],
            origin,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowPair<'a>> + '_ {
        self.origins.iter().map(|&o| self.at_origin(o))
    }
}

/// Fraction of a window shared with its stride-1 neighbour at patch size `patch`.
pub fn redundancy(lookback: usize, patch: usize) -> Result<f64> {
    if patch == 0 || patch > lookback {
        return Err(Error::InvalidConfig(format!(
            "patch size must be in 1..={lookback}, got {patch}"
        )));
    }
    Ok(1.0 - patch as f64 / lookback as f64)
}
