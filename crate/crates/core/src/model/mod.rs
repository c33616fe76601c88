//! Kernel U-Net: hierarchical patch segmentation wrapped around pluggable
//! kernels.
//!
//! With `n_1 = L / unit_len` and `n_l = n_{l-1} / multiples[l-2]`, a batch of
//! `B` windows is carried level by level as a `(B·n_l) × width` matrix whose
//! rows are patches. Because patches of one window are adjacent rows,
//! grouping `m` neighbouring latents into one wider patch is a reshape of the
//! same buffer, and so is splitting a decoder output back into `m` latents.
//!
//! ```text
//! encoder                                  decoder
//! x ─reshape─▶ enc_l1 ─e1─┬─group─▶ enc_l2 ─e2─ … ─▶ enc_lD ─eD─▶ dec_lD ─split─▶ (+eD-1) ─▶ … ─▶ dec_l1 ─▶ ŷ
//!                         └──────────────────────── skip (+) ────────────────────────────────────┘
//! ```
//!
//! Skips are additive and applied before the decoder kernel of the matching
//! level. Backward traverses the exact reverse of this composition and
//! accumulates into each kernel's gradient buffers.

mod checkpoint;
mod kernel;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use kernel::{Dense, Kernel, KernelCache, KernelId, KernelKind, KernelSpec, Role};

use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KUNetConfig {
    pub lookback: usize,
    pub horizon: usize,
    /// Patch length at the bottom level.
    pub unit_len: usize,
    /// Grouping factor of each level above the first.
    pub multiples: Vec<usize>,
    pub hidden_dim: usize,
}

impl Default for KUNetConfig {
    fn default() -> Self {
        Self {
            lookback: 512,
            horizon: 512,
            unit_len: 8,
            multiples: vec![8, 8],
            hidden_dim: 128,
        }
    }
}

impl KUNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.unit_len == 0 || self.hidden_dim == 0 || self.multiples.contains(&0) {
            return bad("unit length, hidden width and multiples must be positive".into());
        }
        if self.lookback != self.horizon {
            return bad(format!(
                "look-back ({}) must equal horizon ({})",
                self.lookback, self.horizon
            ));
        }
        let tiled = self.unit_len * self.multiples.iter().product::<usize>();
        if tiled != self.lookback {
            return bad(format!(
                "unit length {} x multiples {:?} = {tiled} does not tile look-back {}",
                self.unit_len, self.multiples, self.lookback
            ));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        1 + self.multiples.len()
    }

    /// Patches per window at each level, bottom-up.
    pub fn patch_counts(&self) -> Vec<usize> {
        let mut counts = vec![self.lookback / self.unit_len];
        for &m in &self.multiples {
            counts.push(counts.last().unwrap() / m);
        }
        counts
    }

    /// Patch width (in raw time steps) covered by one latent at each level.
    pub fn patch_spans(&self) -> Vec<usize> {
        let mut spans = vec![self.unit_len];
        for &m in &self.multiples {
            spans.push(spans.last().unwrap() * m);
        }
        spans
    }

    /// The grouping factor shared by every level, if there is one.
    pub fn common_multiple(&self) -> Option<usize> {
        let first = *self.multiples.first()?;
        self.multiples.iter().all(|&m| m == first).then_some(first)
    }
}

#[derive(Debug, Clone)]
pub struct KUNet {
    config: KUNetConfig,
    kind: KernelKind,
    /// Bottom-up: index `l - 1` is level `l`.
    encoder: Vec<Kernel>,
    /// Top-down: index 0 is the deepest level.
    decoder: Vec<Kernel>,
    batch: Option<usize>,
}

impl KUNet {
    /// Builds the net. Weights are drawn `Normal(0, 1/√fan_in)` encoder
    /// bottom-up then decoder top-down; biases start at zero.
    pub fn build(config: KUNetConfig, kind: KernelKind, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let depth = config.depth();
        let spec = |in_dim, out_dim| KernelSpec {
            kind,
            in_dim,
            out_dim,
            hidden_dim: h,
        };
        let encoder = (1..=depth)
            .map(|level| {
                let in_dim = if level == 1 {
                    config.unit_len
                } else {
                    config.multiples[level - 2] * h
                };
                let id = KernelId {
                    role: Role::Encoder,
                    level,
                };
                Kernel::new(id, spec(in_dim, h), rng)
            })
            .collect();
        let decoder = (1..=depth)
            .rev()
            .map(|level| {
                let out_dim = if level == 1 {
                    config.unit_len
                } else {
                    config.multiples[level - 2] * h
                };
                let id = KernelId {
                    role: Role::Decoder,
                    level,
                };
                Kernel::new(id, spec(h, out_dim), rng)
            })
            .collect();
        Ok(Self {
            config,
            kind,
            encoder,
            decoder,
            batch: None,
        })
    }

    pub(crate) fn from_parts(
        config: KUNetConfig,
        kind: KernelKind,
        encoder: Vec<Kernel>,
        decoder: Vec<Kernel>,
    ) -> Self {
        Self {
            config,
            kind,
            encoder,
            decoder,
            batch: None,
        }
    }

    pub fn config(&self) -> &KUNetConfig {
        &self.config
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn encoder(&self) -> &[Kernel] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Kernel] {
        &self.decoder
    }

    pub fn encoder_kernel(&self, level: usize) -> &Kernel {
        &self.encoder[level - 1]
    }

    pub fn decoder_kernel(&self, level: usize) -> &Kernel {
        &self.decoder[self.depth() - level]
    }

    fn decoder_kernel_mut(&mut self, level: usize) -> &mut Kernel {
        let depth = self.depth();
        &mut self.decoder[depth - level]
    }

    /// All kernels: encoder bottom-up, then decoder top-down.
    pub fn kernels(&self) -> impl Iterator<Item = &Kernel> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn kernels_mut(&mut self) -> impl Iterator<Item = &mut Kernel> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn kernel_ids(&self) -> Vec<KernelId> {
        self.kernels().map(|k| k.id).collect()
    }

    /// Level tag of every kernel.
    pub fn level_of(&self) -> BTreeMap<KernelId, usize> {
        self.kernels().map(|k| (k.id, k.level())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.kernels().map(Kernel::param_count).sum()
    }

    /// Predicts one horizon from one look-back window.
    pub fn forward(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.config.lookback {
            return Err(Error::InputLength {
                expected: self.config.lookback,
                got: input.len(),
            });
        }
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.into_vec())
    }

    /// Forward over a `B × L` batch, returning `B × T` predictions.
    pub fn forward_batch(&mut self, x: &Matrix) -> Result<Matrix> {
        let (batch, lookback) = x.shape();
        if lookback != self.config.lookback {
            return Err(Error::InputLength {
                expected: self.config.lookback,
                got: lookback,
            });
        }
        let depth = self.depth();
        let counts = self.config.patch_counts();
        let h = self.config.hidden_dim;

        let mut latents = Vec::with_capacity(depth);
        let patches = x.clone().reshape(batch * counts[0], self.config.unit_len)?;
        latents.push(self.encoder[0].forward(&patches)?);
        for level in 2..=depth {
            let m = self.config.multiples[level - 2];
            let grouped = latents[level - 2]
                .clone()
                .reshape(batch * counts[level - 1], m * h)?;
            latents.push(self.encoder[level - 1].forward(&grouped)?);
        }

        let mut z = latents[depth - 1].clone();
        for level in (2..=depth).rev() {
            let expanded = self.decoder_kernel_mut(level).forward(&z)?;
            let mut split = expanded.reshape(batch * counts[level - 2], h)?;
            split.add_assign(&latents[level - 2])?;
            z = split;
        }
        let out = self.decoder_kernel_mut(1).forward(&z)?;
        self.batch = Some(batch);
        out.reshape(batch, self.config.horizon)
    }

    /// Accumulates parameter gradients for upstream gradient `d_pred`
    /// (`B × T`, matching the last forward) and returns the input gradient.
    /// Gradients are raw; any level weighting is the optimizer's job.
    pub fn backward_batch(&mut self, d_pred: &Matrix) -> Result<Matrix> {
        let batch = self.batch.ok_or(Error::BackwardBeforeForward)?;
        if d_pred.shape() != (batch, self.config.horizon) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: d_pred.shape(),
                right: (batch, self.config.horizon),
            });
        }
        let depth = self.depth();
        let counts = self.config.patch_counts();
        let h = self.config.hidden_dim;

        // skip[l - 1]: gradient reaching encoder latent e_l through the decoder
        let mut skip: Vec<Option<Matrix>> = vec![None; depth];
        let d_out = d_pred
            .clone()
            .reshape(batch * counts[0], self.config.unit_len)?;
        let mut dz = self.decoder_kernel_mut(1).backward(&d_out)?;
        for level in 2..=depth {
            skip[level - 2] = Some(dz.clone());
            let m = self.config.multiples[level - 2];
            let d_expanded = dz.reshape(batch * counts[level - 1], m * h)?;
            dz = self.decoder_kernel_mut(level).backward(&d_expanded)?;
        }
        skip[depth - 1] = Some(dz);

        let mut de = skip[depth - 1].take().expect("bottleneck gradient");
        for level in (2..=depth).rev() {
            let d_grouped = self.encoder[level - 1].backward(&de)?;
            let mut d_below = d_grouped.reshape(batch * counts[level - 2], h)?;
            d_below.add_assign(skip[level - 2].as_ref().expect("skip gradient"))?;
            de = d_below;
        }
        let d_patches = self.encoder[0].backward(&de)?;
        d_patches.reshape(batch, self.config.lookback)
    }

    /// Single-window backward, the counterpart of [`KUNet::forward`].
    pub fn backward(&mut self, d_prediction: &[f64]) -> Result<Vec<f64>> {
        let d = Matrix::from_vec(1, d_prediction.len(), d_prediction.to_vec())?;
        Ok(self.backward_batch(&d)?.into_vec())
    }

    /// Forward without retaining activations.
    pub fn predict(&mut self, x: &Matrix) -> Result<Matrix> {
        let out = self.forward_batch(x);
        self.clear_cache();
        out
    }

    pub fn clear_cache(&mut self) {
        self.batch = None;
        for k in self.kernels_mut() {
            k.clear_cache();
        }
    }

    pub fn zero_grads(&mut self) {
        for k in self.kernels_mut() {
            k.zero_grads();
        }
    }

    /// Encoder kernel applications per window at each level, from the
    /// hierarchy (`L / S^l` when `unit_len = S` and every multiple is `S`).
    pub fn invocation_counts(&self) -> BTreeMap<usize, usize> {
        self.config
            .patch_counts()
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i + 1, c))
            .collect()
    }

    /// Encoder kernel applications actually recorded since the last reset.
    pub fn recorded_applications(&self) -> BTreeMap<usize, u64> {
        self.encoder
            .iter()
            .map(|k| (k.level(), k.applications()))
            .collect()
    }

    pub fn reset_applications(&mut self) {
        for k in self.kernels_mut() {
            k.reset_applications();
        }
    }

    /// Mean absolute gradient per kernel.
    pub fn grad_stats(&self) -> BTreeMap<KernelId, f64> {
        self.kernels().map(|k| (k.id, k.mean_abs_grad())).collect()
    }

    /// Flat copy of every parameter, in kernel order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.kernels()
            .flat_map(|k| k.params().flat_map(|p| p.data().iter().copied()))
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.kernels()
            .flat_map(|k| k.grads().flat_map(|p| p.data().iter().copied()))
            .collect()
    }

    /// Overwrites every parameter from a flat slice in [`KUNet::flat_params`] order.
    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                op: "set_flat_params",
                left: (values.len(), 1),
                right: (self.param_count(), 1),
            });
        }
        let mut offset = 0;
        for k in self.kernels_mut() {
            for p in k.params_mut() {
                let n = p.len();
                p.data_mut().copy_from_slice(&values[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    /// Order-sensitive fingerprint of all parameters' bit patterns.
    pub fn checksum(&self) -> u64 {
        self.flat_params()
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, x| {
                (h ^ x.to_bits()).wrapping_mul(0x0100_0000_01b3)
            })
    }
}
