//! Patch kernels: the learnable maps applied identically to every patch of a
//! level. A kernel sees a matrix whose rows are patches.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KernelId {
    pub role: Role,
    pub level: usize,
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.role {
            Role::Encoder => "enc",
            Role::Decoder => "dec",
        };
        write!(f, "{prefix}_l{}", self.level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Width of the single ReLU hidden layer; ignored by `Linear`.
    pub hidden_dim: usize,
}

/// Affine layer `y = x·W + b` with its gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
    pub grad_weight: Matrix,
    pub grad_bias: Matrix,
}

impl Dense {
    fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (in_dim as f64).sqrt();
        Self::from_params(
            rng.normal(in_dim, out_dim, 0.0, std),
            Matrix::zeros(1, out_dim),
        )
    }

    pub(crate) fn from_params(weight: Matrix, bias: Matrix) -> Self {
        let grad_weight = Matrix::zeros(weight.rows(), weight.cols());
        let grad_bias = Matrix::zeros(1, bias.cols());
        Self {
            weight,
            bias,
            grad_weight,
            grad_bias,
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        y.add_row_assign(&self.bias)?;
        Ok(y)
    }
}

/// Activations a kernel needs for its backward pass.
#[derive(Debug, Clone)]
pub struct KernelCache {
    input: Matrix,
    /// Pre-activation of the hidden layer (MLP only).
    hidden_pre: Option<Matrix>,
}

impl KernelCache {
    pub fn input(&self) -> &Matrix {
        &self.input
    }
}

#[derive(Debug, Clone)]
pub struct Kernel {
    pub id: KernelId,
    pub spec: KernelSpec,
    pub layers: Vec<Dense>,
    cache: Option<KernelCache>,
    applications: u64,
}

impl Kernel {
    pub fn new(id: KernelId, spec: KernelSpec, rng: &mut Rng) -> Self {
        let layers = match spec.kind {
            KernelKind::Linear => vec![Dense::init(spec.in_dim, spec.out_dim, rng)],
            KernelKind::Mlp => vec![
                Dense::init(spec.in_dim, spec.hidden_dim, rng),
                Dense::init(spec.hidden_dim, spec.out_dim, rng),
            ],
        };
        Self::from_layers(id, spec, layers)
    }

    pub(crate) fn from_layers(id: KernelId, spec: KernelSpec, layers: Vec<Dense>) -> Self {
        Self {
            id,
            spec,
            layers,
            cache: None,
            applications: 0,
        }
    }

    pub fn level(&self) -> usize {
        self.id.level
    }

    /// Number of patches this kernel has been applied to since the last reset.
    pub fn applications(&self) -> u64 {
        self.applications
    }

    pub fn reset_applications(&mut self) {
        self.applications = 0;
    }

    pub fn cache(&self) -> Option<&KernelCache> {
        self.cache.as_ref()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|d| d.weight.len() + d.bias.len())
            .sum()
    }

    /// Applies the kernel to every row of `x` without touching any state.
    pub fn evaluate(&self, x: &Matrix) -> Result<(Matrix, KernelCache)> {
        if x.cols() != self.spec.in_dim {
            return Err(Error::ShapeMismatch {
                op: "kernel input",
                left: x.shape(),
                right: (x.rows(), self.spec.in_dim),
            });
        }
        match self.layers.as_slice() {
            [only] => Ok((
                only.apply(x)?,
                KernelCache {
                    input: x.clone(),
                    hidden_pre: None,
                },
            )),
            [first, second] => {
                let pre = first.apply(x)?;
                let y = second.apply(&pre.map(relu))?;
                Ok((
                    y,
                    KernelCache {
                        input: x.clone(),
                        hidden_pre: Some(pre),
                    },
                ))
            }
            _ => unreachable!("kernels have one or two layers"),
        }
    }

    /// Gradients of `Σ dy ⊙ kernel(x)` for the cached input: returns the
    /// input gradient and one gradient per parameter tensor, in
    /// [`Kernel::params`] order.
    pub fn gradients(&self, cache: &KernelCache, dy: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        match (self.layers.as_slice(), &cache.hidden_pre) {
            ([only], None) => {
                let gw = cache.input.t_matmul(dy)?;
                let gb = dy.sum_rows();
                let dx = dy.matmul_t(&only.weight)?;
                Ok((dx, vec![gw, gb]))
            }
            ([first, second], Some(pre)) => {
                let hidden = pre.map(relu);
                let gw2 = hidden.t_matmul(dy)?;
                let gb2 = dy.sum_rows();
                let dh = dy.matmul_t(&second.weight)?;
                let mask = pre.map(|z| if z > 0.0 { 1.0 } else { 0.0 });
                let dpre = dh.mul(&mask)?;
                let gw1 = cache.input.t_matmul(&dpre)?;
                let gb1 = dpre.sum_rows();
                let dx = dpre.matmul_t(&first.weight)?;
                Ok((dx, vec![gw1, gb1, gw2, gb2]))
            }
            _ => Err(Error::BackwardBeforeForward),
        }
    }

    /// Stateful forward: evaluates, caches activations and counts applications.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (y, cache) = self.evaluate(x)?;
        self.applications += x.rows() as u64;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Accumulates parameter gradients for upstream `dy` into the gradient
    /// buffers and returns the input gradient.
    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let (dx, grads) = self.gradients(cache, dy)?;
        for (buf, g) in self.grads_mut().zip(&grads) {
            buf.add_assign(g)?;
        }
        Ok(dx)
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads_mut() {
            g.fill(0.0);
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|d| [&d.weight, &d.bias])
    }

    pub fn grads(&self) -> impl Iterator<Item = &Matrix> {
        self.layers
            .iter()
            .flat_map(|d| [&d.grad_weight, &d.grad_bias])
    }

    pub fn grads_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|d| [&mut d.grad_weight, &mut d.grad_bias])
    }

    /// Parameter tensors paired with their gradients.
    pub fn params_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Matrix, &Matrix)> {
        self.layers
            .iter_mut()
            .flat_map(|d| [(&mut d.weight, &d.grad_weight), (&mut d.bias, &d.grad_bias)])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|d| [&mut d.weight, &mut d.bias])
    }

    /// Mean absolute gradient over all parameters of this kernel.
    pub fn mean_abs_grad(&self) -> f64 {
        let (sum, n) = self.grads().fold((0.0, 0usize), |(s, n), g| {
            (
                s + g.data().iter().map(|x| x.abs()).sum::<f64>(),
                n + g.len(),
            )
        });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

// NaN passes through so corrupted inputs surface as a non-finite loss.
fn relu(z: f64) -> f64 {
    if z < 0.0 {
        0.0
    } else {
        z
    }
}
