//! Convolutional decoder from a latent vector to facies and porosity grids.
//!
//! The network is a fixed chain of blocks `conv3x3 → batch-norm → ReLU →
//! pixel-shuffle ×2` starting from a `C × 2 × 1` latent tensor, followed by a
//! final 3×3 convolution to two channels. Both channels are squashed with
//! `0.5·tanh + 0.5`: channel 0 is the facies probability `m₀`, channel 1 the
//! porosity driver `x₁`. Batch-norm always uses its stored running statistics.
//!
//! Parameters are stored as `f32` (the exchange format) and evaluated in `f64`.

mod seeded;
mod tensor;
mod weights;

use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomodel::{ModelGrid, PropertyTransform};
use crate::grid::{FormatError, Grid2};

pub use tensor::{pixel_shuffle, pixel_unshuffle, Tensor};
pub use weights::GWT1_VERSION;

/// Spatial extent of the latent tensor.
pub const LATENT_HEIGHT: usize = 2;
pub const LATENT_WIDTH: usize = 1;
pub const BN_EPS: f64 = 1.0e-5;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("inconsistent layer list: {0}")]
    Architecture(String),
    #[error("latent has {found} entries, decoder expects {expected}")]
    LatentShape { expected: usize, found: usize },
    #[error("upstream gradient is {found:?}, decoder output is {expected:?}")]
    UpstreamShape { expected: (usize, usize), found: (usize, usize) },
    #[error("forward cache belongs to different weights")]
    StaleCache,
}

/// Latent coordinates, `channels × 2 × 1` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Independent standard-normal entries.
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// 3×3 convolution, stride 1, zero padding 1. Weights are `[cout][cin][3][3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cout: usize,
    pub cin: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    pub fn identity(c: usize) -> Self {
        Self { gamma: vec![1.0; c], beta: vec![0.0; c], running_mean: vec![0.0; c], running_var: vec![1.0; c] }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    /// Property transform constants `(a, b, c, d)`.
    Transform([f32; 4]),
}

#[derive(Debug, Clone)]
struct ConvF64 {
    cout: usize,
    cin: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvF64 {
    fn new(c: &Conv2d) -> Self {
        Self {
            cout: c.cout,
            cin: c.cin,
            weight: c.weight.iter().map(|&v| v as f64).collect(),
            bias: c.bias.iter().map(|&v| v as f64).collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv: ConvF64,
    scale: Vec<f64>,
    shift: Vec<f64>,
}

/// Immutable decoder parameters with an `f64` evaluation plan.
#[derive(Debug, Clone)]
pub struct DecoderWeights {
    layers: Vec<Layer>,
    blocks: Vec<Block>,
    head: ConvF64,
    transform: PropertyTransform,
    fingerprint: u64,
}

impl PartialEq for DecoderWeights {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DecoderWeights {
    /// Validates the chain `[conv, bn]* conv transform`.
    pub fn new(layers: Vec<Layer>) -> Result<Self, DecoderError> {
        let arch = |m: String| DecoderError::Architecture(m);
        let Some((Layer::Transform(t), body)) = layers.split_last() else {
            return Err(arch("last layer must be the property transform".into()));
        };
        let Some((Layer::Conv(head), body)) = body.split_last() else {
            return Err(arch("the transform must follow a convolution".into()));
        };
        if body.len() % 2 != 0 {
            return Err(arch("blocks must pair a convolution with a batch-norm".into()));
        }
        let mut blocks = Vec::new();
        let mut channels: Option<usize> = None;
        for (i, pair) in body.chunks(2).enumerate() {
            let (Layer::Conv(conv), Layer::BatchNorm(bn)) = (&pair[0], &pair[1]) else {
                return Err(arch(format!("block {i} is not convolution + batch-norm")));
            };
            check_conv(conv, channels, i)?;
            if bn.channels() != conv.cout
                || bn.beta.len() != conv.cout
                || bn.running_mean.len() != conv.cout
                || bn.running_var.len() != conv.cout
            {
                return Err(arch(format!("block {i}: batch-norm width differs from {} filters", conv.cout)));
            }
            if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                return Err(arch(format!("block {i}: running variances must be positive")));
            }
            if conv.cout % 4 != 0 {
                return Err(arch(format!("block {i}: {} filters not divisible by 4 for pixel shuffle", conv.cout)));
            }
            let scale: Vec<f64> = (0..conv.cout)
                .map(|c| bn.gamma[c] as f64 / (bn.running_var[c] as f64 + BN_EPS).sqrt())
                .collect();
            let shift = (0..conv.cout).map(|c| bn.beta[c] as f64 - bn.running_mean[c] as f64 * scale[c]).collect();
            blocks.push(Block { conv: ConvF64::new(conv), scale, shift });
            channels = Some(conv.cout / 4);
        }
        check_conv(head, channels, blocks.len())?;
        if head.cout != 2 {
            return Err(arch(format!("final convolution must emit 2 channels, not {}", head.cout)));
        }
        let transform = PropertyTransform { a: t[0] as f64, b: t[1] as f64, c: t[2] as f64, d: t[3] as f64 };
        if transform.validate().is_err() {
            return Err(arch(format!("property transform {t:?} out of range")));
        }
        let fingerprint = fingerprint(&layers);
        Ok(Self { head: ConvF64::new(head), layers, blocks, transform, fingerprint })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn latent_channels(&self) -> usize {
        self.blocks.first().map_or(self.head.cin, |b| b.conv.cin)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_channels() * LATENT_HEIGHT * LATENT_WIDTH
    }

    /// Output grid `(nx, nz)`.
    pub fn output_shape(&self) -> (usize, usize) {
        let f = 1 << self.blocks.len();
        (LATENT_HEIGHT * f, LATENT_WIDTH * f)
    }

    pub fn transform(&self) -> PropertyTransform {
        self.transform
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentVector {
        LatentVector::sample(self.latent_dim(), rng)
    }

    pub fn forward(&self, z: &LatentVector) -> Result<DecoderOutput, DecoderError> {
        if z.dim() != self.latent_dim() {
            return Err(DecoderError::LatentShape { expected: self.latent_dim(), found: z.dim() });
        }
        let mut x = Tensor::from_vec(self.latent_channels(), LATENT_HEIGHT, LATENT_WIDTH, z.0.clone());
        let mut masks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let mut y = tensor::conv3x3(&x, &b.conv.weight, &b.conv.bias, b.conv.cout);
            let plane = y.h * y.w;
            for c in 0..y.c {
                for v in &mut y.data[c * plane..(c + 1) * plane] {
                    *v = b.scale[c] * *v + b.shift[c];
                }
            }
            masks.push(y.data.iter().map(|&v| v > 0.0).collect::<Vec<bool>>());
            y.data.iter_mut().for_each(|v| *v = v.max(0.0));
            x = pixel_shuffle(&y);
        }
        let out = tensor::conv3x3(&x, &self.head.weight, &self.head.bias, 2);
        let plane = out.h * out.w;
        let tanh0: Vec<f64> = out.data[..plane].iter().map(|v| v.tanh()).collect();
        let tanh1: Vec<f64> = out.data[plane..].iter().map(|v| v.tanh()).collect();
        let (nx, nz) = (out.h, out.w);
        let m0 = Grid2::from_vec(nx, nz, tanh0.iter().map(|t| 0.5 * t + 0.5).collect()).expect("shape");
        let x1 = Grid2::from_vec(nx, nz, tanh1.iter().map(|t| 0.5 * t + 0.5).collect()).expect("shape");
        let t = &self.transform;
        let model = ModelGrid {
            permeability: m0.map(|p| t.permeability(p)),
            porosity: x1.map(|v| t.porosity(v)),
            facies: m0.clone(),
        };
        Ok(DecoderOutput {
            facies_prob: m0,
            porosity_driver: x1,
            model,
            cache: ForwardCache { fingerprint: self.fingerprint, masks, tanh0, tanh1 },
        })
    }

    /// Latent gradient of a loss whose derivatives with respect to the outputs are `up`.
    pub fn backward(&self, out: &DecoderOutput, up: &DecoderUpstream) -> Result<LatentVector, DecoderError> {
        let cache = &out.cache;
        if cache.fingerprint != self.fingerprint || cache.masks.len() != self.blocks.len() {
            return Err(DecoderError::StaleCache);
        }
        let (nx, nz) = self.output_shape();
        for g in [&up.facies, &up.porosity_driver, &up.permeability, &up.porosity] {
            if (g.nx(), g.nz()) != (nx, nz) {
                return Err(DecoderError::UpstreamShape { expected: (nx, nz), found: (g.nx(), g.nz()) });
            }
        }
        let plane = nx * nz;
        let t = &self.transform;
        let mut g = Tensor::zeros(2, nx, nz);
        for i in 0..plane {
            let d_m0 = up.facies.as_slice()[i] + t.b * up.permeability.as_slice()[i];
            let d_x1 = up.porosity_driver.as_slice()[i] + t.c * up.porosity.as_slice()[i];
            let t0 = cache.tanh0[i];
            let t1 = cache.tanh1[i];
            g.data[i] = d_m0 * 0.5 * (1.0 - t0 * t0);
            g.data[plane + i] = d_x1 * 0.5 * (1.0 - t1 * t1);
        }
        let mut g = tensor::conv3x3_input_grad(&g, &self.head.weight, self.head.cin);
        for (b, mask) in self.blocks.iter().zip(&cache.masks).rev() {
            let mut y = pixel_unshuffle(&g);
            let plane = y.h * y.w;
            for c in 0..y.c {
                for (k, v) in y.data[c * plane..(c + 1) * plane].iter_mut().enumerate() {
                    *v = if mask[c * plane + k] { *v * b.scale[c] } else { 0.0 };
                }
            }
            g = tensor::conv3x3_input_grad(&y, &b.conv.weight, b.conv.cin);
        }
        Ok(LatentVector(g.data))
    }
}

fn check_conv(conv: &Conv2d, cin: Option<usize>, i: usize) -> Result<(), DecoderError> {
    if conv.cout == 0 || conv.cin == 0 {
        return Err(DecoderError::Architecture(format!("layer {i}: empty convolution")));
    }
    if conv.weight.len() != conv.cout * conv.cin * 9 || conv.bias.len() != conv.cout {
        return Err(DecoderError::Architecture(format!("layer {i}: kernel size does not match {}×{}×3×3", conv.cout, conv.cin)));
    }
    if let Some(c) = cin {
        if c != conv.cin {
            return Err(DecoderError::Architecture(format!("layer {i}: expects {} input channels, chain provides {c}", conv.cin)));
        }
    }
    Ok(())
}

fn fingerprint(layers: &[Layer]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let mut put = |v: &[f32]| v.iter().for_each(|x| x.to_bits().hash(&mut h));
    for l in layers {
        match l {
            Layer::Conv(c) => {
                put(&c.weight);
                put(&c.bias);
            }
            Layer::BatchNorm(b) => {
                put(&b.gamma);
                put(&b.beta);
                put(&b.running_mean);
                put(&b.running_var);
            }
            Layer::Transform(t) => put(t),
        }
    }
    h.finish()
}

#[derive(Debug, Clone)]
struct ForwardCache {
    fingerprint: u64,
    masks: Vec<Vec<bool>>,
    tanh0: Vec<f64>,
    tanh1: Vec<f64>,
}

/// Decoder outputs and the activations needed by [`DecoderWeights::backward`].
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `m₀`.
    pub facies_prob: Grid2,
    /// `x₁`.
    pub porosity_driver: Grid2,
    pub model: ModelGrid,
    cache: ForwardCache,
}

/// Loss derivatives with respect to each decoder output; contributions add up.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderUpstream {
    pub facies: Grid2,
    pub porosity_driver: Grid2,
    /// Per m².
    pub permeability: Grid2,
    pub porosity: Grid2,
}

impl DecoderUpstream {
    pub fn zeros(nx: usize, nz: usize) -> Self {
        Self {
            facies: Grid2::zeros(nx, nz),
            porosity_driver: Grid2::zeros(nx, nz),
            permeability: Grid2::zeros(nx, nz),
            porosity: Grid2::zeros(nx, nz),
        }
    }
}

/// Named architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// 50-channel latent, six blocks of 512, 256, 128, 64, 64, 64 filters: 128×64 output.
    Paper,
    /// 50-channel latent, four blocks of 128, 64, 64, 32 filters: 32×16 output.
    Desk,
    /// 50-channel latent, two blocks of 8 filters: 8×4 output.
    Tiny,
}

impl Architecture {
    pub fn filters(self) -> &'static [usize] {
        match self {
            Architecture::Paper => &[512, 256, 128, 64, 64, 64],
            Architecture::Desk => &[128, 64, 64, 32],
            Architecture::Tiny => &[8, 8],
        }
    }

    pub fn latent_channels(self) -> usize {
        50
    }
}

pub use seeded::{random_weights, seeded_weights};
