//! Decoder weights without a trained generator.
//!
//! [`seeded_weights`] draws He-initialised kernels and then calibrates the
//! network on a batch of prior latents: batch-norm statistics are set to the
//! observed pre-activation moments, every kernel tap is made orthogonal to the
//! mean of its input channels (so zero padding does not bias border cells), and
//! the output layer is scaled and shifted so that half of all cells are sand.
//! Both output channels share one kernel, so the porosity driver follows the
//! facies probability as it does for object-based realisations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::tensor::{conv3x3, pixel_shuffle, Tensor};
use super::{BatchNorm, Conv2d, DecoderWeights, Layer, BN_EPS, LATENT_HEIGHT, LATENT_WIDTH};
use crate::geomodel::PropertyTransform;

const CALIBRATION_BATCH: usize = 64;
/// Standard deviation of the facies pre-activation.
const OUTPUT_SPREAD: f64 = 3.0;
/// Relative weight of the independent part of sibling kernels.
const SIBLING_DETAIL: f32 = 0.35;

fn transform_layer(t: &PropertyTransform) -> Layer {
    Layer::Transform([t.a as f32, t.b as f32, t.c as f32, t.d as f32])
}

fn he_kernel<R: Rng + ?Sized>(cout: usize, cin: usize, rng: &mut R) -> Vec<f32> {
    let n = Normal::new(0.0, (2.0 / (9 * cin) as f64).sqrt()).expect("positive");
    (0..cout * cin * 9).map(|_| n.sample(rng) as f32).collect()
}

/// Uncalibrated random network, used to exercise the layer algebra.
pub fn random_weights<R: Rng + ?Sized>(
    filters: &[usize],
    latent_channels: usize,
    t: &PropertyTransform,
    rng: &mut R,
) -> DecoderWeights {
    let mut layers = Vec::new();
    let mut cin = latent_channels;
    for &cout in filters {
        layers.push(Layer::Conv(Conv2d {
            cout,
            cin,
            weight: he_kernel(cout, cin, rng),
            bias: (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect(),
        }));
        layers.push(Layer::BatchNorm(BatchNorm {
            gamma: (0..cout).map(|_| rng.random_range(0.5..1.5)).collect(),
            beta: (0..cout).map(|_| rng.random_range(-0.2..0.2)).collect(),
            running_mean: (0..cout).map(|_| rng.random_range(-0.2..0.2)).collect(),
            running_var: (0..cout).map(|_| rng.random_range(0.5..1.5)).collect(),
        }));
        cin = cout / 4;
    }
    layers.push(Layer::Conv(Conv2d {
        cout: 2,
        cin,
        weight: he_kernel(2, cin, rng),
        bias: (0..2).map(|_| rng.random_range(-0.1..0.1)).collect(),
    }));
    layers.push(transform_layer(t));
    DecoderWeights::new(layers).expect("consistent by construction")
}

/// Kernels whose four pixel-shuffle siblings differ only by a small perturbation,
/// so the shuffled output is a coherent upsampling plus detail.
fn grouped_kernel<R: Rng + ?Sized>(cout: usize, cin: usize, rng: &mut R) -> Vec<f32> {
    let base = he_kernel(cout / 4, cin, rng);
    let detail = he_kernel(cout, cin, rng);
    let k = SIBLING_DETAIL;
    let norm = 1.0 / (1.0 + k * k).sqrt();
    let size = cin * 9;
    (0..cout * size)
        .map(|i| {
            let (co, r) = (i / size, i % size);
            ((base[(co / 4) * size + r] + k * detail[i]) * norm) as f32
        })
        .collect()
}

fn as_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Per-channel mean and population variance over batch and space.
fn channel_moments(batch: &[Tensor]) -> (Vec<f64>, Vec<f64>) {
    let c = batch[0].c;
    let plane = batch[0].h * batch[0].w;
    let n = (plane * batch.len()) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let vals = || batch.iter().flat_map(|t| &t.data[ch * plane..(ch + 1) * plane]);
        mean[ch] = vals().sum::<f64>() / n;
        var[ch] = vals().map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / n;
    }
    (mean, var)
}

/// Removes from each tap the component along the input channel means.
fn project_taps(weight: &mut [f32], cout: usize, cin: usize, means: &[f64]) {
    let mm: f64 = means.iter().map(|m| m * m).sum();
    if mm < 1e-24 {
        return;
    }
    for co in 0..cout {
        for tap in 0..9 {
            let idx = |ci: usize| (co * cin + ci) * 9 + tap;
            let dot: f64 = (0..cin).map(|ci| weight[idx(ci)] as f64 * means[ci]).sum();
            for (ci, m) in means.iter().enumerate() {
                weight[idx(ci)] = (weight[idx(ci)] as f64 - dot / mm * m) as f32;
            }
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Calibrated hand-seeded decoder; deterministic in `seed`.
pub fn seeded_weights(filters: &[usize], latent_channels: usize, t: &PropertyTransform, seed: u64) -> DecoderWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch: Vec<Tensor> = (0..CALIBRATION_BATCH)
        .map(|_| {
            let n = latent_channels * LATENT_HEIGHT * LATENT_WIDTH;
            Tensor::from_vec(latent_channels, LATENT_HEIGHT, LATENT_WIDTH, (0..n).map(|_| rng.sample(StandardNormal)).collect())
        })
        .collect();

    let mut layers = Vec::new();
    let mut cin = latent_channels;
    for &cout in filters {
        let mut weight = grouped_kernel(cout, cin, &mut rng);
        let (in_mean, _) = channel_moments(&batch);
        project_taps(&mut weight, cout, cin, &in_mean);
        let bias = vec![0.0f32; cout];
        let w64 = as_f64(&weight);
        let zeros = vec![0.0; cout];
        let pre: Vec<Tensor> = batch.iter().map(|x| conv3x3(x, &w64, &zeros, cout)).collect();
        let (mean, var) = channel_moments(&pre);
        let bn = BatchNorm {
            gamma: vec![1.0; cout],
            beta: vec![0.0; cout],
            running_mean: mean.iter().map(|&v| v as f32).collect(),
            running_var: var.iter().map(|&v| v.max(1e-6) as f32).collect(),
        };
        let plane = pre[0].h * pre[0].w;
        batch = pre
            .into_iter()
            .map(|mut y| {
                for c in 0..cout {
                    let m = bn.running_mean[c] as f64;
                    let s = 1.0 / (bn.running_var[c] as f64 + BN_EPS).sqrt();
                    for v in &mut y.data[c * plane..(c + 1) * plane] {
                        *v = ((*v - m) * s).max(0.0);
                    }
                }
                pixel_shuffle(&y)
            })
            .collect();
        layers.push(Layer::Conv(Conv2d { cout, cin, weight, bias }));
        layers.push(Layer::BatchNorm(bn));
        cin = cout / 4;
    }

    let mut kernel = he_kernel(1, cin, &mut rng);
    let (in_mean, _) = channel_moments(&batch);
    project_taps(&mut kernel, 1, cin, &in_mean);
    let k64 = as_f64(&kernel);
    let pre: Vec<f64> = batch.iter().flat_map(|x| conv3x3(x, &k64, &[0.0], 1).data).collect();
    let mean = pre.iter().sum::<f64>() / pre.len() as f64;
    let std = (pre.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pre.len() as f64).sqrt();
    let gain = if std > 0.0 { OUTPUT_SPREAD / std } else { 1.0 };
    let kernel: Vec<f32> = kernel.iter().map(|&w| (w as f64 * gain) as f32).collect();
    let shift = -median(pre.iter().map(|v| v * gain).collect()) as f32;
    let mut weight = kernel.clone();
    weight.extend_from_slice(&kernel);
    layers.push(Layer::Conv(Conv2d { cout: 2, cin, weight, bias: vec![shift, shift] }));
    layers.push(transform_layer(t));
    DecoderWeights::new(layers).expect("consistent by construction")
}
