//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use ganvert_core::decoder::{seeded_weights, Layer, BN_EPS, LATENT_HEIGHT, LATENT_WIDTH};
use ganvert_core::{Architecture, DecoderOutput, DecoderWeights, Grid2, InversionProblem, ModelGrid, PropertyTransform, SimSetup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DESK_DECODER_SEED: u64 = 0;
pub const DESK_REFERENCE_SEED: u64 = 999_999;
pub const DESK_NOISE_SEED: u64 = 7;

pub fn desk_weights() -> DecoderWeights {
    seeded_weights(Architecture::Desk.filters(), Architecture::Desk.latent_channels(), &PropertyTransform::default(), DESK_DECODER_SEED)
}

pub fn desk_problem() -> (InversionProblem, DecoderOutput) {
    InversionProblem::synthetic(desk_weights(), SimSetup::desk(), DESK_REFERENCE_SEED, DESK_NOISE_SEED).unwrap()
}

/// Model with i.i.d. uniform facies probabilities.
pub fn random_model(nx: usize, nz: usize, seed: u64) -> ModelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = PropertyTransform::default();
    let f = Grid2::from_fn(nx, nz, |_, _| rng.random::<f64>());
    ModelGrid { permeability: f.map(|p| t.permeability(p)), porosity: f.map(|p| t.porosity(p)), facies: f }
}

/// Setup for gradient checks: short schedule and tight Newton control so that
/// perturbed runs take identical step sequences.
pub fn gradient_setup(nx: usize, nz: usize, steps: usize) -> SimSetup {
    let mut s = SimSetup::for_grid(nx, nz, steps);
    s.schedule = ganvert_core::Schedule::uniform(30.0 * steps as f64, steps);
    s.solver.newton_tol = 1e-11;
    s.solver.max_newton_iters = 60;
    s
}

/// Largest `|a - b| / |a|` over components with `|a|` above `floor · max|a|`.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let m = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .filter(|(x, _)| x.abs() > floor * m)
        .map(|(x, y)| (x - y).abs() / x.abs())
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value and tangent.
#[derive(Debug, Clone, Copy)]
pub struct Dual(pub f64, pub f64);

/// Forward-mode outputs of the reference interpreter, each in `x * nz + z` order.
pub struct DualOutputs {
    pub facies: Vec<Dual>,
    pub driver: Vec<Dual>,
    pub permeability: Vec<Dual>,
    pub porosity: Vec<Dual>,
}

/// Straightforward interpreter over the raw layer list, propagating a tangent
/// `u` alongside `z`. Shares no code with the library's decoder.
pub fn dual_decoder(layers: &[Layer], z: &[f64], u: &[f64]) -> DualOutputs {
    let mut c = z.len() / (LATENT_HEIGHT * LATENT_WIDTH);
    let (mut h, mut w) = (LATENT_HEIGHT, LATENT_WIDTH);
    let mut x: Vec<Dual> = z.iter().zip(u).map(|(&a, &b)| Dual(a, b)).collect();
    let mut transform = [0.0f64; 4];
    for layer in layers {
        match layer {
            Layer::Conv(conv) => {
                let mut out = vec![Dual(0.0, 0.0); conv.cout * h * w];
                for co in 0..conv.cout {
                    for yy in 0..h {
                        for xx in 0..w {
                            let mut acc = Dual(conv.bias[co] as f64, 0.0);
                            for ci in 0..conv.cin {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (sy, sx) = (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                            continue;
                                        }
                                        let k = conv.weight[((co * conv.cin + ci) * 3 + ky) * 3 + kx] as f64;
                                        let v = x[(ci * h + sy as usize) * w + sx as usize];
                                        acc.0 += k * v.0;
                                        acc.1 += k * v.1;
                                    }
                                }
                            }
                            out[(co * h + yy) * w + xx] = acc;
                        }
                    }
                }
                x = out;
                c = conv.cout;
            }
            Layer::BatchNorm(bn) => {
                let mut y = vec![Dual(0.0, 0.0); (c / 4) * 4 * h * w];
                for ch in 0..c {
                    let s = bn.gamma[ch] as f64 / (bn.running_var[ch] as f64 + BN_EPS).sqrt();
                    for p in 0..h * w {
                        let v = x[ch * h * w + p];
                        let pre = Dual((v.0 - bn.running_mean[ch] as f64) * s + bn.beta[ch] as f64, v.1 * s);
                        x[ch * h * w + p] = if pre.0 > 0.0 { pre } else { Dual(0.0, 0.0) };
                    }
                }
                // depth to space
                for oc in 0..c / 4 {
                    for i in 0..2 {
                        for j in 0..2 {
                            for yy in 0..h {
                                for xx in 0..w {
                                    y[(oc * 2 * h + 2 * yy + i) * 2 * w + 2 * xx + j] = x[((4 * oc + 2 * i + j) * h + yy) * w + xx];
                                }
                            }
                        }
                    }
                }
                x = y;
                c /= 4;
                h *= 2;
                w *= 2;
            }
            Layer::Transform(t) => transform = t.map(|v| v as f64),
        }
    }
    let plane = h * w;
    let squash = |v: Dual| {
        let t = v.0.tanh();
        Dual(0.5 * t + 0.5, 0.5 * (1.0 - t * t) * v.1)
    };
    let facies: Vec<Dual> = x[..plane].iter().map(|&v| squash(v)).collect();
    let driver: Vec<Dual> = x[plane..2 * plane].iter().map(|&v| squash(v)).collect();
    let [a, b, cc, d] = transform;
    DualOutputs {
        permeability: facies.iter().map(|m| Dual((a + m.0) * b, b * m.1)).collect(),
        porosity: driver.iter().map(|m| Dual(cc * m.0 + d, cc * m.1)).collect(),
        facies,
        driver,
    }
}

/// Reachability by breadth-first flood fill; returns a component id per cell
/// (`usize::MAX` for shale).
pub fn flood_fill(binary: &Grid2) -> Vec<usize> {
    let (nx, nz) = (binary.nx(), binary.nz());
    let mut comp = vec![usize::MAX; nx * nz];
    let mut next = 0;
    for start in 0..nx * nz {
        if binary.as_slice()[start] <= 0.5 || comp[start] != usize::MAX {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        comp[start] = next;
        while let Some(i) = queue.pop_front() {
            let (x, z) = (i / nz, i % nz);
            let mut nbrs = Vec::new();
            if x > 0 {
                nbrs.push(i - nz);
            }
            if x + 1 < nx {
                nbrs.push(i + nz);
            }
            if z > 0 {
                nbrs.push(i - 1);
            }
            if z + 1 < nz {
                nbrs.push(i + 1);
            }
            for j in nbrs {
                if binary.as_slice()[j] > 0.5 && comp[j] == usize::MAX {
                    comp[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Whether any sand path joins a completed injector cell to a completed producer cell.
pub fn flood_connected(binary: &Grid2, wells: &ganvert_core::WellSpec) -> bool {
    let comp = flood_fill(binary);
    let nz = binary.nz();
    let (r0, r1) = wells.completion_rows;
    (r0..r1).any(|zi| {
        let a = comp[wells.injector_column * nz + zi];
        a != usize::MAX && (r0..r1).any(|zp| comp[wells.producer_column * nz + zp] == a)
    })
}

pub fn random_binary(nx: usize, nz: usize, p: f64, rng: &mut impl Rng) -> Grid2 {
    Grid2::from_fn(nx, nz, |_, _| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}
