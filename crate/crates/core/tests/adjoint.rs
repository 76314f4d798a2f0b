mod common;

use common::*;
use ganvert_core::adjoint::flow_loss_of;
use ganvert_core::{
    adjoint_gradient, finite_difference_gradient, synthesize_observations, AdjointError, ModelGrid, NoiseModel,
    ObservationSeries, PermGradient, SimSetup,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case(nx: usize, nz: usize, steps: usize) -> (SimSetup, NoiseModel, ObservationSeries, ModelGrid) {
    let setup = gradient_setup(nx, nz, steps);
    let noise = NoiseModel::from_setup(&setup);
    let obs = synthesize_observations(&random_model(nx, nz, 100), &setup, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (setup, noise, obs, random_model(nx, nz, 101))
}

fn perturbed(m: &ModelGrid, dk: &[f64], dphi: &[f64], h: f64) -> ModelGrid {
    let mut p = m.clone();
    for (k, d) in p.permeability.as_mut_slice().iter_mut().zip(dk) {
        *k *= (h * d).exp();
    }
    for (phi, d) in p.porosity.as_mut_slice().iter_mut().zip(dphi) {
        *phi += h * d;
    }
    p
}

#[test]
fn gradient_matches_cellwise_differences() {
    let (setup, noise, obs, m) = case(8, 4, 3);
    let adj = adjoint_gradient(&m, &setup, &obs, &noise, PermGradient::LogPermeability).unwrap();
    let fd = finite_difference_gradient(&m, &setup, &obs, &noise, 1e-4, PermGradient::LogPermeability).unwrap();
    let ek = max_rel_error(fd.d_loss_d_perm.as_slice(), adj.gradient.d_loss_d_perm.as_slice(), 1e-6);
    let ep = max_rel_error(fd.d_loss_d_poro.as_slice(), adj.gradient.d_loss_d_poro.as_slice(), 1e-6);
    assert!(ek < 1e-4 && ep < 1e-4, "perm {ek:.2e}, poro {ep:.2e}");
}

#[test]
fn loss_matches_forward_run() {
    let (setup, noise, obs, m) = case(8, 4, 3);
    let adj = adjoint_gradient(&m, &setup, &obs, &noise, PermGradient::LogPermeability).unwrap();
    let direct = flow_loss_of(&m, &setup, &obs, &noise).unwrap();
    assert_eq!(adj.loss, direct);
    assert!(adj.loss > 0.0);
}

#[test]
fn directional_derivative_on_larger_grid() {
    let (setup, noise, obs, m) = case(16, 8, 4);
    let adj = adjoint_gradient(&m, &setup, &obs, &noise, PermGradient::LogPermeability).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 16 * 8;
    let dk: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dphi: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    let predicted = dot(adj.gradient.d_loss_d_perm.as_slice(), &dk) + dot(adj.gradient.d_loss_d_poro.as_slice(), &dphi);
    let f = |h: f64| flow_loss_of(&perturbed(&m, &dk, &dphi, h), &setup, &obs, &noise).unwrap();
    // Richardson extrapolation of two central differences
    let d1 = (f(2e-4) - f(-2e-4)) / 4e-4;
    let d2 = (f(1e-4) - f(-1e-4)) / 2e-4;
    let fd = (4.0 * d2 - d1) / 3.0;
    let rel = (fd - predicted).abs() / predicted.abs();
    assert!(rel < 1e-5, "adjoint {predicted}, differences {fd}, rel {rel:.2e}");
}

#[test]
fn raw_permeability_mode_rescales_log_mode() {
    let (setup, noise, obs, m) = case(8, 4, 2);
    let log = adjoint_gradient(&m, &setup, &obs, &noise, PermGradient::LogPermeability).unwrap();
    let raw = adjoint_gradient(&m, &setup, &obs, &noise, PermGradient::Permeability).unwrap();
    assert_eq!(raw.gradient.mode, PermGradient::Permeability);
    for ((g, r), k) in log
        .gradient
        .d_loss_d_perm
        .as_slice()
        .iter()
        .zip(raw.gradient.d_loss_d_perm.as_slice())
        .zip(m.permeability.as_slice())
    {
        assert!((g / k - r).abs() <= 1e-12 * r.abs().max(1e-300), "{} vs {r}", g / k);
    }
    assert_eq!(log.gradient.d_loss_d_poro, raw.gradient.d_loss_d_poro);
    let fd = finite_difference_gradient(&m, &setup, &obs, &noise, 1e-4, PermGradient::Permeability).unwrap();
    let e = max_rel_error(fd.d_loss_d_perm.as_slice(), raw.gradient.d_loss_d_perm.as_slice(), 1e-6);
    assert!(e < 1e-4, "raw mode error {e:.2e}");
}

#[test]
fn gradient_vanishes_at_noise_free_reference() {
    let setup = gradient_setup(8, 4, 3);
    let noise = NoiseModel::from_setup(&setup);
    let reference = random_model(8, 4, 7);
    let obs = synthesize_observations(&reference, &setup, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let adj = adjoint_gradient(&reference, &setup, &obs, &noise, PermGradient::LogPermeability).unwrap();
    assert!(adj.loss < 1e-12, "loss {}", adj.loss);
    assert!(adj.gradient.d_loss_d_perm.as_slice().iter().all(|g| g.abs() < 1e-6));
}

#[test]
fn mismatched_observations_are_rejected() {
    let (setup, noise, obs, m) = case(8, 4, 3);
    let mut short = setup.clone();
    short.schedule = ganvert_core::Schedule::uniform(60.0, 2);
    assert!(matches!(
        adjoint_gradient(&m, &short, &obs, &noise, PermGradient::LogPermeability),
        Err(AdjointError::Observation(_))
    ));
}
