use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ganvert_core::decoder::seeded_weights;
use ganvert_core::geomodel::realization;
use ganvert_core::{
    adjoint_gradient, label_components, simulate, synthesize_observations, threshold_facies, Architecture, GeoConfig,
    ModelGrid, Neighbourhood, NoiseModel, PermGradient, PropertyTransform, SimSetup,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk_model(index: u64) -> ModelGrid {
    ganvert_core::geomodel::facies_to_properties(&realization(&GeoConfig::desk(), index), &PropertyTransform::default())
}

fn flow(c: &mut Criterion) {
    let setup = SimSetup::desk();
    let m = desk_model(1);
    let obs = synthesize_observations(&desk_model(2), &setup, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let noise = NoiseModel::from_setup(&setup);
    let mut g = c.benchmark_group("flow");
    g.sample_size(10);
    g.bench_function("simulate_desk", |b| b.iter(|| simulate(black_box(&m), &setup).unwrap()));
    g.bench_function("adjoint_desk", |b| {
        b.iter(|| adjoint_gradient(black_box(&m), &setup, &obs, &noise, PermGradient::LogPermeability).unwrap())
    });
    g.finish();
}

fn decoder(c: &mut Criterion) {
    let a = Architecture::Desk;
    let w = seeded_weights(a.filters(), a.latent_channels(), &PropertyTransform::default(), 0);
    let z = w.sample_latent(&mut ChaCha8Rng::seed_from_u64(1));
    let out = w.forward(&z).unwrap();
    let (nx, nz) = w.output_shape();
    let mut up = ganvert_core::DecoderUpstream::zeros(nx, nz);
    up.facies = out.facies_prob.clone();
    c.bench_function("decoder_forward_desk", |b| b.iter(|| w.forward(black_box(&z)).unwrap()));
    c.bench_function("decoder_backward_desk", |b| b.iter(|| w.backward(black_box(&out), &up).unwrap()));
}

fn analysis(c: &mut Criterion) {
    let f = threshold_facies(realization(&GeoConfig::default(), 3).grid(), 0.5);
    c.bench_function("label_components_128x64", |b| b.iter(|| label_components(black_box(&f), Neighbourhood::Four)));
}

criterion_group!(benches, flow, decoder, analysis);
criterion_main!(benches);
