use ganvert_core::geomodel::{export_dataset, facies_to_properties, realization, sample_channels, HalfDisc};
use ganvert_core::grid::read_all;
use ganvert_core::{FaciesGrid, GeoConfig, GeoError, Grid2, PropertyTransform};
use proptest::prelude::*;

/// Probability that one random half disc covers the centre of cell `(x, z)`,
/// by quadrature over depth and radius with the lateral extent integrated exactly.
fn single_cover_probability(cfg: &GeoConfig, x: f64, z: f64) -> f64 {
    let (r0, r1) = cfg.radius;
    let (nx, nz) = (cfg.nx as f64, cfg.nz as f64);
    let n = 300;
    let mut acc = 0.0;
    for i in 0..n {
        let r = r0 + (r1 - r0) * (i as f64 + 0.5) / n as f64;
        for j in 0..n {
            let cz = nz * (j as f64 + 0.5) / n as f64;
            let dz = z - cz;
            if dz < 0.0 || dz > r {
                continue;
            }
            let half = (r * r - dz * dz).sqrt();
            let lo = (x - half).max(0.0);
            let hi = (x + half).min(nx);
            acc += (hi - lo).max(0.0) / nx;
        }
    }
    acc / (n * n) as f64
}

fn coverage_oracle(cfg: &GeoConfig) -> Grid2 {
    let (lo, hi) = cfg.channel_count;
    Grid2::from_fn(cfg.nx, cfg.nz, |x, z| {
        let p1 = single_cover_probability(cfg, x as f64, z as f64);
        (lo..=hi).map(|k| 1.0 - (1.0 - p1).powi(k as i32)).sum::<f64>() / (hi - lo + 1) as f64
    })
}

#[test]
fn realisation_frequencies_match_coverage_oracle() {
    let cfg = GeoConfig { seed: 11, ..GeoConfig::desk() };
    let oracle = coverage_oracle(&cfg);
    let n = 2000;
    let mut freq = Grid2::zeros(cfg.nx, cfg.nz);
    for i in 0..n {
        let g = realization(&cfg, i);
        for (f, v) in freq.as_mut_slice().iter_mut().zip(g.grid().as_slice()) {
            *f += v / n as f64;
        }
    }
    assert!((freq.mean() - oracle.mean()).abs() < 0.02, "mean {} vs {}", freq.mean(), oracle.mean());
    let worst = freq.as_slice().iter().zip(oracle.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "worst cell deviation {worst}");
}

#[test]
fn channel_parameters_respect_ranges() {
    let cfg = GeoConfig::default();
    let mut rng = cfg.stream(3);
    for _ in 0..500 {
        let discs = sample_channels(&cfg, &mut rng);
        assert!((5..=15).contains(&discs.len()));
        for d in discs {
            assert!((0.0..128.0).contains(&d.cx) && (0.0..64.0).contains(&d.cz));
            assert!((4.0..16.0).contains(&d.radius));
        }
    }
}

#[test]
fn half_disc_lies_below_its_flat_side() {
    let d = HalfDisc { cx: 10.0, cz: 5.0, radius: 3.0 };
    assert!(d.contains(10.0, 5.0));
    assert!(d.contains(10.0, 8.0));
    assert!(d.contains(13.0, 5.0));
    assert!(!d.contains(10.0, 4.9));
    assert!(!d.contains(10.0, 8.1));
    assert!(!d.contains(12.5, 7.0));
}

#[test]
fn realisations_are_reproducible_and_distinct() {
    let cfg = GeoConfig::desk();
    assert_eq!(realization(&cfg, 4), realization(&cfg, 4));
    assert_ne!(realization(&cfg, 4), realization(&cfg, 5));
    let other = GeoConfig { seed: 1, ..cfg.clone() };
    assert_ne!(realization(&cfg, 4), realization(&other, 4));
    for i in 0..50 {
        assert!(realization(&cfg, i).grid().as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn dataset_export_round_trips() {
    let cfg = GeoConfig::desk();
    let mut buf = Vec::new();
    let summary = export_dataset(&cfg, 12, &mut buf).unwrap();
    assert_eq!(summary.count, 12);
    let records = read_all(buf.as_slice()).unwrap();
    assert_eq!(records.len(), 12);
    let mut mean = 0.0;
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.len(), 2);
        let g = realization(&cfg, i as u64);
        assert_eq!(&r[0], g.grid());
        assert_eq!(&r[1], g.grid());
        mean += g.sand_fraction() / 12.0;
    }
    assert!((summary.sand_fraction_mean - mean).abs() < 1e-12);
    assert!(export_dataset(&cfg, 0, Vec::new()).is_err());
}

#[test]
fn invalid_inputs_are_rejected() {
    let bad = GeoConfig { channel_count: (9, 3), radius: (2.0, 1.0), ..GeoConfig::desk() };
    let msg = bad.validate().unwrap_err().to_string();
    assert!(msg.contains("channel_count") && msg.contains("radius"), "{msg}");
    assert!(matches!(
        FaciesGrid::new(Grid2::filled(2, 2, 1.5)),
        Err(GeoError::OutOfRange { cell: 0, .. })
    ));
}

proptest! {
    #[test]
    fn transform_maps_into_property_bounds(p in 0.0f64..=1.0, a in 0.0f64..0.1, b in 1e-14f64..1e-11, c in 0.0f64..0.5, d in 0.01f64..0.4) {
        let t = PropertyTransform { a, b, c, d };
        let k = t.permeability(p);
        let phi = t.porosity(p);
        prop_assert!(k >= a * b * (1.0 - 1e-12) && k <= (1.0 + a) * b * (1.0 + 1e-12));
        prop_assert!(phi >= d - 1e-15 && phi <= c + d + 1e-15);
    }

    #[test]
    fn transform_is_monotone(p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let t = PropertyTransform::default();
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        prop_assert!(t.permeability(lo) <= t.permeability(hi));
        prop_assert!(t.porosity(lo) <= t.porosity(hi));
    }

    #[test]
    fn indicator_grids_map_to_two_values(seed in 0u64..1000) {
        let t = PropertyTransform::default();
        let m = facies_to_properties(&realization(&GeoConfig::desk(), seed), &t);
        for (&f, &k) in m.facies.as_slice().iter().zip(m.permeability.as_slice()) {
            let expected = if f == 1.0 { 1.001e-12 } else { 1e-15 };
            prop_assert!((k - expected).abs() < 1e-27);
        }
    }
}
