mod common;

use common::*;
use ganvert_core::{simulate, ModelGrid, PropertyTransform, Schedule, SimError, SimSetup};

fn small_setup(total: f64, steps: usize) -> SimSetup {
    let mut s = SimSetup::for_grid(16, 8, steps);
    s.schedule = Schedule::uniform(total, steps);
    s
}

#[test]
fn shale_needs_higher_injection_pressure_than_sand() {
    let setup = SimSetup::desk();
    let t = PropertyTransform::default();
    let sand = simulate(&ModelGrid::homogeneous(32, 16, 1.0, &t), &setup).unwrap();
    let shale = simulate(&ModelGrid::homogeneous(32, 16, 0.0, &t), &setup).unwrap();
    assert_eq!(sand.times.len(), 20);
    for i in 0..20 {
        assert!(shale.p_inj[i] > sand.p_inj[i], "step {i}: {} vs {}", shale.p_inj[i], sand.p_inj[i]);
        assert!(sand.p_inj[i] > setup.wells.p_bhp);
    }
}

#[test]
fn runs_are_deterministic() {
    let m = random_model(16, 8, 21);
    let setup = small_setup(150.0, 5);
    assert_eq!(simulate(&m, &setup).unwrap(), simulate(&m, &setup).unwrap());
}

#[test]
fn refinement_differences_shrink() {
    let m = random_model(16, 8, 22);
    let runs: Vec<_> = [3, 6, 12, 24]
        .iter()
        .map(|&n| {
            let out = simulate(&m, &small_setup(120.0, n)).unwrap();
            let stride = n / 3;
            (0..3).map(|k| out.p_inj[(k + 1) * stride - 1]).collect::<Vec<_>>()
        })
        .collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d: Vec<f64> = runs.windows(2).map(|w| diff(&w[0], &w[1])).collect();
    assert!(d[0] > d[1] && d[1] > d[2], "differences {d:?}");
    // backward Euler: successive halvings roughly halve the error
    assert!(d[2] < 0.75 * d[1], "differences {d:?}");
}

#[test]
fn doubling_permeability_halves_the_pressure_drop() {
    let setup = small_setup(300.0, 10);
    let t = PropertyTransform::default();
    let base = ModelGrid::homogeneous(16, 8, 1.0, &t);
    let mut doubled = base.clone();
    doubled.permeability = base.permeability.map(|k| 2.0 * k);
    let a = simulate(&base, &setup).unwrap();
    let b = simulate(&doubled, &setup).unwrap();
    let drop = |o: &ganvert_core::SimOutput| o.p_inj.last().unwrap() - setup.wells.p_bhp;
    let ratio = drop(&b) / drop(&a);
    assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
}

#[test]
fn states_stay_physical() {
    let setup = small_setup(300.0, 10);
    for seed in 0..3 {
        let out = simulate(&random_model(16, 8, 30 + seed), &setup).unwrap();
        let f = &setup.fluid;
        for st in &out.states {
            for &s in st.s_w.as_slice() {
                assert!(s >= f.s_wc - 1e-9 && s <= 1.0 - f.s_or + 1e-9, "saturation {s}");
            }
            assert!(st.pressure.as_slice().iter().all(|p| p.is_finite() && *p > 0.0));
        }
        for (i, (&qo, &qw)) in out.q_o.iter().zip(&out.q_w).enumerate() {
            assert!(qo >= 0.0 && qw >= 0.0, "step {i}: rates {qo} {qw}");
        }
        for b in &out.balance {
            let [ew, eo] = b.relative_errors(setup.wells.q_w_inj);
            assert!(ew < 1e-4 && eo < 1e-4, "balance {ew} {eo}");
        }
    }
}

#[test]
fn invalid_setups_are_reported() {
    let m = random_model(16, 8, 1);
    let mut s = small_setup(100.0, 2);
    s.wells.producer_column = s.wells.injector_column;
    s.fluid.mu_w = -1.0;
    match simulate(&m, &s) {
        Err(SimError::InvalidInput(msg)) => assert!(msg.contains("share a column") && msg.contains("viscosities"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
    let s = small_setup(100.0, 2);
    assert!(simulate(&random_model(8, 8, 1), &s).is_err());
    let mut s = small_setup(100.0, 2);
    s.schedule.report_times = vec![50.0, 40.0];
    assert!(simulate(&m, &s).is_err());
}

#[test]
fn csv_lists_every_report_time() {
    let out = simulate(&random_model(16, 8, 2), &small_setup(90.0, 3)).unwrap();
    let csv = out.to_csv();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "time_days,p_inj_bar,q_o_m3d,q_w_m3d");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("90,"));
}
