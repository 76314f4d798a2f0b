//! Fully-implicit two-phase (water/oil) Darcy flow on a 2D vertical section.
//!
//! Backward Euler in time, two-point flux approximation in space, phase
//! mobilities upwinded on the pressure difference (no gravity, no capillarity).
//! The injector is rate controlled and the producer runs at fixed bottom-hole
//! pressure; both use a Peaceman well index on every completed cell.

mod discretization;
mod fluid;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use discretization::{build_transmissibilities, Transmissibility};
pub use fluid::{relative_permeability, FluidParams};

pub(crate) use discretization::{Discretization, State};

use crate::geomodel::ModelGrid;
use crate::grid::Grid2;
use crate::{BAR, DAY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
    #[error("Newton iteration failed at t = {time_days} d after {halvings} time-step cuts")]
    NewtonDivergence { time_days: f64, halvings: usize },
    #[error("non-finite state at t = {time_days} d")]
    NonFiniteState { time_days: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGeometry {
    pub nx: usize,
    pub nz: usize,
    /// Cell size along x (m).
    pub dx: f64,
    /// Cell size along depth (m).
    pub dz: f64,
    /// Out-of-plane thickness (m).
    pub thickness: f64,
}

impl GridGeometry {
    pub fn new(nx: usize, nz: usize) -> Self {
        Self { nx, nz, dx: 10.0, dz: 10.0, thickness: 10.0 }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dz * self.thickness
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.nx == 0 || self.nz == 0 || !(self.dx > 0.0 && self.dz > 0.0 && self.thickness > 0.0) {
            return Err(SimError::InvalidInput(format!("degenerate geometry {self:?}")));
        }
        Ok(())
    }

    /// Equivalent radius of a vertical well crossing a cell.
    pub fn peaceman_radius(&self) -> f64 {
        0.14 * (self.dx * self.dx + self.thickness * self.thickness).sqrt()
    }

    /// Well index per unit permeability: `2π dz / ln(r_eq / r_w)`.
    pub fn peaceman_factor(&self, wellbore_radius: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.dz / (self.peaceman_radius() / wellbore_radius).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellSpec {
    pub injector_column: usize,
    pub producer_column: usize,
    /// Completed rows `[start, end)`.
    pub completion_rows: (usize, usize),
    /// Water injection rate (m³/day).
    pub q_w_inj: f64,
    /// Producer bottom-hole pressure (bar).
    pub p_bhp: f64,
    /// Wellbore radius (m).
    pub wellbore_radius: f64,
}

impl WellSpec {
    /// Injector four columns in from the left edge at 128 columns, scaled for
    /// other widths; producer mirrored on the right. Full-height completions.
    pub fn for_grid(nx: usize, nz: usize) -> Self {
        let inj = nx / 32;
        Self {
            injector_column: inj,
            producer_column: nx.saturating_sub(1 + inj),
            completion_rows: (0, nz),
            q_w_inj: 300.0,
            p_bhp: 150.0,
            wellbore_radius: 0.1,
        }
    }

    pub fn violations(&self, g: &GridGeometry) -> Vec<String> {
        let mut v = Vec::new();
        if self.injector_column >= g.nx || self.producer_column >= g.nx {
            v.push(format!("well columns {} / {} outside grid width {}", self.injector_column, self.producer_column, g.nx));
        }
        if self.injector_column == self.producer_column {
            v.push("injector and producer share a column".into());
        }
        let (r0, r1) = self.completion_rows;
        if !(r0 < r1 && r1 <= g.nz) {
            v.push(format!("completion rows [{r0}, {r1}) invalid for {} rows", g.nz));
        }
        if !(self.q_w_inj > 0.0) {
            v.push("injection rate must be positive".into());
        }
        if !(self.p_bhp > 0.0) {
            v.push("producer bottom-hole pressure must be positive".into());
        }
        if !(self.wellbore_radius > 0.0 && g.peaceman_radius() > self.wellbore_radius) {
            v.push("wellbore radius must be positive and below the Peaceman radius".into());
        }
        v
    }

    pub fn validate(&self, g: &GridGeometry) -> Result<(), SimError> {
        let v = self.violations(g);
        if v.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidInput(v.join("; ")))
        }
    }

    /// Completed cells, injector column first.
    pub fn completed_cells(&self, nz: usize) -> Vec<usize> {
        let (r0, r1) = self.completion_rows;
        [self.injector_column, self.producer_column]
            .iter()
            .flat_map(|&x| (r0..r1).map(move |z| x * nz + z))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Days.
    pub total_time: f64,
    /// Report times in days, strictly increasing, ending at `total_time`.
    pub report_times: Vec<f64>,
}

impl Schedule {
    pub fn uniform(total_time: f64, n_steps: usize) -> Self {
        if n_steps == 0 {
            return Self::empty();
        }
        let dt = total_time / n_steps as f64;
        let mut report_times: Vec<f64> = (1..=n_steps).map(|i| dt * i as f64).collect();
        *report_times.last_mut().unwrap() = total_time;
        Self { total_time, report_times }
    }

    pub fn empty() -> Self {
        Self { total_time: 0.0, report_times: Vec::new() }
    }

    pub fn n_steps(&self) -> usize {
        self.report_times.len()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut last = 0.0;
        for &t in &self.report_times {
            if !(t > last) {
                v.push(format!("report times must be strictly increasing and positive (at {t})"));
                break;
            }
            last = t;
        }
        if let Some(&t) = self.report_times.last() {
            if t != self.total_time {
                v.push(format!("last report time {t} differs from total time {}", self.total_time));
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Dimensionless residual tolerance (see [`NewtonReport`]).
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Number of time-step halvings allowed within one report interval.
    pub max_halvings: usize,
    /// Largest saturation update per Newton iteration.
    pub max_saturation_change: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { newton_tol: 1.0e-6, max_newton_iters: 25, max_halvings: 4, max_saturation_change: 0.2 }
    }
}

/// Everything except the rock properties.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSetup {
    pub fluid: FluidParams,
    pub geometry: GridGeometry,
    pub wells: WellSpec,
    pub schedule: Schedule,
    pub solver: SolverOptions,
}

impl SimSetup {
    /// `nx × nz` grid with default fluid, wells and solver, `n_steps` uniform steps over 600 days.
    pub fn for_grid(nx: usize, nz: usize, n_steps: usize) -> Self {
        Self {
            fluid: FluidParams::default(),
            geometry: GridGeometry::new(nx, nz),
            wells: WellSpec::for_grid(nx, nz),
            schedule: Schedule::uniform(600.0, n_steps),
            solver: SolverOptions::default(),
        }
    }

    /// 128×64 grid, 60 steps of 10 days.
    pub fn paper() -> Self {
        Self::for_grid(128, 64, 60)
    }

    /// 32×16 grid, 20 steps of 30 days.
    pub fn desk() -> Self {
        Self::for_grid(32, 16, 20)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.fluid.violations();
        if let Err(e) = self.geometry.validate() {
            v.push(e.to_string());
        } else {
            v.extend(self.wells.violations(&self.geometry));
        }
        v.extend(self.schedule.violations());
        let s = &self.solver;
        if !(s.newton_tol > 0.0) || s.max_newton_iters == 0 || !(s.max_saturation_change > 0.0) {
            v.push("solver options must be positive".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidInput(v.join("; ")))
        }
    }

    /// Completed well cells in grid order, injector first.
    pub fn well_cells(&self) -> Vec<usize> {
        self.wells.completed_cells(self.geometry.nz)
    }
}

/// Cell pressures (bar) and water saturations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub pressure: Grid2,
    pub s_w: Grid2,
    /// Injector bottom-hole pressure (bar).
    pub injector_bhp: f64,
}

impl SimState {
    fn from_state(st: &State, g: &GridGeometry) -> Self {
        Self {
            pressure: Grid2::from_vec(g.nx, g.nz, st.p.iter().map(|p| p / BAR).collect()).expect("shape"),
            s_w: Grid2::from_vec(g.nx, g.nz, st.s.clone()).expect("shape"),
            injector_bhp: st.p_bh / BAR,
        }
    }
}

/// Uniform `p_ref` pressure and initial water saturation.
pub fn initial_state(f: &FluidParams, p_ref: f64, g: &GridGeometry) -> SimState {
    SimState {
        pressure: Grid2::filled(g.nx, g.nz, p_ref),
        s_w: Grid2::filled(g.nx, g.nz, f.s_wi),
        injector_bhp: p_ref,
    }
}

/// Convergence history.
///
/// A step is accepted when three dimensionless measures fall below the
/// tolerance: the largest cell residual as a fraction of the cell pore volume
/// per step, the summed residual of each phase relative to the injection rate,
/// and the injector rate mismatch relative to the target rate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonReport {
    /// Newton iterations of each accepted step.
    pub iterations: Vec<usize>,
    /// Failed attempts that triggered a time-step cut.
    pub halvings: usize,
    /// Largest final residual measure over accepted steps.
    pub max_residual: f64,
}

/// Surface-volume bookkeeping of one accepted step (m³).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBalance {
    pub dt_days: f64,
    pub water_injected: f64,
    pub water_produced: f64,
    pub oil_produced: f64,
    pub water_storage_change: f64,
    pub oil_storage_change: f64,
}

impl StepBalance {
    /// Per-phase `|in − out − Δstorage|` as a fraction of the step's target injection.
    pub fn relative_errors(&self, q_w_inj: f64) -> [f64; 2] {
        let scale = q_w_inj * self.dt_days;
        [
            (self.water_injected - self.water_produced - self.water_storage_change).abs() / scale,
            (-self.oil_produced - self.oil_storage_change).abs() / scale,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Report times (days).
    pub times: Vec<f64>,
    /// Injector bottom-hole pressure (bar).
    pub p_inj: Vec<f64>,
    /// Producer water rate (m³/day).
    pub q_w: Vec<f64>,
    /// Producer oil rate (m³/day).
    pub q_o: Vec<f64>,
    pub initial: SimState,
    pub states: Vec<SimState>,
    pub newton: NewtonReport,
    pub balance: Vec<StepBalance>,
}

impl SimOutput {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_days,p_inj_bar,q_o_m3d,q_w_m3d\n");
        for i in 0..self.times.len() {
            s.push_str(&format!("{},{},{},{}\n", self.times[i], self.p_inj[i], self.q_o[i], self.q_w[i]));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Step {
    /// Seconds.
    pub dt: f64,
    pub state: State,
}

/// Accepted steps of a forward run, kept for the adjoint sweep.
#[derive(Debug, Clone)]
pub(crate) struct History {
    pub initial: State,
    pub steps: Vec<Step>,
    /// Index into `steps` of the last step of each report interval.
    pub report_ends: Vec<usize>,
}

impl History {
    pub fn prev_state(&self, n: usize) -> &State {
        if n == 0 {
            &self.initial
        } else {
            &self.steps[n - 1].state
        }
    }
}

enum StepFailure {
    Diverged,
    NonFinite,
}

fn newton_solve(d: &Discretization, prev: &State, dt: f64, opts: &SolverOptions) -> Result<(State, usize, f64), StepFailure> {
    let mut st = prev.clone();
    st.p_bh = d.consistent_injector_pressure(&st);
    for it in 0..=opts.max_newton_iters {
        let mut jac = d.new_jacobian();
        let r = d.assemble(&st, prev, dt, Some(&mut jac));
        let (cnv, mb, well) = d.residual_norms(&r, dt);
        let norm = cnv.max(mb).max(well);
        if !norm.is_finite() {
            return Err(StepFailure::NonFinite);
        }
        if norm <= opts.newton_tol {
            return Ok((st, it, norm));
        }
        if it == opts.max_newton_iters {
            break;
        }
        let lu = jac.factor().map_err(|_| StepFailure::Diverged)?;
        let mut delta: Vec<f64> = r.cells.iter().map(|v| -v).collect();
        let dy = lu.solve(&mut delta, -r.well);
        let chop = opts.max_saturation_change;
        for i in 0..d.nc {
            st.p[i] += delta[2 * i];
            st.s[i] = (st.s[i] + delta[2 * i + 1].clamp(-chop, chop)).clamp(0.0, 1.0);
        }
        st.p_bh += dy;
        if !st.is_finite() {
            return Err(StepFailure::NonFinite);
        }
    }
    Err(StepFailure::Diverged)
}

fn step_balance(d: &Discretization, prev: &State, st: &State, dt: f64) -> StepBalance {
    let mut store = [0.0; 2];
    for i in 0..d.nc {
        let a = d.in_place(i, st.p[i], st.s[i]);
        let b = d.in_place(i, prev.p[i], prev.s[i]);
        store[0] += a[0] - b[0];
        store[1] += a[1] - b[1];
    }
    let mut injected = 0.0;
    for w in &d.inj {
        let e = d.eval_cell(st.p[w.cell], st.s[w.cell]);
        injected += w.wi * (e.lam[0] + e.lam[1]) * (st.p_bh - st.p[w.cell]);
    }
    let q = d.producer_rates(st);
    StepBalance {
        dt_days: dt / DAY,
        water_injected: injected * dt,
        water_produced: q[0] * dt,
        oil_produced: q[1] * dt,
        water_storage_change: store[0],
        oil_storage_change: store[1],
    }
}

pub(crate) fn run(d: &Discretization, setup: &SimSetup) -> Result<(History, SimOutput), SimError> {
    setup.validate()?;
    let g = &setup.geometry;
    let opts = &setup.solver;
    let initial = d.initial_state();
    let mut history = History { initial: initial.clone(), steps: Vec::new(), report_ends: Vec::new() };
    let mut out = SimOutput {
        times: Vec::new(),
        p_inj: Vec::new(),
        q_w: Vec::new(),
        q_o: Vec::new(),
        initial: SimState::from_state(&initial, g),
        states: Vec::new(),
        newton: NewtonReport::default(),
        balance: Vec::new(),
    };

    let mut current = initial;
    let mut t = 0.0;
    for &t_report in &setup.schedule.report_times {
        let mut dt_try = t_report - t;
        let mut halvings = 0;
        while t_report - t > 1e-9 * t_report.max(1.0) {
            let dt_days = dt_try.min(t_report - t);
            match newton_solve(d, &current, dt_days * DAY, opts) {
                Ok((next, iters, norm)) => {
                    out.balance.push(step_balance(d, &current, &next, dt_days * DAY));
                    out.newton.iterations.push(iters);
                    out.newton.max_residual = out.newton.max_residual.max(norm);
                    history.steps.push(Step { dt: dt_days * DAY, state: next.clone() });
                    current = next;
                    t += dt_days;
                }
                Err(fail) => {
                    if halvings == opts.max_halvings {
                        return Err(match fail {
                            StepFailure::Diverged => SimError::NewtonDivergence { time_days: t, halvings },
                            StepFailure::NonFinite => SimError::NonFiniteState { time_days: t },
                        });
                    }
                    halvings += 1;
                    out.newton.halvings += 1;
                    dt_try = dt_days / 2.0;
                }
            }
        }
        t = t_report;
        history.report_ends.push(history.steps.len() - 1);
        let q = d.producer_rates(&current);
        out.times.push(t_report);
        out.p_inj.push(current.p_bh / BAR);
        out.q_w.push(q[0] * DAY);
        out.q_o.push(q[1] * DAY);
        out.states.push(SimState::from_state(&current, g));
    }
    Ok((history, out))
}

/// Runs the forward model over the whole schedule.
pub fn simulate(m: &ModelGrid, setup: &SimSetup) -> Result<SimOutput, SimError> {
    setup.validate()?;
    let d = Discretization::new(m, &setup.fluid, &setup.geometry, &setup.wells)?;
    run(&d, setup).map(|(_, out)| out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomodel::PropertyTransform;

    #[test]
    fn initial_state_shape_and_values() {
        let f = FluidParams::default();
        let g = GridGeometry::new(7, 3);
        let a = initial_state(&f, f.p_ref, &g);
        assert_eq!(a, initial_state(&f, f.p_ref, &g));
        assert_eq!((a.pressure.nx(), a.pressure.nz()), (7, 3));
        assert!(a.pressure.as_slice().iter().all(|&p| p == 200.0));
        assert!(a.s_w.as_slice().iter().all(|&s| s == 0.15));
    }

    #[test]
    fn empty_schedule_gives_initial_state_only() {
        let mut setup = SimSetup::for_grid(8, 4, 0);
        setup.schedule = Schedule::empty();
        let m = ModelGrid::homogeneous(8, 4, 1.0, &PropertyTransform::default());
        let out = simulate(&m, &setup).unwrap();
        assert!(out.times.is_empty() && out.p_inj.is_empty() && out.states.is_empty());
        assert!(out.initial.pressure.as_slice().iter().all(|&p| p == 200.0));
    }

    #[test]
    fn well_spec_defaults_and_validation() {
        let w = WellSpec::for_grid(128, 64);
        assert_eq!((w.injector_column, w.producer_column), (4, 123));
        let g = GridGeometry::new(128, 64);
        assert!(w.validate(&g).is_ok());
        let bad = WellSpec { producer_column: 4, ..w };
        assert!(bad.validate(&g).is_err());
        let bad = WellSpec { q_w_inj: 0.0, ..w };
        assert!(bad.validate(&g).is_err());
    }

    #[test]
    fn schedule_validation() {
        let s = Schedule::uniform(600.0, 60);
        assert!(s.violations().is_empty());
        assert_eq!(s.report_times[0], 10.0);
        let bad = Schedule { total_time: 10.0, report_times: vec![5.0, 5.0, 10.0] };
        assert!(!bad.violations().is_empty());
    }

    #[test]
    fn saturations_stay_bounded_and_rates_positive() {
        let setup = SimSetup::for_grid(12, 6, 8);
        let t = PropertyTransform::default();
        let m = ModelGrid::homogeneous(12, 6, 1.0, &t);
        let out = simulate(&m, &setup).unwrap();
        for st in &out.states {
            assert!(st.s_w.as_slice().iter().all(|s| (0.0..=1.0).contains(s)));
        }
        assert!(out.q_w.iter().chain(&out.q_o).all(|&q| q >= 0.0));
        for b in &out.balance {
            let e = b.relative_errors(300.0);
            assert!(e[0] <= 10.0 * setup.solver.newton_tol && e[1] <= 10.0 * setup.solver.newton_tol, "{e:?}");
        }
    }
}
