//! MAP objective over latent vectors and the ADAM driver for the four matching scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::{adjoint_gradient, AdjointError, PermGradient};
use crate::decoder::{DecoderError, DecoderOutput, DecoderUpstream, DecoderWeights, LatentVector};
use crate::flowsim::{simulate, SimError, SimOutput, SimSetup};
use crate::geomodel::ModelGrid;
use crate::grid::Grid2;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("observation mismatch: {0}")]
    ObservationMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("forward simulation failed: {0}")]
    ForwardFailed(#[from] SimError),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("adjoint failed: {0}")]
    Adjoint(String),
}

/// Synthetic or field measurements at the report times of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    /// Days.
    pub times: Vec<f64>,
    /// Injector bottom-hole pressure (bar).
    pub p_inj: Vec<f64>,
    /// Producer water rate (m³/day).
    pub q_w: Vec<f64>,
    /// Producer oil rate (m³/day).
    pub q_o: Vec<f64>,
    /// Completed well cells (grid index, z fastest).
    pub well_cells: Vec<usize>,
    /// Sand (1) or shale (0) at each entry of `well_cells`.
    pub well_facies: Vec<u8>,
}

impl ObservationSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<(), InversionError> {
        let n = self.times.len();
        if self.p_inj.len() != n || self.q_w.len() != n || self.q_o.len() != n {
            return Err(InversionError::ObservationMismatch("series lengths differ".into()));
        }
        if self.well_cells.len() != self.well_facies.len() {
            return Err(InversionError::ObservationMismatch("well cell and label counts differ".into()));
        }
        if self.well_facies.iter().any(|&y| y > 1) {
            return Err(InversionError::ObservationMismatch("well labels must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Checks that the simulated report times line up with the observations.
    pub fn check_times(&self, sim: &SimOutput) -> Result<(), InversionError> {
        if sim.times.len() != self.times.len()
            || sim.times.iter().zip(&self.times).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
        {
            return Err(InversionError::ObservationMismatch(format!(
                "{} simulated report times vs {} observed",
                sim.times.len(),
                self.times.len()
            )));
        }
        Ok(())
    }
}

/// Measurement standard deviations; the noise mean is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// m³/day, shared by both rate series.
    pub sigma_q: f64,
    /// bar.
    pub sigma_p: f64,
}

impl NoiseModel {
    /// 3 % of the injection rate and 5 % of the reference pressure.
    pub fn from_setup(setup: &SimSetup) -> Self {
        Self { sigma_q: 0.03 * setup.wells.q_w_inj, sigma_p: 0.05 * setup.fluid.p_ref }
    }

    pub fn validate(&self) -> Result<(), InversionError> {
        if !(self.sigma_q > 0.0 && self.sigma_p > 0.0 && self.sigma_q.is_finite() && self.sigma_p.is_finite()) {
            return Err(InversionError::InvalidConfig(format!("noise levels must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Mean over report times of the squared, σ-normalised misfits of `q_w`, `q_o` and `p_inj`.
pub fn flow_loss(sim: &SimOutput, obs: &ObservationSeries, noise: &NoiseModel) -> Result<f64, InversionError> {
    Ok(flow_loss_with_sensitivity(sim, obs, noise)?.0)
}

/// Per-report derivatives of the flow loss with respect to the simulated series.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct SeriesSensitivity {
    pub p_inj: Vec<f64>,
    pub q_w: Vec<f64>,
    pub q_o: Vec<f64>,
}

pub(crate) fn flow_loss_with_sensitivity(
    sim: &SimOutput,
    obs: &ObservationSeries,
    noise: &NoiseModel,
) -> Result<(f64, SeriesSensitivity), InversionError> {
    obs.validate()?;
    noise.validate()?;
    obs.check_times(sim)?;
    let n = obs.len();
    if n == 0 {
        return Ok((0.0, SeriesSensitivity::default()));
    }
    let inv_t = 1.0 / n as f64;
    let (sq2, sp2) = (noise.sigma_q * noise.sigma_q, noise.sigma_p * noise.sigma_p);
    let mut loss = 0.0;
    let mut sens = SeriesSensitivity { p_inj: vec![0.0; n], q_w: vec![0.0; n], q_o: vec![0.0; n] };
    for t in 0..n {
        let rw = sim.q_w[t] - obs.q_w[t];
        let ro = sim.q_o[t] - obs.q_o[t];
        let rp = sim.p_inj[t] - obs.p_inj[t];
        loss += rw * rw / sq2 + ro * ro / sq2 + rp * rp / sp2;
        sens.q_w[t] = 2.0 * inv_t * rw / sq2;
        sens.q_o[t] = 2.0 * inv_t * ro / sq2;
        sens.p_inj[t] = 2.0 * inv_t * rp / sp2;
    }
    Ok((loss * inv_t, sens))
}

/// Simulates `reference` and perturbs the series with independent Gaussian noise.
///
/// Well labels are the reference facies thresholded at 0.5 on every completed cell.
pub fn synthesize_observations<R: Rng + ?Sized>(
    reference: &ModelGrid,
    setup: &SimSetup,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<ObservationSeries, InversionError> {
    let sim = simulate(reference, setup)?;
    let mut obs = ObservationSeries {
        times: sim.times.clone(),
        p_inj: sim.p_inj.clone(),
        q_w: sim.q_w.clone(),
        q_o: sim.q_o.clone(),
        well_cells: setup.well_cells(),
        well_facies: Vec::new(),
    };
    obs.well_facies = obs.well_cells.iter().map(|&c| u8::from(reference.facies.as_slice()[c] > 0.5)).collect();
    if let Some(noise) = noise {
        noise.validate()?;
        let nq = Normal::new(0.0, noise.sigma_q).expect("validated");
        let np = Normal::new(0.0, noise.sigma_p).expect("validated");
        for t in 0..obs.len() {
            obs.q_w[t] += nq.sample(rng);
            obs.q_o[t] += nq.sample(rng);
            obs.p_inj[t] += np.sample(rng);
        }
    }
    Ok(obs)
}

/// Binary cross-entropy over the labelled well cells and the fraction of
/// cells whose thresholded probability matches the label.
pub fn well_loss(facies_prob: &Grid2, obs: &ObservationSeries) -> (f64, f64) {
    let (loss, acc, _) = well_loss_with_gradient(facies_prob, obs);
    (loss, acc)
}

pub(crate) fn well_loss_with_gradient(facies_prob: &Grid2, obs: &ObservationSeries) -> (f64, f64, Vec<(usize, f64)>) {
    let n = obs.well_cells.len();
    if n == 0 {
        return (0.0, 1.0, Vec::new());
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    let mut grad = Vec::with_capacity(n);
    for (&cell, &y) in obs.well_cells.iter().zip(&obs.well_facies) {
        let raw = facies_prob.as_slice()[cell];
        let p = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let y = y as f64;
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        if (raw > 0.5) == (y > 0.5) {
            hits += 1;
        }
        let clamped = raw != p;
        grad.push((cell, if clamped { 0.0 } else { -y / p + (1.0 - y) / (1.0 - p) }));
    }
    (loss, hits as f64 / n as f64, grad)
}

/// Probability clamp applied before taking logarithms.
pub const BCE_CLAMP: f64 = 1.0e-7;

/// Negative log standard-normal density without its constant, `½‖z‖²`.
pub fn prior_loss(z: &LatentVector) -> f64 {
    0.5 * z.norm_sq()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { eta: 3.0e-2, beta1: 0.9, beta2: 0.999, epsilon: 1.0e-8, max_iters: 500 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), InversionError> {
        let ok = self.eta > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(InversionError::InvalidConfig(format!("ADAM settings out of range: {self:?}")))
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }
}

/// One bias-corrected ADAM update of `z` in place.
pub fn adam_step(z: &mut [f64], state: &mut AdamState, grad: &[f64], cfg: &AdamConfig) -> Result<(), InversionError> {
    if grad.len() != z.len() || state.m.len() != z.len() {
        return Err(InversionError::InvalidConfig("gradient and latent sizes differ".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(InversionError::NonFiniteGradient);
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..z.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        z[i] -= cfg.eta * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// The four matching experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Evaluate one prior sample; no optimisation.
    Prior,
    /// Well labels and prior; stops once every well cell is classified correctly.
    Wells,
    /// Flow data and prior.
    Flow,
    /// Flow data, well labels and prior.
    Total,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Prior, Scenario::Wells, Scenario::Flow, Scenario::Total];

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.get((n as usize).checked_sub(1)?).copied()
    }

    pub fn number(self) -> u8 {
        match self {
            Scenario::Prior => 1,
            Scenario::Wells => 2,
            Scenario::Flow => 3,
            Scenario::Total => 4,
        }
    }

    pub fn uses_flow(self) -> bool {
        matches!(self, Scenario::Prior | Scenario::Flow | Scenario::Total)
    }

    pub fn uses_wells(self) -> bool {
        matches!(self, Scenario::Prior | Scenario::Wells | Scenario::Total)
    }
}

/// Objective terms of one evaluation.
///
/// Terms outside the scenario's objective are reported as zero, so `total`
/// is always the quantity being minimised. The prior scenario reports all three.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub flow: f64,
    pub well: f64,
    pub prior: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(flow: f64, well: f64, prior: f64) -> Self {
        Self { flow, well, prior, total: flow + well + prior }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub accuracy: f64,
    #[serde(skip)]
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SingleEvaluation,
    WellAccuracyReached,
    MaxIterations,
    ForwardFailed { iteration: usize, message: String },
    NonFiniteGradient { iteration: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionTrace {
    pub scenario: Scenario,
    pub records: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub stop_reason: StopReason,
}

impl InversionTrace {
    pub fn best(&self) -> Option<&IterationRecord> {
        self.records.get(self.best_iteration)
    }

    /// JSON-serialisable summary appended after the per-iteration records.
    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            scenario: self.scenario.number(),
            best_iteration: self.best_iteration,
            best_total: self.best().map(|r| r.loss.total),
            stop_reason: self.stop_reason.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub scenario: u8,
    pub best_iteration: usize,
    pub best_total: Option<f64>,
    pub stop_reason: StopReason,
}

/// Decoder, simulator setup and data shared by every evaluation.
#[derive(Debug, Clone)]
pub struct InversionProblem {
    pub weights: DecoderWeights,
    pub setup: SimSetup,
    pub obs: ObservationSeries,
    pub noise: NoiseModel,
}

/// Loss terms, accuracy and optional latent gradient at one latent point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub accuracy: f64,
    pub gradient: Option<Vec<f64>>,
    pub decoded: DecoderOutput,
    pub simulation: Option<SimOutput>,
}

impl InversionProblem {
    pub fn new(weights: DecoderWeights, setup: SimSetup, obs: ObservationSeries, noise: NoiseModel) -> Result<Self, InversionError> {
        let (nx, nz) = weights.output_shape();
        if (nx, nz) != (setup.geometry.nx, setup.geometry.nz) {
            return Err(InversionError::InvalidConfig(format!(
                "decoder emits {nx}×{nz} but the simulation grid is {}×{}",
                setup.geometry.nx, setup.geometry.nz
            )));
        }
        setup.validate()?;
        obs.validate()?;
        noise.validate()?;
        if obs.well_cells.iter().any(|&c| c >= nx * nz) {
            return Err(InversionError::ObservationMismatch("well cell outside the grid".into()));
        }
        Ok(Self { weights, setup, obs, noise })
    }

    /// Twin experiment: observations simulated from the decoded latent drawn
    /// with `reference_seed`, noise drawn with `noise_seed`.
    pub fn synthetic(
        weights: DecoderWeights,
        setup: SimSetup,
        reference_seed: u64,
        noise_seed: u64,
    ) -> Result<(Self, DecoderOutput), InversionError> {
        let noise = NoiseModel::from_setup(&setup);
        let z_ref = weights.sample_latent(&mut ChaCha8Rng::seed_from_u64(reference_seed));
        let reference = weights.forward(&z_ref)?;
        let obs = synthesize_observations(&reference.model, &setup, Some(&noise), &mut ChaCha8Rng::seed_from_u64(noise_seed))?;
        Ok((Self::new(weights, setup, obs, noise)?, reference))
    }

    /// Scenario objective at `z`; the gradient is `d total / dz`.
    pub fn evaluate(&self, z: &LatentVector, scenario: Scenario, with_gradient: bool) -> Result<Evaluation, InversionError> {
        let decoded = self.weights.forward(z)?;
        let (nx, nz) = self.weights.output_shape();
        let mut up = DecoderUpstream::zeros(nx, nz);
        let (well, accuracy, well_grad) = well_loss_with_gradient(&decoded.facies_prob, &self.obs);
        let well_term = if scenario.uses_wells() { well } else { 0.0 };
        if scenario.uses_wells() {
            for (cell, g) in well_grad {
                up.facies.as_mut_slice()[cell] += g;
            }
        }
        let (flow, simulation) = if scenario.uses_flow() {
            if with_gradient {
                let fg = adjoint_gradient(&decoded.model, &self.setup, &self.obs, &self.noise, PermGradient::LogPermeability)
                    .map_err(|e| match e {
                        AdjointError::ForwardFailed(s) => InversionError::ForwardFailed(s),
                        AdjointError::Observation(o) => o,
                        other => InversionError::Adjoint(other.to_string()),
                    })?;
                let k = decoded.model.permeability.as_slice();
                for (i, g) in fg.gradient.d_loss_d_perm.as_slice().iter().enumerate() {
                    up.permeability.as_mut_slice()[i] += g / k[i];
                }
                for (i, g) in fg.gradient.d_loss_d_poro.as_slice().iter().enumerate() {
                    up.porosity.as_mut_slice()[i] += g;
                }
                (fg.loss, Some(fg.output))
            } else {
                let sim = simulate(&decoded.model, &self.setup)?;
                (flow_loss(&sim, &self.obs, &self.noise)?, Some(sim))
            }
        } else {
            (0.0, None)
        };
        let prior = prior_loss(z);
        let gradient = if with_gradient {
            let mut g = self.weights.backward(&decoded, &up)?.0;
            for (gi, zi) in g.iter_mut().zip(z.as_slice()) {
                *gi += zi;
            }
            Some(g)
        } else {
            None
        };
        Ok(Evaluation { loss: LossBreakdown::new(flow, well_term, prior), accuracy, gradient, decoded, simulation })
    }

    /// ADAM descent from `z0`.
    pub fn run(&self, scenario: Scenario, z0: LatentVector, cfg: &AdamConfig) -> Result<InversionTrace, InversionError> {
        cfg.validate()?;
        if z0.dim() != self.weights.latent_dim() {
            return Err(InversionError::InvalidConfig(format!(
                "latent has {} entries, decoder expects {}",
                z0.dim(),
                self.weights.latent_dim()
            )));
        }
        let mut records = Vec::new();
        let mut z = z0;
        let mut state = AdamState::new(z.dim());
        let iters = if scenario == Scenario::Prior { 1 } else { cfg.max_iters };
        let mut stop_reason = StopReason::MaxIterations;
        for iter in 0..iters {
            let optimise = scenario != Scenario::Prior;
            let ev = match self.evaluate(&z, scenario, optimise) {
                Ok(ev) => ev,
                Err(InversionError::ForwardFailed(e)) => {
                    stop_reason = StopReason::ForwardFailed { iteration: iter, message: e.to_string() };
                    break;
                }
                Err(e) => return Err(e),
            };
            records.push(IterationRecord { iter, loss: ev.loss, accuracy: ev.accuracy, z: z.0.clone() });
            if !optimise {
                stop_reason = StopReason::SingleEvaluation;
                break;
            }
            if scenario == Scenario::Wells && ev.accuracy >= 1.0 {
                stop_reason = StopReason::WellAccuracyReached;
                break;
            }
            if iter + 1 == iters {
                break;
            }
            let grad = ev.gradient.expect("requested");
            if adam_step(&mut z.0, &mut state, &grad, cfg).is_err() {
                stop_reason = StopReason::NonFiniteGradient { iteration: iter };
                break;
            }
        }
        let best_iteration = records
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.loss.total.total_cmp(&b.1.loss.total))
            .map_or(0, |(i, _)| i);
        Ok(InversionTrace { scenario, records, best_iteration, stop_reason })
    }

    /// Starting point of ensemble member `seed`.
    pub fn initial_latent(&self, seed: u64) -> LatentVector {
        self.weights.sample_latent(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent runs, one per seed, in parallel.
    pub fn run_ensemble(&self, scenario: Scenario, cfg: &AdamConfig, seeds: &[u64]) -> Vec<Result<InversionTrace, InversionError>> {
        seeds.par_iter().map(|&s| self.run(scenario, self.initial_latent(s), cfg)).collect()
    }
}
