//! Discrete adjoint of the implicit time stepping.
//!
//! The backward sweep solves `J_nᵀ λ_n = ∂L/∂x_n − (∂R_{n+1}/∂x_n)ᵀ λ_{n+1}` from
//! the last accepted step to the first, reusing the stored forward states, and
//! collects `dL/dm = ∂L/∂m − Σ_n λ_nᵀ ∂R_n/∂m` for cell permeability and porosity.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::flowsim::{run, Discretization, SimError, SimOutput, SimSetup};
use crate::geomodel::ModelGrid;
use crate::grid::{write_record, FormatError, Grid2};
use crate::inversion::{flow_loss, flow_loss_with_sensitivity, InversionError, NoiseModel, ObservationSeries};
use crate::{BAR, DAY};

#[derive(Debug, Error)]
pub enum AdjointError {
    #[error("forward simulation failed: {0}")]
    ForwardFailed(#[from] SimError),
    #[error("singular Jacobian in the adjoint sweep at step {step}")]
    SingularJacobian { step: usize },
    #[error(transparent)]
    Observation(#[from] InversionError),
}

/// Parameterisation of the permeability sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PermGradient {
    /// `∂L/∂ ln k`, dimensionless.
    #[default]
    LogPermeability,
    /// `∂L/∂k` in 1/m².
    Permeability,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub mode: PermGradient,
    pub d_loss_d_perm: Grid2,
    pub d_loss_d_poro: Grid2,
}

impl GradientField {
    pub fn zeros(nx: usize, nz: usize, mode: PermGradient) -> Self {
        Self { mode, d_loss_d_perm: Grid2::zeros(nx, nz), d_loss_d_poro: Grid2::zeros(nx, nz) }
    }

    pub fn is_finite(&self) -> bool {
        self.d_loss_d_perm.as_slice().iter().chain(self.d_loss_d_poro.as_slice()).all(|v| v.is_finite())
    }

    /// One two-channel record (permeability, porosity sensitivity).
    pub fn write_ggrd<W: Write>(&self, w: &mut W) -> Result<(), FormatError> {
        write_record(w, &[&self.d_loss_d_perm, &self.d_loss_d_poro])
    }
}

/// Flow loss, its gradient and the forward run it was computed from.
#[derive(Debug, Clone)]
pub struct FlowGradient {
    pub loss: f64,
    pub gradient: GradientField,
    pub output: SimOutput,
}

/// Flow loss of `m` and its gradient with respect to cell permeability and porosity.
pub fn adjoint_gradient(
    m: &ModelGrid,
    setup: &SimSetup,
    obs: &ObservationSeries,
    noise: &NoiseModel,
    mode: PermGradient,
) -> Result<FlowGradient, AdjointError> {
    let d = Discretization::new(m, &setup.fluid, &setup.geometry, &setup.wells)?;
    let (history, output) = run(&d, setup)?;
    let (loss, sens) = flow_loss_with_sensitivity(&output, obs, noise)?;
    let (nx, nz) = (m.nx(), m.nz());
    if obs.is_empty() {
        return Ok(FlowGradient { loss, gradient: GradientField::zeros(nx, nz, mode), output });
    }

    let nc = d.nc;
    let n_steps = history.steps.len();
    let mut report_of_step = vec![None; n_steps];
    for (t, &n) in history.report_ends.iter().enumerate() {
        report_of_step[n] = Some(t);
    }

    let mut dk_direct = vec![0.0; nc];
    let mut dk_adj = vec![0.0; nc];
    let mut dphi_adj = vec![0.0; nc];
    let mut lam_next: Option<Vec<f64>> = None;

    for n in (0..n_steps).rev() {
        let step = &history.steps[n];
        let prev = history.prev_state(n);
        let mut rhs = vec![0.0; 2 * nc];
        let mut rhs_well = 0.0;
        if let Some(t) = report_of_step[n] {
            d.producer_rates_vjp(&step.state, [sens.q_w[t] * DAY, sens.q_o[t] * DAY], &mut rhs, &mut dk_direct);
            rhs_well += sens.p_inj[t] / BAR;
        }
        if let Some(lam) = &lam_next {
            let coupling = d.prev_state_vjp(&step.state, history.steps[n + 1].dt, lam);
            for (r, c) in rhs.iter_mut().zip(coupling) {
                *r -= c;
            }
        }
        let mut jac = d.new_jacobian();
        d.assemble(&step.state, prev, step.dt, Some(&mut jac));
        let lu = jac.factor().map_err(|_| AdjointError::SingularJacobian { step: n })?;
        let mu = lu.solve_transpose(&mut rhs, rhs_well);
        d.param_vjp(&step.state, prev, step.dt, &rhs, mu, &mut dk_adj, &mut dphi_adj);
        lam_next = Some(rhs);
    }

    let perm = m.permeability.as_slice();
    let d_perm: Vec<f64> = (0..nc)
        .map(|i| {
            let g = dk_direct[i] - dk_adj[i];
            match mode {
                PermGradient::LogPermeability => g * perm[i],
                PermGradient::Permeability => g,
            }
        })
        .collect();
    let d_poro: Vec<f64> = dphi_adj.iter().map(|v| -v).collect();
    let gradient = GradientField {
        mode,
        d_loss_d_perm: Grid2::from_vec(nx, nz, d_perm).expect("shape"),
        d_loss_d_poro: Grid2::from_vec(nx, nz, d_poro).expect("shape"),
    };
    Ok(FlowGradient { loss, gradient, output })
}

/// Flow loss of `m` by a plain forward run.
pub fn flow_loss_of(
    m: &ModelGrid,
    setup: &SimSetup,
    obs: &ObservationSeries,
    noise: &NoiseModel,
) -> Result<f64, AdjointError> {
    let out = crate::flowsim::simulate(m, setup)?;
    Ok(flow_loss(&out, obs, noise)?)
}

/// Central differences, one pair of forward runs per cell and property.
///
/// Permeability is perturbed by the factor `exp(±rel_step)` in log mode and
/// `1 ± rel_step` in raw mode; porosity always by `1 ± rel_step`.
pub fn finite_difference_gradient(
    m: &ModelGrid,
    setup: &SimSetup,
    obs: &ObservationSeries,
    noise: &NoiseModel,
    rel_step: f64,
    mode: PermGradient,
) -> Result<GradientField, AdjointError> {
    let nc = m.nx() * m.nz();
    let entries: Vec<(usize, bool)> = (0..nc).flat_map(|i| [(i, true), (i, false)]).collect();
    let values: Vec<f64> = entries
        .par_iter()
        .map(|&(i, is_perm)| {
            let eval = |sign: f64| -> Result<f64, AdjointError> {
                let mut mm = m.clone();
                if is_perm {
                    let k = &mut mm.permeability.as_mut_slice()[i];
                    *k *= match mode {
                        PermGradient::LogPermeability => (sign * rel_step).exp(),
                        PermGradient::Permeability => 1.0 + sign * rel_step,
                    };
                } else {
                    mm.porosity.as_mut_slice()[i] *= 1.0 + sign * rel_step;
                }
                flow_loss_of(&mm, setup, obs, noise)
            };
            let diff = eval(1.0)? - eval(-1.0)?;
            let h = match (is_perm, mode) {
                (true, PermGradient::LogPermeability) => 2.0 * rel_step,
                (true, PermGradient::Permeability) => 2.0 * rel_step * m.permeability.as_slice()[i],
                (false, _) => 2.0 * rel_step * m.porosity.as_slice()[i],
            };
            Ok(diff / h)
        })
        .collect::<Result<_, AdjointError>>()?;
    let mut field = GradientField::zeros(m.nx(), m.nz(), mode);
    for (&(i, is_perm), v) in entries.iter().zip(values) {
        if is_perm {
            field.d_loss_d_perm.as_mut_slice()[i] = v;
        } else {
            field.d_loss_d_poro.as_mut_slice()[i] = v;
        }
    }
    Ok(field)
}
