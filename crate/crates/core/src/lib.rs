//! Latent-space history matching for two-phase subsurface flow.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] holds the 2D lattice container and the `GGRD` binary record format.
//! * [`geomodel`] samples object-based channel realisations and maps facies to rock properties.
//! * [`flowsim`] is a fully-implicit two-point-flux simulator for water/oil flow.
//! * [`adjoint`] differentiates the flow misfit through the implicit time stepping.
//! * [`decoder`] evaluates the convolutional generator and its vector-Jacobian product.
//! * [`inversion`] assembles the MAP objective and drives ADAM over latent vectors.
//! * [`analysis`] provides connectivity, ensemble statistics and latent interpolation probes.

pub mod adjoint;
pub mod analysis;
pub mod decoder;
pub mod flowsim;
pub mod geomodel;
pub mod grid;
pub mod inversion;
mod linalg;

pub use analysis::{
    ensemble_stats, evaluate_interpolation, label_components, permutation_test, slerp, slerp_cycle, threshold_facies,
    well_connectivity, AnalysisError, ConnectivityOptions, ConnectivityReport, EnsembleStats, Histogram, Neighbourhood,
};
pub use adjoint::{adjoint_gradient, finite_difference_gradient, AdjointError, FlowGradient, GradientField, PermGradient};
pub use decoder::{Architecture, DecoderError, DecoderOutput, DecoderUpstream, DecoderWeights, LatentVector};
pub use flowsim::{
    simulate, FluidParams, GridGeometry, Schedule, SimError, SimOutput, SimSetup, SimState,
    SolverOptions, WellSpec,
};
pub use geomodel::{FaciesGrid, GeoConfig, GeoError, ModelGrid, PropertyTransform};
pub use grid::{FormatError, Grid2};
pub use inversion::{
    flow_loss, prior_loss, synthesize_observations, well_loss, AdamConfig, IterationRecord, InversionError, InversionProblem, InversionTrace, LossBreakdown,
    NoiseModel, ObservationSeries, Scenario, StopReason, TraceSummary,
};

/// Seconds per day.
pub const DAY: f64 = 86_400.0;
/// Pascals per bar.
pub const BAR: f64 = 1.0e5;
