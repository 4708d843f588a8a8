//! B-scheme discretizations of the 1D Fokker-Planck equation, viewed as
//! reversible birth-death chains on a truncated lattice.
//!
//! The pieces build on each other in this order: [`bfunc`] and [`potential`]
//! define the scheme, [`lattice`] turns them into jump rates and a stationary
//! measure, [`gamma`] supplies the carré du champ calculus, and
//! [`certificates`] produces explicit Poincaré constants. [`spectral`],
//! [`dynamics`] and [`stochastic`] give independent ground truth to check the
//! certificates against.

pub mod bfunc;
pub mod certificates;
pub mod dynamics;
pub mod error;
pub mod gamma;
pub mod json;
pub mod lattice;
pub mod potential;
pub mod spectral;
pub mod stochastic;

pub use bfunc::{make_b_function, symmetric_grid, validate_b, BFunction, BKind, BValidation};
pub use certificates::{
    assemble_global, best_certificate, certify_all, curvature_estimate, local_poincare_constant,
    lyapunov_certificate, perturbation_transfer, CurvatureCertificate, LyapunovCertificate, Method,
    PoincareCertificate,
};
pub use dynamics::{
    default_dt, dissipation_check, evolve_backward, evolve_backward_with, evolve_forward,
    evolve_forward_with, fit_decay_rate, h1_decay_check, EvolutionResult, EvolveOptions,
    OutputSchedule, TimeMethod,
};
pub use error::{Error, Result};
pub use gamma::{
    apply_forward, apply_generator, dirichlet_energy, gamma, gamma2_closed, gamma2_definitional,
    quotient_defect,
};
pub use lattice::{
    build_rates, check_detailed_balance, mean_var, stationary_measure, summability_report,
    GridFunction, Lattice, RateField, StationaryMeasure,
};
pub use potential::Potential;
pub use spectral::{
    rayleigh_quotient, spectral_gap, symmetrize, SpectralGap, SymmetricTridiagonal,
};
pub use stochastic::{empirical_law, simulate, tv_distance, TrajectoryEnsemble};
