//! Singular stochastic control of forward–backward SDEs with recursive cost.
//!
//! The crate solves the gradient-constrained HJB variational inequality on a
//! grid, simulates the controlled forward SDE, evaluates recursive costs with a
//! regression BSDE solver, and cross-checks the pieces against a Markov-chain
//! dynamic-programming oracle.
//!
//! Every numerical routine is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases below fix the common case.
//!
//! ```
//! use singular_hjb::{builtin_section4, solve_default, HjbOptions};
//!
//! let spec = builtin_section4::<f64>();
//! let surface = solve_default(&spec, 0.1, 10, &HjbOptions::default()).unwrap();
//! let u = surface.value_at(0.0, &[1.0]).unwrap();
//! assert!((u - (-1.0f64).exp()).abs() < 2e-2);
//! ```

pub mod bsde;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod model;
pub mod regression;
pub mod report;
pub mod scalar;
pub mod sde;
pub mod verification;

pub use bsde::{
    backward_semigroup, comparison_check, cost_functional, solve_bsde, solve_bsde_terminal_values, solve_bsde_with_terminal,
    BsdeOptions, BsdeSolution, ComparisonResult, McConfig, SemigroupEstimate,
};
pub use error::{Error, Result};
pub use grid::{SpaceGrid, TimeGrid};
pub use hjb::checks::{
    candidates_from_surface, closed_form_section4, dpp_residual, regularity_estimate, verification_check, viscosity_residual_check,
    DppFamily, DppResult, VerificationReport, VerificationTolerances, ViscosityReport,
};
pub use hjb::region::{extract_inaction_region, jump_inequality_check, InactionMask, JumpCheck};
pub use hjb::{constraint_phase, solve_default, solve_hjb_vi, BoundaryMode, HjbOptions, SchemeMeta, ValueSurface};
pub use model::{
    builtin_linear_fk, builtin_section4, builtin_section4_with, builtin_wang, linear_fk_exact, validate_problem, AssumptionReport,
    ControlBox, ControlGrid, ControlSet, Dims, ProblemSpec,
};
pub use scalar::{lit, mean_and_stderr, Scalar};
pub use sde::{
    ito_residual, moment_scaling, simulate_forward, ItoResidual, MomentScaling, PathBundle, RegularControlPolicy, SingularControl,
    SingularControlPath, TestFunction,
};
pub use verification::{cross_check, cross_check_surfaces, dp_oracle, estimate_battery, BatteryConfig, BatteryReport, CrossCheckReport, DpOracleConfig};

pub type ProblemSpecF64 = ProblemSpec<f64>;
pub type ControlSetF64 = ControlSet<f64>;
pub type ControlGridF64 = ControlGrid<f64>;
pub type TimeGridF64 = TimeGrid<f64>;
pub type SpaceGridF64 = SpaceGrid<f64>;
pub type PathBundleF64 = PathBundle<f64>;
pub type BsdeSolutionF64 = BsdeSolution<f64>;
pub type ValueSurfaceF64 = ValueSurface<f64>;
pub type HjbOptionsF64 = HjbOptions<f64>;
pub type InactionMaskF64 = InactionMask<f64>;
pub type DpOracleConfigF64 = DpOracleConfig<f64>;

pub type ProblemSpecF32 = ProblemSpec<f32>;
pub type ValueSurfaceF32 = ValueSurface<f32>;
