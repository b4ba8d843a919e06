//! Combined space partitioning and network flow: a solver for the problem of
//! splitting a continuous (finitely supported) demand measure among the
//! endpoints of a flow network while routing supplies through the network at
//! minimum total cost.
//!
//! The two couplings — which endpoint serves which demand point, and how much
//! flow each arc carries — share a single dual variable per node. The solver
//! maximizes the concave dual by supergradient ascent, reconstructs a primal
//! candidate (a Laguerre-cell partition plus arc flows) from the final duals,
//! and certifies near-optimality with complementary-slackness residuals.
//!
//! Modules:
//! - [`model`]: instances (demand measure, network, scenario), validation,
//!   JSON serialization.
//! - [`costs`]: assignment cost families (Euclidean, squared Euclidean,
//!   geodesic resistance over a consumer graph, explicit tables), arc cost
//!   minimizers.
//! - [`laguerre`]: cell assignment and mass computation, exact and sampled.
//! - [`ascent`]: dual function, supergradient, ascent loop, primal
//!   reconstruction, optimality certificates.
//! - [`distributed`]: the same ascent as a per-node message-passing protocol
//!   in synchronous rounds, bit-identical to the centralized loop.
//! - [`oracle`]: brute-force reference solver for small instances.
//! - [`scenarios`]: generators for synthetic grids and random power-network
//!   style instances, plus tiny analytic fixtures.

pub mod ascent;
pub mod costs;
pub mod distributed;
pub mod error;
pub mod laguerre;
pub mod model;
pub mod oracle;
pub mod scenarios;

pub use ascent::{certify, solve, Certificate, SolveOptions, SolveReport, StepSchedule};
pub use costs::{AssignmentCostSpec, CostMatrix, CostValue};
pub use distributed::{run_protocol, RoundLog};
pub use error::{Error, Result};
pub use laguerre::{compute_cells, estimate_cell_masses};
pub use model::{Scenario, validate_scenario};
pub use oracle::{brute_force, duality_gap_check, OracleResult};
