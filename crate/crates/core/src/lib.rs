//! Docking trajectory planning for an underactuated ship in a nonconvex harbor.
//!
//! A derivative-free offline planner (CMA-ES over single shooting) produces a
//! near-globally optimal trajectory which warm-starts a semionline planner:
//! separated Hermite-Simpson collocation solved by SQP, with angle-summation
//! point-in-polygon equalities keeping every hull boundary point inside the
//! harbor.

pub mod cmaes;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod planner;
pub mod report;
pub mod sqp;
pub mod transcription;

pub use dynamics::{ControlInput, ForceBreakdown, ShipParams, ShipState, WindCondition};
pub use error::{Error, Result};
pub use geometry::{HarborPolygon, Pose, ShipFootprint};
pub use planner::{plan, Guess, OfflineSolution, PlanEnvironment, PlanOutcome, PlanRequest, Scenario};
pub use report::{ContinuousTrajectory, FeasibilityReport};
pub use sqp::{SqpResult, SqpSettings};
pub use transcription::{ControlLimits, DecisionVector, DockingTarget};
