//! Spatial Aloha via local leader election.
//!
//! A group of transmit-receive pairs (users) shares a collision channel via
//! slotted-Aloha random access. Users that interfere with each other are
//! connected in an interference graph. Each user picks a medium access
//! probability (MAP); the user with the locally highest node degree is
//! elected local leader and runs a PI controller that drives its radio
//! intensity metric (RIM) to the setpoint 2, which keeps the whole network
//! inside the stable region while staying close to the Pareto front of
//! achievable throughputs. Followers simply copy their parent's MAP.
//!
//! The crate is split along those lines:
//!
//! - [`topology`]: interference graphs, random geometric generation, the
//!   plain-text topology file format, and the built-in reference topologies.
//! - [`analysis`]: the pure numerical core — throughput map, best-response /
//!   Nash solver, stability matrix, RIM, Pareto (Jacobian) criterion,
//!   steady-state solvers and controller gain formulas.
//! - [`sale`]: the protocol itself — leader election, leadership validation
//!   and handover, PI control, follower propagation — in an idealized
//!   message-exchange setting.
//! - [`simnet`]: the slot-level packet simulator where all information flows
//!   through packet headers subject to collisions.
//! - [`metrics`]: post-run metrics — weighted Jain fairness, net throughput,
//!   convergence time, distance to the Pareto front.
//! - [`trace`]: per-iteration run traces and their CSV serialization.

pub mod analysis;
pub mod metrics;
pub mod sale;
pub mod simnet;
pub mod topology;
pub mod trace;

pub use analysis::{MapVector, RateVector, SolveOutcome, SolveReport, StabilityMatrix};
pub use metrics::MetricsReport;
pub use sale::{PiController, RunConfig, SaleState, TreePartition};
pub use simnet::{FrameConfig, PacketHeader, ReceptionModel, SlotOutcome};
pub use topology::InterferenceGraph;
pub use trace::{RunOutcome, RunTrace, TraceEvent};
