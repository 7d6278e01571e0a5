//! Lower-bound certification for the anytime last-iterate error of projected
//! subgradient descent.
//!
//! The crate builds adversarial convex instances for a given stepsize
//! schedule, runs projected subgradient descent on them, checks the runs
//! against closed-form trajectories, and evaluates the analytic bounds that
//! those instances certify.
//!
//! ```
//! use anytime_core::{bounds::GuaranteeEnvelope, engine, instances, schedules::StepSchedule};
//!
//! let schedule = StepSchedule::sqrt_decay(2.0, 1.0).unwrap();
//! let phi = GuaranteeEnvelope::example31();
//! let inst = instances::build_maxlinear(&schedule, 16, &phi).unwrap();
//! let record = engine::run(&inst, &schedule, 16, &engine::SnapshotPolicy::None).unwrap();
//! assert!(record.final_error() >= inst.certified_bound() - 1e-12);
//! ```

pub mod bounds;
pub mod engine;
pub mod error;
pub mod harness;
pub mod instances;
pub mod schedules;

pub use error::{Error, Result};
