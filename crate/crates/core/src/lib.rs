//! Hierarchical reinforcement-learning link scheduling for IEEE 802.15.4 TSCH networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`netmodel`] builds the unit-disk graph and the forwarding tree toward the sink.
//! * [`schedule`] holds the slotframe and the contention-free cell assignment.
//! * [`metrics`] evaluates analytic throughput, power, delay and loss for a schedule.
//! * [`env`] wraps the schedule and metrics into the two-level RL environment.
//! * [`dqn`] is a small from-scratch deep Q-learning stack.
//! * [`hrl`] trains the policy hierarchy and synthesizes schedules from it.
//! * [`slotsim`] replays schedules and baseline schedulers slot by slot.
//! * [`experiment`] runs Pareto sweeps and protocol ranking.

pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod experiment;
pub mod hrl;
pub mod metrics;
pub mod netmodel;
pub mod schedule;
pub mod slotsim;

pub use error::{Error, Result};
