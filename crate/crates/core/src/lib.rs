//! Command Centre core: domain model, triage, scheduling, tokens,
//! notifications, the event log, the centre engine and the cohort simulator.

pub mod centre;
pub mod config;
pub mod model;
pub mod notify;
pub mod schedule;
pub mod sim;
pub mod store;
pub mod token;
pub mod triage;

pub use model::*;
pub use schedule::{ScheduleConfig, Scheduler, TickCommand};
pub use triage::{RuleSet, Triage};
