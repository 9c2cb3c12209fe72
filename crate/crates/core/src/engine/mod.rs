//! Deterministic simulation loop, scenario and campaign execution.

pub mod campaign;
pub mod rng;
pub mod run;
pub mod scenario;
pub mod sim;
pub mod telemetry;

pub use campaign::{
    campaign_csv, campaign_stats, run_campaign, run_event, write_campaign, Campaign, CampaignEvent,
    CampaignRecord, CampaignStats, Protocol, StatsOptions,
};
pub use rng::derive_seed;
pub use run::{
    run_scenario, simulate, write_artifacts, RunOptions, RunOutput, RunStatus, RunSummary,
};
pub use scenario::{Command, InitialConditions, Scenario, ScheduledCommand};
pub use sim::{Simulation, StepReport};
pub use telemetry::{Event, EventKind, Flag, TelemetryRecord};
