//! Digital twin of a cryogenic neon film-growth monitor: sealed-cell
//! thermodynamics, the film on the resonator chip, the resonator readout and
//! the analysis pipeline used on its output.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod error;
pub mod film;
pub mod resonator;
pub mod thermo;

pub use config::{Model, ModelConfig};
pub use engine::{Campaign, CampaignRecord, Command, Scenario, Simulation, TelemetryRecord};
pub use error::{AnalysisError, ConfigError, EngineError, FilmError, ResonatorError, ThermoError};
pub use film::{FilmState, LocalPhase, MaterialProps, Morphology};
pub use resonator::ResonatorModel;
pub use thermo::{Branch, CellGeometry, CellState, PhaseDiagram};
