//! Scenario documents: initial conditions, a timed command schedule and
//! model overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{parse_json, read_json};
use crate::error::{ConfigError, EngineError};

pub const RATE_RANGE_K_PER_MIN: (f64, f64) = (0.0, 10.0);
pub const FLOW_RANGE_SCCM: (f64, f64) = (0.0, 100.0);
pub const POWER_RANGE_DBM: (f64, f64) = (-80.0, 20.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetRamp { rate_k_per_min: f64, target_k: f64 },
    Inject { moles: f64, flow_sccm: f64 },
    SetPower { dbm: f64 },
    Hold { duration_s: f64 },
}

impl Command {
    /// Range checks shared by scenarios and the live command channel.
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Command::SetRamp {
                rate_k_per_min,
                target_k,
            } => {
                let (lo, hi) = RATE_RANGE_K_PER_MIN;
                if !(rate_k_per_min > lo && rate_k_per_min <= hi) {
                    return Err(format!(
                        "rate_k_per_min must be in ({lo}, {hi}], got {rate_k_per_min}"
                    ));
                }
                if !(target_k > 0.0 && target_k.is_finite()) {
                    return Err(format!("target_k must be positive, got {target_k}"));
                }
            }
            Command::Inject { moles, flow_sccm } => {
                let (lo, hi) = FLOW_RANGE_SCCM;
                if !(moles >= 0.0 && moles.is_finite()) {
                    return Err(format!("moles must be non-negative, got {moles}"));
                }
                if !(flow_sccm >= lo && flow_sccm <= hi) {
                    return Err(format!(
                        "flow_sccm must be in [{lo}, {hi}], got {flow_sccm}"
                    ));
                }
                if moles > 0.0 && flow_sccm == 0.0 {
                    return Err("cannot inject a positive amount at zero flow".into());
                }
            }
            Command::SetPower { dbm } => {
                let (lo, hi) = POWER_RANGE_DBM;
                if !(dbm >= lo && dbm <= hi) {
                    return Err(format!("dbm must be in [{lo}, {hi}], got {dbm}"));
                }
            }
            Command::Hold { duration_s } => {
                if !(duration_s >= 0.0 && duration_s.is_finite()) {
                    return Err(format!("duration_s must be non-negative, got {duration_s}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCommand {
    pub t_s: f64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    pub t_cell_k: f64,
    #[serde(default)]
    pub n_total_mol: f64,
    #[serde(default = "default_power")]
    pub power_dbm: f64,
}

fn default_power() -> f64 {
    -30.0
}

fn default_dt() -> f64 {
    0.1
}

fn default_stride() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    /// Telemetry output interval.
    #[serde(default = "default_stride")]
    pub stride_s: f64,
    pub initial: InitialConditions,
    #[serde(default)]
    pub schedule: Vec<ScheduledCommand>,
    /// Merged on top of the default model configuration.
    #[serde(default)]
    pub overrides: Value,
    /// Minimum run length; the schedule may extend it.
    #[serde(default)]
    pub duration_s: Option<f64>,
}

impl Scenario {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, EngineError> {
        let s: Scenario = parse_json(text, origin)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let s: Scenario = read_json(path)?;
        s.validate()?;
        Ok(s)
    }

    /// A scenario that only holds the initial state for `duration_s`.
    pub fn hold(initial: InitialConditions, duration_s: f64) -> Self {
        Self {
            name: "hold".into(),
            seed: 0,
            dt_s: default_dt(),
            stride_s: default_stride(),
            initial,
            schedule: Vec::new(),
            overrides: Value::Null,
            duration_s: Some(duration_s),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(ConfigError::Invalid(m)));
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return bad(format!("dt_s must be positive, got {}", self.dt_s));
        }
        if !(self.stride_s >= self.dt_s && self.stride_s.is_finite()) {
            return bad(format!(
                "stride_s ({}) must be at least dt_s ({})",
                self.stride_s, self.dt_s
            ));
        }
        if !(self.initial.t_cell_k > 0.0 && self.initial.t_cell_k.is_finite()) {
            return bad(format!(
                "initial.t_cell_k must be positive, got {}",
                self.initial.t_cell_k
            ));
        }
        if !(self.initial.n_total_mol >= 0.0 && self.initial.n_total_mol.is_finite()) {
            return bad(format!(
                "initial.n_total_mol must be non-negative, got {}",
                self.initial.n_total_mol
            ));
        }
        let (lo, hi) = POWER_RANGE_DBM;
        if !(self.initial.power_dbm >= lo && self.initial.power_dbm <= hi) {
            return bad(format!(
                "initial.power_dbm must be in [{lo}, {hi}], got {}",
                self.initial.power_dbm
            ));
        }
        if let Some(d) = self.duration_s {
            if !(d >= 0.0 && d.is_finite()) {
                return bad(format!("duration_s must be non-negative, got {d}"));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for (i, c) in self.schedule.iter().enumerate() {
            if !(c.t_s >= 0.0 && c.t_s.is_finite()) {
                return bad(format!(
                    "schedule[{i}].t_s must be non-negative, got {}",
                    c.t_s
                ));
            }
            if c.t_s <= last {
                return bad(format!(
                    "schedule[{i}].t_s = {} is not after the previous command ({last})",
                    c.t_s
                ));
            }
            last = c.t_s;
            if let Err(m) = c.command.validate() {
                return bad(format!("schedule[{i}]: {m}"));
            }
        }
        Ok(())
    }

    /// Latest of: the explicit duration, each hold's end, and the time each
    /// ramp reaches its target if it is not interrupted.
    pub fn end_time_s(&self) -> f64 {
        let mut end = self.duration_s.unwrap_or(0.0);
        let mut setpoint = self.initial.t_cell_k;
        let mut ramp_from_t = 0.0;
        let mut rate = 0.0;
        let mut target = setpoint;
        for c in &self.schedule {
            end = end.max(c.t_s);
            match c.command {
                Command::Hold { duration_s } => end = end.max(c.t_s + duration_s),
                Command::SetRamp {
                    rate_k_per_min,
                    target_k,
                } => {
                    // setpoint where the previous ramp had got to
                    if rate > 0.0 {
                        let travel = rate * (c.t_s - ramp_from_t);
                        setpoint = if target >= setpoint {
                            (setpoint + travel).min(target)
                        } else {
                            (setpoint - travel).max(target)
                        };
                    }
                    ramp_from_t = c.t_s;
                    rate = rate_k_per_min / 60.0;
                    target = target_k;
                    end = end.max(c.t_s + (target_k - setpoint).abs() / rate);
                }
                Command::Inject { moles, flow_sccm } => {
                    if moles > 0.0 {
                        end = end.max(c.t_s + moles / (flow_sccm * crate::film::SCCM_MOL_PER_S));
                    }
                }
                Command::SetPower { .. } => {}
            }
        }
        end
    }
}
