//! The fixed-timestep simulation: cell, film and resonator advanced together.

use std::collections::{BTreeSet, VecDeque};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rng::stream;
use super::scenario::{Command, InitialConditions, Scenario, ScheduledCommand};
use super::telemetry::{Event, EventKind, Flag, TelemetryRecord};
use crate::config::{Model, ModelConfig};
use crate::error::EngineError;
use crate::film::{
    FilmContext, FilmMode, FilmState, FilmStepInput, SolidifyOutcome, SCCM_MOL_PER_S,
};
use crate::thermo::{
    enthalpy_step, equilibrium_partition, Branch, CellState, Regime, Setpoint, ThermalModel,
};

/// Tolerated |n_gas + n_liquid + n_solid - n_total|, mol.
pub const CONSERVATION_TOLERANCE_MOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub remaining_mol: f64,
    pub rate_mol_per_s: f64,
}

/// Per-step diagnostics the run summary is built from.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub t_s: f64,
    pub t_cell_k: f64,
    pub dtdt_k_per_s: f64,
    /// Setpoint slope during the step.
    pub ramp_k_per_s: f64,
    pub regime: Regime,
    pub freezing: bool,
    pub flags: Vec<Flag>,
    pub solidify: Option<SolidifyOutcome>,
    pub conservation_error_mol: f64,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    model: Model,
    dt_s: f64,
    steps: u64,
    cell: CellState,
    thermal: ThermalModel,
    film: FilmState,
    power_dbm: f64,
    delta_t_local_k: f64,
    injection: Option<Injection>,
    schedule: VecDeque<ScheduledCommand>,
    rng: ChaCha8Rng,
    pending_flags: BTreeSet<Flag>,
    events: Vec<Event>,
    /// Gas was depositing onto the local solid in the previous step.
    growing: bool,
}

impl Simulation {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self, EngineError> {
        scenario.validate()?;
        let model = ModelConfig::with_overrides(&scenario.overrides)?.resolve()?;
        let mut sim = Self::new(model, &scenario.initial, scenario.dt_s, scenario.seed)?;
        sim.schedule = scenario.schedule.iter().cloned().collect();
        Ok(sim)
    }

    /// Starts at equilibrium: condensate partitioned at the initial
    /// temperature, setpoint holding there and local heating settled.
    pub fn new(
        model: Model,
        initial: &InitialConditions,
        dt_s: f64,
        seed: u64,
    ) -> Result<Self, EngineError> {
        if !(dt_s > 0.0 && dt_s.is_finite()) {
            return Err(EngineError::Validation(format!(
                "dt must be positive, got {dt_s}"
            )));
        }
        let t0 = initial.t_cell_k;
        let part = equilibrium_partition(initial.n_total_mol, t0, &model.geometry, &model.diagram);
        let (n_liquid, n_solid) = match part.phase {
            Some(Branch::Liquid) => (part.n_condensed, 0.0),
            Some(Branch::Solid) => (0.0, part.n_condensed),
            None => (0.0, 0.0),
        };
        let cell = CellState {
            t_cell_k: t0,
            n_total: initial.n_total_mol,
            n_gas: part.n_gas,
            n_liquid,
            n_solid,
            pressure_pa: part.pressure_pa,
            t_s: 0.0,
        };
        let thermal = ThermalModel {
            c_cell_j_per_k: model.thermal.c_cell_j_per_k,
            gain_w_per_k: model.thermal.gain_w_per_k,
            setpoint: Setpoint::hold(t0),
            latent_coupling: model.thermal.latent_coupling,
        };
        let delta_t_local_k = model.resonator.heating_target_k(initial.power_dbm);
        let mut film = FilmState::empty(&model.film);
        if n_solid > 0.0 {
            // pre-existing solid coats the chip with its area share
            film.mode = FilmMode::Solid;
            film.n_local_mol = n_solid * model.geometry.a_res_m2 / model.geometry.a_total_m2;
            film.target_mol = film.n_local_mol;
            film.n_remote_mol = n_solid - film.n_local_mol;
            film.d_local_m = crate::film::moles_to_thickness(
                film.n_local_mol,
                model.geometry.a_res_m2,
                &model.props,
                Branch::Solid,
            );
            film.phase_local = if film.d_local_m >= model.film.monolayer_m {
                crate::film::LocalPhase::Solid
            } else {
                crate::film::LocalPhase::None
            };
        }
        let mut sim = Self {
            model,
            dt_s,
            steps: 0,
            cell,
            thermal,
            film,
            power_dbm: initial.power_dbm,
            delta_t_local_k,
            injection: None,
            schedule: VecDeque::new(),
            rng: stream(seed),
            pending_flags: BTreeSet::new(),
            events: Vec::new(),
            growing: false,
        };
        if n_liquid > 0.0 {
            // settle the liquid film onto its equilibrium before t = 0
            let dt_local = sim.delta_t_local_k;
            sim.advance_film(Regime::Liquid, 0.0, 0.0, 0.0, dt_local)?;
        }
        Ok(sim)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_s
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn time_s(&self) -> f64 {
        self.steps as f64 * self.dt_s
    }

    pub fn cell(&self) -> &CellState {
        &self.cell
    }

    pub fn film(&self) -> &FilmState {
        &self.film
    }

    pub fn power_dbm(&self) -> f64 {
        self.power_dbm
    }

    pub fn delta_t_local_k(&self) -> f64 {
        self.delta_t_local_k
    }

    pub fn setpoint_k(&self) -> f64 {
        self.thermal.setpoint.at(self.time_s())
    }

    pub fn injection(&self) -> Option<Injection> {
        self.injection
    }

    /// Events logged since the last call.
    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Applies a command now. Rejected commands leave the state untouched.
    pub fn apply(&mut self, command: &Command) -> Result<(), EngineError> {
        command.validate().map_err(EngineError::Validation)?;
        let now = self.time_s();
        match *command {
            Command::SetRamp {
                rate_k_per_min,
                target_k,
            } => {
                self.thermal.setpoint =
                    self.thermal
                        .setpoint
                        .ramp_from(now, rate_k_per_min / 60.0, target_k);
            }
            Command::Inject { moles, flow_sccm } => {
                if moles > 0.0 {
                    let remaining = self.injection.map_or(0.0, |i| i.remaining_mol) + moles;
                    self.injection = Some(Injection {
                        remaining_mol: remaining,
                        rate_mol_per_s: flow_sccm * SCCM_MOL_PER_S,
                    });
                }
            }
            Command::SetPower { dbm } => self.power_dbm = dbm,
            Command::Hold { .. } => {}
        }
        self.events.push(Event {
            t_s: now,
            t_cell_k: self.cell.t_cell_k,
            kind: EventKind::CommandApplied {
                command: serde_json::to_value(command).expect("commands serialize"),
            },
        });
        Ok(())
    }

    fn advance_film(
        &mut self,
        regime: Regime,
        dt_s: f64,
        freeze_mol: f64,
        gas_to_solid_mol: f64,
        delta_t: f64,
    ) -> Result<crate::film::FilmEvents, EngineError> {
        let ctx = FilmContext {
            params: &self.model.film,
            solidify: &self.model.solidify,
            props: &self.model.props,
            geom: &self.model.geometry,
        };
        let input = FilmStepInput {
            dt_s: dt_s.max(f64::MIN_POSITIVE),
            regime,
            n_liquid_mol: self.cell.n_liquid,
            n_solid_mol: self.cell.n_solid,
            freeze_mol,
            gas_to_solid_mol,
            delta_t_local_k: delta_t,
            drive_power_dbm: self.power_dbm,
        };
        Ok(self.film.advance(&input, &ctx, &mut self.rng))
    }

    /// One fixed step: due commands, cell update, film, heating, checks.
    pub fn step(&mut self) -> Result<StepReport, EngineError> {
        let now = self.time_s();
        let tol = 1e-9 * self.dt_s;
        while self.schedule.front().is_some_and(|c| c.t_s <= now + tol) {
            let c = self.schedule.pop_front().expect("front checked");
            self.apply(&c.command)?;
        }

        let dt = self.dt_s;
        let mut dn_inject = 0.0;
        if let Some(inj) = self.injection.as_mut() {
            dn_inject = (inj.rate_mol_per_s * dt).min(inj.remaining_mol);
            inj.remaining_mol -= dn_inject;
            if inj.remaining_mol <= 0.0 {
                self.injection = None;
            }
        }

        let mut start = self.cell;
        start.t_s = now;
        let ramp = self.thermal.setpoint.slope_at(now);
        let update = enthalpy_step(
            &start,
            &self.model.geometry,
            &self.model.diagram,
            &self.thermal,
            dt,
            dn_inject,
        )?;

        let prev = self.cell;
        let prev_film = self.film;
        let prev_rng = self.rng.clone();
        let delta_t = self.delta_t_local_k;
        self.cell = update.state;
        let fe = self.advance_film(
            update.regime,
            dt,
            update.freeze_mol,
            update.gas_to_solid_mol,
            delta_t,
        )?;
        let chip_power = self.model.resonator.chip_power_w(self.power_dbm);
        let new_delta = self
            .model
            .resonator
            .local_heating_step(delta_t, chip_power, dt);

        let mut flags = Vec::new();
        if prev.n_liquid == 0.0
            && update.state.n_liquid > 0.0
            && update.freeze_mol <= 0.0
            && prev.n_solid == 0.0
        {
            flags.push(Flag::LiquidOnset);
        }
        if prev.n_solid == 0.0 && update.state.n_solid > 0.0 && update.freeze_mol <= 0.0 {
            flags.push(Flag::SolidOnset);
        }
        if fe.triple_crossing || (update.freeze_mol > 0.0 && prev.n_solid == 0.0) {
            flags.push(Flag::TripleCrossing);
        }
        if fe.collapse {
            flags.push(Flag::Collapse);
        }
        if fe.solid_growth && !self.growing {
            flags.push(Flag::SolidGrowth);
        }
        if fe.melt {
            flags.push(Flag::Melt);
        }
        if !self
            .model
            .resonator
            .in_calibration_range(update.state.t_cell_k)
        {
            flags.push(Flag::BaselineExtrapolated);
        }
        flags.sort();
        flags.dedup();

        let t_end = self.time_s() + dt;
        let conservation = update.state.conservation_error();
        let film_ok = self.film.d_local_m >= 0.0
            && self.film.n_remote_mol >= -CONSERVATION_TOLERANCE_MOL
            && (self.film.n_local_mol + self.film.n_remote_mol - update.state.n_condensed()).abs()
                <= CONSERVATION_TOLERANCE_MOL;
        let finite = [
            update.state.t_cell_k,
            update.state.pressure_pa,
            update.state.n_gas,
            self.film.d_local_m,
            new_delta,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !(conservation <= CONSERVATION_TOLERANCE_MOL) || !finite || !film_ok {
            self.cell = prev;
            self.film = prev_film;
            self.rng = prev_rng;
            return Err(EngineError::Invariant {
                t_s: t_end,
                message: format!(
                    "conservation error {conservation:e} mol, finite state {finite}, film inventory consistent {film_ok}"
                ),
            });
        }

        self.delta_t_local_k = new_delta;
        self.growing = fe.solid_growth;
        self.steps += 1;
        for f in &flags {
            self.pending_flags.insert(*f);
            if *f != Flag::BaselineExtrapolated {
                self.events.push(Event {
                    t_s: t_end,
                    t_cell_k: update.state.t_cell_k,
                    kind: EventKind::Flag { flag: *f },
                });
            }
        }
        if let Some(outcome) = fe.solidify {
            self.events.push(Event {
                t_s: t_end,
                t_cell_k: update.state.t_cell_k,
                kind: EventKind::Solidified { outcome },
            });
        }
        Ok(StepReport {
            t_s: t_end,
            t_cell_k: update.state.t_cell_k,
            dtdt_k_per_s: (update.state.t_cell_k - prev.t_cell_k) / dt,
            ramp_k_per_s: ramp,
            regime: update.regime,
            freezing: update.freeze_mol > 0.0,
            flags,
            solidify: fe.solidify,
            conservation_error_mol: conservation,
        })
    }

    /// Current observables, carrying flags raised since the previous call.
    pub fn take_record(&mut self) -> TelemetryRecord {
        let flags = std::mem::take(&mut self.pending_flags)
            .into_iter()
            .collect();
        self.snapshot(flags)
    }

    /// Current observables without consuming pending flags.
    pub fn peek_record(&self) -> TelemetryRecord {
        self.snapshot(self.pending_flags.iter().copied().collect())
    }

    fn snapshot(&self, flags: Vec<Flag>) -> TelemetryRecord {
        let r = &self.model.resonator;
        let t = self.cell.t_cell_k;
        let branch = match self.film.mode {
            FilmMode::Liquid => Branch::Liquid,
            _ => Branch::Solid,
        };
        let shift = r.fractional_shift(
            self.film.d_local_m,
            branch,
            self.film.morphology,
            &self.model.props,
        );
        let f_bare = r.baseline_frequency(t);
        let f_lin = f_bare * (1.0 + shift);
        let f_raw = f_lin + r.kerr_peak_shift_hz(self.power_dbm, f_lin);
        TelemetryRecord {
            t_s: self.time_s(),
            t_cell_k: t,
            t_set_k: self.setpoint_k(),
            p_pa: self.cell.pressure_pa,
            f_res_hz: f_raw,
            df_corr_hz: f_raw - f_bare,
            power_dbm: self.power_dbm,
            d_local_m: self.film.d_local_m,
            phase: self.film.phase_local,
            n_gas_mol: self.cell.n_gas,
            n_liquid_mol: self.cell.n_liquid,
            n_solid_mol: self.cell.n_solid,
            delta_t_local_k: self.delta_t_local_k,
            flags,
        }
    }
}
