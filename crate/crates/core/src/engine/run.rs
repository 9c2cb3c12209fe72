//! Scenario execution, run summaries and on-disk artifacts.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::sim::{Simulation, StepReport};
use super::telemetry::{write_csv, write_jsonl, Event, EventKind, Flag, TelemetryRecord};
use crate::error::EngineError;
use crate::film::LocalPhase;

/// Window on either side of an onset used for the cooling-rate kink.
pub const KINK_WINDOW_S: f64 = 10.0;
/// A kink is reported when the mean cooling rate changes by more than this
/// share of the ramp rate.
pub const KINK_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub dt_s: Option<f64>,
    pub stride_s: Option<f64>,
    /// Simulated seconds per wall second; `None` runs unpaced.
    pub speed: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSignature {
    /// Magnitude of the setpoint ramp rate before the crossing, K/s.
    pub ramp_rate_k_per_s: f64,
    /// Median |dT/dt| over the freezing steps, K/s.
    pub freezing_rate_k_per_s: f64,
    /// 1 - freezing / ramp.
    pub reduction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsetKink {
    pub flag: Flag,
    pub onset_k: f64,
    pub rate_before_k_per_s: f64,
    pub rate_after_k_per_s: f64,
    /// |after - before| / ramp rate.
    pub relative_change: f64,
    pub kink: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub dt_s: f64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub steps: u64,
    pub end_time_s: f64,
    pub records: usize,
    pub liquid_onset_k: Option<f64>,
    pub solid_onset_k: Option<f64>,
    pub triple_crossing_k: Option<f64>,
    pub triple_crossing_t_s: Option<f64>,
    pub collapses: usize,
    pub peak_liquid_thickness_m: Option<f64>,
    pub final_thickness_m: f64,
    pub final_phase: LocalPhase,
    pub final_solid_thickness_m: Option<f64>,
    pub max_conservation_error_mol: f64,
    pub latent_signature: Option<LatentSignature>,
    pub onset_kink: Option<OnsetKink>,
}

/// Everything a run produces, before it is written anywhere.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<TelemetryRecord>,
    pub events: Vec<Event>,
    pub summary: RunSummary,
}

#[derive(Default)]
struct Trace {
    t: Vec<f64>,
    temp: Vec<f64>,
    dtdt: Vec<f64>,
    ramp: Vec<f64>,
    freezing: Vec<bool>,
}

impl Trace {
    fn push(&mut self, r: &StepReport) {
        self.t.push(r.t_s);
        self.temp.push(r.t_cell_k);
        self.dtdt.push(r.dtdt_k_per_s);
        self.ramp.push(r.ramp_k_per_s);
        self.freezing.push(r.freezing);
    }

    fn mean_rate(&self, from: f64, to: f64) -> Option<f64> {
        let v: Vec<f64> = (0..self.t.len())
            .filter(|&i| self.t[i] > from && self.t[i] <= to)
            .map(|i| self.dtdt[i])
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    fn latent_signature(&self) -> Option<LatentSignature> {
        let first = self.freezing.iter().position(|f| *f)?;
        let ramp = self.ramp[..=first].iter().rev().find(|r| **r != 0.0)?.abs();
        let mut rates: Vec<f64> = (0..self.t.len())
            .filter(|&i| self.freezing[i])
            .map(|i| self.dtdt[i].abs())
            .collect();
        rates.sort_by(f64::total_cmp);
        let n = rates.len();
        let median = if n % 2 == 1 {
            rates[n / 2]
        } else {
            0.5 * (rates[n / 2 - 1] + rates[n / 2])
        };
        Some(LatentSignature {
            ramp_rate_k_per_s: ramp,
            freezing_rate_k_per_s: median,
            reduction: 1.0 - median / ramp,
        })
    }

    fn onset_kink(&self, flag: Flag, t_onset: f64, onset_k: f64) -> Option<OnsetKink> {
        let i = self.t.iter().position(|t| *t >= t_onset)?;
        let ramp = self.ramp[..=i].iter().rev().find(|r| **r != 0.0)?.abs();
        // the onset step itself belongs to the "after" window
        let before = self.mean_rate(t_onset - KINK_WINDOW_S - 1e-9, t_onset - 1e-9)?;
        let after = self.mean_rate(t_onset - 1e-9, t_onset + KINK_WINDOW_S - 1e-9)?;
        let change = (after - before).abs() / ramp;
        Some(OnsetKink {
            flag,
            onset_k,
            rate_before_k_per_s: before,
            rate_after_k_per_s: after,
            relative_change: change,
            kink: change > KINK_THRESHOLD,
        })
    }
}

/// Runs a scenario in memory.
pub fn simulate(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutput, EngineError> {
    let mut scenario = scenario.clone();
    if let Some(s) = opts.seed {
        scenario.seed = s;
    }
    if let Some(dt) = opts.dt_s {
        scenario.dt_s = dt;
    }
    if let Some(st) = opts.stride_s {
        scenario.stride_s = st;
    }
    if let Some(x) = opts.speed {
        if !(x > 0.0 && x.is_finite()) {
            return Err(EngineError::Validation(format!(
                "speed must be positive, got {x}"
            )));
        }
    }
    scenario.validate()?;
    let mut sim = Simulation::from_scenario(&scenario)?;
    let dt = scenario.dt_s;
    let total_steps = (scenario.end_time_s() / dt - 1e-9).ceil().max(0.0) as u64;
    let stride = ((scenario.stride_s / dt).round() as u64).max(1);
    let started = Instant::now();

    let mut records = vec![sim.take_record()];
    let mut events = sim.drain_events();
    let mut trace = Trace::default();
    let mut max_err = sim.cell().conservation_error();
    let mut peak_liquid: Option<f64> = None;
    let mut liquid_onset: Option<(f64, f64)> = None;
    let mut solid_onset: Option<(f64, f64)> = None;
    let mut triple: Option<(f64, f64)> = None;
    let mut collapses = 0;
    let mut abort: Option<String> = None;

    if sim.film().phase_local == LocalPhase::Liquid {
        peak_liquid = Some(sim.film().d_local_m);
    }
    while sim.steps() < total_steps {
        match sim.step() {
            Ok(rep) => {
                max_err = max_err.max(rep.conservation_error_mol);
                for f in &rep.flags {
                    let slot = match f {
                        Flag::LiquidOnset => &mut liquid_onset,
                        Flag::SolidOnset => &mut solid_onset,
                        Flag::TripleCrossing => &mut triple,
                        _ => continue,
                    };
                    slot.get_or_insert((rep.t_s, rep.t_cell_k));
                }
                if rep.flags.contains(&Flag::Collapse) {
                    collapses += 1;
                }
                trace.push(&rep);
                if sim.film().phase_local == LocalPhase::Liquid {
                    let d = sim.film().d_local_m;
                    peak_liquid = Some(peak_liquid.map_or(d, |p: f64| p.max(d)));
                }
            }
            Err(e @ EngineError::Invariant { .. }) => {
                abort = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        events.extend(sim.drain_events());
        if sim.steps() % stride == 0 || sim.steps() == total_steps {
            records.push(sim.take_record());
            if let Some(x) = opts.speed {
                let due = Duration::from_secs_f64(sim.time_s() / x);
                let elapsed = started.elapsed();
                if due > elapsed {
                    std::thread::sleep(due - elapsed);
                }
            }
        }
    }

    let last = records.last().expect("initial record present").clone();
    let status = if abort.is_some() {
        RunStatus::Aborted
    } else {
        RunStatus::Completed
    };
    events.push(Event {
        t_s: last.t_s,
        t_cell_k: last.t_cell_k,
        kind: match &abort {
            Some(m) => EventKind::Aborted { message: m.clone() },
            None => EventKind::Completed,
        },
    });
    let kink = solid_onset
        .map(|(t, k)| (Flag::SolidOnset, t, k))
        .or(liquid_onset.map(|(t, k)| (Flag::LiquidOnset, t, k)))
        .and_then(|(f, t, k)| trace.onset_kink(f, t, k));
    let summary = RunSummary {
        name: scenario.name.clone(),
        seed: scenario.seed,
        dt_s: dt,
        status,
        message: abort,
        steps: sim.steps(),
        end_time_s: sim.time_s(),
        records: records.len(),
        liquid_onset_k: liquid_onset.map(|x| x.1),
        solid_onset_k: solid_onset.map(|x| x.1),
        triple_crossing_k: triple.map(|x| x.1),
        triple_crossing_t_s: triple.map(|x| x.0),
        collapses,
        peak_liquid_thickness_m: peak_liquid,
        final_thickness_m: sim.film().d_local_m,
        final_phase: sim.film().phase_local,
        final_solid_thickness_m: (sim.film().phase_local == LocalPhase::Solid)
            .then_some(sim.film().d_local_m),
        max_conservation_error_mol: max_err,
        latent_signature: trace.latent_signature(),
        onset_kink: kink,
    };
    Ok(RunOutput {
        records,
        events,
        summary,
    })
}

pub const ARTIFACT_NAMES: [&str; 4] = [
    "telemetry.jsonl",
    "telemetry.csv",
    "events.jsonl",
    "summary.json",
];

/// Writes the four run artifacts into `dir`. Files are staged under
/// temporary names and renamed; on failure nothing from this run is left.
pub fn write_artifacts(dir: &Path, out: &RunOutput) -> Result<(), EngineError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source: std::io::Error| EngineError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let staged: Vec<(PathBuf, PathBuf)> = ARTIFACT_NAMES
        .iter()
        .map(|n| (dir.join(format!(".{n}.partial")), dir.join(n)))
        .collect();
    let cleanup = |upto: usize| {
        for (i, (tmp, fin)) in staged.iter().enumerate() {
            let _ = fs::remove_file(tmp);
            if i < upto {
                let _ = fs::remove_file(fin);
            }
        }
    };
    let write_all = || -> Result<(), EngineError> {
        let create = |p: &Path| fs::File::create(p).map(BufWriter::new).map_err(io(p));
        write_jsonl(create(&staged[0].0)?, &out.records).map_err(io(&staged[0].0))?;
        write_csv(create(&staged[1].0)?, &out.records).map_err(io(&staged[1].0))?;
        write_jsonl(create(&staged[2].0)?, &out.events).map_err(io(&staged[2].0))?;
        let mut summary = serde_json::to_vec_pretty(&out.summary).expect("summary serializes");
        summary.push(b'\n');
        fs::write(&staged[3].0, summary).map_err(io(&staged[3].0))?;
        Ok(())
    };
    if let Err(e) = write_all() {
        cleanup(0);
        return Err(e);
    }
    for (i, (tmp, fin)) in staged.iter().enumerate() {
        if let Err(source) = fs::rename(tmp, fin) {
            cleanup(i);
            return Err(EngineError::Io {
                path: fin.clone(),
                source,
            });
        }
    }
    Ok(())
}

/// Runs a scenario and persists its artifacts under `out_dir`.
pub fn run_scenario(
    scenario: &Scenario,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunSummary, EngineError> {
    let out = simulate(scenario, opts)?;
    write_artifacts(out_dir, &out)?;
    Ok(out.summary)
}
