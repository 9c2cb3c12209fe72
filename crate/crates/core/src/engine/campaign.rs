//! Batches of melt-and-solidify events: factor grid, per-event seeds,
//! parallel execution and the summary statistics.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::rng::derive_seed;
use super::scenario::{Command, InitialConditions, ScheduledCommand};
use super::sim::Simulation;
use crate::analysis::{decades_spanned, histogram_log, pearson, LogHistogram};
use crate::config::{read_json, Model, ModelConfig};
use crate::error::{ConfigError, EngineError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub start_k: f64,
    pub end_k: f64,
    pub hold_s: f64,
    /// Liquid thickness is read at the first step at or below this.
    pub liquid_probe_k: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            start_k: 29.0,
            end_k: 23.8,
            hold_s: 900.0,
            liquid_probe_k: 24.7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsOptions {
    #[serde(default = "yes")]
    pub log_space: bool,
    #[serde(default = "quarter")]
    pub decades_per_bin: f64,
    #[serde(default = "thick")]
    pub thick_liquid_threshold_m: f64,
}

fn yes() -> bool {
    true
}
fn quarter() -> f64 {
    0.25
}
fn thick() -> f64 {
    3e-6
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            log_space: true,
            decades_per_bin: 0.25,
            thick_liquid_threshold_m: 3e-6,
        }
    }
}

fn default_campaign_dt() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    #[serde(default)]
    pub name: String,
    pub master_seed: u64,
    #[serde(default = "default_campaign_dt")]
    pub dt_s: f64,
    pub volumes_mol: Vec<f64>,
    pub rates_k_per_min: Vec<f64>,
    pub powers_dbm: Vec<f64>,
    pub repeats: usize,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub overrides: Value,
    #[serde(default)]
    pub statistics: StatsOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignEvent {
    pub event_id: usize,
    pub n_mol: f64,
    pub rate_k_per_min: f64,
    pub power_dbm: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub event_id: usize,
    pub n_mol: f64,
    pub rate_k_per_min: f64,
    pub power_dbm: f64,
    pub d_liquid_m: Option<f64>,
    pub d_solid_m: Option<f64>,
    pub seed: u64,
    pub collapsed: bool,
    pub status: String,
}

impl CampaignRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerGroup {
    pub power_dbm: f64,
    pub events: usize,
    pub d_solid_min_m: Option<f64>,
    pub d_solid_max_m: Option<f64>,
    pub decades: Option<f64>,
    pub all_below_cap: bool,
    pub histogram: LogHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThickCohort {
    pub threshold_m: f64,
    pub events: usize,
    pub decades: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub events: usize,
    pub failed: usize,
    pub log_space: bool,
    pub pearson_r: Option<f64>,
    pub cap_m: f64,
    pub groups: Vec<PowerGroup>,
    pub thick_liquid: ThickCohort,
}

impl Campaign {
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let c: Campaign = read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(ConfigError::Invalid(m)));
        if self.volumes_mol.is_empty()
            || self.rates_k_per_min.is_empty()
            || self.powers_dbm.is_empty()
            || self.repeats == 0
        {
            return bad("campaign factors must be non-empty and repeats positive".into());
        }
        if !(self.dt_s > 0.0) {
            return bad(format!("dt_s must be positive, got {}", self.dt_s));
        }
        for &n in &self.volumes_mol {
            if !(n > 0.0 && n.is_finite()) {
                return bad(format!("volumes must be positive, got {n}"));
            }
        }
        for &r in &self.rates_k_per_min {
            Command::SetRamp {
                rate_k_per_min: r,
                target_k: self.protocol.end_k,
            }
            .validate()
            .or_else(bad)?;
        }
        for &p in &self.powers_dbm {
            Command::SetPower { dbm: p }
                .validate()
                .or_else(bad)?;
        }
        let p = &self.protocol;
        if !(p.start_k > p.liquid_probe_k
            && p.liquid_probe_k > p.end_k
            && p.end_k > 0.0
            && p.hold_s >= 0.0)
        {
            return bad(format!(
                "protocol needs start > liquid probe > end > 0: {p:?}"
            ));
        }
        Ok(())
    }

    /// Factor grid in a fixed order: volume, power, rate, repeat.
    pub fn events(&self) -> Vec<CampaignEvent> {
        let mut out = Vec::new();
        for &n in &self.volumes_mol {
            for &p in &self.powers_dbm {
                for &r in &self.rates_k_per_min {
                    for _ in 0..self.repeats {
                        let id = out.len();
                        out.push(CampaignEvent {
                            event_id: id,
                            n_mol: n,
                            rate_k_per_min: r,
                            power_dbm: p,
                            seed: derive_seed(self.master_seed, id as u64),
                        });
                    }
                }
            }
        }
        out
    }

    pub fn model(&self) -> Result<Model, EngineError> {
        Ok(ModelConfig::with_overrides(&self.overrides)?.resolve()?)
    }
}

/// One cool-down through the triple point.
pub fn run_event(
    model: &Model,
    protocol: &Protocol,
    dt_s: f64,
    ev: &CampaignEvent,
) -> CampaignRecord {
    let mut rec = CampaignRecord {
        event_id: ev.event_id,
        n_mol: ev.n_mol,
        rate_k_per_min: ev.rate_k_per_min,
        power_dbm: ev.power_dbm,
        d_liquid_m: None,
        d_solid_m: None,
        seed: ev.seed,
        collapsed: false,
        status: "ok".into(),
    };
    let outcome = (|| -> Result<(), EngineError> {
        let init = InitialConditions {
            t_cell_k: protocol.start_k,
            n_total_mol: ev.n_mol,
            power_dbm: ev.power_dbm,
        };
        let mut sim = Simulation::new(model.clone(), &init, dt_s, ev.seed)?;
        let ramp = ScheduledCommand {
            t_s: 0.0,
            command: Command::SetRamp {
                rate_k_per_min: ev.rate_k_per_min,
                target_k: protocol.end_k,
            },
        };
        sim.apply(&ramp.command)?;
        let ramp_s = (protocol.start_k - protocol.end_k) / (ev.rate_k_per_min / 60.0);
        let steps = ((ramp_s + protocol.hold_s) / dt_s).ceil() as u64;
        while sim.steps() < steps {
            let rep = sim.step()?;
            if rep.solidify.is_some_and(|o| o.collapsed) {
                rec.collapsed = true;
            }
            if rec.d_liquid_m.is_none() && rep.t_cell_k <= protocol.liquid_probe_k {
                rec.d_liquid_m = Some(sim.film().d_local_m);
            }
        }
        rec.d_solid_m = Some(sim.film().d_local_m);
        Ok(())
    })();
    if let Err(e) = outcome {
        rec.d_solid_m = None;
        rec.status = format!("failed: {e}");
    }
    rec
}

/// Runs every event on `jobs` workers. The table is ordered by event id
/// and does not depend on `jobs`.
pub fn run_campaign(campaign: &Campaign, jobs: usize) -> Result<Vec<CampaignRecord>, EngineError> {
    campaign.validate()?;
    let model = campaign.model()?;
    let events = campaign.events();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EngineError::Validation(format!("cannot start {jobs} workers: {e}")))?;
    let records = pool.install(|| {
        events
            .par_iter()
            .map(|ev| run_event(&model, &campaign.protocol, campaign.dt_s, ev))
            .collect()
    });
    Ok(records)
}

pub fn campaign_stats(
    records: &[CampaignRecord],
    opts: &StatsOptions,
    cap_m: f64,
) -> CampaignStats {
    let good: Vec<&CampaignRecord> = records
        .iter()
        .filter(|r| r.ok() && r.d_liquid_m.is_some() && r.d_solid_m.is_some())
        .collect();
    let tf = |x: f64| if opts.log_space { x.log10() } else { x };
    let (xs, ys): (Vec<f64>, Vec<f64>) = good
        .iter()
        .filter(|r| r.d_liquid_m.unwrap() > 0.0 && r.d_solid_m.unwrap() > 0.0)
        .map(|r| (tf(r.d_liquid_m.unwrap()), tf(r.d_solid_m.unwrap())))
        .unzip();
    let mut powers: Vec<f64> = good.iter().map(|r| r.power_dbm).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    let groups = powers
        .iter()
        .map(|&p| {
            let d: Vec<f64> = good
                .iter()
                .filter(|r| r.power_dbm == p)
                .map(|r| r.d_solid_m.unwrap())
                .collect();
            PowerGroup {
                power_dbm: p,
                events: d.len(),
                d_solid_min_m: d.iter().copied().reduce(f64::min),
                d_solid_max_m: d.iter().copied().reduce(f64::max),
                decades: decades_spanned(&d),
                all_below_cap: d.iter().all(|x| *x < cap_m),
                histogram: histogram_log(&d, opts.decades_per_bin).unwrap_or(LogHistogram {
                    edges_m: Vec::new(),
                    counts: Vec::new(),
                    excluded: d.len(),
                }),
            }
        })
        .collect();
    let thick: Vec<f64> = good
        .iter()
        .filter(|r| r.d_liquid_m.unwrap() >= opts.thick_liquid_threshold_m)
        .map(|r| r.d_solid_m.unwrap())
        .collect();
    CampaignStats {
        events: records.len(),
        failed: records.len() - good.len(),
        log_space: opts.log_space,
        pearson_r: pearson(&xs, &ys).ok(),
        cap_m,
        groups,
        thick_liquid: ThickCohort {
            threshold_m: opts.thick_liquid_threshold_m,
            events: thick.len(),
            decades: decades_spanned(&thick),
        },
    }
}

pub const CAMPAIGN_CSV_HEADER: [&str; 9] = [
    "event_id",
    "n_mol",
    "rate_k_per_min",
    "power_dbm",
    "d_liquid_m",
    "d_solid_m",
    "seed",
    "collapsed",
    "status",
];

pub fn campaign_csv(records: &[CampaignRecord]) -> Vec<u8> {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CAMPAIGN_CSV_HEADER)
        .expect("in-memory write");
    for r in records {
        w.write_record([
            r.event_id.to_string(),
            r.n_mol.to_string(),
            r.rate_k_per_min.to_string(),
            r.power_dbm.to_string(),
            opt(r.d_liquid_m),
            opt(r.d_solid_m),
            r.seed.to_string(),
            r.collapsed.to_string(),
            r.status.clone(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes `campaign.csv` and `stats.json` into `dir`.
pub fn write_campaign(
    dir: &Path,
    records: &[CampaignRecord],
    stats: &CampaignStats,
) -> Result<(), EngineError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EngineError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join("campaign.csv");
    let stats_path = dir.join("stats.json");
    let mut stats_json = serde_json::to_vec_pretty(stats).expect("stats serialize");
    stats_json.push(b'\n');
    let result = fs::write(&csv_path, campaign_csv(records))
        .map_err(io(&csv_path))
        .and_then(|_| fs::write(&stats_path, stats_json).map_err(io(&stats_path)));
    if result.is_err() {
        let _ = fs::remove_file(&csv_path);
        let _ = fs::remove_file(&stats_path);
    }
    result
}
