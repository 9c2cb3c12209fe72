//! Telemetry records, event-log entries and their file encodings.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::film::{LocalPhase, SolidifyOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    LiquidOnset,
    SolidOnset,
    TripleCrossing,
    Collapse,
    SolidGrowth,
    Melt,
    BaselineExtrapolated,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::LiquidOnset => "liquid_onset",
            Flag::SolidOnset => "solid_onset",
            Flag::TripleCrossing => "triple_crossing",
            Flag::Collapse => "collapse",
            Flag::SolidGrowth => "solid_growth",
            Flag::Melt => "melt",
            Flag::BaselineExtrapolated => "baseline_extrapolated",
        }
    }
}

/// One sample of every observable. Field names are a public contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub t_s: f64,
    pub t_cell_k: f64,
    pub t_set_k: f64,
    pub p_pa: f64,
    /// Observed resonance including film, baseline and Kerr pull.
    pub f_res_hz: f64,
    /// f_res_hz minus the temperature baseline at t_cell_k.
    pub df_corr_hz: f64,
    pub power_dbm: f64,
    pub d_local_m: f64,
    pub phase: LocalPhase,
    pub n_gas_mol: f64,
    pub n_liquid_mol: f64,
    pub n_solid_mol: f64,
    pub delta_t_local_k: f64,
    /// Flags raised since the previous emitted record, sorted.
    pub flags: Vec<Flag>,
}

impl TelemetryRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.t_s,
            self.t_cell_k,
            self.t_set_k,
            self.p_pa,
            self.f_res_hz,
            self.df_corr_hz,
            self.power_dbm,
            self.d_local_m,
            self.n_gas_mol,
            self.n_liquid_mol,
            self.n_solid_mol,
            self.delta_t_local_k,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "t_s",
    "T_cell_K",
    "P_Pa",
    "f_res_Hz",
    "df_corr_Hz",
    "power_dBm",
    "d_local_m",
    "phase",
    "flags",
];

pub fn csv_row(r: &TelemetryRecord) -> [String; 9] {
    [
        r.t_s.to_string(),
        r.t_cell_k.to_string(),
        r.p_pa.to_string(),
        r.f_res_hz.to_string(),
        r.df_corr_hz.to_string(),
        r.power_dbm.to_string(),
        r.d_local_m.to_string(),
        r.phase.as_str().to_string(),
        r.flags
            .iter()
            .map(|f| f.as_str())
            .collect::<Vec<_>>()
            .join("|"),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    CommandApplied { command: serde_json::Value },
    Flag { flag: Flag },
    Solidified { outcome: SolidifyOutcome },
    Completed,
    Aborted { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_s: f64,
    pub t_cell_k: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_csv<W: Write>(w: W, records: &[TelemetryRecord]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        out.write_record(csv_row(r))?;
    }
    out.flush()
}
