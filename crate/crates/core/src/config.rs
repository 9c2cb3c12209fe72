//! Model configuration: the shipped defaults, JSON overrides and the
//! load-time calibrations that turn anchors into model constants.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ConfigError;
use crate::film::{
    calibrate_local_fraction, calibrate_regrowth_share, FilmParams, LiquidAnchor, MaterialProps,
    Morphology, RegrowthAnchor, SolidifyModel,
};
use crate::resonator::{calibrate_heating, calibrate_kerr, Participation, ResonatorModel};
use crate::thermo::{calibrate_volumes, CellGeometry, OnsetPoint, PhaseDiagram};

const DEFAULT_MODEL_JSON: &str = include_str!("../config/default_model.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub t_warm_k: f64,
    /// Explicit volumes; both or neither. When absent they are solved from
    /// `onsets`.
    pub v_warm_m3: Option<f64>,
    pub v_cold_m3: Option<f64>,
    pub onsets: Option<[OnsetPoint; 2]>,
    pub a_total_m2: f64,
    pub a_res_m2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConfig {
    pub c_cell_j_per_k: f64,
    pub gain_w_per_k: f64,
    pub latent_coupling: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilmConfig {
    pub local_fraction: Option<f64>,
    pub liquid_anchor: Option<LiquidAnchor>,
    pub d_wetting_m: f64,
    pub monolayer_m: f64,
    pub regrowth_share: Option<f64>,
    pub regrowth_anchor: Option<RegrowthAnchor>,
    pub deposition_heating_scale_k: f64,
    pub thinning_scale_k: f64,
    pub liquid_morphology: Morphology,
    pub solid_morphology: Morphology,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingAnchor {
    pub power_dbm: f64,
    pub delta_t_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorConfig {
    pub f0_hz: f64,
    pub q_loaded: f64,
    pub baseline_coeffs: [f64; 4],
    pub calibration_range_k: [f64; 2],
    pub participation: Participation,
    pub kerr_hz_per_photon: Option<f64>,
    pub critical_power_dbm: Option<f64>,
    pub attenuation_db: f64,
    pub ext_fraction: f64,
    pub heating_k_per_w: Option<f64>,
    pub heating_anchor: Option<HeatingAnchor>,
    pub tau_th_s: f64,
    pub peak_transmission: f64,
}

/// Configuration as written on disk, before calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub phase_diagram: PhaseDiagram,
    pub geometry: GeometryConfig,
    pub thermal: ThermalConfig,
    pub material: MaterialProps,
    pub film: FilmConfig,
    pub solidify: SolidifyModel,
    pub resonator: ResonatorConfig,
}

/// Fully resolved model constants used by the engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub diagram: PhaseDiagram,
    pub geometry: CellGeometry,
    pub thermal: ThermalConfig,
    pub props: MaterialProps,
    pub film: FilmParams,
    pub solidify: SolidifyModel,
    pub resonator: ResonatorModel,
}

/// Deserializes `text` and reports failures with line, column and field
/// path.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            origin: origin.to_string(),
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| ConfigError::Parse {
        origin: origin.to_string(),
        path: ".".into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(value)
}

/// Deserializes an in-memory JSON value; positions are unavailable, the
/// field path is reported.
pub fn from_value<T: DeserializeOwned>(value: Value, origin: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Parse {
        origin: origin.to_string(),
        path: e.path().to_string(),
        line: 0,
        column: 0,
        message: e.into_inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_json(&text, &path.display().to_string())
}

/// Recursive object merge: keys in `patch` replace those in `base`, nested
/// objects merge, everything else is replaced wholesale.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, p) => *slot = p.clone(),
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        parse_json(DEFAULT_MODEL_JSON, "default_model.json")
            .expect("bundled default model is valid")
    }
}

impl ModelConfig {
    /// Default configuration with `overrides` merged on top.
    pub fn with_overrides(overrides: &Value) -> Result<Self, ConfigError> {
        let mut base: Value =
            serde_json::from_str(DEFAULT_MODEL_JSON).expect("bundled default model is valid");
        if !overrides.is_null() {
            if !overrides.is_object() {
                return Err(ConfigError::Invalid(
                    "overrides must be a JSON object".into(),
                ));
            }
            merge_json(&mut base, overrides);
        }
        from_value(base, "overrides")
    }

    /// Runs the load-time calibrations and validates the result.
    pub fn resolve(&self) -> Result<Model, ConfigError> {
        let diagram = self.phase_diagram.clone();
        diagram.validate()?;
        let g = &self.geometry;
        let (v_warm, v_cold) = match (g.v_warm_m3, g.v_cold_m3, &g.onsets) {
            (Some(w), Some(c), _) => (w, c),
            (None, None, Some(onsets)) => calibrate_volumes(onsets, &diagram, g.t_warm_k)?,
            (None, None, None) => {
                return Err(ConfigError::Invalid(
                    "geometry needs either both volumes or two onset points".into(),
                ))
            }
            _ => {
                return Err(ConfigError::Invalid(
                    "set both v_warm_m3 and v_cold_m3, or neither".into(),
                ))
            }
        };
        let geometry = CellGeometry {
            v_warm_m3: v_warm,
            t_warm_k: g.t_warm_k,
            v_cold_m3: v_cold,
            a_total_m2: g.a_total_m2,
            a_res_m2: g.a_res_m2,
        };
        geometry.validate()?;
        if !(self.thermal.c_cell_j_per_k > 0.0 && self.thermal.gain_w_per_k > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "thermal model needs C > 0 and g > 0: {:?}",
                self.thermal
            )));
        }
        let props = self.material;
        props.validate()?;
        self.solidify.validate()?;

        let r = &self.resonator;
        let mut resonator = ResonatorModel {
            f0_hz: r.f0_hz,
            q_loaded: r.q_loaded,
            baseline_coeffs: r.baseline_coeffs,
            calibration_range_k: r.calibration_range_k,
            participation: r.participation,
            kerr_hz_per_photon: -1.0,
            attenuation_db: r.attenuation_db,
            ext_fraction: r.ext_fraction,
            heating_k_per_w: 0.0,
            tau_th_s: r.tau_th_s,
            peak_transmission: r.peak_transmission,
        };
        resonator.kerr_hz_per_photon = match (r.kerr_hz_per_photon, r.critical_power_dbm) {
            (Some(k), _) => k,
            (None, Some(p)) => calibrate_kerr(&resonator, p),
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "resonator needs kerr_hz_per_photon or critical_power_dbm".into(),
                ))
            }
        };
        resonator.heating_k_per_w = match (r.heating_k_per_w, r.heating_anchor) {
            (Some(h), _) => h,
            (None, Some(a)) => calibrate_heating(&resonator, a.power_dbm, a.delta_t_k),
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "resonator needs heating_k_per_w or heating_anchor".into(),
                ))
            }
        };
        resonator.validate()?;

        let f = &self.film;
        let local_fraction = match (f.local_fraction, &f.liquid_anchor) {
            (Some(x), _) => x,
            (None, Some(a)) => calibrate_local_fraction(a, &geometry, &diagram, &props)?,
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "film needs local_fraction or liquid_anchor".into(),
                ))
            }
        };
        let regrowth_share = match (f.regrowth_share, &f.regrowth_anchor) {
            (Some(x), _) => x,
            (None, Some(a)) => {
                let heating = resonator.heating_target_k(a.monitor_power_dbm);
                let suppression = (-heating / f.deposition_heating_scale_k).exp();
                calibrate_regrowth_share(
                    a,
                    &geometry,
                    &diagram,
                    &props,
                    f.d_wetting_m,
                    suppression,
                )?
            }
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "film needs regrowth_share or regrowth_anchor".into(),
                ))
            }
        };
        let film = FilmParams {
            local_fraction,
            d_wetting_m: f.d_wetting_m,
            monolayer_m: f.monolayer_m,
            regrowth_share,
            deposition_heating_scale_k: f.deposition_heating_scale_k,
            thinning_scale_k: f.thinning_scale_k,
            liquid_morphology: f.liquid_morphology,
            solid_morphology: f.solid_morphology,
        };
        film.validate()?;

        Ok(Model {
            diagram,
            geometry,
            thermal: self.thermal,
            props,
            film,
            solidify: self.solidify,
            resonator,
        })
    }
}

impl Model {
    /// Calibrated default model.
    pub fn default_calibrated() -> Self {
        ModelConfig::default()
            .resolve()
            .expect("bundled default model calibrates")
    }
}
