//! Neon phase diagram, two-volume gas accounting and the sample-cell
//! thermal model.
//!
//! The cell is a cold volume at the cell temperature connected to a warm
//! dead volume (manifold + capillary) held at room temperature, where the
//! pressure gauge sits. Condensation is treated quasi-statically: at every
//! instant the gas is either unsaturated or pinned to the coexistence curve.

use serde::{Deserialize, Serialize};

use crate::error::ThermoError;

/// Molar gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314;

/// Which coexistence curve a saturation pressure is read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Liquid,
    Solid,
}

/// Triple point plus single-term Clausius-Clapeyron branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDiagram {
    pub t_triple_k: f64,
    pub p_triple_pa: f64,
    /// Latent heat of vaporization, J/mol.
    pub l_vap_j_per_mol: f64,
    /// Latent heat of fusion, J/mol.
    pub l_fus_j_per_mol: f64,
    /// Tolerance on branch validity around the triple temperature.
    pub hysteresis_k: f64,
}

impl PhaseDiagram {
    pub fn l_sub_j_per_mol(&self) -> f64 {
        self.l_vap_j_per_mol + self.l_fus_j_per_mol
    }

    pub fn validate(&self) -> Result<(), ThermoError> {
        let ok = self.t_triple_k > 0.0
            && self.p_triple_pa > 0.0
            && self.l_vap_j_per_mol > 0.0
            && self.l_fus_j_per_mol > 0.0
            && self.hysteresis_k >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ThermoError::InvalidParameter(format!(
                "phase diagram requires positive triple point and latent heats: {self:?}"
            )))
        }
    }

    pub fn latent_heat(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Liquid => self.l_vap_j_per_mol,
            Branch::Solid => self.l_sub_j_per_mol(),
        }
    }

    /// Branch that is thermodynamically stable at `t_k` in the absence of
    /// any history.
    pub fn stable_branch(&self, t_k: f64) -> Branch {
        if t_k >= self.t_triple_k {
            Branch::Liquid
        } else {
            Branch::Solid
        }
    }

    /// Saturation pressure with the branch-validity check.
    pub fn saturation_pressure(&self, t_k: f64, branch: Branch) -> Result<f64, ThermoError> {
        let eps = self.hysteresis_k;
        let valid = match branch {
            Branch::Liquid => t_k >= self.t_triple_k - eps,
            Branch::Solid => t_k <= self.t_triple_k + eps,
        };
        if !(t_k > 0.0) || !valid {
            return Err(ThermoError::OutsideBranch {
                t_k,
                branch,
                t_triple_k: self.t_triple_k,
            });
        }
        Ok(self.saturation_pressure_unchecked(t_k, branch))
    }

    /// Clausius-Clapeyron evaluation without the validity check. Used inside
    /// root solves that may probe slightly past the triple point.
    #[inline]
    pub fn saturation_pressure_unchecked(&self, t_k: f64, branch: Branch) -> f64 {
        let l = self.latent_heat(branch);
        self.p_triple_pa * (-(l / GAS_CONSTANT) * (1.0 / t_k - 1.0 / self.t_triple_k)).exp()
    }

    /// d(P_sat)/dT on a branch.
    #[inline]
    pub fn saturation_slope_unchecked(&self, t_k: f64, branch: Branch) -> f64 {
        let l = self.latent_heat(branch);
        self.saturation_pressure_unchecked(t_k, branch) * l / (GAS_CONSTANT * t_k * t_k)
    }
}

/// Cell volumes and deposition areas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub v_warm_m3: f64,
    pub t_warm_k: f64,
    pub v_cold_m3: f64,
    pub a_total_m2: f64,
    pub a_res_m2: f64,
}

impl CellGeometry {
    pub fn validate(&self) -> Result<(), ThermoError> {
        // V_warm = 0 is the supported single-volume mode.
        let ok = self.v_warm_m3 >= 0.0
            && self.v_cold_m3 > 0.0
            && self.t_warm_k > 0.0
            && self.a_total_m2 > 0.0
            && self.a_res_m2 > 0.0
            && self.a_res_m2 <= self.a_total_m2;
        if ok {
            Ok(())
        } else {
            Err(ThermoError::InvalidParameter(format!(
                "bad cell geometry: {self:?}"
            )))
        }
    }

    /// Moles of gas per pascal of manifold pressure at cell temperature `t_k`.
    #[inline]
    pub fn gas_capacity(&self, t_k: f64) -> f64 {
        self.v_warm_m3 / (GAS_CONSTANT * self.t_warm_k) + self.v_cold_m3 / (GAS_CONSTANT * t_k)
    }

    #[inline]
    fn gas_capacity_slope(&self, t_k: f64) -> f64 {
        -self.v_cold_m3 / (GAS_CONSTANT * t_k * t_k)
    }

    /// Gas inventory that saturates the cell on `branch` at `t_k`.
    #[inline]
    pub fn saturated_moles(&self, diagram: &PhaseDiagram, t_k: f64, branch: Branch) -> f64 {
        diagram.saturation_pressure_unchecked(t_k, branch) * self.gas_capacity(t_k)
    }

    /// d(saturated_moles)/dT.
    #[inline]
    pub fn saturated_moles_slope(&self, diagram: &PhaseDiagram, t_k: f64, branch: Branch) -> f64 {
        diagram.saturation_slope_unchecked(t_k, branch) * self.gas_capacity(t_k)
            + diagram.saturation_pressure_unchecked(t_k, branch) * self.gas_capacity_slope(t_k)
    }
}

/// Two-volume ideal-gas pressure for `n_gas` moles with the cold part at
/// `t_cell_k`.
pub fn gas_pressure(n_gas: f64, t_cell_k: f64, geom: &CellGeometry) -> f64 {
    debug_assert!(n_gas >= 0.0 && t_cell_k > 0.0);
    n_gas / geom.gas_capacity(t_cell_k)
}

/// Result of splitting an inventory between gas and condensate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub n_gas: f64,
    pub n_condensed: f64,
    pub pressure_pa: f64,
    /// Phase of the condensate, `None` when everything is gas.
    pub phase: Option<Branch>,
}

/// Quasi-static partition at `t_cell_k`, condensing onto the branch that is
/// stable at that temperature.
pub fn equilibrium_partition(
    n_total: f64,
    t_cell_k: f64,
    geom: &CellGeometry,
    diagram: &PhaseDiagram,
) -> Partition {
    partition_on_branch(
        n_total,
        t_cell_k,
        geom,
        diagram,
        diagram.stable_branch(t_cell_k),
    )
}

/// Partition with the condensate forced onto `branch`. The engine uses this
/// to keep an existing liquid on the liquid curve inside the hysteresis
/// window.
pub fn partition_on_branch(
    n_total: f64,
    t_cell_k: f64,
    geom: &CellGeometry,
    diagram: &PhaseDiagram,
    branch: Branch,
) -> Partition {
    debug_assert!(n_total >= 0.0);
    let capacity = geom.gas_capacity(t_cell_k);
    let p_sat = diagram.saturation_pressure_unchecked(t_cell_k, branch);
    let p_gas = n_total / capacity;
    if p_gas < p_sat {
        return Partition {
            n_gas: n_total,
            n_condensed: 0.0,
            pressure_pa: p_gas,
            phase: None,
        };
    }
    let n_gas = p_sat * capacity;
    assert!(n_gas <= n_total, "saturated gas exceeds inventory");
    Partition {
        n_gas,
        n_condensed: n_total - n_gas,
        pressure_pa: p_sat,
        phase: Some(branch),
    }
}

/// A measured condensation onset: `n_mol` of neon starts to condense at
/// `t_k` on `branch`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsetPoint {
    pub n_mol: f64,
    pub t_k: f64,
    pub branch: Branch,
}

/// Solves the two onset conditions for (V_warm, V_cold).
pub fn calibrate_volumes(
    onsets: &[OnsetPoint; 2],
    diagram: &PhaseDiagram,
    t_warm_k: f64,
) -> Result<(f64, f64), ThermoError> {
    // n_i R / P_i = V_warm / T_warm + V_cold / T_i
    let rows: Vec<(f64, f64, f64)> = onsets
        .iter()
        .map(|p| {
            let p_sat = diagram
                .saturation_pressure(p.t_k, p.branch)
                .map_err(|e| ThermoError::Calibration(format!("onset {p:?}: {e}")))?;
            Ok((1.0 / t_warm_k, 1.0 / p.t_k, p.n_mol * GAS_CONSTANT / p_sat))
        })
        .collect::<Result<_, ThermoError>>()?;
    let (a1, b1, c1) = rows[0];
    let (a2, b2, c2) = rows[1];
    let det = a1 * b2 - a2 * b1;
    let scale = (a1 * b2).abs().max((a2 * b1).abs());
    if det.abs() <= 1e-12 * scale {
        return Err(ThermoError::Calibration(format!(
            "singular onset system: both points at {} K",
            onsets[0].t_k
        )));
    }
    let v_warm = (c1 * b2 - c2 * b1) / det;
    let v_cold = (a1 * c2 - a2 * c1) / det;
    if v_warm < 0.0 || v_cold < 0.0 {
        return Err(ThermoError::Calibration(format!(
            "onsets imply negative volume (V_warm = {v_warm:.3e} m3, V_cold = {v_cold:.3e} m3); \
             the coexistence curves are too flat to separate them"
        )));
    }
    Ok((v_warm, v_cold))
}

/// Single-volume calibration (V_warm = 0) from one onset.
pub fn calibrate_cold_volume(
    onset: &OnsetPoint,
    diagram: &PhaseDiagram,
) -> Result<f64, ThermoError> {
    let p_sat = diagram.saturation_pressure(onset.t_k, onset.branch)?;
    Ok(onset.n_mol * GAS_CONSTANT * onset.t_k / p_sat)
}

/// Full thermodynamic state of the sealed cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub t_cell_k: f64,
    pub n_total: f64,
    pub n_gas: f64,
    pub n_liquid: f64,
    pub n_solid: f64,
    pub pressure_pa: f64,
    pub t_s: f64,
}

impl CellState {
    pub fn n_condensed(&self) -> f64 {
        self.n_liquid + self.n_solid
    }

    /// |n_gas + n_liquid + n_solid - n_total|
    pub fn conservation_error(&self) -> f64 {
        (self.n_gas + self.n_liquid + self.n_solid - self.n_total).abs()
    }
}

/// Piecewise-linear setpoint: starts at `t0_s` from `start_k` and moves at
/// `rate_k_per_s` toward `target_k`, where it stays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub t0_s: f64,
    pub start_k: f64,
    pub rate_k_per_s: f64,
    pub target_k: f64,
}

impl Setpoint {
    pub fn hold(t_k: f64) -> Self {
        Self {
            t0_s: 0.0,
            start_k: t_k,
            rate_k_per_s: 0.0,
            target_k: t_k,
        }
    }

    /// Starts a ramp at time `t_s` from wherever the setpoint currently is.
    pub fn ramp_from(&self, t_s: f64, rate_k_per_s: f64, target_k: f64) -> Self {
        Self {
            t0_s: t_s,
            start_k: self.at(t_s),
            rate_k_per_s: rate_k_per_s.abs(),
            target_k,
        }
    }

    pub fn at(&self, t_s: f64) -> f64 {
        let elapsed = (t_s - self.t0_s).max(0.0);
        let travel = self.rate_k_per_s * elapsed;
        if self.target_k >= self.start_k {
            (self.start_k + travel).min(self.target_k)
        } else {
            (self.start_k - travel).max(self.target_k)
        }
    }

    /// Signed setpoint slope at `t_s`, zero once the target is reached.
    pub fn slope_at(&self, t_s: f64) -> f64 {
        let v = self.at(t_s);
        if v == self.target_k {
            0.0
        } else if self.target_k > self.start_k {
            self.rate_k_per_s
        } else {
            -self.rate_k_per_s
        }
    }
}

/// Lumped heat capacity with a proportional controller toward a setpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    pub c_cell_j_per_k: f64,
    pub gain_w_per_k: f64,
    pub setpoint: Setpoint,
    pub latent_coupling: bool,
}

/// Largest temperature change accepted in a single explicit update.
pub const MAX_STEP_DT_K: f64 = 0.5;

/// Explicit update of C dT/dt = -g (T - T_set(t)) + L dn_cond/dt.
///
/// Subdivides the step while a single update would move the temperature by
/// more than [`MAX_STEP_DT_K`].
pub fn thermal_step(
    state: &CellState,
    model: &ThermalModel,
    dn_condensed_dt: f64,
    latent_j_per_mol: f64,
    dt_s: f64,
) -> Result<f64, ThermoError> {
    if !(dt_s > 0.0) {
        return Err(ThermoError::InvalidParameter(format!(
            "dt must be positive, got {dt_s}"
        )));
    }
    let latent_power = if model.latent_coupling {
        latent_j_per_mol * dn_condensed_dt
    } else {
        0.0
    };
    let mut subdivisions = 1u32;
    'outer: loop {
        let h = dt_s / f64::from(subdivisions);
        let mut t_k = state.t_cell_k;
        for i in 0..subdivisions {
            let now = state.t_s + f64::from(i) * h;
            let power = -model.gain_w_per_k * (t_k - model.setpoint.at(now)) + latent_power;
            let delta = h * power / model.c_cell_j_per_k;
            if delta.abs() > MAX_STEP_DT_K {
                if subdivisions >= 1 << 20 {
                    return Err(ThermoError::Unstable { dt_s });
                }
                subdivisions *= 2;
                continue 'outer;
            }
            t_k += delta;
        }
        return Ok(t_k);
    }
}

/// Where the cell sits relative to the triple point after an update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// At or above the triple temperature, condensate (if any) is liquid.
    Liquid,
    /// Pinned at the triple temperature while liquid and solid coexist.
    Plateau,
    /// Below the triple temperature, condensate (if any) is solid.
    Solid,
}

/// Result of one coupled thermal + partition update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellUpdate {
    pub state: CellState,
    pub regime: Regime,
    /// Moles frozen this step (negative when melting).
    pub freeze_mol: f64,
    /// Net gas to liquid transfer this step.
    pub gas_to_liquid_mol: f64,
    /// Net gas to solid transfer this step (negative when subliming).
    pub gas_to_solid_mol: f64,
    /// Cell temperature the controller alone would have produced.
    pub t_ramp_k: f64,
}

/// Advances the cell by `dt_s`, injecting `dn_inject` moles of gas.
///
/// The controller heat is taken from [`thermal_step`] with no latent term;
/// condensation heat is then balanced implicitly so that the end state sits
/// on the equilibrium partition. Freezing and melting happen isothermally
/// at the triple temperature.
pub fn enthalpy_step(
    state: &CellState,
    geom: &CellGeometry,
    diagram: &PhaseDiagram,
    model: &ThermalModel,
    dt_s: f64,
    dn_inject: f64,
) -> Result<CellUpdate, ThermoError> {
    if !(dn_inject >= 0.0) {
        return Err(ThermoError::InvalidParameter(format!(
            "injection must be non-negative, got {dn_inject}"
        )));
    }
    let c = model.c_cell_j_per_k;
    let t_ramp = thermal_step(state, model, 0.0, 0.0, dt_s)?;
    let (l_vap, l_sub) = if model.latent_coupling {
        (diagram.l_vap_j_per_mol, diagram.l_sub_j_per_mol())
    } else {
        (0.0, 0.0)
    };
    let energy = c * t_ramp - l_vap * state.n_liquid - l_sub * state.n_solid;
    let n_total = state.n_total + dn_inject;
    let t_tr = diagram.t_triple_k;
    let n_gas_triple = diagram.p_triple_pa * geom.gas_capacity(t_tr);
    let n_cond_triple = (n_total - n_gas_triple).max(0.0);
    let e_liquid_edge = c * t_tr - l_vap * n_cond_triple;
    let e_solid_edge = c * t_tr - l_sub * n_cond_triple;

    let (regime, t_new, n_liquid, n_solid) = if energy >= e_liquid_edge {
        let t = solve_branch(
            energy,
            n_total,
            Branch::Liquid,
            l_vap,
            c,
            geom,
            diagram,
            t_ramp,
        )?;
        let cond = (n_total - geom.saturated_moles(diagram, t, Branch::Liquid)).max(0.0);
        (Regime::Liquid, t, cond, 0.0)
    } else if energy <= e_solid_edge {
        let t = solve_branch(
            energy,
            n_total,
            Branch::Solid,
            l_sub,
            c,
            geom,
            diagram,
            t_ramp,
        )?;
        let cond = (n_total - geom.saturated_moles(diagram, t, Branch::Solid)).max(0.0);
        (Regime::Solid, t, 0.0, cond)
    } else {
        let l_fus = l_sub - l_vap;
        let solid = ((e_liquid_edge - energy) / l_fus).clamp(0.0, n_cond_triple);
        (Regime::Plateau, t_tr, n_cond_triple - solid, solid)
    };

    let n_gas = n_total - n_liquid - n_solid;
    let pressure = if regime == Regime::Plateau {
        diagram.p_triple_pa
    } else {
        n_gas / geom.gas_capacity(t_new)
    };
    let next = CellState {
        t_cell_k: t_new,
        n_total,
        n_gas,
        n_liquid,
        n_solid,
        pressure_pa: pressure,
        t_s: state.t_s + dt_s,
    };

    let d_liquid = n_liquid - state.n_liquid;
    let d_solid = n_solid - state.n_solid;
    let (freeze, to_liquid, to_solid) = match regime {
        Regime::Liquid => (-state.n_solid, d_liquid - state.n_solid, 0.0),
        Regime::Solid => (state.n_liquid, 0.0, d_solid - state.n_liquid),
        Regime::Plateau => (d_solid, d_liquid + d_solid, 0.0),
    };
    Ok(CellUpdate {
        state: next,
        regime,
        freeze_mol: freeze,
        gas_to_liquid_mol: to_liquid,
        gas_to_solid_mol: to_solid,
        t_ramp_k: t_ramp,
    })
}

/// Solves C T - L (n_total - n_sat(T))^+ = energy on one side of the
/// triple point. The left side is strictly increasing in T.
#[allow(clippy::too_many_arguments)]
fn solve_branch(
    energy: f64,
    n_total: f64,
    branch: Branch,
    latent: f64,
    c: f64,
    geom: &CellGeometry,
    diagram: &PhaseDiagram,
    guess: f64,
) -> Result<f64, ThermoError> {
    if latent == 0.0 {
        return Ok(energy / c);
    }
    let t_tr = diagram.t_triple_k;
    let (mut lo, mut hi) = match branch {
        Branch::Liquid => (
            (energy / c).max(t_tr),
            ((energy + latent * n_total) / c).max(t_tr),
        ),
        Branch::Solid => (energy / c, ((energy + latent * n_total) / c).min(t_tr)),
    };
    if !(lo > 0.0) || !hi.is_finite() {
        return Err(ThermoError::NoConvergence(format!(
            "no positive temperature bracket for energy {energy} J"
        )));
    }
    let residual = |t: f64| {
        let sat = geom.saturated_moles(diagram, t, branch);
        if n_total > sat {
            (
                c * t - latent * (n_total - sat) - energy,
                c + latent * geom.saturated_moles_slope(diagram, t, branch),
            )
        } else {
            (c * t - energy, c)
        }
    };
    let mut t = guess.clamp(lo, hi);
    for _ in 0..200 {
        let (h, dh) = residual(t);
        if h == 0.0 {
            return Ok(t);
        }
        if h < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - h / dh;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 4.0 * f64::EPSILON * t || hi - lo <= 4.0 * f64::EPSILON * t {
            return Ok(next);
        }
        t = next;
    }
    Err(ThermoError::NoConvergence(format!(
        "bracket [{lo}, {hi}] K after 200 iterations"
    )))
}
