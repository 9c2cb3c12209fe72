//! Film on the resonator: how condensate ends up at the chip, how it thins
//! through the triple point and how drive power reshapes it.
//!
//! Moles are the primary quantity. `d_local_m` is always the
//! uniform-equivalent thickness of the local moles over the chip area.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::FilmError;
use crate::thermo::{Branch, CellGeometry, PhaseDiagram, Regime, GAS_CONSTANT};

/// Moles per second carried by a flow of 1 sccm (ideal gas at 273.15 K and
/// 101325 Pa).
pub const SCCM_MOL_PER_S: f64 = 101_325.0 / (GAS_CONSTANT * 273.15) * 1e-6 / 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalPhase {
    None,
    Liquid,
    Solid,
}

impl LocalPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            LocalPhase::None => "none",
            LocalPhase::Liquid => "liquid",
            LocalPhase::Solid => "solid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    Conformal,
    InTrench,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialProps {
    pub molar_mass_kg_per_mol: f64,
    pub rho_solid_kg_per_m3: f64,
    pub rho_liquid_kg_per_m3: f64,
    pub eps_solid: f64,
    pub eps_liquid: f64,
}

impl MaterialProps {
    pub fn validate(&self) -> Result<(), FilmError> {
        let ok = self.molar_mass_kg_per_mol > 0.0
            && self.rho_solid_kg_per_m3 > self.rho_liquid_kg_per_m3
            && self.rho_liquid_kg_per_m3 > 0.0
            && self.eps_solid > self.eps_liquid
            && self.eps_liquid > 1.0;
        if ok {
            Ok(())
        } else {
            Err(FilmError::InvalidInput(format!(
                "bad material properties: {self:?}"
            )))
        }
    }

    pub fn density(&self, phase: Branch) -> f64 {
        match phase {
            Branch::Liquid => self.rho_liquid_kg_per_m3,
            Branch::Solid => self.rho_solid_kg_per_m3,
        }
    }

    pub fn permittivity(&self, phase: Branch) -> f64 {
        match phase {
            Branch::Liquid => self.eps_liquid,
            Branch::Solid => self.eps_solid,
        }
    }
}

pub fn moles_to_thickness(n_mol: f64, area_m2: f64, props: &MaterialProps, phase: Branch) -> f64 {
    debug_assert!(n_mol >= 0.0 && area_m2 > 0.0);
    n_mol * props.molar_mass_kg_per_mol / (props.density(phase) * area_m2)
}

pub fn thickness_to_moles(d_m: f64, area_m2: f64, props: &MaterialProps, phase: Branch) -> f64 {
    d_m * props.density(phase) * area_m2 / props.molar_mass_kg_per_mol
}

/// Stochastic solidification law and the high-power cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolidifyModel {
    /// Log-log slope between liquid and solid thickness.
    pub beta: f64,
    /// Intercept of the log law, log10 of meters.
    pub offset_log10: f64,
    /// Gaussian scatter in decades.
    pub sigma_log: f64,
    pub p_collapse: f64,
    pub d_cap_highpower_m: f64,
    pub p_threshold_dbm: f64,
    pub tau_wet_s: f64,
    pub max_resample: u32,
}

impl SolidifyModel {
    pub fn validate(&self) -> Result<(), FilmError> {
        let ok = self.sigma_log >= 0.0
            && (0.0..=1.0).contains(&self.p_collapse)
            && self.d_cap_highpower_m > 0.0
            && self.tau_wet_s > 0.0
            && self.beta.is_finite()
            && self.offset_log10.is_finite()
            && self.max_resample > 0;
        if ok {
            Ok(())
        } else {
            Err(FilmError::InvalidInput(format!(
                "bad solidification model: {self:?}"
            )))
        }
    }
}

/// Scatter that gives correlation `r` on log thickness for a liquid
/// population with log standard deviation `s_l`.
pub fn sigma_for_correlation(beta: f64, s_l: f64, r: f64) -> f64 {
    beta.abs() * s_l * (1.0 / (r * r) - 1.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilmParams {
    /// Share of cell liquid that pools at the resonator.
    pub local_fraction: f64,
    pub d_wetting_m: f64,
    pub monolayer_m: f64,
    /// Share of the conformal deposit the chip receives once bulk solid
    /// exists elsewhere in the cell.
    pub regrowth_share: f64,
    /// Local heating scale that suppresses gas-to-solid deposition on the chip.
    pub deposition_heating_scale_k: f64,
    /// Local heating scale of the liquid thinning law.
    pub thinning_scale_k: f64,
    pub liquid_morphology: Morphology,
    pub solid_morphology: Morphology,
}

impl FilmParams {
    pub fn validate(&self) -> Result<(), FilmError> {
        let ok = (0.0..=1.0).contains(&self.local_fraction)
            && self.d_wetting_m > 0.0
            && self.monolayer_m > 0.0
            && (0.0..=1.0).contains(&self.regrowth_share)
            && self.deposition_heating_scale_k > 0.0
            && self.thinning_scale_k > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FilmError::InvalidInput(format!(
                "bad film parameters: {self:?}"
            )))
        }
    }

    pub fn morphology(&self, phase: Branch) -> Morphology {
        match phase {
            Branch::Liquid => self.liquid_morphology,
            Branch::Solid => self.solid_morphology,
        }
    }
}

/// What the local film is currently doing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilmMode {
    Empty,
    Liquid,
    Solid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilmState {
    pub d_local_m: f64,
    pub phase_local: LocalPhase,
    pub morphology: Morphology,
    pub n_local_mol: f64,
    pub n_remote_mol: f64,
    pub d_wetting_m: f64,
    pub mode: FilmMode,
    /// Moles the local solid relaxes toward.
    pub target_mol: f64,
    /// Bulk solid formed by freezing exists in the cell.
    pub regrowth_active: bool,
}

impl FilmState {
    pub fn empty(params: &FilmParams) -> Self {
        Self {
            d_local_m: 0.0,
            phase_local: LocalPhase::None,
            morphology: params.solid_morphology,
            n_local_mol: 0.0,
            n_remote_mol: 0.0,
            d_wetting_m: params.d_wetting_m,
            mode: FilmMode::Empty,
            target_mol: 0.0,
            regrowth_active: false,
        }
    }

    fn branch(&self) -> Branch {
        match self.mode {
            FilmMode::Liquid => Branch::Liquid,
            _ => Branch::Solid,
        }
    }

    fn refresh(&mut self, params: &FilmParams, props: &MaterialProps, a_res_m2: f64) {
        let branch = self.branch();
        self.d_local_m = moles_to_thickness(self.n_local_mol, a_res_m2, props, branch);
        self.morphology = params.morphology(branch);
        self.phase_local = if self.d_local_m < params.monolayer_m || self.mode == FilmMode::Empty {
            LocalPhase::None
        } else {
            match branch {
                Branch::Liquid => LocalPhase::Liquid,
                Branch::Solid => LocalPhase::Solid,
            }
        };
    }
}

/// Non-equilibrium deposition at a temperature where everything injected
/// sticks. `share` is the chip's fraction of the cold area.
pub fn quench_deposit(
    state: &FilmState,
    flow_sccm: f64,
    dt_s: f64,
    share: f64,
    params: &FilmParams,
    props: &MaterialProps,
    a_res_m2: f64,
) -> Result<FilmState, FilmError> {
    if !(flow_sccm >= 0.0) {
        return Err(FilmError::InvalidInput(format!(
            "negative flow {flow_sccm} sccm"
        )));
    }
    if flow_sccm == 0.0 {
        return Ok(*state);
    }
    let deposited = flow_sccm * SCCM_MOL_PER_S * dt_s;
    let mut next = *state;
    next.mode = FilmMode::Solid;
    next.n_local_mol += share * deposited;
    next.target_mol += share * deposited;
    next.n_remote_mol += (1.0 - share) * deposited;
    next.refresh(params, props, a_res_m2);
    Ok(next)
}

/// Local film in equilibrium with `n_liquid_mol` of cell liquid.
pub fn liquid_equilibrium_growth(
    state: &FilmState,
    n_liquid_mol: f64,
    params: &FilmParams,
    props: &MaterialProps,
    a_res_m2: f64,
) -> FilmState {
    let mut next = *state;
    next.mode = if n_liquid_mol > 0.0 {
        FilmMode::Liquid
    } else {
        FilmMode::Empty
    };
    next.n_local_mol = params.local_fraction * n_liquid_mol;
    next.n_remote_mol = n_liquid_mol - next.n_local_mol;
    next.target_mol = 0.0;
    next.regrowth_active = false;
    next.refresh(params, props, a_res_m2);
    next
}

/// Thinned equilibrium thickness of a heated liquid film.
pub fn power_thinning_liquid(d0_m: f64, delta_t_local_k: f64, thinning_scale_k: f64) -> f64 {
    d0_m * (-delta_t_local_k / thinning_scale_k).exp()
}

/// Conformal gas-to-solid deposit of `dn_solid` cell moles onto an
/// existing solid film.
pub fn gas_to_solid_growth(
    state: &FilmState,
    dn_solid: f64,
    share: f64,
    params: &FilmParams,
    props: &MaterialProps,
    a_res_m2: f64,
) -> FilmState {
    let mut next = *state;
    if dn_solid == 0.0 {
        return next;
    }
    next.mode = FilmMode::Solid;
    let local = share * dn_solid;
    next.n_local_mol = (next.n_local_mol + local).max(0.0);
    next.target_mol = (next.target_mol + local).max(0.0);
    next.n_remote_mol += dn_solid - local;
    next.refresh(params, props, a_res_m2);
    next
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolidifyOutcome {
    pub d_solid_m: f64,
    pub collapsed: bool,
    pub attempts: u32,
    /// The cap could not be met by resampling and the wetting floor was used.
    pub fell_back: bool,
}

/// Draws the post-crossing solid thickness for a liquid film of `d_liquid_m`.
pub fn solidify_across_triple<R: Rng + ?Sized>(
    d_liquid_m: f64,
    drive_power_dbm: f64,
    model: &SolidifyModel,
    d_wetting_m: f64,
    rng: &mut R,
) -> SolidifyOutcome {
    let capped = drive_power_dbm >= model.p_threshold_dbm;
    let log_liquid = d_liquid_m.max(d_wetting_m).log10();
    for attempt in 1..=model.max_resample {
        let u: f64 = rng.random();
        let (d, collapsed) = if u < model.p_collapse {
            (d_wetting_m, true)
        } else {
            let xi: f64 = StandardNormal.sample(rng);
            let log_d = model.beta * log_liquid + model.offset_log10 + model.sigma_log * xi;
            (10f64.powf(log_d), false)
        };
        if !capped || d < model.d_cap_highpower_m {
            return SolidifyOutcome {
                d_solid_m: d,
                collapsed,
                attempts: attempt,
                fell_back: false,
            };
        }
    }
    SolidifyOutcome {
        d_solid_m: d_wetting_m,
        collapsed: true,
        attempts: model.max_resample,
        fell_back: true,
    }
}

/// Inputs of one film update, mostly lifted from the cell update.
#[derive(Clone, Copy, Debug)]
pub struct FilmStepInput {
    pub dt_s: f64,
    pub regime: Regime,
    pub n_liquid_mol: f64,
    pub n_solid_mol: f64,
    pub freeze_mol: f64,
    pub gas_to_solid_mol: f64,
    pub delta_t_local_k: f64,
    pub drive_power_dbm: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilmEvents {
    pub triple_crossing: bool,
    pub collapse: bool,
    pub melt: bool,
    pub solid_growth: bool,
    pub solidify: Option<SolidifyOutcome>,
}

/// Film geometry and parameters the dynamics need.
#[derive(Clone, Copy, Debug)]
pub struct FilmContext<'a> {
    pub params: &'a FilmParams,
    pub solidify: &'a SolidifyModel,
    pub props: &'a MaterialProps,
    pub geom: &'a CellGeometry,
}

impl FilmState {
    /// One film update after the cell has been advanced.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        input: &FilmStepInput,
        ctx: &FilmContext<'_>,
        rng: &mut R,
    ) -> FilmEvents {
        let mut events = FilmEvents::default();
        let n_cond = input.n_liquid_mol + input.n_solid_mol;
        let a_res = ctx.geom.a_res_m2;
        let area_share = a_res / ctx.geom.a_total_m2;
        if n_cond <= 0.0 {
            *self = FilmState::empty(ctx.params);
            return events;
        }

        if input.freeze_mol > 0.0 && self.mode == FilmMode::Liquid {
            let outcome = solidify_across_triple(
                self.d_local_m,
                input.drive_power_dbm,
                ctx.solidify,
                ctx.params.d_wetting_m,
                rng,
            );
            self.mode = FilmMode::Solid;
            self.regrowth_active = true;
            self.target_mol =
                thickness_to_moles(outcome.d_solid_m, a_res, ctx.props, Branch::Solid);
            events.triple_crossing = true;
            events.collapse = outcome.collapsed;
            events.solidify = Some(outcome);
        } else if self.mode == FilmMode::Solid && input.n_liquid_mol > 0.0 && input.freeze_mol < 0.0
        {
            self.mode = FilmMode::Liquid;
            events.melt = true;
        } else if self.mode == FilmMode::Empty {
            self.mode = if input.n_liquid_mol > 0.0 && input.regime != Regime::Solid {
                FilmMode::Liquid
            } else {
                FilmMode::Solid
            };
            self.regrowth_active = false;
            self.target_mol = 0.0;
            self.n_local_mol = 0.0;
        }

        match self.mode {
            FilmMode::Liquid => {
                let thin = (-input.delta_t_local_k / ctx.params.thinning_scale_k).exp();
                self.n_local_mol = ctx.params.local_fraction * input.n_liquid_mol * thin;
                self.target_mol = 0.0;
            }
            FilmMode::Solid => {
                let dn = input.gas_to_solid_mol;
                if dn > 0.0 {
                    let mut share = area_share;
                    if self.regrowth_active {
                        share *= ctx.params.regrowth_share;
                    }
                    share *= (-input.delta_t_local_k / ctx.params.deposition_heating_scale_k).exp();
                    let local = share * dn;
                    if local > 0.0 {
                        events.solid_growth = true;
                    }
                    self.n_local_mol += local;
                    self.target_mol += local;
                } else if dn < 0.0 {
                    let lost = area_share * dn;
                    self.n_local_mol = (self.n_local_mol + lost).max(0.0);
                    self.target_mol = (self.target_mol + lost).max(0.0);
                }
                let decay = (-input.dt_s / ctx.solidify.tau_wet_s).exp();
                self.n_local_mol = self.target_mol + (self.n_local_mol - self.target_mol) * decay;
            }
            FilmMode::Empty => unreachable!("mode assigned above"),
        }

        self.target_mol = self.target_mol.min(n_cond);
        self.n_local_mol = self.n_local_mol.clamp(0.0, n_cond);
        self.n_remote_mol = n_cond - self.n_local_mol;
        self.refresh(ctx.params, ctx.props, a_res);
        events
    }
}

/// Liquid thickness anchor: `n_mol` in the cell at `t_k` puts `d_m` of
/// liquid on the chip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiquidAnchor {
    pub n_mol: f64,
    pub t_k: f64,
    pub d_m: f64,
}

pub fn calibrate_local_fraction(
    anchor: &LiquidAnchor,
    geom: &CellGeometry,
    diagram: &PhaseDiagram,
    props: &MaterialProps,
) -> Result<f64, FilmError> {
    if anchor.t_k < diagram.t_triple_k {
        return Err(FilmError::Calibration(format!(
            "liquid anchor at {} K is below the triple point",
            anchor.t_k
        )));
    }
    let n_liquid = anchor.n_mol - geom.saturated_moles(diagram, anchor.t_k, Branch::Liquid);
    if !(n_liquid > 0.0) {
        return Err(FilmError::Calibration(format!(
            "{} mol is still all gas at {} K",
            anchor.n_mol, anchor.t_k
        )));
    }
    let needed = thickness_to_moles(anchor.d_m, geom.a_res_m2, props, Branch::Liquid);
    let fraction = needed / n_liquid;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FilmError::Calibration(format!(
            "local fraction {fraction} needed for the liquid anchor is not in (0, 1]"
        )));
    }
    Ok(fraction)
}

/// Two-run anchor for the regrowth share: the run that passes through the
/// liquid ends `ratio` times thicker than the direct gas-to-solid run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegrowthAnchor {
    pub n_via_liquid_mol: f64,
    pub n_direct_mol: f64,
    pub t_final_k: f64,
    pub ratio: f64,
    pub monitor_power_dbm: f64,
}

/// Solves d_wetting + phi s R_liquid = ratio s R_direct for phi, where s is
/// the deposition suppression at the anchor's monitor heating.
pub fn calibrate_regrowth_share(
    anchor: &RegrowthAnchor,
    geom: &CellGeometry,
    diagram: &PhaseDiagram,
    props: &MaterialProps,
    d_wetting_m: f64,
    suppression: f64,
) -> Result<f64, FilmError> {
    let n_triple = geom.saturated_moles(diagram, diagram.t_triple_k, Branch::Solid);
    let n_final = geom.saturated_moles(diagram, anchor.t_final_k, Branch::Solid);
    if !(anchor.n_via_liquid_mol > n_triple
        && anchor.n_direct_mol < n_triple
        && anchor.n_direct_mol > n_final)
    {
        return Err(FilmError::Calibration(format!(
            "regrowth anchor needs {} > {n_triple:.4e} > {} > {n_final:.4e} mol",
            anchor.n_via_liquid_mol, anchor.n_direct_mol
        )));
    }
    let per_mol = props.molar_mass_kg_per_mol / (props.rho_solid_kg_per_m3 * geom.a_total_m2);
    let direct = suppression * (anchor.n_direct_mol - n_final) * per_mol;
    let regrowth = suppression * (n_triple - n_final) * per_mol;
    let phi = (anchor.ratio * direct - d_wetting_m) / regrowth;
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(FilmError::Calibration(format!(
            "regrowth share {phi} is not in (0, 1]"
        )));
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn props() -> MaterialProps {
        MaterialProps {
            molar_mass_kg_per_mol: 0.02018,
            rho_solid_kg_per_m3: 1444.0,
            rho_liquid_kg_per_m3: 1247.0,
            eps_solid: 1.22,
            eps_liquid: 1.19,
        }
    }

    fn params() -> FilmParams {
        FilmParams {
            local_fraction: 0.02,
            d_wetting_m: 1e-9,
            monolayer_m: 3e-10,
            regrowth_share: 0.5,
            deposition_heating_scale_k: 0.02,
            thinning_scale_k: 10.0,
            liquid_morphology: Morphology::InTrench,
            solid_morphology: Morphology::Conformal,
        }
    }

    fn deterministic() -> SolidifyModel {
        SolidifyModel {
            beta: 1.0,
            offset_log10: 0.5f64.log10(),
            sigma_log: 0.0,
            p_collapse: 0.0,
            d_cap_highpower_m: 1e-7,
            p_threshold_dbm: 0.0,
            tau_wet_s: 30.0,
            max_resample: 1000,
        }
    }

    #[test]
    fn quench_amount_on_hundredth_square_meter() {
        let d = moles_to_thickness(1.78e-4, 1e-2, &props(), Branch::Solid);
        let expected = 1.78e-4 * 0.02018 / (1444.0 * 1e-2);
        assert!((d - expected).abs() < 1e-22);
        assert!((d - 2.49e-7).abs() < 0.01e-7);
        assert_eq!(moles_to_thickness(0.0, 1.0, &props(), Branch::Solid), 0.0);
        let half = moles_to_thickness(1.78e-4, 2e-2, &props(), Branch::Solid);
        assert!((half - d / 2.0).abs() < 1e-22);
    }

    #[test]
    fn thickness_round_trip() {
        for phase in [Branch::Liquid, Branch::Solid] {
            let n = 3.3e-4;
            let back = thickness_to_moles(
                moles_to_thickness(n, 1e-4, &props(), phase),
                1e-4,
                &props(),
                phase,
            );
            assert!((back - n).abs() <= 1e-12 * n);
        }
    }

    #[test]
    fn sccm_conversion_and_quench_duration() {
        let oracle = 1.0 / (22_414.0 * 60.0);
        assert!((SCCM_MOL_PER_S - oracle).abs() < 1e-3 * oracle);
        let duration = 1.78e-4 / SCCM_MOL_PER_S;
        assert!((duration - 239.0).abs() < 1.0, "{duration}");
    }

    #[test]
    fn zero_flow_quench_is_identity() {
        let s = FilmState::empty(&params());
        assert_eq!(
            quench_deposit(&s, 0.0, 1.0, 1e-4, &params(), &props(), 1e-4).unwrap(),
            s
        );
        assert!(quench_deposit(&s, -1.0, 1.0, 1e-4, &params(), &props(), 1e-4).is_err());
    }

    #[test]
    fn quench_grows_monotonically() {
        let mut s = FilmState::empty(&params());
        let mut last = 0.0;
        for _ in 0..240 {
            s = quench_deposit(&s, 1.0, 1.0, 1e-4, &params(), &props(), 1e-4).unwrap();
            assert!(s.d_local_m > last);
            last = s.d_local_m;
        }
        assert_eq!(s.phase_local, LocalPhase::Solid);
        assert_eq!(s.morphology, Morphology::Conformal);
    }

    #[test]
    fn deterministic_solidification_halves_thickness() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = solidify_across_triple(4e-6, -30.0, &deterministic(), 1e-9, &mut rng);
        assert!((out.d_solid_m - 2e-6).abs() < 1e-15);
        assert!(!out.collapsed);
    }

    #[test]
    fn cap_holds_at_high_power() {
        let model = SolidifyModel {
            beta: 1.0,
            offset_log10: -0.2,
            sigma_log: 0.5,
            p_collapse: 0.03,
            ..deterministic()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let out = solidify_across_triple(5e-6, 5.0, &model, 1e-9, &mut rng);
            assert!(out.d_solid_m < model.d_cap_highpower_m);
        }
    }

    #[test]
    fn cap_falls_back_to_wetting_floor() {
        let model = SolidifyModel {
            max_resample: 3,
            ..deterministic()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = solidify_across_triple(4e-6, 5.0, &model, 1e-9, &mut rng);
        assert!(out.fell_back);
        assert_eq!(out.d_solid_m, 1e-9);
    }

    #[test]
    fn thinning_law() {
        assert_eq!(power_thinning_liquid(1e-6, 0.0, 10.0), 1e-6);
        let mut last = 1e-6;
        for i in 1..20 {
            let d = power_thinning_liquid(1e-6, f64::from(i) * 0.1, 10.0);
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn sigma_formula_matches_target() {
        let s = sigma_for_correlation(1.0, 0.5, 0.6);
        assert!((s - 0.5 * (1.0 / 0.36 - 1.0f64).sqrt()).abs() < 1e-15);
        // r = beta s_L / sqrt(beta^2 s_L^2 + sigma^2)
        let r = 0.5 / (0.25 + s * s).sqrt();
        assert!((r - 0.6).abs() < 1e-12);
    }

    #[test]
    fn gas_to_solid_zero_is_identity() {
        let s = FilmState::empty(&params());
        assert_eq!(
            gas_to_solid_growth(&s, 0.0, 1e-4, &params(), &props(), 1e-4),
            s
        );
        let grown = gas_to_solid_growth(&s, 1e-3, 1e-4, &params(), &props(), 1e-4);
        assert!(grown.d_local_m > 0.0);
        assert!((grown.n_local_mol + grown.n_remote_mol - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn liquid_growth_tracks_condensate() {
        let s = FilmState::empty(&params());
        let a = liquid_equilibrium_growth(&s, 0.0, &params(), &props(), 1e-4);
        assert_eq!(a.d_local_m, 0.0);
        let b = liquid_equilibrium_growth(&s, 1e-3, &params(), &props(), 1e-4);
        let c = liquid_equilibrium_growth(&s, 2e-3, &params(), &props(), 1e-4);
        assert!(c.d_local_m > b.d_local_m && b.d_local_m > 0.0);
        assert_eq!(b.phase_local, LocalPhase::Liquid);
        assert_eq!(b.morphology, Morphology::InTrench);
    }
}
