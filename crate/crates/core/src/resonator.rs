//! Resonator observables: film-induced frequency shift, temperature
//! baseline, Kerr-pulled line shape and local heating.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ResonatorError;
use crate::film::{MaterialProps, Morphology};
use crate::thermo::Branch;

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Normalised drive k = K S / gamma^3 at the Duffing critical point.
pub const CRITICAL_NORMALIZED_DRIVE: f64 = 1.539_600_717_839_002; // 8 / (3 sqrt 3)

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Participation {
    pub p_inf: f64,
    pub lambda_m: f64,
    pub kappa_trench_per_m: f64,
    pub trench_depth_m: f64,
}

impl Participation {
    pub fn validate(&self) -> Result<(), ResonatorError> {
        let ok = self.p_inf > 0.0
            && self.p_inf < 1.0
            && self.lambda_m > 0.0
            && self.kappa_trench_per_m > 0.0
            && self.trench_depth_m > 0.0
            && self.kappa_trench_per_m * self.trench_depth_m < self.p_inf;
        if ok {
            Ok(())
        } else {
            Err(ResonatorError::InvalidParameter(format!(
                "participation needs 0 < kappa * depth < p_inf < 1: {self:?}"
            )))
        }
    }

    /// Conformal thickness that has the same participation as a full trench.
    fn trench_equivalent_m(&self) -> f64 {
        -self.lambda_m * (-(self.kappa_trench_per_m * self.trench_depth_m) / self.p_inf).ln_1p()
    }

    pub fn evaluate(&self, d_m: f64, morphology: Morphology) -> f64 {
        debug_assert!(d_m >= 0.0);
        match morphology {
            Morphology::Conformal => -self.p_inf * (-d_m / self.lambda_m).exp_m1(),
            Morphology::InTrench => {
                if d_m <= self.trench_depth_m {
                    self.kappa_trench_per_m * d_m
                } else {
                    let equivalent = d_m - self.trench_depth_m + self.trench_equivalent_m();
                    -self.p_inf * (-equivalent / self.lambda_m).exp_m1()
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDirection {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonatorModel {
    pub f0_hz: f64,
    pub q_loaded: f64,
    /// Offset cubic c0 + c1 T + c2 T^2 + c3 T^3 added to f0, Hz.
    pub baseline_coeffs: [f64; 4],
    pub calibration_range_k: [f64; 2],
    pub participation: Participation,
    /// Kerr coefficient, Hz per intracavity photon.
    pub kerr_hz_per_photon: f64,
    pub attenuation_db: f64,
    /// External share of the total loss rate.
    pub ext_fraction: f64,
    /// Local heating per watt delivered to the chip, K/W.
    pub heating_k_per_w: f64,
    pub tau_th_s: f64,
    pub peak_transmission: f64,
}

/// Drive seen by the resonator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveState {
    pub power_dbm: f64,
    pub f_drive_hz: f64,
    pub delta_t_local_k: f64,
}

/// Steady-state intracavity photon numbers, sorted ascending.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DuffingRoots {
    roots: [f64; 3],
    count: usize,
}

impl DuffingRoots {
    pub fn as_slice(&self) -> &[f64] {
        &self.roots[..self.count]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

impl ResonatorModel {
    pub fn validate(&self) -> Result<(), ResonatorError> {
        self.participation.validate()?;
        let ok = self.f0_hz > 0.0
            && self.q_loaded > 0.0
            && self.kerr_hz_per_photon < 0.0
            && self.tau_th_s > 0.0
            && self.heating_k_per_w >= 0.0
            && self.ext_fraction > 0.0
            && self.ext_fraction <= 1.0
            && self.peak_transmission > 0.0
            && self.baseline_coeffs.iter().all(|c| c.is_finite())
            && self.calibration_range_k[0] < self.calibration_range_k[1];
        if ok {
            Ok(())
        } else {
            Err(ResonatorError::InvalidParameter(format!(
                "resonator needs f0, Q, tau_th > 0 and K < 0: {self:?}"
            )))
        }
    }

    pub fn participation(&self, d_m: f64, morphology: Morphology) -> f64 {
        self.participation.evaluate(d_m, morphology)
    }

    /// Delta f / f for a film of thickness `d_m`.
    pub fn fractional_shift(
        &self,
        d_m: f64,
        phase: Branch,
        morphology: Morphology,
        props: &MaterialProps,
    ) -> f64 {
        -0.5 * (props.permittivity(phase) - 1.0) * self.participation(d_m, morphology)
    }

    /// Largest shift magnitude the film model can produce for `phase`.
    pub fn max_shift_magnitude(&self, phase: Branch, props: &MaterialProps) -> f64 {
        0.5 * (props.permittivity(phase) - 1.0) * self.participation.p_inf
    }

    pub fn baseline_offset(&self, t_k: f64) -> f64 {
        let [c0, c1, c2, c3] = self.baseline_coeffs;
        c0 + t_k * (c1 + t_k * (c2 + t_k * c3))
    }

    /// Bare resonator frequency at cell temperature `t_k`.
    pub fn baseline_frequency(&self, t_k: f64) -> f64 {
        self.f0_hz + self.baseline_offset(t_k)
    }

    pub fn in_calibration_range(&self, t_k: f64) -> bool {
        t_k >= self.calibration_range_k[0] && t_k <= self.calibration_range_k[1]
    }

    pub fn linewidth_hz(&self, f_res_hz: f64) -> f64 {
        f_res_hz / self.q_loaded
    }

    /// Half the total loss rate, rad/s.
    pub fn gamma(&self, f_res_hz: f64) -> f64 {
        std::f64::consts::PI * f_res_hz / self.q_loaded
    }

    pub fn kerr_rad(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.kerr_hz_per_photon
    }

    pub fn chip_power_w(&self, power_dbm: f64) -> f64 {
        1e-3 * 10f64.powf((power_dbm - self.attenuation_db) / 10.0)
    }

    /// Drive term kappa_ext F of the steady-state cubic, photons/s^2.
    pub fn drive_strength(&self, power_dbm: f64) -> f64 {
        let kappa_ext = self.ext_fraction * 2.0 * self.gamma(self.f0_hz);
        let photon_energy = HBAR * 2.0 * std::f64::consts::PI * self.f0_hz;
        kappa_ext * self.chip_power_w(power_dbm) / photon_energy
    }

    /// k = K S / gamma^3; the line bistabilises once |k| exceeds
    /// [`CRITICAL_NORMALIZED_DRIVE`].
    pub fn normalized_drive(&self, power_dbm: f64, f_res_hz: f64) -> f64 {
        let g = self.gamma(f_res_hz);
        self.kerr_rad() * self.drive_strength(power_dbm) / (g * g * g)
    }

    /// Drive power at which the three-root window first opens.
    pub fn critical_power_dbm(&self) -> f64 {
        let g = self.gamma(self.f0_hz);
        let s_c = CRITICAL_NORMALIZED_DRIVE * g * g * g / self.kerr_rad().abs();
        let per_dbm0 = self.drive_strength(0.0);
        10.0 * (s_c / per_dbm0).log10()
    }

    /// Kerr pull of the response maximum, Hz.
    pub fn kerr_peak_shift_hz(&self, power_dbm: f64, f_res_hz: f64) -> f64 {
        let g = self.gamma(f_res_hz);
        self.kerr_hz_per_photon * self.drive_strength(power_dbm) / (g * g)
    }

    /// All steady-state photon numbers for a drive at `f_drive_hz`.
    pub fn duffing_roots(
        &self,
        f_drive_hz: f64,
        power_dbm: f64,
        f_res_linear_hz: f64,
    ) -> DuffingRoots {
        let g = self.gamma(f_res_linear_hz);
        let s = self.drive_strength(power_dbm);
        let delta = 2.0 * std::f64::consts::PI * (f_drive_hz - f_res_linear_hz);
        let (u, count) = normalized_roots(self.kerr_rad() * s / (g * g * g), delta / g);
        let scale = s / (g * g);
        let mut roots = [0.0; 3];
        for i in 0..count {
            roots[i] = u[i] * scale;
        }
        DuffingRoots { roots, count }
    }

    /// Relative residual of the steady-state cubic at photon number `n`.
    pub fn duffing_residual(
        &self,
        n: f64,
        f_drive_hz: f64,
        power_dbm: f64,
        f_res_linear_hz: f64,
    ) -> f64 {
        let g = self.gamma(f_res_linear_hz);
        let s = self.drive_strength(power_dbm);
        let delta = 2.0 * std::f64::consts::PI * (f_drive_hz - f_res_linear_hz);
        let detuned = delta - self.kerr_rad() * n;
        let lhs = n * (detuned * detuned + g * g);
        (lhs - s).abs() / s.max(lhs)
    }

    /// Synthesised |S21|^2 over a sorted grid, following the steady state
    /// by continuity in the order the sweep visits the grid.
    pub fn s21_trace(
        &self,
        f_grid_hz: &[f64],
        drive: &DriveState,
        f_res_linear_hz: f64,
        direction: SweepDirection,
        noise: Option<(f64, u64)>,
    ) -> Vec<f64> {
        debug_assert!(f_grid_hz.windows(2).all(|w| w[0] <= w[1]));
        let g = self.gamma(f_res_linear_hz);
        let s = self.drive_strength(drive.power_dbm);
        let k = self.kerr_rad() * s / (g * g * g);
        let mut out = vec![0.0; f_grid_hz.len()];
        let order: Box<dyn Iterator<Item = usize>> = match direction {
            SweepDirection::Up => Box::new(0..f_grid_hz.len()),
            SweepDirection::Down => Box::new((0..f_grid_hz.len()).rev()),
        };
        let mut previous: Option<f64> = None;
        for i in order {
            let x = 2.0 * std::f64::consts::PI * (f_grid_hz[i] - f_res_linear_hz) / g;
            let (roots, count) = normalized_roots(k, x);
            let pick = match previous {
                None => roots[0],
                Some(p) => *roots[..count]
                    .iter()
                    .min_by(|a, b| (*a - p).abs().total_cmp(&(*b - p).abs()))
                    .expect("at least one root"),
            };
            previous = Some(pick);
            out[i] = self.peak_transmission * pick;
        }
        if let Some((sigma, seed)) = noise {
            if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = Normal::new(0.0, sigma * self.peak_transmission).expect("finite sigma");
                for v in &mut out {
                    *v += dist.sample(&mut rng);
                }
            }
        }
        out
    }

    /// Detuning interval (Hz, relative to the linear resonance) with three
    /// steady states, if any.
    pub fn bistable_window_hz(&self, power_dbm: f64, f_res_linear_hz: f64) -> Option<(f64, f64)> {
        let g = self.gamma(f_res_linear_hz);
        let k = self.normalized_drive(power_dbm, f_res_linear_hz);
        if k.abs() <= CRITICAL_NORMALIZED_DRIVE {
            return None;
        }
        // Three roots need |x| > sqrt(3) on the side the line leans to, and
        // the window closes before the response peak at x = k.
        let sign = k.signum();
        let near = sign * 3f64.sqrt();
        let far = k + sign;
        let count_at = |x: f64| normalized_roots(k, x).1;
        let n = 20_000;
        let mut first: Option<f64> = None;
        let mut last: Option<f64> = None;
        for i in 0..=n {
            let x = near + (far - near) * f64::from(i) / f64::from(n);
            if count_at(x) == 3 {
                if first.is_none() {
                    first = Some(x);
                }
                last = Some(x);
            }
        }
        let (a, b) = (first?, last?);
        let to_hz = |x: f64| x * g / (2.0 * std::f64::consts::PI);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        Some((to_hz(lo), to_hz(hi)))
    }

    /// Steady-state local heating for a drive power.
    pub fn heating_target_k(&self, power_dbm: f64) -> f64 {
        self.heating_k_per_w * self.chip_power_w(power_dbm)
    }

    /// Exact update of d(dT)/dt = (eta P - dT) / tau_th over `dt_s`.
    pub fn local_heating_step(&self, delta_t_k: f64, p_circ_w: f64, dt_s: f64) -> f64 {
        let target = self.heating_k_per_w * p_circ_w;
        target + (delta_t_k - target) * (-dt_s / self.tau_th_s).exp()
    }
}

/// Kerr coefficient (Hz/photon, negative) that puts the critical point at
/// `critical_power_dbm`.
pub fn calibrate_kerr(model: &ResonatorModel, critical_power_dbm: f64) -> f64 {
    let g = model.gamma(model.f0_hz);
    let s_c = model.drive_strength(critical_power_dbm);
    let kerr_rad = -CRITICAL_NORMALIZED_DRIVE * g * g * g / s_c;
    kerr_rad / (2.0 * std::f64::consts::PI)
}

/// Heating coefficient (K/W) that gives `delta_t_k` at `power_dbm`.
pub fn calibrate_heating(model: &ResonatorModel, power_dbm: f64, delta_t_k: f64) -> f64 {
    delta_t_k / model.chip_power_w(power_dbm)
}

/// Real roots u in (0, 1] of u ((x - k u)^2 + 1) = 1, ascending.
pub fn normalized_roots(k: f64, x: f64) -> ([f64; 3], usize) {
    let g = |u: f64| {
        let d = x - k * u;
        u * (d * d + 1.0) - 1.0
    };
    let dg = |u: f64| 3.0 * k * k * u * u - 4.0 * k * x * u + x * x + 1.0;
    if k == 0.0 {
        return ([1.0 / (x * x + 1.0), 0.0, 0.0], 1);
    }
    let mut edges = [0.0, 1.0, 1.0, 1.0];
    let mut n_edges = 1;
    let disc = x * x - 3.0;
    if disc > 0.0 {
        let root = k.abs() * disc.sqrt();
        let mut crit = [
            (2.0 * k * x - root) / (3.0 * k * k),
            (2.0 * k * x + root) / (3.0 * k * k),
        ];
        crit.sort_by(f64::total_cmp);
        for c in crit {
            if c > 0.0 && c < 1.0 {
                edges[n_edges] = c;
                n_edges += 1;
            }
        }
    }
    edges[n_edges] = 1.0;
    n_edges += 1;

    let mut roots = [0.0; 3];
    let mut count = 0;
    for w in 0..n_edges - 1 {
        let (a, b) = (edges[w], edges[w + 1]);
        let (ga, gb) = (g(a), g(b));
        if ga == 0.0 && w > 0 {
            continue; // already recorded as the right end of the previous piece
        }
        let r = if ga == 0.0 {
            a
        } else if gb == 0.0 {
            b
        } else if (ga < 0.0) != (gb < 0.0) {
            monotone_root(&g, &dg, a, b, ga < 0.0)
        } else {
            continue;
        };
        if count > 0 && (r - roots[count - 1]).abs() <= 4.0 * f64::EPSILON * r {
            continue;
        }
        roots[count] = r;
        count += 1;
    }
    (roots, count)
}

/// Bracketed Newton with bisection fallback on a monotone piece.
fn monotone_root(
    g: &impl Fn(f64) -> f64,
    dg: &impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    increasing: bool,
) -> f64 {
    let mut u = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = g(u);
        if v == 0.0 {
            return u;
        }
        if (v < 0.0) == increasing {
            lo = u;
        } else {
            hi = u;
        }
        let d = dg(u);
        let newton = if d != 0.0 { u - v / d } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - u).abs() <= 2.0 * f64::EPSILON * next.abs()
            || hi - lo <= 2.0 * f64::EPSILON * hi.abs()
        {
            return next;
        }
        u = next;
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ResonatorModel {
        let mut m = ResonatorModel {
            f0_hz: 2.230e9,
            q_loaded: 6200.0,
            baseline_coeffs: [0.0; 4],
            calibration_range_k: [5.0, 35.0],
            participation: Participation {
                p_inf: 0.3,
                lambda_m: 2e-6,
                kappa_trench_per_m: 3e5,
                trench_depth_m: 320e-9,
            },
            kerr_hz_per_photon: -1e-3,
            attenuation_db: 60.0,
            ext_fraction: 0.5,
            heating_k_per_w: 1e8,
            tau_th_s: 120.0,
            peak_transmission: 1.0,
        };
        m.kerr_hz_per_photon = calibrate_kerr(&m, -5.0);
        m
    }

    fn props() -> MaterialProps {
        MaterialProps {
            molar_mass_kg_per_mol: 0.02018,
            rho_solid_kg_per_m3: 1444.0,
            rho_liquid_kg_per_m3: 1247.0,
            eps_solid: 1.22,
            eps_liquid: 1.19,
        }
    }

    #[test]
    fn conformal_participation_at_300_nm() {
        let p = model().participation(300e-9, Morphology::Conformal);
        let oracle = 0.3 * (1.0 - (-0.15f64).exp());
        assert!((p - oracle).abs() < 1e-15);
        assert!((p - 0.0418).abs() < 1e-4);
    }

    #[test]
    fn trench_crossover_is_continuous() {
        let m = model();
        let d = m.participation.trench_depth_m;
        let below = m.participation(d, Morphology::InTrench);
        let above = m.participation(d * (1.0 + 1e-12), Morphology::InTrench);
        assert!((above - below).abs() < 1e-12);
        assert!((below - 3e5 * 320e-9).abs() < 1e-15);
    }

    #[test]
    fn solid_to_liquid_shift_ratio() {
        let m = model();
        let s = m.fractional_shift(1e-6, Branch::Solid, Morphology::Conformal, &props());
        let l = m.fractional_shift(1e-6, Branch::Liquid, Morphology::Conformal, &props());
        assert!((s / l - 22.0 / 19.0).abs() < 1e-12);
        assert!(s < 0.0 && l < 0.0);
        assert_eq!(
            m.fractional_shift(0.0, Branch::Solid, Morphology::InTrench, &props()),
            0.0
        );
    }

    #[test]
    fn zero_baseline_is_flat() {
        let m = model();
        for t in [5.0, 20.0, 35.0] {
            assert_eq!(m.baseline_frequency(t), m.f0_hz);
        }
    }

    #[test]
    fn kerr_calibration_hits_requested_critical_power() {
        let m = model();
        assert!((m.critical_power_dbm() + 5.0).abs() < 1e-9);
        let k = m.normalized_drive(-5.0, m.f0_hz);
        assert!((k + CRITICAL_NORMALIZED_DRIVE).abs() < 1e-9);
        assert!((CRITICAL_NORMALIZED_DRIVE - 8.0 / (3.0 * 3f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn linear_limit_is_lorentzian() {
        for x in [-5.0, -1.0, 0.0, 0.3, 2.0] {
            let (u, n) = normalized_roots(0.0, x);
            assert_eq!(n, 1);
            assert_eq!(u[0], 1.0 / (1.0 + x * x));
        }
    }

    #[test]
    fn root_count_and_residuals() {
        let m = model();
        let f = m.f0_hz;
        let lw = m.linewidth_hz(f);
        for p in [-35.0, -5.5, 5.0] {
            for i in -400..=100 {
                let fd = f + lw * f64::from(i) * 0.05;
                let roots = m.duffing_roots(fd, p, f);
                assert!(
                    roots.len() == 1 || roots.len() == 3,
                    "{} roots",
                    roots.len()
                );
                for &n in roots.as_slice() {
                    assert!(m.duffing_residual(n, fd, p, f) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bistability_only_above_critical() {
        let m = model();
        assert!(m.bistable_window_hz(-6.0, m.f0_hz).is_none());
        let (lo, hi) = m.bistable_window_hz(5.0, m.f0_hz).expect("window at 5 dBm");
        assert!(lo < hi && hi < 0.0);
        let mid = m.f0_hz + 0.5 * (lo + hi);
        assert_eq!(m.duffing_roots(mid, 5.0, m.f0_hz).len(), 3);
    }

    #[test]
    fn heating_decays_with_tau() {
        let m = model();
        let v = m.local_heating_step(1.0, 0.0, 120.0);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.368).abs() < 1e-3);
    }

    #[test]
    fn traces_are_deterministic_with_noise_seed() {
        let m = model();
        let grid: Vec<f64> = (0..101)
            .map(|i| m.f0_hz + f64::from(i - 50) * 1e4)
            .collect();
        let drive = DriveState {
            power_dbm: -30.0,
            f_drive_hz: m.f0_hz,
            delta_t_local_k: 0.0,
        };
        let a = m.s21_trace(&grid, &drive, m.f0_hz, SweepDirection::Up, Some((0.01, 7)));
        let b = m.s21_trace(&grid, &drive, m.f0_hz, SweepDirection::Up, Some((0.01, 7)));
        assert_eq!(a, b);
    }
}
