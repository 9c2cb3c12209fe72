use std::sync::OnceLock;

use neonfilm_core::analysis::{histogram_log, invert_thickness, pearson};
use neonfilm_core::engine::InitialConditions;
use neonfilm_core::film::{power_thinning_liquid, sigma_for_correlation, solidify_across_triple};
use neonfilm_core::resonator::{normalized_roots, CRITICAL_NORMALIZED_DRIVE};
use neonfilm_core::thermo::equilibrium_partition;
use neonfilm_core::{Branch, Command, Model, Morphology, Simulation};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(Model::default_calibrated)
}

fn branch() -> impl Strategy<Value = Branch> {
    prop_oneof![Just(Branch::Liquid), Just(Branch::Solid)]
}

fn morphology() -> impl Strategy<Value = Morphology> {
    prop_oneof![Just(Morphology::Conformal), Just(Morphology::InTrench)]
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        (0.01..10.0f64, 18.0..30.0f64).prop_map(|(rate_k_per_min, target_k)| Command::SetRamp {
            rate_k_per_min,
            target_k
        }),
        (-80.0..20.0f64).prop_map(|dbm| Command::SetPower { dbm }),
        (0.0..2e-3f64, 0.5..100.0f64)
            .prop_map(|(moles, flow_sccm)| Command::Inject { moles, flow_sccm }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn moles_are_conserved_under_any_commands(
        t0 in 20.0..30.0f64,
        n0 in 0.0..0.01f64,
        cmds in prop::collection::vec((command(), 1usize..400), 1..6),
        seed in any::<u64>(),
    ) {
        let init = InitialConditions { t_cell_k: t0, n_total_mol: n0, power_dbm: -30.0 };
        let mut sim = Simulation::new(model().clone(), &init, 0.5, seed).unwrap();
        let mut injected = 0.0;
        for (cmd, steps) in cmds {
            sim.apply(&cmd).unwrap();
            for _ in 0..steps {
                let before = sim.injection().map_or(0.0, |i| i.remaining_mol);
                sim.step().unwrap();
                injected += before - sim.injection().map_or(0.0, |i| i.remaining_mol);
                let c = sim.cell();
                prop_assert!((c.n_gas + c.n_liquid + c.n_solid - c.n_total).abs() < 1e-12);
                prop_assert!(c.n_gas >= 0.0 && c.n_liquid >= 0.0 && c.n_solid >= 0.0);
                let f = sim.film();
                prop_assert!((f.n_local_mol + f.n_remote_mol - c.n_liquid - c.n_solid).abs() < 1e-12);
                prop_assert!(f.d_local_m >= 0.0);
            }
        }
        prop_assert!((sim.cell().n_total - n0 - injected).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn partition_is_idempotent(n in 0.0..0.02f64, t in 15.0..35.0f64) {
        let m = model();
        let p = equilibrium_partition(n, t, &m.geometry, &m.diagram);
        prop_assert!((p.n_gas + p.n_condensed - n).abs() <= 1e-15);
        prop_assert!(p.n_gas >= 0.0 && p.n_condensed >= 0.0);
        let again = equilibrium_partition(p.n_gas + p.n_condensed, t, &m.geometry, &m.diagram);
        prop_assert!((again.n_gas - p.n_gas).abs() <= 1e-15);
        prop_assert_eq!(again.phase, p.phase);
    }

    #[test]
    fn more_gas_never_lowers_pressure(n in 0.0..0.02f64, extra in 0.0..0.005f64, t in 15.0..35.0f64) {
        let m = model();
        let a = equilibrium_partition(n, t, &m.geometry, &m.diagram);
        let b = equilibrium_partition(n + extra, t, &m.geometry, &m.diagram);
        prop_assert!(b.pressure_pa >= a.pressure_pa * (1.0 - 1e-12));
    }

    #[test]
    fn thickness_inversion_round_trips(d in 0.0..20e-6f64, phase in branch(), morph in morphology()) {
        let m = model();
        let shift = m.resonator.fractional_shift(d, phase, morph, &m.props);
        prop_assert!(shift <= 0.0);
        let back = invert_thickness(shift, phase, morph, &m.resonator, &m.props).unwrap();
        prop_assert!((back - d).abs() < 1e-11, "{} vs {}", back, d);
    }

    #[test]
    fn participation_is_monotone(d in 0.0..50e-6f64, step in 1e-12..1e-6f64, morph in morphology()) {
        let r = &model().resonator;
        prop_assert!(r.participation(d + step, morph) >= r.participation(d, morph));
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 5..60),
        a in 0.1..10.0f64,
        b in -10.0..10.0f64,
    ) {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson(&xs, &y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((pearson(&x, &neg).unwrap() + r).abs() < 1e-9);
            prop_assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn duffing_has_one_or_three_steady_states(k in -5.0..5.0f64, x in -8.0..8.0f64) {
        let (roots, count) = normalized_roots(k, x);
        prop_assert!(count == 1 || count == 3);
        if k.abs() < CRITICAL_NORMALIZED_DRIVE * 0.999 {
            prop_assert_eq!(count, 1);
        }
        for &u in &roots[..count] {
            prop_assert!(u > 0.0 && u <= 1.0 + 1e-12);
            let d = x - k * u;
            prop_assert!((u * (d * d + 1.0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn resonator_roots_satisfy_steady_state(detune in -5.0..5.0f64, dbm in -60.0..15.0f64) {
        let r = &model().resonator;
        let f = r.f0_hz;
        let drive = f + detune * r.linewidth_hz(f);
        for &n in r.duffing_roots(drive, dbm, f).as_slice() {
            prop_assert!(r.duffing_residual(n, drive, dbm, f) < 1e-9);
        }
    }

    #[test]
    fn high_power_draws_respect_cap(d_liquid in 1e-9..50e-6f64, dbm in 0.0..20.0f64, seed in any::<u64>()) {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = solidify_across_triple(d_liquid, dbm, &m.solidify, m.film.d_wetting_m, &mut rng);
        prop_assert!(out.d_solid_m < m.solidify.d_cap_highpower_m);
        prop_assert!(out.d_solid_m > 0.0);
    }

    #[test]
    fn liquid_thins_with_heating(d0 in 1e-9..1e-5f64, dt in 0.0..1.0f64, extra in 1e-6..1.0f64) {
        let scale = model().film.thinning_scale_k;
        let a = power_thinning_liquid(d0, dt, scale);
        let b = power_thinning_liquid(d0, dt + extra, scale);
        prop_assert!(b < a);
        prop_assert_eq!(power_thinning_liquid(d0, 0.0, scale), d0);
    }

    #[test]
    fn histogram_counts_every_positive_sample(d in prop::collection::vec(1e-10..1e-3f64, 1..200)) {
        let h = histogram_log(&d, 0.25).unwrap();
        prop_assert_eq!(h.total(), d.len());
        prop_assert!(h.edges_m.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn scatter_formula_hits_target_correlation() {
    // log-normal liquid population, draws straight from the log law
    let beta = 1.0;
    let s_l = 0.5;
    let target = 0.6;
    let sigma = sigma_for_correlation(beta, s_l, target);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..364)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                -5.5 + s_l * z
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                beta * v - 0.2 + sigma * z
            })
            .collect();
        let r = pearson(&x, &y).unwrap();
        assert!((r - target).abs() < 0.1, "seed {seed}: r = {r}");
    }
}
