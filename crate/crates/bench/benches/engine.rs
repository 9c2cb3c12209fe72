use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use neonfilm_core::analysis::{fit_lorentzian, invert_thickness};
use neonfilm_core::engine::{run_campaign, simulate, Campaign, RunOptions};
use neonfilm_core::{Branch, Model, Morphology, Scenario, Simulation};

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn sim_step(c: &mut Criterion) {
    let scenario = Scenario::load(&repo("scenarios/fig3_blue.json")).unwrap();
    c.bench_function("sim_step_1000", |b| {
        b.iter_batched(
            || Simulation::from_scenario(&scenario).unwrap(),
            |mut sim| {
                for _ in 0..1000 {
                    sim.step().unwrap();
                }
                sim
            },
            BatchSize::SmallInput,
        )
    });
    c.bench_function("simulate_fig3_blue", |b| {
        b.iter(|| simulate(black_box(&scenario), &RunOptions::default()).unwrap())
    });
}

fn analysis(c: &mut Criterion) {
    let (f0, q) = (2.23e9_f64, 6200.0_f64);
    let fwhm = f0 / q;
    let f: Vec<f64> = (0..=400)
        .map(|i| f0 - 4.0 * fwhm + 8.0 * fwhm * f64::from(i) / 400.0)
        .collect();
    let s: Vec<f64> = f
        .iter()
        .map(|x| {
            let u = 2.0 * q * (x - f0) / f0;
            0.8 / (1.0 + u * u) + 0.05
        })
        .collect();
    c.bench_function("fit_lorentzian_401", |b| {
        b.iter(|| fit_lorentzian(black_box(&f), black_box(&s)).unwrap())
    });

    let m = Model::default_calibrated();
    let shift = m
        .resonator
        .fractional_shift(3e-6, Branch::Solid, Morphology::Conformal, &m.props);
    c.bench_function("invert_thickness", |b| {
        b.iter(|| {
            invert_thickness(
                black_box(shift),
                Branch::Solid,
                Morphology::Conformal,
                &m.resonator,
                &m.props,
            )
            .unwrap()
        })
    });
}

fn campaign(c: &mut Criterion) {
    let campaign = Campaign::load(&repo("scenarios/fig5de.json")).unwrap();
    let mut group = c.benchmark_group("campaign");
    group.sample_size(10);
    group.bench_function("fig5de_jobs1", |b| {
        b.iter(|| run_campaign(&campaign, 1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, sim_step, analysis, campaign);
criterion_main!(benches);
