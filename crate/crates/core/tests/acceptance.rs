//! Acceptance gate. Each criterion prints one PASS or FAIL line with the
//! measured values; the process exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use neonfilm_core::analysis::{
    correct_baseline, eval_poly3, fit_exponential, fit_lorentzian, fit_poly3, invert_thickness,
    line_shape, poly3_coefficients,
};
use neonfilm_core::engine::telemetry::write_jsonl;
use neonfilm_core::engine::{
    campaign_csv, campaign_stats, run_campaign, simulate, Campaign, Flag, RunOptions, RunOutput,
    RunStatus,
};
use neonfilm_core::resonator::{DriveState, SweepDirection};
use neonfilm_core::{Branch, Model, Morphology, Scenario};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn scenario(name: &str) -> Result<Scenario, String> {
    Scenario::load(&repo(&format!("scenarios/{name}.json"))).map_err(|e| e.to_string())
}

fn run(name: &str, opts: &RunOptions) -> Result<(RunOutput, f64), String> {
    let s = scenario(name)?;
    let start = Instant::now();
    let out = simulate(&s, opts).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if out.summary.status != RunStatus::Completed {
        return Err(format!("{name} aborted: {:?}", out.summary.message));
    }
    Ok((out, secs))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn onsets() -> Outcome {
    let (blue, t_blue) = run("fig3_blue", &RunOptions::default())?;
    let (orange, t_orange) = run("fig3_orange", &RunOptions::default())?;
    let liquid = blue
        .summary
        .liquid_onset_k
        .ok_or("no liquid onset in the 0.008 mol run")?;
    let solid = orange
        .summary
        .solid_onset_k
        .ok_or("no solid onset in the 0.003 mol run")?;
    check(
        (liquid - 26.0).abs() <= 0.3 && (solid - 23.8).abs() <= 0.3 && t_blue < 10.0 && t_orange < 10.0,
        format!(
            "liquid onset {liquid:.3} K (26.0 +/- 0.3), solid onset {solid:.3} K (23.8 +/- 0.3), runtimes {t_blue:.2} s / {t_orange:.2} s (< 10 s)"
        ),
    )
}

fn latent_heat() -> Outcome {
    let (blue, _) = run("fig3_blue", &RunOptions::default())?;
    let (orange, _) = run("fig3_orange", &RunOptions::default())?;
    let sig = blue
        .summary
        .latent_signature
        .ok_or("no triple crossing in the 0.008 mol run")?;
    let kink = orange
        .summary
        .onset_kink
        .ok_or("no onset kink measured in the 0.003 mol run")?;
    check(
        sig.reduction >= 0.5 && kink.kink && kink.flag == Flag::SolidOnset,
        format!(
            "|dT/dt| at crossing {:.3e} K/s vs ramp {:.3e} K/s, reduction {:.1}% (>= 50%); deposition onset slope change {:.1}% at {:.2} K, kink {}",
            sig.freezing_rate_k_per_s,
            sig.ramp_rate_k_per_s,
            100.0 * sig.reduction,
            100.0 * kink.relative_change,
            kink.onset_k,
            kink.kink
        ),
    )
}

fn wetting_and_ratio() -> Outcome {
    let (blue, _) = run("fig3_blue", &RunOptions::default())?;
    let (orange, _) = run("fig3_orange", &RunOptions::default())?;
    let t_cross = blue
        .summary
        .triple_crossing_t_s
        .ok_or("no triple crossing")?;
    let peak = blue.summary.peak_liquid_thickness_m.unwrap_or(0.0);
    let after: Vec<_> = blue.records.iter().filter(|r| r.t_s >= t_cross).collect();
    let at_cross = after
        .first()
        .ok_or("no records after the crossing")?
        .d_local_m;
    let trough = after
        .iter()
        .map(|r| r.d_local_m)
        .fold(f64::INFINITY, f64::min);
    let regrowth = blue
        .records
        .iter()
        .any(|r| r.has(Flag::SolidGrowth) && r.t_s >= t_cross);
    let d_blue = blue
        .summary
        .final_solid_thickness_m
        .ok_or("0.008 mol run ended without solid")?;
    let d_orange = orange
        .summary
        .final_solid_thickness_m
        .ok_or("0.003 mol run ended without solid")?;
    let excess = 100.0 * (d_blue / d_orange - 1.0);
    check(
        peak > 0.0 && trough < 0.5 * at_cross && d_blue > trough && regrowth && (excess - 6.0).abs() <= 4.0,
        format!(
            "peak liquid {:.2} um, thinned {:.2} um -> {:.1} nm, regrown to {:.1} nm; final 0.008 / 0.003 mol = {:.1} / {:.1} nm, excess {excess:.2} pp (6 +/- 4)",
            peak * 1e6,
            at_cross * 1e6,
            trough * 1e9,
            d_blue * 1e9,
            d_blue * 1e9,
            d_orange * 1e9
        ),
    )
}

fn campaign_statistics() -> Outcome {
    let c = Campaign::load(&repo("scenarios/fig4b.json")).map_err(|e| e.to_string())?;
    let cap = c
        .model()
        .map_err(|e| e.to_string())?
        .solidify
        .d_cap_highpower_m;
    let start = Instant::now();
    let parallel = run_campaign(&c, 8).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let serial = run_campaign(&c, 1).map_err(|e| e.to_string())?;
    let identical = campaign_csv(&serial) == campaign_csv(&parallel);
    let rates: Vec<f64> = parallel.iter().map(|r| r.rate_k_per_min).collect();
    let rate_span = rates.iter().all(|r| (0.03..=0.7).contains(r));
    let stats = campaign_stats(&parallel, &c.statistics, cap);
    let r = stats.pearson_r.ok_or("correlation undefined")?;
    let span = stats.thick_liquid.decades.unwrap_or(0.0);
    check(
        parallel.len() == 364 && stats.failed == 0 && rate_span && (r - 0.6).abs() <= 0.1 && span >= 2.5 && secs < 120.0 && identical,
        format!(
            "{} events, {} failed, r = {r:.3} (0.6 +/- 0.1), thick-liquid cohort ({} events) spans {span:.2} decades (>= 2.5), 8-worker runtime {secs:.1} s (< 120 s), serial == parallel: {identical}",
            parallel.len(),
            stats.failed,
            stats.thick_liquid.events
        ),
    )
}

fn power_control() -> Outcome {
    let c = Campaign::load(&repo("scenarios/fig5de.json")).map_err(|e| e.to_string())?;
    let cap = c
        .model()
        .map_err(|e| e.to_string())?
        .solidify
        .d_cap_highpower_m;
    let records = run_campaign(&c, 4).map_err(|e| e.to_string())?;
    let stats = campaign_stats(&records, &c.statistics, cap);
    let group = |p: f64| {
        stats
            .groups
            .iter()
            .find(|g| g.power_dbm == p)
            .ok_or(format!("no {p} dBm group"))
    };
    let high = group(5.0)?;
    let low = group(-54.0)?;
    let low_span = low.decades.unwrap_or(0.0);
    let high_max = high.d_solid_max_m.ok_or("no 5 dBm thickness")?;
    check(
        high.events == 45 && high.all_below_cap && high_max < 100e-9 && low.events == 45 && low_span >= 2.0,
        format!(
            "5 dBm: {} events, max d_solid {:.1} nm (< 100 nm); -54 dBm: {} events spanning {low_span:.2} decades (>= 2)",
            high.events,
            high_max * 1e9,
            low.events
        ),
    )
}

fn relaxation() -> Outcome {
    let (out, _) = run("relaxation", &RunOptions::default())?;
    let tau_th = Model::default_calibrated().resonator.tau_th_s;
    // the power returns to -35 dBm at t = 720 s
    let tail: Vec<_> = out.records.iter().filter(|r| r.t_s > 720.0).collect();
    let t: Vec<f64> = tail.iter().map(|r| r.t_s).collect();
    let df: Vec<f64> = tail.iter().map(|r| r.df_corr_hz).collect();
    let heat: Vec<f64> = tail.iter().map(|r| r.delta_t_local_k).collect();
    let f_fit = fit_exponential(&t, &df).map_err(|e| e.to_string())?;
    let h_fit = fit_exponential(&t, &heat).map_err(|e| e.to_string())?;
    let tau_f = f_fit.get("tau_s").ok_or("no tau")?;
    let tau_h = h_fit.get("tau_s").ok_or("no tau")?;
    let ef = (tau_f / tau_th - 1.0).abs();
    let eh = (tau_h / tau_th - 1.0).abs();
    check(
        f_fit.converged && h_fit.converged && ef <= 0.02 && eh <= 0.05,
        format!(
            "frequency tau {tau_f:.2} s ({:.2}% from {tau_th} s, <= 2%), heating tau {tau_h:.2} s ({:.2}%, <= 5%)",
            100.0 * ef,
            100.0 * eh
        ),
    )
}

fn duffing() -> Outcome {
    let m = Model::default_calibrated();
    let r = &m.resonator;
    let f0 = r.f0_hz;
    let lw = r.linewidth_hz(f0);
    let grid: Vec<f64> = (0..=20_000)
        .map(|i| f0 - 5.0 * lw + 10.0 * lw * f64::from(i) / 20_000.0)
        .collect();
    let mut worst = (0.0f64, 0.0f64);
    for p in [-20.0, -25.0, -30.0, -35.0, -40.0, -54.0] {
        let drive = DriveState {
            power_dbm: p,
            f_drive_hz: f0,
            delta_t_local_k: 0.0,
        };
        let s = r.s21_trace(&grid, &drive, f0, SweepDirection::Up, None);
        let shape = line_shape(&grid, &s).map_err(|e| e.to_string())?;
        if shape.asymmetry.abs() > worst.1.abs() {
            worst = (p, shape.asymmetry);
        }
    }
    let at = |p: f64| {
        let drive = DriveState {
            power_dbm: p,
            f_drive_hz: f0,
            delta_t_local_k: 0.0,
        };
        line_shape(
            &grid,
            &r.s21_trace(&grid, &drive, f0, SweepDirection::Up, None),
        )
        .map(|s| s.asymmetry)
    };
    let a20 = at(-20.0).map_err(|e| e.to_string())?;
    let a35 = at(-35.0).map_err(|e| e.to_string())?;
    let window = r.bistable_window_hz(5.0, f0);
    let p_c = r.critical_power_dbm();
    let symmetric = worst.1.abs() < 1e-3;
    check(
        symmetric && window.is_some_and(|(a, b)| b > a) && (p_c + 5.0).abs() <= 1.0,
        format!(
            "skew/linewidth at -20 dBm {a20:.2e}, at -35 dBm {a35:.2e}, worst over [-54, -20] dBm {:.2e} at {} dBm (< 1e-3); 5 dBm three-root window {}; critical power {p_c:.2} dBm (-5 +/- 1)",
            worst.1.abs(),
            worst.0,
            match window {
                Some((a, b)) => format!("{:.1} kHz wide", (b - a) / 1e3),
                None => "absent".into(),
            }
        ),
    )
}

fn fitting_oracles() -> Outcome {
    let (f0, q) = (2.230e9_f64, 6200.0_f64);
    let fwhm = f0 / q;
    let f: Vec<f64> = (0..=600)
        .map(|i| f0 - 4.0 * fwhm + 8.0 * fwhm * f64::from(i) / 600.0)
        .collect();
    let s: Vec<f64> = f
        .iter()
        .map(|x| {
            let u = 2.0 * q * (x - f0) / f0;
            0.9 / (1.0 + u * u) + 0.02
        })
        .collect();
    let lor = fit_lorentzian(&f, &s).map_err(|e| e.to_string())?;
    let df = (lor.get("f_res_hz").ok_or("no f_res")? - f0).abs();
    let dq = (lor.get("q").ok_or("no q")? / q - 1.0).abs();
    let width = lor.get("fwhm_hz").ok_or("no fwhm")?;

    let m = Model::default_calibrated();
    let r = &m.resonator;
    let temps: Vec<f64> = (0..=60)
        .map(|i| r.calibration_range_k[0] + 0.5 * f64::from(i))
        .collect();
    let f_t: Vec<f64> = temps.iter().map(|&t| r.baseline_frequency(t)).collect();
    let cubic = fit_poly3(&temps, &f_t).map_err(|e| e.to_string())?;
    let coeffs = poly3_coefficients(&cubic).ok_or("no coefficients")?;
    let mut base_err = 0.0f64;
    let mut corr_err = 0.0f64;
    for (&t, &fv) in temps.iter().zip(&f_t) {
        base_err = base_err.max(((eval_poly3(&coeffs, t) - fv) / fv).abs());
        let c = correct_baseline(fv, t, &coeffs, r.calibration_range_k);
        corr_err = corr_err.max((c.df_hz / fv).abs());
    }

    let mut inv_err = 0.0f64;
    for phase in [Branch::Liquid, Branch::Solid] {
        for morph in [Morphology::Conformal, Morphology::InTrench] {
            for i in 0..=2000 {
                let d = 20e-6 * f64::from(i) / 2000.0;
                let shift = r.fractional_shift(d, phase, morph, &m.props);
                let back = invert_thickness(shift, phase, morph, r, &m.props)
                    .map_err(|e| e.to_string())?;
                inv_err = inv_err.max((back - d).abs());
            }
        }
    }
    check(
        lor.converged && df <= 1.0 && dq <= 1e-4 && base_err <= 1e-9 && corr_err <= 1e-9 && inv_err <= 0.01e-9,
        format!(
            "Lorentzian f_res off by {df:.3} Hz (<= 1), Q off by {:.2e} (<= 1e-4), FWHM {:.2} kHz; cubic baseline max rel. error {base_err:.1e} (<= 1e-9); thickness inversion max error {:.2e} nm on [0, 20 um] (<= 0.01)",
            dq,
            width / 1e3,
            inv_err * 1e9
        ),
    )
}

fn conservation_and_determinism() -> Outcome {
    let mut worst = 0.0f64;
    for name in ["fig3_blue", "fig3_orange", "quench", "relaxation", "idle"] {
        let (out, _) = run(name, &RunOptions::default())?;
        worst = worst.max(out.summary.max_conservation_error_mol);
    }
    let mut identical = true;
    for name in ["fig3_blue", "quench"] {
        let opts = RunOptions {
            seed: Some(7),
            ..Default::default()
        };
        let (a, _) = run(name, &opts)?;
        let (b, _) = run(name, &opts)?;
        let (mut ja, mut jb) = (Vec::new(), Vec::new());
        write_jsonl(&mut ja, &a.records).map_err(|e| e.to_string())?;
        write_jsonl(&mut jb, &b.records).map_err(|e| e.to_string())?;
        identical &= ja == jb;
    }
    let mut worst_dt = 0.0f64;
    for name in ["fig3_blue", "fig3_orange"] {
        let dt = scenario(name)?.dt_s;
        let (a, _) = run(name, &RunOptions::default())?;
        let (b, _) = run(
            name,
            &RunOptions {
                dt_s: Some(dt / 2.0),
                ..Default::default()
            },
        )?;
        let (da, db) = (
            a.summary.final_solid_thickness_m.ok_or("no solid")?,
            b.summary.final_solid_thickness_m.ok_or("no solid")?,
        );
        worst_dt = worst_dt.max((db / da - 1.0).abs());
    }
    check(
        worst <= 1e-12 && identical && worst_dt < 0.01,
        format!(
            "max mole imbalance {worst:.1e} mol (<= 1e-12), seeded reruns bitwise identical: {identical}, dt halving moves final d_solid by {:.2e} (< 1%)",
            worst_dt
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("onset reproduction", onsets),
        ("latent-heat signature", latent_heat),
        ("triple-point wetting and 6% result", wetting_and_ratio),
        ("campaign statistics", campaign_statistics),
        ("power control", power_control),
        ("relaxation", relaxation),
        ("duffing", duffing),
        ("fitting oracles", fitting_oracles),
        ("conservation and determinism", conservation_and_determinism),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
