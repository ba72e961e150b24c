//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs the full case study, so expect a few minutes.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nfisac_cli::commands::{log_spaced, run_complexity, run_rate, run_sensing, run_sinr, run_training, tables};
use nfisac_cli::ScenarioConfig;
use nfisac_core::codebook::{build_dft_codebook, default_min_range};
use nfisac_core::detection::{ca_cfar, CfarAxis, CfarConfig};
use nfisac_core::evaluation::{average_rate_curve, complexity_report, transverse_resolution, Scheme};
use nfisac_core::geometry::{ebrd, rayleigh_distance, ArrayGeometry, PolarPoint};
use nfisac_core::linalg::c64;
use nfisac_core::scene::range_bin_of;
use nfisac_core::scene::{ClutterModel, Scene, Target, VelocityVector, WaveformParams};
use nfisac_core::spread::{coarse_estimate, measure_spread, sweep_at, DEFAULT_THRESHOLD_DB};
use nfisac_core::stap::{
    clutter_covariance, doppler_grid, scan_bins, space_time_steering_ff, space_time_steering_nf,
    toeplitz_block_toeplitz_residual, MapStatistic, ReductionMatrix, ScanConfig, Wavefront,
};
use nfisac_core::training::simulate_sweep;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn case_study() -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/case_study.json");
    ScenarioConfig::load(&path).expect("case-study preset")
}

/// Criteria 1 and 2 share the 20 case-study runs.
fn detection_criteria(cache: &Path) -> (Outcome, Outcome) {
    let base = case_study();
    let (dft, table, _) = tables(&base, cache).expect("tables");
    let params = base.waveform().unwrap();
    let dv = params.velocity_resolution();
    let truth = base.targets().unwrap();
    let mut good = 0;
    let mut slowest: f64 = 0.0;
    let mut worst_null = f64::INFINITY;
    let mut notes = Vec::new();
    for seed in 0..20u64 {
        let start = Instant::now();
        let cfg = ScenarioConfig { seed, ..base.clone() };
        let report = run_training(&cfg, &dft, &table, false).unwrap();
        let sensed = match run_sensing(&cfg, &report, false) {
            Ok(s) => s,
            Err(e) => {
                notes.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let step = (report.candidate_angles[1] - report.candidate_angles[0]).abs().to_degrees();
        let det = &sensed.detections;
        let matched = det.len() == 2
            && truth.iter().all(|t| {
                det.iter().any(|d| {
                    (d.range_m - t.position.range()).abs() <= 0.375
                        && (d.velocity_mps - t.velocity.radial).abs() <= dv
                        && (d.angle_deg - t.position.angle_deg()).abs() <= step
                })
            });
        if matched {
            good += 1;
        } else {
            notes.push(format!("seed {seed}: {} detections", det.len()));
        }

        // Zero-Doppler level at the target bins against the weaker target peak.
        let map = &sensed.map;
        let (nr, nd, na) = map.shape();
        let zero = map.dopplers.iter().position(|&f| f == 0.0).unwrap();
        let target_rows: Vec<usize> = truth
            .iter()
            .filter_map(|t| {
                let bin = range_bin_of(&params, t.position.range()).ok()?;
                map.range_bins.iter().position(|&b| b == bin)
            })
            .collect();
        let peak_of = |r: usize| {
            (0..nd).filter(|&d| d.abs_diff(zero) > 2).flat_map(|d| (0..na).map(move |a| (d, a))).fold(
                0.0f64,
                |m, (d, a)| m.max(map.get(r, d, a)),
            )
        };
        let weakest_peak = target_rows.iter().map(|&r| peak_of(r)).fold(f64::INFINITY, f64::min);
        for &r in &target_rows {
            let z = (0..na).map(|a| map.get(r, zero, a)).fold(0.0, f64::max);
            worst_null = worst_null.min(10.0 * (weakest_peak / z).log10());
        }
        let _ = nr;
    }
    let c1 = outcome(
        good >= 18 && slowest < 60.0,
        format!("{good}/20 seeds with exactly the two targets in tolerance; slowest seed {slowest:.1} s {notes:?}"),
    );
    let c2 = outcome(worst_null >= 20.0, format!("zero-Doppler at target bins is at least {worst_null:.1} dB below the target peaks"));
    (c1, c2)
}

fn sinr_criteria(golden: &mut Vec<(&'static str, f64)>) -> (Outcome, Outcome) {
    let cfg = case_study();
    let m = cfg.waveform.m_pulses;
    let n_c = cfg.evaluation.sinr.n_c;
    let curve = run_sinr(&cfg, Some(4 * m * n_c)).unwrap();
    let gaps: Vec<f64> = [-5.0, 5.0]
        .iter()
        .map(|&v| {
            let i = curve.nearest(v);
            curve.nf_stap_db[i] - curve.conventional_db[i]
        })
        .collect();
    let gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    golden.push(("sinr_gap_at_5mps_db", gap));
    let c3 = outcome(gap >= 10.0, format!("nf-stap minus conventional at |v| = 5 m/s: {gap:.2} dB (floor 10 dB)"));

    let loss4 = curve.mean_adaptive_loss();
    let curve2 = run_sinr(&cfg, Some(2 * m * n_c)).unwrap();
    let loss2 = curve2.mean_adaptive_loss();
    golden.push(("mean_loss_k4_db", loss4));
    golden.push(("mean_loss_k2_db", loss2));
    let c4 = outcome(
        loss4 <= 3.0 && loss2 <= 4.0,
        format!("mean loss to optimal: {loss4:.3} dB at K = 4 M n_c, {loss2:.3} dB at K = 2 M n_c"),
    );
    (c3, c4)
}

fn complexity_criterion() -> Outcome {
    let exact = complexity_report(256, 128, 256, 8, 8).unwrap();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut presets = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ScenarioConfig::load(&path).unwrap();
            let factor = run_complexity(&cfg).unwrap().reduction_factor;
            presets.push((path.file_name().unwrap().to_string_lossy().into_owned(), factor));
        }
    }
    let pass = exact.reduction_factor == 1_048_576.0
        && exact.full_ops / exact.reduced_ops == 1_048_576
        && !presets.is_empty()
        && presets.iter().all(|(_, f)| *f >= 1000.0);
    outcome(pass, format!("case factor {}; presets {presets:?}", exact.reduction_factor))
}

fn spread_criterion() -> Outcome {
    let g = ArrayGeometry::half_wavelength(256, 28e9).unwrap();
    let dft = build_dft_codebook(&g, 1).unwrap();
    let count = |r: f64, angle: f64| {
        let p = PolarPoint::new(r, angle).unwrap();
        measure_spread(&sweep_at(&dft, &p), DEFAULT_THRESHOLD_DB).unwrap().spread_count
    };
    // 20 ranges whose halves stay outside the reactive zone, 10 angles from
    // boresight to 81 degrees.
    let e = ebrd(&g, 0.0).unwrap();
    let ranges = log_spaced(2.0 * default_min_range(&g), e, 20);
    let angles: Vec<f64> = (0..10).map(|i| (9.0 * i as f64).to_radians()).collect();
    let mut halving_failures = Vec::new();
    let mut angle_failures = Vec::new();
    for &r in &ranges {
        let (near, far) = (count(r / 2.0, 0.0), count(r, 0.0));
        if near <= far {
            halving_failures.push((r, near, far));
        }
        let boresight = count(r, 0.0);
        for &a in &angles[1..] {
            if count(r, a) > boresight {
                angle_failures.push((r, a.to_degrees()));
            }
        }
    }
    outcome(
        halving_failures.is_empty() && angle_failures.is_empty(),
        format!(
            "20 x 10 grid: halving violations {halving_failures:?}, boresight < off-axis at {angle_failures:?}"
        ),
    )
}

fn lookup_criterion(cache: &Path) -> Outcome {
    let cfg = case_study();
    let (dft, table, _) = tables(&cfg, cache).unwrap();
    let grid = table.grid();
    let exact = table.entries().iter().enumerate().filter(|(i, e)| grid[table.best_match(e)] == grid[*i]).count();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 500;
    let mut hits = 0;
    for _ in 0..trials {
        let i = rng.random_range(0..grid.len());
        let (gains, _) = simulate_sweep(&dft, &grid[i], Some(20.0), &mut rng);
        let meas = measure_spread(&gains, table.threshold_db()).unwrap();
        if coarse_estimate(&table, &meas) == grid[i] {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    outcome(
        exact == grid.len() && rate >= 0.9,
        format!("noiseless {exact}/{}; 20 dB sweep SNR {hits}/{trials} ({:.1}%)", grid.len(), 100.0 * rate),
    )
}

fn transverse_criterion() -> Outcome {
    let cfg = case_study();
    let g = cfg.geometry().unwrap();
    let p = cfg.waveform().unwrap();
    let e = ebrd(&g, 0.0).unwrap();
    // Ten points strictly inside (2 D, EBRD).
    let lo = 2.0 * g.aperture();
    let d: Vec<f64> = (1..=10).map(|i| lo * (e / lo).powf(i as f64 / 11.0)).collect();
    let res = transverse_resolution(&g, &p, 0.0, &d).unwrap();
    let monotone = res.windows(2).all(|w| w[1] >= w[0]) && res.iter().all(|v| v.is_finite());
    let beyond = transverse_resolution(&g, &p, 0.0, &[1.01 * rayleigh_distance(&g), 3.0 * rayleigh_distance(&g)]).unwrap();
    outcome(
        monotone && beyond.iter().all(|v| v.is_infinite()),
        format!(
            "resolution {:.3}..{:.3} m/s over {:.2}..{:.2} m; beyond Rayleigh {beyond:?}",
            res[0],
            res[9],
            d[0],
            d[9]
        ),
    )
}

fn rate_criterion(cache: &Path, golden: &mut Vec<(&'static str, f64)>) -> Outcome {
    let cfg = case_study();
    let (_, table, _) = tables(&cfg, cache).unwrap();
    let (curve, e) = run_rate(&cfg, &table).unwrap();
    let violation = curve.ordering_violation(e);
    let g = cfg.geometry().unwrap();
    let rc = nfisac_cli::commands::rate_config(&cfg, &g);
    let lo = default_min_range(&g);
    let at = average_rate_curve(&g, &table, &[0.1 * e], &rc, 0.5 * (lo + e)).unwrap();
    let deficit = 10.0 * (at.gain(Scheme::PerfectCsi)[0] / at.gain(Scheme::FarField)[0]).log10();
    golden.push(("rate_ordering_violation_bps_hz", violation));
    golden.push(("ff_deficit_at_tenth_ebrd_db", deficit));
    let points = curve.distances.iter().filter(|&&d| d <= e).count();
    outcome(
        violation <= 0.05 && deficit > 3.0,
        format!("ordering violation {violation:.4} bps/Hz over {points} points <= EBRD {e:.2} m; FF deficit at 0.1 EBRD {deficit:.2} dB"),
    )
}

fn cfar_criterion() -> Outcome {
    let cfg = CfarConfig { pfa: 1e-3, train_cells: 8, guard_cells: 2, axis: CfarAxis::Doppler };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut alarms, mut cells) = (0usize, 0usize);
    while cells < 1_000_000 {
        let slice: Vec<f64> = (0..1000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        alarms += ca_cfar(&slice, &cfg).unwrap().len();
        cells += slice.len();
    }
    let rate = alarms as f64 / cells as f64;
    outcome(
        rate >= 1e-3 / 1.5 && rate <= 1e-3 * 1.5,
        format!("{alarms} alarms in {cells} cells: rate {rate:.3e} for Pfa 1e-3"),
    )
}

fn oracle_criterion() -> Outcome {
    // FF limit of the space-time steering at the case-study array.
    let cfg = case_study();
    let g = cfg.geometry().unwrap();
    let p = cfg.waveform().unwrap();
    let mut worst_corr: f64 = 1.0;
    for (angle, omega) in [(0.0, 0.05), (0.3, 0.07), (-0.8, -0.2)] {
        let pt = PolarPoint::new(100.0 * rayleigh_distance(&g), angle).unwrap();
        let vel = VelocityVector::radial(p.velocity_of(omega));
        let nf = space_time_steering_nf(&g, &p, &pt, &vel).unwrap();
        let ff = space_time_steering_ff(&g, angle, omega, p.n_pulses).unwrap();
        worst_corr = worst_corr.min(nf.inner(&ff).norm());
    }

    // Reduction identity on a small scene.
    let small = ArrayGeometry::half_wavelength(8, 28e9).unwrap();
    let sp = WaveformParams { prf: 6.25e6, n_pulses: 8, sample_rate: 400e6, bandwidth: 400e6, carrier_freq: 28e9 };
    let target = Target {
        position: PolarPoint::new(sp.bin_width() * 30.0, 0.1).unwrap(),
        velocity: VelocityVector::radial(2000.0),
        amplitude: c64::new(1.0, 0.0),
    };
    let clutter = ClutterModel { patches_per_bin: 12, cnr_db: 20.0, sector: (-1.2, 1.2), seed: 8, doppler_jitter: 0.0 };
    let scene = Scene::new(small, sp, vec![target], Some(clutter), 1.0, 8).unwrap();
    let dopplers = doppler_grid(8);
    let mut worst_rel: f64 = 0.0;
    for statistic in [MapStatistic::Unnormalized, MapStatistic::Amf, MapStatistic::Mvdr] {
        let sc = ScanConfig { k_cells: 40, guard: 1, loading: 1.0, statistic };
        let full = scan_bins(&scene, &small, &[29, 30, 31], &[0.0, 0.1], &dopplers, None, &sc).unwrap();
        let ident = scan_bins(&scene, &small, &[29, 30, 31], &[0.0, 0.1], &dopplers, Some(&ReductionMatrix::identity(8)), &sc)
            .unwrap();
        for (a, b) in full.values().iter().zip(ident.values()) {
            worst_rel = worst_rel.max((a - b).abs() / a.abs().max(1.0));
        }
    }

    // Block-Toeplitz structure: FF clutter has it, NF clutter does not.
    let tg = ArrayGeometry::half_wavelength(16, 28e9).unwrap();
    let angles: Vec<f64> = (0..24).map(|i| -1.2 + 2.4 * (i as f64 + 0.5) / 24.0).collect();
    let ff = clutter_covariance(&tg, 4, 1e6, &angles, 1.0, 1.0, Wavefront::Planar, None).unwrap();
    let nf = clutter_covariance(&tg, 4, 2.0 * tg.aperture(), &angles, 1.0, 1.0, Wavefront::Spherical, None).unwrap();
    let (rf, rn) = (toeplitz_block_toeplitz_residual(ff.as_ref(), 4, 16), toeplitz_block_toeplitz_residual(nf.as_ref(), 4, 16));
    outcome(
        worst_corr >= 0.9999 && worst_rel <= 1e-8 && rf < 1e-6 && rn > 1e-2,
        format!(
            "FF-limit correlation {worst_corr:.6}; identity-reduction max rel. diff {worst_rel:.1e}; TBT residual FF {rf:.1e}, NF {rn:.3}"
        ),
    )
}

/// Absolute tolerance on the frozen default-config measurements.
const GOLDEN_TOLERANCE: f64 = 0.05;

/// Compares the measured gaps and orderings of criteria 3, 4 and 9 with the
/// values frozen in `tests/golden/case_study.json`; records them when the
/// file does not exist yet. Returns the names that drifted.
fn check_golden(measured: &[(&'static str, f64)]) -> Vec<&'static str> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/case_study.json");
    let Ok(text) = std::fs::read_to_string(&path) else {
        let map: serde_json::Map<String, serde_json::Value> =
            measured.iter().map(|(k, v)| (k.to_string(), serde_json::json!(v))).collect();
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&map).unwrap() + "\n").unwrap();
        println!("golden: recorded {} values in {}", measured.len(), path.display());
        return Vec::new();
    };
    let frozen: serde_json::Value = serde_json::from_str(&text).expect("golden file");
    let mut drift = Vec::new();
    for &(name, value) in measured {
        let want = frozen[name].as_f64();
        let ok = want.is_some_and(|w| (w - value).abs() <= GOLDEN_TOLERANCE);
        println!(
            "golden {name}: {} - measured {value:.4}, frozen {}",
            if ok { "MATCH" } else { "DRIFT" },
            want.map_or("missing".into(), |w| format!("{w:.4}"))
        );
        if !ok {
            drift.push(name);
        }
    }
    drift
}

fn main() -> ExitCode {
    // libtest-style flags (e.g. from `cargo test -- --nocapture`) are ignored.
    let cache = tempfile::tempdir().expect("cache dir");
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let t = Instant::now();
    let (c1, c2) = detection_criteria(cache.path());
    results.push((1, "case-study detection", c1));
    results.push((2, "clutter null", c2));
    let mut measured = Vec::new();
    let (c3, c4) = sinr_criteria(&mut measured);
    results.push((3, "adaptive gain", c3));
    results.push((4, "sample support", c4));
    results.push((5, "complexity reduction", complexity_criterion()));
    results.push((6, "angular-spread trends", spread_criterion()));
    results.push((7, "lookup round-trip", lookup_criterion(cache.path())));
    results.push((8, "transverse-velocity trend", transverse_criterion()));
    results.push((9, "rate ordering", rate_criterion(cache.path(), &mut measured)));
    results.push((10, "CFAR calibration", cfar_criterion()));
    results.push((11, "oracle equivalences", oracle_criterion()));
    results.sort_by_key(|r| r.0);
    let mut failed = Vec::new();
    for (n, name, o) in &results {
        println!("criterion {n:>2} {name}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(*n);
        }
    }
    println!("acceptance: {} of {} criteria pass ({:.0} s)", results.len() - failed.len(), results.len(), t.elapsed().as_secs_f64());
    let drift = check_golden(&measured);
    if failed.is_empty() && drift.is_empty() {
        ExitCode::SUCCESS
    } else {
        if !failed.is_empty() {
            println!("failed criteria: {failed:?}");
        }
        if !drift.is_empty() {
            println!("golden drift: {drift:?}");
        }
        ExitCode::FAILURE
    }
}
