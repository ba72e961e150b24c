//! Fixtures shared by the criterion benches.

use nfisac_core::codebook::{build_dft_codebook, default_min_range, Codebook};
use nfisac_core::geometry::{ArrayGeometry, PolarPoint};
use nfisac_core::linalg::c64;
use nfisac_core::scene::{ClutterModel, Scene, Target, VelocityVector, WaveformParams};
use nfisac_core::spread::{build_spread_table, AngularSpreadTable, DEFAULT_THRESHOLD_DB};
use nfisac_core::training::{train_user, RefineConfig, TrainingReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CARRIER: f64 = 28e9;

pub fn geometry(n: usize) -> ArrayGeometry {
    ArrayGeometry::half_wavelength(n, CARRIER).unwrap()
}

pub fn tables(n: usize) -> (Codebook, AngularSpreadTable) {
    let g = geometry(n);
    let dft = build_dft_codebook(&g, 1).unwrap();
    let table = build_spread_table(&dft, DEFAULT_THRESHOLD_DB, default_min_range(&g), n).unwrap();
    (dft, table)
}

/// The small preset's scene: N = 64, M = 32, two targets near 1.3 m.
pub fn small_scene() -> Scene {
    let g = geometry(64);
    let params = WaveformParams { prf: 1e4, n_pulses: 32, sample_rate: 400e6, bandwidth: 400e6, carrier_freq: CARRIER };
    let targets = [(1.125, 5.0), (1.5, -5.0)]
        .iter()
        .map(|&(r, v)| Target {
            position: PolarPoint::from_degrees(r, 10.0).unwrap(),
            velocity: VelocityVector::radial(v),
            amplitude: c64::new(1.0, 0.0),
        })
        .collect();
    let clutter = ClutterModel {
        patches_per_bin: 91,
        cnr_db: 30.0,
        sector: (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
        seed: 11,
        doppler_jitter: 0.0,
    };
    Scene::new(g, params, targets, Some(clutter), 1.0, 1).unwrap()
}

pub fn small_report(dft: &Codebook, table: &AngularSpreadTable) -> TrainingReport {
    let g = geometry(64);
    let user = PolarPoint::from_degrees(1.3, 10.0).unwrap();
    let cfg = RefineConfig { l_c: 4, n_c: 4, min_range: default_min_range(&g) };
    train_user(dft, table, &user, &cfg, Some(30.0), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
}
