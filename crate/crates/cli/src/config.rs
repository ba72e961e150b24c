//! Scenario configuration. Every section and field has a default, so `{}`
//! is the case study; unknown keys are rejected and units are suffixed in
//! field names.

use std::path::Path;

use nfisac_core::detection::{CfarAxis, CfarConfig};
use nfisac_core::geometry::{ArrayGeometry, PolarPoint, SPEED_OF_LIGHT};
use nfisac_core::linalg::c64;
use nfisac_core::scene::{ClutterModel, Scene, Target, VelocityVector, WaveformParams};
use nfisac_core::spread::DEFAULT_THRESHOLD_DB;
use nfisac_core::stap::{MapStatistic, ScanConfig};
use nfisac_core::training::RefineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Clutter draws use their own stream family so they never coincide with the
/// noise streams of the same seed.
const CLUTTER_SEED_MASK: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub waveform: WaveformConfig,
    #[serde(default = "default_targets")]
    pub targets: Vec<TargetConfig>,
    /// `null` switches clutter off.
    #[serde(default = "default_clutter")]
    pub clutter: Option<ClutterConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub candidates: CandidateConfig,
    #[serde(default)]
    pub cfar: CfarSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub user: UserConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            waveform: WaveformConfig::default(),
            targets: default_targets(),
            clutter: default_clutter(),
            noise: NoiseConfig::default(),
            training: TrainingConfig::default(),
            candidates: CandidateConfig::default(),
            cfar: CfarSection::default(),
            seed: 0,
            user: UserConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn default_targets() -> Vec<TargetConfig> {
    vec![
        TargetConfig { range_m: 15.0, angle_deg: 5.0, v_radial_mps: 5.0, v_transverse_mps: 0.0, amplitude_db: 0.0 },
        TargetConfig { range_m: 16.0, angle_deg: 5.0, v_radial_mps: -5.0, v_transverse_mps: 0.0, amplitude_db: 0.0 },
    ]
}

fn default_clutter() -> Option<ClutterConfig> {
    Some(ClutterConfig::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub n_elements: usize,
    pub spacing_wavelengths: f64,
    pub carrier_ghz: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { n_elements: 256, spacing_wavelengths: 0.5, carrier_ghz: 28.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformConfig {
    pub prf_hz: f64,
    pub m_pulses: usize,
    pub fs_mhz: f64,
    pub bandwidth_mhz: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self { prf_hz: 10e3, m_pulses: 128, fs_mhz: 400.0, bandwidth_mhz: 400.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub range_m: f64,
    pub angle_deg: f64,
    #[serde(default)]
    pub v_radial_mps: f64,
    #[serde(default)]
    pub v_transverse_mps: f64,
    /// Per-element amplitude, in the same dB scale as `noise.power_db`.
    #[serde(default)]
    pub amplitude_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterConfig {
    pub cnr_db: f64,
    pub patches: usize,
    pub sector_deg: [f64; 2],
    /// Internal-motion spread, cycles per pulse.
    pub doppler_jitter: f64,
}

impl Default for ClutterConfig {
    fn default() -> Self {
        Self { cnr_db: 30.0, patches: 181, sector_deg: [-90.0, 90.0], doppler_jitter: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub power_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub k_cells: usize,
    pub guard: usize,
    /// Diagonal loading relative to the noise power.
    pub loading_db: f64,
    pub statistic: MapStatistic,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { k_cells: 4096, guard: 2, loading_db: 0.0, statistic: MapStatistic::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateConfig {
    pub l_c: usize,
    pub n_c: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self { l_c: 8, n_c: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfarSection {
    pub pfa: f64,
    pub train: usize,
    pub guard: usize,
}

impl Default for CfarSection {
    fn default() -> Self {
        Self { pfa: 1e-6, train: 8, guard: 2 }
    }
}

/// The user whose beam training seeds the scan. Position defaults to the
/// centroid of the targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UserConfig {
    pub range_m: Option<f64>,
    pub angle_deg: Option<f64>,
    /// Strongest noiseless beam over per-beam noise during the sweep.
    pub sweep_snr_db: f64,
    pub spread_threshold_db: f64,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self { range_m: None, angle_deg: None, sweep_snr_db: 30.0, spread_threshold_db: DEFAULT_THRESHOLD_DB }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub sinr: SinrSection,
    pub rate: RateSection,
    pub transverse: TransverseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinrSection {
    pub velocity_min_mps: f64,
    pub velocity_max_mps: f64,
    pub velocity_step_mps: f64,
    pub n_c: usize,
    /// Defaults to `4 M n_c`.
    pub k_cells: Option<usize>,
    /// Per-element target SNR.
    pub target_snr_db: f64,
    pub seeds: Vec<u64>,
}

impl Default for SinrSection {
    fn default() -> Self {
        Self {
            velocity_min_mps: -10.0,
            velocity_max_mps: 10.0,
            velocity_step_mps: 0.5,
            n_c: 8,
            k_cells: None,
            target_snr_db: 0.0,
            seeds: vec![1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub angle_deg: f64,
    pub l_c: usize,
    pub n_c: usize,
    pub snr_ref_db: f64,
    pub frame_budget: usize,
    /// Log-spaced distances from twice the aperture to the Rayleigh distance.
    pub points: usize,
}

impl Default for RateSection {
    fn default() -> Self {
        Self { angle_deg: 5.0, l_c: 1, n_c: 6, snr_ref_db: 10.0, frame_budget: 2048, points: 24 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransverseSection {
    pub angle_deg: f64,
    /// Log-spaced distances from twice the aperture to the EBRD.
    pub points: usize,
}

impl Default for TransverseSection {
    fn default() -> Self {
        Self { angle_deg: 0.0, points: 10 }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Builds every derived object once so that bad values surface as
    /// configuration errors before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.geometry()?;
        self.waveform()?;
        self.user_position()?;
        self.cfar()?;
        if self.candidates.l_c == 0 || self.candidates.n_c == 0 {
            return Err(CliError::Config("candidates.l_c and candidates.n_c must be positive".into()));
        }
        if self.training.k_cells == 0 {
            return Err(CliError::Config("training.k_cells must be positive".into()));
        }
        if !(self.noise.power_db.is_finite() && self.training.loading_db.is_finite()) {
            return Err(CliError::Config("noise.power_db and training.loading_db must be finite".into()));
        }
        if let Some(c) = self.clutter_model() {
            c.validated().map_err(config_err)?;
        }
        self.targets()?;
        let s = &self.evaluation.sinr;
        if !(s.velocity_step_mps > 0.0 && s.velocity_max_mps >= s.velocity_min_mps) || s.seeds.is_empty() || s.n_c == 0 {
            return Err(CliError::Config("evaluation.sinr needs a positive step, max >= min, seeds and n_c".into()));
        }
        let r = &self.evaluation.rate;
        if r.points < 2 || r.l_c == 0 || r.n_c == 0 || r.frame_budget == 0 {
            return Err(CliError::Config("evaluation.rate needs points >= 2 and positive l_c, n_c, frame_budget".into()));
        }
        if self.evaluation.transverse.points < 2 {
            return Err(CliError::Config("evaluation.transverse.points must be at least 2".into()));
        }
        PolarPoint::from_degrees(1.0, r.angle_deg).map_err(config_err)?;
        PolarPoint::from_degrees(1.0, self.evaluation.transverse.angle_deg).map_err(config_err)?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry, CliError> {
        let g = &self.geometry;
        let fc = g.carrier_ghz * 1e9;
        ArrayGeometry::new(g.n_elements, g.spacing_wavelengths * SPEED_OF_LIGHT / fc, fc).map_err(config_err)
    }

    pub fn waveform(&self) -> Result<WaveformParams, CliError> {
        let w = &self.waveform;
        WaveformParams {
            prf: w.prf_hz,
            n_pulses: w.m_pulses,
            sample_rate: w.fs_mhz * 1e6,
            bandwidth: w.bandwidth_mhz * 1e6,
            carrier_freq: self.geometry.carrier_ghz * 1e9,
        }
        .validated()
        .map_err(config_err)
    }

    pub fn noise_power(&self) -> f64 {
        10f64.powf(self.noise.power_db / 10.0)
    }

    pub fn targets(&self) -> Result<Vec<Target>, CliError> {
        self.targets
            .iter()
            .map(|t| {
                Ok(Target {
                    position: PolarPoint::from_degrees(t.range_m, t.angle_deg).map_err(config_err)?,
                    velocity: VelocityVector { radial: t.v_radial_mps, transverse: t.v_transverse_mps },
                    amplitude: c64::new(10f64.powf(t.amplitude_db / 20.0), 0.0),
                })
            })
            .collect()
    }

    pub fn clutter_model(&self) -> Option<ClutterModel> {
        self.clutter.map(|c| ClutterModel {
            patches_per_bin: c.patches,
            cnr_db: c.cnr_db,
            sector: (c.sector_deg[0].to_radians(), c.sector_deg[1].to_radians()),
            seed: self.seed ^ CLUTTER_SEED_MASK,
            doppler_jitter: c.doppler_jitter,
        })
    }

    pub fn scene(&self, noiseless: bool) -> Result<Scene, CliError> {
        let noise = if noiseless { 0.0 } else { self.noise_power() };
        let clutter = self.clutter_model();
        Scene::new(self.geometry()?, self.waveform()?, self.targets()?, clutter, noise, self.seed).map_err(config_err)
    }

    /// Configured position, else the target centroid, else boresight at the
    /// midpoint of the EBRD interval.
    pub fn user_position(&self) -> Result<PolarPoint, CliError> {
        let n = self.targets.len() as f64;
        let range = match self.user.range_m {
            Some(r) => r,
            None if n > 0.0 => self.targets.iter().map(|t| t.range_m).sum::<f64>() / n,
            None => {
                let g = self.geometry()?;
                let e = nfisac_core::geometry::ebrd(&g, 0.0).map_err(config_err)?;
                0.5 * (2.0 * g.aperture() + e)
            }
        };
        let angle = match self.user.angle_deg {
            Some(a) => a,
            None if n > 0.0 => self.targets.iter().map(|t| t.angle_deg).sum::<f64>() / n,
            None => 0.0,
        };
        PolarPoint::from_degrees(range, angle).map_err(config_err)
    }

    pub fn refine_config(&self, min_range: f64) -> RefineConfig {
        RefineConfig { l_c: self.candidates.l_c, n_c: self.candidates.n_c, min_range }
    }

    pub fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            k_cells: self.training.k_cells,
            guard: self.training.guard,
            loading: self.noise_power() * 10f64.powf(self.training.loading_db / 10.0),
            statistic: self.training.statistic,
        }
    }

    pub fn cfar(&self) -> Result<CfarConfig, CliError> {
        CfarConfig {
            pfa: self.cfar.pfa,
            train_cells: self.cfar.train,
            guard_cells: self.cfar.guard,
            axis: CfarAxis::Doppler,
        }
        .validated()
        .map_err(config_err)
    }

    /// Canonical JSON (defaults filled in).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_case_study() {
        let cfg = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.geometry().unwrap().n_elements(), 256);
        assert_eq!(cfg.waveform().unwrap().n_range_bins(), 40_000);
        let user = cfg.user_position().unwrap();
        assert!((user.range() - 15.5).abs() < 1e-12 && (user.angle_deg() - 5.0).abs() < 1e-12);
        assert_eq!(cfg.targets().unwrap().len(), 2);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ScenarioConfig::from_json(r#"{"geometry": {"n_elements": 64, "spacing": 1}}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"colour": 1}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"targets": [{"range_m": 5, "angle_deg": 95}]}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"cfar": {"pfa": 2}}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"geometry": {"n_elements": 1}}"#).is_err());
    }

    #[test]
    fn null_clutter_and_hash_tracks_content() {
        let a = ScenarioConfig::from_json(r#"{"clutter": null}"#).unwrap();
        assert!(a.clutter_model().is_none());
        let b = ScenarioConfig::from_json(r#"{ "seed": 0 }"#).unwrap();
        let c = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(b.sha256(), c.sha256());
        assert_ne!(a.sha256(), c.sha256());
        assert_eq!(c.sha256().len(), 64);
    }
}
