//! Two-stage beam training: a DFT sweep matched against the spread table
//! gives a coarse polar estimate, then a small window of polar beams around
//! it is probed to refine range and angle.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::geometry::{beam_depth_3db, ebrd, nf_steering, ArrayGeometry, PolarPoint};
use crate::linalg::c64;
use crate::spread::{coarse_estimate, measure_spread, AngularSpreadTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub l_c: usize,
    pub n_c: usize,
    /// Candidate ranges are clipped to `[min_range, max(ebrd, coarse range)]`.
    pub min_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingReport {
    pub coarse: PolarPoint,
    pub refined: PolarPoint,
    pub beams_swept: usize,
    pub refinement_beams: usize,
    /// Radians.
    pub candidate_angles: Vec<f64>,
    /// Meters.
    pub candidate_ranges: Vec<f64>,
}

impl TrainingReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(s)?;
        if report.candidate_angles.is_empty() || report.candidate_ranges.is_empty() {
            return Err(Error::Format("training report has an empty candidate window".into()));
        }
        if report.refinement_beams != report.candidate_angles.len() * report.candidate_ranges.len()
        {
            return Err(Error::Format("refinement_beams does not match the window".into()));
        }
        Ok(report)
    }

    pub fn total_beams(&self) -> usize {
        self.beams_swept + self.refinement_beams
    }
}

/// `2i/(n-1) - 1` for `i = 0..n`, or `[0]` when `n == 1`.
fn symmetric_unit_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64 - 1.0).collect()
}

/// `n_c` angles spanning one DFT beamwidth either side of `coarse`, uniform in
/// `sin(theta)`.
pub fn candidate_angles(geom: &ArrayGeometry, coarse: &PolarPoint, n_c: usize) -> Vec<f64> {
    let s0 = coarse.angle().sin();
    let bw = geom.dft_beamwidth();
    let limit = 1.0 - 1e-9;
    symmetric_unit_grid(n_c)
        .into_iter()
        .map(|t| (s0 + bw * t).clamp(-limit, limit).asin())
        .collect()
}

/// `l_c` ranges spanning one local beam-depth either side of `coarse`,
/// uniform in inverse range.
pub fn candidate_ranges(
    geom: &ArrayGeometry,
    coarse: &PolarPoint,
    l_c: usize,
    min_range: f64,
) -> Result<Vec<f64>> {
    if l_c == 1 {
        return Ok(vec![coarse.range()]);
    }
    let depth = beam_depth_3db(geom, coarse)?;
    let half_width = 1.0 / depth.near() - depth.far().map_or(0.0, |far| 1.0 / far);
    let u0 = 1.0 / coarse.range();
    let max_range = ebrd(geom, coarse.angle())?.max(coarse.range());
    Ok(symmetric_unit_grid(l_c)
        .into_iter()
        .map(|t| {
            let u = u0 + half_width * t;
            let r = if u > 0.0 { 1.0 / u } else { f64::INFINITY };
            r.clamp(min_range.min(max_range), max_range)
        })
        .collect())
}

/// Probes every candidate with `gain_oracle` and keeps the strongest. The
/// coarse codeword is the incumbent (it is the beam already serving the
/// user), so a candidate must beat it; it is not counted as a probe.
pub fn refine_estimate<F>(
    geom: &ArrayGeometry,
    coarse: &PolarPoint,
    cfg: &RefineConfig,
    beams_swept: usize,
    mut gain_oracle: F,
) -> Result<TrainingReport>
where
    F: FnMut(&PolarPoint) -> f64,
{
    if cfg.l_c == 0 || cfg.n_c == 0 {
        return Err(Error::InvalidArgument("l_c and n_c must be at least 1".into()));
    }
    let angles = candidate_angles(geom, coarse, cfg.n_c);
    let ranges = candidate_ranges(geom, coarse, cfg.l_c, cfg.min_range)?;
    let mut refined = *coarse;
    let mut best = gain_oracle(coarse);
    for &theta in &angles {
        for &r in &ranges {
            let p = PolarPoint::new(r, theta)?;
            let g = gain_oracle(&p);
            if g > best {
                best = g;
                refined = p;
            }
        }
    }
    Ok(TrainingReport {
        coarse: *coarse,
        refined,
        beams_swept,
        refinement_beams: angles.len() * ranges.len(),
        candidate_angles: angles,
        candidate_ranges: ranges,
    })
}

/// Received beam power `|sqrt(N) w^H a + n|^2` for a user at `user`, with
/// complex Gaussian noise of power `noise_power` per beam.
pub fn measure_beam<R: Rng + ?Sized>(
    geom: &ArrayGeometry,
    w: &crate::geometry::SteeringVector,
    user: &PolarPoint,
    noise_power: f64,
    rng: &mut R,
) -> f64 {
    let s = w.inner(&nf_steering(geom, user)) * (geom.n_elements() as f64).sqrt();
    noisy_power(s, noise_power, rng)
}

fn noisy_power<R: Rng + ?Sized>(s: c64, noise_power: f64, rng: &mut R) -> f64 {
    if noise_power <= 0.0 {
        return s.norm_sqr();
    }
    let sigma = (noise_power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    (s + c64::new(sigma * re, sigma * im)).norm_sqr()
}

/// A DFT sweep toward `user`. With `snr_db`, each beam carries noise whose
/// power sits `snr_db` below the strongest noiseless beam; the returned
/// noise power is reused for the refinement probes.
pub fn simulate_sweep<R: Rng + ?Sized>(
    dft: &Codebook,
    user: &PolarPoint,
    snr_db: Option<f64>,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let geom = dft.geometry();
    let a = nf_steering(geom, user);
    let scale = (geom.n_elements() as f64).sqrt();
    let clean: Vec<c64> = dft.codewords().iter().map(|w| w.inner(&a) * scale).collect();
    let noise_power = snr_db.map_or(0.0, |snr| {
        let peak = clean.iter().map(|s| s.norm_sqr()).fold(0.0, f64::max);
        peak * 10f64.powf(-snr / 10.0)
    });
    let gains = clean.into_iter().map(|s| noisy_power(s, noise_power, rng)).collect();
    (gains, noise_power)
}

/// Full training for one user: sweep, table lookup, polar refinement.
pub fn train_user<R: Rng + ?Sized>(
    dft: &Codebook,
    table: &AngularSpreadTable,
    user: &PolarPoint,
    cfg: &RefineConfig,
    snr_db: Option<f64>,
    rng: &mut R,
) -> Result<TrainingReport> {
    let geom = *dft.geometry();
    let (gains, noise_power) = simulate_sweep(dft, user, snr_db, rng);
    let meas = measure_spread(&gains, table.threshold_db())?;
    let coarse = coarse_estimate(table, &meas);
    refine_estimate(&geom, &coarse, cfg, dft.len(), |p| {
        measure_beam(&geom, &nf_steering(&geom, p), user, noise_power, rng)
    })
}
