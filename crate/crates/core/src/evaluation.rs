//! Performance panels: SINR versus radial velocity, transverse-velocity
//! resolution versus distance, average rate versus distance, and operation
//! counts for full versus reduced STAP.

use std::io::Write;

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{build_dft_codebook, Codebook};
use crate::geometry::{array_gain, nf_steering, rayleigh_distance, ArrayGeometry, PolarPoint};
use crate::linalg::{c64, dot, HermitianFactor};
use crate::scene::{ClutterModel, VelocityVector, WaveformParams};
use crate::spread::{coarse_estimate, measure_spread, sweep_at, AngularSpreadTable};
use crate::stap::{
    clutter_covariance, space_time_steering_nf, weights_from_factor, ReductionMatrix,
    SpaceTimeSteering, Wavefront,
};
use crate::training::{candidate_angles, refine_estimate, RefineConfig};
use crate::{Error, Result};

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub range_bins: usize,
    pub pulses: usize,
    pub elements: usize,
    pub l_c: usize,
    pub n_c: usize,
    /// `L (M N)^3`.
    pub full_ops: u128,
    /// `l_c (M n_c)^3`.
    pub reduced_ops: u128,
    pub reduction_factor: f64,
}

impl ComplexityReport {
    pub fn new(l: usize, m: usize, n: usize, l_c: usize, n_c: usize) -> Result<Self> {
        if [l, m, n, l_c, n_c].contains(&0) {
            return Err(Error::InvalidArgument("complexity dimensions must be positive".into()));
        }
        let cube = |x: u128| x * x * x;
        let full_ops = l as u128 * cube(m as u128 * n as u128);
        let reduced_ops = l_c as u128 * cube(m as u128 * n_c as u128);
        // M cancels; the ratio of the M-free terms is exact for any
        // realistic size.
        let reduction_factor = (l as u128 * cube(n as u128)) as f64 / (l_c as u128 * cube(n_c as u128)) as f64;
        Ok(Self { range_bins: l, pulses: m, elements: n, l_c, n_c, full_ops, reduced_ops, reduction_factor })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "range_bins,pulses,elements,l_c,n_c,full_ops,reduced_ops,reduction_factor")?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            self.range_bins,
            self.pulses,
            self.elements,
            self.l_c,
            self.n_c,
            self.full_ops,
            self.reduced_ops,
            self.reduction_factor
        )?;
        Ok(())
    }
}

pub fn complexity_report(l: usize, m: usize, n: usize, l_c: usize, n_c: usize) -> Result<ComplexityReport> {
    ComplexityReport::new(l, m, n, l_c, n_c)
}

/// Output SINR in dB of weight `w` for a target with steering `nu` and
/// power `target_power` against interference covariance `r_true`.
pub fn sinr_of(w: &[c64], nu: &[c64], r_true: MatRef<'_, c64>, target_power: f64) -> Result<f64> {
    if w.len() != nu.len() || r_true.nrows() != w.len() || r_true.ncols() != w.len() {
        return Err(Error::DimensionMismatch { expected: nu.len(), got: w.len() });
    }
    let rw: Vec<c64> = (0..w.len())
        .map(|i| (0..w.len()).map(|j| r_true[(i, j)] * w[j]).sum())
        .collect();
    let interference = dot(w, &rw).re;
    Ok(db(target_power * dot(w, nu).norm_sqr() / interference))
}

/// `10 log10(target_power nu^H R^{-1} nu)`, the best achievable SINR.
pub fn optimal_sinr(factor: &HermitianFactor, nu: &[c64], target_power: f64) -> f64 {
    db(target_power * dot(nu, &factor.solve(nu)).re)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinrConfig {
    pub target: PolarPoint,
    pub velocities: Vec<f64>,
    pub n_c: usize,
    pub k_cells: usize,
    pub clutter: ClutterModel,
    pub noise_power: f64,
    /// Per-element target SNR.
    pub target_snr_db: f64,
    pub loading: f64,
    pub seeds: Vec<u64>,
}

/// SINR of three filters against the same clutter-plus-noise covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrCurve {
    pub velocities: Vec<f64>,
    /// Known-covariance MVDR.
    pub optimal_db: Vec<f64>,
    /// Sample-covariance MVDR, averaged over seeds in linear power.
    pub nf_stap_db: Vec<f64>,
    /// Non-adaptive space-time matched filter `w = nu`.
    pub conventional_db: Vec<f64>,
}

impl SinrCurve {
    /// Largest violation of `optimal >= nf_stap >= conventional`, in dB.
    pub fn ordering_violation(&self) -> f64 {
        (0..self.velocities.len())
            .map(|i| {
                (self.nf_stap_db[i] - self.optimal_db[i])
                    .max(self.conventional_db[i] - self.nf_stap_db[i])
                    .max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Index of the grid point closest to `v`.
    pub fn nearest(&self, v: f64) -> usize {
        (0..self.velocities.len())
            .min_by(|&a, &b| (self.velocities[a] - v).abs().total_cmp(&(self.velocities[b] - v).abs()))
            .unwrap_or(0)
    }

    /// Mean of `optimal - nf_stap` over the grid.
    pub fn mean_adaptive_loss(&self) -> f64 {
        let n = self.velocities.len() as f64;
        self.optimal_db.iter().zip(&self.nf_stap_db).map(|(o, s)| o - s).sum::<f64>() / n
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "velocity_mps,optimal_sinr_db,nf_stap_sinr_db,conventional_sinr_db")?;
        for i in 0..self.velocities.len() {
            writeln!(
                w,
                "{:.6},{:.6},{:.6},{:.6}",
                self.velocities[i], self.optimal_db[i], self.nf_stap_db[i], self.conventional_db[i]
            )?;
        }
        Ok(())
    }
}

fn complex_normal(rng: &mut ChaCha8Rng, power: f64) -> c64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c64::new(s * re, s * im)
}

/// Homogeneous training: `k` snapshots of static clutter at the target range
/// (reduced patch responses `patches`) plus white noise, in reduced space.
fn sample_covariance(
    patches: &[Vec<c64>],
    patch_power: f64,
    noise_power: f64,
    m_count: usize,
    k: usize,
    loading: f64,
    seed: u64,
) -> Result<HermitianFactor> {
    let n_dim = patches[0].len();
    let dim = m_count * n_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::<c64>::zeros(dim, k);
    let mut ridge = vec![c64::new(0.0, 0.0); n_dim];
    for j in 0..k {
        ridge.iter_mut().for_each(|c| *c = c64::new(0.0, 0.0));
        for p in patches {
            let alpha = complex_normal(&mut rng, patch_power);
            ridge.iter_mut().zip(p).for_each(|(c, pi)| *c += alpha * pi);
        }
        for i in 0..dim {
            x[(i, j)] = ridge[i % n_dim] + complex_normal(&mut rng, noise_power);
        }
    }
    let mut r = Mat::<c64>::zeros(dim, dim);
    faer::linalg::matmul::matmul(
        r.as_mut(),
        faer::Accum::Replace,
        x.as_ref(),
        x.adjoint(),
        c64::new(1.0 / k as f64, 0.0),
        faer::get_global_parallelism(),
    );
    for i in 0..dim {
        r[(i, i)] = c64::new(r[(i, i)].re + loading, 0.0);
    }
    HermitianFactor::new(r.as_ref())
}

/// SINR versus radial velocity in the beamspace spanned by `n_c` codewords
/// around the target, with the exact clutter covariance as reference.
pub fn sinr_loss_curve(geom: &ArrayGeometry, params: &WaveformParams, cfg: &SinrConfig) -> Result<SinrCurve> {
    if cfg.seeds.is_empty() || cfg.velocities.is_empty() {
        return Err(Error::InvalidArgument("sinr curve needs seeds and velocities".into()));
    }
    let clutter = cfg.clutter.validated()?;
    let m_count = params.n_pulses;
    let t = ReductionMatrix::beamspace(geom, cfg.target.range(), &candidate_angles(geom, &cfg.target, cfg.n_c))?;
    let patch_power = clutter.patch_power(cfg.noise_power);
    let angles = clutter.patch_angles();
    let r_true = clutter_covariance(
        geom,
        m_count,
        cfg.target.range(),
        &angles,
        patch_power,
        cfg.noise_power,
        Wavefront::Spherical,
        Some(&t),
    )?;
    let true_factor = HermitianFactor::new(r_true.as_ref())?;
    let target_power =
        cfg.noise_power * 10f64.powf(cfg.target_snr_db / 10.0) * (m_count * geom.n_elements()) as f64;

    let scale = (geom.n_elements() as f64).sqrt();
    let patches = angles
        .iter()
        .map(|&theta| {
            let a: Vec<c64> = nf_steering(geom, &PolarPoint::new(cfg.target.range(), theta)?)
                .coeffs()
                .iter()
                .map(|x| x * scale)
                .collect();
            t.project_slab(&a)
        })
        .collect::<Result<Vec<_>>>()?;

    let steering = cfg
        .velocities
        .iter()
        .map(|&v| space_time_steering_nf(geom, params, &cfg.target, &VelocityVector::radial(v))?.reduce(&t))
        .collect::<Result<Vec<SpaceTimeSteering>>>()?;

    // Linear SINR of the sample-covariance filter per (seed, velocity).
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let factor =
                sample_covariance(&patches, patch_power, cfg.noise_power, m_count, cfg.k_cells, cfg.loading, seed)?;
            steering
                .par_iter()
                .map(|nu| {
                    let w = weights_from_factor(&factor, nu.coeffs())?;
                    Ok(10f64.powf(sinr_of(&w, nu.coeffs(), r_true.as_ref(), target_power)? / 10.0))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut curve = SinrCurve {
        velocities: cfg.velocities.clone(),
        optimal_db: Vec::new(),
        nf_stap_db: Vec::new(),
        conventional_db: Vec::new(),
    };
    for (i, nu) in steering.iter().enumerate() {
        curve.optimal_db.push(optimal_sinr(&true_factor, nu.coeffs(), target_power));
        let mean = per_seed.iter().map(|s| s[i]).sum::<f64>() / per_seed.len() as f64;
        curve.nf_stap_db.push(db(mean));
        curve.conventional_db.push(sinr_of(nu.coeffs(), nu.coeffs(), r_true.as_ref(), target_power)?);
    }
    Ok(curve)
}

/// Correlation level that defines two transverse velocities as resolved.
pub const RESOLUTION_CORRELATION: f64 = 0.5;

/// Smallest transverse velocity whose NF space-time steering decorrelates
/// from the stationary one to `RESOLUTION_CORRELATION`. Returns infinity at
/// or beyond the Rayleigh distance, or when no velocity below the
/// unambiguous limit `lambda f_r / 4` resolves.
pub fn transverse_resolution(
    geom: &ArrayGeometry,
    params: &WaveformParams,
    angle: f64,
    distances: &[f64],
) -> Result<Vec<f64>> {
    distances
        .par_iter()
        .map(|&r| {
            if !(r > geom.aperture()) {
                return Err(Error::InvalidArgument(format!("distance {r} m is inside the aperture")));
            }
            if r >= rayleigh_distance(geom) {
                return Ok(f64::INFINITY);
            }
            let p = PolarPoint::new(r, angle)?;
            let still = space_time_steering_nf(geom, params, &p, &VelocityVector::default())?;
            let corr = |v: f64| -> Result<f64> {
                let moving = space_time_steering_nf(geom, params, &p, &VelocityVector::transverse(v))?;
                Ok(still.inner(&moving).norm())
            };
            let cap = params.wavelength() * params.prf / 4.0;
            // First crossing on a coarse scan, then bisection inside it.
            const STEPS: usize = 256;
            let mut lo = 0.0;
            let mut hi = None;
            for i in 1..=STEPS {
                let v = cap * i as f64 / STEPS as f64;
                match corr(v) {
                    Ok(c) if c <= RESOLUTION_CORRELATION => {
                        hi = Some(v);
                        break;
                    }
                    Ok(_) => lo = v,
                    Err(Error::DopplerAlias { .. }) => break,
                    Err(e) => return Err(e),
                }
            }
            let Some(mut hi) = hi else { return Ok(f64::INFINITY) };
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if corr(mid)? <= RESOLUTION_CORRELATION {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok(hi)
        })
        .collect()
}

pub fn write_transverse_csv<W: Write>(distances: &[f64], resolution: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "distance_m,transverse_resolution_mps")?;
    for (d, v) in distances.iter().zip(resolution) {
        writeln!(w, "{d:.6},{v:.6}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    PerfectCsi,
    ProposedNfStap,
    ProposedDft,
    FarField,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::PerfectCsi, Scheme::ProposedNfStap, Scheme::ProposedDft, Scheme::FarField];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::PerfectCsi => "perfect_csi",
            Scheme::ProposedNfStap => "proposed_nf_stap",
            Scheme::ProposedDft => "proposed_dft",
            Scheme::FarField => "far_field",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConfig {
    pub angle: f64,
    pub l_c: usize,
    pub n_c: usize,
    pub min_range: f64,
    /// SNR of perfect-CSI beamforming at the EBRD midpoint.
    pub snr_ref_db: f64,
    /// Time slots per frame; each swept beam costs one.
    pub frame_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub distances: Vec<f64>,
    /// Beamforming gain `N |w^H a|^2` per scheme (order of `Scheme::ALL`).
    pub gains: [Vec<f64>; 4],
    pub rates: [Vec<f64>; 4],
    pub overheads: [usize; 4],
}

impl RateCurve {
    pub fn rate(&self, s: Scheme) -> &[f64] {
        &self.rates[s as usize]
    }

    pub fn gain(&self, s: Scheme) -> &[f64] {
        &self.gains[s as usize]
    }

    pub fn overhead(&self, s: Scheme) -> usize {
        self.overheads[s as usize]
    }

    /// Largest violation of the ordering of `Scheme::ALL` at distances up to
    /// `max_distance`.
    pub fn ordering_violation(&self, max_distance: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, _) in self.distances.iter().enumerate().filter(|(_, &d)| d <= max_distance) {
            for pair in Scheme::ALL.windows(2) {
                worst = worst.max(self.rate(pair[1])[i] - self.rate(pair[0])[i]);
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = Scheme::ALL.iter().map(|s| format!("{}_rate_bps_per_hz", s.name())).collect();
        writeln!(w, "distance_m,{}", header.join(","))?;
        for (i, d) in self.distances.iter().enumerate() {
            let row: Vec<String> = Scheme::ALL.iter().map(|&s| format!("{:.6}", self.rate(s)[i])).collect();
            writeln!(w, "{d:.6},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Beamforming gain per scheme toward a user at `user`, from noiseless
/// training.
fn scheme_gains(
    geom: &ArrayGeometry,
    dft: &Codebook,
    table: &AngularSpreadTable,
    cfg: &RateConfig,
    user: &PolarPoint,
) -> Result<[f64; 4]> {
    let gains = sweep_at(dft, user);
    let far_field = gains.iter().copied().fold(0.0, f64::max);
    let coarse = coarse_estimate(table, &measure_spread(&gains, table.threshold_db())?);
    let gain_at = |p: &PolarPoint| array_gain(&nf_steering(geom, p), geom, user);
    let dft_gain = gain_at(&coarse);
    let refine = RefineConfig { l_c: cfg.l_c, n_c: cfg.n_c, min_range: cfg.min_range };
    let report = refine_estimate(geom, &coarse, &refine, dft.len(), gain_at)?;
    let refined_gain = gain_at(&report.refined);
    Ok([geom.n_elements() as f64, refined_gain, dft_gain, far_field])
}

/// Average rate `(1 - O_s / F) log2(1 + gamma G_s(r) / r^2)` per scheme with
/// free-space spreading; `gamma` puts perfect CSI at the EBRD midpoint at
/// `snr_ref_db`.
pub fn average_rate_curve(
    geom: &ArrayGeometry,
    table: &AngularSpreadTable,
    distances: &[f64],
    cfg: &RateConfig,
    ebrd_midpoint: f64,
) -> Result<RateCurve> {
    let n = geom.n_elements();
    let overheads = [0, n + cfg.l_c * cfg.n_c, n, n];
    if cfg.frame_budget < overheads[1] {
        return Err(Error::InvalidArgument(format!(
            "frame budget {} is below the training overhead {}",
            cfg.frame_budget, overheads[1]
        )));
    }
    let dft = build_dft_codebook(geom, 1)?;
    let per_distance = distances
        .par_iter()
        .map(|&r| scheme_gains(geom, &dft, table, cfg, &PolarPoint::new(r, cfg.angle)?))
        .collect::<Result<Vec<_>>>()?;
    let gamma = 10f64.powf(cfg.snr_ref_db / 10.0) * ebrd_midpoint * ebrd_midpoint / n as f64;
    let mut gains: [Vec<f64>; 4] = Default::default();
    let mut rates: [Vec<f64>; 4] = Default::default();
    for (g, &r) in per_distance.iter().zip(distances) {
        for s in 0..4 {
            let efficiency = 1.0 - overheads[s] as f64 / cfg.frame_budget as f64;
            gains[s].push(g[s]);
            rates[s].push(efficiency * (1.0 + gamma * g[s] / (r * r)).log2());
        }
    }
    Ok(RateCurve { distances: distances.to_vec(), gains, rates, overheads })
}
