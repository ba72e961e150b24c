//! Range-compressed radar data cube for point targets over static clutter.
//!
//! The cube is indexed `[l][m][n]` (range bin, pulse, element). Every range
//! bin is generated independently from its own random streams, so bins can
//! be produced lazily, in any order and in parallel, with identical results.

use std::borrow::Cow;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{nf_steering, ArrayGeometry, PolarPoint, SPEED_OF_LIGHT};
use crate::linalg::{c64, cis};
use crate::{Error, Result};

/// Default limit on synthesized cube entries (1 GiB of complex doubles).
pub const DEFAULT_CUBE_CAP: u128 = 1 << 26;

pub const CUBE_MAGIC: &[u8; 8] = b"NFCUBE01";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformParams {
    pub prf: f64,
    pub n_pulses: usize,
    pub sample_rate: f64,
    pub bandwidth: f64,
    pub carrier_freq: f64,
}

impl WaveformParams {
    pub fn validated(self) -> Result<Self> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(self.prf)
            && positive(self.sample_rate)
            && positive(self.bandwidth)
            && positive(self.carrier_freq)
            && self.n_pulses >= 1
            && self.n_range_bins() >= 1)
        {
            return Err(Error::InvalidArgument(format!("invalid waveform parameters {self:?}")));
        }
        Ok(self)
    }

    /// `L = round(f_s / f_r)`.
    pub fn n_range_bins(&self) -> usize {
        (self.sample_rate / self.prf).round() as usize
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn bin_width(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.sample_rate)
    }

    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth)
    }

    pub fn doppler_resolution(&self) -> f64 {
        self.prf / self.n_pulses as f64
    }

    pub fn max_range(&self) -> f64 {
        self.n_range_bins() as f64 * self.bin_width()
    }

    pub fn cpi(&self) -> f64 {
        self.n_pulses as f64 / self.prf
    }

    /// Radial velocity whose two-way Doppler is `doppler` cycles per pulse.
    pub fn velocity_of(&self, doppler: f64) -> f64 {
        doppler * self.wavelength() * self.prf / 2.0
    }

    pub fn doppler_of(&self, velocity: f64) -> f64 {
        2.0 * velocity / (self.wavelength() * self.prf)
    }

    /// Velocity spacing of one Doppler bin, `f_r lambda / (2M)`.
    pub fn velocity_resolution(&self) -> f64 {
        self.velocity_of(1.0 / self.n_pulses as f64)
    }
}

/// `round(2 r f_s / c)`, clamped to the cube.
pub fn range_bin_of(params: &WaveformParams, r: f64) -> Result<usize> {
    let max = params.max_range();
    if !(r > 0.0 && r < max) {
        return Err(Error::RangeOutOfBounds { range: r, max });
    }
    let l = (2.0 * r * params.sample_rate / SPEED_OF_LIGHT).round() as usize;
    Ok(l.min(params.n_range_bins() - 1))
}

/// Range at the center of bin `l`; bin 0 is placed half a bin out.
pub fn bin_range(params: &WaveformParams, l: usize) -> f64 {
    let w = params.bin_width();
    (l as f64 * w).max(0.5 * w)
}

/// Planar velocity split into components along and across the line of sight
/// from the array center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityVector {
    pub radial: f64,
    pub transverse: f64,
}

impl VelocityVector {
    pub fn radial(v: f64) -> Self {
        Self { radial: v, transverse: 0.0 }
    }

    pub fn transverse(v: f64) -> Self {
        Self { radial: 0.0, transverse: v }
    }

    pub fn speed(&self) -> f64 {
        self.radial.hypot(self.transverse)
    }

    /// Cartesian components (x along the array, y along boresight) for a
    /// target seen at `angle`. Positive radial motion recedes; positive
    /// transverse motion turns toward decreasing angle's normal, `(cos, -sin)`.
    pub fn to_cartesian(&self, angle: f64) -> (f64, f64) {
        let (s, c) = angle.sin_cos();
        (
            self.radial * s + self.transverse * c,
            self.radial * c - self.transverse * s,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub position: PolarPoint,
    pub velocity: VelocityVector,
    /// Per-element complex amplitude.
    pub amplitude: c64,
}

/// Two-way Doppler in cycles per pulse seen by every element: the target
/// velocity projected on the unit vector from the element to the target.
pub fn per_element_doppler(
    geom: &ArrayGeometry,
    params: &WaveformParams,
    target: &Target,
) -> Result<Vec<f64>> {
    let (x, y) = target.position.to_cartesian();
    let (vx, vy) = target.velocity.to_cartesian(target.position.angle());
    let scale = 2.0 / (geom.wavelength() * params.prf);
    (0..geom.n_elements())
        .map(|n| {
            let dx = x - geom.element_position(n);
            let dist = dx.hypot(y);
            if dist <= 1e-9 * geom.spacing() {
                return Err(Error::DegenerateTarget(n));
            }
            Ok(scale * (vx * dx + vy * y) / dist)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterModel {
    pub patches_per_bin: usize,
    pub cnr_db: f64,
    /// Angular sector in radians, `(low, high)`.
    pub sector: (f64, f64),
    pub seed: u64,
    /// Standard deviation of per-patch internal motion, cycles per pulse.
    #[serde(default)]
    pub doppler_jitter: f64,
}

impl ClutterModel {
    pub fn validated(self) -> Result<Self> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let (lo, hi) = self.sector;
        if self.patches_per_bin == 0
            || !self.cnr_db.is_finite()
            || !(-half_pi <= lo && lo < hi && hi <= half_pi)
            || !(self.doppler_jitter >= 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid clutter model {self:?}")));
        }
        Ok(self)
    }

    /// Patch angles, evenly spread over the open sector.
    pub fn patch_angles(&self) -> Vec<f64> {
        let (lo, hi) = self.sector;
        let p = self.patches_per_bin as f64;
        (0..self.patches_per_bin)
            .map(|i| lo + (i as f64 + 0.5) * (hi - lo) / p)
            .collect()
    }

    /// Power of one patch, per element.
    pub fn patch_power(&self, noise_power: f64) -> f64 {
        noise_power * 10f64.powf(self.cnr_db / 10.0) / self.patches_per_bin as f64
    }
}

/// Complex normal with variance `power`.
fn complex_normal(rng: &mut ChaCha8Rng, power: f64) -> c64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c64::new(s * re, s * im)
}

fn stream(seed: u64, l: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(l as u64);
    rng
}

/// Anything that yields the `M x N` pulse-major slab of a range bin.
pub trait SnapshotSource: Sync {
    fn params(&self) -> &WaveformParams;
    fn n_elements(&self) -> usize;
    /// `data[l][m][n]` for all `m, n`, flattened as `m * N + n`.
    fn slab(&self, l: usize) -> Result<Cow<'_, [c64]>>;

    fn n_range_bins(&self) -> usize {
        self.params().n_range_bins()
    }

    fn n_pulses(&self) -> usize {
        self.params().n_pulses
    }
}

struct PreparedTarget {
    bin: usize,
    /// `amplitude * sqrt(N) * a_n`.
    spatial: Vec<c64>,
    doppler: Vec<f64>,
}

/// A scene description that synthesizes cube slabs on demand.
pub struct Scene {
    geometry: ArrayGeometry,
    params: WaveformParams,
    targets: Vec<Target>,
    prepared: Vec<PreparedTarget>,
    clutter: Option<ClutterModel>,
    clutter_angles: Vec<f64>,
    noise_power: f64,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SceneOptions {
    pub allow_alias: bool,
}

impl Scene {
    pub fn new(
        geometry: ArrayGeometry,
        params: WaveformParams,
        targets: Vec<Target>,
        clutter: Option<ClutterModel>,
        noise_power: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::with_options(geometry, params, targets, clutter, noise_power, seed, SceneOptions::default())
    }

    pub fn with_options(
        geometry: ArrayGeometry,
        params: WaveformParams,
        targets: Vec<Target>,
        clutter: Option<ClutterModel>,
        noise_power: f64,
        seed: u64,
        options: SceneOptions,
    ) -> Result<Self> {
        let geometry = geometry.validated()?;
        let params = params.validated()?;
        if (params.carrier_freq - geometry.carrier_freq()).abs() > 1e-9 * geometry.carrier_freq() {
            return Err(Error::InvalidArgument("waveform and array carriers differ".into()));
        }
        if !(noise_power.is_finite() && noise_power >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise power {noise_power}")));
        }
        let clutter = clutter.map(ClutterModel::validated).transpose()?;
        let migration_limit = 0.5 * params.bin_width();
        let scale = (geometry.n_elements() as f64).sqrt();
        let prepared = targets
            .iter()
            .map(|t| {
                if !(t.velocity.speed() < SPEED_OF_LIGHT) {
                    return Err(Error::InvalidArgument("target faster than light".into()));
                }
                let bin = range_bin_of(&params, t.position.range())?;
                let displacement = t.velocity.radial.abs() * params.cpi();
                if displacement > migration_limit {
                    return Err(Error::RangeMigration { displacement, limit: migration_limit });
                }
                let doppler = per_element_doppler(&geometry, &params, t)?;
                if !options.allow_alias {
                    if let Some(&f) = doppler.iter().find(|f| f.abs() >= 0.5) {
                        return Err(Error::DopplerAlias { value: f });
                    }
                }
                let spatial = nf_steering(&geometry, &t.position)
                    .into_coeffs()
                    .into_iter()
                    .map(|a| a * scale * t.amplitude)
                    .collect();
                Ok(PreparedTarget { bin, spatial, doppler })
            })
            .collect::<Result<Vec<_>>>()?;
        let clutter_angles = clutter.map(|c| c.patch_angles()).unwrap_or_default();
        Ok(Self {
            geometry,
            params,
            targets,
            prepared,
            clutter,
            clutter_angles,
            noise_power,
            seed,
        })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn clutter(&self) -> Option<&ClutterModel> {
        self.clutter.as_ref()
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Range bin of every target, in input order.
    pub fn target_bins(&self) -> Vec<usize> {
        self.prepared.iter().map(|t| t.bin).collect()
    }

    fn generate(&self, l: usize) -> Vec<c64> {
        let (m_count, n_count) = (self.params.n_pulses, self.geometry.n_elements());
        let mut out = vec![c64::new(0.0, 0.0); m_count * n_count];

        if let Some(clutter) = &self.clutter {
            let mut rng = stream(clutter.seed, l);
            let power = clutter.patch_power(self.noise_power);
            let r = bin_range(&self.params, l);
            let scale = (n_count as f64).sqrt();
            let mut ridge = vec![c64::new(0.0, 0.0); n_count];
            for &theta in &self.clutter_angles {
                let c = complex_normal(&mut rng, power) * scale;
                let jitter = if clutter.doppler_jitter > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * clutter.doppler_jitter
                } else {
                    0.0
                };
                let a = nf_steering(&self.geometry, &PolarPoint::new(r, theta).expect("valid patch"));
                if jitter == 0.0 {
                    for (acc, an) in ridge.iter_mut().zip(a.coeffs()) {
                        *acc += c * an;
                    }
                } else {
                    for (m, row) in out.chunks_exact_mut(n_count).enumerate() {
                        let cm = c * cis(2.0 * std::f64::consts::PI * jitter * m as f64);
                        for (x, an) in row.iter_mut().zip(a.coeffs()) {
                            *x += cm * an;
                        }
                    }
                }
            }
            for row in out.chunks_exact_mut(n_count) {
                for (x, c) in row.iter_mut().zip(&ridge) {
                    *x += c;
                }
            }
        }

        for t in self.prepared.iter().filter(|t| t.bin == l) {
            for (m, row) in out.chunks_exact_mut(n_count).enumerate() {
                for ((x, s), f) in row.iter_mut().zip(&t.spatial).zip(&t.doppler) {
                    *x += s * cis(2.0 * std::f64::consts::PI * f * m as f64);
                }
            }
        }

        if self.noise_power > 0.0 {
            let mut rng = stream(self.seed, l);
            for x in out.iter_mut() {
                *x += complex_normal(&mut rng, self.noise_power);
            }
        }
        out
    }
}

impl SnapshotSource for Scene {
    fn params(&self) -> &WaveformParams {
        &self.params
    }

    fn n_elements(&self) -> usize {
        self.geometry.n_elements()
    }

    fn slab(&self, l: usize) -> Result<Cow<'_, [c64]>> {
        if l >= self.params.n_range_bins() {
            return Err(Error::RangeOutOfBounds {
                range: bin_range(&self.params, l),
                max: self.params.max_range(),
            });
        }
        Ok(Cow::Owned(self.generate(l)))
    }
}

/// A materialized cube.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    data: Vec<c64>,
    params: WaveformParams,
    n_elements: usize,
    /// Unknown for cubes read back from disk.
    noise_power: Option<f64>,
}

impl RadarCube {
    pub fn from_data(
        data: Vec<c64>,
        params: WaveformParams,
        n_elements: usize,
        noise_power: Option<f64>,
    ) -> Result<Self> {
        let params = params.validated()?;
        let expected = params.n_range_bins() * params.n_pulses * n_elements;
        if data.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: data.len() });
        }
        if data.iter().any(|x| !(x.re.is_finite() && x.im.is_finite())) {
            return Err(Error::Format("non-finite cube entry".into()));
        }
        Ok(Self { data, params, n_elements, noise_power })
    }

    pub fn data(&self) -> &[c64] {
        &self.data
    }

    pub fn noise_power(&self) -> Option<f64> {
        self.noise_power
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.params.n_range_bins(), self.params.n_pulses, self.n_elements)
    }

    pub fn at(&self, l: usize, m: usize, n: usize) -> c64 {
        let (_, mm, nn) = self.dims();
        self.data[(l * mm + m) * nn + n]
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CUBE_MAGIC {
            return Err(Error::Format("not an NFCUBE01 file".into()));
        }
        let mut u = [0u64; 3];
        for x in &mut u {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *x = u64::from_le_bytes(b);
        }
        let mut f = [0f64; 4];
        for x in &mut f {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *x = f64::from_le_bytes(b);
        }
        let [l, m, n] = u.map(|x| x as usize);
        let params = WaveformParams {
            prf: f[0],
            n_pulses: m,
            sample_rate: f[1],
            bandwidth: f[2],
            carrier_freq: f[3],
        };
        if params.n_range_bins() != l {
            return Err(Error::Format(format!(
                "header L={l} disagrees with f_s/f_r={}",
                params.n_range_bins()
            )));
        }
        let count = l
            .checked_mul(m)
            .and_then(|x| x.checked_mul(n))
            .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
        if count as u128 > DEFAULT_CUBE_CAP {
            return Err(Error::CubeTooLarge { entries: count as u128, cap: DEFAULT_CUBE_CAP });
        }
        let mut bytes = vec![0u8; count * 16];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(16)
            .map(|c| {
                c64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        Self::from_data(data, params, n, None)
    }
}

impl SnapshotSource for RadarCube {
    fn params(&self) -> &WaveformParams {
        &self.params
    }

    fn n_elements(&self) -> usize {
        self.n_elements
    }

    fn slab(&self, l: usize) -> Result<Cow<'_, [c64]>> {
        let (ll, m, n) = self.dims();
        if l >= ll {
            return Err(Error::DimensionMismatch { expected: ll, got: l });
        }
        Ok(Cow::Borrowed(&self.data[l * m * n..(l + 1) * m * n]))
    }
}

/// Streams any snapshot source to the binary cube format, bin by bin.
pub fn write_cube<W: Write>(src: &dyn SnapshotSource, mut w: W) -> Result<()> {
    let p = src.params();
    w.write_all(CUBE_MAGIC)?;
    for x in [src.n_range_bins(), p.n_pulses, src.n_elements()] {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    for x in [p.prf, p.sample_rate, p.bandwidth, p.carrier_freq] {
        w.write_all(&x.to_le_bytes())?;
    }
    let mut buf = Vec::new();
    for l in 0..src.n_range_bins() {
        buf.clear();
        for x in src.slab(l)?.iter() {
            buf.extend_from_slice(&x.re.to_le_bytes());
            buf.extend_from_slice(&x.im.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Materializes the full cube, refusing anything above `cap` entries.
pub fn synthesize_cube_capped(scene: &Scene, cap: u128) -> Result<RadarCube> {
    let (l, m, n) = (scene.n_range_bins(), scene.n_pulses(), scene.n_elements());
    let entries = l as u128 * m as u128 * n as u128;
    if entries > cap {
        return Err(Error::CubeTooLarge { entries, cap });
    }
    let slabs: Vec<Vec<c64>> = (0..l).into_par_iter().map(|b| scene.generate(b)).collect();
    RadarCube::from_data(slabs.concat(), scene.params, n, Some(scene.noise_power))
}

pub fn synthesize_cube(scene: &Scene) -> Result<RadarCube> {
    synthesize_cube_capped(scene, DEFAULT_CUBE_CAP)
}
