//! Uniform linear array geometry, near- and far-field steering, array gain,
//! 3 dB beam-depth and the effective beam-focusing boundary.
//!
//! Angles are measured from the array boresight, so the spatial frequency of
//! a direction is `sin(angle)`. Element `n` sits at
//! `delta_n = (n - (N - 1) / 2) * spacing` on the array axis, which keeps the
//! aperture centered on the origin.

use serde::{Deserialize, Serialize};

use crate::linalg::{c64, cis, dot, norm};
use crate::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Relative bisection tolerance for the beam-depth edges.
const BEAM_EDGE_TOL: f64 = 1e-4;
/// Relative bisection tolerance for the EBRD search.
const EBRD_TOL: f64 = 1e-3;
/// Ratio between consecutive samples of the logarithmic range scan.
const SCAN_RATIO: f64 = 1.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    n_elements: usize,
    spacing: f64,
    carrier_freq: f64,
}

impl ArrayGeometry {
    pub fn new(n_elements: usize, spacing: f64, carrier_freq: f64) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 elements, got {n_elements}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGeometry(format!("spacing must be positive, got {spacing}")));
        }
        if !(carrier_freq.is_finite() && carrier_freq > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "carrier frequency must be positive, got {carrier_freq}"
            )));
        }
        Ok(Self { n_elements, spacing, carrier_freq })
    }

    /// Half-wavelength spaced array at `carrier_freq`.
    pub fn half_wavelength(n_elements: usize, carrier_freq: f64) -> Result<Self> {
        Self::new(n_elements, 0.5 * SPEED_OF_LIGHT / carrier_freq, carrier_freq)
    }

    /// Re-checks the invariants after deserialization.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.n_elements, self.spacing, self.carrier_freq)
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn carrier_freq(&self) -> f64 {
        self.carrier_freq
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }

    /// `(N - 1) * spacing`.
    pub fn aperture(&self) -> f64 {
        (self.n_elements - 1) as f64 * self.spacing
    }

    /// Coordinate of element `n` on the array axis.
    pub fn element_position(&self, n: usize) -> f64 {
        (n as f64 - (self.n_elements - 1) as f64 / 2.0) * self.spacing
    }

    /// Width of one DFT beam in spatial frequency, `lambda / (N d)`.
    pub fn dft_beamwidth(&self) -> f64 {
        self.wavelength() / (self.n_elements as f64 * self.spacing)
    }
}

/// A point in the array's polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolarRepr")]
pub struct PolarPoint {
    range: f64,
    angle: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolarRepr {
    range: f64,
    angle: f64,
}

impl TryFrom<PolarRepr> for PolarPoint {
    type Error = Error;

    fn try_from(p: PolarRepr) -> Result<Self> {
        Self::new(p.range, p.angle)
    }
}

impl PolarPoint {
    pub fn new(range: f64, angle: f64) -> Result<Self> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(range.is_finite() && range > 0.0 && angle.is_finite() && angle.abs() < half_pi) {
            return Err(Error::InvalidPoint { range, angle });
        }
        Ok(Self { range, angle })
    }

    pub fn from_degrees(range: f64, angle_deg: f64) -> Result<Self> {
        Self::new(range, angle_deg.to_radians())
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle.to_degrees()
    }

    /// Cartesian position: x along the array axis, y along boresight.
    pub fn to_cartesian(&self) -> (f64, f64) {
        (self.range * self.angle.sin(), self.range * self.angle.cos())
    }
}

/// Unit-norm array response.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    coeffs: Vec<c64>,
}

impl SteeringVector {
    /// Wraps `coeffs`, rescaling them to unit norm.
    pub fn from_coeffs(mut coeffs: Vec<c64>) -> Self {
        crate::linalg::normalize(&mut coeffs);
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[c64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<c64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `self^H other`.
    pub fn inner(&self, other: &SteeringVector) -> c64 {
        dot(&self.coeffs, &other.coeffs)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coeffs)
    }
}

/// Distance from element `n` to `p`, by the law of cosines.
pub fn element_distance(geom: &ArrayGeometry, p: &PolarPoint, n: usize) -> f64 {
    let delta = geom.element_position(n);
    (p.range * p.range + delta * delta - 2.0 * p.range * delta * p.angle.sin()).sqrt()
}

/// `r^(n) - r` without the cancellation of subtracting two large ranges.
fn path_difference(p: &PolarPoint, delta: f64) -> f64 {
    let r = p.range;
    let rn = (r * r + delta * delta - 2.0 * r * delta * p.angle.sin()).sqrt();
    (delta * delta - 2.0 * r * delta * p.angle.sin()) / (rn + r)
}

/// Spherical-wavefront response focused on `p`.
pub fn nf_steering(geom: &ArrayGeometry, p: &PolarPoint) -> SteeringVector {
    let k = geom.wavenumber();
    let scale = 1.0 / (geom.n_elements as f64).sqrt();
    let coeffs = (0..geom.n_elements)
        .map(|n| cis(-k * path_difference(p, geom.element_position(n))) * scale)
        .collect();
    SteeringVector { coeffs }
}

/// Planar-wavefront response toward `angle`: the `r -> inf` limit of
/// [`nf_steering`].
pub fn ff_steering(geom: &ArrayGeometry, angle: f64) -> SteeringVector {
    ff_steering_sin(geom, angle.sin())
}

/// [`ff_steering`] parameterized by spatial frequency `sin(angle)`.
pub fn ff_steering_sin(geom: &ArrayGeometry, sin_theta: f64) -> SteeringVector {
    let k = geom.wavenumber();
    let scale = 1.0 / (geom.n_elements as f64).sqrt();
    let coeffs = (0..geom.n_elements)
        .map(|n| cis(k * geom.element_position(n) * sin_theta) * scale)
        .collect();
    SteeringVector { coeffs }
}

/// Power gain `N |w^H a(p)|^2` of beamformer `w` toward `p`.
pub fn array_gain(w: &SteeringVector, geom: &ArrayGeometry, p: &PolarPoint) -> f64 {
    let a = nf_steering(geom, p);
    geom.n_elements as f64 * w.inner(&a).norm_sqr()
}

/// Gain of `w` toward a source at infinite range in direction `angle`.
pub fn array_gain_far(w: &SteeringVector, geom: &ArrayGeometry, angle: f64) -> f64 {
    let a = ff_steering(geom, angle);
    geom.n_elements as f64 * w.inner(&a).norm_sqr()
}

/// `2 D^2 / lambda`.
pub fn rayleigh_distance(geom: &ArrayGeometry) -> f64 {
    let d = geom.aperture();
    2.0 * d * d / geom.wavelength()
}

/// Radial extent of a focused beam's half-power region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeamDepth {
    Bounded { near: f64, far: f64 },
    /// The gain never falls 3 dB below peak beyond the focal range.
    Unbounded { near: f64 },
}

impl BeamDepth {
    pub fn near(&self) -> f64 {
        match *self {
            BeamDepth::Bounded { near, .. } | BeamDepth::Unbounded { near } => near,
        }
    }

    pub fn far(&self) -> Option<f64> {
        match *self {
            BeamDepth::Bounded { far, .. } => Some(far),
            BeamDepth::Unbounded { .. } => None,
        }
    }

    pub fn width(&self) -> Option<f64> {
        self.far().map(|far| far - self.near())
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, BeamDepth::Bounded { .. })
    }

    pub fn contains(&self, range: f64) -> bool {
        range >= self.near() && self.far().map_or(true, |far| range <= far)
    }
}

/// Gain of the beam focused at `focal`, relative to its peak, along the
/// focal direction.
struct RadialProfile<'a> {
    geom: &'a ArrayGeometry,
    focal: PolarPoint,
    w: SteeringVector,
}

impl<'a> RadialProfile<'a> {
    fn new(geom: &'a ArrayGeometry, focal: PolarPoint) -> Self {
        Self { geom, focal, w: nf_steering(geom, &focal) }
    }

    fn at(&self, range: f64) -> f64 {
        let p = PolarPoint { range, angle: self.focal.angle };
        self.w.inner(&nf_steering(self.geom, &p)).norm_sqr()
    }

    fn at_infinity(&self) -> f64 {
        self.w.inner(&ff_steering(self.geom, self.focal.angle)).norm_sqr()
    }

    /// Log-space bisection of a half-power crossing between `inside`
    /// (gain >= 1/2) and `outside` (gain < 1/2).
    fn bisect(&self, mut inside: f64, mut outside: f64) -> f64 {
        while (inside - outside).abs() > BEAM_EDGE_TOL * inside.min(outside) {
            let mid = (inside * outside).sqrt();
            if self.at(mid) >= 0.5 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    }
}

/// Numerical 3 dB beam-depth of the beam focused at `focal`.
///
/// The normalized gain along the focal direction is scanned on a logarithmic
/// range grid on either side of the focus and each half-power crossing is
/// refined by bisection. The far edge is unbounded when the beam keeps at
/// least half its peak gain all the way to infinity.
pub fn beam_depth_3db(geom: &ArrayGeometry, focal: &PolarPoint) -> Result<BeamDepth> {
    // Re-validate: the fields are public to deserialization.
    let geom = geom.validated()?;
    let profile = RadialProfile::new(&geom, *focal);
    let min_range = geom.spacing() * 1e-3;

    let mut r = focal.range;
    let near = loop {
        let next = r / SCAN_RATIO;
        if next < min_range {
            break min_range;
        }
        if profile.at(next) < 0.5 {
            break profile.bisect(r, next);
        }
        r = next;
    };

    // The main lobe is unimodal in inverse range and its sidelobes stay
    // below half power, so the beam is unbounded iff the far-field gain is.
    if profile.at_infinity() >= 0.5 {
        return Ok(BeamDepth::Unbounded { near });
    }
    let mut r = focal.range;
    loop {
        let next = r * SCAN_RATIO;
        if profile.at(next) < 0.5 {
            let far = profile.bisect(r, next);
            return Ok(BeamDepth::Bounded { near, far });
        }
        r = next;
    }
}

/// Effective beam-focused Rayleigh distance toward `angle`: the largest
/// focal range whose 3 dB beam-depth is still bounded.
pub fn ebrd(geom: &ArrayGeometry, angle: f64) -> Result<f64> {
    let bounded = |r: f64| -> Result<bool> {
        Ok(beam_depth_3db(geom, &PolarPoint::new(r, angle)?)?.is_bounded())
    };
    let mut lo = geom.aperture();
    let mut hi = rayleigh_distance(geom);
    if !bounded(lo)? {
        return Ok(lo);
    }
    if bounded(hi)? {
        return Ok(hi);
    }
    while hi - lo > EBRD_TOL * lo {
        let mid = 0.5 * (lo + hi);
        if bounded(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
