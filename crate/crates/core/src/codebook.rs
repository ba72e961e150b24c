//! DFT and polar codebooks.
//!
//! The polar grid samples angles uniformly in `sin(theta)` and, along each
//! angle, places range samples one half-power beam edge apart until the
//! effective beam-focusing boundary is reached.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    beam_depth_3db, ebrd, ff_steering_sin, nf_steering, ArrayGeometry, PolarPoint, SteeringVector,
};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodewordLabel {
    Dft { index: usize, sin_theta: f64 },
    Polar { r: f64, theta: f64 },
}

#[derive(Debug, Clone)]
pub struct Codebook {
    geometry: ArrayGeometry,
    codewords: Vec<SteeringVector>,
    labels: Vec<CodewordLabel>,
}

impl Codebook {
    fn from_labels(geometry: ArrayGeometry, labels: Vec<CodewordLabel>) -> Result<Self> {
        let codewords = labels
            .iter()
            .map(|label| match *label {
                CodewordLabel::Dft { sin_theta, .. } => Ok(ff_steering_sin(&geometry, sin_theta)),
                CodewordLabel::Polar { r, theta } => {
                    Ok(nf_steering(&geometry, &PolarPoint::new(r, theta)?))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { geometry, codewords, labels })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn codewords(&self) -> &[SteeringVector] {
        &self.codewords
    }

    pub fn labels(&self) -> &[CodewordLabel] {
        &self.labels
    }

    /// Beam gains `N |w_k^H a|^2` of every codeword toward the response `a`.
    pub fn sweep(&self, a: &SteeringVector) -> Vec<f64> {
        let n = self.geometry.n_elements() as f64;
        self.codewords.iter().map(|w| n * w.inner(a).norm_sqr()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CodebookFile {
            version: FORMAT_VERSION,
            geometry: self.geometry,
            codewords: self.labels.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Codewords are regenerated from the stored labels and geometry.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: CodebookFile = serde_json::from_str(s)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported codebook version {}", file.version)));
        }
        Self::from_labels(file.geometry.validated()?, file.codewords)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookFile {
    version: u32,
    geometry: ArrayGeometry,
    codewords: Vec<CodewordLabel>,
}

/// Spatial frequencies `(2k - S + 1) / S`, `k = 0..S`.
pub fn uniform_sines(count: usize) -> Vec<f64> {
    let s = count as f64;
    (0..count).map(|k| (2.0 * k as f64 - s + 1.0) / s).collect()
}

pub fn build_dft_codebook(geom: &ArrayGeometry, oversampling: usize) -> Result<Codebook> {
    if oversampling == 0 {
        return Err(Error::InvalidArgument("oversampling must be at least 1".into()));
    }
    // The grid is defined for half-wavelength sampling of sin(theta) in (-1, 1).
    let labels = uniform_sines(oversampling * geom.n_elements())
        .into_iter()
        .enumerate()
        .map(|(index, sin_theta)| CodewordLabel::Dft { index, sin_theta })
        .collect();
    Codebook::from_labels(*geom, labels)
}

/// Range samples along one grid angle.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarRay {
    pub angle: f64,
    pub ebrd: f64,
    pub ranges: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub rays: Vec<PolarRay>,
}

impl PolarGrid {
    pub fn points(&self) -> impl Iterator<Item = PolarPoint> + '_ {
        self.rays.iter().flat_map(|ray| {
            ray.ranges
                .iter()
                .map(move |&r| PolarPoint::new(r, ray.angle).expect("grid points are valid"))
        })
    }

    pub fn len(&self) -> usize {
        self.rays.iter().map(|ray| ray.ranges.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Range samples for one angle: start at `min_range` and step to the far
/// half-power edge of the previous sample until the EBRD is reached.
pub fn polar_ray(geom: &ArrayGeometry, angle: f64, min_range: f64) -> Result<PolarRay> {
    let boundary = ebrd(geom, angle)?;
    let mut ranges = vec![min_range];
    let mut r = min_range;
    while r < boundary {
        match beam_depth_3db(geom, &PolarPoint::new(r, angle)?)?.far() {
            Some(far) if far > r => {
                ranges.push(far);
                r = far;
            }
            _ => break,
        }
    }
    Ok(PolarRay { angle, ebrd: boundary, ranges })
}

pub fn polar_grid(geom: &ArrayGeometry, angle_count: usize, min_range: f64) -> Result<PolarGrid> {
    if angle_count == 0 {
        return Err(Error::InvalidArgument("angle_count must be at least 1".into()));
    }
    if !(min_range >= geom.aperture()) {
        return Err(Error::InvalidArgument(format!(
            "min_range {min_range} m is inside the aperture {} m",
            geom.aperture()
        )));
    }
    let rays = uniform_sines(angle_count)
        .into_par_iter()
        .map(|s| polar_ray(geom, s.asin(), min_range))
        .collect::<Result<Vec<_>>>()?;
    Ok(PolarGrid { rays })
}

pub fn build_polar_codebook(
    geom: &ArrayGeometry,
    angle_count: usize,
    min_range: f64,
) -> Result<Codebook> {
    let grid = polar_grid(geom, angle_count, min_range)?;
    let labels = grid
        .points()
        .map(|p| CodewordLabel::Polar { r: p.range(), theta: p.angle() })
        .collect();
    Codebook::from_labels(*geom, labels)
}

/// Default lower range limit: twice the aperture, outside the reactive near field.
pub fn default_min_range(geom: &ArrayGeometry) -> f64 {
    2.0 * geom.aperture()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rayleigh_distance;

    fn geom(n: usize) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(n, 28e9).unwrap()
    }

    #[test]
    fn dft_is_orthonormal() {
        let cb = build_dft_codebook(&geom(4), 1).unwrap();
        assert_eq!(cb.len(), 4);
        for (i, a) in cb.codewords().iter().enumerate() {
            for (j, b) in cb.codewords().iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((a.inner(b).norm() - want).abs() < 1e-10);
            }
        }
        assert_eq!(build_dft_codebook(&geom(256), 1).unwrap().len(), 256);
    }

    #[test]
    fn oversampled_neighbors_follow_dirichlet_kernel() {
        let n = 64;
        let cb = build_dft_codebook(&geom(n), 2).unwrap();
        assert_eq!(cb.len(), 2 * n);
        // Adjacent beams differ by 1/N in sin(theta): |sin(pi/2) / (N sin(pi/(2N)))|.
        let closed_form = 1.0 / (n as f64 * (std::f64::consts::PI / (2.0 * n as f64)).sin());
        for pair in cb.codewords().windows(2) {
            let c = pair[0].inner(&pair[1]).norm();
            assert!((c - closed_form).abs() < 1e-10);
            assert!(c > 0.6);
        }
        assert!(build_dft_codebook(&geom(8), 0).is_err());
    }

    #[test]
    fn polar_rays_are_increasing_and_capped() {
        let g = geom(64);
        let grid = polar_grid(&g, 9, default_min_range(&g)).unwrap();
        for ray in &grid.rays {
            let ranges = &ray.ranges;
            assert!(ranges.windows(2).all(|w| w[1] > w[0]));
            let last_inside = ranges.iter().rev().nth(1).copied().unwrap_or(ranges[0]);
            assert!(last_inside < ray.ebrd || ranges.len() == 1);
            let width = beam_depth_3db(&g, &PolarPoint::new(last_inside, ray.angle).unwrap())
                .unwrap()
                .width();
            if let (Some(width), true) = (width, ranges.len() > 1) {
                assert!(*ranges.last().unwrap() <= ray.ebrd + width + 1e-9);
            }
        }
        let boresight = grid.rays[4].ranges.len();
        assert!(grid.rays.iter().all(|ray| ray.ranges.len() <= boresight));
    }

    #[test]
    fn consecutive_polar_codewords_overlap_moderately() {
        let g = geom(64);
        let cb = build_polar_codebook(&g, 5, default_min_range(&g)).unwrap();
        let mut checked = 0;
        for pair in cb.codewords().windows(2).zip(cb.labels().windows(2)) {
            let (words, labels) = pair;
            if let (CodewordLabel::Polar { theta: a, .. }, CodewordLabel::Polar { theta: b, .. }) =
                (labels[0], labels[1])
            {
                if a == b {
                    let c = words[0].inner(&words[1]).norm();
                    assert!((0.3..=0.9).contains(&c), "{c}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn angle_beyond_ebrd_gets_single_sample() {
        let g = geom(64);
        let steep = (0.995f64).asin();
        let ray = polar_ray(&g, steep, 1.2 * g.aperture()).unwrap();
        assert!(ray.ebrd < 1.2 * g.aperture());
        assert_eq!(ray.ranges, vec![1.2 * g.aperture()]);
        assert!(polar_grid(&g, 3, 0.5 * g.aperture()).is_err());
    }

    #[test]
    fn ebrd_cap_saves_codewords() {
        let g = geom(64);
        let min = default_min_range(&g);
        let grid = polar_grid(&g, 7, min).unwrap();
        // Uniform inverse-range sampling at the boresight spacing all the way
        // to the Rayleigh distance.
        let bd = beam_depth_3db(&g, &PolarPoint::new(min, 0.0).unwrap()).unwrap();
        let step = 1.0 / min - 1.0 / bd.far().unwrap();
        let uniform = ((1.0 / min - 1.0 / rayleigh_distance(&g)) / step).floor() as usize + 1;
        assert!(grid.len() < 7 * uniform);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let g = geom(16);
        let cb = build_polar_codebook(&g, 3, default_min_range(&g)).unwrap();
        let back = Codebook::from_json(&cb.to_json().unwrap()).unwrap();
        assert_eq!(back.labels(), cb.labels());
        for (a, b) in back.codewords().iter().zip(cb.codewords()) {
            assert_eq!(a, b);
        }
    }
}
