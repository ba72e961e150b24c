//! Angular spread of a near-field user over the DFT beams and the polar-grid
//! lookup table that maps a measured spread back to range and angle.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{polar_grid, Codebook, FORMAT_VERSION};
use crate::geometry::{nf_steering, ArrayGeometry, PolarPoint};
use crate::{Error, Result};

/// 6 dB marks the geometric edge of the Fresnel-like beam pattern a
/// near-field user produces across the DFT grid; inside that edge the gain
/// ripples by close to 3 dB, so a 3 dB threshold fragments the spread.
pub const DEFAULT_THRESHOLD_DB: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AngularSpreadDescriptor {
    pub peak_index: usize,
    pub spread_count: usize,
    /// Gains in dB relative to the peak, ordered by beam index starting at
    /// the first beam of the spread.
    pub gain_profile: Vec<f64>,
}

impl AngularSpreadDescriptor {
    /// Position of the peak beam inside `gain_profile`.
    pub fn peak_offset(&self) -> usize {
        self.gain_profile
            .iter()
            .position(|&g| g == 0.0)
            .unwrap_or_else(|| argmax(&self.gain_profile))
    }

    /// First DFT beam index covered by the spread.
    pub fn first_beam(&self) -> usize {
        self.peak_index - self.peak_offset()
    }

    fn validate(&self) -> Result<()> {
        let ok = self.spread_count >= 1
            && self.gain_profile.len() == self.spread_count
            && self.gain_profile.iter().all(|g| g.is_finite() && *g <= 0.0)
            && self.peak_offset() <= self.peak_index;
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!("inconsistent spread descriptor {self:?}")))
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Builds the descriptor from one sweep of beam powers: the maximal run of
/// contiguous beams within `threshold_db` of the strongest beam.
pub fn measure_spread(beam_gains: &[f64], threshold_db: f64) -> Result<AngularSpreadDescriptor> {
    if !(threshold_db > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold_db} dB must be positive")));
    }
    if beam_gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::InvalidArgument("beam gains must be finite and nonnegative".into()));
    }
    let peak = argmax(beam_gains);
    let peak_gain = beam_gains.get(peak).copied().unwrap_or(0.0);
    if !(peak_gain > 0.0) {
        return Err(Error::NoCoverage);
    }
    let floor = peak_gain * 10f64.powf(-threshold_db / 10.0);
    let mut lo = peak;
    while lo > 0 && beam_gains[lo - 1] >= floor {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < beam_gains.len() && beam_gains[hi + 1] >= floor {
        hi += 1;
    }
    let gain_profile = beam_gains[lo..=hi]
        .iter()
        .enumerate()
        .map(|(i, g)| if lo + i == peak { 0.0 } else { 10.0 * (g / peak_gain).log10().min(0.0) })
        .collect();
    Ok(AngularSpreadDescriptor { peak_index: peak, spread_count: hi - lo + 1, gain_profile })
}

/// Euclidean distance between two profiles aligned on absolute beam index.
/// A beam missing from one profile was below threshold there and counts as
/// `floor_db`.
fn profile_distance(a: &AngularSpreadDescriptor, b: &AngularSpreadDescriptor, floor_db: f64) -> f64 {
    let (a0, b0) = (a.first_beam(), b.first_beam());
    let lo = a0.min(b0);
    let hi = (a0 + a.spread_count).max(b0 + b.spread_count);
    let at = |d: &AngularSpreadDescriptor, start: usize, k: usize| {
        k.checked_sub(start)
            .and_then(|i| d.gain_profile.get(i).copied())
            .unwrap_or(floor_db)
    };
    (lo..hi)
        .map(|k| (at(a, a0, k) - at(b, b0, k)).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct AngularSpreadTable {
    geometry: ArrayGeometry,
    threshold_db: f64,
    min_range: f64,
    grid: Vec<PolarPoint>,
    entries: Vec<AngularSpreadDescriptor>,
}

impl AngularSpreadTable {
    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn carrier_freq(&self) -> f64 {
        self.geometry.carrier_freq()
    }

    pub fn threshold_db(&self) -> f64 {
        self.threshold_db
    }

    pub fn min_range(&self) -> f64 {
        self.min_range
    }

    pub fn grid(&self) -> &[PolarPoint] {
        &self.grid
    }

    pub fn entries(&self) -> &[AngularSpreadDescriptor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Number of grid points whose (peak, count) key is shared with another
    /// point, i.e. where the spread alone does not identify the position.
    pub fn collisions(&self) -> usize {
        let mut keys: Vec<(usize, usize)> =
            self.entries.iter().map(|e| (e.peak_index, e.spread_count)).collect();
        keys.sort_unstable();
        let mut shared = 0;
        let mut i = 0;
        while i < keys.len() {
            let j = keys[i..].iter().take_while(|k| **k == keys[i]).count();
            if j > 1 {
                shared += j;
            }
            i += j;
        }
        shared
    }

    /// Index of the grid point whose descriptor best matches `meas`.
    ///
    /// Keys, in order: profile distance, peak-index distance, spread-count
    /// distance, smaller range, smaller |angle|.
    ///
    /// The profile leads because the peak beam of a near-field user sits on
    /// a ripple of a nearly flat plateau and hops under mild noise, while the
    /// profile as a whole is stable.
    pub fn best_match(&self, meas: &AngularSpreadDescriptor) -> usize {
        let key = |i: usize| {
            let e = &self.entries[i];
            (
                profile_distance(e, meas, -self.threshold_db),
                e.peak_index.abs_diff(meas.peak_index),
                e.spread_count.abs_diff(meas.spread_count),
                self.grid[i].range(),
                self.grid[i].angle().abs(),
            )
        };
        let cmp = |a: &(f64, usize, usize, f64, f64), b: &(f64, usize, usize, f64, f64)| {
            a.0.total_cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.total_cmp(&b.3))
                .then(a.4.total_cmp(&b.4))
        };
        let mut best = 0;
        let mut best_key = key(0);
        for i in 1..self.entries.len() {
            let k = key(i);
            if cmp(&k, &best_key) == Ordering::Less {
                best = i;
                best_key = k;
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        let grid = self
            .grid
            .iter()
            .zip(&self.entries)
            .map(|(p, e)| TableRow {
                r: p.range(),
                theta: p.angle(),
                peak: e.peak_index,
                count: e.spread_count,
                profile: e.gain_profile.clone(),
            })
            .collect();
        let file = TableFile {
            version: FORMAT_VERSION,
            geometry: self.geometry,
            threshold_db: self.threshold_db,
            min_range: self.min_range,
            grid,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(s)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported table version {}", file.version)));
        }
        if file.grid.is_empty() {
            return Err(Error::Format("empty spread table".into()));
        }
        let mut grid = Vec::with_capacity(file.grid.len());
        let mut entries = Vec::with_capacity(file.grid.len());
        for row in file.grid {
            grid.push(PolarPoint::new(row.r, row.theta)?);
            let entry = AngularSpreadDescriptor {
                peak_index: row.peak,
                spread_count: row.count,
                gain_profile: row.profile,
            };
            entry.validate()?;
            entries.push(entry);
        }
        Ok(Self {
            geometry: file.geometry.validated()?,
            threshold_db: file.threshold_db,
            min_range: file.min_range,
            grid,
            entries,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRow {
    r: f64,
    theta: f64,
    peak: usize,
    count: usize,
    profile: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    version: u32,
    geometry: ArrayGeometry,
    threshold_db: f64,
    min_range: f64,
    grid: Vec<TableRow>,
}

/// Noiseless sweep of `dft` toward a user at `p`.
pub fn sweep_at(dft: &Codebook, p: &PolarPoint) -> Vec<f64> {
    dft.sweep(&nf_steering(dft.geometry(), p))
}

pub fn build_spread_table(
    dft: &Codebook,
    threshold_db: f64,
    min_range: f64,
    angle_count: usize,
) -> Result<AngularSpreadTable> {
    let geometry = *dft.geometry();
    let grid: Vec<PolarPoint> = polar_grid(&geometry, angle_count, min_range)?.points().collect();
    let entries = grid
        .par_iter()
        .map(|p| measure_spread(&sweep_at(dft, p), threshold_db))
        .collect::<Result<Vec<_>>>()?;
    Ok(AngularSpreadTable { geometry, threshold_db, min_range, grid, entries })
}

pub fn coarse_estimate(table: &AngularSpreadTable, meas: &AngularSpreadDescriptor) -> PolarPoint {
    table.grid[table.best_match(meas)]
}
