//! Cell-averaging CFAR along the Doppler axis of a detection map, clustering
//! of adjacent hits and parameter estimation.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stap::DetectionMap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfarAxis {
    #[default]
    Doppler,
    Range,
    Angle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfarConfig {
    pub pfa: f64,
    /// Training cells per side.
    pub train_cells: usize,
    /// Guard cells per side.
    pub guard_cells: usize,
    #[serde(default)]
    pub axis: CfarAxis,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self { pfa: 1e-4, train_cells: 8, guard_cells: 2, axis: CfarAxis::Doppler }
    }
}

impl CfarConfig {
    pub fn validated(self) -> Result<Self> {
        if !(self.pfa > 0.0 && self.pfa < 1.0) || self.train_cells == 0 {
            return Err(Error::InvalidArgument(format!("invalid CFAR configuration {self:?}")));
        }
        Ok(self)
    }
}

/// Threshold multiplier `K (pfa^(-1/K) - 1)` that gives false-alarm
/// probability `pfa` for exponential cells averaged over `K` references.
pub fn cfar_alpha(pfa: f64, k: usize) -> f64 {
    let k = k as f64;
    k * (pfa.powf(-1.0 / k) - 1.0)
}

/// Noise estimate and threshold multiplier for cell `i`. Near the ends the
/// window loses its outer cells and the multiplier is recomputed for the
/// cells that remain.
pub fn cfar_reference(slice: &[f64], i: usize, cfg: &CfarConfig) -> (f64, f64) {
    let (g, t) = (cfg.guard_cells, cfg.train_cells);
    let mut sum = 0.0;
    let mut count = 0;
    if i > g {
        let lo = i.saturating_sub(g + t);
        sum += slice[lo..i - g].iter().sum::<f64>();
        count += i - g - lo;
    }
    if i + g + 1 < slice.len() {
        let hi = (i + g + t + 1).min(slice.len());
        sum += slice[i + g + 1..hi].iter().sum::<f64>();
        count += hi - (i + g + 1);
    }
    (sum / count as f64, cfar_alpha(cfg.pfa, count))
}

/// Indices whose value exceeds `alpha` times the mean of its training cells.
pub fn ca_cfar(slice: &[f64], cfg: &CfarConfig) -> Result<Vec<usize>> {
    let cfg = cfg.validated()?;
    if slice.len() <= 2 * (cfg.train_cells + cfg.guard_cells) + 1 {
        return Err(Error::InvalidArgument(format!(
            "CFAR slice of {} cells is too short for {} training and {} guard cells per side",
            slice.len(),
            cfg.train_cells,
            cfg.guard_cells
        )));
    }
    Ok((0..slice.len())
        .filter(|&i| {
            let (mean, alpha) = cfar_reference(slice, i, &cfg);
            slice[i] > alpha * mean
        })
        .collect())
}

/// A CFAR hit on a map cell, with its level over the local noise estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: usize,
    pub doppler: usize,
    pub angle: usize,
    pub snr_db: f64,
}

/// Runs CFAR over every 1-D line of `map` along `cfg.axis`.
pub fn detect_map(map: &DetectionMap, cfg: &CfarConfig) -> Result<Vec<Hit>> {
    let cfg = cfg.validated()?;
    let (nr, nd, na) = map.shape();
    // (line length, number of lines, cell of (line, position)).
    let (len, lines): (usize, Vec<(usize, usize)>) = match cfg.axis {
        CfarAxis::Doppler => (nd, (0..nr).flat_map(|r| (0..na).map(move |a| (r, a))).collect()),
        CfarAxis::Range => (nr, (0..nd).flat_map(|d| (0..na).map(move |a| (d, a))).collect()),
        CfarAxis::Angle => (na, (0..nr).flat_map(|r| (0..nd).map(move |d| (r, d))).collect()),
    };
    let cell = |(x, y): (usize, usize), i: usize| match cfg.axis {
        CfarAxis::Doppler => (x, i, y),
        CfarAxis::Range => (i, x, y),
        CfarAxis::Angle => (x, y, i),
    };
    let per_line = lines
        .par_iter()
        .map(|&line| -> Result<Vec<Hit>> {
            let slice: Vec<f64> = (0..len)
                .map(|i| {
                    let (r, d, a) = cell(line, i);
                    map.get(r, d, a)
                })
                .collect();
            Ok(ca_cfar(&slice, &cfg)?
                .into_iter()
                .map(|i| {
                    let (r, d, a) = cell(line, i);
                    let (mean, _) = cfar_reference(&slice, i, &cfg);
                    Hit { range: r, doppler: d, angle: a, snr_db: 10.0 * (slice[i] / mean).log10() }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hits = per_line.concat();
    hits.sort_by_key(|h| (h.range, h.doppler, h.angle));
    Ok(hits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub range_m: f64,
    pub velocity_mps: f64,
    pub angle_deg: f64,
    pub statistic_db: f64,
}

/// Groups hits that touch (including diagonally) in range-Doppler. The angle
/// index is ignored: candidate angles sit well inside one beamwidth, so one
/// target can fire at non-adjacent candidates.
pub fn cluster_hits(hits: &[Hit]) -> Vec<Vec<Hit>> {
    let adjacent = |a: &Hit, b: &Hit| a.range.abs_diff(b.range) <= 1 && a.doppler.abs_diff(b.doppler) <= 1;
    let mut seen = vec![false; hits.len()];
    let mut clusters = Vec::new();
    for start in 0..hits.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(hits[i]);
            for j in 0..hits.len() {
                if !seen[j] && adjacent(&hits[i], &hits[j]) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        clusters.push(members);
    }
    clusters
}

/// Vertex offset of the parabola through three equally spaced samples, in
/// `[-0.5, 0.5]`.
fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if !(denom < 0.0) {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// One detection per cluster, at its strongest cell: range and angle from the
/// cell centers, velocity refined by a parabola through the dB statistic of
/// the neighbouring Doppler cells.
pub fn estimate_parameters(map: &DetectionMap, hits: &[Hit]) -> Vec<Detection> {
    let nd = map.dopplers.len();
    let mut out: Vec<Detection> = cluster_hits(hits)
        .into_iter()
        .map(|members| {
            let best = members
                .iter()
                .copied()
                .max_by(|a, b| map.get(a.range, a.doppler, a.angle).total_cmp(&map.get(b.range, b.doppler, b.angle)))
                .expect("clusters are non-empty");
            let d = best.doppler;
            let mut velocity = map.velocities[d];
            if d > 0 && d + 1 < nd {
                let at = |k: usize| map.db(best.range, k, best.angle);
                let delta = parabolic_offset(at(d - 1), at(d), at(d + 1));
                let step = if delta >= 0.0 {
                    map.velocities[d + 1] - map.velocities[d]
                } else {
                    map.velocities[d] - map.velocities[d - 1]
                };
                velocity += delta * step;
            }
            Detection {
                range_m: map.ranges[best.range],
                velocity_mps: velocity,
                angle_deg: map.angles[best.angle].to_degrees(),
                statistic_db: best.snr_db,
            }
        })
        .collect();
    out.sort_by(|a, b| a.range_m.total_cmp(&b.range_m).then(a.velocity_mps.total_cmp(&b.velocity_mps)));
    out
}

pub fn detections_to_json(detections: &[Detection]) -> Result<String> {
    Ok(serde_json::to_string_pretty(detections)?)
}

pub fn write_detections<W: Write>(detections: &[Detection], mut w: W) -> Result<()> {
    w.write_all(detections_to_json(detections)?.as_bytes())?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stap::doppler_grid;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(pfa: f64) -> CfarConfig {
        CfarConfig { pfa, train_cells: 8, guard_cells: 2, axis: CfarAxis::Doppler }
    }

    #[test]
    fn alpha_matches_closed_form() {
        let a = cfar_alpha(1e-4, 16);
        assert!((a - 16.0 * (10f64.powf(4.0 / 16.0) - 1.0)).abs() < 1e-12);
        assert!(a > 12.0 && a < 13.0);
    }

    #[test]
    fn flat_slice_has_no_detections() {
        // alpha >= 1 needs pfa <= (1 + 1/K)^-K, which tends to 1/e.
        for pfa in [1e-6, 1e-3, 0.1, 0.36] {
            assert!(ca_cfar(&[3.0; 64], &cfg(pfa)).unwrap().is_empty());
        }
        assert!(cfar_alpha(0.49, 16) < 1.0);
    }

    #[test]
    fn strong_cell_is_detected() {
        let mut slice = vec![1.0; 64];
        slice[30] = 100.0;
        assert_eq!(ca_cfar(&slice, &cfg(1e-4)).unwrap(), vec![30]);
        slice[0] = 100.0;
        assert_eq!(ca_cfar(&slice, &cfg(1e-4)).unwrap(), vec![0, 30]);
    }

    #[test]
    fn rejects_short_slices_and_bad_config() {
        assert!(ca_cfar(&[1.0; 21], &cfg(1e-3)).is_err());
        assert!(ca_cfar(&[1.0; 22], &cfg(1e-3)).is_ok());
        assert!(ca_cfar(&[1.0; 64], &cfg(1.0)).is_err());
        assert!(ca_cfar(&[1.0; 64], &CfarConfig { train_cells: 0, ..cfg(1e-3) }).is_err());
    }

    #[test]
    fn false_alarm_rate_matches_design_on_exponential_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = cfg(1e-3);
        let len = 1000;
        let mut alarms = 0;
        let mut cells = 0;
        for _ in 0..1000 {
            let slice: Vec<f64> = (0..len).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            // Edge cells keep the design rate through the recomputed alpha.
            alarms += ca_cfar(&slice, &c).unwrap().len();
            cells += len;
        }
        let rate = alarms as f64 / cells as f64;
        assert!(rate > 1e-3 / 1.5 && rate < 1e-3 * 1.5, "{rate}");
    }

    proptest! {
        #[test]
        fn scale_invariant_and_monotone_in_pfa(
            values in prop::collection::vec(0.01f64..10.0, 30..80),
            spikes in prop::collection::vec((0usize..80, 10.0f64..200.0), 0..4),
            scale in 1e-3f64..1e3,
        ) {
            let mut slice = values;
            for (i, s) in spikes {
                let n = slice.len();
                slice[i % n] *= s;
            }
            let base = ca_cfar(&slice, &cfg(1e-3)).unwrap();
            let scaled: Vec<f64> = slice.iter().map(|x| x * scale).collect();
            prop_assert_eq!(&base, &ca_cfar(&scaled, &cfg(1e-3)).unwrap());
            let strict = ca_cfar(&slice, &cfg(1e-5)).unwrap();
            prop_assert!(strict.len() <= base.len());
            prop_assert!(strict.iter().all(|i| base.contains(i)));
        }
    }

    fn synthetic_map(peaks: &[(usize, f64, usize, f64)]) -> DetectionMap {
        // 3 ranges x 32 Dopplers x 4 angles of unit background.
        let dopplers = doppler_grid(32);
        let mut values = vec![1.0; 3 * 32 * 4];
        for &(r, center, a, level) in peaks {
            for d in 0..32 {
                let x = d as f64 - center;
                values[(r * 32 + d) * 4 + a] += level * (-x * x).exp();
            }
        }
        DetectionMap::from_parts(
            vec![10, 11, 12],
            vec![3.75, 4.125, 4.5],
            dopplers.clone(),
            dopplers.iter().map(|w| w * 10.0).collect(),
            vec![0.0, 0.01, 0.02, 0.03],
            values,
        )
        .unwrap()
    }

    #[test]
    fn on_grid_peak_reports_grid_velocity() {
        let map = synthetic_map(&[(1, 20.0, 2, 1e4)]);
        let hits = detect_map(&map, &cfg(1e-4)).unwrap();
        assert!(hits.len() >= 2, "adjacent Doppler cells should both fire");
        let det = estimate_parameters(&map, &hits);
        assert_eq!(det.len(), 1);
        assert!((det[0].velocity_mps - map.velocities[20]).abs() < 1e-12);
        assert_eq!(det[0].range_m, 4.125);
        assert!((det[0].angle_deg - 0.02f64.to_degrees()).abs() < 1e-12);
        assert!(det[0].statistic_db > 10.0 * cfar_alpha(1e-4, 16).log10());
    }

    #[test]
    fn one_target_across_angles_is_one_cluster() {
        let map = synthetic_map(&[(1, 12.0, 0, 1e4), (1, 12.0, 3, 3e3)]);
        let det = estimate_parameters(&map, &detect_map(&map, &cfg(1e-4)).unwrap());
        assert_eq!(det.len(), 1);
        assert_eq!(det[0].angle_deg, 0.0);
    }

    #[test]
    fn off_grid_peak_is_interpolated_and_separate_targets_stay_apart() {
        let map = synthetic_map(&[(0, 8.3, 0, 1e4), (2, 24.0, 3, 1e4)]);
        let det = estimate_parameters(&map, &detect_map(&map, &cfg(1e-4)).unwrap());
        assert_eq!(det.len(), 2);
        let step = map.velocities[1] - map.velocities[0];
        let truth = map.velocities[8] + 0.3 * step;
        assert!((det[0].velocity_mps - truth).abs() < 0.05 * step, "{:?}", det[0]);
        let json = detections_to_json(&det).unwrap();
        let back: Vec<Detection> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, det);
        assert!(json.contains("\"range_m\"") && json.contains("\"statistic_db\""));
    }
}
