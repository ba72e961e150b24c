//! Space-time adaptive processing: steering vectors, training-cell
//! covariance, adaptive weights, beamspace reduction and the detection scan.
//!
//! Space-time vectors use the pulse-major layout `v[m * n_dim + n]`.

use std::collections::BTreeSet;
use std::io::Write;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::ComplexityReport;
use crate::geometry::{ff_steering, nf_steering, ArrayGeometry, PolarPoint, SteeringVector};
use crate::linalg::{c64, cis, dot, norm_sqr, normalize, HermitianFactor};
use crate::scene::{bin_range, per_element_doppler, SnapshotSource, Target, VelocityVector, WaveformParams};
use crate::training::TrainingReport;
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeSteering {
    coeffs: Vec<c64>,
    n_spatial: usize,
}

impl SpaceTimeSteering {
    /// Normalizes `coeffs` (length `M * n_spatial`, pulse-major).
    pub fn from_coeffs(mut coeffs: Vec<c64>, n_spatial: usize) -> Self {
        debug_assert!(n_spatial > 0 && coeffs.len() % n_spatial == 0);
        normalize(&mut coeffs);
        Self { coeffs, n_spatial }
    }

    pub fn coeffs(&self) -> &[c64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn n_spatial(&self) -> usize {
        self.n_spatial
    }

    pub fn n_pulses(&self) -> usize {
        self.coeffs.len() / self.n_spatial
    }

    pub fn inner(&self, other: &SpaceTimeSteering) -> c64 {
        dot(&self.coeffs, &other.coeffs)
    }

    /// Per-pulse beamspace projection `T^H v_m`, renormalized.
    pub fn reduce(&self, t: &ReductionMatrix) -> Result<SpaceTimeSteering> {
        let projected = t.project_slab(&self.coeffs)?;
        Ok(Self::from_coeffs(projected, t.n_beams()))
    }
}

fn check_doppler(f: f64) -> Result<()> {
    if f.abs() > 0.5 {
        return Err(Error::DopplerAlias { value: f });
    }
    Ok(())
}

/// Per-element Doppler per unit of normalized radial Doppler: the cosine
/// between each element's line of sight and the array-center line of sight.
fn radial_projection(geom: &ArrayGeometry, params: &WaveformParams, p: &PolarPoint) -> Result<Vec<f64>> {
    let unit = Target {
        position: *p,
        velocity: VelocityVector::radial(params.velocity_of(1.0)),
        amplitude: c64::new(1.0, 0.0),
    };
    per_element_doppler(geom, params, &unit)
}

/// `a_n(p) * exp(j 2 pi f_n m)` over `M` pulses, unnormalized, where `f_n`
/// are per-element Doppler frequencies.
fn spatio_temporal(a: &[c64], doppler: &[f64], m_count: usize, out: &mut [c64]) {
    let n = a.len();
    let step: Vec<c64> = doppler.iter().map(|f| cis(TWO_PI * f)).collect();
    let mut phase = vec![c64::new(1.0, 0.0); n];
    for m in 0..m_count {
        let row = &mut out[m * n..(m + 1) * n];
        for i in 0..n {
            row[i] = a[i] * phase[i];
            phase[i] *= step[i];
        }
        // Re-anchor periodically so the recurrence cannot drift.
        if m % 32 == 31 {
            for i in 0..n {
                phase[i] = cis(TWO_PI * doppler[i] * (m + 1) as f64);
            }
        }
    }
}

/// Near-field space-time steering: spherical spatial response with the
/// element-dependent Doppler of a target moving with `vel`.
pub fn space_time_steering_nf(
    geom: &ArrayGeometry,
    params: &WaveformParams,
    p: &PolarPoint,
    vel: &VelocityVector,
) -> Result<SpaceTimeSteering> {
    let target = Target { position: *p, velocity: *vel, amplitude: c64::new(1.0, 0.0) };
    let doppler = per_element_doppler(geom, params, &target)?;
    for &f in &doppler {
        check_doppler(f)?;
    }
    let a = nf_steering(geom, p);
    let mut coeffs = vec![c64::new(0.0, 0.0); params.n_pulses * geom.n_elements()];
    spatio_temporal(a.coeffs(), &doppler, params.n_pulses, &mut coeffs);
    Ok(SpaceTimeSteering::from_coeffs(coeffs, geom.n_elements()))
}

/// Far-field space-time steering `b(omega) (x) a_ff(theta)`.
pub fn space_time_steering_ff(
    geom: &ArrayGeometry,
    angle: f64,
    doppler: f64,
    m_count: usize,
) -> Result<SpaceTimeSteering> {
    check_doppler(doppler)?;
    let a = ff_steering(geom, angle);
    let n = geom.n_elements();
    let mut coeffs = Vec::with_capacity(m_count * n);
    for m in 0..m_count {
        let b = cis(TWO_PI * doppler * m as f64);
        coeffs.extend(a.coeffs().iter().map(|x| x * b));
    }
    Ok(SpaceTimeSteering::from_coeffs(coeffs, n))
}

/// Orthonormal beamspace basis `T` (`N x n_c`).
#[derive(Debug, Clone)]
pub struct ReductionMatrix {
    t: Mat<c64>,
}

impl ReductionMatrix {
    /// Orthonormalizes the given columns (modified Gram-Schmidt, two passes).
    pub fn from_columns(columns: &[Vec<c64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if n == 0 || columns.len() > n {
            return Err(Error::InvalidArgument(format!(
                "{} columns of length {n} cannot be full rank",
                columns.len()
            )));
        }
        let mut basis: Vec<Vec<c64>> = Vec::with_capacity(columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: col.len() });
            }
            let original = norm_sqr(col).sqrt();
            let mut v = col.clone();
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
                }
            }
            let residual = norm_sqr(&v).sqrt();
            if !(residual > 1e-8 * original) {
                return Err(Error::RankDeficient(j));
            }
            v.iter_mut().for_each(|x| *x /= residual);
            basis.push(v);
        }
        Ok(Self { t: Mat::from_fn(n, basis.len(), |i, j| basis[j][i]) })
    }

    /// Near-field codewords focused at `range` toward each of `angles`.
    pub fn beamspace(geom: &ArrayGeometry, range: f64, angles: &[f64]) -> Result<Self> {
        let columns = angles
            .iter()
            .map(|&theta| Ok(nf_steering(geom, &PolarPoint::new(range, theta)?).into_coeffs()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_columns(&columns)
    }

    pub fn identity(n: usize) -> Self {
        Self { t: Mat::identity(n, n) }
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.t.as_ref()
    }

    pub fn n_spatial(&self) -> usize {
        self.t.nrows()
    }

    pub fn n_beams(&self) -> usize {
        self.t.ncols()
    }

    /// `T^H x_m` for every length-`N` row of the pulse-major `slab`.
    pub fn project_slab(&self, slab: &[c64]) -> Result<Vec<c64>> {
        let n = self.n_spatial();
        if slab.len() % n != 0 {
            return Err(Error::DimensionMismatch { expected: n, got: slab.len() % n });
        }
        let rows = slab.len() / n;
        let x = MatRef::from_row_major_slice(slab, rows, n);
        let mut out = Mat::<c64>::zeros(rows, self.n_beams());
        matmul(out.as_mut(), Accum::Replace, x, self.t.conjugate(), c64::new(1.0, 0.0), Par::Seq);
        let mut flat = Vec::with_capacity(rows * self.n_beams());
        for m in 0..rows {
            flat.extend((0..self.n_beams()).map(|j| out[(m, j)]));
        }
        Ok(flat)
    }
}

/// The cell-under-test snapshot of bin `l`, optionally reduced to beamspace.
pub fn extract_snapshot(
    src: &dyn SnapshotSource,
    l: usize,
    reduction: Option<&ReductionMatrix>,
) -> Result<Vec<c64>> {
    let slab = src.slab(l)?;
    match reduction {
        None => Ok(slab.into_owned()),
        Some(t) => {
            if t.n_spatial() != src.n_elements() {
                return Err(Error::DimensionMismatch { expected: src.n_elements(), got: t.n_spatial() });
            }
            t.project_slab(&slab)
        }
    }
}

/// `K` training bins nearest to `cut`, outside `guard` bins on each side.
///
/// Away from the edges this is `K/2` bins per side; near an edge the window
/// slides inward and the returned flag is set.
pub fn training_bins(n_bins: usize, cut: usize, k_cells: usize, guard: usize) -> Result<(Vec<usize>, bool)> {
    if k_cells == 0 || k_cells % 2 != 0 {
        return Err(Error::InvalidArgument(format!("k_cells must be even and positive, got {k_cells}")));
    }
    if cut >= n_bins {
        return Err(Error::DimensionMismatch { expected: n_bins, got: cut });
    }
    let excluded = (cut.saturating_sub(guard)..=(cut + guard).min(n_bins - 1)).count();
    if n_bins - excluded < k_cells {
        return Err(Error::InsufficientTraining(format!(
            "{k_cells} training cells requested but only {} available",
            n_bins - excluded
        )));
    }
    let mut bins = Vec::with_capacity(k_cells);
    let mut offset = guard + 1;
    while bins.len() < k_cells {
        if offset <= cut {
            bins.push(cut - offset);
        }
        if bins.len() < k_cells && cut + offset < n_bins {
            bins.push(cut + offset);
        }
        offset += 1;
    }
    bins.sort_unstable();
    let below = bins.iter().filter(|&&b| b < cut).count();
    Ok((bins, below != k_cells / 2))
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    matrix: Mat<c64>,
    loading: f64,
    k_cells: usize,
    shifted: bool,
}

impl CovarianceEstimate {
    pub fn from_matrix(matrix: Mat<c64>, loading: f64, k_cells: usize) -> Self {
        Self { matrix, loading, k_cells, shifted: false }
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn loading(&self) -> f64 {
        self.loading
    }

    pub fn k_cells(&self) -> usize {
        self.k_cells
    }

    /// Training window slid inward at a cube edge.
    pub fn shifted(&self) -> bool {
        self.shifted
    }

    /// Fewer training snapshots than dimensions: invertible only through loading.
    pub fn rank_deficient(&self) -> bool {
        self.k_cells < self.dim()
    }

    pub fn factor(&self) -> Result<HermitianFactor> {
        HermitianFactor::new(self.matrix.as_ref())
    }
}

fn loaded(mut r: Mat<c64>, scale: f64, loading: f64) -> Mat<c64> {
    let n = r.nrows();
    for j in 0..n {
        for i in 0..n {
            r[(i, j)] *= scale;
        }
    }
    // Exact Hermitian symmetry regardless of accumulation order.
    for j in 0..n {
        r[(j, j)] = c64::new(r[(j, j)].re + loading, 0.0);
        for i in j + 1..n {
            let avg = (r[(i, j)] + r[(j, i)].conj()) * 0.5;
            r[(i, j)] = avg;
            r[(j, i)] = avg.conj();
        }
    }
    r
}

fn gram(x: MatRef<'_, c64>) -> Mat<c64> {
    let mut r = Mat::<c64>::zeros(x.nrows(), x.nrows());
    matmul(r.as_mut(), Accum::Replace, x, x.adjoint(), c64::new(1.0, 0.0), faer::get_global_parallelism());
    r
}

/// `(1/K) sum x x^H + loading I` over the training bins of `cut`.
pub fn estimate_covariance(
    src: &dyn SnapshotSource,
    cut: usize,
    k_cells: usize,
    guard: usize,
    reduction: Option<&ReductionMatrix>,
    loading: f64,
) -> Result<CovarianceEstimate> {
    let (bins, shifted) = training_bins(src.n_range_bins(), cut, k_cells, guard)?;
    let snaps = bins
        .par_iter()
        .map(|&b| extract_snapshot(src, b, reduction))
        .collect::<Result<Vec<_>>>()?;
    let dim = snaps[0].len();
    let x = Mat::from_fn(dim, snaps.len(), |i, j| snaps[j][i]);
    let matrix = loaded(gram(x.as_ref()), 1.0 / k_cells as f64, loading);
    Ok(CovarianceEstimate { matrix, loading, k_cells, shifted })
}

/// Covariance estimation for several nearby cells under test sharing most of
/// their training data: the union of all training snapshots is reduced and
/// correlated once, and each cell removes the few snapshots it must not use.
pub struct CovarianceEngine {
    /// Range bin of every column of `snapshots`.
    columns: Vec<usize>,
    snapshots: Mat<c64>,
    training_union: BTreeSet<usize>,
    gram: Mat<c64>,
    k_cells: usize,
    guard: usize,
    loading: f64,
    n_bins: usize,
}

impl CovarianceEngine {
    pub fn new(
        src: &dyn SnapshotSource,
        cuts: &[usize],
        k_cells: usize,
        guard: usize,
        reduction: Option<&ReductionMatrix>,
        loading: f64,
    ) -> Result<Self> {
        let n_bins = src.n_range_bins();
        let mut training_union = BTreeSet::new();
        let mut all = BTreeSet::new();
        for &cut in cuts {
            let (bins, _) = training_bins(n_bins, cut, k_cells, guard)?;
            training_union.extend(bins.iter().copied());
            all.extend(bins);
            all.insert(cut);
        }
        let columns: Vec<usize> = all.into_iter().collect();
        let snaps = columns
            .par_iter()
            .map(|&b| extract_snapshot(src, b, reduction))
            .collect::<Result<Vec<_>>>()?;
        let dim = snaps.first().map_or(0, Vec::len);
        let snapshots = Mat::from_fn(dim, snaps.len(), |i, j| snaps[j][i]);
        drop(snaps);
        let train_cols: Vec<usize> = columns
            .iter()
            .enumerate()
            .filter(|(_, b)| training_union.contains(b))
            .map(|(j, _)| j)
            .collect();
        let x = Mat::from_fn(dim, train_cols.len(), |i, j| snapshots[(i, train_cols[j])]);
        let gram = gram(x.as_ref());
        Ok(Self { columns, snapshots, training_union, gram, k_cells, guard, loading, n_bins })
    }

    pub fn dim(&self) -> usize {
        self.snapshots.nrows()
    }

    fn column_of(&self, bin: usize) -> Result<usize> {
        self.columns
            .binary_search(&bin)
            .map_err(|_| Error::InvalidArgument(format!("bin {bin} was not prepared")))
    }

    pub fn snapshot(&self, bin: usize) -> Result<Vec<c64>> {
        let j = self.column_of(bin)?;
        Ok((0..self.dim()).map(|i| self.snapshots[(i, j)]).collect())
    }

    pub fn covariance(&self, cut: usize) -> Result<CovarianceEstimate> {
        let (bins, shifted) = training_bins(self.n_bins, cut, self.k_cells, self.guard)?;
        let keep: BTreeSet<usize> = bins.into_iter().collect();
        if !keep.is_subset(&self.training_union) {
            return Err(Error::InvalidArgument(format!("cell {cut} was not prepared")));
        }
        let drop: Vec<usize> = self
            .training_union
            .difference(&keep)
            .map(|&b| self.column_of(b))
            .collect::<Result<_>>()?;
        let mut r = self.gram.clone();
        if !drop.is_empty() {
            let xe = Mat::from_fn(self.dim(), drop.len(), |i, j| self.snapshots[(i, drop[j])]);
            matmul(r.as_mut(), Accum::Add, xe.as_ref(), xe.adjoint(), c64::new(-1.0, 0.0), Par::Seq);
        }
        let matrix = loaded(r, 1.0 / self.k_cells as f64, self.loading);
        Ok(CovarianceEstimate { matrix, loading: self.loading, k_cells: self.k_cells, shifted })
    }
}

/// MVDR weights `R^{-1} v / (v^H R^{-1} v)`, so that `w^H v = 1`.
pub fn stap_weights(cov: &CovarianceEstimate, nu: &SpaceTimeSteering) -> Result<Vec<c64>> {
    if cov.dim() != nu.len() {
        return Err(Error::DimensionMismatch { expected: cov.dim(), got: nu.len() });
    }
    weights_from_factor(&cov.factor()?, nu.coeffs())
}

pub fn weights_from_factor(factor: &HermitianFactor, nu: &[c64]) -> Result<Vec<c64>> {
    if factor.dim() != nu.len() {
        return Err(Error::DimensionMismatch { expected: factor.dim(), got: nu.len() });
    }
    let mut w = factor.solve(nu);
    let gain = dot(nu, &w);
    if !(gain.re.is_finite() && gain.re > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let inv = 1.0 / gain.conj();
    w.iter_mut().for_each(|x| *x *= inv);
    Ok(w)
}

/// `|w^H x|^2`.
pub fn stap_statistic(w: &[c64], x: &[c64]) -> f64 {
    dot(w, x).norm_sqr()
}

/// Normalized Doppler grid of `M` points on `[-0.5, 0.5)`.
pub fn doppler_grid(m_count: usize) -> Vec<f64> {
    (0..m_count).map(|k| (k as f64 - (m_count / 2) as f64) / m_count as f64).collect()
}

/// Scalar written to each map cell, for whitened steering `s = L^{-1} nu` and
/// snapshot `z = L^{-1} x` with `R = L L^H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapStatistic {
    /// `|nu^H R^{-1} x|^2`: output of the unnormalized weight `R^{-1} nu`.
    /// Scales with `nu^H R^{-1} nu`, so the clutter ridge becomes a null.
    #[default]
    Unnormalized,
    /// `|s^H z|^2 / |s|^2`: output in units of its own interference power.
    Amf,
    /// `|w^H x|^2` with `w^H nu = 1`.
    Mvdr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub k_cells: usize,
    pub guard: usize,
    /// Absolute diagonal loading power.
    pub loading: f64,
    pub statistic: MapStatistic,
}

/// Adapted-filter output over (range bin, Doppler, angle), one
/// `MapStatistic` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    pub range_bins: Vec<usize>,
    pub ranges: Vec<f64>,
    pub dopplers: Vec<f64>,
    pub velocities: Vec<f64>,
    pub angles: Vec<f64>,
    values: Vec<f64>,
}

impl DetectionMap {
    /// `values` is indexed `[range][doppler][angle]`.
    pub fn from_parts(
        range_bins: Vec<usize>,
        ranges: Vec<f64>,
        dopplers: Vec<f64>,
        velocities: Vec<f64>,
        angles: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if ranges.len() != range_bins.len() || velocities.len() != dopplers.len() {
            return Err(Error::InvalidArgument("map axes disagree".into()));
        }
        let expected = range_bins.len() * dopplers.len() * angles.len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        Ok(Self { range_bins, ranges, dopplers, velocities, angles, values })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.range_bins.len(), self.dopplers.len(), self.angles.len())
    }

    fn index(&self, r: usize, d: usize, a: usize) -> usize {
        let (_, nd, na) = self.shape();
        (r * nd + d) * na + a
    }

    pub fn get(&self, r: usize, d: usize, a: usize) -> f64 {
        self.values[self.index(r, d, a)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn db(&self, r: usize, d: usize, a: usize) -> f64 {
        10.0 * self.get(r, d, a).log10()
    }

    /// Statistic along the Doppler axis for one (range, angle) pair.
    pub fn doppler_slice(&self, r: usize, a: usize) -> Vec<f64> {
        (0..self.dopplers.len()).map(|d| self.get(r, d, a)).collect()
    }

    /// Largest cell: (range index, Doppler index, angle index).
    pub fn argmax(&self) -> (usize, usize, usize) {
        let (_, nd, na) = self.shape();
        let i = (0..self.values.len())
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))
            .unwrap_or(0);
        (i / (nd * na), (i / na) % nd, i % na)
    }

    /// Range x Doppler, maximized over angle.
    pub fn range_doppler(&self) -> Mat<f64> {
        let (nr, nd, na) = self.shape();
        Mat::from_fn(nr, nd, |r, d| (0..na).map(|a| self.get(r, d, a)).fold(0.0, f64::max))
    }

    /// Angle x Doppler, maximized over range.
    pub fn angle_doppler(&self) -> Mat<f64> {
        let (nr, nd, na) = self.shape();
        Mat::from_fn(na, nd, |a, d| (0..nr).map(|r| self.get(r, d, a)).fold(0.0, f64::max))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "range_bin,range_m,doppler_bin,velocity_mps,angle_index,angle_deg,statistic_db")?;
        let (nr, nd, na) = self.shape();
        for r in 0..nr {
            for d in 0..nd {
                for a in 0..na {
                    writeln!(
                        w,
                        "{},{:.6},{},{:.6},{},{:.6},{:.6}",
                        self.range_bins[r],
                        self.ranges[r],
                        d,
                        self.velocities[d],
                        a,
                        self.angles[a].to_degrees(),
                        self.db(r, d, a)
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Near-field steering for every (angle, Doppler) pair at range `r`,
/// optionally reduced, as columns ordered Doppler-major then angle.
fn steering_columns(
    geom: &ArrayGeometry,
    params: &WaveformParams,
    r: f64,
    angles: &[f64],
    dopplers: &[f64],
    reduction: Option<&ReductionMatrix>,
) -> Result<Mat<c64>> {
    let (m_count, n) = (params.n_pulses, geom.n_elements());
    let dim = m_count * reduction.map_or(n, ReductionMatrix::n_beams);
    let mut out = Mat::<c64>::zeros(dim, dopplers.len() * angles.len());
    let mut buf = vec![c64::new(0.0, 0.0); m_count * n];
    for (a_idx, &theta) in angles.iter().enumerate() {
        let p = PolarPoint::new(r, theta)?;
        let a = nf_steering(geom, &p);
        let proj = radial_projection(geom, params, &p)?;
        for (d_idx, &omega) in dopplers.iter().enumerate() {
            let f: Vec<f64> = proj.iter().map(|c| c * omega).collect();
            for &x in &f {
                check_doppler(x)?;
            }
            spatio_temporal(a.coeffs(), &f, m_count, &mut buf);
            let mut v = match reduction {
                Some(t) => t.project_slab(&buf)?,
                None => buf.clone(),
            };
            normalize(&mut v);
            let col = d_idx * angles.len() + a_idx;
            for (i, x) in v.into_iter().enumerate() {
                out[(i, col)] = x;
            }
        }
    }
    Ok(out)
}

/// Adaptive scan of the given range bins over `angles x dopplers`.
pub fn scan_bins(
    src: &dyn SnapshotSource,
    geom: &ArrayGeometry,
    bins: &[usize],
    angles: &[f64],
    dopplers: &[f64],
    reduction: Option<&ReductionMatrix>,
    cfg: &ScanConfig,
) -> Result<DetectionMap> {
    let params = *src.params();
    if src.n_elements() != geom.n_elements() {
        return Err(Error::DimensionMismatch { expected: geom.n_elements(), got: src.n_elements() });
    }
    let engine = CovarianceEngine::new(src, bins, cfg.k_cells, cfg.guard, reduction, cfg.loading)?;
    let per_bin = bins
        .par_iter()
        .map(|&l| -> Result<Vec<f64>> {
            let factor = engine.covariance(l)?.factor()?;
            let mut s = steering_columns(geom, &params, bin_range(&params, l), angles, dopplers, reduction)?;
            factor.whiten_columns(&mut s);
            let z = factor.whiten(&engine.snapshot(l)?);
            Ok((0..s.ncols())
                .map(|j| {
                    let (mut num, mut den) = (c64::new(0.0, 0.0), 0.0);
                    for i in 0..s.nrows() {
                        let si = s[(i, j)];
                        num += si.conj() * z[i];
                        den += si.norm_sqr();
                    }
                    match cfg.statistic {
                        MapStatistic::Unnormalized => num.norm_sqr(),
                        MapStatistic::Amf => num.norm_sqr() / den,
                        MapStatistic::Mvdr => num.norm_sqr() / (den * den),
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionMap {
        range_bins: bins.to_vec(),
        ranges: bins.iter().map(|&l| bin_range(&params, l)).collect(),
        dopplers: dopplers.to_vec(),
        velocities: dopplers.iter().map(|&w| params.velocity_of(w)).collect(),
        angles: angles.to_vec(),
        values: per_bin.concat(),
    })
}

/// `count` contiguous range bins centered on the bin of `range`.
pub fn window_bins(params: &WaveformParams, range: f64, count: usize) -> Result<Vec<usize>> {
    let n_bins = params.n_range_bins();
    if count == 0 || count > n_bins {
        return Err(Error::InvalidArgument(format!("cannot scan {count} of {n_bins} range bins")));
    }
    let center = crate::scene::range_bin_of(params, range)?;
    let start = center.saturating_sub((count - 1) / 2).min(n_bins - count);
    Ok((start..start + count).collect())
}

/// Reduced-dimension scan of the candidate window from beam training: `l_c`
/// range bins around the refined range, `n_c` candidate angles, and a
/// beamspace basis made of the candidate-angle codewords.
pub fn reduced_scan(
    src: &dyn SnapshotSource,
    geom: &ArrayGeometry,
    report: &TrainingReport,
    dopplers: &[f64],
    cfg: &ScanConfig,
) -> Result<(DetectionMap, ComplexityReport)> {
    let params = *src.params();
    let l_c = report.candidate_ranges.len();
    let n_c = report.candidate_angles.len();
    let bins = window_bins(&params, report.refined.range(), l_c)?;
    let t = ReductionMatrix::beamspace(geom, report.refined.range(), &report.candidate_angles)?;
    let map = scan_bins(src, geom, &bins, &report.candidate_angles, dopplers, Some(&t), cfg)?;
    let ops = ComplexityReport::new(params.n_range_bins(), params.n_pulses, geom.n_elements(), l_c, n_c)?;
    Ok((map, ops))
}

/// Relative Frobenius distance from the Toeplitz-block-Toeplitz matrix
/// obtained by averaging `r` (dimension `M N`) along its block and in-block
/// diagonals.
pub fn toeplitz_block_toeplitz_residual(r: MatRef<'_, c64>, m_count: usize, n: usize) -> f64 {
    let (dm, dn) = (2 * m_count - 1, 2 * n - 1);
    let mut sum = vec![c64::new(0.0, 0.0); dm * dn];
    let mut count = vec![0usize; dm * dn];
    let key = |i: usize, j: usize| {
        let (mi, ni, mj, nj) = (i / n, i % n, j / n, j % n);
        (mi + m_count - 1 - mj) * dn + (ni + n - 1 - nj)
    };
    for j in 0..r.ncols() {
        for i in 0..r.nrows() {
            let k = key(i, j);
            sum[k] += r[(i, j)];
            count[k] += 1;
        }
    }
    let (mut diff, mut total) = (0.0, 0.0);
    for j in 0..r.ncols() {
        for i in 0..r.nrows() {
            let k = key(i, j);
            let mean = sum[k] / count[k] as f64;
            diff += (r[(i, j)] - mean).norm_sqr();
            total += r[(i, j)].norm_sqr();
        }
    }
    (diff / total).sqrt()
}

/// Wavefront used when forming analytic clutter statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wavefront {
    Spherical,
    Planar,
}

/// Analytic space-time covariance of static clutter at `range` plus white
/// noise: `sum_p s_p^2 v_p v_p^H + noise I`, where `v_p` repeats the patch's
/// (scaled, optionally reduced) spatial response over every pulse.
pub fn clutter_covariance(
    geom: &ArrayGeometry,
    m_count: usize,
    range: f64,
    patch_angles: &[f64],
    patch_power: f64,
    noise_power: f64,
    wavefront: Wavefront,
    reduction: Option<&ReductionMatrix>,
) -> Result<Mat<c64>> {
    let scale = (geom.n_elements() as f64).sqrt();
    let spatial = patch_angles
        .iter()
        .map(|&theta| {
            let a: SteeringVector = match wavefront {
                Wavefront::Spherical => nf_steering(geom, &PolarPoint::new(range, theta)?),
                Wavefront::Planar => ff_steering(geom, theta),
            };
            let a: Vec<c64> = a.coeffs().iter().map(|x| x * scale).collect();
            match reduction {
                Some(t) => t.project_slab(&a),
                None => Ok(a),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let n_dim = spatial.first().map_or(0, Vec::len);
    let dim = m_count * n_dim;
    let amp = patch_power.sqrt();
    let x = Mat::from_fn(dim, spatial.len(), |i, p| spatial[p][i % n_dim] * amp);
    Ok(loaded(gram(x.as_ref()), 1.0, noise_power))
}
