//! Binary PPM heatmaps with a fixed 256-entry viridis-like palette.
//!
//! The palette interpolates linearly (in sRGB) between nine anchors sampled
//! from matplotlib's viridis at 0, 1/8, ..., 1.

use std::io::Write;

use faer::MatRef;

use crate::{Error, Result};

const ANCHORS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 45, 123],
    [59, 82, 139],
    [44, 114, 142],
    [33, 145, 140],
    [40, 174, 128],
    [94, 201, 98],
    [173, 220, 48],
    [253, 231, 37],
];

pub fn palette() -> [[u8; 3]; 256] {
    let mut out = [[0u8; 3]; 256];
    for (i, color) in out.iter_mut().enumerate() {
        let x = i as f64 / 255.0 * 8.0;
        let k = (x.floor() as usize).min(7);
        let t = x - k as f64;
        for c in 0..3 {
            let (a, b) = (ANCHORS[k][c] as f64, ANCHORS[k + 1][c] as f64);
            color[c] = (a + t * (b - a)).round() as u8;
        }
    }
    out
}

/// Palette index of every cell of `linear`: dB, clamped to
/// `[peak - dynamic_range_db, peak]`.
pub fn quantize(linear: MatRef<'_, f64>, dynamic_range_db: f64) -> Vec<Vec<u8>> {
    let db = |x: f64| 10.0 * x.max(f64::MIN_POSITIVE).log10();
    let mut peak = f64::NEG_INFINITY;
    for j in 0..linear.ncols() {
        for i in 0..linear.nrows() {
            peak = peak.max(db(linear[(i, j)]));
        }
    }
    let floor = peak - dynamic_range_db;
    (0..linear.nrows())
        .map(|i| {
            (0..linear.ncols())
                .map(|j| {
                    let t = ((db(linear[(i, j)]) - floor) / dynamic_range_db).clamp(0.0, 1.0);
                    (t * 255.0).round() as u8
                })
                .collect()
        })
        .collect()
}

/// Writes `linear` (rows top to bottom) as a P6 image, each cell drawn as a
/// `cell x cell` pixel block. `comment` lines go into the header.
pub fn write_ppm<W: Write>(
    linear: MatRef<'_, f64>,
    dynamic_range_db: f64,
    cell: usize,
    comment: &[String],
    mut w: W,
) -> Result<()> {
    if linear.nrows() == 0 || linear.ncols() == 0 || cell == 0 || !(dynamic_range_db > 0.0) {
        return Err(Error::InvalidArgument("empty heatmap or bad scale".into()));
    }
    let colors = palette();
    let levels = quantize(linear, dynamic_range_db);
    writeln!(w, "P6")?;
    for line in comment {
        writeln!(w, "# {}", line.replace('\n', " "))?;
    }
    write!(w, "{} {}\n255\n", linear.ncols() * cell, linear.nrows() * cell)?;
    let mut row = Vec::with_capacity(linear.ncols() * cell * 3);
    for line in &levels {
        row.clear();
        for &level in line {
            for _ in 0..cell {
                row.extend_from_slice(&colors[level as usize]);
            }
        }
        for _ in 0..cell {
            w.write_all(&row)?;
        }
    }
    Ok(())
}
