//! Content-addressed cache for spread tables, keyed by a hash of everything
//! that determines the table.

use std::path::{Path, PathBuf};

use nfisac_core::codebook::{build_dft_codebook, default_min_range, Codebook, FORMAT_VERSION};
use nfisac_core::geometry::ArrayGeometry;
use nfisac_core::spread::{build_spread_table, AngularSpreadTable};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CACHE_ENV: &str = "NFISAC_CACHE_DIR";

/// `$NFISAC_CACHE_DIR`, else the user cache directory, else the system
/// temporary directory.
pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir).join("nfisac");
    }
    if let Some(home) = std::env::var_os("HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(home).join(".cache").join("nfisac");
    }
    std::env::temp_dir().join("nfisac")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableKey {
    pub geometry: ArrayGeometry,
    pub threshold_db: f64,
    pub min_range: f64,
    pub angle_count: usize,
}

impl TableKey {
    pub fn for_geometry(geometry: ArrayGeometry, threshold_db: f64) -> Self {
        Self { geometry, threshold_db, min_range: default_min_range(&geometry), angle_count: geometry.n_elements() }
    }

    pub fn hash(&self) -> String {
        let canonical = json!({
            "kind": "spread-table",
            "version": FORMAT_VERSION,
            "geometry": self.geometry,
            "threshold_db": self.threshold_db,
            "min_range": self.min_range,
            "angle_count": self.angle_count,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("spread-table-{}.json", &self.hash()[..32]))
    }
}

/// Whether a table came from the cache or was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Built,
}

/// DFT codebook plus the spread table for `key`, reading or filling the
/// cache in `dir`. A corrupt cache entry is rebuilt; a cache that cannot be
/// written is not an error.
pub fn load_or_build(key: &TableKey, dir: &Path) -> Result<(Codebook, AngularSpreadTable, CacheStatus), CliError> {
    let dft = build_dft_codebook(&key.geometry, 1)?;
    let path = key.path_in(dir);
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(table) = AngularSpreadTable::from_json(&text) {
            if *table.geometry() == key.geometry && table.threshold_db() == key.threshold_db {
                return Ok((dft, table, CacheStatus::Hit));
            }
        }
    }
    let table = build_spread_table(&dft, key.threshold_db, key.min_range, key.angle_count)?;
    if std::fs::create_dir_all(dir).is_ok() {
        let tmp = dir.join(format!(".{}.{}.tmp", key.hash(), std::process::id()));
        if std::fs::write(&tmp, table.to_json()?).is_ok() {
            let _ = std::fs::rename(&tmp, &path);
        }
        let _ = std::fs::remove_file(&tmp);
    }
    Ok((dft, table, CacheStatus::Built))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_geometry_and_threshold() {
        let g = ArrayGeometry::half_wavelength(32, 28e9).unwrap();
        let a = TableKey::for_geometry(g, 6.0);
        assert_eq!(a.hash(), TableKey::for_geometry(g, 6.0).hash());
        assert_ne!(a.hash(), TableKey::for_geometry(g, 3.0).hash());
        let h = ArrayGeometry::half_wavelength(33, 28e9).unwrap();
        assert_ne!(a.hash(), TableKey::for_geometry(h, 6.0).hash());
    }

    #[test]
    fn second_load_hits_and_corrupt_entries_rebuild() {
        let dir = tempfile::tempdir().unwrap();
        let g = ArrayGeometry::half_wavelength(32, 28e9).unwrap();
        let key = TableKey::for_geometry(g, 6.0);
        let (_, built, s1) = load_or_build(&key, dir.path()).unwrap();
        assert_eq!(s1, CacheStatus::Built);
        let (_, cached, s2) = load_or_build(&key, dir.path()).unwrap();
        assert_eq!(s2, CacheStatus::Hit);
        assert_eq!(built.grid(), cached.grid());
        std::fs::write(key.path_in(dir.path()), "not json").unwrap();
        let (_, _, s3) = load_or_build(&key, dir.path()).unwrap();
        assert_eq!(s3, CacheStatus::Built);
    }
}
