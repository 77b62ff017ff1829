//! Collections of synthetic trees and their on-disk layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/case_000.vmask
//! <dir>/case_000.centerlines.json
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{read_centerlines, write_centerlines, CenterlinePolyline, VoxelMask};

use super::config::SynthConfig;
use super::tree::{derive_seed, generate_tree, SynthTree};

/// Foreground voxels needed to sample the default point count without
/// padding.
pub const TARGET_VOXELS: usize = 12288;

#[derive(Debug, Clone)]
pub struct SynthCase {
    pub id: String,
    pub seed: u64,
    pub tree: SynthTree,
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:03}")
}

/// `count` independent trees; tree `i` uses a seed derived from `seed` and
/// `i`. With `threads > 1` trees are generated concurrently; the result is
/// the same.
pub fn generate_dataset(config: &SynthConfig, count: usize, seed: u64, threads: usize) -> Result<Vec<SynthCase>> {
    if count == 0 {
        return Err(Error::ConfigInvalid("dataset count must be at least 1".into()));
    }
    let make = |i: usize| -> Result<SynthCase> {
        let s = derive_seed(seed, i as u64);
        Ok(SynthCase {
            id: case_id(i),
            seed: s,
            tree: generate_tree(config, s)?,
        })
    };
    let threads = threads.clamp(1, count);
    if threads == 1 {
        return (0..count).map(make).collect();
    }
    let mut slots: Vec<Option<Result<SynthCase>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (t, chunk) in slots.chunks_mut(count.div_ceil(threads)).enumerate() {
            let make = &make;
            let first = t * count.div_ceil(threads);
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(make(first + k));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub id: String,
    pub seed: u64,
    pub voxels: usize,
    /// Voxel count per class, index 0 = background.
    pub histogram: Vec<usize>,
    pub branches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub cases: Vec<ManifestCase>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Fraction of cases with at least [`TARGET_VOXELS`] foreground voxels.
    pub fraction_at_target_voxels: f64,
}

impl Manifest {
    pub fn build(cases: &[SynthCase], master_seed: u64, train_count: usize) -> Self {
        let entries: Vec<ManifestCase> = cases
            .iter()
            .map(|c| ManifestCase {
                id: c.id.clone(),
                seed: c.seed,
                voxels: c.tree.mask.foreground_count(),
                histogram: c.tree.mask.histogram(),
                branches: c.tree.branches.len(),
            })
            .collect();
        let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
        let split = train_count.min(ids.len());
        let at_target = entries.iter().filter(|c| c.voxels >= TARGET_VOXELS).count();
        Self {
            master_seed,
            train: ids[..split].to_vec(),
            test: ids[split..].to_vec(),
            fraction_at_target_voxels: at_target as f64 / entries.len().max(1) as f64,
            cases: entries,
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.vmask"))
}

pub fn centerline_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.centerlines.json"))
}

/// Writes every case plus the manifest; the first `train_count` cases form
/// the training split.
pub fn write_dataset(dir: &Path, cases: &[SynthCase], master_seed: u64, train_count: usize) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for c in cases {
        c.tree.mask.write(&mask_path(dir, &c.id))?;
        write_centerlines(&centerline_path(dir, &c.id), &c.tree.centerlines())?;
    }
    let manifest = Manifest::build(cases, master_seed, train_count);
    manifest.write(dir)?;
    Ok(manifest)
}

/// A case with its ground-truth mask and labeled centerlines.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub id: String,
    pub mask: VoxelMask,
    pub centerlines: Vec<CenterlinePolyline>,
}

pub fn load_case(dir: &Path, id: &str) -> Result<LoadedCase> {
    Ok(LoadedCase {
        id: id.to_string(),
        mask: VoxelMask::read(&mask_path(dir, id))?,
        centerlines: read_centerlines(&centerline_path(dir, id))?,
    })
}

impl From<SynthCase> for LoadedCase {
    fn from(c: SynthCase) -> Self {
        LoadedCase {
            centerlines: c.tree.centerlines(),
            id: c.id,
            mask: c.tree.mask,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_match_ids_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let cases = generate_dataset(&SynthConfig::default(), 3, 11, 1).unwrap();
        let manifest = write_dataset(dir.path(), &cases, 11, 2).unwrap();
        assert_eq!(manifest.train, vec!["case_000", "case_001"]);
        assert_eq!(manifest.test, vec!["case_002"]);
        for c in &cases {
            let loaded = load_case(dir.path(), &c.id).unwrap();
            assert_eq!(loaded.mask, c.tree.mask);
            assert_eq!(loaded.centerlines, c.tree.centerlines());
        }
        assert_eq!(Manifest::read(dir.path()).unwrap(), manifest);
    }

    #[test]
    fn generation_is_reproducible_and_thread_independent() {
        let c = SynthConfig::default();
        let a = generate_dataset(&c, 4, 3, 1).unwrap();
        let b = generate_dataset(&c, 4, 3, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.tree, y.tree);
        }
    }
}
