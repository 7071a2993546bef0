//! JSON manifest files.
//!
//! ```json
//! {"name": "disks", "split": "train",
//!  "records": [{"sample_id": "0001", "image_path": "images/0001.png",
//!               "mask_path": "masks/0001.png", "excluded": false}]}
//! ```
//!
//! Relative paths are resolved against the directory holding the manifest.
//! Saving stores paths under the manifest's directory (or its parent)
//! relative to it, so a dataset or run directory can be moved as a whole.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ktseg_core::DatasetManifest;

use crate::error::{KtError, Result};

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses a manifest without touching the referenced files; paths are
/// resolved but not checked.
pub fn parse_manifest(path: &Path, text: &str) -> Result<DatasetManifest> {
    let mut manifest: DatasetManifest = serde_json::from_str(text).map_err(|e| KtError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    for r in &manifest.records {
        if !seen.insert(r.sample_id.as_str()) {
            return Err(KtError::DuplicateId(r.sample_id.clone()));
        }
    }
    manifest.validate()?;
    let base = base_dir(path);
    for r in &mut manifest.records {
        r.image_path = resolve(&base, &r.image_path).to_string_lossy().into_owned();
        if let Some(m) = &r.mask_path {
            r.mask_path = Some(resolve(&base, m).to_string_lossy().into_owned());
        }
    }
    Ok(manifest)
}

/// Loads a manifest and checks that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| KtError::io(path, e))?;
    let manifest = parse_manifest(path, &text)?;
    for r in &manifest.records {
        for p in std::iter::once(&r.image_path).chain(r.mask_path.as_ref()) {
            if !Path::new(p).is_file() {
                return Err(KtError::DanglingPath {
                    sample_id: r.sample_id.clone(),
                    path: PathBuf::from(p),
                });
            }
        }
    }
    Ok(manifest)
}

/// Paths within the manifest's directory or its parent are stored
/// relative to the manifest; anything else is kept as given.
fn relativize(base: &Path, p: &str) -> String {
    let path = Path::new(p);
    let Ok(base) = std::path::absolute(base) else {
        return p.to_string();
    };
    if !path.is_absolute() {
        return p.to_string();
    }
    pathdiff::diff_paths(path, &base)
        .map_or_else(|| p.to_string(), |r| r.to_string_lossy().into_owned())
}

/// Writes `manifest` as JSON with paths stored relative to its directory.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let base = base_dir(path);
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.image_path = relativize(&base, &r.image_path);
        r.mask_path = r.mask_path.as_deref().map(|m| relativize(&base, m));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| KtError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&out).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| KtError::io(path, e))
}
