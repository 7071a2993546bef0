//! Writes synthetic datasets to disk.

use std::path::{Path, PathBuf};

use ktseg_core::synth::{render, SynthSpec};
use ktseg_core::{DatasetManifest, ManifestRecord, Split};

use crate::error::Result;
use crate::imageio::{save_binary_mask_png, save_image_png};
use crate::manifest::save_manifest;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Renders `spec` into `<out>/images`, `<out>/masks` and
/// `<out>/manifest.json`, returning the manifest as written.
pub fn gen_synth(
    spec: &SynthSpec,
    out: &Path,
    name: &str,
    split: Split,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let width = spec.n_images.saturating_sub(1).to_string().len().max(4);
    let mut records = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let id = format!("{i:0width$}");
        let sample = render(spec, i);
        let image_path = out.join("images").join(format!("{id}.png"));
        let mask_path = out.join("masks").join(format!("{id}.png"));
        save_image_png(&sample.image, &image_path)?;
        save_binary_mask_png(&sample.mask, &mask_path)?;
        records.push(ManifestRecord::new(id, path_str(image_path)).with_mask(path_str(mask_path)));
    }
    let manifest = DatasetManifest::new(name, split, records)?;
    save_manifest(&manifest, out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn path_str(p: PathBuf) -> String {
    p.to_string_lossy().into_owned()
}
