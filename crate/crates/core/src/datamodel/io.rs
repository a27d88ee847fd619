use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MultiViewDataset, Splits, ViewData, ViewSpec};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const LABELS_FILE: &str = "labels.u8";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub name: String,
    pub channels: usize,
    #[serde(rename = "static")]
    pub is_static: bool,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub num_samples: usize,
    pub timesteps: usize,
    pub views: Vec<ManifestView>,
    pub labels_file: String,
    pub splits: Splits,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_f32_le(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Reads a dataset from a manifest file or a directory containing one.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let manifest_path = manifest_path(path.as_ref());
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", manifest_path.display())))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let n = manifest.num_samples;

    let mut views = Vec::with_capacity(manifest.views.len());
    for mv in &manifest.views {
        let spec = ViewSpec {
            name: mv.name.clone(),
            channels: mv.channels,
            timesteps: if mv.is_static { 0 } else { manifest.timesteps },
            is_static: mv.is_static,
            file: mv.file.clone(),
        };
        spec.validate()?;
        if views.iter().any(|v: &ViewData| v.spec.name == spec.name) {
            return Err(Error::Schema(format!("duplicate view name {}", spec.name)));
        }
        let values = read_f32_le(&dir.join(&spec.file), n * spec.sample_len())?;
        views.push(ViewData { spec, values });
    }

    let labels_path = dir.join(&manifest.labels_file);
    let labels = fs::read(&labels_path)?;
    if labels.len() != n {
        return Err(Error::Corruption {
            path: labels_path,
            reason: format!("expected {n} label bytes, found {}", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Corruption {
            path: labels_path,
            reason: format!("label byte {bad} is not 0 or 1"),
        });
    }
    MultiViewDataset::new(
        manifest.name,
        manifest.timesteps,
        views,
        labels,
        manifest.splits,
    )
}

/// Writes `dataset` into `dir` and returns the manifest path.
pub fn write_dataset(dataset: &MultiViewDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    dataset.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for view in &dataset.views {
        let mut bytes = Vec::with_capacity(view.values.len() * 4);
        for v in &view.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(dir.join(&view.spec.file), bytes)?;
    }
    write_atomic(dir.join(LABELS_FILE), &dataset.labels)?;
    let manifest = Manifest {
        name: dataset.name.clone(),
        num_samples: dataset.num_samples,
        timesteps: dataset.timesteps,
        views: dataset
            .views
            .iter()
            .map(|v| ManifestView {
                name: v.spec.name.clone(),
                channels: v.spec.channels,
                is_static: v.spec.is_static,
                file: v.spec.file.clone(),
            })
            .collect(),
        labels_file: LABELS_FILE.to_string(),
        splits: dataset.splits.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
