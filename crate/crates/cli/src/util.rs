use std::path::Path;

use anyhow::{bail, Context as _, Result};
use flexdet::archive::{sha256_hex, Artifact};
use flexdet::data::{read_dataset, Dataset};
use flexdet::eval::IouKind;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// SHA-256 of a file, or of a directory's files in sorted path order
/// (relative path and content of each). Run manifests are skipped so a
/// directory's digest does not depend on the run that produced it.
pub fn digest_path(path: &Path) -> Result<String> {
    if path.is_file() {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(sha256_hex(&bytes));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        if rel == "manifest.json" {
            continue;
        }
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(std::fs::read(path.join(&rel))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root)?.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ds = read_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if ds.is_empty() {
        bail!("dataset {} has no images", dir.display());
    }
    Ok(ds)
}

pub fn load_artifact(path: &Path) -> Result<(Artifact, String)> {
    Artifact::load(path).with_context(|| format!("loading artifact {}", path.display()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
pub enum Iou {
    Box,
    Mask,
}

impl From<Iou> for IouKind {
    fn from(i: Iou) -> Self {
        match i {
            Iou::Box => IouKind::Box,
            Iou::Mask => IouKind::Mask,
        }
    }
}
