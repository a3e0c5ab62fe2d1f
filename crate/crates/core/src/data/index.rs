use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";

const EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

/// Image/mask pairs of a dataset root, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleIndex {
    pub source_root: PathBuf,
    pub entries: Vec<SampleEntry>,
}

impl SampleIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&SampleEntry> {
        self.entries.binary_search_by(|e| e.id.as_str().cmp(id)).ok().map(|i| &self.entries[i])
    }

    /// SHA-256 over the sorted `id\timage\tmask` listing (file names only), a
    /// cheap fingerprint of the dataset layout for run manifests.
    pub fn fingerprint(&self) -> String {
        let mut listing = String::new();
        for e in &self.entries {
            let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            listing.push_str(&format!("{}\t{}\t{}\n", e.id, name(&e.image_path), name(&e.mask_path)));
        }
        crate::weights::sha256_hex(listing.as_bytes())
    }
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Ingestion(format!("missing directory {}", dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(Error::Ingestion(format!(
                "duplicate id {stem}: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn listing(ids: &[&String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(" … ({} total)", ids.len()));
    }
    s
}

/// Pairs `root/images/<id>.*` with `root/masks/<id>.*`.
pub fn index_dataset(root: &Path) -> Result<SampleIndex> {
    let images = stems(&root.join(IMAGES_DIR))?;
    let masks = stems(&root.join(MASKS_DIR))?;
    let no_mask: Vec<_> = images.keys().filter(|k| !masks.contains_key(*k)).collect();
    let no_image: Vec<_> = masks.keys().filter(|k| !images.contains_key(*k)).collect();
    if !no_mask.is_empty() || !no_image.is_empty() {
        let mut parts = Vec::new();
        if !no_mask.is_empty() {
            parts.push(format!("images without mask: {}", listing(&no_mask)));
        }
        if !no_image.is_empty() {
            parts.push(format!("masks without image: {}", listing(&no_image)));
        }
        return Err(Error::Ingestion(format!("orphan samples in {}: {}", root.display(), parts.join("; "))));
    }
    if images.is_empty() {
        return Err(Error::Ingestion(format!("no images found under {}", root.join(IMAGES_DIR).display())));
    }
    let entries: Vec<_> = images
        .into_iter()
        .zip(masks)
        .map(|((id, image_path), (_, mask_path))| SampleEntry { id, image_path, mask_path })
        .collect();
    log::info!("indexed {} samples under {}", entries.len(), root.display());
    Ok(SampleIndex { source_root: root.to_path_buf(), entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(root: &Path, dir: &str, name: &str) {
        fs::create_dir_all(root.join(dir)).unwrap();
        fs::write(root.join(dir).join(name), b"").unwrap();
    }

    #[test]
    fn pairs_by_stem_and_sorts() {
        let tmp = tempfile::tempdir().unwrap();
        for id in ["c", "a", "b"] {
            touch(tmp.path(), IMAGES_DIR, &format!("{id}.jpg"));
            touch(tmp.path(), MASKS_DIR, &format!("{id}.png"));
        }
        touch(tmp.path(), IMAGES_DIR, "notes.txt");
        let index = index_dataset(tmp.path()).unwrap();
        assert_eq!(index.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(index.get("b").unwrap().mask_path, tmp.path().join(MASKS_DIR).join("b.png"));
        assert!(index.get("z").is_none());
    }

    #[test]
    fn empty_root_is_an_ingestion_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(index_dataset(tmp.path()), Err(Error::Ingestion(_))));
        fs::create_dir_all(tmp.path().join(IMAGES_DIR)).unwrap();
        fs::create_dir_all(tmp.path().join(MASKS_DIR)).unwrap();
        assert!(matches!(index_dataset(tmp.path()), Err(Error::Ingestion(_))));
    }

    #[test]
    fn orphan_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        touch(tmp.path(), IMAGES_DIR, "x.jpg");
        touch(tmp.path(), IMAGES_DIR, "y.jpg");
        touch(tmp.path(), MASKS_DIR, "y.jpg");
        let err = index_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("images without mask: x"), "{err}");
    }
}
