use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pcfv::{read_feature_clip, FeatureClip};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub label: usize,
    pub frames: usize,
}

/// A split listing of feature files, as JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub split: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Input(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.label >= self.classes.len() {
                return Err(Error::Input(format!(
                    "{}: label {} out of range for {} classes",
                    e.path,
                    e.label,
                    self.classes.len()
                )));
            }
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Input(format!("duplicate manifest path {}", e.path)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    /// Reads every listed clip, checking labels and frame counts against the
    /// manifest.
    pub fn load_clips(&self, manifest_path: &Path) -> Result<Vec<FeatureClip>> {
        self.entries
            .iter()
            .map(|e| {
                let path = self.resolve(manifest_path, e);
                let clip = read_feature_clip(&path)?;
                if clip.label != e.label || clip.num_frames() != e.frames {
                    return Err(Error::Input(format!(
                        "{}: file has label {} / {} frames, manifest says {} / {}",
                        path.display(),
                        clip.label,
                        clip.num_frames(),
                        e.label,
                        e.frames
                    )));
                }
                Ok(clip)
            })
            .collect()
    }
}
