//! The PCFV container: a labeled `[T, C, H, W]` sequence of `f32` frames.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PCFV"
//!      4     4  u32 version (low 24 bits = 1, bit 24 = pixel payload)
//!      8    20  u32 T, C, H, W, label
//!     28     *  T·C·H·W f32, frame-major, then channel, then row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PCFV";
pub const VERSION: u32 = 1;
/// Set in the version word when the payload holds raw grayscale pixels.
pub const PIXELS_FLAG: u32 = 1 << 24;
pub const HEADER_LEN: usize = 28;

/// A labeled sequence of per-frame feature maps (or raw pixel frames).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureClip {
    /// `[T, C, H, W]`.
    pub frames: Tensor,
    pub label: usize,
    pub source_id: String,
    /// True when `frames` holds raw pixels in `[0, 255]` rather than encoder
    /// features.
    pub pixels: bool,
}

impl FeatureClip {
    pub fn new(frames: Tensor, label: usize, source_id: impl Into<String>, pixels: bool) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(Error::Input(format!(
                "clip frames must be [T,C,H,W], got {:?}",
                frames.shape()
            )));
        }
        Ok(FeatureClip {
            frames,
            label,
            source_id: source_id.into(),
            pixels,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// `[C, H, W]` of a single frame.
    pub fn frame_shape(&self) -> [usize; 3] {
        let s = self.frames.shape();
        [s[1], s[2], s[3]]
    }

    pub fn frame(&self, index: usize) -> Tensor {
        self.frames.index_first(index)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = self.frames.shape();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.frames.len());
        out.extend_from_slice(MAGIC);
        let version = if self.pixels { VERSION | PIXELS_FLAG } else { VERSION };
        out.extend_from_slice(&version.to_le_bytes());
        for &d in s.iter().chain(std::iter::once(&self.label)) {
            let d = u32::try_from(d)
                .map_err(|_| Error::Input(format!("dimension {d} does not fit in u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in self.frames.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], source_id: impl Into<String>) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version & !PIXELS_FLAG != VERSION {
            return Err(Error::format(4, format!("unsupported version word {version:#x}")));
        }
        let pixels = version & PIXELS_FLAG != 0;
        let dims: Vec<usize> = (1..5).map(|i| word(i) as usize).collect();
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::format(8 + 4 * i as u64, "zero-sized dimension"));
        }
        let label = word(5) as usize;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(8, "dimensions overflow"))?;
        let payload = &bytes[HEADER_LEN..];
        let expected = numel
            .checked_mul(4)
            .ok_or_else(|| Error::format(8, "dimensions overflow"))?;
        if payload.len() < expected {
            return Err(Error::format(
                bytes.len() as u64,
                format!(
                    "truncated payload: header {dims:?} needs {expected} bytes, found {}",
                    payload.len()
                ),
            ));
        }
        if payload.len() > expected {
            return Err(Error::format(
                (HEADER_LEN + expected) as u64,
                format!(
                    "{} trailing bytes after the {dims:?} payload",
                    payload.len() - expected
                ),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let frames = Tensor::new(dims, data)?;
        Ok(FeatureClip {
            frames,
            label,
            source_id: source_id.into(),
            pixels,
        })
    }
}

pub fn write_feature_clip(clip: &FeatureClip, path: &Path) -> Result<()> {
    let bytes = clip.to_bytes()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a PCFV file; the clip's `source_id` is the file stem.
pub fn read_feature_clip(path: &Path) -> Result<FeatureClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureClip::from_bytes(&bytes, id)
}
