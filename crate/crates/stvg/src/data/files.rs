//! On-disk formats: VTFR frame files, annotation JSON, and the dataset
//! index. Round trips are bit-exact.
//!
//! VTFR layout: magic "VTFR", four little-endian u32 dims (T, C, H, W),
//! then T*C*H*W little-endian f32 values.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, VideoTensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VTFR";

pub fn write_video(path: &Path, video: &VideoTensor) -> Result<()> {
    let mut buf =
        Vec::with_capacity(4 + 16 + video.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    for dim in [video.t, video.c, video.h, video.w] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &video.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_video(path: &Path) -> Result<VideoTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 {
        return Err(Error::Format(format!(
            "{}: truncated header: expected at least 20 bytes, got {}",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            &bytes[0..4],
            MAGIC
        )));
    }
    let dim = |i: usize| -> usize {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize
    };
    let (t, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    let expected = 20 + t * c * h * w * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {}x{}x{}x{} frames, got {}",
            path.display(),
            expected,
            t,
            c,
            h,
            w,
            bytes.len()
        )));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(VideoTensor { t, c, h, w, data })
}

pub fn write_annotation(path: &Path, ann: &AnnotationRecord) -> Result<()> {
    ann.validate()?;
    std::fs::write(path, serde_json::to_string_pretty(ann)?)?;
    Ok(())
}

pub fn read_annotation(path: &Path) -> Result<AnnotationRecord> {
    let text = std::fs::read_to_string(path)?;
    let ann: AnnotationRecord = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    ann.validate()?;
    Ok(ann)
}

/// Dataset split listing, stored as `index.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub n_videos: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl DatasetIndex {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<DatasetIndex> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
