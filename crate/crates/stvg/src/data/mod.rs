//! Synthetic grounding corpus: procedurally generated moving-shape videos,
//! annotation and frame file formats, augmentation, and dataset assembly.

mod augment;
mod files;
mod scene;

pub use augment::{augment_sample, AugmentParams};
pub use files::{read_annotation, read_video, write_annotation, write_video, DatasetIndex};
pub use scene::{Actor, Color, Motion, SceneParams, Shape, SyntheticScene};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::GroundTruthTube;

/// Raw frames, `[T, C, H, W]` row-major f32.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl VideoTensor {
    pub fn zeros(t: usize, c: usize, h: usize, w: usize) -> VideoTensor {
        VideoTensor { t, c, h, w, data: vec![0.0; t * c * h * w] }
    }

    #[inline]
    pub fn at(&self, t: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((t * self.c + c) * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[((t * self.c + c) * self.h + y) * self.w + x]
    }

    /// Copy of the frames at the given time indices, in order.
    pub fn select_frames(&self, frames: &[usize]) -> VideoTensor {
        let stride = self.c * self.h * self.w;
        let mut data = Vec::with_capacity(frames.len() * stride);
        for &f in frames {
            data.extend_from_slice(&self.data[f * stride..(f + 1) * stride]);
        }
        VideoTensor { t: frames.len(), c: self.c, h: self.h, w: self.w, data }
    }
}

/// Renderer parameters recorded with every annotation for reproducibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RendererParams {
    pub h_px: usize,
    pub w_px: usize,
    pub n_actors: usize,
}

/// One sample's supervision, as serialized next to its frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub query: String,
    pub t_s: usize,
    pub t_e: usize,
    pub boxes: Vec<[f64; 4]>,
    pub seed: u64,
    pub renderer: RendererParams,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        if self.t_e < self.t_s || self.t_e >= self.t {
            return Err(Error::Data(format!(
                "annotation {}: interval [{}, {}] invalid for {} frames",
                self.video_id, self.t_s, self.t_e, self.t
            )));
        }
        if self.boxes.len() != self.t_e - self.t_s + 1 {
            return Err(Error::Data(format!(
                "annotation {}: {} boxes for an interval of {} frames",
                self.video_id,
                self.boxes.len(),
                self.t_e - self.t_s + 1
            )));
        }
        for b in &self.boxes {
            if b.iter().any(|v| !(0.0..=1.0).contains(v)) || b[2] <= 0.0 || b[3] <= 0.0 {
                return Err(Error::Data(format!(
                    "annotation {}: box {:?} outside [0,1] or degenerate",
                    self.video_id, b
                )));
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> Result<GroundTruthTube> {
        self.validate()?;
        GroundTruthTube::new(self.t_s, self.t_e, self.boxes.clone(), self.t)
    }
}

/// Evenly spaced frame indices reducing `t_raw` frames to `t_max`.
pub fn subsample_indices(t_raw: usize, t_max: usize) -> Vec<usize> {
    if t_raw <= t_max {
        return (0..t_raw).collect();
    }
    (0..t_max).map(|j| j * t_raw / t_max).collect()
}

/// Position of the selected index nearest to `frame` (ties toward the
/// earlier index).
fn nearest_position(selected: &[usize], frame: usize) -> usize {
    let mut best = 0;
    let mut best_dist = usize::MAX;
    for (j, &f) in selected.iter().enumerate() {
        let dist = f.abs_diff(frame);
        if dist < best_dist {
            best = j;
            best_dist = dist;
        }
    }
    best
}

/// Apply the uniform subsampling rule to a sample whose video exceeds
/// `t_max` frames. Ground-truth indices are remapped to the nearest selected
/// frame (clamped so start <= end); boxes are re-sampled at the selected
/// frames, clamping into the original interval.
pub fn uniform_subsample(
    video: &VideoTensor,
    ann: &AnnotationRecord,
    t_max: usize,
) -> (VideoTensor, AnnotationRecord) {
    if video.t <= t_max {
        return (video.clone(), ann.clone());
    }
    let selected = subsample_indices(video.t, t_max);
    let new_video = video.select_frames(&selected);
    let mut s = nearest_position(&selected, ann.t_s);
    let mut e = nearest_position(&selected, ann.t_e);
    if s > e {
        std::mem::swap(&mut s, &mut e);
    }
    let boxes = (s..=e)
        .map(|j| {
            let src = selected[j].clamp(ann.t_s, ann.t_e);
            ann.boxes[src - ann.t_s]
        })
        .collect();
    let new_ann = AnnotationRecord {
        t: t_max,
        t_s: s,
        t_e: e,
        boxes,
        ..ann.clone()
    };
    (new_video, new_ann)
}

/// A fully loaded sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub video: VideoTensor,
    pub annotation: AnnotationRecord,
}

/// Generate `n_videos` deterministic samples under `dir`, split 80/20 by
/// index, and write the dataset index. Videos longer than `t_max` are
/// uniformly subsampled before writing.
pub fn generate_dataset(
    dir: &Path,
    n_videos: usize,
    seed: u64,
    params: &SceneParams,
    t_max: usize,
) -> Result<DatasetIndex> {
    if n_videos == 0 {
        return Err(Error::Data("dataset needs at least one video".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut ids = Vec::with_capacity(n_videos);
    for index in 0..n_videos {
        let video_id = format!("vid_{index:05}");
        let scene = SyntheticScene::generate(seed, index as u64, params)?;
        let video = scene.render();
        let ann = scene.annotation(&video_id)?;
        let (video, ann) = uniform_subsample(&video, &ann, t_max);
        ann.validate()?;
        let sample_dir = dir.join(&video_id);
        std::fs::create_dir_all(&sample_dir)?;
        write_video(&sample_dir.join("frames.vtfr"), &video)?;
        write_annotation(&sample_dir.join("annotation.json"), &ann)?;
        ids.push(video_id);
    }
    let n_train = n_videos * 8 / 10;
    let index = DatasetIndex {
        n_videos,
        train: ids[..n_train].to_vec(),
        val: ids[n_train..].to_vec(),
    };
    index.write(&dir.join("index.json"))?;
    Ok(index)
}

/// Load one sample by id from a dataset directory.
pub fn load_sample(dir: &Path, video_id: &str) -> Result<Sample> {
    let sample_dir = dir.join(video_id);
    let video = read_video(&sample_dir.join("frames.vtfr"))?;
    let annotation = read_annotation(&sample_dir.join("annotation.json"))?;
    if annotation.t != video.t {
        return Err(Error::Data(format!(
            "{video_id}: annotation covers {} frames but video has {}",
            annotation.t, video.t
        )));
    }
    Ok(Sample { video, annotation })
}

pub fn load_split(dir: &Path, ids: &[String]) -> Result<Vec<Sample>> {
    ids.iter().map(|id| load_sample(dir, id)).collect()
}
