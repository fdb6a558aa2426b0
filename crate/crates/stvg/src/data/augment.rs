//! Training-time augmentation: temporal random cropping that preserves the
//! annotated interval, and spatial random cropping that keeps every
//! ground-truth box fully inside the new canvas.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotationRecord, VideoTensor};

#[derive(Clone, Copy, Debug)]
pub struct AugmentParams {
    /// Crop bounds snap to multiples of this (the patch size), keeping the
    /// cropped canvas divisible for the backbone.
    pub grid: usize,
    /// Smallest allowed cropped canvas, in grid units.
    pub min_grid_units: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams { grid: 4, min_grid_units: 4 }
    }
}

/// Crop in time around the annotated interval and in space around the boxes.
/// Every crop range is constructed to be feasible, so this never fails.
pub fn augment_sample(
    video: &VideoTensor,
    ann: &AnnotationRecord,
    params: &AugmentParams,
    rng: &mut ChaCha8Rng,
) -> (VideoTensor, AnnotationRecord) {
    let (video, ann) = temporal_crop(video, ann, rng);
    spatial_crop(&video, &ann, params, rng)
}

fn temporal_crop(
    video: &VideoTensor,
    ann: &AnnotationRecord,
    rng: &mut ChaCha8Rng,
) -> (VideoTensor, AnnotationRecord) {
    let start = rng.gen_range(0..=ann.t_s);
    let end = rng.gen_range(ann.t_e..video.t);
    let frames: Vec<usize> = (start..=end).collect();
    let cropped = video.select_frames(&frames);
    let new_ann = AnnotationRecord {
        t: cropped.t,
        t_s: ann.t_s - start,
        t_e: ann.t_e - start,
        ..ann.clone()
    };
    (cropped, new_ann)
}

fn spatial_crop(
    video: &VideoTensor,
    ann: &AnnotationRecord,
    params: &AugmentParams,
    rng: &mut ChaCha8Rng,
) -> (VideoTensor, AnnotationRecord) {
    let g = params.grid.max(1);
    let (w_px, h_px) = (video.w as f64, video.h as f64);

    // Tight pixel bounds over all ground-truth boxes.
    let mut min_x = f64::MAX;
    let mut max_x = f64::MIN;
    let mut min_y = f64::MAX;
    let mut max_y = f64::MIN;
    for b in &ann.boxes {
        min_x = min_x.min((b[0] - b[2] / 2.0) * w_px);
        max_x = max_x.max((b[0] + b[2] / 2.0) * w_px);
        min_y = min_y.min((b[1] - b[3] / 2.0) * h_px);
        max_y = max_y.max((b[1] + b[3] / 2.0) * h_px);
    }

    // Crop bounds on the grid, containing the boxes, at least min_grid_units
    // wide.
    let min_units = params.min_grid_units.max(1);
    let pick = |lo_limit: f64, hi_limit: f64, full: usize, rng: &mut ChaCha8Rng| -> (usize, usize) {
        let lo_max = ((lo_limit.max(0.0) / g as f64).floor() as usize).min(full / g);
        let hi_min = ((hi_limit.min(full as f64) / g as f64).ceil() as usize).min(full / g);
        let lo = rng.gen_range(0..=lo_max);
        let hi_min = hi_min.max(lo + min_units).min(full / g);
        let hi = rng.gen_range(hi_min..=full / g);
        (lo * g, hi * g)
    };
    let (x0, x1) = pick(min_x, max_x, video.w, rng);
    let (y0, y1) = pick(min_y, max_y, video.h, rng);
    let (new_w, new_h) = (x1 - x0, y1 - y0);

    let mut cropped = VideoTensor::zeros(video.t, video.c, new_h, new_w);
    for t in 0..video.t {
        for c in 0..video.c {
            for y in 0..new_h {
                for x in 0..new_w {
                    *cropped.at_mut(t, c, y, x) = video.at(t, c, y0 + y, x0 + x);
                }
            }
        }
    }

    let boxes = ann
        .boxes
        .iter()
        .map(|b| {
            [
                (b[0] * w_px - x0 as f64) / new_w as f64,
                (b[1] * h_px - y0 as f64) / new_h as f64,
                b[2] * w_px / new_w as f64,
                b[3] * h_px / new_h as f64,
            ]
        })
        .collect();
    let new_ann = AnnotationRecord { boxes, ..ann.clone() };
    (cropped, new_ann)
}
