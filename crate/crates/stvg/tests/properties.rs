//! Property tests over the data layer: subsampling, augmentation, and
//! annotation invariants hold for arbitrary valid inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stvg::data::{
    augment_sample, subsample_indices, uniform_subsample, AnnotationRecord, AugmentParams,
    RendererParams, SceneParams, SyntheticScene, VideoTensor,
};

proptest! {
    #[test]
    fn subsampled_indices_are_strictly_increasing_and_in_range(
        t_raw in 2usize..2000,
        t_max in 2usize..300,
    ) {
        let idx = subsample_indices(t_raw, t_max);
        prop_assert_eq!(idx.len(), t_raw.min(t_max));
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < t_raw));
    }

    #[test]
    fn remapped_annotations_stay_valid(
        t_raw in 210usize..600,
        span in prop::sample::select(vec![1usize, 2, 5, 50, 200]),
        start_frac in 0.0f64..1.0,
    ) {
        let span = span.min(t_raw);
        let t_s = ((t_raw - span) as f64 * start_frac) as usize;
        let t_e = t_s + span - 1;
        let video = VideoTensor::zeros(t_raw, 1, 4, 4);
        let ann = AnnotationRecord {
            video_id: "v".into(),
            t: t_raw,
            query: "q".into(),
            t_s,
            t_e,
            boxes: vec![[0.5, 0.5, 0.25, 0.25]; span],
            seed: 0,
            renderer: RendererParams { h_px: 4, w_px: 4, n_actors: 1 },
        };
        let (v2, a2) = uniform_subsample(&video, &ann, 200);
        prop_assert_eq!(v2.t, 200);
        prop_assert!(a2.t_s <= a2.t_e);
        prop_assert!(a2.t_e < 200);
        prop_assert!(a2.validate().is_ok());
    }

    #[test]
    fn augmentation_preserves_supervision_validity(scene_idx in 0u64..500, rng_seed in 0u64..1000) {
        let params = SceneParams::default();
        let scene = SyntheticScene::generate(77, scene_idx, &params).unwrap();
        let video = scene.render();
        let ann = scene.annotation("v").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let (v2, a2) = augment_sample(&video, &ann, &AugmentParams::default(), &mut rng);
        prop_assert!(a2.validate().is_ok());
        prop_assert_eq!(v2.t, a2.t);
        prop_assert_eq!(v2.w % 4, 0);
        prop_assert_eq!(v2.h % 4, 0);
        // The annotated interval survives the temporal crop intact.
        prop_assert_eq!(a2.t_e - a2.t_s, ann.t_e - ann.t_s);
    }
}
