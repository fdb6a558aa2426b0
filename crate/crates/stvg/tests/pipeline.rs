//! Cross-module behavior: encoder replication and gradient-barrier rules,
//! decoder locality, loss identities, and checkpoint fidelity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stvg::backbone::{FrameFeatures, TextFeatures, VisualBackbone};
use stvg::checkpoint;
use stvg::config::{Aggregation, DecoderAblation, LossWeights, RunConfig};
use stvg::data::VideoTensor;
use stvg::decoder::{DecoderSettings, SpaceTimeDecoder};
use stvg::encoder::{clip_count, sampled_frames, EncoderSettings, VideoTextEncoder};
use stvg::layers::{Init, ParamSet, Phase};
use stvg::loss::{
    build_target_distribution, spatial_losses, temporal_losses, total_loss, GroundTruthTube,
};
use stvg::model::{GroundingModel, ModelSettings};
use stvg::train::Trainer;
use stvg::vocab::Vocabulary;

const D: usize = 8;
const HEADS: usize = 2;

fn encoder_settings(k: usize, fast: bool, agg: Aggregation) -> EncoderSettings {
    EncoderSettings {
        d: D,
        heads: HEADS,
        layers: 1,
        ffn_dim: 16,
        dropout: 0.0,
        k,
        fast_enabled: fast,
        aggregation: agg,
        max_text_len: 8,
    }
}

fn frame_features(ps: &ParamSet, t: usize, hw: usize, seed: u64) -> FrameFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..t * hw * D).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FrameFeatures { feats: ps.tape().constant(&[t * hw, D], data), t, h: 1, w: hw }
}

fn text_features(ps: &ParamSet, l: usize, seed: u64) -> TextFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..l * D).map(|_| rng.gen_range(-1.0..1.0)).collect();
    TextFeatures { feats: ps.tape().constant(&[l, D], data), len: l }
}

// ── encoder ─────────────────────────────────────────────────────────

#[test]
fn subsample_selects_first_frame_per_clip() {
    assert_eq!(sampled_frames(10, 5), vec![0, 5]);
    assert_eq!(sampled_frames(7, 5), vec![0, 5]);
    assert_eq!(clip_count(7, 5), 2);
    assert_eq!(sampled_frames(4, 1), vec![0, 1, 2, 3]);

    let mut ps = ParamSet::new(0);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(5, false, Aggregation::SumLinear));
    let x0 = frame_features(&ps, 10, 3, 1);
    let sampled = enc.temporal_subsample(&x0);
    assert_eq!(sampled.shape(), &[2 * 3, D]);
    let full = x0.feats.data();
    let got = sampled.data();
    assert_eq!(&got[..3 * D], &full[..3 * D]);
    assert_eq!(&got[3 * D..], &full[5 * 3 * D..6 * 3 * D]);
}

#[test]
fn zero_depth_slow_encoder_is_the_input_concatenation() {
    let mut ps = ParamSet::new(0);
    let mut settings = encoder_settings(1, false, Aggregation::SumLinear);
    settings.layers = 0;
    let enc = VideoTextEncoder::new(&mut ps, settings);
    ps.get("encoder.text_pos").unwrap().modify_data(|d| d.iter_mut().for_each(|v| *v = 0.0));
    let x0 = frame_features(&ps, 1, 4, 2);
    let y0 = text_features(&ps, 3, 3);
    let clips = enc.slow_encode(&enc.temporal_subsample(&x0), &y0, 4, &mut Phase::Eval);
    assert_eq!(clips.len(), 1);
    let mut want = x0.feats.data();
    want.extend(y0.feats.data());
    assert_eq!(clips[0].data(), want);
}

#[test]
fn clips_are_encoded_independently() {
    let mut ps = ParamSet::new(4);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(5, false, Aggregation::SumLinear));
    let hw = 3;
    let y0 = text_features(&ps, 2, 5);

    let x_a = frame_features(&ps, 10, hw, 6);
    let clips_a = enc.slow_encode(&enc.temporal_subsample(&x_a), &y0, hw, &mut Phase::Eval);

    // Perturb only clip 0's sampled frame (frame 0); clip 1 must not move.
    let mut data = x_a.feats.data();
    for v in data.iter_mut().take(hw * D) {
        *v += 3.0;
    }
    let x_b = FrameFeatures { feats: ps.tape().constant(&[10 * hw, D], data), t: 10, h: 1, w: hw };
    let clips_b = enc.slow_encode(&enc.temporal_subsample(&x_b), &y0, hw, &mut Phase::Eval);

    assert_ne!(clips_a[0].data(), clips_b[0].data());
    assert_eq!(clips_a[1].data(), clips_b[1].data());

    // Identical clip inputs give identical clip outputs.
    let mut same = x_a.feats.data();
    same.copy_within(0..hw * D, 5 * hw * D);
    let x_c = FrameFeatures { feats: ps.tape().constant(&[10 * hw, D], same), t: 10, h: 1, w: hw };
    let clips_c = enc.slow_encode(&enc.temporal_subsample(&x_c), &y0, hw, &mut Phase::Eval);
    assert_eq!(clips_c[0].data(), clips_c[1].data());
}

#[test]
fn fast_branch_zero_weights_give_zero_output() {
    let mut ps = ParamSet::new(7);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(2, true, Aggregation::SumLinear));
    ps.get("encoder.fast.linear.weight").unwrap().modify_data(|d| d.fill(0.0));
    ps.get("encoder.fast.linear.bias").unwrap().modify_data(|d| d.fill(0.0));
    let x0 = frame_features(&ps, 4, 3, 8);
    let f = enc.fast_branch(&x0, &mut Phase::Eval);
    assert!(f.data().iter().all(|&v| v == 0.0));
}

#[test]
#[should_panic(expected = "fast_enabled = false")]
fn fast_branch_requires_fast_enabled() {
    let mut ps = ParamSet::new(7);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(2, false, Aggregation::SumLinear));
    let x0 = frame_features(&ps, 4, 3, 8);
    enc.fast_branch(&x0, &mut Phase::Eval);
}

#[test]
fn fast_branch_is_a_gradient_barrier_toward_the_backbone() {
    let mut ps = ParamSet::new(9);
    let visual = VisualBackbone::new(&mut ps, D, 4, 3);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(2, true, Aggregation::SumLinear));
    ps.finish();

    let mut video = VideoTensor::zeros(4, 3, 8, 8);
    for (i, v) in video.data.iter_mut().enumerate() {
        *v = ((i % 97) as f32) / 97.0;
    }

    // Loss through the fast branch only: the patch embedding sees nothing.
    let x0 = visual.forward(&video).unwrap();
    let loss = enc.fast_branch(&x0, &mut Phase::Eval).sum_all();
    ps.tape().backward(&loss);
    let patch_w = ps.get("backbone.visual.patch_embed.weight").unwrap();
    assert!(patch_w.grad().unwrap().iter().all(|&g| g == 0.0));
    let fast_w = ps.get("encoder.fast.linear.weight").unwrap();
    assert!(fast_w.grad().unwrap().iter().any(|&g| g != 0.0));
    ps.tape().reset();

    // Control: the slow path does reach the backbone.
    ps.tape().zero_grad();
    let x0 = visual.forward(&video).unwrap();
    let loss = enc.temporal_subsample(&x0).sum_all();
    ps.tape().backward(&loss);
    assert!(patch_w.grad().unwrap().iter().any(|&g| g != 0.0));
}

#[test]
fn stride_one_pipeline_is_bitwise_identical_with_or_without_fast_modules() {
    let build = |fast: bool| {
        let mut ps = ParamSet::new(11);
        let enc = VideoTextEncoder::new(&mut ps, encoder_settings(1, fast, Aggregation::SumLinear));
        let x0 = frame_features(&ps, 5, 3, 12);
        let y0 = text_features(&ps, 2, 13);
        enc.forward(&x0, &y0, &mut Phase::Eval).f.data()
    };
    // The fast/aggregation parameters exist in one model and not the other,
    // but at stride 1 they are inert: outputs agree bit for bit.
    assert_eq!(build(true), build(false));
}

#[test]
fn replication_truncates_to_t() {
    let mut ps = ParamSet::new(14);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(5, false, Aggregation::SumLinear));
    let (t, hw, l) = (7, 3, 2);
    let x0 = frame_features(&ps, t, hw, 15);
    let y0 = text_features(&ps, l, 16);
    let out = enc.forward(&x0, &y0, &mut Phase::Eval);
    assert_eq!(out.f.shape(), &[t * (hw + l), D]);

    let clips = enc.slow_encode(&enc.temporal_subsample(&x0), &y0, hw, &mut Phase::Eval);
    let f = out.f.data();
    let span = (hw + l) * D;
    for frame in 0..t {
        let clip = frame / 5;
        assert_eq!(
            &f[frame * span..(frame + 1) * span],
            &clips[clip].data()[..],
            "frame {frame} should carry clip {clip}"
        );
    }
}

#[test]
fn sum_linear_aggregation_matches_formula_when_fast_is_zero() {
    let mut ps = ParamSet::new(17);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(2, true, Aggregation::SumLinear));
    ps.get("encoder.fast.linear.weight").unwrap().modify_data(|d| d.fill(0.0));
    ps.get("encoder.fast.linear.bias").unwrap().modify_data(|d| d.fill(0.0));
    let (t, hw, l) = (4, 3, 2);
    let x0 = frame_features(&ps, t, hw, 18);
    let y0 = text_features(&ps, l, 19);
    let out = enc.forward(&x0, &y0, &mut Phase::Eval);

    // With f = 0: F_v = Linear(h_v) + h_v, frame by frame.
    let clips = enc.slow_encode(&enc.temporal_subsample(&x0), &y0, hw, &mut Phase::Eval);
    let w = ps.get("encoder.agg.linear.weight").unwrap();
    let b = ps.get("encoder.agg.linear.bias").unwrap();
    let span = (hw + l) * D;
    let f = out.f.data();
    for frame in 0..t {
        let h = clips[frame / 2].narrow(0, hw, 0, D);
        let want = h.linear(w, b).add(&h).data();
        assert_eq!(&f[frame * span..frame * span + hw * D], &want[..]);
    }
}

#[test]
fn gated_product_aggregation_matches_formula() {
    let mut ps = ParamSet::new(20);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(2, true, Aggregation::GatedProduct));
    let (t, hw, l) = (4, 3, 2);
    let x0 = frame_features(&ps, t, hw, 21);
    let y0 = text_features(&ps, l, 22);
    let out = enc.forward(&x0, &y0, &mut Phase::Eval);

    let clips = enc.slow_encode(&enc.temporal_subsample(&x0), &y0, hw, &mut Phase::Eval);
    let fast = enc.fast_branch(&x0, &mut Phase::Eval);
    let span = (hw + l) * D;
    let f = out.f.data();
    for frame in 0..t {
        let h = clips[frame / 2].narrow(0, hw, 0, D);
        let ft = fast.narrow(frame * hw, hw, 0, D);
        let want = h.mul(&ft).sigmoid().add(&h).data();
        assert_eq!(&f[frame * span..frame * span + hw * D], &want[..]);
    }
}

#[test]
fn spatial_pooling_is_invariant_to_token_permutation() {
    let mut ps = ParamSet::new(23);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(2, true, Aggregation::SpatialPooled));
    let hw = 4;
    // Frame 1 is a spatial permutation of frame 0.
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let row: Vec<Vec<f64>> = (0..hw).map(|_| (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut data = Vec::new();
    for r in [0, 1, 2, 3] {
        data.extend(&row[r]);
    }
    for r in [2, 0, 3, 1] {
        data.extend(&row[r]);
    }
    let x0 = FrameFeatures { feats: ps.tape().constant(&[2 * hw, D], data), t: 2, h: 1, w: hw };
    let f = enc.fast_branch(&x0, &mut Phase::Eval).data();
    let (a, b) = f.split_at(hw * D);
    assert_eq!(a, b);
}

// ── decoder ─────────────────────────────────────────────────────────

fn micro_encoder_output(ps: &ParamSet, t: usize, hw: usize, l: usize, seed: u64) -> stvg::encoder::EncoderOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..t * (hw + l) * D).map(|_| rng.gen_range(-1.0..1.0)).collect();
    stvg::encoder::EncoderOutput {
        f: ps.tape().constant(&[t * (hw + l), D], data),
        t,
        hw,
        l,
    }
}

fn micro_decoder(ablation: DecoderAblation, layers: usize, seed: u64) -> (ParamSet, SpaceTimeDecoder) {
    let mut ps = ParamSet::new(seed);
    let dec = SpaceTimeDecoder::new(
        &mut ps,
        DecoderSettings { d: D, heads: HEADS, layers, ffn_dim: 16, dropout: 0.0, ablation },
    );
    (ps, dec)
}

const FRAME_LOCAL: DecoderAblation =
    DecoderAblation { use_time_encoding: false, use_temporal_self_attention: false };

#[test]
fn zero_depth_decoder_returns_nothing_but_keeps_queries() {
    let (ps, dec) = micro_decoder(DecoderAblation::default(), 0, 30);
    let enc = micro_encoder_output(&ps, 3, 2, 1, 31);
    let out = dec.forward(&enc, &mut Phase::Eval);
    assert!(out.q_layers.is_empty());
    assert!(out.self_attn.is_empty());
    assert_eq!(dec.build_time_queries(3).shape(), &[3, D]);
}

#[test]
fn frame_local_decoder_ignores_other_frames_exactly() {
    let (ps, dec) = micro_decoder(FRAME_LOCAL, 2, 32);
    let (t, hw, l) = (4, 3, 2);
    let enc_a = micro_encoder_output(&ps, t, hw, l, 33);
    let out_a = dec.forward(&enc_a, &mut Phase::Eval);

    // Perturb frame 2's tokens only.
    let span = (hw + l) * D;
    let mut data = enc_a.f.data();
    for v in &mut data[2 * span..3 * span] {
        *v += 1.0;
    }
    let enc_b = stvg::encoder::EncoderOutput { f: ps.tape().constant(&[t * (hw + l), D], data), t, hw, l };
    let out_b = dec.forward(&enc_b, &mut Phase::Eval);

    for (qa, qb) in out_a.q_layers.iter().zip(&out_b.q_layers) {
        let (da, db) = (qa.data(), qb.data());
        for frame in 0..t {
            let (ra, rb) = (&da[frame * D..(frame + 1) * D], &db[frame * D..(frame + 1) * D]);
            if frame == 2 {
                assert_ne!(ra, rb, "perturbed frame must change");
            } else {
                assert_eq!(ra, rb, "frame {frame} must be untouched");
            }
        }
    }
}

#[test]
fn frame_local_decoder_commutes_with_frame_permutations() {
    let (ps, dec) = micro_decoder(FRAME_LOCAL, 2, 34);
    let (t, hw, l) = (4, 3, 2);
    let perm = [2usize, 0, 3, 1];

    let enc = micro_encoder_output(&ps, t, hw, l, 35);
    let base = dec.forward(&enc, &mut Phase::Eval);

    let span = (hw + l) * D;
    let src = enc.f.data();
    let mut permuted = vec![0.0; src.len()];
    for (dst_frame, &src_frame) in perm.iter().enumerate() {
        permuted[dst_frame * span..(dst_frame + 1) * span]
            .copy_from_slice(&src[src_frame * span..(src_frame + 1) * span]);
    }
    let enc_p = stvg::encoder::EncoderOutput { f: ps.tape().constant(&[t * (hw + l), D], permuted), t, hw, l };
    let out_p = dec.forward(&enc_p, &mut Phase::Eval);

    let (a, b) = (base.q_layers.last().unwrap().data(), out_p.q_layers.last().unwrap().data());
    for (dst_frame, &src_frame) in perm.iter().enumerate() {
        assert_eq!(
            &b[dst_frame * D..(dst_frame + 1) * D],
            &a[src_frame * D..(src_frame + 1) * D],
            "output at permuted slot must equal the source frame's output"
        );
    }
}

#[test]
fn cross_attention_respects_the_time_aligned_mask_exactly() {
    let (ps, dec) = micro_decoder(DecoderAblation::default(), 2, 36);
    let (t, hw, l) = (4, 3, 2);
    let enc = micro_encoder_output(&ps, t, hw, l, 37);
    let out = dec.forward(&enc, &mut Phase::Eval);
    let span = hw + l;
    for (layer, weights) in out.cross_attn.iter().enumerate() {
        assert_eq!(weights.shape(), &[HEADS, t, t * span]);
        let data = weights.data();
        for h in 0..HEADS {
            for q in 0..t {
                let row = &data[(h * t + q) * t * span..(h * t + q + 1) * t * span];
                let in_block: f64 = row[q * span..(q + 1) * span].iter().sum();
                assert!((in_block - 1.0).abs() < 1e-9, "layer {layer} head {h} query {q}");
                for (c, &v) in row.iter().enumerate() {
                    if c / span != q {
                        assert_eq!(v, 0.0, "nonzero weight outside block: layer {layer} head {h} query {q} col {c}");
                    }
                }
            }
        }
    }
}

#[test]
fn self_attention_rows_are_normalized() {
    let (ps, dec) = micro_decoder(DecoderAblation::default(), 2, 38);
    let enc = micro_encoder_output(&ps, 5, 3, 2, 39);
    let out = dec.forward(&enc, &mut Phase::Eval);
    assert_eq!(out.self_attn.len(), 2);
    for weights in &out.self_attn {
        for row in weights.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

// ── losses ──────────────────────────────────────────────────────────

#[test]
fn gaussian_targets_match_direct_evaluation() {
    let tau = build_target_distribution(2, 5).unwrap();
    let want = [0.0545, 0.2442, 0.4026, 0.2442, 0.0545];
    for (a, b) in tau.iter().zip(want) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    assert_eq!(build_target_distribution(0, 1).unwrap(), vec![1.0]);
    assert!(build_target_distribution(5, 5).is_err());

    for t in 1..=200 {
        for center in [0, t / 2, t - 1] {
            let tau = build_target_distribution(center, t).unwrap();
            assert!((tau.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let argmax = tau
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, center);
        }
    }
}

#[test]
fn gaussian_target_is_symmetric_about_interior_centers() {
    let tau = build_target_distribution(10, 21).unwrap();
    for j in 1..=10 {
        assert!((tau[10 - j] - tau[10 + j]).abs() < 1e-15);
    }
}

fn constant_boxes(ps: &ParamSet, boxes: &[[f64; 4]]) -> tapegrad::Tensor {
    ps.tape().constant(&[boxes.len(), 4], boxes.iter().flatten().copied().collect())
}

#[test]
fn perfect_boxes_have_zero_spatial_loss() {
    let ps = ParamSet::new(0);
    let gt_boxes = vec![[0.5, 0.5, 0.25, 0.25]; 3];
    let gt = GroundTruthTube::new(1, 3, gt_boxes, 6).unwrap();
    let mut all = vec![[0.1, 0.9, 0.05, 0.05]; 6];
    for b in &mut all[1..=3] {
        *b = [0.5, 0.5, 0.25, 0.25];
    }
    let (l1, giou) = spatial_losses(&constant_boxes(&ps, &all), &gt);
    assert_eq!(l1.item(), 0.0);
    assert!(giou.item().abs() < 1e-12);
}

#[test]
fn giou_hand_case_disjoint_boxes() {
    // Corner-form pred (0,0,1,1) vs gt (2,0,3,1): IoU 0, hull 3, union 2,
    // gIoU = -1/3, loss = 4/3. Centers: (0.5,0.5,1,1) and (2.5,0.5,1,1).
    let ps = ParamSet::new(0);
    let gt = GroundTruthTube::new(0, 0, vec![[2.5, 0.5, 1.0, 1.0]], 1).unwrap();
    let (_, giou) = spatial_losses(&constant_boxes(&ps, &[[0.5, 0.5, 1.0, 1.0]]), &gt);
    assert!((giou.item() - 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn spatial_losses_ignore_frames_outside_the_interval_exactly() {
    let ps = ParamSet::new(0);
    let gt = GroundTruthTube::new(2, 4, vec![[0.5, 0.5, 0.3, 0.3]; 3], 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let pred: Vec<[f64; 4]> = (0..8)
        .map(|_| [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), 0.3, 0.3])
        .collect();
    let (l1_a, giou_a) = spatial_losses(&constant_boxes(&ps, &pred), &gt);

    let mut shifted = pred.clone();
    for (t, b) in shifted.iter_mut().enumerate() {
        if !(2..=4).contains(&t) {
            b[0] = (b[0] + 0.11).min(0.95);
            b[1] = (b[1] - 0.07).max(0.05);
        }
    }
    let (l1_b, giou_b) = spatial_losses(&constant_boxes(&ps, &shifted), &gt);
    assert_eq!(l1_a.item().to_bits(), l1_b.item().to_bits());
    assert_eq!(giou_a.item().to_bits(), giou_b.item().to_bits());
}

#[test]
fn kl_vanishes_on_exact_match_and_matches_hand_value() {
    let ps = ParamSet::new(0);
    let gt = GroundTruthTube::new(1, 2, vec![[0.5, 0.5, 0.2, 0.2]; 2], 4).unwrap();
    let tau_s = ps.tape().constant(&[1, 4], gt.tau_s.clone());
    let tau_e = ps.tape().constant(&[1, 4], gt.tau_e.clone());
    let (kl, att) = temporal_losses(&tau_s, &tau_e, &gt, &[]);
    assert!(kl.item().abs() < 1e-12);
    assert_eq!(att.item(), 0.0);

    // T=2, target (1,0), predicted uniform: KL = ln 2 per distribution.
    let gt2 = GroundTruthTube::new(0, 1, vec![[0.5, 0.5, 0.2, 0.2]; 2], 2).unwrap();
    let point_s = ps.tape().constant(&[1, 2], vec![1.0, 0.0]);
    let point_e = ps.tape().constant(&[1, 2], vec![0.0, 1.0]);
    let uniform = ps.tape().constant(&[1, 2], vec![0.5, 0.5]);
    let gt_point = GroundTruthTube { tau_s: point_s.data(), tau_e: point_e.data(), ..gt2 };
    let (kl, _) = temporal_losses(&uniform, &uniform, &gt_point, &[]);
    assert!((kl.item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn guided_attention_vanishes_when_all_mass_is_inside() {
    let ps = ParamSet::new(0);
    let (t, heads) = (5, 2);
    let gt = GroundTruthTube::new(1, 3, vec![[0.5, 0.5, 0.2, 0.2]; 3], t).unwrap();
    // All attention mass on column 2 (inside [1,3]).
    let mut a = vec![0.0; heads * t * t];
    for h in 0..heads {
        for q in 0..t {
            a[(h * t + q) * t + 2] = 1.0;
        }
    }
    let attn = ps.tape().constant(&[heads, t, t], a);
    let tau_s = ps.tape().constant(&[1, t], gt.tau_s.clone());
    let tau_e = ps.tape().constant(&[1, t], gt.tau_e.clone());
    let (_, att) = temporal_losses(&tau_s, &tau_e, &gt, &[attn]);
    assert!(att.item().abs() < 1e-9);
}

#[test]
#[should_panic(expected = "not normalized")]
fn unnormalized_distributions_are_rejected() {
    let ps = ParamSet::new(0);
    let gt = GroundTruthTube::new(0, 1, vec![[0.5, 0.5, 0.2, 0.2]; 2], 2).unwrap();
    let bad = ps.tape().constant(&[1, 2], vec![0.7, 0.7]);
    temporal_losses(&bad, &bad, &gt, &[]);
}

#[test]
fn total_loss_is_the_weighted_sum_of_its_parts() {
    let (model, sample) = tiny_model_and_sample(50);
    let out = model.forward(&sample.0, &sample.1, &mut Phase::Eval).unwrap();
    let weights = LossWeights::default();
    let (loss, parts) = total_loss(&out.layers, &out.self_attn, &sample.2, &weights).unwrap();
    let want = 5.0 * parts.l1 + 2.0 * parts.giou + 10.0 * parts.kl + 1.0 * parts.att;
    assert!((loss.item() - want).abs() < 1e-9);
    assert!(parts.l1 >= 0.0 && parts.kl >= 0.0 && parts.att >= 0.0);

    // Unit component values combine to 5 + 2 + 10 + 1.
    let unit = 5.0 * 1.0 + 2.0 * 1.0 + 10.0 * 1.0 + 1.0 * 1.0;
    assert_eq!(unit, 18.0);
    model.tape().reset();
}

#[test]
fn zero_weights_zero_loss_and_zero_gradients() {
    let (model, sample) = tiny_model_and_sample(51);
    let out = model.forward(&sample.0, &sample.1, &mut Phase::Eval).unwrap();
    let weights = LossWeights { l1: 0.0, giou: 0.0, kl: 0.0, att: 0.0 };
    let (loss, _) = total_loss(&out.layers, &out.self_attn, &sample.2, &weights).unwrap();
    assert_eq!(loss.item(), 0.0);
    model.tape().backward(&loss);
    for (name, p) in model.params().entries() {
        assert!(
            p.grad().unwrap().iter().all(|&g| g == 0.0),
            "parameter {name} received gradient under zero loss weights"
        );
    }
    model.tape().reset();
}

// ── model + checkpoint ──────────────────────────────────────────────

fn tiny_settings() -> ModelSettings {
    let cfg = RunConfig {
        d: D,
        heads: HEADS,
        enc_layers: 1,
        dec_layers: 1,
        ffn_dim: 16,
        k: 2,
        dropout: 0.0,
        head_dropout: 0.0,
        ..Default::default()
    };
    ModelSettings::from_run_config(&cfg, Vocabulary::synthetic().len())
}

fn tiny_model_and_sample(seed: u64) -> (GroundingModel, (VideoTensor, Vec<usize>, GroundTruthTube)) {
    let model = GroundingModel::new(tiny_settings(), seed);
    let mut video = VideoTensor::zeros(4, 3, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
    for v in video.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let ids = Vocabulary::synthetic().encode("the red square moving right").unwrap();
    let gt = GroundTruthTube::new(1, 2, vec![[0.4, 0.5, 0.3, 0.3], [0.5, 0.5, 0.3, 0.3]], 4).unwrap();
    (model, (video, ids, gt))
}

#[test]
fn same_seed_same_forward_bitwise() {
    let (m1, s1) = tiny_model_and_sample(60);
    let (m2, s2) = tiny_model_and_sample(60);
    let p1 = m1.predict(&s1.0, &s1.1).unwrap();
    let p2 = m2.predict(&s2.0, &s2.1).unwrap();
    assert_eq!(p1.tau_s.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               p2.tau_s.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let b1: Vec<u64> = p1.boxes.iter().flatten().map(|v| v.to_bits()).collect();
    let b2: Vec<u64> = p2.boxes.iter().flatten().map(|v| v.to_bits()).collect();
    assert_eq!(b1, b2);
}

#[test]
fn checkpoint_round_trip_reproduces_the_loss_bitwise() {
    let dir = std::env::temp_dir().join(format!("stvg-ckpt-{}", std::process::id()));
    let (model, sample) = tiny_model_and_sample(61);

    let loss_of = |m: &GroundingModel| -> f64 {
        let out = m.forward(&sample.0, &sample.1, &mut Phase::Eval).unwrap();
        let (loss, _) = total_loss(&out.layers, &out.self_attn, &sample.2, &LossWeights::default()).unwrap();
        let v = loss.item();
        m.tape().reset();
        v
    };
    let want = loss_of(&model);
    checkpoint::save(&dir, model.params(), None).unwrap();

    // A different seed gives different weights until the checkpoint lands.
    let other = GroundingModel::new(tiny_settings(), 4242);
    assert_ne!(loss_of(&other).to_bits(), want.to_bits());
    checkpoint::load(&dir, other.params(), None).unwrap();
    assert_eq!(loss_of(&other).to_bits(), want.to_bits());

    // The manifest lists every parameter exactly once.
    let names = checkpoint::manifest_names(&dir).unwrap();
    for (name, _) in model.params().entries() {
        let n = names.iter().filter(|m| **m == format!("param.{name}")).count();
        assert_eq!(n, 1, "parameter {name} listed {n} times");
    }
    assert_eq!(names.len(), model.params().entries().len());

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn checkpoint_shape_mismatch_names_the_parameter() {
    let dir = std::env::temp_dir().join(format!("stvg-ckpt-mismatch-{}", std::process::id()));
    let (model, _) = tiny_model_and_sample(62);
    checkpoint::save(&dir, model.params(), None).unwrap();

    let mut cfg = tiny_settings();
    cfg.d = 16;
    cfg.ffn_dim = 32;
    let bigger = GroundingModel::new(cfg, 1);
    let err = checkpoint::load(&dir, bigger.params(), None).unwrap_err().to_string();
    assert!(err.contains("does not match"), "{err}");
    assert!(err.contains("backbone"), "error should name the parameter: {err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn trainer_loss_trajectory_is_deterministic() {
    let dir = std::env::temp_dir().join(format!("stvg-determinism-{}", std::process::id()));
    stvg::data::generate_dataset(&dir, 5, 3, &stvg::data::SceneParams { t: 8, ..Default::default() }, 200)
        .unwrap();
    let vocab = Vocabulary::synthetic();
    let index = stvg::data::DatasetIndex::read(&dir.join("index.json")).unwrap();
    let samples =
        stvg::train::prepare_samples(&stvg::data::load_split(&dir, &index.train).unwrap(), &vocab).unwrap();

    let run = || {
        let cfg = RunConfig { d: 16, heads: 2, enc_layers: 1, dec_layers: 1, ffn_dim: 32, epochs: 1, dropout: 0.1, head_dropout: 0.5, ..Default::default() };
        let mut trainer = Trainer::new(&cfg, &vocab, 9).unwrap();
        let mut losses = Vec::new();
        trainer
            .train_steps(&samples, 6, 0, None, |_, parts| losses.push(parts.total.to_bits()))
            .unwrap();
        losses
    };
    assert_eq!(run(), run());
    let _ = std::fs::remove_dir_all(&dir);
}

// ── remaining spec contracts ────────────────────────────────────────

#[test]
fn fast_transformer_variant_runs_and_mixes_time() {
    let mut ps = ParamSet::new(70);
    let enc = VideoTextEncoder::new(&mut ps, encoder_settings(2, true, Aggregation::FastTransformer));
    let (t, hw) = (4, 3);
    let x0 = frame_features(&ps, t, hw, 71);
    let f = enc.fast_branch(&x0, &mut Phase::Eval);
    assert_eq!(f.shape(), &[t * hw, D]);

    // Unlike the per-token linear variant, the temporal transformer lets
    // frame 0's output depend on later frames.
    let mut poked = x0.feats.data();
    for v in &mut poked[3 * hw * D..] {
        *v += 1.0;
    }
    let x1 = FrameFeatures { feats: ps.tape().constant(&[t * hw, D], poked), t, h: 1, w: hw };
    let f1 = enc.fast_branch(&x1, &mut Phase::Eval);
    assert_ne!(f.data()[..hw * D], f1.data()[..hw * D]);
}

#[test]
#[should_panic(expected = "even model dim")]
fn odd_model_dim_is_rejected_by_time_queries() {
    let mut ps = ParamSet::new(72);
    let dec = SpaceTimeDecoder::new(
        &mut ps,
        DecoderSettings {
            d: 7,
            heads: 1,
            layers: 1,
            ffn_dim: 8,
            dropout: 0.0,
            ablation: DecoderAblation::default(),
        },
    );
    dec.build_time_queries(3);
}

#[test]
fn layer_count_mismatch_between_predictions_and_attention_is_an_error() {
    // Two decoder layers, so predictions and attention both have two entries.
    let cfg = RunConfig {
        d: D,
        heads: HEADS,
        enc_layers: 1,
        dec_layers: 2,
        ffn_dim: 16,
        k: 2,
        dropout: 0.0,
        head_dropout: 0.0,
        ..Default::default()
    };
    let model = GroundingModel::new(
        ModelSettings::from_run_config(&cfg, Vocabulary::synthetic().len()),
        73,
    );
    let mut video = VideoTensor::zeros(4, 3, 8, 8);
    video.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i % 11) as f32 / 11.0);
    let ids = Vocabulary::synthetic().encode("the red square").unwrap();
    let gt = GroundTruthTube::new(1, 2, vec![[0.4, 0.5, 0.3, 0.3], [0.5, 0.5, 0.3, 0.3]], 4).unwrap();
    let out = model.forward(&video, &ids, &mut Phase::Eval).unwrap();
    assert_eq!(out.layers.len(), 2);

    // Empty attention = ablated case: allowed.
    assert!(total_loss(&out.layers, &[], &gt, &LossWeights::default()).is_ok());
    // One matrix for two layers: rejected.
    assert!(total_loss(&out.layers, &out.self_attn[..1], &gt, &LossWeights::default()).is_err());
    // Matching counts: allowed.
    assert!(total_loss(&out.layers, &out.self_attn, &gt, &LossWeights::default()).is_ok());
    model.tape().reset();
}

#[test]
fn per_frame_giou_loss_stays_in_range() {
    let ps = ParamSet::new(75);
    let mut rng = ChaCha8Rng::seed_from_u64(76);
    for _ in 0..200 {
        let mk = |rng: &mut ChaCha8Rng| {
            let w = rng.gen_range(0.05..0.5);
            let h = rng.gen_range(0.05..0.5);
            [rng.gen_range(w / 2.0..1.0 - w / 2.0), rng.gen_range(h / 2.0..1.0 - h / 2.0), w, h]
        };
        let gt = GroundTruthTube::new(0, 0, vec![mk(&mut rng)], 1).unwrap();
        let (l1, giou) = spatial_losses(&constant_boxes(&ps, &[mk(&mut rng)]), &gt);
        assert!(l1.item() >= 0.0);
        assert!((0.0..=2.0).contains(&giou.item()), "gIoU loss {} out of range", giou.item());
    }
}

#[test]
fn temporal_head_dropout_only_acts_during_training() {
    let cfg = RunConfig { head_dropout: 0.5, dropout: 0.0, ..Default::default() };
    let settings = ModelSettings::from_run_config(
        &RunConfig { d: D, heads: HEADS, enc_layers: 1, dec_layers: 1, ffn_dim: 16, ..cfg },
        Vocabulary::synthetic().len(),
    );
    let model = GroundingModel::new(settings, 77);
    let mut video = VideoTensor::zeros(4, 3, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for v in video.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let ids = Vocabulary::synthetic().encode("the red square moving left").unwrap();

    let eval_a = model.predict(&video, &ids).unwrap();
    let eval_b = model.predict(&video, &ids).unwrap();
    assert_eq!(eval_a.tau_s, eval_b.tau_s, "evaluation is dropout-free and deterministic");
    let eval_boxes = eval_a.boxes.clone();

    let mut rng_a = ChaCha8Rng::seed_from_u64(1);
    let out = model.forward(&video, &ids, &mut Phase::Train(&mut rng_a)).unwrap();
    let train_pred = out.final_prediction();
    model.tape().reset();
    assert_ne!(eval_a.tau_s, train_pred.tau_s, "temporal head sees dropout during training");
    // Boxes bypass the temporal-head dropout entirely.
    assert_eq!(eval_boxes, train_pred.boxes);
}

#[test]
fn attention_export_requires_recordings() {
    let cfg = RunConfig {
        d: D,
        heads: HEADS,
        enc_layers: 1,
        dec_layers: 1,
        ffn_dim: 16,
        use_temporal_self_attention: false,
        ..Default::default()
    };
    let settings = ModelSettings::from_run_config(&cfg, Vocabulary::synthetic().len());
    let model = GroundingModel::new(settings, 79);
    let mut video = VideoTensor::zeros(4, 3, 8, 8);
    video.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f32 / 7.0);
    let ids = Vocabulary::synthetic().encode("the red square").unwrap();
    let out = model.forward(&video, &ids, &mut Phase::Eval).unwrap();
    let dir = std::env::temp_dir().join(format!("stvg-noattn-{}", std::process::id()));
    let err = stvg::inspect::export_attention_maps(&out, &dir);
    assert!(err.is_err(), "export must fail without self-attention recordings");
    model.tape().reset();
}

#[test]
fn optimizer_state_resumes_through_checkpoints() {
    use tapegrad::{AdamW, AdamWConfig, LrGroup};
    let dir = std::env::temp_dir().join(format!("stvg-resume-{}", std::process::id()));

    let build = |seed: u64| {
        let mut ps = ParamSet::new(seed);
        let w = ps.add("w", &[4], Init::Normal(1.0));
        ps.finish();
        (ps, w)
    };
    let (ps, w) = build(80);
    let mut opt = AdamW::new(
        AdamWConfig { ema_decay: Some(0.9), ..Default::default() },
        vec![LrGroup::constant(0.05)],
        &[("w".into(), w.clone(), 0)],
    );
    for _ in 0..3 {
        w.modify_grad(|g| g.iter_mut().for_each(|v| *v = 0.3));
        opt.step();
        ps.tape().zero_grad();
    }
    checkpoint::save(&dir, &ps, Some(&opt)).unwrap();

    let (ps2, w2) = build(999);
    let mut opt2 = AdamW::new(
        AdamWConfig { ema_decay: Some(0.9), ..Default::default() },
        vec![LrGroup::constant(0.05)],
        &[("w".into(), w2.clone(), 0)],
    );
    checkpoint::load(&dir, &ps2, Some(&mut opt2)).unwrap();
    assert_eq!(opt2.step_count(), 3);
    assert_eq!(w2.data(), w.data());
    assert_eq!(opt2.ema_shadow("w").unwrap(), opt.ema_shadow("w").unwrap());

    // One more identical step on both sides stays in lockstep.
    for (ww, oo, pp) in [(&w, &mut opt, &ps), (&w2, &mut opt2, &ps2)] {
        ww.modify_grad(|g| g.iter_mut().for_each(|v| *v = -0.1));
        oo.step();
        pp.tape().zero_grad();
    }
    assert_eq!(w.data(), w2.data());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn prediction_is_independent_of_sample_order() {
    let (model, s1) = tiny_model_and_sample(81);
    let (_, s2) = tiny_model_and_sample(82);
    let a_first = model.predict(&s1.0, &s1.1).unwrap();
    let _ = model.predict(&s2.0, &s2.1).unwrap();
    let a_second = model.predict(&s1.0, &s1.1).unwrap();
    assert_eq!(a_first.tau_s, a_second.tau_s);
    assert_eq!(a_first.boxes, a_second.boxes);
}
