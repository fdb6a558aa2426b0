//! Training and evaluation loops. One step draws a batch, runs the forward
//! and backward passes per sample, averages the losses, and applies one
//! AdamW update; everything is driven by seeded generators so a fixed seed
//! reproduces the loss trajectory bit for bit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tapegrad::{AdamW, AdamWConfig, LrGroup};

use crate::config::RunConfig;
use crate::data::{augment_sample, AugmentParams, Sample, VideoTensor};
use crate::error::Result;
use crate::layers::Phase;
use crate::loss::{total_loss, GroundTruthTube, LossBreakdown};
use crate::metrics::{evaluate_sample, MetricReport, SampleMetrics};
use crate::model::{GroundingModel, ModelSettings};
use crate::vocab::Vocabulary;

/// A sample with its query tokenized and its supervision derived.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub video: VideoTensor,
    pub token_ids: Vec<usize>,
    pub gt: GroundTruthTube,
    pub video_id: String,
}

pub fn prepare_samples(samples: &[Sample], vocab: &Vocabulary) -> Result<Vec<TrainSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(TrainSample {
                video: s.video.clone(),
                token_ids: vocab.encode(&s.annotation.query)?,
                gt: s.annotation.ground_truth()?,
                video_id: s.annotation.video_id.clone(),
            })
        })
        .collect()
}

/// Learning-rate group of a parameter: the visual backbone trains slower and
/// the text encoder may warm up, per the two-group rate map.
fn lr_group(name: &str) -> usize {
    if name.starts_with("backbone.visual") {
        0
    } else if name.starts_with("backbone.text") {
        1
    } else {
        2
    }
}

pub struct Trainer {
    pub model: GroundingModel,
    pub optimizer: AdamW,
    cfg: RunConfig,
    seed: u64,
    step: usize,
}

/// Progress snapshot returned by [`Trainer::train_steps`].
pub struct TrainStats {
    pub steps_run: usize,
    pub last_train_report: Option<MetricReport>,
    pub reached_target: bool,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, vocab: &Vocabulary, seed: u64) -> Result<Trainer> {
        cfg.validate()?;
        let settings = ModelSettings::from_run_config(cfg, vocab.len());
        let model = GroundingModel::new(settings, seed);
        let groups = vec![
            LrGroup::constant(cfg.lr_backbone),
            LrGroup { lr: cfg.lr_text, warmup_steps: cfg.warmup_steps },
            LrGroup::constant(cfg.lr_main),
        ];
        let params: Vec<(String, tapegrad::Tensor, usize)> = model
            .params()
            .entries()
            .iter()
            .map(|(name, t)| (name.clone(), t.clone(), lr_group(name)))
            .collect();
        let optimizer = AdamW::new(
            AdamWConfig {
                weight_decay: cfg.weight_decay,
                ema_decay: if cfg.ema { Some(cfg.ema_decay) } else { None },
                ..Default::default()
            },
            groups,
            &params,
        );
        Ok(Trainer { model, optimizer, cfg: cfg.clone(), seed, step: 0 })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// One optimizer update over a batch of samples.
    pub fn train_step(&mut self, batch: &[&TrainSample]) -> Result<LossBreakdown> {
        assert!(!batch.is_empty(), "empty batch");
        let tape = self.model.tape().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0x57e9 ^ self.step as u64);

        tape.zero_grad();
        let mut batch_loss: Option<tapegrad::Tensor> = None;
        let mut sums = LossBreakdown { total: 0.0, l1: 0.0, giou: 0.0, kl: 0.0, att: 0.0 };
        for sample in batch {
            let (video, gt) = if self.cfg.augmentation {
                let ann = crate::data::AnnotationRecord {
                    video_id: sample.video_id.clone(),
                    t: sample.video.t,
                    query: String::new(),
                    t_s: sample.gt.t_start,
                    t_e: sample.gt.t_end,
                    boxes: sample.gt.boxes.clone(),
                    seed: 0,
                    renderer: crate::data::RendererParams {
                        h_px: sample.video.h,
                        w_px: sample.video.w,
                        n_actors: 0,
                    },
                };
                let params = AugmentParams {
                    grid: self.model.settings().patch,
                    ..Default::default()
                };
                let (v, a) = augment_sample(&sample.video, &ann, &params, &mut rng);
                (v, a.ground_truth()?)
            } else {
                (sample.video.clone(), sample.gt.clone())
            };

            let mut phase = Phase::Train(&mut rng);
            let out = self.model.forward(&video, &sample.token_ids, &mut phase)?;
            let (loss, parts) =
                total_loss(&out.layers, &out.self_attn, &gt, &self.cfg.loss_weights())?;
            sums.total += parts.total;
            sums.l1 += parts.l1;
            sums.giou += parts.giou;
            sums.kl += parts.kl;
            sums.att += parts.att;
            batch_loss = Some(match batch_loss {
                Some(acc) => acc.add(&loss),
                None => loss,
            });
        }
        let scale = 1.0 / batch.len() as f64;
        let batch_loss = batch_loss.unwrap().scale(scale);
        tape.backward(&batch_loss);
        self.optimizer.step();
        tape.reset();
        self.step += 1;

        Ok(LossBreakdown {
            total: sums.total * scale,
            l1: sums.l1 * scale,
            giou: sums.giou * scale,
            kl: sums.kl * scale,
            att: sums.att * scale,
        })
    }

    /// Train for up to `max_steps`, drawing shuffled batches per epoch.
    /// When `target` is set, training stops early once the train-set report
    /// clears both thresholds (checked every `eval_every` steps).
    pub fn train_steps(
        &mut self,
        samples: &[TrainSample],
        max_steps: usize,
        eval_every: usize,
        target: Option<(f64, f64)>,
        mut on_step: impl FnMut(usize, &LossBreakdown),
    ) -> Result<TrainStats> {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut cursor = samples.len(); // force an initial shuffle
        let mut epoch = 0u64;
        let mut last_report = None;
        let mut steps_run = 0;

        while steps_run < max_steps {
            if cursor + self.cfg.batch_size > samples.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xa5a5_5a5a);
                rng.set_stream(epoch);
                order.shuffle(&mut rng);
                cursor = 0;
                epoch += 1;
            }
            let take = self.cfg.batch_size.min(samples.len());
            let batch: Vec<&TrainSample> =
                order[cursor..cursor + take].iter().map(|&i| &samples[i]).collect();
            cursor += take;

            let parts = self.train_step(&batch)?;
            steps_run += 1;
            on_step(self.step, &parts);

            if let Some((viou_target, tiou_target)) = target {
                if eval_every > 0 && steps_run % eval_every == 0 {
                    let report = self.evaluate(samples)?;
                    let reached = report.m_viou >= viou_target && report.m_tiou >= tiou_target;
                    last_report = Some(report);
                    if reached {
                        return Ok(TrainStats {
                            steps_run,
                            last_train_report: last_report,
                            reached_target: true,
                        });
                    }
                }
            }
        }
        if last_report.is_none() {
            last_report = Some(self.evaluate(samples)?);
        }
        let reached = target
            .map(|(v, t)| {
                let r = last_report.as_ref().unwrap();
                r.m_viou >= v && r.m_tiou >= t
            })
            .unwrap_or(false);
        Ok(TrainStats { steps_run, last_train_report: last_report, reached_target: reached })
    }

    /// Metric report over a set of samples; uses the EMA weights when the
    /// run trains with them.
    pub fn evaluate(&mut self, samples: &[TrainSample]) -> Result<MetricReport> {
        if self.optimizer.ema_enabled() {
            self.optimizer.swap_ema();
        }
        let result = evaluate_model(&self.model, samples);
        if self.optimizer.ema_enabled() {
            self.optimizer.swap_ema();
        }
        result
    }
}

/// Decode and score every sample with the model as-is.
pub fn evaluate_model(model: &GroundingModel, samples: &[TrainSample]) -> Result<MetricReport> {
    let mut per_sample = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = model.predict(&s.video, &s.token_ids)?;
        per_sample.push(evaluate_sample(&pred, &s.gt)?);
    }
    Ok(MetricReport::from_samples(&per_sample))
}

/// Per-sample metrics, in input order (the aggregation is a deterministic
/// fold over this).
pub fn per_sample_metrics(model: &GroundingModel, samples: &[TrainSample]) -> Result<Vec<SampleMetrics>> {
    samples
        .iter()
        .map(|s| {
            let pred = model.predict(&s.video, &s.token_ids)?;
            evaluate_sample(&pred, &s.gt)
        })
        .collect()
}
