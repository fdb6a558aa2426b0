//! Convergence probe for the overfit-training criterion (not a test).

use std::time::Instant;

use stvg::config::RunConfig;
use stvg::data::{generate_dataset, load_split, DatasetIndex, SceneParams};
use stvg::train::{prepare_samples, Trainer};
use stvg::vocab::Vocabulary;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let aug: bool = args.get(5).map(|s| s == "aug").unwrap_or(false);
    let dropout: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let head_dropout: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let dir = std::env::temp_dir().join(format!("stvg-conv-{seed}"));
    generate_dataset(&dir, 40, 7, &SceneParams::default(), 200).unwrap();
    let vocab = Vocabulary::synthetic();
    let index = DatasetIndex::read(&dir.join("index.json")).unwrap();
    let train = prepare_samples(&load_split(&dir, &index.train).unwrap(), &vocab).unwrap();
    let val = prepare_samples(&load_split(&dir, &index.val).unwrap(), &vocab).unwrap();

    let cfg = RunConfig {
        batch_size: batch,
        lr_main: lr,
        lr_text: lr,
        lr_backbone: lr / 5.0,
        augmentation: aug,
        dropout,
        head_dropout,
        ..Default::default()
    };
    println!("cfg: steps {steps} seed {seed} batch {batch} lr {lr} aug {aug} dropout {dropout}/{head_dropout}");
    let mut trainer = Trainer::new(&cfg, &vocab, seed).unwrap();
    let t0 = Instant::now();
    let mut last_print = Instant::now();
    let stats = trainer
        .train_steps(&train, steps, 100, Some((0.80, 0.90)), |step, parts| {
            if last_print.elapsed().as_secs() >= 20 {
                println!("  step {step}: loss {:.3} l1 {:.3} giou {:.3} kl {:.3} att {:.3} [{:.0?}]",
                    parts.total, parts.l1, parts.giou, parts.kl, parts.att, t0.elapsed());
                last_print = Instant::now();
            }
        })
        .unwrap();
    let train_report = stats.last_train_report.unwrap();
    println!(
        "steps {} reached={} in {:.0?}\ntrain: {}",
        stats.steps_run, stats.reached_target, t0.elapsed(), train_report.to_json()
    );
    let val_report = trainer.evaluate(&val).unwrap();
    println!("val: {}", val_report.to_json());
    let _ = std::fs::remove_dir_all(&dir);
}
