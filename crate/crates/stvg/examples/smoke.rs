//! Quick pipeline timing probe (not part of the test suite).

use std::time::Instant;

use stvg::config::RunConfig;
use stvg::data::{generate_dataset, load_split, SceneParams};
use stvg::train::{prepare_samples, Trainer};
use stvg::vocab::Vocabulary;

fn main() {
    let dir = std::env::temp_dir().join("stvg-smoke-data");
    let params = SceneParams::default();
    let index = generate_dataset(&dir, 40, 7, &params, 200).unwrap();
    println!("dataset: {} train / {} val", index.train.len(), index.val.len());

    let vocab = Vocabulary::synthetic();
    let train = prepare_samples(&load_split(&dir, &index.train).unwrap(), &vocab).unwrap();
    let val = prepare_samples(&load_split(&dir, &index.val).unwrap(), &vocab).unwrap();

    let cfg = RunConfig::default();
    let mut trainer = Trainer::new(&cfg, &vocab, 1).unwrap();

    let t0 = Instant::now();
    let n_steps = 30;
    trainer
        .train_steps(&train, n_steps, 0, None, |step, parts| {
            if step % 10 == 0 {
                println!("step {step}: loss {:.4} (l1 {:.4} giou {:.4} kl {:.4} att {:.4})",
                    parts.total, parts.l1, parts.giou, parts.kl, parts.att);
            }
        })
        .unwrap();
    let dt = t0.elapsed();
    println!("{} steps in {:.2?} ({:.0} ms/step)", n_steps, dt, dt.as_millis() as f64 / n_steps as f64);

    let t0 = Instant::now();
    let report = trainer.evaluate(&val).unwrap();
    println!("eval in {:.2?}: {}", t0.elapsed(), report.to_json());

    let _ = std::fs::remove_dir_all(&dir);
}
