//! Command-line entry points: generate / train / eval / predict /
//! inspect-attention / complexity.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use stvg::checkpoint;
use stvg::complexity::complexity_report;
use stvg::config::RunConfig;
use stvg::data::{self, DatasetIndex, SceneParams};
use stvg::error::{Error, Result};
use stvg::inspect::export_attention_maps;
use stvg::layers::Phase;
use stvg::metrics::decode_tube;
use stvg::model::{GroundingModel, ModelSettings};
use stvg::train::{evaluate_model, prepare_samples, Trainer};
use stvg::vocab::Vocabulary;

#[derive(Parser)]
#[command(name = "stvg", about = "Spatio-temporal video grounding on synthetic moving shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flag-level overrides for every RunConfig field.
#[derive(Args, Clone, Default)]
struct ConfigOverrides {
    /// JSON file with a (possibly partial) RunConfig.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    dec_layers: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    fast_enabled: Option<bool>,
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    use_time_encoding: Option<bool>,
    #[arg(long)]
    use_temporal_self_attention: Option<bool>,
    #[arg(long)]
    max_text_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    head_dropout: Option<f64>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    lambda_l1: Option<f64>,
    #[arg(long)]
    lambda_giou: Option<f64>,
    #[arg(long)]
    lambda_kl: Option<f64>,
    #[arg(long)]
    lambda_att: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    lr_text: Option<f64>,
    #[arg(long)]
    lr_main: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    ema: Option<bool>,
    #[arg(long)]
    ema_decay: Option<f64>,
    #[arg(long)]
    augmentation: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        apply!(
            d, heads, enc_layers, dec_layers, ffn_dim, patch_size, k, fast_enabled,
            use_time_encoding, use_temporal_self_attention, max_text_len, dropout, head_dropout,
            t_max, lambda_l1, lambda_giou, lambda_kl, lambda_att, epochs, batch_size, lr_backbone,
            lr_text, lr_main, warmup_steps, weight_decay, ema, ema_decay, augmentation, seed,
            out_dir
        );
        if let Some(a) = &self.aggregation {
            cfg.aggregation = a.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moving-shapes dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        n_videos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        canvas: usize,
        /// Cap on frames per video (uniform subsampling above it).
        #[arg(long, default_value_t = 200)]
        t_max: usize,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional hard cap on optimizer steps (overrides epochs).
        #[arg(long)]
        max_steps: Option<usize>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Evaluate a checkpoint; writes a metric-report JSON.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Decode tubes for a split; one JSON per sample.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Export decoder attention maps for one video.
    InspectAttention {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Analytic attention/memory report for one or more temporal strides.
    Complexity {
        #[arg(long = "T", default_value_t = 200)]
        t: usize,
        #[arg(long = "HW", default_value_t = 49)]
        hw: usize,
        #[arg(long = "L", default_value_t = 10)]
        l: usize,
        /// Temporal stride; repeat the flag for a sweep.
        #[arg(long, default_values_t = vec![5usize])]
        k: Vec<usize>,
        #[arg(long, default_value_t = 6)]
        layers: usize,
        #[arg(long, default_value_t = 256)]
        d: usize,
        #[arg(long, default_value_t = 8)]
        heads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_split(dir: &Path, split: &str) -> Result<Vec<stvg::data::Sample>> {
    let index = DatasetIndex::read(&dir.join("index.json"))?;
    let ids = match split {
        "train" => &index.train,
        "val" => &index.val,
        other => return Err(Error::Config(format!("unknown split `{other}` (train|val)"))),
    };
    data::load_split(dir, ids)
}

fn build_model(cfg: &RunConfig, vocab: &Vocabulary, checkpoint_dir: &Path) -> Result<GroundingModel> {
    let model = GroundingModel::new(ModelSettings::from_run_config(cfg, vocab.len()), cfg.seed);
    checkpoint::load(checkpoint_dir, model.params(), None)?;
    Ok(model)
}

fn cmd_generate(out: &Path, n_videos: usize, seed: u64, frames: usize, canvas: usize, t_max: usize) -> Result<()> {
    let params = SceneParams { t: frames, h_px: canvas, w_px: canvas, ..Default::default() };
    let index = data::generate_dataset(out, n_videos, seed, &params, t_max)?;
    std::fs::write(out.join("vocab.json"), Vocabulary::synthetic().to_json())?;
    println!(
        "generated {} videos under {} ({} train / {} val)",
        index.n_videos,
        out.display(),
        index.train.len(),
        index.val.len()
    );
    Ok(())
}

fn cmd_train(data_dir: &Path, out: Option<PathBuf>, max_steps: Option<usize>, overrides: &ConfigOverrides) -> Result<()> {
    let mut cfg = overrides.resolve()?;
    if let Some(out) = out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let vocab = Vocabulary::synthetic();
    let train_samples = prepare_samples(&load_split(data_dir, "train")?, &vocab)?;
    let val_raw = load_split(data_dir, "val").map(|s| prepare_samples(&s, &vocab)).unwrap_or(Ok(Vec::new()))?;

    std::fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    std::fs::write(out_dir.join("vocab.json"), vocab.to_json())?;

    let mut trainer = Trainer::new(&cfg, &vocab, cfg.seed)?;
    let steps_per_epoch = train_samples.len().div_ceil(cfg.batch_size).max(1);
    let total_steps = max_steps.unwrap_or(cfg.epochs * steps_per_epoch);

    let mut csv = std::fs::File::create(out_dir.join("loss.csv"))?;
    writeln!(csv, "step,loss,l1,giou,kl,att")?;

    checkpoint::save(&out_dir.join("checkpoint"), trainer.model.params(), Some(&trainer.optimizer))?;
    let mut next_epoch_boundary = steps_per_epoch;
    let mut epoch = 0usize;
    let mut steps_done = 0usize;
    while steps_done < total_steps {
        let chunk = (next_epoch_boundary - steps_done).min(total_steps - steps_done);
        let mut rows = Vec::new();
        trainer.train_steps(&train_samples, chunk, 0, None, |step, parts| {
            rows.push(format!(
                "{step},{:.6},{:.6},{:.6},{:.6},{:.6}",
                parts.total, parts.l1, parts.giou, parts.kl, parts.att
            ));
        })?;
        for row in rows {
            writeln!(csv, "{row}")?;
        }
        steps_done += chunk;
        if steps_done == next_epoch_boundary {
            epoch += 1;
            next_epoch_boundary += steps_per_epoch;
            let eval_set = if val_raw.is_empty() { &train_samples } else { &val_raw };
            let report = trainer.evaluate(eval_set)?;
            std::fs::write(out_dir.join(format!("metrics_epoch_{epoch}.json")), report.to_json())?;
            checkpoint::save(&out_dir.join("checkpoint"), trainer.model.params(), Some(&trainer.optimizer))?;
            println!(
                "epoch {epoch}: m_viou {:.3} m_tiou {:.3} m_siou {:.3}",
                report.m_viou, report.m_tiou, report.m_siou
            );
        }
    }
    checkpoint::save(&out_dir.join("checkpoint"), trainer.model.params(), Some(&trainer.optimizer))?;
    println!("trained {steps_done} steps; checkpoint at {}", out_dir.join("checkpoint").display());
    Ok(())
}

fn cmd_eval(data_dir: &Path, ckpt: &Path, split: &str, out: Option<PathBuf>, overrides: &ConfigOverrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let vocab = Vocabulary::synthetic();
    let samples = prepare_samples(&load_split(data_dir, split)?, &vocab)?;
    let model = build_model(&cfg, &vocab, ckpt)?;
    let report = evaluate_model(&model, &samples)?;
    let json = report.to_json();
    match out {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_predict(data_dir: &Path, ckpt: &Path, split: &str, out: &Path, overrides: &ConfigOverrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let vocab = Vocabulary::synthetic();
    let samples = prepare_samples(&load_split(data_dir, split)?, &vocab)?;
    let model = build_model(&cfg, &vocab, ckpt)?;
    std::fs::create_dir_all(out)?;
    for s in &samples {
        let pred = model.predict(&s.video, &s.token_ids)?;
        let tube = decode_tube(&pred)?;
        let record = serde_json::json!({
            "video_id": s.video_id,
            "t_start": tube.t_start,
            "t_end": tube.t_end,
            "boxes": tube.boxes,
        });
        std::fs::write(
            out.join(format!("pred_{}.json", s.video_id)),
            serde_json::to_string_pretty(&record)?,
        )?;
    }
    println!("wrote {} predictions to {}", samples.len(), out.display());
    Ok(())
}

fn cmd_inspect(data_dir: &Path, ckpt: &Path, video_id: &str, out: &Path, overrides: &ConfigOverrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let vocab = Vocabulary::synthetic();
    let sample = data::load_sample(data_dir, video_id)?;
    let ids = vocab.encode(&sample.annotation.query)?;
    let model = build_model(&cfg, &vocab, ckpt)?;
    let fwd = model.forward(&sample.video, &ids, &mut Phase::Eval)?;
    export_attention_maps(&fwd, out)?;
    model.tape().reset();
    println!("wrote attention maps to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_complexity(t: usize, hw: usize, l: usize, ks: &[usize], layers: usize, d: usize, heads: usize, out: Option<PathBuf>) -> Result<()> {
    let reports: Vec<_> = ks.iter().map(|&k| complexity_report(t, hw, l, k, layers, d, heads)).collect();
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])?
    } else {
        serde_json::to_string_pretty(&reports)?
    };
    match out {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out, n_videos, seed, frames, canvas, t_max } => {
            cmd_generate(&out, n_videos, seed, frames, canvas, t_max)
        }
        Command::Train { data, out, max_steps, overrides } => cmd_train(&data, out, max_steps, &overrides),
        Command::Eval { data, checkpoint, split, out, overrides } => {
            cmd_eval(&data, &checkpoint, &split, out, &overrides)
        }
        Command::Predict { data, checkpoint, split, out, overrides } => {
            cmd_predict(&data, &checkpoint, &split, &out, &overrides)
        }
        Command::InspectAttention { data, checkpoint, video, out, overrides } => {
            cmd_inspect(&data, &checkpoint, &video, &out, &overrides)
        }
        Command::Complexity { t, hw, l, k, layers, d, heads, out } => {
            cmd_complexity(t, hw, l, &k, layers, d, heads, out)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // usage error on stderr.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
