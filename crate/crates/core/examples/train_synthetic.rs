//! Trains the full model on synthetic gestures and reports test metrics.
//!
//! `cargo run --release --example train_synthetic -- [epochs] [per_class]`

use std::time::Instant;

use tristream::data::{split_ratio, synth_generate, SynthConfig};
use tristream::model::{AblationFlags, Model, ModelConfig};
use tristream::rng::RngState;
use tristream::train::{evaluate, fit, Preset, TrainConfig};

fn main() -> tristream::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(30, |a| a.parse().expect("epochs"));
    let per_class = args.next().map_or(30, |a| a.parse().expect("per_class"));

    let synth = SynthConfig { classes: 6, channels: 12, window: 500, per_class, ..Default::default() };
    let ds = synth_generate(&synth, &mut RngState::new(7))?;
    let (train, val, test) = split_ratio(&ds, [6.0, 2.0, 2.0], &mut RngState::new(8))?;
    println!("windows: train={} val={} test={}", train.len(), val.len(), test.len());

    let model = Model::new(ModelConfig::new(12, 500, 6), &AblationFlags::default(), 0)?;
    let cfg = TrainConfig { epochs, ..TrainConfig::preset(Preset::Db5) };
    let start = Instant::now();
    let out = fit(&model, &train, &val, &cfg)?;
    println!("trained {} epochs in {:.1?}, best epoch {:?}", out.log.records.len(), start.elapsed(), out.log.best_epoch);
    println!("test: {}", evaluate(&out.best, &test)?);
    Ok(())
}
