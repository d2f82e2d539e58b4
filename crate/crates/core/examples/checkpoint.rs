//! Trains briefly, saves a TSW1 checkpoint, reloads it and checks that the
//! reloaded model gives identical logits.
//!
//! `cargo run --release --example checkpoint`

use tristream::data::{split_ratio, synth_generate, SynthConfig};
use tristream::model::{load, save, AblationFlags, Model, ModelConfig};
use tristream::rng::RngState;
use tristream::train::{evaluate, fit, predict, TrainConfig};

fn main() -> tristream::Result<()> {
    let synth = SynthConfig { classes: 4, channels: 6, window: 120, per_class: 10, ..Default::default() };
    let ds = synth_generate(&synth, &mut RngState::new(1))?;
    let (train, val, test) = split_ratio(&ds, [6.0, 2.0, 2.0], &mut RngState::new(2))?;
    let model = Model::new(ModelConfig::new(6, 120, 4), &AblationFlags::default(), 3)?;
    let out = fit(&model, &train, &val, &TrainConfig { epochs: 3, ..Default::default() })?;

    let path = std::env::temp_dir().join("checkpoint_example.tsw");
    save(&out.best.params, &out.best.config, &path)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("saved {} parameters to {} ({size} bytes)", out.best.params.num_params(), path.display());

    let (params, config) = load(&path)?;
    let reloaded = Model { config, params };
    let same = predict(&out.best, &test)? == predict(&reloaded, &test)?;
    println!("reloaded logits identical: {same}");
    println!("test: {}", evaluate(&reloaded, &test)?);
    Ok(())
}

