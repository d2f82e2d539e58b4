//! Trains the five standard variants on synthetic data and prints the table.
//!
//! `cargo run --release --example ablation -- [epochs] [per_class]`

use tristream::data::{split_ratio, synth_generate, SynthConfig};
use tristream::model::{AblationFlags, ModelConfig};
use tristream::rng::RngState;
use tristream::train::{ablate, Preset, TrainConfig};

fn main() -> tristream::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(5, |a| a.parse().expect("epochs"));
    let per_class = args.next().map_or(20, |a| a.parse().expect("per_class"));

    let synth = SynthConfig { classes: 6, channels: 12, window: 200, per_class, ..Default::default() };
    let ds = synth_generate(&synth, &mut RngState::new(7))?;
    let (train, val, test) = split_ratio(&ds, [6.0, 2.0, 2.0], &mut RngState::new(8))?;
    let config = ModelConfig::new(12, 200, 6);
    let cfg = TrainConfig { epochs, ..TrainConfig::preset(Preset::Db5) };
    let table = ablate(&config, &AblationFlags::standard_rows(), &train, &val, &test, &cfg)?;
    print!("{table}");
    Ok(())
}
