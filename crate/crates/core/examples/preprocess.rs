//! Continuous recording to windowed splits, written as EMGB files.
//!
//! `cargo run --example preprocess -- [out_dir]`

use tristream::data::{load_emgb, preprocess, save_emgb, PreprocessConfig, Recording, SplitSpec};
use tristream::rng::RngState;
use tristream::tensor::Tensor;

/// Six repetitions of three gestures, each held for 1200 samples with rest
/// in between, on four channels with gesture-dependent frequencies.
fn recording(rng: &mut RngState) -> tristream::Result<Recording> {
    let (c, hold, rest) = (4, 1200, 400);
    let mut labels = Vec::new();
    let mut reps = Vec::new();
    for rep in 1..=6u16 {
        for gesture in 1..=3u16 {
            labels.extend(std::iter::repeat_n(gesture, hold));
            reps.extend(std::iter::repeat_n(rep, hold));
            labels.extend(std::iter::repeat_n(0, rest));
            reps.extend(std::iter::repeat_n(0, rest));
        }
    }
    let n = labels.len();
    let mut data = vec![0.0; c * n];
    for ch in 0..c {
        for t in 0..n {
            let f = 0.01 * (labels[t] as f64 + 1.0) * (ch as f64 + 1.0);
            data[ch * n + t] = 3.0 + 2.0 * (f * t as f64).sin() + 0.3 * rng.normal();
        }
    }
    Recording::new(Tensor::new(vec![c, n], data)?, labels, reps, 1)
}

fn main() -> tristream::Result<()> {
    let out_dir = std::env::args().nth(1).map_or_else(std::env::temp_dir, Into::into);
    let mut rng = RngState::new(0);
    let rec = recording(&mut rng)?;
    println!("recording: {} channels x {} samples", rec.channels(), rec.len());

    for split in [SplitSpec::default(), SplitSpec::repetition_default()] {
        let cfg = PreprocessConfig { window: 400, stride: 400, split: split.clone(), ..Default::default() };
        let s = preprocess(&rec, &cfg, &mut rng.fork(1))?;
        println!(
            "{split:?}: train={} (with noisy copies) val={} test={}, train class counts {:?}",
            s.train.len(),
            s.val.len(),
            s.test.len(),
            s.train.class_counts()
        );
        let path = out_dir.join("preprocess_example_test.emgb");
        save_emgb(&s.test, &path)?;
        let back = load_emgb(&path)?;
        println!("  test set written to {} and read back: {} windows", path.display(), back.len());
    }
    Ok(())
}
