//! Per-layer FLOP counts and how the total grows with input length.
//!
//! `cargo run --example flops -- [input_len]`

use tristream::model::{count_flops, AblationFlags, ModelConfig};

fn main() {
    let t = std::env::args().nth(1).map_or(1000, |a| a.parse().expect("input_len"));
    let config = ModelConfig::default();
    let flags = AblationFlags::default();
    println!("{}", count_flops(&config, &flags, t));

    println!("\n{:>8}  {:>12}  {:>10}", "T", "MFLOPs", "per sample");
    for len in [250, 500, 1000, 2000, 5000, 10000] {
        let r = count_flops(&config, &flags, len);
        println!("{len:>8}  {:>12.3}  {:>10.0}", r.mflops(), r.total as f64 / len as f64);
    }

    println!("\nper variant at T={t}:");
    for (label, f) in AblationFlags::standard_rows() {
        println!("{label:>18}  {:>10.3} MFLOPs", count_flops(&config, &f, t).mflops());
    }
}
