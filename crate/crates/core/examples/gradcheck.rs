//! Finite-difference check of every layer and of a small full model.
//!
//! `cargo run --release --example gradcheck -- [seed]`

use tristream::gradcheck::{run_suite, GradcheckConfig};

fn main() -> tristream::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |a| a.parse().expect("seed"));
    let report = run_suite(&GradcheckConfig { seed, ..Default::default() })?;
    println!("{report}");
    println!("max relative error {:.3e} over {} tensors", report.max_rel_err(), report.entries.len());
    if !report.passed() {
        std::process::exit(3);
    }
    Ok(())
}
