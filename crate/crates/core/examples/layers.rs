//! Builds individual blocks on a graph and shows their shapes, causality and
//! the effect of reversing time on the anti-causal branch.
//!
//! `cargo run --example layers`

use tristream::layers::{bitcn, evaluate, receptive_field, se_block, tcn_block, BiTcnParams, SeBlockParams, SeGate, TcnBlockParams};
use tristream::rng::RngState;
use tristream::tensor::Tensor;

fn main() -> tristream::Result<()> {
    let mut rng = RngState::new(0);
    let (c, t) = (3, 16);
    let x = Tensor::new(vec![c, t], (0..c * t).map(|_| rng.normal()).collect())?;

    let block = TcnBlockParams::init(c, 8, 3, 2, &mut rng);
    let y = evaluate(|g| {
        let p = block.bind(g);
        let x = g.constant(x.clone());
        tcn_block(g, x, &p)
    })?;
    println!("tcn block: {:?} -> {:?}, receptive field {}", x.shape(), y.shape(), receptive_field(3, &[2, 2]));

    // perturb the last step: a causal block cannot change earlier outputs
    let mut x2 = x.clone();
    for ch in 0..c {
        x2.data_mut()[ch * t + t - 1] += 1.0;
    }
    let y2 = evaluate(|g| {
        let p = block.bind(g);
        let x = g.constant(x2.clone());
        tcn_block(g, x, &p)
    })?;
    let changed: Vec<usize> = (0..t).filter(|&s| (0..8).any(|ch| y.data()[ch * t + s] != y2.data()[ch * t + s])).collect();
    println!("outputs changed at steps {changed:?}");

    let bi = BiTcnParams::init(c, 4, 3, &[1, 2], &mut rng);
    let z = evaluate(|g| {
        let p = bi.bind(g);
        let x = g.constant(x.clone());
        bitcn(g, x, &p)
    })?;
    println!("bi-tcn: {:?} -> {:?} (forward and backward halves)", x.shape(), z.shape());

    let se = SeBlockParams::init(8, 2, SeGate::Sigmoid, &mut rng)?;
    let s = evaluate(|g| {
        let p = se.bind(g);
        let y = g.constant(y.clone());
        se_block(g, y, &p)
    })?;
    let energy = |v: &Tensor, ch: usize| v.data()[ch * t..(ch + 1) * t].iter().map(|a| a.abs()).sum::<f64>();
    let ratio: Vec<f64> = (0..8).map(|ch| energy(&s, ch) / energy(&y, ch).max(1e-12)).collect();
    println!("se gates (output/input per channel): {:?}", ratio.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>());
    Ok(())
}
