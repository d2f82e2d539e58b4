//! Analytic operation counts. A multiply-add counts as two operations;
//! elementwise activations, residual adds, bias adds and pooling count one
//! operation per element.

use std::fmt;

use serde::Serialize;

use super::{fused_width, AblationFlags, ModelConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub input_len: usize,
    pub total: u64,
    pub layers: Vec<(String, u64)>,
}

impl FlopReport {
    pub fn mflops(&self) -> f64 {
        self.total as f64 / 1e6
    }

    fn push(&mut self, name: impl Into<String>, flops: u64) {
        self.total += flops;
        self.layers.push((name.into(), flops));
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.layers.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
        for (name, flops) in &self.layers {
            writeln!(f, "{name:<width$}  {flops:>14}")?;
        }
        writeln!(f, "{:<width$}  {:>14}", "total", self.total)?;
        write!(f, "input_len={} MFLOPs={:.3}", self.input_len, self.mflops())
    }
}

pub fn conv1d_flops(c_out: usize, c_in: usize, kernel: usize, t: usize) -> u64 {
    2 * (c_out * c_in * kernel * t) as u64
}

pub fn dense_flops(inputs: usize, outputs: usize) -> u64 {
    2 * (inputs * outputs) as u64
}

/// Input and recurrent projections for all four gates, plus bias, gate
/// nonlinearities and the cell/hidden updates, for every timestep.
pub fn lstm_flops(input: usize, hidden: usize, t: usize) -> u64 {
    let per_step = 2 * 4 * hidden * (input + hidden) + 13 * hidden;
    (per_step * t) as u64
}

fn tcn_block_flops(c_in: usize, filters: usize, kernel: usize, t: usize) -> u64 {
    let mut n = conv1d_flops(filters, c_in, kernel, t) + conv1d_flops(filters, filters, kernel, t);
    if c_in != filters {
        n += conv1d_flops(filters, c_in, 1, t);
    }
    // two relus and the residual add
    n + 3 * (filters * t) as u64
}

fn excitation_flops(c: usize, ratio: usize) -> u64 {
    let hidden = c / ratio.max(1);
    dense_flops(c, hidden) + hidden as u64 + dense_flops(hidden, c) + c as u64
}

/// Per-layer and total counts for a `[C, T]` input. Disabled components
/// contribute nothing.
pub fn count_flops(config: &ModelConfig, flags: &AblationFlags, t: usize) -> FlopReport {
    let mut r = FlopReport { input_len: t, total: 0, layers: Vec::new() };
    let c = config.channels;
    if flags.enable_stream_a {
        let a = &config.stream_a;
        for dir in ["forward", "backward"] {
            let mut cin = c;
            for i in 0..a.dilations.len() {
                r.push(format!("stream_a.{dir}.{i}"), tcn_block_flops(cin, a.filters, a.kernel, t));
                cin = a.filters;
            }
        }
        r.push("stream_a.pool", (2 * a.filters * t) as u64);
    }
    if flags.enable_stream_b {
        let b = &config.stream_b;
        let (cf, sf) = (b.conv_filters, b.separable_filters);
        r.push("stream_b.conv", conv1d_flops(cf, c, b.kernel, t) + (cf * t) as u64);
        r.push("stream_b.depthwise", 2 * (cf * b.kernel * t) as u64);
        // pointwise matmul, bias, relu
        r.push("stream_b.pointwise", conv1d_flops(sf, cf, 1, t) + 2 * (sf * t) as u64);
        // squeeze, excitation, rescale
        r.push("stream_b.se", (sf * t) as u64 + excitation_flops(sf, b.se_ratio) + (sf * t) as u64);
        r.push("stream_b.pool", (sf * t) as u64);
    }
    if flags.enable_stream_c {
        let s = &config.stream_c;
        let mut cin = c;
        for i in 0..s.dilations.len() {
            r.push(format!("stream_c.tcn.{i}"), tcn_block_flops(cin, s.filters, s.kernel, t));
            cin = s.filters;
        }
        r.push("stream_c.lstm_forward", lstm_flops(s.filters, s.lstm_hidden, t));
        r.push("stream_c.lstm_backward", lstm_flops(s.filters, s.lstm_hidden, t));
        let merge = match s.combine {
            crate::layers::BiCombine::Sum => (s.lstm_hidden * t) as u64,
            crate::layers::BiCombine::Concat => 0,
        };
        r.push("stream_c.merge", merge);
        r.push("stream_c.pool", (s.output_width() * t) as u64);
    }
    let width = fused_width(config, flags);
    if flags.enable_attention {
        r.push("attention", excitation_flops(width, config.attention_ratio) + width as u64);
    }
    r.push("classifier", dense_flops(width, config.num_classes) + config.num_classes as u64);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_alone() {
        assert_eq!(dense_flops(8, 4), 64);
    }

    #[test]
    fn conv_doubles_with_length() {
        assert_eq!(conv1d_flops(4, 3, 5, 200), 2 * conv1d_flops(4, 3, 5, 100));
        assert_eq!(lstm_flops(6, 5, 40), 2 * lstm_flops(6, 5, 20));
    }

    #[test]
    fn affine_in_length() {
        let config = ModelConfig::default();
        let flags = AblationFlags::default();
        let f = |t| count_flops(&config, &flags, t).total as i128;
        let slope = f(2) - f(1);
        let intercept = f(1) - slope;
        for t in [10, 1000, 10_000] {
            assert_eq!(f(t), slope * t as i128 + intercept);
        }
    }

    #[test]
    fn disabled_components_cost_nothing() {
        let config = ModelConfig::default();
        let full = count_flops(&config, &AblationFlags::default(), 100);
        for (_, flags) in AblationFlags::standard_rows() {
            let r = count_flops(&config, &flags, 100);
            if !flags.enable_stream_a {
                assert!(r.layers.iter().all(|(n, _)| !n.starts_with("stream_a")));
            }
            if !flags.enable_attention {
                assert!(r.layers.iter().all(|(n, _)| n != "attention"));
            }
            assert!(r.total <= full.total);
        }
    }

    #[test]
    fn breakdown_sums_to_total() {
        let r = count_flops(&ModelConfig::default(), &AblationFlags::default(), 1000);
        assert_eq!(r.layers.iter().map(|(_, n)| n).sum::<u64>(), r.total);
        assert!(r.to_string().contains("total"));
    }
}
