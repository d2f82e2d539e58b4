use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BiCombine, SeGate};

/// Bidirectional TCN stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamAConfig {
    pub filters: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
}

impl Default for StreamAConfig {
    fn default() -> Self {
        Self { filters: 32, kernel: 3, dilations: vec![1] }
    }
}

/// Conv → separable conv → squeeze-excitation stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamBConfig {
    pub conv_filters: usize,
    pub kernel: usize,
    pub separable_filters: usize,
    pub se_ratio: usize,
    pub se_gate: SeGate,
}

impl Default for StreamBConfig {
    fn default() -> Self {
        Self { conv_filters: 2, kernel: 3, separable_filters: 32, se_ratio: 4, se_gate: SeGate::Sigmoid }
    }
}

/// TCN → BiLSTM stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamCConfig {
    pub filters: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub lstm_hidden: usize,
    pub combine: BiCombine,
}

impl Default for StreamCConfig {
    fn default() -> Self {
        Self { filters: 32, kernel: 3, dilations: vec![1], lstm_hidden: 32, combine: BiCombine::Sum }
    }
}

impl StreamCConfig {
    pub fn output_width(&self) -> usize {
        match self.combine {
            BiCombine::Sum => self.lstm_hidden,
            BiCombine::Concat => 2 * self.lstm_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub window: usize,
    pub num_classes: usize,
    pub stream_a: StreamAConfig,
    pub stream_b: StreamBConfig,
    pub stream_c: StreamCConfig,
    pub dropout: f64,
    pub attention_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(16, 500, 52)
    }
}

/// Which components are present. A disabled stream contributes nothing to
/// the fused vector; disabled attention passes the fused vector through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub enable_stream_a: bool,
    pub enable_stream_b: bool,
    pub enable_stream_c: bool,
    pub enable_attention: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self { enable_stream_a: true, enable_stream_b: true, enable_stream_c: true, enable_attention: true }
    }
}

impl AblationFlags {
    /// The five standard ablation rows, labelled for reporting.
    pub fn standard_rows() -> Vec<(&'static str, AblationFlags)> {
        let all = AblationFlags::default();
        vec![
            ("without attention", AblationFlags { enable_attention: false, ..all }),
            ("without BiTCN", AblationFlags { enable_stream_a: false, ..all }),
            ("without CNN", AblationFlags { enable_stream_b: false, ..all }),
            ("without BiLSTM", AblationFlags { enable_stream_c: false, ..all }),
            ("proposed", all),
        ]
    }

    pub fn any_stream(&self) -> bool {
        self.enable_stream_a || self.enable_stream_b || self.enable_stream_c
    }
}

impl ModelConfig {
    pub fn new(channels: usize, window: usize, num_classes: usize) -> Self {
        Self {
            channels,
            window,
            num_classes,
            stream_a: StreamAConfig::default(),
            stream_b: StreamBConfig::default(),
            stream_c: StreamCConfig::default(),
            dropout: 0.2,
            attention_ratio: 4,
        }
    }

    /// Checks every constraint and reports all violations at once.
    pub fn validate(&self, flags: &AblationFlags) -> Result<()> {
        let mut v = Vec::new();
        let positive = |v: &mut Vec<String>, name: &str, x: usize| {
            if x == 0 {
                v.push(format!("{name} must be positive"));
            }
        };
        positive(&mut v, "channels", self.channels);
        positive(&mut v, "window", self.window);
        if self.num_classes < 2 {
            v.push(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            v.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !flags.any_stream() {
            v.push("at least one stream must be enabled".into());
        }
        if flags.enable_stream_a {
            let a = &self.stream_a;
            positive(&mut v, "stream_a.filters", a.filters);
            positive(&mut v, "stream_a.kernel", a.kernel);
            if a.dilations.is_empty() || a.dilations.contains(&0) {
                v.push("stream_a.dilations must be non-empty and positive".into());
            }
        }
        if flags.enable_stream_b {
            let b = &self.stream_b;
            positive(&mut v, "stream_b.conv_filters", b.conv_filters);
            positive(&mut v, "stream_b.kernel", b.kernel);
            positive(&mut v, "stream_b.separable_filters", b.separable_filters);
            if b.se_ratio == 0 || !b.separable_filters.is_multiple_of(b.se_ratio) || b.separable_filters < b.se_ratio {
                v.push(format!(
                    "stream_b.separable_filters ({}) must be divisible by stream_b.se_ratio ({})",
                    b.separable_filters, b.se_ratio
                ));
            }
        }
        if flags.enable_stream_c {
            let c = &self.stream_c;
            positive(&mut v, "stream_c.filters", c.filters);
            positive(&mut v, "stream_c.kernel", c.kernel);
            positive(&mut v, "stream_c.lstm_hidden", c.lstm_hidden);
            if c.dilations.is_empty() || c.dilations.contains(&0) {
                v.push("stream_c.dilations must be non-empty and positive".into());
            }
        }
        if flags.enable_attention && flags.any_stream() {
            let width = super::fused_width(self, flags);
            let r = self.attention_ratio;
            if r == 0 || !width.is_multiple_of(r) || width < r {
                v.push(format!("fused width {width} must be divisible by attention_ratio {r}"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate(&AblationFlags::default()).unwrap();
        for (_, flags) in AblationFlags::standard_rows() {
            c.validate(&flags).unwrap();
        }
    }

    #[test]
    fn no_streams_rejected() {
        let flags = AblationFlags { enable_stream_a: false, enable_stream_b: false, enable_stream_c: false, enable_attention: true };
        assert!(ModelConfig::default().validate(&flags).is_err());
    }

    #[test]
    fn disabled_stream_settings_ignored() {
        let mut c = ModelConfig::default();
        c.stream_a.filters = 0;
        let flags = AblationFlags { enable_stream_a: false, ..Default::default() };
        c.validate(&flags).unwrap();
        assert!(c.validate(&AblationFlags::default()).is_err());
    }

    #[test]
    fn json_roundtrip_and_unknown_fields() {
        let c = ModelConfig::new(12, 200, 17);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"chanels": 3}"#).is_err());
        let partial: ModelConfig = serde_json::from_str(r#"{"channels": 3}"#).unwrap();
        assert_eq!(partial.channels, 3);
        assert_eq!(partial.window, 500);
    }
}
