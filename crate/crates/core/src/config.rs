//! Declarative network descriptions, their validation, the JSON config
//! format, and the built-in presets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Value of the `schema` field carried by every config document.
pub const CONFIG_SCHEMA: &str = "threshnet-config/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: u32,
    pub kernel: u32,
    pub stride: u32,
    pub padding: u32,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Bias-free square convolution with "same" padding for odd kernels.
    pub fn new(out_channels: u32, kernel: u32, stride: u32) -> Self {
        ConvSpec {
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            has_bias: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Initial convolutions followed by one pooling layer.
///
/// Every stem conv is followed by batch-norm and ReLU. The pool uses
/// padding `pool_kernel / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub convs: Vec<ConvSpec>,
    pub pool_kernel: u32,
    pub pool_stride: u32,
    pub pool_kind: PoolKind,
}

impl StemSpec {
    pub fn out_channels(&self) -> Option<u32> {
        self.convs.last().map(|c| c.out_channels)
    }

    pub fn pool_padding(&self) -> u32 {
        self.pool_kernel / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockMode {
    /// Decided by the threshold mechanism from the block's input width.
    Auto,
    Dense,
    Harmonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub num_layers: u32,
    pub growth_rate: u32,
    pub mode: BlockMode,
    /// Channel multiplier of the harmonic width law; ignored by dense blocks.
    pub multiplier: f64,
    /// Dense blocks only: 1x1 conv to 4k channels before every 3x3 conv.
    pub use_bottleneck: bool,
    /// Whether the transition after this block ends with a 2x2 average pool.
    pub downsample_after: bool,
}

/// How `channel_list` maps onto the network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLayout {
    /// `channel_list[i]` is the input width of block `i`. The stem emits
    /// `channel_list[0]`, transition `i` emits `channel_list[i + 1]` and the
    /// last block feeds the classifier directly.
    #[default]
    BlockInput,
    /// `channel_list[i]` is the width emitted by the transition that follows
    /// block `i`; the last block gets a transition too. The stem output feeds
    /// block 0.
    TransitionOutput,
}

/// Which layers a harmonic block concatenates into its output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmonicOutput {
    /// Block input, every odd layer and the final layer.
    #[default]
    WithInput,
    /// Odd layers and the final layer only.
    OddAndFinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub stem: StemSpec,
    pub blocks: Vec<BlockSpec>,
    pub channel_list: Vec<u32>,
    /// Input width at or above which an `Auto` block becomes harmonic.
    pub threshold: u32,
    pub dense_reduction: f64,
    pub harmonic_reduction: f64,
    pub classifier_classes: u32,
    #[serde(default)]
    pub channel_layout: ChannelLayout,
    #[serde(default)]
    pub harmonic_output: HarmonicOutput,
}

/// One failed invariant: the offending field path and the rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn check_conv(field: &str, conv: &ConvSpec, out: &mut Vec<Violation>) {
    if conv.out_channels == 0 {
        out.push(Violation::new(format!("{field}.out_channels"), "must be positive"));
    }
    if ![1, 3, 7].contains(&conv.kernel) {
        out.push(Violation::new(format!("{field}.kernel"), "kernel must be one of 1, 3, 7"));
    }
    if ![1, 2].contains(&conv.stride) {
        out.push(Violation::new(format!("{field}.stride"), "stride must be 1 or 2"));
    }
}

fn check_reduction(field: &str, value: f64, out: &mut Vec<Violation>) {
    if !(value > 0.0 && value <= 1.0) {
        out.push(Violation::new(field, "reduction in (0,1]"));
    }
}

/// Checks every invariant of the description. Returns all violations, not
/// just the first.
pub fn validate(spec: &NetworkSpec) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();

    if spec.name.trim().is_empty() {
        out.push(Violation::new("name", "must not be empty"));
    }

    if spec.stem.convs.is_empty() {
        out.push(Violation::new("stem.convs", "stem needs at least one conv"));
    }
    for (i, conv) in spec.stem.convs.iter().enumerate() {
        check_conv(&format!("stem.convs[{i}]"), conv, &mut out);
    }
    if spec.stem.pool_kernel == 0 {
        out.push(Violation::new("stem.pool_kernel", "must be positive"));
    }
    if spec.stem.pool_stride == 0 {
        out.push(Violation::new("stem.pool_stride", "must be positive"));
    }

    if spec.blocks.is_empty() {
        out.push(Violation::new("blocks", "at least one block required"));
    }
    for (i, block) in spec.blocks.iter().enumerate() {
        let field = format!("blocks[{i}]");
        if block.num_layers == 0 {
            out.push(Violation::new(format!("{field}.num_layers"), "must be positive"));
        }
        if block.growth_rate == 0 {
            out.push(Violation::new(format!("{field}.growth_rate"), "must be positive"));
        }
        if !block.multiplier.is_finite() {
            out.push(Violation::new(format!("{field}.multiplier"), "must be finite"));
        } else if block.mode != BlockMode::Dense && block.multiplier <= 1.0 {
            out.push(Violation::new(format!("{field}.multiplier"), "multiplier must exceed 1"));
        }
    }

    if spec.channel_list.len() != spec.blocks.len() {
        out.push(Violation::new(
            "channel_list",
            format!(
                "length {} must equal block count {}",
                spec.channel_list.len(),
                spec.blocks.len()
            ),
        ));
    }
    for (i, &c) in spec.channel_list.iter().enumerate() {
        if c == 0 {
            out.push(Violation::new(format!("channel_list[{i}]"), "must be positive"));
        }
    }
    if spec.channel_layout == ChannelLayout::BlockInput {
        if let (Some(stem_out), Some(&first)) = (spec.stem.out_channels(), spec.channel_list.first()) {
            if stem_out != first {
                out.push(Violation::new(
                    "stem.convs",
                    format!("last stem conv must emit channel_list[0] = {first}, got {stem_out}"),
                ));
            }
        }
    }

    if spec.threshold == 0 {
        out.push(Violation::new("threshold", "threshold must be positive"));
    }
    check_reduction("dense_reduction", spec.dense_reduction, &mut out);
    check_reduction("harmonic_reduction", spec.harmonic_reduction, &mut out);
    if spec.classifier_classes == 0 {
        out.push(Violation::new("classifier_classes", "must be positive"));
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 3] = ["threshnet79", "threshnet95", "densenet121"];

fn threshnet(name: &str, layers: [u32; 5]) -> NetworkSpec {
    let growth = [32, 32, 32, 40, 160];
    let modes = [
        BlockMode::Dense,
        BlockMode::Dense,
        BlockMode::Dense,
        BlockMode::Harmonic,
        BlockMode::Harmonic,
    ];
    let downsample = [true, true, false, true, false];
    let blocks = (0..5)
        .map(|i| BlockSpec {
            num_layers: layers[i],
            growth_rate: growth[i],
            mode: modes[i],
            multiplier: 1.7,
            use_bottleneck: modes[i] == BlockMode::Dense,
            downsample_after: downsample[i],
        })
        .collect();
    NetworkSpec {
        name: name.to_string(),
        stem: StemSpec {
            convs: vec![ConvSpec::new(64, 3, 2), ConvSpec::new(128, 3, 1)],
            pool_kernel: 3,
            pool_stride: 2,
            pool_kind: PoolKind::Max,
        },
        blocks,
        channel_list: vec![128, 192, 288, 480, 960],
        threshold: 320,
        dense_reduction: 0.5,
        harmonic_reduction: 0.85,
        classifier_classes: 1000,
        channel_layout: ChannelLayout::BlockInput,
        harmonic_output: HarmonicOutput::WithInput,
    }
}

fn densenet121() -> NetworkSpec {
    let layers = [6, 12, 24, 16];
    let blocks = layers
        .iter()
        .enumerate()
        .map(|(i, &n)| BlockSpec {
            num_layers: n,
            growth_rate: 32,
            mode: BlockMode::Dense,
            multiplier: 1.7,
            use_bottleneck: true,
            downsample_after: i + 1 < layers.len(),
        })
        .collect();
    NetworkSpec {
        name: "densenet121".to_string(),
        stem: StemSpec {
            convs: vec![ConvSpec::new(64, 7, 2)],
            pool_kernel: 3,
            pool_stride: 2,
            pool_kind: PoolKind::Max,
        },
        blocks,
        // Transition i halves 64 + L_i * 32.
        channel_list: vec![64, 128, 256, 512],
        threshold: 320,
        dense_reduction: 0.5,
        harmonic_reduction: 0.85,
        classifier_classes: 1000,
        channel_layout: ChannelLayout::BlockInput,
        harmonic_output: HarmonicOutput::WithInput,
    }
}

/// Built-in network descriptions. Names are case-insensitive.
pub fn preset(name: &str) -> Result<NetworkSpec, ConfigError> {
    match name.to_ascii_lowercase().as_str() {
        "threshnet79" => Ok(threshnet("threshnet79", [6, 8, 12, 16, 4])),
        "threshnet95" => Ok(threshnet("threshnet95", [6, 12, 16, 16, 4])),
        "densenet121" => Ok(densenet121()),
        _ => Err(ConfigError::UnknownPreset(name.to_string())),
    }
}

/// Parses a JSON config document (see `schema/config.schema.json`).
pub fn parse_config(text: &str) -> Result<NetworkSpec, ConfigError> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ConfigError::Schema("document must be a JSON object".into()))?;
    match obj.remove("schema") {
        Some(serde_json::Value::String(s)) if s == CONFIG_SCHEMA => {}
        Some(other) => {
            return Err(ConfigError::Schema(format!(
                "unsupported schema {other}, expected \"{CONFIG_SCHEMA}\""
            )))
        }
        None => return Err(ConfigError::Schema("missing field `schema`".into())),
    }
    let spec: NetworkSpec =
        serde_json::from_value(value).map_err(|e| ConfigError::Schema(e.to_string()))?;
    if spec.channel_list.len() != spec.blocks.len() {
        return Err(ConfigError::Schema(format!(
            "channel_list has {} entries but there are {} blocks",
            spec.channel_list.len(),
            spec.blocks.len()
        )));
    }
    validate(&spec).map_err(ConfigError::Invalid)?;
    Ok(spec)
}

/// Serializes a description to the config format accepted by [`parse_config`].
pub fn serialize_config(spec: &NetworkSpec) -> String {
    let mut value = serde_json::to_value(spec).expect("NetworkSpec is always representable");
    let obj = value.as_object_mut().expect("struct serializes to an object");
    obj.insert("schema".into(), serde_json::Value::String(CONFIG_SCHEMA.into()));
    let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
    text.push('\n');
    text
}
