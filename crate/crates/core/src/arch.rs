//! Architecture descriptors and parameter accounting.
//!
//! A network is a flat list of layer descriptors, enough to count parameters
//! per convolution variant and, for the toy presets, to drive the trainer.
//! The grouped variants replace the convolutions marked convertible; stems
//! and depthwise convolutions always stay standard.
//!
//! Accounting conventions:
//! - `total` is the parameter count of the whole network under the chosen
//!   variant. For the reference architectures this is the figure usually
//!   quoted per group count.
//! - `per_processor` is what one of `N` workers holds under the sharding of
//!   [`crate::sim`]: converted layers contribute `d^2 m n / N^2` (plus
//!   `d0^2 n / N + m` for the two-level variant), everything else is divided
//!   evenly across the workers.

use crate::error::{Error, Result};

/// Convolution variant applied to the convertible layers of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Standard (full) convolution.
    Sc,
    /// Group convolution.
    Gc,
    /// Two-level group convolution.
    Gc2l,
    /// Group convolution followed by a deterministic channel shuffle.
    Shuffle,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sc, Variant::Gc, Variant::Gc2l, Variant::Shuffle];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Sc => "sc",
            Variant::Gc => "gc",
            Variant::Gc2l => "gc2l",
            Variant::Shuffle => "shuffle",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}; expected sc|gc|gc2l|shuffle")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        label: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        /// Whether the grouped variants replace this convolution.
        convertible: bool,
    },
    /// Depthwise convolution; never converted.
    DepthwiseConv { label: String, channels: usize, kernel: usize, stride: usize },
    BatchNorm { channels: usize },
    /// Trainable per-channel scale and shift; the toy nets use this in place
    /// of batch normalization.
    ChannelAffine { channels: usize },
    Relu,
    GlobalAvgPool,
    FullyConnected { inputs: usize, outputs: usize },
}

/// Structural description of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    /// (channels, height, width) of the input.
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub layers: Vec<Layer>,
    /// Variant and group count the trainer instantiates.
    pub variant: Variant,
    pub groups: usize,
}

/// Parameter totals split by role.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoleCounts {
    pub local: u64,
    pub coarse_restrict: u64,
    pub coarse_mix: u64,
    pub batch_norm: u64,
    pub fully_connected: u64,
    pub other: u64,
}

impl RoleCounts {
    pub fn total(&self) -> u64 {
        self.local
            + self.coarse_restrict
            + self.coarse_mix
            + self.batch_norm
            + self.fully_connected
            + self.other
    }

    fn add(&mut self, other: &RoleCounts) {
        self.local += other.local;
        self.coarse_restrict += other.coarse_restrict;
        self.coarse_mix += other.coarse_mix;
        self.batch_norm += other.batch_norm;
        self.fully_connected += other.fully_connected;
        self.other += other.other;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCount {
    pub label: String,
    pub roles: RoleCounts,
    pub total: u64,
    pub per_processor: f64,
}

/// Parameter accounting for one layer or a whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCount {
    pub total: u64,
    pub per_processor: f64,
    pub roles: RoleCounts,
    pub layers: Vec<LayerCount>,
}

impl ParamCount {
    /// CSV schema: `layer,local,coarse_restrict,coarse_mix,batch_norm,fully_connected,other,total,per_processor`,
    /// one row per layer plus a `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "layer,local,coarse_restrict,coarse_mix,batch_norm,fully_connected,other,total,per_processor\n",
        );
        let row = |label: &str, r: &RoleCounts, total: u64, per: f64| {
            format!(
                "{label},{},{},{},{},{},{},{total},{per}\n",
                r.local, r.coarse_restrict, r.coarse_mix, r.batch_norm, r.fully_connected, r.other
            )
        };
        for l in &self.layers {
            s.push_str(&row(&l.label, &l.roles, l.total, l.per_processor));
        }
        s.push_str(&row("total", &self.roles, self.total, self.per_processor));
        s
    }

    pub fn from_csv(text: &str) -> Result<ParamCount> {
        let mut layers = Vec::new();
        let mut total_row: Option<LayerCount> = None;
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Format(format!("bad paramcount row: {line:?}")));
            }
            let pu = |s: &str| -> Result<u64> {
                s.parse().map_err(|_| Error::Format(format!("bad count {s:?}")))
            };
            let roles = RoleCounts {
                local: pu(f[1])?,
                coarse_restrict: pu(f[2])?,
                coarse_mix: pu(f[3])?,
                batch_norm: pu(f[4])?,
                fully_connected: pu(f[5])?,
                other: pu(f[6])?,
            };
            let lc = LayerCount {
                label: f[0].to_string(),
                roles,
                total: pu(f[7])?,
                per_processor: f[8]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad per-processor value {:?}", f[8])))?,
            };
            if lc.label == "total" {
                total_row = Some(lc);
            } else {
                layers.push(lc);
            }
        }
        let t = total_row.ok_or_else(|| Error::Format("paramcount CSV is missing the total row".into()))?;
        Ok(ParamCount { total: t.total, per_processor: t.per_processor, roles: t.roles, layers })
    }
}

/// Parameter count of a single convolution layer under `variant` with
/// `groups` groups.
///
/// - SC: total `d^2 m n`, per-processor `d^2 m n / N` (even division of a
///   replicated layer).
/// - GC / Shuffle: total `d^2 m n / N`, per-processor `d^2 m n / N^2`.
/// - GC-2L: per-processor `d^2 m n / N^2 + d0^2 n / N + m`, total `N` times
///   that.
pub fn layer_param_count(
    n: usize,
    m: usize,
    d: usize,
    d0: usize,
    groups: usize,
    variant: Variant,
) -> Result<ParamCount> {
    if groups == 0 {
        return Err(Error::config("group count must be positive"));
    }
    if variant != Variant::Sc && (n % groups != 0 || m % groups != 0) {
        return Err(Error::config(format!(
            "groups {groups} must divide channels {n} and {m} for variant {}",
            variant.name()
        )));
    }
    let (n64, m64, d64, d064, g64) = (n as u64, m as u64, d as u64, d0 as u64, groups as u64);
    let full = d64 * d64 * m64 * n64;
    let (roles, per_processor) = match variant {
        Variant::Sc => (
            RoleCounts { local: full, ..Default::default() },
            full as f64 / g64 as f64,
        ),
        Variant::Gc | Variant::Shuffle => (
            RoleCounts { local: full / g64, ..Default::default() },
            (full / (g64 * g64)) as f64,
        ),
        Variant::Gc2l => {
            let local = full / g64;
            let coarse_restrict = d064 * d064 * n64;
            let coarse_mix = m64 * g64;
            (
                RoleCounts { local, coarse_restrict, coarse_mix, ..Default::default() },
                (full / (g64 * g64) + d064 * d064 * n64 / g64 + m64) as f64,
            )
        }
    };
    let total = roles.total();
    let layer = LayerCount {
        label: format!("conv{n}x{m}d{d}"),
        roles,
        total,
        per_processor,
    };
    Ok(ParamCount { total, per_processor, roles, layers: vec![layer] })
}

/// Parameter accounting for a whole model. Convertible convolutions take
/// the variant; everything else is replicated and divided evenly across the
/// `groups` processors in the per-processor figure.
pub fn model_param_count(arch: &ArchSpec, variant: Variant, groups: usize) -> Result<ParamCount> {
    if groups == 0 {
        return Err(Error::config("group count must be positive"));
    }
    let mut layers = Vec::new();
    let mut roles = RoleCounts::default();
    let mut converted_per_proc = 0.0;
    let mut replicated: u64 = 0;
    for layer in &arch.layers {
        let (label, lc): (String, LayerCount) = match layer {
            Layer::Conv { label, in_ch, out_ch, kernel, convertible, .. } => {
                let v = if *convertible { variant } else { Variant::Sc };
                let count = layer_param_count(*in_ch, *out_ch, *kernel, *kernel, groups, v)
                    .map_err(|e| Error::config(format!("layer {label}: {e}")))?;
                if *convertible && variant != Variant::Sc {
                    converted_per_proc += count.per_processor;
                } else {
                    replicated += count.total;
                }
                (
                    label.clone(),
                    LayerCount {
                        label: label.clone(),
                        roles: count.roles,
                        total: count.total,
                        per_processor: count.per_processor,
                    },
                )
            }
            Layer::DepthwiseConv { label, channels, kernel, .. } => {
                let total = (kernel * kernel * channels) as u64;
                replicated += total;
                (
                    label.clone(),
                    LayerCount {
                        label: label.clone(),
                        roles: RoleCounts { other: total, ..Default::default() },
                        total,
                        per_processor: total as f64 / groups as f64,
                    },
                )
            }
            Layer::BatchNorm { channels } | Layer::ChannelAffine { channels } => {
                let total = 2 * *channels as u64;
                replicated += total;
                (
                    format!("norm{channels}"),
                    LayerCount {
                        label: format!("norm{channels}"),
                        roles: RoleCounts { batch_norm: total, ..Default::default() },
                        total,
                        per_processor: total as f64 / groups as f64,
                    },
                )
            }
            Layer::FullyConnected { inputs, outputs } => {
                let total = (*inputs as u64) * (*outputs as u64) + *outputs as u64;
                replicated += total;
                (
                    format!("fc{inputs}x{outputs}"),
                    LayerCount {
                        label: format!("fc{inputs}x{outputs}"),
                        roles: RoleCounts { fully_connected: total, ..Default::default() },
                        total,
                        per_processor: total as f64 / groups as f64,
                    },
                )
            }
            Layer::Relu | Layer::GlobalAvgPool => continue,
        };
        let _ = label;
        roles.add(&lc.roles);
        layers.push(lc);
    }
    // Re-derive the per-processor figure for SC, where nothing is converted:
    // every parameter is divided evenly.
    let per_processor = if variant == Variant::Sc {
        roles.total() as f64 / groups as f64
    } else {
        converted_per_proc + replicated as f64 / groups as f64
    };
    Ok(ParamCount { total: roles.total(), per_processor, roles, layers })
}

/// Wide residual network for 32x32 inputs: a 16-channel stem, three stages
/// of width 16w/32w/64w with `(l-4)/6` pre-activation units each (two 3x3
/// convolutions per unit, 1x1 projection where the shape changes), then
/// norm, pooling, and a classifier. `l` must be 4 mod 6.
pub fn wideresnet(l: usize, w: usize) -> Result<ArchSpec> {
    if l < 10 || (l - 4) % 6 != 0 {
        return Err(Error::config(format!(
            "wideresnet depth {l} must satisfy l = 6k + 4 with k >= 1"
        )));
    }
    if w == 0 {
        return Err(Error::config("widening factor must be positive"));
    }
    let units = (l - 4) / 6;
    let widths = [16 * w, 32 * w, 64 * w];
    let mut layers = vec![Layer::Conv {
        label: "stem".into(),
        in_ch: 3,
        out_ch: 16,
        kernel: 3,
        stride: 1,
        convertible: false,
    }];
    let mut in_ch = 16;
    for (stage, &width) in widths.iter().enumerate() {
        let stage_stride = if stage == 0 { 1 } else { 2 };
        for unit in 0..units {
            let stride = if unit == 0 { stage_stride } else { 1 };
            let label = |part: &str| format!("s{}u{}.{}", stage + 1, unit + 1, part);
            layers.push(Layer::BatchNorm { channels: in_ch });
            layers.push(Layer::Relu);
            layers.push(Layer::Conv {
                label: label("conv1"),
                in_ch,
                out_ch: width,
                kernel: 3,
                stride,
                convertible: true,
            });
            layers.push(Layer::BatchNorm { channels: width });
            layers.push(Layer::Relu);
            layers.push(Layer::Conv {
                label: label("conv2"),
                in_ch: width,
                out_ch: width,
                kernel: 3,
                stride: 1,
                convertible: true,
            });
            if unit == 0 && (in_ch != width || stride != 1) {
                layers.push(Layer::Conv {
                    label: label("shortcut"),
                    in_ch,
                    out_ch: width,
                    kernel: 1,
                    stride,
                    convertible: true,
                });
            }
            in_ch = width;
        }
    }
    layers.push(Layer::BatchNorm { channels: in_ch });
    layers.push(Layer::Relu);
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::FullyConnected { inputs: in_ch, outputs: 10 });
    Ok(ArchSpec {
        name: format!("wideresnet-{l}-{w}"),
        input: (3, 32, 32),
        classes: 10,
        layers,
        variant: Variant::Sc,
        groups: 1,
    })
}

/// Inverted-residual settings: (expansion, output channels, repeats, stride).
const MOBILENET_BLOCKS: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

/// MobileNetV2 for 224x224 inputs and 1000 classes. Inverted residual
/// blocks: expansion 1x1 convolution, 3x3 depthwise, projection 1x1
/// convolution. The grouped variants replace the 1x1 convolutions (including
/// the 1280-channel head); depthwise convolutions and the stem stay
/// standard.
pub fn mobilenetv2() -> ArchSpec {
    let mut layers = vec![
        Layer::Conv { label: "stem".into(), in_ch: 3, out_ch: 32, kernel: 3, stride: 2, convertible: false },
        Layer::BatchNorm { channels: 32 },
        Layer::Relu,
    ];
    let mut in_ch = 32;
    let mut block_id = 0;
    for (t, c_out, repeats, first_stride) in MOBILENET_BLOCKS {
        for r in 0..repeats {
            block_id += 1;
            let stride = if r == 0 { first_stride } else { 1 };
            let hidden = t * in_ch;
            if t != 1 {
                layers.push(Layer::Conv {
                    label: format!("b{block_id}.expand"),
                    in_ch,
                    out_ch: hidden,
                    kernel: 1,
                    stride: 1,
                    convertible: true,
                });
                layers.push(Layer::BatchNorm { channels: hidden });
                layers.push(Layer::Relu);
            }
            layers.push(Layer::DepthwiseConv {
                label: format!("b{block_id}.dw"),
                channels: hidden,
                kernel: 3,
                stride,
            });
            layers.push(Layer::BatchNorm { channels: hidden });
            layers.push(Layer::Relu);
            layers.push(Layer::Conv {
                label: format!("b{block_id}.project"),
                in_ch: hidden,
                out_ch: c_out,
                kernel: 1,
                stride: 1,
                convertible: true,
            });
            layers.push(Layer::BatchNorm { channels: c_out });
            in_ch = c_out;
        }
    }
    layers.push(Layer::Conv {
        label: "head".into(),
        in_ch,
        out_ch: 1280,
        kernel: 1,
        stride: 1,
        convertible: true,
    });
    layers.push(Layer::BatchNorm { channels: 1280 });
    layers.push(Layer::Relu);
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::FullyConnected { inputs: 1280, outputs: 1000 });
    ArchSpec {
        name: "mobilenetv2".into(),
        input: (3, 224, 224),
        classes: 1000,
        layers,
        variant: Variant::Sc,
        groups: 1,
    }
}

/// Small trainable stack: a standard stem convolution into `width` channels,
/// then `depth - 1` width-preserving convolutions carrying the chosen
/// variant, each followed by a channel affine and a ReLU, then global
/// average pooling and a classifier.
pub fn build_toy_arch(
    depth: usize,
    width: usize,
    variant: Variant,
    groups: usize,
) -> Result<ArchSpec> {
    if depth == 0 {
        return Err(Error::config("toy depth must be at least 1"));
    }
    if groups == 0 || (variant != Variant::Sc && width % groups != 0) {
        return Err(Error::config(format!(
            "groups {groups} must divide toy width {width}"
        )));
    }
    let classes = 10;
    let mut layers = Vec::new();
    for i in 0..depth {
        layers.push(Layer::Conv {
            label: format!("conv{i}"),
            in_ch: if i == 0 { 3 } else { width },
            out_ch: width,
            kernel: 3,
            stride: 1,
            convertible: i > 0,
        });
        layers.push(Layer::ChannelAffine { channels: width });
        layers.push(Layer::Relu);
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::FullyConnected { inputs: width, outputs: classes });
    Ok(ArchSpec {
        name: format!("toy-{depth}x{width}"),
        input: (3, 8, 8),
        classes,
        layers,
        variant,
        groups,
    })
}

/// Parse `wideresnet-28-10`, `mobilenetv2`, or `toy` / `toy-3x16`.
pub fn preset(name: &str) -> Result<ArchSpec> {
    if name == "mobilenetv2" {
        return Ok(mobilenetv2());
    }
    if name == "toy" {
        return build_toy_arch(3, 16, Variant::Sc, 1);
    }
    if let Some(rest) = name.strip_prefix("toy-") {
        let (d, w) = rest
            .split_once('x')
            .ok_or_else(|| Error::config(format!("bad toy preset {name:?}, want toy-<depth>x<width>")))?;
        let depth = d.parse().map_err(|_| Error::config(format!("bad toy depth {d:?}")))?;
        let width = w.parse().map_err(|_| Error::config(format!("bad toy width {w:?}")))?;
        return build_toy_arch(depth, width, Variant::Sc, 1);
    }
    if let Some(rest) = name.strip_prefix("wideresnet-") {
        let (l, w) = rest
            .split_once('-')
            .ok_or_else(|| Error::config(format!("bad preset {name:?}, want wideresnet-<l>-<w>")))?;
        let l = l.parse().map_err(|_| Error::config(format!("bad depth {l:?}")))?;
        let w = w.parse().map_err(|_| Error::config(format!("bad width {w:?}")))?;
        return wideresnet(l, w);
    }
    Err(Error::config(format!(
        "unknown architecture {name:?}; expected wideresnet-<l>-<w>, mobilenetv2, or toy"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_formulas() {
        // Spot value: d = d0 = 3, n = m = 64, N = 4.
        let c = layer_param_count(64, 64, 3, 3, 4, Variant::Gc2l).unwrap();
        assert_eq!(c.per_processor, 2512.0);
        assert_eq!(c.total, 4 * 2512);

        let sc = layer_param_count(16, 16, 3, 3, 1, Variant::Sc).unwrap();
        assert_eq!(sc.total, 2304);

        let gc = layer_param_count(64, 64, 3, 3, 4, Variant::Gc).unwrap();
        assert_eq!(gc.per_processor, 2304.0);
        assert_eq!(c.per_processor - gc.per_processor, (144 + 64) as f64);

        assert!(layer_param_count(6, 4, 3, 3, 4, Variant::Gc).is_err());
    }

    #[test]
    fn wideresnet_2810_reference_totals() {
        let arch = wideresnet(28, 10).unwrap();
        let sc = model_param_count(&arch, Variant::Sc, 1).unwrap();
        assert_eq!(sc.total, 36_479_194);

        let gc_totals: Vec<u64> = [2usize, 4, 8, 16]
            .iter()
            .map(|&n| model_param_count(&arch, Variant::Gc, n).unwrap().total)
            .collect();
        assert_eq!(gc_totals, vec![18_251_994, 9_138_394, 4_581_594, 2_303_194]);

        let gc2l_totals: Vec<u64> = [2usize, 4, 8, 16]
            .iter()
            .map(|&n| model_param_count(&arch, Variant::Gc2l, n).unwrap().total)
            .collect();
        assert_eq!(gc2l_totals, vec![18_347_674, 9_254_234, 4_737_754, 2_539_994]);

        // Shuffle counts like GC.
        assert_eq!(
            model_param_count(&arch, Variant::Shuffle, 8).unwrap().total,
            4_581_594
        );
    }

    #[test]
    fn mobilenetv2_reference_total() {
        let arch = mobilenetv2();
        let sc = model_param_count(&arch, Variant::Sc, 1).unwrap();
        assert_eq!(sc.total, 3_504_872);

        let gc: Vec<u64> = [2usize, 4, 8]
            .iter()
            .map(|&n| model_param_count(&arch, Variant::Gc, n).unwrap().total)
            .collect();
        assert_eq!(gc, vec![2_442_536, 1_911_368, 1_645_784]);
    }

    #[test]
    fn per_processor_monotone_in_group_count() {
        let arch = wideresnet(28, 10).unwrap();
        for variant in [Variant::Sc, Variant::Gc, Variant::Gc2l, Variant::Shuffle] {
            let mut prev = f64::INFINITY;
            for n in [2usize, 4, 8, 16] {
                let c = model_param_count(&arch, variant, n).unwrap();
                assert!(
                    c.per_processor < prev,
                    "{} per-processor not decreasing at N={n}",
                    variant.name()
                );
                prev = c.per_processor;
            }
        }
    }

    #[test]
    fn gc2l_exceeds_gc_by_coarse_terms() {
        let arch = wideresnet(28, 10).unwrap();
        for n in [2usize, 4, 8, 16] {
            let gc = model_param_count(&arch, Variant::Gc, n).unwrap();
            let gc2l = model_param_count(&arch, Variant::Gc2l, n).unwrap();
            assert!(gc2l.per_processor > gc.per_processor);
            // Difference is exactly sum over converted layers of d0^2 n/N + m.
            let mut want = 0.0;
            for layer in &arch.layers {
                if let Layer::Conv { in_ch, out_ch, kernel, convertible: true, .. } = layer {
                    want += (kernel * kernel * in_ch / n + out_ch) as f64;
                }
            }
            assert_eq!(gc2l.per_processor - gc.per_processor, want);
        }
    }

    #[test]
    fn gc_at_one_group_equals_sc() {
        let arch = wideresnet(28, 10).unwrap();
        let sc = model_param_count(&arch, Variant::Sc, 1).unwrap();
        let gc = model_param_count(&arch, Variant::Gc, 1).unwrap();
        assert_eq!(sc.total, gc.total);
    }

    #[test]
    fn divisibility_error_names_the_layer() {
        let arch = mobilenetv2();
        let err = model_param_count(&arch, Variant::Gc, 16).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("b2.project"), "unhelpful error: {msg}");
    }

    #[test]
    fn toy_arch_counts_are_consistent() {
        let arch = build_toy_arch(3, 16, Variant::Gc2l, 4).unwrap();
        let c = model_param_count(&arch, Variant::Gc2l, 4).unwrap();
        // stem + two converted convs + affines + fc
        let stem = 9 * 3 * 16;
        let conv = layer_param_count(16, 16, 3, 3, 4, Variant::Gc2l).unwrap().total;
        let affine = 3 * 32;
        let fc = 16 * 10 + 10;
        assert_eq!(c.total, (stem + affine + fc) as u64 + 2 * conv);

        let gc = model_param_count(&arch, Variant::Gc, 4).unwrap();
        let per_layer_extra = (9 * 16 / 4 + 16) * 4; // (d0^2 n/N + m) * N
        assert_eq!(c.total - gc.total, 2 * per_layer_extra as u64);

        let sc = model_param_count(&arch, Variant::Sc, 1).unwrap();
        let conv_total: u64 = 432 + 2 * 2304;
        assert_eq!(sc.roles.local, conv_total);

        assert!(build_toy_arch(3, 16, Variant::Gc, 5).is_err());
    }

    #[test]
    fn preset_parsing() {
        assert_eq!(preset("wideresnet-28-10").unwrap().name, "wideresnet-28-10");
        assert_eq!(preset("mobilenetv2").unwrap().name, "mobilenetv2");
        assert_eq!(preset("toy").unwrap().name, "toy-3x16");
        assert_eq!(preset("toy-2x8").unwrap().name, "toy-2x8");
        assert!(preset("alexnet").is_err());
        assert!(wideresnet(27, 10).is_err());
    }

    #[test]
    fn paramcount_csv_roundtrip() {
        let arch = build_toy_arch(3, 16, Variant::Gc2l, 4).unwrap();
        let c = model_param_count(&arch, Variant::Gc2l, 4).unwrap();
        let csv = c.to_csv();
        assert_eq!(ParamCount::from_csv(&csv).unwrap(), c);
    }
}
