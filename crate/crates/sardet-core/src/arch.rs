//! Network architecture descriptors.
//!
//! Architectures are written in a compact notation: `C(16,5)` is a
//! convolution with 16 output channels and a 5x5 kernel (valid padding,
//! stride 1), `ReLU` the activation, `MP(2,2)` a max-pool with 2x2 window
//! and stride 2, and `FC(10)` a fully-connected layer with 10 outputs.
//! A descriptor only becomes a model after [`ArchitectureSpec::validate`]
//! traces every feature-map shape against the configured input size and
//! confirms the final layer emits exactly `num_classes` logits.

use crate::error::{Error, Result};
use std::fmt;

/// One layer in compact notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize },
    Relu,
    MaxPool { window: usize, stride: usize },
    Fc { units: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
            } => write!(f, "C({out_channels},{kernel})"),
            LayerSpec::Relu => write!(f, "ReLU"),
            LayerSpec::MaxPool { window, stride } => write!(f, "MP({window},{stride})"),
            LayerSpec::Fc { units } => write!(f, "FC({units})"),
        }
    }
}

/// Shape of the value flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatShape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl FeatShape {
    pub fn numel(&self) -> usize {
        match *self {
            FeatShape::Map { c, h, w } => c * h * w,
            FeatShape::Flat(n) => n,
        }
    }
}

impl fmt::Display for FeatShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FeatShape::Map { c, h, w } => write!(f, "{c}x{h}x{w}"),
            FeatShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// A validated layer with its traced input/output shapes.
#[derive(Clone, Debug)]
pub struct PlanStep {
    pub layer: LayerSpec,
    pub input: FeatShape,
    pub output: FeatShape,
}

impl PlanStep {
    /// Weight and bias shapes for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match (self.layer, self.input) {
            (
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                },
                FeatShape::Map { c, .. },
            ) => Some((vec![out_channels, c, kernel, kernel], vec![out_channels])),
            (LayerSpec::Fc { units }, input) => Some((vec![input.numel(), units], vec![units])),
            _ => None,
        }
    }
}

/// Shape trace for a whole architecture.
#[derive(Clone, Debug)]
pub struct ModelPlan {
    pub steps: Vec<PlanStep>,
    pub logits: usize,
}

/// Complete description of a network: layer stack, input size, class count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    /// Input size as (channels, height, width).
    pub input: (usize, usize, usize),
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    pub fn new(
        input: (usize, usize, usize),
        num_classes: usize,
        layers: Vec<LayerSpec>,
    ) -> Self {
        ArchitectureSpec {
            input,
            num_classes,
            layers,
        }
    }

    /// Layer stack in compact notation, e.g. `C(16,5) - ReLU - MP(2,2)`.
    pub fn layers_string(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(" - ")
    }

    /// Full descriptor, parseable by [`ArchitectureSpec::parse`].
    pub fn render(&self) -> String {
        format!(
            "input={}x{}x{}; classes={}; layers={}",
            self.input.0,
            self.input.1,
            self.input.2,
            self.num_classes,
            self.layers_string()
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Parse {
            what: "architecture descriptor",
            detail,
        };
        let mut input = None;
        let mut classes = None;
        let mut layers = None;
        for part in text.split(';') {
            let part = part.trim();
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{part}`")))?;
            match key.trim() {
                "input" => {
                    let dims: Vec<usize> = value
                        .trim()
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| bad(format!("input dims: {e}")))?;
                    let [c, h, w] = dims[..] else {
                        return Err(bad(format!("input needs 3 dims, got {}", dims.len())));
                    };
                    input = Some((c, h, w));
                }
                "classes" => {
                    classes = Some(
                        value
                            .trim()
                            .parse::<usize>()
                            .map_err(|e| bad(format!("classes: {e}")))?,
                    );
                }
                "layers" => layers = Some(parse_layers(value)?),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(ArchitectureSpec {
            input: input.ok_or_else(|| bad("missing input=".into()))?,
            num_classes: classes.ok_or_else(|| bad("missing classes=".into()))?,
            layers: layers.ok_or_else(|| bad("missing layers=".into()))?,
        })
    }

    /// Traces feature-map shapes layer by layer.
    ///
    /// Errors name the offending layer when a kernel or pool window exceeds
    /// the running feature map, a zero-size map appears, or the final layer
    /// does not emit exactly `num_classes` logits.
    pub fn validate(&self) -> Result<ModelPlan> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArchitecture {
                layer: None,
                detail: format!("input size {c}x{h}x{w} has a zero dimension"),
            });
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArchitecture {
                layer: None,
                detail: format!("need at least 2 classes, got {}", self.num_classes),
            });
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArchitecture {
                layer: None,
                detail: "no layers".into(),
            });
        }
        let mut cur = FeatShape::Map { c, h, w };
        let mut steps = Vec::with_capacity(self.layers.len());
        for (i, &layer) in self.layers.iter().enumerate() {
            let fail = |detail: String| Error::InvalidArchitecture {
                layer: Some(i),
                detail: format!("{layer}: {detail}"),
            };
            let out = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                } => {
                    let FeatShape::Map { c: _, h, w } = cur else {
                        return Err(fail(format!("convolution over flat input {cur}")));
                    };
                    if out_channels == 0 || kernel == 0 {
                        return Err(fail("zero channels or kernel".into()));
                    }
                    if kernel > h || kernel > w {
                        return Err(fail(format!(
                            "{kernel}x{kernel} kernel exceeds {h}x{w} feature map"
                        )));
                    }
                    FeatShape::Map {
                        c: out_channels,
                        h: h - kernel + 1,
                        w: w - kernel + 1,
                    }
                }
                LayerSpec::Relu => cur,
                LayerSpec::MaxPool { window, stride } => {
                    let FeatShape::Map { c, h, w } = cur else {
                        return Err(fail(format!("max-pool over flat input {cur}")));
                    };
                    if window == 0 || stride == 0 {
                        return Err(fail("zero window or stride".into()));
                    }
                    if h < window || w < window {
                        return Err(fail(format!(
                            "{window}x{window} window exceeds {h}x{w} feature map \
                             (trailing rows/columns that do not fill a window are truncated)"
                        )));
                    }
                    FeatShape::Map {
                        c,
                        h: (h - window) / stride + 1,
                        w: (w - window) / stride + 1,
                    }
                }
                LayerSpec::Fc { units } => {
                    if units == 0 {
                        return Err(fail("zero units".into()));
                    }
                    FeatShape::Flat(units)
                }
            };
            if out.numel() == 0 {
                return Err(fail("produces a zero-size feature map".into()));
            }
            steps.push(PlanStep {
                layer,
                input: cur,
                output: out,
            });
            cur = out;
        }
        if cur.numel() != self.num_classes {
            return Err(Error::InvalidArchitecture {
                layer: Some(self.layers.len() - 1),
                detail: format!(
                    "final layer emits {} values, expected {} logits",
                    cur.numel(),
                    self.num_classes
                ),
            });
        }
        Ok(ModelPlan {
            steps,
            logits: self.num_classes,
        })
    }
}

fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    let bad = |detail: String| Error::Parse {
        what: "layer list",
        detail,
    };
    let mut layers = Vec::new();
    for token in text.split('-').map(str::trim) {
        if token.is_empty() {
            return Err(bad("empty layer token".into()));
        }
        if token == "ReLU" {
            layers.push(LayerSpec::Relu);
            continue;
        }
        let (head, rest) = token
            .split_once('(')
            .ok_or_else(|| bad(format!("unrecognized layer `{token}`")))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| bad(format!("missing `)` in `{token}`")))?;
        let nums: Vec<usize> = args
            .split(',')
            .map(|a| a.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("`{token}`: {e}")))?;
        let layer = match (head, nums.as_slice()) {
            ("C", &[out_channels, kernel]) => LayerSpec::Conv {
                out_channels,
                kernel,
            },
            ("MP", &[window, stride]) => LayerSpec::MaxPool { window, stride },
            ("FC", &[units]) => LayerSpec::Fc { units },
            _ => return Err(bad(format!("unrecognized layer `{token}`"))),
        };
        layers.push(layer);
    }
    Ok(layers)
}

// ---------------------------------------------------------------------------
// Named presets
// ---------------------------------------------------------------------------

/// The three published convolutional stacks supported out of the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    AConvNet,
    AlexNet,
    LConvNet,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::AConvNet, Preset::AlexNet, Preset::LConvNet];

    pub fn name(self) -> &'static str {
        match self {
            Preset::AConvNet => "aconvnet",
            Preset::AlexNet => "alexnet",
            Preset::LConvNet => "lconvnet",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        match name.to_ascii_lowercase().as_str() {
            "aconvnet" => Some(Preset::AConvNet),
            "alexnet" => Some(Preset::AlexNet),
            "lconvnet" => Some(Preset::LConvNet),
            _ => None,
        }
    }

    /// Reference layer stack in compact notation, as published for
    /// 88x88-pixel inputs and 10 classes.
    pub fn reference_layers(self) -> &'static str {
        match self {
            Preset::AConvNet => {
                "C(16,5) - ReLU - MP(2,2) - C(32,5) - ReLU - MP(2,2) - C(64,5) - ReLU - \
                 MP(2,2) - C(128,6) - ReLU - MP(2,2) - C(10,3)"
            }
            Preset::AlexNet => {
                "C(64,11) - ReLU - MP(2,2) - C(192,5) - ReLU - MP(2,2) - C(384,3) - ReLU - \
                 C(256,3) - ReLU - C(256,3) - ReLU - MP(2,2) - FC(10)"
            }
            Preset::LConvNet => {
                "C(32,5) - ReLU - MP(2,2) - C(64,5) - ReLU - MP(2,2) - C(128,5) - ReLU - \
                 MP(2,2) - C(256,6) - ReLU - MP(2,2) - C(256,5) - ReLU - FC(1024) - ReLU - \
                 FC(1024) - ReLU - FC(10)"
            }
        }
    }

    /// Reference extent the published kernel sizes assume.
    pub const REFERENCE_EXTENT: usize = 88;

    /// Instantiates the preset for a concrete input size and class count.
    ///
    /// Kernel sizes scale with the input extent relative to the 88-pixel
    /// reference and are clamped so every layer keeps a nonempty feature
    /// map; the final classifier layer is resized to `num_classes`. The
    /// result is validated before it is returned.
    pub fn for_input(
        self,
        input: (usize, usize, usize),
        num_classes: usize,
    ) -> Result<ArchitectureSpec> {
        let reference = parse_layers(self.reference_layers())?;
        let extent = input.1.min(input.2);
        let scale = (extent as f64 / Self::REFERENCE_EXTENT as f64).min(1.0);

        let mut layers = Vec::with_capacity(reference.len());
        let (c0, mut h, mut w) = input;
        let mut channels = c0;
        let last_param = reference
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Fc { .. }))
            .expect("reference stacks end in a classifier layer");
        for (i, layer) in reference.into_iter().enumerate() {
            let fitted = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                } => {
                    let scaled = ((kernel as f64 * scale).round() as usize).max(1);
                    let k = scaled.min(h).min(w);
                    let oc = if i == last_param {
                        num_classes
                    } else {
                        out_channels
                    };
                    h = h - k + 1;
                    w = w - k + 1;
                    channels = oc;
                    LayerSpec::Conv {
                        out_channels: oc,
                        kernel: k,
                    }
                }
                LayerSpec::MaxPool { window, stride } => {
                    if h < window || w < window {
                        return Err(Error::InvalidArchitecture {
                            layer: Some(i),
                            detail: format!(
                                "{layer}: input {}x{}x{} leaves a {h}x{w} map, too small to pool",
                                input.0, input.1, input.2
                            ),
                        });
                    }
                    h = (h - window) / stride + 1;
                    w = (w - window) / stride + 1;
                    LayerSpec::MaxPool { window, stride }
                }
                LayerSpec::Fc { units } => {
                    let u = if i == last_param { num_classes } else { units };
                    // Flattened from here on; spatial trace no longer applies.
                    h = 1;
                    w = 1;
                    channels = u;
                    LayerSpec::Fc { units: u }
                }
                LayerSpec::Relu => LayerSpec::Relu,
            };
            layers.push(fitted);
        }
        let _ = channels;
        let spec = ArchitectureSpec::new(input, num_classes, layers);
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let spec = Preset::AConvNet.for_input((1, 48, 48), 10).unwrap();
        let parsed = ArchitectureSpec::parse(&spec.render()).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn reference_strings_round_trip_via_notation() {
        for preset in Preset::ALL {
            let layers = parse_layers(preset.reference_layers()).unwrap();
            let rendered = layers
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(" - ");
            assert_eq!(rendered, preset.reference_layers());
        }
    }

    #[test]
    fn aconvnet_at_88_yields_10_logits_from_5_convs() {
        let spec = Preset::AConvNet.for_input((1, 88, 88), 10).unwrap();
        let convs = spec
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count();
        assert_eq!(convs, 5);
        let plan = spec.validate().unwrap();
        assert_eq!(plan.logits, 10);
        assert_eq!(plan.steps.last().unwrap().output.numel(), 10);
    }

    #[test]
    fn all_presets_validate_at_desk_and_reference_scale() {
        for preset in Preset::ALL {
            for extent in [48, 88] {
                let spec = preset.for_input((1, extent, extent), 10).unwrap();
                spec.validate().unwrap();
            }
        }
    }

    #[test]
    fn alexnet_at_88_keeps_published_kernels() {
        let spec = Preset::AlexNet.for_input((1, 88, 88), 10).unwrap();
        assert_eq!(spec.layers_string(), Preset::AlexNet.reference_layers());
    }

    #[test]
    fn validate_rejects_wrong_logit_count() {
        let spec = ArchitectureSpec::new(
            (1, 8, 8),
            10,
            vec![LayerSpec::Conv {
                out_channels: 4,
                kernel: 3,
            }],
        );
        let err = spec.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 0"), "{msg}");
    }

    #[test]
    fn validate_rejects_oversized_kernel() {
        let spec = ArchitectureSpec::new(
            (1, 4, 4),
            2,
            vec![LayerSpec::Conv {
                out_channels: 2,
                kernel: 5,
            }],
        );
        assert!(matches!(
            spec.validate().unwrap_err(),
            Error::InvalidArchitecture { layer: Some(0), .. }
        ));
    }

    #[test]
    fn fc_weight_shape_follows_flattened_input() {
        let spec = ArchitectureSpec::new((7, 1, 1), 10, vec![LayerSpec::Fc { units: 10 }]);
        let plan = spec.validate().unwrap();
        let (w, b) = plan.steps[0].param_shapes().unwrap();
        assert_eq!(w, vec![7, 10]);
        assert_eq!(b, vec![10]);
    }
}
