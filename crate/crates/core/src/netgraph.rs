//! Network topology: layer specs, activation functions and their
//! derivatives, shape validation and the LeNet presets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qnum::QFormat;
use crate::rng::{SeededRng, STREAM_INIT};
use crate::scalar::Scalar;

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("network has no layers")]
    Empty,
    #[error("first layer {0} must be conv or dense so the input shape is known")]
    NoInputShape(String),
    #[error("layer {layer} expects input {expected} but {prev} produces {found}")]
    ShapeMismatch {
        layer: String,
        prev: String,
        expected: String,
        found: String,
    },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: String, reason: String },
    #[error("{expected} weight-bearing layers but {found} formats")]
    FormatCount { expected: usize, found: usize },
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("unknown dataset {0:?}; expected mnist, cifar10 or svhn_idx")]
    UnknownDataset(String),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[serde(alias = "ReLU")]
    Relu,
    Sigmoid,
    Tanh,
    /// No nonlinearity; used for logits feeding the loss.
    Identity,
}

/// Logistic function evaluated in double precision.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `f(x)` rounded into `out`.
///
/// Sigmoid comes from a double-precision evaluation rounded once, the way a
/// lookup-table activation unit behaves. Tanh is assembled from that same
/// primitive as `2 sigma(2x) - 1`.
pub fn activate<S: Scalar>(kind: ActivationKind, x: S, out: QFormat) -> S {
    match kind {
        ActivationKind::Identity => x,
        ActivationKind::Relu => {
            if x.to_real() > 0.0 {
                x
            } else {
                S::zero(out)
            }
        }
        ActivationKind::Sigmoid => S::from_real(sigmoid(x.to_real()), out),
        ActivationKind::Tanh => {
            let s = S::from_real(sigmoid(2.0 * x.to_real()), out);
            s.add(s).add(S::from_real(-1.0, out))
        }
    }
}

/// `f'(x)` rounded into `out`, built from the sigmoid primitive:
/// `sigma' = sigma (1 - sigma)` and `tanh'(x) = 4 sigma'(2x)`.
/// ReLU' is 1 for positive inputs and 0 otherwise (including 0).
pub fn activate_deriv<S: Scalar>(kind: ActivationKind, x: S, out: QFormat) -> S {
    let one = S::from_real(1.0, out);
    match kind {
        ActivationKind::Identity => one,
        ActivationKind::Relu => {
            if x.to_real() > 0.0 {
                one
            } else {
                S::zero(out)
            }
        }
        ActivationKind::Sigmoid => {
            let s = S::from_real(sigmoid(x.to_real()), out);
            s.mul(one.add(s.neg()), out)
        }
        ActivationKind::Tanh => {
            let s = S::from_real(sigmoid(2.0 * x.to_real()), out);
            let d = s.mul(one.add(s.neg()), out);
            let d2 = d.add(d);
            d2.add(d2)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        in_h: usize,
        in_w: usize,
        in_d: usize,
        kernel_k: usize,
        num_filters: usize,
        activation: ActivationKind,
    },
    Pool {
        window: usize,
        stride: usize,
        kind: PoolKind,
    },
    Dense {
        in_n: usize,
        out_n: usize,
        activation: ActivationKind,
    },
}

impl LayerSpec {
    pub fn has_weights(&self) -> bool {
        !matches!(self, LayerSpec::Pool { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Pool { .. } => "pool",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn activation(&self) -> Option<ActivationKind> {
        match self {
            LayerSpec::Conv { activation, .. } | LayerSpec::Dense { activation, .. } => {
                Some(*activation)
            }
            LayerSpec::Pool { .. } => None,
        }
    }

    /// Weight tensor dimensions: `[filters, in_d, k, k]` or `[out_n, in_n]`.
    pub fn weight_dims(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_d,
                kernel_k,
                num_filters,
                ..
            } => Some(vec![num_filters, in_d, kernel_k, kernel_k]),
            LayerSpec::Dense { in_n, out_n, .. } => Some(vec![out_n, in_n]),
            LayerSpec::Pool { .. } => None,
        }
    }

    pub fn fan_in_out(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv {
                in_d,
                kernel_k,
                num_filters,
                ..
            } => Some((in_d * kernel_k * kernel_k, num_filters * kernel_k * kernel_k)),
            LayerSpec::Dense { in_n, out_n, .. } => Some((in_n, out_n)),
            LayerSpec::Pool { .. } => None,
        }
    }

    /// Number of output channels / units that carry a bias.
    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv { num_filters, .. } => Some(num_filters),
            LayerSpec::Dense { out_n, .. } => Some(out_n),
            LayerSpec::Pool { .. } => None,
        }
    }
}

/// Activation volume, channel-planar: `d` planes of `h x w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Self { d, h, w }
    }

    pub fn flat(n: usize) -> Self {
        Self { d: n, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.h == 1 && self.w == 1 {
            write!(f, "{}", self.d)
        } else {
            write!(f, "{}x{}x{}", self.h, self.w, self.d)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SoftmaxCrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
    /// One format per weight-bearing layer, in order.
    pub formats: Vec<QFormat>,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub use_bias: bool,
    #[serde(default)]
    pub loss: LossKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    SvhnIdx,
}

impl DatasetKind {
    pub fn input_shape(self) -> Shape {
        match self {
            DatasetKind::Mnist => Shape::new(1, 28, 28),
            DatasetKind::Cifar10 | DatasetKind::SvhnIdx => Shape::new(3, 32, 32),
        }
    }

    /// Per-layer `(I,F)` formats found best for each dataset.
    pub fn table_formats(self) -> [QFormat; 5] {
        let f = |i, fr| QFormat::new(i, fr).expect("preset format");
        match self {
            DatasetKind::Mnist => [f(2, 12), f(2, 12), f(2, 12), f(1, 12), f(3, 10)],
            DatasetKind::Cifar10 => [f(2, 10), f(2, 11), f(1, 10), f(1, 13), f(2, 13)],
            DatasetKind::SvhnIdx => [f(1, 12), f(2, 12), f(2, 12), f(2, 11), f(4, 12)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::SvhnIdx => "svhn_idx",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "svhn_idx" | "svhn" => Ok(DatasetKind::SvhnIdx),
            _ => Err(NetError::UnknownDataset(s.to_string())),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// LeNet-5 for `dataset`: conv 6@5x5, maxpool 2, conv 16@5x5, maxpool 2,
/// dense 120, dense 84, dense 10. ReLU on conv layers, sigmoid on the hidden
/// dense layers, raw logits out.
pub fn lenet_preset(dataset: DatasetKind) -> NetworkConfig {
    let input = dataset.input_shape();
    let k = 5;
    let c1 = Shape::new(6, input.h - k + 1, input.w - k + 1);
    let p1 = Shape::new(6, c1.h / 2, c1.w / 2);
    let c2 = Shape::new(16, p1.h - k + 1, p1.w - k + 1);
    let p2 = Shape::new(16, c2.h / 2, c2.w / 2);
    let pool = LayerSpec::Pool {
        window: 2,
        stride: 2,
        kind: PoolKind::Max,
    };
    NetworkConfig {
        layers: vec![
            LayerSpec::Conv {
                in_h: input.h,
                in_w: input.w,
                in_d: input.d,
                kernel_k: k,
                num_filters: 6,
                activation: ActivationKind::Relu,
            },
            pool.clone(),
            LayerSpec::Conv {
                in_h: p1.h,
                in_w: p1.w,
                in_d: p1.d,
                kernel_k: k,
                num_filters: 16,
                activation: ActivationKind::Relu,
            },
            pool,
            LayerSpec::Dense {
                in_n: p2.len(),
                out_n: 120,
                activation: ActivationKind::Sigmoid,
            },
            LayerSpec::Dense {
                in_n: 120,
                out_n: 84,
                activation: ActivationKind::Sigmoid,
            },
            LayerSpec::Dense {
                in_n: 84,
                out_n: 10,
                activation: ActivationKind::Identity,
            },
        ],
        formats: dataset.table_formats().to_vec(),
        alpha: DEFAULT_ALPHA,
        seed: DEFAULT_SEED,
        use_bias: false,
        loss: LossKind::SoftmaxCrossEntropy,
    }
}

/// Preset lookup by name.
pub fn lenet_preset_named(name: &str) -> Result<NetworkConfig, NetError> {
    Ok(lenet_preset(name.parse()?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerShape {
    pub index: usize,
    pub name: String,
    pub kind: &'static str,
    pub input: Shape,
    pub output: Shape,
    /// Storage format of the layer's outputs (pools inherit their input's).
    pub fmt: QFormat,
    /// Position among weight-bearing layers.
    pub weight_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeReport {
    pub input: Shape,
    pub layers: Vec<LayerShape>,
}

impl ShapeReport {
    pub fn output(&self) -> Shape {
        self.layers.last().map(|l| l.output).unwrap_or(self.input)
    }

    pub fn input_fmt(&self) -> QFormat {
        self.layers[0].fmt
    }
}

/// Human-readable layer names: conv1, pool1, conv2, ..., dense3.
pub fn layer_names(layers: &[LayerSpec]) -> Vec<String> {
    let mut counts = [0usize; 3];
    layers
        .iter()
        .map(|l| {
            let slot = match l {
                LayerSpec::Conv { .. } => 0,
                LayerSpec::Pool { .. } => 1,
                LayerSpec::Dense { .. } => 2,
            };
            counts[slot] += 1;
            format!("{}{}", l.kind_name(), counts[slot])
        })
        .collect()
}

impl NetworkConfig {
    pub fn weight_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.has_weights()).count()
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let cfg: NetworkConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path).map_err(|source| NetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Walks the layer list and reports every layer's input and output shape,
    /// or the first incompatibility.
    pub fn validate(&self) -> Result<ShapeReport, NetError> {
        if self.layers.is_empty() {
            return Err(NetError::Empty);
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(NetError::InvalidAlpha(self.alpha));
        }
        let expected = self.weight_layer_count();
        if expected != self.formats.len() {
            return Err(NetError::FormatCount {
                expected,
                found: self.formats.len(),
            });
        }
        let names = layer_names(&self.layers);
        let input = match self.layers[0] {
            LayerSpec::Conv {
                in_h, in_w, in_d, ..
            } => Shape::new(in_d, in_h, in_w),
            LayerSpec::Dense { in_n, .. } => Shape::flat(in_n),
            LayerSpec::Pool { .. } => return Err(NetError::NoInputShape(names[0].clone())),
        };

        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        let mut cur_fmt = self.formats[0];
        let mut widx = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let name = &names[i];
            let prev = if i == 0 {
                "the input".to_string()
            } else {
                names[i - 1].clone()
            };
            let invalid = |reason: String| NetError::InvalidLayer {
                layer: name.clone(),
                reason,
            };
            let (next, weight_index) = match *layer {
                LayerSpec::Conv {
                    in_h,
                    in_w,
                    in_d,
                    kernel_k,
                    num_filters,
                    ..
                } => {
                    let want = Shape::new(in_d, in_h, in_w);
                    if want != cur {
                        return Err(NetError::ShapeMismatch {
                            layer: name.clone(),
                            prev,
                            expected: want.to_string(),
                            found: cur.to_string(),
                        });
                    }
                    if kernel_k == 0 || kernel_k > in_h.min(in_w) {
                        return Err(invalid(format!(
                            "kernel {kernel_k} does not fit a {in_h}x{in_w} input"
                        )));
                    }
                    if num_filters == 0 || in_d == 0 {
                        return Err(invalid("zero filters or channels".into()));
                    }
                    (
                        Shape::new(num_filters, in_h - kernel_k + 1, in_w - kernel_k + 1),
                        Some(widx),
                    )
                }
                LayerSpec::Pool { window, stride, .. } => {
                    if window == 0 || stride == 0 || window > cur.h || window > cur.w {
                        return Err(invalid(format!(
                            "window {window} stride {stride} does not fit {cur}"
                        )));
                    }
                    (
                        Shape::new(
                            cur.d,
                            (cur.h - window) / stride + 1,
                            (cur.w - window) / stride + 1,
                        ),
                        None,
                    )
                }
                LayerSpec::Dense { in_n, out_n, .. } => {
                    if in_n == 0 || out_n == 0 {
                        return Err(invalid("dense layers need in_n, out_n >= 1".into()));
                    }
                    if in_n != cur.len() {
                        return Err(NetError::ShapeMismatch {
                            layer: name.clone(),
                            prev,
                            expected: in_n.to_string(),
                            found: cur.len().to_string(),
                        });
                    }
                    (Shape::flat(out_n), Some(widx))
                }
            };
            if let Some(w) = weight_index {
                cur_fmt = self.formats[w];
                widx += 1;
            }
            out.push(LayerShape {
                index: i,
                name: name.clone(),
                kind: layer.kind_name(),
                input: cur,
                output: next,
                fmt: cur_fmt,
                weight_index,
            });
            cur = next;
        }
        Ok(ShapeReport { input, layers: out })
    }

    /// Seeded Glorot-uniform initial weights, one flat vector per
    /// weight-bearing layer, in double precision.
    pub fn initial_weights(&self) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(self.seed, STREAM_INIT);
        self.layers
            .iter()
            .filter_map(|l| {
                let (fan_in, fan_out) = l.fan_in_out()?;
                let n: usize = l.weight_dims()?.iter().product();
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Some((0..n).map(|_| rng.symmetric(limit)).collect())
            })
            .collect()
    }
}
