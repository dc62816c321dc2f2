//! Quantized training engine.
//!
//! The backward pass is the unrolled recursion the accelerator implements:
//! each weight-bearing layer receives `Wᵀ G` from the layer above, turns it
//! into its own signal `G_i = (Wᵀ G_{i+1}) (.) f'_i(Z_i)`, and forms its
//! weight update as `-alpha * G_i (x) X_i`. The same code runs bit-exact on
//! [`QValue`](crate::qnum::QValue) or in plain floating point.

mod layers;
mod record;
mod tensor;
mod train;

pub use record::{AccuracyPoint, LossPoint, RunRecord, RunSummary};
pub use tensor::TensorQ;
pub use train::{evaluate, loss_and_initial_gradient, train, TrainOptions, TrainOutcome};

use thiserror::Error;

use crate::data::DataError;
use crate::netgraph::{LayerSpec, NetError, NetworkConfig, ShapeReport};
use crate::qnum::{QError, QFormat};
use crate::scalar::Scalar;

use layers::ConvGeom;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer {0} has no forward cache; run forward first")]
    MissingCache(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error(transparent)]
    Numeric(#[from] QError),
    #[error(transparent)]
    Config(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Values cached by the forward pass for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCache<S> {
    /// Layer input `X_i`.
    pub x: TensorQ<S>,
    /// Pre-activation `Z_i = W_i X_i` (weight-bearing layers only).
    pub z: Option<TensorQ<S>>,
    /// Output `Y_i = f_i(Z_i)`.
    pub y: TensorQ<S>,
    pub argmax: Option<Vec<usize>>,
}

/// Per weight-bearing layer update, already scaled by `-alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightDelta<S> {
    pub weights: Vec<TensorQ<S>>,
    pub biases: Option<Vec<TensorQ<S>>>,
}

#[derive(Clone, Debug)]
pub struct TrainState<S> {
    config: NetworkConfig,
    report: ShapeReport,
    weights: Vec<TensorQ<S>>,
    biases: Option<Vec<TensorQ<S>>>,
    caches: Vec<Option<LayerCache<S>>>,
    signals: Vec<Option<TensorQ<S>>>,
}

impl<S: Scalar> TrainState<S> {
    /// Seeded initialization from the config.
    pub fn new(config: &NetworkConfig) -> Result<Self, EngineError> {
        Self::with_weights(config, &config.initial_weights())
    }

    /// Builds a state from explicit real-valued weights, each rounded into
    /// its layer format.
    pub fn with_weights(config: &NetworkConfig, weights: &[Vec<f64>]) -> Result<Self, EngineError> {
        let report = config.validate()?;
        let wl: Vec<&LayerSpec> = config.layers.iter().filter(|l| l.has_weights()).collect();
        if weights.len() != wl.len() {
            return Err(EngineError::Shape(format!(
                "{} weight tensors for {} weight-bearing layers",
                weights.len(),
                wl.len()
            )));
        }
        let mut tensors = Vec::with_capacity(wl.len());
        for ((layer, values), &fmt) in wl.iter().zip(weights).zip(&config.formats) {
            let dims = layer.weight_dims().expect("weight layer");
            tensors.push(TensorQ::from_reals(dims, values, fmt)?);
        }
        let biases = config.use_bias.then(|| {
            wl.iter()
                .zip(&config.formats)
                .map(|(l, &fmt)| TensorQ::zeros(vec![l.bias_len().expect("weight layer")], fmt))
                .collect()
        });
        Ok(Self {
            config: config.clone(),
            caches: vec![None; config.layers.len()],
            signals: vec![None; wl.len()],
            report,
            weights: tensors,
            biases,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn report(&self) -> &ShapeReport {
        &self.report
    }

    pub fn weights(&self) -> &[TensorQ<S>] {
        &self.weights
    }

    pub fn biases(&self) -> Option<&[TensorQ<S>]> {
        self.biases.as_deref()
    }

    pub fn cache(&self, layer: usize) -> Option<&LayerCache<S>> {
        self.caches.get(layer).and_then(|c| c.as_ref())
    }

    /// Backward signal `G_i` of weight-bearing layer `i` from the last backward pass.
    pub fn signal(&self, weight_layer: usize) -> Option<&TensorQ<S>> {
        self.signals.get(weight_layer).and_then(|g| g.as_ref())
    }

    /// Format the network input is stored in (the first layer's).
    pub fn input_fmt(&self) -> QFormat {
        self.report.input_fmt()
    }

    pub fn output_fmt(&self) -> QFormat {
        *self.config.formats.last().expect("validated config")
    }

    /// Rounds raw input values into the input format.
    pub fn input_tensor(&self, values: &[f64]) -> Result<TensorQ<S>, EngineError> {
        let s = self.report.input;
        TensorQ::from_reals(vec![s.d, s.h, s.w], values, self.input_fmt())
    }

    fn geom(&self, layer: usize) -> ConvGeom {
        let ls = &self.report.layers[layer];
        let k = match self.config.layers[layer] {
            LayerSpec::Conv { kernel_k, .. } => kernel_k,
            _ => 0,
        };
        ConvGeom {
            input: ls.input,
            output: ls.output,
            k,
        }
    }

    /// Runs every layer, caching `X_i`, `Z_i`, `Y_i`, and returns the logits.
    pub fn forward(&mut self, input: &TensorQ<S>) -> Result<TensorQ<S>, EngineError> {
        if input.len() != self.report.input.len() {
            return Err(EngineError::Shape(format!(
                "input has {} elements, network expects {}",
                input.len(),
                self.report.input.len()
            )));
        }
        let mut x = input.clone();
        for l in 0..self.config.layers.len() {
            let ls = self.report.layers[l].clone();
            let out_dims = vec![ls.output.d, ls.output.h, ls.output.w];
            let cache = match self.config.layers[l] {
                LayerSpec::Dense {
                    out_n, activation, ..
                } => {
                    let w = ls.weight_index.expect("dense has weights");
                    let fmt = self.config.formats[w];
                    let bias = self.biases.as_ref().map(|b| b[w].data());
                    let r = layers::dense_forward(
                        self.weights[w].data(),
                        bias,
                        x.data(),
                        fmt,
                        x.fmt(),
                        out_n,
                        activation,
                    )?;
                    LayerCache {
                        z: Some(TensorQ::from_parts(out_dims.clone(), r.z, fmt)),
                        y: TensorQ::from_parts(out_dims, r.y, fmt),
                        x,
                        argmax: None,
                    }
                }
                LayerSpec::Conv { activation, .. } => {
                    let w = ls.weight_index.expect("conv has weights");
                    let fmt = self.config.formats[w];
                    let bias = self.biases.as_ref().map(|b| b[w].data());
                    let r = layers::conv_forward(
                        &self.geom(l),
                        self.weights[w].data(),
                        bias,
                        x.data(),
                        fmt,
                        x.fmt(),
                        activation,
                    )?;
                    LayerCache {
                        z: Some(TensorQ::from_parts(out_dims.clone(), r.z, fmt)),
                        y: TensorQ::from_parts(out_dims, r.y, fmt),
                        x,
                        argmax: None,
                    }
                }
                LayerSpec::Pool {
                    window,
                    stride,
                    kind,
                } => {
                    let fmt = x.fmt();
                    let r = layers::pool_forward(
                        ls.input, ls.output, window, stride, kind, x.data(), fmt,
                    )?;
                    LayerCache {
                        z: None,
                        y: TensorQ::from_parts(out_dims, r.y, fmt),
                        x,
                        argmax: Some(r.argmax),
                    }
                }
            };
            x = cache.y.clone();
            self.caches[l] = Some(cache);
        }
        Ok(x)
    }

    /// Unrolled backward pass from `dE/dY_n`; returns `-alpha dE/dW_i` for
    /// every weight-bearing layer and records each `G_i`.
    pub fn backward_unrolled(&mut self, dy_out: &TensorQ<S>) -> Result<WeightDelta<S>, EngineError> {
        let n_layers = self.config.layers.len();
        let n_w = self.weights.len();
        let names = crate::netgraph::layer_names(&self.config.layers);
        if dy_out.len() != self.report.output().len() {
            return Err(EngineError::Shape(format!(
                "output gradient has {} elements, network produces {}",
                dy_out.len(),
                self.report.output().len()
            )));
        }
        let use_bias = self.biases.is_some();
        let mut dw: Vec<Option<TensorQ<S>>> = vec![None; n_w];
        let mut db: Vec<Option<TensorQ<S>>> = vec![None; n_w];
        let mut dy: Vec<S> = dy_out.data().to_vec();

        for l in (0..n_layers).rev() {
            let cache = self.caches[l]
                .as_ref()
                .ok_or_else(|| EngineError::MissingCache(names[l].clone()))?;
            let ls = &self.report.layers[l];
            let x_fmt = cache.x.fmt();
            let need_dx = l > 0;
            match self.config.layers[l] {
                LayerSpec::Dense {
                    in_n, activation, ..
                } => {
                    let w = ls.weight_index.expect("dense has weights");
                    let fmt = self.config.formats[w];
                    let z = cache.z.as_ref().expect("dense caches z");
                    let g = layers::output_signal(&dy, z.data(), activation, fmt);
                    let neg_alpha = S::from_real(-self.config.alpha, fmt);
                    let grads = layers::dense_weight_delta(&g, cache.x.data(), neg_alpha, fmt, use_bias);
                    dw[w] = Some(TensorQ::from_parts(self.weights[w].dims().to_vec(), grads.dw, fmt));
                    db[w] = grads.db.map(|d| TensorQ::from_parts(vec![d.len()], d, fmt));
                    if need_dx {
                        dy = layers::dense_input_grad(&g, self.weights[w].data(), in_n, fmt, fmt, x_fmt)?;
                    }
                    self.signals[w] = Some(TensorQ::from_parts(z.dims().to_vec(), g, fmt));
                }
                LayerSpec::Conv { activation, .. } => {
                    let w = ls.weight_index.expect("conv has weights");
                    let fmt = self.config.formats[w];
                    let z = cache.z.as_ref().expect("conv caches z");
                    let geo = self.geom(l);
                    let g = layers::output_signal(&dy, z.data(), activation, fmt);
                    let neg_alpha = S::from_real(-self.config.alpha, fmt);
                    let grads = layers::conv_weight_delta(
                        &geo,
                        &g,
                        cache.x.data(),
                        x_fmt,
                        neg_alpha,
                        fmt,
                        use_bias,
                    )?;
                    dw[w] = Some(TensorQ::from_parts(self.weights[w].dims().to_vec(), grads.dw, fmt));
                    db[w] = grads.db.map(|d| TensorQ::from_parts(vec![d.len()], d, fmt));
                    if need_dx {
                        dy = layers::conv_input_grad(&geo, &g, self.weights[w].data(), fmt, fmt, x_fmt)?;
                    }
                    self.signals[w] = Some(TensorQ::from_parts(z.dims().to_vec(), g, fmt));
                }
                LayerSpec::Pool {
                    window,
                    stride,
                    kind,
                } => {
                    if need_dx {
                        let argmax = cache.argmax.as_deref().unwrap_or(&[]);
                        dy = layers::pool_backward(
                            ls.input, ls.output, window, stride, kind, argmax, &dy, x_fmt,
                        )?;
                    }
                }
            }
        }
        Ok(WeightDelta {
            weights: dw.into_iter().map(|t| t.expect("every weight layer visited")).collect(),
            biases: use_bias.then(|| db.into_iter().map(|t| t.expect("bias delta")).collect()),
        })
    }

    /// `W_i <- W_i + dW_i` with saturation.
    pub fn apply_update(&mut self, delta: &WeightDelta<S>) -> Result<(), EngineError> {
        if delta.weights.len() != self.weights.len() {
            return Err(EngineError::Shape("update has the wrong layer count".into()));
        }
        for (w, d) in self.weights.iter_mut().zip(&delta.weights) {
            add_into(w, d)?;
        }
        if let (Some(b), Some(db)) = (self.biases.as_mut(), delta.biases.as_ref()) {
            for (b, d) in b.iter_mut().zip(db) {
                add_into(b, d)?;
            }
        }
        Ok(())
    }
}

fn add_into<S: Scalar>(w: &mut TensorQ<S>, d: &TensorQ<S>) -> Result<(), EngineError> {
    if w.dims() != d.dims() {
        return Err(EngineError::Shape(format!(
            "update dims {:?} vs weight dims {:?}",
            d.dims(),
            w.dims()
        )));
    }
    if S::QUANTIZED && w.fmt() != d.fmt() {
        return Err(QError::FormatMismatch(w.fmt(), d.fmt()).into());
    }
    for (wv, &dv) in w.data_mut().iter_mut().zip(d.data()) {
        *wv = wv.add(dv);
    }
    Ok(())
}
