//! Double-precision reference network.
//!
//! Written independently of the engine: the backward pass carries `dE/dY`
//! through the plain chain rule, convolution input gradients are scattered
//! rather than gathered, and nothing is quantized. Used to check the engine's
//! unrolled recursion and to produce full-precision baseline curves.

use crate::data::{sample_batch, Dataset};
use crate::engine::{EngineError, RunRecord, TrainOptions};
use crate::netgraph::{ActivationKind, LayerSpec, NetError, NetworkConfig, PoolKind, ShapeReport};
use crate::rng::{SeededRng, STREAM_SAMPLE};

#[derive(Clone, Debug, PartialEq)]
pub struct FloatNet {
    config: NetworkConfig,
    report: ShapeReport,
    /// One flat tensor per weight-bearing layer, same layout as the engine.
    pub weights: Vec<Vec<f64>>,
    pub biases: Option<Vec<Vec<f64>>>,
}

/// Forward activations of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatTrace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl FloatTrace {
    pub fn logits(&self) -> &[f64] {
        self.outputs.last().expect("non-empty network")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// `dE/dW` per weight-bearing layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Option<Vec<Vec<f64>>>,
}

fn act(kind: ActivationKind, z: f64) -> f64 {
    match kind {
        ActivationKind::Relu => z.max(0.0),
        ActivationKind::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        ActivationKind::Tanh => z.tanh(),
        ActivationKind::Identity => z,
    }
}

fn act_deriv(kind: ActivationKind, z: f64) -> f64 {
    match kind {
        ActivationKind::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::Sigmoid => {
            let s = act(kind, z);
            s * (1.0 - s)
        }
        ActivationKind::Tanh => 1.0 - z.tanh().powi(2),
        ActivationKind::Identity => 1.0,
    }
}

fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let p: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    (lse - logits[label], p)
}

impl FloatNet {
    pub fn new(config: &NetworkConfig, weights: Vec<Vec<f64>>) -> Result<Self, NetError> {
        let report = config.validate()?;
        let wl: Vec<&LayerSpec> = config.layers.iter().filter(|l| l.has_weights()).collect();
        let sizes_ok = weights.len() == wl.len()
            && wl.iter().zip(&weights).all(|(l, w)| {
                l.weight_dims().map(|d| d.iter().product::<usize>()) == Some(w.len())
            });
        if !sizes_ok {
            return Err(NetError::InvalidLayer {
                layer: "weights".into(),
                reason: "weight tensors do not match the topology".into(),
            });
        }
        let biases = config
            .use_bias
            .then(|| wl.iter().map(|l| vec![0.0; l.bias_len().unwrap_or(0)]).collect());
        Ok(Self {
            config: config.clone(),
            report,
            weights,
            biases,
        })
    }

    /// Same seeded initial weights as the engine, unrounded.
    pub fn from_config(config: &NetworkConfig) -> Result<Self, NetError> {
        Self::new(config, config.initial_weights())
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn forward(&self, input: &[f64]) -> FloatTrace {
        let mut trace = FloatTrace {
            inputs: Vec::new(),
            pre: Vec::new(),
            outputs: Vec::new(),
        };
        let mut x = input.to_vec();
        for (l, layer) in self.config.layers.iter().enumerate() {
            let ls = &self.report.layers[l];
            let (z, y) = match *layer {
                LayerSpec::Dense {
                    in_n,
                    out_n,
                    activation,
                } => {
                    let wi = ls.weight_index.expect("weights");
                    let w = &self.weights[wi];
                    let mut z = vec![0.0; out_n];
                    for (j, zj) in z.iter_mut().enumerate() {
                        let row = &w[j * in_n..(j + 1) * in_n];
                        *zj = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                            + self.biases.as_ref().map_or(0.0, |b| b[wi][j]);
                    }
                    let y = z.iter().map(|&v| act(activation, v)).collect();
                    (z, y)
                }
                LayerSpec::Conv {
                    in_d,
                    kernel_k: k,
                    num_filters,
                    activation,
                    ..
                } => {
                    let wi = ls.weight_index.expect("weights");
                    let w = &self.weights[wi];
                    let (ih, iw) = (ls.input.h, ls.input.w);
                    let (oh, ow) = (ls.output.h, ls.output.w);
                    let mut z = vec![0.0; num_filters * oh * ow];
                    for f in 0..num_filters {
                        let b = self.biases.as_ref().map_or(0.0, |b| b[wi][f]);
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut s = b;
                                for c in 0..in_d {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            s += w[((f * in_d + c) * k + ky) * k + kx]
                                                * x[(c * ih + oy + ky) * iw + ox + kx];
                                        }
                                    }
                                }
                                z[(f * oh + oy) * ow + ox] = s;
                            }
                        }
                    }
                    let y = z.iter().map(|&v| act(activation, v)).collect();
                    (z, y)
                }
                LayerSpec::Pool {
                    window,
                    stride,
                    kind,
                } => {
                    let (ih, iw) = (ls.input.h, ls.input.w);
                    let (oh, ow) = (ls.output.h, ls.output.w);
                    let mut y = vec![0.0; ls.output.len()];
                    for c in 0..ls.output.d {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let vals = (0..window).flat_map(|dy| {
                                    let x = &x;
                                    (0..window).map(move |dx| {
                                        x[(c * ih + oy * stride + dy) * iw + ox * stride + dx]
                                    })
                                });
                                y[(c * oh + oy) * ow + ox] = match kind {
                                    PoolKind::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                                    PoolKind::Avg => vals.sum::<f64>() / (window * window) as f64,
                                };
                            }
                        }
                    }
                    (Vec::new(), y)
                }
            };
            trace.inputs.push(std::mem::replace(&mut x, y.clone()));
            trace.pre.push(z);
            trace.outputs.push(y);
        }
        trace
    }

    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).logits().to_vec()
    }

    pub fn loss(&self, input: &[f64], label: usize) -> f64 {
        cross_entropy(&self.logits(input), label).0
    }

    /// Textbook backprop: `dE/dY` is pushed down through each layer and
    /// `dE/dW = (dE/dY (.) f'(Z)) (x) X` is formed from it directly.
    pub fn oracle_backprop(&self, input: &[f64], label: usize) -> Gradients {
        let trace = self.forward(input);
        let (loss, p) = cross_entropy(trace.logits(), label);
        let mut de_dy: Vec<f64> = p;
        de_dy[label] -= 1.0;

        let mut dw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut db: Option<Vec<Vec<f64>>> = self
            .biases
            .as_ref()
            .map(|b| b.iter().map(|v| vec![0.0; v.len()]).collect());

        for (l, layer) in self.config.layers.iter().enumerate().rev() {
            let ls = &self.report.layers[l];
            let x = &trace.inputs[l];
            let z = &trace.pre[l];
            let mut de_dx = vec![0.0; x.len()];
            match *layer {
                LayerSpec::Dense {
                    in_n, activation, ..
                } => {
                    let wi = ls.weight_index.expect("weights");
                    let w = &self.weights[wi];
                    for (j, (&e, &zj)) in de_dy.iter().zip(z).enumerate() {
                        let de_dz = e * act_deriv(activation, zj);
                        for m in 0..in_n {
                            dw[wi][j * in_n + m] += de_dz * x[m];
                            de_dx[m] += de_dz * w[j * in_n + m];
                        }
                        if let Some(db) = db.as_mut() {
                            db[wi][j] += de_dz;
                        }
                    }
                }
                LayerSpec::Conv {
                    in_d,
                    kernel_k: k,
                    num_filters,
                    activation,
                    ..
                } => {
                    let wi = ls.weight_index.expect("weights");
                    let w = &self.weights[wi];
                    let (ih, iw) = (ls.input.h, ls.input.w);
                    let (oh, ow) = (ls.output.h, ls.output.w);
                    for f in 0..num_filters {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let o = (f * oh + oy) * ow + ox;
                                let de_dz = de_dy[o] * act_deriv(activation, z[o]);
                                if let Some(db) = db.as_mut() {
                                    db[wi][f] += de_dz;
                                }
                                for c in 0..in_d {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let wk = ((f * in_d + c) * k + ky) * k + kx;
                                            let xi = (c * ih + oy + ky) * iw + ox + kx;
                                            dw[wi][wk] += de_dz * x[xi];
                                            de_dx[xi] += de_dz * w[wk];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                LayerSpec::Pool {
                    window,
                    stride,
                    kind,
                } => {
                    let (ih, iw) = (ls.input.h, ls.input.w);
                    let (oh, ow) = (ls.output.h, ls.output.w);
                    for c in 0..ls.output.d {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let e = de_dy[(c * oh + oy) * ow + ox];
                                let cells: Vec<usize> = (0..window)
                                    .flat_map(|dy| {
                                        (0..window).map(move |dx| {
                                            (c * ih + oy * stride + dy) * iw + ox * stride + dx
                                        })
                                    })
                                    .collect();
                                match kind {
                                    PoolKind::Max => {
                                        let mut best = cells[0];
                                        for &i in &cells[1..] {
                                            if x[i] > x[best] {
                                                best = i;
                                            }
                                        }
                                        de_dx[best] += e;
                                    }
                                    PoolKind::Avg => {
                                        for &i in &cells {
                                            de_dx[i] += e / cells.len() as f64;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            de_dy = de_dx;
        }
        Gradients {
            loss,
            weights: dw,
            biases: db,
        }
    }

    /// ReLU on/off pattern of every ReLU pre-activation.
    fn relu_pattern(&self, input: &[f64]) -> Vec<bool> {
        let trace = self.forward(input);
        self.config
            .layers
            .iter()
            .zip(&trace.pre)
            .filter(|(l, _)| l.activation() == Some(ActivationKind::Relu))
            .flat_map(|(_, z)| z.iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Central difference of the loss with respect to one weight.
    pub fn finite_diff(&self, input: &[f64], label: usize, layer: usize, index: usize, eps: f64) -> FiniteDiff {
        assert!(eps > 0.0, "eps must be positive");
        let mut net = self.clone();
        let base = net.weights[layer][index];
        net.weights[layer][index] = base + eps;
        let plus = net.loss(input, label);
        let plus_pattern = net.relu_pattern(input);
        net.weights[layer][index] = base - eps;
        let minus = net.loss(input, label);
        let minus_pattern = net.relu_pattern(input);
        FiniteDiff {
            value: (plus - minus) / (2.0 * eps),
            kink: plus_pattern != minus_pattern,
        }
    }

    /// Central differences for every weight.
    pub fn finite_diff_all(&self, input: &[f64], label: usize, eps: f64) -> Vec<Vec<FiniteDiff>> {
        (0..self.weights.len())
            .map(|l| {
                (0..self.weights[l].len())
                    .map(|i| self.finite_diff(input, label, l, i, eps))
                    .collect()
            })
            .collect()
    }

    pub fn accuracy(&self, test: &Dataset) -> f64 {
        let correct = (0..test.len())
            .filter(|&i| {
                let z = self.logits(&test.image(i));
                let mut best = 0;
                for (j, &v) in z.iter().enumerate() {
                    if v > z[best] {
                        best = j;
                    }
                }
                best == test.label(i)
            })
            .count();
        100.0 * correct as f64 / test.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDiff {
    pub value: f64,
    /// Perturbation moved some ReLU across its kink; the difference is not a derivative.
    pub kink: bool,
}

/// Full-precision training with the same sampler, seed use, and loop as the
/// quantized engine: `W <- W - alpha * mean_batch(dE/dW)`.
pub fn float_train(
    config: &NetworkConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    opts: &TrainOptions,
) -> Result<(FloatNet, RunRecord), EngineError> {
    if train_set.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    if opts.batch_size == 0 {
        return Err(EngineError::ZeroBatch);
    }
    let mut net = FloatNet::from_config(config)?;
    if train_set.shape().len() != net.report.input.len() {
        return Err(EngineError::Shape(format!(
            "dataset images have {} values, network input needs {}",
            train_set.shape().len(),
            net.report.input.len()
        )));
    }
    let mut rng = SeededRng::new(config.seed, STREAM_SAMPLE);
    let mut record = RunRecord::default();
    for it in 1..=opts.iterations {
        let (batch, next) = sample_batch(train_set, opts.batch_size, &rng)?;
        rng = next;
        let mut sum_w: Vec<Vec<f64>> = net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut sum_b: Option<Vec<Vec<f64>>> = net
            .biases
            .as_ref()
            .map(|b| b.iter().map(|v| vec![0.0; v.len()]).collect());
        let mut loss = 0.0;
        for &idx in &batch {
            let g = net.oracle_backprop(&train_set.image(idx), train_set.label(idx));
            loss += g.loss;
            for (s, d) in sum_w.iter_mut().zip(&g.weights) {
                s.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
            if let (Some(s), Some(d)) = (sum_b.as_mut(), g.biases.as_ref()) {
                for (s, d) in s.iter_mut().zip(d) {
                    s.iter_mut().zip(d).for_each(|(a, b)| *a += b);
                }
            }
        }
        let scale = config.alpha / batch.len() as f64;
        for (w, s) in net.weights.iter_mut().zip(&sum_w) {
            w.iter_mut().zip(s).for_each(|(w, g)| *w -= scale * g);
        }
        if let (Some(b), Some(s)) = (net.biases.as_mut(), sum_b.as_ref()) {
            for (b, s) in b.iter_mut().zip(s) {
                b.iter_mut().zip(s).for_each(|(b, g)| *b -= scale * g);
            }
        }
        record.push_loss(it, loss / batch.len() as f64);
        if let (Some(test), Some(every)) = (test_set, opts.eval_every) {
            if every > 0 && it % every == 0 && it != opts.iterations {
                record.push_accuracy(it, net.accuracy(test));
            }
        }
    }
    if let Some(test) = test_set {
        if test.is_empty() {
            return Err(EngineError::EmptyDataset);
        }
        record.push_accuracy(opts.iterations, net.accuracy(test));
    }
    Ok((net, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::netgraph::Shape;
    use crate::qnum::QFormat;

    fn dense_config(sizes: &[usize], acts: &[ActivationKind]) -> NetworkConfig {
        let layers = sizes
            .windows(2)
            .zip(acts)
            .map(|(w, &activation)| LayerSpec::Dense {
                in_n: w[0],
                out_n: w[1],
                activation,
            })
            .collect::<Vec<_>>();
        NetworkConfig {
            formats: vec![QFormat::new(4, 12).unwrap(); layers.len()],
            layers,
            alpha: 0.1,
            seed: 7,
            use_bias: false,
            loss: Default::default(),
        }
    }

    #[test]
    fn single_class_has_zero_gradient() {
        let cfg = dense_config(&[1, 1], &[ActivationKind::Identity]);
        let net = FloatNet::new(&cfg, vec![vec![0.5]]).unwrap();
        let g = net.oracle_backprop(&[2.0], 0);
        assert_eq!(g.loss, 0.0);
        assert_eq!(g.weights[0][0], 0.0);
    }

    #[test]
    fn two_class_analytic() {
        // z = [w0 x, w1 x]; dE/dw_j = (p_j - y_j) x
        let cfg = dense_config(&[1, 2], &[ActivationKind::Identity]);
        let net = FloatNet::new(&cfg, vec![vec![0.5, -0.25]]).unwrap();
        let x = 2.0;
        let g = net.oracle_backprop(&[x], 1);
        let (z0, z1) = (1.0f64, -0.5f64);
        let p0 = z0.exp() / (z0.exp() + z1.exp());
        assert!((g.weights[0][0] - p0 * x).abs() < 1e-15);
        assert!((g.weights[0][1] - (1.0 - p0 - 1.0) * x).abs() < 1e-15);
    }

    #[test]
    fn zero_input_gives_zero_first_layer_gradient() {
        let cfg = dense_config(&[4, 3, 2], &[ActivationKind::Sigmoid, ActivationKind::Identity]);
        let net = FloatNet::from_config(&cfg).unwrap();
        let g = net.oracle_backprop(&[0.0; 4], 1);
        assert!(g.weights[0].iter().all(|&v| v == 0.0));
        assert!(g.weights[1].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn quadratic_like_fd_accuracy() {
        let cfg = dense_config(&[3, 4, 3], &[ActivationKind::Tanh, ActivationKind::Identity]);
        let net = FloatNet::from_config(&cfg).unwrap();
        let x = [0.3, -0.7, 0.2];
        let g = net.oracle_backprop(&x, 2);
        for (l, layer) in net.finite_diff_all(&x, 2, 1e-5).iter().enumerate() {
            for (i, fd) in layer.iter().enumerate() {
                assert!(!fd.kink);
                assert!((fd.value - g.weights[l][i]).abs() < 1e-8, "{l}/{i}");
            }
        }
    }

    #[test]
    fn kink_is_flagged() {
        // z = w x with w x exactly zero at the base point.
        let cfg = dense_config(&[1, 1, 2], &[ActivationKind::Relu, ActivationKind::Identity]);
        let net = FloatNet::new(&cfg, vec![vec![0.0], vec![1.0, -1.0]]).unwrap();
        let fd = net.finite_diff(&[1.0], 0, 0, 0, 1e-4);
        assert!(fd.kink);
        let away = FloatNet::new(&cfg, vec![vec![0.5], vec![1.0, -1.0]]).unwrap();
        assert!(!away.finite_diff(&[1.0], 0, 0, 0, 1e-4).kink);
    }

    #[test]
    fn conv_net_matches_finite_differences() {
        let cfg = NetworkConfig {
            layers: vec![
                LayerSpec::Conv {
                    in_h: 6,
                    in_w: 6,
                    in_d: 2,
                    kernel_k: 3,
                    num_filters: 2,
                    activation: ActivationKind::Tanh,
                },
                LayerSpec::Pool {
                    window: 2,
                    stride: 2,
                    kind: PoolKind::Avg,
                },
                LayerSpec::Dense {
                    in_n: 8,
                    out_n: 3,
                    activation: ActivationKind::Identity,
                },
            ],
            formats: vec![QFormat::new(4, 12).unwrap(); 2],
            alpha: 0.1,
            seed: 3,
            use_bias: true,
            loss: Default::default(),
        };
        let net = FloatNet::from_config(&cfg).unwrap();
        let mut rng = SeededRng::new(9, 5);
        let x: Vec<f64> = (0..72).map(|_| rng.unit()).collect();
        let g = net.oracle_backprop(&x, 1);
        for (l, layer) in net.finite_diff_all(&x, 1, 1e-5).iter().enumerate() {
            for (i, fd) in layer.iter().enumerate() {
                let tol = 1e-6 * fd.value.abs().max(1e-3);
                assert!((fd.value - g.weights[l][i]).abs() < tol, "{l}/{i}");
            }
        }
    }

    #[test]
    fn float_train_zero_iterations_and_reproducible() {
        let cfg = dense_config(&[4, 3], &[ActivationKind::Identity]);
        let ds = Dataset::new(
            Shape::flat(4),
            (0..40).map(|i| (i * 37 % 256) as u8).collect(),
            (0..10).map(|i| (i % 3) as u8).collect(),
            Split::Train,
            3,
        )
        .unwrap();
        let opts = TrainOptions {
            iterations: 0,
            batch_size: 4,
            eval_every: None,
        };
        let (net, rec) = float_train(&cfg, &ds, None, &opts).unwrap();
        assert_eq!(net.weights, cfg.initial_weights());
        assert!(rec.losses.is_empty());

        let opts = TrainOptions {
            iterations: 20,
            ..opts
        };
        let a = float_train(&cfg, &ds, Some(&ds), &opts).unwrap();
        let b = float_train(&cfg, &ds, Some(&ds), &opts).unwrap();
        assert_eq!(a.1.loss_csv(), b.1.loss_csv());
        assert_eq!(a.0.weights, b.0.weights);
    }
}
