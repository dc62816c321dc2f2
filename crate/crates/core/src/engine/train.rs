use crate::data::{sample_batch, Dataset};
use crate::netgraph::NetworkConfig;
use crate::rng::{SeededRng, STREAM_SAMPLE};
use crate::scalar::Scalar;

use super::{EngineError, RunRecord, TensorQ, TrainState, WeightDelta};

/// Softmax cross-entropy in double precision. The returned gradient
/// `softmax(logits) - onehot(label)` is rounded into the logits' format.
pub fn loss_and_initial_gradient<S: Scalar>(
    logits: &TensorQ<S>,
    label: usize,
) -> Result<(f64, TensorQ<S>), EngineError> {
    let z = logits.to_reals();
    if label >= z.len() {
        return Err(EngineError::InvalidLabel {
            label,
            classes: z.len(),
        });
    }
    let (loss, p) = softmax_xent(&z, label);
    let fmt = logits.fmt();
    let grad = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| S::from_real(if j == label { pj - 1.0 } else { pj }, fmt))
        .collect();
    Ok((loss, TensorQ::new(logits.dims().to_vec(), grad, fmt)?))
}

pub(crate) fn softmax_xent(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (z[label] - m);
    (loss, exps.iter().map(|e| e / sum).collect())
}

/// Index of the largest logit; ties resolve to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Classification accuracy in percent.
pub fn evaluate<S: Scalar>(state: &mut TrainState<S>, test: &Dataset) -> Result<f64, EngineError> {
    if test.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let mut correct = 0usize;
    for i in 0..test.len() {
        let x = state.input_tensor(&test.image(i))?;
        let logits = state.forward(&x)?;
        if argmax(&logits.to_reals()) == test.label(i) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / test.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainOptions {
    pub iterations: u64,
    pub batch_size: usize,
    /// Evaluate on the test set every this many iterations (and always at the end).
    pub eval_every: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: crate::netgraph::DEFAULT_BATCH,
            eval_every: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub record: RunRecord,
    pub state: TrainState<S>,
}

/// Minibatch SGD. Each iteration samples a batch without replacement from
/// the seeded sampling stream, runs forward/loss/backward per sample, averages
/// the per-sample updates exactly (one rounding) in sample order, and applies
/// the mean. Deterministic in `(config, dataset, options)`.
pub fn train<S: Scalar>(
    config: &NetworkConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    opts: &TrainOptions,
) -> Result<TrainOutcome<S>, EngineError> {
    if train_set.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    if opts.batch_size == 0 {
        return Err(EngineError::ZeroBatch);
    }
    let mut state = TrainState::<S>::new(config)?;
    let want = state.report().input.len();
    if train_set.shape().len() != want {
        return Err(EngineError::Shape(format!(
            "dataset images have {} values, network input needs {want}",
            train_set.shape().len()
        )));
    }
    let mut rng = SeededRng::new(config.seed, STREAM_SAMPLE);
    let mut record = RunRecord::default();

    for it in 1..=opts.iterations {
        let (batch, next) = sample_batch(train_set, opts.batch_size, &rng)?;
        rng = next;
        let mut sums = BatchSum::new(&state);
        let mut loss_sum = 0.0;
        for &idx in &batch {
            let x = state.input_tensor(&train_set.image(idx))?;
            let logits = state.forward(&x)?;
            let (loss, dy) = loss_and_initial_gradient(&logits, train_set.label(idx))?;
            let delta = state.backward_unrolled(&dy)?;
            sums.add(&delta)?;
            loss_sum += loss;
        }
        let mean = sums.mean(batch.len() as u32);
        state.apply_update(&mean)?;
        record.push_loss(it, loss_sum / batch.len() as f64);

        if let (Some(test), Some(every)) = (test_set, opts.eval_every) {
            if every > 0 && it % every == 0 && it != opts.iterations {
                record.push_accuracy(it, evaluate(&mut state, test)?);
            }
        }
    }
    if let Some(test) = test_set {
        record.push_accuracy(opts.iterations, evaluate(&mut state, test)?);
    }
    Ok(TrainOutcome { record, state })
}

/// Exact running sum of per-sample updates.
struct BatchSum<S: Scalar> {
    weights: Vec<(Vec<usize>, Vec<S::Acc>, crate::qnum::QFormat)>,
    biases: Option<Vec<(Vec<usize>, Vec<S::Acc>, crate::qnum::QFormat)>>,
}

impl<S: Scalar> BatchSum<S> {
    fn new(state: &TrainState<S>) -> Self {
        let init = |t: &TensorQ<S>| (t.dims().to_vec(), vec![S::acc_sum(t.fmt()); t.len()], t.fmt());
        Self {
            weights: state.weights().iter().map(init).collect(),
            biases: state.biases().map(|b| b.iter().map(init).collect()),
        }
    }

    fn add(&mut self, delta: &WeightDelta<S>) -> Result<(), EngineError> {
        fn fold<S: Scalar>(
            dst: &mut [(Vec<usize>, Vec<S::Acc>, crate::qnum::QFormat)],
            src: &[TensorQ<S>],
        ) -> Result<(), EngineError> {
            for ((_, accs, _), t) in dst.iter_mut().zip(src) {
                for (acc, &v) in accs.iter_mut().zip(t.data()) {
                    S::acc_add(acc, v)?;
                }
            }
            Ok(())
        }
        fold(&mut self.weights, &delta.weights)?;
        if let (Some(b), Some(db)) = (self.biases.as_mut(), delta.biases.as_ref()) {
            fold(b, db)?;
        }
        Ok(())
    }

    fn mean(&self, n: u32) -> WeightDelta<S> {
        let finish = |(dims, accs, fmt): &(Vec<usize>, Vec<S::Acc>, crate::qnum::QFormat)| {
            TensorQ::from_parts(
                dims.clone(),
                accs.iter().map(|a| S::finish_mean(a, n, *fmt)).collect(),
                *fmt,
            )
        };
        WeightDelta {
            weights: self.weights.iter().map(finish).collect(),
            biases: self.biases.as_ref().map(|b| b.iter().map(finish).collect()),
        }
    }
}
