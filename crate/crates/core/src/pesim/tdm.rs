//! Behavioral model of one PE's time-multiplexed training datapath.
//!
//! A single multiplier is shared by four steps, selected through MUX1/MUX2:
//!
//! 1. `G_{i+1,j} x W_{i+1,j}`, accumulated over the `N_{i+1}` upstream
//!    neurons, then written to R1;
//! 2. `R1 x f'_i`, giving this neuron's `G_i`;
//! 3. `G_i x X_i`, the weight gradient;
//! 4. the gradient times `-alpha` from the learning-rate register.
//!
//! Each multiplier use takes one cycle; adds and mux switching are free.

use serde::Serialize;

use crate::qnum::{q_mul, QFormat, QValue, WideAcc};

use super::PesimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TdmStep {
    /// Step 1: accumulate `G_{i+1} x W_{i+1}`.
    Propagate,
    /// Step 2: multiply by the activation derivative.
    Derivative,
    /// Step 3: multiply by the layer input.
    Input,
    /// Step 4: multiply by the learning rate.
    LearningRate,
}

impl TdmStep {
    pub fn ordinal(self) -> u8 {
        match self {
            TdmStep::Propagate => 1,
            TdmStep::Derivative => 2,
            TdmStep::Input => 3,
            TdmStep::LearningRate => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mux1Sel {
    GNext,
    FPrime,
    Input,
    Alpha,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mux2Sel {
    WNext,
    R1,
    G,
    Gradient,
}

/// One multiplier use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TdmEvent {
    pub cycle: u64,
    pub step: TdmStep,
    pub mux1: Mux1Sel,
    pub mux2: Mux2Sel,
    pub lhs: f64,
    pub rhs: f64,
    /// Multiplier output as stored: exact for step 1 (accumulated wide), rounded otherwise.
    pub product: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TdmTrace {
    pub events: Vec<TdmEvent>,
}

impl TdmTrace {
    pub fn multiplier_ops(&self) -> usize {
        self.events.len()
    }

    /// Checks ordering and the one-op-per-cycle constraint for a trace that
    /// updates `inputs` weights of one neuron fed by `n_next` upstream signals:
    /// `n_next` step-1 events, one step-2 event, then step 3/4 pairs.
    pub fn check(&self, n_next: usize, inputs: usize) -> Result<(), String> {
        let want = n_next + 1 + 2 * inputs;
        if self.events.len() != want {
            return Err(format!("{} events, expected {want}", self.events.len()));
        }
        for pair in self.events.windows(2) {
            if pair[1].cycle != pair[0].cycle + 1 {
                return Err(format!(
                    "multiplier used twice or idle between cycles {} and {}",
                    pair[0].cycle, pair[1].cycle
                ));
            }
        }
        let expect = |i: usize| -> TdmStep {
            if i < n_next {
                TdmStep::Propagate
            } else if i == n_next {
                TdmStep::Derivative
            } else if (i - n_next - 1) % 2 == 0 {
                TdmStep::Input
            } else {
                TdmStep::LearningRate
            }
        };
        for (i, e) in self.events.iter().enumerate() {
            if e.step != expect(i) {
                return Err(format!("event {i} is step {:?}, expected {:?}", e.step, expect(i)));
            }
        }
        Ok(())
    }
}

/// Register file of a training-capable PE.
#[derive(Clone, Debug, PartialEq)]
pub struct PEState {
    pub mux1_sel: Mux1Sel,
    pub mux2_sel: Mux2Sel,
    /// Wide partial-sum register for step 1.
    pub partial: WideAcc,
    /// `sum_j G_{i+1,j} W_{i+1,j}`, written once at the end of step 1.
    pub r1: Option<QValue>,
    /// This neuron's `G_i`.
    pub g: Option<QValue>,
    /// Last `G_i X_i` product.
    pub gradient: Option<QValue>,
    /// Last weight update.
    pub delta: Option<QValue>,
    /// Holds `-alpha`; fixed for the whole update sequence.
    pub alpha_reg: QValue,
    pub cycle: u64,
    fmt: QFormat,
}

impl PEState {
    pub fn new(alpha: QValue, g_fmt: QFormat, w_fmt: QFormat, fmt: QFormat) -> Self {
        Self {
            mux1_sel: Mux1Sel::GNext,
            mux2_sel: Mux2Sel::WNext,
            partial: WideAcc::for_product(g_fmt, w_fmt),
            r1: None,
            g: None,
            gradient: None,
            delta: None,
            alpha_reg: alpha.requantize(fmt).neg(),
            cycle: 0,
            fmt,
        }
    }

    fn record(&mut self, trace: &mut TdmTrace, step: TdmStep, lhs: QValue, rhs: QValue, product: f64) {
        self.cycle += 1;
        trace.events.push(TdmEvent {
            cycle: self.cycle,
            step,
            mux1: self.mux1_sel,
            mux2: self.mux2_sel,
            lhs: lhs.to_real(),
            rhs: rhs.to_real(),
            product,
        });
    }

    /// Step 1 over all upstream neurons, then the write to R1.
    pub fn propagate(&mut self, g_next: &[QValue], w_next: &[QValue], trace: &mut TdmTrace) -> Result<QValue, PesimError> {
        if g_next.len() != w_next.len() {
            return Err(PesimError::LengthMismatch {
                g: g_next.len(),
                w: w_next.len(),
            });
        }
        self.mux1_sel = Mux1Sel::GNext;
        self.mux2_sel = Mux2Sel::WNext;
        for (&g, &w) in g_next.iter().zip(w_next) {
            self.partial.mac(g, w)?;
            let exact = g.to_real() * w.to_real();
            self.record(trace, TdmStep::Propagate, g, w, exact);
        }
        let r1 = self.partial.finalize(self.fmt);
        self.r1 = Some(r1);
        Ok(r1)
    }

    /// Step 2.
    pub fn derivative(&mut self, fprime: QValue, trace: &mut TdmTrace) -> QValue {
        let r1 = self.r1.expect("step 1 precedes step 2");
        self.mux1_sel = Mux1Sel::FPrime;
        self.mux2_sel = Mux2Sel::R1;
        let g = q_mul(r1, fprime, self.fmt);
        self.record(trace, TdmStep::Derivative, fprime, r1, g.to_real());
        self.g = Some(g);
        g
    }

    /// Steps 3 and 4 for one input.
    pub fn update(&mut self, x: QValue, trace: &mut TdmTrace) -> QValue {
        let g = self.g.expect("step 2 precedes step 3");
        self.mux1_sel = Mux1Sel::Input;
        self.mux2_sel = Mux2Sel::G;
        let grad = q_mul(g, x, self.fmt);
        self.record(trace, TdmStep::Input, x, g, grad.to_real());
        self.gradient = Some(grad);

        self.mux1_sel = Mux1Sel::Alpha;
        self.mux2_sel = Mux2Sel::Gradient;
        let delta = q_mul(grad, self.alpha_reg, self.fmt);
        self.record(trace, TdmStep::LearningRate, self.alpha_reg, grad, delta.to_real());
        self.delta = Some(delta);
        delta
    }
}

/// Weight update for one neuron of layer `i`: every weight `W_i[k, m]`
/// feeding it from the inputs `xs`.
pub fn tdm_neuron_update(
    g_next: &[QValue],
    w_next: &[QValue],
    fprime: QValue,
    xs: &[QValue],
    alpha: QValue,
    fmt: QFormat,
) -> Result<(Vec<QValue>, QValue, TdmTrace), PesimError> {
    let (g_fmt, w_fmt) = match (g_next.first(), w_next.first()) {
        (Some(g), Some(w)) => (g.fmt(), w.fmt()),
        _ => (fmt, fmt),
    };
    let mut pe = PEState::new(alpha, g_fmt, w_fmt, fmt);
    let mut trace = TdmTrace::default();
    pe.propagate(g_next, w_next, &mut trace)?;
    let g = pe.derivative(fprime, &mut trace);
    let deltas = xs.iter().map(|&x| pe.update(x, &mut trace)).collect();
    Ok((deltas, g, trace))
}

/// Update of a single weight: `N_{i+1}` step-1 cycles then steps 2-4.
pub fn tdm_weight_update(
    g_next: &[QValue],
    w_next: &[QValue],
    fprime: QValue,
    x: QValue,
    alpha: QValue,
    fmt: QFormat,
) -> Result<(QValue, TdmTrace), PesimError> {
    let (d, _, trace) = tdm_neuron_update(g_next, w_next, fprime, &[x], alpha, fmt)?;
    Ok((d[0], trace))
}
