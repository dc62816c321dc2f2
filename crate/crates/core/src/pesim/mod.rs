//! Processing-element datapath model and accelerator timing.

mod tdm;
mod timing;

pub use tdm::{
    tdm_neuron_update, tdm_weight_update, Mux1Sel, Mux2Sel, PEState, TdmEvent, TdmStep, TdmTrace,
};
pub use timing::{
    cycle_report, cycles_bp_pipelined, cycles_conv_inference, cycles_fc_inference,
    simulate_bp_schedule, simulate_conv_inference, simulate_fc_inference, BpSchedule,
    CycleReport, LayerCycles, StageTiming,
};

use thiserror::Error;

use crate::netgraph::NetError;
use crate::qnum::QError;

#[derive(Debug, Error)]
pub enum PesimError {
    #[error("G has {g} elements but W has {w}")]
    LengthMismatch { g: usize, w: usize },
    #[error("kernel {k} must be smaller than the {h}x{w} input")]
    KernelTooLarge { h: u64, w: u64, k: u64 },
    #[error("backward schedule needs at least one layer")]
    EmptyNetwork,
    #[error(transparent)]
    Numeric(#[from] QError),
    #[error(transparent)]
    Config(#[from] NetError),
}
