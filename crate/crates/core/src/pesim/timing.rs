//! Closed-form cycle counts and the schedule simulations that reproduce them.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::netgraph::{layer_names, LayerSpec, NetworkConfig};

use super::PesimError;

/// Fully-connected inference with one PE per output neuron: `N_{i-1} + N_i`.
pub fn cycles_fc_inference(n_prev: u64, n_cur: u64) -> u64 {
    n_prev + n_cur
}

/// Convolution of an `h x w x d` input with `k x k x d` filters:
/// `k d (w - k)(h - k)`, as the accelerator's row-stationary mapping counts it.
pub fn cycles_conv_inference(h: u64, w: u64, d: u64, k: u64) -> Result<u64, PesimError> {
    if k >= h || k >= w {
        return Err(PesimError::KernelTooLarge { h, w, k });
    }
    Ok(k * d * (w - k) * (h - k))
}

/// Pipelined backward pass over `n` layers: `N_n + sum_i N_i`.
pub fn cycles_bp_pipelined(neurons: &[u64]) -> Result<u64, PesimError> {
    let last = neurons.last().ok_or(PesimError::EmptyNetwork)?;
    Ok(last + neurons.iter().sum::<u64>())
}

/// Walks the FC inference schedule: inputs are broadcast one per cycle to
/// all `n_cur` PEs (one MAC each per cycle), then the shared activation unit
/// drains one neuron per cycle.
pub fn simulate_fc_inference(n_prev: u64, n_cur: u64) -> u64 {
    let mut cycle = 0;
    let mut macs = vec![0u64; n_cur as usize];
    for _ in 0..n_prev {
        cycle += 1;
        for m in macs.iter_mut() {
            *m += 1;
        }
    }
    debug_assert!(macs.iter().all(|&m| m == n_prev));
    let mut drained = 0;
    while drained < n_cur {
        cycle += 1;
        drained += 1;
    }
    cycle
}

/// Walks the row-stationary convolution schedule: `k` lanes, one per filter
/// row, each doing one MAC per cycle over `k` columns, for every channel and
/// every one of the `(h - k)(w - k)` positions the mapping visits.
pub fn simulate_conv_inference(h: u64, w: u64, d: u64, k: u64) -> Result<u64, PesimError> {
    if k >= h || k >= w {
        return Err(PesimError::KernelTooLarge { h, w, k });
    }
    let mut cycle = 0;
    let mut lane_macs = vec![0u64; k as usize];
    for _oy in 0..(h - k) {
        for _ox in 0..(w - k) {
            for _c in 0..d {
                for _col in 0..k {
                    cycle += 1;
                    for m in lane_macs.iter_mut() {
                        *m += 1;
                    }
                }
            }
        }
    }
    debug_assert!(lane_macs.iter().all(|&m| m == cycle));
    Ok(cycle)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageTiming {
    pub name: String,
    pub neurons: u64,
    /// Last cycle before the stage's first output.
    pub start: u64,
    /// Cycle its last output is ready.
    pub finish: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BpSchedule {
    pub neurons: Vec<u64>,
    pub stages: Vec<StageTiming>,
    pub simulated: u64,
    pub closed_form: u64,
    /// Peak multiplier operations issued in one cycle by any single unit.
    pub peak_ops_per_unit: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Ready {
    cycle: u64,
    stage: usize,
    index: u64,
}

/// Event-driven simulation of the pipelined backward pass.
///
/// Stage 0 is the loss unit (one output per last-layer neuron); stages
/// `1..=n` are layers `n` down to `1`, each with one global multiplier that
/// produces one `G` element per cycle. Every element is forwarded to the
/// next stage the cycle it is ready, where each PE accumulates it into its
/// R1. A stage's global multiplier starts once all of the previous stage's
/// elements have arrived, so its R1 values are complete.
pub fn simulate_bp_schedule(neurons: &[u64]) -> Result<BpSchedule, PesimError> {
    let closed_form = cycles_bp_pipelined(neurons)?;
    let n = neurons.len();
    let mut sizes = vec![neurons[n - 1]];
    sizes.extend(neurons.iter().rev());
    let stages = sizes.len();

    let mut heap = BinaryHeap::new();
    let mut received = vec![0u64; stages + 1];
    let mut start = vec![0u64; stages];
    let mut finish = vec![0u64; stages];
    let mut ops: std::collections::HashMap<(usize, u64), u64> = Default::default();
    let mut peak = 0;

    // Issue all elements of `stage` starting after `at`.
    let issue = |heap: &mut BinaryHeap<Reverse<Ready>>, stage: usize, at: u64| {
        for index in 0..sizes[stage] {
            heap.push(Reverse(Ready {
                cycle: at + index + 1,
                stage,
                index,
            }));
        }
    };
    issue(&mut heap, 0, 0);
    start[0] = 0;

    let mut last = 0;
    while let Some(Reverse(ev)) = heap.pop() {
        last = last.max(ev.cycle);
        let slot = ops.entry((ev.stage, ev.cycle)).or_default();
        *slot += 1;
        peak = peak.max(*slot);
        finish[ev.stage] = finish[ev.stage].max(ev.cycle);

        let next = ev.stage + 1;
        if next < stages {
            // PEs of the next stage each take one accumulate this cycle.
            let pe_slot = ops.entry((stages + next, ev.cycle)).or_default();
            *pe_slot += 1;
            peak = peak.max(*pe_slot);
            received[next] += 1;
            if received[next] == sizes[ev.stage] {
                start[next] = ev.cycle;
                issue(&mut heap, next, ev.cycle);
            }
        }
    }

    let mut timing = Vec::with_capacity(stages);
    for s in 0..stages {
        timing.push(StageTiming {
            name: if s == 0 {
                "loss".to_string()
            } else {
                format!("layer{}", n - s + 1)
            },
            neurons: sizes[s],
            start: start[s],
            finish: finish[s],
        });
    }
    Ok(BpSchedule {
        neurons: neurons.to_vec(),
        stages: timing,
        simulated: last,
        closed_form,
        peak_ops_per_unit: peak,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCycles {
    pub name: String,
    pub kind: String,
    pub closed_form: u64,
    pub simulated: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CycleReport {
    /// Inference cycles per compute layer.
    pub layers: Vec<LayerCycles>,
    /// Backward-pass schedule over every weight-bearing layer.
    pub bp: BpSchedule,
    pub bp_total: u64,
    /// Backward-pass schedule of the trailing dense layers alone.
    pub dense_tail: Option<BpSchedule>,
    pub notes: Vec<String>,
}

impl CycleReport {
    pub fn is_consistent(&self) -> bool {
        self.layers.iter().all(|l| l.closed_form == l.simulated)
            && self.bp.closed_form == self.bp.simulated
            && self
                .dense_tail
                .as_ref()
                .is_none_or(|t| t.closed_form == t.simulated)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Timing report for a configured network.
pub fn cycle_report(config: &NetworkConfig) -> Result<CycleReport, PesimError> {
    let shapes = config.validate()?;
    let names = layer_names(&config.layers);
    let mut layers = Vec::new();
    let mut bp_neurons = Vec::new();
    let mut tail = Vec::new();
    for (i, layer) in config.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv {
                in_h,
                in_w,
                in_d,
                kernel_k,
                ..
            } => {
                let (h, w, d, k) = (in_h as u64, in_w as u64, in_d as u64, kernel_k as u64);
                layers.push(LayerCycles {
                    name: names[i].clone(),
                    kind: "conv".into(),
                    closed_form: cycles_conv_inference(h, w, d, k)?,
                    simulated: simulate_conv_inference(h, w, d, k)?,
                });
                bp_neurons.push(shapes.layers[i].output.len() as u64);
                tail.clear();
            }
            LayerSpec::Dense { in_n, out_n, .. } => {
                let (a, b) = (in_n as u64, out_n as u64);
                layers.push(LayerCycles {
                    name: names[i].clone(),
                    kind: "dense".into(),
                    closed_form: cycles_fc_inference(a, b),
                    simulated: simulate_fc_inference(a, b),
                });
                bp_neurons.push(b);
                tail.push(b);
            }
            LayerSpec::Pool { .. } => {}
        }
    }
    let bp = simulate_bp_schedule(&bp_neurons)?;
    let dense_tail = if !tail.is_empty() && tail.len() < bp_neurons.len() {
        Some(simulate_bp_schedule(&tail)?)
    } else {
        None
    };
    let notes = vec![
        "conv inference uses k*d*(w-k)*(h-k) as the accelerator mapping counts it; the functional \
         engine computes the full (h-k+1)*(w-k+1) output"
            .to_string(),
        "conv layers enter the backward pipeline with their output-activation count as N_i; \
         pooling layers carry no multiplier and are omitted"
            .to_string(),
        "one multiplier operation per cycle per unit; adds and mux switching are free".to_string(),
    ];
    Ok(CycleReport {
        bp_total: bp.closed_form,
        layers,
        bp,
        dense_tail,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{lenet_preset, DatasetKind};
    use proptest::prelude::*;

    #[test]
    fn fc_spot_values() {
        assert_eq!(cycles_fc_inference(784, 100), 884);
        assert_eq!(cycles_fc_inference(1, 1), 2);
        assert_eq!(cycles_fc_inference(120, 84), 204);
        for (a, b) in [(784, 100), (1, 1), (120, 84)] {
            assert_eq!(simulate_fc_inference(a, b), cycles_fc_inference(a, b));
        }
    }

    #[test]
    fn conv_spot_values() {
        assert_eq!(cycles_conv_inference(28, 28, 1, 5).unwrap(), 2645);
        assert_eq!(cycles_conv_inference(32, 32, 3, 5).unwrap(), 10935);
        assert_eq!(cycles_conv_inference(6, 6, 1, 5).unwrap(), 5);
        assert!(cycles_conv_inference(5, 28, 1, 5).is_err());
        assert!(cycles_conv_inference(28, 4, 1, 5).is_err());
        assert_eq!(simulate_conv_inference(28, 28, 1, 5).unwrap(), 2645);
    }

    #[test]
    fn bp_spot_values() {
        assert_eq!(cycles_bp_pipelined(&[4, 3, 2]).unwrap(), 11);
        assert_eq!(cycles_bp_pipelined(&[10]).unwrap(), 20);
        assert_eq!(cycles_bp_pipelined(&[100, 50, 10]).unwrap(), 170);
        assert!(matches!(cycles_bp_pipelined(&[]), Err(PesimError::EmptyNetwork)));
        assert_eq!(simulate_bp_schedule(&[4, 3, 2]).unwrap().simulated, 11);
        assert_eq!(simulate_bp_schedule(&[1, 1, 1]).unwrap().simulated, 4);
        assert_eq!(simulate_bp_schedule(&[120, 84, 10]).unwrap().simulated, 224);
    }

    #[test]
    fn bp_stage_timeline() {
        let s = simulate_bp_schedule(&[4, 3, 2]).unwrap();
        let spans: Vec<(u64, u64)> = s.stages.iter().map(|t| (t.start, t.finish)).collect();
        // loss, layer3, layer2, layer1
        assert_eq!(spans, vec![(0, 2), (2, 4), (4, 7), (7, 11)]);
        assert_eq!(s.peak_ops_per_unit, 1);
    }

    #[test]
    fn lenet_report() {
        let r = cycle_report(&lenet_preset(DatasetKind::Mnist)).unwrap();
        assert!(r.is_consistent());
        assert_eq!(r.layers[0].closed_form, 2645);
        assert_eq!(r.layers.len(), 5);
        assert_eq!(r.dense_tail.as_ref().unwrap().closed_form, 224);
        assert_eq!(r.bp.neurons, vec![3456, 1024, 120, 84, 10]);
        assert_eq!(r.bp_total, 10 + 3456 + 1024 + 120 + 84 + 10);
        let json = r.to_json();
        assert!(json.contains("\"bp_total\""));
    }

    proptest! {
        #[test]
        fn simulation_matches_closed_form(neurons in prop::collection::vec(1u64..=512, 1..=8)) {
            let s = simulate_bp_schedule(&neurons).unwrap();
            prop_assert_eq!(s.simulated, cycles_bp_pipelined(&neurons).unwrap());
            prop_assert_eq!(s.peak_ops_per_unit, 1);
        }

        #[test]
        fn conv_walk_matches_formula(h in 2u64..40, w in 2u64..40, d in 1u64..4, k in 1u64..6) {
            prop_assume!(k < h && k < w);
            prop_assert_eq!(simulate_conv_inference(h, w, d, k).unwrap(), cycles_conv_inference(h, w, d, k).unwrap());
        }
    }
}
