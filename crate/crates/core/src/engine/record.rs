use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::netgraph::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: u64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub iteration: u64,
    /// Percent correct.
    pub accuracy: f64,
}

/// Loss and accuracy series of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub losses: Vec<LossPoint>,
    pub accuracies: Vec<AccuracyPoint>,
}

impl RunRecord {
    /// Iterations must be strictly increasing.
    pub fn push_loss(&mut self, iteration: u64, loss: f64) {
        if let Some(last) = self.losses.last() {
            assert!(iteration > last.iteration, "loss iterations must increase");
        }
        self.losses.push(LossPoint { iteration, loss });
    }

    pub fn push_accuracy(&mut self, iteration: u64, accuracy: f64) {
        if let Some(last) = self.accuracies.last() {
            assert!(iteration > last.iteration, "eval iterations must increase");
        }
        self.accuracies.push(AccuracyPoint {
            iteration,
            accuracy,
        });
    }

    pub fn loss_at(&self, iteration: u64) -> Option<f64> {
        self.losses
            .iter()
            .find(|p| p.iteration == iteration)
            .map(|p| p.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().map(|p| p.loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.accuracies.last().map(|p| p.accuracy)
    }

    /// Mean loss over the `window` points ending at `iteration`.
    pub fn smoothed_loss(&self, iteration: u64, window: usize) -> Option<f64> {
        let end = self.losses.iter().position(|p| p.iteration == iteration)?;
        let start = (end + 1).saturating_sub(window);
        let pts = &self.losses[start..=end];
        Some(pts.iter().map(|p| p.loss).sum::<f64>() / pts.len() as f64)
    }

    /// `iteration,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for p in &self.losses {
            let _ = writeln!(s, "{},{}", p.iteration, p.loss);
        }
        s
    }

    /// `eval_iteration,accuracy` CSV.
    pub fn accuracy_csv(&self) -> String {
        let mut s = String::from("eval_iteration,accuracy\n");
        for p in &self.accuracies {
            let _ = writeln!(s, "{},{}", p.iteration, p.accuracy);
        }
        s
    }
}

/// Final summary written next to the CSV series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: NetworkConfig,
    pub final_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// `"quantized"` or `"float"`.
    pub mode: String,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
