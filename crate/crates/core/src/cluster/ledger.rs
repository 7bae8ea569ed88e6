use std::fmt::Write as _;

use serde::Serialize;

use super::topology::LinkModel;

/// Traffic and simulated time of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepTraffic {
    pub step: u64,
    pub intra_bytes: u64,
    pub inter_bytes: u64,
    /// Part of `inter_bytes` spent on explicit indices.
    pub inter_index_bytes: u64,
    pub reduce_scatter_events: u32,
    pub synchronize_events: u32,
    /// Duration of this step.
    pub step_time_s: f64,
    /// Cumulative simulated time at the end of this step.
    pub sim_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub steps: u64,
    pub intra_bytes: u64,
    pub inter_bytes: u64,
    pub inter_index_bytes: u64,
    pub sim_time_s: f64,
    /// Bits per simulated second, averaged over the run.
    pub avg_intra_bandwidth_bps: f64,
    pub avg_inter_bandwidth_bps: f64,
}

/// Exact per-step byte accounting per link class. Never reset during a run.
#[derive(Debug, Clone, Default)]
pub struct TrafficLedger {
    steps: Vec<StepTraffic>,
    current: StepTraffic,
    elapsed: f64,
}

impl TrafficLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_step(&mut self, step: u64) {
        self.current = StepTraffic {
            step,
            ..StepTraffic::default()
        };
    }

    pub fn charge_reduce_scatter(&mut self, intra_bytes: u64) {
        self.current.intra_bytes += intra_bytes;
        self.current.reduce_scatter_events += 1;
    }

    pub fn charge_synchronize(
        &mut self,
        intra_bytes: u64,
        inter_bytes: u64,
        inter_index_bytes: u64,
    ) {
        self.current.intra_bytes += intra_bytes;
        self.current.inter_bytes += inter_bytes;
        self.current.inter_index_bytes += inter_index_bytes;
        self.current.synchronize_events += 1;
    }

    pub fn finish_step(&mut self, link: &LinkModel) -> StepTraffic {
        let mut s = self.current;
        s.step_time_s = link.step_time(s.intra_bytes, s.inter_bytes);
        self.elapsed += s.step_time_s;
        s.sim_time_s = self.elapsed;
        self.steps.push(s);
        s
    }

    pub fn steps(&self) -> &[StepTraffic] {
        &self.steps
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn summary(&self) -> LedgerSummary {
        let intra: u64 = self.steps.iter().map(|s| s.intra_bytes).sum();
        let inter: u64 = self.steps.iter().map(|s| s.inter_bytes).sum();
        let idx: u64 = self.steps.iter().map(|s| s.inter_index_bytes).sum();
        let per_sec = |b: u64| {
            if self.elapsed > 0.0 {
                b as f64 * 8.0 / self.elapsed
            } else {
                0.0
            }
        };
        LedgerSummary {
            steps: self.steps.len() as u64,
            intra_bytes: intra,
            inter_bytes: inter,
            inter_index_bytes: idx,
            sim_time_s: self.elapsed,
            avg_intra_bandwidth_bps: per_sec(intra),
            avg_inter_bandwidth_bps: per_sec(inter),
        }
    }

    /// `step,intra_bytes,inter_bytes,sim_time_s`, one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,intra_bytes,inter_bytes,sim_time_s\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.step, s.intra_bytes, s.inter_bytes, s.sim_time_s
            );
        }
        out
    }
}
