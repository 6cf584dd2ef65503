//! Operation-count ledger: multiply-accumulate totals and wall time per
//! pipeline stage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub calls: u64,
    pub macs: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpLedger {
    stages: BTreeMap<String, StageCost>,
}

pub const CSV_HEADER: &str = "stage,calls,macs,wall_ms";

impl OpLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: &str, macs: u64, wall_ms: f64) {
        let e = self.stages.entry(stage.to_string()).or_default();
        e.calls += 1;
        e.macs += macs;
        e.wall_ms += wall_ms;
    }

    /// Times `f`, which reports its own MAC count.
    pub fn measure<T>(&mut self, stage: &str, f: impl FnOnce() -> (T, u64)) -> T {
        let t0 = Instant::now();
        let (out, macs) = f();
        self.record(stage, macs, elapsed_ms(t0));
        out
    }

    pub fn get(&self, stage: &str) -> Option<&StageCost> {
        self.stages.get(stage)
    }

    pub fn stages(&self) -> impl Iterator<Item = (&str, &StageCost)> {
        self.stages.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_macs(&self) -> u64 {
        self.stages.values().map(|s| s.macs).sum()
    }

    pub fn merge(&mut self, other: &OpLedger) {
        for (k, v) in &other.stages {
            let e = self.stages.entry(k.clone()).or_default();
            e.calls += v.calls;
            e.macs += v.macs;
            e.wall_ms += v.wall_ms;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (k, v) in &self.stages {
            let _ = writeln!(out, "{k},{},{},{:.3}", v.calls, v.macs, v.wall_ms);
        }
        out
    }
}

pub fn elapsed_ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}
