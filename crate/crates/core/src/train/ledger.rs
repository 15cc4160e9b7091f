use serde::{Deserialize, Serialize};

use crate::train::Phase;

/// Cumulative training FLOPs of one (level, phase) segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub level: usize,
    pub phase: Phase,
    pub steps: u64,
    pub flops_per_step: u64,
    pub flops: u64,
    pub wall_seconds: f64,
}

/// Training compute per level and phase, in execution order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub entries: Vec<LedgerEntry>,
}

impl FlopsLedger {
    /// Adds one optimizer step to the current segment, opening a new segment
    /// when level or phase changes.
    pub fn record_step(&mut self, level: usize, phase: Phase, flops_per_step: u64, wall: f64) {
        match self.entries.last_mut() {
            Some(e)
                if e.level == level && e.phase == phase && e.flops_per_step == flops_per_step =>
            {
                e.steps += 1;
                e.flops += flops_per_step;
                e.wall_seconds += wall;
            }
            _ => self.entries.push(LedgerEntry {
                level,
                phase,
                steps: 1,
                flops_per_step,
                flops: flops_per_step,
                wall_seconds: wall,
            }),
        }
    }

    pub fn total_flops(&self) -> u64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    pub fn total_steps(&self) -> u64 {
        self.entries.iter().map(|e| e.steps).sum()
    }

    pub fn wall_seconds(&self) -> f64 {
        self.entries.iter().map(|e| e.wall_seconds).sum()
    }

    pub fn flops_for(&self, level: usize, phase: Phase) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.level == level && e.phase == phase)
            .map(|e| e.flops)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_accumulate() {
        let mut l = FlopsLedger::default();
        for _ in 0..3 {
            l.record_step(1, Phase::Init, 10, 0.0);
        }
        l.record_step(2, Phase::Small, 2, 0.0);
        l.record_step(1, Phase::Final, 10, 0.0);
        assert_eq!(l.entries.len(), 3);
        assert_eq!(l.total_flops(), 42);
        assert_eq!(l.total_steps(), 5);
        assert_eq!(l.flops_for(1, Phase::Init), 30);
    }
}
