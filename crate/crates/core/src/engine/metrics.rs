use serde::{Deserialize, Serialize};

use super::lineage::{ResponseRecord, RootStatus};
use super::{Finished, Scenario, Seeds};
use crate::queueing::QueueState;
use crate::scheduler::ScheduleDecision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub slot: u64,
    /// `Theta(t)`
    pub theta: u64,
    /// `h(t)` at the slot-start snapshot.
    pub h: f64,
    /// Root tuples whose response was recorded in this slot.
    pub completions: u64,
    pub resp_sum: u64,
    /// Forecast tuples found false in this slot.
    pub phantom: u64,
}

impl SlotMetrics {
    pub fn resp_mean(&self) -> Option<f64> {
        (self.completions > 0).then(|| self.resp_sum as f64 / self.completions as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub state: QueueState,
    pub decision: ScheduleDecision,
    /// Tuples processed per instance.
    pub processed: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub horizon: u64,
    pub warmup_slots: u64,
    pub avg_theta: f64,
    pub avg_h: f64,
    pub mean_resp: Option<f64>,
    pub p99_resp: Option<u64>,
    /// Responses counted in the averages.
    pub completed: u64,
    /// Revealed tuples after warm-up that had not finished by the horizon.
    pub censored: u64,
    pub matched: u64,
    pub phantom: u64,
    pub phantom_purged: u64,
    pub unpredicted: u64,
    pub predictor_mse: Option<f64>,
    pub windows: Vec<usize>,
    pub scheduler: String,
    #[serde(rename = "V")]
    pub v: f64,
    pub beta: f64,
    pub decision_digest: String,
    pub config_hash: String,
    pub seeds: Seeds,
    #[serde(skip)]
    pub series: Vec<SlotMetrics>,
    #[serde(skip)]
    pub responses: Vec<ResponseRecord>,
    #[serde(skip)]
    pub trace: Option<Vec<SlotTrace>>,
}

pub(super) fn summarize(
    sc: &Scenario,
    fin: Finished,
    series: Vec<SlotMetrics>,
    trace: Option<Vec<SlotTrace>>,
    warm: u64,
) -> RunResult {
    let tail = &series[warm.min(series.len() as u64) as usize..];
    let n = tail.len().max(1) as f64;
    let avg_theta = tail.iter().map(|m| m.theta as f64).sum::<f64>() / n;
    let avg_h = tail.iter().map(|m| m.h).sum::<f64>() / n;

    let mut counted: Vec<u64> = fin
        .lineage
        .responses
        .iter()
        .filter(|r| r.arrival_slot >= warm && r.arrival_slot < sc.horizon)
        .map(|r| r.resp)
        .collect();
    counted.sort_unstable();
    let mean_resp = (!counted.is_empty()).then(|| counted.iter().sum::<u64>() as f64 / counted.len() as f64);
    let p99_resp = (!counted.is_empty()).then(|| {
        // nearest rank
        let rank = ((0.99 * counted.len() as f64).ceil() as usize).max(1);
        counted[rank - 1]
    });
    debug_assert!(fin
        .lineage
        .roots
        .iter()
        .all(|r| r.status != RootStatus::Predicted || r.arrival >= sc.horizon));

    RunResult {
        horizon: sc.horizon,
        warmup_slots: warm,
        avg_theta,
        avg_h,
        mean_resp,
        p99_resp,
        completed: counted.len() as u64,
        censored: fin.lineage.censored(warm, sc.horizon),
        matched: fin.matched,
        phantom: fin.phantom,
        phantom_purged: fin.phantom_purged,
        unpredicted: fin.unpredicted,
        predictor_mse: fin.stats.mse(),
        windows: sc.windows.clone(),
        scheduler: format!("{:?}", sc.scheduler.kind).to_lowercase(),
        v: sc.scheduler.v,
        beta: sc.scheduler.beta,
        decision_digest: fin.digest,
        config_hash: sc.config_hash.clone(),
        seeds: sc.seeds,
        series,
        responses: fin.lineage.responses,
        trace,
    }
}
