//! Queue backlogs and their per-slot updates.
//!
//! Every counter here is an integer tuple count. The `[x]^+` of the update
//! equations is realised by rejecting infeasible removals up front, so no
//! update can silently clip a backlog.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::QueueError;
use crate::ids::{ComponentId, InstanceId};
use crate::topology::StreamSystem;

/// Output queue of a spout towards one successor component, split by the slot
/// in which the buffered tuples (actually or prospectively) arrive.
///
/// `rem[w]` is the number of untreated tuples of slot `t + w`; `recorded[w]`
/// is the arrival count that cell was filled with, which bounds it from above.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpoutOutputQueue {
    pub owner: InstanceId,
    pub target: ComponentId,
    pub window: usize,
    pub rem: Vec<u32>,
    pub recorded: Vec<u32>,
    pub total: u64,
}

impl SpoutOutputQueue {
    pub fn new(owner: InstanceId, target: ComponentId, window: usize) -> Self {
        SpoutOutputQueue {
            owner,
            target,
            window,
            rem: vec![0; window + 1],
            recorded: vec![0; window + 1],
            total: 0,
        }
    }

    /// Loads the initial window; `cells[w]` arrives in slot `w`.
    pub fn fill(&mut self, cells: &[u32]) {
        assert_eq!(cells.len(), self.window + 1);
        self.rem.copy_from_slice(cells);
        self.recorded.copy_from_slice(cells);
        self.total = cells.iter().map(|&c| c as u64).sum();
    }

    /// Tuples that have actually arrived and must leave this slot.
    pub fn forced_flush(&self) -> u32 {
        self.rem[0]
    }

    /// Replaces the arrived cell once the true count is known: `purged`
    /// predicted-but-absent tuples leave, `unpredicted` arrivals join.
    /// `carried` counts earlier arrivals still held in the cell.
    pub fn reveal(&mut self, actual: u32, purged: u32, unpredicted: u32, carried: u32) -> Result<(), QueueError> {
        if purged > self.rem[0] {
            return Err(QueueError::CellOverdrawn {
                cell: 0,
                served: purged,
                held: self.rem[0],
            });
        }
        self.rem[0] = self.rem[0] - purged + unpredicted;
        self.recorded[0] = actual + carried;
        self.total = self.total - purged as u64 + unpredicted as u64;
        self.check()
    }

    /// Bounds, and the total as the sum of its cells.
    pub fn check(&self) -> Result<(), QueueError> {
        let sum: u64 = self.rem.iter().map(|&c| c as u64).sum();
        if sum != self.total {
            return Err(QueueError::Invariant(format!(
                "{}->{}: total {} != sum of cells {}",
                self.owner, self.target, self.total, sum
            )));
        }
        for (w, (&r, &cap)) in self.rem.iter().zip(&self.recorded).enumerate() {
            if r > cap {
                return Err(QueueError::Invariant(format!(
                    "{}->{}: cell {} holds {} > recorded arrivals {}",
                    self.owner, self.target, w, r, cap
                )));
            }
        }
        Ok(())
    }
}

/// Splits `amount` departures over the window cells, earliest cell first.
pub fn drain_output(queue: &SpoutOutputQueue, amount: u64) -> Result<Vec<u32>, QueueError> {
    if amount > queue.total {
        return Err(QueueError::DrainExceedsBacklog {
            amount,
            total: queue.total,
        });
    }
    let mut left = amount;
    Ok(queue
        .rem
        .iter()
        .map(|&r| {
            let take = left.min(r as u64);
            left -= take;
            take as u32
        })
        .collect())
}

/// One slot of spout-queue dynamics: remove the served tuples, shift the
/// window by one and append the arrivals of slot `t + W + 1`.
pub fn advance_spout_queue(queue: &mut SpoutOutputQueue, served: &[u32], next_arrival: u32) -> Result<(), QueueError> {
    let w = queue.window;
    if served.len() != w + 1 {
        return Err(QueueError::BadServedVector {
            got: served.len(),
            expected: w + 1,
        });
    }
    let mut sent: u64 = 0;
    for (cell, (&r, &d)) in queue.rem.iter().zip(served).enumerate() {
        if d > r {
            return Err(QueueError::CellOverdrawn { cell, served: d, held: r });
        }
        sent += d as u64;
    }
    if queue.rem[0] != served[0] {
        return Err(QueueError::Invariant(format!(
            "{}->{}: {} arrived tuples left behind",
            queue.owner,
            queue.target,
            queue.rem[0] - served[0]
        )));
    }
    for cell in 0..w {
        queue.rem[cell] = queue.rem[cell + 1] - served[cell + 1];
        queue.recorded[cell] = queue.recorded[cell + 1];
    }
    queue.rem[w] = next_arrival;
    queue.recorded[w] = next_arrival;
    queue.total = queue.total - sent + next_arrival as u64;
    queue.check()
}

/// Input side and per-successor output queues of a bolt instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoltQueues {
    pub owner: InstanceId,
    pub input_backlog: u64,
    /// Tuples sent to this instance during the previous slot.
    pub in_flight: u64,
    pub output_backlogs: BTreeMap<ComponentId, u64>,
}

impl BoltQueues {
    pub fn new(owner: InstanceId, successors: &[ComponentId]) -> Self {
        BoltQueues {
            owner,
            input_backlog: 0,
            in_flight: 0,
            output_backlogs: successors.iter().map(|&c| (c, 0)).collect(),
        }
    }
}

/// Processes up to `service` tuples out of the backlog plus last slot's
/// transfers. Returns the number processed; `in_flight` is consumed.
pub fn advance_bolt_input(q: &mut BoltQueues, service: u32) -> u64 {
    let available = q.input_backlog + q.in_flight;
    let processed = available.min(service as u64);
    q.input_backlog = available - processed;
    q.in_flight = 0;
    processed
}

/// `Q_out' = Q_out - sent + generated` for one successor.
pub fn advance_bolt_output(q: &mut BoltQueues, target: ComponentId, sent: u64, generated: u64) -> Result<(), QueueError> {
    let backlog = q
        .output_backlogs
        .get_mut(&target)
        .ok_or(QueueError::NoSuchQueue(q.owner, target))?;
    *backlog = advance_output(*backlog, sent, generated)?;
    Ok(())
}

/// The plain output-queue recursion shared by bolts and window-less spouts.
pub fn advance_output(backlog: u64, sent: u64, added: u64) -> Result<u64, QueueError> {
    if sent > backlog {
        return Err(QueueError::SendExceedsBacklog { sent, backlog });
    }
    Ok(backlog - sent + added)
}

/// Spout output queue, either with a lookahead window or (prediction disabled)
/// as a plain backlog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoutQueue {
    Windowed(SpoutOutputQueue),
    Plain { target: ComponentId, total: u64 },
}

impl SpoutQueue {
    pub fn target(&self) -> ComponentId {
        match self {
            SpoutQueue::Windowed(q) => q.target,
            SpoutQueue::Plain { target, .. } => *target,
        }
    }

    pub fn total(&self) -> u64 {
        match self {
            SpoutQueue::Windowed(q) => q.total,
            SpoutQueue::Plain { total, .. } => *total,
        }
    }

    /// Without a window every buffered tuple has already arrived.
    pub fn forced_flush(&self) -> u64 {
        match self {
            SpoutQueue::Windowed(q) => q.forced_flush() as u64,
            SpoutQueue::Plain { total, .. } => *total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceQueues {
    Spout(Vec<SpoutQueue>),
    Bolt(BoltQueues),
}

/// All backlogs at the start of a slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueState {
    pub slot: u64,
    pub instances: Vec<InstanceQueues>,
}

impl QueueState {
    /// Empty queues; spouts get one windowed queue per successor with the
    /// given window, or plain queues when `windows` is `None`.
    pub fn empty(system: &StreamSystem, windows: Option<&[usize]>) -> Self {
        let instances = system
            .instances
            .iter()
            .map(|inst| {
                let succ = system.successors(inst.id);
                if system.is_spout(inst.id) {
                    InstanceQueues::Spout(
                        succ.iter()
                            .map(|&c| match windows {
                                Some(w) => SpoutQueue::Windowed(SpoutOutputQueue::new(inst.id, c, w[inst.id.index()])),
                                None => SpoutQueue::Plain { target: c, total: 0 },
                            })
                            .collect(),
                    )
                } else {
                    InstanceQueues::Bolt(BoltQueues::new(inst.id, succ))
                }
            })
            .collect();
        QueueState { slot: 0, instances }
    }

    /// `Q_in_i(t)`; zero for spouts.
    pub fn q_in(&self, i: InstanceId) -> u64 {
        match &self.instances[i.index()] {
            InstanceQueues::Bolt(b) => b.input_backlog,
            InstanceQueues::Spout(_) => 0,
        }
    }

    /// `Q_out_{i,c}(t)`; zero for terminal bolts and non-successors.
    pub fn q_out(&self, i: InstanceId, c: ComponentId) -> u64 {
        match &self.instances[i.index()] {
            InstanceQueues::Bolt(b) => b.output_backlogs.get(&c).copied().unwrap_or(0),
            InstanceQueues::Spout(qs) => qs.iter().find(|q| q.target() == c).map_or(0, |q| q.total()),
        }
    }

    pub fn spout_queue(&self, i: InstanceId, c: ComponentId) -> Option<&SpoutQueue> {
        match &self.instances[i.index()] {
            InstanceQueues::Spout(qs) => qs.iter().find(|q| q.target() == c),
            InstanceQueues::Bolt(_) => None,
        }
    }

    pub fn spout_queue_mut(&mut self, i: InstanceId, c: ComponentId) -> Option<&mut SpoutQueue> {
        match &mut self.instances[i.index()] {
            InstanceQueues::Spout(qs) => qs.iter_mut().find(|q| q.target() == c),
            InstanceQueues::Bolt(_) => None,
        }
    }

    pub fn bolt(&self, i: InstanceId) -> Option<&BoltQueues> {
        match &self.instances[i.index()] {
            InstanceQueues::Bolt(b) => Some(b),
            InstanceQueues::Spout(_) => None,
        }
    }

    pub fn bolt_mut(&mut self, i: InstanceId) -> Option<&mut BoltQueues> {
        match &mut self.instances[i.index()] {
            InstanceQueues::Bolt(b) => Some(b),
            InstanceQueues::Spout(_) => None,
        }
    }

    /// Sum of input backlogs.
    pub fn total_input(&self) -> u64 {
        self.instances
            .iter()
            .map(|q| match q {
                InstanceQueues::Bolt(b) => b.input_backlog,
                InstanceQueues::Spout(_) => 0,
            })
            .sum()
    }

    /// Sum of all output backlogs, spouts included.
    pub fn total_output(&self) -> u64 {
        self.instances
            .iter()
            .map(|q| match q {
                InstanceQueues::Bolt(b) => b.output_backlogs.values().sum::<u64>(),
                InstanceQueues::Spout(qs) => qs.iter().map(SpoutQueue::total).sum(),
            })
            .sum()
    }

    /// Tuples in transit between instances.
    pub fn total_in_flight(&self) -> u64 {
        self.instances
            .iter()
            .map(|q| match q {
                InstanceQueues::Bolt(b) => b.in_flight,
                InstanceQueues::Spout(_) => 0,
            })
            .sum()
    }
}

/// Rem[0] of a spout's queue towards `target`.
pub fn forced_flush_set(state: &QueueState, spout: InstanceId, target: ComponentId) -> u64 {
    state.spout_queue(spout, target).map_or(0, SpoutQueue::forced_flush)
}

/// `h(t) = sum Q_in + beta * sum Q_out`.
pub fn weighted_backlog(state: &QueueState, beta: f64) -> f64 {
    state.total_input() as f64 + beta * state.total_output() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn windowed(rem: &[u32]) -> SpoutOutputQueue {
        let mut q = SpoutOutputQueue::new(InstanceId(0), ComponentId(1), rem.len() - 1);
        q.fill(rem);
        q
    }

    #[test]
    fn forced_flush_is_first_cell() {
        assert_eq!(windowed(&[3, 2, 1]).forced_flush(), 3);
        assert_eq!(windowed(&[0, 5, 5]).forced_flush(), 0);
    }

    #[test]
    fn serve_three_then_shift() {
        let mut q = windowed(&[3, 2, 1]);
        let d = drain_output(&q, 3).unwrap();
        assert_eq!(d, vec![3, 0, 0]);
        advance_spout_queue(&mut q, &d, 4).unwrap();
        assert_eq!(q.rem, vec![2, 1, 4]);
    }

    #[test]
    fn drain_is_fifo_over_window() {
        assert_eq!(drain_output(&windowed(&[3, 2, 1]), 4).unwrap(), vec![3, 1, 0]);
        assert_eq!(drain_output(&windowed(&[0, 0, 2]), 2).unwrap(), vec![0, 0, 2]);
        assert_eq!(drain_output(&windowed(&[1, 1, 1]), 0).unwrap(), vec![0, 0, 0]);
        assert!(matches!(
            drain_output(&windowed(&[1, 1, 1]), 4),
            Err(QueueError::DrainExceedsBacklog { amount: 4, total: 3 })
        ));
    }

    #[test]
    fn advance_examples() {
        let mut q = windowed(&[3, 2, 1]);
        advance_spout_queue(&mut q, &[3, 1, 0], 4).unwrap();
        assert_eq!(q.rem, vec![1, 1, 4]);
        assert_eq!(q.total, 6);

        let mut q = windowed(&[0]);
        advance_spout_queue(&mut q, &[0], 7).unwrap();
        assert_eq!(q.rem, vec![7]);

        let mut q = windowed(&[2, 3]);
        advance_spout_queue(&mut q, &[2, 3], 0).unwrap();
        assert_eq!(q.total, 0);
    }

    #[test]
    fn advance_rejects_unflushed_arrivals() {
        let mut q = windowed(&[2, 3]);
        assert!(advance_spout_queue(&mut q, &[1, 0], 0).is_err());
    }

    #[test]
    fn reveal_adjusts_first_cell() {
        let mut q = windowed(&[5, 2]);
        q.reveal(4, 1, 0, 0).unwrap();
        assert_eq!(q.rem, vec![4, 2]);
        assert_eq!(q.total, 6);
        q.reveal(6, 0, 2, 0).unwrap();
        assert_eq!(q.rem[0], 6);
        assert!(q.reveal(1, 0, 1, 0).is_err());
    }

    #[test]
    fn bolt_input_examples() {
        let mut q = BoltQueues::new(InstanceId(0), &[]);
        q.input_backlog = 4;
        q.in_flight = 2;
        assert_eq!(advance_bolt_input(&mut q, 5), 5);
        assert_eq!(q.input_backlog, 1);

        let mut q = BoltQueues::new(InstanceId(0), &[]);
        assert_eq!(advance_bolt_input(&mut q, 3), 0);
        assert_eq!(q.input_backlog, 0);

        q.input_backlog = 10;
        assert_eq!(advance_bolt_input(&mut q, 3), 3);
        assert_eq!(q.input_backlog, 7);
    }

    #[test]
    fn bolt_output_examples() {
        let c = ComponentId(3);
        let mut q = BoltQueues::new(InstanceId(0), &[c]);
        q.output_backlogs.insert(c, 6);
        advance_bolt_output(&mut q, c, 4, 3).unwrap();
        assert_eq!(q.output_backlogs[&c], 5);

        q.output_backlogs.insert(c, 0);
        advance_bolt_output(&mut q, c, 0, 0).unwrap();
        assert_eq!(q.output_backlogs[&c], 0);

        q.output_backlogs.insert(c, 2);
        assert_eq!(
            advance_bolt_output(&mut q, c, 3, 0),
            Err(QueueError::SendExceedsBacklog { sent: 3, backlog: 2 })
        );
        assert!(advance_bolt_output(&mut q, ComponentId(9), 0, 0).is_err());
    }

    fn state_with(q_in: &[u64], q_out: &[u64]) -> QueueState {
        let mut instances = Vec::new();
        for (n, &v) in q_in.iter().enumerate() {
            let mut b = BoltQueues::new(InstanceId(n), &[]);
            b.input_backlog = v;
            instances.push(InstanceQueues::Bolt(b));
        }
        for &v in q_out {
            instances.push(InstanceQueues::Spout(vec![SpoutQueue::Plain {
                target: ComponentId(0),
                total: v,
            }]));
        }
        QueueState { slot: 0, instances }
    }

    #[test]
    fn weighted_backlog_examples() {
        assert_eq!(weighted_backlog(&state_with(&[0], &[0]), 1.0), 0.0);
        assert_eq!(weighted_backlog(&state_with(&[5], &[4]), 2.0), 13.0);
        assert_eq!(weighted_backlog(&state_with(&[3, 2], &[1, 1, 1]), 1.0), 8.0);
    }

    proptest! {
        // A zero-length window behaves exactly like the plain recursion.
        #[test]
        fn zero_window_matches_plain_queue(arrivals in proptest::collection::vec(0u32..20, 1..60),
                                            extra in proptest::collection::vec(0u64..25, 60)) {
            let mut windowed_q = windowed(&[arrivals[0]]);
            let mut plain = arrivals[0] as u64;
            for t in 0..arrivals.len() {
                let next = arrivals.get(t + 1).copied().unwrap_or(0);
                // send everything that arrived plus whatever the cap allows
                let amount = windowed_q.total.min(windowed_q.rem[0] as u64 + extra[t]);
                let d = drain_output(&windowed_q, amount).unwrap();
                advance_spout_queue(&mut windowed_q, &d, next).unwrap();
                plain = advance_output(plain, amount, next as u64).unwrap();
                prop_assert_eq!(windowed_q.total, plain);
            }
        }

        #[test]
        fn advance_conserves_tuples(rem in proptest::collection::vec(0u32..10, 1..6), amount in 0u64..60, next in 0u32..10) {
            let mut q = windowed(&rem);
            let amount = amount.min(q.total).max(q.rem[0] as u64);
            let before = q.total;
            let d = drain_output(&q, amount).unwrap();
            prop_assert_eq!(d.iter().map(|&x| x as u64).sum::<u64>(), amount);
            prop_assert_eq!(d[0], q.rem[0]);
            advance_spout_queue(&mut q, &d, next).unwrap();
            prop_assert_eq!(q.total + amount, before + next as u64);
            prop_assert_eq!(q.total, q.rem.iter().map(|&x| x as u64).sum::<u64>());
        }
    }
}
