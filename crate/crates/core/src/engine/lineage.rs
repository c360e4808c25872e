//! Per-tuple lineage for the response-time metric.
//!
//! Every queued tuple is a token naming the root tuple it descends from. A
//! root counts its live tokens; once none are left and its arrival has been
//! revealed, its response time is the last processing slot of any descendant
//! minus its arrival slot, floored at zero.

use serde::{Deserialize, Serialize};

pub type RootId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootStatus {
    /// Forecast tuple whose slot has not arrived yet.
    Predicted,
    /// Forecast tuple confirmed by an actual arrival.
    Matched,
    /// Forecast tuple with no actual counterpart.
    Phantom,
    /// Arrival nobody forecast.
    Actual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Root {
    pub arrival: u64,
    pub status: RootStatus,
    pub outstanding: u32,
    pub completion: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub tuple_id: RootId,
    pub arrival_slot: u64,
    pub completion_slot: u64,
    pub resp: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Lineage {
    pub roots: Vec<Root>,
    /// Tokens ever created and destroyed.
    pub created: u64,
    pub destroyed: u64,
    pub responses: Vec<ResponseRecord>,
}

impl Lineage {
    /// A new root holding one token.
    pub fn spawn(&mut self, arrival: u64, status: RootStatus) -> RootId {
        let id = self.roots.len() as RootId;
        self.roots.push(Root {
            arrival,
            status,
            outstanding: 1,
            completion: None,
        });
        self.created += 1;
        id
    }

    /// A descendant token of `root`.
    pub fn fork(&mut self, root: RootId) {
        self.roots[root as usize].outstanding += 1;
        self.created += 1;
    }

    /// Consumes a token processed in `slot`.
    pub fn consume(&mut self, root: RootId, slot: u64) {
        let r = &mut self.roots[root as usize];
        r.completion = Some(r.completion.map_or(slot, |c| c.max(slot)));
        self.drop_token(root);
    }

    /// Removes a token without processing it.
    pub fn discard(&mut self, root: RootId) {
        self.drop_token(root);
    }

    fn drop_token(&mut self, root: RootId) {
        let r = &mut self.roots[root as usize];
        r.outstanding -= 1;
        self.destroyed += 1;
        if r.outstanding == 0 {
            self.try_finish(root);
        }
    }

    /// Records the response of a revealed, drained root.
    pub fn try_finish(&mut self, root: RootId) {
        let r = &self.roots[root as usize];
        if r.outstanding != 0 || !matches!(r.status, RootStatus::Matched | RootStatus::Actual) {
            return;
        }
        let Some(done) = r.completion else {
            return;
        };
        self.responses.push(ResponseRecord {
            tuple_id: root,
            arrival_slot: r.arrival,
            completion_slot: done,
            resp: done.saturating_sub(r.arrival),
        });
    }

    pub fn set_status(&mut self, root: RootId, status: RootStatus) {
        self.roots[root as usize].status = status;
    }

    pub fn live_tokens(&self) -> u64 {
        self.created - self.destroyed
    }

    /// Revealed non-phantom roots arriving in `[from, to)` that never finished.
    pub fn censored(&self, from: u64, to: u64) -> u64 {
        self.roots
            .iter()
            .filter(|r| {
                r.arrival >= from
                    && r.arrival < to
                    && matches!(r.status, RootStatus::Matched | RootStatus::Actual)
                    && r.outstanding > 0
            })
            .count() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_completes_at_last_stage() {
        let mut l = Lineage::default();
        let r = l.spawn(3, RootStatus::Actual);
        l.fork(r);
        l.consume(r, 4);
        l.fork(r);
        l.consume(r, 5);
        l.consume(r, 6);
        assert_eq!(l.responses.len(), 1);
        assert_eq!(l.responses[0].resp, 3);
        assert_eq!(l.live_tokens(), 0);
    }

    #[test]
    fn diamond_waits_for_both_branches() {
        let mut l = Lineage::default();
        let r = l.spawn(0, RootStatus::Actual);
        // the first bolt emits one tuple towards each branch
        l.fork(r);
        l.fork(r);
        l.consume(r, 1);
        l.consume(r, 2);
        assert!(l.responses.is_empty());
        l.consume(r, 5);
        assert_eq!(l.responses[0].completion_slot, 5);
    }

    #[test]
    fn phantom_never_reports() {
        let mut l = Lineage::default();
        let r = l.spawn(4, RootStatus::Predicted);
        l.consume(r, 2);
        l.set_status(r, RootStatus::Phantom);
        l.try_finish(r);
        assert!(l.responses.is_empty());
    }

    #[test]
    fn preserved_match_reports_zero() {
        let mut l = Lineage::default();
        let r = l.spawn(6, RootStatus::Predicted);
        l.consume(r, 4);
        assert!(l.responses.is_empty());
        l.set_status(r, RootStatus::Matched);
        l.try_finish(r);
        assert_eq!(l.responses[0].resp, 0);
    }
}
