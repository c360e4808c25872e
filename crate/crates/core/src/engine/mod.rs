//! The slot loop.
//!
//! Each slot: reveal arrivals and reconcile forecasts, snapshot the queues and
//! schedule, apply the sends, let bolts process, shift the spout windows, log.
//! Two layers run side by side: the integer backlogs of [`QueueState`] and a
//! token layer that names the root tuple behind every queued tuple. They are
//! cross-checked every slot.

mod lineage;
mod metrics;
pub mod output;
pub mod sweep;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use lineage::{Lineage, ResponseRecord, Root, RootId, RootStatus};
pub use metrics::{RunResult, SlotMetrics, SlotTrace};

use crate::error::EngineError;
use crate::ids::{ComponentId, InstanceId};
use crate::placement::Deployment;
use crate::prediction::{make_predictor, reconcile, ForecastTable, PredictionScheme, Predictor, PredictorStats};
use crate::queueing::{
    advance_bolt_input, advance_bolt_output, advance_output, advance_spout_queue, drain_output, weighted_backlog,
    QueueState, SpoutQueue,
};
use crate::scheduler::{potus_schedule_with_view, shuffle_schedule, FlushMode, ScheduleDecision, SchedulerConfig, SchedulerKind};
use crate::topology::{Cluster, CostMatrix, StreamSystem};
use crate::workload::Workload;

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct PredictionSetup {
    /// `false` runs spouts with plain queues and no window at all.
    pub enabled: bool,
    pub scheme: PredictionScheme,
    pub seed: u64,
    pub replay: Option<Arc<ForecastTable>>,
}

/// Every seed a run depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Seeds {
    pub cluster: u64,
    pub apps: u64,
    pub placement: u64,
    pub workload: u64,
    pub prediction: u64,
    pub scheduler: u64,
}

/// A fully built experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: StreamSystem,
    pub cluster: Cluster,
    pub deployment: Deployment,
    pub costs: CostMatrix,
    pub workload: Workload,
    /// Window size per application.
    pub windows: Vec<usize>,
    pub prediction: PredictionSetup,
    pub scheduler: SchedulerConfig,
    pub horizon: u64,
    pub warmup_fraction: f64,
    pub lambda_max: u32,
    /// Slots by which senders see receivers' input backlogs late.
    pub metrics_staleness: usize,
    pub seeds: Seeds,
    pub config_hash: String,
}

impl Scenario {
    pub fn warmup_slots(&self) -> u64 {
        (self.horizon as f64 * self.warmup_fraction).floor() as u64
    }

    /// Window of each spout instance.
    pub fn instance_windows(&self) -> Vec<usize> {
        self.system
            .instances
            .iter()
            .map(|inst| self.windows[self.system.app_of(inst.id).index()])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep the queue state, decision and processed counts of every slot.
    pub record_trace: bool,
}

#[derive(Default)]
struct Cell {
    waiting: VecDeque<RootId>,
    /// Leading `waiting` tokens that arrived in earlier slots.
    carried: usize,
    /// Forecast tuples already sent ahead of their slot.
    dispatched: Vec<RootId>,
}

struct SpoutStream {
    spout: InstanceId,
    target: ComponentId,
    window: usize,
    /// Index into the workload streams.
    source: usize,
    cells: VecDeque<Cell>,
    predictor: Option<Box<dyn Predictor>>,
    /// Forecast held for each future slot still in the window.
    forecasts: VecDeque<u32>,
    served: Vec<u32>,
}

struct BoltTokens {
    backlog: VecDeque<RootId>,
    in_flight: Vec<RootId>,
    staged: Vec<RootId>,
    outputs: BTreeMap<ComponentId, VecDeque<RootId>>,
    acc: BTreeMap<ComponentId, f64>,
    sent: BTreeMap<ComponentId, u64>,
}

struct Engine<'a> {
    sc: &'a Scenario,
    state: QueueState,
    streams: Vec<SpoutStream>,
    /// Stream indices per spout instance, in successor order.
    stream_of: BTreeMap<(InstanceId, ComponentId), usize>,
    bolts: BTreeMap<InstanceId, BoltTokens>,
    lineage: Lineage,
    stats: PredictorStats,
    q_in_history: VecDeque<Vec<u64>>,
    digest: Sha256,
    totals: Totals,
}

#[derive(Default, Clone, Copy)]
struct Totals {
    matched: u64,
    phantom: u64,
    phantom_purged: u64,
    unpredicted: u64,
}

/// Simulates `scenario.horizon` slots.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunResult, EngineError> {
    let mut engine = Engine::new(scenario)?;
    let warm = scenario.warmup_slots();
    let mut series = Vec::with_capacity(scenario.horizon as usize);
    let mut trace = opts.record_trace.then(Vec::new);
    for t in 0..scenario.horizon {
        let m = engine.step(t, trace.as_mut())?;
        series.push(m);
    }
    Ok(metrics::summarize(scenario, engine.finish(), series, trace, warm))
}

pub(crate) struct Finished {
    pub lineage: Lineage,
    pub stats: PredictorStats,
    pub digest: String,
    pub matched: u64,
    pub phantom: u64,
    pub phantom_purged: u64,
    pub unpredicted: u64,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, EngineError> {
        sc.scheduler.validate().map_err(EngineError::Scenario)?;
        if sc.horizon == 0 {
            return Err(EngineError::Scenario("horizon must be at least 1 slot".into()));
        }
        let sys = &sc.system;
        let inst_windows = sc.instance_windows();
        let windowed = sc.prediction.enabled;
        let state = QueueState::empty(sys, windowed.then_some(&inst_windows[..]));
        let mut engine = Engine {
            sc,
            state,
            streams: Vec::new(),
            stream_of: BTreeMap::new(),
            bolts: BTreeMap::new(),
            lineage: Lineage::default(),
            stats: PredictorStats::default(),
            q_in_history: VecDeque::new(),
            digest: Sha256::new(),
            totals: Totals::default(),
        };

        for i in sys.spout_instances() {
            for &c in sys.successors(i) {
                let source = sc
                    .workload
                    .streams
                    .iter()
                    .position(|s| s.spout == i && s.target == c)
                    .ok_or_else(|| EngineError::Scenario(format!("no arrival stream for {i} -> {c}")))?;
                let window = if windowed { inst_windows[i.index()] } else { 0 };
                let stream_seed = sc
                    .prediction
                    .seed
                    .wrapping_add((engine.streams.len() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let predictor = (windowed && window > 0).then(|| {
                    make_predictor(
                        &sc.prediction.scheme,
                        &sc.workload.streams[source],
                        window,
                        sc.lambda_max,
                        stream_seed,
                        sc.prediction.replay.as_ref(),
                    )
                });
                engine.stream_of.insert((i, c), engine.streams.len());
                engine.streams.push(SpoutStream {
                    spout: i,
                    target: c,
                    window,
                    source,
                    cells: (0..=window).map(|_| Cell::default()).collect(),
                    predictor,
                    forecasts: VecDeque::new(),
                    served: vec![0; window + 1],
                });
            }
        }
        for inst in &sys.instances {
            if sys.is_spout(inst.id) {
                continue;
            }
            let succ = sys.successors(inst.id);
            engine.bolts.insert(
                inst.id,
                BoltTokens {
                    backlog: VecDeque::new(),
                    in_flight: Vec::new(),
                    staged: Vec::new(),
                    outputs: succ.iter().map(|&c| (c, VecDeque::new())).collect(),
                    acc: succ.iter().map(|&c| (c, 0.0)).collect(),
                    sent: succ.iter().map(|&c| (c, 0)).collect(),
                },
            );
        }

        // initial windows: slot 0 is revealed, slots 1..=W are forecast
        if windowed {
            for s in 0..engine.streams.len() {
                let w = engine.streams[s].window;
                let mut cells = vec![0u32; w + 1];
                for (slot, cell) in cells.iter_mut().enumerate().skip(1) {
                    *cell = engine.forecast_into(s, slot as u64, slot);
                }
                let (i, c) = (engine.streams[s].spout, engine.streams[s].target);
                if let Some(SpoutQueue::Windowed(q)) = engine.state.spout_queue_mut(i, c) {
                    q.fill(&cells);
                }
            }
        }
        Ok(engine)
    }

    /// Asks the predictor about `slot` and fills window cell `cell` with that
    /// many forecast tuples.
    fn forecast_into(&mut self, s: usize, slot: u64, cell: usize) -> u32 {
        let f = self.streams[s].predictor.as_mut().map_or(0, |p| p.forecast(slot));
        for _ in 0..f {
            let id = self.lineage.spawn(slot, RootStatus::Predicted);
            self.streams[s].cells[cell].waiting.push_back(id);
        }
        self.streams[s].forecasts.push_back(f);
        f
    }

    fn fail(&self, slot: u64, message: String) -> EngineError {
        EngineError::Invariant {
            slot,
            message,
            dump: serde_json::to_string(&self.state).unwrap_or_default(),
        }
    }

    fn step(&mut self, t: u64, trace: Option<&mut Vec<SlotTrace>>) -> Result<SlotMetrics, EngineError> {
        self.state.slot = t;
        let responses_before = self.lineage.responses.len();
        let phantom_before = self.totals.phantom;

        self.reveal(t)?;

        // snapshot and decide
        let h = weighted_backlog(&self.state, self.sc.scheduler.beta);
        let decision = self.decide(t);
        decision
            .check_feasible(&self.sc.system, &self.state)
            .map_err(|m| self.fail(t, m))?;
        let snapshot = trace.is_some().then(|| self.state.clone());
        let theta = decision.theta(&self.sc.costs, &self.sc.deployment);
        self.absorb_digest(&decision);

        self.send(t, &decision)?;
        let processed = self.process(t)?;
        self.shift_windows(t)?;
        self.check_consistency(t)?;

        if let Some(tr) = trace {
            tr.push(SlotTrace {
                state: snapshot.unwrap(),
                decision,
                processed,
            });
        }
        let done = &self.lineage.responses[responses_before..];
        Ok(SlotMetrics {
            slot: t,
            theta,
            h,
            completions: done.len() as u64,
            resp_sum: done.iter().map(|r| r.resp).sum(),
            phantom: self.totals.phantom - phantom_before,
        })
    }

    fn reveal(&mut self, t: u64) -> Result<(), EngineError> {
        for s in 0..self.streams.len() {
            let actual = self.sc.workload.streams[self.streams[s].source].at(t);
            let (i, c) = (self.streams[s].spout, self.streams[s].target);
            if !self.sc.prediction.enabled {
                for _ in 0..actual {
                    let id = self.lineage.spawn(t, RootStatus::Actual);
                    self.streams[s].cells[0].waiting.push_back(id);
                }
                if let Some(SpoutQueue::Plain { total, .. }) = self.state.spout_queue_mut(i, c) {
                    *total += actual as u64;
                }
                self.totals.unpredicted += actual as u64;
                continue;
            }

            let stream = &mut self.streams[s];
            if stream.window > 0 && t > 0 {
                let f = stream.forecasts.pop_front().expect("forecast for the current slot");
                self.stats.record(f, actual);
            }
            if let Some(p) = stream.predictor.as_mut() {
                p.observe(actual);
            }
            let cell = &mut stream.cells[0];
            let carried = cell.carried;
            let predicted = (cell.dispatched.len() + cell.waiting.len() - carried) as u32;
            let rec = reconcile(predicted, actual);
            // dispatched tuples are matched first, then waiting ones
            let order: Vec<RootId> = cell
                .dispatched
                .drain(..)
                .chain(cell.waiting.iter().skip(carried).copied())
                .collect();
            let waiting_start = order.len() - (cell.waiting.len() - carried);
            let mut purged = 0u32;
            for (k, &id) in order.iter().enumerate() {
                if (k as u32) < rec.matched {
                    self.lineage.set_status(id, RootStatus::Matched);
                    self.lineage.try_finish(id);
                } else {
                    self.lineage.set_status(id, RootStatus::Phantom);
                    if k >= waiting_start {
                        purged += 1;
                    }
                }
            }
            for _ in 0..purged {
                let id = cell.waiting.pop_back().expect("purged tuple is waiting");
                self.lineage.discard(id);
            }
            for _ in 0..rec.unpredicted {
                let id = self.lineage.spawn(t, RootStatus::Actual);
                cell.waiting.push_back(id);
            }
            self.totals.matched += rec.matched as u64;
            self.totals.phantom += rec.phantom as u64;
            self.totals.phantom_purged += purged as u64;
            self.totals.unpredicted += rec.unpredicted as u64;
            match self.state.spout_queue_mut(i, c) {
                Some(SpoutQueue::Windowed(q)) => {
                    let r = q.reveal(actual, purged, rec.unpredicted, carried as u32);
                    r.map_err(|e| self.fail(t, e.to_string()))?;
                }
                _ => return Err(self.fail(t, format!("{i} has no windowed queue towards {c}"))),
            }
        }
        Ok(())
    }

    fn decide(&mut self, t: u64) -> ScheduleDecision {
        let sc = self.sc;
        match sc.scheduler.kind {
            SchedulerKind::Shuffle => shuffle_schedule(&self.state, &sc.system, sc.scheduler.rng_seed),
            SchedulerKind::Potus => {
                let now: Vec<u64> = (0..sc.system.num_instances())
                    .map(|j| self.state.q_in(InstanceId(j)))
                    .collect();
                self.q_in_history.push_back(now);
                while self.q_in_history.len() > sc.metrics_staleness + 1 {
                    self.q_in_history.pop_front();
                }
                let view = self.q_in_history.front().unwrap();
                let mut d = potus_schedule_with_view(&self.state, view, &sc.costs, &sc.scheduler, &sc.system, &sc.deployment);
                d.slot = t;
                d
            }
        }
    }

    fn absorb_digest(&mut self, d: &ScheduleDecision) {
        self.digest.update(d.slot.to_le_bytes());
        for (&(i, j), &n) in &d.x {
            self.digest.update((i.index() as u64).to_le_bytes());
            self.digest.update((j.index() as u64).to_le_bytes());
            self.digest.update(n.to_le_bytes());
        }
    }

    fn send(&mut self, t: u64, d: &ScheduleDecision) -> Result<(), EngineError> {
        let sc = self.sc;
        let sys = &sc.system;
        for b in self.bolts.values_mut() {
            b.sent.values_mut().for_each(|v| *v = 0);
        }
        for s in &mut self.streams {
            s.served.iter_mut().for_each(|v| *v = 0);
        }
        for inst in &sys.instances {
            let i = inst.id;
            for &c in sys.successors(i) {
                let receivers = sys.instances_of(c);
                let amounts: Vec<u64> = receivers.iter().map(|&j| d.get(i, j)).collect();
                let n: u64 = amounts.iter().sum();
                if n == 0 {
                    continue;
                }
                let tokens = if sys.is_spout(i) {
                    self.take_from_spout(t, i, c, n)?
                } else {
                    let held = self.bolts[&i].outputs[&c].len();
                    if (held as u64) < n {
                        return Err(self.fail(t, format!("{i} sends {n} towards {c} but holds {held} tokens")));
                    }
                    let b = self.bolts.get_mut(&i).unwrap();
                    let q = b.outputs.get_mut(&c).unwrap();
                    *b.sent.get_mut(&c).unwrap() += n;
                    q.drain(..n as usize).collect::<Vec<_>>()
                };
                let mut it = tokens.into_iter();
                for (&j, &a) in receivers.iter().zip(&amounts) {
                    let dst = self.bolts.get_mut(&j).unwrap();
                    dst.staged.extend(it.by_ref().take(a as usize));
                }
            }
        }
        Ok(())
    }

    fn take_from_spout(&mut self, t: u64, i: InstanceId, c: ComponentId, n: u64) -> Result<Vec<RootId>, EngineError> {
        let s = self.stream_of[&(i, c)];
        if !self.sc.prediction.enabled {
            if (self.streams[s].cells[0].waiting.len() as u64) < n {
                return Err(self.fail(t, format!("{i} sends {n} towards {c} beyond its backlog")));
            }
            let stream = &mut self.streams[s];
            stream.served[0] = n as u32;
            return Ok(stream.cells[0].waiting.drain(..n as usize).collect());
        }
        let served = match self.state.spout_queue(i, c) {
            Some(SpoutQueue::Windowed(q)) => drain_output(q, n).map_err(|e| self.fail(t, e.to_string()))?,
            _ => return Err(self.fail(t, format!("{i} has no windowed queue towards {c}"))),
        };
        let stream = &mut self.streams[s];
        let mut out = Vec::with_capacity(n as usize);
        for (w, &k) in served.iter().enumerate() {
            let cell = &mut stream.cells[w];
            for _ in 0..k {
                let id = cell.waiting.pop_front().expect("token layer mirrors window cells");
                if w > 0 {
                    cell.dispatched.push(id);
                }
                out.push(id);
            }
        }
        stream.served = served;
        Ok(out)
    }

    fn process(&mut self, t: u64) -> Result<Vec<u64>, EngineError> {
        let sc = self.sc;
        let sys = &sc.system;
        let mut processed_counts = vec![0u64; sys.num_instances()];
        let ids: Vec<InstanceId> = self.bolts.keys().copied().collect();
        for i in ids {
            let inst = sys.instance(i);
            let q = self.state.bolt_mut(i).expect("bolt queues");
            let p = advance_bolt_input(q, inst.proc_capacity);
            processed_counts[i.index()] = p;

            let b = self.bolts.get_mut(&i).unwrap();
            let mut taken: Vec<RootId> = Vec::with_capacity(p as usize);
            while (taken.len() as u64) < p {
                match b.backlog.pop_front() {
                    Some(id) => taken.push(id),
                    None => break,
                }
            }
            let from_flight = p as usize - taken.len();
            if from_flight > b.in_flight.len() {
                return Err(self.fail(t, format!("{i} processed {p} tuples beyond its tokens")));
            }
            taken.extend(b.in_flight.drain(..from_flight));
            b.backlog.extend(b.in_flight.drain(..));
            b.in_flight = std::mem::take(&mut b.staged);

            let mut generated: Vec<(ComponentId, u64)> = Vec::new();
            for (&c, &g) in &inst.gen_ratio {
                let acc = b.acc.get_mut(&c).unwrap();
                *acc += p as f64 * g;
                let nu = (*acc + 1e-9).floor().max(0.0);
                *acc -= nu;
                let nu = nu as u64;
                let out = b.outputs.get_mut(&c).unwrap();
                for k in 0..nu {
                    let root = taken[(k % p.max(1)) as usize];
                    out.push_back(root);
                    self.lineage.fork(root);
                }
                generated.push((c, nu));
            }
            for &root in &taken {
                self.lineage.consume(root, t);
            }
            let staged = b.in_flight.len() as u64;
            let sent: Vec<(ComponentId, u64)> = b.sent.iter().map(|(&c, &n)| (c, n)).collect();
            let q = self.state.bolt_mut(i).unwrap();
            q.in_flight = staged;
            for ((c, nu), (_, n)) in generated.into_iter().zip(sent) {
                if let Err(e) = advance_bolt_output(q, c, n, nu) {
                    return Err(self.fail(t, e.to_string()));
                }
            }
        }
        Ok(processed_counts)
    }

    fn shift_windows(&mut self, t: u64) -> Result<(), EngineError> {
        let literal = self.sc.scheduler.flush_mode == FlushMode::EmptyCandidateOnly;
        for s in 0..self.streams.len() {
            let (i, c) = (self.streams[s].spout, self.streams[s].target);
            if !self.sc.prediction.enabled {
                let sent = self.streams[s].served[0] as u64;
                let r = match self.state.spout_queue_mut(i, c) {
                    Some(SpoutQueue::Plain { total, .. }) => advance_output(*total, sent, 0).map(|v| *total = v),
                    _ => Ok(()),
                };
                r.map_err(|e| self.fail(t, e.to_string()))?;
                continue;
            }
            let w = self.streams[s].window;
            // arrived tuples left behind by a literal-mode flush move along
            let leftover: VecDeque<RootId> = if literal {
                std::mem::take(&mut self.streams[s].cells[0].waiting)
            } else {
                VecDeque::new()
            };
            let old = self.streams[s].cells.pop_front().unwrap();
            if !old.waiting.is_empty() {
                return Err(self.fail(t, format!("{i} left {} arrived tuples towards {c} unsent", old.waiting.len())));
            }
            self.streams[s].cells.push_back(Cell::default());
            let next = if w > 0 {
                self.forecast_into(s, t + w as u64 + 1, w)
            } else {
                0
            };
            let served = self.streams[s].served.clone();
            let carry = leftover.len() as u32;
            {
                let head = &mut self.streams[s].cells[0];
                head.carried = leftover.len();
                for id in leftover.into_iter().rev() {
                    head.waiting.push_front(id);
                }
            }
            let Some(SpoutQueue::Windowed(q)) = self.state.spout_queue_mut(i, c) else {
                return Err(self.fail(t, format!("{i} has no windowed queue towards {c}")));
            };
            let mut served = served;
            served[0] += carry;
            let r = advance_spout_queue(q, &served, next).and_then(|_| {
                if carry > 0 {
                    q.rem[0] += carry;
                    q.recorded[0] += carry;
                    q.total += carry as u64;
                }
                q.check()
            });
            r.map_err(|e| self.fail(t, e.to_string()))?;
        }
        Ok(())
    }

    /// Token layer against integer backlogs, and the global token ledger.
    fn check_consistency(&self, t: u64) -> Result<(), EngineError> {
        let mut live = 0u64;
        for s in &self.streams {
            let held: Vec<u64> = s.cells.iter().map(|c| c.waiting.len() as u64).collect();
            live += held.iter().sum::<u64>();
            match self.state.spout_queue(s.spout, s.target) {
                Some(SpoutQueue::Windowed(q)) => {
                    let counts: Vec<u64> = q.rem.iter().map(|&x| x as u64).collect();
                    if counts != held {
                        return Err(self.fail(t, format!("{}->{} cells {:?} but tokens {:?}", s.spout, s.target, counts, held)));
                    }
                }
                Some(SpoutQueue::Plain { total, .. }) => {
                    if *total != held[0] {
                        return Err(self.fail(t, format!("{}->{} backlog {} but tokens {}", s.spout, s.target, total, held[0])));
                    }
                }
                None => return Err(self.fail(t, format!("missing queue {}->{}", s.spout, s.target))),
            }
        }
        for (&i, b) in &self.bolts {
            let q = self.state.bolt(i).unwrap();
            if q.input_backlog != b.backlog.len() as u64 || q.in_flight != b.in_flight.len() as u64 {
                return Err(self.fail(t, format!("{i} input counts disagree with tokens")));
            }
            for (c, toks) in &b.outputs {
                if q.output_backlogs[c] != toks.len() as u64 {
                    return Err(self.fail(t, format!("{i}->{c} output counts disagree with tokens")));
                }
            }
            live += (b.backlog.len() + b.in_flight.len()) as u64;
            live += b.outputs.values().map(|q| q.len() as u64).sum::<u64>();
        }
        if live != self.lineage.live_tokens() {
            return Err(self.fail(
                t,
                format!(
                    "conservation: {} tuples queued, ledger says {} created - {} destroyed",
                    live, self.lineage.created, self.lineage.destroyed
                ),
            ));
        }
        Ok(())
    }

    fn finish(self) -> Finished {
        Finished {
            lineage: self.lineage,
            stats: self.stats,
            digest: hex::encode(self.digest.finalize()),
            matched: self.totals.matched,
            phantom: self.totals.phantom,
            phantom_purged: self.totals.phantom_purged,
            unpredicted: self.totals.unpredicted,
        }
    }
}
