//! Per-slot tuple scheduling.
//!
//! The per-slot subproblem separates by sender: each instance `i` chooses
//! `X_{i,i'}` for the instances `i'` of its successor components to minimise
//! `sum l_{i,i'} X_{i,i'}` under its transmission budget and per-component
//! output backlogs. [`SenderProblem`] is that separated problem.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SchedulerError;
use crate::ids::{ComponentId, InstanceId};
use crate::placement::Deployment;
use crate::queueing::QueueState;
use crate::topology::{CostMatrix, StreamSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Potus,
    Shuffle,
}

impl FromStr for SchedulerKind {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "potus" => Ok(SchedulerKind::Potus),
            "shuffle" => Ok(SchedulerKind::Shuffle),
            other => Err(SchedulerError::UnknownScheduler(other.to_string())),
        }
    }
}

/// When arrived spout tuples are forced out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushMode {
    /// Before any profitable transfer, within the sender's budget.
    #[default]
    Always,
    /// Only when the sender has no receiver with negative weight.
    EmptyCandidateOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    #[serde(rename = "V")]
    pub v: f64,
    pub beta: f64,
    #[serde(default)]
    pub flush_mode: FlushMode,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Receiver draws of the shuffle baseline.
    pub rng_seed: u64,
}

impl SchedulerConfig {
    pub fn potus(v: f64, beta: f64) -> Self {
        SchedulerConfig {
            kind: SchedulerKind::Potus,
            v,
            beta,
            flush_mode: FlushMode::Always,
            tie_break: TieBreak::LowestId,
            rng_seed: 0,
        }
    }

    pub fn shuffle(beta: f64, seed: u64) -> Self {
        SchedulerConfig {
            kind: SchedulerKind::Shuffle,
            v: 0.0,
            beta,
            flush_mode: FlushMode::Always,
            tie_break: TieBreak::LowestId,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.v.is_finite() && self.v >= 0.0) {
            return Err(format!("V must be a finite non-negative number, got {}", self.v));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(format!("beta must be positive, got {}", self.beta));
        }
        Ok(())
    }
}

/// `X(t)`: tuples per (sender, receiver) pair. Zero entries are not stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub slot: u64,
    pub x: BTreeMap<(InstanceId, InstanceId), u64>,
}

impl ScheduleDecision {
    pub fn get(&self, from: InstanceId, to: InstanceId) -> u64 {
        self.x.get(&(from, to)).copied().unwrap_or(0)
    }

    fn add(&mut self, from: InstanceId, to: InstanceId, n: u64) {
        if n > 0 {
            *self.x.entry((from, to)).or_insert(0) += n;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.x.values().sum()
    }

    pub fn sent_by(&self, i: InstanceId) -> u64 {
        self.x.range((i, InstanceId(0))..=(i, InstanceId(usize::MAX))).map(|(_, &n)| n).sum()
    }

    /// Tuples `i` sends to instances of component `c`.
    pub fn sent_to_component(&self, system: &StreamSystem, i: InstanceId, c: ComponentId) -> u64 {
        system.instances_of(c).iter().map(|&j| self.get(i, j)).sum()
    }

    /// `Theta(t) = sum X U`
    pub fn theta(&self, costs: &CostMatrix, dep: &Deployment) -> u64 {
        self.x
            .iter()
            .map(|(&(i, j), &n)| n * dep.cost(costs, i, j) as u64)
            .sum()
    }

    /// Successor, budget and backlog constraints against the slot-start state.
    pub fn check_feasible(&self, system: &StreamSystem, state: &QueueState) -> Result<(), String> {
        let mut per_sender: BTreeMap<InstanceId, u64> = BTreeMap::new();
        let mut per_target: BTreeMap<(InstanceId, ComponentId), u64> = BTreeMap::new();
        for (&(i, j), &n) in &self.x {
            let c = system.instance(j).component_id;
            if !system.successors(i).contains(&c) {
                return Err(format!("{i} sends to {j} outside its successor components"));
            }
            *per_sender.entry(i).or_insert(0) += n;
            *per_target.entry((i, c)).or_insert(0) += n;
        }
        for (i, n) in per_sender {
            let gamma = system.instance(i).tx_capacity as u64;
            if n > gamma {
                return Err(format!("{i} sends {n} tuples over budget {gamma}"));
            }
        }
        for ((i, c), n) in per_target {
            let q = state.q_out(i, c);
            if n > q {
                return Err(format!("{i} sends {n} tuples towards {c} holding only {q}"));
            }
        }
        Ok(())
    }
}

/// `l_{i,i'} = V U + Q_in_{i'} - beta Q_out_{i,c'}`
#[inline]
pub fn link_weight(v: f64, cost_u: u32, q_in_receiver: u64, q_out_sender: u64, beta: f64) -> f64 {
    v * cost_u as f64 + q_in_receiver as f64 - beta * q_out_sender as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub id: InstanceId,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGroup {
    pub component: ComponentId,
    pub q_out: u64,
    /// Arrived tuples that must leave this slot; zero for bolts.
    pub rem0: u64,
    /// Ascending instance id.
    pub receivers: Vec<Receiver>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderProblem {
    pub sender: InstanceId,
    pub gamma: u64,
    /// Ascending component id.
    pub groups: Vec<TargetGroup>,
}

impl SenderProblem {
    pub fn has_candidates(&self) -> bool {
        self.groups.iter().flat_map(|g| &g.receivers).any(|r| r.l < 0.0)
    }

    /// Minimum tuples per group that the forced flush requires. The budget
    /// is handed out in ascending component order.
    pub fn flush_floors(&self, mode: FlushMode) -> Vec<u64> {
        if mode == FlushMode::EmptyCandidateOnly && self.has_candidates() {
            return vec![0; self.groups.len()];
        }
        let mut budget = self.gamma;
        self.groups
            .iter()
            .map(|g| {
                let f = g.rem0.min(g.q_out).min(budget);
                budget -= f;
                f
            })
            .collect()
    }

    /// `sum l X` of an allocation for this sender.
    pub fn objective(&self, alloc: &[(InstanceId, u64)]) -> f64 {
        let l: BTreeMap<InstanceId, f64> = self
            .groups
            .iter()
            .flat_map(|g| g.receivers.iter().map(|r| (r.id, r.l)))
            .collect();
        alloc.iter().map(|(j, n)| l[j] * *n as f64).sum()
    }
}

/// Builds the separated subproblems. `q_in_view` is the receivers' input
/// backlog as the senders see it.
pub fn sender_problems(
    system: &StreamSystem,
    state: &QueueState,
    q_in_view: &[u64],
    costs: &CostMatrix,
    dep: &Deployment,
    cfg: &SchedulerConfig,
) -> Vec<SenderProblem> {
    system
        .instances
        .iter()
        .filter(|inst| !system.is_terminal(inst.id))
        .map(|inst| {
            let i = inst.id;
            let groups = system
                .successors(i)
                .iter()
                .map(|&c| {
                    let q_out = state.q_out(i, c);
                    TargetGroup {
                        component: c,
                        q_out,
                        rem0: crate::queueing::forced_flush_set(state, i, c),
                        receivers: system
                            .instances_of(c)
                            .iter()
                            .map(|&j| Receiver {
                                id: j,
                                l: link_weight(cfg.v, dep.cost(costs, i, j), q_in_view[j.index()], q_out, cfg.beta),
                            })
                            .collect(),
                    }
                })
                .collect();
            SenderProblem {
                sender: i,
                gamma: inst.tx_capacity as u64,
                groups,
            }
        })
        .collect()
}

/// Greedy per-sender schedule: forced flush onto the cheapest receivers,
/// then profitable receivers in ascending weight.
pub fn potus_sender(p: &SenderProblem, mode: FlushMode) -> Vec<(InstanceId, u64)> {
    let floors = p.flush_floors(mode);
    let mut alloc: BTreeMap<InstanceId, u64> = BTreeMap::new();
    let mut sent_group = vec![0u64; p.groups.len()];
    let mut sent = 0u64;

    for (g, (group, &f)) in p.groups.iter().zip(&floors).enumerate() {
        if f == 0 {
            continue;
        }
        let lmin = group.receivers.iter().map(|r| r.l).fold(f64::INFINITY, f64::min);
        let tied: Vec<InstanceId> = group.receivers.iter().filter(|r| r.l == lmin).map(|r| r.id).collect();
        let n = tied.len() as u64;
        for (k, &j) in tied.iter().enumerate() {
            let share = f / n + u64::from((k as u64) < f % n);
            if share > 0 {
                *alloc.entry(j).or_insert(0) += share;
            }
        }
        sent_group[g] = f;
        sent += f;
    }

    let mut candidates: Vec<(f64, InstanceId, usize)> = p
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| group.receivers.iter().filter(|r| r.l < 0.0).map(move |r| (r.l, r.id, g)))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (_, j, g) in candidates {
        if sent >= p.gamma {
            break;
        }
        let n = (p.gamma - sent).min(p.groups[g].q_out - sent_group[g]);
        if n > 0 {
            *alloc.entry(j).or_insert(0) += n;
            sent_group[g] += n;
            sent += n;
        }
    }
    alloc.into_iter().collect()
}

fn merge(slot: u64, parts: impl IntoIterator<Item = (InstanceId, Vec<(InstanceId, u64)>)>) -> ScheduleDecision {
    let mut d = ScheduleDecision {
        slot,
        x: BTreeMap::new(),
    };
    for (i, alloc) in parts {
        for (j, n) in alloc {
            d.add(i, j, n);
        }
    }
    d
}

pub fn potus_schedule(
    state: &QueueState,
    costs: &CostMatrix,
    cfg: &SchedulerConfig,
    system: &StreamSystem,
    dep: &Deployment,
) -> ScheduleDecision {
    let view: Vec<u64> = (0..system.num_instances()).map(|j| state.q_in(InstanceId(j))).collect();
    potus_schedule_with_view(state, &view, costs, cfg, system, dep)
}

/// As [`potus_schedule`] with receivers' input backlogs taken from `q_in_view`.
pub fn potus_schedule_with_view(
    state: &QueueState,
    q_in_view: &[u64],
    costs: &CostMatrix,
    cfg: &SchedulerConfig,
    system: &StreamSystem,
    dep: &Deployment,
) -> ScheduleDecision {
    let problems = sender_problems(system, state, q_in_view, costs, dep, cfg);
    merge(
        state.slot,
        problems.iter().map(|p| (p.sender, potus_sender(p, cfg.flush_mode))),
    )
}

/// Baseline: arrived spout tuples first, then the remaining budget shared
/// evenly over successor components, each tuple to a uniformly random
/// instance. Draws depend only on `(seed, slot)`.
pub fn shuffle_schedule(state: &QueueState, system: &StreamSystem, seed: u64) -> ScheduleDecision {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(state.slot);
    let mut d = ScheduleDecision {
        slot: state.slot,
        x: BTreeMap::new(),
    };
    for inst in &system.instances {
        let i = inst.id;
        let succ = system.successors(i);
        if succ.is_empty() {
            continue;
        }
        let mut budget = inst.tx_capacity as u64;
        let mut counts: Vec<u64> = Vec::with_capacity(succ.len());
        let mut residual: Vec<u64> = Vec::with_capacity(succ.len());
        for &c in succ {
            let q = state.q_out(i, c);
            let f = crate::queueing::forced_flush_set(state, i, c).min(q).min(budget);
            budget -= f;
            counts.push(f);
            residual.push(q - f);
        }
        water_fill(&mut counts, &mut residual, budget);
        for (&c, &n) in succ.iter().zip(&counts) {
            let receivers = system.instances_of(c);
            for _ in 0..n {
                let j = receivers[rng.random_range(0..receivers.len())];
                d.add(i, j, 1);
            }
        }
    }
    d
}

/// Hands out `budget` one tuple at a time round-robin over groups with
/// residual backlog.
fn water_fill(counts: &mut [u64], residual: &mut [u64], mut budget: u64) {
    while budget > 0 {
        let open: Vec<usize> = (0..residual.len()).filter(|&g| residual[g] > 0).collect();
        if open.is_empty() {
            break;
        }
        let level = open.iter().map(|&g| residual[g]).min().unwrap();
        let full_round = open.len() as u64;
        if budget >= full_round * level {
            for &g in &open {
                counts[g] += level;
                residual[g] -= level;
            }
            budget -= full_round * level;
        } else {
            let each = budget / full_round;
            let extra = budget % full_round;
            for (k, &g) in open.iter().enumerate() {
                let n = each + u64::from((k as u64) < extra);
                counts[g] += n;
                residual[g] -= n;
            }
            budget = 0;
        }
    }
}

/// Exact per-sender minimiser by enumeration: every feasible per-group total,
/// and for each total every split over the group's receivers.
pub fn oracle_sender(
    p: &SenderProblem,
    mode: FlushMode,
    max_search: u64,
) -> Result<(Vec<(InstanceId, u64)>, f64), SchedulerError> {
    let floors = p.flush_floors(mode);
    let hi: Vec<u64> = p.groups.iter().map(|g| g.q_out.min(p.gamma)).collect();

    let mut size: u64 = 1;
    for (g, group) in p.groups.iter().enumerate() {
        size = size.saturating_mul(hi[g] - floors[g] + 1);
        for t in floors[g]..=hi[g] {
            size = size.saturating_add(compositions(t, group.receivers.len() as u64));
        }
    }
    if size > max_search {
        return Err(SchedulerError::SearchSpaceTooLarge {
            sender: p.sender,
            size,
            limit: max_search,
        });
    }

    // best split of each total within each group
    let tables: Vec<Vec<(f64, Vec<u64>)>> = p
        .groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            (0..=hi[g])
                .map(|t| {
                    let mut best = (f64::INFINITY, Vec::new());
                    let mut split = vec![0u64; group.receivers.len()];
                    enumerate_splits(t, 0, &mut split, &mut |s| {
                        let cost: f64 = s.iter().zip(&group.receivers).map(|(&n, r)| n as f64 * r.l).sum();
                        if cost < best.0 {
                            best = (cost, s.to_vec());
                        }
                    });
                    best
                })
                .collect()
        })
        .collect();

    let mut best_cost = f64::INFINITY;
    let mut best_totals = Vec::new();
    let mut totals = vec![0u64; p.groups.len()];
    search_totals(p, &floors, &hi, &tables, 0, 0, 0.0, &mut totals, &mut best_cost, &mut best_totals);

    let mut alloc: Vec<(InstanceId, u64)> = Vec::new();
    for (g, &t) in best_totals.iter().enumerate() {
        for (n, r) in tables[g][t as usize].1.iter().zip(&p.groups[g].receivers) {
            if *n > 0 {
                alloc.push((r.id, *n));
            }
        }
    }
    alloc.sort();
    Ok((alloc, best_cost))
}

#[allow(clippy::too_many_arguments)]
fn search_totals(
    p: &SenderProblem,
    floors: &[u64],
    hi: &[u64],
    tables: &[Vec<(f64, Vec<u64>)>],
    g: usize,
    used: u64,
    cost: f64,
    totals: &mut Vec<u64>,
    best_cost: &mut f64,
    best_totals: &mut Vec<u64>,
) {
    if g == p.groups.len() {
        if cost < *best_cost {
            *best_cost = cost;
            *best_totals = totals.clone();
        }
        return;
    }
    for t in floors[g]..=hi[g] {
        if used + t > p.gamma {
            break;
        }
        totals[g] = t;
        let c = cost + tables[g][t as usize].0;
        search_totals(p, floors, hi, tables, g + 1, used + t, c, totals, best_cost, best_totals);
    }
}

fn enumerate_splits(left: u64, k: usize, split: &mut [u64], visit: &mut impl FnMut(&[u64])) {
    if k + 1 == split.len() {
        split[k] = left;
        visit(split);
        return;
    }
    for n in 0..=left {
        split[k] = n;
        enumerate_splits(left - n, k + 1, split, visit);
    }
}

/// Number of ways to write `t` as an ordered sum of `k` non-negative parts.
fn compositions(t: u64, k: u64) -> u64 {
    if k == 0 {
        return u64::from(t == 0);
    }
    // C(t + k - 1, k - 1)
    let mut c: u64 = 1;
    for m in 1..k {
        c = c.saturating_mul(t + m) / m;
    }
    c
}

/// Whole-slot oracle over every sender.
pub fn subproblem_oracle(
    state: &QueueState,
    costs: &CostMatrix,
    cfg: &SchedulerConfig,
    system: &StreamSystem,
    dep: &Deployment,
    max_search: u64,
) -> Result<(ScheduleDecision, f64), SchedulerError> {
    let view: Vec<u64> = (0..system.num_instances()).map(|j| state.q_in(InstanceId(j))).collect();
    let problems = sender_problems(system, state, &view, costs, dep, cfg);
    let mut total = 0.0;
    let mut parts = Vec::with_capacity(problems.len());
    for p in &problems {
        let (alloc, obj) = oracle_sender(p, cfg.flush_mode, max_search)?;
        total += obj;
        parts.push((p.sender, alloc));
    }
    Ok((merge(state.slot, parts), total))
}

/// `sum l X` of a whole decision.
pub fn decision_objective(problems: &[SenderProblem], d: &ScheduleDecision) -> f64 {
    problems
        .iter()
        .map(|p| {
            let alloc: Vec<(InstanceId, u64)> = p
                .groups
                .iter()
                .flat_map(|g| &g.receivers)
                .map(|r| (r.id, d.get(p.sender, r.id)))
                .collect();
            p.objective(&alloc)
        })
        .sum()
}
