//! Fixed instance-to-container assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PlacementError;
use crate::ids::{ContainerId, InstanceId, ServerId};
use crate::topology::{CostMatrix, StreamSystem};
use crate::workload::RateEstimate;

pub const DEFAULT_CONTAINER_CAPACITY: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    /// `k(i)`
    pub container_of: Vec<ContainerId>,
    pub container_hosts: Vec<ServerId>,
    pub capacity: usize,
}

impl Deployment {
    pub fn explicit(
        system: &StreamSystem,
        container_of: Vec<ContainerId>,
        container_hosts: Vec<ServerId>,
        capacity: usize,
    ) -> Result<Self, PlacementError> {
        if container_of.len() != system.num_instances() {
            return Err(PlacementError::WrongLength {
                got: container_of.len(),
                expected: system.num_instances(),
            });
        }
        let mut load = vec![0usize; container_hosts.len()];
        for k in &container_of {
            *load
                .get_mut(k.index())
                .ok_or(PlacementError::UnknownContainer(k.index()))? += 1;
        }
        if load.iter().any(|&n| n > capacity) {
            return Err(PlacementError::CapacityExhausted {
                instances: container_of.len(),
                slots: capacity * container_hosts.len(),
            });
        }
        Ok(Deployment {
            container_of,
            container_hosts,
            capacity,
        })
    }

    #[inline]
    pub fn k(&self, i: InstanceId) -> ContainerId {
        self.container_of[i.index()]
    }

    /// `U_{k(i),k(j)}`
    #[inline]
    pub fn cost(&self, costs: &CostMatrix, i: InstanceId, j: InstanceId) -> u32 {
        costs.get(self.k(i), self.k(j))
    }

    /// `I_K(k)`
    pub fn instances_in(&self, k: ContainerId) -> Vec<InstanceId> {
        (0..self.container_of.len())
            .filter(|&i| self.container_of[i] == k)
            .map(InstanceId)
            .collect()
    }

    pub fn occupancy(&self) -> Vec<usize> {
        let mut load = vec![0; self.container_hosts.len()];
        for k in &self.container_of {
            load[k.index()] += 1;
        }
        load
    }
}

/// Expected tuples per slot crossing container boundaries, weighted by cost.
pub fn placement_cost(system: &StreamSystem, rates: &RateEstimate, costs: &CostMatrix, dep: &Deployment) -> f64 {
    let mut total = 0.0;
    for inst in &system.instances {
        for &c in system.successors(inst.id) {
            for &j in system.instances_of(c) {
                total += rates.pair_rate(system, inst.id, j) * dep.cost(costs, inst.id, j) as f64;
            }
        }
    }
    total
}

fn check_capacity(system: &StreamSystem, containers: usize, capacity: usize) -> Result<(), PlacementError> {
    let slots = containers.saturating_mul(capacity);
    if slots < system.num_instances() {
        return Err(PlacementError::CapacityExhausted {
            instances: system.num_instances(),
            slots,
        });
    }
    Ok(())
}

/// Traffic-aware greedy placement. Applications are placed one after another;
/// within an application instances go in descending order of expected
/// incoming plus outgoing rate, each to the open container that adds the
/// least cost-weighted traffic towards its already placed neighbours.
pub fn t_heron_place(
    system: &StreamSystem,
    rates: &RateEstimate,
    costs: &CostMatrix,
    container_hosts: &[ServerId],
    capacity: usize,
) -> Result<Deployment, PlacementError> {
    let n_k = container_hosts.len();
    check_capacity(system, n_k, capacity)?;
    let mut placed: Vec<Option<ContainerId>> = vec![None; system.num_instances()];
    let mut load = vec![0usize; n_k];

    for app in &system.apps {
        let mut members: Vec<InstanceId> = app
            .components
            .iter()
            .flat_map(|&c| system.instances_of(c).iter().copied())
            .collect();
        let traffic: Vec<f64> = members.iter().map(|&i| rates.in_rate(i) + rates.out_rate(i)).collect();
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by(|&a, &b| traffic[b].total_cmp(&traffic[a]).then(members[a].cmp(&members[b])));
        members = order.into_iter().map(|x| members[x]).collect();

        for &i in &members {
            let neighbours: Vec<(InstanceId, f64)> = neighbour_rates(system, rates, i)
                .into_iter()
                .filter(|(j, _)| placed[j.index()].is_some())
                .collect();
            let open = (0..n_k).filter(|&k| load[k] < capacity);
            let best = if neighbours.is_empty() {
                open.min_by_key(|&k| (load[k], k))
            } else {
                open.map(|k| {
                    let inc: f64 = neighbours
                        .iter()
                        .map(|(j, r)| r * costs.get(ContainerId(k), placed[j.index()].unwrap()) as f64)
                        .sum();
                    (k, inc)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(k, _)| k)
            }
            .expect("capacity checked up front");
            placed[i.index()] = Some(ContainerId(best));
            load[best] += 1;
        }
    }
    Ok(Deployment {
        container_of: placed.into_iter().map(Option::unwrap).collect(),
        container_hosts: container_hosts.to_vec(),
        capacity,
    })
}

/// Expected traffic in both directions between `i` and each DAG neighbour.
fn neighbour_rates(system: &StreamSystem, rates: &RateEstimate, i: InstanceId) -> Vec<(InstanceId, f64)> {
    let mut out = Vec::new();
    for &c in system.successors(i) {
        for &j in system.instances_of(c) {
            out.push((j, rates.pair_rate(system, i, j)));
        }
    }
    for &c in system.predecessors(i) {
        for &j in system.instances_of(c) {
            out.push((j, rates.pair_rate(system, j, i)));
        }
    }
    out
}

/// Uniformly random feasible assignment.
pub fn random_place(
    system: &StreamSystem,
    container_hosts: &[ServerId],
    capacity: usize,
    seed: u64,
) -> Result<Deployment, PlacementError> {
    let n_k = container_hosts.len();
    check_capacity(system, n_k, capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = capacity.min(system.num_instances());
    let mut slots: Vec<usize> = (0..n_k).flat_map(|k| std::iter::repeat_n(k, per)).collect();
    slots.shuffle(&mut rng);
    Ok(Deployment {
        container_of: slots[..system.num_instances()].iter().map(|&k| ContainerId(k)).collect(),
        container_hosts: container_hosts.to_vec(),
        capacity,
    })
}
