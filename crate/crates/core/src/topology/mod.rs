//! Application DAGs and the physical cluster they run on.
//!
//! Applications are described by [`AppSpec`] (local component indices, the
//! form used in scenario files) and compiled into a [`StreamSystem`], which
//! assigns global component and instance ids and derives the predecessor
//! relation `p(i)` from the successor lists `n(i)`.

mod cluster;
mod generate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use cluster::{build_fat_tree, build_jellyfish, cost_matrix, Cluster, CostMatrix, TopologyKind};
pub use generate::{generate_apps, AppGenSpec};

use crate::error::TopologyError;
use crate::ids::{AppId, ComponentId, InstanceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Spout,
    Bolt,
}

/// One component as written in a scenario file. `successors` index into the
/// owning [`AppSpec::components`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub name: String,
    pub kind: ComponentKind,
    pub parallelism: usize,
    #[serde(default)]
    pub successors: Vec<usize>,
    /// Tuples processed per slot by each instance; ignored for spouts.
    #[serde(default)]
    pub proc_capacity: u32,
    /// Tuples transmitted per slot by each instance. Defaults depend on the
    /// component kind, see [`CapacityDefaults`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_capacity: Option<u32>,
    /// Output tuples per processed tuple, per successor. Defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub name: String,
    pub components: Vec<ComponentSpec>,
}

/// Fallbacks for capacities a [`ComponentSpec`] leaves unset.
#[derive(Debug, Clone, Copy)]
pub struct CapacityDefaults {
    /// Per-slot arrival cap; a spout defaults to `lambda_max * |n(i)|` so the
    /// forced departure of every arrived tuple always fits its budget.
    pub lambda_max: u32,
    /// Bolts default to `bolt_tx_factor * mu * |n(i)|`.
    pub bolt_tx_factor: u32,
}

impl Default for CapacityDefaults {
    fn default() -> Self {
        CapacityDefaults {
            lambda_max: 20,
            bolt_tx_factor: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: ComponentId,
    pub app_id: AppId,
    pub name: String,
    pub kind: ComponentKind,
    pub instance_ids: Vec<InstanceId>,
    pub successors: Vec<ComponentId>,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub component_id: ComponentId,
    /// `gamma_i`
    pub tx_capacity: u32,
    /// `mu_i`; zero for spouts.
    pub proc_capacity: u32,
    /// Keys are exactly `n(i)`.
    pub gen_ratio: BTreeMap<ComponentId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppTopology {
    pub app_id: AppId,
    pub name: String,
    pub components: Vec<ComponentId>,
    /// Number of components on the longest spout-to-sink path.
    pub depth: usize,
    /// Components in topological order.
    pub order: Vec<ComponentId>,
}

/// All applications of a scenario with global ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSystem {
    pub apps: Vec<AppTopology>,
    pub components: Vec<Component>,
    pub instances: Vec<Instance>,
    predecessors: Vec<Vec<ComponentId>>,
}

impl StreamSystem {
    pub fn from_specs(specs: &[AppSpec], defaults: CapacityDefaults) -> Result<Self, TopologyError> {
        let mut apps = Vec::with_capacity(specs.len());
        let mut components: Vec<Component> = Vec::new();
        let mut instances: Vec<Instance> = Vec::new();
        let mut spec_of: Vec<&ComponentSpec> = Vec::new();

        for (a, spec) in specs.iter().enumerate() {
            let invalid = |reason: String| TopologyError::InvalidApp {
                app: spec.name.clone(),
                reason,
            };
            if spec.components.is_empty() {
                return Err(invalid("no components".into()));
            }
            let base = components.len();
            let mut ids = Vec::with_capacity(spec.components.len());
            for (local, cs) in spec.components.iter().enumerate() {
                if cs.parallelism == 0 {
                    return Err(invalid(format!("component '{}' has parallelism 0", cs.name)));
                }
                let mut successors = Vec::with_capacity(cs.successors.len());
                for &s in &cs.successors {
                    if s >= spec.components.len() {
                        return Err(invalid(format!(
                            "component '{}' names successor {} outside the application",
                            cs.name, s
                        )));
                    }
                    if s == local {
                        return Err(TopologyError::Cycle(vec![ComponentId(base + s)]));
                    }
                    let id = ComponentId(base + s);
                    if successors.contains(&id) {
                        return Err(invalid(format!("component '{}' lists successor {} twice", cs.name, s)));
                    }
                    successors.push(id);
                }
                let id = ComponentId(base + local);
                ids.push(id);
                components.push(Component {
                    id,
                    app_id: AppId(a),
                    name: cs.name.clone(),
                    kind: cs.kind,
                    instance_ids: Vec::new(),
                    successors,
                    parallelism: cs.parallelism,
                });
                spec_of.push(cs);
            }
            apps.push(AppTopology {
                app_id: AppId(a),
                name: spec.name.clone(),
                components: ids,
                depth: 0,
                order: Vec::new(),
            });
        }

        let mut predecessors = vec![Vec::new(); components.len()];
        for c in &components {
            for s in &c.successors {
                predecessors[s.index()].push(c.id);
            }
        }

        for (c, cs) in components.iter_mut().zip(&spec_of) {
            let app_name = &specs[c.app_id.index()].name;
            let invalid = |reason: String| TopologyError::InvalidApp {
                app: app_name.clone(),
                reason,
            };
            let preds = &predecessors[c.id.index()];
            match c.kind {
                ComponentKind::Spout => {
                    if !preds.is_empty() {
                        return Err(invalid(format!("spout '{}' has predecessors", c.name)));
                    }
                    if c.successors.is_empty() {
                        return Err(invalid(format!("spout '{}' has no successors", c.name)));
                    }
                }
                ComponentKind::Bolt => {
                    if preds.is_empty() {
                        return Err(invalid(format!("bolt '{}' has no predecessors", c.name)));
                    }
                    if cs.proc_capacity == 0 {
                        return Err(invalid(format!("bolt '{}' has zero processing capacity", c.name)));
                    }
                }
            }
            let ratio = cs.gen_ratio.unwrap_or(1.0);
            if !(ratio.is_finite() && ratio >= 0.0) {
                return Err(invalid(format!("component '{}' has invalid gen_ratio {}", c.name, ratio)));
            }
            let fanout = c.successors.len().max(1) as u32;
            let (proc_capacity, default_tx) = match c.kind {
                ComponentKind::Spout => (0, defaults.lambda_max * fanout),
                ComponentKind::Bolt => (
                    cs.proc_capacity,
                    defaults.bolt_tx_factor * cs.proc_capacity * fanout,
                ),
            };
            let tx_capacity = cs.tx_capacity.unwrap_or(default_tx);
            if tx_capacity == 0 && !c.successors.is_empty() {
                return Err(invalid(format!("component '{}' has zero transmission capacity", c.name)));
            }
            for _ in 0..c.parallelism {
                let id = InstanceId(instances.len());
                c.instance_ids.push(id);
                instances.push(Instance {
                    id,
                    component_id: c.id,
                    tx_capacity,
                    proc_capacity,
                    gen_ratio: c.successors.iter().map(|&s| (s, ratio)).collect(),
                });
            }
        }

        let mut system = StreamSystem {
            apps,
            components,
            instances,
            predecessors,
        };
        for a in 0..system.apps.len() {
            let order = validate_dag(&system, AppId(a))?;
            let depth = longest_path(&system, &order);
            system.apps[a].order = order;
            system.apps[a].depth = depth;
        }
        Ok(system)
    }

    pub fn component(&self, c: ComponentId) -> &Component {
        &self.components[c.index()]
    }

    pub fn instance(&self, i: InstanceId) -> &Instance {
        &self.instances[i.index()]
    }

    pub fn component_of(&self, i: InstanceId) -> &Component {
        self.component(self.instances[i.index()].component_id)
    }

    pub fn app_of(&self, i: InstanceId) -> AppId {
        self.component_of(i).app_id
    }

    /// `n(i)`
    pub fn successors(&self, i: InstanceId) -> &[ComponentId] {
        &self.component_of(i).successors
    }

    /// `p(i)`
    pub fn predecessors(&self, i: InstanceId) -> &[ComponentId] {
        &self.predecessors[self.instances[i.index()].component_id.index()]
    }

    pub fn component_predecessors(&self, c: ComponentId) -> &[ComponentId] {
        &self.predecessors[c.index()]
    }

    /// `I_C(c)`
    pub fn instances_of(&self, c: ComponentId) -> &[InstanceId] {
        &self.components[c.index()].instance_ids
    }

    pub fn is_spout(&self, i: InstanceId) -> bool {
        self.component_of(i).kind == ComponentKind::Spout
    }

    pub fn is_terminal(&self, i: InstanceId) -> bool {
        self.successors(i).is_empty()
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn spout_instances(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.instances
            .iter()
            .filter(|inst| self.components[inst.component_id.index()].kind == ComponentKind::Spout)
            .map(|inst| inst.id)
    }

    /// Maximum in- or out-degree over all components.
    pub fn max_degree(&self) -> usize {
        self.components
            .iter()
            .map(|c| c.successors.len().max(self.predecessors[c.id.index()].len()))
            .max()
            .unwrap_or(0)
    }

    pub fn max_parallelism(&self) -> usize {
        self.components.iter().map(|c| c.parallelism).max().unwrap_or(0)
    }

    /// Converts back to the file representation.
    pub fn to_specs(&self) -> Vec<AppSpec> {
        self.apps
            .iter()
            .map(|app| {
                let base = app.components[0].index();
                AppSpec {
                    name: app.name.clone(),
                    components: app
                        .components
                        .iter()
                        .map(|&cid| {
                            let c = self.component(cid);
                            let first = self.instance(c.instance_ids[0]);
                            ComponentSpec {
                                name: c.name.clone(),
                                kind: c.kind,
                                parallelism: c.parallelism,
                                successors: c.successors.iter().map(|s| s.index() - base).collect(),
                                proc_capacity: first.proc_capacity,
                                tx_capacity: Some(first.tx_capacity),
                                gen_ratio: first.gen_ratio.values().next().copied(),
                            }
                        })
                        .collect(),
                }
            })
            .collect()
    }
}

/// Returns the components of `app` in topological order, or the components of
/// a cycle. Among ready components the lowest id goes first.
pub fn validate_dag(system: &StreamSystem, app: AppId) -> Result<Vec<ComponentId>, TopologyError> {
    let members = &system.apps[app.index()].components;
    let mut indegree: BTreeMap<ComponentId, usize> = members
        .iter()
        .map(|&c| (c, system.component_predecessors(c).len()))
        .collect();
    let mut ready: BTreeSet<ComponentId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&c, _)| c)
        .collect();
    let mut order = Vec::with_capacity(members.len());
    while let Some(c) = ready.pop_first() {
        order.push(c);
        for &s in &system.component(c).successors {
            let d = indegree.get_mut(&s).expect("successor within application");
            *d -= 1;
            if *d == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() == members.len() {
        return Ok(order);
    }
    let remaining: BTreeSet<ComponentId> = indegree
        .into_iter()
        .filter(|&(_, d)| d > 0)
        .map(|(c, _)| c)
        .collect();
    Err(TopologyError::Cycle(find_cycle(system, &remaining)))
}

fn find_cycle(system: &StreamSystem, remaining: &BTreeSet<ComponentId>) -> Vec<ComponentId> {
    // Every remaining node keeps a remaining predecessor, so walking
    // predecessors must revisit a node.
    let Some(&start) = remaining.iter().next() else {
        return Vec::new();
    };
    let mut path = vec![start];
    let mut cur = start;
    loop {
        let prev = *system
            .component_predecessors(cur)
            .iter()
            .find(|p| remaining.contains(p))
            .expect("remaining node has a remaining predecessor");
        if let Some(pos) = path.iter().position(|&c| c == prev) {
            let mut cycle: Vec<ComponentId> = path[pos..].to_vec();
            cycle.reverse();
            return cycle;
        }
        path.push(prev);
        cur = prev;
    }
}

fn longest_path(system: &StreamSystem, order: &[ComponentId]) -> usize {
    let mut depth: BTreeMap<ComponentId, usize> = BTreeMap::new();
    for &c in order {
        let d = system
            .component_predecessors(c)
            .iter()
            .map(|p| depth[p])
            .max()
            .unwrap_or(0)
            + 1;
        depth.insert(c, d);
    }
    depth.values().copied().max().unwrap_or(0)
}
