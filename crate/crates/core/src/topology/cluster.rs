use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TopologyError;
use crate::ids::{ContainerId, ServerId};

const JELLYFISH_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    FatTree,
    Jellyfish,
}

/// Switches and servers joined by undirected links.
///
/// Nodes `0..num_switches` are switches; node `num_switches + s` is server `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub kind: TopologyKind,
    pub num_switches: usize,
    pub num_servers: usize,
    pub edges: Vec<(usize, usize)>,
    /// Host server of every container.
    pub containers: Vec<ServerId>,
    pub rng_seed: u64,
}

impl Cluster {
    fn new(kind: TopologyKind, num_switches: usize, num_servers: usize, seed: u64) -> Self {
        Cluster {
            kind,
            num_switches,
            num_servers,
            edges: Vec::new(),
            containers: Vec::new(),
            rng_seed: seed,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_switches + self.num_servers
    }

    pub fn server_node(&self, s: ServerId) -> usize {
        self.num_switches + s.index()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == node || b == node).count()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.num_nodes();
        if n == 0 {
            return true;
        }
        bfs(&self.adjacency(), 0).iter().all(|d| d.is_some())
    }

    /// Places `per_server` containers on every server; container `k` lives on
    /// server `k mod num_servers`.
    pub fn with_containers(mut self, per_server: usize) -> Self {
        let total = per_server * self.num_servers;
        self.containers = (0..total).map(|k| ServerId(k % self.num_servers)).collect();
        self
    }

    pub fn host_of(&self, k: ContainerId) -> ServerId {
        self.containers[k.index()]
    }

    /// Hop counts between every pair of servers.
    pub fn server_hops(&self) -> Result<Vec<Vec<u32>>, TopologyError> {
        let adj = self.adjacency();
        let mut hops = vec![vec![0; self.num_servers]; self.num_servers];
        for a in 0..self.num_servers {
            let dist = bfs(&adj, self.num_switches + a);
            for b in 0..self.num_servers {
                hops[a][b] = dist[self.num_switches + b].ok_or(TopologyError::Unreachable(a, b))?;
            }
        }
        Ok(hops)
    }
}

fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; adj.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Standard three-tier k-ary fat-tree with `servers_wanted` hosts attached
/// round-robin to the edge switches. The seed is recorded but unused: the
/// construction is fully determined by its parameters.
pub fn build_fat_tree(k_arity: usize, servers_wanted: usize, seed: u64) -> Result<Cluster, TopologyError> {
    if k_arity == 0 || k_arity % 2 != 0 {
        return Err(TopologyError::OddArity(k_arity));
    }
    let capacity = k_arity * k_arity * k_arity / 4;
    if servers_wanted > capacity {
        return Err(TopologyError::TooManyServers {
            arity: k_arity,
            capacity,
            wanted: servers_wanted,
        });
    }
    let half = k_arity / 2;
    let num_core = half * half;
    let num_agg = k_arity * half;
    let num_edge = k_arity * half;
    let mut cluster = Cluster::new(
        TopologyKind::FatTree,
        num_core + num_agg + num_edge,
        servers_wanted,
        seed,
    );
    let core = |group: usize, j: usize| group * half + j;
    let agg = |pod: usize, a: usize| num_core + pod * half + a;
    let edge = |pod: usize, e: usize| num_core + num_agg + pod * half + e;

    for pod in 0..k_arity {
        for e in 0..half {
            for a in 0..half {
                cluster.edges.push((edge(pod, e), agg(pod, a)));
            }
        }
        for a in 0..half {
            for j in 0..half {
                cluster.edges.push((agg(pod, a), core(a, j)));
            }
        }
    }
    for s in 0..servers_wanted {
        let e = s % num_edge;
        let node = cluster.num_switches + s;
        cluster.edges.push((num_core + num_agg + e, node));
    }
    Ok(cluster)
}

/// Random `switch_degree`-regular graph among switches, servers attached
/// round-robin. Draws are repeated until the graph is simple and connected.
pub fn build_jellyfish(
    num_switches: usize,
    switch_degree: usize,
    num_servers: usize,
    seed: u64,
) -> Result<Cluster, TopologyError> {
    if num_switches == 0 || num_servers == 0 {
        return Err(TopologyError::InvalidJellyfish("need at least one switch and one server".into()));
    }
    if switch_degree >= num_switches {
        return Err(TopologyError::InvalidJellyfish(format!(
            "degree {switch_degree} must be below switch count {num_switches}"
        )));
    }
    if (num_switches * switch_degree) % 2 != 0 {
        return Err(TopologyError::InvalidJellyfish(format!(
            "{num_switches} switches of degree {switch_degree} leave a dangling port"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..JELLYFISH_RETRIES {
        let Some(edges) = random_regular(num_switches, switch_degree, &mut rng) else {
            continue;
        };
        let mut cluster = Cluster::new(TopologyKind::Jellyfish, num_switches, num_servers, seed);
        cluster.edges = edges;
        for s in 0..num_servers {
            cluster.edges.push((s % num_switches, num_switches + s));
        }
        if cluster.is_connected() {
            return Ok(cluster);
        }
    }
    Err(TopologyError::JellyfishRetriesExhausted {
        switches: num_switches,
        degree: switch_degree,
        attempts: JELLYFISH_RETRIES,
    })
}

/// Sequential stub matching: join two random nodes with free ports that are
/// not yet adjacent. Returns `None` when the draw paints itself into a corner.
fn random_regular(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    let mut free = vec![d; n];
    let mut adjacent: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut edges = Vec::with_capacity(n * d / 2);
    loop {
        let open: Vec<usize> = (0..n).filter(|&v| free[v] > 0).collect();
        if open.is_empty() {
            return Some(edges);
        }
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (ai, &a) in open.iter().enumerate() {
            for &b in &open[ai + 1..] {
                if !adjacent.contains(&(a, b)) {
                    pairs.push((a, b));
                }
            }
        }
        if pairs.is_empty() {
            return None;
        }
        // Weight by free ports so high-demand nodes are matched first.
        let weights: Vec<usize> = pairs.iter().map(|&(a, b)| free[a] * free[b]).collect();
        let total: usize = weights.iter().sum();
        let mut pick = rng.random_range(0..total);
        let mut chosen = pairs[0];
        for (p, w) in pairs.iter().zip(&weights) {
            if pick < *w {
                chosen = *p;
                break;
            }
            pick -= w;
        }
        let (a, b) = chosen;
        free[a] -= 1;
        free[b] -= 1;
        adjacent.insert((a, b));
        edges.push((a, b));
    }
}

/// Per-tuple transmission cost between containers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub u: Vec<Vec<u32>>,
    pub slot_stamp: u64,
}

impl CostMatrix {
    #[inline]
    pub fn get(&self, from: ContainerId, to: ContainerId) -> u32 {
        self.u[from.index()][to.index()]
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn max_cost(&self) -> u32 {
        self.u.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// Hop-count cost model: 0 within a container, 1 between containers sharing
/// a server, otherwise the shortest-path hop count between host servers.
pub fn cost_matrix(cluster: &Cluster, container_hosts: &[ServerId]) -> Result<CostMatrix, TopologyError> {
    for (k, s) in container_hosts.iter().enumerate() {
        if s.index() >= cluster.num_servers {
            return Err(TopologyError::UnknownContainer(k));
        }
    }
    let hops = cluster.server_hops()?;
    let n = container_hosts.len();
    let mut u = vec![vec![0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let (sa, sb) = (container_hosts[a].index(), container_hosts[b].index());
            u[a][b] = if a == b {
                0
            } else if sa == sb {
                1
            } else {
                hops[sa][sb]
            };
        }
    }
    Ok(CostMatrix { u, slot_stamp: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fat_tree_k4_counts() {
        let c = build_fat_tree(4, 16, 0).unwrap();
        assert_eq!(c.num_switches, 20);
        assert_eq!(c.num_servers, 16);
        assert!(c.is_connected());
    }

    #[test]
    fn fat_tree_k2_degenerate() {
        let c = build_fat_tree(2, 2, 0).unwrap();
        assert_eq!(c.num_switches, 5);
        assert_eq!(c.num_servers, 2);
        assert!(c.is_connected());
    }

    #[test]
    fn fat_tree_rejects_bad_parameters() {
        assert!(matches!(build_fat_tree(4, 17, 0), Err(TopologyError::TooManyServers { .. })));
        assert!(matches!(build_fat_tree(3, 2, 0), Err(TopologyError::OddArity(3))));
    }

    #[test]
    fn jellyfish_full_scale_is_regular() {
        let c = build_jellyfish(24, 4, 16, 7).unwrap();
        assert!(c.is_connected());
        for sw in 0..24 {
            let servers = (0..16).filter(|s| s % 24 == sw).count();
            assert_eq!(c.degree(sw), 4 + servers, "switch {sw}");
        }
    }

    #[test]
    fn jellyfish_small_cases_are_unique_graphs() {
        let tri = build_jellyfish(3, 2, 1, 1).unwrap();
        let mut sw: Vec<_> = tri.edges.iter().filter(|(a, b)| *a < 3 && *b < 3).copied().collect();
        sw.sort();
        assert_eq!(sw, vec![(0, 1), (0, 2), (1, 2)]);

        let k4 = build_jellyfish(4, 3, 2, 0).unwrap();
        let sw = k4.edges.iter().filter(|(a, b)| *a < 4 && *b < 4).count();
        assert_eq!(sw, 6);
    }

    #[test]
    fn jellyfish_rejects_odd_port_count() {
        assert!(build_jellyfish(5, 3, 2, 0).is_err());
    }

    #[test]
    fn jellyfish_is_deterministic() {
        assert_eq!(build_jellyfish(24, 4, 16, 9).unwrap(), build_jellyfish(24, 4, 16, 9).unwrap());
    }

    #[test]
    fn cost_rules() {
        let c = build_fat_tree(4, 16, 0).unwrap().with_containers(2);
        let u = cost_matrix(&c, &c.containers).unwrap();
        // containers 0 and 16 share server 0
        assert_eq!(u.get(ContainerId(0), ContainerId(0)), 0);
        assert_eq!(u.get(ContainerId(0), ContainerId(16)), 1);
        // servers 0 and 8 both hang off edge switch 0
        assert_eq!(u.get(ContainerId(0), ContainerId(8)), 2);
        assert_eq!(u.get(ContainerId(0), ContainerId(1)), 4);
    }

    #[test]
    fn cost_matrix_is_symmetric_metric() {
        for cluster in [
            build_fat_tree(4, 16, 0).unwrap().with_containers(2),
            build_jellyfish(24, 4, 16, 3).unwrap().with_containers(2),
        ] {
            let u = cost_matrix(&cluster, &cluster.containers).unwrap();
            let n = u.len();
            for a in 0..n {
                assert_eq!(u.u[a][a], 0);
                for b in 0..n {
                    assert_eq!(u.u[a][b], u.u[b][a]);
                    for c in 0..n {
                        assert!(u.u[a][c] <= u.u[a][b] + u.u[b][c]);
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_host_rejected() {
        let c = build_fat_tree(2, 2, 0).unwrap();
        assert!(cost_matrix(&c, &[ServerId(5)]).is_err());
    }
}
