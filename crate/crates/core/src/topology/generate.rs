use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AppSpec, ComponentKind, ComponentSpec};

/// Parameters of the random application generator. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppGenSpec {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_depth")]
    pub depth: [usize; 2],
    #[serde(default = "default_components")]
    pub components: [usize; 2],
    #[serde(default = "default_parallelism")]
    pub parallelism: [usize; 2],
    #[serde(default = "default_proc")]
    pub proc_capacity: [u32; 2],
    /// Probability of adding a second predecessor to a bolt.
    #[serde(default = "default_extra_edge")]
    pub extra_edge_prob: f64,
    pub seed: u64,
}

fn default_count() -> usize {
    5
}
fn default_depth() -> [usize; 2] {
    [3, 5]
}
fn default_components() -> [usize; 2] {
    [3, 6]
}
fn default_parallelism() -> [usize; 2] {
    [2, 4]
}
fn default_proc() -> [u32; 2] {
    [3, 5]
}
fn default_extra_edge() -> f64 {
    0.3
}

impl AppGenSpec {
    pub fn with_seed(seed: u64) -> Self {
        AppGenSpec {
            count: default_count(),
            depth: default_depth(),
            components: default_components(),
            parallelism: default_parallelism(),
            proc_capacity: default_proc(),
            extra_edge_prob: default_extra_edge(),
            seed,
        }
    }
}

/// Draws layered DAGs: one spout at level 0, at least one bolt on each of the
/// `depth - 1` further levels, every bolt fed from the level directly above so
/// the longest path has exactly `depth` components.
pub fn generate_apps(spec: &AppGenSpec) -> Vec<AppSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|a| generate_one(spec, &mut rng, format!("app{a}")))
        .collect()
}

fn generate_one(spec: &AppGenSpec, rng: &mut ChaCha8Rng, name: String) -> AppSpec {
    let depth = rng.random_range(spec.depth[0].max(2)..=spec.depth[1].max(spec.depth[0]).max(2));
    let lo = spec.components[0].max(depth);
    let hi = spec.components[1].max(lo);
    let count = rng.random_range(lo..=hi);

    // level of each component; index 0 is the spout
    let mut level: Vec<usize> = (0..depth).collect();
    for _ in depth..count {
        level.push(rng.random_range(1..depth));
    }
    level[1..].sort_unstable();

    let by_level = |l: usize, level: &[usize]| -> Vec<usize> {
        level.iter().enumerate().filter(|(_, &x)| x == l).map(|(i, _)| i).collect()
    };

    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); count];
    for c in 1..count {
        let above = by_level(level[c] - 1, &level);
        let p = *above.choose(rng).unwrap();
        successors[p].push(c);
        if level[c] >= 2 && rng.random_bool(spec.extra_edge_prob) {
            let earlier: Vec<usize> = (0..count).filter(|&x| level[x] < level[c] && x != p).collect();
            if let Some(&q) = earlier.choose(rng) {
                successors[q].push(c);
            }
        }
    }
    // every non-sink level must feed forward
    for c in 0..count {
        if successors[c].is_empty() && level[c] + 1 < depth {
            let below = by_level(level[c] + 1, &level);
            successors[c].push(*below.choose(rng).unwrap());
        }
    }
    for s in &mut successors {
        s.sort_unstable();
        s.dedup();
    }

    let components = (0..count)
        .map(|c| {
            let parallelism = rng.random_range(spec.parallelism[0]..=spec.parallelism[1]);
            let (kind, proc_capacity, cname) = if c == 0 {
                (ComponentKind::Spout, 0, "spout".to_string())
            } else {
                (
                    ComponentKind::Bolt,
                    rng.random_range(spec.proc_capacity[0]..=spec.proc_capacity[1]),
                    format!("bolt{c}"),
                )
            };
            ComponentSpec {
                name: cname,
                kind,
                parallelism,
                successors: successors[c].clone(),
                proc_capacity,
                tx_capacity: None,
                gen_ratio: None,
            }
        })
        .collect();
    AppSpec { name, components }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{CapacityDefaults, StreamSystem};

    #[test]
    fn generated_apps_respect_ranges() {
        for seed in 0..40 {
            let spec = AppGenSpec::with_seed(seed);
            let apps = generate_apps(&spec);
            assert_eq!(apps.len(), 5);
            let sys = StreamSystem::from_specs(&apps, CapacityDefaults::default()).unwrap();
            for app in &sys.apps {
                assert!((3..=5).contains(&app.depth), "depth {}", app.depth);
                assert!((3..=6).contains(&app.components.len()));
                for &c in &app.components {
                    let comp = sys.component(c);
                    assert!((2..=4).contains(&comp.parallelism));
                    assert_eq!(comp.app_id, app.app_id);
                    for &s in &comp.successors {
                        assert_eq!(sys.component(s).app_id, app.app_id);
                    }
                    if comp.kind == ComponentKind::Bolt {
                        let mu = sys.instance(comp.instance_ids[0]).proc_capacity;
                        assert!((3..=5).contains(&mu));
                    }
                }
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = AppGenSpec::with_seed(11);
        assert_eq!(generate_apps(&spec), generate_apps(&spec));
    }
}
