//! Block-model baseline: one edge probability per state, and its bias when
//! states contain smaller social groups.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::model::{PersonId, StateCode};
use crate::social::{census_triples, SocialNetwork, StateTriples};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEstimate {
    pub n: u64,
    pub edges: u64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockEstimates {
    /// States with fewer than two nodes are omitted.
    pub per_state: BTreeMap<StateCode, BlockEstimate>,
    /// All edges over all node pairs, `None` below two nodes.
    pub baseline: Option<f64>,
}

/// Within-state edge densities `e_kk / C(n_k, 2)`.
pub fn estimate_block_probs(net: &SocialNetwork) -> BlockEstimates {
    let sizes = net.state_sizes();
    let mut within: BTreeMap<StateCode, u64> = BTreeMap::new();
    for v in 0..net.node_count() as u32 {
        for &u in net.neighbors(v) {
            if v < u && net.state(v) == net.state(u) {
                *within.entry(net.state(v)).or_default() += 1;
            }
        }
    }
    let per_state = sizes
        .iter()
        .filter(|(_, &n)| n >= 2)
        .map(|(&s, &n)| {
            let edges = within.get(&s).copied().unwrap_or(0);
            (s, BlockEstimate { n, edges, p: edges as f64 / math::choose2(n) as f64 })
        })
        .collect();
    let n = net.node_count() as u64;
    let baseline = (n >= 2).then(|| net.edge_count() as f64 / math::choose2(n) as f64);
    BlockEstimates { per_state, baseline }
}

/// Average edge probability over all pairs of a state made of `groups`
/// equal groups of `group_size`, with `p_in` inside a group and `p_out`
/// between groups. This is what a one-block-per-state model estimates.
pub fn group_structure_bias(groups: u64, group_size: u64, p_in: f64, p_out: f64) -> f64 {
    assert!(groups >= 1 && group_size >= 2, "need at least one group of two");
    let within = groups * math::choose2(group_size);
    let all = math::choose2(groups * group_size);
    // Weighted form so that a single group returns `p_in` exactly.
    let frac = within as f64 / all as f64;
    p_in * frac + p_out * (1.0 - frac)
}

/// `(g, average edge probability)` for each group count.
pub fn bias_curve(group_counts: &[u64], group_size: u64, p_in: f64, p_out: f64) -> Vec<(u64, f64)> {
    group_counts.iter().map(|&g| (g, group_structure_bias(g, group_size, p_in, p_out))).collect()
}

/// Edges of a planted-partition graph over nodes `0..groups * group_size`,
/// node `i` belonging to group `i / group_size`.
pub fn planted_partition(groups: u64, group_size: u64, p_in: f64, p_out: f64, rng: &mut impl Rng) -> Vec<(u64, u64)> {
    let n = groups * group_size;
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if a / group_size == b / group_size { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// Monte Carlo estimate of the block-model density of a planted-partition
/// state, with its standard error over `replicates` sampled graphs.
pub fn monte_carlo_bias(
    groups: u64,
    group_size: u64,
    p_in: f64,
    p_out: f64,
    replicates: usize,
    seed: u64,
) -> (f64, f64) {
    let pairs = math::choose2(groups * group_size) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..replicates)
        .map(|_| planted_partition(groups, group_size, p_in, p_out, &mut rng).len() as f64 / pairs)
        .collect();
    let mean = math::mean(&draws).unwrap_or(f64::NAN);
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (replicates as f64 - 1.0);
    (mean, math::sqrt(var / replicates as f64))
}

/// Settings for the two-state comparison: both states share group size and
/// edge probabilities and differ only in how many groups they hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupDemoConfig {
    pub groups_a: u64,
    pub groups_b: u64,
    pub group_size: u64,
    pub p_in: f64,
    pub p_out: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for GroupDemoConfig {
    fn default() -> Self {
        GroupDemoConfig { groups_a: 1, groups_b: 100, group_size: 5, p_in: 0.2, p_out: 0.04, replicates: 400, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupDemo {
    /// Mean block-model density of each state over replicates.
    pub p_a: f64,
    pub p_b: f64,
    /// Pooled within-group triple census of each state.
    pub triples_a: StateTriples,
    pub triples_b: StateTriples,
    /// Two-proportion z statistic for equal within-group closed fractions.
    pub closure_z: f64,
    pub closure_p_value: f64,
}

impl GroupDemo {
    pub fn density_ratio(&self) -> f64 {
        self.p_a / self.p_b
    }
}

fn within_group_census(groups: u64, m: u64, edges: &[(u64, u64)]) -> StateTriples {
    let state = StateCode::new(1).expect("valid code");
    let within = edges.iter().filter(|(a, b)| a / m == b / m).map(|&(a, b)| (PersonId(a), PersonId(b)));
    let net = SocialNetwork::from_parts((0..groups * m).map(|i| (PersonId(i), state)), within);
    census_triples(&net).get(state)
}

/// Samples both states `replicates` times, estimating the block-model density
/// of each from all its pairs and the closed-triple fraction from edges
/// inside groups only.
pub fn group_structure_demo(cfg: &GroupDemoConfig) -> GroupDemo {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.group_size;
    let (mut pa, mut pb) = (0.0, 0.0);
    let (mut ta, mut tb) = (StateTriples::default(), StateTriples::default());
    for _ in 0..cfg.replicates {
        for (g, p, t) in [(cfg.groups_a, &mut pa, &mut ta), (cfg.groups_b, &mut pb, &mut tb)] {
            let edges = planted_partition(g, m, cfg.p_in, cfg.p_out, &mut rng);
            *p += edges.len() as f64 / math::choose2(g * m) as f64;
            let c = within_group_census(g, m, &edges);
            t.closed += c.closed;
            t.open += c.open;
        }
    }
    let r = cfg.replicates as f64;
    let (na, nb) = (ta.node_sets() as f64, tb.node_sets() as f64);
    let (fa, fb) = (ta.closed as f64 / na, tb.closed as f64 / nb);
    let pooled = (ta.closed + tb.closed) as f64 / (na + nb);
    let z = (fa - fb) / math::sqrt(pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb));
    GroupDemo {
        p_a: pa / r,
        p_b: pb / r,
        triples_a: ta,
        triples_b: tb,
        closure_z: z,
        closure_p_value: math::two_sided_normal_p(z),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(c: u8) -> StateCode {
        StateCode::new(c).unwrap()
    }

    fn net(states: &[u8], edges: &[(u64, u64)]) -> SocialNetwork {
        SocialNetwork::from_parts(
            states.iter().enumerate().map(|(i, &c)| (PersonId(i as u64), s(c))),
            edges.iter().map(|&(a, b)| (PersonId(a), PersonId(b))),
        )
    }

    #[test]
    fn complete_and_empty() {
        let complete = net(&[1, 1, 1, 1], &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let est = estimate_block_probs(&complete);
        assert_eq!(est.per_state[&s(1)].p, 1.0);
        assert_eq!(est.baseline, Some(1.0));
        let empty = estimate_block_probs(&net(&[1, 1, 2, 2], &[]));
        assert!(empty.per_state.values().all(|b| b.p == 0.0));
    }

    #[test]
    fn singleton_states_are_omitted() {
        let est = estimate_block_probs(&net(&[1, 1, 2], &[(0, 1), (1, 2)]));
        assert_eq!(est.per_state.len(), 1);
        assert_eq!(est.per_state[&s(1)], BlockEstimate { n: 2, edges: 1, p: 1.0 });
        assert_eq!(est.baseline, Some(2.0 / 3.0));
    }

    #[test]
    fn closed_form_values() {
        for m in 2..10 {
            assert_eq!(group_structure_bias(1, m, 0.2, 0.04), 0.2);
        }
        let v = group_structure_bias(100, 5, 0.2, 0.04);
        // 100 * 10 * 0.2 plus the remaining 123750 pairs at 0.04, over 124750.
        assert!((v - (200.0 + 123_750.0 * 0.04) / 124_750.0).abs() < 1e-15);
        assert!((v - 0.0413).abs() < 5e-5);
        assert!((group_structure_bias(1_000_000, 5, 0.2, 0.04) - 0.04).abs() < 1e-6);
    }

    #[test]
    fn curve_decreases_toward_p_out() {
        let curve = bias_curve(&[1, 2, 5, 10, 50, 100, 1000], 5, 0.2, 0.04);
        for w in curve.windows(2) {
            assert!(w[1].1 < w[0].1);
            assert!(w[1].1 > 0.04);
        }
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        let (mean, se) = monte_carlo_bias(100, 5, 0.2, 0.04, 40, 11);
        assert!((mean - group_structure_bias(100, 5, 0.2, 0.04)).abs() < 3.0 * se, "{mean} {se}");
    }

    #[test]
    fn planted_partition_density_within_three_se() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (g, m) = (20u64, 5u64);
        let edges = planted_partition(g, m, 0.2, 0.04, &mut rng);
        let n = g * m;
        let graph = SocialNetwork::from_parts(
            (0..n).map(|i| (PersonId(i), s(3))),
            edges.iter().map(|&(a, b)| (PersonId(a), PersonId(b))),
        );
        let est = estimate_block_probs(&graph).per_state[&s(3)];
        let within = (g * math::choose2(m)) as f64;
        let pairs = math::choose2(n) as f64;
        let expected = group_structure_bias(g, m, 0.2, 0.04);
        // Binomial variance of the pooled density.
        let var = (within * 0.2 * 0.8 + (pairs - within) * 0.04 * 0.96) / (pairs * pairs);
        assert!((est.p - expected).abs() < 3.0 * math::sqrt(var), "{} vs {expected}", est.p);
    }

    #[test]
    fn group_count_moves_density_but_not_closure() {
        let demo = group_structure_demo(&GroupDemoConfig::default());
        assert!(demo.density_ratio() > 4.0, "{}", demo.density_ratio());
        assert!(demo.closure_p_value > 0.001, "{demo:?}");
        assert!(demo.triples_a.node_sets() > 100 && demo.triples_b.node_sets() > 10_000);
    }
}
