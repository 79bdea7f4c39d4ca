//! Customer-to-customer contact network and same-state triple statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{CdrEvent, PersonId, StateCode, StateTable};

/// Simple undirected graph over customers with a known state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocialNetwork {
    ids: Vec<PersonId>,
    states: Vec<StateCode>,
    adj: Vec<Vec<u32>>,
}

impl SocialNetwork {
    /// Builds from a node list and an edge list. Self-loops, repeated edges
    /// and edges touching unknown nodes are dropped; a person listed twice
    /// keeps the first state seen.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = (PersonId, StateCode)>,
        edges: impl IntoIterator<Item = (PersonId, PersonId)>,
    ) -> Self {
        let mut node_map: BTreeMap<PersonId, StateCode> = BTreeMap::new();
        for (p, s) in nodes {
            node_map.entry(p).or_insert(s);
        }
        let ids: Vec<PersonId> = node_map.keys().copied().collect();
        let states: Vec<StateCode> = node_map.values().copied().collect();
        let index = |p: PersonId| ids.binary_search(&p).ok().map(|i| i as u32);
        let mut adj = vec![Vec::new(); ids.len()];
        for (a, b) in edges {
            if a == b {
                continue;
            }
            if let (Some(i), Some(j)) = (index(a), index(b)) {
                adj[i as usize].push(j);
                adj[j as usize].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        SocialNetwork { ids, states, adj }
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn person(&self, node: u32) -> PersonId {
        self.ids[node as usize]
    }

    pub fn state(&self, node: u32) -> StateCode {
        self.states[node as usize]
    }

    pub fn neighbors(&self, node: u32) -> &[u32] {
        &self.adj[node as usize]
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.adj[a as usize].binary_search(&b).is_ok()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (PersonId, StateCode)> + '_ {
        self.ids.iter().copied().zip(self.states.iter().copied())
    }

    /// Edges as ordered person pairs (smaller id first), sorted.
    pub fn edges(&self) -> Vec<(PersonId, PersonId)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, list) in self.adj.iter().enumerate() {
            for &j in list.iter().filter(|&&j| j as usize > i) {
                out.push((self.ids[i], self.ids[j as usize]));
            }
        }
        out
    }

    fn same_state_neighbors(&self, node: u32) -> impl Iterator<Item = u32> + '_ {
        let s = self.states[node as usize];
        self.adj[node as usize].iter().copied().filter(move |&j| self.states[j as usize] == s)
    }

    /// Node counts per state.
    pub fn state_sizes(&self) -> BTreeMap<StateCode, u64> {
        let mut out = BTreeMap::new();
        for &s in &self.states {
            *out.entry(s).or_insert(0) += 1;
        }
        out
    }
}

/// Incremental builder fed one record at a time.
#[derive(Debug, Clone, Default)]
pub struct NetworkBuilder {
    nodes: BTreeMap<PersonId, StateCode>,
    edges: BTreeSet<(PersonId, PersonId)>,
}

impl NetworkBuilder {
    pub fn observe(&mut self, event: &CdrEvent) {
        for (p, s) in event.customer_parties() {
            self.nodes.entry(p).or_insert(s);
        }
        let both = event.caller_is_customer
            && event.callee_is_customer
            && event.caller_state.is_some()
            && event.callee_state.is_some();
        if both && event.caller != event.callee {
            let (a, b) = (event.caller.min(event.callee), event.caller.max(event.callee));
            self.edges.insert((a, b));
        }
    }

    pub fn merge(&mut self, other: NetworkBuilder) {
        for (p, s) in other.nodes {
            self.nodes.entry(p).or_insert(s);
        }
        self.edges.extend(other.edges);
    }

    /// Finalises the graph, dropping the local state's nodes when asked.
    pub fn build(&self, states: &StateTable, exclude_local: bool) -> SocialNetwork {
        let keep = |s: StateCode| !(exclude_local && states.is_local(s));
        SocialNetwork::from_parts(
            self.nodes.iter().filter(|(_, &s)| keep(s)).map(|(&p, &s)| (p, s)),
            self.edges.iter().copied(),
        )
    }
}

/// Network of customers who communicated at least once in the window.
pub fn build_network<'a>(
    events: impl IntoIterator<Item = &'a CdrEvent>,
    states: &StateTable,
    exclude_local: bool,
) -> SocialNetwork {
    let mut b = NetworkBuilder::default();
    for e in events {
        b.observe(e);
    }
    b.build(states, exclude_local)
}

/// Same-state connected triples of one state, counted once per node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StateTriples {
    /// Node sets joined by three edges.
    pub closed: u64,
    /// Node sets joined by exactly two edges.
    pub open: u64,
}

impl StateTriples {
    pub fn node_sets(&self) -> u64 {
        self.closed + self.open
    }

    /// Length-two paths: every triangle holds three of them.
    pub fn center_paths(&self) -> u64 {
        3 * self.closed + self.open
    }

    /// `3 * closed / (3 * closed + open)`.
    pub fn transitivity(&self) -> Option<f64> {
        let paths = self.center_paths();
        (paths > 0).then(|| 3.0 * self.closed as f64 / paths as f64)
    }

    /// `closed / (closed + open)` over node sets.
    pub fn closed_fraction(&self) -> Option<f64> {
        let sets = self.node_sets();
        (sets > 0).then(|| self.closed as f64 / sets as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripleCensus {
    pub per_state: BTreeMap<StateCode, StateTriples>,
}

impl TripleCensus {
    pub fn total_node_sets(&self) -> u64 {
        self.per_state.values().map(StateTriples::node_sets).sum()
    }

    pub fn total_center_paths(&self) -> u64 {
        self.per_state.values().map(StateTriples::center_paths).sum()
    }

    pub fn get(&self, state: StateCode) -> StateTriples {
        self.per_state.get(&state).copied().unwrap_or_default()
    }
}

/// Counts open and closed same-state triples.
///
/// Triangles are enumerated on the same-state subgraph oriented from lower to
/// higher (degree, index) rank, so each is found exactly once. Length-two
/// paths come from `sum C(deg, 2)`, and open node sets are paths minus three
/// per triangle.
pub fn census_triples(net: &SocialNetwork) -> TripleCensus {
    let n = net.node_count();
    let deg: Vec<u64> = (0..n as u32).map(|v| net.same_state_neighbors(v).count() as u64).collect();
    let rank = |v: u32| (deg[v as usize], v);
    let out: Vec<Vec<u32>> =
        (0..n as u32).map(|v| net.same_state_neighbors(v).filter(|&u| rank(u) > rank(v)).collect()).collect();

    let mut per_state: BTreeMap<StateCode, (u64, u64)> = BTreeMap::new();
    let mut mark = vec![false; n];
    for v in 0..n {
        let entry = per_state.entry(net.states[v]).or_default();
        let d = deg[v];
        entry.1 += d * d.saturating_sub(1) / 2;
        for &u in &out[v] {
            mark[u as usize] = true;
        }
        for &u in &out[v] {
            for &w in &out[u as usize] {
                if mark[w as usize] {
                    entry.0 += 1;
                }
            }
        }
        for &u in &out[v] {
            mark[u as usize] = false;
        }
    }
    TripleCensus {
        per_state: per_state
            .into_iter()
            .filter(|(_, (_, paths))| *paths > 0)
            .map(|(s, (tri, paths))| (s, StateTriples { closed: tri, open: paths - 3 * tri }))
            .collect(),
    }
}

/// Transitivity of one state's subnetwork; `None` without connected triples.
pub fn transitivity(census: &TripleCensus, state: StateCode) -> Option<f64> {
    census.per_state.get(&state).and_then(StateTriples::transitivity)
}

/// A same-state connected triple. Nodes are sorted; for open triples the
/// centre is recorded separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub nodes: [u32; 3],
    pub center: Option<u32>,
    pub state: StateCode,
    pub closed: bool,
}

/// Every same-state connected triple, each node set once, in a fixed order.
pub fn enumerate_triples(net: &SocialNetwork) -> Vec<Triple> {
    let mut out = Vec::new();
    for v in 0..net.node_count() as u32 {
        let nbrs: Vec<u32> = net.same_state_neighbors(v).collect();
        for (i, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[i + 1..] {
                let closed = net.has_edge(u, w);
                // A triangle is seen from each of its corners; keep the smallest.
                if closed && v > u {
                    continue;
                }
                let mut nodes = [v, u, w];
                nodes.sort_unstable();
                out.push(Triple { nodes, center: (!closed).then_some(v), state: net.state(v), closed });
            }
        }
    }
    out.sort_unstable();
    out
}

/// Greedy pass over a seeded random permutation of all same-state triples,
/// keeping a triple only when none of its nodes was used before.
pub fn subsample_independent(net: &SocialNetwork, seed: u64, cap: Option<usize>) -> Vec<Triple> {
    let mut triples = enumerate_triples(net);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    triples.shuffle(&mut rng);
    let mut used = vec![false; net.node_count()];
    let mut picked = Vec::new();
    for t in triples {
        if cap.is_some_and(|c| picked.len() >= c) {
            break;
        }
        if t.nodes.iter().any(|&n| used[n as usize]) {
            continue;
        }
        for &n in &t.nodes {
            used[n as usize] = true;
        }
        picked.push(t);
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventKind, StateProfile, TowerId};
    use proptest::prelude::*;
    use rand::Rng;

    fn s(c: u8) -> StateCode {
        StateCode::new(c).unwrap()
    }

    fn net(n: u64, state_of: impl Fn(u64) -> u8, edges: &[(u64, u64)]) -> SocialNetwork {
        SocialNetwork::from_parts(
            (0..n).map(|i| (PersonId(i), s(state_of(i)))),
            edges.iter().map(|&(a, b)| (PersonId(a), PersonId(b))),
        )
    }

    /// O(n^3) oracle over node sets.
    fn brute_force(g: &SocialNetwork) -> TripleCensus {
        let n = g.node_count() as u32;
        let mut per_state: BTreeMap<StateCode, StateTriples> = BTreeMap::new();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    if g.state(a) != g.state(b) || g.state(b) != g.state(c) {
                        continue;
                    }
                    let e = g.has_edge(a, b) as u8 + g.has_edge(b, c) as u8 + g.has_edge(a, c) as u8;
                    let t = per_state.entry(g.state(a)).or_default();
                    match e {
                        3 => t.closed += 1,
                        2 => t.open += 1,
                        _ => {}
                    }
                }
            }
        }
        per_state.retain(|_, t| t.node_sets() > 0);
        TripleCensus { per_state }
    }

    #[test]
    fn triangle_and_path() {
        let tri = net(3, |_| 1, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(census_triples(&tri).get(s(1)), StateTriples { closed: 1, open: 0 });
        assert_eq!(transitivity(&census_triples(&tri), s(1)), Some(1.0));
        let path = net(3, |_| 1, &[(0, 1), (1, 2)]);
        assert_eq!(census_triples(&path).get(s(1)), StateTriples { closed: 0, open: 1 });
    }

    #[test]
    fn four_cycle_with_diagonal() {
        let g = net(4, |_| 2, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]);
        let c = census_triples(&g);
        assert_eq!(c, brute_force(&g));
        assert_eq!(c.get(s(2)), StateTriples { closed: 2, open: 2 });
        assert_eq!(transitivity(&c, s(2)), Some(0.75));
        assert_eq!(c.get(s(2)).closed_fraction(), Some(0.5));
    }

    #[test]
    fn star_is_open() {
        let g = net(4, |_| 1, &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(transitivity(&census_triples(&g), s(1)), Some(0.0));
    }

    #[test]
    fn mixed_state_triples_are_ignored() {
        let g = net(3, |i| if i == 2 { 2 } else { 1 }, &[(0, 1), (1, 2), (0, 2)]);
        assert!(census_triples(&g).per_state.is_empty());
        assert_eq!(transitivity(&census_triples(&g), s(1)), None);
    }

    #[test]
    fn erdos_renyi_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut edges = Vec::new();
        for a in 0..30u64 {
            for b in a + 1..30 {
                if rng.random_bool(0.2) {
                    edges.push((a, b));
                }
            }
        }
        let g = net(30, |_| 4, &edges);
        let c = census_triples(&g);
        assert_eq!(c, brute_force(&g));
        let oracle = brute_force(&g).get(s(4));
        let expected = 3.0 * oracle.closed as f64 / (3 * oracle.closed + oracle.open) as f64;
        assert_eq!(transitivity(&c, s(4)), Some(expected));
    }

    fn call(a: u64, b: u64, a_cust: bool, b_cust: bool) -> CdrEvent {
        CdrEvent {
            timestamp: crate::model::DEFAULT_STUDY_START,
            caller: PersonId(a),
            callee: PersonId(b),
            kind: EventKind::Call,
            duration: 10,
            tower: TowerId(1),
            caller_state: Some(s(2)),
            callee_state: b_cust.then_some(s(3)),
            caller_is_customer: a_cust,
            callee_is_customer: b_cust,
        }
    }

    fn states() -> StateTable {
        StateTable::new([
            StateProfile { code: s(1), name: "local".into(), market_share: 0.3, is_local: true },
            StateProfile { code: s(2), name: "b".into(), market_share: 0.3, is_local: false },
            StateProfile { code: s(3), name: "c".into(), market_share: 0.3, is_local: false },
        ])
        .unwrap()
    }

    #[test]
    fn repeated_calls_collapse() {
        let g =
            build_network(&[call(1, 2, true, true), call(1, 2, true, true), call(2, 1, true, true)], &states(), true);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn non_customer_gets_no_edge() {
        let g = build_network(&[call(1, 3, true, false)], &states(), true);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn local_nodes_excluded_on_request() {
        let mut e = call(1, 2, true, true);
        e.caller_state = Some(s(1));
        assert_eq!(build_network([&e], &states(), true).node_count(), 1);
        assert_eq!(build_network([&e], &states(), false).edge_count(), 1);
    }

    #[test]
    fn shared_node_triples_yield_one() {
        // Two open triples sharing node 2: 0-1-2 and 2-3-4.
        let g = net(5, |_| 1, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        for seed in 0..20 {
            let picked = subsample_independent(&g, seed, None);
            let from_a = picked.iter().filter(|t| t.nodes == [0, 1, 2]).count();
            let from_b = picked.iter().filter(|t| t.nodes == [2, 3, 4]).count();
            assert!(from_a + from_b <= 1);
        }
    }

    #[test]
    fn disjoint_triples_all_selected() {
        let g = net(9, |_| 1, &[(0, 1), (1, 2), (3, 4), (4, 5), (3, 5), (6, 7), (7, 8)]);
        for seed in [1, 2, 99] {
            assert_eq!(subsample_independent(&g, seed, None).len(), 3);
        }
        assert_eq!(subsample_independent(&g, 1, Some(2)).len(), 2);
    }

    fn arb_graph() -> impl Strategy<Value = (u64, Vec<u8>, Vec<(u64, u64)>)> {
        (3u64..=25).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(1u8..=3, n as usize),
                prop::collection::vec((0..n, 0..n), 0..(n as usize * 3)),
            )
        })
    }

    proptest! {
        #[test]
        fn census_equals_brute_force((n, st, edges) in arb_graph()) {
            let g = net(n, |i| st[i as usize], &edges);
            prop_assert_eq!(census_triples(&g), brute_force(&g));
        }

        #[test]
        fn census_ignores_relabeling((n, st, edges) in arb_graph(), shift in 1u64..1000) {
            let g = net(n, |i| st[i as usize], &edges);
            // Reverse the id order and shift.
            let relabel = |i: u64| PersonId(shift + (n - 1 - i) * 7);
            let h = SocialNetwork::from_parts(
                (0..n).map(|i| (relabel(i), s(st[i as usize]))),
                edges.iter().map(|&(a, b)| (relabel(a), relabel(b))),
            );
            prop_assert_eq!(census_triples(&g), census_triples(&h));
        }

        #[test]
        fn subsample_never_reuses_nodes((n, st, edges) in arb_graph(), seed in any::<u64>()) {
            let g = net(n, |i| st[i as usize], &edges);
            let picked = subsample_independent(&g, seed, None);
            let mut seen = BTreeSet::new();
            for t in &picked {
                for node in t.nodes {
                    prop_assert!(seen.insert(node));
                }
            }
            prop_assert_eq!(enumerate_triples(&g).len() as u64, census_triples(&g).total_node_sets());
            prop_assert_eq!(subsample_independent(&g, seed, None), picked);
        }
    }
}
