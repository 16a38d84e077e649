//! Fusion in natural-parameter space and the tree message-passing protocol.
//!
//! Two posteriors over the same vocabulary combine as `R_a + R_b − R_0`; `s`
//! of them as `Σ R_i − (s−1)·R_0`. On a tree, agent `i` sends neighbor `j`
//!
//! ```text
//! M_ij⁰ = R_i,    M_ijᵗ⁺¹ = R_i + Σ_{k ∈ N(i)∖j} (M_kiᵗ − R_0)
//! ```
//!
//! and after as many rounds as the tree's diameter every agent assembles
//! `R_g = R_i + Σ_{k ∈ N(i)} (M_ki − R_0)`, which equals the fusion of all
//! agents' representations.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::posterior::NaturalRepresentation;
use crate::rng;

/// `R_a + R_b − R_0`
pub fn fuse_pair(
    a: &NaturalRepresentation,
    b: &NaturalRepresentation,
    prior: &NaturalRepresentation,
) -> Result<NaturalRepresentation> {
    let mut out = a.add_scaled(1.0, b)?;
    out.add_assign_scaled(-1.0, prior)?;
    Ok(out)
}

/// `Σ R_i − (s−1)·R_0`
pub fn fuse_many(reps: &[NaturalRepresentation], prior: &NaturalRepresentation) -> Result<NaturalRepresentation> {
    let (first, rest) = reps
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("cannot fuse an empty list of representations".into()))?;
    let mut out = first.clone();
    for r in rest {
        out.add_assign_scaled(1.0, r)?;
    }
    out.add_assign_scaled(-(rest.len() as f64), prior)?;
    Ok(out)
}

/// Undirected graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Edges are normalized to `(min, max)`; self-loops, duplicates and
    /// out-of-range endpoints are rejected.
    pub fn custom(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut normalized = Vec::with_capacity(edges.len());
        let mut neighbors = vec![Vec::new(); nodes];
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) out of range for {nodes} nodes")));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if normalized.contains(&e) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({a}, {b})")));
            }
            normalized.push(e);
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        neighbors.iter_mut().for_each(|n| n.sort_unstable());
        Ok(Self {
            nodes,
            edges: normalized,
            neighbors,
        })
    }

    pub fn line(nodes: usize) -> Self {
        let edges: Vec<_> = (1..nodes).map(|i| (i - 1, i)).collect();
        Self::custom(nodes, &edges).expect("line edges are valid")
    }

    /// Node 0 is the hub.
    pub fn star(nodes: usize) -> Self {
        let edges: Vec<_> = (1..nodes).map(|i| (0, i)).collect();
        Self::custom(nodes, &edges).expect("star edges are valid")
    }

    /// Random recursive tree on shuffled labels.
    pub fn random_tree(nodes: usize, seed: u64) -> Self {
        let mut r = rng::rng_from_seed(seed);
        let mut order: Vec<usize> = (0..nodes).collect();
        order.shuffle(&mut r);
        let edges: Vec<_> = (1..nodes).map(|i| (order[r.random_range(0..i)], order[i])).collect();
        Self::custom(nodes, &edges).expect("random tree edges are valid")
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.nodes];
        let mut out = Vec::new();
        for start in 0..self.nodes {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    pub fn is_tree(&self) -> bool {
        self.nodes > 0 && self.edges.len() == self.nodes - 1 && self.is_connected()
    }

    fn eccentricity(&self, source: usize) -> usize {
        let mut dist = vec![usize::MAX; self.nodes];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        let mut far = 0;
        while let Some(u) = queue.pop_front() {
            far = far.max(dist[u]);
            for &v in &self.neighbors[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        far
    }

    /// Longest shortest path in edges, or `None` if disconnected.
    pub fn diameter(&self) -> Option<usize> {
        if !self.is_connected() {
            return None;
        }
        Some((0..self.nodes).map(|s| self.eccentricity(s)).max().unwrap_or(0))
    }
}

/// Number of lossless rounds the protocol needs on `topology`.
pub fn tree_diameter(topology: &Topology) -> Result<usize> {
    if !topology.is_tree() {
        return Err(Error::NotATree {
            nodes: topology.node_count(),
            edges: topology.edges().len(),
        });
    }
    Ok(topology.diameter().unwrap_or(0))
}

/// Minimum-total-latency spanning tree (Kruskal). `latencies[e]` belongs to
/// `topology.edges()[e]`; ties keep edge order, and so does the output.
pub fn spanning_tree(topology: &Topology, latencies: &[f64]) -> Result<Topology> {
    ensure_dim("spanning_tree latencies", topology.edges().len(), latencies.len())?;
    if latencies.iter().any(|l| l.is_nan()) {
        return Err(Error::InvalidArgument("edge latency is NaN".into()));
    }
    let components = topology.components();
    if components.len() > 1 {
        return Err(Error::Disconnected { components });
    }
    let mut order: Vec<usize> = (0..latencies.len()).collect();
    order.sort_by(|&a, &b| latencies[a].total_cmp(&latencies[b]));
    let mut parent: Vec<usize> = (0..topology.node_count()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut keep = vec![false; latencies.len()];
    for e in order {
        let (a, b) = topology.edges()[e];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            keep[e] = true;
        }
    }
    let kept: Vec<_> = topology.edges().iter().zip(&keep).filter(|(_, k)| **k).map(|(e, _)| *e).collect();
    Topology::custom(topology.node_count(), &kept)
}

/// One payload `M_ijᵗ` in flight from `from` to `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMessage {
    from: usize,
    to: usize,
    step: u64,
    payload: NaturalRepresentation,
    coverage: usize,
}

impl FusionMessage {
    pub fn new(from: usize, to: usize, step: u64, payload: NaturalRepresentation, coverage: usize) -> Self {
        Self {
            from,
            to,
            step,
            payload,
            coverage,
        }
    }

    pub fn from(&self) -> usize {
        self.from
    }

    pub fn to(&self) -> usize {
        self.to
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn payload(&self) -> &NaturalRepresentation {
        &self.payload
    }

    /// How many agents' representations the payload accounts for. Zero for
    /// decoded messages, since the wire format does not carry it.
    pub fn coverage(&self) -> usize {
        self.coverage
    }

    /// `m, from, to, step` as little-endian u64, then `R1` row-major and
    /// `R2`, as little-endian f64.
    pub fn encode(&self) -> Vec<u8> {
        let m = self.payload.dim();
        let mut out = Vec::with_capacity(32 + 8 * (m * m + m));
        for v in [m as u64, self.from as u64, self.to as u64, self.step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.payload.precision().as_slice().iter().chain(self.payload.shift()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|s| s.try_into().expect("slice of length 8"))
                .ok_or_else(|| Error::Protocol(format!("message truncated at word {i}")))
        };
        let header: Vec<u64> = (0..4).map(|i| word(i).map(u64::from_le_bytes)).collect::<Result<_>>()?;
        let m = usize::try_from(header[0]).map_err(|_| Error::Protocol("dimension overflows usize".into()))?;
        let count = m
            .checked_mul(m)
            .and_then(|mm| mm.checked_add(m))
            .ok_or_else(|| Error::Protocol("dimension too large".into()))?;
        if bytes.len() != 8 * (4 + count) {
            return Err(Error::Protocol(format!(
                "expected {} bytes for dimension {m}, got {}",
                8 * (4 + count),
                bytes.len()
            )));
        }
        let values: Vec<f64> = (4..4 + count).map(|i| word(i).map(f64::from_le_bytes)).collect::<Result<_>>()?;
        let precision = Matrix::from_vec(m, m, values[..m * m].to_vec())?;
        let payload = NaturalRepresentation::new(precision, values[m * m..].to_vec())?;
        Ok(Self::new(header[1] as usize, header[2] as usize, header[3], payload, 0))
    }
}

/// Step-0 messages: the local representation to every neighbor.
pub fn init_messages(node: usize, rep: &NaturalRepresentation, topology: &Topology) -> Vec<FusionMessage> {
    topology
        .neighbors(node)
        .iter()
        .map(|&j| FusionMessage::new(node, j, 0, rep.clone(), 1))
        .collect()
}

fn check_inbox<'a>(node: usize, topology: &Topology, inbox: &'a [FusionMessage]) -> Result<BTreeMap<usize, &'a FusionMessage>> {
    let mut by_sender = BTreeMap::new();
    for msg in inbox {
        if msg.to != node {
            return Err(Error::Protocol(format!("message for {} delivered to {node}", msg.to)));
        }
        if !topology.neighbors(node).contains(&msg.from) {
            return Err(Error::Protocol(format!("{} is not a neighbor of {node}", msg.from)));
        }
        if by_sender.insert(msg.from, msg).is_some() {
            return Err(Error::Protocol(format!("duplicate message from {} to {node} in one round", msg.from)));
        }
    }
    Ok(by_sender)
}

/// Messages for `step` given the inbox of the previous round. Absent
/// neighbors contribute nothing.
pub fn step_messages(
    node: usize,
    rep: &NaturalRepresentation,
    prior: &NaturalRepresentation,
    topology: &Topology,
    inbox: &[FusionMessage],
    step: u64,
) -> Result<Vec<FusionMessage>> {
    let received = check_inbox(node, topology, inbox)?;
    topology
        .neighbors(node)
        .iter()
        .map(|&j| {
            let mut payload = rep.clone();
            let mut coverage = 1;
            for (&k, msg) in &received {
                if k != j {
                    payload.add_assign_scaled(1.0, &msg.payload)?;
                    payload.add_assign_scaled(-1.0, prior)?;
                    coverage += msg.coverage;
                }
            }
            Ok(FusionMessage::new(node, j, step, payload, coverage))
        })
        .collect()
}

/// A node's view of the global representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub rep: NaturalRepresentation,
    /// Number of agents accounted for.
    pub coverage: usize,
    pub complete: bool,
}

/// `R_g = R_i + Σ_k (M_ki − R_0)` over the messages received.
pub fn assemble_global(
    node: usize,
    rep: &NaturalRepresentation,
    prior: &NaturalRepresentation,
    topology: &Topology,
    inbox: &[FusionMessage],
) -> Result<Assembly> {
    let received = check_inbox(node, topology, inbox)?;
    let mut out = rep.clone();
    let mut coverage = 1;
    for msg in received.values() {
        out.add_assign_scaled(1.0, &msg.payload)?;
        out.add_assign_scaled(-1.0, prior)?;
        coverage += msg.coverage;
    }
    Ok(Assembly {
        rep: out,
        coverage,
        complete: coverage == topology.node_count(),
    })
}

/// One transmission attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub delivered: bool,
}

/// What a receiver does with a neighbor whose message was lost this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossRecovery {
    /// Reuse the latest message that did arrive from that neighbor.
    KeepLatest,
    /// Treat the neighbor as silent for the round.
    DropRound,
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub assemblies: Vec<Assembly>,
    pub log: Vec<Delivery>,
    /// The messages each node would send next, for fixed-point checks.
    pub next_messages: Vec<FusionMessage>,
}

/// Runs `rounds` synchronous rounds. Round `r` transmits the step-`r`
/// messages; `deliver` decides per message whether it arrives. Every node
/// then assembles from what it holds after the last round.
pub fn run_protocol(
    topology: &Topology,
    reps: &[NaturalRepresentation],
    prior: &NaturalRepresentation,
    rounds: usize,
    recovery: LossRecovery,
    mut deliver: impl FnMut(&FusionMessage) -> bool,
) -> Result<ProtocolRun> {
    tree_diameter(topology)?;
    let n = topology.node_count();
    ensure_dim("run_protocol representations", n, reps.len())?;
    let mut outgoing: Vec<FusionMessage> = (0..n).flat_map(|i| init_messages(i, &reps[i], topology)).collect();
    let mut held: Vec<BTreeMap<usize, FusionMessage>> = vec![BTreeMap::new(); n];
    let mut log = Vec::new();
    for round in 0..rounds {
        if recovery == LossRecovery::DropRound {
            held.iter_mut().for_each(BTreeMap::clear);
        }
        for msg in outgoing.drain(..) {
            let delivered = deliver(&msg);
            log.push(Delivery {
                round,
                from: msg.from,
                to: msg.to,
                delivered,
            });
            if delivered {
                held[msg.to].insert(msg.from, msg);
            }
        }
        for i in 0..n {
            let inbox: Vec<FusionMessage> = held[i].values().cloned().collect();
            outgoing.extend(step_messages(i, &reps[i], prior, topology, &inbox, round as u64 + 1)?);
        }
    }
    let assemblies = (0..n)
        .map(|i| {
            let inbox: Vec<FusionMessage> = held[i].values().cloned().collect();
            assemble_global(i, &reps[i], prior, topology, &inbox)
        })
        .collect::<Result<_>>()?;
    Ok(ProtocolRun {
        assemblies,
        log,
        next_messages: outgoing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn rep(m: usize, seed: u64) -> NaturalRepresentation {
        let mut r = rng::rng_from_seed(seed);
        let a = rng::normal_matrix(&mut r, m, m);
        let mut p = a.tr_matmul(&a).unwrap();
        p.add_to_diagonal(1.0);
        p.symmetrize();
        NaturalRepresentation::new(p, (0..m).map(|_| rng::standard_normal(&mut r)).collect()).unwrap()
    }

    fn prior(m: usize) -> NaturalRepresentation {
        NaturalRepresentation::new(Matrix::identity(m), vec![0.0; m]).unwrap()
    }

    #[test]
    fn pair_fusion_identities() {
        let (a, b, r0) = (rep(3, 1), rep(3, 2), prior(3));
        assert_eq!(fuse_pair(&a, &r0, &r0).unwrap(), a);
        assert_eq!(fuse_pair(&a, &b, &r0).unwrap(), fuse_pair(&b, &a, &r0).unwrap());
        assert!(fuse_pair(&a, &rep(4, 3), &r0).is_err());
    }

    #[test]
    fn many_fusion_identities() {
        let r0 = prior(3);
        let rs = [rep(3, 1), rep(3, 2), rep(3, 3)];
        assert_eq!(fuse_many(&rs[..1], &r0).unwrap(), rs[0]);
        assert_eq!(fuse_many(&[r0.clone(), r0.clone(), r0.clone()], &r0).unwrap(), r0);
        let folded = fuse_pair(&fuse_pair(&rs[0], &rs[1], &r0).unwrap(), &rs[2], &r0).unwrap();
        let many = fuse_many(&rs, &r0).unwrap();
        assert!(many.distance(&folded).unwrap() <= 1e-12 * many.norm());
        assert!(fuse_many(&[], &r0).is_err());
    }

    #[test]
    fn diameters() {
        assert_eq!(tree_diameter(&Topology::line(1)).unwrap(), 0);
        assert_eq!(tree_diameter(&Topology::line(5)).unwrap(), 4);
        assert_eq!(tree_diameter(&Topology::star(7)).unwrap(), 2);
        let triangle = Topology::custom(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(matches!(tree_diameter(&triangle), Err(Error::NotATree { .. })));
    }

    #[test]
    fn spanning_trees() {
        let line = Topology::line(4);
        assert_eq!(spanning_tree(&line, &[3.0, 1.0, 2.0]).unwrap().edges(), line.edges());
        let triangle = Topology::custom(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let t = spanning_tree(&triangle, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.edges(), &[(0, 1), (1, 2)]);
        let split = Topology::custom(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(
            spanning_tree(&split, &[1.0, 1.0]).unwrap_err(),
            Error::Disconnected {
                components: vec![vec![0, 1], vec![2, 3]]
            }
        );
    }

    #[test]
    fn spanning_tree_of_random_graph() {
        let mut r = rng::rng_from_seed(4);
        let base = Topology::random_tree(20, 9);
        let mut edges = base.edges().to_vec();
        while edges.len() < 45 {
            let (a, b) = (r.random_range(0..20), r.random_range(0..20));
            if a != b && !edges.contains(&(a.min(b), a.max(b))) {
                edges.push((a.min(b), a.max(b)));
            }
        }
        let g = Topology::custom(20, &edges).unwrap();
        let lat: Vec<f64> = (0..edges.len()).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
        let t = spanning_tree(&g, &lat).unwrap();
        assert_eq!(t.edges().len(), 19);
        assert!(t.is_tree());
    }

    #[test]
    fn initial_messages() {
        let star = Topology::star(4);
        let r = rep(2, 5);
        let leaf = init_messages(2, &r, &star);
        assert_eq!(leaf.len(), 1);
        assert_eq!(leaf[0].payload(), &r);
        assert!(init_messages(0, &r, &Topology::line(1)).is_empty());
        assert_eq!(init_messages(0, &r, &star).len(), 3);
    }

    #[test]
    fn line_hand_trace() {
        // a(0) — b(1) — c(2)
        let topo = Topology::line(3);
        let r0 = prior(2);
        let reps = [rep(2, 1), rep(2, 2), rep(2, 3)];
        let inbox_b: Vec<_> = init_messages(0, &reps[0], &topo)
            .into_iter()
            .chain(init_messages(2, &reps[2], &topo))
            .filter(|m| m.to() == 1)
            .collect();
        let out = step_messages(1, &reps[1], &r0, &topo, &inbox_b, 1).unwrap();
        let to_c = out.iter().find(|m| m.to() == 2).unwrap();
        let expected = reps[1].add_scaled(1.0, &reps[0]).unwrap().add_scaled(-1.0, &r0).unwrap();
        assert_eq!(to_c.payload(), &expected);
        assert_eq!(to_c.coverage(), 2);

        let silent = step_messages(1, &reps[1], &r0, &topo, &[], 1).unwrap();
        assert!(silent.iter().all(|m| m.payload() == &reps[1]));

        let dup = vec![inbox_b[0].clone(), inbox_b[0].clone()];
        assert!(matches!(step_messages(1, &reps[1], &r0, &topo, &dup, 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn two_nodes_exchange_own_reps() {
        let topo = Topology::line(2);
        let r0 = prior(2);
        let reps = [rep(2, 7), rep(2, 8)];
        let inbox: Vec<_> = init_messages(1, &reps[1], &topo);
        let out = step_messages(0, &reps[0], &r0, &topo, &inbox, 1).unwrap();
        assert_eq!(out[0].payload(), &reps[0]);
        let run = run_protocol(&topo, &reps, &r0, 1, LossRecovery::KeepLatest, |_| true).unwrap();
        let pair = fuse_pair(&reps[0], &reps[1], &r0).unwrap();
        for a in &run.assemblies {
            assert!(a.rep.distance(&pair).unwrap() < 1e-12 * pair.norm());
            assert!(a.complete);
        }
    }

    #[test]
    fn single_node_assembles_itself() {
        let r = rep(2, 1);
        let run = run_protocol(&Topology::line(1), core::slice::from_ref(&r), &prior(2), 0, LossRecovery::KeepLatest, |_| true).unwrap();
        assert_eq!(run.assemblies[0].rep, r);
        assert!(run.assemblies[0].complete);
    }

    #[test]
    fn consensus_on_random_tree() {
        let topo = Topology::random_tree(12, 3);
        let d = tree_diameter(&topo).unwrap();
        let r0 = prior(3);
        let reps: Vec<_> = (0..12).map(|i| rep(3, 100 + i)).collect();
        let global = fuse_many(&reps, &r0).unwrap();
        let run = run_protocol(&topo, &reps, &r0, d, LossRecovery::KeepLatest, |_| true).unwrap();
        for a in &run.assemblies {
            assert!(a.rep.distance(&global).unwrap() <= 1e-10 * global.norm());
            assert!(a.complete);
        }
        let longer = run_protocol(&topo, &reps, &r0, d + 3, LossRecovery::KeepLatest, |_| true).unwrap();
        let again = run_protocol(&topo, &reps, &r0, d + 4, LossRecovery::KeepLatest, |_| true).unwrap();
        assert_eq!(longer.next_messages, again.next_messages.iter().map(|m| FusionMessage { step: m.step - 1, ..m.clone() }).collect::<Vec<_>>());
    }

    #[test]
    fn lossy_assemblies_remain_valid() {
        let topo = Topology::star(8);
        let r0 = prior(3);
        let reps: Vec<_> = (0..8).map(|i| rep(3, 10 + i)).collect();
        let mut r = rng::rng_from_seed(2);
        let run = run_protocol(&topo, &reps, &r0, 4, LossRecovery::KeepLatest, |_| r.random::<f64>() >= 0.99).unwrap();
        let incomplete = run.assemblies.iter().filter(|a| !a.complete).count();
        assert!(incomplete >= 6);
        assert!(run.assemblies.iter().all(|a| a.rep.is_positive_definite(0.0)));
        assert_eq!(run.log.len(), 4 * 14);
    }

    #[test]
    fn wire_round_trip() {
        let msg = FusionMessage::new(3, 5, 9, rep(4, 1), 2);
        let bytes = msg.encode();
        assert_eq!(bytes.len(), 8 * (4 + 20));
        assert_eq!(&bytes[..8], &4u64.to_le_bytes());
        let back = FusionMessage::decode(&bytes).unwrap();
        assert_eq!((back.from(), back.to(), back.step()), (3, 5, 9));
        assert_eq!(back.payload(), msg.payload());
        assert!(matches!(FusionMessage::decode(&bytes[..50]), Err(Error::Protocol(_))));
    }

    proptest! {
        #[test]
        fn consensus_holds_on_any_random_tree(n in 1usize..40, seed in any::<u64>()) {
            let topo = Topology::random_tree(n, seed);
            prop_assert!(topo.is_tree());
            let d = tree_diameter(&topo).unwrap();
            let r0 = prior(2);
            let reps: Vec<_> = (0..n).map(|i| rep(2, seed ^ i as u64)).collect();
            let global = fuse_many(&reps, &r0).unwrap();
            let run = run_protocol(&topo, &reps, &r0, d, LossRecovery::KeepLatest, |_| true).unwrap();
            for a in &run.assemblies {
                prop_assert!(a.rep.distance(&global).unwrap() <= 1e-10 * global.norm());
            }
        }

        #[test]
        fn pair_fusion_commutes(s1 in any::<u64>(), s2 in any::<u64>()) {
            let r0 = prior(3);
            let (a, b) = (rep(3, s1), rep(3, s2));
            prop_assert_eq!(fuse_pair(&a, &b, &r0).unwrap(), fuse_pair(&b, &a, &r0).unwrap());
        }
    }
}
