//! Link-state routing over the trusted subgraph: fewest hops to the sink,
//! ties broken by the strongest bottleneck trust, then by lowest node id.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::trust::TrustTable;
use crate::{NodeId, Position};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("sink {0} is not in the trusted graph")]
    SinkNotInGraph(NodeId),
}

/// Directed graph of links usable for forwarding, annotated with link trust.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrustedGraph {
    nodes: BTreeSet<NodeId>,
    out_edges: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
}

impl TrustedGraph {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        let out_edges = nodes.iter().map(|&n| (n, BTreeMap::new())).collect();
        Self { nodes, out_edges }
    }

    /// Adds `from → to`; both endpoints must already be graph nodes.
    pub fn add_edge(&mut self, from: NodeId, to: NodeId, trust: f64) -> bool {
        if from == to || !self.nodes.contains(&to) {
            return false;
        }
        match self.out_edges.get_mut(&from) {
            Some(out) => {
                out.insert(to, trust);
                true
            }
            None => false,
        }
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    pub fn edge(&self, from: NodeId, to: NodeId) -> Option<f64> {
        self.out_edges.get(&from)?.get(&to).copied()
    }

    pub fn successors(&self, from: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.out_edges
            .get(&from)
            .into_iter()
            .flat_map(|m| m.iter().map(|(&n, &t)| (n, t)))
    }

    pub fn edge_count(&self) -> usize {
        self.out_edges.values().map(BTreeMap::len).sum()
    }
}

/// Edge `i → j` exists iff the two are within radio range, neither is
/// malicious, and `j` trusts `i` at or above the threshold.
pub fn build_trusted_graph(
    positions: &BTreeMap<NodeId, Position>,
    trust: &TrustTable,
    malicious: &BTreeSet<NodeId>,
    radio_range: f64,
) -> TrustedGraph {
    let mut graph = TrustedGraph::new(positions.keys().copied().filter(|n| !malicious.contains(n)));
    for (&i, pi) in positions {
        if malicious.contains(&i) {
            continue;
        }
        for (&j, pj) in positions {
            if i == j || malicious.contains(&j) || pi.distance(pj) > radio_range {
                continue;
            }
            if let Some(t) = trust.trust(j, i) {
                if t >= trust.threshold() {
                    graph.add_edge(i, j, t);
                }
            }
        }
    }
    graph
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RouteEntry {
    Sink,
    Via {
        next_hop: NodeId,
        hop_count: u32,
        path_min_trust: f64,
    },
    Unreachable,
}

impl RouteEntry {
    pub fn next_hop(&self) -> Option<NodeId> {
        match *self {
            RouteEntry::Via { next_hop, .. } => Some(next_hop),
            _ => None,
        }
    }

    pub fn hop_count(&self) -> Option<u32> {
        match *self {
            RouteEntry::Sink => Some(0),
            RouteEntry::Via { hop_count, .. } => Some(hop_count),
            RouteEntry::Unreachable => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    sink: NodeId,
    entries: BTreeMap<NodeId, RouteEntry>,
}

impl RoutingTable {
    pub fn sink(&self) -> NodeId {
        self.sink
    }

    /// Nodes outside the graph are unreachable.
    pub fn route(&self, node: NodeId) -> RouteEntry {
        self.entries.get(&node).copied().unwrap_or(RouteEntry::Unreachable)
    }

    pub fn next_hop(&self, node: NodeId) -> Option<NodeId> {
        self.route(node).next_hop()
    }

    pub fn entries(&self) -> impl Iterator<Item = (NodeId, RouteEntry)> + '_ {
        self.entries.iter().map(|(&n, &e)| (n, e))
    }

    /// Node ids along the route from `node` to the sink, inclusive.
    pub fn path(&self, node: NodeId) -> Option<Vec<NodeId>> {
        let mut path = vec![node];
        let mut cur = node;
        loop {
            match self.route(cur) {
                RouteEntry::Sink => return Some(path),
                RouteEntry::Unreachable => return None,
                RouteEntry::Via { next_hop, .. } => {
                    if path.len() > self.entries.len() {
                        return None;
                    }
                    path.push(next_hop);
                    cur = next_hop;
                }
            }
        }
    }
}

pub fn compute_routes(graph: &TrustedGraph, sink: NodeId) -> Result<RoutingTable, RoutingError> {
    if !graph.contains(sink) {
        return Err(RoutingError::SinkNotInGraph(sink));
    }

    let mut predecessors: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &from in graph.nodes() {
        for (to, _) in graph.successors(from) {
            predecessors.entry(to).or_default().push(from);
        }
    }

    // Hop distances on reversed edges, recorded in visiting order.
    let mut hops: BTreeMap<NodeId, u32> = BTreeMap::from([(sink, 0)]);
    let mut order = Vec::new();
    let mut frontier = VecDeque::from([sink]);
    while let Some(v) = frontier.pop_front() {
        order.push(v);
        let h = hops[&v];
        for &u in predecessors.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            if !hops.contains_key(&u) {
                hops.insert(u, h + 1);
                frontier.push_back(u);
            }
        }
    }

    let mut entries: BTreeMap<NodeId, RouteEntry> =
        graph.nodes().iter().map(|&n| (n, RouteEntry::Unreachable)).collect();
    entries.insert(sink, RouteEntry::Sink);
    let mut bottleneck: BTreeMap<NodeId, f64> = BTreeMap::from([(sink, f64::INFINITY)]);

    for &u in order.iter().skip(1) {
        let h = hops[&u];
        let mut best: Option<(NodeId, f64)> = None;
        for (v, t) in graph.successors(u) {
            if hops.get(&v) != Some(&(h - 1)) {
                continue;
            }
            let via = t.min(bottleneck[&v]);
            if best.is_none_or(|(_, b)| via > b) {
                best = Some((v, via));
            }
        }
        let (next_hop, path_min_trust) = best.expect("BFS predecessor is a successor one hop closer");
        bottleneck.insert(u, path_min_trust);
        entries.insert(
            u,
            RouteEntry::Via {
                next_hop,
                hop_count: h,
                path_min_trust,
            },
        );
    }

    Ok(RoutingTable { sink, entries })
}
