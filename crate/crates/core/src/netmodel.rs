//! Network graph, unit-disk connectivity and the forwarding tree toward the sink.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = u32;

/// Node 1 is always the sink.
pub const SINK: NodeId = 1;

const TEN_NODE_TOPOLOGY: &str = include_str!("../data/ten_node.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePosition {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

impl NodePosition {
    pub fn new(id: NodeId, x: f64, y: f64) -> Self {
        Self { id, x, y }
    }

    fn distance_sq(&self, other: &NodePosition) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// On-disk topology description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub nodes: Vec<NodePosition>,
    pub tx_range_m: f64,
    pub if_range_m: f64,
}

impl TopologyFile {
    /// The ten-node grid used throughout the evaluation (30 m spacing, 50 m / 100 m ranges).
    pub fn ten_node() -> Self {
        Self::from_json(TEN_NODE_TOPOLOGY).expect("bundled topology is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn build(&self) -> Result<NetworkGraph> {
        NetworkGraph::build(&self.nodes, self.tx_range_m, self.if_range_m)
    }
}

/// Unit-disk graph: an ordered pair is a link iff the endpoints are within `tx_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<NodePosition>,
    links: Vec<(NodeId, NodeId)>,
    tx_range: f64,
    if_range: f64,
}

impl NetworkGraph {
    pub fn build(positions: &[NodePosition], tx_range: f64, if_range: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::Config(format!(
                "a topology needs at least 2 nodes, got {}",
                positions.len()
            )));
        }
        if !(tx_range > 0.0) || !tx_range.is_finite() {
            return Err(Error::Config(format!("tx_range must be > 0, got {tx_range}")));
        }
        if !(if_range >= tx_range) || !if_range.is_finite() {
            return Err(Error::Config(format!(
                "if_range ({if_range}) must be >= tx_range ({tx_range})"
            )));
        }
        let mut nodes = positions.to_vec();
        nodes.sort_by_key(|p| p.id);
        for pair in nodes.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Config(format!("duplicate node id {}", pair[0].id)));
            }
        }
        for p in &nodes {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Config(format!("node {} has a non-finite coordinate", p.id)));
            }
        }
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if a.x == b.x && a.y == b.y {
                    return Err(Error::Config(format!(
                        "nodes {} and {} share a position",
                        a.id, b.id
                    )));
                }
            }
        }
        if nodes[0].id != SINK {
            return Err(Error::Config(format!("sink node {SINK} is missing")));
        }

        let range_sq = tx_range * tx_range;
        let mut links = Vec::new();
        for a in &nodes {
            for b in &nodes {
                if a.id != b.id && a.distance_sq(b) <= range_sq {
                    links.push((a.id, b.id));
                }
            }
        }
        Ok(Self {
            nodes,
            links,
            tx_range,
            if_range,
        })
    }

    pub fn nodes(&self) -> &[NodePosition] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|p| p.id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Links in canonical (lexicographic) order; the index into this slice is the link index.
    pub fn links(&self) -> &[(NodeId, NodeId)] {
        &self.links
    }

    pub fn tx_range(&self) -> f64 {
        self.tx_range
    }

    pub fn if_range(&self) -> f64 {
        self.if_range
    }

    pub fn sink(&self) -> NodeId {
        SINK
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.index_of(id).is_some()
    }

    /// Dense index of a node id (position in `nodes()`).
    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |p| p.id).ok()
    }

    pub fn position(&self, id: NodeId) -> Option<&NodePosition> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn has_link(&self, src: NodeId, dst: NodeId) -> bool {
        self.link_index(src, dst).is_some()
    }

    pub fn link_index(&self, src: NodeId, dst: NodeId) -> Option<usize> {
        self.links.binary_search(&(src, dst)).ok()
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.links
            .iter()
            .filter(move |(a, _)| *a == id)
            .map(|(_, b)| *b)
    }

    /// True if `b` lies inside the interference disk of `a`.
    pub fn interferes(&self, a: NodeId, b: NodeId) -> bool {
        match (self.position(a), self.position(b)) {
            (Some(pa), Some(pb)) => pa.distance_sq(pb) <= self.if_range * self.if_range,
            _ => false,
        }
    }

    /// Row-major |N|x|N| 0/1 adjacency matrix in node-index order.
    pub fn adjacency(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut adj = vec![0.0; n * n];
        for &(a, b) in &self.links {
            let (i, j) = (self.index_of(a).unwrap(), self.index_of(b).unwrap());
            adj[i * n + j] = 1.0;
        }
        adj
    }

    /// Stable hash of positions and ranges, used to tie checkpoints to a topology.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.nodes {
            hasher.update(p.id.to_le_bytes());
            hasher.update(p.x.to_le_bytes());
            hasher.update(p.y.to_le_bytes());
        }
        hasher.update(self.tx_range.to_le_bytes());
        hasher.update(self.if_range.to_le_bytes());
        hex::encode(&hasher.finalize()[..16])
    }
}

/// Single-path routing tree: every non-sink node has one parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardingTree {
    sink: NodeId,
    parent: BTreeMap<NodeId, NodeId>,
    hops: BTreeMap<NodeId, usize>,
}

impl ForwardingTree {
    /// Shortest-hop tree rooted at the sink; ties go to the lowest parent id.
    pub fn build(g: &NetworkGraph) -> Result<Self> {
        let sink = g.sink();
        let mut hops: BTreeMap<NodeId, usize> = BTreeMap::new();
        hops.insert(sink, 0);
        let mut queue = VecDeque::from([sink]);
        while let Some(n) = queue.pop_front() {
            let d = hops[&n];
            for m in g.neighbors(n) {
                if !hops.contains_key(&m) {
                    hops.insert(m, d + 1);
                    queue.push_back(m);
                }
            }
        }
        if let Some(missing) = g.node_ids().find(|id| !hops.contains_key(id)) {
            return Err(Error::Topology(format!(
                "node {missing} cannot reach the sink"
            )));
        }
        let mut parent = BTreeMap::new();
        for id in g.node_ids().filter(|&id| id != sink) {
            let d = hops[&id];
            // neighbors() iterates in ascending id order, so the first hit is the lowest id
            let p = g
                .neighbors(id)
                .find(|m| hops[m] + 1 == d)
                .expect("bfs guarantees a closer neighbor");
            parent.insert(id, p);
        }
        Ok(Self { sink, parent, hops })
    }

    /// Builds a tree from an explicit parent map, rejecting cycles and off-graph edges.
    pub fn from_parents(g: &NetworkGraph, parent: BTreeMap<NodeId, NodeId>) -> Result<Self> {
        let sink = g.sink();
        if parent.contains_key(&sink) {
            return Err(Error::Topology("the sink cannot have a parent".into()));
        }
        for id in g.node_ids().filter(|&id| id != sink) {
            let p = *parent
                .get(&id)
                .ok_or_else(|| Error::Topology(format!("node {id} has no parent")))?;
            if !g.has_link(id, p) {
                return Err(Error::Topology(format!("({id}, {p}) is not a wireless link")));
            }
        }
        let mut hops = BTreeMap::new();
        hops.insert(sink, 0);
        for id in g.node_ids() {
            let mut seen = BTreeSet::new();
            let mut cur = id;
            let mut count = 0;
            while cur != sink {
                if !seen.insert(cur) {
                    return Err(Error::Topology(format!("cycle through node {cur}")));
                }
                cur = parent[&cur];
                count += 1;
            }
            hops.insert(id, count);
        }
        Ok(Self { sink, parent, hops })
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent.get(&n).copied()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.hops.contains_key(&n)
    }

    pub fn hops(&self, n: NodeId) -> Option<usize> {
        self.hops.get(&n).copied()
    }

    pub fn max_hops(&self) -> usize {
        self.hops.values().copied().max().unwrap_or(0)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.hops.keys().copied()
    }

    pub fn children(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.parent
            .iter()
            .filter(move |(_, p)| **p == n)
            .map(|(c, _)| *c)
    }

    /// (child, parent) pairs in ascending child order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.parent.iter().map(|(c, p)| (*c, *p)).collect()
    }

    pub fn is_tree_edge(&self, src: NodeId, dst: NodeId) -> bool {
        self.parent(src) == Some(dst)
    }

    /// Links from `n` to the sink; empty for the sink itself.
    pub fn path_links(&self, n: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        if !self.contains(n) {
            return Err(Error::UnknownNode(n));
        }
        let mut out = Vec::new();
        let mut cur = n;
        while let Some(p) = self.parent(cur) {
            out.push((cur, p));
            cur = p;
        }
        Ok(out)
    }

    /// Nodes ordered deepest first, so children always precede their parent.
    pub fn leaves_first(&self) -> Vec<NodeId> {
        let mut order: Vec<NodeId> = self.nodes().collect();
        order.sort_by(|a, b| self.hops[b].cmp(&self.hops[a]).then(a.cmp(b)));
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_node() -> NetworkGraph {
        TopologyFile::ten_node().build().unwrap()
    }

    #[test]
    fn ten_node_links_follow_distances() {
        let g = ten_node();
        assert_eq!(g.node_count(), 10);
        assert!(g.has_link(3, 4));
        assert!(g.has_link(1, 3));
        assert!(!g.has_link(1, 6));
        // 50 m exactly: (0,30) to (-30,70)
        assert!(g.has_link(3, 5));
        assert_eq!(g.links().len() % 2, 0);
        let drawn = [
            (1, 2), (1, 3), (1, 4), (2, 3), (2, 5), (2, 6), (3, 4), (3, 5), (3, 6), (3, 7),
            (4, 6), (4, 7), (5, 6), (5, 8), (5, 9), (6, 7), (6, 8), (6, 9), (6, 10), (7, 9),
            (7, 10), (8, 9), (9, 10),
        ];
        assert_eq!(g.links().len(), 2 * drawn.len());
        for (a, b) in drawn {
            assert!(g.has_link(a, b) && g.has_link(b, a), "{a}-{b}");
        }
    }

    #[test]
    fn out_of_range_pair_has_no_links() {
        let g = NetworkGraph::build(
            &[NodePosition::new(1, 0.0, 0.0), NodePosition::new(2, 0.0, 60.0)],
            50.0,
            100.0,
        )
        .unwrap();
        assert!(g.links().is_empty());
        assert!(matches!(ForwardingTree::build(&g), Err(Error::Topology(_))));
    }

    #[test]
    fn rejects_bad_configs() {
        let dup = [NodePosition::new(1, 0.0, 0.0), NodePosition::new(1, 5.0, 0.0)];
        assert!(matches!(NetworkGraph::build(&dup, 50.0, 100.0), Err(Error::Config(_))));
        let ok = [NodePosition::new(1, 0.0, 0.0), NodePosition::new(2, 5.0, 0.0)];
        assert!(matches!(NetworkGraph::build(&ok, 0.0, 100.0), Err(Error::Config(_))));
        assert!(matches!(NetworkGraph::build(&ok, -3.0, 100.0), Err(Error::Config(_))));
        assert!(matches!(NetworkGraph::build(&ok, 50.0, 10.0), Err(Error::Config(_))));
        assert!(matches!(NetworkGraph::build(&ok[..1], 50.0, 100.0), Err(Error::Config(_))));
        let same = [NodePosition::new(1, 0.0, 0.0), NodePosition::new(2, 0.0, 0.0)];
        assert!(matches!(NetworkGraph::build(&same, 50.0, 100.0), Err(Error::Config(_))));
    }

    #[test]
    fn ten_node_tree_tie_breaks_to_lowest_id() {
        let g = ten_node();
        let t = ForwardingTree::build(&g).unwrap();
        for n in [2, 3, 4] {
            assert_eq!(t.parent(n), Some(1));
        }
        assert_eq!(t.parent(5), Some(2));
        assert_eq!(t.parent(6), Some(2));
        assert_eq!(t.parent(7), Some(3));
        assert_eq!(t.parent(8), Some(5));
        assert_eq!(t.max_hops(), 3);
    }

    #[test]
    fn path_links_walk_to_sink() {
        let t = ForwardingTree::build(&ten_node()).unwrap();
        assert_eq!(t.path_links(8).unwrap(), vec![(8, 5), (5, 2), (2, 1)]);
        assert_eq!(t.path_links(3).unwrap(), vec![(3, 1)]);
        assert!(t.path_links(1).unwrap().is_empty());
        assert!(matches!(t.path_links(42), Err(Error::UnknownNode(42))));
    }

    #[test]
    fn two_node_chain() {
        let g = NetworkGraph::build(
            &[NodePosition::new(1, 0.0, 0.0), NodePosition::new(2, 10.0, 0.0)],
            50.0,
            100.0,
        )
        .unwrap();
        let t = ForwardingTree::build(&g).unwrap();
        assert_eq!(t.parent(2), Some(1));
    }

    #[test]
    fn from_parents_rejects_cycles() {
        let g = ten_node();
        let mut parents: BTreeMap<NodeId, NodeId> = ForwardingTree::build(&g)
            .unwrap()
            .edges()
            .into_iter()
            .collect();
        parents.insert(2, 5);
        assert!(matches!(
            ForwardingTree::from_parents(&g, parents),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn leaves_first_puts_children_before_parents() {
        let t = ForwardingTree::build(&ten_node()).unwrap();
        let order = t.leaves_first();
        let pos = |n| order.iter().position(|&x| x == n).unwrap();
        for (c, p) in t.edges() {
            assert!(pos(c) < pos(p));
        }
    }
}
