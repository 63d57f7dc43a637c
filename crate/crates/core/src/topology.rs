//! Network graph, link weights and the forwarding state derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for link weights. Shortest-path computation needs strictly
/// positive costs.
pub const W_MIN: f64 = 1e-3;

pub type NodeId = usize;
pub type LinkId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedLink {
    pub id: LinkId,
    pub src: NodeId,
    pub dst: NodeId,
    /// bits per second
    pub bandwidth: f64,
    /// seconds
    pub prop_delay: f64,
    /// waiting-room size in packets, excluding the packet on the wire
    pub queue_capacity: usize,
}

/// Link parameters before canonical ordering assigns ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub bandwidth: f64,
    pub prop_delay: f64,
    pub queue_capacity: usize,
}

impl LinkSpec {
    pub fn new(src: NodeId, dst: NodeId, bandwidth: f64) -> Self {
        Self {
            src,
            dst,
            bandwidth,
            prop_delay: 0.0,
            queue_capacity: 100,
        }
    }
}

/// Directed graph with links in canonical `(src, dst)` order. The link order
/// is the layout of every weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    links: Vec<DirectedLink>,
    outgoing: Vec<Vec<LinkId>>,
}

impl Topology {
    pub fn new(node_count: usize, specs: &[LinkSpec]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::input("topology needs at least one node"));
        }
        let mut specs = specs.to_vec();
        for (i, s) in specs.iter().enumerate() {
            if s.src >= node_count || s.dst >= node_count {
                return Err(Error::input(format!(
                    "link {i} ({} -> {}) references a node outside 0..{node_count}",
                    s.src, s.dst
                )));
            }
            if s.src == s.dst {
                return Err(Error::input(format!("link {i} is a self-loop on node {}", s.src)));
            }
            if !(s.bandwidth > 0.0 && s.bandwidth.is_finite()) {
                return Err(Error::input(format!("link {i} has non-positive bandwidth")));
            }
            if !(s.prop_delay >= 0.0 && s.prop_delay.is_finite()) {
                return Err(Error::input(format!("link {i} has negative propagation delay")));
            }
            if s.queue_capacity == 0 {
                return Err(Error::input(format!("link {i} has zero queue capacity")));
            }
        }
        specs.sort_by_key(|s| (s.src, s.dst));
        if let Some(w) = specs.windows(2).find(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst)) {
            return Err(Error::input(format!(
                "duplicate link {} -> {}",
                w[0].src, w[0].dst
            )));
        }

        let links: Vec<DirectedLink> = specs
            .iter()
            .enumerate()
            .map(|(id, s)| DirectedLink {
                id,
                src: s.src,
                dst: s.dst,
                bandwidth: s.bandwidth,
                prop_delay: s.prop_delay,
                queue_capacity: s.queue_capacity,
            })
            .collect();
        let mut outgoing = vec![Vec::new(); node_count];
        for l in &links {
            outgoing[l.src].push(l.id);
        }
        Ok(Self {
            node_count,
            links,
            outgoing,
        })
    }

    /// The four-router example network: v1..v4 as nodes 0..3, a diamond
    /// through v2 and v3 plus the direct v1-v4 chord, every link duplex.
    pub fn diamond_with_chord(bandwidth: f64, queue_capacity: usize) -> Self {
        let pairs = [(0, 1), (0, 2), (1, 3), (2, 3), (0, 3)];
        let specs: Vec<LinkSpec> = pairs
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .map(|(src, dst)| LinkSpec {
                queue_capacity,
                ..LinkSpec::new(src, dst, bandwidth)
            })
            .collect();
        Self::new(4, &specs).expect("static topology is valid")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[DirectedLink] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &DirectedLink {
        &self.links[id]
    }

    pub fn outgoing(&self, node: NodeId) -> &[LinkId] {
        &self.outgoing[node]
    }

    pub fn link_between(&self, src: NodeId, dst: NodeId) -> Option<LinkId> {
        self.outgoing
            .get(src)?
            .iter()
            .copied()
            .find(|&l| self.links[l].dst == dst)
    }

    pub fn max_bandwidth(&self) -> f64 {
        self.links.iter().map(|l| l.bandwidth).fold(0.0, f64::max)
    }
}

/// One routing cost per canonical link.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAssignment {
    weights: Vec<f64>,
}

impl WeightAssignment {
    pub fn new(topology: &Topology, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != topology.link_count() {
            return Err(Error::DimensionMismatch {
                context: "weight assignment",
                expected: topology.link_count(),
                found: weights.len(),
            });
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= W_MIN))
        {
            return Err(Error::input(format!(
                "weight {i} = {w} is not a finite value >= {W_MIN}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(topology: &Topology, value: f64) -> Result<Self> {
        Self::new(topology, vec![value; topology.link_count()])
    }

    /// Clamps a raw action into `[W_MIN, upper]`. Rejects NaN.
    pub fn from_action(topology: &Topology, action: &[f64], upper: f64) -> Result<Self> {
        if action.len() != topology.link_count() {
            return Err(Error::DimensionMismatch {
                context: "action",
                expected: topology.link_count(),
                found: action.len(),
            });
        }
        if let Some(i) = action.iter().position(|a| a.is_nan()) {
            return Err(Error::input(format!("action entry {i} is NaN")));
        }
        let weights = action.iter().map(|a| a.clamp(W_MIN, upper)).collect();
        Ok(Self { weights })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, link: LinkId) -> f64 {
        self.weights[link]
    }
}

/// Shortest-path result toward one destination.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCost {
    pub cost: f64,
    /// Outgoing links on some cost-minimal path, ascending by link id.
    pub first_links: Vec<LinkId>,
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Minimal path cost from every node to `destination`, with all cost-minimal
/// first hops. Unreachable nodes get infinite cost and no links.
pub fn dijkstra(
    topology: &Topology,
    weights: &WeightAssignment,
    destination: NodeId,
) -> Result<Vec<PathCost>> {
    let n = topology.node_count();
    if destination >= n {
        return Err(Error::input(format!(
            "destination {destination} out of range 0..{n}"
        )));
    }
    if weights.as_slice().len() != topology.link_count() {
        return Err(Error::DimensionMismatch {
            context: "dijkstra weights",
            expected: topology.link_count(),
            found: weights.as_slice().len(),
        });
    }

    // Settle nodes in order of distance to `destination`, relaxing over
    // incoming links. Graphs are small, so the O(N^2) scan is fine.
    let mut dist = vec![f64::INFINITY; n];
    let mut settled = vec![false; n];
    dist[destination] = 0.0;
    for _ in 0..n {
        let Some(u) = (0..n)
            .filter(|&v| !settled[v] && dist[v].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))
        else {
            break;
        };
        settled[u] = true;
        for l in topology.links().iter().filter(|l| l.dst == u) {
            let candidate = dist[u] + weights.get(l.id);
            if candidate < dist[l.src] {
                dist[l.src] = candidate;
            }
        }
    }

    Ok((0..n)
        .map(|v| {
            let cost = dist[v];
            let first_links = if v == destination || !cost.is_finite() {
                Vec::new()
            } else {
                topology
                    .outgoing(v)
                    .iter()
                    .copied()
                    .filter(|&l| {
                        let via = weights.get(l) + dist[topology.link(l).dst];
                        via.is_finite() && nearly_equal(via, cost)
                    })
                    .collect()
            };
            PathCost { cost, first_links }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardingMode {
    SinglePath,
    WeightedMultipath,
}

/// Per (node, destination) path cost and next-hop distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    node_count: usize,
    dist: Vec<f64>,
    next_hops: Vec<Vec<(LinkId, f64)>>,
}

impl RoutingState {
    pub fn dist(&self, node: NodeId, destination: NodeId) -> f64 {
        self.dist[node * self.node_count + destination]
    }

    pub fn next_hops(&self, node: NodeId, destination: NodeId) -> &[(LinkId, f64)] {
        &self.next_hops[node * self.node_count + destination]
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Picks a next hop given `u` uniform in [0, 1). `None` at the destination
    /// or when it is unreachable.
    pub fn pick(&self, node: NodeId, destination: NodeId, u: f64) -> Option<LinkId> {
        let hops = self.next_hops(node, destination);
        let mut acc = 0.0;
        for &(link, p) in hops {
            acc += p;
            if u < acc {
                return Some(link);
            }
        }
        hops.last().map(|&(l, _)| l)
    }
}

pub fn build_routing_state(
    topology: &Topology,
    weights: &WeightAssignment,
    mode: ForwardingMode,
) -> Result<RoutingState> {
    let n = topology.node_count();
    let mut dist = vec![f64::INFINITY; n * n];
    let mut next_hops = vec![Vec::new(); n * n];

    for dest in 0..n {
        let paths = dijkstra(topology, weights, dest)?;
        for (node, path) in paths.iter().enumerate() {
            dist[node * n + dest] = path.cost;
        }
        for (node, path) in paths.iter().enumerate() {
            if node == dest || !path.cost.is_finite() {
                continue;
            }
            let hops = match mode {
                ForwardingMode::SinglePath => {
                    let best = path
                        .first_links
                        .iter()
                        .copied()
                        .min_by_key(|&l| (topology.link(l).dst, l))
                        .expect("reachable node has a first hop");
                    vec![(best, 1.0)]
                }
                ForwardingMode::WeightedMultipath => {
                    let scored: Vec<(LinkId, f64)> = topology
                        .outgoing(node)
                        .iter()
                        .copied()
                        .filter_map(|l| {
                            let next = paths[topology.link(l).dst].cost;
                            (next < path.cost).then(|| (l, 1.0 / (weights.get(l) + next)))
                        })
                        .collect();
                    let total: f64 = scored.iter().map(|(_, s)| s).sum();
                    scored.into_iter().map(|(l, s)| (l, s / total)).collect()
                }
            };
            next_hops[node * n + dest] = hops;
        }
    }

    Ok(RoutingState {
        node_count: n,
        dist,
        next_hops,
    })
}
