//! Structure of a preference dataset viewed as a graph.
//!
//! Each node is a rollout and each deduplicated label an edge, with strict
//! labels also carrying a winner-to-loser orientation. The module computes
//! the connectivity metrics used to compare datasets produced by different
//! acquisition strategies: average clustering coefficient, global efficiency
//! on the largest connected component, and the number of comparison "chains"
//! the strict orientation supports, under several selectable readings of
//! that count.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::oracle::PreferenceLabel;
use crate::reward::{PreferencePair, Provenance};
use crate::rollouts::RolloutDataset;

/// One deduplicated preference edge; endpoints are stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphEdge {
    pub a: u64,
    pub b: u64,
    /// The preferred endpoint for strict labels; `None` means judged equal.
    pub winner: Option<u64>,
    pub provenance: Provenance,
}

/// How to count the comparison chains a dataset supports. The notion is
/// under-determined, so every reading stays available behind this switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChainCountMethod {
    /// Ordered node pairs joined by a directed path in the strict
    /// orientation: the number of derivable ordered comparisons.
    #[default]
    ReachablePairs,
    /// Connected components of the strict orientation that form one simple
    /// directed path.
    PathComponents,
    /// Maximal directed paths from sources to sinks, after collapsing
    /// strongly connected components; saturates at `u64::MAX`.
    MaximalPaths,
}

impl FromStr for ChainCountMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reachable-pairs" => Ok(ChainCountMethod::ReachablePairs),
            "path-components" => Ok(ChainCountMethod::PathComponents),
            "maximal-paths" => Ok(ChainCountMethod::MaximalPaths),
            other => Err(format!(
                "unknown chain-count method `{other}` (expected reachable-pairs, \
                 path-components, or maximal-paths)"
            )),
        }
    }
}

/// A chain count plus a warning flag for cyclic strict orientations, which
/// can only arise from noisy or inconsistent labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCount {
    pub count: u64,
    pub cyclic: bool,
}

/// Deduplicated preference graph with an undirected view for connectivity
/// metrics and a strict winner-to-loser orientation for chain counts.
#[derive(Debug, Clone)]
pub struct PreferenceGraph {
    /// Sorted node ids.
    nodes: Vec<u64>,
    index: HashMap<u64, usize>,
    edges: Vec<GraphEdge>,
    /// Undirected adjacency by node position, sorted.
    neighbors: Vec<Vec<usize>>,
    /// Strict-preference successors (winner to loser) by node position.
    successors: Vec<Vec<usize>>,
}

/// One node per rollout mentioned by any pair, one edge per distinct
/// unordered pair; repeats keep the first label seen.
pub fn build_graph(pairs: &[PreferencePair]) -> PreferenceGraph {
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for pair in pairs {
        debug_assert_ne!(pair.first, pair.second, "self-comparisons are not representable");
        if pair.first == pair.second {
            continue;
        }
        let key = (pair.first.min(pair.second), pair.first.max(pair.second));
        if !seen.insert(key) {
            continue;
        }
        let winner = match pair.label {
            PreferenceLabel::FirstPreferred => Some(pair.first),
            PreferenceLabel::SecondPreferred => Some(pair.second),
            PreferenceLabel::Equal => None,
        };
        edges.push(GraphEdge { a: key.0, b: key.1, winner, provenance: pair.provenance });
    }
    PreferenceGraph::from_edges(edges)
}

impl PreferenceGraph {
    fn from_edges(edges: Vec<GraphEdge>) -> Self {
        let mut nodes: Vec<u64> = edges.iter().flat_map(|e| [e.a, e.b]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let index: HashMap<u64, usize> =
            nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        let mut successors: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for edge in &edges {
            let (i, j) = (index[&edge.a], index[&edge.b]);
            neighbors[i].push(j);
            neighbors[j].push(i);
            if let Some(winner) = edge.winner {
                let (from, to) = if winner == edge.a { (i, j) } else { (j, i) };
                successors[from].push(to);
            }
        }
        for list in neighbors.iter_mut().chain(successors.iter_mut()) {
            list.sort_unstable();
        }
        PreferenceGraph { nodes, index, edges, neighbors, successors }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[u64] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Average local clustering over all nodes; nodes of degree below 2
    /// contribute 0, and the empty graph scores 0.
    pub fn clustering_coefficient(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let edge_set: HashSet<(usize, usize)> = self
            .edges
            .iter()
            .map(|e| {
                let (i, j) = (self.index[&e.a], self.index[&e.b]);
                (i.min(j), i.max(j))
            })
            .collect();
        let mut total = 0.0;
        for neighborhood in &self.neighbors {
            let degree = neighborhood.len();
            if degree < 2 {
                continue;
            }
            let mut triangles = 0usize;
            for (offset, &x) in neighborhood.iter().enumerate() {
                for &y in &neighborhood[offset + 1..] {
                    if edge_set.contains(&(x.min(y), x.max(y))) {
                        triangles += 1;
                    }
                }
            }
            total += 2.0 * triangles as f64 / (degree * (degree - 1)) as f64;
        }
        total / self.nodes.len() as f64
    }

    fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &w in &self.neighbors[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    fn undirected_components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.nodes.len()];
        let mut components = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            let mut component = vec![start];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.neighbors[v] {
                    if !seen[w] {
                        seen[w] = true;
                        component.push(w);
                        queue.push_back(w);
                    }
                }
            }
            component.sort_unstable();
            components.push(component);
        }
        components
    }

    /// Induced subgraph on the largest undirected component; size ties go to
    /// the component holding the smallest node id.
    pub fn largest_connected_component(&self) -> PreferenceGraph {
        let components = self.undirected_components();
        let Some(largest) = components
            .iter()
            .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        else {
            return PreferenceGraph::from_edges(Vec::new());
        };
        let keep: HashSet<u64> = largest.iter().map(|&v| self.nodes[v]).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| keep.contains(&e.a) && keep.contains(&e.b))
            .copied()
            .collect();
        PreferenceGraph::from_edges(edges)
    }

    /// Mean inverse shortest-path length over ordered node pairs of the
    /// largest connected component; graphs with fewer than two nodes
    /// score 0.
    pub fn global_efficiency(&self) -> f64 {
        let lcc = self.largest_connected_component();
        let n = lcc.nodes.len();
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for source in 0..n {
            for (target, d) in lcc.bfs_distances(source).iter().enumerate() {
                if target != source {
                    // Every pair inside one component has a finite distance.
                    total += 1.0 / d.unwrap() as f64;
                }
            }
        }
        total / (n * (n - 1)) as f64
    }

    fn strict_is_cyclic(&self) -> bool {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for succs in &self.successors {
            for &w in succs {
                indeg[w] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut processed = 0;
        while let Some(v) = queue.pop_front() {
            processed += 1;
            for &w in &self.successors[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        processed < n
    }

    fn reachable_pair_count(&self) -> u64 {
        let n = self.nodes.len();
        let mut count = 0u64;
        for source in 0..n {
            let mut seen = vec![false; n];
            seen[source] = true;
            let mut queue = VecDeque::from([source]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.successors[v] {
                    if !seen[w] {
                        seen[w] = true;
                        count += 1;
                        queue.push_back(w);
                    }
                }
            }
        }
        count
    }

    fn path_component_count(&self) -> u64 {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut outdeg = vec![0usize; n];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (v, succs) in self.successors.iter().enumerate() {
            outdeg[v] = succs.len();
            for &w in succs {
                indeg[w] += 1;
                adj[v].push(w);
                adj[w].push(v);
            }
        }
        let mut seen = vec![false; n];
        let mut count = 0u64;
        for start in 0..n {
            if seen[start] || adj[start].is_empty() {
                continue;
            }
            let mut component = vec![start];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        component.push(w);
                        queue.push_back(w);
                    }
                }
            }
            let strict_edges: usize = component.iter().map(|&v| outdeg[v]).sum();
            let is_path = strict_edges == component.len() - 1
                && component.iter().all(|&v| indeg[v] <= 1 && outdeg[v] <= 1);
            if is_path {
                count += 1;
            }
        }
        count
    }

    /// Strongly connected component id per node, via two depth-first passes.
    fn strongly_connected_components(&self) -> (Vec<usize>, usize) {
        let n = self.nodes.len();
        let mut order = Vec::with_capacity(n);
        let mut state = vec![0u8; n];
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            state[root] = 1;
            let mut stack = vec![(root, 0usize)];
            while let Some(frame) = stack.last_mut() {
                let (v, i) = *frame;
                if i < self.successors[v].len() {
                    frame.1 += 1;
                    let w = self.successors[v][i];
                    if state[w] == 0 {
                        state[w] = 1;
                        stack.push((w, 0));
                    }
                } else {
                    order.push(v);
                    stack.pop();
                }
            }
        }
        let mut predecessors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (v, succs) in self.successors.iter().enumerate() {
            for &w in succs {
                predecessors[w].push(v);
            }
        }
        let mut component = vec![usize::MAX; n];
        let mut next = 0;
        for &root in order.iter().rev() {
            if component[root] != usize::MAX {
                continue;
            }
            component[root] = next;
            let mut stack = vec![root];
            while let Some(v) = stack.pop() {
                for &w in &predecessors[v] {
                    if component[w] == usize::MAX {
                        component[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        (component, next)
    }

    fn maximal_path_count(&self) -> u64 {
        let n = self.nodes.len();
        if n == 0 {
            return 0;
        }
        let (component, k) = self.strongly_connected_components();
        let mut condensed_edges: HashSet<(usize, usize)> = HashSet::new();
        for (v, succs) in self.successors.iter().enumerate() {
            for &w in succs {
                if component[v] != component[w] {
                    condensed_edges.insert((component[v], component[w]));
                }
            }
        }
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); k];
        let mut indeg = vec![0usize; k];
        for &(a, b) in &condensed_edges {
            succ[a].push(b);
            indeg[b] += 1;
        }
        // The condensation is acyclic, so Kahn's ordering covers every node.
        let mut topo = Vec::with_capacity(k);
        let mut queue: VecDeque<usize> = (0..k).filter(|&v| indeg[v] == 0).collect();
        let mut remaining = indeg.clone();
        while let Some(v) = queue.pop_front() {
            topo.push(v);
            for &w in &succ[v] {
                remaining[w] -= 1;
                if remaining[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        let mut paths = vec![0u64; k];
        for &v in topo.iter().rev() {
            paths[v] = if succ[v].is_empty() {
                1
            } else {
                succ[v].iter().fold(0u64, |acc, &w| acc.saturating_add(paths[w]))
            };
        }
        let mut total = 0u64;
        for v in 0..k {
            if indeg[v] == 0 && !succ[v].is_empty() {
                total = total.saturating_add(paths[v]);
            }
        }
        total
    }

    /// Chain count under the requested reading, with a flag marking cyclic
    /// strict orientations (only possible under label noise).
    pub fn count_chains(&self, method: ChainCountMethod) -> ChainCount {
        let cyclic = self.strict_is_cyclic();
        let count = match method {
            ChainCountMethod::ReachablePairs => self.reachable_pair_count(),
            ChainCountMethod::PathComponents => self.path_component_count(),
            ChainCountMethod::MaximalPaths => self.maximal_path_count(),
        };
        ChainCount { count, cyclic }
    }

    /// Writes `id: neighbor neighbor ...` lines over the undirected view.
    pub fn write_adjacency(&self, mut w: impl Write) -> io::Result<()> {
        for (v, &id) in self.nodes.iter().enumerate() {
            write!(w, "{id}:")?;
            for &n in &self.neighbors[v] {
                write!(w, " {}", self.nodes[n])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Tab-separated edge list: endpoints, the winner (or `equal`), and the
    /// label's provenance.
    pub fn write_edge_table(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "first\tsecond\twinner\tprovenance")?;
        for e in &self.edges {
            let winner = e.winner.map_or_else(|| "equal".to_string(), |id| id.to_string());
            writeln!(w, "{}\t{}\t{}\t{:?}", e.a, e.b, winner, e.provenance)?;
        }
        Ok(())
    }

    /// Tab-separated node attributes: id, ground-truth return, and source
    /// policy, looked up from the rollout dataset.
    pub fn write_node_table(
        &self,
        dataset: &RolloutDataset,
        mut w: impl Write,
    ) -> io::Result<()> {
        writeln!(w, "id\treturn\tsource")?;
        for &id in &self.nodes {
            match dataset.rollout(id) {
                Some(r) => writeln!(w, "{id}\t{}\t{:?}", r.gt_return, r.source_policy)?,
                None => writeln!(w, "{id}\t?\t?")?,
            }
        }
        Ok(())
    }
}
