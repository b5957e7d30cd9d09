//! s-t maximum flow / minimum cut on capacitated directed graphs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Residual capacities at or below this are treated as saturated.
const EPS: f64 = 1e-12;

/// A directed, capacitated graph with distinguished terminals.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowNetwork {
    num_nodes: usize,
    source: usize,
    sink: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl FlowNetwork {
    pub fn new(num_nodes: usize, source: usize, sink: usize) -> Result<Self> {
        if source >= num_nodes || sink >= num_nodes {
            return Err(contract("terminal index out of range"));
        }
        if source == sink {
            return Err(contract("source and sink must differ"));
        }
        Ok(Self {
            num_nodes,
            source,
            sink,
            edges: Vec::new(),
        })
    }

    pub fn with_capacity(num_nodes: usize, source: usize, sink: usize, edges: usize) -> Result<Self> {
        let mut net = Self::new(num_nodes, source, sink)?;
        net.edges.reserve(edges);
        Ok(net)
    }

    /// Adds the directed edge `u -> v`; returns its index.
    pub fn add_edge(&mut self, u: usize, v: usize, capacity: f64) -> Result<usize> {
        if u >= self.num_nodes || v >= self.num_nodes {
            return Err(contract(format!("edge ({u}, {v}) references a missing node")));
        }
        if !(capacity.is_finite() && capacity >= 0.0) {
            return Err(contract(format!("capacity {capacity} must be finite and nonnegative")));
        }
        self.edges.push((u, v, capacity));
        Ok(self.edges.len() - 1)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Total capacity of edges leaving `source_side`.
    pub fn cut_capacity(&self, source_side: &[bool]) -> f64 {
        self.edges
            .iter()
            .filter(|(u, v, _)| source_side[*u] && !source_side[*v])
            .map(|(_, _, c)| c)
            .sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxFlowSolver {
    /// Shortest augmenting paths found by breadth-first search.
    EdmondsKarp,
    /// Level graphs with blocking flows; much faster on image grids.
    #[default]
    Dinic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxFlowResult {
    pub value: f64,
    /// `true` for nodes reachable from the source in the final residual graph.
    pub source_side: Vec<bool>,
    /// Flow carried by each input edge, in insertion order.
    pub edge_flows: Vec<f64>,
}

/// Maximum flow with the breadth-first augmenting-path solver.
pub fn max_flow(network: &FlowNetwork) -> MaxFlowResult {
    max_flow_with(network, MaxFlowSolver::EdmondsKarp)
}

pub fn max_flow_with(network: &FlowNetwork, solver: MaxFlowSolver) -> MaxFlowResult {
    let mut g = Residual::build(network);
    let value = match solver {
        MaxFlowSolver::EdmondsKarp => g.edmonds_karp(network.source, network.sink),
        MaxFlowSolver::Dinic => g.dinic(network.source, network.sink),
    };
    let source_side = g.reachable_from(network.source);
    let edge_flows = network
        .edges
        .iter()
        .enumerate()
        .map(|(k, (_, _, c))| c - g.residual[2 * k])
        .collect();
    MaxFlowResult {
        value,
        source_side,
        edge_flows,
    }
}

/// Forward arc `2k` and its reverse `2k + 1` for every input edge `k`.
struct Residual {
    head: Vec<usize>,
    residual: Vec<f64>,
    adjacency: Vec<Vec<usize>>,
}

impl Residual {
    fn build(net: &FlowNetwork) -> Self {
        let mut head = Vec::with_capacity(2 * net.edges.len());
        let mut residual = Vec::with_capacity(2 * net.edges.len());
        let mut adjacency = vec![Vec::new(); net.num_nodes];
        for (k, &(u, v, c)) in net.edges.iter().enumerate() {
            head.push(v);
            residual.push(c);
            head.push(u);
            residual.push(0.0);
            adjacency[u].push(2 * k);
            adjacency[v].push(2 * k + 1);
        }
        Self {
            head,
            residual,
            adjacency,
        }
    }

    fn tail(&self, arc: usize) -> usize {
        self.head[arc ^ 1]
    }

    fn push(&mut self, arc: usize, amount: f64) {
        self.residual[arc] -= amount;
        self.residual[arc ^ 1] += amount;
    }

    fn edmonds_karp(&mut self, s: usize, t: usize) -> f64 {
        let n = self.adjacency.len();
        let mut total = 0.0;
        let mut parent = vec![usize::MAX; n];
        loop {
            parent.fill(usize::MAX);
            let mut queue = VecDeque::from([s]);
            let mut found = false;
            'bfs: while let Some(u) = queue.pop_front() {
                for &arc in &self.adjacency[u] {
                    let v = self.head[arc];
                    if v != s && parent[v] == usize::MAX && self.residual[arc] > EPS {
                        parent[v] = arc;
                        if v == t {
                            found = true;
                            break 'bfs;
                        }
                        queue.push_back(v);
                    }
                }
            }
            if !found {
                return total;
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = t;
            while v != s {
                bottleneck = bottleneck.min(self.residual[parent[v]]);
                v = self.tail(parent[v]);
            }
            let mut v = t;
            while v != s {
                let arc = parent[v];
                self.push(arc, bottleneck);
                v = self.tail(arc);
            }
            total += bottleneck;
        }
    }

    fn levels(&self, s: usize) -> Vec<usize> {
        let mut level = vec![usize::MAX; self.adjacency.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &arc in &self.adjacency[u] {
                let v = self.head[arc];
                if level[v] == usize::MAX && self.residual[arc] > EPS {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level
    }

    fn dinic(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        let mut next = vec![0usize; self.adjacency.len()];
        let mut path: Vec<usize> = Vec::new();
        loop {
            let mut level = self.levels(s);
            if level[t] == usize::MAX {
                return total;
            }
            next.fill(0);
            path.clear();
            let mut u = s;
            loop {
                if u == t {
                    let bottleneck = path
                        .iter()
                        .map(|a| self.residual[*a])
                        .fold(f64::INFINITY, f64::min);
                    for &arc in &path {
                        self.push(arc, bottleneck);
                    }
                    total += bottleneck;
                    // retreat to the tail of the first saturated arc
                    let cut = path
                        .iter()
                        .position(|a| self.residual[*a] <= EPS)
                        .unwrap_or(0);
                    u = self.tail(path[cut]);
                    path.truncate(cut);
                    continue;
                }
                let mut advanced = false;
                while next[u] < self.adjacency[u].len() {
                    let arc = self.adjacency[u][next[u]];
                    let v = self.head[arc];
                    if self.residual[arc] > EPS && level[v] == level[u] + 1 {
                        path.push(arc);
                        u = v;
                        advanced = true;
                        break;
                    }
                    next[u] += 1;
                }
                if advanced {
                    continue;
                }
                // dead end: prune u from this phase
                level[u] = usize::MAX;
                match path.pop() {
                    Some(arc) => {
                        u = self.tail(arc);
                        next[u] += 1;
                    }
                    None => break,
                }
            }
        }
    }

    fn reachable_from(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adjacency.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &arc in &self.adjacency[u] {
                let v = self.head[arc];
                if !seen[v] && self.residual[arc] > EPS {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}
