//! Message-passing topology: moralization, clique-tree construction and
//! assignment of CIM families to clusters.

use std::collections::{BTreeSet, VecDeque};

use crate::algebra::PointDistribution;
use crate::error::{CtbnError, Result};
use crate::model::{initial_joint, CtbnModel};
use crate::scope::VarId;

/// Undirected graph over the model variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    pub adjacency: Vec<BTreeSet<VarId>>,
}

impl UndirectedGraph {
    pub fn with_nodes(n: usize) -> Self {
        UndirectedGraph { adjacency: vec![BTreeSet::new(); n] }
    }

    pub fn add_edge(&mut self, a: VarId, b: VarId) {
        if a != b {
            self.adjacency[a].insert(b);
            self.adjacency[b].insert(a);
        }
    }

    /// Edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(VarId, VarId)> {
        let mut out = Vec::new();
        for (a, nb) in self.adjacency.iter().enumerate() {
            out.extend(nb.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }
}

/// Drops edge directions and marries the parents of every variable. Cycles
/// of the dependency graph become loops.
pub fn moralize(model: &CtbnModel) -> UndirectedGraph {
    let mut g = UndirectedGraph::with_nodes(model.num_vars());
    for v in 0..model.num_vars() {
        let parents = model.parents(v);
        for (i, &p) in parents.iter().enumerate() {
            g.add_edge(p, v);
            for &q in &parents[i + 1..] {
                g.add_edge(p, q);
            }
        }
    }
    g
}

/// Clusters, the edges linking them and the cluster each CIM family is
/// assigned to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterTopology {
    /// Sorted variable lists.
    pub clusters: Vec<Vec<VarId>>,
    /// Edges `(i, j)` with `i < j`.
    pub edges: Vec<(usize, usize)>,
    /// `assignment[x]` is the cluster holding the CIM of variable `x`.
    pub assignment: Vec<usize>,
}

fn intersect(a: &[VarId], b: &[VarId]) -> Vec<VarId> {
    a.iter().filter(|x| b.contains(x)).copied().collect()
}

impl ClusterTopology {
    /// Validates a user-supplied topology. Without an explicit assignment,
    /// every family goes to its smallest containing cluster.
    pub fn from_parts(
        model: &CtbnModel,
        clusters: Vec<Vec<VarId>>,
        edges: Vec<(usize, usize)>,
        assignment: Option<Vec<usize>>,
    ) -> Result<Self> {
        let mut clusters = clusters;
        for c in &mut clusters {
            c.sort_unstable();
            c.dedup();
            if c.is_empty() {
                return Err(CtbnError::Topology("empty cluster".into()));
            }
            if let Some(&v) = c.iter().find(|&&v| v >= model.num_vars()) {
                return Err(CtbnError::Topology(format!("cluster references unknown variable #{v}")));
            }
        }
        let mut norm = Vec::with_capacity(edges.len());
        for (i, j) in edges {
            if i >= clusters.len() || j >= clusters.len() || i == j {
                return Err(CtbnError::Topology(format!("invalid edge ({i}, {j})")));
            }
            let e = (i.min(j), i.max(j));
            if norm.contains(&e) {
                return Err(CtbnError::Topology(format!("duplicate edge ({i}, {j})")));
            }
            if intersect(&clusters[i], &clusters[j]).is_empty() {
                return Err(CtbnError::Topology(format!("clusters {i} and {j} share no variable")));
            }
            norm.push(e);
        }
        norm.sort_unstable();
        let assignment = match assignment {
            Some(a) => a,
            None => smallest_covering(model, &clusters)?,
        };
        let topo = ClusterTopology { clusters, edges: norm, assignment };
        topo.check_coverage(model)?;
        Ok(topo)
    }

    fn check_coverage(&self, model: &CtbnModel) -> Result<()> {
        if self.assignment.len() != model.num_vars() {
            return Err(CtbnError::Topology("assignment must cover every variable".into()));
        }
        for (x, &c) in self.assignment.iter().enumerate() {
            let fam = model.family(x);
            if c >= self.clusters.len() || !fam.vars().iter().all(|v| self.clusters[c].contains(v)) {
                return Err(CtbnError::Topology(format!(
                    "cluster {c} does not contain the family of {}",
                    model.variables[x].name
                )));
            }
        }
        Ok(())
    }

    pub fn sepset(&self, edge: usize) -> Vec<VarId> {
        let (i, j) = self.edges[edge];
        intersect(&self.clusters[i], &self.clusters[j])
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let e = (i.min(j), i.max(j));
        self.edges.iter().position(|&x| x == e)
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
            .collect()
    }

    /// Variables whose CIMs are assigned to cluster `i`.
    pub fn assigned(&self, i: usize) -> Vec<VarId> {
        (0..self.assignment.len()).filter(|&x| self.assignment[x] == i).collect()
    }

    /// Connected components, each listed in increasing cluster order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.clusters.len()];
        let mut out = Vec::new();
        for s in 0..self.clusters.len() {
            if seen[s] {
                continue;
            }
            let mut comp = vec![];
            let mut queue = VecDeque::from([s]);
            seen[s] = true;
            while let Some(c) = queue.pop_front() {
                comp.push(c);
                for n in self.neighbors(c) {
                    if !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// True when the graph has no cycles (a tree or a forest).
    pub fn is_forest(&self) -> bool {
        self.edges.len() + self.components().len() == self.clusters.len()
    }

    /// For every variable, the clusters containing it induce a connected
    /// subgraph.
    pub fn has_running_intersection(&self) -> bool {
        let vars: BTreeSet<VarId> = self.clusters.iter().flatten().copied().collect();
        vars.into_iter().all(|v| {
            let holders: Vec<usize> = (0..self.clusters.len()).filter(|&c| self.clusters[c].contains(&v)).collect();
            let mut seen = BTreeSet::from([holders[0]]);
            let mut queue = VecDeque::from([holders[0]]);
            while let Some(c) = queue.pop_front() {
                for n in self.neighbors(c) {
                    if self.clusters[n].contains(&v) && seen.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
            seen.len() == holders.len()
        })
    }
}

fn smallest_covering(model: &CtbnModel, clusters: &[Vec<VarId>]) -> Result<Vec<usize>> {
    (0..model.num_vars())
        .map(|x| {
            let fam = model.family(x);
            clusters
                .iter()
                .enumerate()
                .filter(|(_, c)| fam.vars().iter().all(|v| c.contains(v)))
                .min_by_key(|(i, c)| (c.len(), *i))
                .map(|(i, _)| i)
                .ok_or_else(|| {
                    CtbnError::Topology(format!("no cluster contains the family of {}", model.variables[x].name))
                })
        })
        .collect()
}

/// Maximal cliques of a min-fill triangulation, sorted lexicographically.
pub fn triangulate(graph: &UndirectedGraph) -> Vec<Vec<VarId>> {
    let n = graph.adjacency.len();
    let mut adj = graph.adjacency.clone();
    let mut alive: BTreeSet<VarId> = (0..n).collect();
    let mut cliques: Vec<Vec<VarId>> = Vec::new();
    while !alive.is_empty() {
        let fill = |v: VarId| {
            let nb: Vec<VarId> = adj[v].iter().copied().collect();
            let mut missing = 0;
            for (i, &a) in nb.iter().enumerate() {
                missing += nb[i + 1..].iter().filter(|&&b| !adj[a].contains(&b)).count();
            }
            missing
        };
        let v = *alive.iter().min_by_key(|&&v| (fill(v), v)).unwrap();
        let nb: Vec<VarId> = adj[v].iter().copied().collect();
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        let mut clique = nb.clone();
        clique.push(v);
        clique.sort_unstable();
        cliques.push(clique);
        for &a in &nb {
            adj[a].remove(&v);
        }
        adj[v].clear();
        alive.remove(&v);
    }
    let mut maximal: Vec<Vec<VarId>> = Vec::new();
    for c in &cliques {
        let dominated = cliques
            .iter()
            .any(|d| d.len() > c.len() && c.iter().all(|x| d.contains(x)));
        if !dominated && !maximal.contains(c) {
            maximal.push(c.clone());
        }
    }
    maximal.sort();
    maximal
}

/// Clique tree over the moralized graph: min-fill triangulation, maximal
/// cliques as clusters and a maximum-weight spanning forest over sepset
/// sizes (ties broken by cluster index).
pub fn build_cluster_tree(model: &CtbnModel) -> Result<ClusterTopology> {
    let clusters = triangulate(&moralize(model));
    let mut candidates = Vec::new();
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            let w = intersect(&clusters[i], &clusters[j]).len();
            if w > 0 {
                candidates.push((w, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut root: Vec<usize> = (0..clusters.len()).collect();
    fn find(root: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while root[r] != r {
            r = root[r];
        }
        root[x] = r;
        r
    }
    let mut edges = Vec::new();
    for (_, i, j) in candidates {
        let (ri, rj) = (find(&mut root, i), find(&mut root, j));
        if ri != rj {
            root[ri] = rj;
            edges.push((i, j));
        }
    }
    ClusterTopology::from_parts(model, clusters, edges, None)
}

/// A single cluster holding every variable; EP on it is exact.
pub fn single_cluster(model: &CtbnModel) -> ClusterTopology {
    ClusterTopology {
        clusters: vec![(0..model.num_vars()).collect()],
        edges: vec![],
        assignment: vec![0; model.num_vars()],
    }
}

/// Initial-network marginal over every cluster.
pub fn cluster_initial_distributions(model: &CtbnModel, topo: &ClusterTopology) -> Result<Vec<PointDistribution>> {
    topo.clusters.iter().map(|c| initial_joint(model, c)).collect()
}
