//! Multi-layer `d+1`-rooted leader–follower graphs.
//!
//! An edge `(i, j)` means agent `i` obtains information from agent `j`, so
//! information flows `j -> i`. Followers must be reachable from the leader
//! set through `d+1` internally vertex-disjoint paths, and each follower's
//! designated neighbors must have a smaller index and a layer no greater than
//! its own.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("ambient dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("leader count {m} invalid for {n} agents")]
    BadLeaderCount { n: usize, m: usize },
    #[error("agent {0} is outside 1..=n")]
    UnknownAgent(AgentId),
    #[error("self-loop on agent {0}")]
    SelfLoop(AgentId),
    #[error("layer map has {got} entries, expected {expected}")]
    LayerLength { got: usize, expected: usize },
    #[error("agent {0} is a leader and cannot have designated neighbors")]
    LeaderNeighbors(AgentId),
    #[error("followers {0:?} cannot be assigned to any layer")]
    UnassignableFollowers(Vec<AgentId>),
}

/// Directed sensing/communication graph with a layer decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationGraph {
    n: usize,
    m: usize,
    d: usize,
    edges: BTreeSet<(AgentId, AgentId)>,
    /// Partial when the decomposition could not be completed.
    layers: BTreeMap<AgentId, usize>,
    /// Whether the layer map was supplied by the caller.
    explicit_layers: bool,
    neighbors: BTreeMap<AgentId, Vec<AgentId>>,
}

impl FormationGraph {
    /// Builds a graph. When `layers` is `None` the decomposition is computed
    /// by [`compute_layers`]; when given it is kept as-is and checked later by
    /// [`validate_graph`]. Missing designated-neighbor lists default to the
    /// eligible set `{ j < i : (i, j) in E, layer(j) <= layer(i) }`.
    pub fn new(
        n: usize,
        m: usize,
        d: usize,
        edges: impl IntoIterator<Item = (AgentId, AgentId)>,
        layers: Option<Vec<usize>>,
        neighbors: Option<BTreeMap<AgentId, Vec<AgentId>>>,
    ) -> Result<Self, GraphError> {
        if d < 2 {
            return Err(GraphError::DimensionTooSmall(d));
        }
        if m == 0 || m > n {
            return Err(GraphError::BadLeaderCount { n, m });
        }
        let mut edge_set = BTreeSet::new();
        for (i, j) in edges {
            for a in [i, j] {
                if a == 0 || a > n {
                    return Err(GraphError::UnknownAgent(a));
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            edge_set.insert((i, j));
        }

        let (layer_map, explicit_layers) = match layers {
            Some(l) => {
                if l.len() != n {
                    return Err(GraphError::LayerLength {
                        got: l.len(),
                        expected: n,
                    });
                }
                ((1..=n).zip(l).collect(), true)
            }
            None => {
                let map = match compute_layers(n, m, d, &edge_set) {
                    Ok(l) => (1..=n).zip(l).collect(),
                    Err(_) => partial_layers(n, m, d, &edge_set),
                };
                (map, false)
            }
        };

        let mut graph = Self {
            n,
            m,
            d,
            edges: edge_set,
            layers: layer_map,
            explicit_layers,
            neighbors: BTreeMap::new(),
        };

        let mut given = neighbors.unwrap_or_default();
        for (&i, list) in &given {
            if i == 0 || i > n {
                return Err(GraphError::UnknownAgent(i));
            }
            if i <= m {
                return Err(GraphError::LeaderNeighbors(i));
            }
            if let Some(&j) = list.iter().find(|&&j| j == 0 || j > n) {
                return Err(GraphError::UnknownAgent(j));
            }
        }
        for i in graph.followers() {
            let list = given
                .remove(&i)
                .unwrap_or_else(|| graph.eligible_neighbors(i));
            graph.neighbors.insert(i, list);
        }
        Ok(graph)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &BTreeSet<(AgentId, AgentId)> {
        &self.edges
    }

    pub fn has_edge(&self, i: AgentId, j: AgentId) -> bool {
        self.edges.contains(&(i, j))
    }

    pub fn is_leader(&self, i: AgentId) -> bool {
        (1..=self.m).contains(&i)
    }

    pub fn leaders(&self) -> impl Iterator<Item = AgentId> {
        1..=self.m
    }

    pub fn followers(&self) -> impl Iterator<Item = AgentId> {
        self.m + 1..=self.n
    }

    pub fn layer(&self, i: AgentId) -> Option<usize> {
        self.layers.get(&i).copied()
    }

    pub fn layers_explicit(&self) -> bool {
        self.explicit_layers
    }

    /// Layer map as a dense vector (`0` marks an unassigned agent).
    pub fn layer_vec(&self) -> Vec<usize> {
        (1..=self.n).map(|i| self.layer(i).unwrap_or(0)).collect()
    }

    /// Designated neighbors `N_i` of follower `i` (empty for leaders).
    pub fn neighbors(&self, i: AgentId) -> &[AgentId] {
        self.neighbors.get(&i).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn neighbor_map(&self) -> &BTreeMap<AgentId, Vec<AgentId>> {
        &self.neighbors
    }

    /// Agents `j < i` with an edge `(i, j)` and a layer no greater than `i`'s.
    pub fn eligible_neighbors(&self, i: AgentId) -> Vec<AgentId> {
        let li = self.layer(i);
        self.edges
            .range((i, 0)..(i + 1, 0))
            .map(|&(_, j)| j)
            .filter(|&j| j < i)
            .filter(|&j| match (li, self.layer(j)) {
                (Some(li), Some(lj)) => lj <= li,
                (None, _) => true,
                (Some(_), None) => false,
            })
            .collect()
    }

    /// Out-neighbors of `i` (agents `i` obtains information from).
    pub fn out_neighbors(&self, i: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.edges.range((i, 0)..(i + 1, 0)).map(|&(_, j)| j)
    }

    /// Copy of this graph with one edge removed; the layer map and neighbor
    /// lists are recomputed unless they were supplied explicitly.
    pub fn without_edge(&self, i: AgentId, j: AgentId) -> Self {
        let edges = self.edges.iter().copied().filter(|&e| e != (i, j));
        let layers = self.explicit_layers.then(|| self.layer_vec());
        Self::new(self.n, self.m, self.d, edges, layers, Some(self.neighbors.clone()))
            .expect("removing an edge keeps the graph well-formed")
    }
}

/// Greedy layer peeling.
///
/// Layer 1 is the leader set. Rounds `g = 2, 3, ...` visit the unassigned
/// followers in index order; a follower joins layer `g` when at least `d+1`
/// of its smaller-index out-neighbors sit in layers `<= g` (including agents
/// placed earlier in the same round) and at least `d` of them sit in layers
/// `< g`. The peeling stalls when a round places nobody.
pub fn compute_layers(
    n: usize,
    m: usize,
    d: usize,
    edges: &BTreeSet<(AgentId, AgentId)>,
) -> Result<Vec<usize>, GraphError> {
    let layers = peel(n, m, d, edges);
    let stuck: Vec<AgentId> = (m + 1..=n).filter(|&i| layers[i - 1] == 0).collect();
    if stuck.is_empty() {
        Ok(layers)
    } else {
        Err(GraphError::UnassignableFollowers(stuck))
    }
}

fn partial_layers(
    n: usize,
    m: usize,
    d: usize,
    edges: &BTreeSet<(AgentId, AgentId)>,
) -> BTreeMap<AgentId, usize> {
    peel(n, m, d, edges)
        .into_iter()
        .enumerate()
        .filter(|&(_, l)| l > 0)
        .map(|(k, l)| (k + 1, l))
        .collect()
}

fn peel(n: usize, m: usize, d: usize, edges: &BTreeSet<(AgentId, AgentId)>) -> Vec<usize> {
    let mut layer = vec![0usize; n];
    layer[..m].iter_mut().for_each(|l| *l = 1);
    let lower: Vec<Vec<AgentId>> = (1..=n)
        .map(|i| {
            edges
                .range((i, 0)..(i + 1, 0))
                .map(|&(_, j)| j)
                .filter(|&j| j < i)
                .collect()
        })
        .collect();

    let mut g = 2;
    loop {
        let mut placed = false;
        for i in m + 1..=n {
            if layer[i - 1] != 0 {
                continue;
            }
            let (mut below, mut at_or_below) = (0, 0);
            for &j in &lower[i - 1] {
                let lj = layer[j - 1];
                if lj != 0 && lj < g {
                    below += 1;
                }
                if lj != 0 && lj <= g {
                    at_or_below += 1;
                }
            }
            if at_or_below > d && below >= d {
                layer[i - 1] = g;
                placed = true;
            }
        }
        if !placed || layer.iter().all(|&l| l != 0) {
            break;
        }
        g += 1;
    }
    layer
}

/// Maximum number of internally vertex-disjoint paths from the leader set to
/// follower `i`, following information flow (`j -> i` for each edge `(i, j)`).
///
/// Every agent other than `i` is split into an in/out pair joined by a unit
/// arc, a super-source feeds each leader, and the answer is the max flow.
pub fn disjoint_path_count(graph: &FormationGraph, i: AgentId) -> usize {
    let n = graph.n();
    if i == 0 || i > n || graph.is_leader(i) {
        return 0;
    }
    // node ids: agent a -> in = 2(a-1), out = 2(a-1)+1; source = 2n.
    let source = 2 * n;
    let sink = 2 * (i - 1);
    let mut net = UnitFlow::new(2 * n + 1);
    for a in 1..=n {
        if a != i {
            net.add_arc(2 * (a - 1), 2 * (a - 1) + 1);
        }
    }
    for l in graph.leaders() {
        net.add_arc(source, 2 * (l - 1));
    }
    for &(a, b) in graph.edges() {
        // information flows b -> a
        if b == i || a == b {
            continue;
        }
        let to = 2 * (a - 1);
        net.add_arc(2 * (b - 1) + 1, to);
    }
    net.max_flow(source, sink)
}

/// Unit-capacity residual network solved with BFS augmenting paths.
struct UnitFlow {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<u32>,
}

impl UnitFlow {
    fn new(nodes: usize) -> Self {
        Self {
            head: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add_arc(&mut self, u: usize, v: usize) {
        self.head[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(1);
        self.head[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(0);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> usize {
        let mut flow = 0;
        loop {
            let mut parent: Vec<Option<usize>> = vec![None; self.head.len()];
            let mut seen = vec![false; self.head.len()];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.head[u] {
                    let v = self.to[e];
                    if self.cap[e] > 0 && !seen[v] {
                        seen[v] = true;
                        parent[v] = Some(e);
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return flow;
            }
            let mut v = t;
            while let Some(e) = parent[v] {
                self.cap[e] -= 1;
                self.cap[e ^ 1] += 1;
                v = self.to[e ^ 1];
            }
            flow += 1;
        }
    }
}

/// One violated graph invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    LeaderLayer { agent: AgentId, layer: usize },
    FollowerLayer { agent: AgentId, layer: usize },
    Unassignable { followers: Vec<AgentId> },
    TooFewNeighbors { follower: AgentId, count: usize, required: usize },
    NeighborNotLower { follower: AgentId, neighbor: AgentId },
    MissingEdge { follower: AgentId, neighbor: AgentId },
    NeighborLayer { follower: AgentId, neighbor: AgentId },
    NotReachable { follower: AgentId, paths: usize, required: usize },
}

impl Violation {
    /// Agents the violation is about.
    pub fn agents(&self) -> Vec<AgentId> {
        match self {
            Violation::LeaderLayer { agent, .. } | Violation::FollowerLayer { agent, .. } => {
                vec![*agent]
            }
            Violation::Unassignable { followers } => followers.clone(),
            Violation::TooFewNeighbors { follower, .. }
            | Violation::NotReachable { follower, .. } => vec![*follower],
            Violation::NeighborNotLower { follower, neighbor }
            | Violation::MissingEdge { follower, neighbor }
            | Violation::NeighborLayer { follower, neighbor } => vec![*follower, *neighbor],
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LeaderLayer { agent, layer } => {
                write!(f, "leader {agent} is in layer {layer}, expected layer 1")
            }
            Violation::FollowerLayer { agent, layer } => {
                write!(f, "follower {agent} is in layer {layer}, expected a layer >= 2")
            }
            Violation::Unassignable { followers } => {
                write!(f, "followers {followers:?} cannot be assigned to a layer")
            }
            Violation::TooFewNeighbors {
                follower,
                count,
                required,
            } => write!(
                f,
                "follower {follower} has {count} designated neighbors, needs at least {required}"
            ),
            Violation::NeighborNotLower { follower, neighbor } => write!(
                f,
                "follower {follower}: neighbor {neighbor} does not have a smaller index"
            ),
            Violation::MissingEdge { follower, neighbor } => {
                write!(f, "follower {follower}: no edge ({follower},{neighbor})")
            }
            Violation::NeighborLayer { follower, neighbor } => write!(
                f,
                "follower {follower}: neighbor {neighbor} lies in a higher layer"
            ),
            Violation::NotReachable {
                follower,
                paths,
                required,
            } => write!(
                f,
                "follower {follower} has {paths} disjoint paths from the leaders, needs {required}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Whether any violation mentions `agent`.
    pub fn cites(&self, agent: AgentId) -> bool {
        self.violations.iter().any(|v| v.agents().contains(&agent))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "graph is a valid multi-layer d+1-rooted graph");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Checks every graph invariant and lists each violation.
pub fn validate_graph(graph: &FormationGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let need = graph.dim() + 1;

    if graph.layers_explicit() {
        for i in graph.leaders() {
            let l = graph.layer(i).unwrap_or(0);
            if l != 1 {
                violations.push(Violation::LeaderLayer { agent: i, layer: l });
            }
        }
        for i in graph.followers() {
            let l = graph.layer(i).unwrap_or(0);
            if l < 2 {
                violations.push(Violation::FollowerLayer { agent: i, layer: l });
            }
        }
    } else if let Err(GraphError::UnassignableFollowers(f)) =
        compute_layers(graph.n(), graph.m(), graph.dim(), graph.edges())
    {
        violations.push(Violation::Unassignable { followers: f });
    }

    for i in graph.followers() {
        let nb = graph.neighbors(i);
        if nb.len() < need {
            violations.push(Violation::TooFewNeighbors {
                follower: i,
                count: nb.len(),
                required: need,
            });
        }
        for &j in nb {
            if j >= i {
                violations.push(Violation::NeighborNotLower {
                    follower: i,
                    neighbor: j,
                });
            }
            if !graph.has_edge(i, j) {
                violations.push(Violation::MissingEdge {
                    follower: i,
                    neighbor: j,
                });
            }
            if let (Some(li), Some(lj)) = (graph.layer(i), graph.layer(j)) {
                if lj > li {
                    violations.push(Violation::NeighborLayer {
                        follower: i,
                        neighbor: j,
                    });
                }
            }
        }
        let paths = disjoint_path_count(graph, i);
        if paths < need {
            violations.push(Violation::NotReachable {
                follower: i,
                paths,
                required: need,
            });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layered_six() -> FormationGraph {
        let edges = [
            (4, 1),
            (4, 2),
            (4, 3),
            (5, 2),
            (5, 3),
            (5, 4),
            (6, 3),
            (6, 4),
            (6, 5),
        ];
        FormationGraph::new(6, 3, 2, edges, None, None).unwrap()
    }

    fn five_agent() -> FormationGraph {
        let edges = [(4, 1), (4, 2), (4, 3), (5, 2), (5, 3), (5, 4)];
        FormationGraph::new(5, 3, 2, edges, None, None).unwrap()
    }

    #[test]
    fn peeling_reproduces_the_layered_example() {
        let g = layered_six();
        assert_eq!(g.layer_vec(), vec![1, 1, 1, 2, 2, 3]);
        assert_eq!(g.neighbors(6), &[3, 4, 5]);
    }

    #[test]
    fn leaders_only_is_a_single_layer() {
        let set = BTreeSet::new();
        assert_eq!(compute_layers(3, 3, 2, &set).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn dropping_a_leader_edge_strands_the_last_follower() {
        let g = layered_six();
        let mut edges = g.edges().clone();
        edges.remove(&(6, 3));
        assert_eq!(
            compute_layers(6, 3, 2, &edges),
            Err(GraphError::UnassignableFollowers(vec![6]))
        );
    }

    #[test]
    fn disjoint_paths() {
        let g = layered_six();
        assert_eq!(disjoint_path_count(&g, 6), 3);
        assert_eq!(disjoint_path_count(&g, 4), 3);
        assert_eq!(disjoint_path_count(&g.without_edge(6, 3), 6), 2);
        assert_eq!(disjoint_path_count(&g, 1), 0);
    }

    #[test]
    fn direct_leader_edges_count_as_paths() {
        let g = FormationGraph::new(4, 3, 2, [(4, 1), (4, 2), (4, 3)], None, None).unwrap();
        assert_eq!(disjoint_path_count(&g, 4), 3);
    }

    #[test]
    fn shared_relay_is_a_bottleneck() {
        // 5 hears 1 directly and 2, 3 only through 4.
        let edges = [(4, 2), (4, 3), (5, 1), (5, 4)];
        let g = FormationGraph::new(5, 3, 2, edges, None, None).unwrap();
        assert_eq!(disjoint_path_count(&g, 5), 2);
    }

    #[test]
    fn validation() {
        assert!(validate_graph(&layered_six()).is_valid());
        assert!(validate_graph(&five_agent()).is_valid());

        let report = validate_graph(&layered_six().without_edge(6, 3));
        assert!(!report.is_valid());
        assert!(report.cites(6));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NotReachable { follower: 6, paths: 2, .. })));
    }

    #[test]
    fn too_few_designated_neighbors() {
        let nb = BTreeMap::from([(4, vec![1, 2])]);
        let g = FormationGraph::new(4, 3, 2, [(4, 1), (4, 2), (4, 3)], None, Some(nb)).unwrap();
        let report = validate_graph(&g);
        assert!(report.violations.contains(&Violation::TooFewNeighbors {
            follower: 4,
            count: 2,
            required: 3
        }));
    }

    #[test]
    fn explicit_layers_are_verified_not_overwritten() {
        let edges = [(4, 1), (4, 2), (4, 3), (5, 2), (5, 3), (5, 4)];
        let g = FormationGraph::new(5, 3, 2, edges, Some(vec![1, 1, 1, 3, 2]), None).unwrap();
        assert_eq!(g.layer_vec(), vec![1, 1, 1, 3, 2]);
        let report = validate_graph(&g);
        assert!(report.violations.contains(&Violation::NeighborLayer {
            follower: 5,
            neighbor: 4
        }) || !g.neighbors(5).contains(&4));
        assert!(!report.is_valid());

        let bad = FormationGraph::new(4, 3, 2, [(4, 1), (4, 2), (4, 3)], Some(vec![1, 2, 1, 2]), None)
            .unwrap();
        assert!(validate_graph(&bad)
            .violations
            .contains(&Violation::LeaderLayer { agent: 2, layer: 2 }));
    }

    #[test]
    fn structural_errors() {
        assert_eq!(
            FormationGraph::new(3, 3, 1, [], None, None).unwrap_err(),
            GraphError::DimensionTooSmall(1)
        );
        assert_eq!(
            FormationGraph::new(3, 3, 2, [(1, 7)], None, None).unwrap_err(),
            GraphError::UnknownAgent(7)
        );
        assert_eq!(
            FormationGraph::new(3, 3, 2, [(2, 2)], None, None).unwrap_err(),
            GraphError::SelfLoop(2)
        );
    }
}
