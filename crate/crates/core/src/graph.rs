//! Metric graphs with a distinguished killing vertex, plus the two surgeries
//! used by the conditioning code: star extension and vertex detachment.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

/// An edge traversed in one direction. `forward` means from `a` to `b`.
/// A self-loop has two distinct steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Step {
    pub edge: EdgeId,
    pub forward: bool,
}

impl Step {
    pub fn reversed(self) -> Step {
        Step { edge: self.edge, forward: !self.forward }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: VertexId,
    pub b: VertexId,
    pub length: f64,
}

impl Edge {
    pub fn is_self_loop(&self) -> bool {
        self.a == self.b
    }
}

/// Vertex label in graph files; integers are accepted and read as names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Name(String),
    Index(i64),
}

impl Label {
    pub fn as_name(&self) -> String {
        match self {
            Label::Name(s) => s.clone(),
            Label::Index(i) => i.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub a: Label,
    pub b: Label,
    pub len: f64,
}

/// On-disk description of a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub vertices: Vec<Label>,
    pub sink: Label,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Clone, Debug)]
pub struct MetricGraph {
    names: Vec<String>,
    sink: VertexId,
    edges: Vec<Edge>,
    out: Vec<Vec<Step>>,
    rates: Vec<f64>,
}

impl MetricGraph {
    pub fn new(names: Vec<String>, sink: VertexId, edges: Vec<Edge>) -> Result<Self> {
        let n = names.len();
        if n < 2 {
            return Err(Error::InvalidGraph("need at least one vertex besides the sink".into()));
        }
        if sink.0 >= n {
            return Err(Error::InvalidGraph("sink index out of range".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate vertex `{name}`")));
            }
        }
        if edges.is_empty() {
            return Err(Error::InvalidGraph("graph has no edges".into()));
        }
        let mut out = vec![Vec::new(); n];
        let mut rates = vec![0.0; n];
        for (i, e) in edges.iter().enumerate() {
            if e.a.0 >= n || e.b.0 >= n {
                return Err(Error::InvalidGraph(format!("edge {i} has an endpoint out of range")));
            }
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge {i} has non-positive or non-finite length {}",
                    e.length
                )));
            }
            out[e.a.0].push(Step { edge: EdgeId(i), forward: true });
            out[e.b.0].push(Step { edge: EdgeId(i), forward: false });
            rates[e.a.0] += 1.0 / e.length;
            rates[e.b.0] += 1.0 / e.length;
        }
        let g = MetricGraph { names, sink, edges, out, rates };
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        let mut names: Vec<String> = spec.vertices.iter().map(Label::as_name).collect();
        let sink_name = spec.sink.as_name();
        if !names.contains(&sink_name) {
            names.push(sink_name.clone());
        }
        let index: HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if index.len() != names.len() {
            return Err(Error::InvalidGraph("duplicate vertex names".into()));
        }
        let lookup = |l: &Label| {
            let s = l.as_name();
            index.get(s.as_str()).copied().map(VertexId).ok_or(Error::UnknownVertex(s))
        };
        let mut edges = Vec::with_capacity(spec.edges.len());
        for e in &spec.edges {
            edges.push(Edge { a: lookup(&e.a)?, b: lookup(&e.b)?, length: e.len });
        }
        let sink = VertexId(index[sink_name.as_str()]);
        MetricGraph::new(names, sink, edges)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GraphSpec = serde_json::from_str(text)?;
        MetricGraph::from_spec(&spec)
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            vertices: self.names.iter().map(|s| Label::Name(s.clone())).collect(),
            sink: Label::Name(self.names[self.sink.0].clone()),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    a: Label::Name(self.names[e.a.0].clone()),
                    b: Label::Name(self.names[e.b.0].clone()),
                    len: e.length,
                })
                .collect(),
        }
    }

    /// Convenience constructor used throughout tests and built-in examples.
    pub fn from_edges(names: &[&str], sink: &str, edges: &[(&str, &str, f64)]) -> Result<Self> {
        let spec = GraphSpec {
            vertices: names.iter().map(|s| Label::Name(s.to_string())).collect(),
            sink: Label::Name(sink.to_string()),
            edges: edges
                .iter()
                .map(|(a, b, l)| EdgeSpec {
                    a: Label::Name(a.to_string()),
                    b: Label::Name(b.to_string()),
                    len: *l,
                })
                .collect(),
        };
        MetricGraph::from_spec(&spec)
    }

    fn is_connected(&self) -> bool {
        let n = self.names.len();
        let mut seen = vec![false; n];
        let mut stack = vec![self.sink.0];
        seen[self.sink.0] = true;
        while let Some(u) = stack.pop() {
            for s in &self.out[u] {
                let w = self.head(*s).0;
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|x| x)
    }

    pub fn vertex_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn sink(&self) -> VertexId {
        self.sink
    }

    pub fn name(&self, v: VertexId) -> &str {
        &self.names[v.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vertex(&self, name: &str) -> Result<VertexId> {
        self.names
            .iter()
            .position(|s| s == name)
            .map(VertexId)
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.names.len()).map(VertexId)
    }

    /// All vertices except the sink.
    pub fn interior(&self) -> impl Iterator<Item = VertexId> + '_ {
        let sink = self.sink;
        self.vertices().filter(move |v| *v != sink)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.edges.len()).map(EdgeId)
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.0]
    }

    pub fn length(&self, e: EdgeId) -> f64 {
        self.edges[e.0].length
    }

    pub fn is_sink_edge(&self, e: EdgeId) -> bool {
        let ed = &self.edges[e.0];
        ed.a == self.sink || ed.b == self.sink
    }

    /// Directed edges rooted at `v` (a self-loop contributes both directions).
    pub fn steps_from(&self, v: VertexId) -> &[Step] {
        &self.out[v.0]
    }

    pub fn tail(&self, s: Step) -> VertexId {
        let e = &self.edges[s.edge.0];
        if s.forward {
            e.a
        } else {
            e.b
        }
    }

    pub fn head(&self, s: Step) -> VertexId {
        let e = &self.edges[s.edge.0];
        if s.forward {
            e.b
        } else {
            e.a
        }
    }

    /// Total jump rate `a_v`: sum of inverse lengths of directed edges rooted at `v`.
    pub fn rate(&self, v: VertexId) -> f64 {
        self.rates[v.0]
    }

    /// Number of directed edges rooted at `v`, not counting edges to the sink.
    pub fn degree_excluding_sink(&self, v: VertexId) -> usize {
        self.out[v.0].iter().filter(|s| !self.is_sink_edge(s.edge)).count()
    }

    /// Edges with at least one endpoint in `set`, sink edges excluded.
    pub fn edges_adjacent(&self, set: &BTreeSet<VertexId>) -> BTreeSet<EdgeId> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(i, e)| {
                (set.contains(&e.a) || set.contains(&e.b)) && !self.is_sink_edge(EdgeId(*i))
            })
            .map(|(i, _)| EdgeId(i))
            .collect()
    }

    /// Vertices joined to `set` by an edge, outside `set`, sink excluded.
    pub fn outer_boundary(&self, set: &BTreeSet<VertexId>) -> BTreeSet<VertexId> {
        let mut b = BTreeSet::new();
        for v in set {
            for s in self.steps_from(*v) {
                let w = self.head(*s);
                if !set.contains(&w) && w != self.sink {
                    b.insert(w);
                }
            }
        }
        b
    }

    /// Order-independent description used to compare graphs.
    pub fn canonical_form(&self) -> (String, Vec<(String, String, u64)>) {
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                let (x, y) = (self.names[e.a.0].clone(), self.names[e.b.0].clone());
                let (x, y) = if x <= y { (x, y) } else { (y, x) };
                (x, y, e.length.to_bits())
            })
            .collect();
        edges.sort();
        (self.names[self.sink.0].clone(), edges)
    }

    fn fresh_name(&self, base: String, extra: &[String]) -> String {
        let mut name = base;
        while self.names.contains(&name) || extra.contains(&name) {
            name.push('\'');
        }
        name
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StarEdge {
    pub edge: EdgeId,
    pub star: VertexId,
    pub replica: VertexId,
    /// The original edge whose end was moved onto the replica.
    pub original: EdgeId,
    /// Whether the moved end is the `a` end of the original edge.
    pub end_a: bool,
}

/// A graph in which every end of every edge at a vertex of `W` has been
/// moved to a fresh replica, and the replica joined back to its vertex by a
/// short star edge. Original vertex and edge ids are preserved.
#[derive(Clone, Debug)]
pub struct StarGraph {
    pub graph: MetricGraph,
    pub star_vertices: BTreeSet<VertexId>,
    pub star_edges: Vec<StarEdge>,
    pub replicas: BTreeMap<VertexId, Vec<VertexId>>,
    pub base_vertex_count: usize,
    pub base_edge_count: usize,
}

impl StarGraph {
    pub fn replica_set(&self) -> BTreeSet<VertexId> {
        self.star_edges.iter().map(|s| s.replica).collect()
    }

    pub fn star_edge_ids(&self) -> BTreeSet<EdgeId> {
        self.star_edges.iter().map(|s| s.edge).collect()
    }

    pub fn star_of(&self, replica: VertexId) -> Option<VertexId> {
        self.star_edges.iter().find(|s| s.replica == replica).map(|s| s.star)
    }

    /// Contracts every star edge, giving back the original graph.
    pub fn collapse(&self) -> Result<MetricGraph> {
        let g = &self.graph;
        let mut map: Vec<VertexId> = (0..g.vertex_count()).map(VertexId).collect();
        for s in &self.star_edges {
            map[s.replica.0] = s.star;
        }
        let edges = g.edges[..self.base_edge_count]
            .iter()
            .map(|e| Edge { a: map[e.a.0], b: map[e.b.0], length: e.length })
            .collect();
        MetricGraph::new(g.names[..self.base_vertex_count].to_vec(), g.sink, edges)
    }
}

pub fn star_extend(g: &MetricGraph, w: &BTreeSet<VertexId>, stub: f64) -> Result<StarGraph> {
    if w.contains(&g.sink) {
        return Err(Error::InvalidParameter("the sink cannot be a star vertex".into()));
    }
    if let Some(v) = w.iter().find(|v| v.0 >= g.vertex_count()) {
        return Err(Error::UnknownVertex(format!("#{}", v.0)));
    }
    if !(stub.is_finite() && stub > 0.0) {
        return Err(Error::InvalidParameter(format!("stub length must be positive, got {stub}")));
    }
    let mut names = g.names.clone();
    let mut edges = g.edges.clone();
    let mut star_edges = Vec::new();
    let mut replicas: BTreeMap<VertexId, Vec<VertexId>> = w.iter().map(|v| (*v, vec![])).collect();
    let mut new_star = Vec::new();
    for (i, e) in g.edges.iter().enumerate() {
        for end_a in [true, false] {
            let v = if end_a { e.a } else { e.b };
            if !w.contains(&v) {
                continue;
            }
            let r = VertexId(names.len());
            let label = g.fresh_name(format!("{}#{}{}", g.names[v.0], i, if end_a { "a" } else { "b" }), &names);
            names.push(label);
            if end_a {
                edges[i].a = r;
            } else {
                edges[i].b = r;
            }
            replicas.get_mut(&v).expect("star vertex").push(r);
            new_star.push((v, r, EdgeId(i), end_a));
        }
    }
    let base_edge_count = edges.len();
    for (v, r, original, end_a) in new_star {
        let id = EdgeId(edges.len());
        edges.push(Edge { a: v, b: r, length: stub });
        star_edges.push(StarEdge { edge: id, star: v, replica: r, original, end_a });
    }
    let graph = MetricGraph::new(names, g.sink, edges)?;
    Ok(StarGraph {
        graph,
        star_vertices: w.clone(),
        star_edges,
        replicas,
        base_vertex_count: g.vertex_count(),
        base_edge_count,
    })
}

/// Result of detaching one end of an edge from a vertex.
#[derive(Clone, Debug)]
pub struct Detached {
    pub graph: MetricGraph,
    /// The new middle vertex joined to both the vertex and its detached copy.
    pub star: VertexId,
    /// The copy of the vertex now carrying the moved edge end.
    pub copy: VertexId,
    pub star_edges: [EdgeId; 2],
}

/// Moves the end of `step` (rooted at `v0`) onto a new vertex, and joins that
/// vertex and `v0` through a new middle vertex with two edges of length `stub`.
pub fn detach_vertex(g: &MetricGraph, v0: VertexId, step: Step, stub: f64) -> Result<Detached> {
    if v0 == g.sink {
        return Err(Error::InvalidParameter("cannot detach the sink".into()));
    }
    if step.edge.0 >= g.edge_count() || g.tail(step) != v0 {
        return Err(Error::InvalidParameter("edge end is not rooted at the vertex".into()));
    }
    if !(stub.is_finite() && stub > 0.0) {
        return Err(Error::InvalidParameter(format!("stub length must be positive, got {stub}")));
    }
    let mut names = g.names.clone();
    let base = g.names[v0.0].clone();
    let star_name = g.fresh_name(format!("{base}*"), &names);
    names.push(star_name);
    let copy_name = g.fresh_name(format!("{base}~"), &names);
    names.push(copy_name);
    let star = VertexId(names.len() - 2);
    let copy = VertexId(names.len() - 1);
    let mut edges = g.edges.clone();
    if step.forward {
        edges[step.edge.0].a = copy;
    } else {
        edges[step.edge.0].b = copy;
    }
    let s1 = EdgeId(edges.len());
    edges.push(Edge { a: star, b: v0, length: stub });
    let s2 = EdgeId(edges.len());
    edges.push(Edge { a: star, b: copy, length: stub });
    let graph = MetricGraph::new(names, g.sink, edges)?;
    Ok(Detached { graph, star, copy, star_edges: [s1, s2] })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub vertices: BTreeSet<VertexId>,
    pub edges: BTreeSet<EdgeId>,
    pub boundary: BTreeSet<VertexId>,
}

/// Vertices of the subgraph that touch an edge outside it.
pub fn subgraph_boundary(
    g: &MetricGraph,
    vertices: &BTreeSet<VertexId>,
    edges: &BTreeSet<EdgeId>,
) -> Result<Subgraph> {
    for e in edges {
        if e.0 >= g.edge_count() {
            return Err(Error::InvalidParameter(format!("edge #{} out of range", e.0)));
        }
        let ed = g.edge(*e);
        if !vertices.contains(&ed.a) || !vertices.contains(&ed.b) {
            return Err(Error::InvalidParameter(format!(
                "edge #{} has an endpoint outside the vertex set",
                e.0
            )));
        }
    }
    let boundary = vertices
        .iter()
        .copied()
        .filter(|v| g.steps_from(*v).iter().any(|s| !edges.contains(&s.edge)))
        .collect();
    Ok(Subgraph { vertices: vertices.clone(), edges: edges.clone(), boundary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> MetricGraph {
        MetricGraph::from_edges(&["v", "w"], "s", &[("v", "w", 1.0), ("w", "s", 1.0)]).unwrap()
    }

    /// Graph of the first figure: vertices 1..5, W = {1,2,3}.
    fn figure_one() -> MetricGraph {
        MetricGraph::from_edges(
            &["1", "2", "3", "4", "5"],
            "s",
            &[
                ("1", "2", 1.0),
                ("1", "2", 1.5),
                ("1", "5", 1.0),
                ("2", "3", 1.0),
                ("1", "4", 1.0),
                ("4", "3", 1.0),
                ("4", "5", 1.0),
                ("5", "3", 1.0),
                ("3", "3", 2.0),
                ("5", "s", 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rates_and_degrees() {
        let g = path();
        let v = g.vertex("v").unwrap();
        let w = g.vertex("w").unwrap();
        assert_eq!(g.rate(v), 1.0);
        assert_eq!(g.rate(w), 2.0);
        assert_eq!(g.degree_excluding_sink(w), 1);
    }

    #[test]
    fn self_loop_counts_twice() {
        let g = MetricGraph::from_edges(&["v"], "s", &[("v", "v", 0.5), ("v", "s", 1.0)]).unwrap();
        let v = g.vertex("v").unwrap();
        assert_eq!(g.rate(v), 5.0);
        assert_eq!(g.steps_from(v).len(), 3);
        assert_eq!(g.degree_excluding_sink(v), 2);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(MetricGraph::from_edges(&["v"], "s", &[("v", "s", 0.0)]).is_err());
        assert!(MetricGraph::from_edges(&["v"], "s", &[("v", "s", f64::NAN)]).is_err());
        assert!(MetricGraph::from_edges(&["v", "w"], "s", &[("v", "s", 1.0)]).is_err());
        assert!(MetricGraph::from_edges(&["v"], "s", &[("v", "x", 1.0)]).is_err());
        let spec: GraphSpec = serde_json::from_str(r#"{"vertices":[],"sink":"s","edges":[]}"#).unwrap();
        assert!(MetricGraph::from_spec(&spec).is_err());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"vertices":[1,2],"sink":"s","edges":[{"a":1,"b":2,"len":1.5},{"a":2,"b":"s","len":1}]}"#;
        let g = MetricGraph::from_json(text).unwrap();
        let again = MetricGraph::from_spec(&g.to_spec()).unwrap();
        assert_eq!(g.canonical_form(), again.canonical_form());
        assert_eq!(g.rate(g.vertex("2").unwrap()), 1.0 / 1.5 + 1.0);
    }

    #[test]
    fn figure_one_replica_counts() {
        let g = figure_one();
        let w: BTreeSet<_> = ["1", "2", "3"].iter().map(|n| g.vertex(n).unwrap()).collect();
        let star = star_extend(&g, &w, 0.1).unwrap();
        let counts: Vec<usize> = ["1", "2", "3"]
            .iter()
            .map(|n| star.replicas[&g.vertex(n).unwrap()].len())
            .collect();
        assert_eq!(counts, vec![4, 3, 5]);
        // every original edge keeps its id and length
        for (i, e) in g.edges().iter().enumerate() {
            assert_eq!(star.graph.edge(EdgeId(i)).length, e.length);
        }
        assert_eq!(star.collapse().unwrap().canonical_form(), g.canonical_form());
    }

    #[test]
    fn star_extension_of_self_loop_uses_two_replicas() {
        let g = MetricGraph::from_edges(&["v"], "s", &[("v", "v", 1.0), ("v", "s", 1.0)]).unwrap();
        let v = g.vertex("v").unwrap();
        let star = star_extend(&g, &BTreeSet::from([v]), 0.2).unwrap();
        assert_eq!(star.replicas[&v].len(), 3);
        let looped = star.graph.edge(EdgeId(0));
        assert!(!looped.is_self_loop());
        assert!(star.replicas[&v].contains(&looped.a) && star.replicas[&v].contains(&looped.b));
    }

    #[test]
    fn detach_adds_two_vertices_and_two_edges() {
        let g = figure_one();
        let v = g.vertex("3").unwrap();
        let step = g.steps_from(v)[0];
        let d = detach_vertex(&g, v, step, 0.1).unwrap();
        assert_eq!(d.graph.vertex_count(), g.vertex_count() + 2);
        assert_eq!(d.graph.edge_count(), g.edge_count() + 2);
        assert_eq!(d.graph.tail(step), d.copy);
        assert_eq!(d.graph.degree_excluding_sink(d.star), 2);
    }

    #[test]
    fn detach_self_loop_moves_one_end() {
        let g = MetricGraph::from_edges(&["v"], "s", &[("v", "v", 1.0), ("v", "s", 1.0)]).unwrap();
        let v = g.vertex("v").unwrap();
        let d = detach_vertex(&g, v, Step { edge: EdgeId(0), forward: true }, 0.1).unwrap();
        let e = d.graph.edge(EdgeId(0));
        assert_eq!((e.a, e.b), (d.copy, v));
        assert!(detach_vertex(&g, g.sink(), Step { edge: EdgeId(1), forward: false }, 0.1).is_err());
    }

    #[test]
    fn boundary_of_path_edge() {
        let g = path();
        let v = g.vertex("v").unwrap();
        let w = g.vertex("w").unwrap();
        let sub = subgraph_boundary(&g, &BTreeSet::from([v, w]), &BTreeSet::from([EdgeId(0)])).unwrap();
        assert_eq!(sub.boundary, BTreeSet::from([w]));
        let all: BTreeSet<_> = g.vertices().collect();
        let edges: BTreeSet<_> = (0..g.edge_count()).map(EdgeId).collect();
        assert!(subgraph_boundary(&g, &all, &edges).unwrap().boundary.is_empty());
    }

    #[test]
    fn figure_four_detach_then_star_vertex_degree() {
        // after detaching, the middle vertex has exactly the two stub edges
        let g = path();
        let w = g.vertex("w").unwrap();
        let step = *g.steps_from(w).iter().find(|s| !g.is_sink_edge(s.edge)).unwrap();
        let d = detach_vertex(&g, w, step, 0.5).unwrap();
        assert_eq!(d.graph.rate(d.star), 4.0);
        assert_eq!(d.graph.rate(w), 1.0 + 2.0);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_graph() -> impl Strategy<Value = MetricGraph> {
        (2usize..6)
            .prop_flat_map(|n| {
                let extra = prop::collection::vec((0..n, 0..n + 1, 0.2f64..3.0), 0..8);
                let lens = prop::collection::vec(0.2f64..3.0, n);
                (Just(n), lens, extra)
            })
            .prop_map(|(n, lens, extra)| {
                let names: Vec<String> = (0..=n).map(|i| format!("v{i}")).collect();
                // a spanning path through the sink keeps it connected
                let mut edges: Vec<Edge> = (0..n)
                    .map(|i| Edge { a: VertexId(i), b: VertexId(i + 1), length: lens[i] })
                    .collect();
                for (a, b, l) in extra {
                    edges.push(Edge { a: VertexId(a), b: VertexId(b), length: l });
                }
                MetricGraph::new(names, VertexId(n), edges).unwrap()
            })
    }

    proptest! {
        #[test]
        fn star_extension_collapses_back(g in arb_graph(), mask in any::<u8>()) {
            let w: BTreeSet<VertexId> = g.interior().filter(|v| mask & (1 << (v.0 % 8)) != 0).collect();
            let star = star_extend(&g, &w, 0.3).unwrap();
            prop_assert_eq!(star.collapse().unwrap().canonical_form(), g.canonical_form());
            for v in &w {
                // replicas count every directed edge rooted at v, sink edges included
                prop_assert_eq!(star.replicas[v].len(), g.steps_from(*v).len());
                if g.steps_from(*v).iter().all(|s| !g.is_sink_edge(s.edge)) {
                    prop_assert_eq!(star.replicas[v].len(), g.degree_excluding_sink(*v));
                }
            }
        }

        #[test]
        fn detach_sizes(g in arb_graph(), pick in any::<prop::sample::Index>()) {
            let v = VertexId(0);
            let steps = g.steps_from(v);
            let step = steps[pick.index(steps.len())];
            let d = detach_vertex(&g, v, step, 0.1).unwrap();
            prop_assert_eq!(d.graph.vertex_count(), g.vertex_count() + 2);
            prop_assert_eq!(d.graph.edge_count(), g.edge_count() + 2);
        }
    }
}
