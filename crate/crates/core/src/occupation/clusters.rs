//! Clusters of the positive set of the occupation field.

use std::collections::BTreeMap;

use crate::graph::{EdgeId, MetricGraph, VertexId};

/// Connected component of edges along which the field stays positive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub vertices: Vec<VertexId>,
    pub edges: Vec<EdgeId>,
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

fn positive_edges(g: &MetricGraph, times: &[f64], zero_hit: &[bool]) -> Vec<EdgeId> {
    g.edge_ids()
        .filter(|&e| {
            let ed = g.edge(e);
            !g.is_sink_edge(e) && !zero_hit[e.0] && times[ed.a.0] > 0.0 && times[ed.b.0] > 0.0
        })
        .collect()
}

/// Clusters formed by the edges whose field stays positive between two
/// positive vertices. Sink edges never belong to a cluster.
pub fn extract_clusters(g: &MetricGraph, times: &[f64], zero_hit: &[bool]) -> Vec<Cluster> {
    let edges = positive_edges(g, times, zero_hit);
    let mut uf = UnionFind::new(g.vertex_count());
    for &e in &edges {
        let ed = g.edge(e);
        uf.union(ed.a.0, ed.b.0);
    }
    let mut by_root: BTreeMap<usize, Cluster> = BTreeMap::new();
    for &e in &edges {
        let ed = g.edge(e);
        let c = by_root.entry(uf.find(ed.a.0)).or_insert_with(|| Cluster { vertices: vec![], edges: vec![] });
        c.edges.push(e);
        for v in [ed.a, ed.b] {
            if !c.vertices.contains(&v) {
                c.vertices.push(v);
            }
        }
    }
    let mut out: Vec<Cluster> = by_root
        .into_values()
        .map(|mut c| {
            c.vertices.sort();
            c
        })
        .collect();
    out.sort_by_key(|c| c.edges[0]);
    out
}

/// Components of positive vertices joined by positive edges, including
/// isolated positive vertices.
pub fn vertex_components(g: &MetricGraph, times: &[f64], zero_hit: &[bool]) -> Vec<Vec<VertexId>> {
    let mut uf = UnionFind::new(g.vertex_count());
    for e in positive_edges(g, times, zero_hit) {
        let ed = g.edge(e);
        uf.union(ed.a.0, ed.b.0);
    }
    let mut by_root: BTreeMap<usize, Vec<VertexId>> = BTreeMap::new();
    for v in g.interior() {
        if times[v.0] > 0.0 {
            by_root.entry(uf.find(v.0)).or_default().push(v);
        }
    }
    by_root.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square() -> MetricGraph {
        MetricGraph::from_edges(
            &["a", "b", "c", "d"],
            "s",
            &[("a", "b", 1.0), ("b", "c", 1.0), ("c", "d", 1.0), ("d", "a", 1.0), ("a", "s", 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn clusters_split_at_zeros() {
        let g = square();
        let times = [1.0, 1.0, 1.0, 1.0, 0.0];
        let all = extract_clusters(&g, &times, &[false; 5]);
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].edges.len(), 4);
        let split = extract_clusters(&g, &times, &[true, false, true, false, false]);
        assert_eq!(split.len(), 2);
        assert_eq!(split[0].edges, vec![EdgeId(1)]);
        assert_eq!(split[1].edges, vec![EdgeId(3)]);
        let comps = vertex_components(&g, &[1.0, 0.0, 1.0, 1.0, 0.0], &[false; 5]);
        assert_eq!(comps, vec![vec![VertexId(0), VertexId(2), VertexId(3)]]);
        let comps = vertex_components(&g, &[1.0, 1.0, 1.0, 1.0, 0.0], &[true, true, true, true, false]);
        assert_eq!(comps.len(), 4);
    }

    proptest! {
        #[test]
        fn clusters_partition_positive_edges(mask in proptest::collection::vec(any::<bool>(), 5), t in proptest::collection::vec(0u8..3, 4)) {
            let g = square();
            let mut times: Vec<f64> = t.iter().map(|x| *x as f64).collect();
            times.push(0.0);
            let cl = extract_clusters(&g, &times, &mask);
            let mut seen: Vec<EdgeId> = cl.iter().flat_map(|c| c.edges.clone()).collect();
            seen.sort();
            let expect = positive_edges(&g, &times, &mask);
            prop_assert_eq!(seen, expect);
            for c in &cl {
                for v in &c.vertices {
                    prop_assert!(times[v.0] > 0.0);
                }
            }
        }
    }
}
