//! Parity configurations: edge labels in {0, 1} with an even sum at every
//! vertex, their uniform law on clusters and the random-current weights.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_bigint::BigUint;

use crate::dist;
use crate::error::{invalid, Error, Result};
use crate::graph::{EdgeId, MetricGraph, VertexId};
use crate::loops::{sample_vertex_local_times, LoopConfig, SoupSampler};
use crate::occupation::clusters::UnionFind;
use crate::occupation::{extract_clusters, sample_edge_field, sample_zero_hits, uniform_grid, Cluster, ZeroRule};
use crate::report::StatReport;
use crate::rng::{map_reps, Rng};
use crate::stats::chi_square_gof;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParityConfig {
    pub alpha: Vec<bool>,
}

impl ParityConfig {
    pub fn zeros(edges: usize) -> Self {
        ParityConfig { alpha: vec![false; edges] }
    }

    /// Edge-id ordered bitstring such as `"0110"`.
    pub fn bitstring(&self) -> String {
        self.alpha.iter().map(|a| if *a { '1' } else { '0' }).collect()
    }

    pub fn is_admissible(&self, g: &MetricGraph) -> bool {
        let mut deg = vec![0u32; g.vertex_count()];
        for e in g.edge_ids() {
            if self.alpha[e.0] {
                let ed = g.edge(e);
                deg[ed.a.0] += 1;
                deg[ed.b.0] += 1;
            }
        }
        g.interior().all(|v| deg[v.0] % 2 == 0)
    }
}

/// Spanning forest and chords of a cluster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleBasis {
    pub tree: Vec<EdgeId>,
    pub chords: Vec<EdgeId>,
}

impl CycleBasis {
    pub fn dimension(&self) -> usize {
        self.chords.len()
    }
}

/// Lowest-id Kruskal spanning tree of the cluster; the remaining edges are chords.
pub fn cycle_basis(g: &MetricGraph, cluster: &Cluster) -> CycleBasis {
    let mut uf = UnionFind::new(g.vertex_count());
    let mut edges = cluster.edges.clone();
    edges.sort();
    let mut tree = Vec::new();
    let mut chords = Vec::new();
    for e in edges {
        let ed = g.edge(e);
        if uf.union(ed.a.0, ed.b.0) {
            tree.push(e);
        } else {
            chords.push(e);
        }
    }
    CycleBasis { tree, chords }
}

/// Number of admissible configurations supported on the clusters.
pub fn count_admissible(g: &MetricGraph, clusters: &[Cluster]) -> BigUint {
    let dim: usize = clusters.iter().map(|c| cycle_basis(g, c).dimension()).sum();
    BigUint::from(1u8) << dim
}

/// Completes chord labels into a configuration on the tree edges whose
/// parity is odd exactly at the vertices of `odd`. Returns false when a tree
/// component has an odd number of such vertices.
fn complete_tree(g: &MetricGraph, basis: &CycleBasis, odd: &BTreeSet<VertexId>, alpha: &mut [bool]) -> bool {
    let mut demand: HashMap<VertexId, bool> = odd.iter().map(|v| (*v, true)).collect();
    for &e in &basis.chords {
        if alpha[e.0] {
            let ed = g.edge(e);
            if ed.a != ed.b {
                *demand.entry(ed.a).or_default() ^= true;
                *demand.entry(ed.b).or_default() ^= true;
            }
        }
    }
    let mut adj: BTreeMap<VertexId, Vec<(EdgeId, VertexId)>> = BTreeMap::new();
    for &e in &basis.tree {
        let ed = g.edge(e);
        adj.entry(ed.a).or_default().push((e, ed.b));
        adj.entry(ed.b).or_default().push((e, ed.a));
    }
    let mut parent: HashMap<VertexId, Option<(EdgeId, VertexId)>> = HashMap::new();
    let mut order = Vec::new();
    for &root in adj.keys() {
        if parent.contains_key(&root) {
            continue;
        }
        parent.insert(root, None);
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &(e, w) in &adj[&v] {
                if !parent.contains_key(&w) {
                    parent.insert(w, Some((e, v)));
                    queue.push_back(w);
                }
            }
        }
    }
    for &v in order.iter().rev() {
        if let Some((e, p)) = parent[&v] {
            let need = demand.get(&v).copied().unwrap_or(false);
            alpha[e.0] = need;
            if need {
                *demand.entry(p).or_default() ^= true;
            }
        }
    }
    demand.iter().all(|(v, odd)| !odd || parent.get(v).is_some_and(|p| p.is_some()))
}

/// Uniform admissible configuration supported on the clusters: fair bits on
/// chords, tree edges forced by parity.
pub fn admissible_uniform(g: &MetricGraph, clusters: &[Cluster], rng: &mut Rng) -> ParityConfig {
    let mut cfg = ParityConfig::zeros(g.edge_count());
    for c in clusters {
        let basis = cycle_basis(g, c);
        for &e in &basis.chords {
            cfg.alpha[e.0] = dist::bernoulli(rng, 0.5);
        }
        complete_tree(g, &basis, &BTreeSet::new(), &mut cfg.alpha);
    }
    cfg
}

/// Uniform configuration on `edges` whose parity is odd exactly at the
/// vertices of `odd` (a self-loop counts twice).
pub fn parity_uniform(g: &MetricGraph, edges: &[EdgeId], odd: &BTreeSet<VertexId>, rng: &mut Rng) -> Result<ParityConfig> {
    let cluster = Cluster { vertices: Vec::new(), edges: edges.to_vec() };
    let basis = cycle_basis(g, &cluster);
    let mut cfg = ParityConfig::zeros(g.edge_count());
    for &e in &basis.chords {
        cfg.alpha[e.0] = dist::bernoulli(rng, 0.5);
    }
    if complete_tree(g, &basis, odd, &mut cfg.alpha) {
        Ok(cfg)
    } else {
        Err(invalid("no configuration on these edges has the requested parities"))
    }
}

pub fn parity_of_config(g: &MetricGraph, config: &LoopConfig) -> ParityConfig {
    ParityConfig { alpha: config.crossings(g).iter().map(|n| n % 2 == 1).collect() }
}

/// All admissible configurations supported on `edges`, in lexicographic order.
pub fn admissible_on(g: &MetricGraph, edges: &[EdgeId]) -> Result<Vec<ParityConfig>> {
    if edges.len() > 20 {
        return Err(Error::TooLarge(format!("{} edges to enumerate", edges.len())));
    }
    let mut out = Vec::new();
    for mask in 0u32..(1 << edges.len()) {
        let mut cfg = ParityConfig::zeros(g.edge_count());
        for (i, e) in edges.iter().enumerate() {
            cfg.alpha[e.0] = mask >> i & 1 == 1;
        }
        if cfg.is_admissible(g) {
            out.push(cfg);
        }
    }
    out.sort();
    Ok(out)
}

/// Exact parity law of the random current with weights `beta` (indexed by
/// edge; sink edges ignored): proportional to the product of `cosh` on even
/// edges and `sinh` on odd ones.
pub fn current_parity_weights(g: &MetricGraph, beta: &[f64]) -> Result<Vec<(ParityConfig, f64)>> {
    if beta.len() != g.edge_count() {
        return Err(invalid("one weight per edge expected"));
    }
    let edges: Vec<EdgeId> = g.edge_ids().filter(|e| !g.is_sink_edge(*e)).collect();
    let configs = admissible_on(g, &edges)?;
    let ln_w: Vec<f64> = configs
        .iter()
        .map(|c| {
            edges
                .iter()
                .map(|e| {
                    let b = beta[e.0];
                    if c.alpha[e.0] {
                        b.sinh().ln()
                    } else {
                        b.cosh().ln()
                    }
                })
                .sum::<f64>()
        })
        .collect();
    let top = ln_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = ln_w.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(configs.into_iter().zip(w).map(|(c, x)| (c, x / total)).collect())
}

/// Checks that, given every non-sink edge lies in a single cluster, the
/// crossing parities are uniform over admissible configurations and
/// uncorrelated with the field at the midpoint of the first edge.
pub fn verify_cluster_uniformity(g: &MetricGraph, reps: u64, seed: u64) -> Result<StatReport> {
    let edges: Vec<EdgeId> = g.edge_ids().filter(|e| !g.is_sink_edge(*e)).collect();
    if edges.is_empty() {
        return Err(invalid("graph has no interior edge"));
    }
    let configs = admissible_on(g, &edges)?;
    let index: HashMap<ParityConfig, usize> = configs.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
    let sampler = SoupSampler::new(g)?;
    let first = edges[0];
    let grid = uniform_grid(g.length(first), 3);
    let samples = map_reps(seed, "cluster-uniformity", reps, |rng, _| -> Result<Option<(usize, f64)>> {
        let config = sampler.sample(rng);
        let crossings = config.crossings(g);
        let times = sample_vertex_local_times(g, &config.visits(g), rng);
        let hits = sample_zero_hits(g, &crossings, &times, rng);
        let clusters = extract_clusters(g, &times, &hits);
        if clusters.len() != 1 || clusters[0].edges.len() != edges.len() {
            return Ok(None);
        }
        let parity = parity_of_config(g, &config);
        let ed = g.edge(first);
        let field = sample_edge_field(
            g.length(first),
            times[ed.a.0],
            times[ed.b.0],
            crossings[first.0],
            ZeroRule::Avoid,
            &grid,
            rng,
        )?;
        Ok(Some((index[&parity], field.values[1])))
    });
    let mut counts = vec![0u64; configs.len()];
    let mut pairs = Vec::new();
    for s in samples {
        if let Some((i, mid)) = s? {
            counts[i] += 1;
            pairs.push((configs[i].alpha[first.0] as u8 as f64, mid));
        }
    }
    let n = pairs.len() as u64;
    let mut report = StatReport::new("cluster-uniformity", seed);
    report
        .param("reps", reps)
        .param("admissible", configs.len() as u64)
        .param("full_cluster_samples", n)
        .param("counts", counts.clone());
    if n < 200 {
        report.flag("full-cluster samples >= 200", n as f64, false, n);
        return Ok(report);
    }
    let uniform = vec![1.0 / configs.len() as f64; configs.len()];
    let c = chi_square_gof(&counts, &uniform, 5.0);
    report.p_value("parity uniform over admissible configurations", c.statistic, n, c.p_value);
    report.param("chi_square_dof", c.dof as u64);
    let r = pearson(&pairs);
    report.within_se(&format!("corr(alpha_{}, midpoint field)", first.0), r, 1.0 / (n as f64).sqrt(), 3.0, 0.0, n);
    Ok(report)
}

pub(crate) fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    pub(crate) fn theta() -> MetricGraph {
        MetricGraph::from_edges(
            &["u", "w"],
            "s",
            &[("u", "w", 1.0), ("u", "w", 1.0), ("u", "w", 1.0), ("u", "s", 1.0), ("w", "s", 1.0)],
        )
        .unwrap()
    }

    fn full_cluster(g: &MetricGraph) -> Cluster {
        let edges: Vec<EdgeId> = g.edge_ids().filter(|e| !g.is_sink_edge(*e)).collect();
        let mut vertices: Vec<VertexId> = edges.iter().flat_map(|e| [g.edge(*e).a, g.edge(*e).b]).collect();
        vertices.sort();
        vertices.dedup();
        Cluster { vertices, edges }
    }

    fn grid3() -> MetricGraph {
        let names: Vec<String> = (0..9).map(|i| format!("g{i}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let mut edges = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                let i = 3 * r + c;
                if c < 2 {
                    edges.push((refs[i], refs[i + 1], 1.0));
                }
                if r < 2 {
                    edges.push((refs[i], refs[i + 3], 1.0));
                }
            }
        }
        edges.push((refs[0], "s", 1.0));
        MetricGraph::from_edges(&refs, "s", &edges).unwrap()
    }

    #[test]
    fn counts() {
        let tri = MetricGraph::from_edges(
            &["a", "b", "c"],
            "s",
            &[("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0), ("a", "s", 1.0)],
        )
        .unwrap();
        assert_eq!(count_admissible(&tri, &[full_cluster(&tri)]), BigUint::from(2u8));
        let th = theta();
        assert_eq!(count_admissible(&th, &[full_cluster(&th)]), BigUint::from(4u8));
        let gr = grid3();
        // 12 edges, 9 vertices, one component
        assert_eq!(count_admissible(&gr, &[full_cluster(&gr)]), BigUint::from(1u32 << (12 - 9 + 1)));
        assert_eq!(admissible_on(&gr, &full_cluster(&gr).edges).unwrap().len(), 16);
        let path = MetricGraph::from_edges(&["a", "b"], "s", &[("a", "b", 1.0), ("b", "s", 1.0)]).unwrap();
        let c = full_cluster(&path);
        assert_eq!(count_admissible(&path, &[c.clone()]), BigUint::from(1u8));
        let mut rng = stream(1, "tree", 0);
        assert_eq!(admissible_uniform(&path, &[c], &mut rng), ParityConfig::zeros(2));
    }

    #[test]
    fn theta_uniform_frequencies() {
        let g = theta();
        let cl = [full_cluster(&g)];
        let configs = admissible_on(&g, &cl[0].edges).unwrap();
        assert_eq!(configs.len(), 4);
        let n = 100_000u64;
        let mut counts: HashMap<ParityConfig, u64> = HashMap::new();
        let mut rng = stream(2, "theta", 0);
        for _ in 0..n {
            let c = admissible_uniform(&g, &cl, &mut rng);
            assert!(c.is_admissible(&g));
            *counts.entry(c).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        let se = (0.25 * 0.75 / n as f64).sqrt();
        for c in &configs {
            let f = counts[c] as f64 / n as f64;
            assert!((f - 0.25).abs() < 3.0 * se, "{} {f}", c.bitstring());
        }
    }

    #[test]
    fn current_weights() {
        let tri = MetricGraph::from_edges(
            &["a", "b", "c"],
            "s",
            &[("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0), ("a", "s", 1.0)],
        )
        .unwrap();
        let beta: f64 = 0.7;
        let w = current_parity_weights(&tri, &[beta, beta, beta, 3.0]).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w[1].1 / w[0].1 - beta.tanh().powi(3)).abs() < 1e-12);
        let w0 = current_parity_weights(&tri, &[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(w0[0].1, 1.0);
        let big = current_parity_weights(&tri, &[40.0, 40.0, 40.0, 0.0]).unwrap();
        assert!((big[0].1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn parity_of_sampled_soups_is_admissible() {
        let g = grid3();
        let sampler = SoupSampler::new(&g).unwrap();
        let mut rng = stream(3, "par", 0);
        for _ in 0..300 {
            let cfg = sampler.sample(&mut rng);
            assert!(parity_of_config(&g, &cfg).is_admissible(&g));
        }
        let empty = LoopConfig::default();
        assert_eq!(parity_of_config(&g, &empty), ParityConfig::zeros(g.edge_count()));
    }

    #[test]
    fn triangle_loop_parity() {
        use crate::graph::Step;
        use crate::loops::DiscreteLoop;
        let tri = MetricGraph::from_edges(
            &["a", "b", "c"],
            "s",
            &[("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0), ("a", "s", 1.0)],
        )
        .unwrap();
        let st = |e: usize| Step { edge: EdgeId(e), forward: true };
        let l = DiscreteLoop::new(&tri, vec![st(0), st(1), st(2)]).unwrap();
        let p = parity_of_config(&tri, &LoopConfig { loops: vec![l] });
        assert_eq!(p.bitstring(), "1110");
    }

    #[test]
    fn theta_cluster_uniformity_small() {
        let r = verify_cluster_uniformity(&theta(), 20_000, 5).unwrap();
        assert!(r.pass, "{}", r.summary());
        assert_eq!(r.params["chi_square_dof"], 3);
    }

    proptest! {
        #[test]
        fn uniform_sampler_always_admissible(seed in 0u64..500, drop in proptest::collection::vec(any::<bool>(), 12)) {
            let g = grid3();
            let edges: Vec<EdgeId> = g.edge_ids().filter(|e| !g.is_sink_edge(*e) && !drop[e.0]).collect();
            let mut uf = UnionFind::new(g.vertex_count());
            for e in &edges {
                uf.union(g.edge(*e).a.0, g.edge(*e).b.0);
            }
            let mut groups: BTreeMap<usize, Vec<EdgeId>> = BTreeMap::new();
            for e in &edges {
                groups.entry(uf.find(g.edge(*e).a.0)).or_default().push(*e);
            }
            let clusters: Vec<Cluster> = groups.into_values().map(|edges| Cluster { vertices: vec![], edges }).collect();
            let cfg = admissible_uniform(&g, &clusters, &mut stream(seed, "prop", 0));
            prop_assert!(cfg.is_admissible(&g));
            for e in g.edge_ids() {
                if cfg.alpha[e.0] {
                    prop_assert!(edges.contains(&e));
                }
            }
        }
    }
}
