use std::collections::{BTreeMap, BTreeSet};

use loopsoup_core::conditioning::{
    outside_summary, verify_bridge_counts, verify_direct_sampler, verify_domain_markov, verify_star_correspondence,
    BridgeCheck, DomainCheck, NDirectSampler, NWindowSampler, StarCheck, StarSets, WindowedSoup, windows_around,
};
use loopsoup_core::currents::{count_admissible, admissible_on};
use loopsoup_core::graph::{star_extend, subgraph_boundary};
use loopsoup_core::occupation::clusters::Cluster;
use loopsoup_core::rng::{map_reps, stream};
use loopsoup_core::stats::total_variation;
use loopsoup_core::{MetricGraph, VertexId};

fn triangle() -> MetricGraph {
    MetricGraph::from_edges(&["1", "2", "3"], "s", &[("1", "2", 1.0), ("2", "3", 1.0), ("3", "1", 1.0), ("1", "s", 1.0)])
        .unwrap()
}

fn at(g: &MetricGraph, pairs: &[(&str, f64)]) -> BTreeMap<VertexId, f64> {
    pairs.iter().map(|(n, x)| (g.vertex(n).unwrap(), *x)).collect()
}

#[test]
fn star_correspondence_single_vertex() {
    let g = triangle();
    let opts = StarCheck { reps: 20_000, ..StarCheck::default() };
    let r = verify_star_correspondence(&g, &at(&g, &[("2", 1.0)]), &opts, 21).unwrap();
    assert!(r.pass, "{}", r.summary());
}

#[test]
fn star_correspondence_empty_star_is_trivial() {
    let g = triangle();
    let r = verify_star_correspondence(&g, &BTreeMap::new(), &StarCheck::default(), 1).unwrap();
    assert!(r.pass);
    assert_eq!(r.rows[0].statistic, 0.0);
}

#[test]
fn outside_summary_separates_local_time_levels() {
    let g = triangle();
    let star: BTreeSet<VertexId> = [g.vertex("2").unwrap()].into();
    let hist = |x: f64, tag: &str| {
        let soup = WindowedSoup::new(&g, windows_around(&at(&g, &[("2", x)]), 0.05)).unwrap();
        let mut h: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        for s in map_reps(5, tag, 20_000, |rng, _| {
            let (c, _, _) = soup.sample(&g, 1_000_000, rng).unwrap();
            outside_summary(&g, &star, &c.loops, 2)
        }) {
            *h.entry(s).or_default() += 1;
        }
        h
    };
    assert!(total_variation(&hist(0.5, "low"), &hist(2.0, "high")) > 0.05);
}

#[test]
fn bridge_counts_on_two_boundary_vertices() {
    let g = triangle();
    let star: BTreeSet<VertexId> = [g.vertex("2").unwrap()].into();
    let sets = StarSets::new(&g, &star).unwrap();
    let opts = BridgeCheck::diagonal(&sets, &[0.5, 1.5], 0.05, 4000);
    let r = verify_bridge_counts(&g, &star, &opts, 9).unwrap();
    assert!(r.pass, "{}", r.summary());
    assert_eq!(r.rows.len(), 4);
}

#[test]
fn direct_sampler_matches_windowed_on_star_graph() {
    let g = triangle();
    let star: BTreeSet<VertexId> = [g.vertex("2").unwrap()].into();
    let sg = star_extend(&g, &star, 1.0).unwrap();
    let centre: BTreeMap<VertexId, f64> = sg.replica_set().into_iter().map(|v| (v, 1.0)).collect();
    let r = verify_direct_sampler(&sg.graph, &star, &centre, 0.05, 10_000, 4).unwrap();
    assert!(r.pass, "{}", r.summary());
}

#[test]
fn direct_sampler_example_mean() {
    let rho = 0.8;
    let g = MetricGraph::from_edges(&["v", "c", "w"], "s", &[("v", "c", 1.0), ("c", "w", 1.0), ("v", "w", rho), ("w", "s", 1.0)])
        .unwrap();
    let star: BTreeSet<VertexId> = [g.vertex("c").unwrap()].into();
    let d = NDirectSampler::new(&g, &star).unwrap();
    let (v, w) = (g.vertex("v").unwrap(), g.vertex("w").unwrap());
    assert!((d.bridge_mean(v, w, 1.0, 1.0) - 1.0 / rho).abs() < 1e-12);
    let times = at(&g, &[("v", 0.0), ("w", 3.0)]);
    let mut rng = stream(2, "zero", 0);
    for _ in 0..100 {
        let s = d.sample(&g, &times, 0, &mut rng).unwrap();
        assert!(s.pair_counts.values().all(|c| *c == 0));
        assert_eq!(s.times[v.0], 0.0);
    }
}

#[test]
fn windowed_limit_respects_support() {
    let g = triangle();
    let star: BTreeSet<VertexId> = [g.vertex("1").unwrap(), g.vertex("2").unwrap()].into();
    let sg = star_extend(&g, &star, 0.5).unwrap();
    let windows: BTreeMap<VertexId, (f64, f64)> = sg.replica_set().into_iter().map(|v| (v, (0.7, 1.3))).collect();
    let s = NWindowSampler::new(&sg.graph, &star, windows).unwrap();
    let mut rng = stream(3, "support", 0);
    for _ in 0..200 {
        let d = s.sample(&sg.graph, 0, 10_000_000, &mut rng).unwrap();
        for v in &star {
            assert_eq!(d.times[v.0], 0.0);
            let sum: u32 = sg.graph.steps_from(*v).iter().map(|x| d.crossings[x.edge.0]).sum();
            assert_eq!(sum % 2, 0);
        }
        for e in sg.star_edge_ids() {
            assert!(d.crossings[e.0] <= 1);
        }
    }
}

#[test]
fn admissible_count_on_star_edges_matches_enumeration() {
    let g = triangle();
    let star: BTreeSet<VertexId> = [g.vertex("1").unwrap(), g.vertex("2").unwrap()].into();
    let sg = star_extend(&g, &star, 1.0).unwrap();
    let sets = StarSets::new(&sg.graph, &star).unwrap();
    let edges: Vec<_> = sets.edges.iter().copied().collect();
    let listed = admissible_on(&sg.graph, &edges).unwrap();
    let counted = count_admissible(&sg.graph, &[Cluster { vertices: vec![], edges }]);
    assert_eq!(num_bigint::BigUint::from(listed.len()), counted);
}

#[test]
fn domain_markov_on_triangle() {
    let g = triangle();
    let vs: BTreeSet<VertexId> = ["1", "2", "3"].iter().map(|n| g.vertex(n).unwrap()).collect();
    let es = [0, 1].map(loopsoup_core::EdgeId).into_iter().collect();
    let sub = subgraph_boundary(&g, &vs, &es).unwrap();
    let centres = at(&g, &[("1", 1.0), ("3", 1.0)]);
    let r = verify_domain_markov(&g, &sub, &centres, &DomainCheck { reps: 5_000, ..DomainCheck::default() }, 6).unwrap();
    assert!(r.pass, "{}", r.summary());
    let h = r.params.get("H_1_3").and_then(|v| v.as_f64()).unwrap();
    assert!((h - 0.5).abs() < 1e-12);
}
