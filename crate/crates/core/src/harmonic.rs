//! Harmonic quantities of the random walk on the vertices: return
//! probabilities, excursion kernels and the Green function.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::graph::{EdgeId, MetricGraph, VertexId};

/// Total jump rates `a_v` for every vertex.
pub fn vertex_rates(g: &MetricGraph) -> Vec<f64> {
    g.vertices().map(|v| g.rate(v)).collect()
}

/// Probability that the walk jumps along the directed edge `s` from its tail.
pub fn step_probability(g: &MetricGraph, s: crate::graph::Step) -> f64 {
    1.0 / (g.length(s.edge) * g.rate(g.tail(s)))
}

/// `K[(u, w)]` is the probability that the walk started at `u` first enters
/// the stopping set at `w`. Jumps along an avoided edge kill the walk.
/// Rows of stopping vertices are the identity.
pub fn exit_kernel(g: &MetricGraph, stop: &[bool], avoid: &[bool]) -> Result<DMatrix<f64>> {
    let n = g.vertex_count();
    if stop.len() != n || avoid.len() != g.edge_count() {
        return Err(invalid("mask lengths do not match the graph"));
    }
    let free: Vec<usize> = (0..n).filter(|&u| !stop[u]).collect();
    let mut pos = vec![usize::MAX; n];
    for (i, &u) in free.iter().enumerate() {
        pos[u] = i;
    }
    let m = free.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, n);
    for (i, &u) in free.iter().enumerate() {
        for s in g.steps_from(VertexId(u)) {
            if avoid[s.edge.0] {
                continue;
            }
            let p = step_probability(g, *s);
            let w = g.head(*s).0;
            if stop[w] {
                rhs[(i, w)] += p;
            } else {
                a[(i, pos[w])] -= p;
            }
        }
    }
    let sol = if m > 0 {
        a.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular exit system".into()))?
    } else {
        rhs
    };
    let mut k = DMatrix::<f64>::zeros(n, n);
    for u in 0..n {
        if stop[u] {
            k[(u, u)] = 1.0;
        } else {
            for w in 0..n {
                k[(u, w)] = sol[(pos[u], w)];
            }
        }
    }
    Ok(k)
}

/// Probability that the walk from `v` comes back to `v` before hitting the
/// sink or any vertex of `killed`.
pub fn return_probability(g: &MetricGraph, v: VertexId, killed: &[VertexId]) -> Result<f64> {
    if v == g.sink() || killed.contains(&v) {
        return Err(invalid("return probability asked for a killed vertex"));
    }
    let mut stop = vec![false; g.vertex_count()];
    stop[g.sink().0] = true;
    stop[v.0] = true;
    for k in killed {
        stop[k.0] = true;
    }
    let k = exit_kernel(g, &stop, &vec![false; g.edge_count()])?;
    Ok(g.steps_from(v).iter().map(|s| step_probability(g, *s) * k[(g.head(*s).0, v.0)]).sum())
}

/// Mass of excursions from `source` which leave through an edge not in
/// `avoid`, never use an avoided edge, and end when they first reach
/// `targets`, the sink or `source` itself. The entry for a target `w` is the
/// mass of excursions ending at `w`; if `source` is a target its entry is the
/// mass of excursions returning to it.
pub fn excursion_kernel(
    g: &MetricGraph,
    source: VertexId,
    avoid: &BTreeSet<EdgeId>,
    targets: &BTreeSet<VertexId>,
) -> Result<BTreeMap<VertexId, f64>> {
    let mut stop = vec![false; g.vertex_count()];
    stop[g.sink().0] = true;
    stop[source.0] = true;
    for t in targets {
        if t.0 >= g.vertex_count() {
            return Err(Error::UnknownVertex(format!("#{}", t.0)));
        }
        stop[t.0] = true;
    }
    let mut avoid_mask = vec![false; g.edge_count()];
    for e in avoid {
        avoid_mask[e.0] = true;
    }
    let k = exit_kernel(g, &stop, &avoid_mask)?;
    let mut out: BTreeMap<VertexId, f64> = targets.iter().map(|t| (*t, 0.0)).collect();
    for s in g.steps_from(source) {
        if avoid_mask[s.edge.0] {
            continue;
        }
        let mass = 0.5 / g.length(s.edge);
        let h = g.head(*s).0;
        for (t, val) in out.iter_mut() {
            *val += mass * k[(h, t.0)];
        }
    }
    Ok(out)
}

/// Twice the inverse of the Dirichlet Laplacian with conductances `1/length`
/// (zero on the sink row and column). On a single edge of length `r` to the
/// sink this is `2r`.
pub fn green_function(g: &MetricGraph) -> Result<DMatrix<f64>> {
    let n = g.vertex_count();
    let sink = g.sink().0;
    let idx: Vec<usize> = (0..n).filter(|&u| u != sink).collect();
    let mut pos = vec![usize::MAX; n];
    for (i, &u) in idx.iter().enumerate() {
        pos[u] = i;
    }
    let m = idx.len();
    let mut lap = DMatrix::<f64>::zeros(m, m);
    for e in g.edges() {
        if e.is_self_loop() {
            continue;
        }
        let c = 1.0 / e.length;
        for (x, y) in [(e.a.0, e.b.0), (e.b.0, e.a.0)] {
            if x == sink {
                continue;
            }
            lap[(pos[x], pos[x])] += c;
            if y != sink {
                lap[(pos[x], pos[y])] -= c;
            }
        }
    }
    let inv = lap
        .cholesky()
        .ok_or_else(|| Error::Numerical("Laplacian is not positive definite".into()))?
        .inverse();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for i in 0..m {
        for j in 0..m {
            out[(idx[i], idx[j])] = 2.0 * inv[(i, j)];
        }
    }
    Ok(out)
}

/// Transition matrix of the walk restricted to non-killed vertices
/// (rows and columns of killed vertices are zero).
pub fn killed_transition_matrix(g: &MetricGraph, killed: &[bool]) -> DMatrix<f64> {
    let n = g.vertex_count();
    let mut p = DMatrix::<f64>::zeros(n, n);
    for u in g.vertices() {
        if killed[u.0] {
            continue;
        }
        for s in g.steps_from(u) {
            let w = g.head(*s);
            if !killed[w.0] {
                p[(u.0, w.0)] += step_probability(g, *s);
            }
        }
    }
    p
}

/// Writes a square matrix indexed by vertices as CSV with a header row.
pub fn matrix_csv(g: &MetricGraph, m: &DMatrix<f64>) -> String {
    let mut out = String::from("vertex");
    for v in g.vertices() {
        out.push(',');
        out.push_str(g.name(v));
    }
    out.push('\n');
    for u in g.vertices() {
        out.push_str(g.name(u));
        for v in g.vertices() {
            out.push_str(&format!(",{}", m[(u.0, v.0)]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> MetricGraph {
        MetricGraph::from_edges(&["v", "w"], "s", &[("v", "w", 1.0), ("w", "s", 1.0)]).unwrap()
    }

    #[test]
    fn single_edge_green() {
        let g = MetricGraph::from_edges(&["v"], "s", &[("v", "s", 0.7)]).unwrap();
        let gr = green_function(&g).unwrap();
        let v = g.vertex("v").unwrap();
        assert!((gr[(v.0, v.0)] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn path_values() {
        let g = path();
        let (v, w) = (g.vertex("v").unwrap(), g.vertex("w").unwrap());
        let gr = green_function(&g).unwrap();
        assert!((gr[(v.0, v.0)] - 4.0).abs() < 1e-12);
        assert!((gr[(v.0, w.0)] - 2.0).abs() < 1e-12);
        assert!((gr[(w.0, w.0)] - 2.0).abs() < 1e-12);
        // from w the walk goes to v (then back) or to the sink, each with 1/2
        assert!((return_probability(&g, w, &[]).unwrap() - 0.5).abs() < 1e-12);
        assert!((return_probability(&g, v, &[]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(return_probability(&g, v, &[w]).unwrap(), 0.0);
    }

    #[test]
    fn parallel_edges_excursion_mass() {
        // inside edge e0 avoided, outside edge e1 of length 1: H(v, w) = 1/2
        let g = MetricGraph::from_edges(
            &["v", "w"],
            "s",
            &[("v", "w", 1.0), ("v", "w", 1.0), ("v", "s", 1.0), ("w", "s", 1.0)],
        )
        .unwrap();
        let (v, w) = (g.vertex("v").unwrap(), g.vertex("w").unwrap());
        let h = excursion_kernel(&g, v, &BTreeSet::from([EdgeId(0)]), &BTreeSet::from([v, w])).unwrap();
        assert!((h[&w] - 0.5).abs() < 1e-12);
        assert_eq!(h[&v], 0.0);
    }

    #[test]
    fn escape_mass_matches_return_probability() {
        let g = MetricGraph::from_edges(
            &["1", "2", "3"],
            "s",
            &[("1", "2", 1.0), ("2", "3", 0.5), ("3", "1", 2.0), ("1", "s", 1.0), ("3", "3", 0.3)],
        )
        .unwrap();
        for v in g.interior() {
            let h = excursion_kernel(&g, v, &BTreeSet::new(), &BTreeSet::from([g.sink()])).unwrap();
            let p = return_probability(&g, v, &[]).unwrap();
            assert!((h[&g.sink()] - 0.5 * g.rate(v) * (1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn green_diagonal_from_return_probability() {
        // expected number of visits times mean holding time: G(v,v)/2 = 1/(a_v (1-p))
        let g = MetricGraph::from_edges(
            &["1", "2", "3"],
            "s",
            &[("1", "2", 1.0), ("2", "3", 0.5), ("3", "1", 2.0), ("1", "s", 1.0), ("2", "2", 0.4)],
        )
        .unwrap();
        let gr = green_function(&g).unwrap();
        for v in g.interior() {
            let p = return_probability(&g, v, &[]).unwrap();
            assert!((gr[(v.0, v.0)] / 2.0 - 1.0 / (g.rate(v) * (1.0 - p))).abs() < 1e-10);
        }
    }
}
