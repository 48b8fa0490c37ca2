//! Gaussian free field, the squared-field identity with loop-soup local
//! times, and cluster sign assignment.

pub mod explore;

pub use explore::{explore_cluster, sde_drift_check, two_edge_graph, Exploration, SdeCheck, StepStat, TracePoint};

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dist;
use crate::error::{Error, Result};
use crate::graph::{MetricGraph, VertexId};
use crate::harmonic::green_function;
use crate::loops::{sample_vertex_local_times, SoupSampler};
use crate::occupation::{sample_zero_hits, vertex_components};
use crate::report::StatReport;
use crate::rng::{map_reps, Rng};
use crate::stats::{ks_one_sample, ks_two_sample, mean_se};

/// Field values indexed by vertex; zero at the sink.
#[derive(Clone, Debug, PartialEq)]
pub struct GffSample {
    pub phi: Vec<f64>,
}

/// Exact sampler through the Cholesky factor of the Green function.
pub struct GffSampler {
    green: DMatrix<f64>,
    interior: Vec<usize>,
    factor: DMatrix<f64>,
    vertices: usize,
}

impl GffSampler {
    pub fn new(g: &MetricGraph) -> Result<Self> {
        let green = green_function(g)?;
        let interior: Vec<usize> = g.interior().map(|v| v.0).collect();
        let m = interior.len();
        let block = DMatrix::from_fn(m, m, |i, j| green[(interior[i], interior[j])]);
        let factor = block
            .cholesky()
            .ok_or_else(|| Error::Numerical("Green function is not positive definite".into()))?
            .l();
        Ok(GffSampler { green, interior, factor, vertices: g.vertex_count() })
    }

    pub fn green(&self) -> &DMatrix<f64> {
        &self.green
    }

    pub fn sample(&self, rng: &mut Rng) -> GffSample {
        let z: Vec<f64> = self.interior.iter().map(|_| dist::normal(rng)).collect();
        let mut phi = vec![0.0; self.vertices];
        for (i, &u) in self.interior.iter().enumerate() {
            phi[u] = (0..=i).map(|j| self.factor[(i, j)] * z[j]).sum();
        }
        GffSample { phi }
    }
}

pub fn sample_gff(g: &MetricGraph, rng: &mut Rng) -> Result<GffSample> {
    Ok(GffSampler::new(g)?.sample(rng))
}

/// Independent fair signs on the positive vertex components; zero elsewhere.
pub fn lupu_signs(g: &MetricGraph, times: &[f64], zero_hit: &[bool], rng: &mut Rng) -> Vec<i8> {
    let mut signs = vec![0i8; g.vertex_count()];
    for comp in vertex_components(g, times, zero_hit) {
        let s = if dist::bernoulli(rng, 0.5) { 1 } else { -1 };
        for v in comp {
            signs[v.0] = s;
        }
    }
    signs
}

/// Compares loop-soup vertex local times with half the squared free field:
/// per-vertex two-sample KS, mixed second moments against the Wick formula,
/// and the signed field against its Gaussian marginal.
pub fn lejan_check(g: &MetricGraph, reps: u64, seed: u64) -> Result<StatReport> {
    let sampler = SoupSampler::new(g)?;
    let gff = GffSampler::new(g)?;
    let green = gff.green().clone();
    let soup: Vec<(Vec<f64>, Vec<i8>)> = map_reps(seed, "lejan-soup", reps, |rng, _| {
        let config = sampler.sample(rng);
        let times = sample_vertex_local_times(g, &config.visits(g), rng);
        let hits = sample_zero_hits(g, &config.crossings(g), &times, rng);
        let signs = lupu_signs(g, &times, &hits, rng);
        (times, signs)
    });
    let squares: Vec<Vec<f64>> = map_reps(seed, "lejan-gff", reps, |rng, _| {
        gff.sample(rng).phi.iter().map(|p| 0.5 * p * p).collect()
    });
    let interior: Vec<VertexId> = g.interior().collect();
    let mut report = StatReport::new("lejan", seed);
    report.param("reps", reps).param("vertices", interior.len() as u64);
    for &v in &interior {
        let a: Vec<f64> = soup.iter().map(|s| s.0[v.0]).collect();
        let b: Vec<f64> = squares.iter().map(|s| s[v.0]).collect();
        let (d, p) = ks_two_sample(&a, &b);
        report.p_value(&format!("ks local time vs half square at {}", g.name(v)), d, reps, p);
    }
    let mut pairs = Vec::new();
    for (i, &u) in interior.iter().enumerate() {
        for &w in &interior[i + 1..] {
            pairs.push((u, w));
        }
    }
    if pairs.is_empty() {
        pairs.extend(interior.iter().map(|&v| (v, v)));
    }
    for (u, w) in pairs {
        let prod: Vec<f64> = soup.iter().map(|s| s.0[u.0] * s.0[w.0]).collect();
        let (m, se) = mean_se(&prod);
        let target = 0.25 * (green[(u.0, u.0)] * green[(w.0, w.0)] + 2.0 * green[(u.0, w.0)].powi(2));
        report.within_se(&format!("E[L({})L({})]", g.name(u), g.name(w)), m, se, 3.0, target, reps);
    }
    for &v in &interior {
        let signed: Vec<f64> = soup.iter().map(|s| s.1[v.0] as f64 * (2.0 * s.0[v.0]).sqrt()).collect();
        let normal = Normal::new(0.0, green[(v.0, v.0)].sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
        let (d, p) = ks_one_sample(&signed, |x| normal.cdf(x));
        report.p_value(&format!("ks signed field at {}", g.name(v)), d, reps, p);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn single() -> MetricGraph {
        MetricGraph::from_edges(&["v"], "s", &[("v", "s", 1.0)]).unwrap()
    }

    fn path() -> MetricGraph {
        MetricGraph::from_edges(&["v", "w"], "s", &[("v", "w", 1.0), ("w", "s", 1.0)]).unwrap()
    }

    #[test]
    fn single_edge_variance() {
        let g = single();
        let s = GffSampler::new(&g).unwrap();
        let mut rng = stream(1, "gff", 0);
        let n = 50_000;
        let x: Vec<f64> = (0..n).map(|_| s.sample(&mut rng).phi[0]).collect();
        let normal = Normal::new(0.0, 2f64.sqrt()).unwrap();
        assert!(ks_one_sample(&x, |t| normal.cdf(t)).1 > 1e-3);
        assert_eq!(s.sample(&mut rng).phi[g.sink().0], 0.0);
    }

    #[test]
    fn path_covariance() {
        let g = path();
        let s = GffSampler::new(&g).unwrap();
        let mut rng = stream(2, "gff", 0);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| s.sample(&mut rng).phi).collect();
        for (u, w, target) in [(0, 0, 4.0), (0, 1, 2.0), (1, 1, 2.0)] {
            let prod: Vec<f64> = draws.iter().map(|p| p[u] * p[w]).collect();
            let (m, se) = mean_se(&prod);
            assert!((m - target).abs() < 3.0 * se, "{u}{w}: {m} vs {target}");
        }
    }

    #[test]
    fn signs_per_component() {
        let g = path();
        let mut rng = stream(3, "signs", 0);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            let s = lupu_signs(&g, &[1.0, 1.0, 0.0], &[false, false], &mut rng);
            assert_eq!(s[0], s[1]);
            assert_eq!(s[2], 0);
            let t = lupu_signs(&g, &[1.0, 1.0, 0.0], &[true, false], &mut rng);
            seen.insert((t[0], t[1]));
        }
        assert_eq!(seen.len(), 4);
        assert_eq!(lupu_signs(&g, &[0.0, 1.0, 0.0], &[false, false], &mut rng)[0], 0);
    }

    #[test]
    fn lejan_small() {
        let r = lejan_check(&path(), 20_000, 4).unwrap();
        assert!(r.pass, "{}", r.summary());
        assert_eq!(r.rows.len(), 5);
    }
}
