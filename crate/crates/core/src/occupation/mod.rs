//! Continuous occupation field on a metric graph given discrete data:
//! vertex local times and edge crossing counts.

pub mod besq;
pub mod clusters;

use crate::dist;
use crate::error::{invalid, Error, Result};
use crate::graph::MetricGraph;
use crate::report::StatReport;
use crate::rng::{map_reps, Rng};

pub use besq::{besq_bridge, uniform_grid, Route};
pub use clusters::{extract_clusters, vertex_components, Cluster};

/// What to impose on the zero set of an edge with no crossings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroRule {
    /// Draw the zero event with its conditional probability.
    Sample,
    /// Condition the field to vanish somewhere inside the edge.
    Hit,
    /// Condition the field to stay positive.
    Avoid,
}

/// Occupation field along one edge, observed on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub crossings: u32,
    pub zero_hit: bool,
    /// Grid intervals holding the first and last zero, when the field hits zero.
    pub zero_span: Option<(usize, usize)>,
}

/// Probability that the field stays positive along an edge of length `rho`
/// with end values `a`, `b` and no crossings.
pub fn zero_avoid_probability(a: f64, b: f64, rho: f64) -> f64 {
    -(-(a * b).sqrt() / rho).exp_m1()
}

/// Draws whether the field vanishes inside the edge.
pub fn edge_zero_hit(a: f64, b: f64, rho: f64, crossings: u32, rng: &mut Rng) -> bool {
    crossings == 0 && !dist::bernoulli(rng, zero_avoid_probability(a, b, rho))
}

struct Decomposition {
    values: Vec<f64>,
    stays_positive: f64,
}

/// Field given the end values and crossings, written as two absorbed
/// BESQ(0) pieces from the ends plus an independent BESQ(1 + 2n) bridge
/// from 0 to 0. For `n = 0` also returns the conditional probability that
/// the sum has no zero given the sampled values.
fn decomposition(rho: f64, a: f64, b: f64, n: u32, grid: &[f64], rng: &mut Rng) -> Decomposition {
    let tau_a = if a > 0.0 { besq::absorption_time(a, rho, rng) } else { 0.0 };
    let tau_b = if b > 0.0 { besq::absorption_time(b, rho, rng) } else { 0.0 };
    let xa = if a > 0.0 { besq::first_passage(a, tau_a, grid, rng) } else { vec![0.0; grid.len()] };
    let xb = if b > 0.0 {
        let rev: Vec<f64> = grid.iter().rev().map(|s| rho - s).collect();
        let mut v = besq::first_passage(b, tau_b, &rev, rng);
        v.reverse();
        v
    } else {
        vec![0.0; grid.len()]
    };
    let mut values: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x + y).collect();
    if n > 0 {
        let dim = 1 + 2 * n as usize;
        for _ in 0..dim {
            for (v, w) in values.iter_mut().zip(besq::brownian_bridge(grid, 0.0, 0.0, rho, rng)) {
                *v += w * w;
            }
        }
        return Decomposition { values, stays_positive: 1.0 };
    }
    let (lo, hi) = (tau_a, rho - tau_b);
    let mut points: Vec<f64> = grid.to_vec();
    points.push(lo);
    points.push(hi);
    points.sort_by(|x, y| x.total_cmp(y));
    points.dedup();
    let w = besq::brownian_bridge(&points, 0.0, 0.0, rho, rng);
    let mut gi = 0;
    for (p, wv) in points.iter().zip(&w) {
        if gi < grid.len() && *p == grid[gi] {
            values[gi] += wv * wv;
            gi += 1;
        }
    }
    let mut stays_positive = 1.0;
    if lo < hi {
        for i in 0..points.len() - 1 {
            let (s0, s1) = (points[i], points[i + 1]);
            if s0 < lo || s1 > hi {
                continue;
            }
            let prod = w[i] * w[i + 1];
            if prod <= 0.0 {
                stays_positive = 0.0;
                break;
            }
            stays_positive *= -(-2.0 * prod / (s1 - s0)).exp_m1();
        }
    }
    Decomposition { values, stays_positive }
}

/// Field conditioned to vanish: the square of a Brownian bridge from
/// `sqrt(a)` to `-sqrt(b)`. Also locates the first and last zero intervals.
fn reflected(rho: f64, a: f64, b: f64, grid: &[f64], rng: &mut Rng) -> (Vec<f64>, (usize, usize)) {
    let w = besq::brownian_bridge(grid, a.sqrt(), -b.sqrt(), rho, rng);
    let values = w.iter().map(|x| x * x).collect();
    let mut first = None;
    let mut last = 0;
    for i in 0..grid.len() - 1 {
        let prod = w[i] * w[i + 1];
        let has_zero = prod <= 0.0 || dist::bernoulli(rng, (-2.0 * prod / (grid[i + 1] - grid[i])).exp());
        if has_zero {
            first.get_or_insert(i);
            last = i;
        }
    }
    (values, (first.unwrap_or(0), last))
}

/// Samples the occupation field along an edge of length `rho` with end
/// values `a`, `b` and `crossings` crossings.
pub fn sample_edge_field(
    rho: f64,
    a: f64,
    b: f64,
    crossings: u32,
    rule: ZeroRule,
    grid: &[f64],
    rng: &mut Rng,
) -> Result<EdgeField> {
    besq::check_grid(grid, rho)?;
    if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0) {
        return Err(invalid("edge end values must be finite and non-negative"));
    }
    if crossings > 0 {
        if rule == ZeroRule::Hit {
            return Err(invalid("an edge with crossings cannot vanish"));
        }
        let d = decomposition(rho, a, b, crossings, grid, rng);
        return Ok(EdgeField { grid: grid.to_vec(), values: d.values, crossings, zero_hit: false, zero_span: None });
    }
    let hit = match rule {
        ZeroRule::Hit => true,
        ZeroRule::Avoid => false,
        ZeroRule::Sample => edge_zero_hit(a, b, rho, 0, rng),
    };
    if hit {
        let (values, span) = reflected(rho, a, b, grid, rng);
        return Ok(EdgeField { grid: grid.to_vec(), values, crossings: 0, zero_hit: true, zero_span: Some(span) });
    }
    if a == 0.0 || b == 0.0 {
        if a == 0.0 && b == 0.0 {
            return Err(invalid("a field with both ends at zero cannot stay positive"));
        }
        let values = besq_bridge(3.0, a, b, rho, grid, Route::Radial, rng)?;
        return Ok(EdgeField { grid: grid.to_vec(), values, crossings: 0, zero_hit: false, zero_span: None });
    }
    let q = zero_avoid_probability(a, b, rho);
    if q < 1e-4 {
        let values = besq_bridge(3.0, a, b, rho, grid, Route::Radial, rng)?;
        return Ok(EdgeField { grid: grid.to_vec(), values, crossings: 0, zero_hit: false, zero_span: None });
    }
    let limit = (1000.0 / q).ceil() as u64 + 1000;
    for _ in 0..limit {
        let d = decomposition(rho, a, b, 0, grid, rng);
        if d.stays_positive > 0.0 && dist::bernoulli(rng, d.stays_positive) {
            return Ok(EdgeField { grid: grid.to_vec(), values: d.values, crossings: 0, zero_hit: false, zero_span: None });
        }
    }
    Err(Error::Rejection { what: "positive edge field".into(), attempts: limit })
}

/// Field along an edge drawn directly from the decomposition, with the zero
/// event drawn from its conditional probability given the path.
pub fn sample_edge_field_unconditioned(
    rho: f64,
    a: f64,
    b: f64,
    crossings: u32,
    grid: &[f64],
    rng: &mut Rng,
) -> Result<EdgeField> {
    besq::check_grid(grid, rho)?;
    let d = decomposition(rho, a, b, crossings, grid, rng);
    let zero_hit = crossings == 0 && !dist::bernoulli(rng, d.stays_positive);
    Ok(EdgeField { grid: grid.to_vec(), values: d.values, crossings, zero_hit, zero_span: None })
}

/// Occupation field of a whole graph.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationField {
    pub vertex_times: Vec<f64>,
    pub edges: Vec<EdgeField>,
}

impl OccupationField {
    pub fn zero_hits(&self) -> Vec<bool> {
        self.edges.iter().map(|e| e.zero_hit).collect()
    }

    /// Rows `edge,position,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge,position,value\n");
        for (i, e) in self.edges.iter().enumerate() {
            for (s, v) in e.grid.iter().zip(&e.values) {
                out.push_str(&format!("{i},{s:.9},{v:.9}\n"));
            }
        }
        out
    }
}

fn end_values(g: &MetricGraph, times: &[f64], e: crate::graph::EdgeId) -> (f64, f64) {
    let edge = g.edge(e);
    let t = |v: crate::graph::VertexId| if v == g.sink() { 0.0 } else { times[v.0] };
    (t(edge.a), t(edge.b))
}

/// Zero events of all edges given crossings and vertex local times.
pub fn sample_zero_hits(g: &MetricGraph, crossings: &[u32], times: &[f64], rng: &mut Rng) -> Vec<bool> {
    g.edge_ids()
        .map(|e| {
            let (a, b) = end_values(g, times, e);
            edge_zero_hit(a, b, g.length(e), crossings[e.0], rng)
        })
        .collect()
}

/// Full occupation field given crossings and vertex local times, with
/// `points` grid points per edge.
pub fn sample_occupation(
    g: &MetricGraph,
    crossings: &[u32],
    times: &[f64],
    points: usize,
    rng: &mut Rng,
) -> Result<OccupationField> {
    if crossings.len() != g.edge_count() || times.len() != g.vertex_count() {
        return Err(invalid("crossing or time vector has the wrong length"));
    }
    let mut edges = Vec::with_capacity(g.edge_count());
    for e in g.edge_ids() {
        let (a, b) = end_values(g, times, e);
        let rho = g.length(e);
        let grid = uniform_grid(rho, points);
        edges.push(sample_edge_field(rho, a, b, crossings[e.0], ZeroRule::Sample, &grid, rng)?);
    }
    let mut vertex_times = times.to_vec();
    vertex_times[g.sink().0] = 0.0;
    Ok(OccupationField { vertex_times, edges })
}

/// Frequency with which the field along a single uncrossed edge, drawn from
/// the sum of two absorbed pieces and an independent bridge, has no zero,
/// compared with the closed form for each `(a, b, rho)`.
pub fn zero_hit_check(cases: &[(f64, f64, f64)], reps: u64, points: usize, seed: u64) -> Result<StatReport> {
    let mut report = StatReport::new("zero-hit", seed);
    report.param("reps", reps).param("grid", points as u64);
    for (i, &(a, b, rho)) in cases.iter().enumerate() {
        let grid = uniform_grid(rho, points);
        let hits = map_reps(seed, &format!("zero-hit-{i}"), reps, |rng, _| {
            sample_edge_field_unconditioned(rho, a, b, 0, &grid, rng).map(|f| f.zero_hit)
        });
        let positive = hits.into_iter().collect::<Result<Vec<bool>>>()?.iter().filter(|h| !**h).count();
        let f = positive as f64 / reps as f64;
        let se = (f * (1.0 - f) / reps as f64).sqrt();
        let q = zero_avoid_probability(a, b, rho);
        report.within_se(&format!("no-zero frequency a={a} b={b} rho={rho}"), f, se, 3.0, q, reps);
    }
    Ok(report)
}
