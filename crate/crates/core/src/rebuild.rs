//! Rebuilding loops from edge-level data: crossing ends are paired uniformly
//! at every vertex and the local time at a vertex is split between point
//! loops and the visits of crossing loops.

use std::collections::{BTreeMap, HashMap};

use crate::dist;
use crate::error::{invalid, Result};
use crate::graph::{EdgeId, MetricGraph, Step, VertexId};
use crate::loops::{enumerate_loops_oracle, sample_vertex_local_times, DiscreteLoop, SoupSampler};
use crate::report::StatReport;
use crate::rng::{map_reps, Rng};
use crate::stats::{chi_square_two_sample, mean_se};

/// Local-time interval `[lo, hi]` at `vertex` attached to one visit.
#[derive(Clone, Debug, PartialEq)]
pub struct Label {
    pub vertex: VertexId,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GluedLoop {
    pub walk: DiscreteLoop,
    pub labels: Vec<Label>,
}

/// Loop that stays at one vertex, with its share of the local time.
#[derive(Clone, Debug, PartialEq)]
pub struct PointLoop {
    pub vertex: VertexId,
    pub mass: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReconstructedLoops {
    pub loops: Vec<GluedLoop>,
    pub point_loops: Vec<PointLoop>,
}

/// Per-vertex randomness of the reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct GluingPlan {
    /// Pairs of indices into the list of crossing ends at the vertex.
    pub pairing: Vec<(usize, usize)>,
    /// Share of the local time carried by point loops.
    pub point_share: f64,
    /// Masses of the point loops, summing to `point_share`.
    pub partition: Vec<f64>,
    /// Sorted cut points splitting `[point_share, 1]` into one interval per visit.
    pub split_points: Vec<f64>,
}

/// Size-biased stick breaking for the Poisson-Dirichlet partition with
/// parameters `(0, theta)` of `[0, total]`, stopped once the remaining
/// mass drops below `1e-9 * total`.
pub fn poisson_dirichlet(theta: f64, total: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::new();
    let mut rest = total;
    while rest >= 1e-9 * total && total > 0.0 {
        let v = dist::beta(rng, 1.0, theta);
        out.push(rest * v);
        rest *= 1.0 - v;
    }
    out
}

pub fn gluing_plan(ends: usize, rng: &mut Rng) -> Result<GluingPlan> {
    if ends % 2 == 1 {
        return Err(invalid("odd number of crossing ends at a vertex"));
    }
    let k = ends / 2;
    let mut order: Vec<usize> = (0..ends).collect();
    dist::shuffle(rng, &mut order);
    let pairing = order.chunks(2).map(|c| (c[0], c[1])).collect();
    let point_share = if k == 0 { 1.0 } else { dist::beta(rng, 0.5, k as f64) };
    let partition = poisson_dirichlet(0.5, point_share, rng);
    let mut split_points: Vec<f64> =
        (1..k).map(|_| point_share + (1.0 - point_share) * dist::unit_open(rng)).collect();
    split_points.sort_by(|a, b| a.total_cmp(b));
    Ok(GluingPlan { pairing, point_share, partition, split_points })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct CrossingEnd {
    edge: usize,
    index: u32,
    at_b: bool,
}

/// Glues crossings into loops. `times` are the vertex local times used to
/// scale the label intervals.
pub fn glue(g: &MetricGraph, crossings: &[u32], times: &[f64], rng: &mut Rng) -> Result<ReconstructedLoops> {
    if crossings.len() != g.edge_count() || times.len() != g.vertex_count() {
        return Err(invalid("crossing or time vector has the wrong length"));
    }
    let mut ends: Vec<Vec<CrossingEnd>> = vec![Vec::new(); g.vertex_count()];
    for e in g.edge_ids() {
        let ed = g.edge(e);
        if crossings[e.0] > 0 && g.is_sink_edge(e) {
            return Err(invalid("loops cannot cross a sink edge"));
        }
        for i in 0..crossings[e.0] {
            ends[ed.a.0].push(CrossingEnd { edge: e.0, index: i, at_b: false });
            ends[ed.b.0].push(CrossingEnd { edge: e.0, index: i, at_b: true });
        }
    }
    let mut partner: HashMap<CrossingEnd, CrossingEnd> = HashMap::new();
    let mut visit_label: HashMap<CrossingEnd, Label> = HashMap::new();
    let mut out = ReconstructedLoops::default();
    for v in g.interior() {
        let list = &ends[v.0];
        let plan = gluing_plan(list.len(), rng)?;
        let local = times[v.0];
        for m in &plan.partition {
            out.point_loops.push(PointLoop { vertex: v, mass: m * local });
        }
        let mut cuts = vec![plan.point_share];
        cuts.extend(&plan.split_points);
        cuts.push(1.0);
        for (j, &(x, y)) in plan.pairing.iter().enumerate() {
            partner.insert(list[x], list[y]);
            partner.insert(list[y], list[x]);
            visit_label.insert(list[x], Label { vertex: v, lo: cuts[j] * local, hi: cuts[j + 1] * local });
        }
    }
    let mut used: HashMap<(usize, u32), bool> = HashMap::new();
    for e in g.edge_ids() {
        for i in 0..crossings[e.0] {
            if used.contains_key(&(e.0, i)) {
                continue;
            }
            let start = CrossingEnd { edge: e.0, index: i, at_b: false };
            let mut steps = Vec::new();
            let mut labels = Vec::new();
            let mut leave = start;
            loop {
                used.insert((leave.edge, leave.index), true);
                steps.push(Step { edge: EdgeId(leave.edge), forward: !leave.at_b });
                let arrive = CrossingEnd { at_b: !leave.at_b, ..leave };
                let next = partner[&arrive];
                let label = visit_label.get(&arrive).or_else(|| visit_label.get(&next)).expect("every pair is labelled");
                labels.push(label.clone());
                if next == start {
                    break;
                }
                leave = next;
            }
            out.loops.push(GluedLoop { walk: DiscreteLoop::new(g, steps)?, labels });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RoundTrip {
    pub reps: u64,
    /// Loops with at most this many steps get a mean-count row.
    pub short_loop_cap: usize,
}

impl Default for RoundTrip {
    fn default() -> Self {
        RoundTrip { reps: 100_000, short_loop_cap: 3 }
    }
}

fn histogram(values: impl Iterator<Item = usize>) -> Vec<u64> {
    let mut h = Vec::new();
    for v in values {
        if h.len() <= v {
            h.resize(v + 1, 0);
        }
        h[v] += 1;
    }
    h
}

/// Compares directly sampled loops with loops rebuilt from an independent
/// soup's crossing counts and local times.
pub fn roundtrip_check(g: &MetricGraph, opts: &RoundTrip, seed: u64) -> Result<StatReport> {
    let sampler = SoupSampler::new(g)?;
    let direct: Vec<Vec<DiscreteLoop>> = map_reps(seed, "roundtrip-direct", opts.reps, |rng, _| sampler.sample(rng).loops);
    let rebuilt = map_reps(seed, "roundtrip-glue", opts.reps, |rng, _| -> Result<Vec<DiscreteLoop>> {
        let config = sampler.sample(rng);
        let times = sample_vertex_local_times(g, &config.visits(g), rng);
        Ok(glue(g, &config.crossings(g), &times, rng)?.loops.into_iter().map(|l| l.walk).collect())
    });
    let rebuilt: Vec<Vec<DiscreteLoop>> = rebuilt.into_iter().collect::<Result<_>>()?;
    let mut report = StatReport::new("roundtrip", seed);
    report.param("reps", opts.reps);
    let counts_a = histogram(direct.iter().map(|c| c.len()));
    let counts_b = histogram(rebuilt.iter().map(|c| c.len()));
    let c = chi_square_two_sample(&counts_a, &counts_b, 10);
    report.p_value("loop count law", c.statistic, opts.reps, c.p_value);
    let len_a = histogram(direct.iter().flatten().map(|l| l.len()));
    let len_b = histogram(rebuilt.iter().flatten().map(|l| l.len()));
    let c = chi_square_two_sample(&len_a, &len_b, 10);
    report.p_value("loop length law", c.statistic, len_a.iter().sum::<u64>() + len_b.iter().sum::<u64>(), c.p_value);
    let mut types: BTreeMap<&DiscreteLoop, (u64, u64)> = BTreeMap::new();
    for l in direct.iter().flatten() {
        types.entry(l).or_default().0 += 1;
    }
    for l in rebuilt.iter().flatten() {
        types.entry(l).or_default().1 += 1;
    }
    let (ta, tb): (Vec<u64>, Vec<u64>) = types.values().copied().unzip();
    let c = chi_square_two_sample(&ta, &tb, 10);
    report.p_value("loop type law", c.statistic, ta.iter().sum::<u64>() + tb.iter().sum::<u64>(), c.p_value);
    report.param("loop_types", types.len() as u64);
    let oracle = enumerate_loops_oracle(g, opts.short_loop_cap)?;
    for (l, mass) in &oracle.loops {
        let per_soup: Vec<f64> = rebuilt.iter().map(|c| c.iter().filter(|x| *x == l).count() as f64).collect();
        let (m, se) = mean_se(&per_soup);
        let mut vs: Vec<&str> = l.vertices(g).iter().map(|v| g.name(*v)).collect();
        let first = l.vertices(g).iter().enumerate().min_by_key(|(_, v)| **v).map(|(i, _)| i).unwrap_or(0);
        vs.rotate_left(first);
        report.within_se(&format!("mean count of loop {}", vs.join(" ")), m, se, 3.0, *mass, opts.reps);
    }
    Ok(report)
}
