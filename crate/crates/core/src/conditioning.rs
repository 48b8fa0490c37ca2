//! The soup conditioned to have zero local time at a set of star vertices
//! while every edge at those vertices keeps a positive field. Three samplers
//! are provided: shrinking caps with plain rejection, exact limiting weights
//! on the discrete configuration with windows on the boundary local times,
//! and the boundary description with Poisson bridge counts.

use std::collections::{BTreeMap, BTreeSet};

use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::currents::parity_uniform;
use crate::dist;
use crate::error::{invalid, Error, Result};
use crate::graph::{star_extend, EdgeId, MetricGraph, StarGraph, Step, Subgraph, VertexId};
use crate::harmonic::{exit_kernel, step_probability};
use crate::loops::{DiscreteLoop, LoopConfig, SoupSampler};
use crate::occupation::clusters::UnionFind;
use crate::occupation::{besq_bridge, edge_zero_hit, sample_edge_field, Route, ZeroRule};
use crate::report::StatReport;
use crate::rng::{map_reps, Rng};
use crate::stats::{dispersion_ratio, ks_one_sample, mean_se, total_variation};

/// Star vertices, the vertices next to them and the edges touching them
/// (sink edges excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct StarSets {
    pub star: BTreeSet<VertexId>,
    pub boundary: BTreeSet<VertexId>,
    pub edges: BTreeSet<EdgeId>,
}

impl StarSets {
    pub fn new(g: &MetricGraph, star: &BTreeSet<VertexId>) -> Result<Self> {
        if star.contains(&g.sink()) {
            return Err(invalid("the sink cannot be a star vertex"));
        }
        if let Some(v) = star.iter().find(|v| v.0 >= g.vertex_count()) {
            return Err(Error::UnknownVertex(format!("#{}", v.0)));
        }
        let edges = g.edges_adjacent(star);
        let mut boundary = BTreeSet::new();
        for e in &edges {
            let ed = g.edge(*e);
            for v in [ed.a, ed.b] {
                if !star.contains(&v) {
                    boundary.insert(v);
                }
            }
        }
        Ok(StarSets { star: star.clone(), boundary, edges })
    }

    /// Directed ends of star-adjacent edges rooted at `v`.
    pub fn degree(&self, g: &MetricGraph, v: VertexId) -> usize {
        g.steps_from(v).iter().filter(|s| self.edges.contains(&s.edge)).count()
    }

    /// Directed ends of uncrossed star-adjacent edges rooted at `v`.
    pub fn uncrossed_degree(&self, g: &MetricGraph, crossings: &[u32], v: VertexId) -> usize {
        g.steps_from(v).iter().filter(|s| self.edges.contains(&s.edge) && crossings[s.edge.0] == 0).count()
    }

    /// Whether the star vertices and their neighbours form one component
    /// through the star-adjacent edges.
    pub fn is_connected(&self, g: &MetricGraph) -> bool {
        let mut uf = UnionFind::new(g.vertex_count());
        for e in &self.edges {
            let ed = g.edge(*e);
            uf.union(ed.a.0, ed.b.0);
        }
        let mut roots = self.star.iter().chain(&self.boundary).map(|v| uf.find(v.0));
        match roots.next() {
            Some(r) => roots.all(|x| x == r),
            None => true,
        }
    }

    fn crossed_twice(&self, crossings: &[u32]) -> bool {
        self.edges.iter().any(|e| crossings[e.0] >= 2)
    }
}

/// Caps on the local times at the star vertices for the shrinking-window
/// conditioning, together with the requirement that the field stays
/// positive along every star-adjacent edge.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionWindow {
    pub caps: BTreeMap<VertexId, f64>,
    pub positive_edges: bool,
}

impl ConditionWindow {
    pub fn new(caps: BTreeMap<VertexId, f64>) -> Result<Self> {
        if caps.values().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(invalid("caps must be positive"));
        }
        Ok(ConditionWindow { caps, positive_edges: true })
    }

    pub fn uniform(star: &BTreeSet<VertexId>, cap: f64) -> Result<Self> {
        Self::new(star.iter().map(|v| (*v, cap)).collect())
    }

    pub fn star(&self) -> BTreeSet<VertexId> {
        self.caps.keys().copied().collect()
    }
}

/// One draw of the conditioned soup.
#[derive(Clone, Debug, PartialEq)]
pub struct NSample {
    /// Discrete loops, when the sampler produces whole loops.
    pub config: Option<LoopConfig>,
    pub crossings: Vec<u32>,
    pub times: Vec<f64>,
    /// Excursions away from the star-adjacent edges joining two distinct
    /// boundary vertices, keyed by the ordered pair of vertex ids.
    pub pair_counts: BTreeMap<(VertexId, VertexId), u32>,
    /// Fields along the star-adjacent edges on the requested grid.
    pub edge_fields: BTreeMap<EdgeId, Vec<f64>>,
    pub attempts: u64,
}

fn pair_key(u: VertexId, w: VertexId) -> (VertexId, VertexId) {
    (u.min(w), u.max(w))
}

/// Counts, per unordered pair of distinct vertices of `boundary`, the loop
/// segments joining them between consecutive visits to `boundary` that use no
/// edge of `inside`.
pub fn boundary_pair_counts(
    g: &MetricGraph,
    loops: &[DiscreteLoop],
    inside: &BTreeSet<EdgeId>,
    boundary: &BTreeSet<VertexId>,
) -> BTreeMap<(VertexId, VertexId), u32> {
    let mut out = BTreeMap::new();
    let list: Vec<VertexId> = boundary.iter().copied().collect();
    for (i, &u) in list.iter().enumerate() {
        for &w in &list[i + 1..] {
            out.insert(pair_key(u, w), 0);
        }
    }
    for l in loops {
        let vs = l.vertices(g);
        let steps = l.steps();
        let n = steps.len();
        let marks: Vec<usize> = (0..n).filter(|&i| boundary.contains(&vs[i])).collect();
        if marks.len() < 2 {
            continue;
        }
        for (j, &i) in marks.iter().enumerate() {
            let next = marks[(j + 1) % marks.len()];
            if vs[i] == vs[next] {
                continue;
            }
            let mut t = i;
            let mut clean = true;
            loop {
                if inside.contains(&steps[t].edge) {
                    clean = false;
                    break;
                }
                t = (t + 1) % n;
                if t == next {
                    break;
                }
            }
            if clean {
                *out.entry(pair_key(vs[i], vs[next])).or_default() += 1;
            }
        }
    }
    out
}

/// Mass, under the excursion measure at `v`, of excursions that avoid the
/// edges of `inside` and first hit `boundary`, the sink or `v` itself at
/// `w`. Keys are ordered pairs `(v, w)` with `v <= w`; the diagonal holds the
/// mass of excursions returning to `v`.
pub fn boundary_kernel(
    g: &MetricGraph,
    inside: &BTreeSet<EdgeId>,
    boundary: &BTreeSet<VertexId>,
) -> Result<BTreeMap<(VertexId, VertexId), f64>> {
    let (kernel, _) = stopped_kernel(g, inside, boundary)?;
    let mut out = BTreeMap::new();
    for &v in boundary {
        for &w in boundary.range(v..) {
            let mass: f64 = g
                .steps_from(v)
                .iter()
                .filter(|s| !inside.contains(&s.edge))
                .map(|s| 0.5 / g.length(s.edge) * kernel[(g.head(*s).0, w.0)])
                .sum();
            out.insert((v, w), mass);
        }
    }
    Ok(out)
}

fn stopped_kernel(
    g: &MetricGraph,
    inside: &BTreeSet<EdgeId>,
    boundary: &BTreeSet<VertexId>,
) -> Result<(nalgebra::DMatrix<f64>, Vec<bool>)> {
    let mut stop = vec![false; g.vertex_count()];
    stop[g.sink().0] = true;
    for v in boundary {
        stop[v.0] = true;
    }
    for e in inside {
        let ed = g.edge(*e);
        stop[ed.a.0] = true;
        stop[ed.b.0] = true;
    }
    let mut avoid = vec![false; g.edge_count()];
    for e in inside {
        avoid[e.0] = true;
    }
    Ok((exit_kernel(g, &stop, &avoid)?, stop))
}

fn gamma_mass(shape: f64, x0: f64, x1: f64) -> f64 {
    let lower = |x: f64| if x <= 0.0 { 0.0 } else { gamma_lr(shape, x) };
    if x0 > shape {
        gamma_ur(shape, x0) - gamma_ur(shape, x1)
    } else {
        lower(x1) - lower(x0)
    }
}

/// `E[Y^(d/2); lo <= Y <= hi]` for `Y ~ gamma(k + 1/2, rate)`.
pub fn window_moment(k: u32, d: usize, rate: f64, lo: f64, hi: f64) -> f64 {
    let s = k as f64 + 0.5;
    let t = s + d as f64 / 2.0;
    let factor = (ln_gamma(t) - ln_gamma(s) - d as f64 / 2.0 * rate.ln()).exp();
    factor * gamma_mass(t, rate * lo, rate * hi).max(0.0)
}

/// Largest value of [`window_moment`] over `k`; the moment decreases in `k`
/// once `k + 1/2 >= rate * hi`.
fn max_window_moment(d: usize, rate: f64, lo: f64, hi: f64) -> f64 {
    let last = (rate * hi).ceil() as u32 + 1;
    (0..=last).map(|k| window_moment(k, d, rate, lo, hi)).fold(0.0, f64::max)
}

/// Draws `gamma(shape, rate)` conditioned on `[lo, hi]`.
fn gamma_in_window(shape: f64, rate: f64, lo: f64, hi: f64, rng: &mut Rng) -> Result<f64> {
    if lo > 0.0 {
        let ln_f = |y: f64| (shape - 1.0) * y.ln() - rate * y;
        let mode = ((shape - 1.0) / rate).clamp(lo, hi);
        let top = ln_f(mode).max(ln_f(lo)).max(ln_f(hi));
        for _ in 0..100_000 {
            let y = lo + (hi - lo) * dist::unit_open(rng);
            if dist::unit_open(rng).ln() <= ln_f(y) - top {
                return Ok(y);
            }
        }
        return Err(Error::Rejection { what: "windowed gamma".into(), attempts: 100_000 });
    }
    let law = Gamma::new(shape, rate).map_err(|e| Error::Numerical(e.to_string()))?;
    let (a, b) = (law.cdf(lo), law.cdf(hi));
    let u = a + (b - a) * dist::unit_open(rng);
    Ok(law.inverse_cdf(u).clamp(lo, hi))
}

fn window_list(windows: &BTreeMap<VertexId, (f64, f64)>) -> Result<()> {
    for (lo, hi) in windows.values() {
        if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && hi > lo) {
            return Err(invalid("windows must satisfy 0 <= lo < hi"));
        }
    }
    Ok(())
}

/// Windows `[x - eps, x + eps]` (clipped at 0) around the given centres.
pub fn windows_around(centres: &BTreeMap<VertexId, f64>, eps: f64) -> BTreeMap<VertexId, (f64, f64)> {
    centres.iter().map(|(v, x)| (*v, ((x - eps).max(0.0), x + eps))).collect()
}

/// Loop soup conditioned on the local times of some vertices lying in
/// windows. A configuration is kept with probability proportional to the
/// window mass of its gamma local times; the windowed times are then drawn
/// from the truncated laws.
pub struct WindowedSoup {
    sampler: SoupSampler,
    windows: BTreeMap<VertexId, (f64, f64)>,
    ln_bound: f64,
}

impl WindowedSoup {
    pub fn new(g: &MetricGraph, windows: BTreeMap<VertexId, (f64, f64)>) -> Result<Self> {
        window_list(&windows)?;
        if windows.contains_key(&g.sink()) {
            return Err(invalid("the sink has no local time window"));
        }
        let ln_bound = windows
            .iter()
            .map(|(v, (lo, hi))| max_window_moment(0, g.rate(*v) / 2.0, *lo, *hi).ln())
            .sum();
        Ok(WindowedSoup { sampler: SoupSampler::new(g)?, windows, ln_bound })
    }

    /// Returns the loops, the vertex local times and the attempts used.
    pub fn sample(&self, g: &MetricGraph, budget: u64, rng: &mut Rng) -> Result<(LoopConfig, Vec<f64>, u64)> {
        for attempt in 1..=budget {
            let config = self.sampler.sample(rng);
            let visits = config.visits(g);
            let ln_w: f64 = self
                .windows
                .iter()
                .map(|(v, (lo, hi))| window_moment(visits[v.0], 0, g.rate(*v) / 2.0, *lo, *hi).ln())
                .sum();
            if dist::unit_open(rng).ln() > ln_w - self.ln_bound {
                continue;
            }
            let mut times = vec![0.0; g.vertex_count()];
            for v in g.interior() {
                let shape = visits[v.0] as f64 + 0.5;
                times[v.0] = match self.windows.get(&v) {
                    Some(&(lo, hi)) => gamma_in_window(shape, g.rate(v) / 2.0, lo, hi, rng)?,
                    None => dist::gamma(rng, shape, 2.0 / g.rate(v)),
                };
            }
            return Ok((config, times, attempt));
        }
        Err(Error::Rejection { what: "windowed loop soup".into(), attempts: budget })
    }
}

fn star_edge_fields(
    g: &MetricGraph,
    sets: &StarSets,
    times: &[f64],
    grid_points: usize,
    rng: &mut Rng,
) -> Result<BTreeMap<EdgeId, Vec<f64>>> {
    let mut out = BTreeMap::new();
    if grid_points < 2 {
        return Ok(out);
    }
    for &e in &sets.edges {
        let ed = g.edge(e);
        let rho = g.length(e);
        let grid = crate::occupation::uniform_grid(rho, grid_points);
        let values = besq_bridge(3.0, times[ed.a.0], times[ed.b.0], rho, &grid, Route::Radial, rng)?;
        out.insert(e, values);
    }
    Ok(out)
}

/// Plain rejection sampler of the soup conditioned on the local time at each
/// star vertex lying below its cap and, when requested, on the field staying
/// positive along every star-adjacent edge.
pub struct CapSampler {
    sampler: SoupSampler,
    sets: StarSets,
    window: ConditionWindow,
}

impl CapSampler {
    pub fn new(g: &MetricGraph, window: ConditionWindow) -> Result<Self> {
        let sets = StarSets::new(g, &window.star())?;
        Ok(CapSampler { sampler: SoupSampler::new(g)?, sets, window })
    }

    pub fn sets(&self) -> &StarSets {
        &self.sets
    }

    pub fn sample(&self, g: &MetricGraph, grid_points: usize, budget: u64, rng: &mut Rng) -> Result<NSample> {
        'attempt: for attempt in 1..=budget {
            let config = self.sampler.sample(rng);
            let visits = config.visits(g);
            let mut times = vec![0.0; g.vertex_count()];
            for (v, cap) in &self.window.caps {
                let t = dist::gamma(rng, visits[v.0] as f64 + 0.5, 2.0 / g.rate(*v));
                if t > *cap {
                    continue 'attempt;
                }
                times[v.0] = t;
            }
            for v in g.interior() {
                if !self.window.caps.contains_key(&v) {
                    times[v.0] = dist::gamma(rng, visits[v.0] as f64 + 0.5, 2.0 / g.rate(v));
                }
            }
            let crossings = config.crossings(g);
            if self.window.positive_edges {
                for &e in &self.sets.edges {
                    let ed = g.edge(e);
                    if edge_zero_hit(times[ed.a.0], times[ed.b.0], g.length(e), crossings[e.0], rng) {
                        continue 'attempt;
                    }
                }
            }
            let mut edge_fields = BTreeMap::new();
            if grid_points >= 2 {
                for &e in &self.sets.edges {
                    let ed = g.edge(e);
                    let rho = g.length(e);
                    let grid = crate::occupation::uniform_grid(rho, grid_points);
                    let rule = if self.window.positive_edges { ZeroRule::Avoid } else { ZeroRule::Sample };
                    let f = sample_edge_field(rho, times[ed.a.0], times[ed.b.0], crossings[e.0], rule, &grid, rng)?;
                    edge_fields.insert(e, f.values);
                }
            }
            let pair_counts = boundary_pair_counts(g, &config.loops, &self.sets.edges, &self.sets.boundary);
            return Ok(NSample { config: Some(config), crossings, times, pair_counts, edge_fields, attempts: attempt });
        }
        Err(Error::Rejection { what: "capped star local times".into(), attempts: budget })
    }
}

/// One draw under the shrinking-cap conditioning.
pub fn sample_n_rejection(g: &MetricGraph, window: &ConditionWindow, budget: u64, rng: &mut Rng) -> Result<NSample> {
    CapSampler::new(g, window.clone())?.sample(g, 0, budget, rng)
}

/// Exact sampler of the limiting conditioned measure with the local times at
/// the boundary vertices restricted to windows. Soup configurations with no
/// star-adjacent edge crossed twice are kept with probability proportional
/// to their limiting weight, which is bounded once the boundary local times
/// are windowed.
pub struct NWindowSampler {
    sampler: SoupSampler,
    sets: StarSets,
    windows: BTreeMap<VertexId, (f64, f64)>,
    ln_bound: f64,
}

impl NWindowSampler {
    pub fn new(g: &MetricGraph, star: &BTreeSet<VertexId>, windows: BTreeMap<VertexId, (f64, f64)>) -> Result<Self> {
        let sets = StarSets::new(g, star)?;
        window_list(&windows)?;
        if windows.keys().copied().collect::<BTreeSet<_>>() != sets.boundary {
            return Err(invalid("every boundary vertex, and only those, needs a window"));
        }
        let mut ln_bound = 0.0;
        for &v in &sets.star {
            let half = g.rate(v) / 2.0;
            let top = sets.degree(g, v) / 2;
            ln_bound += (0..=top)
                .map(|k| k as f64 * half.ln() - ln_gamma(k as f64 + 0.5))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        for &e in &sets.edges {
            ln_bound += (-g.length(e).ln()).max(0.0);
        }
        for (&v, &(lo, hi)) in &windows {
            ln_bound += (0..=sets.degree(g, v))
                .map(|d| max_window_moment(d, g.rate(v) / 2.0, lo, hi).ln())
                .fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(NWindowSampler { sampler: SoupSampler::new(g)?, sets, windows, ln_bound })
    }

    pub fn sets(&self) -> &StarSets {
        &self.sets
    }

    /// Log of the limiting weight of a configuration, or `None` when a
    /// star-adjacent edge is crossed more than once.
    fn ln_weight(&self, g: &MetricGraph, crossings: &[u32], visits: &[u32]) -> Option<f64> {
        if self.sets.crossed_twice(crossings) {
            return None;
        }
        let mut w = 0.0;
        for &v in &self.sets.star {
            let k = visits[v.0] as f64;
            w += k * (g.rate(v) / 2.0).ln() - ln_gamma(k + 0.5);
        }
        for &e in &self.sets.edges {
            if crossings[e.0] == 0 {
                w -= g.length(e).ln();
            }
        }
        for (&v, &(lo, hi)) in &self.windows {
            let d = self.sets.uncrossed_degree(g, crossings, v);
            w += window_moment(visits[v.0], d, g.rate(v) / 2.0, lo, hi).ln();
        }
        Some(w)
    }

    pub fn sample(&self, g: &MetricGraph, grid_points: usize, budget: u64, rng: &mut Rng) -> Result<NSample> {
        for attempt in 1..=budget {
            let config = self.sampler.sample(rng);
            let crossings = config.crossings(g);
            let visits = config.visits(g);
            let Some(ln_w) = self.ln_weight(g, &crossings, &visits) else { continue };
            if ln_w > self.ln_bound + 1e-9 {
                return Err(Error::Numerical("limiting weight exceeds its bound".into()));
            }
            if dist::unit_open(rng).ln() > ln_w - self.ln_bound {
                continue;
            }
            let mut times = vec![0.0; g.vertex_count()];
            for v in g.interior() {
                if self.sets.star.contains(&v) {
                    continue;
                }
                let k = visits[v.0] as f64;
                times[v.0] = match self.windows.get(&v) {
                    Some(&(lo, hi)) => {
                        let d = self.sets.uncrossed_degree(g, &crossings, v) as f64;
                        gamma_in_window(k + 0.5 + d / 2.0, g.rate(v) / 2.0, lo, hi, rng)?
                    }
                    None => dist::gamma(rng, k + 0.5, 2.0 / g.rate(v)),
                };
            }
            let edge_fields = star_edge_fields(g, &self.sets, &times, grid_points, rng)?;
            let pair_counts = boundary_pair_counts(g, &config.loops, &self.sets.edges, &self.sets.boundary);
            return Ok(NSample { config: Some(config), crossings, times, pair_counts, edge_fields, attempts: attempt });
        }
        Err(Error::Rejection { what: "limiting weight on windowed boundary times".into(), attempts: budget })
    }
}

/// Sampler of the limiting conditioned measure at fixed boundary local times
/// through its boundary description: independent Poisson counts of bridges
/// between boundary vertices, crossings of the star-adjacent edges uniform
/// among those with matching parities, returning excursions at each boundary
/// vertex and an independent soup of loops avoiding the boundary.
pub struct NDirectSampler {
    sets: StarSets,
    kernel: nalgebra::DMatrix<f64>,
    stop: Vec<bool>,
    pairs: BTreeMap<(VertexId, VertexId), f64>,
    outside: Option<SoupSampler>,
}

impl NDirectSampler {
    pub fn new(g: &MetricGraph, star: &BTreeSet<VertexId>) -> Result<Self> {
        let sets = StarSets::new(g, star)?;
        if !sets.is_connected(g) {
            return Err(invalid("star vertices must be joined through the star-adjacent edges"));
        }
        let (kernel, stop) = stopped_kernel(g, &sets.edges, &sets.boundary)?;
        let pairs = boundary_kernel(g, &sets.edges, &sets.boundary)?;
        let order: Vec<VertexId> = g.vertices().filter(|v| !stop[v.0]).collect();
        let killed: Vec<VertexId> = g.vertices().filter(|v| stop[v.0] && *v != g.sink()).collect();
        let outside = if order.is_empty() { None } else { Some(SoupSampler::with_order(g, &order, &killed)?) };
        Ok(NDirectSampler { sets, kernel, stop, pairs, outside })
    }

    pub fn sets(&self) -> &StarSets {
        &self.sets
    }

    /// Excursion masses between boundary vertices (diagonal: returning).
    pub fn kernel(&self) -> &BTreeMap<(VertexId, VertexId), f64> {
        &self.pairs
    }

    /// Mean number of bridges between `v` and `w` at the given local times.
    pub fn bridge_mean(&self, v: VertexId, w: VertexId, xv: f64, xw: f64) -> f64 {
        2.0 * self.pairs.get(&pair_key(v, w)).copied().unwrap_or(0.0) * (xv * xw).sqrt()
    }

    /// Walk from `from` conditioned to stop at `to`, avoiding star-adjacent edges.
    fn bridge(&self, g: &MetricGraph, from: VertexId, to: VertexId, rng: &mut Rng) -> Result<Vec<Step>> {
        let h = |u: VertexId| self.kernel[(u.0, to.0)];
        let mut steps = Vec::new();
        let mut at = from;
        loop {
            let choices: Vec<(Step, f64)> = g
                .steps_from(at)
                .iter()
                .filter(|s| !self.sets.edges.contains(&s.edge))
                .map(|s| (*s, step_probability(g, *s) * h(g.head(*s))))
                .filter(|(_, w)| *w > 0.0)
                .collect();
            let total: f64 = choices.iter().map(|c| c.1).sum();
            if choices.is_empty() || total <= 0.0 {
                return Err(Error::Numerical("bridge target is unreachable".into()));
            }
            let mut u = dist::unit_open(rng) * total;
            let mut pick = choices[choices.len() - 1].0;
            for (s, w) in &choices {
                if u < *w {
                    pick = *s;
                    break;
                }
                u -= w;
            }
            steps.push(pick);
            at = g.head(pick);
            if self.stop[at.0] {
                return Ok(steps);
            }
            if steps.len() > 10_000_000 {
                return Err(Error::Numerical("bridge walk does not terminate".into()));
            }
        }
    }

    pub fn sample(&self, g: &MetricGraph, boundary_times: &BTreeMap<VertexId, f64>, grid_points: usize, rng: &mut Rng) -> Result<NSample> {
        if boundary_times.keys().copied().collect::<BTreeSet<_>>() != self.sets.boundary {
            return Err(invalid("every boundary vertex, and only those, needs a local time"));
        }
        if boundary_times.values().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(invalid("boundary local times must be non-negative"));
        }
        let mut crossings = vec![0u32; g.edge_count()];
        let mut visits = vec![0u32; g.vertex_count()];
        let walk = |steps: &[Step], crossings: &mut [u32], visits: &mut [u32]| {
            for s in steps {
                crossings[s.edge.0] += 1;
                visits[g.head(*s).0] += 1;
            }
        };
        let mut pair_counts = BTreeMap::new();
        let mut odd = BTreeSet::new();
        for (&(v, w), &mass) in &self.pairs {
            if v == w {
                continue;
            }
            let mean = 2.0 * mass * (boundary_times[&v] * boundary_times[&w]).sqrt();
            let n = dist::poisson(rng, mean) as u32;
            pair_counts.insert((v, w), n);
            if n % 2 == 1 {
                for x in [v, w] {
                    if !odd.remove(&x) {
                        odd.insert(x);
                    }
                }
            }
            for _ in 0..n {
                let steps = self.bridge(g, v, w, rng)?;
                walk(&steps, &mut crossings, &mut visits);
            }
        }
        for &v in &self.sets.boundary {
            let mass = self.pairs[&(v, v)];
            let n = dist::poisson(rng, mass * boundary_times[&v]);
            for _ in 0..n {
                let steps = self.bridge(g, v, v, rng)?;
                walk(&steps, &mut crossings, &mut visits);
            }
        }
        if let Some(outside) = &self.outside {
            for l in outside.sample(rng).loops {
                walk(l.steps(), &mut crossings, &mut visits);
            }
        }
        let edges: Vec<EdgeId> = self.sets.edges.iter().copied().collect();
        let parity = parity_uniform(g, &edges, &odd, rng)?;
        for &e in &edges {
            crossings[e.0] = parity.alpha[e.0] as u32;
        }
        let mut times = vec![0.0; g.vertex_count()];
        for v in g.interior() {
            if let Some(x) = boundary_times.get(&v) {
                times[v.0] = *x;
            } else if !self.sets.star.contains(&v) {
                times[v.0] = dist::gamma(rng, visits[v.0] as f64 + 0.5, 2.0 / g.rate(v));
            }
        }
        let edge_fields = star_edge_fields(g, &self.sets, &times, grid_points, rng)?;
        Ok(NSample { config: None, crossings, times, pair_counts, edge_fields, attempts: 1 })
    }
}

/// Settings for the shrinking-cap experiment.
#[derive(Clone, Debug)]
pub struct CapCheck {
    pub caps: Vec<f64>,
    /// Accepted samples per cap.
    pub reps: u64,
    /// Attempts allowed per accepted sample.
    pub budget: u64,
    /// Smallest stratum used for a KS row.
    pub min_stratum: usize,
}

impl Default for CapCheck {
    fn default() -> Self {
        CapCheck { caps: vec![0.4, 0.2, 0.1], reps: 10_000, budget: 50_000_000, min_stratum: 200 }
    }
}

/// Shrinking caps on the star local times: the share of accepted samples
/// with a star-adjacent edge crossed twice must fall with the cap, and at the
/// smallest cap the local times away from the star vertices follow the
/// limiting gamma laws given the configuration.
pub fn check_caps(g: &MetricGraph, star: &BTreeSet<VertexId>, opts: &CapCheck, seed: u64) -> Result<StatReport> {
    if opts.caps.is_empty() || opts.caps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("caps must be given in decreasing order"));
    }
    let mut report = StatReport::new("n-measure", seed);
    report.param("reps", opts.reps).param("caps", opts.caps.clone());
    let mut fractions = Vec::new();
    let mut last = Vec::new();
    for (i, &cap) in opts.caps.iter().enumerate() {
        let sampler = CapSampler::new(g, ConditionWindow::uniform(star, cap)?)?;
        let draws = map_reps(seed, &format!("caps-{i}"), opts.reps, |rng, _| sampler.sample(g, 0, opts.budget, rng));
        let draws: Vec<NSample> = draws.into_iter().collect::<Result<_>>()?;
        let attempts: u64 = draws.iter().map(|d| d.attempts).sum();
        let twice = draws.iter().filter(|d| sampler.sets().crossed_twice(&d.crossings)).count();
        let f = twice as f64 / draws.len() as f64;
        report.param(&format!("acceptance_{cap}"), draws.len() as f64 / attempts as f64);
        report.param(&format!("crossed_twice_{cap}"), f);
        fractions.push(f);
        last = draws;
    }
    for i in 1..fractions.len() {
        let r = opts.caps[i] / opts.caps[i - 1];
        let ratio = fractions[i] / fractions[i - 1];
        report.range(
            &format!("crossed-twice ratio cap {} to {}", opts.caps[i - 1], opts.caps[i]),
            ratio,
            0.6 * r,
            1.4 * r,
            opts.reps,
        );
    }
    if fractions.len() >= 2 {
        let falls = fractions.windows(2).all(|w| w[1] < w[0]);
        report.flag("crossed-twice fraction decreases", fractions[fractions.len() - 1], falls, opts.reps);
        let (c0, c1) = (opts.caps[0], opts.caps[fractions.len() - 1]);
        let slope = (fractions[fractions.len() - 1] / fractions[0]).ln() / (c1 / c0).ln();
        report.param("crossed_twice_exponent", slope);
    }
    let sets = StarSets::new(g, star)?;
    let mut strata: BTreeMap<(VertexId, u32, usize), Vec<f64>> = BTreeMap::new();
    for d in &last {
        let visits = d.config.as_ref().map(|c| c.visits(g)).unwrap_or_default();
        for v in g.interior().filter(|v| !star.contains(v)) {
            let key = (v, visits[v.0], sets.uncrossed_degree(g, &d.crossings, v));
            strata.entry(key).or_default().push(d.times[v.0]);
        }
    }
    let (mut thin, mut thin_samples) = (0, 0);
    for ((v, k, d0), xs) in &strata {
        let shape = *k as f64 + (*d0 as f64 + 1.0) / 2.0;
        let name = format!("ks local time at {} with k={} and d0={}", g.name(*v), k, d0);
        if xs.len() < opts.min_stratum {
            thin += 1;
            thin_samples += xs.len();
            continue;
        }
        let law = Gamma::new(shape, g.rate(*v) / 2.0).map_err(|e| Error::Numerical(e.to_string()))?;
        let (stat, p) = ks_one_sample(xs, |x| law.cdf(x.max(0.0)));
        report.p_value(&name, stat, xs.len() as u64, p);
    }
    if thin > 0 {
        report.note(format!(
            "{thin} strata with fewer than {} samples ({thin_samples} samples in all) left out of the KS rows",
            opts.min_stratum
        ));
    }
    Ok(report)
}

/// Settings for the Poisson bridge-count experiment.
#[derive(Clone, Debug)]
pub struct BridgeCheck {
    /// Boundary local-time centres, one map per bin.
    pub centres: Vec<BTreeMap<VertexId, f64>>,
    pub eps: f64,
    /// Samples per bin.
    pub reps: u64,
    pub budget: u64,
    pub min_bin: u64,
}

impl BridgeCheck {
    /// Bins with every boundary vertex at the same centre.
    pub fn diagonal(sets: &StarSets, levels: &[f64], eps: f64, reps: u64) -> Self {
        let centres = levels.iter().map(|x| sets.boundary.iter().map(|v| (*v, *x)).collect()).collect();
        BridgeCheck { centres, eps, reps, budget: 10_000_000, min_bin: 200 }
    }
}

fn centre_label(g: &MetricGraph, centre: &BTreeMap<VertexId, f64>) -> String {
    centre.iter().map(|(v, x)| format!("{}={}", g.name(*v), x)).collect::<Vec<_>>().join(",")
}

fn poisson_rows(
    report: &mut StatReport,
    g: &MetricGraph,
    label: &str,
    counts: &BTreeMap<(VertexId, VertexId), Vec<f64>>,
    target: impl Fn(VertexId, VertexId) -> f64,
) {
    for (&(v, w), xs) in counts {
        let n = xs.len() as u64;
        let (m, se) = mean_se(xs);
        let pair = format!("{}-{}", g.name(v), g.name(w));
        report.within_se(&format!("mean bridges {pair} at {label}"), m, se, 3.0, target(v, w), n);
        if m > 0.0 {
            let (r, rse) = dispersion_ratio(xs);
            report.within_se(&format!("dispersion {pair} at {label}"), r, rse, 3.0, 1.0, n);
        }
    }
    let keys: Vec<&(VertexId, VertexId)> = counts.keys().collect();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            let (a, b) = (&counts[keys[i]], &counts[keys[j]]);
            let n = a.len();
            let r = correlation(a, b);
            if r.is_finite() {
                let name = format!(
                    "corr bridges {}-{} and {}-{} at {label}",
                    g.name(keys[i].0),
                    g.name(keys[i].1),
                    g.name(keys[j].0),
                    g.name(keys[j].1)
                );
                report.within_se(&name, r, 1.0 / (n as f64).sqrt(), 3.0, 0.0, n as u64);
            }
        }
    }
}

/// Bridge counts between boundary vertices under the limiting conditioned
/// measure, with boundary local times in windows: per bin, the mean and the
/// variance-to-mean ratio against the Poisson law with mean
/// `2 H(v, w) sqrt(x_v x_w)` at the bin centre.
pub fn verify_bridge_counts(g: &MetricGraph, star: &BTreeSet<VertexId>, opts: &BridgeCheck, seed: u64) -> Result<StatReport> {
    let direct = NDirectSampler::new(g, star)?;
    let mut report = StatReport::new("bridge-counts", seed);
    report.param("reps", opts.reps).param("eps", opts.eps).param("bins", opts.centres.len() as u64);
    for (&(v, w), h) in direct.kernel() {
        if v != w {
            report.param(&format!("H_{}_{}", g.name(v), g.name(w)), *h);
        }
    }
    for (i, centre) in opts.centres.iter().enumerate() {
        let label = centre_label(g, centre);
        let sampler = NWindowSampler::new(g, star, windows_around(centre, opts.eps))?;
        let draws = map_reps(seed, &format!("bridges-{i}"), opts.reps, |rng, _| sampler.sample(g, 0, opts.budget, rng));
        let draws: Vec<NSample> = draws.into_iter().collect::<Result<_>>()?;
        if (draws.len() as u64) < opts.min_bin {
            report.flag(&format!("bin size at {label}"), draws.len() as f64, false, draws.len() as u64);
            continue;
        }
        let mut counts: BTreeMap<(VertexId, VertexId), Vec<f64>> = BTreeMap::new();
        for d in &draws {
            for (k, c) in &d.pair_counts {
                counts.entry(*k).or_default().push(*c as f64);
            }
        }
        poisson_rows(&mut report, g, &label, &counts, |v, w| direct.bridge_mean(v, w, centre[&v], centre[&w]));
    }
    Ok(report)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    crate::currents::pearson(&pairs)
}

fn edge_label(g: &MetricGraph, e: EdgeId) -> String {
    let ed = g.edge(e);
    format!("{}-{}", g.name(ed.a), g.name(ed.b))
}

type Summary = Vec<u32>;

fn capped_summary(pairs: &BTreeMap<(VertexId, VertexId), u32>, crossings: &[u32], edges: &BTreeSet<EdgeId>, cap: u32) -> Summary {
    pairs.values().map(|c| (*c).min(cap)).chain(edges.iter().map(|e| crossings[e.0])).collect()
}

/// Compares the boundary description at the window centres with the exact
/// windowed sampler on the joint law of bridge counts and star-edge crossings.
pub fn verify_direct_sampler(
    g: &MetricGraph,
    star: &BTreeSet<VertexId>,
    centre: &BTreeMap<VertexId, f64>,
    eps: f64,
    reps: u64,
    seed: u64,
) -> Result<StatReport> {
    let direct = NDirectSampler::new(g, star)?;
    let windowed = NWindowSampler::new(g, star, windows_around(centre, eps))?;
    let sets = direct.sets().clone();
    let a = map_reps(seed, "direct", reps, |rng, _| direct.sample(g, centre, 0, rng));
    let b = map_reps(seed, "direct-windowed", reps, |rng, _| windowed.sample(g, 0, 10_000_000, rng));
    let mut ha: BTreeMap<Summary, u64> = BTreeMap::new();
    let mut hb: BTreeMap<Summary, u64> = BTreeMap::new();
    let mut counts: BTreeMap<(VertexId, VertexId), Vec<f64>> = BTreeMap::new();
    for d in a {
        let d = d?;
        for (k, c) in &d.pair_counts {
            counts.entry(*k).or_default().push(*c as f64);
        }
        *ha.entry(capped_summary(&d.pair_counts, &d.crossings, &sets.edges, 3)).or_default() += 1;
    }
    for d in b {
        let d = d?;
        *hb.entry(capped_summary(&d.pair_counts, &d.crossings, &sets.edges, 3)).or_default() += 1;
    }
    let mut report = StatReport::new("direct-sampler", seed);
    report.param("reps", reps).param("eps", eps);
    let label = centre_label(g, centre);
    report.below(&format!("tv direct vs windowed at {label}"), total_variation(&ha, &hb), 0.05, reps);
    poisson_rows(&mut report, g, &label, &counts, |v, w| direct.bridge_mean(v, w, centre[&v], centre[&w]));
    Ok(report)
}

/// Settings for the star-graph correspondence experiment.
#[derive(Clone, Debug)]
pub struct StarCheck {
    pub eps: f64,
    pub reps: u64,
    pub stub: f64,
    /// Excursion counts are capped at this value in the summary.
    pub cap: u32,
    pub budget: u64,
}

impl Default for StarCheck {
    fn default() -> Self {
        StarCheck { eps: 0.05, reps: 100_000, stub: 1.0, cap: 2, budget: 10_000_000 }
    }
}

/// An edge end at a star vertex: `(vertex, edge)` in the original graph.
type Port = (VertexId, EdgeId);

/// Excursions away from `marked` vertices, as unordered port pairs, and the
/// number of loops avoiding them. `port` maps a marked vertex and the edge of
/// the step leaving or entering it to a port; `skip` discards segments.
fn port_excursions(
    g: &MetricGraph,
    loops: &[DiscreteLoop],
    marked: impl Fn(VertexId) -> bool,
    port: impl Fn(VertexId, EdgeId) -> Port,
    skip: impl Fn(&[Step]) -> bool,
) -> (BTreeMap<(Port, Port), u32>, u32) {
    let mut out = BTreeMap::new();
    let mut avoiding = 0;
    for l in loops {
        let vs = l.vertices(g);
        let steps = l.steps();
        let n = steps.len();
        let marks: Vec<usize> = (0..n).filter(|&i| marked(vs[i])).collect();
        if marks.is_empty() {
            avoiding += 1;
            continue;
        }
        for (j, &i) in marks.iter().enumerate() {
            let next = marks[(j + 1) % marks.len()];
            let len = if next > i { next - i } else { next + n - i };
            let seg: Vec<Step> = (0..len).map(|t| steps[(i + t) % n]).collect();
            if skip(&seg) {
                continue;
            }
            let p = port(vs[i], seg[0].edge);
            let q = port(vs[next], seg[len - 1].edge);
            *out.entry((p.min(q), p.max(q))).or_default() += 1;
        }
    }
    (out, avoiding)
}

fn port_pairs(g: &MetricGraph, star: &BTreeSet<VertexId>) -> Vec<(Port, Port)> {
    let mut ports: BTreeSet<Port> = BTreeSet::new();
    for &v in star {
        for s in g.steps_from(v) {
            if !g.is_sink_edge(s.edge) {
                ports.insert((v, s.edge));
            }
        }
    }
    let ports: Vec<Port> = ports.into_iter().collect();
    let mut pairs = Vec::new();
    for (i, p) in ports.iter().enumerate() {
        for q in &ports[i..] {
            pairs.push((*p, *q));
        }
    }
    pairs
}

fn summary_key(pairs: &[(Port, Port)], counts: &BTreeMap<(Port, Port), u32>, avoiding: u32, cap: u32) -> Summary {
    pairs
        .iter()
        .map(|k| counts.get(k).copied().unwrap_or(0).min(cap))
        .chain(std::iter::once(avoiding.min(cap)))
        .collect()
}

/// Summary of the trace outside the star vertices for a soup on `g`.
pub fn outside_summary(g: &MetricGraph, star: &BTreeSet<VertexId>, loops: &[DiscreteLoop], cap: u32) -> Summary {
    let (counts, avoiding) = port_excursions(g, loops, |v| star.contains(&v), |v, e| (v, e), |_| false);
    summary_key(&port_pairs(g, star), &counts, avoiding, cap)
}

/// Summary of the trace outside the star edges for a soup on a star graph,
/// expressed with the ports of the original graph.
pub fn star_outside_summary(base: &MetricGraph, sg: &StarGraph, loops: &[DiscreteLoop], cap: u32) -> Summary {
    let replicas = sg.replica_set();
    let star_edges = sg.star_edge_ids();
    let port_of: BTreeMap<VertexId, Port> = sg.star_edges.iter().map(|s| (s.replica, (s.star, s.original))).collect();
    let (counts, avoiding) = port_excursions(
        &sg.graph,
        loops,
        |v| replicas.contains(&v),
        |v, _| port_of[&v],
        |seg| seg.iter().any(|s| star_edges.contains(&s.edge)),
    );
    summary_key(&port_pairs(base, &sg.star_vertices), &counts, avoiding, cap)
}

/// Two constructions of the trace outside the star vertices given their
/// local times: the soup on `g` with the local times in windows, and the
/// limiting conditioned measure on the star graph with every replica's local
/// time in the window of its star vertex. Reports the total variation
/// distance between the laws of the capped excursion summaries.
pub fn verify_star_correspondence(
    g: &MetricGraph,
    centres: &BTreeMap<VertexId, f64>,
    opts: &StarCheck,
    seed: u64,
) -> Result<StatReport> {
    let star: BTreeSet<VertexId> = centres.keys().copied().collect();
    let mut report = StatReport::new("star", seed);
    report.param("reps", opts.reps).param("eps", opts.eps).param("stub", opts.stub).param("star_vertices", star.len() as u64);
    let label = centre_label(g, centres);
    if star.is_empty() {
        report.below(&format!("tv outside summary at {label}"), 0.0, 0.05, 0);
        return Ok(report);
    }
    let plain = WindowedSoup::new(g, windows_around(centres, opts.eps))?;
    let sg = star_extend(g, &star, opts.stub)?;
    let replica_windows: BTreeMap<VertexId, (f64, f64)> = sg
        .star_edges
        .iter()
        .map(|s| {
            let x = centres[&s.star];
            (s.replica, ((x - opts.eps).max(0.0), x + opts.eps))
        })
        .collect();
    let limit = NWindowSampler::new(&sg.graph, &star, replica_windows)?;
    let a = map_reps(seed, "star-plain", opts.reps, |rng, _| -> Result<(Summary, u64)> {
        let (config, _, attempts) = plain.sample(g, opts.budget, rng)?;
        Ok((outside_summary(g, &star, &config.loops, opts.cap), attempts))
    });
    let b = map_reps(seed, "star-limit", opts.reps, |rng, _| -> Result<(Summary, u64)> {
        let d = limit.sample(&sg.graph, 0, opts.budget, rng)?;
        let loops = &d.config.as_ref().expect("windowed sampler keeps loops").loops;
        Ok((star_outside_summary(g, &sg, loops, opts.cap), d.attempts))
    });
    let mut ha: BTreeMap<Summary, u64> = BTreeMap::new();
    let mut hb: BTreeMap<Summary, u64> = BTreeMap::new();
    let (mut ta, mut tb) = (0u64, 0u64);
    for x in a {
        let (s, t) = x?;
        ta += t;
        *ha.entry(s).or_default() += 1;
    }
    for x in b {
        let (s, t) = x?;
        tb += t;
        *hb.entry(s).or_default() += 1;
    }
    report.param("acceptance_plain", opts.reps as f64 / ta as f64);
    report.param("acceptance_limit", opts.reps as f64 / tb as f64);
    report.param("summary_classes", ha.len().max(hb.len()) as u64);
    report.below(&format!("tv outside summary at {label}"), total_variation(&ha, &hb), 0.05, opts.reps);
    Ok(report)
}

/// Settings for the domain Markov experiment.
#[derive(Clone, Debug)]
pub struct DomainCheck {
    pub eps: f64,
    pub reps: u64,
    pub budget: u64,
}

impl Default for DomainCheck {
    fn default() -> Self {
        DomainCheck { eps: 0.05, reps: 20_000, budget: 50_000_000 }
    }
}

/// Soup on `g` conditioned on the boundary local times of a subgraph lying
/// in windows and on its field staying positive along the subgraph edges.
/// Checks that bridge counts outside the subgraph are uncorrelated with the
/// field at the midpoint of each subgraph edge and, for a connected subgraph,
/// Poisson with mean `2 H(v, w) sqrt(x_v x_w)`.
pub fn verify_domain_markov(
    g: &MetricGraph,
    sub: &Subgraph,
    centres: &BTreeMap<VertexId, f64>,
    opts: &DomainCheck,
    seed: u64,
) -> Result<StatReport> {
    if centres.keys().copied().collect::<BTreeSet<_>>() != sub.boundary {
        return Err(invalid("every boundary vertex of the subgraph, and only those, needs a centre"));
    }
    let soup = WindowedSoup::new(g, windows_around(centres, opts.eps))?;
    let kernel = boundary_kernel(g, &sub.edges, &sub.boundary)?;
    let edges: Vec<EdgeId> = sub.edges.iter().copied().collect();
    let draws = map_reps(seed, "domain-markov", opts.reps, |rng, _| -> Result<(BTreeMap<(VertexId, VertexId), u32>, Vec<f64>, u64)> {
        let mut used = 0;
        'attempt: loop {
            let (config, times, attempts) = soup.sample(g, opts.budget.saturating_sub(used).max(1), rng)?;
            used += attempts;
            let crossings = config.crossings(g);
            for &e in &edges {
                let ed = g.edge(e);
                if edge_zero_hit(times[ed.a.0], times[ed.b.0], g.length(e), crossings[e.0], rng) {
                    if used >= opts.budget {
                        return Err(Error::Rejection { what: "positive subgraph field".into(), attempts: used });
                    }
                    continue 'attempt;
                }
            }
            let mut mids = Vec::with_capacity(edges.len());
            for &e in &edges {
                let ed = g.edge(e);
                let rho = g.length(e);
                let f = sample_edge_field(rho, times[ed.a.0], times[ed.b.0], crossings[e.0], ZeroRule::Avoid, &[0.0, rho / 2.0, rho], rng)?;
                mids.push(f.values[1]);
            }
            return Ok((boundary_pair_counts(g, &config.loops, &sub.edges, &sub.boundary), mids, used));
        }
    });
    let draws: Vec<_> = draws.into_iter().collect::<Result<_>>()?;
    let mut report = StatReport::new("markov", seed);
    report.param("reps", opts.reps).param("eps", opts.eps);
    let attempts: u64 = draws.iter().map(|d| d.2).sum();
    report.param("acceptance", opts.reps as f64 / attempts as f64);
    let label = centre_label(g, centres);
    let mut counts: BTreeMap<(VertexId, VertexId), Vec<f64>> = BTreeMap::new();
    for d in &draws {
        for (k, c) in &d.0 {
            counts.entry(*k).or_default().push(*c as f64);
        }
    }
    let n = draws.len();
    for (&(v, w), xs) in &counts {
        for (j, &e) in edges.iter().enumerate() {
            let mids: Vec<f64> = draws.iter().map(|d| d.1[j]).collect();
            let r = correlation(xs, &mids);
            let name = format!("corr bridges {}-{} and midpoint field on {}", g.name(v), g.name(w), edge_label(g, e));
            report.within_se(&name, if r.is_finite() { r } else { 0.0 }, 1.0 / (n as f64).sqrt(), 3.0, 0.0, n as u64);
        }
    }
    let connected = {
        let mut uf = UnionFind::new(g.vertex_count());
        for e in &sub.edges {
            let ed = g.edge(*e);
            uf.union(ed.a.0, ed.b.0);
        }
        let mut roots = sub.vertices.iter().map(|v| uf.find(v.0));
        let first = roots.next();
        roots.all(|r| Some(r) == first)
    };
    if connected {
        for ((v, w), h) in &kernel {
            if v != w {
                report.param(&format!("H_{}_{}", g.name(*v), g.name(*w)), *h);
            }
        }
        poisson_rows(&mut report, g, &label, &counts, |v, w| {
            2.0 * kernel.get(&pair_key(v, w)).copied().unwrap_or(0.0) * (centres[&v] * centres[&w]).sqrt()
        });
    } else {
        report.note("subgraph is not connected: Poisson rows skipped");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::currents::{admissible_on, count_admissible};
    use crate::occupation::Cluster;
    use crate::rng::stream;

    fn triangle() -> MetricGraph {
        MetricGraph::from_edges(
            &["1", "2", "3"],
            "s",
            &[("1", "2", 1.0), ("2", "3", 1.0), ("3", "1", 1.0), ("1", "s", 1.0)],
        )
        .unwrap()
    }

    fn set(g: &MetricGraph, names: &[&str]) -> BTreeSet<VertexId> {
        names.iter().map(|n| g.vertex(n).unwrap()).collect()
    }

    #[test]
    fn star_sets_of_triangle() {
        let g = triangle();
        let s = StarSets::new(&g, &set(&g, &["2"])).unwrap();
        assert_eq!(s.boundary, set(&g, &["1", "3"]));
        assert_eq!(s.edges.len(), 2);
        assert_eq!(s.degree(&g, g.vertex("2").unwrap()), 2);
        assert!(s.is_connected(&g));
        let s1 = StarSets::new(&g, &set(&g, &["1"])).unwrap();
        assert_eq!(s1.degree(&g, g.vertex("1").unwrap()), 2);
        assert!(StarSets::new(&g, &BTreeSet::from([g.sink()])).is_err());
    }

    #[test]
    fn kernel_on_outside_link() {
        let g = triangle();
        let s = StarSets::new(&g, &set(&g, &["2"])).unwrap();
        let k = boundary_kernel(&g, &s.edges, &s.boundary).unwrap();
        let (v1, v3) = (g.vertex("1").unwrap(), g.vertex("3").unwrap());
        assert!((k[&(v1, v3)] - 0.5).abs() < 1e-12);
        assert_eq!(k[&(v1, v1)], 0.0);
        let d = NDirectSampler::new(&g, &set(&g, &["2"])).unwrap();
        assert!((d.bridge_mean(v1, v3, 1.0, 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(d.bridge_mean(v1, v3, 0.0, 2.0), 0.0);
    }

    #[test]
    fn kernel_is_symmetric() {
        let g = MetricGraph::from_edges(
            &["a", "b", "c", "u"],
            "s",
            &[("a", "c", 1.0), ("c", "b", 1.0), ("a", "u", 0.7), ("u", "b", 1.3), ("u", "s", 2.0), ("a", "b", 3.0)],
        )
        .unwrap();
        let s = StarSets::new(&g, &set(&g, &["c"])).unwrap();
        let (a, b) = (g.vertex("a").unwrap(), g.vertex("b").unwrap());
        let k = boundary_kernel(&g, &s.edges, &s.boundary).unwrap();
        let mut rev = BTreeSet::new();
        rev.insert(b);
        let from_b = crate::harmonic::excursion_kernel(&g, b, &s.edges, &BTreeSet::from([a])).unwrap();
        assert!((k[&(a, b)] - from_b[&a]).abs() < 1e-12);
        assert!(k[&(a, a)] > 0.0);
        let _ = rev;
    }

    #[test]
    fn pair_counts_of_a_loop() {
        let g = triangle();
        let s = StarSets::new(&g, &set(&g, &["2"])).unwrap();
        let e31 = EdgeId(2);
        let l = DiscreteLoop::new(&g, vec![Step { edge: e31, forward: true }, Step { edge: e31, forward: false }]).unwrap();
        let c = boundary_pair_counts(&g, &[l.clone()], &s.edges, &s.boundary);
        assert_eq!(c.values().copied().collect::<Vec<_>>(), vec![2]);
        let tri = DiscreteLoop::new(
            &g,
            vec![Step { edge: EdgeId(0), forward: true }, Step { edge: EdgeId(1), forward: true }, Step { edge: e31, forward: true }],
        )
        .unwrap();
        let c = boundary_pair_counts(&g, &[tri, l], &s.edges, &s.boundary);
        assert_eq!(c.values().copied().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn window_moment_matches_quadrature() {
        for &(k, d, rate, lo, hi) in &[(0u32, 0usize, 1.0, 0.2, 0.6), (2, 1, 1.5, 0.9, 1.1), (1, 2, 0.5, 0.0, 0.3)] {
            let s = k as f64 + 0.5;
            let m = 20_000;
            let h = (hi - lo) / m as f64;
            let ln_c = s * f64::ln(rate) - ln_gamma(s);
            let f = |y: f64| if y <= 0.0 { 0.0 } else { (ln_c + (s - 1.0 + d as f64 / 2.0) * y.ln() - rate * y).exp() };
            let quad: f64 = (0..m).map(|i| f(lo + (i as f64 + 0.5) * h) * h).sum();
            let exact = window_moment(k, d, rate, lo, hi);
            assert!((quad - exact).abs() < 2e-3 * exact.max(1e-3), "{k} {d}: {quad} vs {exact}");
        }
        let top = max_window_moment(1, 1.0, 0.95, 1.05);
        assert!((0..200).all(|k| window_moment(k, 1, 1.0, 0.95, 1.05) <= top + 1e-15));
    }

    #[test]
    fn windowed_gamma_stays_in_window_and_fits() {
        let mut rng = stream(3, "wg", 0);
        let law = Gamma::new(2.5, 1.0).unwrap();
        let (lo, hi) = (0.5, 3.0);
        let xs: Vec<f64> = (0..20_000).map(|_| gamma_in_window(2.5, 1.0, lo, hi, &mut rng).unwrap()).collect();
        assert!(xs.iter().all(|x| (lo..=hi).contains(x)));
        let (a, b) = (law.cdf(lo), law.cdf(hi));
        assert!(ks_one_sample(&xs, |x| (law.cdf(x) - a) / (b - a)).1 > 1e-3);
        let ys: Vec<f64> = (0..20_000).map(|_| gamma_in_window(0.5, 1.0, 0.0, 0.3, &mut rng).unwrap()).collect();
        let law = Gamma::new(0.5, 1.0).unwrap();
        let b = law.cdf(0.3);
        assert!(ks_one_sample(&ys, |x| law.cdf(x.max(0.0)) / b).1 > 1e-3);
    }

    #[test]
    fn rejection_samples_respect_window() {
        let g = triangle();
        let star = set(&g, &["2"]);
        let window = ConditionWindow::uniform(&star, 0.3).unwrap();
        let sampler = CapSampler::new(&g, window).unwrap();
        let mut rng = stream(4, "cap", 0);
        for _ in 0..200 {
            let d = sampler.sample(&g, 5, 1_000_000, &mut rng).unwrap();
            assert!(d.times[1] <= 0.3);
            for f in d.edge_fields.values() {
                assert!(f[1..f.len() - 1].iter().all(|x| *x > 0.0));
            }
        }
        assert!(sample_n_rejection(&g, &ConditionWindow::uniform(&star, 1e-12).unwrap(), 10, &mut rng).is_err());
        assert!(ConditionWindow::uniform(&star, 0.0).is_err());
    }

    #[test]
    fn limit_samples_are_supported_correctly() {
        let g = triangle();
        let star = set(&g, &["2"]);
        let centre: BTreeMap<VertexId, f64> = [(VertexId(0), 1.0), (VertexId(2), 1.0)].into();
        let s = NWindowSampler::new(&g, &star, windows_around(&centre, 0.05)).unwrap();
        let mut rng = stream(5, "limit", 0);
        for _ in 0..300 {
            let d = s.sample(&g, 5, 1_000_000, &mut rng).unwrap();
            assert_eq!(d.times[1], 0.0);
            for e in &s.sets().edges {
                assert!(d.crossings[e.0] <= 1);
            }
            let c = &d.crossings;
            assert_eq!((c[0] + c[1]) % 2, 0);
            let k13 = d.pair_counts.values().next().copied().unwrap();
            assert_eq!((c[0] + k13) % 2, 0);
            assert!((0.95..=1.05).contains(&d.times[0]) && (0.95..=1.05).contains(&d.times[2]));
            assert_eq!(d.edge_fields.len(), 2);
        }
        assert!(NWindowSampler::new(&g, &star, windows_around(&BTreeMap::from([(VertexId(0), 1.0)]), 0.05)).is_err());
    }

    #[test]
    fn direct_samples_satisfy_parity() {
        let g = MetricGraph::from_edges(
            &["a", "b", "c", "d", "u"],
            "s",
            &[("a", "c", 1.0), ("c", "b", 1.0), ("c", "d", 1.0), ("a", "u", 1.0), ("u", "b", 1.0), ("u", "d", 1.0), ("u", "s", 1.0)],
        )
        .unwrap();
        let star = set(&g, &["c"]);
        let s = NDirectSampler::new(&g, &star).unwrap();
        let times: BTreeMap<VertexId, f64> = s.sets().boundary.iter().map(|v| (*v, 1.0)).collect();
        let mut rng = stream(6, "direct", 0);
        for _ in 0..300 {
            let d = s.sample(&g, &times, 0, &mut rng).unwrap();
            for &v in s.sets().star.iter().chain(&s.sets().boundary) {
                let star_part: u32 = g.steps_from(v).iter().filter(|x| s.sets().edges.contains(&x.edge)).map(|x| d.crossings[x.edge.0]).sum();
                let bridges: u32 = d.pair_counts.iter().filter(|((x, y), _)| *x == v || *y == v).map(|(_, c)| *c).sum();
                assert_eq!((star_part + bridges) % 2, 0);
            }
            let total: u32 = g.steps_from(g.vertex("u").unwrap()).iter().map(|x| d.crossings[x.edge.0]).sum();
            assert_eq!(total % 2, 0);
        }
        let disconnected = MetricGraph::from_edges(&["a", "b", "x", "c"], "s", &[("a", "b", 1.0), ("b", "x", 1.0), ("x", "c", 1.0), ("c", "s", 1.0)]).unwrap();
        assert!(NDirectSampler::new(&disconnected, &set(&disconnected, &["a", "c"])).is_err());
    }

    #[test]
    fn direct_pair_counts_are_independent() {
        let g = MetricGraph::from_edges(
            &["a", "b", "c", "d"],
            "s",
            &[("a", "c", 1.0), ("c", "b", 1.0), ("c", "d", 1.0), ("a", "b", 1.0), ("b", "d", 2.0), ("a", "d", 0.5), ("d", "s", 1.0)],
        )
        .unwrap();
        let star = set(&g, &["c"]);
        let s = NDirectSampler::new(&g, &star).unwrap();
        let times: BTreeMap<VertexId, f64> = s.sets().boundary.iter().zip([1.0, 0.5, 2.0]).map(|(v, x)| (*v, x)).collect();
        let draws = map_reps(7, "indep", 20_000, |rng, _| s.sample(&g, &times, 0, rng).unwrap().pair_counts);
        let mut counts: BTreeMap<(VertexId, VertexId), Vec<f64>> = BTreeMap::new();
        for d in &draws {
            for (k, c) in d {
                counts.entry(*k).or_default().push(*c as f64);
            }
        }
        let mut report = StatReport::new("t", 7);
        poisson_rows(&mut report, &g, "x", &counts, |v, w| s.bridge_mean(v, w, times[&v], times[&w]));
        report.finalize();
        assert_eq!(report.rows.len(), 3 * 2 + 3);
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn admissible_counts_do_not_depend_on_parities() {
        let g = MetricGraph::from_edges(
            &["a", "b", "c", "d", "e"],
            "s",
            &[("a", "c", 1.0), ("c", "b", 1.0), ("c", "d", 1.0), ("c", "e", 1.0), ("e", "d", 1.0), ("a", "s", 1.0)],
        )
        .unwrap();
        let star = set(&g, &["c", "e"]);
        let s = StarSets::new(&g, &star).unwrap();
        let edges: Vec<EdgeId> = s.edges.iter().copied().collect();
        let expected = count_admissible(&g, &[Cluster { vertices: vec![], edges: edges.clone() }]);
        let boundary: Vec<VertexId> = s.boundary.iter().copied().collect();
        let all = 1u32 << edges.len();
        for mask in 0..(1u32 << boundary.len()) {
            let odd: BTreeSet<VertexId> = boundary.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, v)| *v).collect();
            if odd.len() % 2 == 1 {
                continue;
            }
            let n = (0..all)
                .filter(|bits| {
                    g.vertices().all(|v| {
                        let sum: u32 = g.steps_from(v).iter().filter_map(|x| edges.iter().position(|e| *e == x.edge)).map(|i| bits >> i & 1).sum();
                        (sum % 2 == 1) == odd.contains(&v)
                    })
                })
                .count();
            assert_eq!(num_bigint::BigUint::from(n), expected, "mask {mask}");
        }
        let zero = admissible_on(&g, &edges).unwrap();
        assert_eq!(num_bigint::BigUint::from(zero.len()), expected);
    }

    #[test]
    fn parity_uniform_is_uniform() {
        let g = MetricGraph::from_edges(
            &["a", "b", "c"],
            "s",
            &[("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0), ("a", "b", 2.0), ("a", "s", 1.0)],
        )
        .unwrap();
        let edges: Vec<EdgeId> = (0..4).map(EdgeId).collect();
        let odd = set(&g, &["a", "c"]);
        let mut rng = stream(8, "pu", 0);
        let mut seen: BTreeMap<String, u64> = BTreeMap::new();
        let n = 40_000;
        for _ in 0..n {
            let p = parity_uniform(&g, &edges, &odd, &mut rng).unwrap();
            *seen.entry(p.bitstring()).or_default() += 1;
        }
        assert_eq!(seen.len(), 4);
        for c in seen.values() {
            assert!((*c as f64 / n as f64 - 0.25).abs() < 4.0 * (0.25 * 0.75 / n as f64).sqrt());
        }
        assert!(parity_uniform(&g, &edges, &set(&g, &["a"]), &mut rng).is_err());
    }

    #[test]
    fn small_bridge_count_check() {
        let g = triangle();
        let star = set(&g, &["2"]);
        let sets = StarSets::new(&g, &star).unwrap();
        let opts = BridgeCheck::diagonal(&sets, &[1.0], 0.05, 3000);
        let r = verify_bridge_counts(&g, &star, &opts, 11).unwrap();
        assert!(r.pass, "{}", r.summary());
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn direct_agrees_with_windowed() {
        let g = MetricGraph::from_edges(
            &["a", "b", "c", "u"],
            "s",
            &[("a", "c", 1.0), ("c", "b", 1.0), ("a", "u", 1.0), ("u", "b", 1.0), ("u", "s", 1.0), ("a", "b", 2.0)],
        )
        .unwrap();
        let star = set(&g, &["c"]);
        let centre: BTreeMap<VertexId, f64> = [(g.vertex("a").unwrap(), 1.0), (g.vertex("b").unwrap(), 0.8)].into();
        let r = verify_direct_sampler(&g, &star, &centre, 0.05, 10_000, 12).unwrap();
        assert!(r.pass, "{}", r.summary());
    }

    proptest::proptest! {
        #[test]
        fn direct_sample_parity_matches_bridges(seed in 0u64..400, xa in 0.0f64..3.0, xc in 0.0f64..3.0) {
            let g = MetricGraph::from_edges(
                &["a", "b", "c", "d"],
                "s",
                &[("a", "b", 1.0), ("b", "c", 1.0), ("a", "d", 0.5), ("d", "c", 1.5), ("d", "s", 1.0), ("b", "d", 1.0)],
            )
            .unwrap();
            let star = set(&g, &["b"]);
            let sampler = NDirectSampler::new(&g, &star).unwrap();
            let (a, c) = (g.vertex("a").unwrap(), g.vertex("c").unwrap());
            let times: BTreeMap<VertexId, f64> = sampler.sets().boundary.iter().map(|&v| (v, if v == a { xa } else if v == c { xc } else { 1.0 })).collect();
            let n = sampler.sample(&g, &times, 5, &mut stream(seed, "prop-direct", 0)).unwrap();
            let sets = sampler.sets();
            for &v in &sets.boundary {
                let bridges: u32 = n.pair_counts.iter().filter(|((p, q), _)| *p == v || *q == v).map(|(_, k)| *k).sum();
                let star_crossings: u32 = sets.edges.iter().filter(|e| g.edge(**e).a == v || g.edge(**e).b == v).map(|e| n.crossings[e.0]).sum();
                proptest::prop_assert_eq!(bridges % 2, star_crossings % 2);
                proptest::prop_assert_eq!(n.times[v.0], times[&v]);
            }
            for &e in &sets.edges {
                proptest::prop_assert!(n.crossings[e.0] <= 1);
            }
            for &v in &star {
                proptest::prop_assert_eq!(n.times[v.0], 0.0);
            }
            if xa == 0.0 || xc == 0.0 {
                proptest::prop_assert!(n.pair_counts.values().all(|k| *k == 0));
            }
        }
    }
}
