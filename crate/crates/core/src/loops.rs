//! Discrete loop soups: unrooted unoriented loops on the vertices, the
//! vertex-by-vertex exact sampler, and enumeration oracles for small graphs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::dist;
use crate::error::{invalid, Error, Result};
use crate::graph::{MetricGraph, Step, VertexId};
use crate::harmonic::{exit_kernel, killed_transition_matrix, step_probability};
use crate::report::StatReport;
use crate::rng::{map_reps, Rng};
use crate::stats::{chi_square_gof, total_variation};

fn least_rotation(s: &[Step]) -> Vec<Step> {
    let n = s.len();
    let mut best = 0;
    for start in 1..n {
        for k in 0..n {
            let (x, y) = (s[(start + k) % n], s[(best + k) % n]);
            if x != y {
                if x < y {
                    best = start;
                }
                break;
            }
        }
    }
    (0..n).map(|k| s[(best + k) % n]).collect()
}

fn reversal(s: &[Step]) -> Vec<Step> {
    s.iter().rev().map(|x| x.reversed()).collect()
}

/// A closed walk of at least one step, up to rotation and reversal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteLoop {
    steps: Vec<Step>,
}

impl DiscreteLoop {
    pub fn new(g: &MetricGraph, steps: Vec<Step>) -> Result<Self> {
        if steps.is_empty() {
            return Err(invalid("a discrete loop needs at least one step"));
        }
        for (i, s) in steps.iter().enumerate() {
            if s.edge.0 >= g.edge_count() {
                return Err(invalid("loop uses an unknown edge"));
            }
            let next = steps[(i + 1) % steps.len()];
            if g.head(*s) != g.tail(next) {
                return Err(invalid("steps of a loop must be consecutive"));
            }
            if g.tail(*s) == g.sink() {
                return Err(invalid("loops cannot visit the sink"));
            }
        }
        Ok(Self::canonical(steps))
    }

    fn canonical(steps: Vec<Step>) -> Self {
        let a = least_rotation(&steps);
        let b = least_rotation(&reversal(&steps));
        DiscreteLoop { steps: a.min(b) }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Largest `J` such that the loop is a `J`-fold repetition.
    pub fn multiplicity(&self) -> usize {
        let n = self.steps.len();
        for p in 1..=n {
            if n % p == 0 && (0..n).all(|i| self.steps[i] == self.steps[(i + p) % n]) {
                return n / p;
            }
        }
        1
    }

    /// Whether traversing the loop backwards gives the same oriented loop.
    pub fn is_reversible(&self) -> bool {
        least_rotation(&reversal(&self.steps)) == self.steps
    }

    /// Visited vertices in order (one entry per step).
    pub fn vertices(&self, g: &MetricGraph) -> Vec<VertexId> {
        self.steps.iter().map(|s| g.tail(*s)).collect()
    }

    /// Mass of one orientation under the oriented loop measure.
    pub fn oriented_mass(&self, g: &MetricGraph) -> f64 {
        let p: f64 = self.steps.iter().map(|s| step_probability(g, *s)).product();
        p / self.multiplicity() as f64
    }

    /// Mass under the intensity one half unoriented loop measure.
    pub fn mass(&self, g: &MetricGraph) -> f64 {
        let mu = self.oriented_mass(g);
        if self.is_reversible() {
            0.5 * mu
        } else {
            mu
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoopConfig {
    pub loops: Vec<DiscreteLoop>,
}

impl LoopConfig {
    /// Number of crossings of every edge.
    pub fn crossings(&self, g: &MetricGraph) -> Vec<u32> {
        let mut n = vec![0u32; g.edge_count()];
        for l in &self.loops {
            for s in l.steps() {
                n[s.edge.0] += 1;
            }
        }
        n
    }

    /// Number of visits `k_v` to every vertex.
    pub fn visits(&self, g: &MetricGraph) -> Vec<u32> {
        let mut k = vec![0u32; g.vertex_count()];
        for l in &self.loops {
            for s in l.steps() {
                k[g.tail(*s).0] += 1;
            }
        }
        k
    }

    pub fn counts(&self) -> BTreeMap<&DiscreteLoop, usize> {
        let mut m = BTreeMap::new();
        for l in &self.loops {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }

    /// One loop per line: multiplicity, vertex sequence, edge ids.
    pub fn dump(&self, g: &MetricGraph) -> String {
        let mut out = String::new();
        for (l, c) in self.counts() {
            let vs: Vec<&str> = l.vertices(g).iter().map(|v| g.name(*v)).collect();
            let es: Vec<String> = l.steps().iter().map(|s| s.edge.0.to_string()).collect();
            let _ = writeln!(out, "{c}\t{}\t{}", vs.join(" "), es.join(" "));
        }
        out
    }
}

/// Probability that a vertex with return probability `p` is visited `k` times.
pub fn visits_pmf(p: f64, k: u32) -> f64 {
    let mut term = (1.0 - p).sqrt();
    for j in 0..k {
        term *= p * (j as f64 + 0.5) / (j as f64 + 1.0);
    }
    term
}

pub fn sample_visits(p: f64, rng: &mut Rng) -> u32 {
    if p <= 0.0 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut term = (1.0 - p).sqrt();
    let mut acc = term;
    let mut k = 0u32;
    while u >= acc {
        term *= p * (k as f64 + 0.5) / (k as f64 + 1.0);
        acc += term;
        k += 1;
        if term < 1e-300 && k > 10 {
            break;
        }
    }
    k
}

#[derive(Clone, Debug)]
struct VertexPlan {
    v: VertexId,
    p: f64,
    /// cumulative step table of the walk conditioned to return to `v`
    table: Vec<Vec<(Step, f64)>>,
}

/// Exact sampler processing the vertices one at a time; every vertex sees the
/// previously processed ones as killing.
#[derive(Clone, Debug)]
pub struct SoupSampler {
    plans: Vec<VertexPlan>,
    head: Vec<(usize, usize)>,
}

impl SoupSampler {
    pub fn new(g: &MetricGraph) -> Result<Self> {
        let order: Vec<VertexId> = g.interior().collect();
        Self::with_order(g, &order, &[])
    }

    /// Sampler for the soup of loops avoiding `killed` (in addition to the
    /// sink), processing vertices in `order`.
    pub fn with_order(g: &MetricGraph, order: &[VertexId], killed: &[VertexId]) -> Result<Self> {
        let n = g.vertex_count();
        let mut dead = vec![false; n];
        dead[g.sink().0] = true;
        for k in killed {
            dead[k.0] = true;
        }
        let mut seen = vec![false; n];
        for v in order {
            if dead[v.0] || seen[v.0] {
                return Err(invalid("order must list distinct live vertices"));
            }
            seen[v.0] = true;
        }
        if (0..n).any(|u| !dead[u] && !seen[u]) {
            return Err(invalid("order must cover every live vertex"));
        }
        let no_avoid = vec![false; g.edge_count()];
        let mut plans = Vec::with_capacity(order.len());
        for &v in order {
            let mut stop = dead.clone();
            stop[v.0] = true;
            let k = exit_kernel(g, &stop, &no_avoid)?;
            let h = |u: VertexId| if dead[u.0] { 0.0 } else { k[(u.0, v.0)] };
            let mut table = vec![Vec::new(); n];
            let mut p = 0.0;
            for u in g.vertices() {
                if dead[u.0] {
                    continue;
                }
                let mut acc = 0.0;
                let mut row = Vec::new();
                for s in g.steps_from(u) {
                    let w = step_probability(g, *s) * h(g.head(*s));
                    if w > 0.0 {
                        acc += w;
                        row.push((*s, acc));
                    }
                }
                if u == v {
                    p = acc;
                }
                if acc > 0.0 {
                    for r in row.iter_mut() {
                        r.1 /= acc;
                    }
                }
                table[u.0] = row;
            }
            plans.push(VertexPlan { v, p, table });
            dead[v.0] = true;
        }
        let head = g.edges().iter().map(|e| (e.a.0, e.b.0)).collect();
        Ok(SoupSampler { plans, head })
    }

    /// Return probabilities used for each processed vertex, in order.
    pub fn return_probabilities(&self) -> Vec<(VertexId, f64)> {
        self.plans.iter().map(|p| (p.v, p.p)).collect()
    }

    fn step_head(&self, s: Step) -> usize {
        let (a, b) = self.head[s.edge.0];
        if s.forward {
            b
        } else {
            a
        }
    }

    fn excursion(&self, plan: &VertexPlan, rng: &mut Rng) -> Vec<Step> {
        let mut out = Vec::new();
        let mut u = plan.v.0;
        loop {
            let row = &plan.table[u];
            let x: f64 = rng.random();
            let idx = row.partition_point(|(_, c)| *c <= x).min(row.len() - 1);
            let s = row[idx].0;
            out.push(s);
            u = self.step_head(s);
            if u == plan.v.0 {
                return out;
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> LoopConfig {
        let mut loops = Vec::new();
        for plan in &self.plans {
            let k = sample_visits(plan.p, rng) as usize;
            if k == 0 {
                continue;
            }
            let exc: Vec<Vec<Step>> = (0..k).map(|_| self.excursion(plan, rng)).collect();
            // ends 2i (departure) and 2i+1 (return) of excursion i, paired uniformly
            let mut ends: Vec<usize> = (0..2 * k).collect();
            dist::shuffle(rng, &mut ends);
            let mut mate = vec![0usize; 2 * k];
            for pair in ends.chunks(2) {
                mate[pair[0]] = pair[1];
                mate[pair[1]] = pair[0];
            }
            let mut used = vec![false; k];
            for first in 0..k {
                if used[first] {
                    continue;
                }
                let mut steps = Vec::new();
                let mut enter = 2 * first;
                loop {
                    let i = enter / 2;
                    used[i] = true;
                    let leave = if enter % 2 == 0 {
                        steps.extend_from_slice(&exc[i]);
                        2 * i + 1
                    } else {
                        steps.extend(exc[i].iter().rev().map(|s| s.reversed()));
                        2 * i
                    };
                    let next = mate[leave];
                    if next == 2 * first {
                        break;
                    }
                    enter = next;
                }
                loops.push(DiscreteLoop::canonical(steps));
            }
        }
        LoopConfig { loops }
    }
}

/// One-shot convenience wrapper around [`SoupSampler`].
pub fn sample_discrete_soup(g: &MetricGraph, rng: &mut Rng) -> Result<LoopConfig> {
    Ok(SoupSampler::new(g)?.sample(rng))
}

/// Local times at vertices given the discrete configuration:
/// `gamma(k_v + 1/2, rate a_v / 2)`, zero at the sink.
pub fn sample_vertex_local_times(g: &MetricGraph, visits: &[u32], rng: &mut Rng) -> Vec<f64> {
    g.vertices()
        .map(|v| {
            if v == g.sink() {
                0.0
            } else {
                dist::gamma(rng, visits[v.0] as f64 + 0.5, 2.0 / g.rate(v))
            }
        })
        .collect()
}

fn symmetric_walk_spectrum(g: &MetricGraph) -> Vec<f64> {
    let idx: Vec<usize> = g.interior().map(|v| v.0).collect();
    let mut dead = vec![false; g.vertex_count()];
    dead[g.sink().0] = true;
    let p = killed_transition_matrix(g, &dead);
    let m = idx.len();
    let s = DMatrix::from_fn(m, m, |i, j| {
        let (u, w) = (idx[i], idx[j]);
        p[(u, w)] * (g.rate(VertexId(u)) / g.rate(VertexId(w))).sqrt()
    });
    let s = (&s + s.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().collect()
}

/// Total mass of the unoriented loop measure, `-1/2 log det(I - P)`.
pub fn total_loop_mass(g: &MetricGraph) -> f64 {
    symmetric_walk_spectrum(g).iter().map(|l| -0.5 * (1.0 - l).ln()).sum()
}

/// Mass of loops with more than `cap` steps.
pub fn tail_loop_mass(g: &MetricGraph, cap: usize) -> f64 {
    symmetric_walk_spectrum(g)
        .iter()
        .map(|&l| {
            let mut head = 0.0;
            let mut pw = 1.0;
            for n in 1..=cap {
                pw *= l;
                head += pw / n as f64;
            }
            0.5 * (-(1.0 - l).ln() - head)
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct LoopOracle {
    pub loops: Vec<(DiscreteLoop, f64)>,
    /// Mass of the loops longer than the cap, which are left out.
    pub tail_mass: f64,
    pub total_mass: f64,
}

/// All loops with at most `cap` steps with their masses.
pub fn enumerate_loops_oracle(g: &MetricGraph, cap: usize) -> Result<LoopOracle> {
    let live: Vec<VertexId> = g.interior().collect();
    // number of walks of each length bounds the work
    let mut count = vec![1.0f64; g.vertex_count()];
    count[g.sink().0] = 0.0;
    let mut total = 0.0;
    for _ in 0..cap {
        let mut next = vec![0.0; g.vertex_count()];
        for &u in &live {
            for s in g.steps_from(u) {
                next[u.0] += count[g.head(*s).0];
            }
        }
        count = next;
        total += count.iter().sum::<f64>();
    }
    if total > 2e7 {
        return Err(Error::TooLarge(format!("about {total:.0} walks up to length {cap}")));
    }
    let mut seen: HashSet<DiscreteLoop> = HashSet::new();
    let mut path: Vec<Step> = Vec::with_capacity(cap);
    fn walk(
        g: &MetricGraph,
        start: VertexId,
        at: VertexId,
        cap: usize,
        path: &mut Vec<Step>,
        seen: &mut HashSet<DiscreteLoop>,
    ) {
        if path.len() == cap {
            return;
        }
        for s in g.steps_from(at) {
            let w = g.head(*s);
            if w == g.sink() {
                continue;
            }
            path.push(*s);
            if w == start {
                seen.insert(DiscreteLoop::canonical(path.clone()));
            }
            walk(g, start, w, cap, path, seen);
            path.pop();
        }
    }
    for &u in &live {
        walk(g, u, u, cap, &mut path, &mut seen);
    }
    let mut loops: Vec<(DiscreteLoop, f64)> = seen
        .into_iter()
        .map(|l| {
            let m = l.mass(g);
            (l, m)
        })
        .collect();
    loops.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(LoopOracle { loops, tail_mass: tail_loop_mass(g, cap), total_mass: total_loop_mass(g) })
}

/// Independent Poisson number of copies of every enumerated loop.
pub fn sample_soup_oracle(oracle: &LoopOracle, rng: &mut Rng) -> LoopConfig {
    let mut loops = Vec::new();
    for (l, m) in &oracle.loops {
        for _ in 0..dist::poisson(rng, *m) {
            loops.push(l.clone());
        }
    }
    LoopConfig { loops }
}

/// Chi-square of the number of visits to `v` against its exact law.
pub fn visit_law_check(g: &MetricGraph, v: VertexId, reps: u64, seed: u64) -> Result<StatReport> {
    if v == g.sink() || v.0 >= g.vertex_count() {
        return Err(invalid("visit law needs an interior vertex"));
    }
    let p = crate::harmonic::return_probability(g, v, &[])?;
    let sampler = SoupSampler::new(g)?;
    let visits = map_reps(seed, "visit-law", reps, |rng, _| sampler.sample(rng).visits(g)[v.0]);
    let top = visits.iter().copied().max().unwrap_or(0) as usize;
    let mut observed = vec![0u64; top + 2];
    for k in visits {
        observed[k as usize] += 1;
    }
    let mut probs: Vec<f64> = (0..=top as u32).map(|k| visits_pmf(p, k)).collect();
    probs.push((1.0 - probs.iter().sum::<f64>()).max(0.0));
    let chi = chi_square_gof(&observed, &probs, 5.0);
    let mut report = StatReport::new("visit-law", seed);
    report.param("reps", reps).param("vertex", g.name(v)).param("return_probability", p).param("dof", chi.dof as u64);
    report.p_value(&format!("chi-square visits at {}", g.name(v)), chi.statistic, reps, chi.p_value);
    Ok(report)
}

/// Total variation between the crossing-number laws of the vertex-by-vertex
/// sampler and of independent Poisson counts of every enumerated loop up to
/// `cap` steps. Also compares each side with the exact crossing law when the
/// graph is small enough.
pub fn oracle_check(g: &MetricGraph, cap: usize, reps: u64, seed: u64) -> Result<StatReport> {
    let oracle = enumerate_loops_oracle(g, cap)?;
    let sampler = SoupSampler::new(g)?;
    let edges: Vec<crate::graph::EdgeId> = g.edge_ids().filter(|e| !g.is_sink_edge(*e)).collect();
    let project = |c: Vec<u32>| -> Vec<u32> { edges.iter().map(|e| c[e.0]).collect() };
    let histogram = |xs: Vec<Vec<u32>>| {
        let mut h: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        for x in xs {
            *h.entry(x).or_default() += 1;
        }
        h
    };
    let a = histogram(map_reps(seed, "oracle-sampler", reps, |rng, _| project(sampler.sample(rng).crossings(g))));
    let b = histogram(map_reps(seed, "oracle-enumerated", reps, |rng, _| project(sample_soup_oracle(&oracle, rng).crossings(g))));
    let mut report = StatReport::new("oracle", seed);
    report.param("reps", reps).param("cap", cap as u64).param("tail_mass", oracle.tail_mass);
    report.param("enumerated_loops", oracle.loops.len() as u64);
    report.flag("truncated mass below 1e-3", oracle.tail_mass, oracle.tail_mass < 1e-3, reps);
    report.below("tv sampler vs enumeration", total_variation(&a, &b), 0.02, reps);
    if let Ok(law) = CrossingLaw::new(g, 12) {
        report.param("tv_sampler_exact", law.total_variation(&a));
        report.param("tv_enumeration_exact", law.total_variation(&b));
    }
    Ok(report)
}

type Poly = BTreeMap<Vec<u16>, f64>;

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<u16> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert(0.0) += ca * cb;
        }
    }
    out
}

/// Exact joint law of the crossing numbers of the non-sink edges, from the
/// generating function `E[prod z_e^n(e)] = sqrt(det(I-P) / det(I-P_z))`.
#[derive(Clone, Debug)]
pub struct CrossingLaw {
    pub edges: Vec<crate::graph::EdgeId>,
    pub max_per_edge: usize,
    pmf: Vec<f64>,
}

impl CrossingLaw {
    pub fn new(g: &MetricGraph, max_per_edge: usize) -> Result<Self> {
        let edges: Vec<_> =
            (0..g.edge_count()).map(crate::graph::EdgeId).filter(|e| !g.is_sink_edge(*e)).collect();
        let live: Vec<VertexId> = g.interior().collect();
        if live.len() > 7 || edges.len() > 6 {
            return Err(Error::TooLarge("crossing law is limited to tiny graphs".into()));
        }
        let m = edges.len();
        let var: HashMap<usize, usize> = edges.iter().enumerate().map(|(i, e)| (e.0, i)).collect();
        let k = live.len();
        let pos: HashMap<usize, usize> = live.iter().enumerate().map(|(i, v)| (v.0, i)).collect();
        let mut entries = vec![vec![Poly::new(); k]; k];
        for (i, row) in entries.iter_mut().enumerate() {
            row[i].insert(vec![0; m], 1.0);
        }
        for &u in &live {
            for s in g.steps_from(u) {
                let w = g.head(*s);
                if w == g.sink() {
                    continue;
                }
                let mut e = vec![0u16; m];
                e[var[&s.edge.0]] = 1;
                *entries[pos[&u.0]][pos[&w.0]].entry(e).or_insert(0.0) -= step_probability(g, *s);
            }
        }
        // Leibniz expansion of the determinant
        let mut det = Poly::new();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut add_term = |perm: &[usize]| {
            let mut sign = 1.0;
            let mut visited = vec![false; k];
            for i in 0..k {
                if !visited[i] {
                    let mut j = i;
                    let mut len = 0;
                    while !visited[j] {
                        visited[j] = true;
                        j = perm[j];
                        len += 1;
                    }
                    if len % 2 == 0 {
                        sign = -sign;
                    }
                }
            }
            if (0..k).any(|i| entries[i][perm[i]].is_empty()) {
                return;
            }
            let mut prod: Poly = BTreeMap::from([(vec![0u16; m], sign)]);
            for i in 0..k {
                prod = poly_mul(&prod, &entries[i][perm[i]]);
            }
            for (e, c) in prod {
                *det.entry(e).or_insert(0.0) += c;
            }
        };
        permutations(&mut perm, 0, &mut add_term);
        let det_at_one: f64 = det.values().sum();
        let terms: Vec<(Vec<u16>, usize, f64)> = det
            .iter()
            .filter(|(e, c)| e.iter().any(|x| *x > 0) && c.abs() > 0.0)
            .map(|(e, c)| (e.clone(), e.iter().map(|x| *x as usize).sum(), *c))
            .collect();
        let side = max_per_edge + 1;
        let cells = side.pow(m as u32);
        let mut series = vec![0.0; cells];
        series[0] = 1.0;
        let mut idx = vec![0usize; m];
        for lin in 1..cells {
            let mut r = lin;
            for d in (0..m).rev() {
                idx[d] = r % side;
                r /= side;
            }
            let total: usize = idx.iter().sum();
            let mut acc = 0.0;
            'terms: for (e, deg, c) in &terms {
                let mut off = 0;
                for d in 0..m {
                    let x = e[d] as usize;
                    if x > idx[d] {
                        continue 'terms;
                    }
                    off = off * side + (idx[d] - x);
                }
                acc += c * series[off] * (total as f64 - 0.5 * *deg as f64);
            }
            series[lin] = -acc / total as f64;
        }
        let norm = det_at_one.sqrt();
        let pmf = series.into_iter().map(|x| x * norm).collect();
        Ok(CrossingLaw { edges, max_per_edge, pmf })
    }

    /// Probability of a crossing vector indexed like `self.edges`.
    pub fn prob(&self, n: &[u32]) -> f64 {
        let side = self.max_per_edge + 1;
        let mut lin = 0;
        for &x in n {
            if x as usize > self.max_per_edge {
                return 0.0;
            }
            lin = lin * side + x as usize;
        }
        self.pmf[lin]
    }

    pub fn covered_mass(&self) -> f64 {
        self.pmf.iter().sum()
    }

    /// Crossing vector of the tracked edges from a full per-edge vector.
    pub fn project(&self, all: &[u32]) -> Vec<u32> {
        self.edges.iter().map(|e| all[e.0]).collect()
    }

    /// Total variation distance between an empirical law and this law.
    pub fn total_variation(&self, counts: &BTreeMap<Vec<u32>, u64>) -> f64 {
        let n: u64 = counts.values().sum();
        let mut tv = 0.0;
        let mut seen_mass = 0.0;
        for (k, c) in counts {
            let p = self.prob(k);
            seen_mass += p;
            tv += (*c as f64 / n as f64 - p).abs();
        }
        tv += (1.0 - seen_mass).max(0.0);
        0.5 * tv
    }
}

fn permutations(perm: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == perm.len() {
        f(perm);
        return;
    }
    for j in i..perm.len() {
        perm.swap(i, j);
        permutations(perm, i + 1, f);
        perm.swap(i, j);
    }
}
