//! Exploration of the cluster of a vertex, edge by edge, and the check of
//! the stochastic differential equation satisfied by the square root of the
//! explored occupation field.

use nalgebra::DMatrix;

use crate::dist;
use crate::error::{invalid, Error, Result};
use crate::graph::{EdgeId, MetricGraph, VertexId};
use crate::loops::{sample_vertex_local_times, SoupSampler};
use crate::occupation::{sample_edge_field, sample_zero_hits, uniform_grid, ZeroRule};
use crate::report::StatReport;
use crate::rng::{map_reps, Rng};

/// One observation of the exploration.
#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub time: f64,
    pub edge: EdgeId,
    /// Distance from the first endpoint of the edge.
    pub position: f64,
    pub x: f64,
    /// Drift of the square-root field at this point.
    pub drift: f64,
    pub segment: usize,
}

/// One increment of the exploration together with the conditional mean and
/// variance that the drift equation predicts for it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStat {
    pub dt: f64,
    pub dx: f64,
    pub drift: f64,
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Exploration {
    pub points: Vec<TracePoint>,
    pub steps: Vec<StepStat>,
    pub jump_times: Vec<f64>,
    pub end_time: f64,
    pub explored: Vec<VertexId>,
}

impl Exploration {
    /// Rows `time,edge,position,x,segment`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,edge,position,x,segment\n");
        for p in &self.points {
            out.push_str(&format!("{:.9},{},{:.9},{:.9},{}\n", p.time, p.edge.0, p.position, p.x, p.segment));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum End {
    Vertex(VertexId),
    Fixed(f64),
    Frontier,
}

#[derive(Clone, Copy, Debug)]
enum Node {
    Fixed(f64),
    Unknown(usize),
    Frontier,
}

#[derive(Clone, Copy, Debug, Default)]
struct Geom {
    from_a: f64,
    val_a: f64,
    from_b: f64,
    val_b: f64,
    done: bool,
}

#[derive(Clone, Copy, Debug)]
struct Frontier {
    edge: EdgeId,
    forward: bool,
    dist: f64,
}

/// Brownian bridge refined on demand; the edge field is its square.
#[derive(Clone, Debug)]
struct LazyBridge {
    points: Vec<(f64, f64)>,
    guard_from_a: Option<f64>,
    guard_from_b: Option<f64>,
}

impl LazyBridge {
    fn value(&mut self, s: f64, rng: &mut Rng) -> f64 {
        let i = self.points.partition_point(|p| p.0 < s);
        if i < self.points.len() && self.points[i].0 == s {
            return self.points[i].1;
        }
        let (s0, w0) = self.points[i - 1];
        let (s1, w1) = self.points[i];
        let mean = w0 + (w1 - w0) * (s - s0) / (s1 - s0);
        let var = (s - s0) * (s1 - s) / (s1 - s0);
        let w = mean + var.max(0.0).sqrt() * dist::normal(rng);
        self.points.insert(i, (s, w));
        w
    }
}

#[derive(Clone, Debug)]
enum Source {
    Grid { step: f64, x: Vec<f64> },
    Lazy(LazyBridge),
}

struct Explorer<'a> {
    g: &'a MetricGraph,
    times: &'a [f64],
    crossings: &'a [u32],
    zero_hit: &'a [bool],
    h: f64,
    h_min: f64,
    geom: Vec<Geom>,
    known: Vec<Option<f64>>,
    sources: Vec<Option<Source>>,
}

impl<'a> Explorer<'a> {
    fn vertex_value(&self, v: VertexId) -> f64 {
        if v == self.g.sink() {
            0.0
        } else {
            self.times[v.0].sqrt()
        }
    }

    /// Unexplored part of an edge: its two ends and its length.
    fn core(&self, e: EdgeId, frontier: Option<Frontier>) -> Option<(End, End, f64)> {
        let gm = self.geom[e.0];
        if gm.done {
            return None;
        }
        let ed = self.g.edge(e);
        let rho = ed.length;
        let (mut lo, mut left) =
            if gm.from_a > 0.0 { (gm.from_a, End::Fixed(gm.val_a)) } else { (0.0, End::Vertex(ed.a)) };
        let (mut hi, mut right) =
            if gm.from_b > 0.0 { (rho - gm.from_b, End::Fixed(gm.val_b)) } else { (rho, End::Vertex(ed.b)) };
        if let Some(f) = frontier.filter(|f| f.edge == e) {
            if f.forward {
                lo = f.dist;
                left = End::Frontier;
            } else {
                hi = rho - f.dist;
                right = End::Frontier;
            }
        }
        Some((left, right, hi - lo))
    }

    fn resolve(&self, end: End, index: &[usize]) -> Node {
        match end {
            End::Fixed(x) => Node::Fixed(x),
            End::Frontier => Node::Frontier,
            End::Vertex(v) => match self.known[v.0] {
                Some(x) => Node::Fixed(x),
                None => Node::Unknown(index[v.0]),
            },
        }
    }

    /// Drift of the frontier value `x` is `a + b x`.
    fn coefficients(&self, f: Frontier, index: &[usize], unknowns: usize) -> Result<(f64, f64)> {
        let rho = self.g.length(f.edge);
        let (left, right, len) = self.core(f.edge, Some(f)).ok_or_else(|| invalid("frontier on a finished edge"))?;
        let len = len.max(1e-9 * rho);
        let far = if f.forward { right } else { left };
        match self.resolve(far, index) {
            Node::Fixed(x) => Ok((x / len, -1.0 / len)),
            Node::Frontier => Err(invalid("frontier faces itself")),
            Node::Unknown(k) => {
                let mut m = DMatrix::<f64>::zeros(unknowns, unknowns);
                let mut r = DMatrix::<f64>::zeros(unknowns, 2);
                for e in self.g.edge_ids() {
                    let Some((l, rr, len_e)) = self.core(e, Some(f)) else { continue };
                    let len_e = if e == f.edge { len } else { len_e };
                    if len_e <= 1e-12 {
                        continue;
                    }
                    let c = 1.0 / len_e;
                    let (nl, nr) = (self.resolve(l, index), self.resolve(rr, index));
                    for (x, y) in [(nl, nr), (nr, nl)] {
                        if let Node::Unknown(i) = x {
                            m[(i, i)] += c;
                            match y {
                                Node::Unknown(j) => m[(i, j)] -= c,
                                Node::Fixed(val) => r[(i, 0)] += c * val,
                                Node::Frontier => r[(i, 1)] += c,
                            }
                        }
                    }
                }
                let sol = m.lu().solve(&r).ok_or_else(|| Error::Numerical("singular exploration system".into()))?;
                Ok((sol[(k, 0)] / len, (sol[(k, 1)] - 1.0) / len))
            }
        }
    }

    fn unknown_index(&self) -> (Vec<usize>, usize) {
        let mut index = vec![usize::MAX; self.g.vertex_count()];
        let mut n = 0;
        for v in self.g.interior() {
            if self.known[v.0].is_none() {
                index[v.0] = n;
                n += 1;
            }
        }
        (index, n)
    }

    /// Conditional mean increment and variance over a step of length `dt`
    /// from value `x`, integrating the linear drift equation.
    fn step_model(&self, f: Frontier, dt: f64, x: f64, index: &[usize], n: usize) -> Result<(f64, f64)> {
        const SUB: usize = 4;
        let hs = dt / SUB as f64;
        let at = |tau: f64| self.coefficients(Frontier { dist: f.dist + tau, ..f }, index, n);
        let (mut m, mut v) = (x, 0.0);
        let mut c0 = at(0.0)?;
        for k in 0..SUB {
            let t0 = k as f64 * hs;
            let c1 = at(t0 + 0.5 * hs)?;
            let c2 = at(t0 + hs)?;
            let fm = |c: (f64, f64), y: f64| c.0 + c.1 * y;
            let fv = |c: (f64, f64), y: f64| 1.0 + 2.0 * c.1 * y;
            let k1 = (fm(c0, m), fv(c0, v));
            let k2 = (fm(c1, m + 0.5 * hs * k1.0), fv(c1, v + 0.5 * hs * k1.1));
            let k3 = (fm(c1, m + 0.5 * hs * k2.0), fv(c1, v + 0.5 * hs * k2.1));
            let k4 = (fm(c2, m + hs * k3.0), fv(c2, v + hs * k3.1));
            m += hs / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += hs / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            c0 = c2;
        }
        Ok((m - x, v.max(0.0)))
    }

    fn source(&mut self, e: EdgeId, rng: &mut Rng) -> Result<()> {
        if self.sources[e.0].is_some() {
            return Ok(());
        }
        let ed = self.g.edge(e).clone();
        let (a, b) = (self.vertex_value(ed.a), self.vertex_value(ed.b));
        let src = if self.zero_hit[e.0] {
            Source::Lazy(LazyBridge { points: vec![(0.0, a), (ed.length, -b)], guard_from_a: None, guard_from_b: None })
        } else {
            let points = ((ed.length / self.h).round() as usize + 1).max(2);
            let grid = uniform_grid(ed.length, points);
            let field = sample_edge_field(ed.length, a * a, b * b, self.crossings[e.0], ZeroRule::Avoid, &grid, rng)?;
            Source::Grid { step: ed.length / (points - 1) as f64, x: field.values.iter().map(|v| v.max(0.0).sqrt()).collect() }
        };
        self.sources[e.0] = Some(src);
        Ok(())
    }

    fn open_end(&self, explored: &[VertexId]) -> Option<(VertexId, EdgeId, bool)> {
        for &v in explored {
            for e in self.g.edge_ids() {
                let ed = self.g.edge(e);
                let gm = self.geom[e.0];
                if gm.done {
                    continue;
                }
                if ed.a == v && gm.from_a == 0.0 {
                    return Some((v, e, true));
                }
                if ed.b == v && gm.from_b == 0.0 {
                    return Some((v, e, false));
                }
            }
        }
        None
    }

    fn set_explored(&mut self, e: EdgeId, forward: bool, dist: f64, value: f64) {
        let rho = self.g.length(e);
        let gm = &mut self.geom[e.0];
        if forward {
            gm.from_a = dist;
            gm.val_a = value;
        } else {
            gm.from_b = dist;
            gm.val_b = value;
        }
        if gm.from_a + gm.from_b >= rho - 1e-12 {
            gm.done = true;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn segment(
        &mut self,
        start: VertexId,
        e: EdgeId,
        forward: bool,
        seg: usize,
        time: &mut f64,
        out: &mut Exploration,
        rng: &mut Rng,
    ) -> Result<()> {
        self.source(e, rng)?;
        let ed = self.g.edge(e).clone();
        let rho = ed.length;
        let to_a = |s: f64| if forward { s } else { rho - s };
        let mut pos = 0.0;
        let mut x = self.vertex_value(start);
        let mut grid_i = 0usize;
        loop {
            let (index, n) = self.unknown_index();
            let f = Frontier { edge: e, forward, dist: pos };
            let (left, right, len) = self.core(e, Some(f)).ok_or_else(|| invalid("exploring a finished edge"))?;
            let limit = pos + len;
            let far = self.resolve(if forward { right } else { left }, &index);
            let (ca, cb) = self.coefficients(f, &index, n)?;
            let drift = ca + cb * x;
            out.points.push(TracePoint { time: *time, edge: e, position: to_a(pos), x, drift, segment: seg });
            let source = self.sources[e.0].as_mut().expect("edge source prepared");
            let (next, stop_at_guard) = match source {
                Source::Grid { step, .. } => {
                    grid_i += 1;
                    ((grid_i as f64 * *step).min(limit), false)
                }
                Source::Lazy(lb) => {
                    let guard = if forward { lb.guard_from_b } else { lb.guard_from_a.map(|s| rho - s) };
                    let hk = (x * x / 16.0).clamp(self.h_min, self.h);
                    match guard {
                        Some(gs) if pos + hk >= gs => (gs, true),
                        _ => ((pos + hk).min(limit), false),
                    }
                }
            };
            let dt = next - pos;
            if next >= limit - 1e-12 {
                if let Node::Fixed(xf) = far {
                    out.steps.push(StepStat { dt, dx: xf - x, drift, mean: xf - x, var: 0.0 });
                    *time += dt;
                    x = xf;
                    pos = limit;
                    out.points.push(TracePoint { time: *time, edge: e, position: to_a(pos), x, drift: 0.0, segment: seg });
                    break;
                }
            }
            let x_next = match self.sources[e.0].as_mut().expect("edge source prepared") {
                Source::Grid { x: xs, .. } => {
                    let i = if forward { grid_i } else { xs.len() - 1 - grid_i };
                    xs[i]
                }
                Source::Lazy(lb) => {
                    let w = lb.value(to_a(next), rng);
                    if forward {
                        w
                    } else {
                        -w
                    }
                }
            };
            if let Some(Source::Lazy(lb)) = self.sources[e.0].as_mut() {
                let hit = x_next <= 0.0 || dist::bernoulli(rng, (-2.0 * x * x_next / dt).exp());
                if hit {
                    let z = if x_next <= 0.0 { pos + dt * x / (x - x_next) } else { pos + 0.5 * dt };
                    if forward {
                        lb.guard_from_a = Some(to_a(next));
                    } else {
                        lb.guard_from_b = Some(to_a(next));
                    }
                    let dz = z - pos;
                    out.steps.push(StepStat { dt: dz, dx: -x, drift, mean: drift * dz, var: dz });
                    *time += dz;
                    out.points.push(TracePoint { time: *time, edge: e, position: to_a(z), x: 0.0, drift: 0.0, segment: seg });
                    self.set_explored(e, forward, z, 0.0);
                    return Ok(());
                }
            }
            let (mean, var) = self.step_model(f, dt, x, &index, n)?;
            out.steps.push(StepStat { dt, dx: x_next - x, drift, mean, var });
            *time += dt;
            pos = next;
            x = x_next;
            if stop_at_guard {
                let (index, n) = self.unknown_index();
                let (_, _, len) = self.core(e, Some(Frontier { edge: e, forward, dist: pos })).expect("edge open");
                let ca = self.coefficients(Frontier { edge: e, forward, dist: pos }, &index, n)?;
                out.points.push(TracePoint {
                    time: *time,
                    edge: e,
                    position: to_a(pos),
                    x,
                    drift: ca.0 + ca.1 * x,
                    segment: seg,
                });
                out.steps.push(StepStat { dt: len, dx: -x, drift: ca.0 + ca.1 * x, mean: -x, var: 0.0 });
                *time += len;
                pos += len;
                x = 0.0;
                out.points.push(TracePoint { time: *time, edge: e, position: to_a(pos), x, drift: 0.0, segment: seg });
                break;
            }
            if pos >= limit - 1e-12 {
                out.points.push(TracePoint { time: *time, edge: e, position: to_a(pos), x, drift: 0.0, segment: seg });
                break;
            }
        }
        self.set_explored(e, forward, rho, x);
        self.geom[e.0].done = true;
        let other = if forward { ed.b } else { ed.a };
        if pos >= rho - 1e-12 && self.known[other.0].is_none() {
            self.known[other.0] = Some(self.vertex_value(other));
            out.explored.push(other);
        }
        Ok(())
    }
}

/// Explores the cluster of `start` with step `h`, replaying an occupation
/// field described by vertex local times, crossing counts and zero events.
/// Edges that vanish are refined near their zeros.
pub fn explore_cluster(
    g: &MetricGraph,
    start: VertexId,
    h: f64,
    times: &[f64],
    crossings: &[u32],
    zero_hit: &[bool],
    rng: &mut Rng,
) -> Result<Exploration> {
    if start == g.sink() || start.0 >= g.vertex_count() {
        return Err(invalid("exploration must start at an interior vertex"));
    }
    if !(h > 0.0) {
        return Err(invalid("exploration step must be positive"));
    }
    if times[start.0] <= 0.0 {
        return Err(invalid("exploration starts at a vertex with zero local time"));
    }
    let mut known = vec![None; g.vertex_count()];
    known[g.sink().0] = Some(0.0);
    known[start.0] = Some(times[start.0].sqrt());
    let mut ex = Explorer {
        g,
        times,
        crossings,
        zero_hit,
        h,
        h_min: h / 1024.0,
        geom: vec![Geom::default(); g.edge_count()],
        known,
        sources: vec![None; g.edge_count()],
    };
    let mut out = Exploration { explored: vec![start], ..Default::default() };
    let mut time = 0.0;
    let mut seg = 0;
    while let Some((v, e, forward)) = ex.open_end(&out.explored.clone()) {
        out.jump_times.push(time);
        ex.segment(v, e, forward, seg, &mut time, &mut out, rng)?;
        seg += 1;
    }
    out.end_time = time;
    Ok(out)
}

/// Two vertices joined by two parallel unit edges, the second one attached
/// to the sink by a unit edge.
pub fn two_edge_graph() -> MetricGraph {
    MetricGraph::from_edges(&["v", "w"], "s", &[("v", "w", 1.0), ("v", "w", 1.0), ("w", "s", 1.0)])
        .expect("valid graph")
}

#[derive(Clone, Debug)]
pub struct SdeCheck {
    pub reps: u64,
    /// Exploration step; defaults to the shortest edge over 32.
    pub step: Option<f64>,
    /// Start vertex name; defaults to the first interior vertex.
    pub start: Option<String>,
}

impl Default for SdeCheck {
    fn default() -> Self {
        SdeCheck { reps: 10_000, step: None, start: None }
    }
}

/// Regresses exploration increments on the integrated drift and compares
/// squared residuals with the predicted conditional variance.
pub fn sde_drift_check(g: &MetricGraph, opts: &SdeCheck, seed: u64) -> Result<StatReport> {
    let start = match &opts.start {
        Some(name) => g.vertex(name)?,
        None => g.interior().next().ok_or_else(|| invalid("graph has no interior vertex"))?,
    };
    let min_len = g.edges().iter().map(|e| e.length).fold(f64::INFINITY, f64::min);
    let h = opts.step.unwrap_or(min_len / 32.0);
    let sampler = SoupSampler::new(g)?;
    let runs = map_reps(seed, "sde", opts.reps, |rng, _| -> Result<Exploration> {
        let config = sampler.sample(rng);
        let crossings = config.crossings(g);
        let times = sample_vertex_local_times(g, &config.visits(g), rng);
        let hits = sample_zero_hits(g, &crossings, &times, rng);
        explore_cluster(g, start, h, &times, &crossings, &hits, rng)
    });
    let (mut sxm, mut smm, mut n) = (0.0, 0.0, 0u64);
    let mut steps = Vec::new();
    let (mut segments, mut end_time) = (0usize, 0.0);
    for r in runs {
        let r = r?;
        segments += r.jump_times.len();
        end_time += r.end_time;
        for s in r.steps {
            if s.var > 0.0 {
                sxm += s.mean * s.dx / s.var;
                smm += s.mean * s.mean / s.var;
                n += 1;
                steps.push(s);
            }
        }
    }
    let mut report = StatReport::new("sde", seed);
    report
        .param("reps", opts.reps)
        .param("step", h)
        .param("start", g.name(start))
        .param("random_steps", n)
        .param("mean_segments", segments as f64 / opts.reps as f64)
        .param("mean_end_time", end_time / opts.reps as f64);
    if n < 100 {
        report.flag("enough random steps", n as f64, false, n);
        return Ok(report);
    }
    let slope = sxm / smm;
    let resid: f64 = steps.iter().map(|s| (s.dx - slope * s.mean).powi(2) / s.var).sum::<f64>() / (n - 1) as f64;
    report.within_se("drift slope", slope, (resid / smm).sqrt(), 3.0, 1.0, n);
    let sv: f64 = steps.iter().map(|s| s.var).sum();
    let se2: f64 = steps.iter().map(|s| (s.dx - s.mean).powi(2)).sum();
    let ratio = se2 / sv;
    let spread: f64 = steps.iter().map(|s| ((s.dx - s.mean).powi(2) - ratio * s.var).powi(2)).sum::<f64>().sqrt() / sv;
    report.within_se("quadratic variation rate", ratio, spread, 3.0, 1.0, n);
    let total_dt: f64 = steps.iter().map(|s| s.dt).sum();
    report.param("euler_quadratic_variation_rate", steps.iter().map(|s| s.dx * s.dx).sum::<f64>() / total_dt);
    Ok(report)
}
