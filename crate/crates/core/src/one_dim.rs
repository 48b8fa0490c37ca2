//! One-dimensional loop soups on an interval with prescribed end local
//! times, the perturbed reflected walk that traces them, and the killed
//! Kingman coalescent describing their crossing numbers.

use statrs::function::gamma::ln_gamma;

use crate::dist;
use crate::error::{invalid, Result};
use crate::occupation::{sample_edge_field, uniform_grid, EdgeField, ZeroRule};
use crate::report::StatReport;
use crate::rng::{map_reps, Rng};
use crate::stats::{chi_square_two_sample, mean_se};

/// Which one-dimensional soup the crossing number comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Even crossings, field unconditioned.
    Even,
    /// Even crossings, field conditioned to stay positive.
    EvenPositive,
    /// Odd crossings (one extra crossing added).
    Odd,
}

fn ln_cosh(x: f64) -> f64 {
    x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
}

fn ln_sinh(x: f64) -> f64 {
    x + (-(-2.0 * x).exp()).ln_1p() - std::f64::consts::LN_2
}

/// Probability of `m` crossings given `beta = sqrt(l1 l2) / rho`.
pub fn crossing_pmf(beta: f64, family: Family, m: u32) -> f64 {
    let odd = m % 2 == 1;
    match family {
        Family::Even if odd => 0.0,
        Family::EvenPositive if odd => 0.0,
        Family::Odd if !odd => 0.0,
        _ if beta <= 0.0 => match family {
            Family::Even => (m == 0) as u8 as f64,
            Family::Odd => (m == 1) as u8 as f64,
            Family::EvenPositive => 0.0,
        },
        _ => {
            let mf = m as f64;
            let base = mf * beta.ln() - ln_gamma(mf + 1.0);
            match family {
                Family::Even => (base - ln_cosh(beta)).exp(),
                Family::Odd => (base - ln_sinh(beta)).exp(),
                Family::EvenPositive if m == 0 => ((-(-beta).exp_m1()).ln() - ln_sinh(beta)).exp(),
                Family::EvenPositive => (base - ln_sinh(beta)).exp(),
            }
        }
    }
}

/// Samples a crossing number by inversion.
pub fn sample_crossings(beta: f64, family: Family, rng: &mut Rng) -> Result<u32> {
    if family == Family::EvenPositive && beta <= 0.0 {
        return Err(invalid("a field with a zero end value cannot stay positive"));
    }
    let start = if family == Family::Odd { 1 } else { 0 };
    let top = (beta + 40.0 * beta.sqrt() + 60.0) as u32;
    let mut u = dist::unit_open(rng);
    let mut m = start;
    while m <= top {
        u -= crossing_pmf(beta, family, m);
        if u <= 0.0 {
            return Ok(m);
        }
        m += 2;
    }
    Ok(m - 2)
}

/// Trace of a one-dimensional soup on `[0, rho]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneDimTrace {
    pub crossings: u32,
    pub budgets: (f64, f64),
    pub field: EdgeField,
    /// `int ds / field(s)`, infinite when the field vanishes.
    pub time_change: f64,
}

/// Trapezoidal `int ds / values(s)`; infinite if a value is below 1e-12.
pub fn time_change(grid: &[f64], values: &[f64]) -> f64 {
    if values.iter().any(|v| *v < 1e-12) {
        return f64::INFINITY;
    }
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(s, v)| 0.5 * (s[1] - s[0]) * (1.0 / v[0] + 1.0 / v[1]))
        .sum()
}

fn trace(rho: f64, l1: f64, l2: f64, grid: &[f64], family: Family, rng: &mut Rng) -> Result<OneDimTrace> {
    if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
        return Err(invalid("end local times must be finite and non-negative"));
    }
    let beta = (l1 * l2).sqrt() / rho;
    let crossings = sample_crossings(beta, family, rng)?;
    let rule = if family == Family::EvenPositive { ZeroRule::Avoid } else { ZeroRule::Sample };
    let field = sample_edge_field(rho, l1, l2, crossings, rule, grid, rng)?;
    let time_change = if field.zero_hit { f64::INFINITY } else { time_change(grid, &field.values) };
    Ok(OneDimTrace { crossings, budgets: (l1, l2), field, time_change })
}

/// Soup with even crossings; its field is a BESQ(1) bridge from `l1` to `l2`.
pub fn sample_b(rho: f64, l1: f64, l2: f64, grid: &[f64], rng: &mut Rng) -> Result<OneDimTrace> {
    trace(rho, l1, l2, grid, Family::Even, rng)
}

/// Even soup conditioned on a positive field.
pub fn sample_b_positive(rho: f64, l1: f64, l2: f64, grid: &[f64], rng: &mut Rng) -> Result<OneDimTrace> {
    trace(rho, l1, l2, grid, Family::EvenPositive, rng)
}

/// Soup with one extra crossing; its field is a BESQ(3) bridge from `l1` to `l2`.
pub fn sample_c(rho: f64, l1: f64, l2: f64, grid: &[f64], rng: &mut Rng) -> Result<OneDimTrace> {
    trace(rho, l1, l2, grid, Family::Odd, rng)
}

/// Number of blocks at time `t` of a coalescent started from `n0` blocks in
/// which each pair merges at rate 4 and each block dies at rate `kill`.
/// One exponential is drawn per level, so runs sharing a stream are
/// coupled monotonically in `kill`.
pub fn kingman_killed(t: f64, kill: f64, n0: u64, rng: &mut Rng) -> Result<u64> {
    if !(t > 0.0) {
        return Err(invalid(format!("coalescent time must be positive, got {t}")));
    }
    let mut b = n0;
    let mut clock = 0.0;
    while b > 0 {
        let bf = b as f64;
        let rate = 2.0 * bf * (bf - 1.0) + kill * bf;
        clock += -dist::unit_open(rng).ln() / rate;
        if clock > t {
            break;
        }
        b -= 1;
    }
    Ok(b)
}

/// Crossings and local times read off the perturbed reflected walk
/// `|S| - 2 L` (positive time) and `|S'| + 2 L'` (negative time) on a
/// lattice of spacing `h`, stopped when the local time at 0 reaches `l1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MuTrace {
    pub x0: f64,
    pub crossings: u32,
    pub zero_local_time: f64,
    pub end_local_time: f64,
    /// Lattice steps simulated inside the window.
    pub steps: u64,
}

/// `ln Gamma(x - 1/2) - ln Gamma(x)`.
fn ln_gamma_half_ratio(x: f64) -> f64 {
    if x < 1e4 {
        ln_gamma(x - 0.5) - ln_gamma(x)
    } else {
        -0.5 * x.ln() + 3.0 / (8.0 * x)
    }
}

/// Walk excursions from the bottom of the reflected walk each reach height
/// `2l` with probability `1/(2l)`, `l` growing by one per excursion.
/// Returns the value of `l` at the first success, starting from `l0`.
fn first_success_level(l0: f64, rng: &mut Rng) -> f64 {
    // survival(L) = P(no success with l in [l0, L)) = prod (1 - 1/(2j))
    let base = ln_gamma_half_ratio(l0);
    let ln_survival = |l: f64| ln_gamma_half_ratio(l) - base;
    let lu = dist::unit_open(rng).ln();
    // smallest j >= l0 with survival(j + 1) < u
    if ln_survival(l0 + 1.0) < lu {
        return l0;
    }
    let mut lo = l0;
    let mut hi = l0 + 1.0;
    while ln_survival(hi + 1.0) >= lu {
        lo = hi;
        hi = l0 + 2.0 * (hi - l0);
        if hi > 1e300 {
            return hi;
        }
    }
    while hi - lo > 1.0 && hi > lo * (1.0 + 1e-15) {
        let mid = (0.5 * (lo + hi)).floor();
        if ln_survival(mid + 1.0) < lu {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn mu_process_trace(rho: f64, l1: f64, h: f64, rng: &mut Rng) -> Result<MuTrace> {
    let n_rho = (rho / h).round() as i64;
    if n_rho < 1 || (n_rho as f64 * h - rho).abs() > 1e-9 * rho {
        return Err(invalid("lattice spacing must divide the interval length"));
    }
    let target = ((l1 / h).round() as u64).max(1);
    let coin = |rng: &mut Rng| dist::bernoulli(rng, 0.5);
    let mut visits0 = 0u64;
    let mut visits_end = 0u64;
    let mut crossings = 0;
    let mut at_zero_side = true;
    let mut steps = 0u64;
    // positive time; the walk sits at level 0 at the top of each iteration,
    // with `l` counting visits of the reflected walk to its bottom
    let mut l = 0.0f64;
    loop {
        visits0 += 1;
        if !at_zero_side {
            crossings += 1;
            at_zero_side = true;
        }
        if visits0 >= target {
            break;
        }
        if l == 0.0 {
            l = first_success_level(1.0, rng);
            continue;
        }
        if coin(rng) {
            // excursion above 0; time spent above the window is skipped
            let mut x = 1i64;
            steps += 1;
            while x > 0 {
                if x == n_rho {
                    visits_end += 1;
                    if at_zero_side {
                        crossings += 1;
                        at_zero_side = false;
                    }
                    if coin(rng) {
                        steps += 1;
                        continue;
                    }
                    x -= 1;
                } else {
                    x += if coin(rng) { 1 } else { -1 };
                }
                steps += 1;
            }
        } else if !dist::bernoulli(rng, (2.0 * l - 1.0) / (2.0 * l)) {
            l = first_success_level(l + 1.0, rng);
        }
    }
    // negative time: |S'| + 2 L' until it can no longer come back to the window end
    let (mut s, mut lt) = (0i64, 0i64);
    while 2 * lt <= n_rho {
        if s + 2 * lt >= n_rho {
            s = n_rho - 2 * lt;
            visits_end += 1;
        }
        if s == 0 {
            s = 1;
            lt += 1;
        } else {
            s += if coin(rng) { 1 } else { -1 };
        }
        steps += 1;
    }
    Ok(MuTrace {
        x0: 0.0,
        crossings,
        zero_local_time: visits0 as f64 * h,
        end_local_time: visits_end as f64 * h,
        steps,
    })
}

/// Options for [`crossing_law_check`].
#[derive(Clone, Debug)]
pub struct KingmanCheck {
    pub rho: f64,
    pub l1: f64,
    pub l2: f64,
    pub reps: u64,
    pub bins: usize,
    pub n0: u64,
    pub grid_points: usize,
}

impl Default for KingmanCheck {
    fn default() -> Self {
        KingmanCheck { rho: 1.0, l1: 1.0, l2: 1.0, reps: 20_000, bins: 5, n0: 2048, grid_points: 513 }
    }
}

fn binned_rows(report: &mut StatReport, label: &str, pairs: &[(f64, u64, u64)], bins: usize) {
    let mut sorted: Vec<&(f64, u64, u64)> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let per = sorted.len().div_ceil(bins.max(1));
    for (i, chunk) in sorted.chunks(per.max(1)).enumerate() {
        let len = chunk.iter().map(|p| p.1.max(p.2)).max().unwrap_or(0) as usize + 1;
        let mut a = vec![0u64; len];
        let mut b = vec![0u64; len];
        for p in chunk {
            a[p.1 as usize] += 1;
            b[p.2 as usize] += 1;
        }
        let t_lo = chunk.first().map(|p| p.0).unwrap_or(0.0);
        let t_hi = chunk.last().map(|p| p.0).unwrap_or(0.0);
        let c = chi_square_two_sample(&a, &b, 10);
        report.p_value(&format!("{label} bin {i} T in [{t_lo:.4}, {t_hi:.4}]"), c.statistic, chunk.len() as u64, c.p_value);
    }
    let diff: Vec<f64> = pairs.iter().map(|p| (p.1 == 0) as u8 as f64 - (p.2 == 0) as u8 as f64).collect();
    let (m, se) = mean_se(&diff);
    report.within_se(&format!("{label} P(no crossing pair) - P(no block)"), m, se, 3.0, 0.0, pairs.len() as u64);
}

/// Compares half the crossings of the positive even soup (and half of the
/// crossings minus one of the odd soup) with the killed coalescent run for
/// the soup's own time change.
pub fn crossing_law_check(opts: &KingmanCheck, seed: u64) -> Result<StatReport> {
    if !(opts.l1 > 0.0 && opts.l2 > 0.0) {
        return Err(invalid("both end local times must be positive"));
    }
    let grid = uniform_grid(opts.rho, opts.grid_points);
    let mut report = StatReport::new("kingman", seed);
    report
        .param("rho", opts.rho)
        .param("l1", opts.l1)
        .param("l2", opts.l2)
        .param("reps", opts.reps)
        .param("n0", opts.n0)
        .param("grid_points", opts.grid_points as u64);
    for (label, family, kill) in [("even", Family::EvenPositive, 1.0), ("odd", Family::Odd, 3.0)] {
        let results = map_reps(seed, &format!("kingman-{label}"), opts.reps, |rng, _| -> Result<Option<(f64, u64, u64)>> {
            let tr = trace(opts.rho, opts.l1, opts.l2, &grid, family, rng)?;
            if !tr.time_change.is_finite() {
                return Ok(None);
            }
            let half = (tr.crossings / 2) as u64;
            let blocks = kingman_killed(tr.time_change, kill, opts.n0, rng)?;
            Ok(Some((tr.time_change, half, blocks)))
        });
        let mut pairs = Vec::with_capacity(results.len());
        let mut dropped = 0;
        for r in results {
            match r? {
                Some(p) => pairs.push(p),
                None => dropped += 1,
            }
        }
        if dropped > 0 {
            report.note(format!("{label}: {dropped} samples with a vanishing grid value dropped"));
        }
        if pairs.len() < 200 {
            return Err(invalid("too few positive-field samples"));
        }
        binned_rows(&mut report, label, &pairs, opts.bins);
    }
    Ok(report)
}
