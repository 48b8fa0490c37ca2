//! Goodness-of-fit statistics.

use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..200 {
        let jf = j as f64;
        let term = sign * 2.0 * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    sum.clamp(0.0, 1.0)
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov-Smirnov test against `cdf`; returns `(D, p)`.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let f = cdf(*v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    (d, ks_p(d, n))
}

/// Two-sample Kolmogorov-Smirnov test; returns `(D, p)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    (d, ks_p(d, n * m / (n + m)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi_p(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64).map(|c| c.sf(stat)).unwrap_or(f64::NAN)
}

/// Pearson goodness of fit of `observed` counts against `probs`.
/// Cells with expected count below `min_expected` are pooled into one.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> ChiSquare {
    let n: u64 = observed.iter().sum();
    let total_p: f64 = probs.iter().sum();
    let mut cells = Vec::new();
    let (mut po, mut pe) = (0.0, 0.0);
    for (o, p) in observed.iter().zip(probs) {
        let e = n as f64 * p / total_p;
        if e < min_expected {
            po += *o as f64;
            pe += e;
        } else {
            cells.push((*o as f64, e));
        }
    }
    if pe > 0.0 {
        if pe < min_expected && !cells.is_empty() {
            let last = cells.last_mut().unwrap();
            last.0 += po;
            last.1 += pe;
        } else {
            cells.push((po, pe));
        }
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    ChiSquare { statistic, dof, p_value: chi_p(statistic, dof) }
}

/// Chi-square test that two count vectors share one distribution.
/// Categories with fewer than `min_total` combined counts are pooled.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], min_total: u64) -> ChiSquare {
    let len = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for i in 0..len {
        let (x, y) = (get(a, i), get(b, i));
        if x + y < min_total as f64 {
            pool.0 += x;
            pool.1 += y;
        } else {
            cells.push((x, y));
        }
    }
    if pool.0 + pool.1 > 0.0 {
        cells.push(pool);
    }
    let na: f64 = cells.iter().map(|c| c.0).sum();
    let nb: f64 = cells.iter().map(|c| c.1).sum();
    if na == 0.0 || nb == 0.0 {
        return ChiSquare { statistic: 0.0, dof: 0, p_value: 1.0 };
    }
    let (ka, kb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let mut statistic = 0.0;
    let mut used = 0usize;
    for (x, y) in &cells {
        if x + y > 0.0 {
            statistic += (ka * x - kb * y).powi(2) / (x + y);
            used += 1;
        }
    }
    let dof = used.saturating_sub(1);
    ChiSquare { statistic, dof, p_value: chi_p(statistic, dof) }
}

/// Dispersion test of Poisson counts: `sum (x - mean)^2 / mean` against
/// chi-square with `n - 1` degrees of freedom. Returns the two-sided p-value.
pub fn poisson_dispersion(counts: &[u64]) -> ChiSquare {
    let n = counts.len();
    let mean = counts.iter().sum::<u64>() as f64 / n as f64;
    if n < 2 || mean == 0.0 {
        return ChiSquare { statistic: 0.0, dof: n.saturating_sub(1), p_value: 1.0 };
    }
    let statistic: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / mean;
    let dof = n - 1;
    let sf = chi_p(statistic, dof);
    ChiSquare { statistic, dof, p_value: (2.0 * sf.min(1.0 - sf)).min(1.0) }
}

/// Mean and standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Variance-to-mean ratio with its delta-method standard error.
pub fn dispersion_ratio(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let central = |p: i32| x.iter().map(|v| (v - m).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    if m <= 0.0 || n < 2.0 {
        return (f64::NAN, f64::INFINITY);
    }
    let s2 = m2 * n / (n - 1.0);
    let ratio = s2 / m;
    let var_s2 = (m4 - m2 * m2) / n;
    let cov = m3 / n;
    let var_m = m2 / n;
    let var = var_s2 / (m * m) - 2.0 * s2 * cov / m.powi(3) + s2 * s2 * var_m / m.powi(4);
    (ratio, var.max(0.0).sqrt())
}

/// Total variation distance between two empirical distributions on the same keys.
pub fn total_variation<K: Ord>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> f64 {
    let na = a.values().sum::<u64>().max(1) as f64;
    let nb = b.values().sum::<u64>().max(1) as f64;
    let mut keys: Vec<&K> = a.keys().collect();
    keys.extend(b.keys().filter(|k| !a.contains_key(*k)));
    0.5 * keys
        .into_iter()
        .map(|k| {
            let pa = a.get(k).copied().unwrap_or(0) as f64 / na;
            let pb = b.get(k).copied().unwrap_or(0) as f64 / nb;
            (pa - pb).abs()
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist;
    use crate::rng::stream;

    #[test]
    fn poisson_dispersion_ratio_is_one() {
        let mut rng = stream(11, "disp", 0);
        let n = 40_000;
        let x: Vec<f64> = (0..n).map(|_| dist::poisson(&mut rng, 1.5) as f64).collect();
        let (r, se) = dispersion_ratio(&x);
        assert!((se - (2.0 / n as f64).sqrt()).abs() < 0.2 * se, "{se}");
        assert!((r - 1.0).abs() < 3.0 * se, "{r} {se}");
        let y: Vec<f64> = (0..n).map(|_| 2.0 * dist::poisson(&mut rng, 1.5) as f64).collect();
        let (r, se) = dispersion_ratio(&y);
        assert!((r - 2.0).abs() < 3.0 * se, "{r} {se}");
    }

    #[test]
    fn kolmogorov_reference_values() {
        // P(K > 1.36) ~ 0.0493, P(K > 1.0) ~ 0.2700
        assert!((kolmogorov_q(1.36) - 0.04930).abs() < 2e-4);
        assert!((kolmogorov_q(1.0) - 0.26999967).abs() < 1e-6);
    }

    #[test]
    fn ks_uniform_passes_and_shift_fails() {
        let mut rng = stream(1, "ks", 0);
        let u: Vec<f64> = (0..5000).map(|_| dist::unit_open(&mut rng)).collect();
        assert!(ks_one_sample(&u, |x| x.clamp(0.0, 1.0)).1 > 1e-3);
        let s: Vec<f64> = u.iter().map(|x| x * 0.9).collect();
        assert!(ks_one_sample(&s, |x| x.clamp(0.0, 1.0)).1 < 1e-6);
        let v: Vec<f64> = (0..5000).map(|_| dist::unit_open(&mut rng)).collect();
        assert!(ks_two_sample(&u, &v).1 > 1e-3);
        assert!(ks_two_sample(&u, &s).1 < 1e-4);
    }

    #[test]
    fn chi_square_basic() {
        let c = chi_square_gof(&[50, 50], &[0.5, 0.5], 5.0);
        assert_eq!(c.statistic, 0.0);
        assert_eq!(c.dof, 1);
        let c = chi_square_gof(&[90, 10], &[0.5, 0.5], 5.0);
        assert!(c.p_value < 1e-10);
        let t = chi_square_two_sample(&[30, 70], &[300, 700], 1);
        assert!(t.statistic.abs() < 1e-12 && t.p_value > 0.99);
    }

    #[test]
    fn dispersion_of_poisson_counts() {
        let mut rng = stream(2, "disp", 0);
        let c: Vec<u64> = (0..2000).map(|_| dist::poisson(&mut rng, 3.0)).collect();
        assert!(poisson_dispersion(&c).p_value > 1e-3);
        let over: Vec<u64> = (0..2000).map(|i| if i % 2 == 0 { 0 } else { 6 }).collect();
        assert!(poisson_dispersion(&over).p_value < 1e-6);
    }
}
