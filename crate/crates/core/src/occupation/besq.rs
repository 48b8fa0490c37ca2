//! Squared Bessel bridges on a grid.

use rand::Rng as _;
use statrs::function::gamma::ln_gamma;

use crate::dist;
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// Squared norm of a multi-dimensional Brownian bridge (integer dimension).
    Radial,
    /// Exact free transitions accepted against the transition density to the end point.
    Sequential,
}

/// `points` equally spaced positions from 0 to `rho` inclusive.
pub fn uniform_grid(rho: f64, points: usize) -> Vec<f64> {
    let m = points.max(2) - 1;
    (0..=m).map(|i| rho * i as f64 / m as f64).collect()
}

pub(crate) fn check_grid(grid: &[f64], rho: f64) -> Result<()> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(invalid(format!("length must be positive, got {rho}")));
    }
    if grid.len() < 2 || grid[0] != 0.0 || (grid[grid.len() - 1] - rho).abs() > 1e-12 * rho {
        return Err(invalid("grid must start at 0 and end at the edge length"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("grid must be strictly increasing"));
    }
    Ok(())
}

/// `ln I_nu(w)` for `nu >= -1/2` or `nu = -1`.
pub fn ln_bessel_i(nu: f64, w: f64) -> f64 {
    let nu = if nu == -1.0 { 1.0 } else { nu };
    if w <= 0.0 {
        return if nu == 0.0 { 0.0 } else if nu > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    if nu == -0.5 {
        // sqrt(2/(pi w)) cosh w
        return 0.5 * (2.0 / (std::f64::consts::PI * w)).ln() + w + (-2.0 * w).exp().ln_1p()
            - std::f64::consts::LN_2;
    }
    if w > 60.0 + nu * nu {
        let mu = 4.0 * nu * nu;
        let x = 8.0 * w;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..8 {
            let kk = (2 * k - 1) as f64;
            term *= -(mu - kk * kk) / (k as f64 * x);
            sum += term;
        }
        return w - 0.5 * (2.0 * std::f64::consts::PI * w).ln() + sum.ln();
    }
    let half = 0.5 * w;
    let q = half * half;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + nu));
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    nu * half.ln() - ln_gamma(nu + 1.0) + sum.ln()
}

/// Log density at `y` of a BESQ(delta) started at `z` after time `t`
/// (continuous part; `y > 0`).
pub fn ln_transition_density(delta: f64, t: f64, z: f64, y: f64) -> f64 {
    let nu = 0.5 * delta - 1.0;
    if z <= 0.0 {
        if delta <= 0.0 {
            return f64::NEG_INFINITY;
        }
        return nu * y.ln() - (nu + 1.0) * (2.0 * t).ln() - ln_gamma(nu + 1.0) - y / (2.0 * t);
    }
    -(2.0 * t).ln() + 0.5 * nu * (y.ln() - z.ln()) - (z + y) / (2.0 * t)
        + ln_bessel_i(nu, (z * y).sqrt() / t)
}

/// Unit vector in `R^d` from the von Mises-Fisher law with mean direction
/// `e_1` and concentration `kappa`.
pub fn sample_vmf(d: usize, kappa: f64, rng: &mut Rng) -> Vec<f64> {
    if d == 1 {
        let p_plus = 1.0 / (1.0 + (-2.0 * kappa).exp());
        return vec![if dist::bernoulli(rng, p_plus) { 1.0 } else { -1.0 }];
    }
    let w = if d == 3 {
        let u: f64 = rng.random();
        if kappa < 1e-12 {
            2.0 * u - 1.0
        } else {
            (1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa).clamp(-1.0, 1.0)
        }
    } else {
        let m1 = (d - 1) as f64;
        let b = m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + m1 * (1.0 - x0 * x0).ln();
        loop {
            let z = dist::beta(rng, 0.5 * m1, 0.5 * m1);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u = dist::unit_open(rng);
            if kappa * w + m1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        }
    };
    let mut v: Vec<f64> = (0..d - 1).map(|_| dist::normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = (1.0 - w * w).max(0.0).sqrt();
    let mut out = vec![w];
    for x in v.iter_mut() {
        out.push(r * *x / norm);
    }
    out
}

/// One-dimensional Brownian bridge from `start` at 0 to `end` at `rho`,
/// observed at the sorted `points` (which must include 0 and `rho`).
pub fn brownian_bridge(points: &[f64], start: f64, end: f64, rho: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut x = start;
    out.push(x);
    for i in 1..points.len() {
        let (s, s1) = (points[i - 1], points[i]);
        if i == points.len() - 1 {
            x = end;
        } else {
            let left = rho - s;
            let dt = s1 - s;
            let mean = x + (end - x) * dt / left;
            let var = dt * (rho - s1) / left;
            x = mean + var.max(0.0).sqrt() * dist::normal(rng);
        }
        out.push(x);
    }
    out
}

fn radial(d: usize, x: f64, y: f64, rho: f64, grid: &[f64], rng: &mut Rng) -> Vec<f64> {
    let kappa = (x * y).sqrt() / rho;
    let dir = if y > 0.0 { sample_vmf(d, kappa, rng) } else { vec![0.0; d] };
    let mut out = vec![0.0; grid.len()];
    for (i, u) in dir.iter().enumerate() {
        let a = if i == 0 { x.sqrt() } else { 0.0 };
        let b = y.sqrt() * u;
        for (o, w) in out.iter_mut().zip(brownian_bridge(grid, a, b, rho, rng)) {
            *o += w * w;
        }
    }
    out[0] = x;
    let last = out.len() - 1;
    out[last] = y;
    out
}

/// BESQ(delta) from `x` conditioned to be at 0 at time `rho`: exact
/// transitions tilted by `exp(-z / (2 (rho - s)))`.
pub(crate) fn bridge_to_zero(delta: f64, x: f64, rho: f64, grid: &[f64], rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut z = x;
    out.push(z);
    for i in 1..grid.len() {
        if i == grid.len() - 1 {
            z = 0.0;
        } else {
            let tau = grid[i] - grid[i - 1];
            let rest = rho - grid[i];
            let shrink = 1.0 + tau / rest;
            let n = dist::poisson(rng, z / (2.0 * tau) / shrink);
            z = dist::gamma(rng, 0.5 * delta + n as f64, 2.0 * tau / shrink);
        }
        out.push(z);
    }
    out
}

/// Absorption time of a BESQ(0) started at `x`, conditioned to be absorbed
/// before `rho`.
pub(crate) fn absorption_time(x: f64, rho: f64, rng: &mut Rng) -> f64 {
    let u = dist::unit_open(rng);
    (x / (2.0 * (x / (2.0 * rho) - u.ln()))).min(rho)
}

/// BESQ(0) from `x` conditioned to be absorbed exactly at time `tau`,
/// observed on `grid` (zero from `tau` on).
pub(crate) fn first_passage(x: f64, tau: f64, grid: &[f64], rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut z = x;
    out.push(z);
    for i in 1..grid.len() {
        if grid[i] >= tau || z <= 0.0 {
            z = 0.0;
        } else {
            let step = grid[i] - grid[i - 1];
            let theta = 2.0 * step;
            let c = 1.0 / (2.0 * (tau - grid[i]));
            let shrink = 1.0 + c * theta;
            let n = 1 + dist::poisson(rng, z / (2.0 * step) / shrink);
            z = dist::gamma(rng, n as f64 + 1.0, theta / shrink);
        }
        out.push(z);
    }
    out
}

fn sequential(delta: f64, x: f64, y: f64, rho: f64, grid: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut z = x;
    out.push(z);
    for i in 1..grid.len() - 1 {
        let tau = grid[i] - grid[i - 1];
        let rest = rho - grid[i];
        let bound = likelihood_bound(delta, rest, y);
        let mut tries = 0u64;
        z = loop {
            tries += 1;
            let n = dist::poisson(rng, z / (2.0 * tau));
            let cand = dist::gamma(rng, 0.5 * delta + n as f64, 2.0 * tau);
            let ratio = (ln_transition_density(delta, rest, cand, y) - bound).exp();
            if ratio > 1.0 + 1e-9 {
                return Err(Error::Numerical("likelihood bound exceeded in bridge step".into()));
            }
            if dist::bernoulli(rng, ratio) {
                break cand;
            }
            if tries > 1_000_000 {
                return Err(Error::Rejection { what: "sequential bridge step".into(), attempts: tries });
            }
        };
        out.push(z);
    }
    out.push(y);
    Ok(out)
}

/// Upper bound of `z -> ln p_t(z, y)` over `z >= 0`.
fn likelihood_bound(delta: f64, t: f64, y: f64) -> f64 {
    let f = |u: f64| ln_transition_density(delta, t, u * u, y);
    let top = y.sqrt() + 12.0 * t.sqrt();
    let n = 400;
    let mut best = (0usize, f(0.0));
    for k in 1..=n {
        let v = f(top * k as f64 / n as f64);
        if v > best.1 {
            best = (k, v);
        }
    }
    let (mut lo, mut hi) = (
        top * (best.0.saturating_sub(1)) as f64 / n as f64,
        top * ((best.0 + 1).min(n)) as f64 / n as f64,
    );
    let mut m = best.1;
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        let (fa, fb) = (f(a), f(b));
        m = m.max(fa).max(fb);
        if fa > fb {
            hi = b;
        } else {
            lo = a;
        }
    }
    m + 1e-6
}

/// Squared Bessel bridge of dimension `delta` from `x` to `y` over `[0, rho]`,
/// observed on `grid`.
pub fn besq_bridge(
    delta: f64,
    x: f64,
    y: f64,
    rho: f64,
    grid: &[f64],
    route: Route,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_grid(grid, rho)?;
    if !(x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0) {
        return Err(invalid("bridge end points must be finite and non-negative"));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(invalid("dimension must be non-negative"));
    }
    if y == 0.0 {
        return Ok(bridge_to_zero(delta, x, rho, grid, rng));
    }
    if x == 0.0 && (route == Route::Sequential || delta == 0.0) {
        let rev: Vec<f64> = grid.iter().rev().map(|s| rho - s).collect();
        let mut v = bridge_to_zero(delta, y, rho, &rev, rng);
        v.reverse();
        return Ok(v);
    }
    match route {
        Route::Radial => {
            if delta < 1.0 || delta.fract() != 0.0 || delta > 4096.0 {
                return Err(invalid(format!("radial route needs an integer dimension >= 1, got {delta}")));
            }
            Ok(radial(delta as usize, x, y, rho, grid, rng))
        }
        Route::Sequential => sequential(delta, x, y, rho, grid, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats::ks_two_sample;

    #[test]
    fn bessel_values() {
        // I_0(1) = 1.2660658777520082, I_1(2) = 1.5906368546373291
        assert!((ln_bessel_i(0.0, 1.0).exp() - 1.2660658777520082).abs() < 1e-13);
        assert!((ln_bessel_i(1.0, 2.0).exp() - 1.5906368546373291).abs() < 1e-13);
        assert!((ln_bessel_i(-1.0, 2.0).exp() - 1.5906368546373291).abs() < 1e-13);
        // I_{1/2}(x) = sqrt(2/(pi x)) sinh x
        let x: f64 = 3.7;
        let exact = (2.0 / (std::f64::consts::PI * x)).sqrt() * x.sinh();
        assert!((ln_bessel_i(0.5, x).exp() / exact - 1.0).abs() < 1e-13);
        // continuity across the asymptotic switch
        let a = ln_bessel_i(1.0, 60.999);
        let b = ln_bessel_i(1.0, 61.001);
        assert!((a - b).abs() < 3e-3);
        assert!((ln_bessel_i(0.0, 80.0) - (80.0 - 0.5 * (2.0 * std::f64::consts::PI * 80.0f64).ln() + (1.0 + 1.0 / 640.0f64 + 9.0 / (2.0 * 640.0f64 * 640.0)).ln())).abs() < 1e-6);
    }

    #[test]
    fn transition_density_integrates_to_one() {
        for &(delta, z) in &[(1.0, 0.7), (2.0, 0.0), (3.0, 2.0), (4.0, 0.3)] {
            let t = 0.8;
            // substitute y = u^2 to remove the singularity at 0
            let h = 1e-4;
            let total: f64 = (1..80000)
                .map(|k| {
                    let u = k as f64 * h;
                    ln_transition_density(delta, t, z, u * u).exp() * 2.0 * u * h
                })
                .sum();
            assert!((total - 1.0).abs() < 5e-3, "delta {delta}: {total}");
        }
    }

    #[test]
    fn vmf_mean_cosine() {
        // E[w] for d = 3 is coth(k) - 1/k
        let k = 1.3f64;
        let n = 40_000;
        let mut rng = stream(5, "vmf", 0);
        let m: f64 = (0..n).map(|_| sample_vmf(3, k, &mut rng)[0]).sum::<f64>() / n as f64;
        assert!((m - (1.0 / k.tanh() - 1.0 / k)).abs() < 0.01);
        // d = 2: E[cos] = I_1(k)/I_0(k)
        let m2: f64 = (0..n).map(|_| sample_vmf(2, k, &mut rng)[0]).sum::<f64>() / n as f64;
        let expect = (ln_bessel_i(1.0, k) - ln_bessel_i(0.0, k)).exp();
        assert!((m2 - expect).abs() < 0.01);
        let v = sample_vmf(4, 2.0, &mut rng);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn endpoints_are_pinned() {
        let grid = uniform_grid(1.5, 9);
        let mut rng = stream(1, "pin", 0);
        for route in [Route::Radial, Route::Sequential] {
            let v = besq_bridge(3.0, 0.4, 1.1, 1.5, &grid, route, &mut rng).unwrap();
            assert_eq!(v[0], 0.4);
            assert_eq!(*v.last().unwrap(), 1.1);
            assert!(v.iter().all(|x| *x >= 0.0));
        }
        let v = besq_bridge(0.0, 2.0, 0.0, 1.5, &grid, Route::Radial, &mut rng).unwrap();
        assert_eq!(*v.last().unwrap(), 0.0);
        assert!(besq_bridge(2.5, 1.0, 1.0, 1.5, &grid, Route::Radial, &mut rng).is_err());
        assert!(besq_bridge(1.0, 1.0, 1.0, 1.5, &[0.0, 1.0], Route::Radial, &mut rng).is_err());
    }

    #[test]
    fn zero_to_zero_mean_profile() {
        // BESQ(delta) bridge 0 -> 0 has mean delta s (rho - s) / rho
        let rho = 2.0;
        let grid = uniform_grid(rho, 5);
        let n = 20_000;
        let mut acc = vec![0.0; grid.len()];
        for i in 0..n {
            let v = besq_bridge(3.0, 0.0, 0.0, rho, &grid, Route::Radial, &mut stream(2, "zz", i)).unwrap();
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x / n as f64;
            }
        }
        for (s, m) in grid.iter().zip(&acc) {
            assert!((m - 3.0 * s * (rho - s) / rho).abs() < 0.05);
        }
    }

    #[test]
    fn routes_agree_at_midpoint() {
        let grid = uniform_grid(1.0, 5);
        for &(delta, x, y) in &[(1.0, 0.5, 1.5), (2.0, 1.0, 0.3), (3.0, 0.0, 1.0), (4.0, 0.8, 0.8)] {
            let n = 6000;
            let a: Vec<f64> = (0..n)
                .map(|i| besq_bridge(delta, x, y, 1.0, &grid, Route::Radial, &mut stream(3, "ra", i)).unwrap()[2])
                .collect();
            let b: Vec<f64> = (0..n)
                .map(|i| besq_bridge(delta, x, y, 1.0, &grid, Route::Sequential, &mut stream(3, "sq", i)).unwrap()[2])
                .collect();
            let (_, p) = ks_two_sample(&a, &b);
            assert!(p > 1e-3, "delta {delta}: p = {p}");
        }
    }

    #[test]
    fn absorbed_profile_is_exact_at_grid() {
        // BESQ(0) from x absorbed before rho: P(Z_s = 0) = exp(-x/(2s)) / exp(-x/(2 rho))
        let (x, rho) = (1.0, 1.0);
        let grid = uniform_grid(rho, 5);
        let n = 20_000;
        let mut zeros = vec![0usize; grid.len()];
        for i in 0..n {
            let mut rng = stream(4, "abs", i);
            let tau = absorption_time(x, rho, &mut rng);
            let v = first_passage(x, tau, &grid, &mut rng);
            for (z, val) in zeros.iter_mut().zip(&v) {
                *z += (*val == 0.0) as usize;
            }
        }
        for (k, s) in grid.iter().enumerate().skip(1) {
            let p = (-x / (2.0 * s)).exp() / (-x / (2.0 * rho)).exp();
            let f = zeros[k] as f64 / n as f64;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-3, "s {s}: {f} vs {p}");
        }
        // and the pathwise law agrees with the generic tilted bridge to zero
        let a: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = stream(5, "abs", i);
                let tau = absorption_time(x, rho, &mut rng);
                first_passage(x, tau, &grid, &mut rng)[1]
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|i| bridge_to_zero(0.0, x, rho, &grid, &mut stream(6, "abs", i))[1]).collect();
        assert!(ks_two_sample(&a, &b).1 > 1e-3);
    }
}
