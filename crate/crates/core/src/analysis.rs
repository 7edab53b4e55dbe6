//! TOF velocity estimator, temperatures, lifetime fit, and cooling yield.

use serde::{Deserialize, Serialize};

use crate::detection::{rising_edge_cumulative, TofSignal};
use crate::dynamics::MoleculeState;
use crate::error::{invalid, Result, TrapError};
use crate::num::{consts, Real};

/// Mean velocity from a cumulative rising edge `S(t)`:
///
/// ```text
/// ⟨v⟩ = L · [ ∫_{t_first}^{t_end} S(t)/t² dt + 1/t_end ]
/// ```
///
/// with the integral by the trapezoid rule and `S = 0` before `t_first`, the first
/// point where `S > 0`. `S` must be non-decreasing and end at 1; an all-zero curve
/// gives 0.
pub fn mean_velocity_from_cumulative<T: Real>(points: &[(T, T)], guide_length: T) -> Result<T> {
    if !(guide_length > T::zero()) {
        return Err(invalid("guide_length must be positive"));
    }
    let tol = T::lit(1e-9);
    for w in points.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(TrapError::Data("cumulative times must be strictly increasing".into()));
        }
        if w[1].1 < w[0].1 - tol {
            return Err(TrapError::Data("cumulative signal is not monotone".into()));
        }
    }
    let Some(first) = points.iter().position(|p| p.1 > T::zero()) else {
        return Ok(T::zero());
    };
    let (t_end, s_end) = points[points.len() - 1];
    if (s_end - T::one()).abs() > tol {
        return Err(TrapError::Data(format!("cumulative signal ends at {s_end}, expected 1")));
    }
    if !(points[first].0 > T::zero()) {
        return Err(TrapError::Domain("first arrival at t <= 0".into()));
    }
    let f = |p: &(T, T)| p.1 / (p.0 * p.0);
    let integral = points[first..]
        .windows(2)
        .fold(T::zero(), |acc, w| acc + (w[1].0 - w[0].0) * (f(&w[0]) + f(&w[1])) * T::half());
    Ok(guide_length * (integral + T::one() / t_end))
}

/// Applies [`mean_velocity_from_cumulative`] to the rising edge of a TOF signal.
pub fn mean_velocity_from_tof<T: Real>(signal: &TofSignal<T>) -> Result<T> {
    signal.validate()?;
    mean_velocity_from_cumulative(&rising_edge_cumulative(signal), signal.guide_length)
}

/// `T = m ⟨v⟩² / k_B`.
pub fn temperature_from_mean_velocity<T: Real>(mean_velocity: T, mass: T) -> T {
    mass * mean_velocity * mean_velocity / T::lit(consts::K_B)
}

/// `m ⟨v²⟩ / (3 k_B)` over the given molecules; zero for none.
pub fn kinetic_temperature<'a, T: Real>(states: impl IntoIterator<Item = &'a MoleculeState<T>>, mass: T) -> T {
    let (n, sum) = states
        .into_iter()
        .fold((0usize, T::zero()), |(n, s), m| (n + 1, s + m.vel.norm_sq()));
    if n == 0 {
        return T::zero();
    }
    mass * sum / (T::lit(3.0 * n as f64) * T::lit(consts::K_B))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions<T> {
    pub max_iterations: usize,
    pub tolerance: T,
    /// Residuals weighted by `1/sqrt(y)`.
    pub poisson_weights: bool,
    /// Lifetimes beyond this are reported as the cap and flagged.
    pub tau_cap: T,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: T::lit(1e-10), poisson_weights: false, tau_cap: T::lit(1e4) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFit<T> {
    pub tau: T,
    pub tau_err: T,
    pub amplitude: T,
    pub amplitude_err: T,
    /// `‖y − fit‖ / ‖y‖`.
    pub residual_norm: T,
    pub iterations: usize,
    pub capped: bool,
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() <= f64::MIN_POSITIVE || !det.is_finite() {
        return None;
    }
    Some([(b[0] * a[1][1] - b[1] * a[0][1]) / det, (a[0][0] * b[1] - a[1][0] * b[0]) / det])
}

/// Fits `y = A exp(−t/τ)` by Levenberg–Marquardt on `(A, k = 1/τ)`, started from a
/// log-linear least-squares guess. Uncertainties come from [`covariance_diagonal`].
/// Fitting the rate keeps a flat signal (`k → 0`) well conditioned.
pub fn fit_exponential_lifetime<T: Real>(points: &[(T, T)], options: &FitOptions<T>) -> Result<LifetimeFit<T>> {
    if points.len() < 3 {
        return Err(TrapError::Data(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|p| !(p.1 > T::zero()) || !p.0.is_finite() || !p.1.is_finite()) {
        return Err(TrapError::Data("signal values must be positive and finite".into()));
    }
    let t: Vec<f64> = points.iter().map(|p| p.0.to_f64_lossy()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.to_f64_lossy()).collect();
    let t_span = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(t_span > 0.0) {
        return Err(TrapError::Data("time points must not all coincide".into()));
    }
    let w: Vec<f64> = if options.poisson_weights {
        y.iter().map(|v| 1.0 / v.max(1e-300).sqrt()).collect()
    } else {
        vec![1.0; y.len()]
    };
    // work in scaled variables so the tolerance is dimensionless
    let y_scale = y.iter().cloned().fold(0.0, f64::max);
    let t0 = t[0];
    let ts: Vec<f64> = t.iter().map(|v| (v - t0) / t_span).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / y_scale).collect();

    // log-linear guess
    let n = ts.len() as f64;
    let (sx, sy) = ts.iter().zip(&ys).fold((0.0, 0.0), |(a, b), (x, v)| (a + x, b + v.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = ts
        .iter()
        .zip(&ys)
        .fold((0.0, 0.0), |(a, b), (x, v)| (a + (x - mx) * (v.ln() - my), b + (x - mx) * (x - mx)));
    let slope = sxy / sxx;
    let mut p = [(my - slope * mx).exp(), -slope];

    let cost = |p: &[f64; 2]| -> f64 {
        ts.iter()
            .zip(&ys)
            .zip(&w)
            .map(|((x, v), wi)| {
                let r = wi * (v - p[0] * (-p[1] * x).exp());
                r * r
            })
            .sum()
    };
    let normal = |p: &[f64; 2]| -> ([[f64; 2]; 2], [f64; 2]) {
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for ((x, v), wi) in ts.iter().zip(&ys).zip(&w) {
            let e = (-p[1] * x).exp();
            let j = [wi * e, -wi * p[0] * x * e];
            let r = wi * (v - p[0] * e);
            for a in 0..2 {
                jtr[a] += j[a] * r;
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        (jtj, jtr)
    };

    let tol = options.tolerance.to_f64_lossy();
    let mut lambda = 1e-3;
    let mut c = cost(&p);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal(&p);
        let mut accepted = false;
        while lambda < 1e20 {
            let a = [
                [jtj[0][0] * (1.0 + lambda), jtj[0][1]],
                [jtj[1][0], jtj[1][1] * (1.0 + lambda)],
            ];
            let Some(d) = solve2(a, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + d[0], p[1] + d[1]];
            let ct = cost(&trial);
            if ct.is_finite() && ct <= c {
                let small = d[0].abs() <= tol * p[0].abs().max(1e-300) && d[1].abs() <= tol * p[1].abs().max(1e-8);
                p = trial;
                c = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = small;
                break;
            }
            lambda *= 10.0;
        }
        // no downhill step left: already at the minimum to machine precision
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TrapError::Fit(format!("no convergence within {} iterations", options.max_iterations)));
    }
    // Undamped polish: the cost is flat to rounding near the minimum, the gradient is not.
    let mut last = f64::INFINITY;
    for _ in 0..8 {
        let (jtj, jtr) = normal(&p);
        let Some(d) = solve2(jtj, jtr) else { break };
        let size = (d[0] / p[0]).abs().max((d[1] / p[1].abs().max(1e-8)).abs());
        if !(size < last) || !(size < 1e-6) {
            break;
        }
        p = [p[0] + d[0], p[1] + d[1]];
        last = size;
    }
    c = cost(&p);
    if !(p[0] > 0.0) || !p[0].is_finite() || !p[1].is_finite() {
        return Err(TrapError::Fit("fit diverged".into()));
    }

    let (var_a, var_k) = covariance_diagonal(&ts, &ys, &w, p, c);

    // back to physical units: y = A exp(−k (t − t0)) with k in 1/t_span
    let k = p[1] / t_span;
    let k_err = var_k.sqrt() / t_span;
    let amplitude = p[0] * y_scale * (k * t0).exp();
    let amplitude_err = var_a.sqrt() * y_scale * (k * t0).exp();
    let cap = options.tau_cap.to_f64_lossy();
    let (tau, tau_err, capped) = if k <= 1.0 / cap {
        (cap, f64::INFINITY, true)
    } else {
        (1.0 / k, k_err / (k * k), false)
    };
    let y_norm = ys.iter().zip(&w).map(|(v, wi)| (wi * v).powi(2)).sum::<f64>().sqrt();
    Ok(LifetimeFit {
        tau: T::lit(tau),
        tau_err: T::lit(tau_err),
        amplitude: T::lit(amplitude),
        amplitude_err: T::lit(amplitude_err),
        residual_norm: T::lit(c.sqrt() / y_norm),
        iterations,
        capped,
    })
}

/// Diagonal of the fit covariance: the larger of the residual-scaled estimate and the
/// HC3 sandwich estimate. The sandwich term keeps the errors honest when the noise
/// scales with the signal, which unit weights otherwise underestimate.
fn covariance_diagonal(ts: &[f64], ys: &[f64], w: &[f64], p: [f64; 2], cost: f64) -> (f64, f64) {
    let jac = |x: f64, wi: f64| {
        let e = (-p[1] * x).exp();
        [wi * e, -wi * p[0] * x * e]
    };
    let mut jtj = [[0.0; 2]; 2];
    for (x, wi) in ts.iter().zip(w) {
        let j = jac(*x, *wi);
        for a in 0..2 {
            for b in 0..2 {
                jtj[a][b] += j[a] * j[b];
            }
        }
    }
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    if !(det > 0.0) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let inv = [[jtj[1][1] / det, -jtj[0][1] / det], [-jtj[1][0] / det, jtj[0][0] / det]];
    let dof = (ts.len() - 2) as f64;
    let s2 = if dof > 0.0 { cost / dof } else { 0.0 };

    let mut meat = [[0.0; 2]; 2];
    for ((x, v), wi) in ts.iter().zip(ys).zip(w) {
        let j = jac(*x, *wi);
        let r = wi * (v - p[0] * (-p[1] * x).exp());
        let h = (0..2).map(|a| (0..2).map(|b| j[a] * inv[a][b] * j[b]).sum::<f64>()).sum::<f64>();
        let lever = 1.0 - h;
        if lever <= 1e-12 {
            continue;
        }
        let r2 = r * r / (lever * lever);
        for a in 0..2 {
            for b in 0..2 {
                meat[a][b] += j[a] * j[b] * r2;
            }
        }
    }
    let sandwich = |i: usize| {
        (0..2).map(|a| (0..2).map(|b| inv[i][a] * meat[a][b] * inv[b][i]).sum::<f64>()).sum::<f64>()
    };
    ((s2 * inv[0][0]).max(sandwich(0)), (s2 * inv[1][1]).max(sandwich(1)))
}

/// Lifetime from exactly two points, `τ = Δt / ln(y₁/y₂)`, with the error
/// propagated from Poisson counting noise on both values.
pub fn two_point_lifetime<T: Real>(p1: (T, T), p2: (T, T)) -> Result<LifetimeFit<T>> {
    let ((t1, y1), (t2, y2)) = if p1.0 <= p2.0 { (p1, p2) } else { (p2, p1) };
    if !(y1 > T::zero() && y2 > T::zero()) {
        return Err(TrapError::Data("signal values must be positive".into()));
    }
    if !(t2 > t1) {
        return Err(TrapError::Data("time points must differ".into()));
    }
    let r = (y1 / y2).ln();
    if !(r > T::zero()) {
        return Err(TrapError::Fit("signal does not decay between the two points".into()));
    }
    let dt = t2 - t1;
    let tau = dt / r;
    let tau_err = tau * tau / dt * (T::one() / y1 + T::one() / y2).sqrt();
    let amplitude = y1 * (t1 / tau).exp();
    Ok(LifetimeFit {
        tau,
        tau_err,
        amplitude,
        amplitude_err: T::zero(),
        residual_norm: T::zero(),
        iterations: 0,
        capped: false,
    })
}

/// Phase-space-conserving cooling factor for volume doubling with `d` mixed
/// dimensions: `2^(2/d)`.
pub fn optimal_cooling_factor<T: Real>(d: u32) -> Result<T> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    Ok(T::two().powf(T::two() / T::lit(f64::from(d))))
}

/// `ln F / ln F_opt`: fraction of the ideal phase-space-conserving cooling.
pub fn cooling_yield<T: Real>(cooling_factor: T, f_opt: T) -> Result<T> {
    if !(cooling_factor > T::zero()) {
        return Err(TrapError::Domain("cooling factor must be positive".into()));
    }
    if !(f_opt > T::one()) {
        return Err(TrapError::Domain("F_opt must exceed 1".into()));
    }
    Ok(cooling_factor.ln() / f_opt.ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoolingResult<T> {
    pub cooling_factor: T,
    pub yield_fraction: T,
}

/// `F = T_ref / T_ramp` and its yield.
pub fn cooling_factor_and_yield<T: Real>(t_ramp_temperature: T, t_ref: T, f_opt: T) -> Result<CoolingResult<T>> {
    if !(t_ramp_temperature > T::zero()) {
        return Err(TrapError::Domain("temperature after the ramp must be positive".into()));
    }
    if !(t_ref > T::zero()) {
        return Err(TrapError::Domain("reference temperature must be positive".into()));
    }
    let f = t_ref / t_ramp_temperature;
    Ok(CoolingResult { cooling_factor: f, yield_fraction: cooling_yield(f, f_opt)? })
}
