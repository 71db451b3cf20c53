//! Monte Carlo simulation of the model dynamics and moment diagnostics.
//!
//! Both equations are stepped with Euler–Maruyama; the asset is stepped in
//! log-space,
//!
//! ```text
//! ln X ← ln X + (r − ½q²e^{2V})Δt + q e^V √Δt z¹
//! V    ← V + δ(a − b e^{αV})Δt + √δ σ √Δt z²,   z² = ρz¹ + √(1−ρ²)z⊥,
//! ```
//!
//! so `X` stays strictly positive. Normals come from [`crate::rng`] keyed by
//! `(seed, path, step)`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::hjb::ControlSchedule;
use crate::model::{ModelParams, PiecewiseLinearPayoff};
use crate::rng::correlated_pair;

/// Volatility multiplier policy for a simulation.
#[derive(Debug, Clone, Copy)]
pub enum QPolicy<'a> {
    Fixed(f64),
    /// Worst-case control read from a solved surface.
    WorstCase(&'a ControlSchedule),
}

impl QPolicy<'_> {
    #[inline]
    pub fn q(&self, t: f64, x: f64, v: f64) -> f64 {
        match self {
            QPolicy::Fixed(q) => *q,
            QPolicy::WorstCase(schedule) => schedule.q(t, x, v),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            QPolicy::Fixed(q) => format!("fixed q={q}"),
            QPolicy::WorstCase(_) => "worst-case field".to_string(),
        }
    }

    fn validate(&self, params: &ModelParams) -> Result<()> {
        if let QPolicy::Fixed(q) = *self {
            if !(q >= params.sigma_min && q <= params.sigma_max) {
                return Err(invalid(
                    "q",
                    format!("fixed control {q} outside [{}, {}]", params.sigma_min, params.sigma_max),
                ));
            }
        }
        Ok(())
    }
}

/// Start point and discretisation of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSpec {
    pub x0: f64,
    pub v0: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(invalid("n_paths", "need at least one path"));
        }
        if self.n_steps < 1 {
            return Err(invalid("n_steps", "need at least one step"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("T", "horizon must be positive and finite"));
        }
        if !(self.x0.is_finite() && self.x0 > 0.0) {
            return Err(invalid("x0", format!("initial price must be positive and finite, got {}", self.x0)));
        }
        if !self.v0.is_finite() {
            return Err(invalid("v0", "initial log-factor must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }
}

/// Current state of every path, advanced one step at a time.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub log_x: Vec<f64>,
    pub v: Vec<f64>,
}

impl Ensemble {
    pub fn new(spec: &SimSpec) -> Self {
        Self { log_x: vec![spec.x0.ln(); spec.n_paths], v: vec![spec.v0; spec.n_paths] }
    }

    /// Advances all paths from step `k` to `k + 1`.
    pub fn step(&mut self, params: &ModelParams, policy: &QPolicy<'_>, spec: &SimSpec, k: usize) {
        let dt = spec.dt();
        let sqrt_dt = dt.sqrt();
        let t = k as f64 * dt;
        let vol_v = params.delta.sqrt() * params.sigma * sqrt_dt;
        self.log_x.par_iter_mut().zip(self.v.par_iter_mut()).enumerate().for_each(|(p, (lx, v))| {
            let (z1, z2) = correlated_pair(params.rho, spec.seed, p as u64, k as u64);
            let q = policy.q(t, lx.exp(), *v);
            let vol = q * v.exp();
            *lx += (params.r - 0.5 * vol * vol) * dt + vol * sqrt_dt * z1;
            *v += params.delta * params.v_drift(*v) * dt + vol_v * z2;
        });
    }

    #[inline]
    pub fn x(&self, p: usize) -> f64 {
        self.log_x[p].exp()
    }
}

/// Simulated trajectories of `(X, V)`, path-major.
#[derive(Debug, Clone, Serialize)]
pub struct PathBatch {
    pub x_paths: Vec<f64>,
    pub v_paths: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub control_tag: String,
}

impl PathBatch {
    #[inline]
    pub fn x(&self, path: usize, step: usize) -> f64 {
        self.x_paths[path * (self.n_steps + 1) + step]
    }

    #[inline]
    pub fn v(&self, path: usize, step: usize) -> f64 {
        self.v_paths[path * (self.n_steps + 1) + step]
    }

    pub fn path_x(&self, path: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.x_paths[path * w..(path + 1) * w]
    }

    pub fn path_v(&self, path: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.v_paths[path * w..(path + 1) * w]
    }

    /// Writes `path,step,t,x,v` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "path,step,t,x,v")?;
        for p in 0..self.n_paths {
            for k in 0..=self.n_steps {
                writeln!(w, "{},{},{},{},{}", p, k, k as f64 * self.dt, self.x(p, k), self.v(p, k))?;
            }
        }
        Ok(())
    }
}

/// Euler–Maruyama paths of the model under the given control policy.
pub fn simulate_paths(params: &ModelParams, spec: &SimSpec, policy: QPolicy<'_>) -> Result<PathBatch> {
    spec.validate()?;
    policy.validate(params)?;
    let width = spec.n_steps + 1;
    let mut x_paths = vec![0.0; spec.n_paths * width];
    let mut v_paths = vec![0.0; spec.n_paths * width];
    let mut ens = Ensemble::new(spec);
    for k in 0..=spec.n_steps {
        if k > 0 {
            ens.step(params, &policy, spec, k - 1);
        }
        for p in 0..spec.n_paths {
            x_paths[p * width + k] = ens.x(p);
            v_paths[p * width + k] = ens.v[p];
        }
    }
    // exact start values, independent of the exp/ln round trip
    for p in 0..spec.n_paths {
        x_paths[p * width] = spec.x0;
    }
    Ok(PathBatch {
        x_paths,
        v_paths,
        n_paths: spec.n_paths,
        n_steps: spec.n_steps,
        dt: spec.dt(),
        seed: spec.seed,
        control_tag: policy.tag(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Component {
    X,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    /// `E|Z_T|^k`
    Terminal,
    /// `E ∫₀^T |Z_s|^k ds`, trapezoidal in time.
    TimeIntegrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentReport {
    pub order: u32,
    pub kind: MomentKind,
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl MomentReport {
    /// Whether the `width`-standard-error bands of two estimates overlap.
    pub fn bands_overlap(&self, other: &MomentReport, width: f64) -> bool {
        let (lo_a, hi_a) = (self.estimate - width * self.std_error, self.estimate + width * self.std_error);
        let (lo_b, hi_b) = (other.estimate - width * other.std_error, other.estimate + width * other.std_error);
        lo_a <= hi_b && lo_b <= hi_a
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn estimate_moment(batch: &PathBatch, which: Component, order: u32, kind: MomentKind) -> Result<MomentReport> {
    if order < 1 {
        return Err(invalid("k", "moment order must be at least 1"));
    }
    let k = order as i32;
    let samples: Vec<f64> = (0..batch.n_paths)
        .map(|p| {
            let path = match which {
                Component::X => batch.path_x(p),
                Component::V => batch.path_v(p),
            };
            match kind {
                MomentKind::Terminal => path[batch.n_steps].abs().powi(k),
                MomentKind::TimeIntegrated => {
                    let vals: Vec<f64> = path.iter().map(|z| z.abs().powi(k)).collect();
                    trapezoid(&vals, batch.dt)
                }
            }
        })
        .collect();
    let (estimate, std_error) = mean_and_se(&samples);
    Ok(MomentReport { order, kind, estimate, std_error, n_paths: batch.n_paths })
}

/// Trapezoidal integral of equally spaced samples.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => dt * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

/// Which closed-form branch an MGF evaluation used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MgfBranch {
    /// `δ² − 2ηδσ² ≥ 0`, hyperbolic functions.
    Real,
    /// `δ² − 2ηδσ² < 0`, trigonometric functions.
    Trigonometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfValue {
    pub psi: f64,
    pub xi: f64,
    pub value: f64,
    pub branch: MgfBranch,
}

#[inline]
fn sinhc(u: f64) -> f64 {
    if u.abs() < 1e-8 { 1.0 + u * u / 6.0 } else { u.sinh() / u }
}

#[inline]
fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-8 { 1.0 - u * u / 6.0 } else { u.sin() / u }
}

fn real_power(term: &'static str, base: f64, exponent: f64) -> Result<f64> {
    if base >= 0.0 {
        Ok(base.powf(exponent))
    } else if exponent.fract() == 0.0 {
        Ok(base.powi(exponent as i32))
    } else {
        Err(Error::MgfNotReal { term, base })
    }
}

/// Closed-form moment generating function of the integrated log-factor,
/// `Ψ(η, t) e^{−vΞ(η, t)}` with
///
/// ```text
/// Ψ = ( b̄ e^{δt/2} / (b̄ cosh(b̄t/2) + δ sinh(b̄t/2)) )^{2/σ²}
/// Ξ = ( 2η sinh(b̄t/2) / (b̄ cosh(b̄t/2) + δ sinh(b̄t/2)) )^{2/σ²}
/// b̄ = √(δ² − 2ηδσ²)
/// ```
///
/// and the cos/sin form with `ϑ = √(2ηδσ² − δ²)` when the radicand is
/// negative. Numerators and denominators are divided by `b̄` (resp. `ϑ`)
/// so that `b̄ → 0` is evaluated at its limit.
pub fn mgf_closed_form(params: &ModelParams, eta: f64, t: f64, v: f64) -> Result<MgfValue> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", "time must be nonnegative and finite"));
    }
    let delta = params.delta;
    let exponent = 2.0 / (params.sigma * params.sigma);
    let radicand = delta * delta - 2.0 * eta * delta * params.sigma * params.sigma;
    let half_t = 0.5 * t;
    let (branch, lead, shape) = if radicand >= 0.0 {
        let u = radicand.sqrt() * half_t;
        (MgfBranch::Real, u.cosh(), sinhc(u))
    } else {
        let w = (-radicand).sqrt() * half_t;
        (MgfBranch::Trigonometric, w.cos(), sinc(w))
    };
    // denominator / b̄ (or / ϑ)
    let denom = lead + delta * half_t * shape;
    if denom.abs() < 1e-12 {
        return Err(Error::MgfPole { eta, t, denominator: denom });
    }
    let psi = real_power("psi", (delta * half_t).exp() / denom, exponent)?;
    let xi = real_power("xi", 2.0 * eta * half_t * shape / denom, exponent)?;
    Ok(MgfValue { psi, xi, value: psi * (-v * xi).exp(), branch })
}

/// Mean-square gap between the moving-volatility and frozen-volatility
/// asset prices on shared Brownian increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEstimate {
    /// `E[(X^δ_T − X⁰_T)²]`
    pub gap_sq: f64,
    pub std_error: f64,
    /// `E[(h(X^δ_T) − h(X⁰_T))²]`
    pub payoff_gap_sq: f64,
    pub payoff_std_error: f64,
}

/// Simulates `X^δ` (moving V) and `X⁰` (V frozen at `v0`) on the same `W¹`
/// increments and estimates their mean-square terminal gap.
pub fn coupled_payoff_gap(
    params: &ModelParams,
    payoff: &PiecewiseLinearPayoff,
    spec: &SimSpec,
    q: f64,
) -> Result<GapEstimate> {
    spec.validate()?;
    QPolicy::Fixed(q).validate(params)?;
    let dt = spec.dt();
    let sqrt_dt = dt.sqrt();
    let vol_v = params.delta.sqrt() * params.sigma * sqrt_dt;
    let frozen_vol = q * spec.v0.exp();
    let pairs: Vec<(f64, f64)> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let (mut lx_d, mut lx_0, mut v) = (spec.x0.ln(), spec.x0.ln(), spec.v0);
            for k in 0..spec.n_steps {
                let (z1, z2) = correlated_pair(params.rho, spec.seed, p as u64, k as u64);
                let vol = q * v.exp();
                lx_d += (params.r - 0.5 * vol * vol) * dt + vol * sqrt_dt * z1;
                lx_0 += (params.r - 0.5 * frozen_vol * frozen_vol) * dt + frozen_vol * sqrt_dt * z1;
                v += params.delta * params.v_drift(v) * dt + vol_v * z2;
            }
            let (xd, x0) = (lx_d.exp(), lx_0.exp());
            ((xd - x0).powi(2), (payoff.eval(xd) - payoff.eval(x0)).powi(2))
        })
        .collect();
    let gaps: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let payoff_gaps: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (gap_sq, std_error) = mean_and_se(&gaps);
    let (payoff_gap_sq, payoff_std_error) = mean_and_se(&payoff_gaps);
    Ok(GapEstimate { gap_sq, std_error, payoff_gap_sq, payoff_std_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::correlated_pair;

    fn spec(n_paths: usize, n_steps: usize, seed: u64) -> SimSpec {
        SimSpec { x0: 100.0, v0: -1.0, n_paths, n_steps, horizon: 0.15, seed }
    }

    #[test]
    fn frozen_factor_without_delta() {
        let p = ModelParams::reference(0.0).unwrap();
        let b = simulate_paths(&p, &spec(200, 30, 1), QPolicy::Fixed(0.15)).unwrap();
        assert!(b.v_paths.iter().all(|&v| v == -1.0));
        let m = estimate_moment(&b, Component::V, 3, MomentKind::Terminal).unwrap();
        assert_eq!(m.estimate, 1.0);
        assert_eq!(m.std_error, 0.0);
    }

    #[test]
    fn start_values_and_determinism() {
        let p = ModelParams::reference(0.4).unwrap();
        let a = simulate_paths(&p, &spec(50, 20, 9), QPolicy::Fixed(0.2)).unwrap();
        let b = simulate_paths(&p, &spec(50, 20, 9), QPolicy::Fixed(0.2)).unwrap();
        assert_eq!(a.x_paths, b.x_paths);
        assert_eq!(a.v_paths, b.v_paths);
        for path in 0..50 {
            assert_eq!(a.x(path, 0), 100.0);
            assert_eq!(a.v(path, 0), -1.0);
        }
        // a larger batch shares the leading paths exactly
        let c = simulate_paths(&p, &spec(80, 20, 9), QPolicy::Fixed(0.2)).unwrap();
        assert_eq!(&c.x_paths[..a.x_paths.len()], &a.x_paths[..]);
        assert!(a.x_paths.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = ModelParams::reference(0.4).unwrap();
        assert!(simulate_paths(&p, &spec(10, 10, 1), QPolicy::Fixed(0.3)).is_err());
        assert!(simulate_paths(&p, &SimSpec { x0: f64::NAN, ..spec(10, 10, 1) }, QPolicy::Fixed(0.2)).is_err());
        assert!(simulate_paths(&p, &SimSpec { v0: f64::INFINITY, ..spec(10, 10, 1) }, QPolicy::Fixed(0.2)).is_err());
        assert!(simulate_paths(&p, &spec(0, 10, 1), QPolicy::Fixed(0.2)).is_err());
        let b = simulate_paths(&p, &spec(10, 10, 1), QPolicy::Fixed(0.2)).unwrap();
        assert!(estimate_moment(&b, Component::X, 0, MomentKind::Terminal).is_err());
    }

    #[test]
    fn martingale_mean_with_fixed_control() {
        let p = ModelParams::reference(0.0).unwrap().with_bounds(0.15, 0.15).unwrap();
        let b = simulate_paths(&p, &spec(20_000, 25, 3), QPolicy::Fixed(0.15)).unwrap();
        let m = estimate_moment(&b, Component::X, 1, MomentKind::Terminal).unwrap();
        assert!((m.estimate - 100.0).abs() < 3.0 * m.std_error, "{m:?}");
    }

    #[test]
    fn increments_have_requested_correlation() {
        let rho = 0.5;
        let (paths, steps) = (2000u64, 50u64);
        let mut sum = 0.0;
        for p in 0..paths {
            for k in 0..steps {
                let (a, b) = correlated_pair(rho, 77, p, k);
                sum += a * b;
            }
        }
        let n = (paths * steps) as f64;
        assert!((sum / n - rho).abs() < 4.0 / n.sqrt());
    }

    #[test]
    fn trapezoid_rule() {
        assert_eq!(trapezoid(&[1.0, 1.0, 1.0], 0.5), 1.0);
        assert_eq!(trapezoid(&[0.0, 1.0, 2.0], 1.0), 2.0);
        assert_eq!(trapezoid(&[3.0], 1.0), 0.0);
    }

    #[test]
    fn time_integrated_moment_of_frozen_factor() {
        let p = ModelParams::reference(0.0).unwrap();
        let b = simulate_paths(&p, &spec(10, 30, 1), QPolicy::Fixed(0.1)).unwrap();
        let m = estimate_moment(&b, Component::V, 2, MomentKind::TimeIntegrated).unwrap();
        assert!((m.estimate - 0.15).abs() < 1e-14);
    }

    #[test]
    fn mgf_at_zero_eta() {
        for &(delta, sigma, t, v) in &[(0.3, 0.5, 0.1, -1.0), (0.0, 0.8, 0.15, 2.0), (1.0, 1.3, 0.0, 0.4)] {
            let p = ModelParams::new(ModelConfig { sigma, ..ModelConfig::reference(delta) }).unwrap();
            let m = mgf_closed_form(&p, 0.0, t, v).unwrap();
            assert!((m.value - 1.0).abs() < 1e-12, "{m:?}");
            assert_eq!(m.xi, 0.0);
        }
    }

    #[test]
    fn mgf_small_delta_limit() {
        // Ψ → 1 while Ξ → (ηt)^{2/σ²} as δ → 0
        let eta = 0.7;
        let t = 0.12;
        let p = ModelParams::reference(1e-10).unwrap();
        let m = mgf_closed_form(&p, eta, t, -1.0).unwrap();
        let expo = 2.0 / (p.sigma * p.sigma);
        assert!((m.psi - 1.0).abs() < 1e-8);
        assert!((m.xi - (eta * t).powf(expo)).abs() < 1e-8);
        assert_eq!(m.branch, MgfBranch::Trigonometric);
    }

    #[test]
    fn mgf_branches_agree_at_the_seam() {
        // δ² − 2ηδσ² changes sign at η = δ / 2σ²
        let p = ModelParams::reference(0.4).unwrap();
        let seam = p.delta / (2.0 * p.sigma * p.sigma);
        let below = mgf_closed_form(&p, seam - 1e-9, 0.15, -1.0).unwrap();
        let above = mgf_closed_form(&p, seam + 1e-9, 0.15, -1.0).unwrap();
        assert_eq!(below.branch, MgfBranch::Real);
        assert_eq!(above.branch, MgfBranch::Trigonometric);
        assert!((below.value - above.value).abs() < 1e-7);
    }

    #[test]
    fn mgf_reports_pole() {
        // trig branch: cos(w) + δ(t/2) sinc(w) = 0 near w slightly above π/2
        let p = ModelParams::new(ModelConfig { sigma: 1.0, ..ModelConfig::reference(1.0) }).unwrap();
        let t = 2.0;
        // with t=2: denominator = cos(ϑ) + sin(ϑ)/ϑ; root near ϑ ≈ 2.0288
        let f = |th: f64| th.cos() + th.sin() / th;
        let (mut lo, mut hi) = (1.5, 2.5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 { hi = mid } else { lo = mid }
        }
        let theta = 0.5 * (lo + hi);
        // ϑ² = 2ηδσ² − δ²  →  η = (ϑ² + δ²) / (2δσ²)
        let eta = (theta * theta + 1.0) / 2.0;
        assert!(matches!(mgf_closed_form(&p, eta, t, 0.0), Err(Error::MgfPole { .. })));
        assert!(mgf_closed_form(&p, eta * 0.9, t, 0.0).is_ok());
    }

    #[test]
    fn gap_vanishes_without_delta() {
        let p = ModelParams::reference(0.0).unwrap();
        let h = PiecewiseLinearPayoff::reference_butterfly();
        let g = coupled_payoff_gap(&p, &h, &spec(500, 20, 4), 0.2).unwrap();
        assert_eq!(g.gap_sq, 0.0);
        assert_eq!(g.payoff_gap_sq, 0.0);
    }

    #[test]
    fn gap_refinement_is_stable() {
        let p = ModelParams::reference(0.3).unwrap();
        let h = PiecewiseLinearPayoff::reference_butterfly();
        let coarse = coupled_payoff_gap(&p, &h, &spec(40_000, 25, 8), 0.2).unwrap();
        let fine = coupled_payoff_gap(&p, &h, &spec(40_000, 50, 8), 0.2).unwrap();
        assert!(coarse.gap_sq > 0.0);
        let se = coarse.std_error.max(fine.std_error);
        assert!((coarse.gap_sq - fine.gap_sq).abs() < 3.0 * se, "{coarse:?} {fine:?}");
    }
}
