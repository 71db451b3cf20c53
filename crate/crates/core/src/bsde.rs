//! Second-order BSDE view of a solved price surface.
//!
//! Under the trivial forward dynamics `dX̃ = dW̃` the 2BSDE driver equals
//! `∂ₜu` of the pricing PDE. Given a solved surface, `Z = Du` and `Γ = D²u`
//! are read off the grid and `Y` is integrated forward,
//!
//! ```text
//! dY = f(X̃, Y, Z, Γ) dt + Z·dW̃ + ½ tr Γ dt,
//! ```
//!
//! so that `Y_T − h(X̃¹_T)` measures how well the surface satisfies the
//! representation.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::hjb::{greeks, GreekFields, PriceSurface, SurfaceKind};
use crate::model::{ModelParams, PiecewiseLinearPayoff};
use crate::rng::normal_pair;
use crate::sde::{mean_and_se, Ensemble, QPolicy, SimSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    /// Limit driver, no log-factor terms.
    F0,
    FDelta,
}

/// Driver `f(x̃, y, z, S)` of the 2BSDE.
///
/// The default form is the one consistent with the pricing PDE:
///
/// ```text
/// f^δ = −½x²e^{2v}σ̄(S₁₁)²S₁₁ − √δ x e^v σρ σ̄(S₁₁) S₁₂
///       − δ(½σ²S₂₂ + (a − b e^{αv}) z₂) − r(x z₁ − y)
/// f⁰  = −½x²e^{2v}σ̄(S₁₁)²S₁₁ − r(x z₁ − y)
/// ```
///
/// with `σ̄(s) = σ_max` for `s ≥ 0` and `σ_min` otherwise. With `literal`
/// set, the first-power `x` and the `2√δ |σ̄(S₁₂)| S₁₂` cross term are used
/// instead.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DriverSpec {
    pub kind: DriverKind,
    pub params: ModelParams,
    pub literal: bool,
}

pub fn build_driver(params: &ModelParams, kind: DriverKind) -> DriverSpec {
    DriverSpec { kind, params: *params, literal: false }
}

impl DriverSpec {
    pub fn literal(self) -> Self {
        Self { literal: true, ..self }
    }

    #[inline]
    pub fn sigma_bar(&self, s: f64) -> f64 {
        if s >= 0.0 { self.params.sigma_max } else { self.params.sigma_min }
    }

    pub fn eval(&self, x: f64, v: f64, y: f64, z: [f64; 2], s: [[f64; 2]; 2]) -> f64 {
        let p = &self.params;
        let ev = v.exp();
        let sb = self.sigma_bar(s[0][0]);
        let x_sq = if self.literal { x } else { x * x };
        let mut f = -0.5 * x_sq * ev * ev * sb * sb * s[0][0] - p.r * (x * z[0] - y);
        if self.kind == DriverKind::FDelta {
            let cross = if self.literal {
                2.0 * p.delta.sqrt() * x * ev * p.sigma * p.rho * self.sigma_bar(s[0][1]).abs() * s[0][1]
            } else {
                p.delta.sqrt() * x * ev * p.sigma * p.rho * sb * s[0][1]
            };
            f -= cross + p.delta * (0.5 * p.sigma * p.sigma * s[1][1] + p.v_drift(v) * z[1]);
        }
        f
    }

    fn at(&self, g: &GreekFields, x: f64, v: f64, y: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let pg = g.at(x, v);
        let z = [pg.delta, pg.vega];
        let s = [[pg.gamma, pg.vanna], [pg.vanna, pg.vomma]];
        (self.eval(x, v, y, z, s), z, s)
    }
}

fn driver_for(surface: &PriceSurface) -> Result<DriverSpec> {
    let kind = match surface.kind() {
        SurfaceKind::FullDelta => DriverKind::FDelta,
        SurfaceKind::LimitP0 => DriverKind::F0,
        SurfaceKind::CorrectorP1 => {
            return Err(Error::WrongKind { expected: "full_delta or limit_p0", got: "corrector_p1" })
        }
    };
    Ok(build_driver(surface.params(), kind))
}

#[derive(Debug, Clone, Serialize)]
pub struct BsdeResidualReport {
    /// `u(0, x̃₀)` read from the surface.
    pub y0_fd: f64,
    /// Mean of the backward-implied start value `h(X̃¹_T) − (Y_T − Y₀)`.
    pub y0_mean: f64,
    pub y0_std_error: f64,
    /// RMS of `Y_T − h(X̃¹_T)` over paths that stayed in the grid.
    pub terminal_residual_rms: f64,
    pub mean_residual: f64,
    pub n_paths_used: usize,
    pub n_paths_discarded: usize,
    pub driver: DriverKind,
    pub literal_driver: bool,
    pub n_steps: usize,
    pub seed: u64,
}

impl BsdeResidualReport {
    pub fn discard_fraction(&self) -> f64 {
        self.n_paths_discarded as f64 / (self.n_paths_used + self.n_paths_discarded) as f64
    }

    pub fn write_json<W: Write>(&self, w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(io::Error::other)
    }
}

#[derive(Clone, Copy)]
struct BsdeState {
    x: f64,
    v: f64,
    y: f64,
    alive: bool,
}

/// Checks that `spec` starts inside the surface grid and spans its horizon.
fn check_against_grid(surface: &PriceSurface, spec: &SimSpec) -> Result<()> {
    if !spec.x0.is_finite() || !spec.v0.is_finite() || !surface.grid().contains(spec.x0, spec.v0) {
        return Err(Error::OutsideGrid { x: spec.x0, v: spec.v0 });
    }
    let horizon = surface.grid().horizon;
    if (spec.horizon - horizon).abs() > 1e-12 * horizon {
        return Err(invalid("T", format!("simulation horizon {} differs from the surface horizon {horizon}", spec.horizon)));
    }
    if spec.n_paths < 1 || spec.n_steps < 1 {
        return Err(invalid("n_paths", "need at least one path and one step"));
    }
    Ok(())
}

/// Integrates the 2BSDE along Brownian forward paths with the driver implied
/// by the surface kind.
pub fn simulate_2bsde_residual(
    surface: &PriceSurface,
    payoff: &PiecewiseLinearPayoff,
    spec: &SimSpec,
) -> Result<BsdeResidualReport> {
    let driver = driver_for(surface)?;
    simulate_2bsde_residual_with(surface, payoff, spec, &driver)
}

/// As [`simulate_2bsde_residual`] with an explicit driver.
///
/// The `f⁰` driver keeps the log-factor frozen at `v₀`; `f^δ` moves both
/// coordinates with independent Brownian components.
pub fn simulate_2bsde_residual_with(
    surface: &PriceSurface,
    payoff: &PiecewiseLinearPayoff,
    spec: &SimSpec,
    driver: &DriverSpec,
) -> Result<BsdeResidualReport> {
    check_against_grid(surface, spec)?;
    let grid = surface.grid();
    let dt = spec.dt();
    let sqrt_dt = dt.sqrt();
    let moves_v = driver.kind == DriverKind::FDelta;
    let y0 = surface.price_at(spec.x0, spec.v0)?;
    let mut states = vec![BsdeState { x: spec.x0, v: spec.v0, y: y0, alive: true }; spec.n_paths];
    let mut cached: Option<(usize, GreekFields)> = None;
    for k in 0..spec.n_steps {
        let n = surface.nearest_time_index(k as f64 * dt);
        if cached.as_ref().is_none_or(|(m, _)| *m != n) {
            cached = Some((n, greeks(surface, n)?));
        }
        let g = &cached.as_ref().expect("greeks cached above").1;
        states.par_iter_mut().enumerate().for_each(|(p, st)| {
            if !st.alive {
                return;
            }
            let (f, z, s) = driver.at(g, st.x, st.v, st.y);
            let (z1, z2) = normal_pair(spec.seed, p as u64, k as u64);
            let (dw1, dw2) = (sqrt_dt * z1, if moves_v { sqrt_dt * z2 } else { 0.0 });
            let trace = s[0][0] + if moves_v { s[1][1] } else { 0.0 };
            st.y += f * dt + z[0] * dw1 + z[1] * dw2 + 0.5 * trace * dt;
            st.x += dw1;
            st.v += dw2;
            st.alive = grid.contains(st.x, st.v);
        });
    }
    let residuals: Vec<f64> = states.iter().filter(|s| s.alive).map(|s| s.y - payoff.eval(s.x)).collect();
    let used = residuals.len();
    if used == 0 {
        return Err(Error::AllPathsDiscarded(spec.n_paths));
    }
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / used as f64).sqrt();
    let implied: Vec<f64> = residuals.iter().map(|r| y0 - r).collect();
    let (y0_mean, y0_std_error) = mean_and_se(&implied);
    Ok(BsdeResidualReport {
        y0_fd: y0,
        y0_mean,
        y0_std_error,
        terminal_residual_rms: rms,
        mean_residual: y0 - y0_mean,
        n_paths_used: used,
        n_paths_discarded: spec.n_paths - used,
        driver: driver.kind,
        literal_driver: driver.literal,
        n_steps: spec.n_steps,
        seed: spec.seed,
    })
}

/// RMS over interior nodes of `(u_{n+1} − u_n)/Δt − f(u_{n+1}, Du_{n+1}, D²u_{n+1})`.
///
/// Needs slices `n` and `n + 1` retained.
pub fn driver_consistency_rms(surface: &PriceSurface, driver: &DriverSpec, time_index: usize) -> Result<f64> {
    let grid = surface.grid();
    let now = surface.slice(time_index)?;
    let next = surface.slice(time_index + 1)?;
    let g = greeks(surface, time_index + 1)?;
    let dt = grid.dt();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 1..grid.nx_total() - 1 {
        for j in 1..grid.n_v - 1 {
            let k = grid.idx(i, j);
            let z = [g.delta[k], g.vega[k]];
            let s = [[g.gamma[k], g.vanna[k]], [g.vanna[k], g.vomma[k]]];
            let f = driver.eval(grid.x(i), grid.v(j), next[k], z, s);
            let d = (next[k] - now[k]) / dt - f;
            sum += d * d;
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleReport {
    /// MC estimate of `E[M_T − M_0]`.
    pub drift: f64,
    pub std_error: f64,
    /// `P(0, x₀, v₀)` from the surface.
    pub m0: f64,
    /// MC estimate of `E[h(X_T)]`.
    pub terminal_mean: f64,
}

/// Simulates `(X, V)` under `policy` and estimates the drift of
/// `M_s = P(s, X_s, V_s)` over `[0, T]`.
///
/// `M_T` is the payoff itself, so the drift is `E[h(X_T)] − P(0, x₀, v₀)`.
pub fn martingale_check(
    surface: &PriceSurface,
    payoff: &PiecewiseLinearPayoff,
    policy: QPolicy<'_>,
    spec: &SimSpec,
) -> Result<MartingaleReport> {
    let params = surface.params();
    if params.r != 0.0 {
        return Err(invalid("r", "martingale check assumes r = 0"));
    }
    check_against_grid(surface, spec)?;
    let m0 = surface.price_at(spec.x0, spec.v0)?;
    let terminal = terminal_payoffs(params, payoff, spec, policy)?;
    let (terminal_mean, std_error) = mean_and_se(&terminal);
    Ok(MartingaleReport { drift: terminal_mean - m0, std_error, m0, terminal_mean })
}

/// `h(X_T)` for every simulated path.
pub fn terminal_payoffs(
    params: &ModelParams,
    payoff: &PiecewiseLinearPayoff,
    spec: &SimSpec,
    policy: QPolicy<'_>,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if let QPolicy::Fixed(q) = policy {
        if !(q >= params.sigma_min && q <= params.sigma_max) {
            return Err(invalid("q", format!("fixed control {q} outside [{}, {}]", params.sigma_min, params.sigma_max)));
        }
    }
    let mut ens = Ensemble::new(spec);
    for k in 0..spec.n_steps {
        ens.step(params, &policy, spec, k);
    }
    Ok((0..spec.n_paths).map(|p| payoff.eval(ens.x(p))).collect())
}
