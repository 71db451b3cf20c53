//! Explicit backward-in-time finite differences for the worst-case price.
//!
//! The full equation is
//!
//! ```text
//! −∂ₜP = r(x∂ₓP − P) + sup_{q∈Θ} { ½q²e^{2v}x²∂²ₓₓP + √δ qρσ e^v x ∂²ₓᵥP }
//!        + δ(½σ²∂²ᵥᵥP + (a − b e^{αv})∂ᵥP),      P(T) = h.
//! ```
//!
//! Second derivatives are central, the cross derivative uses the four-point
//! stencil (one-sided in v on the v-boundary rows), and the v-drift is
//! upwinded by the sign of the drift. At `x = 0` the equation reduces to
//! `∂ₜP = rP`, solved exactly; at `x_max` the price is extrapolated linearly
//! (zero gamma). On the v-boundary rows `∂²ᵥᵥP` is dropped.

use rayon::prelude::*;

use super::control::{bang_bang, maximise_hamiltonian};
use super::surface::{PriceSurface, Retention, SurfaceKind, TerminalTreatment};
use crate::error::{Error, Result};
use crate::model::{GridSpec, ModelConfig, ModelParams, PiecewiseLinearPayoff};

/// Which equation a stability bound is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equation {
    /// Full G-HJB in (x, v).
    Full,
    /// x-direction only: the limit equation and the corrector.
    Limit,
}

/// Log-factor handling for the limit solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LimitSlice {
    /// Independent solve at every v-node, giving the full `P₀(t, x, v)` family.
    #[default]
    PerNode,
    /// One solve at the given log-factor, copied across the v-dimension.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    pub retention: Retention,
    pub terminal: TerminalTreatment,
}

impl SolveOptions {
    pub fn keep(retention: Retention) -> Self {
        Self { retention, ..Self::default() }
    }
}

/// Largest explicit-scheme rate `λ` over the grid; stability needs `Δt·λ ≤ 1`.
fn stability_rate(params: &ModelParams, grid: &GridSpec, eq: Equation, fixed_v: Option<f64>) -> f64 {
    let (dx, dv) = (grid.dx(), grid.dv());
    let sqrt_delta = params.delta.sqrt();
    let mut lambda: f64 = 0.0;
    for j in 0..grid.n_v {
        let v = fixed_v.unwrap_or_else(|| grid.v(j));
        let ev = v.exp();
        let interior_v = j > 0 && j + 1 < grid.n_v;
        for i in 1..=grid.n_x {
            let x = grid.x(i);
            let diffusion = x * params.sigma_max * ev / dx;
            let mut rate = diffusion * diffusion + params.r.abs();
            if eq == Equation::Full {
                if interior_v {
                    rate += params.delta * params.sigma * params.sigma / (dv * dv);
                }
                rate += sqrt_delta * params.rho.abs() * params.sigma * params.sigma_max * ev * x / (dx * dv);
                rate += params.delta * params.v_drift(v).abs() / dv;
            }
            lambda = lambda.max(rate);
        }
    }
    lambda
}

/// Minimum step count for which the explicit scheme is admissible.
pub fn admissible_steps(params: &ModelParams, grid: &GridSpec, eq: Equation) -> usize {
    admissible_steps_at(params, grid, eq, None)
}

fn admissible_steps_at(params: &ModelParams, grid: &GridSpec, eq: Equation, fixed_v: Option<f64>) -> usize {
    let lambda = stability_rate(params, grid, eq, fixed_v);
    ((grid.horizon * lambda / grid.cfl_safety).ceil() as usize).max(1)
}

/// The grid with `n_t` raised to the admissible minimum when necessary.
pub fn with_admissible_steps(params: &ModelParams, grid: &GridSpec, eq: Equation) -> GridSpec {
    let need = admissible_steps(params, grid, eq);
    if grid.n_t >= need {
        *grid
    } else {
        grid.with_n_t(need).expect("positive step count")
    }
}

/// The grid with `n_t` rounded up to a multiple of `mc_steps`, and options
/// keeping exactly the slices at the simulation times `k·T/mc_steps`.
pub fn aligned_with_steps(grid: &GridSpec, mc_steps: usize) -> Result<(GridSpec, SolveOptions)> {
    if mc_steps == 0 {
        return Err(crate::error::invalid("n_steps", "need at least one step"));
    }
    let g = grid.with_n_t(grid.n_t.div_ceil(mc_steps) * mc_steps)?;
    let every = g.n_t / mc_steps;
    Ok((g, SolveOptions::keep(Retention::Every(every))))
}

fn check_cfl(params: &ModelParams, grid: &GridSpec, eq: Equation, fixed_v: Option<f64>) -> Result<()> {
    let required = admissible_steps_at(params, grid, eq, fixed_v);
    if grid.n_t < required {
        return Err(Error::Cfl { n_t: grid.n_t, required });
    }
    Ok(())
}

/// Node geometry for one solve. `ev` has one entry per stored column; a
/// fixed-v limit solve uses a single column.
struct Layout {
    nx: usize,
    nv: usize,
    dx: f64,
    dv: f64,
    xs: Vec<f64>,
    ev: Vec<f64>,
    /// δ(a − b e^{αv}) per column
    drift: Vec<f64>,
}

impl Layout {
    fn new(grid: &GridSpec, params: &ModelParams, fixed_v: Option<f64>) -> Self {
        let vs: Vec<f64> = match fixed_v {
            Some(v) => vec![v],
            None => (0..grid.n_v).map(|j| grid.v(j)).collect(),
        };
        Self {
            nx: grid.nx_total(),
            nv: vs.len(),
            dx: grid.dx(),
            dv: grid.dv(),
            xs: (0..grid.nx_total()).map(|i| grid.x(i)).collect(),
            ev: vs.iter().map(|v| v.exp()).collect(),
            drift: vs.iter().map(|&v| params.delta * params.v_drift(v)).collect(),
        }
    }

    #[inline]
    fn pxx(&self, f: &[f64], c: usize) -> f64 {
        (f[c + self.nv] - 2.0 * f[c] + f[c - self.nv]) / (self.dx * self.dx)
    }

    #[inline]
    fn px(&self, f: &[f64], c: usize) -> f64 {
        (f[c + self.nv] - f[c - self.nv]) / (2.0 * self.dx)
    }

    #[inline]
    fn pxv(&self, f: &[f64], c: usize, j: usize) -> f64 {
        let nv = self.nv;
        if nv < 2 {
            0.0
        } else if j == 0 {
            (self.px(f, c + 1) - self.px(f, c)) / self.dv
        } else if j == nv - 1 {
            (self.px(f, c) - self.px(f, c - 1)) / self.dv
        } else {
            (f[c + nv + 1] - f[c + nv - 1] - f[c - nv + 1] + f[c - nv - 1]) / (4.0 * self.dx * self.dv)
        }
    }

    #[inline]
    fn pvv(&self, f: &[f64], c: usize, j: usize) -> f64 {
        if j == 0 || j + 1 >= self.nv {
            0.0
        } else {
            (f[c + 1] - 2.0 * f[c] + f[c - 1]) / (self.dv * self.dv)
        }
    }

    /// Upwind first v-derivative for drift `mu`.
    #[inline]
    fn pv_upwind(&self, f: &[f64], c: usize, j: usize, mu: f64) -> f64 {
        let forward = j + 1 < self.nv && (mu > 0.0 || j == 0);
        if forward {
            (f[c + 1] - f[c]) / self.dv
        } else if j > 0 {
            (f[c] - f[c - 1]) / self.dv
        } else {
            0.0
        }
    }
}

/// Sets the x-boundary rows of `new` after the interior update.
fn apply_x_boundaries(lay: &Layout, new: &mut [f64], lower: Option<&[f64]>) {
    let nv = lay.nv;
    let top = lay.nx - 1;
    for j in 0..nv {
        new[top * nv + j] = 2.0 * new[(top - 1) * nv + j] - new[(top - 2) * nv + j];
        new[j] = match lower {
            Some(vals) => vals[j],
            None => 2.0 * new[nv + j] - new[2 * nv + j],
        };
    }
}

fn first_non_finite(lay: &Layout, values: &[f64], time_index: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::NonFinite { time_index, i: k / lay.nv, j: k % lay.nv }),
        None => Ok(()),
    }
}

fn terminal_values(lay: &Layout, payoff: &PiecewiseLinearPayoff, treatment: TerminalTreatment) -> Vec<f64> {
    let mut out = Vec::with_capacity(lay.nx * lay.nv);
    for &x in &lay.xs {
        let h = match treatment {
            TerminalTreatment::Pointwise => payoff.eval(x),
            TerminalTreatment::CellAverage => payoff.cell_average(x, 0.5 * lay.dx),
        };
        out.extend(std::iter::repeat_n(h, lay.nv));
    }
    out
}

/// Marches `state` from `T` to 0 with `step(n, old, new)` computing interior
/// rows of the slice at index `n` from the slice at `n + 1`.
fn march<F>(
    grid: &GridSpec,
    lay: &Layout,
    params: &ModelParams,
    terminal: Vec<f64>,
    lower_is_exact: bool,
    retention: Retention,
    step: F,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)>
where
    F: Fn(usize, &[f64], &mut [f64]) + Sync,
{
    let n_t = grid.n_t;
    let dt = grid.dt();
    let lower0: Vec<f64> = terminal[..lay.nv].to_vec();
    let mut kept_times = vec![n_t];
    let mut slices = vec![terminal.clone()];
    let mut old = terminal;
    let mut new = old.clone();
    let mut lower = vec![0.0; lay.nv];
    for n in (0..n_t).rev() {
        step(n, &old, &mut new);
        if lower_is_exact {
            let disc = (-params.r * (n_t - n) as f64 * dt).exp();
            for (l, &h0) in lower.iter_mut().zip(&lower0) {
                *l = h0 * disc;
            }
        }
        apply_x_boundaries(lay, &mut new, lower_is_exact.then_some(lower.as_slice()));
        first_non_finite(lay, &new, n)?;
        std::mem::swap(&mut old, &mut new);
        if retention.keeps(n, n_t) {
            kept_times.push(n);
            slices.push(old.clone());
        }
    }
    kept_times.reverse();
    slices.reverse();
    Ok((kept_times, slices))
}

/// Copies a single-column solve across the v-dimension.
fn broadcast(grid: &GridSpec, column: &[f64]) -> Vec<f64> {
    column.iter().flat_map(|&p| std::iter::repeat_n(p, grid.n_v)).collect()
}

/// Full G-HJB solve for `P^δ`.
///
/// The Hamiltonian is maximised exactly at each node over the endpoints of
/// Θ and the interior stationary point of the quadratic in `q`.
pub fn solve_hjb_2d(
    params: &ModelParams,
    payoff: &PiecewiseLinearPayoff,
    grid: &GridSpec,
    opts: SolveOptions,
) -> Result<PriceSurface> {
    check_cfl(params, grid, Equation::Full, None)?;
    let lay = Layout::new(grid, params, None);
    let dt = grid.dt();
    let (lo, hi) = (params.sigma_min, params.sigma_max);
    let cross = params.delta.sqrt() * params.rho * params.sigma;
    let half_vv = 0.5 * params.delta * params.sigma * params.sigma;
    let r = params.r;
    let nv = lay.nv;

    let step = |_n: usize, old: &[f64], new: &mut [f64]| {
        new[nv..(lay.nx - 1) * nv].par_chunks_mut(nv).enumerate().for_each(|(row, out)| {
            let i = row + 1;
            let x = lay.xs[i];
            for (j, o) in out.iter_mut().enumerate() {
                let c = i * nv + j;
                let ev = lay.ev[j];
                let a = 0.5 * ev * ev * x * x * lay.pxx(old, c);
                let b = cross * ev * x * lay.pxv(old, c, j);
                let hamiltonian = maximise_hamiltonian(a, b, lo, hi).1;
                let mu = lay.drift[j];
                let v_terms = half_vv * lay.pvv(old, c, j) + mu * lay.pv_upwind(old, c, j, mu);
                let discount = r * (x * lay.px(old, c) - old[c]);
                *o = old[c] + dt * (hamiltonian + v_terms + discount);
            }
        });
    };

    let terminal = terminal_values(&lay, payoff, opts.terminal);
    let (kept_times, slices) = march(grid, &lay, params, terminal, grid.x_min == 0.0, opts.retention, step)?;
    Ok(PriceSurface {
        kind: SurfaceKind::FullDelta,
        grid: *grid,
        params: *params,
        terminal: opts.terminal,
        fixed_v: None,
        kept_times,
        slices,
    })
}

/// Bang-bang interior update of the limit equation on one row.
#[inline]
fn limit_row(lay: &Layout, params: &ModelParams, dt: f64, i: usize, old: &[f64], out: &mut [f64]) {
    let x = lay.xs[i];
    for (j, o) in out.iter_mut().enumerate() {
        let c = i * lay.nv + j;
        let ev = lay.ev[j];
        let gamma = lay.pxx(old, c);
        let q = bang_bang(gamma, params.sigma_min, params.sigma_max);
        let diffusion = 0.5 * q * q * ev * ev * x * x * gamma;
        let discount = params.r * (x * lay.px(old, c) - old[c]);
        *o = old[c] + dt * (diffusion + discount);
    }
}

/// Black–Scholes–Barenblatt solve for `P₀`: `σ_max` where the discrete gamma
/// is nonnegative, `σ_min` elsewhere.
pub fn solve_bsb_1d(
    params: &ModelParams,
    payoff: &PiecewiseLinearPayoff,
    grid: &GridSpec,
    slice: LimitSlice,
    opts: SolveOptions,
) -> Result<PriceSurface> {
    let fixed_v = match slice {
        LimitSlice::PerNode => None,
        LimitSlice::Fixed(v) => Some(v),
    };
    if let Some(v) = fixed_v {
        if !v.is_finite() {
            return Err(crate::error::invalid("v", "log-factor must be finite"));
        }
    }
    check_cfl(params, grid, Equation::Limit, fixed_v)?;
    let lay = Layout::new(grid, params, fixed_v);
    let dt = grid.dt();
    let nv = lay.nv;
    let step = |_n: usize, old: &[f64], new: &mut [f64]| {
        new[nv..(lay.nx - 1) * nv]
            .par_chunks_mut(nv)
            .enumerate()
            .for_each(|(row, out)| limit_row(&lay, params, dt, row + 1, old, out));
    };
    let terminal = terminal_values(&lay, payoff, opts.terminal);
    let (kept_times, mut slices) = march(grid, &lay, params, terminal, grid.x_min == 0.0, opts.retention, step)?;
    if fixed_v.is_some() {
        for s in &mut slices {
            *s = broadcast(grid, s);
        }
    }
    Ok(PriceSurface {
        kind: SurfaceKind::LimitP0,
        grid: *grid,
        params: *params,
        terminal: opts.terminal,
        fixed_v,
        kept_times,
        slices,
    })
}

/// Limit constants agree; `δ` is irrelevant to `P₀`.
fn same_limit_params(a: &ModelParams, b: &ModelParams) -> bool {
    ModelConfig { delta: 0.0, ..a.config() } == ModelConfig { delta: 0.0, ..b.config() }
}

/// First-order corrector `P₁`:
///
/// ```text
/// −∂ₜP₁ = ½(q*⁰)²e^{2v}x²∂²ₓₓP₁ + q*⁰ρσ e^v x ∂²ₓᵥP₀,   P₁(T) = 0,
/// ```
///
/// with `q*⁰` the bang-bang control of the `P₀` solve. The limit solve is
/// re-marched alongside `P₁` so that the source term sees `P₀` at every
/// step without keeping all slices; every slice `p0` retains is checked
/// against the re-marched values.
pub fn solve_corrector(
    params: &ModelParams,
    payoff: &PiecewiseLinearPayoff,
    grid: &GridSpec,
    p0: &PriceSurface,
    opts: SolveOptions,
) -> Result<PriceSurface> {
    if p0.kind() != SurfaceKind::LimitP0 {
        return Err(Error::WrongKind { expected: "limit_p0", got: p0.kind().name() });
    }
    if p0.fixed_v().is_some() {
        return Err(Error::GridMismatch("corrector needs the per-node P0 family, not a fixed-v solve".into()));
    }
    if !p0.grid().same_layout(grid) {
        return Err(Error::GridMismatch("p0 was solved on a different grid".into()));
    }
    if !same_limit_params(p0.params(), params) {
        return Err(Error::GridMismatch("p0 was solved with different model constants".into()));
    }
    check_cfl(params, grid, Equation::Limit, None)?;

    let lay = Layout::new(grid, params, None);
    let nv = lay.nv;
    let n_t = grid.n_t;
    let dt = grid.dt();
    let cross = params.rho * params.sigma;
    let r = params.r;

    let mut p0_old = terminal_values(&lay, payoff, p0.terminal_treatment());
    let mut p0_new = p0_old.clone();
    let mut old = vec![0.0; lay.nx * nv];
    let mut new = old.clone();
    let zeros = vec![0.0; nv];
    let lower_exact = grid.x_min == 0.0;
    let lower0: Vec<f64> = p0_old[..nv].to_vec();
    let mut lower = vec![0.0; nv];

    let mut kept_times = vec![n_t];
    let mut slices = vec![old.clone()];
    check_against(p0, n_t, &p0_old)?;

    for n in (0..n_t).rev() {
        let p0_prev = &p0_old;
        let p1_prev = &old;
        new[nv..(lay.nx - 1) * nv]
            .par_chunks_mut(nv)
            .zip(p0_new[nv..(lay.nx - 1) * nv].par_chunks_mut(nv))
            .enumerate()
            .for_each(|(row, (out1, out0))| {
                let i = row + 1;
                limit_row(&lay, params, dt, i, p0_prev, out0);
                let x = lay.xs[i];
                for (j, o) in out1.iter_mut().enumerate() {
                    let c = i * nv + j;
                    let ev = lay.ev[j];
                    let q = bang_bang(lay.pxx(p0_prev, c), params.sigma_min, params.sigma_max);
                    let diffusion = 0.5 * q * q * ev * ev * x * x * lay.pxx(p1_prev, c);
                    let source = q * cross * ev * x * lay.pxv(p0_prev, c, j);
                    let discount = r * (x * lay.px(p1_prev, c) - p1_prev[c]);
                    *o = p1_prev[c] + dt * (diffusion + source + discount);
                }
            });
        if lower_exact {
            let disc = (-r * (n_t - n) as f64 * dt).exp();
            for (l, &h0) in lower.iter_mut().zip(&lower0) {
                *l = h0 * disc;
            }
        }
        apply_x_boundaries(&lay, &mut p0_new, lower_exact.then_some(lower.as_slice()));
        apply_x_boundaries(&lay, &mut new, lower_exact.then_some(zeros.as_slice()));
        first_non_finite(&lay, &new, n)?;
        std::mem::swap(&mut old, &mut new);
        std::mem::swap(&mut p0_old, &mut p0_new);
        check_against(p0, n, &p0_old)?;
        if opts.retention.keeps(n, n_t) {
            kept_times.push(n);
            slices.push(old.clone());
        }
    }
    kept_times.reverse();
    slices.reverse();
    Ok(PriceSurface {
        kind: SurfaceKind::CorrectorP1,
        grid: *grid,
        params: *params,
        terminal: opts.terminal,
        fixed_v: None,
        kept_times,
        slices,
    })
}

fn check_against(p0: &PriceSurface, n: usize, marched: &[f64]) -> Result<()> {
    if let Ok(stored) = p0.slice(n) {
        let worst = stored.iter().zip(marched).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if worst > 1e-9 * (1.0 + stored.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            return Err(Error::GridMismatch(format!(
                "p0 slice at time index {n} differs from the limit solve by {worst:e}"
            )));
        }
    }
    Ok(())
}
