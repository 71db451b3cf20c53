//! Worst-case controls, the zero-gamma set `S⁰` and the sign-mismatch set `A^δ`.

use serde::Serialize;

use super::greeks::{greeks, GreekFields};
use super::surface::{nearest_node, PriceSurface, SurfaceKind};
use crate::error::{Error, Result};
use crate::model::{GridSpec, PiecewiseLinearPayoff};

/// Maximiser of `f(q) = a q² + b q` over `[lo, hi]`.
///
/// Candidates are both endpoints and, when `a ≠ 0`, the stationary point
/// `−b / 2a` if it falls inside the interval. Ties resolve to `hi`.
#[inline]
pub fn maximise_hamiltonian(a: f64, b: f64, lo: f64, hi: f64) -> (f64, f64) {
    let f = |q: f64| (a * q + b) * q;
    let mut best = (hi, f(hi));
    let at_lo = f(lo);
    if at_lo > best.1 {
        best = (lo, at_lo);
    }
    if a != 0.0 {
        let q_hat = -b / (2.0 * a);
        if q_hat > lo && q_hat < hi {
            let at_hat = f(q_hat);
            if at_hat > best.1 {
                best = (q_hat, at_hat);
            }
        }
    }
    best
}

/// Bang-bang control of the limit equation: `hi` where `gamma ≥ 0`.
#[inline]
pub fn bang_bang(gamma: f64, lo: f64, hi: f64) -> f64 {
    if gamma >= 0.0 { hi } else { lo }
}

/// Curvature dead-band `1e-6 · max|h| / Δx²` over the grid nodes.
pub fn default_gamma_tolerance(payoff: &PiecewiseLinearPayoff, grid: &GridSpec) -> f64 {
    let max_h = (0..grid.nx_total()).map(|i| payoff.eval(grid.x(i)).abs()).fold(0.0, f64::max);
    let scale = if max_h > 0.0 { max_h } else { 1.0 };
    1e-6 * scale / (grid.dx() * grid.dx())
}

/// Worst-case control on one time slice.
#[derive(Debug, Clone, Serialize)]
pub struct ControlField {
    pub q_star: Vec<f64>,
    #[serde(skip)]
    pub grid: GridSpec,
    pub source_kind: SurfaceKind,
    pub gamma_tolerance: f64,
    pub time_index: usize,
}

impl ControlField {
    /// Control at the node nearest to `(x, v)`.
    #[inline]
    pub fn q_at(&self, x: f64, v: f64) -> f64 {
        let (i, j) = nearest_node(&self.grid, x, v);
        self.q_star[self.grid.idx(i, j)]
    }

    /// Writes `x,v,q_star` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,v,q_star")?;
        for i in 0..self.grid.nx_total() {
            for j in 0..self.grid.n_v {
                writeln!(w, "{},{},{}", self.grid.x(i), self.grid.v(j), self.q_star[self.grid.idx(i, j)])?;
            }
        }
        Ok(())
    }
}

fn field_from_greeks(
    surface: &PriceSurface,
    g: &GreekFields,
    time_index: usize,
    gamma_tolerance: f64,
) -> Result<ControlField> {
    let p = surface.params();
    let grid = surface.grid();
    let (lo, hi) = (p.sigma_min, p.sigma_max);
    let mut q_star = vec![hi; grid.node_count()];
    match surface.kind() {
        SurfaceKind::LimitP0 => {
            for (q, &gamma) in q_star.iter_mut().zip(&g.gamma) {
                *q = if gamma >= -gamma_tolerance { hi } else { lo };
            }
        }
        SurfaceKind::FullDelta => {
            let cross = p.delta.sqrt() * p.rho * p.sigma;
            for i in 0..grid.nx_total() {
                let x = grid.x(i);
                for j in 0..grid.n_v {
                    let k = grid.idx(i, j);
                    let ev = grid.v(j).exp();
                    let gamma = if g.gamma[k].abs() <= gamma_tolerance { 0.0 } else { g.gamma[k] };
                    let a = 0.5 * ev * ev * x * x * gamma;
                    let b = cross * ev * x * g.vanna[k];
                    q_star[k] = maximise_hamiltonian(a, b, lo, hi).0;
                }
            }
        }
        SurfaceKind::CorrectorP1 => {
            return Err(Error::WrongKind { expected: "full_delta or limit_p0", got: "corrector_p1" })
        }
    }
    Ok(ControlField { q_star, grid: *grid, source_kind: surface.kind(), gamma_tolerance, time_index })
}

/// Worst-case control extracted from a solved surface.
///
/// Limit surfaces give the bang-bang rule `σ_max` where `Γ ≥ −ε`, else
/// `σ_min`. Full surfaces maximise the quadratic Hamiltonian with discrete
/// gamma and vanna, treating `|Γ| ≤ ε` as zero curvature.
pub fn optimal_control_field(
    surface: &PriceSurface,
    time_index: usize,
    gamma_tolerance: f64,
) -> Result<ControlField> {
    let g = greeks(surface, time_index)?;
    field_from_greeks(surface, &g, time_index, gamma_tolerance)
}

/// Controls on every kept slice, looked up by nearest slice and nearest node.
#[derive(Debug, Clone)]
pub struct ControlSchedule {
    times: Vec<f64>,
    fields: Vec<ControlField>,
}

impl ControlSchedule {
    pub fn from_surface(surface: &PriceSurface, gamma_tolerance: f64) -> Result<Self> {
        let grid = surface.grid();
        let mut times = Vec::new();
        let mut fields = Vec::new();
        for &n in surface.kept_times() {
            times.push(grid.t(n));
            fields.push(optimal_control_field(surface, n, gamma_tolerance)?);
        }
        Ok(Self { times, fields })
    }

    pub fn field_near(&self, t: f64) -> &ControlField {
        let k = self.times.partition_point(|&s| s < t);
        let k = if k == 0 {
            0
        } else if k == self.times.len() || t - self.times[k - 1] <= self.times[k] - t {
            k - 1
        } else {
            k
        };
        &self.fields[k]
    }

    #[inline]
    pub fn q(&self, t: f64, x: f64, v: f64) -> f64 {
        self.field_near(t).q_at(x, v)
    }
}

/// Node masks for `S⁰ = {|Γ⁰| ≤ ε}` and `A^δ = {Γ^δ > ε, Γ⁰ < −ε}`.
#[derive(Debug, Clone, Serialize)]
pub struct MismatchSets {
    pub zero_set: Vec<bool>,
    pub a_delta: Vec<bool>,
    #[serde(skip)]
    pub grid: GridSpec,
}

impl MismatchSets {
    pub fn a_delta_fraction(&self) -> f64 {
        fraction(&self.a_delta)
    }

    pub fn zero_set_fraction(&self) -> f64 {
        fraction(&self.zero_set)
    }

    /// Fraction of `A^δ` nodes inside the window `[x_lo, x_hi] × [v_lo, v_hi]`.
    pub fn a_delta_fraction_in(&self, x_lo: f64, x_hi: f64, v_lo: f64, v_hi: f64) -> f64 {
        let mut hits = 0usize;
        let mut total = 0usize;
        for i in 0..self.grid.nx_total() {
            let x = self.grid.x(i);
            for j in 0..self.grid.n_v {
                let v = self.grid.v(j);
                if x >= x_lo && x <= x_hi && v >= v_lo && v <= v_hi {
                    total += 1;
                    hits += usize::from(self.a_delta[self.grid.idx(i, j)]);
                }
            }
        }
        if total == 0 { 0.0 } else { hits as f64 / total as f64 }
    }
}

fn fraction(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64
}

pub fn mismatch_set(
    p_delta: &PriceSurface,
    p0: &PriceSurface,
    time_index: usize,
    gamma_tolerance: f64,
) -> Result<MismatchSets> {
    if !p_delta.grid().same_layout(p0.grid()) {
        return Err(Error::GridMismatch("mismatch_set needs surfaces on the same grid".into()));
    }
    let gd = greeks(p_delta, time_index)?;
    let g0 = greeks(p0, time_index)?;
    let eps = gamma_tolerance;
    let zero_set = g0.gamma.iter().map(|g| g.abs() <= eps).collect();
    let a_delta = gd.gamma.iter().zip(&g0.gamma).map(|(&d, &z)| d > eps && z < -eps).collect();
    Ok(MismatchSets { zero_set, a_delta, grid: *p0.grid() })
}
