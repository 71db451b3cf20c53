//! δ-sweeps of the worst-case price against its limit, the corrector error,
//! and Monte Carlo estimates of the Feynman–Kac error terms.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::hjb::{
    admissible_steps, bang_bang, greeks, solve_bsb_1d, solve_corrector, solve_hjb_2d, Equation, GreekFields,
    LimitSlice, PriceSurface, SolveOptions, SurfaceKind,
};
use crate::model::{GridSpec, ModelParams, PiecewiseLinearPayoff};
use crate::rng::correlated_pair;
use crate::sde::{mean_and_se, SimSpec};

/// How the scheme noise floor of a sweep is measured.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFloor {
    /// Re-solve the smallest δ with `Δx` halved (and `Δt` CFL-matched) and
    /// take the change in the error `P^δ − P₀`.
    #[default]
    Refine,
    Given(f64),
    /// No exclusion.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub p_delta: f64,
    pub p0: f64,
    pub error: f64,
    pub abs_error: f64,
    pub excluded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    /// `(t, x, v)`
    pub point: (f64, f64, f64),
    /// Sorted by δ, largest first.
    pub rows: Vec<SweepRow>,
    pub slope: f64,
    pub intercept: f64,
    pub deltas_excluded: Vec<f64>,
    pub noise_floor: Option<f64>,
    /// Only two rows entered the fit.
    pub low_row_count: bool,
    pub grid: GridSpec,
    pub params: ModelParams,
}

impl ConvergenceReport {
    pub fn row(&self, delta: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.delta == delta)
    }

    /// Writes `delta,p_delta,p0,error,abs_error,excluded` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "delta,p_delta,p0,error,abs_error,excluded")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.delta, r.p_delta, r.p0, r.error, r.abs_error, r.excluded)?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(io::Error::other)
    }

    /// Gnuplot script drawing `|P^δ − P₀|` against δ on log-log axes, with
    /// the fitted line, from the CSV written by [`Self::write_csv`].
    pub fn write_plot_script<W: Write>(&self, mut w: W, csv_name: &str) -> io::Result<()> {
        writeln!(w, "set datafile separator ','")?;
        writeln!(w, "set logscale xy")?;
        writeln!(w, "set xlabel 'delta'")?;
        writeln!(w, "set ylabel '|P_delta - P_0|'")?;
        writeln!(w, "set key top left")?;
        writeln!(w, "set grid")?;
        writeln!(w, "slope = {}", self.slope)?;
        writeln!(w, "intercept = {}", self.intercept)?;
        writeln!(w, "fit_line(d) = exp(intercept) * d**slope")?;
        writeln!(
            w,
            "plot '{csv_name}' every ::1 using 1:5 with linespoints pt 7 title '|error|', \\\n     fit_line(x) with lines dt 2 title sprintf('slope %.3f', slope)"
        )?;
        Ok(())
    }
}

/// Least-squares line through `(ln δ, ln |e|)`: `(slope, intercept)`.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let usable: Vec<(f64, f64)> =
        points.iter().filter(|(d, e)| *d > 0.0 && e.abs() > 0.0).map(|(d, e)| (d.ln(), e.abs().ln())).collect();
    if usable.len() < 2 {
        return Err(Error::TooFewRows { usable: usable.len() });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = usable.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::TooFewRows { usable: 1 });
    }
    let sxy = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

fn check_deltas(deltas: &[f64]) -> Result<Vec<f64>> {
    if deltas.is_empty() {
        return Err(invalid("deltas", "need at least one value"));
    }
    let mut sorted = deltas.to_vec();
    if let Some(bad) = sorted.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
        return Err(invalid("deltas", format!("{bad} is outside (0, 1]")));
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("deltas", "values must be distinct"));
    }
    Ok(sorted)
}

/// The grid with one step count admissible for every δ in the sweep.
pub fn sweep_grid(params_base: &ModelParams, grid: &GridSpec, deltas: &[f64]) -> Result<GridSpec> {
    let mut n_t = grid.n_t.max(admissible_steps(params_base, grid, Equation::Limit));
    for &d in deltas {
        n_t = n_t.max(admissible_steps(&params_base.with_delta(d)?, grid, Equation::Full));
    }
    grid.with_n_t(n_t)
}

fn full_price(params: &ModelParams, payoff: &PiecewiseLinearPayoff, grid: &GridSpec, point: (f64, f64)) -> Result<f64> {
    let delta = params.delta;
    solve_hjb_2d(params, payoff, grid, SolveOptions::default())
        .and_then(|s| s.price_at(point.0, point.1))
        .map_err(|e| Error::AtDelta { delta, source: Box::new(e) })
}

fn limit_price(params: &ModelParams, payoff: &PiecewiseLinearPayoff, grid: &GridSpec, point: (f64, f64)) -> Result<f64> {
    solve_bsb_1d(params, payoff, grid, LimitSlice::PerNode, SolveOptions::default())?.price_at(point.0, point.1)
}

/// Solves `P^δ` for each δ and `P₀` once, all on one grid, and fits the
/// log-log slope of `|P^δ − P₀|` against δ.
///
/// Rows with `|error|` below ten times the noise floor are excluded from the
/// fit. At least two rows must remain.
pub fn run_delta_sweep(
    params_base: &ModelParams,
    payoff: &PiecewiseLinearPayoff,
    grid: &GridSpec,
    point: (f64, f64),
    deltas: &[f64],
    floor: NoiseFloor,
) -> Result<ConvergenceReport> {
    let sorted = check_deltas(deltas)?;
    if !grid.contains(point.0, point.1) {
        return Err(Error::OutsideGrid { x: point.0, v: point.1 });
    }
    let g = sweep_grid(params_base, grid, &sorted)?;
    let p0 = limit_price(&params_base.with_delta(0.0)?, payoff, &g, point)?;
    let mut rows = Vec::with_capacity(sorted.len());
    for &d in &sorted {
        let p_delta = full_price(&params_base.with_delta(d)?, payoff, &g, point)?;
        let error = p_delta - p0;
        rows.push(SweepRow { delta: d, p_delta, p0, error, abs_error: error.abs(), excluded: false });
    }
    let noise_floor = match floor {
        NoiseFloor::Off => None,
        NoiseFloor::Given(f) => Some(f),
        NoiseFloor::Refine => {
            let smallest = rows.last().expect("nonempty sweep");
            let params = params_base.with_delta(smallest.delta)?;
            let fine = sweep_grid(params_base, &g.refine_x(), &[smallest.delta])?;
            let fine_error =
                full_price(&params, payoff, &fine, point)? - limit_price(&params.with_delta(0.0)?, payoff, &fine, point)?;
            Some((smallest.error - fine_error).abs())
        }
    };
    if let Some(f) = noise_floor {
        for r in &mut rows {
            r.excluded = r.abs_error < 10.0 * f;
        }
    }
    let kept: Vec<(f64, f64)> = rows.iter().filter(|r| !r.excluded).map(|r| (r.delta, r.error)).collect();
    let (slope, intercept) = fit_log_log(&kept)?;
    Ok(ConvergenceReport {
        point: (0.0, point.0, point.1),
        deltas_excluded: rows.iter().filter(|r| r.excluded).map(|r| r.delta).collect(),
        low_row_count: kept.len() == 2,
        rows,
        slope,
        intercept,
        noise_floor,
        grid: g,
        params: *params_base,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrectorRow {
    pub delta: f64,
    pub p_delta: f64,
    pub p0: f64,
    pub p1: f64,
    /// `P^δ − P₀`
    pub error: f64,
    /// `E^δ = P^δ − P₀ − √δ P₁`
    pub corrected_error: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectorReport {
    pub point: (f64, f64, f64),
    pub rows: Vec<CorrectorRow>,
    /// max/min of `|E^δ/δ|` over the rows.
    pub ratio_spread: f64,
    pub grid: GridSpec,
    pub params: ModelParams,
}

impl CorrectorReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "delta,p_delta,p0,p1,error,corrected_error,ratio")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{},{}", r.delta, r.p_delta, r.p0, r.p1, r.error, r.corrected_error, r.ratio)?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(io::Error::other)
    }
}

/// Spread `max/min` of `|values|`; infinite when some value is zero.
pub fn ratio_spread(values: &[f64]) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 { 1.0 } else { max / min }
}

/// Tabulates `E^δ = P^δ − P₀ − √δ P₁` and `E^δ/δ` over the sweep.
pub fn corrector_sweep(
    params_base: &ModelParams,
    payoff: &PiecewiseLinearPayoff,
    grid: &GridSpec,
    point: (f64, f64),
    deltas: &[f64],
) -> Result<CorrectorReport> {
    let sorted = check_deltas(deltas)?;
    if !grid.contains(point.0, point.1) {
        return Err(Error::OutsideGrid { x: point.0, v: point.1 });
    }
    let g = sweep_grid(params_base, grid, &sorted)?;
    let limit_params = params_base.with_delta(0.0)?;
    let p0_surface = solve_bsb_1d(&limit_params, payoff, &g, LimitSlice::PerNode, SolveOptions::default())?;
    let p1_surface = solve_corrector(&limit_params, payoff, &g, &p0_surface, SolveOptions::default())?;
    let p0 = p0_surface.price_at(point.0, point.1)?;
    let p1 = p1_surface.price_at(point.0, point.1)?;
    let mut rows = Vec::with_capacity(sorted.len());
    for &d in &sorted {
        let p_delta = full_price(&params_base.with_delta(d)?, payoff, &g, point)?;
        let error = p_delta - p0;
        let corrected_error = error - d.sqrt() * p1;
        rows.push(CorrectorRow { delta: d, p_delta, p0, p1, error, corrected_error, ratio: corrected_error / d });
    }
    let spread = ratio_spread(&rows.iter().map(|r| r.ratio).collect::<Vec<_>>());
    Ok(CorrectorReport { point: (0.0, point.0, point.1), rows, ratio_spread: spread, grid: g, params: *params_base })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Which surface supplied the worst-case control `q*^δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSource {
    DeltaSolve,
    /// `P₀` bang-bang field used in place of `q*^δ`.
    LimitProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeynmanKacTerms {
    pub i0: Estimate,
    pub i1: Estimate,
    pub i2: Option<Estimate>,
    pub i3: Option<Estimate>,
    pub delta: f64,
    pub control_source: ControlSource,
    pub n_paths: usize,
    pub n_steps: usize,
}

/// Slice-cached Greeks of one surface during a time-major sweep.
struct GreekCache<'a> {
    surface: &'a PriceSurface,
    current: Option<(usize, GreekFields)>,
}

impl<'a> GreekCache<'a> {
    fn new(surface: &'a PriceSurface) -> Self {
        Self { surface, current: None }
    }

    fn at_time(&mut self, t: f64) -> Result<&GreekFields> {
        let n = self.surface.nearest_time_index(t);
        if self.current.as_ref().is_none_or(|(m, _)| *m != n) {
            self.current = Some((n, greeks(self.surface, n)?));
        }
        Ok(&self.current.as_ref().expect("filled above").1)
    }
}

#[derive(Clone, Copy, Default)]
struct FkPath {
    log_x: f64,
    v: f64,
    acc: [f64; 4],
}

/// Monte Carlo estimates of the terms of
/// `E^δ = I₀ + √δ I₁ + δ I₂ + δ^{3/2} I₃` along worst-case paths.
///
/// The control differences are the indicator forms
/// `q*^δ − q*⁰ = (σ_max − σ_min)(1{∂²ₓₓP^δ ≥ 0} − 1{∂²ₓₓP₀ ≥ 0})` and
/// likewise for the squares, so both terms vanish when `σ_min = σ_max`.
/// `X` follows `dX = q*^δ e^V X dW¹`. Without a `P^δ` surface the `P₀`
/// field stands in for `q*^δ` and the result is flagged.
///
/// Greeks come from the nearest kept slice of each surface; time integrals
/// use the trapezoidal rule on the simulation steps.
pub fn feynman_kac_terms(
    params: &ModelParams,
    p_delta: Option<&PriceSurface>,
    p0: &PriceSurface,
    p1: &PriceSurface,
    spec: &SimSpec,
    higher_order: bool,
) -> Result<FeynmanKacTerms> {
    spec.validate()?;
    if p0.kind() != SurfaceKind::LimitP0 {
        return Err(Error::WrongKind { expected: "limit_p0", got: p0.kind().name() });
    }
    if p1.kind() != SurfaceKind::CorrectorP1 {
        return Err(Error::WrongKind { expected: "corrector_p1", got: p1.kind().name() });
    }
    if let Some(s) = p_delta {
        if s.kind() != SurfaceKind::FullDelta {
            return Err(Error::WrongKind { expected: "full_delta", got: s.kind().name() });
        }
        if !s.grid().same_layout(p0.grid()) {
            return Err(Error::GridMismatch("P^δ and P₀ must share a grid".into()));
        }
    }
    if !p1.grid().same_layout(p0.grid()) {
        return Err(Error::GridMismatch("P₁ and P₀ must share a grid".into()));
    }
    let (lo, hi) = (params.sigma_min, params.sigma_max);
    let (dq, dq2) = (hi - lo, hi * hi - lo * lo);
    let dt = spec.dt();
    let sqrt_dt = dt.sqrt();
    let vol_v = params.delta.sqrt() * params.sigma * sqrt_dt;
    let rho_sigma = params.rho * params.sigma;
    let half_s2 = 0.5 * params.sigma * params.sigma;

    let mut c_delta = p_delta.map(GreekCache::new);
    let mut c0 = GreekCache::new(p0);
    let mut c1 = GreekCache::new(p1);
    let mut paths = vec![FkPath { log_x: spec.x0.ln(), v: spec.v0, acc: [0.0; 4] }; spec.n_paths];

    for k in 0..=spec.n_steps {
        let t = k as f64 * dt;
        let weight = if k == 0 || k == spec.n_steps { 0.5 * dt } else { dt };
        let gd = match c_delta.as_mut() {
            Some(c) => Some(c.at_time(t)?.clone()),
            None => None,
        };
        let g0 = c0.at_time(t)?.clone();
        let g1 = c1.at_time(t)?;
        let last = k == spec.n_steps;
        paths.par_iter_mut().enumerate().for_each(|(p, st)| {
            let x = st.log_x.exp();
            let v = st.v;
            let ev = v.exp();
            let a0 = g0.at(x, v);
            let a1 = g1.at(x, v);
            let gamma_d = gd.as_ref().map_or(a0.gamma, |g| g.at(x, v).gamma);
            let ind = f64::from(u8::from(gamma_d >= 0.0)) - f64::from(u8::from(a0.gamma >= 0.0));
            let q_delta = bang_bang(gamma_d, lo, hi);
            let xe = x * ev;
            st.acc[0] += weight * 0.5 * dq2 * ind * xe * xe * a0.gamma;
            st.acc[1] += weight * (dq * ind * rho_sigma * xe * a0.vanna + 0.5 * dq2 * ind * xe * xe * a1.gamma);
            if higher_order {
                let mu = params.v_drift(v);
                st.acc[2] += weight * (q_delta * rho_sigma * xe * a1.vanna + half_s2 * a0.vomma + mu * a0.vega);
                st.acc[3] += weight * (half_s2 * a1.vomma + mu * a1.vega);
            }
            if !last {
                let (z1, z2) = correlated_pair(params.rho, spec.seed, p as u64, k as u64);
                let vol = q_delta * ev;
                st.log_x += -0.5 * vol * vol * dt + vol * sqrt_dt * z1;
                st.v += params.delta * params.v_drift(v) * dt + vol_v * z2;
            }
        });
    }

    let estimate = |m: usize| {
        let samples: Vec<f64> = paths.iter().map(|p| p.acc[m]).collect();
        let (value, std_error) = mean_and_se(&samples);
        Estimate { value, std_error }
    };
    Ok(FeynmanKacTerms {
        i0: estimate(0),
        i1: estimate(1),
        i2: higher_order.then(|| estimate(2)),
        i3: higher_order.then(|| estimate(3)),
        delta: params.delta,
        control_source: if p_delta.is_some() { ControlSource::DeltaSolve } else { ControlSource::LimitProxy },
        n_paths: spec.n_paths,
        n_steps: spec.n_steps,
    })
}
