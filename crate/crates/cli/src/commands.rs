//! The five subcommands. Each solves or simulates through the library and
//! persists its artifacts under the output directory.

use std::fs;
use std::io::Write;
use std::path::Path;

use hypervol::bsde::{build_driver, simulate_2bsde_residual_with, DriverKind};
use hypervol::convergence::{run_delta_sweep, sweep_grid, NoiseFloor};
use hypervol::hjb::{
    aligned_with_steps, default_gamma_tolerance, solve_bsb_1d, solve_corrector, solve_hjb_2d, with_admissible_steps,
    ControlSchedule, Equation, LimitSlice, PriceSurface, Retention, SolveOptions,
};
use hypervol::sde::{estimate_moment, simulate_paths, Component, MomentKind, QPolicy, SimSpec};
use hypervol::GridSpec;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{FloorName, FloorSetting, RunConfig};
use crate::error::CliError;

/// Number of slices written when `output.all_slices` is set.
const SLICES_WRITTEN: usize = 50;

/// Headline numbers shared by every command; fields that do not apply are
/// `null`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub p_delta: Option<f64>,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub error: Option<f64>,
    pub slope: Option<f64>,
}

struct Artifacts<'a> {
    cfg: &'a RunConfig,
}

impl Artifacts<'_> {
    fn dir(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn header(&self) -> String {
        format!("# config_hash={} seed={}\n", self.cfg.hash, self.cfg.monte_carlo.seed)
    }

    /// Text artifact behind a `#` line with the hash and seed.
    fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
        let mut buf = self.header().into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    /// JSON artifact wrapped with the hash, seed and full config.
    fn json(&self, name: &str, report: impl Serialize) -> Result<(), CliError> {
        let report = serde_json::to_value(report).map_err(|e| CliError::Io(e.to_string()))?;
        let doc = json!({
            "config_hash": self.cfg.hash,
            "seed": self.cfg.monte_carlo.seed,
            "config": self.cfg.effective,
            "report": report,
        });
        self.write_value(name, &doc)
    }

    fn write_value(&self, name: &str, doc: &Value) -> Result<(), CliError> {
        let mut buf = serde_json::to_vec_pretty(doc).map_err(|e| CliError::Io(e.to_string()))?;
        buf.push(b'\n');
        self.write(name, &buf)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir().join(name);
        let mut f = fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn surface(&self, name: &str, s: &PriceSurface) -> Result<(), CliError> {
        self.csv(name, |w| s.write_csv(w, self.cfg.all_slices))
    }

    fn summary(&self, command: &str, s: &Summary, extra: Value) -> Result<(), CliError> {
        let doc = json!({
            "command": command,
            "p_delta": s.p_delta,
            "p0": s.p0,
            "p1": s.p1,
            "error": s.error,
            "slope": s.slope,
            "config_hash": self.cfg.hash,
            "seed": self.cfg.monte_carlo.seed,
            "sigma_vol_of_vol_assumed": self.cfg.sigma_assumed,
            "sigma": self.cfg.params.sigma,
            "details": extra,
            "config": self.cfg.effective,
        });
        self.write_value("summary.json", &doc)
    }
}

fn prepare(cfg: &RunConfig) -> Result<Artifacts<'_>, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    let a = Artifacts { cfg };
    let mut snapshot = cfg.effective.clone();
    snapshot["config_hash"] = json!(cfg.hash);
    a.write_value("config.json", &snapshot)?;
    Ok(a)
}

fn keep(cfg: &RunConfig, n_t: usize) -> SolveOptions {
    if cfg.all_slices {
        SolveOptions::keep(Retention::about(SLICES_WRITTEN, n_t))
    } else {
        SolveOptions::default()
    }
}

/// Grid whose step count is admissible for both `P^δ` and the limit solves.
fn common_grid(cfg: &RunConfig) -> Result<GridSpec, CliError> {
    let g = sweep_grid(&cfg.params, &cfg.grid, &[])?;
    Ok(with_admissible_steps(&cfg.params, &g, Equation::Full))
}

fn sim_spec(cfg: &RunConfig) -> SimSpec {
    let mc = cfg.monte_carlo;
    SimSpec {
        x0: cfg.point.0,
        v0: cfg.point.1,
        n_paths: mc.n_paths,
        n_steps: mc.n_steps,
        horizon: cfg.grid.horizon,
        seed: mc.seed,
    }
}

/// Solves `P^δ` and `P₀`, prints `P^δ(0, x₀, v₀)` and writes both surfaces.
pub fn price(cfg: &RunConfig) -> Result<Summary, CliError> {
    let out = prepare(cfg)?;
    let g = common_grid(cfg)?;
    let opts = keep(cfg, g.n_t);
    let full = solve_hjb_2d(&cfg.params, &cfg.payoff, &g, opts)?;
    let limit = solve_bsb_1d(&cfg.params.with_delta(0.0)?, &cfg.payoff, &g, LimitSlice::PerNode, opts)?;
    let (x, v) = cfg.point;
    let p_delta = full.price_at(x, v)?;
    let p0 = limit.price_at(x, v)?;
    out.surface("surface_p_delta.csv", &full)?;
    out.surface("surface_p0.csv", &limit)?;
    let s = Summary { p_delta: Some(p_delta), p0: Some(p0), error: Some(p_delta - p0), ..Summary::default() };
    out.summary("price", &s, json!({ "delta": cfg.params.delta, "n_t": g.n_t }))?;
    println!("{p_delta}");
    Ok(s)
}

/// δ-sweep of `P^δ − P₀` with the log-log slope fit.
pub fn sweep(cfg: &RunConfig) -> Result<Summary, CliError> {
    let out = prepare(cfg)?;
    let floor = match cfg.sweep.noise_floor {
        FloorSetting::Named(FloorName::Refine) => NoiseFloor::Refine,
        FloorSetting::Named(FloorName::Off) => NoiseFloor::Off,
        FloorSetting::Given(f) => NoiseFloor::Given(f),
    };
    let rep = run_delta_sweep(&cfg.params, &cfg.payoff, &cfg.grid, cfg.point, &cfg.sweep.deltas, floor)?;
    out.csv("sweep.csv", |w| rep.write_csv(w))?;
    out.csv("sweep.gp", |w| rep.write_plot_script(w, "sweep.csv"))?;
    out.json("sweep.json", &rep)?;
    let s = Summary { p0: rep.rows.first().map(|r| r.p0), slope: Some(rep.slope), ..Summary::default() };
    out.summary(
        "sweep",
        &s,
        json!({
            "low_row_count": rep.low_row_count,
            "deltas_excluded": rep.deltas_excluded,
            "noise_floor": rep.noise_floor,
            "intercept": rep.intercept,
        }),
    )?;
    println!("slope {}", rep.slope);
    Ok(s)
}

/// Simulates paths under a fixed control, or under the worst-case control
/// of the solved surface when `monte_carlo.q` is absent.
pub fn simulate(cfg: &RunConfig) -> Result<Summary, CliError> {
    let spec = sim_spec(cfg);
    spec.validate()?;
    let out = prepare(cfg)?;
    let mut s = Summary::default();
    let batch = match cfg.monte_carlo.q {
        Some(q) => simulate_paths(&cfg.params, &spec, QPolicy::Fixed(q))?,
        None => {
            let (g, opts) = aligned_with_steps(&common_grid(cfg)?, spec.n_steps)?;
            let surface = solve_hjb_2d(&cfg.params, &cfg.payoff, &g, opts)?;
            s.p_delta = Some(surface.price_at(spec.x0, spec.v0)?);
            let schedule = ControlSchedule::from_surface(&surface, default_gamma_tolerance(&cfg.payoff, &g))?;
            simulate_paths(&cfg.params, &spec, QPolicy::WorstCase(&schedule))?
        }
    };
    out.csv("paths.csv", |w| batch.write_csv(w))?;
    let moments = [
        estimate_moment(&batch, Component::X, 1, MomentKind::Terminal)?,
        estimate_moment(&batch, Component::X, 2, MomentKind::Terminal)?,
        estimate_moment(&batch, Component::V, 2, MomentKind::TimeIntegrated)?,
    ];
    let payoff: Vec<f64> = (0..batch.n_paths).map(|p| cfg.payoff.eval(batch.x(p, batch.n_steps))).collect();
    let (mean, se) = hypervol::sde::mean_and_se(&payoff);
    out.summary(
        "simulate",
        &s,
        json!({
            "control": batch.control_tag,
            "payoff_mean": mean,
            "payoff_std_error": se,
            "x_terminal_mean": moments[0],
            "x_terminal_second_moment": moments[1],
            "v_integrated_second_moment": moments[2],
        }),
    )?;
    println!("E[h(X_T)] {mean} ± {se}");
    Ok(s)
}

/// Solves `P₀` and `P₁`, and `P^δ` as well when δ > 0.
pub fn corrector(cfg: &RunConfig) -> Result<Summary, CliError> {
    let out = prepare(cfg)?;
    let g = common_grid(cfg)?;
    let opts = keep(cfg, g.n_t);
    let base = cfg.params.with_delta(0.0)?;
    let p0 = solve_bsb_1d(&base, &cfg.payoff, &g, LimitSlice::PerNode, opts)?;
    let p1 = solve_corrector(&base, &cfg.payoff, &g, &p0, opts)?;
    out.surface("surface_p0.csv", &p0)?;
    out.surface("surface_p1.csv", &p1)?;
    let (x, v) = cfg.point;
    let mut s = Summary { p0: Some(p0.price_at(x, v)?), p1: Some(p1.price_at(x, v)?), ..Summary::default() };
    let mut extra = json!({ "n_t": g.n_t });
    let delta = cfg.params.delta;
    if delta > 0.0 {
        let full = solve_hjb_2d(&cfg.params, &cfg.payoff, &g, SolveOptions::default())?;
        let p_delta = full.price_at(x, v)?;
        let (p0, p1) = (s.p0.unwrap_or_default(), s.p1.unwrap_or_default());
        let error = p_delta - p0;
        let corrected_error = error - delta.sqrt() * p1;
        s.p_delta = Some(p_delta);
        s.error = Some(error);
        extra = json!({ "n_t": g.n_t, "delta": delta, "corrected_error": corrected_error, "ratio": corrected_error / delta });
    }
    out.summary("corrector", &s, extra)?;
    println!("P0 {} P1 {}", s.p0.unwrap_or(f64::NAN), s.p1.unwrap_or(f64::NAN));
    Ok(s)
}

/// 2BSDE residual of the solved surface along simulated forward paths.
pub fn check2bsde(cfg: &RunConfig) -> Result<Summary, CliError> {
    let spec = sim_spec(cfg);
    spec.validate()?;
    let out = prepare(cfg)?;
    let (g, opts) = aligned_with_steps(&common_grid(cfg)?, spec.n_steps)?;
    let surface = solve_hjb_2d(&cfg.params, &cfg.payoff, &g, opts)?;
    let kind = if cfg.params.delta > 0.0 { DriverKind::FDelta } else { DriverKind::F0 };
    let mut driver = build_driver(&cfg.params, kind);
    if cfg.literal_driver {
        driver = driver.literal();
    }
    let rep = simulate_2bsde_residual_with(&surface, &cfg.payoff, &spec, &driver)?;
    out.json("bsde.json", &rep)?;
    let s = Summary { p_delta: Some(rep.y0_fd), ..Summary::default() };
    out.summary(
        "check2bsde",
        &s,
        json!({
            "terminal_residual_rms": rep.terminal_residual_rms,
            "mean_residual": rep.mean_residual,
            "n_paths_used": rep.n_paths_used,
            "n_paths_discarded": rep.n_paths_discarded,
        }),
    )?;
    println!("residual rms {} over {} paths", rep.terminal_residual_rms, rep.n_paths_used);
    Ok(s)
}
