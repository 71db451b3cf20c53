//! Run configuration: one JSON document, dotted-path overrides, validation
//! and the canonical hash stamped on every artifact.

use std::path::{Path, PathBuf};

use hypervol::{GridConfig, GridSpec, ModelConfig, ModelParams, PiecewiseLinearPayoff, ASSUMED_VOL_OF_VOL};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Model block. `sigma` may be omitted, in which case the assumed
/// vol-of-vol is used and the run is flagged.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub delta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let r = ModelConfig::reference(0.2);
        Self {
            r: r.r,
            a: r.a,
            b: r.b,
            alpha: r.alpha,
            sigma: None,
            rho: r.rho,
            sigma_min: r.sigma_min,
            sigma_max: r.sigma_max,
            delta: r.delta,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    pub knots: Vec<f64>,
    pub slopes: Vec<f64>,
    pub anchor_value: f64,
}

impl Default for PayoffSection {
    fn default() -> Self {
        let h = PiecewiseLinearPayoff::reference_butterfly();
        Self { knots: h.knots().to_vec(), slopes: h.slopes().to_vec(), anchor_value: h.anchor_value() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub n_v: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Lower bound on the step count; raised to the admissible minimum.
    pub n_t: usize,
    pub cfl_safety: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridConfig::reference();
        Self {
            x_min: g.x_min,
            x_max: g.x_max,
            n_x: g.n_x,
            v_min: g.v_min,
            v_max: g.v_max,
            n_v: g.n_v,
            horizon: g.horizon,
            n_t: g.n_t,
            cfl_safety: g.cfl_safety,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointSection {
    pub x: f64,
    pub v: f64,
}

impl Default for PointSection {
    fn default() -> Self {
        Self { x: 100.0, v: -1.0 }
    }
}

/// `"refine"`, `"off"` or a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FloorSetting {
    Given(f64),
    Named(FloorName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorName {
    Refine,
    Off,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub deltas: Vec<f64>,
    pub noise_floor: FloorSetting,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { deltas: vec![0.5, 0.35, 0.2, 0.1, 0.05], noise_floor: FloorSetting::Named(FloorName::Refine) }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Fixed control; absent means the worst-case control of the solved
    /// surface.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self { n_paths: 1000, n_steps: 50, seed: 1, q: None }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsdeSection {
    /// Use the driver exactly as printed instead of the PDE-consistent one.
    pub literal_driver: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write every kept time slice instead of only the first and last.
    pub all_slices: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), all_slices: false }
    }
}

/// Raw configuration document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawConfig {
    pub model: ModelSection,
    pub payoff: PayoffSection,
    pub grid: GridSection,
    pub point: PointSection,
    pub sweep: SweepSection,
    pub monte_carlo: MonteCarloSection,
    pub bsde: BsdeSection,
    pub output: OutputSection,
}

/// Validated configuration ready for the commands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: ModelParams,
    pub payoff: PiecewiseLinearPayoff,
    pub grid: GridSpec,
    pub point: (f64, f64),
    pub sweep: SweepSection,
    pub monte_carlo: MonteCarloSection,
    pub literal_driver: bool,
    pub out_dir: PathBuf,
    pub all_slices: bool,
    pub sigma_assumed: bool,
    /// Canonical effective document, with `model.sigma` filled in.
    pub effective: Value,
    pub hash: String,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    for s in &overrides.sets {
        apply_set(&mut doc, s)?;
    }
    if let Some(seed) = overrides.seed {
        set_path(&mut doc, "monte_carlo.seed", Value::from(seed))?;
    }
    if let Some(out) = &overrides.out {
        set_path(&mut doc, "output.dir", Value::from(out.to_string_lossy().into_owned()))?;
    }
    from_value(doc)
}

pub fn from_value(doc: Value) -> Result<RunConfig, CliError> {
    let raw: RawConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner()))
    })?;
    validate(raw)
}

fn validate(mut raw: RawConfig) -> Result<RunConfig, CliError> {
    let sigma_assumed = raw.model.sigma.is_none();
    let sigma = *raw.model.sigma.get_or_insert(ASSUMED_VOL_OF_VOL);
    let m = raw.model;
    let params = ModelParams::new(ModelConfig {
        r: m.r,
        a: m.a,
        b: m.b,
        alpha: m.alpha,
        sigma,
        rho: m.rho,
        sigma_min: m.sigma_min,
        sigma_max: m.sigma_max,
        delta: m.delta,
    })?;
    let p = &raw.payoff;
    let payoff = PiecewiseLinearPayoff::new(p.knots.clone(), p.slopes.clone(), p.anchor_value)?;
    let g = raw.grid;
    let grid = GridSpec::new(GridConfig {
        x_min: g.x_min,
        x_max: g.x_max,
        n_x: g.n_x,
        v_min: g.v_min,
        v_max: g.v_max,
        n_v: g.n_v,
        horizon: g.horizon,
        n_t: g.n_t,
        cfl_safety: g.cfl_safety,
    })?;
    let point = (raw.point.x, raw.point.v);
    if !grid.contains(point.0, point.1) {
        return Err(hypervol::Error::OutsideGrid { x: point.0, v: point.1 }.into());
    }
    if let FloorSetting::Given(f) = raw.sweep.noise_floor {
        if !(f >= 0.0 && f.is_finite()) {
            return Err(CliError::Config(format!("invalid `sweep.noise_floor`: must be finite and nonnegative, got {f}")));
        }
    }
    let effective = serde_json::to_value(&raw).map_err(|e| CliError::Config(e.to_string()))?;
    let hash = config_hash(&effective);
    Ok(RunConfig {
        params,
        payoff,
        grid,
        point,
        sweep: raw.sweep,
        monte_carlo: raw.monte_carlo,
        literal_driver: raw.bsde.literal_driver,
        out_dir: raw.output.dir,
        all_slices: raw.output.all_slices,
        sigma_assumed,
        effective,
        hash,
    })
}

/// SHA-256 of the canonical document without the `output` section, so the
/// same run written to two directories carries the same hash.
pub fn config_hash(effective: &Value) -> String {
    let mut doc = effective.clone();
    if let Value::Object(m) = &mut doc {
        m.remove("output");
    }
    hex::encode(Sha256::digest(canonical(&doc).as_bytes()))
}

/// Compact JSON with object keys sorted.
pub fn canonical(value: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                Value::Object(keys.into_iter().map(|k| (k.clone(), sorted(&m[k]))).collect())
            }
            Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    sorted(value).to_string()
}

/// Applies `a.b.c=value`. The value is parsed as JSON and falls back to a
/// plain string.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(doc, key.trim(), value)
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            _ => {
                let prefix = parts[..k].join(".");
                return Err(CliError::Config(format!("cannot set `{key}`: `{prefix}` is not an object")));
            }
        };
        if k + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("loop returns on the last key")
}
