//! Model constants, payoffs and discretisation grids shared by every solver.
//!
//! The asset follows `dX = rX dt + X q e^V dW¹` with the log-volatility factor
//! `dV = δ(a − b e^{αV}) dt + √δ σ dW²`, `d⟨W¹, W²⟩ = ρ dt`, and an unknown
//! multiplier `q ∈ [σ_min, σ_max]`. The volatility scale is `F(v) = e^v`.
//!
//! All types validate on construction and are immutable afterwards; read
//! access to the raw fields goes through `Deref` to the plain config struct.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Vol-of-vol used when a configuration does not provide one. The butterfly
/// reference study lists every other constant but not this one.
pub const ASSUMED_VOL_OF_VOL: f64 = 0.5;

/// Raw model constants, as read from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub delta: f64,
}

impl ModelConfig {
    /// Constants of the butterfly study: a=0.6, b=0.5, ρ=0.5, α=2,
    /// Θ=[0.1, 0.2], r=0 and the assumed σ.
    pub fn reference(delta: f64) -> Self {
        Self {
            r: 0.0,
            a: 0.6,
            b: 0.5,
            alpha: 2.0,
            sigma: ASSUMED_VOL_OF_VOL,
            rho: 0.5,
            sigma_min: 0.1,
            sigma_max: 0.2,
            delta,
        }
    }
}

/// Validated model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ModelParams(ModelConfig);

impl ModelParams {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let finite = [
            ("r", cfg.r),
            ("a", cfg.a),
            ("b", cfg.b),
            ("alpha", cfg.alpha),
            ("sigma", cfg.sigma),
            ("rho", cfg.rho),
            ("sigma_min", cfg.sigma_min),
            ("sigma_max", cfg.sigma_max),
            ("delta", cfg.delta),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(invalid(name, format!("must be finite, got {value}")));
            }
        }
        if cfg.sigma_min <= 0.0 {
            return Err(invalid("sigma_min", format!("must be positive, got {}", cfg.sigma_min)));
        }
        if cfg.sigma_min > cfg.sigma_max {
            return Err(invalid(
                "sigma_min",
                format!("must not exceed sigma_max ({} > {})", cfg.sigma_min, cfg.sigma_max),
            ));
        }
        if cfg.rho.abs() > 1.0 {
            return Err(invalid("rho", format!("must lie in [-1, 1], got {}", cfg.rho)));
        }
        for (name, value) in [("b", cfg.b), ("alpha", cfg.alpha), ("sigma", cfg.sigma)] {
            if value <= 0.0 {
                return Err(invalid(name, format!("must be positive, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&cfg.delta) {
            return Err(invalid("delta", format!("must lie in [0, 1], got {}", cfg.delta)));
        }
        Ok(Self(cfg))
    }

    pub fn reference(delta: f64) -> Result<Self> {
        Self::new(ModelConfig::reference(delta))
    }

    pub fn config(&self) -> ModelConfig {
        self.0
    }

    /// Same constants with a different time-scale parameter.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(ModelConfig { delta, ..self.0 })
    }

    /// Same constants with a different uncertainty interval.
    pub fn with_bounds(&self, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        Self::new(ModelConfig { sigma_min, sigma_max, ..self.0 })
    }

    /// Drift of the log-volatility factor without the δ prefactor.
    #[inline]
    pub fn v_drift(&self, v: f64) -> f64 {
        self.0.a - self.0.b * (self.0.alpha * v).exp()
    }

    /// True when Θ collapses to a single point.
    pub fn degenerate_bounds(&self) -> bool {
        self.0.sigma_min == self.0.sigma_max
    }
}

impl Deref for ModelParams {
    type Target = ModelConfig;

    fn deref(&self) -> &ModelConfig {
        &self.0
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let cfg = ModelConfig::deserialize(d)?;
        Self::new(cfg).map_err(serde::de::Error::custom)
    }
}

/// Lower and upper volatility `(σ_min e^v, σ_max e^v)`.
#[inline]
pub fn vol_bounds(params: &ModelParams, v: f64) -> (f64, f64) {
    let scale = v.exp();
    (params.sigma_min * scale, params.sigma_max * scale)
}

/// Continuous piecewise-linear payoff.
///
/// `slopes[0]` applies on `(-∞, knots[0]]`, `slopes[k]` on
/// `[knots[k-1], knots[k]]` and the last slope beyond the last knot.
/// `anchor_value` is the payoff at the first knot, or at `x = 0` when there
/// are no knots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinearPayoff {
    knots: Vec<f64>,
    slopes: Vec<f64>,
    anchor_value: f64,
    #[serde(skip)]
    knot_values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPayoff {
    knots: Vec<f64>,
    slopes: Vec<f64>,
    anchor_value: f64,
}

impl<'de> Deserialize<'de> for PiecewiseLinearPayoff {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawPayoff::deserialize(d)?;
        Self::new(raw.knots, raw.slopes, raw.anchor_value).map_err(serde::de::Error::custom)
    }
}

impl PiecewiseLinearPayoff {
    pub fn new(knots: Vec<f64>, slopes: Vec<f64>, anchor_value: f64) -> Result<Self> {
        if slopes.len() != knots.len() + 1 {
            return Err(invalid(
                "slopes",
                format!("expected {} entries for {} knots, got {}", knots.len() + 1, knots.len(), slopes.len()),
            ));
        }
        if knots.iter().chain(&slopes).any(|v| !v.is_finite()) || !anchor_value.is_finite() {
            return Err(invalid("knots", "knots, slopes and anchor must be finite"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("knots", "must be strictly increasing"));
        }
        let mut knot_values = Vec::with_capacity(knots.len());
        let mut value = anchor_value;
        for (k, &knot) in knots.iter().enumerate() {
            if k > 0 {
                value += slopes[k] * (knot - knots[k - 1]);
            }
            knot_values.push(value);
        }
        Ok(Self { knots, slopes, anchor_value, knot_values })
    }

    /// `(x-k1)⁺ − 2(x-k2)⁺ + (x-k3)⁺` for equally spaced strikes.
    pub fn butterfly(lower: f64, middle: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower, middle, upper], vec![0.0, 1.0, -1.0, 0.0], 0.0)
    }

    /// The reference butterfly with strikes 90, 100, 110.
    pub fn reference_butterfly() -> Self {
        Self::butterfly(90.0, 100.0, 110.0).expect("static payoff is valid")
    }

    pub fn call(strike: f64) -> Result<Self> {
        Self::new(vec![strike], vec![0.0, 1.0], 0.0)
    }

    pub fn put(strike: f64) -> Result<Self> {
        Self::new(vec![strike], vec![-1.0, 0.0], 0.0)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![0.0], value)
    }

    /// The payoff `-h`.
    pub fn negated(&self) -> Self {
        Self::new(
            self.knots.clone(),
            self.slopes.iter().map(|s| -s).collect(),
            -self.anchor_value,
        )
        .expect("negation preserves validity")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn anchor_value(&self) -> f64 {
        self.anchor_value
    }

    /// Evaluates the payoff; defined for every real `x`, including negative.
    pub fn eval(&self, x: f64) -> f64 {
        if self.knots.is_empty() {
            return self.anchor_value + self.slopes[0] * x;
        }
        // index of the first knot strictly greater than x
        let seg = self.knots.partition_point(|&k| k <= x);
        if seg == 0 {
            self.anchor_value + self.slopes[0] * (x - self.knots[0])
        } else {
            self.knot_values[seg - 1] + self.slopes[seg] * (x - self.knots[seg - 1])
        }
    }

    /// Exact mean of the payoff over `[x - half_width, x + half_width]`.
    pub fn cell_average(&self, x: f64, half_width: f64) -> f64 {
        if half_width <= 0.0 {
            return self.eval(x);
        }
        let (lo, hi) = (x - half_width, x + half_width);
        let mut points = vec![lo];
        points.extend(self.knots.iter().copied().filter(|&k| k > lo && k < hi));
        points.push(hi);
        let integral: f64 = points
            .windows(2)
            .map(|w| 0.5 * (self.eval(w[0]) + self.eval(w[1])) * (w[1] - w[0]))
            .sum();
        integral / (hi - lo)
    }

    /// Global Lipschitz constant, `max |slope|`.
    pub fn lipschitz(&self) -> f64 {
        self.slopes.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Slope jump at each knot. Positive jumps are convex kinks, negative
    /// jumps concave ones.
    pub fn slope_jumps(&self) -> Vec<(f64, f64)> {
        self.knots
            .iter()
            .enumerate()
            .map(|(k, &knot)| (knot, self.slopes[k + 1] - self.slopes[k]))
            .collect()
    }

    pub fn is_convex(&self) -> bool {
        self.slope_jumps().iter().all(|&(_, j)| j >= 0.0)
    }
}

/// Standalone evaluation entry point.
pub fn payoff_eval(payoff: &PiecewiseLinearPayoff, x: f64) -> f64 {
    payoff.eval(x)
}

/// Raw grid description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    /// Interior x-nodes; the grid has `n_x + 2` nodes including both ends.
    pub n_x: usize,
    pub v_min: f64,
    pub v_max: f64,
    /// v-nodes including both ends.
    pub n_v: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_t: usize,
    pub cfl_safety: f64,
}

impl GridConfig {
    /// Default domain of the butterfly study: x ∈ [0, 300] with 400 interior
    /// nodes, v ∈ [−3, 1] with 40 nodes, T = 0.15. `n_t` is a placeholder to
    /// be raised to the admissible minimum by the solver helpers.
    pub fn reference() -> Self {
        Self {
            x_min: 0.0,
            x_max: 300.0,
            n_x: 400,
            v_min: -3.0,
            v_max: 1.0,
            n_v: 40,
            horizon: 0.15,
            n_t: 1,
            cfl_safety: 0.4,
        }
    }
}

/// Validated uniform space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct GridSpec(GridConfig);

impl GridSpec {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        let finite = [
            ("x_min", cfg.x_min),
            ("x_max", cfg.x_max),
            ("v_min", cfg.v_min),
            ("v_max", cfg.v_max),
            ("T", cfg.horizon),
            ("cfl_safety", cfg.cfl_safety),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(invalid(name, format!("must be finite, got {value}")));
            }
        }
        if cfg.x_min < 0.0 {
            return Err(invalid("x_min", "must be nonnegative"));
        }
        if cfg.x_min >= cfg.x_max {
            return Err(invalid("x_max", "must exceed x_min"));
        }
        if cfg.v_min >= cfg.v_max {
            return Err(invalid("v_max", "must exceed v_min"));
        }
        if cfg.n_x < 3 {
            return Err(invalid("n_x", "need at least 3 interior nodes"));
        }
        if cfg.n_v < 3 {
            return Err(invalid("n_v", "need at least 3 nodes"));
        }
        if cfg.n_t < 1 {
            return Err(invalid("n_t", "need at least one time step"));
        }
        if cfg.horizon <= 0.0 {
            return Err(invalid("T", "horizon must be positive"));
        }
        if !(cfg.cfl_safety > 0.0 && cfg.cfl_safety <= 1.0) {
            return Err(invalid("cfl_safety", "must lie in (0, 1]"));
        }
        Ok(Self(cfg))
    }

    pub fn config(&self) -> GridConfig {
        self.0
    }

    pub fn with_n_t(&self, n_t: usize) -> Result<Self> {
        Self::new(GridConfig { n_t, ..self.0 })
    }

    /// Halves Δx. The step count is quadrupled, which keeps the x-diffusion
    /// CFL ratio unchanged.
    pub fn refine_x(&self) -> Self {
        Self::new(GridConfig { n_x: 2 * self.0.n_x + 1, n_t: 4 * self.0.n_t, ..self.0 })
            .expect("refinement preserves validity")
    }

    /// Halves both Δx and Δv, quadrupling the step count.
    pub fn refine_xv(&self) -> Self {
        Self::new(GridConfig {
            n_x: 2 * self.0.n_x + 1,
            n_v: 2 * self.0.n_v - 1,
            n_t: 4 * self.0.n_t,
            ..self.0
        })
        .expect("refinement preserves validity")
    }

    /// Total x-node count including boundaries.
    #[inline]
    pub fn nx_total(&self) -> usize {
        self.0.n_x + 2
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.nx_total() * self.0.n_v
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.0.x_max - self.0.x_min) / (self.0.n_x + 1) as f64
    }

    #[inline]
    pub fn dv(&self) -> f64 {
        (self.0.v_max - self.0.v_min) / (self.0.n_v - 1) as f64
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.0.horizon / self.0.n_t as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.0.x_min + i as f64 * self.dx()
    }

    #[inline]
    pub fn v(&self, j: usize) -> f64 {
        self.0.v_min + j as f64 * self.dv()
    }

    #[inline]
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Flat index of node `(i, j)`; storage is x-major.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.0.n_v + j
    }

    pub fn contains(&self, x: f64, v: f64) -> bool {
        x >= self.0.x_min && x <= self.0.x_max && v >= self.0.v_min && v <= self.0.v_max
    }

    /// Same spatial layout and time stepping.
    pub fn same_layout(&self, other: &GridSpec) -> bool {
        self.0 == other.0
    }
}

impl Deref for GridSpec {
    type Target = GridConfig;

    fn deref(&self) -> &GridConfig {
        &self.0
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let cfg = GridConfig::deserialize(d)?;
        Self::new(cfg).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn butterfly_values() {
        let h = PiecewiseLinearPayoff::reference_butterfly();
        assert_eq!(payoff_eval(&h, 100.0), 10.0);
        assert_eq!(payoff_eval(&h, 80.0), 0.0);
        assert_eq!(payoff_eval(&h, 105.0), 5.0);
        assert_eq!(h.eval(90.0), 0.0);
        assert_eq!(h.eval(110.0), 0.0);
        assert_eq!(h.eval(250.0), 0.0);
        assert_eq!(h.eval(-40.0), 0.0);
        assert_eq!(h.lipschitz(), 1.0);
    }

    #[test]
    fn kinks_and_convexity() {
        let h = PiecewiseLinearPayoff::reference_butterfly();
        assert_eq!(h.slope_jumps(), vec![(90.0, 1.0), (100.0, -2.0), (110.0, 1.0)]);
        assert!(!h.is_convex());
        assert!(PiecewiseLinearPayoff::call(100.0).unwrap().is_convex());
        assert!(!PiecewiseLinearPayoff::call(100.0).unwrap().negated().is_convex());
    }

    #[test]
    fn payoff_rejects_bad_shapes() {
        assert!(PiecewiseLinearPayoff::new(vec![1.0, 1.0], vec![0.0, 1.0, 0.0], 0.0).is_err());
        assert!(PiecewiseLinearPayoff::new(vec![1.0], vec![0.0], 0.0).is_err());
        let c = PiecewiseLinearPayoff::constant(3.5).unwrap();
        assert_eq!(c.eval(-10.0), 3.5);
        assert_eq!(c.eval(1e6), 3.5);
    }

    #[test]
    fn cell_average_of_kink() {
        let call = PiecewiseLinearPayoff::call(100.0).unwrap();
        // mean of (x-100)+ over [99, 101] is 0.25
        assert!((call.cell_average(100.0, 1.0) - 0.25).abs() < 1e-14);
        assert!((call.cell_average(105.0, 1.0) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn vol_bound_examples() {
        let p = ModelParams::new(ModelConfig { sigma_min: 0.1, sigma_max: 0.2, ..ModelConfig::reference(0.1) })
            .unwrap();
        assert_eq!(vol_bounds(&p, 0.0), (0.1, 0.2));
        let (lo, hi) = vol_bounds(&p, -1.0);
        assert_eq!(lo, 0.1 * (-1.0f64).exp());
        assert_eq!(hi, 0.2 * (-1.0f64).exp());
        let q = p.with_bounds(0.15, 0.15).unwrap();
        let (lo, hi) = vol_bounds(&q, 0.7);
        assert_eq!(lo, hi);
        assert_eq!(lo, 0.15 * 0.7f64.exp());
    }

    #[test]
    fn params_reject_invariant_violations() {
        let base = ModelConfig::reference(0.2);
        let cases: Vec<(ModelConfig, &str)> = vec![
            (ModelConfig { sigma_min: 0.3, ..base }, "sigma_min"),
            (ModelConfig { sigma_min: 0.0, ..base }, "sigma_min"),
            (ModelConfig { rho: 1.5, ..base }, "rho"),
            (ModelConfig { b: 0.0, ..base }, "b"),
            (ModelConfig { alpha: -1.0, ..base }, "alpha"),
            (ModelConfig { sigma: 0.0, ..base }, "sigma"),
            (ModelConfig { delta: -0.1, ..base }, "delta"),
            (ModelConfig { delta: 1.5, ..base }, "delta"),
            (ModelConfig { a: f64::NAN, ..base }, "a"),
        ];
        for (cfg, field) in cases {
            match ModelParams::new(cfg) {
                Err(Error::Invalid { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected rejection of {field}, got {other:?}"),
            }
        }
        assert!(ModelParams::new(base).is_ok());
    }

    #[test]
    fn grid_layout() {
        let g = GridSpec::new(GridConfig { n_x: 399, x_max: 200.0, ..GridConfig::reference() }).unwrap();
        assert_eq!(g.nx_total(), 401);
        assert_eq!(g.dx(), 0.5);
        assert_eq!(g.x(190), 95.0);
        assert!((g.v(39) - 1.0).abs() < 1e-12);
        let r = g.refine_x();
        assert_eq!(r.dx(), 0.25);
        assert_eq!(r.n_t, 4 * g.n_t);
        assert!(GridSpec::new(GridConfig { x_min: 5.0, x_max: 5.0, ..GridConfig::reference() }).is_err());
        assert!(GridSpec::new(GridConfig { cfl_safety: 1.2, ..GridConfig::reference() }).is_err());
        assert!(GridSpec::new(GridConfig { n_v: 2, ..GridConfig::reference() }).is_err());
    }

    #[test]
    fn params_deserialize_validates() {
        let bad = r#"{"r":0,"a":0.6,"b":0.5,"alpha":2,"sigma":0.5,"rho":0.5,"sigma_min":0.3,"sigma_max":0.2,"delta":0.1}"#;
        let err = serde_json::from_str::<ModelParams>(bad).unwrap_err().to_string();
        assert!(err.contains("sigma_min"), "{err}");
    }

    proptest! {
        #[test]
        fn payoff_lipschitz_bound(
            knots in proptest::collection::btree_set(-50i32..50, 0..5),
            seed_slopes in proptest::collection::vec(-3.0f64..3.0, 6),
            anchor in -10.0f64..10.0,
            x in -100.0f64..100.0,
            y in -100.0f64..100.0,
        ) {
            let knots: Vec<f64> = knots.into_iter().map(f64::from).collect();
            let slopes = seed_slopes[..knots.len() + 1].to_vec();
            let h = PiecewiseLinearPayoff::new(knots, slopes, anchor).unwrap();
            let lip = h.lipschitz();
            prop_assert!((h.eval(x) - h.eval(y)).abs() <= lip * (x - y).abs() + 1e-9);
        }

        #[test]
        fn payoff_continuous_at_knots(k in -50.0f64..50.0, s0 in -2.0f64..2.0, s1 in -2.0f64..2.0) {
            let h = PiecewiseLinearPayoff::new(vec![k], vec![s0, s1], 1.0).unwrap();
            let eps = 1e-9;
            prop_assert!((h.eval(k - eps) - h.eval(k + eps)).abs() < 1e-7);
            prop_assert_eq!(h.eval(k), 1.0);
        }

        #[test]
        fn vol_bounds_ordered(v in -10.0f64..5.0, lo in 0.01f64..1.0, width in 0.0f64..1.0) {
            let p = ModelParams::reference(0.3).unwrap().with_bounds(lo, lo + width).unwrap();
            let (l, u) = vol_bounds(&p, v);
            prop_assert!(l <= u);
            prop_assert!(l > 0.0);
        }
    }
}
