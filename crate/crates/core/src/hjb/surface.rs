use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GridSpec, ModelParams};

/// Which equation a surface solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    /// Full G-HJB solution `P^δ`.
    FullDelta,
    /// Leading-order Black–Scholes–Barenblatt solution `P₀`.
    LimitP0,
    /// First-order corrector `P₁`.
    CorrectorP1,
}

impl SurfaceKind {
    pub fn name(self) -> &'static str {
        match self {
            SurfaceKind::FullDelta => "full_delta",
            SurfaceKind::LimitP0 => "limit_p0",
            SurfaceKind::CorrectorP1 => "corrector_p1",
        }
    }
}

/// Which time slices a solve keeps in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Retention {
    /// Only `t = 0` and `t = T`.
    #[default]
    Endpoints,
    /// Every `k`-th time index plus both endpoints.
    Every(usize),
    /// All time indices.
    All,
}

impl Retention {
    /// Roughly `count` evenly spaced slices over `n_t` steps.
    pub fn about(count: usize, n_t: usize) -> Self {
        if count == 0 || count >= n_t {
            Retention::All
        } else {
            Retention::Every(n_t.div_ceil(count).max(1))
        }
    }

    pub fn keeps(self, n: usize, n_t: usize) -> bool {
        n == 0
            || n == n_t
            || match self {
                Retention::Endpoints => false,
                Retention::Every(k) => k > 0 && n.is_multiple_of(k),
                Retention::All => true,
            }
    }
}

/// How the terminal payoff is sampled onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalTreatment {
    #[default]
    Pointwise,
    /// Mean of the payoff over each cell `[x − Δx/2, x + Δx/2]`.
    CellAverage,
}

/// Discrete solution on a space-time grid.
///
/// Slices are stored x-major (`values[i * n_v + j]`) and kept in ascending
/// time-index order.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    pub(crate) kind: SurfaceKind,
    pub(crate) grid: GridSpec,
    pub(crate) params: ModelParams,
    pub(crate) terminal: TerminalTreatment,
    /// For a limit surface solved at one log-factor only.
    pub(crate) fixed_v: Option<f64>,
    pub(crate) kept_times: Vec<usize>,
    pub(crate) slices: Vec<Vec<f64>>,
}

impl PriceSurface {
    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn terminal_treatment(&self) -> TerminalTreatment {
        self.terminal
    }

    pub fn fixed_v(&self) -> Option<f64> {
        self.fixed_v
    }

    pub fn kept_times(&self) -> &[usize] {
        &self.kept_times
    }

    pub fn slice(&self, time_index: usize) -> Result<&[f64]> {
        self.kept_times
            .binary_search(&time_index)
            .map(|k| self.slices[k].as_slice())
            .map_err(|_| Error::MissingSlice(time_index))
    }

    pub fn initial(&self) -> &[f64] {
        &self.slices[0]
    }

    pub fn terminal(&self) -> &[f64] {
        self.slices.last().expect("terminal slice always kept")
    }

    pub fn at_node(&self, time_index: usize, i: usize, j: usize) -> Result<f64> {
        Ok(self.slice(time_index)?[self.grid.idx(i, j)])
    }

    /// Kept time index closest to `t`.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        let target = t / self.grid.dt();
        let k = self.kept_times.partition_point(|&n| (n as f64) < target);
        match (k.checked_sub(1), self.kept_times.get(k)) {
            (Some(lo), Some(&hi)) => {
                let lo = self.kept_times[lo];
                if target - lo as f64 <= hi as f64 - target { lo } else { hi }
            }
            (None, Some(&hi)) => hi,
            (Some(lo), None) => self.kept_times[lo],
            (None, None) => unreachable!("surfaces keep at least two slices"),
        }
    }

    /// Bilinear value on a kept slice; the point is clamped into the grid.
    pub fn value_at(&self, time_index: usize, x: f64, v: f64) -> Result<f64> {
        Ok(interpolate(&self.grid, self.slice(time_index)?, x, v))
    }

    /// Value at `(0, x, v)`; fails when the point lies outside the grid.
    pub fn price_at(&self, x: f64, v: f64) -> Result<f64> {
        if !self.grid.contains(x, v) {
            return Err(Error::OutsideGrid { x, v });
        }
        Ok(interpolate(&self.grid, self.initial(), x, v))
    }

    /// Writes kept slices as CSV with columns `t,x,v,value`.
    pub fn write_csv<W: Write>(&self, mut w: W, all_slices: bool) -> io::Result<()> {
        writeln!(w, "t,x,v,value")?;
        let grid = &self.grid;
        let chosen: Vec<usize> = if all_slices {
            (0..self.kept_times.len()).collect()
        } else {
            vec![0, self.kept_times.len() - 1]
        };
        for k in chosen {
            let t = grid.t(self.kept_times[k]);
            let slice = &self.slices[k];
            for i in 0..grid.nx_total() {
                for j in 0..grid.n_v {
                    writeln!(w, "{},{},{},{}", t, grid.x(i), grid.v(j), slice[grid.idx(i, j)])?;
                }
            }
        }
        Ok(())
    }
}

/// Cell containing `(x, v)` and the fractional offsets inside it, with the
/// point clamped into the grid.
#[inline]
pub(crate) fn locate(grid: &GridSpec, x: f64, v: f64) -> (usize, usize, f64, f64) {
    let fx = ((x - grid.x_min) / grid.dx()).clamp(0.0, (grid.nx_total() - 1) as f64);
    let fv = ((v - grid.v_min) / grid.dv()).clamp(0.0, (grid.n_v - 1) as f64);
    let i = (fx.floor() as usize).min(grid.nx_total() - 2);
    let j = (fv.floor() as usize).min(grid.n_v - 2);
    (i, j, fx - i as f64, fv - j as f64)
}

/// Bilinear interpolation of a node field.
#[inline]
pub fn interpolate(grid: &GridSpec, field: &[f64], x: f64, v: f64) -> f64 {
    let (i, j, wx, wv) = locate(grid, x, v);
    let f00 = field[grid.idx(i, j)];
    let f01 = field[grid.idx(i, j + 1)];
    let f10 = field[grid.idx(i + 1, j)];
    let f11 = field[grid.idx(i + 1, j + 1)];
    (1.0 - wx) * ((1.0 - wv) * f00 + wv * f01) + wx * ((1.0 - wv) * f10 + wv * f11)
}

/// Nearest node to `(x, v)`, clamped into the grid.
#[inline]
pub fn nearest_node(grid: &GridSpec, x: f64, v: f64) -> (usize, usize) {
    let fx = ((x - grid.x_min) / grid.dx()).round().clamp(0.0, (grid.nx_total() - 1) as f64);
    let fv = ((v - grid.v_min) / grid.dv()).round().clamp(0.0, (grid.n_v - 1) as f64);
    (fx as usize, fv as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GridConfig, ModelParams};

    fn small_grid() -> GridSpec {
        GridSpec::new(GridConfig {
            x_min: 0.0,
            x_max: 10.0,
            n_x: 9,
            v_min: -1.0,
            v_max: 1.0,
            n_v: 5,
            horizon: 1.0,
            n_t: 10,
            cfl_safety: 0.4,
        })
        .unwrap()
    }

    #[test]
    fn bilinear_is_exact_for_bilinear_fields() {
        let g = small_grid();
        let field: Vec<f64> = (0..g.nx_total())
            .flat_map(|i| (0..g.n_v).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * g.x(i) - 3.0 * g.v(j) + 0.5 * g.x(i) * g.v(j))
            .collect();
        for &(x, v) in &[(3.3, 0.1), (0.0, -1.0), (10.0, 1.0), (7.25, -0.6)] {
            let expect = 2.0 * x - 3.0 * v + 0.5 * x * v;
            assert!((interpolate(&g, &field, x, v) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn retention_rules() {
        assert!(Retention::Endpoints.keeps(0, 10));
        assert!(Retention::Endpoints.keeps(10, 10));
        assert!(!Retention::Endpoints.keeps(5, 10));
        assert!(Retention::Every(3).keeps(9, 10));
        assert!(!Retention::Every(3).keeps(8, 10));
        assert_eq!(Retention::about(5, 100), Retention::Every(20));
        assert_eq!(Retention::about(500, 100), Retention::All);
    }

    #[test]
    fn nearest_kept_time() {
        let g = small_grid();
        let s = PriceSurface {
            kind: SurfaceKind::LimitP0,
            grid: g,
            params: ModelParams::reference(0.0).unwrap(),
            terminal: TerminalTreatment::Pointwise,
            fixed_v: None,
            kept_times: vec![0, 4, 10],
            slices: vec![vec![0.0; g.node_count()]; 3],
        };
        assert_eq!(s.nearest_time_index(0.0), 0);
        assert_eq!(s.nearest_time_index(0.19), 0);
        assert_eq!(s.nearest_time_index(0.21), 4);
        assert_eq!(s.nearest_time_index(0.75), 10);
        assert_eq!(s.nearest_time_index(2.0), 10);
        assert!(matches!(s.slice(5), Err(Error::MissingSlice(5))));
        assert!(s.price_at(11.0, 0.0).is_err());
    }
}
