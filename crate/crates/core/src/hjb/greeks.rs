//! Finite-difference sensitivities of a surface slice.
//!
//! Central differences in the interior, second-order one-sided stencils on
//! the grid boundary. Vanna is the v-derivative of the delta field, which
//! reduces to the usual four-point stencil in the interior.

use super::surface::{interpolate, PriceSurface};
use crate::error::Result;
use crate::model::GridSpec;

#[derive(Debug, Clone)]
pub struct GreekFields {
    pub grid: GridSpec,
    /// ∂ₓP
    pub delta: Vec<f64>,
    /// ∂²ₓₓP
    pub gamma: Vec<f64>,
    /// ∂ᵥP
    pub vega: Vec<f64>,
    /// ∂²ₓᵥP
    pub vanna: Vec<f64>,
    /// ∂²ᵥᵥP
    pub vomma: Vec<f64>,
}

/// Point sensitivities, bilinearly interpolated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGreeks {
    pub delta: f64,
    pub gamma: f64,
    pub vega: f64,
    pub vanna: f64,
    pub vomma: f64,
}

impl GreekFields {
    pub fn from_slice(grid: &GridSpec, values: &[f64]) -> Self {
        let nx = grid.nx_total();
        let nv = grid.n_v;
        let (dx, dv) = (grid.dx(), grid.dv());
        let mut delta = vec![0.0; values.len()];
        let mut gamma = vec![0.0; values.len()];
        let mut vega = vec![0.0; values.len()];
        let mut vomma = vec![0.0; values.len()];
        for j in 0..nv {
            let col = |i: usize| values[grid.idx(i, j)];
            for i in 0..nx {
                let k = grid.idx(i, j);
                delta[k] = first(&col, i, nx, dx);
                gamma[k] = second(&col, i, nx, dx);
            }
        }
        for i in 0..nx {
            let row = |j: usize| values[grid.idx(i, j)];
            for j in 0..nv {
                let k = grid.idx(i, j);
                vega[k] = first(&row, j, nv, dv);
                vomma[k] = second(&row, j, nv, dv);
            }
        }
        let mut vanna = vec![0.0; values.len()];
        for i in 0..nx {
            let row = |j: usize| delta[grid.idx(i, j)];
            for j in 0..nv {
                vanna[grid.idx(i, j)] = first(&row, j, nv, dv);
            }
        }
        Self { grid: *grid, delta, gamma, vega, vanna, vomma }
    }

    pub fn at(&self, x: f64, v: f64) -> PointGreeks {
        let g = &self.grid;
        PointGreeks {
            delta: interpolate(g, &self.delta, x, v),
            gamma: interpolate(g, &self.gamma, x, v),
            vega: interpolate(g, &self.vega, x, v),
            vanna: interpolate(g, &self.vanna, x, v),
            vomma: interpolate(g, &self.vomma, x, v),
        }
    }
}

#[inline]
fn first(f: &impl Fn(usize) -> f64, k: usize, n: usize, h: f64) -> f64 {
    if k == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if k == n - 1 {
        (3.0 * f(k) - 4.0 * f(k - 1) + f(k - 2)) / (2.0 * h)
    } else {
        (f(k + 1) - f(k - 1)) / (2.0 * h)
    }
}

#[inline]
fn second(f: &impl Fn(usize) -> f64, k: usize, n: usize, h: f64) -> f64 {
    let h2 = h * h;
    if k > 0 && k < n - 1 {
        return (f(k + 1) - 2.0 * f(k) + f(k - 1)) / h2;
    }
    if n < 4 {
        // only three nodes: the single available second difference
        return (f(0) - 2.0 * f(1) + f(2)) / h2;
    }
    if k == 0 {
        (2.0 * f(0) - 5.0 * f(1) + 4.0 * f(2) - f(3)) / h2
    } else {
        (2.0 * f(k) - 5.0 * f(k - 1) + 4.0 * f(k - 2) - f(k - 3)) / h2
    }
}

/// Greek fields of a kept slice.
pub fn greeks(surface: &PriceSurface, time_index: usize) -> Result<GreekFields> {
    Ok(GreekFields::from_slice(surface.grid(), surface.slice(time_index)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GridConfig;

    #[test]
    fn exact_on_quadratics() {
        let g = GridSpec::new(GridConfig {
            x_min: 0.0,
            x_max: 4.0,
            n_x: 7,
            v_min: -1.0,
            v_max: 1.0,
            n_v: 6,
            horizon: 1.0,
            n_t: 1,
            cfl_safety: 1.0,
        })
        .unwrap();
        let f = |x: f64, v: f64| 1.0 + 2.0 * x - v + 0.5 * x * x + 3.0 * x * v - 2.0 * v * v;
        let vals: Vec<f64> = (0..g.nx_total())
            .flat_map(|i| (0..g.n_v).map(move |j| (i, j)))
            .map(|(i, j)| f(g.x(i), g.v(j)))
            .collect();
        let gf = GreekFields::from_slice(&g, &vals);
        for i in 0..g.nx_total() {
            for j in 0..g.n_v {
                let (x, v) = (g.x(i), g.v(j));
                let k = g.idx(i, j);
                assert!((gf.delta[k] - (2.0 + x + 3.0 * v)).abs() < 1e-9);
                assert!((gf.gamma[k] - 1.0).abs() < 1e-8);
                assert!((gf.vega[k] - (-1.0 + 3.0 * x - 4.0 * v)).abs() < 1e-9);
                assert!((gf.vanna[k] - 3.0).abs() < 1e-8);
                assert!((gf.vomma[k] + 4.0).abs() < 1e-8);
            }
        }
    }
}
