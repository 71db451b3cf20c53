//! Closed-form Black–Scholes prices, used as an independent reference for
//! the finite-difference solvers when the uncertainty interval collapses or
//! the payoff is convex.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::model::PiecewiseLinearPayoff;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn d1_d2(spot: f64, strike: f64, rate: f64, vol: f64, tau: f64) -> (f64, f64) {
    let s = vol * tau.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * tau) / s;
    (d1, d1 - s)
}

/// European call on a non-dividend asset.
pub fn call_price(spot: f64, strike: f64, rate: f64, vol: f64, tau: f64) -> f64 {
    if tau <= 0.0 || vol <= 0.0 {
        return (spot - strike * (-rate * tau.max(0.0)).exp()).max(0.0);
    }
    if strike <= 0.0 {
        return spot - strike * (-rate * tau).exp();
    }
    let n = std_normal();
    let (d1, d2) = d1_d2(spot, strike, rate, vol, tau);
    spot * n.cdf(d1) - strike * (-rate * tau).exp() * n.cdf(d2)
}

/// ∂C/∂vol.
pub fn call_vega(spot: f64, strike: f64, rate: f64, vol: f64, tau: f64) -> f64 {
    if tau <= 0.0 || vol <= 0.0 || strike <= 0.0 {
        return 0.0;
    }
    let (d1, _) = d1_d2(spot, strike, rate, vol, tau);
    spot * std_normal().pdf(d1) * tau.sqrt()
}

/// Price of a piecewise-linear payoff: the payoff is split into a linear
/// part plus a call at each knot weighted by the slope jump.
pub fn payoff_price(payoff: &PiecewiseLinearPayoff, spot: f64, rate: f64, vol: f64, tau: f64) -> f64 {
    payoff_price_by_leg(payoff, spot, rate, |_| vol, tau)
}

/// Like [`payoff_price`] but each call leg is priced with `vol_for_jump(jump)`.
/// Pricing positive jumps at a high vol and negative ones at a low vol gives a
/// super-replication bound.
pub fn payoff_price_by_leg(
    payoff: &PiecewiseLinearPayoff,
    spot: f64,
    rate: f64,
    vol_for_jump: impl Fn(f64) -> f64,
    tau: f64,
) -> f64 {
    let disc = (-rate * tau).exp();
    let s0 = payoff.slopes()[0];
    let (base_x, base_value) = match payoff.knots().first() {
        Some(&k) => (k, payoff.anchor_value()),
        None => (0.0, payoff.anchor_value()),
    };
    // linear part: base_value + s0 (X_T - base_x), E[X_T] = spot e^{r tau}
    let mut price = disc * base_value + s0 * (spot - base_x * disc);
    for (knot, jump) in payoff.slope_jumps() {
        price += jump * call_price(spot, knot, rate, vol_for_jump(jump), tau);
    }
    price
}
