//! Counter-based normal variates.
//!
//! Every draw is a pure function of `(seed, path, step)`, so results do not
//! depend on path count, thread count or scheduling order. The hash is the
//! SplitMix64 finaliser applied to a mixed key; two 53-bit uniforms are fed to
//! Box–Muller to give an independent normal pair.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const PATH_MUL: u64 = 0xD1B5_4A32_D192_ED03;
const STEP_MUL: u64 = 0xAEF1_7502_108E_F2D9;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn key(seed: u64, path: u64, step: u64, lane: u64) -> u64 {
    let k = mix64(seed.wrapping_add(GOLDEN));
    let k = mix64(k ^ path.wrapping_mul(PATH_MUL));
    mix64(k ^ step.wrapping_mul(STEP_MUL) ^ lane.wrapping_mul(GOLDEN))
}

/// Uniform in the open interval (0, 1).
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Two independent standard normals for `(seed, path, step)`.
#[inline]
pub fn normal_pair(seed: u64, path: u64, step: u64) -> (f64, f64) {
    let u1 = open_unit(key(seed, path, step, 0));
    let u2 = open_unit(key(seed, path, step, 1));
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (radius * angle.cos(), radius * angle.sin())
}

/// Standard normals `(z¹, z²)` with correlation `rho`, built as
/// `z² = ρ z¹ + √(1−ρ²) z⊥`.
#[inline]
pub fn correlated_pair(rho: f64, seed: u64, path: u64, step: u64) -> (f64, f64) {
    let (z1, z_perp) = normal_pair(seed, path, step);
    (z1, rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * z_perp)
}
