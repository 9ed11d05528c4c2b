//! Sizing of the dummy FSM from the license length.
//!
//! A dummy chain with `n` normal states, each fanning out on a `b`-bit key
//! value to its successor and `h = 2^b - 1` black holes, consumes `b` license
//! bits per pair of states, so `L = n·b/2` and the added state count is
//! `SN = (2^b - 1) + 2L/b`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamsError {
    #[error("license length must be at least 1 bit")]
    ZeroLength,
    #[error("selector width {b} does not divide license length {license_len}")]
    Infeasible { license_len: usize, b: usize },
    #[error("added state count overflows for selector width {0}")]
    Overflow(usize),
    #[error("layered scheme needs m >= 2, got {0}")]
    TooFewBranches(usize),
    #[error("layered scheme needs an even layer count >= 2, got {0}")]
    BadLayerCount(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LockParams {
    /// License (and PUF response) length in bits.
    pub license_len: usize,
    /// Key-port width: bits consumed per dummy transition.
    pub selector_width: usize,
    /// Dummy chain length.
    pub normal_states: usize,
    pub black_holes: usize,
    pub states_added: u64,
}

impl LockParams {
    /// Parameters for an explicit feasible selector width.
    pub fn with_selector_width(license_len: usize, b: usize) -> Result<Self, ParamsError> {
        let states_added = states_added(license_len, b)?;
        Ok(Self {
            license_len,
            selector_width: b,
            normal_states: 2 * license_len / b,
            black_holes: (1usize << b) - 1,
            states_added,
        })
    }
}

/// Every `b >= 1` dividing `license_len`, ascending.
pub fn feasible_selector_widths(license_len: usize) -> Result<Vec<usize>, ParamsError> {
    if license_len == 0 {
        return Err(ParamsError::ZeroLength);
    }
    Ok((1..=license_len)
        .filter(|b| license_len.is_multiple_of(*b))
        .collect())
}

/// `(2^b - 1) + 2L/b`.
pub fn states_added(license_len: usize, b: usize) -> Result<u64, ParamsError> {
    if license_len == 0 {
        return Err(ParamsError::ZeroLength);
    }
    if b == 0 || !license_len.is_multiple_of(b) {
        return Err(ParamsError::Infeasible { license_len, b });
    }
    // h must also fit a usize for LockParams.
    if b >= 63 || b >= usize::BITS as usize {
        return Err(ParamsError::Overflow(b));
    }
    let holes = (1u64 << b) - 1;
    let normal = 2 * license_len as u64 / b as u64;
    holes.checked_add(normal).ok_or(ParamsError::Overflow(b))
}

/// The feasible `b` minimizing the added state count; ties go to the smaller `b`.
pub fn optimize(license_len: usize) -> Result<LockParams, ParamsError> {
    let mut best: Option<(u64, usize)> = None;
    for b in feasible_selector_widths(license_len)? {
        let Ok(sn) = states_added(license_len, b) else {
            continue;
        };
        if best.is_none_or(|(best_sn, _)| sn < best_sn) {
            best = Some((sn, b));
        }
    }
    // b = 1 always divides L and never overflows.
    let (_, b) = best.expect("b = 1 is always feasible");
    LockParams::with_selector_width(license_len, b)
}

/// Real root of `2^b · b² = 2L / ln 2`, the stationary point of the
/// continuous relaxation. Reporting only; [`optimize`] is authoritative.
pub fn continuous_optimum_b(license_len: usize) -> f64 {
    solve_selector_equation(2.0 * license_len as f64 / std::f64::consts::LN_2)
}

/// Bisection for `2^b · b² = target` on `b > 0`; the left side is strictly
/// increasing there.
fn solve_selector_equation(target: f64) -> f64 {
    let f = |b: f64| b.exp2() * b * b - target;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Added states of the layered baseline: `M/2` single-state layers and
/// `M/2` layers of `m` states.
pub fn states_added_layered(m: usize, layers: usize) -> Result<u64, ParamsError> {
    if m < 2 {
        return Err(ParamsError::TooFewBranches(m));
    }
    if layers < 2 || !layers.is_multiple_of(2) {
        return Err(ParamsError::BadLayerCount(layers));
    }
    Ok((layers as u64 / 2) * (1 + m as u64))
}
