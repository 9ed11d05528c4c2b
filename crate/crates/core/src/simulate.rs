//! Unlock simulation, exhaustive response/license sweeps and the closed-form
//! unlock probabilities they are checked against.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rayon::prelude::*;
use thiserror::Error;

use crate::bits::BitString;
use crate::fsm::{Fsm, StateId};
use crate::obfuscate::{BoostedFsm, LayeredParams, LockError};

/// Sweeps wider than this many bits are refused unless the caller raises it.
pub const DEFAULT_SWEEP_LIMIT: usize = 24;

const SWEEP_BLOCK: u64 = 1 << 12;
const MAX_EXAMPLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error("sweep over {width} bits exceeds the limit of {limit}")]
    SweepTooWide { width: usize, limit: usize },
    #[error("machine did not unlock: {0}")]
    NotUnlocked(UnlockOutcome),
    #[error("input vector {index} has width {got}, expected {expected}")]
    InputWidth {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("layered scheme needs m >= 2 and an even layer count >= 2")]
    BadLayered,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UnlockOutcome {
    /// The original reset state was reached after this many key steps.
    Unlocked(usize),
    /// The chain was left at `step`: either a black hole was entered or, for
    /// the layered scheme without black holes, the machine stalled in `state`.
    Trapped { state: String, step: usize },
}

impl UnlockOutcome {
    pub fn is_unlocked(&self) -> bool {
        matches!(self, UnlockOutcome::Unlocked(_))
    }
}

impl std::fmt::Display for UnlockOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UnlockOutcome::Unlocked(n) => write!(f, "unlocked after {n} steps"),
            UnlockOutcome::Trapped { state, step } => {
                write!(f, "trapped at step {step} in {state}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnumerationReport {
    pub space_size: u64,
    pub valid_count: u64,
    /// The smallest valid candidates, ascending, at most eight.
    pub valid_examples: Vec<BitString>,
}

impl EnumerationReport {
    fn merge(mut self, other: EnumerationReport) -> EnumerationReport {
        self.space_size += other.space_size;
        self.valid_count += other.valid_count;
        self.valid_examples.extend(other.valid_examples);
        self.valid_examples.truncate(MAX_EXAMPLES);
        self
    }

    fn empty() -> Self {
        Self {
            space_size: 0,
            valid_count: 0,
            valid_examples: Vec::new(),
        }
    }

    /// `(valid_count - 1) / space_size`: the chance that a candidate other
    /// than the authorized one unlocks. `None` when nothing unlocks.
    pub fn unauthorized_probability(&self) -> Option<BigRational> {
        (self.valid_count > 0 && self.space_size > 0).then(|| {
            BigRational::new(
                BigInt::from(self.valid_count - 1),
                BigInt::from(self.space_size),
            )
        })
    }
}

/// Drives the key sequence derived from `(response, license)` through the
/// merged machine from its reset state.
pub fn run_unlock(
    locked: &BoostedFsm,
    response: &BitString,
    license: &BitString,
) -> Result<UnlockOutcome, SimError> {
    let keys = locked.key_sequence(response, license)?;
    Ok(drive_keys(locked, &keys))
}

/// Feeds raw key values from reset, one per clock.
pub fn drive_keys(locked: &BoostedFsm, keys: &[u64]) -> UnlockOutcome {
    let fsm = locked.fsm();
    let mut state = fsm.reset();
    for (step, &key) in keys.iter().enumerate() {
        let (next, _) = fsm.step(state, &locked.key_input(key));
        if locked.is_black_hole(next) || next == state {
            return UnlockOutcome::Trapped {
                state: fsm.name(next).to_owned(),
                step,
            };
        }
        state = next;
    }
    if state == locked.original_reset_id() {
        UnlockOutcome::Unlocked(keys.len())
    } else {
        UnlockOutcome::Trapped {
            state: fsm.name(state).to_owned(),
            step: keys.len().saturating_sub(1),
        }
    }
}

fn check_limit(width: usize, limit: usize) -> Result<(), SimError> {
    if width > limit || width >= 64 {
        return Err(SimError::SweepTooWide { width, limit });
    }
    Ok(())
}

fn sweep<F>(width: usize, range: std::ops::Range<u64>, unlocks: F) -> EnumerationReport
where
    F: Fn(&BitString) -> bool,
{
    let mut report = EnumerationReport::empty();
    for v in range {
        let candidate = BitString::from_u64(v, width);
        report.space_size += 1;
        if unlocks(&candidate) {
            report.valid_count += 1;
            if report.valid_examples.len() < MAX_EXAMPLES {
                report.valid_examples.push(candidate);
            }
        }
    }
    report
}

fn parallel_sweep<F>(width: usize, unlocks: F) -> EnumerationReport
where
    F: Fn(&BitString) -> bool + Sync,
{
    let total = 1u64 << width;
    let blocks = total.div_ceil(SWEEP_BLOCK);
    let parts: Vec<EnumerationReport> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let start = blk * SWEEP_BLOCK;
            sweep(width, start..(start + SWEEP_BLOCK).min(total), &unlocks)
        })
        .collect();
    parts
        .into_iter()
        .fold(EnumerationReport::empty(), EnumerationReport::merge)
}

fn response_unlocks<'a>(
    locked: &'a BoostedFsm,
    license: &'a BitString,
) -> impl Fn(&BitString) -> bool + Sync + 'a {
    let license = license.clone();
    move |r| {
        matches!(
            run_unlock(locked, r, &license),
            Ok(UnlockOutcome::Unlocked(_))
        )
    }
}

/// Tries every response of the machine's response width with `license` fixed.
pub fn count_valid_responses(
    locked: &BoostedFsm,
    license: &BitString,
    limit: usize,
) -> Result<EnumerationReport, SimError> {
    let width = locked.response_width();
    check_limit(width, limit)?;
    // Surface width errors once instead of counting them as failures.
    locked.key_sequence(&BitString::zeros(width), license)?;
    Ok(parallel_sweep(width, response_unlocks(locked, license)))
}

/// Sequential sweep over responses `range` only; partial reports add up to the full one.
pub fn count_valid_responses_in(
    locked: &BoostedFsm,
    license: &BitString,
    range: std::ops::Range<u64>,
) -> Result<EnumerationReport, SimError> {
    let width = locked.response_width();
    check_limit(width, 63)?;
    locked.key_sequence(&BitString::zeros(width), license)?;
    Ok(sweep(width, range, response_unlocks(locked, license)))
}

/// Tries every license of the machine's license width with `response` fixed.
pub fn count_valid_licenses(
    locked: &BoostedFsm,
    response: &BitString,
    limit: usize,
) -> Result<EnumerationReport, SimError> {
    let width = locked.license_width();
    check_limit(width, limit)?;
    locked.key_sequence(response, &BitString::zeros(width))?;
    Ok(parallel_sweep(width, |l| {
        matches!(
            run_unlock(locked, response, l),
            Ok(UnlockOutcome::Unlocked(_))
        )
    }))
}

/// Chance that a non-authorized response unlocks the layered scheme with a
/// known license: `(m^(M/2) - 1) / 2^(M·⌈log2 m⌉)`.
pub fn unlock_probability_layered(m: usize, layers: usize) -> Result<BigRational, SimError> {
    let lp = LayeredParams::new(m, layers).map_err(|_| SimError::BadLayered)?;
    let paths = num_traits::pow(BigInt::from(m), layers / 2);
    let space = num_traits::pow(BigInt::from(2), lp.response_width());
    Ok(BigRational::new(paths - BigInt::one(), space))
}

/// Same quantity for the single-path chain: exactly zero.
pub fn unlock_probability_proposed() -> BigRational {
    let paths = BigInt::one();
    BigRational::new(paths - BigInt::one(), BigInt::one())
}

/// Unlocks with `(response, license)`, then checks that every input vector
/// (key port held at 0) produces the same output as `original` run from its
/// reset state.
pub fn trace_equivalence(
    original: &Fsm,
    locked: &BoostedFsm,
    response: &BitString,
    license: &BitString,
    inputs: &[BitString],
) -> Result<bool, SimError> {
    let outcome = run_unlock(locked, response, license)?;
    if !outcome.is_unlocked() {
        return Err(SimError::NotUnlocked(outcome));
    }
    let keys = locked.key_sequence(response, license)?;
    let fsm = locked.fsm();
    let mut state = fsm.reset();
    for &k in &keys {
        state = fsm.step(state, &locked.key_input(k)).0;
    }
    let idle_key = BitString::zeros(locked.key_width());
    let mut reference: StateId = original.reset();
    for (index, input) in inputs.iter().enumerate() {
        if input.width() != original.inputs_width() {
            return Err(SimError::InputWidth {
                index,
                got: input.width(),
                expected: original.inputs_width(),
            });
        }
        let (next_ref, want) = original.step(reference, input);
        let (next, got) = fsm.step(state, &input.concat_low(&idle_key));
        if want != got {
            return Ok(false);
        }
        reference = next_ref;
        state = next;
    }
    Ok(true)
}
