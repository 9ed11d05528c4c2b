//! Locking an FSM behind a PUF/license keyed dummy machine.
//!
//! The proposed construction prepends a chain of `n` dummy states
//! `DS0..DS{n-1}`. Each reads a `b`-bit value from a key port (the `b`
//! least-significant input positions of the merged machine): the one correct
//! value advances the chain, each of the `2^b - 1` wrong values drops into a
//! distinct black hole `BH0..BH{h-1}`. Black holes only lead to black holes.
//! The last dummy state hands over to the original reset state.
//!
//! The correct value ("determiner") of `DS_i` is PUF chunk `i/2` for even
//! `i`, and PUF chunk `(i-1)/2` XOR license chunk `(i-1)/2` for odd `i`.
//!
//! [`build_layered`] builds the older layered construction for comparison:
//! alternating single-state and `m`-state layers, where the PUF alone picks
//! the branch on odd steps and only the even steps are checked.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use crate::bits::BitString;
use crate::bits::BitsError;
use crate::fsm::{Fsm, FsmBuilder, FsmError, StateId, TernaryPattern};
use crate::params::{self, LockParams, ParamsError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LockError {
    #[error(transparent)]
    Bits(#[from] BitsError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Fsm(#[from] FsmError),
    #[error("{what} has width {got}, expected {expected}")]
    WidthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("key port width {0} is too wide to enumerate")]
    KeyTooWide(usize),
    #[error("state name collision on {0:?} after renaming")]
    NameCollision(String),
    #[error("lock metadata: {0}")]
    Metadata(String),
}

/// Value of the `b`-bit slice `bits[j·b + b - 1 ..= j·b]`.
pub fn chunk(bits: &BitString, j: usize, b: usize) -> Result<u64, LockError> {
    Ok(bits.chunk(j, b)?)
}

/// Per-dummy-state key values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySchedule {
    pub selector_width: usize,
    pub determiners: Vec<u64>,
}

pub fn determiners(
    puf: &BitString,
    license: &BitString,
    params: &LockParams,
) -> Result<KeySchedule, LockError> {
    let l = params.license_len;
    for (what, w) in [("PUF response", puf.width()), ("license", license.width())] {
        if w != l {
            return Err(LockError::WidthMismatch {
                what,
                got: w,
                expected: l,
            });
        }
    }
    let b = params.selector_width;
    let determiners = (0..params.normal_states)
        .map(|i| {
            let j = i / 2;
            let r = puf.chunk(j, b)?;
            Ok(if i % 2 == 0 {
                r
            } else {
                r ^ license.chunk(j, b)?
            })
        })
        .collect::<Result<Vec<_>, BitsError>>()?;
    Ok(KeySchedule {
        selector_width: b,
        determiners,
    })
}

/// An `l`-bit license drawn from a ChaCha stream seeded with `seed`.
pub fn random_license(seed: u64, l: usize) -> BitString {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BitString::from_bits((0..l).map(|_| rng.random::<bool>()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayeredParams {
    /// States per even-numbered layer.
    pub m: usize,
    /// Layer count.
    pub layers: usize,
}

impl LayeredParams {
    pub fn new(m: usize, layers: usize) -> Result<Self, LockError> {
        params::states_added_layered(m, layers)?;
        Ok(Self { m, layers })
    }

    /// `⌈log2 m⌉`.
    pub fn key_width(&self) -> usize {
        (usize::BITS - (self.m - 1).leading_zeros()) as usize
    }

    pub fn response_width(&self) -> usize {
        self.layers * self.key_width()
    }

    pub fn license_width(&self) -> usize {
        self.layers / 2 * self.key_width()
    }

    pub fn needs_black_hole(&self) -> bool {
        !self.m.is_power_of_two()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Proposed(LockParams),
    Layered(LayeredParams),
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Proposed(_) => "proposed",
            Scheme::Layered(_) => "layered",
        }
    }
}

/// A locked machine plus the bookkeeping needed to drive and audit it.
#[derive(Clone, Debug)]
pub struct BoostedFsm {
    fsm: Fsm,
    dummy_states: Vec<String>,
    black_holes: Vec<String>,
    original_reset: String,
    scheme: Scheme,
    black_hole_ids: BTreeSet<StateId>,
    original_reset_id: StateId,
}

impl BoostedFsm {
    fn assemble(
        fsm: Fsm,
        dummy_states: Vec<String>,
        black_holes: Vec<String>,
        original_reset: String,
        scheme: Scheme,
    ) -> Result<Self, LockError> {
        let lookup = |name: &str| {
            fsm.state_id(name)
                .ok_or_else(|| LockError::Fsm(FsmError::UnknownState(name.to_owned())))
        };
        let black_hole_ids = black_holes
            .iter()
            .map(|n| lookup(n))
            .collect::<Result<_, _>>()?;
        for n in &dummy_states {
            lookup(n)?;
        }
        let original_reset_id = lookup(&original_reset)?;
        Ok(Self {
            fsm,
            dummy_states,
            black_holes,
            original_reset,
            scheme,
            black_hole_ids,
            original_reset_id,
        })
    }

    pub fn fsm(&self) -> &Fsm {
        &self.fsm
    }

    pub fn dummy_states(&self) -> &[String] {
        &self.dummy_states
    }

    pub fn black_holes(&self) -> &[String] {
        &self.black_holes
    }

    pub fn original_reset(&self) -> &str {
        &self.original_reset
    }

    pub fn original_reset_id(&self) -> StateId {
        self.original_reset_id
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn is_black_hole(&self, s: StateId) -> bool {
        self.black_hole_ids.contains(&s)
    }

    pub fn black_hole_ids(&self) -> &BTreeSet<StateId> {
        &self.black_hole_ids
    }

    /// Width of the key port appended to the original inputs.
    pub fn key_width(&self) -> usize {
        match &self.scheme {
            Scheme::Proposed(p) => p.selector_width,
            Scheme::Layered(lp) => lp.key_width(),
        }
    }

    pub fn original_inputs_width(&self) -> usize {
        self.fsm.inputs_width() - self.key_width()
    }

    /// Key values consumed before the original machine is entered.
    pub fn chain_len(&self) -> usize {
        match &self.scheme {
            Scheme::Proposed(p) => p.normal_states,
            Scheme::Layered(lp) => lp.layers,
        }
    }

    pub fn response_width(&self) -> usize {
        match &self.scheme {
            Scheme::Proposed(p) => p.license_len,
            Scheme::Layered(lp) => lp.response_width(),
        }
    }

    pub fn license_width(&self) -> usize {
        match &self.scheme {
            Scheme::Proposed(p) => p.license_len,
            Scheme::Layered(lp) => lp.license_width(),
        }
    }

    pub fn added_states(&self) -> usize {
        self.dummy_states.len() + self.black_holes.len()
    }

    /// Transitions leaving dummy states and black holes.
    pub fn added_transitions(&self) -> usize {
        let added: BTreeSet<StateId> = self
            .dummy_states
            .iter()
            .chain(&self.black_holes)
            .filter_map(|n| self.fsm.state_id(n))
            .collect();
        self.fsm
            .transitions()
            .iter()
            .filter(|t| added.contains(&t.src))
            .count()
    }

    /// The key value fed at each chain step for a given response/license.
    pub fn key_sequence(
        &self,
        response: &BitString,
        license: &BitString,
    ) -> Result<Vec<u64>, LockError> {
        check_width("PUF response", response, self.response_width())?;
        check_width("license", license, self.license_width())?;
        match &self.scheme {
            Scheme::Proposed(p) => Ok(determiners(response, license, p)?.determiners),
            Scheme::Layered(lp) => layered_keys(response, license, lp),
        }
    }

    /// Merged-machine input for one chain step: original inputs zero, key in the low bits.
    pub fn key_input(&self, key: u64) -> BitString {
        BitString::zeros(self.original_inputs_width())
            .concat_low(&BitString::from_u64(key, self.key_width()))
    }

    /// Everything besides the KISS2 text that is needed to rebuild this value.
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("scheme".into(), self.scheme.name().into());
        m.insert("original_reset".into(), self.original_reset.clone());
        m.insert("b".into(), self.key_width().to_string());
        m.insert("h".into(), self.black_holes.len().to_string());
        match &self.scheme {
            Scheme::Proposed(p) => {
                m.insert("n".into(), p.normal_states.to_string());
                m.insert("L".into(), p.license_len.to_string());
            }
            Scheme::Layered(lp) => {
                m.insert("n".into(), self.dummy_states.len().to_string());
                m.insert("m".into(), lp.m.to_string());
                m.insert("M".into(), lp.layers.to_string());
            }
        }
        m
    }

    /// Rebuilds from a (re-parsed) merged machine and [`BoostedFsm::metadata`].
    pub fn from_metadata(fsm: Fsm, meta: &BTreeMap<String, String>) -> Result<Self, LockError> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| LockError::Metadata(format!("missing key {k:?}")))
        };
        let num = |k: &str| -> Result<usize, LockError> {
            get(k)?
                .parse()
                .map_err(|_| LockError::Metadata(format!("key {k:?} is not a count")))
        };
        let original_reset = get("original_reset")?.clone();
        match get("scheme")?.as_str() {
            "proposed" => {
                let (b, n) = (num("b")?, num("n")?);
                let license_len = n * b / 2;
                let p = LockParams::with_selector_width(license_len, b)?;
                if p.normal_states != n || num("h")? != p.black_holes {
                    return Err(LockError::Metadata("inconsistent b/n/h".into()));
                }
                let dummy = (0..n).map(|i| format!("DS{i}")).collect();
                let holes = (0..p.black_holes).map(|i| format!("BH{i}")).collect();
                Self::assemble(fsm, dummy, holes, original_reset, Scheme::Proposed(p))
            }
            "layered" => {
                let lp = LayeredParams::new(num("m")?, num("M")?)?;
                let names = layered_names(&lp);
                let holes = if lp.needs_black_hole() {
                    vec!["BH0".to_owned()]
                } else {
                    Vec::new()
                };
                Self::assemble(fsm, names, holes, original_reset, Scheme::Layered(lp))
            }
            other => Err(LockError::Metadata(format!("unknown scheme {other:?}"))),
        }
    }
}

fn check_width(what: &'static str, bits: &BitString, expected: usize) -> Result<(), LockError> {
    if bits.width() != expected {
        return Err(LockError::WidthMismatch {
            what,
            got: bits.width(),
            expected,
        });
    }
    Ok(())
}

fn layered_keys(
    response: &BitString,
    license: &BitString,
    lp: &LayeredParams,
) -> Result<Vec<u64>, LockError> {
    let k = lp.key_width();
    (0..lp.layers)
        .map(|j| {
            let r = response.chunk(j, k)?;
            Ok(if j % 2 == 0 {
                r
            } else {
                r ^ license.chunk((j - 1) / 2, k)?
            })
        })
        .collect()
}

/// Layer `j` (0-based) is a single state `LY{j}` when `j` is even and `m`
/// states `LY{j}_{i}` when `j` is odd.
fn layered_names(lp: &LayeredParams) -> Vec<String> {
    let mut names = Vec::new();
    for j in 0..lp.layers {
        if j % 2 == 0 {
            names.push(format!("LY{j}"));
        } else {
            names.extend((0..lp.m).map(|i| format!("LY{j}_{i}")));
        }
    }
    names
}

/// Renames original states that clash with generated names by appending `_ip`.
fn rename_originals(
    original: &Fsm,
    generated: &BTreeSet<String>,
) -> Result<Vec<String>, LockError> {
    let mut taken: BTreeSet<String> = generated.clone();
    taken.extend(
        original
            .states()
            .iter()
            .filter(|s| !generated.contains(*s))
            .cloned(),
    );
    let mut out = Vec::with_capacity(original.num_states());
    for s in original.states() {
        if !generated.contains(s) {
            out.push(s.clone());
            continue;
        }
        let mut name = format!("{s}_ip");
        while taken.contains(&name) {
            name.push_str("_ip");
        }
        taken.insert(name.clone());
        out.push(name);
    }
    let unique: BTreeSet<&String> = out.iter().chain(generated).collect();
    if unique.len() != out.len() + generated.len() {
        return Err(LockError::NameCollision(original.states().join(",")));
    }
    Ok(out)
}

fn key_pattern(inputs_width: usize, key: u64, key_width: usize) -> TernaryPattern {
    TernaryPattern::dont_care(inputs_width)
        .concat_low(&TernaryPattern::exact(&BitString::from_u64(key, key_width)))
}

/// Adds the original machine's states and transitions, key port don't-care.
fn copy_original(
    builder: &mut FsmBuilder,
    original: &Fsm,
    names: &[String],
    key_width: usize,
) -> Result<(), LockError> {
    for name in names {
        builder.state(name)?;
    }
    let free_key = TernaryPattern::dont_care(key_width);
    for t in original.transitions() {
        builder.transition(
            t.input.concat_low(&free_key),
            &names[t.src.0],
            &names[t.dst.0],
            t.output.clone(),
        )?;
    }
    Ok(())
}

pub fn build_bfsm(
    original: &Fsm,
    puf: &BitString,
    license: &BitString,
    wiring_seed: u64,
) -> Result<BoostedFsm, LockError> {
    let params = params::optimize(puf.width())?;
    let schedule = determiners(puf, license, &params)?;
    let b = params.selector_width;
    if b >= 32 {
        return Err(LockError::KeyTooWide(b));
    }
    let n = params.normal_states;
    let h = params.black_holes;
    let iw = original.inputs_width();
    let ow = original.outputs_width();

    let dummy: Vec<String> = (0..n).map(|i| format!("DS{i}")).collect();
    let holes: Vec<String> = (0..h).map(|i| format!("BH{i}")).collect();
    let generated: BTreeSet<String> = dummy.iter().chain(&holes).cloned().collect();
    let renamed = rename_originals(original, &generated)?;
    let original_reset = renamed[original.reset().0].clone();

    let mut builder = FsmBuilder::new(iw + b, ow);
    for name in dummy.iter().chain(&holes) {
        builder.state(name)?;
    }
    builder.set_reset(&dummy[0])?;

    let quiet = TernaryPattern::dont_care(ow);
    for (i, &d) in schedule.determiners.iter().enumerate() {
        let next = dummy.get(i + 1).unwrap_or(&original_reset);
        let mut wrong = 0usize;
        for v in 0..(1u64 << b) {
            let dst = if v == d {
                next
            } else {
                wrong += 1;
                &holes[wrong - 1]
            };
            builder.transition(key_pattern(iw, v, b), &dummy[i], dst, quiet.clone())?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(wiring_seed);
    for hole in &holes {
        let target = &holes[rng.random_range(0..h)];
        builder.transition(
            TernaryPattern::dont_care(iw + b),
            hole,
            target,
            quiet.clone(),
        )?;
    }

    copy_original(&mut builder, original, &renamed, b)?;
    let fsm = builder.build()?;
    BoostedFsm::assemble(fsm, dummy, holes, original_reset, Scheme::Proposed(params))
}

pub fn build_layered(
    original: &Fsm,
    puf: &BitString,
    license: &BitString,
    lp: LayeredParams,
) -> Result<BoostedFsm, LockError> {
    check_width("PUF response", puf, lp.response_width())?;
    check_width("license", license, lp.license_width())?;
    let k = lp.key_width();
    if k >= 32 {
        return Err(LockError::KeyTooWide(k));
    }
    let keys = layered_keys(puf, license, &lp)?;
    let iw = original.inputs_width();
    let ow = original.outputs_width();

    let names = layered_names(&lp);
    let holes: Vec<String> = if lp.needs_black_hole() {
        vec!["BH0".into()]
    } else {
        Vec::new()
    };
    let generated: BTreeSet<String> = names.iter().chain(&holes).cloned().collect();
    let renamed = rename_originals(original, &generated)?;
    let original_reset = renamed[original.reset().0].clone();

    let mut builder = FsmBuilder::new(iw + k, ow);
    for name in names.iter().chain(&holes) {
        builder.state(name)?;
    }
    builder.set_reset(&names[0])?;

    let quiet = TernaryPattern::dont_care(ow);
    let single = |j: usize| format!("LY{j}");
    debug_assert_eq!(keys.len(), lp.layers);
    for (j, &key) in keys.iter().enumerate() {
        let next_single = if j + 1 == lp.layers {
            original_reset.clone()
        } else {
            single(j + 1)
        };
        if j % 2 == 0 {
            // The PUF chunk picks one of the m branches.
            for v in 0..(1u64 << k) {
                let dst = if (v as usize) < lp.m {
                    format!("LY{}_{v}", j + 1)
                } else {
                    holes[0].clone()
                };
                builder.transition(key_pattern(iw, v, k), &single(j), &dst, quiet.clone())?;
            }
        } else {
            // Every branch of the layer checks the same label.
            for i in 0..lp.m {
                let src = format!("LY{j}_{i}");
                for v in 0..(1u64 << k) {
                    if v == key {
                        builder.transition(
                            key_pattern(iw, v, k),
                            &src,
                            &next_single,
                            quiet.clone(),
                        )?;
                    } else if let Some(hole) = holes.first() {
                        builder.transition(key_pattern(iw, v, k), &src, hole, quiet.clone())?;
                    }
                }
            }
        }
    }
    if let Some(hole) = holes.first() {
        builder.transition(TernaryPattern::dont_care(iw + k), hole, hole, quiet.clone())?;
    }

    copy_original(&mut builder, original, &renamed, k)?;
    let fsm = builder.build()?;
    BoostedFsm::assemble(fsm, names, holes, original_reset, Scheme::Layered(lp))
}
