//! Mealy machine representation with ternary input/output patterns.
//!
//! A machine is immutable once built. Simulation follows KISS2 conventions:
//! the first transition (in stored order) whose input pattern matches fires,
//! output don't-cares read as 0, and a state with no matching transition
//! stays put and emits all zeros.

mod hdl;
mod kiss2;
mod pattern;

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::bits::BitString;

pub use hdl::{emit_hdl, HdlError};
pub use kiss2::{emit_kiss2, parse_kiss2, ParseError, ParseErrorKind};
pub use pattern::{InvalidTrit, TernaryPattern, Trit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub input: TernaryPattern,
    pub src: StateId,
    pub dst: StateId,
    pub output: TernaryPattern,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FsmError {
    #[error("empty state name")]
    EmptyStateName,
    #[error("state name {0:?} contains whitespace")]
    InvalidStateName(String),
    #[error("unknown state {0:?}")]
    UnknownState(String),
    #[error("machine has no reset state")]
    MissingReset,
    #[error("transition {index}: {what} pattern has width {got}, expected {expected}")]
    PatternWidth {
        index: usize,
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fsm {
    inputs_width: usize,
    outputs_width: usize,
    states: Vec<String>,
    reset: StateId,
    transitions: Vec<Transition>,
    index: HashMap<String, StateId>,
    by_src: Vec<Vec<usize>>,
}

impl Fsm {
    pub fn inputs_width(&self) -> usize {
        self.inputs_width
    }

    pub fn outputs_width(&self) -> usize {
        self.outputs_width
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn reset(&self) -> StateId {
        self.reset
    }

    pub fn reset_name(&self) -> &str {
        &self.states[self.reset.0]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn name(&self, id: StateId) -> &str {
        &self.states[id.0]
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.index.get(name).copied()
    }

    /// Transitions leaving `state`, in stored order.
    pub fn outgoing(&self, state: StateId) -> impl Iterator<Item = &Transition> {
        self.by_src[state.0]
            .iter()
            .map(move |&i| &self.transitions[i])
    }

    /// One clock edge. Panics if `input` does not have `inputs_width` bits.
    pub fn step(&self, state: StateId, input: &BitString) -> (StateId, BitString) {
        assert_eq!(input.width(), self.inputs_width, "input width mismatch");
        match self.outgoing(state).find(|t| t.input.matches(input)) {
            Some(t) => (t.dst, t.output.resolve()),
            None => (state, BitString::zeros(self.outputs_width)),
        }
    }

    /// Runs `inputs` from `start`, returning the output produced at each step.
    pub fn run(&self, start: StateId, inputs: &[BitString]) -> (StateId, Vec<BitString>) {
        let mut state = start;
        let mut outputs = Vec::with_capacity(inputs.len());
        for input in inputs {
            let (next, out) = self.step(state, input);
            outputs.push(out);
            state = next;
        }
        (state, outputs)
    }

    /// All states reachable from `from`, including `from` itself. Input
    /// patterns are ignored: every stored transition counts as an edge.
    pub fn reachable_states(&self, from: StateId) -> BTreeSet<StateId> {
        let mut seen = BTreeSet::from([from]);
        let mut stack = vec![from];
        while let Some(s) = stack.pop() {
            for t in self.outgoing(s) {
                if seen.insert(t.dst) {
                    stack.push(t.dst);
                }
            }
        }
        seen
    }

    /// Same widths, same state names, same reset and the same multiset of
    /// transitions (compared by state name).
    pub fn is_isomorphic(&self, other: &Fsm) -> bool {
        if self.inputs_width != other.inputs_width
            || self.outputs_width != other.outputs_width
            || self.reset_name() != other.reset_name()
        {
            return false;
        }
        let names = |f: &Fsm| f.states.iter().cloned().collect::<BTreeSet<_>>();
        if names(self) != names(other) {
            return false;
        }
        let multiset = |f: &Fsm| {
            let mut v: Vec<_> = f
                .transitions
                .iter()
                .map(|t| {
                    (
                        t.input.to_string(),
                        f.name(t.src).to_owned(),
                        f.name(t.dst).to_owned(),
                        t.output.to_string(),
                    )
                })
                .collect();
            v.sort();
            v
        };
        multiset(self) == multiset(other)
    }

    /// A copy with transition `index` pointed at `dst`.
    pub fn with_retargeted(&self, index: usize, dst: StateId) -> Fsm {
        let mut transitions = self.transitions.clone();
        transitions[index].dst = dst;
        Fsm::from_parts(
            self.inputs_width,
            self.outputs_width,
            self.states.clone(),
            self.reset,
            transitions,
        )
    }

    fn from_parts(
        inputs_width: usize,
        outputs_width: usize,
        states: Vec<String>,
        reset: StateId,
        transitions: Vec<Transition>,
    ) -> Fsm {
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), StateId(i)))
            .collect();
        let mut by_src = vec![Vec::new(); states.len()];
        for (i, t) in transitions.iter().enumerate() {
            by_src[t.src.0].push(i);
        }
        Fsm {
            inputs_width,
            outputs_width,
            states,
            reset,
            transitions,
            index,
            by_src,
        }
    }
}

/// Incremental construction by state name.
#[derive(Debug, Clone)]
pub struct FsmBuilder {
    inputs_width: usize,
    outputs_width: usize,
    states: Vec<String>,
    index: HashMap<String, StateId>,
    reset: Option<StateId>,
    transitions: Vec<Transition>,
}

impl FsmBuilder {
    pub fn new(inputs_width: usize, outputs_width: usize) -> Self {
        Self {
            inputs_width,
            outputs_width,
            states: Vec::new(),
            index: HashMap::new(),
            reset: None,
            transitions: Vec::new(),
        }
    }

    /// Declares `name` (if new) and returns its id.
    pub fn state(&mut self, name: &str) -> Result<StateId, FsmError> {
        if let Some(&id) = self.index.get(name) {
            return Ok(id);
        }
        if name.is_empty() {
            return Err(FsmError::EmptyStateName);
        }
        if name.chars().any(char::is_whitespace) || name.contains('#') {
            return Err(FsmError::InvalidStateName(name.to_owned()));
        }
        let id = StateId(self.states.len());
        self.states.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn has_state(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn set_reset(&mut self, name: &str) -> Result<StateId, FsmError> {
        let id = self.state(name)?;
        self.reset = Some(id);
        Ok(id)
    }

    pub fn transition(
        &mut self,
        input: TernaryPattern,
        src: &str,
        dst: &str,
        output: TernaryPattern,
    ) -> Result<(), FsmError> {
        let index = self.transitions.len();
        if input.width() != self.inputs_width {
            return Err(FsmError::PatternWidth {
                index,
                what: "input",
                got: input.width(),
                expected: self.inputs_width,
            });
        }
        if output.width() != self.outputs_width {
            return Err(FsmError::PatternWidth {
                index,
                what: "output",
                got: output.width(),
                expected: self.outputs_width,
            });
        }
        let src = self.state(src)?;
        let dst = self.state(dst)?;
        self.transitions.push(Transition {
            input,
            src,
            dst,
            output,
        });
        Ok(())
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn build(self) -> Result<Fsm, FsmError> {
        let reset = self.reset.ok_or(FsmError::MissingReset)?;
        Ok(Fsm::from_parts(
            self.inputs_width,
            self.outputs_width,
            self.states,
            reset,
            self.transitions,
        ))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const MINIMAL: &str = ".i 1\n.o 1\n.s 2\n.r A\n0 A A 0\n1 A B 1\n- B A 0\n";

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn step_follows_table() {
        let f = parse_kiss2(MINIMAL).unwrap();
        let a = f.state_id("A").unwrap();
        let b = f.state_id("B").unwrap();
        assert_eq!(f.step(a, &bits("1")), (b, bits("1")));
        assert_eq!(f.step(a, &bits("0")), (a, bits("0")));
        assert_eq!(f.step(b, &bits("0")), (a, bits("0")));
        assert_eq!(f.step(b, &bits("1")), (a, bits("0")));
    }

    #[test]
    fn unmatched_input_stalls_with_zero_output() {
        let f = parse_kiss2(".i 2\n.o 2\n.r A\n11 A B 11\n-- B A 1-\n").unwrap();
        let a = f.state_id("A").unwrap();
        assert_eq!(f.step(a, &bits("01")), (a, bits("00")));
        let b = f.state_id("B").unwrap();
        assert_eq!(f.step(b, &bits("00")), (a, bits("10")));
    }

    #[test]
    fn first_match_wins() {
        let f = parse_kiss2(".i 1\n.o 1\n.r A\n- A B 1\n1 A A 0\n0 B B 0\n").unwrap();
        let a = f.state_id("A").unwrap();
        let (next, out) = f.step(a, &bits("1"));
        assert_eq!(f.name(next), "B");
        assert_eq!(out, bits("1"));
    }

    #[test]
    fn reachability() {
        let f = parse_kiss2(MINIMAL).unwrap();
        let a = f.state_id("A").unwrap();
        assert_eq!(f.reachable_states(a).len(), 2);

        let g = parse_kiss2(".i 1\n.o 1\n.r A\n- A B 0\n- B B 0\n").unwrap();
        let b = g.state_id("B").unwrap();
        assert_eq!(g.reachable_states(b), BTreeSet::from([b]));
    }

    #[test]
    fn isolated_state_reaches_itself() {
        let mut b = FsmBuilder::new(1, 1);
        b.transition("-".parse().unwrap(), "A", "A", "0".parse().unwrap())
            .unwrap();
        let lone = b.set_reset("Z").unwrap();
        let f = b.build().unwrap();
        assert_eq!(f.reachable_states(lone), BTreeSet::from([lone]));
    }

    #[test]
    fn builder_rejects_bad_widths_and_names() {
        let mut b = FsmBuilder::new(2, 1);
        assert!(matches!(
            b.transition("1".parse().unwrap(), "A", "B", "0".parse().unwrap()),
            Err(FsmError::PatternWidth { what: "input", .. })
        ));
        assert_eq!(b.state(""), Err(FsmError::EmptyStateName));
        assert!(b.state("a b").is_err());
        assert_eq!(FsmBuilder::new(1, 1).build(), Err(FsmError::MissingReset));
    }

    fn arb_fsm() -> impl Strategy<Value = Fsm> {
        (1usize..6, 0usize..3, 0usize..3).prop_flat_map(|(n, iw, ow)| {
            let pat = |w: usize| proptest::collection::vec(0u8..3, w);
            proptest::collection::vec((pat(iw), 0..n, 0..n, pat(ow)), 1..12).prop_map(move |rows| {
                let to_pat = |v: &Vec<u8>| {
                    v.iter()
                        .map(|&x| ['0', '1', '-'][x as usize])
                        .collect::<String>()
                        .parse::<TernaryPattern>()
                        .unwrap()
                };
                let mut b = FsmBuilder::new(iw, ow);
                for (i, s, d, o) in &rows {
                    b.transition(to_pat(i), &format!("s{s}"), &format!("s{d}"), to_pat(o))
                        .unwrap();
                }
                b.set_reset(&format!("s{}", rows[0].1)).unwrap();
                b.build().unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn step_is_total(f in arb_fsm(), seed in any::<u64>()) {
            for s in 0..f.num_states() {
                let input = BitString::from_u64(seed, f.inputs_width());
                let (next, out) = f.step(StateId(s), &input);
                prop_assert!(next.0 < f.num_states());
                prop_assert_eq!(out.width(), f.outputs_width());
            }
        }

        #[test]
        fn reachability_monotone_under_added_transitions(f in arb_fsm(), a in 0usize..6, b in 0usize..6) {
            let n = f.num_states();
            let (a, b) = (StateId(a % n), StateId(b % n));
            let before = f.reachable_states(f.reset());
            let mut builder = FsmBuilder::new(f.inputs_width(), f.outputs_width());
            for t in f.transitions() {
                builder.transition(t.input.clone(), f.name(t.src), f.name(t.dst), t.output.clone()).unwrap();
            }
            builder.transition(
                TernaryPattern::dont_care(f.inputs_width()),
                f.name(a),
                f.name(b),
                TernaryPattern::dont_care(f.outputs_width()),
            ).unwrap();
            builder.set_reset(f.reset_name()).unwrap();
            let g = builder.build().unwrap();
            let after: BTreeSet<String> = g.reachable_states(g.reset()).into_iter().map(|s| g.name(s).to_owned()).collect();
            for s in before {
                prop_assert!(after.contains(f.name(s)));
            }
        }

        #[test]
        fn kiss2_round_trip(f in arb_fsm()) {
            let text = emit_kiss2(&f);
            let g = parse_kiss2(&text).unwrap();
            prop_assert!(g.is_isomorphic(&f));
            prop_assert_eq!(emit_kiss2(&g), text);
        }
    }
}
