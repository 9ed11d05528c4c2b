//! Locking FSM IP cores to a single FPGA device with a PUF/license keyed
//! dummy machine and black-hole states.
//!
//! - [`fsm`]: KISS2 machines, simulation and Verilog output.
//! - [`params`]: selector width and added-state count.
//! - [`obfuscate`]: building the locked machine (and a layered baseline).
//! - [`simulate`]: unlock runs, exhaustive sweeps and exact probabilities.
//! - [`puf`]: a deterministic PUF model and its challenge-response database.
//! - [`protocol`]: the vendor/designer licensing flow.

pub mod bits;
pub mod fsm;
pub mod obfuscate;
pub mod params;
pub mod protocol;
pub mod puf;
pub mod simulate;

pub use bits::BitString;
pub use fsm::{parse_kiss2, Fsm};
pub use obfuscate::{build_bfsm, build_layered, BoostedFsm, LayeredParams};
pub use params::{optimize, LockParams};
pub use puf::MockPuf;
pub use simulate::{run_unlock, UnlockOutcome};
