//! Verilog-2001 emission.
//!
//! States are binary-encoded in declaration order. Each state's transitions
//! become an `if / else if` chain so the first matching row wins, exactly as
//! in simulation; a state with no match holds and drives zeros.

use std::fmt::Write as _;

use thiserror::Error;

use super::{Fsm, Trit};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HdlError {
    #[error("invalid module name {0:?}")]
    InvalidModuleName(String),
}

const KEYWORDS: &[&str] = &[
    "always",
    "assign",
    "begin",
    "case",
    "casez",
    "default",
    "else",
    "end",
    "endcase",
    "endmodule",
    "if",
    "initial",
    "input",
    "localparam",
    "module",
    "output",
    "parameter",
    "posedge",
    "negedge",
    "reg",
    "wire",
];

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
        && !KEYWORDS.contains(&name)
}

pub(crate) fn state_bits(num_states: usize) -> usize {
    let mut bits = 1;
    while (1usize << bits) < num_states {
        bits += 1;
    }
    bits
}

fn literal(width: usize, trits: &[Trit], value: bool) -> String {
    // trits are LSB-first; Verilog literals are MSB-first.
    let s: String = trits
        .iter()
        .rev()
        .map(|t| match (t, value) {
            (Trit::One, _) => '1',
            (Trit::Zero, true) | (Trit::DontCare, _) => '0',
            (Trit::Zero, false) => '1',
        })
        .collect();
    format!("{width}'b{s}")
}

fn value_literal(width: usize, trits: &[Trit]) -> String {
    literal(width, trits, true)
}

fn mask_literal(width: usize, trits: &[Trit]) -> String {
    literal(width, trits, false)
}

pub fn emit_hdl(fsm: &Fsm, module_name: &str) -> Result<String, HdlError> {
    if !valid_identifier(module_name) {
        return Err(HdlError::InvalidModuleName(module_name.to_owned()));
    }
    let iw = fsm.inputs_width();
    let ow = fsm.outputs_width();
    let sw = state_bits(fsm.num_states());
    let mut v = String::new();

    let mut ports = vec![
        "    input wire clk".to_owned(),
        "    input wire rst".to_owned(),
    ];
    if iw > 0 {
        ports.push(format!("    input wire [{}:0] in", iw - 1));
    }
    if ow > 0 {
        ports.push(format!("    output reg [{}:0] out", ow - 1));
    }
    let _ = writeln!(v, "module {module_name} (");
    let _ = writeln!(v, "{}", ports.join(",\n"));
    let _ = writeln!(v, ");");
    let _ = writeln!(v);

    for (i, name) in fsm.states().iter().enumerate() {
        let _ = writeln!(
            v,
            "    localparam [{}:0] S{i} = {sw}'d{i}; // {name}",
            sw - 1
        );
    }
    let _ = writeln!(v);
    let _ = writeln!(v, "    reg [{}:0] state;", sw - 1);
    let _ = writeln!(v, "    reg [{}:0] next_state;", sw - 1);
    let _ = writeln!(v);
    let _ = writeln!(v, "    always @(posedge clk) begin");
    let _ = writeln!(v, "        if (rst)");
    let _ = writeln!(v, "            state <= S{};", fsm.reset().0);
    let _ = writeln!(v, "        else");
    let _ = writeln!(v, "            state <= next_state;");
    let _ = writeln!(v, "    end");
    let _ = writeln!(v);
    let _ = writeln!(v, "    always @(*) begin");
    let _ = writeln!(v, "        next_state = state;");
    if ow > 0 {
        let _ = writeln!(v, "        out = {ow}'b{};", "0".repeat(ow));
    }
    let _ = writeln!(v, "        case (state)");
    for (i, _) in fsm.states().iter().enumerate() {
        let _ = writeln!(v, "        S{i}: begin");
        for (k, t) in fsm.outgoing(super::StateId(i)).enumerate() {
            let cond = if iw == 0 || t.input.trits().iter().all(|&x| x == Trit::DontCare) {
                "1'b1".to_owned()
            } else {
                format!(
                    "(in & {}) == {}",
                    mask_literal(iw, t.input.trits()),
                    value_literal(iw, t.input.trits())
                )
            };
            let kw = if k == 0 { "if" } else { "else if" };
            let _ = writeln!(v, "            {kw} ({cond}) begin");
            let _ = writeln!(v, "                next_state = S{};", t.dst.0);
            if ow > 0 {
                let _ = writeln!(
                    v,
                    "                out = {};",
                    value_literal(ow, t.output.trits())
                );
            }
            let _ = writeln!(v, "            end");
        }
        let _ = writeln!(v, "        end");
    }
    let _ = writeln!(v, "        default: next_state = S{};", fsm.reset().0);
    let _ = writeln!(v, "        endcase");
    let _ = writeln!(v, "    end");
    let _ = writeln!(v, "endmodule");
    Ok(v)
}
