//! KISS2 reader and writer.
//!
//! Lines are whitespace-separated tokens; `#` starts a comment. Directives
//! are `.i`, `.o`, `.p`, `.s`, `.r` and `.e`. A transition line is
//! `input src dst output`. When `.i 0` (or `.o 0`) the corresponding token is
//! absent, since an empty pattern cannot be written as a token.

use std::fmt::Write as _;

use thiserror::Error;

use super::{Fsm, FsmBuilder, FsmError, TernaryPattern};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown directive {0:?}")]
    UnknownDirective(String),
    #[error("duplicate directive {0}")]
    DuplicateDirective(&'static str),
    #[error("{0} directive must precede the first transition")]
    MissingDirective(&'static str),
    #[error("{what} pattern {pattern:?} has width {got}, expected {expected}")]
    WidthMismatch {
        what: &'static str,
        pattern: String,
        got: usize,
        expected: usize,
    },
    #[error("{directive} declares {declared} but the file has {actual}")]
    CountMismatch {
        directive: &'static str,
        declared: usize,
        actual: usize,
    },
    #[error("no transitions")]
    NoTransitions,
    #[error(transparent)]
    Fsm(#[from] FsmError),
}

struct Token<'a> {
    column: usize,
    text: &'a str,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let line = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(Token {
                    column: line[..s].chars().count() + 1,
                    text: &line[s..i],
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token {
            column: line[..s].chars().count() + 1,
            text: &line[s..],
        });
    }
    out
}

#[derive(Default)]
struct Header {
    inputs: Option<usize>,
    outputs: Option<usize>,
    products: Option<(usize, usize)>,
    states: Option<(usize, usize)>,
    reset: Option<(usize, usize, String)>,
}

pub fn parse_kiss2(text: &str) -> Result<Fsm, ParseError> {
    let mut header = Header::default();
    let mut builder: Option<FsmBuilder> = None;

    for (line_no, raw) in text.lines().enumerate() {
        let line = line_no + 1;
        let toks = tokenize(raw);
        let Some(first) = toks.first() else { continue };
        let err = |column: usize, kind: ParseErrorKind| ParseError { line, column, kind };

        if first.text.starts_with('.') {
            let name = first.text;
            let arg = |toks: &[Token<'_>]| -> Result<(usize, String), ParseError> {
                match toks {
                    [_, a] => Ok((a.column, a.text.to_owned())),
                    [d] => Err(err(
                        d.column + d.text.len(),
                        ParseErrorKind::Syntax(format!("{} needs one argument", d.text)),
                    )),
                    [_, _, extra, ..] => Err(err(
                        extra.column,
                        ParseErrorKind::Syntax("unexpected token".into()),
                    )),
                    [] => unreachable!(),
                }
            };
            let int = |toks: &[Token<'_>]| -> Result<usize, ParseError> {
                let (col, s) = arg(toks)?;
                s.parse().map_err(|_| {
                    err(
                        col,
                        ParseErrorKind::Syntax(format!("expected integer, found {s:?}")),
                    )
                })
            };
            let dup = |d: &'static str| err(first.column, ParseErrorKind::DuplicateDirective(d));
            match name {
                ".i" | ".o" => {
                    if builder.is_some() {
                        return Err(err(
                            first.column,
                            ParseErrorKind::Syntax(format!("{name} after the first transition")),
                        ));
                    }
                    let v = int(&toks)?;
                    let slot = if name == ".i" {
                        &mut header.inputs
                    } else {
                        &mut header.outputs
                    };
                    if slot.replace(v).is_some() {
                        return Err(dup(if name == ".i" { ".i" } else { ".o" }));
                    }
                }
                ".p" => {
                    let v = int(&toks)?;
                    if header.products.replace((line, v)).is_some() {
                        return Err(dup(".p"));
                    }
                }
                ".s" => {
                    let v = int(&toks)?;
                    if header.states.replace((line, v)).is_some() {
                        return Err(dup(".s"));
                    }
                }
                ".r" => {
                    let (col, s) = arg(&toks)?;
                    if header.reset.replace((line, col, s)).is_some() {
                        return Err(dup(".r"));
                    }
                }
                ".e" | ".end" => break,
                other => {
                    return Err(err(
                        first.column,
                        ParseErrorKind::UnknownDirective(other.to_owned()),
                    ))
                }
            }
            continue;
        }

        let Some(iw) = header.inputs else {
            return Err(err(first.column, ParseErrorKind::MissingDirective(".i")));
        };
        let Some(ow) = header.outputs else {
            return Err(err(first.column, ParseErrorKind::MissingDirective(".o")));
        };
        let b = builder.get_or_insert_with(|| FsmBuilder::new(iw, ow));

        let expected = 2 + usize::from(iw > 0) + usize::from(ow > 0);
        if toks.len() != expected {
            let column = toks.get(expected).map(|t| t.column).unwrap_or_else(|| {
                raw.split('#')
                    .next()
                    .unwrap_or("")
                    .trim_end()
                    .chars()
                    .count()
                    + 1
            });
            return Err(err(
                column,
                ParseErrorKind::Syntax(format!(
                    "transition needs {expected} fields, found {}",
                    toks.len()
                )),
            ));
        }
        let mut it = toks.iter();
        let pattern = |tok: Option<&Token<'_>>, what: &'static str, width: usize| match tok {
            None => Ok(TernaryPattern::dont_care(0)),
            Some(tok) => {
                let p = TernaryPattern::parse_at(tok.text).map_err(|e| {
                    err(
                        tok.column + e.pos,
                        ParseErrorKind::Syntax(format!("invalid pattern character {:?}", e.ch)),
                    )
                })?;
                if p.width() != width {
                    return Err(err(
                        tok.column,
                        ParseErrorKind::WidthMismatch {
                            what,
                            pattern: tok.text.to_owned(),
                            got: p.width(),
                            expected: width,
                        },
                    ));
                }
                Ok(p)
            }
        };
        let input = pattern(if iw > 0 { it.next() } else { None }, "input", iw)?;
        let src = it.next().expect("field count checked");
        let dst = it.next().expect("field count checked");
        let output = pattern(if ow > 0 { it.next() } else { None }, "output", ow)?;
        b.transition(input, src.text, dst.text, output)
            .map_err(|e| err(src.column, e.into()))?;
    }

    let Some(mut b) = builder else {
        return Err(ParseError {
            line: text.lines().count().max(1),
            column: 1,
            kind: ParseErrorKind::NoTransitions,
        });
    };
    match &header.reset {
        Some((line, column, name)) => {
            b.set_reset(name).map_err(|e| ParseError {
                line: *line,
                column: *column,
                kind: e.into(),
            })?;
        }
        None => {
            // States are numbered in order of appearance; the first line's source is state 0.
            let name = b.states[0].clone();
            b.set_reset(&name).expect("existing state");
        }
    }
    let num_transitions = b.num_transitions();
    let fsm = b.build().map_err(|e| ParseError {
        line: 1,
        column: 1,
        kind: e.into(),
    })?;
    if let Some((line, declared)) = header.products {
        if declared != num_transitions {
            return Err(ParseError {
                line,
                column: 1,
                kind: ParseErrorKind::CountMismatch {
                    directive: ".p",
                    declared,
                    actual: num_transitions,
                },
            });
        }
    }
    if let Some((line, declared)) = header.states {
        if declared != fsm.num_states() {
            return Err(ParseError {
                line,
                column: 1,
                kind: ParseErrorKind::CountMismatch {
                    directive: ".s",
                    declared,
                    actual: fsm.num_states(),
                },
            });
        }
    }
    Ok(fsm)
}

/// Canonical KISS2 text: header, transitions in stored order, `.e`.
pub fn emit_kiss2(fsm: &Fsm) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".i {}", fsm.inputs_width());
    let _ = writeln!(out, ".o {}", fsm.outputs_width());
    let _ = writeln!(out, ".p {}", fsm.transitions().len());
    let _ = writeln!(out, ".s {}", fsm.num_states());
    let _ = writeln!(out, ".r {}", fsm.reset_name());
    for t in fsm.transitions() {
        let mut fields: Vec<String> = Vec::with_capacity(4);
        if fsm.inputs_width() > 0 {
            fields.push(t.input.to_string());
        }
        fields.push(fsm.name(t.src).to_owned());
        fields.push(fsm.name(t.dst).to_owned());
        if fsm.outputs_width() > 0 {
            fields.push(t.output.to_string());
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out.push_str(".e\n");
    out
}
