//! Deterministic stand-in for a device PUF, and the challenge-response
//! database the FPGA vendor hands to the IP vendor.
//!
//! Response bit `k` is bit `k mod 64` of
//! `mix(seed ^ challenge ^ (k / 64)·0x9E3779B97F4A7C15)`, where `mix` is the
//! SplitMix64 finalizer. Shorter responses are prefixes (low bits) of longer
//! ones.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bits::BitString;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
pub const MAX_RESPONSE_WIDTH: usize = 512;

#[derive(Debug, Error)]
pub enum PufError {
    #[error("response width {0} outside 1..=512")]
    Width(usize),
    #[error("no challenges to enroll")]
    NoChallenges,
    #[error("device {0:?} already present")]
    DuplicateDevice(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

/// SplitMix64 output function.
pub fn mix(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MockPuf {
    pub device_seed: u64,
}

impl MockPuf {
    pub fn new(device_seed: u64) -> Self {
        Self { device_seed }
    }

    pub fn respond(&self, challenge: u64, width: usize) -> Result<BitString, PufError> {
        respond(self, challenge, width)
    }

    /// Decimal rendering of `mix(device_seed)`.
    pub fn device_id(&self) -> String {
        mix(self.device_seed).to_string()
    }
}

pub fn respond(puf: &MockPuf, challenge: u64, width: usize) -> Result<BitString, PufError> {
    if width == 0 || width > MAX_RESPONSE_WIDTH {
        return Err(PufError::Width(width));
    }
    let mut bits = Vec::with_capacity(width);
    let mut word = 0u64;
    for k in 0..width {
        if k % 64 == 0 {
            let block = (k / 64) as u64;
            word = mix(puf.device_seed ^ challenge ^ block.wrapping_mul(GOLDEN));
        }
        bits.push((word >> (k % 64)) & 1 == 1);
    }
    Ok(BitString::from_bits(bits))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrPair {
    pub challenge: u64,
    pub response: BitString,
}

pub fn enroll(
    device_seed: u64,
    challenges: &[u64],
    width: usize,
) -> Result<(String, Vec<CrPair>), PufError> {
    if challenges.is_empty() {
        return Err(PufError::NoChallenges);
    }
    let puf = MockPuf::new(device_seed);
    let pairs = challenges
        .iter()
        .map(|&challenge| {
            Ok(CrPair {
                challenge,
                response: puf.respond(challenge, width)?,
            })
        })
        .collect::<Result<_, PufError>>()?;
    Ok((puf.device_id(), pairs))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CrDatabase {
    records: BTreeMap<String, Vec<CrPair>>,
}

impl CrDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, device_id: String, pairs: Vec<CrPair>) -> Result<(), PufError> {
        if self.records.contains_key(&device_id) {
            return Err(PufError::DuplicateDevice(device_id));
        }
        self.records.insert(device_id, pairs);
        Ok(())
    }

    pub fn pairs(&self, device_id: &str) -> Option<&[CrPair]> {
        self.records.get(device_id).map(Vec::as_slice)
    }

    pub fn lookup(&self, device_id: &str, challenge: u64) -> Option<&CrPair> {
        self.pairs(device_id)?
            .iter()
            .find(|p| p.challenge == challenge)
    }

    pub fn devices(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# device_id\tchallenge_hex\tresponse_bits\n");
        let mut count = 0;
        for (id, pairs) in &self.records {
            for p in pairs {
                out.push_str(&format!("{id}\t{:016x}\t{}\n", p.challenge, p.response));
                count += 1;
            }
        }
        out.push_str(&format!("# records {count}\n"));
        out
    }

    /// Parses the tab-separated form. A trailing `# records N` line, when
    /// present, must match; the text must end with a newline.
    pub fn from_text(text: &str, path: &Path) -> Result<Self, PufError> {
        let bad = |line: usize, msg: String| PufError::Malformed {
            path: path.to_owned(),
            line,
            msg,
        };
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(bad(
                text.lines().count(),
                "truncated line (no trailing newline)".into(),
            ));
        }
        let mut records: BTreeMap<String, Vec<CrPair>> = BTreeMap::new();
        let mut count = 0usize;
        let mut trailer: Option<(usize, usize)> = None;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("records ") {
                    let declared = v
                        .trim()
                        .parse()
                        .map_err(|_| bad(n, format!("bad record count {v:?}")))?;
                    trailer = Some((n, declared));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, ch, resp] = fields[..] else {
                return Err(bad(
                    n,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            };
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(bad(n, format!("invalid device id {id:?}")));
            }
            let hex = ch.strip_prefix("0x").unwrap_or(ch);
            if hex.is_empty() || hex.len() > 16 {
                return Err(bad(n, format!("invalid challenge {ch:?}")));
            }
            let challenge = u64::from_str_radix(hex, 16)
                .map_err(|_| bad(n, format!("invalid challenge {ch:?}")))?;
            let response: BitString = resp
                .parse()
                .map_err(|e| bad(n, format!("invalid response: {e}")))?;
            if response.is_empty() {
                return Err(bad(n, "empty response".into()));
            }
            records.entry(id.to_owned()).or_default().push(CrPair {
                challenge,
                response,
            });
            count += 1;
        }
        if let Some((line, declared)) = trailer {
            if declared != count {
                return Err(bad(
                    line,
                    format!("trailer declares {declared} records, found {count}"),
                ));
            }
        }
        Ok(Self { records })
    }
}

/// Writes via a temporary sibling file and a rename.
pub fn save_db(db: &CrDatabase, path: &Path) -> Result<(), PufError> {
    let io_err = |source| PufError::Io {
        path: path.to_owned(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, db.to_text()).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn load_db(path: &Path) -> Result<CrDatabase, PufError> {
    let text = fs::read_to_string(path).map_err(|source| PufError::Io {
        path: path.to_owned(),
        source,
    })?;
    CrDatabase::from_text(&text, path)
}
