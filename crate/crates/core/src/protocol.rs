//! Three-party licensing flow between an FPGA vendor, an IP vendor and a
//! system designer.
//!
//! 1. The FPGA vendor enrolls a device (challenge-response pairs).
//! 2. It transfers the pairs to the IP vendor.
//! 3. It sells the device to the designer.
//! 4. The designer orders an IP core for that device.
//! 5. The IP vendor looks up a fresh pair and locks the core to the response.
//! 6. It ships the locked core and its license.
//! 7. The designer activates the core on the device.
//!
//! Messages cross an in-memory channel in serialized form.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bits::BitString;
use crate::fsm::{emit_kiss2, parse_kiss2, Fsm, ParseError};
use crate::obfuscate::{build_bfsm, random_license, BoostedFsm, LockError};
use crate::puf::{self, CrDatabase, CrPair, MockPuf, PufError, MAX_RESPONSE_WIDTH};
use crate::simulate::{run_unlock, SimError, UnlockOutcome};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("order names unregistered device {0:?}")]
    UnknownDevice(String),
    #[error("no IP core {0:?} in the library")]
    UnknownIp(String),
    #[error("device {0:?} has no unused challenge left")]
    ChallengesExhausted(String),
    #[error("identifier {0:?} must be non-empty without whitespace or '='")]
    InvalidId(String),
    #[error("step {got} attempted after step {last}")]
    OutOfOrder { last: u8, got: u8 },
    #[error("{0}")]
    State(String),
    #[error("bad message: {0}")]
    Wire(String),
    #[error("malformed deliverable: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("activation failed: {0}")]
    ActivationFailed(UnlockOutcome),
    #[error(transparent)]
    Puf(#[from] PufError),
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("locked netlist: {0}")]
    Parse(#[from] ParseError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    FpgaVendor,
    IpVendor,
    SystemDesigner,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::FpgaVendor => "FPGA vendor",
            Party::IpVendor => "IP vendor",
            Party::SystemDesigner => "system designer",
        })
    }
}

fn check_id(id: &str) -> Result<(), ProtocolError> {
    if id.is_empty() || id.contains(|c: char| c.is_whitespace() || c == '=') {
        return Err(ProtocolError::InvalidId(id.to_owned()));
    }
    Ok(())
}

/// Locked core plus license as shipped to the designer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Deliverable {
    pub locked_kiss2: String,
    pub license: BitString,
    pub ip_id: String,
    pub fpga_id: String,
    pub challenge: u64,
    /// Rebuild metadata of the locked machine (scheme, b, n, h, ...).
    pub meta: BTreeMap<String, String>,
}

const LOCKED_FILE: &str = "locked.kiss2";
const LICENSE_FILE: &str = "license.txt";
const META_FILE: &str = "meta.txt";

impl Deliverable {
    pub fn meta_text(&self) -> String {
        let mut out = format!(
            "ip_id={}\nfpga_id={}\nchallenge_hex={:016x}\n",
            self.ip_id, self.fpga_id, self.challenge
        );
        for (k, v) in &self.meta {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn from_parts(
        meta_text: &str,
        license: &str,
        locked_kiss2: String,
    ) -> Result<Self, ProtocolError> {
        let bad = |m: String| ProtocolError::Malformed(m);
        let mut meta = BTreeMap::new();
        for (i, line) in meta_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("meta line {}: expected key=value", i + 1)))?;
            if meta
                .insert(k.trim().to_owned(), v.trim().to_owned())
                .is_some()
            {
                return Err(bad(format!("meta line {}: duplicate key {k:?}", i + 1)));
            }
        }
        let mut take = |k: &str| {
            meta.remove(k)
                .ok_or_else(|| bad(format!("missing meta key {k:?}")))
        };
        let ip_id = take("ip_id")?;
        let fpga_id = take("fpga_id")?;
        let hex = take("challenge_hex")?;
        let challenge = u64::from_str_radix(hex.trim_start_matches("0x"), 16)
            .map_err(|_| bad(format!("bad challenge_hex {hex:?}")))?;
        let license = license
            .trim()
            .parse()
            .map_err(|e| bad(format!("license: {e}")))?;
        Ok(Self {
            locked_kiss2,
            license,
            ip_id,
            fpga_id,
            challenge,
            meta,
        })
    }

    /// Writes `locked.kiss2`, `license.txt` and `meta.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ProtocolError> {
        let io_err = |path: PathBuf| move |source| ProtocolError::Io { path, source };
        fs::create_dir_all(dir).map_err(io_err(dir.to_owned()))?;
        for (name, body) in [
            (LOCKED_FILE, self.locked_kiss2.clone()),
            (LICENSE_FILE, format!("{}\n", self.license)),
            (META_FILE, self.meta_text()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(io_err(path))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, ProtocolError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| ProtocolError::Io { path, source })
        };
        Self::from_parts(&read(META_FILE)?, &read(LICENSE_FILE)?, read(LOCKED_FILE)?)
    }

    /// Re-parses the locked netlist and checks the license fits it.
    pub fn to_boosted(&self) -> Result<BoostedFsm, ProtocolError> {
        let fsm = parse_kiss2(&self.locked_kiss2)?;
        let boosted = BoostedFsm::from_metadata(fsm, &self.meta)?;
        if boosted.license_width() != self.license.width() {
            return Err(ProtocolError::Malformed(format!(
                "license has {} bits, locked core expects {}",
                self.license.width(),
                boosted.license_width()
            )));
        }
        Ok(boosted)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolMessage {
    CrTransfer {
        device_id: String,
        pairs: Vec<CrPair>,
    },
    DeviceSale {
        device_id: String,
    },
    OrderRequest {
        fpga_id: String,
        ip_id: String,
    },
    Deliverable(Deliverable),
}

const KISS2_MARK: &str = "%%kiss2";

impl ProtocolMessage {
    pub fn step(&self) -> u8 {
        match self {
            ProtocolMessage::CrTransfer { .. } => 2,
            ProtocolMessage::DeviceSale { .. } => 3,
            ProtocolMessage::OrderRequest { .. } => 4,
            ProtocolMessage::Deliverable(_) => 6,
        }
    }

    pub fn summary(&self) -> String {
        match self {
            ProtocolMessage::CrTransfer { device_id, pairs } => {
                format!("C-R pairs of device {device_id} ({} pairs)", pairs.len())
            }
            ProtocolMessage::DeviceSale { device_id } => format!("device {device_id}"),
            ProtocolMessage::OrderRequest { fpga_id, ip_id } => {
                format!("order IP {ip_id} for device {fpga_id}")
            }
            ProtocolMessage::Deliverable(d) => format!(
                "locked IP {} and {}-bit license for device {}",
                d.ip_id,
                d.license.width(),
                d.fpga_id
            ),
        }
    }

    pub fn encode(&self) -> String {
        match self {
            ProtocolMessage::CrTransfer { device_id, pairs } => {
                let mut s = format!("step 2 cr-transfer {device_id}\n");
                for p in pairs {
                    s.push_str(&format!("{:016x} {}\n", p.challenge, p.response));
                }
                s
            }
            ProtocolMessage::DeviceSale { device_id } => {
                format!("step 3 device-sale {device_id}\n")
            }
            ProtocolMessage::OrderRequest { fpga_id, ip_id } => {
                format!("step 4 order {fpga_id} {ip_id}\n")
            }
            ProtocolMessage::Deliverable(d) => format!(
                "step 6 deliverable\n{}license={}\n{KISS2_MARK}\n{}",
                d.meta_text(),
                d.license,
                d.locked_kiss2
            ),
        }
    }

    pub fn decode(text: &str) -> Result<Self, ProtocolError> {
        let wire = |m: &str| ProtocolError::Wire(m.to_owned());
        let (head, body) = text
            .split_once('\n')
            .ok_or_else(|| wire("missing header line"))?;
        let words: Vec<&str> = head.split_whitespace().collect();
        match words[..] {
            ["step", "2", "cr-transfer", id] => {
                let pairs = body
                    .lines()
                    .map(|line| {
                        let (ch, resp) = line.split_once(' ').ok_or_else(|| wire(line))?;
                        Ok(CrPair {
                            challenge: u64::from_str_radix(ch, 16).map_err(|_| wire(line))?,
                            response: resp.parse().map_err(|_| wire(line))?,
                        })
                    })
                    .collect::<Result<_, ProtocolError>>()?;
                Ok(ProtocolMessage::CrTransfer {
                    device_id: id.to_owned(),
                    pairs,
                })
            }
            ["step", "3", "device-sale", id] => Ok(ProtocolMessage::DeviceSale {
                device_id: id.to_owned(),
            }),
            ["step", "4", "order", fpga, ip] => Ok(ProtocolMessage::OrderRequest {
                fpga_id: fpga.to_owned(),
                ip_id: ip.to_owned(),
            }),
            ["step", "6", "deliverable"] => {
                let (meta, kiss2) = body
                    .split_once(&format!("{KISS2_MARK}\n"))
                    .ok_or_else(|| wire("deliverable without netlist"))?;
                let mut meta_lines = String::new();
                let mut license = None;
                for line in meta.lines() {
                    match line.strip_prefix("license=") {
                        Some(l) => license = Some(l),
                        None => {
                            meta_lines.push_str(line);
                            meta_lines.push('\n');
                        }
                    }
                }
                let license = license.ok_or_else(|| wire("deliverable without license"))?;
                Ok(ProtocolMessage::Deliverable(Deliverable::from_parts(
                    &meta_lines,
                    license,
                    kiss2.to_owned(),
                )?))
            }
            _ => Err(wire(head)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub step: u8,
    pub sender: Party,
    pub receiver: Party,
    pub summary: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn last_step(&self) -> u8 {
        self.entries.last().map_or(0, |e| e.step)
    }

    fn record(&mut self, step: u8, sender: Party, receiver: Party, summary: String) {
        debug_assert!(step >= self.last_step());
        self.entries.push(TranscriptEntry {
            step,
            sender,
            receiver,
            summary,
        });
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "[{}] {} -> {}: {}",
                e.step, e.sender, e.receiver, e.summary
            )?;
        }
        Ok(())
    }
}

/// Serialized messages in flight, per receiver.
#[derive(Debug, Default)]
struct Channel {
    queues: BTreeMap<Party, VecDeque<(Party, String)>>,
}

impl Channel {
    fn send(&mut self, from: Party, to: Party, msg: &ProtocolMessage) {
        self.queues
            .entry(to)
            .or_default()
            .push_back((from, msg.encode()));
    }

    fn recv(&mut self, to: Party) -> Result<Option<(Party, ProtocolMessage)>, ProtocolError> {
        match self.queues.get_mut(&to).and_then(VecDeque::pop_front) {
            Some((from, text)) => Ok(Some((from, ProtocolMessage::decode(&text)?))),
            None => Ok(None),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FpgaVendorState {
    /// Device id to device seed.
    pub devices: BTreeMap<String, u64>,
    pub enrolled: BTreeMap<String, Vec<CrPair>>,
}

#[derive(Clone, Debug, Default)]
pub struct IpVendorState {
    pub library: BTreeMap<String, Fsm>,
    pub db: CrDatabase,
    pub used_challenges: BTreeSet<(String, u64)>,
}

#[derive(Clone, Debug, Default)]
pub struct DesignerState {
    pub device_id: Option<String>,
    /// The purchased chip; only reachable through its challenge interface.
    pub device: Option<MockPuf>,
    pub deliverables: Vec<Deliverable>,
}

/// One protocol run, advanced step by step.
#[derive(Debug, Default)]
pub struct Session {
    fpga_vendor: FpgaVendorState,
    ip_vendor: IpVendorState,
    designer: DesignerState,
    channel: Channel,
    transcript: Transcript,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fpga_vendor(&self) -> &FpgaVendorState {
        &self.fpga_vendor
    }

    pub fn ip_vendor(&self) -> &IpVendorState {
        &self.ip_vendor
    }

    pub fn designer(&self) -> &DesignerState {
        &self.designer
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    pub fn publish_ip(&mut self, ip_id: &str, ip: Fsm) -> Result<(), ProtocolError> {
        check_id(ip_id)?;
        self.ip_vendor.library.insert(ip_id.to_owned(), ip);
        Ok(())
    }

    fn enter(&self, step: u8) -> Result<(), ProtocolError> {
        let last = self.transcript.last_step();
        if step < last {
            return Err(ProtocolError::OutOfOrder { last, got: step });
        }
        Ok(())
    }

    fn send(&mut self, from: Party, to: Party, msg: ProtocolMessage) {
        self.transcript.record(msg.step(), from, to, msg.summary());
        self.channel.send(from, to, &msg);
    }

    /// Step 1: full-width responses are enrolled; orders use their prefixes.
    pub fn enroll(
        &mut self,
        device_seed: u64,
        challenges: &[u64],
    ) -> Result<String, ProtocolError> {
        self.enter(1)?;
        let (id, pairs) = puf::enroll(device_seed, challenges, MAX_RESPONSE_WIDTH)?;
        self.transcript.record(
            1,
            Party::FpgaVendor,
            Party::FpgaVendor,
            format!("enroll device {id} with {} challenges", pairs.len()),
        );
        self.fpga_vendor.devices.insert(id.clone(), device_seed);
        self.fpga_vendor.enrolled.insert(id.clone(), pairs);
        Ok(id)
    }

    /// Step 2.
    pub fn transfer_pairs(&mut self, device_id: &str) -> Result<(), ProtocolError> {
        self.enter(2)?;
        let pairs = self
            .fpga_vendor
            .enrolled
            .get(device_id)
            .ok_or_else(|| ProtocolError::UnknownDevice(device_id.to_owned()))?
            .clone();
        self.send(
            Party::FpgaVendor,
            Party::IpVendor,
            ProtocolMessage::CrTransfer {
                device_id: device_id.to_owned(),
                pairs,
            },
        );
        while let Some((_, msg)) = self.channel.recv(Party::IpVendor)? {
            match msg {
                ProtocolMessage::CrTransfer { device_id, pairs } => {
                    self.ip_vendor.db.insert(device_id, pairs)?
                }
                other => return Err(unexpected(Party::IpVendor, &other)),
            }
        }
        Ok(())
    }

    /// Step 3.
    pub fn sell(&mut self, device_id: &str) -> Result<(), ProtocolError> {
        self.enter(3)?;
        let seed = *self
            .fpga_vendor
            .devices
            .get(device_id)
            .ok_or_else(|| ProtocolError::UnknownDevice(device_id.to_owned()))?;
        self.send(
            Party::FpgaVendor,
            Party::SystemDesigner,
            ProtocolMessage::DeviceSale {
                device_id: device_id.to_owned(),
            },
        );
        match self.channel.recv(Party::SystemDesigner)? {
            Some((_, ProtocolMessage::DeviceSale { device_id })) => {
                self.designer.device_id = Some(device_id);
                self.designer.device = Some(MockPuf::new(seed));
                Ok(())
            }
            Some((_, other)) => Err(unexpected(Party::SystemDesigner, &other)),
            None => Err(ProtocolError::State("sale message lost".into())),
        }
    }

    /// Step 4.
    pub fn order(&mut self, ip_id: &str) -> Result<(), ProtocolError> {
        self.enter(4)?;
        check_id(ip_id)?;
        let fpga_id = self
            .designer
            .device_id
            .clone()
            .ok_or_else(|| ProtocolError::State("designer has not bought a device".into()))?;
        self.send(
            Party::SystemDesigner,
            Party::IpVendor,
            ProtocolMessage::OrderRequest {
                fpga_id,
                ip_id: ip_id.to_owned(),
            },
        );
        Ok(())
    }

    /// Steps 5 and 6: lock the ordered core to a fresh response and ship it.
    pub fn fulfil(&mut self, license_len: usize, rng_seed: u64) -> Result<(), ProtocolError> {
        self.enter(5)?;
        let (fpga_id, ip_id) = match self.channel.recv(Party::IpVendor)? {
            Some((_, ProtocolMessage::OrderRequest { fpga_id, ip_id })) => (fpga_id, ip_id),
            Some((_, other)) => return Err(unexpected(Party::IpVendor, &other)),
            None => return Err(ProtocolError::State("no pending order".into())),
        };
        let ip = self
            .ip_vendor
            .library
            .get(&ip_id)
            .ok_or_else(|| ProtocolError::UnknownIp(ip_id.clone()))?;
        let pairs = self
            .ip_vendor
            .db
            .pairs(&fpga_id)
            .ok_or_else(|| ProtocolError::UnknownDevice(fpga_id.clone()))?;
        let pair = pairs
            .iter()
            .find(|p| {
                !self
                    .ip_vendor
                    .used_challenges
                    .contains(&(fpga_id.clone(), p.challenge))
            })
            .ok_or_else(|| ProtocolError::ChallengesExhausted(fpga_id.clone()))?;
        if license_len == 0 || license_len > pair.response.width() {
            return Err(PufError::Width(license_len).into());
        }
        let response = BitString::from_bits(pair.response.as_bits()[..license_len].to_vec());
        let challenge = pair.challenge;
        let license = random_license(rng_seed, license_len);
        let locked = build_bfsm(ip, &response, &license, puf::mix(rng_seed))?;
        self.ip_vendor
            .used_challenges
            .insert((fpga_id.clone(), challenge));
        self.transcript.record(
            5,
            Party::IpVendor,
            Party::IpVendor,
            format!(
                "look up challenge {challenge:016x} of device {fpga_id}; lock IP {ip_id} (+{} states)",
                locked.added_states()
            ),
        );
        let deliverable = Deliverable {
            locked_kiss2: emit_kiss2(locked.fsm()),
            license,
            ip_id,
            fpga_id,
            challenge,
            meta: locked.metadata(),
        };
        self.send(
            Party::IpVendor,
            Party::SystemDesigner,
            ProtocolMessage::Deliverable(deliverable),
        );
        match self.channel.recv(Party::SystemDesigner)? {
            Some((_, ProtocolMessage::Deliverable(d))) => {
                self.designer.deliverables.push(d);
                Ok(())
            }
            Some((_, other)) => Err(unexpected(Party::SystemDesigner, &other)),
            None => Err(ProtocolError::State("deliverable lost".into())),
        }
    }

    /// Step 7: activate the latest deliverable on the purchased device.
    pub fn activate(&mut self) -> Result<UnlockOutcome, ProtocolError> {
        self.enter(7)?;
        let device = self
            .designer
            .device
            .ok_or_else(|| ProtocolError::State("designer has no device".into()))?;
        let d = self
            .designer
            .deliverables
            .last()
            .ok_or_else(|| ProtocolError::State("nothing to activate".into()))?;
        let outcome = activate(d, &device, d.challenge)?;
        self.transcript.record(
            7,
            Party::SystemDesigner,
            Party::SystemDesigner,
            format!("activate IP {} with license: {outcome}", d.ip_id),
        );
        Ok(outcome)
    }
}

fn unexpected(at: Party, msg: &ProtocolMessage) -> ProtocolError {
    ProtocolError::Wire(format!("{at} did not expect step {} message", msg.step()))
}

/// Runs the device's PUF on `challenge` and drives the license through the
/// locked core.
pub fn activate(
    deliverable: &Deliverable,
    device: &MockPuf,
    challenge: u64,
) -> Result<UnlockOutcome, ProtocolError> {
    let boosted = deliverable.to_boosted()?;
    let response = device.respond(challenge, boosted.response_width())?;
    Ok(run_unlock(&boosted, &response, &deliverable.license)?)
}

/// The whole flow for one device and one order; fails loudly unless the
/// authorized activation unlocks.
pub fn run_protocol(
    device_seed: u64,
    challenges: &[u64],
    ip_id: &str,
    ip: &Fsm,
    license_len: usize,
    rng_seed: u64,
) -> Result<(Transcript, Deliverable), ProtocolError> {
    let mut s = Session::new();
    s.publish_ip(ip_id, ip.clone())?;
    let device_id = s.enroll(device_seed, challenges)?;
    s.transfer_pairs(&device_id)?;
    s.sell(&device_id)?;
    s.order(ip_id)?;
    s.fulfil(license_len, rng_seed)?;
    let outcome = s.activate()?;
    if !outcome.is_unlocked() {
        return Err(ProtocolError::ActivationFailed(outcome));
    }
    let deliverable = s
        .designer
        .deliverables
        .pop()
        .expect("fulfil stored a deliverable");
    Ok((s.into_transcript(), deliverable))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsm::tests::MINIMAL;
    use rand::{Rng, SeedableRng};

    fn ip() -> Fsm {
        parse_kiss2(MINIMAL).unwrap()
    }

    #[test]
    fn six_bit_order_runs_all_steps() {
        let (t, d) = run_protocol(123, &[0xC0FFEE, 5], "counter", &ip(), 6, 9).unwrap();
        let steps: Vec<u8> = t.entries().iter().map(|e| e.step).collect();
        assert_eq!(steps, [1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(d.challenge, 0xC0FFEE);
        assert_eq!(d.fpga_id, MockPuf::new(123).device_id());
        let b = d.to_boosted().unwrap();
        assert_eq!(b.added_states(), 9);
        assert_eq!(
            activate(&d, &MockPuf::new(123), d.challenge).unwrap(),
            UnlockOutcome::Unlocked(6)
        );
    }

    #[test]
    fn deterministic() {
        let a = run_protocol(7, &[1, 2, 3], "ip", &ip(), 8, 77).unwrap();
        let b = run_protocol(7, &[1, 2, 3], "ip", &ip(), 8, 77).unwrap();
        assert_eq!(a.0.to_string(), b.0.to_string());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn wrong_device_or_challenge_is_trapped() {
        let (_, d) = run_protocol(1, &[42], "ip", &ip(), 64, 3).unwrap();
        for seed in 2..40 {
            assert!(!activate(&d, &MockPuf::new(seed), 42).unwrap().is_unlocked());
        }
        assert!(!activate(&d, &MockPuf::new(1), 43).unwrap().is_unlocked());
    }

    #[test]
    fn unlocks_iff_response_matches_on_short_licenses() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for run in 0..50u64 {
            let l = [2, 4, 6][run as usize % 3];
            let seed: u64 = rng.random();
            let ch: u64 = rng.random();
            let (_, d) = run_protocol(seed, &[ch], "ip", &ip(), l, run).unwrap();
            let authorized = MockPuf::new(seed).respond(ch, l).unwrap();
            assert!(activate(&d, &MockPuf::new(seed), ch).unwrap().is_unlocked());
            for _ in 0..5 {
                let other = MockPuf::new(rng.random());
                let same = other.respond(ch, l).unwrap() == authorized;
                assert_eq!(activate(&d, &other, ch).unwrap().is_unlocked(), same);
            }
        }
    }

    #[test]
    fn order_for_unregistered_device() {
        let mut s = Session::new();
        s.publish_ip("ip", ip()).unwrap();
        let known = s.enroll(1, &[10]).unwrap();
        let unknown = s.enroll(2, &[10]).unwrap();
        s.transfer_pairs(&known).unwrap();
        s.sell(&unknown).unwrap();
        s.order("ip").unwrap();
        let e = s.fulfil(6, 0).unwrap_err();
        assert!(matches!(e, ProtocolError::UnknownDevice(id) if id == unknown));
    }

    #[test]
    fn unknown_ip_and_step_order() {
        let mut s = Session::new();
        let id = s.enroll(1, &[10]).unwrap();
        s.transfer_pairs(&id).unwrap();
        s.sell(&id).unwrap();
        assert!(matches!(
            s.enroll(3, &[1]),
            Err(ProtocolError::OutOfOrder { last: 3, got: 1 })
        ));
        s.order("missing").unwrap();
        assert!(matches!(s.fulfil(6, 0), Err(ProtocolError::UnknownIp(_))));
    }

    #[test]
    fn designer_holds_no_response_material() {
        let mut s = Session::new();
        s.publish_ip("ip", ip()).unwrap();
        let id = s.enroll(99, &[0xABC]).unwrap();
        s.transfer_pairs(&id).unwrap();
        s.sell(&id).unwrap();
        s.order("ip").unwrap();
        s.fulfil(6, 1).unwrap();
        assert!(s.activate().unwrap().is_unlocked());

        let full = MockPuf::new(99)
            .respond(0xABC, MAX_RESPONSE_WIDTH)
            .unwrap()
            .to_string();
        let record = format!("{:?}", s.designer());
        assert!(!record.contains(&full));
        assert!(!record.contains("CrPair"));
        for d in &s.designer().deliverables {
            assert!(d.meta.keys().all(|k| !k.contains("response")));
        }
        assert!(format!("{:?}", s.ip_vendor()).contains("CrPair"));
        assert!(!format!("{:?}", s.ip_vendor()).contains("seed"));
    }

    #[test]
    fn messages_round_trip() {
        let (_, d) = run_protocol(4, &[8], "ip", &ip(), 6, 2).unwrap();
        let msgs = [
            ProtocolMessage::CrTransfer {
                device_id: "1".into(),
                pairs: puf::enroll(1, &[3, 4], 9).unwrap().1,
            },
            ProtocolMessage::DeviceSale {
                device_id: "1".into(),
            },
            ProtocolMessage::OrderRequest {
                fpga_id: "1".into(),
                ip_id: "ip".into(),
            },
            ProtocolMessage::Deliverable(d),
        ];
        for m in msgs {
            assert_eq!(ProtocolMessage::decode(&m.encode()).unwrap(), m);
        }
        assert!(ProtocolMessage::decode("step 9 nope\n").is_err());
    }

    #[test]
    fn deliverable_directory_round_trip() {
        let (_, d) = run_protocol(4, &[0xFEED], "core", &ip(), 6, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write_dir(dir.path()).unwrap();
        let meta = fs::read_to_string(dir.path().join(META_FILE)).unwrap();
        for key in [
            "ip_id=core",
            "challenge_hex=000000000000feed",
            "scheme=proposed",
            "b=2",
            "n=6",
            "h=3",
        ] {
            assert!(meta.lines().any(|l| l == key), "{key}");
        }
        let license = fs::read_to_string(dir.path().join(LICENSE_FILE)).unwrap();
        assert_eq!(license, format!("{}\n", d.license));
        let back = Deliverable::read_dir(dir.path()).unwrap();
        assert_eq!(back, d);
        assert!(activate(&back, &MockPuf::new(4), 0xFEED)
            .unwrap()
            .is_unlocked());

        fs::write(dir.path().join(LICENSE_FILE), "0101\n").unwrap();
        let short = Deliverable::read_dir(dir.path()).unwrap();
        assert!(matches!(
            short.to_boosted(),
            Err(ProtocolError::Malformed(_))
        ));
    }
}
