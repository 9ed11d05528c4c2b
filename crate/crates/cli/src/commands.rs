use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use fsmlock::fsm::{emit_hdl, emit_kiss2, parse_kiss2, Fsm, HdlError, ParseError};
use fsmlock::obfuscate::{
    build_bfsm, build_layered, random_license, BoostedFsm, LayeredParams, LockError, Scheme,
};
use fsmlock::params::{self, ParamsError};
use fsmlock::protocol::{activate, run_protocol, Deliverable, ProtocolError};
use fsmlock::puf::{mix, MockPuf, PufError};
use fsmlock::simulate::{
    count_valid_licenses, count_valid_responses, run_unlock, trace_equivalence, SimError,
    UnlockOutcome,
};
use fsmlock::BitString;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Verify(_) => 4,
        }
    }
}

impl From<ParamsError> for CliError {
    fn from(e: ParamsError) -> Self {
        CliError::Infeasible(e.to_string())
    }
}

impl From<LockError> for CliError {
    fn from(e: LockError) -> Self {
        match e {
            LockError::Params(p) => p.into(),
            LockError::KeyTooWide(_) => CliError::Infeasible(e.to_string()),
            LockError::Bits(_) | LockError::WidthMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Lock(l) => l.into(),
            SimError::NotUnlocked(o) => CliError::Verify(o.to_string()),
            SimError::InputWidth { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Lock(l) => l.into(),
            ProtocolError::Sim(s) => s.into(),
            ProtocolError::Puf(PufError::Width(_)) => CliError::Infeasible(e.to_string()),
            ProtocolError::Parse(_) | ProtocolError::Malformed(_) | ProtocolError::Io { .. } => {
                CliError::Parse(e.to_string())
            }
            ProtocolError::InvalidId(_) => CliError::Usage(e.to_string()),
            _ => CliError::Verify(e.to_string()),
        }
    }
}

impl From<PufError> for CliError {
    fn from(e: PufError) -> Self {
        match e {
            PufError::Width(_) => CliError::Infeasible(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<HdlError> for CliError {
    fn from(e: HdlError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Human-readable report plus a `key=value` block.
#[derive(Debug, Default)]
pub struct Report {
    pub text: String,
    pub values: Vec<(String, String)>,
}

impl Report {
    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }

    fn kv(&mut self, k: &str, v: impl ToString) {
        self.values.push((k.to_owned(), v.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = self.text.clone();
        if !self.values.is_empty() {
            out.push_str("---\n");
            for (k, v) in &self.values {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }
}

pub type Outcome = Result<Report, CliError>;

/// Where a PUF response comes from.
#[derive(Clone, Debug)]
pub enum ResponseSource {
    Raw(BitString),
    Device { seed: u64, challenge: Option<u64> },
}

impl ResponseSource {
    fn resolve(&self, width: usize, default_challenge: u64) -> Result<BitString, CliError> {
        match self {
            ResponseSource::Raw(bits) => Ok(bits.clone()),
            ResponseSource::Device { seed, challenge } => {
                Ok(MockPuf::new(*seed).respond(challenge.unwrap_or(default_challenge), width)?)
            }
        }
    }

    fn challenge(&self) -> Option<u64> {
        match self {
            ResponseSource::Device { challenge, .. } => *challenge,
            ResponseSource::Raw(_) => None,
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn load_fsm(path: &Path) -> Result<Fsm, CliError> {
    parse_kiss2(&read_text(path)?)
        .map_err(|e: ParseError| CliError::Parse(format!("{}:{e}", path.display())))
}

fn load_deliverable(dir: &Path) -> Result<(Deliverable, BoostedFsm), CliError> {
    let d = Deliverable::read_dir(dir)?;
    let b = d.to_boosted()?;
    Ok((d, b))
}

/// Baseline used when only a license length is known: `m = 4`, one license
/// bit per layer.
fn default_layered(l: usize) -> Option<LayeredParams> {
    (l >= 2 && l.is_multiple_of(2))
        .then(|| LayeredParams::new(4, l).ok())
        .flatten()
}

pub fn params(l: usize, layered: Option<(usize, usize)>) -> Outcome {
    let p = params::optimize(l)?;
    let widths = params::feasible_selector_widths(l)?;
    let b_star = params::continuous_optimum_b(l);
    let mut r = Report::default();
    r.line(format!("license length L = {l}"));
    r.line(format!(
        "feasible b: {}",
        widths
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    ));
    r.line(format!(
        "optimum: b = {}, n = {}, h = {}, added states = {}",
        p.selector_width, p.normal_states, p.black_holes, p.states_added
    ));
    r.line(format!("continuous optimum b* = {b_star:.6}"));
    r.kv("L", l);
    r.kv("b", p.selector_width);
    r.kv("n", p.normal_states);
    r.kv("h", p.black_holes);
    r.kv("SN", p.states_added);
    r.kv("b_star", format!("{b_star:.6}"));

    let baseline = match layered {
        Some((m, layers)) => Some((m, layers)),
        None => default_layered(l).map(|lp| (lp.m, lp.layers)),
    };
    if let Some((m, layers)) = baseline {
        let count = params::states_added_layered(m, layers)?;
        r.line(format!(
            "layered baseline m = {m}, M = {layers}: added states = {count}"
        ));
        if (m, layers) == (3, 178) && count != 365 {
            r.line(format!(
                "note: 365 is also quoted for this configuration; (M/2)(1+m) gives {count}"
            ));
            r.kv("cited_layered_SN", 365);
        }
        let ratio = Ratio::new(p.states_added, count);
        r.line(format!(
            "proposed / layered = {ratio} ({:.4})",
            p.states_added as f64 / count as f64
        ));
        r.kv("layered_m", m);
        r.kv("layered_M", layers);
        r.kv("layered_SN", count);
        r.kv("ratio", ratio);
    }
    Ok(r)
}

pub struct LockArgs {
    pub input: PathBuf,
    pub license_len: Option<usize>,
    pub license: Option<BitString>,
    pub response: ResponseSource,
    pub layered: Option<(usize, usize)>,
    pub seed: u64,
    pub out: PathBuf,
    pub hdl: Option<PathBuf>,
}

pub fn lock(a: LockArgs) -> Outcome {
    let original = load_fsm(&a.input)?;
    let challenge = a.response.challenge().unwrap_or(0);
    let locked = match a.layered {
        Some((m, layers)) => {
            let lp = LayeredParams::new(m, layers)?;
            let response = a.response.resolve(lp.response_width(), 0)?;
            let license = a
                .license
                .clone()
                .unwrap_or_else(|| random_license(a.seed, lp.license_width()));
            build_layered(&original, &response, &license, lp)?
        }
        None => {
            let l = match (&a.response, a.license_len, &a.license) {
                (_, Some(l), _) => l,
                (_, None, Some(lic)) => lic.width(),
                (ResponseSource::Raw(r), None, None) => r.width(),
                _ => return Err(CliError::Usage("give -L, --license or --response".into())),
            };
            params::optimize(l)?;
            let response = a.response.resolve(l, 0)?;
            let license = a
                .license
                .clone()
                .unwrap_or_else(|| random_license(a.seed, l));
            build_bfsm(&original, &response, &license, mix(a.seed))?
        }
    };
    let license = match &a.license {
        Some(l) => l.clone(),
        None => random_license(a.seed, locked.license_width()),
    };
    let ip_id = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().replace(char::is_whitespace, "_"))
        .unwrap_or_else(|| "ip".into());
    let fpga_id = match &a.response {
        ResponseSource::Device { seed, .. } => MockPuf::new(*seed).device_id(),
        ResponseSource::Raw(_) => "unbound".into(),
    };
    let d = Deliverable {
        locked_kiss2: emit_kiss2(locked.fsm()),
        license,
        ip_id,
        fpga_id,
        challenge,
        meta: locked.metadata(),
    };
    d.write_dir(&a.out)?;
    if let Some(path) = &a.hdl {
        write_text(path, &emit_hdl(locked.fsm(), "locked_fsm")?)?;
    }

    let mut r = Report::default();
    r.line(format!(
        "locked {} ({} states) with the {} scheme",
        a.input.display(),
        original.num_states(),
        locked.scheme().name()
    ));
    r.line(format!(
        "added {} states and {} transitions; key port {} bits, chain of {} steps",
        locked.added_states(),
        locked.added_transitions(),
        locked.key_width(),
        locked.chain_len()
    ));
    r.line(format!("wrote {}", a.out.display()));
    r.kv("scheme", locked.scheme().name());
    r.kv("original_states", original.num_states());
    r.kv("locked_states", locked.fsm().num_states());
    r.kv("added_states", locked.added_states());
    r.kv("added_transitions", locked.added_transitions());
    r.kv("license", &d.license);
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepTarget {
    Responses,
    Licenses,
}

pub fn count_valid(
    dir: &Path,
    license: Option<BitString>,
    target: SweepTarget,
    response: Option<ResponseSource>,
    limit: usize,
) -> Outcome {
    let (d, locked) = load_deliverable(dir)?;
    let license = license.unwrap_or(d.license);
    let report = match target {
        SweepTarget::Responses => count_valid_responses(&locked, &license, limit)?,
        SweepTarget::Licenses => {
            let src = response.ok_or_else(|| {
                CliError::Usage("--target licenses needs --response or --device-seed".into())
            })?;
            let response = src.resolve(locked.response_width(), d.challenge)?;
            count_valid_licenses(&locked, &response, limit)?
        }
    };
    let what = match target {
        SweepTarget::Responses => "responses",
        SweepTarget::Licenses => "licenses",
    };
    let mut r = Report::default();
    r.line(format!(
        "valid {what}: {} / {} ({} scheme)",
        report.valid_count,
        report.space_size,
        locked.scheme().name()
    ));
    for v in &report.valid_examples {
        r.line(format!("  {v}"));
    }
    r.kv("scheme", locked.scheme().name());
    r.kv("target", what);
    r.kv("valid_count", report.valid_count);
    r.kv("space_size", report.space_size);
    if let Some(p) = report.unauthorized_probability() {
        r.line(format!("unauthorized unlock probability = {p}"));
        r.kv("unauthorized_probability", p);
    }
    if target == SweepTarget::Responses
        && matches!(locked.scheme(), Scheme::Proposed(_))
        && report.valid_count != 1
    {
        eprint!("{}", r.render());
        return Err(CliError::Verify(format!(
            "expected exactly one valid response, found {}",
            report.valid_count
        )));
    }
    Ok(r)
}

pub struct VerifyArgs {
    pub original: PathBuf,
    pub locked: PathBuf,
    pub license: Option<BitString>,
    pub response: ResponseSource,
    pub trials: usize,
    pub length: usize,
    pub seed: u64,
}

pub fn verify(a: VerifyArgs) -> Outcome {
    let original = load_fsm(&a.original)?;
    let (d, locked) = load_deliverable(&a.locked)?;
    let license = a.license.unwrap_or(d.license);
    let response = a.response.resolve(locked.response_width(), d.challenge)?;
    let outcome = run_unlock(&locked, &response, &license)?;
    if let UnlockOutcome::Trapped { .. } = outcome {
        return Err(CliError::Verify(outcome.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let iw = original.inputs_width();
    for trial in 0..a.trials {
        let inputs: Vec<BitString> = (0..a.length)
            .map(|_| BitString::from_bits((0..iw).map(|_| rng.random()).collect()))
            .collect();
        if !trace_equivalence(&original, &locked, &response, &license, &inputs)? {
            return Err(CliError::Verify(format!(
                "output trace differs in trial {trial}"
            )));
        }
    }
    let mut r = Report::default();
    r.line(format!("{outcome}"));
    r.line(format!(
        "{} random sequences of {} inputs match the original",
        a.trials, a.length
    ));
    r.kv("unlock", outcome);
    r.kv("trials", a.trials);
    r.kv("mismatches", 0);
    Ok(r)
}

pub struct DemoArgs {
    pub license_len: usize,
    pub device_seed: u64,
    pub wrong_seed: u64,
    pub challenge: u64,
    pub seed: u64,
    pub ip: Option<PathBuf>,
}

const DEFAULT_IP: &str = include_str!("../../../benchmarks/dk16.kiss2");

pub fn protocol_demo(a: DemoArgs) -> Outcome {
    let (ip_id, ip) = match &a.ip {
        Some(path) => (
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "ip".into()),
            load_fsm(path)?,
        ),
        None => (
            "dk16".to_owned(),
            parse_kiss2(DEFAULT_IP).map_err(|e| CliError::Parse(e.to_string()))?,
        ),
    };
    params::optimize(a.license_len)?;
    let (transcript, d) = run_protocol(
        a.device_seed,
        &[a.challenge],
        &ip_id,
        &ip,
        a.license_len,
        a.seed,
    )?;
    let right = activate(&d, &MockPuf::new(a.device_seed), d.challenge)?;
    let wrong_puf = MockPuf::new(a.wrong_seed);
    let wrong = activate(&d, &wrong_puf, d.challenge)?;

    let mut r = Report::default();
    r.text.push_str(&transcript.to_string());
    r.line(format!("authorized device {}: {right}", d.fpga_id));
    r.line(format!("other device {}: {wrong}", wrong_puf.device_id()));
    r.kv("steps", transcript.entries().len());
    r.kv("fpga_id", &d.fpga_id);
    r.kv("authorized", &right);
    r.kv("other", &wrong);
    if !right.is_unlocked() {
        return Err(CliError::Verify(format!("authorized activation {right}")));
    }
    if wrong.is_unlocked() {
        let width = d.license.width();
        let same = wrong_puf.respond(d.challenge, width)?
            == MockPuf::new(a.device_seed).respond(d.challenge, width)?;
        if !same {
            return Err(CliError::Verify("another device unlocked the core".into()));
        }
        r.line("note: the two devices happen to share this response");
    }
    Ok(r)
}

pub fn compare(benchmarks: &[PathBuf], lengths: &[usize], seed: u64) -> Outcome {
    let mut r = Report::default();
    r.line(format!(
        "{:<12} {:>4} {:>10} {:>10} {:>10} {:>10}",
        "benchmark", "L", "prop_st", "prop_tr", "layer_st", "layer_tr"
    ));
    let mut violations = Vec::new();
    let mut totals: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for path in benchmarks {
        let fsm = load_fsm(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for &l in lengths {
            let puf = random_license(mix(seed ^ l as u64), l);
            let license = random_license(seed, l);
            let prop = build_bfsm(&fsm, &puf, &license, mix(seed))?;
            let (lst, ltr) = match default_layered(l) {
                Some(lp) => {
                    let puf = random_license(mix(seed ^ l as u64), lp.response_width());
                    let lay = build_layered(&fsm, &puf, &license, lp)?;
                    (Some(lay.added_states()), Some(lay.added_transitions()))
                }
                None => (None, None),
            };
            let show = |v: Option<usize>| v.map_or("-".to_owned(), |v| v.to_string());
            r.line(format!(
                "{:<12} {:>4} {:>10} {:>10} {:>10} {:>10}",
                name,
                l,
                prop.added_states(),
                prop.added_transitions(),
                show(lst),
                show(ltr)
            ));
            r.kv(&format!("{name}.L{l}.proposed_states"), prop.added_states());
            r.kv(
                &format!("{name}.L{l}.proposed_transitions"),
                prop.added_transitions(),
            );
            if let (Some(s), Some(t)) = (lst, ltr) {
                r.kv(&format!("{name}.L{l}.layered_states"), s);
                r.kv(&format!("{name}.L{l}.layered_transitions"), t);
                totals.insert(l, (prop.added_states(), s));
                if matches!(l, 4 | 6) && prop.added_states() >= s {
                    violations.push(format!("{name} L={l}: {} >= {s}", prop.added_states()));
                }
            }
        }
    }
    for (l, (p, s)) in &totals {
        if matches!(l, 4 | 6) {
            r.line(format!("L={l}: proposed adds {p} states, layered adds {s}"));
        }
    }

    let proposed = params::optimize(128)?.states_added;
    let layered = params::states_added_layered(3, 178)?;
    let ratio = Ratio::new(proposed, layered);
    let quarter = Ratio::new(1u64, 4);
    let holds = ratio <= quarter && Ratio::new(proposed, 365) <= quarter;
    r.line(format!(
        "L=128: proposed {proposed} vs layered (m=3, M=178) {layered}: ratio {ratio} {} 1/4",
        if ratio <= quarter { "<=" } else { ">" }
    ));
    r.kv("quarter_ratio", ratio);
    r.kv("quarter_holds", holds);
    r.kv("fewer_states_L4_L6", violations.is_empty());
    if !violations.is_empty() || !holds {
        eprint!("{}", r.render());
        return Err(CliError::Verify(format!(
            "proposed scheme not smaller: {}",
            violations.join("; ")
        )));
    }
    Ok(r)
}

pub fn hdl(input: &Path, module: &str, output: Option<&Path>) -> Outcome {
    let fsm = load_fsm(input)?;
    let v = emit_hdl(&fsm, module)?;
    let mut r = Report::default();
    match output {
        Some(path) => {
            write_text(path, &v)?;
            r.line(format!("wrote {}", path.display()));
            r.kv("module", module);
            r.kv("states", fsm.num_states());
        }
        None => r.text = v,
    }
    Ok(r)
}
