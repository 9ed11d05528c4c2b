//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::{BTreeSet, VecDeque};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fsmlock::fsm::{parse_kiss2, StateId};
use fsmlock::obfuscate::{build_bfsm, build_layered, random_license, BoostedFsm, LayeredParams};
use fsmlock::params::{optimize, states_added_layered};
use fsmlock::protocol::{activate, run_protocol};
use fsmlock::simulate::{
    count_valid_responses, run_unlock, unlock_probability_layered, unlock_probability_proposed,
    UnlockOutcome, DEFAULT_SWEEP_LIMIT,
};
use fsmlock::{BitString, MockPuf};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn bench_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks")
}

fn bench_text(name: &str) -> String {
    std::fs::read_to_string(bench_dir().join(format!("{name}.kiss2"))).unwrap()
}

const OTHERS: [&str; 5] = ["lion", "shiftreg", "seqdet", "sevenstate", "traffic"];

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    ensure(
        start.elapsed() < limit,
        format!("took {:?}, limit {limit:?}", start.elapsed()),
    )
}

fn bits(s: &str) -> BitString {
    s.parse().unwrap()
}

/// Brute-force response sweep used as an independent count.
fn brute_valid(locked: &BoostedFsm, license: &BitString) -> u64 {
    let w = locked.response_width();
    (0..1u64 << w)
        .filter(|&v| {
            matches!(
                run_unlock(locked, &BitString::from_u64(v, w), license),
                Ok(UnlockOutcome::Unlocked(_))
            )
        })
        .count() as u64
}

fn c1() -> Check {
    for (l, want) in [(4, (2, 4, 3, 7)), (6, (2, 6, 3, 9)), (128, (4, 64, 15, 79))] {
        let p = optimize(l).map_err(|e| e.to_string())?;
        let got = (
            p.selector_width,
            p.normal_states,
            p.black_holes,
            p.states_added,
        );
        ensure(got == want, format!("L={l}: got {got:?}, want {want:?}"))?;
    }
    Ok("L=4 -> SN 7, L=6 -> SN 9, L=128 -> b 4, n 64, h 15, SN 79".into())
}

fn c2() -> Check {
    let a = states_added_layered(4, 4).map_err(|e| e.to_string())?;
    let b = states_added_layered(4, 6).map_err(|e| e.to_string())?;
    let c = states_added_layered(3, 178).map_err(|e| e.to_string())?;
    ensure((a, b) == (10, 15), format!("got {a}, {b}"))?;
    // (178 / 2) * (1 + 3)
    ensure(c == 89 * 4, format!("m=3, M=178 gave {c}"))?;
    Ok(format!(
        "m=4: M=4 -> {a}, M=6 -> {b}; m=3, M=178 -> {c} (365 also quoted)"
    ))
}

fn c3() -> Check {
    let proposed = optimize(128).map_err(|e| e.to_string())?.states_added;
    let layered = states_added_layered(3, 178).map_err(|e| e.to_string())?;
    // Cross-multiplied: p/q <= 1/4  <=>  4p <= q.
    ensure(
        4 * proposed <= layered,
        format!("{proposed}/{layered} > 1/4"),
    )?;
    ensure(4 * proposed <= 365, format!("{proposed}/365 > 1/4"))?;
    Ok(format!(
        "{proposed}/{layered} <= 1/4 and {proposed}/365 <= 1/4"
    ))
}

fn table1_lock(name: &str) -> (BoostedFsm, BitString) {
    let fsm = parse_kiss2(&bench_text(name)).unwrap();
    let license = bits("111011");
    (
        build_bfsm(&fsm, &bits("001011"), &license, 7).unwrap(),
        license,
    )
}

fn c4() -> Check {
    let start = Instant::now();
    let (locked, license) = table1_lock("dk16");
    let r =
        count_valid_responses(&locked, &license, DEFAULT_SWEEP_LIMIT).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(1))?;
    ensure(r.space_size == 64, format!("space {}", r.space_size))?;
    ensure(r.valid_count == 1, format!("valid {}", r.valid_count))?;
    ensure(
        brute_valid(&locked, &license) == 1,
        "brute-force count differs",
    )?;
    ensure(
        r.valid_examples.first().map(ToString::to_string).as_deref() == Some("001011"),
        "valid response is not 001011",
    )?;
    Ok(format!("1 / 64 valid in {:?}", start.elapsed()))
}

fn c5() -> Check {
    let start = Instant::now();
    let fsm = parse_kiss2(&bench_text("dk16")).unwrap();
    let lp = LayeredParams::new(4, 6).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let puf = BitString::from_u64(rng.random_range(0..1 << 12), 12);
    let license = random_license(8, 6);
    let locked = build_layered(&fsm, &puf, &license, lp).map_err(|e| e.to_string())?;
    let r =
        count_valid_responses(&locked, &license, DEFAULT_SWEEP_LIMIT).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(10))?;
    ensure(r.space_size == 4096, format!("space {}", r.space_size))?;
    ensure(r.valid_count == 0x40, format!("valid {}", r.valid_count))?;
    ensure(
        brute_valid(&locked, &license) == 64,
        "brute-force count differs",
    )?;
    let eq6 = unlock_probability_layered(4, 6).map_err(|e| e.to_string())?;
    let want = BigRational::new(BigInt::from(63), BigInt::from(4096));
    ensure(eq6 == want, format!("probability {eq6}"))?;
    let from_sweep = BigRational::new(BigInt::from(r.valid_count - 1), BigInt::from(r.space_size));
    ensure(eq6 == from_sweep, format!("{eq6} != {from_sweep}"))?;
    Ok(format!(
        "64 / 4096 valid, probability 63/4096, in {:?}",
        start.elapsed()
    ))
}

fn c6() -> Check {
    let start = Instant::now();
    ensure(
        unlock_probability_proposed().is_zero(),
        "proposed probability is not 0",
    )?;
    let fsm = parse_kiss2(&bench_text("seqdet")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sweeps = 0;
    for l in [2usize, 4, 6] {
        for _ in 0..100 {
            let puf = BitString::from_u64(rng.random_range(0..1 << l), l);
            let license = BitString::from_u64(rng.random_range(0..1 << l), l);
            let locked =
                build_bfsm(&fsm, &puf, &license, rng.random()).map_err(|e| e.to_string())?;
            let r = count_valid_responses(&locked, &license, DEFAULT_SWEEP_LIMIT)
                .map_err(|e| e.to_string())?;
            ensure(
                r.valid_count == 1,
                format!("L={l} license {license}: {} valid", r.valid_count),
            )?;
            ensure(
                r.valid_examples == vec![puf.clone()],
                format!("L={l}: wrong valid response"),
            )?;
            let p = r.unauthorized_probability().ok_or("no probability")?;
            ensure(p.is_zero(), format!("L={l}: probability {p}"))?;
            sweeps += 1;
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!(
        "{sweeps} sweeps, each exactly one valid response, in {:?}",
        start.elapsed()
    ))
}

fn c7() -> Check {
    let (locked, license) = table1_lock("sevenstate");
    let keys = locked
        .key_sequence(&bits("001011"), &license)
        .map_err(|e| e.to_string())?;
    // MSB-first "001011" / "111011" split into 2-bit chunks from the right.
    let puf_chunks = [0b11u64, 0b10, 0b00];
    let lic_chunks = [0b11u64, 0b10, 0b11];
    let oracle: Vec<u64> = (0..6)
        .map(|i| {
            if i % 2 == 0 {
                puf_chunks[i / 2]
            } else {
                puf_chunks[i / 2] ^ lic_chunks[i / 2]
            }
        })
        .collect();
    ensure(keys == oracle, format!("keys {keys:?}, oracle {oracle:?}"))?;
    ensure(oracle == [3, 0, 2, 0, 0, 3], "oracle drift")?;

    let fsm = locked.fsm();
    let mut path = vec![fsm.name(fsm.reset()).to_owned()];
    let mut s = fsm.reset();
    for &k in &keys {
        s = fsm.step(s, &locked.key_input(k)).0;
        path.push(fsm.name(s).to_owned());
    }
    let want = ["DS0", "DS1", "DS2", "DS3", "DS4", "DS5", "S_0"];
    ensure(path == want, format!("path {path:?}"))?;
    let outcome = run_unlock(&locked, &bits("001011"), &license).map_err(|e| e.to_string())?;
    ensure(outcome == UnlockOutcome::Unlocked(6), format!("{outcome}"))?;
    Ok(path.join(" -> ").to_string())
}

/// Text-level reference simulator: first matching row wins, no match holds
/// the state and drives zeros, `-` outputs read as 0.
struct RefMachine {
    rows: Vec<(String, String, String, String)>,
    reset: String,
    outputs: usize,
}

impl RefMachine {
    fn parse(text: &str) -> Self {
        let mut rows = Vec::new();
        let mut reset = None;
        let mut outputs = 0;
        for line in text.lines() {
            let line = line.split('#').next().unwrap().trim();
            let t: Vec<&str> = line.split_whitespace().collect();
            match t.as_slice() {
                [".r", r] => reset = Some(r.to_string()),
                [".o", o] => outputs = o.parse().unwrap(),
                [d, ..] if d.starts_with('.') => {}
                [i, s, n, o] => {
                    rows.push((i.to_string(), s.to_string(), n.to_string(), o.to_string()))
                }
                _ => {}
            }
        }
        let reset = reset.unwrap_or_else(|| rows[0].1.clone());
        Self {
            rows,
            reset,
            outputs,
        }
    }

    fn step(&self, state: &str, input: &str) -> (String, String) {
        for (i, s, n, o) in &self.rows {
            if s == state
                && i.chars()
                    .zip(input.chars())
                    .all(|(p, c)| p == '-' || p == c)
            {
                return (n.clone(), o.replace('-', "0"));
            }
        }
        (state.to_owned(), "0".repeat(self.outputs))
    }
}

fn c8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut names = vec!["dk16"];
    names.extend(OTHERS);
    let mut total = 0;
    for name in &names {
        let text = bench_text(name);
        let reference = RefMachine::parse(&text);
        let original = parse_kiss2(&text).map_err(|e| e.to_string())?;
        let iw = original.inputs_width();
        let puf = BitString::from_u64(rng.random_range(0..64), 6);
        let license = BitString::from_u64(rng.random_range(0..64), 6);
        let locked =
            build_bfsm(&original, &puf, &license, rng.random()).map_err(|e| e.to_string())?;
        let keys = locked
            .key_sequence(&puf, &license)
            .map_err(|e| e.to_string())?;
        let fsm = locked.fsm();
        let mut unlocked = fsm.reset();
        for &k in &keys {
            unlocked = fsm.step(unlocked, &locked.key_input(k)).0;
        }
        ensure(
            unlocked == locked.original_reset_id(),
            format!("{name}: unlock failed"),
        )?;
        let idle = BitString::zeros(locked.key_width());
        for _ in 0..1000 {
            let len = rng.random_range(1..=40);
            let mut s: StateId = unlocked;
            let mut r = reference.reset.clone();
            for _ in 0..len {
                let input = BitString::from_bits((0..iw).map(|_| rng.random()).collect());
                let (rn, rout) = reference.step(&r, &input.to_string());
                let (ln, lout) = fsm.step(s, &input.concat_low(&idle));
                ensure(
                    lout.to_string() == rout,
                    format!("{name}: output {lout} vs reference {rout} in {r}"),
                )?;
                r = rn;
                s = ln;
            }
            total += 1;
        }
    }
    Ok(format!(
        "{} machines, {total} sequences, identical traces",
        names.len()
    ))
}

/// BFS over the transition list.
fn reach(locked: &BoostedFsm, from: StateId) -> BTreeSet<StateId> {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(s) = queue.pop_front() {
        for t in locked.fsm().transitions().iter().filter(|t| t.src == s) {
            if seen.insert(t.dst) {
                queue.push_back(t.dst);
            }
        }
    }
    seen
}

fn c9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fsms: Vec<_> = OTHERS
        .iter()
        .map(|n| parse_kiss2(&bench_text(n)).unwrap())
        .collect();
    let mut builds = 0;
    let mut holes_checked = 0;
    for round in 0..100 {
        let l = [2usize, 4, 6, 8][round % 4];
        let fsm = &fsms[round % fsms.len()];
        let license = BitString::from_u64(rng.random_range(0..1 << l), l);
        let proposed = build_bfsm(
            fsm,
            &BitString::from_u64(rng.random_range(0..1 << l), l),
            &license,
            rng.random(),
        )
        .map_err(|e| e.to_string())?;
        // Layered: m in 2..=6, one label of ceil(log2 m) bits per layer pair.
        let m = rng.random_range(2..=6usize);
        let k = usize::BITS as usize - (m - 1).leading_zeros() as usize;
        let layers = ((2 * l / k) & !1).max(2);
        let lp = LayeredParams::new(m, layers).map_err(|e| e.to_string())?;
        let w = lp.response_width();
        let puf = BitString::from_bits((0..w).map(|_| rng.random()).collect());
        let lic = BitString::from_bits((0..lp.license_width()).map(|_| rng.random()).collect());
        let layered = build_layered(fsm, &puf, &lic, lp).map_err(|e| e.to_string())?;
        for locked in [&proposed, &layered] {
            let holes: BTreeSet<StateId> = locked
                .black_holes()
                .iter()
                .map(|n| locked.fsm().state_id(n).unwrap())
                .collect();
            for &h in &holes {
                let r = reach(locked, h);
                ensure(
                    r.is_subset(&holes),
                    format!("round {round}: escape from {}", locked.fsm().name(h)),
                )?;
                holes_checked += 1;
            }
            builds += 1;
        }
    }
    Ok(format!(
        "{builds} builds, {holes_checked} black holes closed"
    ))
}

fn c10() -> Check {
    let mut names = vec!["dk16"];
    names.extend(OTHERS);
    let mut lines = Vec::new();
    for name in names {
        let fsm = parse_kiss2(&bench_text(name)).unwrap();
        for l in [4usize, 6] {
            let lic = random_license(1, l);
            let p = build_bfsm(&fsm, &random_license(2, l), &lic, 3).map_err(|e| e.to_string())?;
            let lp = LayeredParams::new(4, l).map_err(|e| e.to_string())?;
            let q = build_layered(&fsm, &random_license(2, lp.response_width()), &lic, lp)
                .map_err(|e| e.to_string())?;
            ensure(
                p.added_states() < q.added_states(),
                format!("{name} L={l}: {} >= {}", p.added_states(), q.added_states()),
            )?;
            lines.push(format!(
                "{name}/L{l}: states {} vs {}, transitions {} vs {}",
                p.added_states(),
                q.added_states(),
                p.added_transitions(),
                q.added_transitions()
            ));
        }
    }
    for l in &lines {
        println!("       {l}");
    }
    Ok("proposed adds fewer states than layered for L = 4, 6 on every benchmark".into())
}

fn c11() -> Check {
    let start = Instant::now();
    let ip = parse_kiss2(&bench_text("dk16")).unwrap();
    let (t1, d1) =
        run_protocol(123, &[0xC0FFEE], "dk16", &ip, 128, 1).map_err(|e| e.to_string())?;
    let (t2, d2) =
        run_protocol(123, &[0xC0FFEE], "dk16", &ip, 128, 1).map_err(|e| e.to_string())?;
    ensure(t1 == t2 && d1 == d2, "runs differ")?;
    ensure(t1.to_string() == t2.to_string(), "transcript text differs")?;
    let steps: Vec<u8> = t1.entries().iter().map(|e| e.step).collect();
    ensure(steps == [1, 2, 3, 4, 5, 6, 7], format!("steps {steps:?}"))?;
    let ok = activate(&d1, &MockPuf::new(123), d1.challenge).map_err(|e| e.to_string())?;
    ensure(ok.is_unlocked(), format!("authorized: {ok}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tried = 0;
    while tried < 100 {
        let seed: u64 = rng.random();
        if seed == 123 {
            continue;
        }
        let o = activate(&d1, &MockPuf::new(seed), d1.challenge).map_err(|e| e.to_string())?;
        ensure(!o.is_unlocked(), format!("device seed {seed} unlocked"))?;
        tried += 1;
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "7 steps, authorized {ok}, 100 other devices trapped, in {:?}",
        start.elapsed()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("optimal parameter rows", c1),
        ("layered baseline counts", c2),
        ("quarter claim at L=128", c3),
        ("single valid response, L=6", c4),
        ("64 valid responses, layered m=4 M=6", c5),
        ("zero unauthorized probability", c6),
        ("six-step unlock path", c7),
        ("behavior preserved after unlock", c8),
        ("black holes are closed", c9),
        ("added states vs layered", c10),
        ("protocol demo", c11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
