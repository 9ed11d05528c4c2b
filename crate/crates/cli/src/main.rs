mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{CliError, DemoArgs, LockArgs, ResponseSource, SweepTarget, VerifyArgs};
use fsmlock::simulate::DEFAULT_SWEEP_LIMIT;
use fsmlock::BitString;

/// Lock FSM IP cores to a device with a PUF-keyed dummy machine.
#[derive(Debug, Parser)]
#[command(name = "fsmlock", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal selector width and added-state counts for a license length.
    Params {
        #[arg(short = 'L', long = "license-len")]
        license_len: usize,
        /// Layered baseline, e.g. `m=4,M=6`.
        #[arg(long, value_parser = parse_layered)]
        layered: Option<(usize, usize)>,
    },
    /// Lock a KISS2 machine and write locked.kiss2, license.txt and meta.txt.
    Lock {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short = 'L', long = "license-len")]
        license_len: Option<usize>,
        /// Explicit license bits, MSB first.
        #[arg(long, value_parser = parse_bits)]
        license: Option<BitString>,
        #[command(flatten)]
        response: ResponseArgs,
        #[arg(long, value_enum, default_value_t = SchemeArg::Proposed)]
        scheme: SchemeArg,
        /// Layered parameters, e.g. `m=4,M=6`.
        #[arg(long, value_parser = parse_layered)]
        layered: Option<(usize, usize)>,
        /// Seed for the license and black-hole wiring.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Also write Verilog for the locked machine.
        #[arg(long)]
        hdl: Option<PathBuf>,
    },
    /// Exhaustively count responses (or licenses) that unlock a locked core.
    CountValid {
        /// Directory written by `lock`.
        #[arg(long)]
        locked: PathBuf,
        #[arg(long, value_parser = parse_bits)]
        license: Option<BitString>,
        #[arg(long, value_enum, default_value_t = TargetArg::Responses)]
        target: TargetArg,
        #[command(flatten)]
        response: ResponseArgs,
        /// Largest sweep width in bits.
        #[arg(long, default_value_t = DEFAULT_SWEEP_LIMIT)]
        max_width: usize,
    },
    /// Unlock a core and compare its behavior with the original.
    Verify {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        locked: PathBuf,
        #[arg(long, value_parser = parse_bits)]
        license: Option<BitString>,
        #[command(flatten)]
        response: ResponseArgs,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Inputs per random sequence.
        #[arg(long, default_value_t = 32)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the licensing flow and activate on the right and a wrong device.
    ProtocolDemo {
        #[arg(short = 'L', long = "license-len", default_value_t = 6)]
        license_len: usize,
        #[arg(long, default_value_t = 123)]
        device_seed: u64,
        #[arg(long, default_value_t = 456)]
        wrong_seed: u64,
        #[arg(long, value_parser = parse_u64, default_value = "0xC0FFEE")]
        challenge: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// KISS2 core to license (default: bundled dk16).
        #[arg(long)]
        ip: Option<PathBuf>,
    },
    /// Added states and transitions per benchmark for both schemes.
    Compare {
        #[arg(required = true)]
        benchmarks: Vec<PathBuf>,
        #[arg(short = 'L', long = "license-len", value_delimiter = ',', default_values_t = [4, 6, 128])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit Verilog for a KISS2 machine.
    Hdl {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value = "fsm")]
        module: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ResponseArgs {
    /// Raw PUF response bits, MSB first.
    #[arg(long, value_parser = parse_bits, conflicts_with = "device_seed")]
    response: Option<BitString>,
    /// Seed of the simulated device whose PUF supplies the response.
    #[arg(long)]
    device_seed: Option<u64>,
    #[arg(long, value_parser = parse_u64, requires = "device_seed")]
    challenge: Option<u64>,
}

impl ResponseArgs {
    fn source(&self) -> Option<ResponseSource> {
        match (&self.response, self.device_seed) {
            (Some(bits), _) => Some(ResponseSource::Raw(bits.clone())),
            (None, Some(seed)) => Some(ResponseSource::Device {
                seed,
                challenge: self.challenge,
            }),
            (None, None) => None,
        }
    }

    fn required(&self) -> Result<ResponseSource, CliError> {
        self.source()
            .ok_or_else(|| CliError::Usage("give --response or --device-seed".into()))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Proposed,
    Layered,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Responses,
    Licenses,
}

fn parse_bits(s: &str) -> Result<BitString, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    r.map_err(|e| format!("{s:?}: {e}"))
}

fn parse_layered(s: &str) -> Result<(usize, usize), String> {
    let mut m = None;
    let mut layers = None;
    for part in s.split([',', ' ']).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected m=<branches>,M=<layers>, got {part:?}"))?;
        let v: usize = v.parse().map_err(|e| format!("{part:?}: {e}"))?;
        match k {
            "m" => m = Some(v),
            "M" => layers = Some(v),
            _ => return Err(format!("unknown key {k:?}")),
        }
    }
    match (m, layers) {
        (Some(m), Some(l)) => Ok((m, l)),
        _ => Err("both m and M are required".into()),
    }
}

fn run(cmd: Command) -> commands::Outcome {
    match cmd {
        Command::Params {
            license_len,
            layered,
        } => commands::params(license_len, layered),
        Command::Lock {
            input,
            license_len,
            license,
            response,
            scheme,
            layered,
            seed,
            out,
            hdl,
        } => {
            let layered = match (scheme, layered) {
                (SchemeArg::Proposed, None) => None,
                (SchemeArg::Layered, Some(p)) => Some(p),
                (SchemeArg::Layered, None) => {
                    return Err(CliError::Usage(
                        "--scheme layered needs --layered m=..,M=..".into(),
                    ))
                }
                (SchemeArg::Proposed, Some(_)) => {
                    return Err(CliError::Usage(
                        "--layered requires --scheme layered".into(),
                    ))
                }
            };
            commands::lock(LockArgs {
                input,
                license_len,
                license,
                response: response.required()?,
                layered,
                seed,
                out,
                hdl,
            })
        }
        Command::CountValid {
            locked,
            license,
            target,
            response,
            max_width,
        } => {
            let target = match target {
                TargetArg::Responses => SweepTarget::Responses,
                TargetArg::Licenses => SweepTarget::Licenses,
            };
            commands::count_valid(&locked, license, target, response.source(), max_width)
        }
        Command::Verify {
            original,
            locked,
            license,
            response,
            trials,
            length,
            seed,
        } => commands::verify(VerifyArgs {
            original,
            locked,
            license,
            response: response.required()?,
            trials,
            length,
            seed,
        }),
        Command::ProtocolDemo {
            license_len,
            device_seed,
            wrong_seed,
            challenge,
            seed,
            ip,
        } => commands::protocol_demo(DemoArgs {
            license_len,
            device_seed,
            wrong_seed,
            challenge,
            seed,
            ip,
        }),
        Command::Compare {
            benchmarks,
            lengths,
            seed,
        } => commands::compare(&benchmarks, &lengths, seed),
        Command::Hdl {
            input,
            module,
            output,
        } => commands::hdl(&input, &module, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(report) => {
            print!("{}", report.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
