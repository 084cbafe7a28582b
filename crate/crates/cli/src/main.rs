use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use devcert::suite::Sizes;
use devcert_cli::{exit_code, run, Invocation, Verb};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VerbArg {
    /// Certify the device (or characterize it with --adaptive).
    Certify,
    /// Verify the composed bound for the configured instances.
    Verify,
    /// Run the randomized verification suite.
    Suite,
    /// Audit the epsilon of the configured instance channels.
    Audit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SizesArg {
    Tiny,
    Default,
    Large,
}

#[derive(Debug, Parser)]
#[command(name = "devcert", version, about = "Device certification and composed-bound verification")]
struct Args {
    #[arg(value_enum)]
    verb: VerbArg,
    /// Scenario config (TOML with schema_version and seed).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Use the characterization flow and the protocol table.
    #[arg(long)]
    adaptive: bool,
    #[arg(long, value_name = "DIR", default_value = "devcert-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    sizes: SizesArg,
    /// Instance index for `audit`.
    #[arg(long, value_name = "J")]
    instance: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let inv = Invocation {
        verb: match args.verb {
            VerbArg::Certify => Verb::Certify,
            VerbArg::Verify => Verb::Verify,
            VerbArg::Suite => Verb::Suite,
            VerbArg::Audit => Verb::Audit,
        },
        config: args.config,
        seed: args.seed,
        adaptive: args.adaptive,
        out: args.out,
        sizes: match args.sizes {
            SizesArg::Tiny => Sizes::Tiny,
            SizesArg::Default => Sizes::Default,
            SizesArg::Large => Sizes::Large,
        },
        instance: args.instance,
    };
    let result = run(&inv);
    match &result {
        Ok(o) => {
            for line in &o.summary {
                println!("{line}");
            }
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            if let Some(e) = &o.failure {
                eprintln!("devcert: {e}");
            }
        }
        Err(e) => eprintln!("devcert: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
