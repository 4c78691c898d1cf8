use chkc::{FuzzOptions, Output};
use chkc_core::compile::Mutations;
use chkc_core::semantics::DEFAULT_FUEL;
use chkc_genprop::{GenConfig, Relaxation};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "chkc", version, about = "Checker, interpreter, compiler and property fuzzer for the checked core calculus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a program and print it in canonical form.
    Parse { file: PathBuf },
    /// Print the type of `main`, or the failing typing rule.
    Typecheck { file: PathBuf },
    /// Run the source semantics.
    Eval {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: usize,
        /// Print every step with its mode and redex.
        #[arg(long)]
        trace: bool,
    },
    /// Compile to the erased target language.
    Compile { file: PathBuf },
    /// Run a target-language program.
    RunCorec {
        file: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        fuel: usize,
    },
    /// Generate programs and check the metatheory on each.
    Fuzz {
        #[arg(long, default_value_t = 20_000)]
        count: usize,
        #[arg(long, default_value_t = 9)]
        depth: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// File of `RULE WEIGHT` lines.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Fraction of terms with an injected `unchecked` region.
        #[arg(long, default_value_t = 0.0)]
        blame_rate: f64,
        /// Drop one typing premise per term and expect rejection.
        #[arg(long, value_enum)]
        relax: Option<Relax>,
        /// Leave out one kind of compiler check, to test the harness.
        #[arg(long, value_enum)]
        disable: Option<Disable>,
    },
    /// Print the program in Checked C surface syntax.
    EmitCheckedc { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Relax {
    Mode,
    Subtype,
    Cast,
    AstrBound,
}

#[derive(Clone, Copy, ValueEnum)]
enum Disable {
    WidenDeref,
    CheckNull,
    StrictWrites,
}

fn read(path: &PathBuf) -> Result<String, Output> {
    std::fs::read_to_string(path).map_err(|e| Output {
        text: format!("error: {}: {e}\n", path.display()),
        status: 1,
    })
}

fn run(command: Command) -> Output {
    let source = |f: &PathBuf| read(f);
    let result = match command {
        Command::Parse { file } => source(&file).map(|s| chkc::parse(&s)),
        Command::Typecheck { file } => source(&file).map(|s| chkc::typecheck(&s)),
        Command::Eval { file, fuel, trace } => source(&file).map(|s| chkc::eval_source(&s, fuel, trace)),
        Command::Compile { file } => source(&file).map(|s| chkc::compile(&s)),
        Command::RunCorec { file, fuel } => source(&file).map(|s| chkc::run_corec(&s, fuel)),
        Command::EmitCheckedc { file } => source(&file).map(|s| chkc::emit(&s)),
        Command::Fuzz {
            count,
            depth,
            seed,
            weights,
            blame_rate,
            relax,
            disable,
        } => {
            let weights = match weights.as_ref().map(read).transpose() {
                Ok(w) => w,
                Err(o) => return o,
            };
            let cfg = GenConfig {
                seed,
                depth,
                count,
                blame_rate,
                relax: relax.map(|r| match r {
                    Relax::Mode => Relaxation::Mode,
                    Relax::Subtype => Relaxation::Subtype,
                    Relax::Cast => Relaxation::Cast,
                    Relax::AstrBound => Relaxation::AstrBound,
                }),
                ..Default::default()
            };
            let mut muts = Mutations::default();
            match disable {
                Some(Disable::WidenDeref) => muts.widen_deref = false,
                Some(Disable::CheckNull) => muts.check_null = false,
                Some(Disable::StrictWrites) => muts.strict_writes = false,
                None => {}
            }
            Ok(chkc::fuzz(cfg, FuzzOptions { weights, muts }))
        }
    };
    result.unwrap_or_else(|o| o)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let out = run(cli.command);
    print!("{}", out.text);
    ExitCode::from(out.status as u8)
}
