use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iov_bazaar_cli::config::{ExperimentConfig, Overrides};
use iov_bazaar_cli::kpabe_cmd::{self, KeygenArgs, OpenArgs, SealArgs, SetupArgs};
use iov_bazaar_cli::{figures, run, CliError};
use iov_bazaar_kpabe::{Algebra, ShareIndex, Variant};
use iov_bazaar_marl::Mechanism;

#[derive(Parser)]
#[command(name = "iov-bazaar", version, about = "Vehicular data-sharing market experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the learned mechanism or evaluate a fixed rule for one seed.
    Run(RunArgs),
    /// Summarise every run below a directory into per-figure CSV and SVG files.
    Figures { dir: PathBuf },
    /// Time-limited attribute-based content protection.
    Kpabe {
        #[command(subcommand)]
        verb: KpabeVerb,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration; defaults apply to absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// madrl, random, second-price or double-auction.
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: Option<Mechanism>,
    /// Vehicle count, 20 to 80.
    #[arg(long)]
    vehicles: Option<u32>,
    /// Training epochs; ignored by the fixed rules.
    #[arg(long)]
    epochs: Option<u32>,
    /// Episodes of the final evaluation.
    #[arg(long)]
    eval_episodes: Option<u32>,
    /// Run directory name; defaults to `<mechanism>-v<vehicles>-s<seed>`.
    #[arg(long)]
    name: Option<String>,
    /// Parent of the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

fn parse_mechanism(s: &str) -> Result<Mechanism, String> {
    s.parse()
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgebraArg {
    Corrected,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShareIndexArg {
    PerRow,
    FirstRow,
}

#[derive(Subcommand)]
enum KpabeVerb {
    /// Generate public parameters and the master key.
    Setup {
        /// Comma-separated attribute universe.
        #[arg(long)]
        attributes: String,
        #[arg(long, default_value_t = 2020)]
        first_year: u16,
        #[arg(long, default_value_t = 10)]
        years: u16,
        #[arg(long, value_enum, default_value = "corrected")]
        algebra: AlgebraArg,
        #[arg(long, value_enum, default_value = "per-row")]
        share_index: ShareIndexArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving pk.json and mk.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Issue a subscriber key for a policy and a validity range.
    Keygen {
        #[arg(long)]
        pk: PathBuf,
        #[arg(long)]
        mk: PathBuf,
        /// Monotone formula such as "gold AND (hd OR sd)".
        #[arg(long)]
        policy: String,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a file for an attribute set and a publication period.
    Seal {
        #[arg(long)]
        pk: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        attributes: String,
        #[arg(long)]
        from: String,
        /// Last day of the period; defaults to --from.
        #[arg(long)]
        to: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decrypt a sealed file with a subscriber key.
    Open {
        #[arg(long)]
        pk: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the minimal time-tree cover of a date range.
    Cover {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 2020)]
        first_year: u16,
        #[arg(long, default_value_t = 10)]
        years: u16,
    },
    /// Print the attributes and periods of a sealed file.
    Inspect {
        #[arg(long)]
        input: PathBuf,
    },
}

fn run_cmd(a: RunArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(Overrides {
        seed: Some(a.seed),
        mechanism: a.mechanism,
        vehicles: a.vehicles,
        epochs: a.epochs,
        eval_episodes: a.eval_episodes,
        name: a.name,
        output_dir: a.out,
    });
    let quiet = a.quiet;
    let out = run::run(&cfg, |m| {
        if !quiet && (m.epoch == 0 || (m.epoch + 1) % 10 == 0) {
            eprintln!(
                "epoch {:>4}  reward {:>9.4}  latency {:>8.3}  entropy {:.3}",
                m.epoch, m.reward, m.latency, m.entropy
            );
        }
    })?;
    let s = &out.summary;
    println!(
        "{} V={} seed={}: reward {:.4}  social welfare {:.4}  budget {:.4}  latency {:.3} s",
        s.mechanism, s.vehicles, s.seed, s.reward, s.social_welfare, s.budget, s.latency_s
    );
    println!("{}", out.dir.display());
    Ok(())
}

fn kpabe(verb: KpabeVerb) -> Result<(), CliError> {
    match verb {
        KpabeVerb::Setup { attributes, first_year, years, algebra, share_index, seed, out } => {
            let variant = Variant {
                algebra: match algebra {
                    AlgebraArg::Corrected => Algebra::Corrected,
                    AlgebraArg::Literal => Algebra::Literal,
                },
                share_index: match share_index {
                    ShareIndexArg::PerRow => ShareIndex::PerRow,
                    ShareIndexArg::FirstRow => ShareIndex::FirstRow,
                },
            };
            for p in kpabe_cmd::cmd_setup(&SetupArgs { attributes, first_year, years, variant, seed, out })? {
                println!("{}", p.display());
            }
        }
        KpabeVerb::Keygen { pk, mk, policy, from, to, seed, out } => {
            let periods = kpabe_cmd::cmd_keygen(&KeygenArgs { pk, mk, policy, from, to, seed, out })?;
            let nodes: Vec<String> = periods.nodes().iter().map(ToString::to_string).collect();
            println!("periods {}", nodes.join(" "));
        }
        KpabeVerb::Seal { pk, input, attributes, from, to, seed, out } => {
            let entry = kpabe_cmd::cmd_seal(&SealArgs { pk, input, attributes, from, to, seed, out })?;
            println!("{}  {} bytes  {}", entry.hash, entry.size_bytes, entry.name);
        }
        KpabeVerb::Open { pk, key, input, out } => {
            let n = kpabe_cmd::cmd_open(&OpenArgs { pk, key, input, out: out.clone() })?;
            println!("{n} bytes -> {}", out.display());
        }
        KpabeVerb::Cover { from, to, first_year, years } => {
            for node in kpabe_cmd::cmd_cover(first_year, years, &from, &to)?.nodes() {
                println!("{node}");
            }
        }
        KpabeVerb::Inspect { input } => {
            let (attrs, periods) = kpabe_cmd::cmd_inspect(&input)?;
            println!("attributes {}", attrs.into_iter().collect::<Vec<_>>().join(","));
            let nodes: Vec<String> = periods.nodes().iter().map(ToString::to_string).collect();
            println!("periods {}", nodes.join(" "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Figures { dir } => figures::figures(&dir).map(|report| {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} runs summarised", report.runs);
            for p in &report.written {
                println!("{}", p.display());
            }
        }),
        Command::Kpabe { verb } => kpabe(verb),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
