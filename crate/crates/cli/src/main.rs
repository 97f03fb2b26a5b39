use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use refrec_core::train::{self, Pairing, TrainConfig};
use refrec_core::{
    generate_episode, order_referents, write_episode, OrderPolicy, Split, SynthConfig,
};

#[derive(Parser)]
#[command(
    name = "refrec",
    version,
    about = "Referring-expression instance segmentation at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    ByArea,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    Ordered,
    Hungarian,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic episodes into DIR/<index>/.
    GenData {
        /// Index of the first episode within the split's seed range.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Store referents in this order instead of generation order.
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
    },
    /// Train from a JSON config; writes checkpoints and report.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Instance and overall IoU of a checkpoint on every split under DIR.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        pairing: PairingArg,
    },
    /// Write mask_<i>.pgm and prob_<i>.pgm for each phrase.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        phrases: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn gen_data(
    first: u64,
    count: u64,
    side: usize,
    out: &Path,
    split: Split,
    order: Option<OrderArg>,
) -> Result<()> {
    let config = SynthConfig::for_side(side);
    config.validate()?;
    for i in 0..count {
        let index = first.checked_add(i).context("episode index overflows")?;
        let seed = split.seed(index)?;
        let mut ep = generate_episode(seed, &config)?;
        ep = match order {
            Some(OrderArg::ByArea) => order_referents(&ep, OrderPolicy::ByArea),
            Some(OrderArg::Random) => order_referents(&ep, OrderPolicy::Random { seed }),
            None => ep,
        };
        write_episode(&ep, &out.join(format!("{index:06}")))?;
    }
    log::info!(
        "wrote {count} {} episodes to {}",
        split.name(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            seed,
            count,
            side,
            out,
            split,
            order,
        } => gen_data(seed, count, side, &out, split.into(), order),
        Command::Train { config, data, out } => {
            let config = TrainConfig::from_json_file(&config)?;
            let report = train::train(config, &data, &out)?;
            let last = report.evals.last().map(|e| &e.metrics);
            println!("{}", serde_json::to_string_pretty(&last)?);
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            pairing,
        } => {
            let pairing = match pairing {
                PairingArg::Ordered => Pairing::Ordered,
                PairingArg::Hungarian => Pairing::Hungarian,
            };
            let metrics = train::evaluate(&checkpoint, &data, pairing)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
        Command::Predict {
            checkpoint,
            image,
            phrases,
            out,
        } => {
            let files = train::predict(&checkpoint, &image, &phrases, &out)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
