//! `hashguard` command-line tool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use hashguard::eval::{EnrollmentMode, VARIANT_DECODER, VARIANT_NND, VARIANT_RAW};
use hashguard::pipeline::{self as pl, PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "hashguard", about = "Deep hashing with neural BCH decoding for protected biometric templates")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set training.stage1.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Stage 1: train the hashing network.
    TrainDh,
    /// Stage 2: derive ground-truth codewords with the BCH decoder.
    GenGt,
    /// Train the neural decoder on ground-truth codewords.
    TrainNnd,
    /// Stage 3: jointly fine-tune the hashing network and decoder.
    Finetune,
    /// Enroll the configured subjects, or one subject.
    Enroll {
        #[arg(long)]
        subject: Option<String>,
        /// Replace existing templates.
        #[arg(long)]
        reenroll: bool,
    },
    /// Authenticate one sample against an enrolled template.
    Auth {
        #[arg(long)]
        subject: String,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Identity claimed by the probe; defaults to `--subject`.
        #[arg(long)]
        claim: Option<String>,
    },
    /// Evaluate enrollment modes and variants.
    Eval,
    /// Run the dictionary attack against the template store.
    Attack,
    /// Exhaustive BCH(15,7) decoding check.
    BchCheck,
    /// Run every stage from synth to attack.
    Run,
    /// Print the resolved configuration.
    Config,
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(pl::version_string().into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Command::BchCheck = cli.command {
        let (patterns, worst, messages) = pl::cmd_bch_check()?;
        println!("{worst}/{patterns} error patterns per message corrected ({messages} messages)");
        return if worst == patterns { Ok(()) } else { Err(PipelineError::Runtime("BCH(15,7) check failed".into())) };
    }
    let cfg = RunConfig::from_file(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Synth => {
            let d = pl::cmd_synth(&cfg)?;
            println!("{} subjects x {} samples", d.subjects.len(), d.spec.samples_per_subject);
        }
        Command::TrainDh => {
            let (_, h) = pl::cmd_train_dh(&cfg)?;
            println!("stage 1 loss {:.4} -> {:.4}", h.initial_loss, h.final_loss());
        }
        Command::GenGt => {
            let gt = pl::cmd_gen_gt(&cfg)?;
            let low = gt.iter().filter(|g| g.low_confidence).count();
            println!("{} ground-truth codewords ({low} low-confidence)", gt.len());
        }
        Command::TrainNnd => {
            pl::cmd_train_nnd(&cfg)?;
            println!("decoder trained");
        }
        Command::Finetune => {
            pl::cmd_finetune(&cfg)?;
            println!("joint model fine-tuned");
        }
        Command::Enroll { subject, reenroll } => {
            let n = pl::cmd_enroll(&cfg, subject.as_deref(), reenroll)?;
            println!("enrolled {n} subject(s)");
        }
        Command::Auth { subject, sample, claim } => {
            let r = pl::cmd_auth(&cfg, &subject, sample, claim.as_deref())?;
            println!("score {:.3} {}", r.score, if r.accept { "ACCEPT" } else { "REJECT" });
        }
        Command::Eval => print_eval(&pl::cmd_eval(&cfg)?),
        Command::Attack => print_attack(&pl::cmd_attack(&cfg)?),
        Command::Run => {
            let out = pl::run_pipeline(&cfg)?;
            println!("stage 1 loss {:.4} -> {:.4}", out.stage1.initial_loss, out.stage1.final_loss());
            print_eval(&out.eval);
            print_attack(&out.attack);
        }
        Command::Config => println!("{}", cfg.to_json()),
        Command::BchCheck => unreachable!("handled above"),
    }
    Ok(())
}

fn print_eval(r: &pl::FullEvalReport) {
    for mode in EnrollmentMode::ALL {
        if let Some(m) = r.mode(mode) {
            println!("{:<11} EER {:.4}  GAR@FAR=0 {:.4}", mode.name(), m.eer, m.zero_far_gar);
        }
    }
    for v in [VARIANT_RAW, VARIANT_DECODER, VARIANT_NND] {
        if let Some(e) = r.variant_eer(v) {
            println!("{v:<11} EER {e:.4}");
        }
    }
}

fn print_attack(a: &hashguard::eval::AttackReport) {
    println!(
        "attack: {} attempts, {} nonzero scores, {} false accepts",
        a.attempts, a.nonzero_scores, a.false_accepts
    );
}
