mod config;
mod decode;
mod error;
mod gen_data;
mod io;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twopass_core::data::Split;
use twopass_core::latency::Accounting;
use twopass_core::training::HypothesisSource;

use config::RunConfig;
use decode::{DecodeArgs, Mode};
use error::CliResult;
use io::print_json;

#[derive(Parser)]
#[command(name = "twopass", version, about = "Two-pass streaming recognizer: transducer first pass, attention second pass")]
struct Cli {
    /// JSON run configuration; any subset of fields overrides the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed and the TWOPASS_SEED variable.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes the synthetic corpus: splits, vocabulary, contact phrases.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs one stage of the training recipe.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Continue this stage from its own weight file and curve.
        #[arg(long)]
        resume: bool,
    },
    /// Fine-tunes the attention decoder on expected word errors.
    Mwer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, value_parser = parse_source)]
        source: Option<HypothesisSource>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        lambda_mle: Option<f64>,
    },
    /// Decodes a split or utterance file.
    Decode {
        #[arg(long)]
        weights: PathBuf,
        /// Corpus directory; supplies the vocabulary and the split files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Utterance file to decode instead of a split.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "rescore")]
        mode: Mode,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        adaptive_threshold: Option<f64>,
        #[arg(long)]
        rescore_k: Option<usize>,
        #[arg(long)]
        las_beam: Option<usize>,
        /// Phrase file, one phrase per line.
        #[arg(long)]
        biasing: Option<PathBuf>,
        #[arg(long)]
        bias_weight: Option<f64>,
        /// Hypothesis file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        nbest_dump: Option<PathBuf>,
        #[arg(long)]
        lattice_dump: Option<PathBuf>,
        #[arg(long)]
        latency_out: Option<PathBuf>,
        #[arg(long)]
        decoder_bytes: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Word error rate of a hypothesis file.
    Evaluate {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        /// Per-utterance table: id, ref, hyp, S, I, D.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Side-by-side comparison of two hypothesis files.
    Sxs {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Second-pass latency of an N-best dump.
    Latency {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, default_value = "nbest", value_parser = parse_accounting)]
        mode: Accounting,
        /// Fixed hypothesis length; measured lengths when absent.
        #[arg(long)]
        tokens: Option<u64>,
        #[arg(long)]
        decoder_bytes: Option<u64>,
        /// Weight file whose attention-decoder size sets the bytes per step.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        bandwidth: Option<u64>,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown split `{s}`"))
}

fn parse_accounting(s: &str) -> Result<Accounting, String> {
    match s {
        "nbest" => Ok(Accounting::Nbest),
        "lattice" => Ok(Accounting::Lattice),
        _ => Err(format!("unknown accounting `{s}`, expected nbest or lattice")),
    }
}

fn parse_source(s: &str) -> Result<HypothesisSource, String> {
    match s {
        "rnnt" => Ok(HypothesisSource::Rnnt),
        "las" => Ok(HypothesisSource::Las),
        _ => Err(format!("unknown hypothesis source `{s}`, expected rnnt or las")),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), cli.seed)?;
    match cli.cmd {
        Cmd::GenData { out } => print_json(&gen_data::run(&cfg, &out)?),
        Cmd::Train { stage, data, work, epochs, learning_rate, resume } => {
            let args = train::TrainArgs { stage, epochs, learning_rate, resume };
            print_json(&train::train(&cfg, &data, &work, &args)?)
        }
        Cmd::Mwer { data, work, epochs, learning_rate, source, beam, lambda_mle } => {
            let args = train::MwerArgs { epochs, learning_rate, source, beam, lambda_mle };
            print_json(&train::mwer(&cfg, &data, &work, &args)?)
        }
        Cmd::Decode {
            weights,
            data,
            split,
            input,
            mode,
            beam,
            adaptive_threshold,
            rescore_k,
            las_beam,
            biasing,
            bias_weight,
            out,
            nbest_dump,
            lattice_dump,
            latency_out,
            decoder_bytes,
            jobs,
        } => {
            let to_stdout = out.is_none();
            let args = DecodeArgs {
                weights,
                data,
                split,
                input,
                mode,
                beam,
                adaptive_threshold,
                rescore_k,
                las_beam,
                biasing,
                bias_weight,
                out,
                nbest_dump,
                lattice_dump,
                latency_out,
                decoder_bytes,
                jobs,
            };
            let summary = decode::run(&cfg, &args)?;
            // With no output file the hypotheses themselves occupy stdout.
            if to_stdout {
                Ok(())
            } else {
                print_json(&summary)
            }
        }
        Cmd::Evaluate { refs, hyps, tsv } => print_json(&report::evaluate_cmd(&refs, &hyps, tsv.as_deref())?),
        Cmd::Sxs { refs, a, b } => print_json(&report::sxs_cmd(&refs, &a, &b)?),
        Cmd::Latency { dump, mode, tokens, decoder_bytes, weights, bandwidth } => {
            let args = report::LatencyArgs { dump, mode, tokens, decoder_bytes, weights, bandwidth };
            print_json(&report::latency_cmd(&cfg, &args)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("twopass: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
