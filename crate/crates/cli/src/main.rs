use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use sydlm::eval::TreeAlgo;
use sydlm::pipeline::{cmd_eval, cmd_preprocess, cmd_train, read_rules, EvalOptions, TreeChoice};
use sydlm::training::TrainConfig;
use sydlm::treebank::{CorpusMode, PreprocessRules};
use sydlm::{Error, Result};

/// Syntactic-distance language models: preprocess treebanks, train, evaluate.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
/// 3 numeric failure (divergence).
#[derive(Parser, Debug)]
#[command(name = "sydlm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean bracketed treebank files into a corpus file. Also writes
    /// <out>.gold (gold slot distances) and <out>.manifest.json.
    Preprocess {
        /// Bracketed treebank files, read in order.
        #[arg(required = true)]
        treebanks: Vec<PathBuf>,
        /// Output corpus file.
        #[arg(long, short)]
        out: PathBuf,
        /// JSON cleaning rules (lowercase, drop_tags, number_pattern,
        /// number_token, vocab_max_size, mode); missing keys take defaults.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// concat (one stream with eos tokens) or sepsent (one sequence per
        /// sentence). Overrides the rules file.
        #[arg(long)]
        mode: Option<String>,
        /// Reuse the vocabulary of an existing corpus file.
        #[arg(long)]
        vocab_from: Option<PathBuf>,
    },
    /// Train a model; writes model.ckpt, train.jsonl and curve.csv.
    Train {
        /// Training corpus file.
        #[arg(long)]
        corpus: PathBuf,
        /// Validation corpus (defaults to the training corpus).
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Config file of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key; repeatable, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Default seed, used unless the config file or --set gives one.
        #[arg(long, env = "SYDLM_SEED")]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
        /// Print nothing per epoch.
        #[arg(long)]
        quiet: bool,
    },
    /// Perplexity and structure metrics of a checkpoint on a corpus. Writes
    /// the metrics JSON to --out, plot series to <out>.csv and drawings to
    /// <out>.trees.txt.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Tree source: lm, syd, gold, right or left.
        #[arg(long, default_value = "syd")]
        trees: String,
        /// Distance-to-tree algorithm: biased or unbiased.
        #[arg(long, default_value = "unbiased")]
        algo: String,
        /// 1-based layer for lm trees (default: the supervised layer).
        #[arg(long)]
        layer: Option<usize>,
        /// Score structure only on sentences of at most K words.
        #[arg(long = "wsj10-maxlen", value_name = "K")]
        max_len: Option<usize>,
        /// Sentence indices to draw as stacked syd / lm / gold trees.
        #[arg(long, value_delimiter = ',')]
        render: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        batch_size: usize,
        #[arg(long, default_value_t = 70)]
        bptt: usize,
    },
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Preprocess {
            treebanks,
            out,
            rules,
            mode,
            vocab_from,
        } => {
            let mut r = match &rules {
                Some(p) => read_rules(p)?,
                None => PreprocessRules::default(),
            };
            if let Some(m) = mode {
                r.mode = m.parse::<CorpusMode>()?;
            }
            let s = cmd_preprocess(&treebanks, &r, vocab_from.as_deref(), &out, argv)?;
            println!("{}", s);
        }
        Command::Train {
            corpus,
            valid,
            config,
            sets,
            seed,
            out,
            quiet,
        } => {
            let mut cfg = TrainConfig::default();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = &config {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io(e).in_file(p))?;
                cfg.update_from_text(&text).map_err(|e| e.in_file(p))?;
            }
            cfg.apply_overrides(&sets)?;
            let s = cmd_train(&corpus, valid.as_deref(), &cfg, &out, argv, &mut |e| {
                if !quiet {
                    println!(
                        "epoch {:>4}  lr {:<8.4}  lm {:.4}  syd {}  valid ppl {:.3}  rank acc {}",
                        e.epoch,
                        e.lr,
                        e.train_lm,
                        e.train_syd.map(|v| format!("{:.4}", v)).unwrap_or_else(|| "-".into()),
                        e.valid_ppl,
                        e.valid_rank_acc.map(|v| format!("{:.3}", v)).unwrap_or_else(|| "-".into()),
                    );
                }
            })?;
            println!(
                "best epoch {} of {} (valid ppl {:.3})",
                s.best_epoch, s.epochs, s.best_valid_ppl
            );
        }
        Command::Eval {
            checkpoint,
            corpus,
            out,
            trees,
            algo,
            layer,
            max_len,
            render,
            batch_size,
            bptt,
        } => {
            let opts = EvalOptions {
                trees: trees.parse::<TreeChoice>()?,
                algo: algo.parse::<TreeAlgo>()?,
                layer,
                max_len,
                render,
                batch_size,
                bptt,
            };
            let r = cmd_eval(&checkpoint, &corpus, &opts, &out, argv)?;
            let m = &r.metrics;
            println!("perplexity {:.3}", m.perplexity);
            println!(
                "{} sentences  F1 macro {:.2}  micro {:.2}",
                m.structure.sentences, m.structure.f1_macro, m.structure.f1_micro
            );
            print!("{}", r.rendered);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
