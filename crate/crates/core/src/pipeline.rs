//! File-level commands behind the `sydlm` binary: preprocess, train, eval.
//! Every artifact carries a [`RunManifest`].

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::distance::tree_to_distances;
use crate::error::{Error, Result};
use crate::eval::{
    corpus_ranking_accuracy, induce_trees, left_branching, length_filter, perplexity, render_stacked,
    right_branching, stream_distances, decode, DistanceStream, StructureReport, TreeAlgo, DEFAULT_TAGS,
};
use crate::model::{LanguageModel, ModelConfig};
use crate::training::{supervision_targets, train, EpochLog, TrainConfig, TreeSource};
use crate::treebank::{hex_digest, parse_bracketed, preprocess_corpus, Corpus, PreprocessRules, Tree, Vocab};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What produced an artifact. Equal manifests give byte-identical metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub corpus_fingerprint: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &[String], config: impl Serialize, seed: Option<u64>, corpus: &Corpus) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_vec(),
            config: serde_json::to_value(config)?,
            seed,
            corpus_fingerprint: corpus.fingerprint(),
            version: VERSION.to_string(),
        })
    }
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(e).in_file(path)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_at(dir))?;
        }
    }
    fs::write(path, bytes).map_err(io_at(path))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads a bracketed treebank; parse errors name the file and line.
pub fn read_treebank(path: &Path) -> Result<Vec<Tree>> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    parse_bracketed(&text).map_err(|e| match e {
        Error::Parse { offset, message } => {
            // an error at end of input belongs to the last line with content
            let line = text[..offset.min(text.trim_end().len())].matches('\n').count() + 1;
            Error::Parse { offset, message }.in_file(format!("{}:{}", path.display(), line))
        }
        e => e.in_file(path),
    })
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let f = File::open(path).map_err(io_at(path))?;
    Corpus::read_from(BufReader::new(f)).map_err(|e| e.in_file(path))
}

pub fn read_rules(path: &Path) -> Result<PreprocessRules> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("rules: {}", e)).in_file(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub sentences: usize,
    pub tokens: usize,
    pub vocab: usize,
}

impl fmt::Display for PreprocessSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} sentences, {} tokens, vocabulary {}", self.sentences, self.tokens, self.vocab)
    }
}

/// Cleans and indexes treebank files into `out`. With `vocab_from`, the
/// vocabulary of an existing corpus is reused. Also writes `<out>.gold`
/// (gold slot distances, one sentence per line) and `<out>.manifest.json`.
pub fn cmd_preprocess(
    inputs: &[PathBuf],
    rules: &PreprocessRules,
    vocab_from: Option<&Path>,
    out: &Path,
    command: &[String],
) -> Result<PreprocessSummary> {
    if inputs.is_empty() {
        return Err(Error::Config("no treebank files given".into()));
    }
    let mut trees = Vec::new();
    for p in inputs {
        trees.extend(read_treebank(p)?);
    }
    let vocab: Option<Vocab> = match vocab_from {
        Some(p) => Some(read_corpus(p)?.vocab),
        None => None,
    };
    let corpus = preprocess_corpus(&trees, rules, vocab)?;
    let mut buf = Vec::new();
    corpus.write_to(&mut buf)?;
    write_file(out, &buf)?;

    let mut gold = String::new();
    for t in &corpus.gold_trees {
        if let Some(t) = t {
            gold.push_str(&tree_to_distances(t).to_line());
        }
        gold.push('\n');
    }
    write_file(&with_suffix(out, ".gold"), gold.as_bytes())?;
    let manifest = RunManifest::new(command, rules, None, &corpus)?;
    write_file(
        &with_suffix(out, ".manifest.json"),
        (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
    )?;
    Ok(PreprocessSummary {
        sentences: corpus.n_sentences(),
        tokens: corpus.tokens.len(),
        vocab: corpus.vocab.len(),
    })
}

/// JSON header stored in front of every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub manifest: RunManifest,
    pub model: ModelConfig,
    /// SHA-256 of the vocabulary word list.
    pub vocab_fingerprint: String,
    pub best_epoch: usize,
}

pub fn vocab_fingerprint(v: &Vocab) -> String {
    hex_digest(v.words().join("\n").as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid_ppl: f64,
}

/// Trains on `corpus` and writes `model.ckpt` (best validation epoch),
/// `train.jsonl` (manifest line, then one line per epoch) and `curve.csv`
/// into `out_dir`.
pub fn cmd_train(
    corpus: &Path,
    valid: Option<&Path>,
    cfg: &TrainConfig,
    out_dir: &Path,
    command: &[String],
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let train_corpus = read_corpus(corpus)?;
    let valid_corpus = match valid {
        Some(p) => {
            let c = read_corpus(p)?;
            if c.vocab != train_corpus.vocab {
                return Err(Error::Data("validation corpus uses a different vocabulary".into()).in_file(p));
            }
            Some(c)
        }
        None => None,
    };
    fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let manifest = RunManifest::new(command, cfg, Some(cfg.seed), &train_corpus)?;
    let log_path = out_dir.join("train.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_at(&log_path))?);
    writeln!(log, "{}", serde_json::json!({ "manifest": &manifest }))?;

    let model = LanguageModel::new(cfg.model_config(train_corpus.vocab.len()), cfg.seed)?;
    let outcome = train(model, &train_corpus, valid_corpus.as_ref(), cfg, &mut |e| {
        writeln!(log, "{}", serde_json::to_string(e)?)?;
        log.flush()?;
        progress(e);
        Ok(())
    })?;
    drop(log);

    let header = CheckpointHeader {
        manifest,
        model: outcome.model.config().clone(),
        vocab_fingerprint: vocab_fingerprint(&train_corpus.vocab),
        best_epoch: outcome.best_epoch,
    };
    let mut ckpt = Vec::new();
    outcome.model.save(&mut ckpt, &serde_json::to_string(&header)?)?;
    write_file(&out_dir.join("model.ckpt"), &ckpt)?;

    let mut csv = String::from("epoch,lr,train_lm,train_syd,valid_ppl,valid_rank_acc\n");
    for e in &outcome.log {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch,
            e.lr,
            e.train_lm,
            opt(e.train_syd),
            e.valid_ppl,
            opt(e.valid_rank_acc)
        ));
    }
    write_file(&out_dir.join("curve.csv"), csv.as_bytes())?;
    let best_valid_ppl = outcome
        .log
        .iter()
        .find(|e| e.epoch == outcome.best_epoch)
        .map(|e| e.valid_ppl)
        .unwrap_or(f64::NAN);
    Ok(TrainSummary {
        epochs: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_valid_ppl,
    })
}

/// Loads a checkpoint written by [`cmd_train`].
pub fn load_checkpoint(path: &Path) -> Result<(LanguageModel, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    // the header is needed to rebuild the model before the tensors load
    let (_, raw) = ParamStore::read_checkpoint(&bytes[..]).map_err(|e| e.in_file(path))?;
    let header: CheckpointHeader =
        serde_json::from_str(&raw).map_err(|e| Error::Data(format!("checkpoint header: {}", e)).in_file(path))?;
    let (model, _) = LanguageModel::load(header.model.clone(), &bytes[..]).map_err(|e| e.in_file(path))?;
    Ok((model, header))
}

/// Which trees `cmd_eval` scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeChoice {
    Lm,
    Syd,
    /// The gold trees themselves (sanity baseline).
    Gold,
    RightBranching,
    LeftBranching,
}

impl FromStr for TreeChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lm" => TreeChoice::Lm,
            "syd" => TreeChoice::Syd,
            "gold" => TreeChoice::Gold,
            "right" | "right-branching" => TreeChoice::RightBranching,
            "left" | "left-branching" => TreeChoice::LeftBranching,
            _ => return Err(Error::Config(format!("unknown tree choice {:?}", s))),
        })
    }
}

impl fmt::Display for TreeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeChoice::Lm => "lm",
            TreeChoice::Syd => "syd",
            TreeChoice::Gold => "gold",
            TreeChoice::RightBranching => "right-branching",
            TreeChoice::LeftBranching => "left-branching",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub trees: TreeChoice,
    pub algo: TreeAlgo,
    /// 1-based layer for `lm` trees; the supervised layer when absent.
    pub layer: Option<usize>,
    /// Structure metrics only over sentences of at most this many words.
    pub max_len: Option<usize>,
    /// Sentence indices (into the length-filtered set) to draw.
    pub render: Vec<usize>,
    pub batch_size: usize,
    pub bptt: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            trees: TreeChoice::Syd,
            algo: TreeAlgo::Unbiased,
            layer: None,
            max_len: None,
            render: Vec::new(),
            batch_size: 10,
            bptt: 70,
        }
    }
}

/// Contents of the metrics JSON. Holds no timing so reruns compare equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub manifest: RunManifest,
    pub checkpoint: RunManifest,
    pub perplexity: f64,
    pub trees: TreeChoice,
    pub algo: TreeAlgo,
    pub layer: Option<usize>,
    pub max_len: Option<usize>,
    /// Gold-pair ranking accuracy of the chosen stream, per sentence.
    pub rank_accuracy: Option<f64>,
    pub structure: StructureReport,
}

pub struct EvalOutput {
    pub metrics: EvalMetrics,
    /// Stacked syd / lm / gold drawings of the requested sentences.
    pub rendered: String,
}

/// Evaluates a checkpoint on a corpus. Writes the metrics JSON to `out`,
/// the height/tag series to `<out>.csv` and the drawings to `<out>.trees.txt`
/// when any sentence was requested.
pub fn cmd_eval(
    checkpoint: &Path,
    corpus_path: &Path,
    opts: &EvalOptions,
    out: &Path,
    command: &[String],
) -> Result<EvalOutput> {
    let (model, header) = load_checkpoint(checkpoint)?;
    let corpus = read_corpus(corpus_path)?;
    if vocab_fingerprint(&corpus.vocab) != header.vocab_fingerprint {
        return Err(Error::Data("corpus vocabulary differs from the checkpoint's".into()).in_file(corpus_path));
    }
    let ppl = perplexity(&model, &corpus, opts.batch_size, opts.bptt)?;

    let labeled = corpus.filter_sentences(|i, _| corpus.labeled_trees[i].is_some());
    let scored = match opts.max_len {
        Some(k) => length_filter(&labeled, k)?,
        None => labeled,
    };
    let gold: Vec<Tree> = scored.labeled_trees.iter().flatten().cloned().collect();
    let layer = opts.layer.unwrap_or(model.config().supervision_layer.clamp(1, model.config().n_layers));
    let lm_stream = DistanceStream::Lm(layer);
    let stream = match opts.trees {
        TreeChoice::Lm => Some(lm_stream),
        TreeChoice::Syd => {
            if !model.config().has_syd() {
                return Err(Error::Config("the checkpoint has no syd distance stream".into()));
            }
            Some(DistanceStream::Syd)
        }
        _ => None,
    };
    let pred: Vec<Tree> = match opts.trees {
        TreeChoice::Gold => gold.clone(),
        TreeChoice::RightBranching => (0..scored.n_sentences())
            .map(|i| right_branching(&scored.sentence_words(i)).to_tree())
            .collect(),
        TreeChoice::LeftBranching => (0..scored.n_sentences())
            .map(|i| left_branching(&scored.sentence_words(i)).to_tree())
            .collect(),
        TreeChoice::Lm | TreeChoice::Syd => induce_trees(&model, &scored, stream.unwrap(), opts.algo)?
            .iter()
            .map(|t| t.to_tree())
            .collect(),
    };
    let structure = StructureReport::compute(&pred, &gold, &DEFAULT_TAGS)?;
    let rank_accuracy = match stream {
        Some(s) => corpus_ranking_accuracy(&model, &scored, &supervision_targets(&scored, TreeSource::Gold, 0), s)?,
        None => None,
    };

    let mut rendered = String::new();
    for &i in &opts.render {
        if i >= scored.n_sentences() {
            return Err(Error::Config(format!(
                "render index {} outside the {} evaluated sentences",
                i,
                scored.n_sentences()
            )));
        }
        let words = scored.sentence_words(i);
        let ids = scored.sentence(i);
        let syd = match stream_distances(&model, ids, DistanceStream::Syd)? {
            Some(d) => Some(decode(&d, &words, opts.algo)?.to_tree()),
            None => None,
        };
        let lm_d = stream_distances(&model, ids, lm_stream)?.unwrap_or_default();
        let lm = decode(&lm_d, &words, opts.algo)?.to_tree();
        let mut panels: Vec<(&str, &Tree)> = Vec::new();
        if let Some(t) = &syd {
            panels.push(("syd", t));
        }
        panels.push(("lm", &lm));
        panels.push(("gold", &gold[i]));
        rendered.push_str(&format!("sentence {}\n", i));
        rendered.push_str(&render_stacked(&panels));
        rendered.push('\n');
    }

    let metrics = EvalMetrics {
        manifest: RunManifest::new(command, opts, None, &corpus)?,
        checkpoint: header.manifest,
        perplexity: ppl,
        trees: opts.trees,
        algo: opts.algo,
        layer: (opts.trees == TreeChoice::Lm).then_some(layer),
        max_len: opts.max_len,
        rank_accuracy,
        structure,
    };
    write_file(out, (serde_json::to_string_pretty(&metrics)? + "\n").as_bytes())?;
    write_file(&with_suffix(out, ".csv"), metrics.structure.to_csv(&opts.trees.to_string()).as_bytes())?;
    if !rendered.is_empty() {
        write_file(&with_suffix(out, ".trees.txt"), rendered.as_bytes())?;
    }
    Ok(EvalOutput { metrics, rendered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_treebank, GrammarConfig};

    fn write_treebank(dir: &Path, tokens: usize, seed: u64) -> PathBuf {
        let trees = generate_treebank(&GrammarConfig::default(), tokens, seed);
        let text: String = trees.iter().map(|t| t.render() + "\n").collect();
        let p = dir.join("tb.mrg");
        fs::write(&p, text).unwrap();
        p
    }

    fn small_cfg() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.apply_overrides(&[
            "embed_size=8",
            "hidden_size=8",
            "layers=2",
            "supervision_layer=2",
            "bptt=10",
            "batch_size=2",
            "epochs=2",
            "lr=1",
        ])
        .unwrap();
        c
    }

    #[test]
    fn parse_errors_name_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.mrg");
        fs::write(&p, "(S (X a))\n(S (X b)\n").unwrap();
        let e = read_treebank(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("bad.mrg:2"), "{}", e);
    }

    #[test]
    fn preprocess_is_deterministic_and_reports_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tb.mrg");
        fs::write(&p, "(S (NP (DT the) (NN cat)) (VP (VBD sat)))\n(S (NP (PRP it)) (VP (VBD ran)))\n(S (X a) (X b) (X c))\n").unwrap();
        let out = dir.path().join("c.corpus");
        let s = cmd_preprocess(&[p.clone()], &PreprocessRules::default(), None, &out, &[]).unwrap();
        assert_eq!(s, PreprocessSummary { sentences: 3, tokens: 11, vocab: 10 });
        let first = fs::read(&out).unwrap();
        cmd_preprocess(&[p], &PreprocessRules::default(), None, &out, &[]).unwrap();
        assert_eq!(first, fs::read(&out).unwrap());
        let gold = fs::read_to_string(with_suffix(&out, ".gold")).unwrap();
        assert_eq!(gold.lines().count(), 3);
    }

    #[test]
    fn vocab_truncation_maps_rare_words_to_unk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tb.mrg");
        // "a" x3, "b" x2, "c" x1: with room for two words "c" is cut
        fs::write(&p, "(S (X a) (X b) (X c))\n(S (X a) (X b))\n(S (X a))\n").unwrap();
        let out = dir.path().join("c.corpus");
        let rules = PreprocessRules {
            vocab_max_size: 4,
            ..Default::default()
        };
        cmd_preprocess(&[p], &rules, None, &out, &[]).unwrap();
        let c = read_corpus(&out).unwrap();
        assert_eq!(c.sentence(0)[2], c.vocab.unk_id());
        assert_ne!(c.sentence(0)[1], c.vocab.unk_id());
    }

    #[test]
    fn train_then_eval_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tb = write_treebank(dir.path(), 150, 1);
        let corpus = dir.path().join("c.corpus");
        cmd_preprocess(&[tb], &PreprocessRules::default(), None, &corpus, &[]).unwrap();
        let run = dir.path().join("run");
        let mut seen = 0;
        let s = cmd_train(&corpus, None, &small_cfg(), &run, &[], &mut |_| seen += 1).unwrap();
        assert_eq!((s.epochs, seen), (2, 2));
        let log = fs::read_to_string(run.join("train.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 3);
        assert!(log.lines().next().unwrap().contains("manifest"));

        let out = dir.path().join("metrics.json");
        let opts = EvalOptions {
            render: vec![0],
            ..Default::default()
        };
        let r = cmd_eval(&run.join("model.ckpt"), &corpus, &opts, &out, &[]).unwrap();
        assert!(r.metrics.perplexity.is_finite());
        assert!(r.rendered.contains("[syd]") && r.rendered.contains("[gold]"));
        assert!(with_suffix(&out, ".csv").exists());

        let gold = EvalOptions {
            trees: TreeChoice::Gold,
            ..Default::default()
        };
        let g = cmd_eval(&run.join("model.ckpt"), &corpus, &gold, &out, &[]).unwrap();
        assert_eq!(g.metrics.structure.f1_macro, 100.0);
        assert!(g.metrics.structure.per_tag.iter().all(|t| t.accuracy == Some(100.0)));
    }

    #[test]
    fn eval_rejects_foreign_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let tb = write_treebank(dir.path(), 100, 1);
        let corpus = dir.path().join("c.corpus");
        cmd_preprocess(&[tb], &PreprocessRules::default(), None, &corpus, &[]).unwrap();
        let run = dir.path().join("run");
        cmd_train(&corpus, None, &small_cfg(), &run, &[], &mut |_| {}).unwrap();
        let other = dir.path().join("o.mrg");
        fs::write(&other, "(S (X zz) (X yy))\n").unwrap();
        let oc = dir.path().join("o.corpus");
        cmd_preprocess(&[other], &PreprocessRules::default(), None, &oc, &[]).unwrap();
        let e = cmd_eval(&run.join("model.ckpt"), &oc, &EvalOptions::default(), &dir.path().join("m.json"), &[])
            .err()
            .unwrap();
        assert_eq!(e.exit_code(), 2);
    }
}
