//! Subcommands for preprocessing, training, generation, evaluation,
//! checkpoint averaging and gradient auditing.

pub mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qg_core::corpus::{
    build_vocabulary, read_pretrained, read_raw_triples, read_triples, write_triples, QuestionType,
    TagSet, Triple, Vocabulary,
};
use qg_core::decode::{generate_all, DecodeConfig};
use qg_core::decoder::FirstTokenMode;
use qg_core::metrics::EvalReport;
use qg_core::model::{Lexicon, ModelParams};
use qg_core::numgrad::gradcheck::AUDIT_STEP;
use qg_core::synth::{gradcheck_fixture, synthetic_corpus};
use qg_core::training::{
    audit_gradients, average_checkpoints, select_nearest, train, Checkpoint, Trainer,
};
use qg_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::RunConfig;

/// Environment variable naming the directory that holds run directories.
pub const RUN_ROOT_ENV: &str = "QG_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "qg",
    version,
    about = "Question-type-driven question generation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set hidden_dim=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            c.apply_override(kv)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tag raw triples, cut long sentences and build the vocabulary from the training split.
    Preprocess {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Output directory for tagged JSONL, vocab.txt, pos.txt and ner.txt.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model into `$QG_RUN_ROOT/<name>`.
    Train {
        /// Directory written by `preprocess`.
        #[arg(long)]
        data: PathBuf,
        /// Run directory name; defaults to the config fingerprint prefix.
        #[arg(long)]
        name: Option<String>,
        /// Continue from a checkpoint written under the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Decode a triple file with a trained checkpoint.
    Generate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// First-token mode; defaults to the run's `decode_mode`.
        #[arg(long)]
        mode: Option<FirstTokenMode>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Defaults to `<run>/generations/<checkpoint>.<mode>.txt`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a hypothesis file against reference triples.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Defaults to the mode recorded next to the hypothesis file.
        #[arg(long)]
        mode: Option<String>,
        /// Defaults to `<hyp>.report.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Elementwise mean of checkpoints, listed or picked around the best dev score.
    AverageCheckpoints {
        #[arg(long)]
        output: PathBuf,
        /// Pick this many checkpoints from `--run` nearest the best dev score.
        #[arg(long)]
        nearest: Option<usize>,
        #[arg(long)]
        run: Option<PathBuf>,
        checkpoints: Vec<PathBuf>,
    },
    /// Finite-difference audit of every parameter gradient on the bundled toy model.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = AUDIT_STEP)]
        step: f64,
    },
    /// Write a template-generated corpus.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

/// A failure class plus a one-line message.
#[derive(Debug)]
pub struct CliError {
    pub class: &'static str,
    pub message: String,
}

impl CliError {
    fn new(class: &'static str, message: impl Into<String>) -> Self {
        CliError {
            class,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            "bad config" => 2,
            "missing file" => 3,
            "bad data" => 4,
            "nan loss" => 5,
            "shape mismatch" => 6,
            "bad checkpoint" => 7,
            "gradient mismatch" => 8,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace('\n', " ");
        write!(f, "error: {}: {msg}", self.class)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let class = match &e {
            Error::Config(_) => "bad config",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "missing file"
            }
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::Validation { .. } => "bad data",
            Error::NonFiniteLoss { .. } => "nan loss",
            Error::Shape { .. } | Error::Param { .. } => "shape mismatch",
            Error::Checkpoint(_) => "bad checkpoint",
            Error::Contract(_) => "contract",
        };
        CliError::new(class, e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    Error::Io {
        path: path.into(),
        source: e,
    }
    .into()
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, data).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
}

/// Keeps the first `max_len` tokens; triples whose answer falls past the cut are dropped.
pub fn cut_sentences(triples: Vec<Triple>, max_len: usize) -> (Vec<Triple>, usize) {
    let mut dropped = 0;
    let kept = triples
        .into_iter()
        .filter_map(|mut t| {
            if t.answer_start + t.answer_len > max_len {
                dropped += 1;
                return None;
            }
            t.sentence.truncate(max_len);
            Some(t)
        })
        .collect();
    (kept, dropped)
}

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const POS_FILE: &str = "pos.txt";
pub const NER_FILE: &str = "ner.txt";
pub const TRAIN_LOG: &str = "train.log";

pub fn load_lexicon(dir: &Path) -> Result<Lexicon, CliError> {
    Ok(Lexicon {
        vocab: Vocabulary::load(dir.join(VOCAB_FILE))?,
        pos: TagSet::load(dir.join(POS_FILE))?,
        ner: TagSet::load(dir.join(NER_FILE))?,
    })
}

fn save_lexicon(lex: &Lexicon, dir: &Path) -> Result<(), CliError> {
    lex.vocab.save(dir.join(VOCAB_FILE))?;
    lex.pos.save(dir.join(POS_FILE))?;
    lex.ner.save(dir.join(NER_FILE))?;
    Ok(())
}

/// Path of the checkpoint saved at `step`.
pub fn checkpoint_path(run: &Path, step: usize) -> PathBuf {
    run.join("checkpoints").join(format!("step-{step:08}.ckpt"))
}

/// Runs one subcommand, writing human-readable progress to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess {
            train,
            dev,
            test,
            out: dir,
            cfg,
        } => preprocess(&train, dev.as_deref(), test.as_deref(), &dir, &cfg, out),
        Command::Train {
            data,
            name,
            resume,
            cfg,
        } => train_cmd(&data, name, resume.as_deref(), &cfg, out),
        Command::Generate {
            run,
            checkpoint,
            input,
            mode,
            beam,
            max_len,
            output,
        } => generate_cmd(&run, &checkpoint, &input, mode, beam, max_len, output, out),
        Command::Evaluate {
            hyp,
            reference,
            mode,
            output,
        } => evaluate_cmd(&hyp, &reference, mode, output, out),
        Command::AverageCheckpoints {
            output,
            nearest,
            run,
            checkpoints,
        } => average_cmd(&output, nearest, run.as_deref(), checkpoints, out),
        Command::Gradcheck { seed, step } => gradcheck_cmd(seed, step, out),
        Command::Synth {
            count,
            seed,
            output,
        } => {
            write_triples(&synthetic_corpus(count, seed), &output)?;
            say(
                out,
                format!("wrote {count} triples to {}", output.display()),
            )
        }
    }
}

fn say(out: &mut dyn std::io::Write, line: impl fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::new("io", e.to_string()))
}

fn preprocess(
    train: &Path,
    dev: Option<&Path>,
    test: Option<&Path>,
    dir: &Path,
    cfg: &ConfigArgs,
    out: &mut dyn std::io::Write,
) -> Result<(), CliError> {
    let c = cfg.resolve()?;
    create_dir(dir)?;
    let mut train_set = Vec::new();
    for (name, path) in [("train", Some(train)), ("dev", dev), ("test", test)] {
        let Some(path) = path else { continue };
        let (triples, dropped) = cut_sentences(read_raw_triples(path)?, c.max_source_len);
        write_triples(&triples, dir.join(format!("{name}.jsonl")))?;
        say(
            out,
            format!("{name}: {} triples, {dropped} dropped", triples.len()),
        )?;
        if name == "train" {
            train_set = triples;
        }
    }
    let lex = Lexicon {
        vocab: build_vocabulary(&train_set, c.vocab_size)?,
        pos: TagSet::pos_of(&train_set),
        ner: TagSet::ner_of(&train_set),
    };
    save_lexicon(&lex, dir)?;
    say(out, format!("vocabulary: {} words", lex.vocab.len()))
}

fn train_cmd(
    data: &Path,
    name: Option<String>,
    resume: Option<&Path>,
    cfg: &ConfigArgs,
    out: &mut dyn std::io::Write,
) -> Result<(), CliError> {
    let mut c = cfg.resolve()?;
    if c.train_path.is_empty() {
        c.train_path = data.join("train.jsonl").display().to_string();
    }
    if c.dev_path.is_empty() && data.join("dev.jsonl").exists() {
        c.dev_path = data.join("dev.jsonl").display().to_string();
    }
    let fingerprint = c.fingerprint();
    let run = run_root().join(name.unwrap_or_else(|| fingerprint[..12].to_string()));
    create_dir(&run.join("checkpoints"))?;
    create_dir(&run.join("generations"))?;
    write_file(&run.join(CONFIG_FILE), c.to_text())?;
    let lex = load_lexicon(data)?;
    save_lexicon(&lex, &run)?;
    let train_set = read_triples(&c.train_path)?;
    let dev = if c.dev_path.is_empty() {
        Vec::new()
    } else {
        read_triples(&c.dev_path)?
    };
    let model = lex.model_config(&c.model());
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load_for_resume(p, &fingerprint)?;
            Trainer::with_params(model, &lex, c.train(), fingerprint, ck.params, ck.step)?
        }
        None => {
            let mut params = ModelParams::init(&model, &mut ChaCha8Rng::seed_from_u64(c.seed))?;
            if !c.pretrained_path.is_empty() {
                let (_, vecs) = read_pretrained(&c.pretrained_path, |w| lex.vocab.id(w).is_some())?;
                let n = params.load_word_vectors(&lex.vocab, &vecs)?;
                say(out, format!("pretrained rows: {n}"))?;
            }
            Trainer::with_params(model, &lex, c.train(), fingerprint, params, 0)?
        }
    };
    say(out, format!("run directory: {}", run.display()))?;
    let log_path = run.join(TRAIN_LOG);
    let mut log_text = String::new();
    let ckpts = train(&mut trainer, &train_set, &dev, &mut |line| {
        log_text.push_str(&format!("{line}\n"));
        let _ = writeln!(out, "{line}");
    })?;
    write_file(&log_path, &log_text)?;
    // Without a dev set there is nothing to rank checkpoints by; keep the last.
    let keep = if dev.is_empty() {
        &ckpts[ckpts.len().saturating_sub(1)..]
    } else {
        &ckpts[..]
    };
    for ck in keep {
        ck.save(checkpoint_path(&run, ck.step))?;
    }
    say(out, format!("saved {} checkpoints", keep.len()))
}

/// Mode and predicted types recorded next to a generation file.
pub fn meta_path(hyp: &Path) -> PathBuf {
    let mut s = hyp.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[allow(clippy::too_many_arguments)]
fn generate_cmd(
    run: &Path,
    checkpoint: &Path,
    input: &Path,
    mode: Option<FirstTokenMode>,
    beam: Option<usize>,
    max_len: Option<usize>,
    output: Option<PathBuf>,
    out: &mut dyn std::io::Write,
) -> Result<(), CliError> {
    let c = RunConfig::load(run.join(CONFIG_FILE))?;
    let lex = load_lexicon(run)?;
    let model = lex.model_config(&c.model());
    let ck = Checkpoint::load(checkpoint)?;
    ck.params.validate(&model)?;
    let dcfg = DecodeConfig {
        mode: mode.unwrap_or(c.decode()),
        beam_size: beam.unwrap_or(c.beam_size),
        max_len: max_len.unwrap_or(c.max_len),
    };
    if dcfg.beam_size == 0 || dcfg.max_len == 0 {
        return Err(CliError::new(
            "bad config",
            "beam and max_len must be positive",
        ));
    }
    let triples = read_triples(input)?;
    let gens = generate_all(&ck.params, &model, &lex, &triples, &dcfg)?;
    let output = output.unwrap_or_else(|| {
        let stem = checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        run.join("generations")
            .join(format!("{stem}.{}.txt", dcfg.mode))
    });
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let text: String = gens.iter().map(|g| g.tokens.join(" ") + "\n").collect();
    write_file(&output, text)?;
    let meta = serde_json::json!({
        "mode": dcfg.mode.name(),
        "beam_size": dcfg.beam_size,
        "max_len": dcfg.max_len,
        "checkpoint_step": ck.step,
        "predicted_types": gens.iter().map(|g| g.predicted.name()).collect::<Vec<_>>(),
    });
    write_file(
        &meta_path(&output),
        serde_json::to_string_pretty(&meta).expect("json") + "\n",
    )?;
    say(
        out,
        format!("wrote {} questions to {}", gens.len(), output.display()),
    )
}

fn read_hypotheses(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

fn evaluate_cmd(
    hyp: &Path,
    reference: &Path,
    mode: Option<String>,
    output: Option<PathBuf>,
    out: &mut dyn std::io::Write,
) -> Result<(), CliError> {
    let hyps = read_hypotheses(hyp)?;
    let refs_t = read_triples(reference)?;
    if hyps.len() != refs_t.len() {
        return Err(CliError::new(
            "bad data",
            format!("{} hypotheses but {} references", hyps.len(), refs_t.len()),
        ));
    }
    let meta: Option<serde_json::Value> = fs::read_to_string(meta_path(hyp))
        .ok()
        .map(|s| {
            serde_json::from_str(&s)
                .map_err(|e| CliError::new("bad data", format!("generation metadata: {e}")))
        })
        .transpose()?;
    let mode = mode.or_else(|| {
        meta.as_ref()
            .and_then(|m| m["mode"].as_str().map(String::from))
    });
    let predicted: Option<Vec<QuestionType>> = meta
        .as_ref()
        .and_then(|m| m["predicted_types"].as_array())
        .map(|a| {
            a.iter()
                .map(|v| {
                    QuestionType::ALL
                        .into_iter()
                        .find(|t| Some(t.name()) == v.as_str())
                        .ok_or_else(|| CliError::new("bad data", "unknown predicted type"))
                })
                .collect::<Result<_, _>>()
        })
        .transpose()?;
    let golds: Vec<QuestionType> = refs_t.iter().map(|t| t.qtype).collect();
    let types = predicted
        .as_deref()
        .filter(|p| p.len() == golds.len())
        .map(|p| (p, golds.as_slice()));
    let refs: Vec<Vec<String>> = refs_t.into_iter().map(|t| t.question).collect();
    let report = EvalReport::compute(&hyps, &refs, types, mode)?;
    let output = output.unwrap_or_else(|| {
        let mut s = hyp.as_os_str().to_owned();
        s.push(".report.json");
        PathBuf::from(s)
    });
    write_file(&output, report.to_json() + "\n")?;
    write!(out, "{}", report.to_table()).map_err(|e| CliError::new("io", e.to_string()))
}

fn average_cmd(
    output: &Path,
    nearest: Option<usize>,
    run: Option<&Path>,
    mut paths: Vec<PathBuf>,
    out: &mut dyn std::io::Write,
) -> Result<(), CliError> {
    if let Some(k) = nearest {
        let run = run.ok_or_else(|| CliError::new("bad config", "--nearest needs --run"))?;
        let dir = run.join("checkpoints");
        let mut found: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        found.sort();
        let cks = found
            .iter()
            .map(Checkpoint::load)
            .collect::<Result<Vec<_>, _>>()?;
        let steps: Vec<(usize, Option<f64>)> = cks.iter().map(|c| (c.step, c.dev_metric)).collect();
        paths = select_nearest(&steps, k)?
            .into_iter()
            .map(|i| found[i].clone())
            .collect();
    }
    if paths.is_empty() {
        return Err(CliError::new("bad config", "no checkpoints to average"));
    }
    let cks = paths
        .iter()
        .map(Checkpoint::load)
        .collect::<Result<Vec<_>, _>>()?;
    let params = average_checkpoints(&cks.iter().map(|c| &c.params).collect::<Vec<_>>())?;
    let first = &cks[0];
    let merged = Checkpoint {
        params,
        step: cks.iter().map(|c| c.step).max().unwrap_or(0),
        dev_metric: None,
        fingerprint: first.fingerprint.clone(),
    };
    merged.save(output)?;
    for p in &paths {
        say(out, format!("averaged {}", p.display()))?;
    }
    say(out, format!("wrote {}", output.display()))
}

fn gradcheck_cmd(seed: u64, step: f64, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::new("bad config", format!("step {step} invalid")));
    }
    let (batch, lex, model) = gradcheck_fixture();
    let params = ModelParams::init(&model, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let audit = audit_gradients(
        &params,
        &batch,
        &lex,
        &model,
        FirstTokenMode::GoldType,
        step,
    )?;
    let (name, idx) = audit.worst.clone().unwrap_or_default();
    say(
        out,
        format!(
            "entries={} max_relative_error={:.3e} worst={name}[{idx}]",
            audit.entries, audit.max_relative_error
        ),
    )?;
    if audit.max_relative_error >= GRADCHECK_TOLERANCE {
        return Err(CliError::new(
            "gradient mismatch",
            format!(
                "max relative error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
                audit.max_relative_error
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use qg_core::corpus::heuristic_tag;

    fn triple(sentence: &str, start: usize, len: usize) -> Triple {
        let w: Vec<&str> = sentence.split_whitespace().collect();
        Triple::new(
            heuristic_tag(&w),
            start,
            len,
            vec!["who".into(), "?".into()],
        )
        .unwrap()
    }

    #[test]
    fn cut_keeps_prefix_and_drops_late_answers() {
        let ts = vec![triple("a b c d e", 0, 2), triple("a b c d e", 3, 1)];
        let (kept, dropped) = cut_sentences(ts, 3);
        assert_eq!(dropped, 1);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].len(), 3);
    }

    #[test]
    fn error_classes_map_to_codes() {
        let e: CliError = Error::NonFiniteLoss { step: 3 }.into();
        assert_eq!((e.class, e.exit_code()), ("nan loss", 5));
        assert_eq!(e.to_string(), "error: nan loss: non-finite loss at step 3");
        let e: CliError = Error::Config("x".into()).into();
        assert_eq!(e.exit_code(), 2);
        let e = io_err(Path::new("/nope"), std::io::ErrorKind::NotFound.into());
        assert_eq!(e.class, "missing file");
    }

    #[test]
    fn meta_path_appends_suffix() {
        assert_eq!(
            meta_path(Path::new("g/x.predicted.txt")),
            PathBuf::from("g/x.predicted.txt.meta.json")
        );
    }
}
