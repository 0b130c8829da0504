//! Joint objective, optimizer, training loop, checkpoints and averaging.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{label_question_type, Triple};
use crate::decode::{generate_all, DecodeConfig};
use crate::decoder::{
    first_input_token, prepare, sequence_nll, target_sequence, teacher_force, FirstTokenMode,
};
use crate::error::{Error, Result};
use crate::metrics::{bqwa, corpus_bleu_n};
use crate::model::{Lexicon, ModelConfig, ModelParams, Session};
use crate::numgrad::gradcheck::relative_error;
use crate::numgrad::{Tensor, Var};
use crate::typepred::{argmax, type_loss};

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub nll: Var,
    pub type_loss: Var,
}

/// `sequence NLL + type loss` for one triple under teacher forcing.
pub fn example_loss(
    s: &mut Session,
    triple: &Triple,
    lex: &Lexicon,
    config: &ModelConfig,
    first_mode: FirstTokenMode,
) -> Result<LossParts> {
    let prep = prepare(s, triple, lex, config)?;
    let first = first_input_token(
        prep.prediction.predicted,
        first_mode,
        Some(&triple.question),
        &prep.memory.source,
        &lex.vocab,
    )?;
    let targets = target_sequence(&triple.question, first, &prep.memory.source, &lex.vocab);
    let outs = teacher_force(s, &prep.memory, prep.init, first.id, &targets)?;
    let nll = sequence_nll(s, &outs, &targets)?;
    let tl = type_loss(s, &prep.prediction, triple.qtype)?;
    let total = s.graph.add(nll, tl)?;
    Ok(LossParts {
        total,
        nll,
        type_loss: tl,
    })
}

/// Batch mean of [`example_loss`] in a single graph.
pub fn total_loss(
    s: &mut Session,
    batch: &[Triple],
    lex: &Lexicon,
    config: &ModelConfig,
    first_mode: FirstTokenMode,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let parts = batch
        .iter()
        .map(|t| example_loss(s, t, lex, config, first_mode).map(|p| p.total))
        .collect::<Result<Vec<_>>>()?;
    let all = s.graph.concat(&parts)?;
    Ok(s.graph.mean(all))
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub nll: f64,
    pub type_loss: f64,
    pub grads: BTreeMap<String, Tensor>,
}

/// Gradient of the batch-mean loss; examples run in parallel and are summed in index order.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[Triple],
    lex: &Lexicon,
    config: &ModelConfig,
    first_mode: FirstTokenMode,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let per_example = batch
        .par_iter()
        .map(|t| {
            let mut s = Session::new(params);
            let parts = example_loss(&mut s, t, lex, config, first_mode)?;
            s.graph.backward(parts.total)?;
            Ok((
                s.value(parts.total).item(),
                s.value(parts.nll).item(),
                s.value(parts.type_loss).item(),
                s.param_grads(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    let mut out = BatchGradient {
        loss: 0.0,
        nll: 0.0,
        type_loss: 0.0,
        grads: BTreeMap::new(),
    };
    for (loss, nll, tl, grads) in per_example {
        out.loss += loss;
        out.nll += nll;
        out.type_loss += tl;
        for (name, g) in grads {
            match out.grads.get_mut(&name) {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => {
                    out.grads.insert(name, g);
                }
            }
        }
    }
    out.loss /= n;
    out.nll /= n;
    out.type_loss /= n;
    for g in out.grads.values_mut() {
        g.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    t: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update; parameters without a gradient entry are left alone.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.t += 1;
        let (bc1, bc2) = (1.0 - ADAM_BETA1.powi(self.t), 1.0 - ADAM_BETA2.powi(self.t));
        for (name, g) in grads {
            let p = params.get_mut(name).ok_or_else(|| Error::Param {
                name: name.clone(),
                message: "gradient for unknown tensor".into(),
            })?;
            if p.shape() != g.shape() {
                return Err(Error::Param {
                    name: name.clone(),
                    message: format!("gradient shape {:?} vs {:?}", g.shape(), p.shape()),
                });
            }
            let apply = |x: &mut f64, delta: f64| {
                if delta != 0.0 {
                    *x -= delta;
                }
            };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                        apply(x, self.lr * gi);
                    }
                }
                OptimizerKind::Adam => {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v)
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                        let update = (*mi / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS);
                        apply(x, self.lr * update);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Steps between dev evaluations; 0 evaluates at the end of every epoch.
    pub eval_every: usize,
    /// Step-1 decoder input during teacher forcing.
    pub first_token: FirstTokenMode,
    pub eval_decode: DecodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            seed: 1,
            eval_every: 0,
            first_token: FirstTokenMode::GoldType,
            eval_decode: DecodeConfig {
                beam_size: 1,
                ..DecodeConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} invalid",
                self.learning_rate
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip_norm {} must be positive",
                self.clip_norm
            )));
        }
        if self.eval_decode.beam_size == 0 || self.eval_decode.max_len == 0 {
            return Err(Error::Config(
                "beam_size and max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub nll: f64,
    pub type_loss: f64,
    pub grad_norm: f64,
}

/// Mutable training state: parameters, optimizer moments and the shuffling stream.
pub struct Trainer<'a> {
    pub model: ModelConfig,
    pub lex: &'a Lexicon,
    pub config: TrainConfig,
    pub fingerprint: String,
    params: ModelParams,
    opt: Optimizer,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// Parameters drawn from `config.seed`.
    pub fn new(
        model: ModelConfig,
        lex: &'a Lexicon,
        config: TrainConfig,
        fingerprint: String,
    ) -> Result<Self> {
        let params = ModelParams::init(&model, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
        Self::with_params(model, lex, config, fingerprint, params, 0)
    }

    /// Starts from given parameters at `step`; optimizer moments start at zero.
    pub fn with_params(
        model: ModelConfig,
        lex: &'a Lexicon,
        config: TrainConfig,
        fingerprint: String,
        params: ModelParams,
        step: usize,
    ) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        params.validate(&model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            opt: Optimizer::new(config.optimizer, config.learning_rate),
            model,
            lex,
            config,
            fingerprint,
            params,
            rng,
            step,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn train_batch(&mut self, batch: &[Triple]) -> Result<StepStats> {
        self.step += 1;
        let mut g = batch_gradient(
            &self.params,
            batch,
            self.lex,
            &self.model,
            self.config.first_token,
        )?;
        let finite = g.loss.is_finite() && g.grads.values().all(Tensor::is_finite);
        if !finite {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        let grad_norm = clip_gradients(&mut g.grads, self.config.clip_norm);
        self.opt.step(&mut self.params, &g.grads)?;
        Ok(StepStats {
            step: self.step,
            loss: g.loss,
            nll: g.nll,
            type_loss: g.type_loss,
            grad_norm,
        })
    }

    /// Shuffled mini-batches of indices for one epoch.
    pub fn epoch_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Runs one epoch, calling `after_step` after every update.
    pub fn run_epoch(
        &mut self,
        data: &[Triple],
        after_step: &mut dyn FnMut(&mut Self, StepStats) -> Result<()>,
    ) -> Result<()> {
        for idx in self.epoch_batches(data.len()) {
            let batch: Vec<Triple> = idx.iter().map(|&i| data[i].clone()).collect();
            let stats = self.train_batch(&batch)?;
            after_step(self, stats)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self, dev_metric: Option<f64>) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            step: self.step,
            dev_metric,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevScores {
    pub bleu4: f64,
    pub bqwa: f64,
}

pub fn evaluate_dev(
    params: &ModelParams,
    model: &ModelConfig,
    lex: &Lexicon,
    dev: &[Triple],
    dcfg: &DecodeConfig,
) -> Result<DevScores> {
    let gens = generate_all(params, model, lex, dev, dcfg)?;
    let hyps: Vec<Vec<String>> = gens.into_iter().map(|g| g.tokens).collect();
    let refs: Vec<&[String]> = dev.iter().map(|t| t.question.as_slice()).collect();
    let refs: Vec<Vec<&str>> = refs
        .iter()
        .map(|r| r.iter().map(String::as_str).collect())
        .collect();
    Ok(DevScores {
        bleu4: corpus_bleu_n(&hyps, &refs, 4)?,
        bqwa: bqwa(&hyps, &refs)?.ratio,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalLog {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub type_loss: f64,
    pub dev: Option<DevScores>,
}

impl fmt::Display for IntervalLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} epoch={} train_loss={:.6} type_loss={:.6}",
            self.step, self.epoch, self.train_loss, self.type_loss
        )?;
        match self.dev {
            Some(d) => write!(f, " dev_bleu4={:.4} dev_bqwa={:.4}", d.bleu4, d.bqwa),
            None => write!(f, " dev_bleu4=- dev_bqwa=-"),
        }
    }
}

/// Full training run; a checkpoint is taken at every evaluation point and after the last step.
pub fn train(
    trainer: &mut Trainer,
    train_set: &[Triple],
    dev: &[Triple],
    log: &mut dyn FnMut(&IntervalLog),
) -> Result<Vec<Checkpoint>> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut ckpts = Vec::new();
    let (mut loss_sum, mut type_sum, mut count) = (0.0, 0.0, 0usize);
    let mut emit = |tr: &Trainer,
                    epoch: usize,
                    loss_sum: f64,
                    type_sum: f64,
                    count: usize|
     -> Result<Checkpoint> {
        let dev_scores = if dev.is_empty() {
            None
        } else {
            Some(evaluate_dev(
                tr.params(),
                &tr.model,
                tr.lex,
                dev,
                &tr.config.eval_decode,
            )?)
        };
        let n = count.max(1) as f64;
        log(&IntervalLog {
            step: tr.step(),
            epoch,
            train_loss: loss_sum / n,
            type_loss: type_sum / n,
            dev: dev_scores,
        });
        Ok(tr.checkpoint(dev_scores.map(|d| d.bleu4)))
    };
    let every = trainer.config.eval_every;
    for epoch in 1..=trainer.config.epochs {
        for idx in trainer.epoch_batches(train_set.len()) {
            let batch: Vec<Triple> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let st = trainer.train_batch(&batch)?;
            loss_sum += st.loss;
            type_sum += st.type_loss;
            count += 1;
            if every > 0 && st.step % every == 0 {
                ckpts.push(emit(trainer, epoch, loss_sum, type_sum, count)?);
                (loss_sum, type_sum, count) = (0.0, 0.0, 0);
            }
        }
        let last_epoch = epoch == trainer.config.epochs;
        if count > 0 && (every == 0 || last_epoch) {
            ckpts.push(emit(trainer, epoch, loss_sum, type_sum, count)?);
            (loss_sum, type_sum, count) = (0.0, 0.0, 0);
        }
    }
    Ok(ckpts)
}

/// Worst analytic-versus-numeric disagreement over every parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAudit {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

/// Compares the gradient of [`total_loss`] with central differences of step `step` for every entry.
pub fn audit_gradients(
    params: &ModelParams,
    batch: &[Triple],
    lex: &Lexicon,
    config: &ModelConfig,
    first_mode: FirstTokenMode,
    step: f64,
) -> Result<GradientAudit> {
    let loss_at = |p: &ModelParams| -> Result<f64> {
        let mut s = Session::new(p);
        let l = total_loss(&mut s, batch, lex, config, first_mode)?;
        Ok(s.value(l).item())
    };
    let mut s = Session::new(params);
    let l = total_loss(&mut s, batch, lex, config, first_mode)?;
    s.graph.backward(l)?;
    let analytic = s.param_grads();
    let mut audit = GradientAudit {
        max_relative_error: 0.0,
        worst: None,
        entries: 0,
    };
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        let zeros = Tensor::zeros(t.shape());
        let a = analytic.get(name).unwrap_or(&zeros);
        for i in 0..t.len() {
            let x = t.data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = x + step;
            let hi = loss_at(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = x - step;
            let lo = loss_at(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = x;
            let err = relative_error(a.data()[i], (hi - lo) / (2.0 * step));
            audit.entries += 1;
            if err > audit.max_relative_error || audit.worst.is_none() {
                audit.max_relative_error = err;
                audit.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(audit)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TeacherForcedStats {
    pub token_correct: usize,
    pub token_total: usize,
    pub type_correct: usize,
    pub examples: usize,
}

impl TeacherForcedStats {
    pub fn token_accuracy(&self) -> f64 {
        self.token_correct as f64 / self.token_total.max(1) as f64
    }

    pub fn type_accuracy(&self) -> f64 {
        self.type_correct as f64 / self.examples.max(1) as f64
    }
}

/// Next-token argmax accuracy under teacher forcing, plus type-prediction accuracy.
pub fn teacher_forced_accuracy(
    params: &ModelParams,
    model: &ModelConfig,
    lex: &Lexicon,
    triples: &[Triple],
    first_mode: FirstTokenMode,
) -> Result<TeacherForcedStats> {
    let per = triples
        .par_iter()
        .map(|t| {
            let mut s = Session::new(params);
            let prep = prepare(&mut s, t, lex, model)?;
            let first = first_input_token(
                prep.prediction.predicted,
                first_mode,
                Some(&t.question),
                &prep.memory.source,
                &lex.vocab,
            )?;
            let targets = target_sequence(&t.question, first, &prep.memory.source, &lex.vocab);
            let outs = teacher_force(&mut s, &prep.memory, prep.init, first.id, &targets)?;
            let hits = outs
                .iter()
                .zip(&targets)
                .filter(|(o, &w)| argmax(s.value(o.p_final).data()) == w)
                .count();
            let gold = label_question_type(&t.question)?;
            Ok((
                hits,
                targets.len(),
                usize::from(prep.prediction.predicted == gold),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per
        .into_iter()
        .fold(TeacherForcedStats::default(), |acc, (h, n, ty)| {
            TeacherForcedStats {
                token_correct: acc.token_correct + h,
                token_total: acc.token_total + n,
                type_correct: acc.type_correct + ty,
                examples: acc.examples + 1,
            }
        }))
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub fingerprint: String,
    pub step: usize,
    pub dev_metric: Option<f64>,
    pub tensors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: usize,
    pub dev_metric: Option<f64>,
    pub fingerprint: String,
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} overflows")))
    }
}

impl Checkpoint {
    /// Magic, version, length-prefixed JSON manifest, then each tensor as
    /// name, rank, dims and row-major little-endian `f64` data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            fingerprint: self.fingerprint.clone(),
            step: self.step,
            dev_metric: self.dev_metric,
            tensors: self.params.len(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(64 + 8 * self.params.num_scalars());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let mlen = r.len("manifest length")?;
        let manifest: CheckpointManifest = serde_json::from_slice(r.take(mlen, "manifest")?)
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let mut tensors = Vec::with_capacity(manifest.tensors);
        for _ in 0..manifest.tensors {
            let nlen = r.len("tensor name length")?;
            let name = std::str::from_utf8(r.take(nlen, "tensor name")?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.len("dimension"))
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n =
                n.ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` size overflows")))?;
            let bytes = r.take(n.checked_mul(8).unwrap_or(usize::MAX), &name)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Param {
                name: name.clone(),
                message: e.to_string(),
            })?;
            tensors.push((name, t));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            params: ModelParams::from_tensors(tensors),
            step: manifest.step,
            dev_metric: manifest.dev_metric,
            fingerprint: manifest.fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads and requires the stored fingerprint to equal `fingerprint`.
    pub fn load_for_resume(path: impl AsRef<Path>, fingerprint: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.fingerprint != fingerprint {
            return Err(Error::Checkpoint(format!(
                "config fingerprint {} does not match checkpoint {}",
                fingerprint, ck.fingerprint
            )));
        }
        Ok(ck)
    }
}

/// Elementwise mean of parameter sets with identical names and shapes.
///
/// Entries equal across all inputs are copied; others are summed in sorted
/// order, so the result does not depend on input order.
pub fn average_checkpoints(params: &[&ModelParams]) -> Result<ModelParams> {
    let (first, rest) = params
        .split_first()
        .ok_or_else(|| Error::Contract("no checkpoints to average".into()))?;
    for p in rest {
        if let Some(name) = first
            .names()
            .find(|n| p.get(n).is_none())
            .or_else(|| p.names().find(|n| first.get(n).is_none()))
        {
            return Err(Error::Param {
                name: name.to_string(),
                message: "present in only some checkpoints".into(),
            });
        }
    }
    let k = params.len() as f64;
    let mut out = Vec::with_capacity(first.len());
    let mut column = Vec::with_capacity(params.len());
    for (name, t0) in first.iter() {
        let tensors: Vec<&Tensor> = params
            .iter()
            .map(|p| p.get(name).expect("checked").as_ref())
            .collect();
        if let Some(bad) = tensors.iter().find(|t| t.shape() != t0.shape()) {
            return Err(Error::Param {
                name: name.to_string(),
                message: format!("shape {:?} vs {:?}", bad.shape(), t0.shape()),
            });
        }
        let data = (0..t0.len())
            .map(|i| {
                column.clear();
                column.extend(tensors.iter().map(|t| t.data()[i]));
                if column.iter().all(|&x| x.to_bits() == column[0].to_bits()) {
                    return column[0];
                }
                column.sort_by(f64::total_cmp);
                column.iter().sum::<f64>() / k
            })
            .collect();
        out.push((name.to_string(), Tensor::new(t0.shape().to_vec(), data)?));
    }
    Ok(ModelParams::from_tensors(out))
}

/// Indices of the `k` checkpoints closest in step to the best dev checkpoint, in step order.
///
/// The best checkpoint has the highest dev metric (earliest on ties); distance
/// ties go to the earlier step.
pub fn select_nearest(steps: &[(usize, Option<f64>)], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let best = steps
        .iter()
        .enumerate()
        .filter_map(|(i, &(s, m))| m.map(|m| (i, s, m)))
        .min_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)))
        .ok_or_else(|| Error::Config("no checkpoint carries a dev metric".into()))?;
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by_key(|&i| (steps[i].0.abs_diff(best.1), steps[i].0));
    order.truncate(k);
    order.sort_by_key(|&i| steps[i].0);
    Ok(order)
}
