//! Greedy and beam-search generation.

use rayon::prelude::*;

use crate::corpus::{QuestionType, Triple, Vocabulary, BOS, EOS, PAD};
use crate::decoder::{
    decode_step, first_input_token, prepare, DecoderState, FirstToken, FirstTokenMode, Prepared,
    SourceMap,
};
use crate::error::{Error, Result};
use crate::model::{Lexicon, ModelConfig, ModelParams, Session};

pub const DEFAULT_BEAM_SIZE: usize = 12;
pub const DEFAULT_MAX_LEN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    pub mode: FirstTokenMode,
    pub beam_size: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            mode: FirstTokenMode::Predicted,
            beam_size: DEFAULT_BEAM_SIZE,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Extended-vocabulary ids, starting with the injected question word if any.
    pub tokens: Vec<usize>,
    /// 1 when the first token was injected rather than generated.
    pub prefix_len: usize,
    pub logprob: f64,
    pub state: DecoderState,
    pub finished: bool,
}

impl Hypothesis {
    fn start(first: FirstToken, state: DecoderState) -> Self {
        let tokens = if first.injected {
            vec![first.id]
        } else {
            Vec::new()
        };
        Hypothesis {
            prefix_len: tokens.len(),
            tokens,
            logprob: 0.0,
            state,
            finished: false,
        }
    }

    pub fn generated(&self) -> usize {
        self.tokens.len() - self.prefix_len
    }

    /// Log-probability per generated token.
    pub fn score(&self) -> f64 {
        self.logprob / self.generated().max(1) as f64
    }
}

/// `<pad>` and `<s>` are never emitted.
pub fn is_emittable(id: usize) -> bool {
    id != PAD && id != BOS
}

fn prev_token(h: &Hypothesis, first: FirstToken) -> usize {
    h.tokens.last().copied().unwrap_or(first.id)
}

pub fn greedy(
    s: &mut Session,
    prep: &Prepared,
    first: FirstToken,
    max_len: usize,
) -> Result<Hypothesis> {
    let mut hyp = Hypothesis::start(first, prep.init);
    for _ in 0..max_len {
        let (out, next) = decode_step(s, &hyp.state, prev_token(&hyp, first), &prep.memory)?;
        let p = s.value(out.p_final).data();
        let mut best = None;
        for (w, &pw) in p.iter().enumerate().filter(|&(w, _)| is_emittable(w)) {
            if best.is_none_or(|(_, b)| pw > b) {
                best = Some((w, pw));
            }
        }
        let (w, pw) = best.expect("extended vocabulary has emittable ids");
        hyp.tokens.push(w);
        hyp.logprob += pw.ln();
        hyp.state = next;
        if w == EOS {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// Beam search ranked by length-normalized log-probability.
///
/// Every `</s>` extension of a live hypothesis moves to the completed pool;
/// the `beam_size` best other extensions stay live. Returns the pool
/// best-first, or the live beam when nothing completed within `max_len` steps.
pub fn beam_search(
    s: &mut Session,
    prep: &Prepared,
    first: FirstToken,
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if beam_size == 0 || max_len == 0 {
        return Err(Error::Contract(format!(
            "beam_size {beam_size} and max_len {max_len} must be positive"
        )));
    }
    let mut alive = vec![Hypothesis::start(first, prep.init)];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
        let mut states = Vec::with_capacity(alive.len());
        for (i, h) in alive.iter().enumerate() {
            let (out, next) = decode_step(s, &h.state, prev_token(h, first), &prep.memory)?;
            states.push(next);
            let n = (h.generated() + 1) as f64;
            for (w, &pw) in s.value(out.p_final).data().iter().enumerate() {
                if is_emittable(w) {
                    let lp = h.logprob + pw.ln();
                    cands.push((lp / n, i, w, lp));
                }
            }
        }
        let extend = |i: usize, w: usize, lp: f64, alive: &[Hypothesis]| {
            let mut tokens = alive[i].tokens.clone();
            tokens.push(w);
            Hypothesis {
                tokens,
                prefix_len: alive[i].prefix_len,
                logprob: lp,
                state: states[i],
                finished: w == EOS,
            }
        };
        for &(_, i, w, lp) in cands
            .iter()
            .filter(|c| c.2 == EOS && c.3 > f64::NEG_INFINITY)
        {
            done.push(extend(i, w, lp, &alive));
        }
        cands.retain(|c| c.2 != EOS);
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        alive = cands
            .iter()
            .take(beam_size)
            .map(|&(_, i, w, lp)| extend(i, w, lp, &alive))
            .collect();
        if alive.is_empty() {
            break;
        }
    }
    let mut ranked = if done.is_empty() { alive } else { done };
    ranked.sort_by(|a, b| b.score().total_cmp(&a.score()));
    Ok(ranked)
}

/// Surface tokens for a hypothesis; `</s>` is dropped and copy ids resolve to source words.
pub fn detokenize(tokens: &[usize], source: &SourceMap, vocab: &Vocabulary) -> Result<Vec<String>> {
    tokens
        .iter()
        .filter(|&&t| t != EOS)
        .map(|&t| {
            source
                .surface(t, vocab)
                .map(String::from)
                .ok_or_else(|| Error::Contract(format!("token id {t} has no surface form")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<String>,
    pub predicted: QuestionType,
    pub first: FirstToken,
    pub score: f64,
}

pub fn generate(
    params: &ModelParams,
    config: &ModelConfig,
    lex: &Lexicon,
    triple: &Triple,
    dcfg: &DecodeConfig,
) -> Result<Generation> {
    let mut s = Session::new(params);
    let prep = prepare(&mut s, triple, lex, config)?;
    let gold = dcfg.mode.needs_gold().then_some(triple.question.as_slice());
    let first = first_input_token(
        prep.prediction.predicted,
        dcfg.mode,
        gold,
        &prep.memory.source,
        &lex.vocab,
    )?;
    let best = if dcfg.beam_size == 1 {
        greedy(&mut s, &prep, first, dcfg.max_len)?
    } else {
        beam_search(&mut s, &prep, first, dcfg.beam_size, dcfg.max_len)?.swap_remove(0)
    };
    Ok(Generation {
        tokens: detokenize(&best.tokens, &prep.memory.source, &lex.vocab)?,
        predicted: prep.prediction.predicted,
        first,
        score: best.score(),
    })
}

/// Decodes every triple against frozen parameters; output order follows input order.
pub fn generate_all(
    params: &ModelParams,
    config: &ModelConfig,
    lex: &Lexicon,
    triples: &[Triple],
    dcfg: &DecodeConfig,
) -> Result<Vec<Generation>> {
    triples
        .par_iter()
        .map(|t| generate(params, config, lex, t, dcfg))
        .collect()
}
