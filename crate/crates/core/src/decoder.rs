//! Attention decoder with a copy gate.
//!
//! Attention covers the `T` encoder states plus the type state as position
//! `T+1`. The copy distribution reuses the same attention weights restricted
//! to positions `1..T` and renormalized, so the type state feeds the context
//! vector but is never copied.

use std::fmt;
use std::str::FromStr;

use crate::corpus::{label_question_type, QuestionType, Triple, Vocabulary, BOS, EOS, UNK};
use crate::encoder::{encode_triple, EncodedSentence};
use crate::error::{Error, Result};
use crate::model::{names, Lexicon, ModelConfig, Session};
use crate::numgrad::{lstm_cell, Tensor, Var};
use crate::typepred::{predict_type, TypePrediction};

/// How the decoder's step-1 input is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FirstTokenMode {
    /// Question word of the predicted type; `<s>` for `others`.
    Predicted,
    /// Question word of the reference's type; `<s>` for `others`.
    GoldType,
    /// The reference question's literal first token.
    GoldFirstWord,
    /// Always `<s>`.
    PlainBos,
}

impl FirstTokenMode {
    pub const ALL: [FirstTokenMode; 4] = [
        FirstTokenMode::Predicted,
        FirstTokenMode::GoldType,
        FirstTokenMode::GoldFirstWord,
        FirstTokenMode::PlainBos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FirstTokenMode::Predicted => "predicted",
            FirstTokenMode::GoldType => "gold_type",
            FirstTokenMode::GoldFirstWord => "gold_first_word",
            FirstTokenMode::PlainBos => "plain_bos",
        }
    }

    pub fn needs_gold(self) -> bool {
        matches!(
            self,
            FirstTokenMode::GoldType | FirstTokenMode::GoldFirstWord
        )
    }
}

impl fmt::Display for FirstTokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FirstTokenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown first-token mode `{s}`")))
    }
}

/// Per-example mapping of source tokens into the extended vocabulary.
///
/// In-vocabulary words keep their id; each distinct out-of-vocabulary word
/// gets `vocab_len + k` in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMap {
    pub ext_ids: Vec<usize>,
    pub oov: Vec<String>,
    pub vocab_len: usize,
}

impl SourceMap {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>, vocab: &Vocabulary) -> Self {
        let mut oov: Vec<String> = Vec::new();
        let ext_ids = words
            .into_iter()
            .map(|w| match vocab.id(w) {
                Some(id) => id,
                None => {
                    let k = oov.iter().position(|o| o == w).unwrap_or_else(|| {
                        oov.push(w.to_string());
                        oov.len() - 1
                    });
                    vocab.len() + k
                }
            })
            .collect();
        SourceMap {
            ext_ids,
            oov,
            vocab_len: vocab.len(),
        }
    }

    pub fn of_triple(triple: &Triple, vocab: &Vocabulary) -> Self {
        SourceMap::new(triple.words(), vocab)
    }

    pub fn ext_len(&self) -> usize {
        self.vocab_len + self.oov.len()
    }

    /// Output id for a target word: vocabulary id, else source-copy id, else `<unk>`.
    pub fn target_id(&self, word: &str, vocab: &Vocabulary) -> usize {
        vocab.id(word).unwrap_or_else(|| {
            self.oov
                .iter()
                .position(|o| o == word)
                .map(|k| self.vocab_len + k)
                .unwrap_or(UNK)
        })
    }

    /// Embedding row for a (possibly extended) id.
    pub fn input_id(&self, id: usize) -> usize {
        if id < self.vocab_len {
            id
        } else {
            UNK
        }
    }

    pub fn surface<'a>(&'a self, id: usize, vocab: &'a Vocabulary) -> Option<&'a str> {
        if id < self.vocab_len {
            vocab.word(id)
        } else {
            self.oov.get(id - self.vocab_len).map(String::as_str)
        }
    }
}

/// Step-1 decoder input and whether it replaced `<s>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstToken {
    pub id: usize,
    pub injected: bool,
}

impl FirstToken {
    pub const BOS: FirstToken = FirstToken {
        id: BOS,
        injected: false,
    };
}

fn question_word_token(t: QuestionType, vocab: &Vocabulary) -> FirstToken {
    match t.word() {
        Some(w) => FirstToken {
            id: vocab.id_or_unk(w),
            injected: true,
        },
        None => FirstToken::BOS,
    }
}

pub fn first_input_token(
    predicted: QuestionType,
    mode: FirstTokenMode,
    gold_question: Option<&[String]>,
    source: &SourceMap,
    vocab: &Vocabulary,
) -> Result<FirstToken> {
    let gold = || {
        gold_question.filter(|q| !q.is_empty()).ok_or_else(|| {
            Error::Contract(format!(
                "first-token mode `{mode}` needs the reference question"
            ))
        })
    };
    Ok(match mode {
        FirstTokenMode::Predicted => question_word_token(predicted, vocab),
        FirstTokenMode::GoldType => question_word_token(label_question_type(gold()?)?, vocab),
        FirstTokenMode::GoldFirstWord => FirstToken {
            id: source.target_id(&gold()?[0], vocab),
            injected: true,
        },
        FirstTokenMode::PlainBos => FirstToken::BOS,
    })
}

/// Output ids the decoder must produce after `first`, ending with `</s>`.
pub fn target_sequence(
    question: &[String],
    first: FirstToken,
    source: &SourceMap,
    vocab: &Vocabulary,
) -> Vec<usize> {
    let skip = usize::from(first.injected);
    question
        .iter()
        .skip(skip)
        .map(|w| source.target_id(w, vocab))
        .chain(std::iter::once(EOS))
        .collect()
}

/// Attention memory for one example.
#[derive(Debug, Clone)]
pub struct Memory {
    /// `h_1..h_T, h_{T+1}` with `h_{T+1}` the type state.
    pub states: Vec<Var>,
    keys: Vec<Var>,
    pub source: SourceMap,
}

impl Memory {
    pub fn source_len(&self) -> usize {
        self.states.len() - 1
    }
}

pub fn build_memory(
    s: &mut Session,
    enc: &EncodedSentence,
    type_state: Var,
    source: SourceMap,
) -> Result<Memory> {
    if source.ext_ids.len() != enc.len() {
        return Err(Error::Contract(format!(
            "source map covers {} tokens, encoding has {}",
            source.ext_ids.len(),
            enc.len()
        )));
    }
    let wh = s.param(names::ATTN_WH)?;
    let mut states = enc.states.clone();
    states.push(type_state);
    let keys = states
        .iter()
        .map(|&h| s.graph.matvec(wh, h))
        .collect::<Result<_>>()?;
    Ok(Memory {
        states,
        keys,
        source,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub s: Var,
    pub cell: Var,
    /// Context vector of the previous step (`c_{i−1}`).
    pub context: Var,
}

/// `s_0` projects `concat(last forward state, first backward state)`; cell and context start at zero.
pub fn init_state(s: &mut Session, enc: &EncodedSentence) -> Result<DecoderState> {
    let h = s.value(enc.last()).len();
    let half = h / 2;
    let fwd_last = s.graph.slice(enc.last(), 0, half)?;
    let bwd_first = s.graph.slice(enc.states[0], half, h - half)?;
    let cat = s.graph.concat(&[fwd_last, bwd_first])?;
    let w = s.param(names::DEC_INIT_W)?;
    let b = s.param(names::DEC_INIT_B)?;
    let proj = s.graph.matvec(w, cat)?;
    let s0 = s.graph.add(proj, b)?;
    let zero = s.graph.leaf(Tensor::zeros(&[h]));
    Ok(DecoderState {
        s: s0,
        cell: zero,
        context: zero,
    })
}

/// Additive attention `vᵀ tanh(W_s s + W_h h_t)` over all `T+1` positions.
pub fn attention(s: &mut Session, dec_s: Var, mem: &Memory) -> Result<(Var, Var)> {
    let ws = s.param(names::ATTN_WS)?;
    let v = s.param(names::ATTN_V)?;
    let q = s.graph.matvec(ws, dec_s)?;
    let mut scores = Vec::with_capacity(mem.keys.len());
    for &k in &mem.keys {
        let pre = s.graph.add(q, k)?;
        let u = s.graph.tanh(pre);
        scores.push(s.graph.dot(v, u)?);
    }
    let scores = s.graph.concat(&scores)?;
    let attn = s.graph.softmax(scores)?;
    let context = s.graph.weighted_sum(attn, &mem.states)?;
    Ok((attn, context))
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// Attention over `T+1` positions.
    pub attn: Var,
    pub context: Var,
    /// Generation gate `p_g`, shape `[1]`.
    pub p_gen: Var,
    /// Generation distribution over the fixed vocabulary.
    pub p_vocab: Var,
    /// Copy distribution over the extended vocabulary.
    pub p_copy: Var,
    /// Mixture over the extended vocabulary.
    pub p_final: Var,
}

pub fn decode_step(
    s: &mut Session,
    state: &DecoderState,
    prev_token: usize,
    mem: &Memory,
) -> Result<(StepOutput, DecoderState)> {
    let src = &mem.source;
    if prev_token >= src.ext_len() {
        return Err(Error::Contract(format!(
            "token id {prev_token} outside the extended vocabulary ({})",
            src.ext_len()
        )));
    }
    let table = s.param(names::WORD_EMB)?;
    let emb = s.graph.row(table, src.input_id(prev_token))?;
    let input = s.graph.concat(&[emb, state.context])?;
    let cell_w = s.lstm(names::DEC_LSTM_W, names::DEC_LSTM_B)?;
    let (dec_s, cell) = lstm_cell(&mut s.graph, input, state.s, state.cell, cell_w)?;

    let (attn, context) = attention(s, dec_s, mem)?;

    let g = &mut s.graph;
    let sc = g.concat(&[dec_s, context])?;
    let (v1, b1) = (s.param(names::OUT_V1)?, s.param(names::OUT_B1)?);
    let (v2, b2) = (s.param(names::OUT_V2)?, s.param(names::OUT_B2)?);
    let (gw, gb) = (s.param(names::GATE_W)?, s.param(names::GATE_B)?);
    let g = &mut s.graph;
    let z1 = g.matvec(v1, sc)?;
    let z1 = g.add(z1, b1)?;
    let hid = g.tanh(z1);
    let z2 = g.matvec(v2, hid)?;
    let logits = g.add(z2, b2)?;
    let p_vocab = g.softmax(logits)?;

    let gate_in = g.concat(&[dec_s, context, emb])?;
    let gate_z = g.dot(gw, gate_in)?;
    let gate_z = g.add(gate_z, gb)?;
    let p_gen = g.sigmoid(gate_z);

    let t = src.ext_ids.len();
    let src_attn = g.slice(attn, 0, t)?;
    let copy_attn = g.normalize(src_attn)?;
    let p_copy = g.scatter_add(copy_attn, &src.ext_ids, src.ext_len())?;
    let p_vocab_ext = g.pad(p_vocab, src.ext_len())?;
    let p_final = g.mix(p_gen, p_vocab_ext, p_copy)?;

    Ok((
        StepOutput {
            attn,
            context,
            p_gen,
            p_vocab,
            p_copy,
            p_final,
        },
        DecoderState {
            s: dec_s,
            cell,
            context,
        },
    ))
}

/// Mean over steps of `−log P(target)`.
pub fn sequence_nll(s: &mut Session, outputs: &[StepOutput], targets: &[usize]) -> Result<Var> {
    if targets.is_empty() || outputs.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} step outputs for {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let losses = outputs
        .iter()
        .zip(targets)
        .map(|(o, &t)| s.graph.neg_log_at(o.p_final, t))
        .collect::<Result<Vec<_>>>()?;
    let all = s.graph.concat(&losses)?;
    Ok(s.graph.mean(all))
}

/// Teacher-forced unrolling: step `i` consumes target `i−1`.
pub fn teacher_force(
    s: &mut Session,
    mem: &Memory,
    init: DecoderState,
    first: usize,
    targets: &[usize],
) -> Result<Vec<StepOutput>> {
    let mut state = init;
    let mut prev = first;
    let mut outs = Vec::with_capacity(targets.len());
    for &t in targets {
        let (out, next) = decode_step(s, &state, prev, mem)?;
        outs.push(out);
        state = next;
        prev = t;
    }
    Ok(outs)
}

/// Source-side forward pass shared by training and inference.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub prediction: TypePrediction,
    pub memory: Memory,
    pub init: DecoderState,
}

pub fn prepare(
    s: &mut Session,
    triple: &Triple,
    lex: &Lexicon,
    config: &ModelConfig,
) -> Result<Prepared> {
    let enc = encode_triple(s, triple, lex, config.num_layers)?;
    let prediction = predict_type(
        s,
        &enc,
        triple.answer_start,
        triple.answer_len,
        config.use_answer_hidden_states,
    )?;
    let source = SourceMap::of_triple(triple, &lex.vocab);
    let memory = build_memory(s, &enc, prediction.type_state, source)?;
    let init = init_state(s, &enc)?;
    Ok(Prepared {
        prediction,
        memory,
        init,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{heuristic_tag, TagSet};
    use crate::model::tests::tiny_config;
    use crate::model::ModelParams;
    use crate::numgrad::gradcheck::{central_difference, max_relative_error, FD_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn setup(sentence: &str, vocab_words: &[&str], seed: u64) -> (Triple, Lexicon, ModelParams) {
        let triple =
            Triple::new(heuristic_tag(&words(sentence)), 0, 1, words("how is it ?")).unwrap();
        let lex = Lexicon {
            vocab: Vocabulary::with_words(vocab_words.iter().copied()).unwrap(),
            pos: TagSet::pos_of(std::slice::from_ref(&triple)),
            ner: TagSet::ner_of(std::slice::from_ref(&triple)),
        };
        let cfg = lex.model_config(&tiny_config());
        let p = ModelParams::init_scaled(&cfg, &mut ChaCha8Rng::seed_from_u64(seed), 6.0).unwrap();
        (triple, lex, p)
    }

    const VOCAB: &[&str] = &[
        "what", "who", "how", "when", "which", "where", "why", "the", "is", "it", "?",
    ];

    fn memory(s: &mut Session, t: &Triple, lex: &Lexicon) -> (Memory, DecoderState) {
        let p = prepare(s, t, lex, &lex.model_config(&tiny_config())).unwrap();
        (p.memory, p.init)
    }

    #[test]
    fn source_map_extends_vocabulary() {
        let vocab = Vocabulary::with_words(["the", "is"]).unwrap();
        let m = SourceMap::new(["the", "OPEC", "is", "OPEC", "oil"], &vocab);
        assert_eq!(m.ext_ids, vec![4, 6, 5, 6, 7]);
        assert_eq!(m.ext_len(), 8);
        assert_eq!(m.surface(6, &vocab), Some("OPEC"));
        assert_eq!(m.target_id("oil", &vocab), 7);
        assert_eq!(m.target_id("absent", &vocab), UNK);
        assert_eq!(m.input_id(7), UNK);
    }

    #[test]
    fn first_token_modes() {
        let vocab = Vocabulary::with_words(VOCAB.iter().copied()).unwrap();
        let src = SourceMap::new(["the", "OPEC"], &vocab);
        let gold = words("In what year ?");
        let ft = |p, m, g| first_input_token(p, m, g, &src, &vocab);
        assert_eq!(
            ft(QuestionType::How, FirstTokenMode::Predicted, None).unwrap(),
            FirstToken {
                id: vocab.id("how").unwrap(),
                injected: true
            }
        );
        assert_eq!(
            ft(QuestionType::Others, FirstTokenMode::Predicted, None).unwrap(),
            FirstToken::BOS
        );
        for p in QuestionType::ALL {
            assert_eq!(
                ft(p, FirstTokenMode::PlainBos, Some(&gold)).unwrap(),
                FirstToken::BOS
            );
        }
        assert_eq!(
            ft(QuestionType::What, FirstTokenMode::GoldType, Some(&gold)).unwrap(),
            FirstToken::BOS
        );
        let why = words("Why did it ?");
        assert_eq!(
            ft(QuestionType::What, FirstTokenMode::GoldType, Some(&why))
                .unwrap()
                .id,
            vocab.id("why").unwrap()
        );
        let lit = ft(
            QuestionType::What,
            FirstTokenMode::GoldFirstWord,
            Some(&gold),
        )
        .unwrap();
        assert!(lit.injected);
        assert_eq!(lit.id, UNK);
        let opec = words("OPEC did");
        let copy = ft(
            QuestionType::What,
            FirstTokenMode::GoldFirstWord,
            Some(&opec),
        )
        .unwrap();
        assert_eq!(copy.id, vocab.len());
        assert!(ft(QuestionType::What, FirstTokenMode::GoldType, None).is_err());
        assert!(ft(QuestionType::What, FirstTokenMode::GoldFirstWord, Some(&[])).is_err());
    }

    #[test]
    fn targets_skip_injected_word() {
        let vocab = Vocabulary::with_words(VOCAB.iter().copied()).unwrap();
        let src = SourceMap::new(["OPEC"], &vocab);
        let q = words("how is OPEC ?");
        let inj = FirstToken {
            id: vocab.id("how").unwrap(),
            injected: true,
        };
        assert_eq!(
            target_sequence(&q, inj, &src, &vocab),
            vec![
                vocab.id("is").unwrap(),
                vocab.len(),
                vocab.id("?").unwrap(),
                EOS
            ]
        );
        assert_eq!(target_sequence(&q, FirstToken::BOS, &src, &vocab).len(), 5);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in FirstTokenMode::ALL {
            assert_eq!(m.name().parse::<FirstTokenMode>().unwrap(), m);
        }
        assert!("bos".parse::<FirstTokenMode>().is_err());
    }

    #[test]
    fn attention_with_equal_scores_is_uniform() {
        let (t, lex, mut p) = setup("solo", VOCAB, 1);
        let t = Triple::new(t.sentence[..1].to_vec(), 0, 1, words("what ?")).unwrap();
        p.get_mut(names::ATTN_V).unwrap().data_mut().fill(0.0);
        let mut s = Session::new(&p);
        let (mem, init) = memory(&mut s, &t, &lex);
        let (attn, _) = attention(&mut s, init.s, &mem).unwrap();
        assert_eq!(s.value(attn).data(), &[0.5, 0.5]);
    }

    #[test]
    fn gate_limits() {
        let (t, lex, mut p) = setup("the OPEC is the oil", VOCAB, 2);
        p.get_mut(names::GATE_W).unwrap().data_mut().fill(0.0);
        p.get_mut(names::GATE_B).unwrap().data_mut()[0] = 1000.0;
        let mut s = Session::new(&p);
        let (mem, init) = memory(&mut s, &t, &lex);
        let (out, _) = decode_step(&mut s, &init, BOS, &mem).unwrap();
        assert_eq!(s.value(out.p_gen).item(), 1.0);
        let pv = s.value(out.p_vocab).data().to_vec();
        let pf = s.value(out.p_final).data().to_vec();
        assert_eq!(&pf[..pv.len()], pv.as_slice());
        assert!(pf[pv.len()..].iter().all(|&x| x == 0.0));

        // Gate shut and a one-token source: all mass on that token's id.
        let single = Triple::new(vec![t.sentence[1].clone()], 0, 1, words("who ?")).unwrap();
        p.get_mut(names::GATE_B).unwrap().data_mut()[0] = -1000.0;
        let mut s = Session::new(&p);
        let (mem, init) = memory(&mut s, &single, &lex);
        let (out, _) = decode_step(&mut s, &init, BOS, &mem).unwrap();
        assert_eq!(s.value(out.p_gen).item(), 0.0);
        let pf = s.value(out.p_final).data();
        let id = lex.vocab.len(); // "OPEC" is out of vocabulary
        assert_eq!(pf[id], 1.0);
        assert_eq!(pf.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn repeated_source_word_sums_attention() {
        let (t, lex, p) = setup("the oil is the price", VOCAB, 3);
        let mut s = Session::new(&p);
        let (mem, init) = memory(&mut s, &t, &lex);
        let (out, _) = decode_step(&mut s, &init, BOS, &mem).unwrap();
        let attn = s.value(out.attn).data().to_vec();
        let src_mass: f64 = attn[..5].iter().sum();
        let the = lex.vocab.id("the").unwrap();
        let expect = (attn[0] + attn[3]) / src_mass;
        assert!((s.value(out.p_copy).data()[the] - expect).abs() < 1e-15);
        // Words absent from the source get exactly zero copy mass.
        let why = lex.vocab.id("why").unwrap();
        assert_eq!(s.value(out.p_copy).data()[why], 0.0);
    }

    #[test]
    fn step_distributions_are_normalized() {
        let (t, lex, p) = setup("the OPEC raised oil by 70 %", VOCAB, 4);
        let mut s = Session::new(&p);
        let (mem, mut state) = memory(&mut s, &t, &lex);
        let mut prev = BOS;
        for _ in 0..4 {
            let (out, next) = decode_step(&mut s, &state, prev, &mem).unwrap();
            let attn = s.value(out.attn).data();
            assert_eq!(attn.len(), t.len() + 1);
            assert!((attn.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let pf = s.value(out.p_final).data();
            assert!((pf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(pf.iter().all(|&x| x >= 0.0));
            let g = s.value(out.p_gen).item();
            assert!((0.0..=1.0).contains(&g));
            prev = super::super::typepred::argmax(pf);
            state = next;
        }
    }

    #[test]
    fn sequence_nll_matches_hand_computed_mixture() {
        let (t, lex, p) = setup("the OPEC is the oil", VOCAB, 5);
        let src = SourceMap::of_triple(&t, &lex.vocab);
        let targets = vec![
            lex.vocab.id("is").unwrap(),
            src.target_id("OPEC", &lex.vocab),
            EOS,
        ];
        let mut s = Session::new(&p);
        let (mem, init) = memory(&mut s, &t, &lex);
        let outs =
            teacher_force(&mut s, &mem, init, lex.vocab.id("how").unwrap(), &targets).unwrap();
        let nll = sequence_nll(&mut s, &outs, &targets).unwrap();

        // Rebuild P(w) from the recorded attention, gate and vocabulary distribution.
        let mut total = 0.0;
        for (o, &w) in outs.iter().zip(&targets) {
            let attn = s.value(o.attn).data();
            let g = s.value(o.p_gen).item();
            let pv = s.value(o.p_vocab).data();
            let mass: f64 = attn[..t.len()].iter().sum();
            let copy: f64 = (0..t.len())
                .filter(|&i| src.ext_ids[i] == w)
                .map(|i| attn[i] / mass)
                .sum();
            let gen = if w < pv.len() { pv[w] } else { 0.0 };
            total += -(g * gen + (1.0 - g) * copy).ln();
        }
        assert!((s.value(nll).item() - total / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sequence_nll_limits() {
        let p = ModelParams::default();
        let mut s = Session::new(&p);
        let one = s.graph.leaf(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let uni = s.graph.leaf(Tensor::vector(vec![0.25; 4]));
        let out = |v| StepOutput {
            attn: v,
            context: v,
            p_gen: v,
            p_vocab: v,
            p_copy: v,
            p_final: v,
        };
        let l = sequence_nll(&mut s, &[out(one), out(one)], &[1, 1]).unwrap();
        assert_eq!(s.value(l).item(), 0.0);
        let l = sequence_nll(&mut s, &[out(uni), out(uni)], &[0, 3]).unwrap();
        assert!((s.value(l).item() - 4f64.ln()).abs() < 1e-12);
        assert!(sequence_nll(&mut s, &[out(uni)], &[]).is_err());
    }

    #[test]
    fn context_gradient_matches_finite_differences() {
        let (t, lex, p) = setup("a b c d", VOCAB, 6);
        let h = tiny_config().hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 5 * h + h; // four states + type state, plus the decoder state
        let point: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let proj: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let src = SourceMap::of_triple(&t, &lex.vocab);
        let run = |x: &[f64]| {
            let mut s = Session::new(&p);
            let leaves: Vec<Var> = x
                .chunks(h)
                .map(|c| s.graph.leaf(Tensor::vector(c.to_vec())))
                .collect();
            let wh = s.param(names::ATTN_WH).unwrap();
            let keys = leaves[..5]
                .iter()
                .map(|&v| s.graph.matvec(wh, v).unwrap())
                .collect();
            let mem = Memory {
                states: leaves[..5].to_vec(),
                keys,
                source: src.clone(),
            };
            let (_, ctx) = attention(&mut s, leaves[5], &mem).unwrap();
            let w = s.graph.leaf(Tensor::vector(proj.clone()));
            let y = s.graph.dot(ctx, w).unwrap();
            s.graph.backward(y).unwrap();
            let grads: Vec<f64> = leaves[..5]
                .iter()
                .flat_map(|&v| s.graph.grad(v).into_data())
                .collect();
            (s.value(y).item(), grads)
        };
        let (_, analytic) = run(&point);
        let numeric = central_difference(|x| run(x).0, &point, FD_STEP);
        assert!(max_relative_error(&analytic, &numeric[..5 * h]) < 1e-6);
    }
}
