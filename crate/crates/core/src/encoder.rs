//! Feature-rich bidirectional encoder.

use crate::corpus::Triple;
use crate::error::{Error, Result};
use crate::model::{names, Lexicon, Session};
use crate::numgrad::{lstm_cell, Tensor, Var};

/// Row of the answer-position table for a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerTag {
    Begin = 0,
    Inside = 1,
    Outside = 2,
}

impl AnswerTag {
    pub fn of(triple: &Triple, t: usize) -> Self {
        if t == triple.answer_start {
            AnswerTag::Begin
        } else if triple.in_answer(t) {
            AnswerTag::Inside
        } else {
            AnswerTag::Outside
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncodedSentence {
    /// Top-layer states `h_1..h_T`, each `concat(fwd_t, bwd_t)`.
    pub states: Vec<Var>,
    /// Encoder inputs `x_1..x_T`.
    pub inputs: Vec<Var>,
    /// Lexical feature embeddings `l_1..l_T`.
    pub feats: Vec<Var>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Var {
        *self.states.last().expect("nonempty encoding")
    }
}

/// Builds `x_t = [e_t; a_t; l_t]` and `l_t = [pos; ner; case]` for each token.
pub fn embed_inputs(
    s: &mut Session,
    triple: &Triple,
    lex: &Lexicon,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let word = s.param(names::WORD_EMB)?;
    let answer = s.param(names::ANSWER_EMB)?;
    let pos = s.param(names::POS_EMB)?;
    let ner = s.param(names::NER_EMB)?;
    let case = s.param(names::CASE_EMB)?;

    let mut xs = Vec::with_capacity(triple.len());
    let mut ls = Vec::with_capacity(triple.len());
    for (t, tok) in triple.sentence.iter().enumerate() {
        let g = &mut s.graph;
        let e = g.row(word, lex.vocab.id_or_unk(&tok.surface))?;
        let a = g.row(answer, AnswerTag::of(triple, t) as usize)?;
        let p = g.row(pos, lex.pos.id(&tok.pos))?;
        let n = g.row(ner, lex.ner.id(&tok.ner))?;
        let c = g.row(case, tok.case.id())?;
        let l = g.concat(&[p, n, c])?;
        let x = g.concat(&[e, a, l])?;
        xs.push(x);
        ls.push(l);
    }
    Ok((xs, ls))
}

/// Runs the stacked bidirectional LSTM and returns the top-layer states.
pub fn encode(s: &mut Session, inputs: &[Var], num_layers: usize) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::Contract("cannot encode an empty sequence".into()));
    }
    let mut layer_in = inputs.to_vec();
    for layer in 0..num_layers {
        let (fw, fb) = names::encoder(layer, "fwd");
        let (bw, bb) = names::encoder(layer, "bwd");
        let fwd_w = s.lstm(&fw, &fb)?;
        let bwd_w = s.lstm(&bw, &bb)?;
        let half = s.value(fwd_w.b).len() / 4;

        let zero = s.graph.leaf(Tensor::zeros(&[half]));
        let n = layer_in.len();
        let mut fwd = Vec::with_capacity(n);
        let (mut h, mut c) = (zero, zero);
        for &x in &layer_in {
            (h, c) = lstm_cell(&mut s.graph, x, h, c, fwd_w)?;
            fwd.push(h);
        }
        let mut bwd = vec![zero; n];
        let (mut h, mut c) = (zero, zero);
        for t in (0..n).rev() {
            (h, c) = lstm_cell(&mut s.graph, layer_in[t], h, c, bwd_w)?;
            bwd[t] = h;
        }
        layer_in = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| s.graph.concat(&[f, b]))
            .collect::<Result<_>>()?;
    }
    Ok(layer_in)
}

pub fn encode_triple(
    s: &mut Session,
    triple: &Triple,
    lex: &Lexicon,
    num_layers: usize,
) -> Result<EncodedSentence> {
    let (inputs, feats) = embed_inputs(s, triple, lex)?;
    let states = encode(s, &inputs, num_layers)?;
    Ok(EncodedSentence {
        states,
        inputs,
        feats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{heuristic_tag, TagSet, Vocabulary};
    use crate::model::tests::tiny_config;
    use crate::model::{ModelConfig, ModelParams};
    use crate::numgrad::gradcheck::{central_difference, max_relative_error, FD_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    pub(crate) fn fixture(sentence: &str, start: usize, len: usize) -> (Triple, Lexicon) {
        let words: Vec<String> = sentence.split_whitespace().map(String::from).collect();
        let triple = Triple::new(
            heuristic_tag(&words),
            start,
            len,
            vec!["what".into(), "?".into()],
        )
        .unwrap();
        let lex = Lexicon {
            vocab: Vocabulary::with_words(
                words
                    .iter()
                    .map(String::as_str)
                    .chain(["what", "?"])
                    .collect::<BTreeSet<_>>(),
            )
            .unwrap(),
            pos: TagSet::pos_of(std::slice::from_ref(&triple)),
            ner: TagSet::ner_of(std::slice::from_ref(&triple)),
        };
        (triple, lex)
    }

    fn params_for(
        lex: &Lexicon,
        base: &ModelConfig,
        seed: u64,
        scale: f64,
    ) -> (ModelConfig, ModelParams) {
        let cfg = lex.model_config(base);
        let p =
            ModelParams::init_scaled(&cfg, &mut ChaCha8Rng::seed_from_u64(seed), scale).unwrap();
        (cfg, p)
    }

    #[test]
    fn answer_tags_follow_span() {
        let (t, _) = fixture("a b c d e", 1, 3);
        let tags: Vec<_> = (0..5).map(|i| AnswerTag::of(&t, i)).collect();
        use AnswerTag::*;
        assert_eq!(tags, vec![Outside, Begin, Inside, Inside, Outside]);
    }

    #[test]
    fn input_width_and_answer_row() {
        let (t, lex) = fixture("the cat sat on OPEC mats", 2, 2);
        let (cfg, p) = params_for(&lex, &tiny_config(), 1, 1.0);
        let mut s = Session::new(&p);
        let (xs, ls) = embed_inputs(&mut s, &t, &lex).unwrap();
        assert_eq!(xs.len(), 6);
        for (&x, &l) in xs.iter().zip(&ls) {
            assert_eq!(s.value(x).len(), cfg.word_dim + 4 * cfg.feat_dim);
            assert_eq!(s.value(l).len(), 3 * cfg.feat_dim);
        }
        let table = p.get(names::ANSWER_EMB).unwrap();
        let a_at =
            |t: usize| s.value(xs[t]).data()[cfg.word_dim..cfg.word_dim + cfg.feat_dim].to_vec();
        assert_eq!(a_at(2), table.row(0));
        assert_eq!(a_at(3), table.row(1));
        assert_eq!(a_at(0), table.row(2));
    }

    #[test]
    fn widths_across_random_configs() {
        let (t, lex) = fixture("one two three", 0, 1);
        for (wd, fd, hd) in [(3, 1, 2), (5, 2, 6), (9, 4, 10)] {
            let base = ModelConfig {
                word_dim: wd,
                feat_dim: fd,
                hidden_dim: hd,
                ff_dim: 4,
                ..tiny_config()
            };
            let (_, p) = params_for(&lex, &base, 3, 1.0);
            let mut s = Session::new(&p);
            let enc = encode_triple(&mut s, &t, &lex, 2).unwrap();
            assert!(enc.inputs.iter().all(|&x| s.value(x).len() == wd + 4 * fd));
            assert!(enc.states.iter().all(|&h| s.value(h).len() == hd));
        }
    }

    #[test]
    fn zero_params_give_zero_states() {
        let (t, lex) = fixture("a b c", 1, 1);
        let (cfg, mut p) = params_for(&lex, &tiny_config(), 0, 1.0);
        for (_, v) in p.iter_mut() {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut s = Session::new(&p);
        let enc = encode_triple(&mut s, &t, &lex, cfg.num_layers).unwrap();
        for &h in &enc.states {
            assert!(s.value(h).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_token_is_one_step_each_way() {
        let (t, lex) = fixture("solo", 0, 1);
        let (_, p) = params_for(&lex, &tiny_config(), 4, 5.0);
        let mut s = Session::new(&p);
        let (xs, _) = embed_inputs(&mut s, &t, &lex).unwrap();
        let h = encode(&mut s, &xs, 1).unwrap();
        let fw = s.lstm("enc.l0.fwd.w", "enc.l0.fwd.b").unwrap();
        let bw = s.lstm("enc.l0.bwd.w", "enc.l0.bwd.b").unwrap();
        let z = s.graph.leaf(Tensor::zeros(&[4]));
        let (hf, _) = lstm_cell(&mut s.graph, xs[0], z, z, fw).unwrap();
        let (hb, _) = lstm_cell(&mut s.graph, xs[0], z, z, bw).unwrap();
        let expect: Vec<f64> = [s.value(hf).data(), s.value(hb).data()].concat();
        assert_eq!(s.value(h[0]).data(), expect.as_slice());
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, lex) = fixture("a b c d e", 0, 1);
        let (_, mut p) = params_for(&lex, &tiny_config(), 9, 5.0);
        // Same weights in both directions so reversal maps one onto the other.
        let fw = p.get("enc.l0.fwd.w").unwrap().as_ref().clone();
        let fb = p.get("enc.l0.fwd.b").unwrap().as_ref().clone();
        *p.get_mut("enc.l0.bwd.w").unwrap() = fw;
        *p.get_mut("enc.l0.bwd.b").unwrap() = fb;
        let dim = tiny_config().input_dim();
        let seq: Vec<Tensor> = (0..5)
            .map(|_| {
                use rand::Rng;
                Tensor::vector((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            })
            .collect();

        let run = |order: &[usize]| -> Vec<Vec<f64>> {
            let mut s = Session::new(&p);
            let xs: Vec<Var> = order
                .iter()
                .map(|&i| s.graph.leaf(seq[i].clone()))
                .collect();
            let hs = encode(&mut s, &xs, 1).unwrap();
            hs.iter().map(|&h| s.value(h).data().to_vec()).collect()
        };
        let orig = run(&[0, 1, 2, 3, 4]);
        let rev = run(&[4, 3, 2, 1, 0]);
        for t in 0..5 {
            assert_eq!(&rev[t][..4], &orig[4 - t][4..]);
            assert_eq!(&rev[t][4..], &orig[4 - t][..4]);
        }
    }

    #[test]
    fn first_state_depends_on_last_token() {
        let (t, lex) = fixture("a b c d", 0, 1);
        let (_, p) = params_for(&lex, &tiny_config(), 2, 5.0);
        let h1 = |tr: &Triple| {
            let mut s = Session::new(&p);
            let enc = encode_triple(&mut s, tr, &lex, 2).unwrap();
            s.value(enc.states[0]).data().to_vec()
        };
        let mut t2 = t.clone();
        t2.sentence[3].surface = "b".into();
        assert_ne!(h1(&t), h1(&t2));
        assert_eq!(h1(&t), h1(&t));
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        let (t, lex) = fixture("x y z", 1, 2);
        let (_, p) = params_for(&lex, &tiny_config(), 6, 4.0);
        let tables = [
            names::WORD_EMB,
            names::ANSWER_EMB,
            names::POS_EMB,
            names::NER_EMB,
            names::CASE_EMB,
        ];
        let objective = |p: &ModelParams| -> (f64, std::collections::BTreeMap<String, Tensor>) {
            let mut s = Session::new(p);
            let enc = encode_triple(&mut s, &t, &lex, 2).unwrap();
            let parts: Vec<Var> = enc.states.iter().map(|&h| s.graph.tanh(h)).collect();
            let cat = s.graph.concat(&parts).unwrap();
            let sq = s.graph.mul(cat, cat).unwrap();
            let loss = s.graph.sum(sq);
            s.graph.backward(loss).unwrap();
            (s.value(loss).item(), s.param_grads())
        };
        let (_, grads) = objective(&p);
        for name in tables {
            let base = p.get(name).unwrap().data().to_vec();
            let numeric = central_difference(
                |x| {
                    let mut q = p.clone();
                    q.get_mut(name).unwrap().data_mut().copy_from_slice(x);
                    objective(&q).0
                },
                &base,
                FD_STEP,
            );
            let err = max_relative_error(grads[name].data(), &numeric);
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}
