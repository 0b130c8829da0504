//! Question-type prediction from the answer span.

use crate::corpus::QuestionType;
use crate::encoder::EncodedSentence;
use crate::error::{Error, Result};
use crate::model::{names, Session};
use crate::numgrad::{lstm_cell, Tensor, Var};

#[derive(Debug, Clone)]
pub struct TypePrediction {
    /// Distribution over the 8 question types.
    pub dist: Var,
    /// Final recurrent state `h_a^q`; feeds both the type softmax and decoder attention.
    pub type_state: Var,
    pub predicted: QuestionType,
    pub probs: [f64; 8],
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Runs `LSTM^q` over the answer span starting from `h_T`, then the type softmax.
///
/// Each step consumes `[h_{m+j}; l_{m+j}]`, or `[x_{m+j}; l_{m+j}]` when
/// `use_answer_hidden_states` is off.
pub fn predict_type(
    s: &mut Session,
    enc: &EncodedSentence,
    answer_start: usize,
    answer_len: usize,
    use_answer_hidden_states: bool,
) -> Result<TypePrediction> {
    if answer_len == 0 || answer_start + answer_len > enc.len() {
        return Err(Error::Contract(format!(
            "answer span ({answer_start}, {answer_len}) invalid for a {}-token sentence",
            enc.len()
        )));
    }
    let weights = s.lstm(names::TYPE_LSTM_W, names::TYPE_LSTM_B)?;
    let h0 = enc.last();
    let hidden = s.value(h0).len();
    let mut c = s.graph.leaf(Tensor::zeros(&[hidden]));
    let mut h = h0;
    for t in answer_start..answer_start + answer_len {
        let base = if use_answer_hidden_states {
            enc.states[t]
        } else {
            enc.inputs[t]
        };
        let input = s.graph.concat(&[base, enc.feats[t]])?;
        (h, c) = lstm_cell(&mut s.graph, input, h, c, weights)?;
    }
    let wq = s.param(names::TYPE_OUT)?;
    let logits = s.graph.matvec(wq, h)?;
    let dist = s.graph.softmax(logits)?;
    let mut probs = [0.0; 8];
    probs.copy_from_slice(s.value(dist).data());
    let predicted = QuestionType::from_id(argmax(&probs)).expect("8 types");
    Ok(TypePrediction {
        dist,
        type_state: h,
        predicted,
        probs,
    })
}

/// `−log P(gold)`, floored inside the log.
pub fn type_loss(s: &mut Session, pred: &TypePrediction, gold: QuestionType) -> Result<Var> {
    s.graph.neg_log_at(pred.dist, gold.id())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{heuristic_tag, TagSet, Triple, Vocabulary};
    use crate::encoder::encode_triple;
    use crate::model::tests::tiny_config;
    use crate::model::{Lexicon, ModelConfig, ModelParams};
    use crate::numgrad::gradcheck::{central_difference, max_relative_error, FD_STEP};
    use crate::numgrad::LstmWeights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(use_h: bool, seed: u64) -> (Triple, Lexicon, ModelConfig, ModelParams) {
        let words: Vec<String> = "the Treaty was signed in 1957 by six states"
            .split_whitespace()
            .map(String::from)
            .collect();
        let triple = Triple::new(heuristic_tag(&words), 4, 2, vec!["when".into()]).unwrap();
        let lex = Lexicon {
            vocab: Vocabulary::with_words(["the", "was", "signed", "in", "when"]).unwrap(),
            pos: TagSet::pos_of(std::slice::from_ref(&triple)),
            ner: TagSet::ner_of(std::slice::from_ref(&triple)),
        };
        let cfg = lex.model_config(&ModelConfig {
            use_answer_hidden_states: use_h,
            ..tiny_config()
        });
        let p = ModelParams::init_scaled(&cfg, &mut ChaCha8Rng::seed_from_u64(seed), 5.0).unwrap();
        (triple, lex, cfg, p)
    }

    #[test]
    fn distribution_and_argmax() {
        let (t, lex, cfg, p) = setup(true, 1);
        let mut s = Session::new(&p);
        let enc = encode_triple(&mut s, &t, &lex, cfg.num_layers).unwrap();
        let pred = predict_type(&mut s, &enc, t.answer_start, t.answer_len, true).unwrap();
        assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(pred.probs.iter().all(|&x| x >= 0.0));
        assert_eq!(pred.predicted.id(), argmax(&pred.probs));
        assert_eq!(s.value(pred.type_state).len(), cfg.hidden_dim);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.125; 8]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3, 0.2]), 1);
    }

    #[test]
    fn zero_wq_gives_uniform() {
        let (t, lex, cfg, mut p) = setup(true, 2);
        p.get_mut(names::TYPE_OUT).unwrap().data_mut().fill(0.0);
        let mut s = Session::new(&p);
        let enc = encode_triple(&mut s, &t, &lex, cfg.num_layers).unwrap();
        let pred = predict_type(&mut s, &enc, 0, 3, true).unwrap();
        assert!(pred.probs.iter().all(|&x| (x - 0.125).abs() < 1e-15));
        assert_eq!(pred.predicted, QuestionType::What);
        let loss = type_loss(&mut s, &pred, QuestionType::Why).unwrap();
        assert!((s.value(loss).item() - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_span_is_one_step_from_last_state() {
        let (t, lex, cfg, p) = setup(true, 3);
        let mut s = Session::new(&p);
        let enc = encode_triple(&mut s, &t, &lex, cfg.num_layers).unwrap();
        let pred = predict_type(&mut s, &enc, 5, 1, true).unwrap();
        let w = LstmWeights {
            w: s.param(names::TYPE_LSTM_W).unwrap(),
            b: s.param(names::TYPE_LSTM_B).unwrap(),
        };
        let input = s.graph.concat(&[enc.states[5], enc.feats[5]]).unwrap();
        let c0 = s.graph.leaf(Tensor::zeros(&[cfg.hidden_dim]));
        let (h, _) = lstm_cell(&mut s.graph, input, enc.last(), c0, w).unwrap();
        assert_eq!(s.value(h).data(), s.value(pred.type_state).data());
    }

    #[test]
    fn invalid_span_is_contract_error() {
        let (t, lex, cfg, p) = setup(true, 3);
        let mut s = Session::new(&p);
        let enc = encode_triple(&mut s, &t, &lex, cfg.num_layers).unwrap();
        assert!(predict_type(&mut s, &enc, 8, 2, true).is_err());
        assert!(predict_type(&mut s, &enc, 0, 0, true).is_err());
    }

    #[test]
    fn ablation_runs_on_inputs() {
        let (t, lex, cfg, p) = setup(false, 4);
        let mut s = Session::new(&p);
        let enc = encode_triple(&mut s, &t, &lex, cfg.num_layers).unwrap();
        // Full-sentence span: the recurrence runs over all T positions.
        let pred = predict_type(&mut s, &enc, 0, t.len(), false).unwrap();
        assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn type_loss_values() {
        let p = ModelParams::default();
        let mut s = Session::new(&p);
        let mut dist = vec![0.25 / 6.0; 8];
        dist[0] = 0.5;
        dist[1] = 0.25;
        let d = s.graph.leaf(Tensor::vector(dist.clone()));
        let pred = TypePrediction {
            dist: d,
            type_state: d,
            predicted: QuestionType::What,
            probs: dist.try_into().unwrap(),
        };
        let l = type_loss(&mut s, &pred, QuestionType::Who).unwrap();
        assert!((s.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let mut one = [0.0; 8];
        one[3] = 1.0;
        let d = s.graph.leaf(Tensor::vector(one.to_vec()));
        let pred = TypePrediction {
            dist: d,
            type_state: d,
            predicted: QuestionType::When,
            probs: one,
        };
        let l = type_loss(&mut s, &pred, QuestionType::When).unwrap();
        assert_eq!(s.value(l).item(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for use_h in [true, false] {
            let (t, lex, cfg, p) = setup(use_h, 5);
            let objective = |p: &ModelParams| {
                let mut s = Session::new(p);
                let enc = encode_triple(&mut s, &t, &lex, cfg.num_layers).unwrap();
                let pred = predict_type(&mut s, &enc, 4, 2, use_h).unwrap();
                let loss = type_loss(&mut s, &pred, QuestionType::When).unwrap();
                s.graph.backward(loss).unwrap();
                (s.value(loss).item(), s.param_grads())
            };
            let (_, grads) = objective(&p);
            for name in [names::TYPE_OUT, names::TYPE_LSTM_W, names::TYPE_LSTM_B] {
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
                assert!(err < 1e-4, "{name} (use_h={use_h}): {err}");
            }
        }
    }
}
