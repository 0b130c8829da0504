//! Corpus BLEU, beginning-question-word accuracy and type accuracy.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionType;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Pooled clipped n-gram counts for orders 1..=4 plus corpus lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

fn check_pairs<H, R>(hyps: &[H], refs: &[R]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

pub fn ngram_stats<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<T>],
) -> Result<NgramStats> {
    check_pairs(hyps, refs)?;
    let mut st = NgramStats::default();
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        if r.is_empty() {
            return Err(Error::Contract(format!("reference {i} is empty")));
        }
        st.hyp_len += h.len() as u64;
        st.ref_len += r.len() as u64;
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                st.matches[n - 1] += c.min(rc.get(&g).copied().unwrap_or(0));
            }
            st.totals[n - 1] += h.len().saturating_sub(n - 1) as u64;
        }
    }
    Ok(st)
}

impl NgramStats {
    /// Modified precision for order `n`; zero when the hypotheses have no n-grams.
    pub fn precision(&self, n: usize) -> f64 {
        match self.totals[n - 1] {
            0 => 0.0,
            t => self.matches[n - 1] as f64 / t as f64,
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64)
            .min(0.0)
            .exp()
    }

    /// BLEU-n on a 0..100 scale, without smoothing.
    pub fn bleu(&self, n: usize) -> f64 {
        let mut log_sum = 0.0;
        for k in 1..=n {
            let p = self.precision(k);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        100.0 * self.brevity_penalty() * (log_sum / n as f64).exp()
    }
}

fn check_order(n: usize) -> Result<()> {
    if (1..=MAX_ORDER).contains(&n) {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "BLEU order {n} outside 1..={MAX_ORDER}"
        )))
    }
}

pub fn corpus_bleu_n<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<T>],
    n: usize,
) -> Result<f64> {
    check_order(n)?;
    Ok(ngram_stats(hyps, refs)?.bleu(n))
}

/// BLEU-1 through BLEU-4.
pub fn corpus_bleu<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<T>],
) -> Result<[f64; MAX_ORDER]> {
    let st = ngram_stats(hyps, refs)?;
    Ok(std::array::from_fn(|k| st.bleu(k + 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordAccuracy {
    pub correct: usize,
    pub total: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bqwa {
    pub ratio: f64,
    pub correct: usize,
    pub total: usize,
    /// Keyed by the reference's lowercased first word.
    pub per_word: BTreeMap<String, WordAccuracy>,
}

fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Share of hypotheses whose first word matches a reference that opens with a question word.
pub fn bqwa<S: AsRef<str>, T: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<T>]) -> Result<Bqwa> {
    check_pairs(hyps, refs)?;
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (h, r) in hyps.iter().zip(refs) {
        let Some(first) = r.first().map(|w| w.as_ref().to_lowercase()) else {
            continue;
        };
        if QuestionType::of_word(&first) == QuestionType::Others {
            continue;
        }
        let hit = h
            .first()
            .is_some_and(|w| w.as_ref().to_lowercase() == first);
        let e = counts.entry(first).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
    }
    let correct = counts.values().map(|c| c.0).sum();
    let total = counts.values().map(|c| c.1).sum();
    let per_word = counts
        .into_iter()
        .map(|(w, (c, t))| {
            let acc = WordAccuracy {
                correct: c,
                total: t,
                ratio: ratio(c, t),
            };
            (w, acc)
        })
        .collect();
    Ok(Bqwa {
        ratio: ratio(correct, total),
        correct,
        total,
        per_word,
    })
}

pub fn type_accuracy(predictions: &[QuestionType], golds: &[QuestionType]) -> Result<f64> {
    check_pairs(predictions, golds)?;
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    Ok(ratio(hits, golds.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Option<String>,
    pub count: usize,
    /// BLEU-1..4 on a 0..100 scale.
    pub bleu: [f64; MAX_ORDER],
    pub bqwa: f64,
    pub bqwa_total: usize,
    pub per_word_accuracy: BTreeMap<String, WordAccuracy>,
    pub type_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn compute<S: AsRef<str>, T: AsRef<str>>(
        hyps: &[Vec<S>],
        refs: &[Vec<T>],
        types: Option<(&[QuestionType], &[QuestionType])>,
        mode: Option<String>,
    ) -> Result<Self> {
        let bleu = corpus_bleu(hyps, refs)?;
        let b = bqwa(hyps, refs)?;
        let type_accuracy = types.map(|(p, g)| type_accuracy(p, g)).transpose()?;
        Ok(EvalReport {
            mode,
            count: hyps.len(),
            bleu,
            bqwa: b.ratio,
            bqwa_total: b.total,
            per_word_accuracy: b.per_word,
            type_accuracy,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mode = self.mode.as_deref().unwrap_or("-");
        let _ = writeln!(out, "mode      {mode}");
        let _ = writeln!(out, "examples  {}", self.count);
        for (k, b) in self.bleu.iter().enumerate() {
            let _ = writeln!(out, "BLEU-{}    {b:.2}", k + 1);
        }
        let _ = writeln!(
            out,
            "BQWA      {:.2}% ({} refs)",
            100.0 * self.bqwa,
            self.bqwa_total
        );
        if let Some(t) = self.type_accuracy {
            let _ = writeln!(out, "type acc  {:.2}%", 100.0 * t);
        }
        let _ = writeln!(
            out,
            "\n{:<8} {:>7} {:>7} {:>8}",
            "word", "correct", "total", "accuracy"
        );
        for (w, a) in &self.per_word_accuracy {
            let _ = writeln!(
                out,
                "{w:<8} {:>7} {:>7} {:>7.2}%",
                a.correct,
                a.total,
                100.0 * a.ratio
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| toks(l)).collect()
    }

    #[test]
    fn identical_corpus_scores_100() {
        let c = corpus(&["what is the capital of France ?", "who wrote it ?"]);
        for n in 1..=4 {
            assert_eq!(corpus_bleu_n(&c, &c, n).unwrap(), 100.0);
        }
    }

    #[test]
    fn clipped_unigram_precision() {
        let st = ngram_stats(&corpus(&["the the the"]), &corpus(&["the cat"])).unwrap();
        assert_eq!((st.matches[0], st.totals[0]), (1, 3));
        assert_eq!(st.precision(1), 1.0 / 3.0);
    }

    #[test]
    fn zero_fourgram_overlap() {
        let h = corpus(&["a b c d e"]);
        let r = corpus(&["a b c x d e"]);
        assert_eq!(corpus_bleu_n(&h, &r, 4).unwrap(), 0.0);
        assert!(corpus_bleu_n(&h, &r, 3).unwrap() > 0.0);
    }

    #[test]
    fn brevity_penalty_applies_to_short_output() {
        let h = corpus(&["a b c d"]);
        let r = corpus(&["a b c d e f g h"]);
        let b = corpus_bleu_n(&h, &r, 4).unwrap();
        assert!((b - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn contract_errors() {
        let c = corpus(&["a"]);
        assert!(corpus_bleu_n(&c, &corpus(&["a", "b"]), 1).is_err());
        assert!(corpus_bleu_n(&c, &[Vec::<String>::new()], 1).is_err());
        assert!(corpus_bleu_n(&c, &c, 5).is_err());
        assert!(bqwa(&c, &corpus(&[])).is_err());
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let b = corpus_bleu_n(&[Vec::<String>::new()], &corpus(&["a b"]), 1).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn bqwa_counts_only_question_word_refs() {
        let refs = corpus(&["how is it ?", "why did it ?", "the one ?"]);
        let hyps = corpus(&["what is it ?", "Why did it ?", "what one ?"]);
        let b = bqwa(&hyps, &refs).unwrap();
        assert_eq!((b.correct, b.total, b.ratio), (1, 2, 0.5));
        assert_eq!(b.per_word["how"].correct, 0);
        assert_eq!(b.per_word["why"].ratio, 1.0);
        assert!(!b.per_word.contains_key("the"));
        let all = corpus(&["what a", "what b"]);
        assert_eq!(bqwa(&all, &all).unwrap().ratio, 1.0);
    }

    #[test]
    fn type_accuracy_against_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gold: Vec<QuestionType> = (0..500)
            .map(|_| QuestionType::from_id(rng.gen_range(0..8)).unwrap())
            .collect();
        let mut pred = gold.clone();
        pred.shuffle(&mut rng);
        let mut hits = 0;
        for i in 0..gold.len() {
            if pred[i].id() == gold[i].id() {
                hits += 1;
            }
        }
        assert_eq!(type_accuracy(&pred, &gold).unwrap(), hits as f64 / 500.0);
        assert_eq!(type_accuracy(&gold, &gold).unwrap(), 1.0);
    }

    #[test]
    fn all_others_on_squad_proportions() {
        // Basis points per type: What, Who, How, When, Which, Where, Why, Others.
        // The published row sums to 99.77%; What absorbs the rounding gap.
        let mut counts = [4326, 939, 912, 626, 478, 376, 137, 2183];
        counts[0] += 10000 - counts.iter().sum::<usize>();
        let gold: Vec<QuestionType> = counts
            .iter()
            .enumerate()
            .flat_map(|(id, &c)| std::iter::repeat(QuestionType::from_id(id).unwrap()).take(c))
            .collect();
        let pred = vec![QuestionType::Others; gold.len()];
        assert!((type_accuracy(&pred, &gold).unwrap() - 0.2183).abs() < 1e-12);
    }

    #[test]
    fn report_round_trips_and_renders() {
        let c = corpus(&["what is it ?", "in which year ?"]);
        let r = EvalReport::compute(&c, &c, None, Some("predicted".into())).unwrap();
        assert_eq!(r.bleu, [100.0; 4]);
        assert_eq!(r.bqwa_total, 1);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_table().contains("BLEU-4    100.00"));
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::sample::select(vec!["a", "b", "c", "what", "how"]),
            1..8,
        )
        .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn pooled_bleu_is_order_invariant(pairs in prop::collection::vec((sentence(), sentence()), 1..12), seed in 0u64..1000) {
            let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (hs, rs): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            for n in 1..=4 {
                let a = corpus_bleu_n(&h, &r, n).unwrap();
                prop_assert_eq!(a, corpus_bleu_n(&hs, &rs, n).unwrap());
                prop_assert!((0.0..=100.0 + 1e-9).contains(&a));
            }
        }

        #[test]
        fn non_question_refs_leave_bqwa_unchanged(pairs in prop::collection::vec((sentence(), sentence()), 1..12), extra in sentence()) {
            let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let base = bqwa(&h, &r).unwrap().ratio;
            let (mut h2, mut r2) = (h.clone(), r.clone());
            h2.push(extra);
            r2.push(vec!["the".to_string()]);
            prop_assert_eq!(bqwa(&h2, &r2).unwrap().ratio, base);
        }
    }
}
