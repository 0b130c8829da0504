//! Sentence–answer–question triples, vocabularies, lexical features and
//! the on-disk triple format.

mod io;
mod tagger;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_pretrained, read_raw_triples, read_triples, triples_to_jsonl, write_triples};
pub use tagger::{case_of, heuristic_tag};
pub use vocab::{build_vocabulary, TagSet, Vocabulary, BOS, EOS, PAD, UNK};

/// Interrogative class of a question, keyed to its first token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    What,
    Who,
    How,
    When,
    Which,
    Where,
    Why,
    Others,
}

impl QuestionType {
    pub const COUNT: usize = 8;

    pub const ALL: [QuestionType; 8] = [
        QuestionType::What,
        QuestionType::Who,
        QuestionType::How,
        QuestionType::When,
        QuestionType::Which,
        QuestionType::Where,
        QuestionType::Why,
        QuestionType::Others,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    /// The lowercase question word, `None` for [`QuestionType::Others`].
    pub fn word(self) -> Option<&'static str> {
        match self {
            QuestionType::What => Some("what"),
            QuestionType::Who => Some("who"),
            QuestionType::How => Some("how"),
            QuestionType::When => Some("when"),
            QuestionType::Which => Some("which"),
            QuestionType::Where => Some("where"),
            QuestionType::Why => Some("why"),
            QuestionType::Others => None,
        }
    }

    /// Type of a (case-insensitive) single word; `Others` if it is not a question word.
    pub fn of_word(word: &str) -> Self {
        let lower = word.to_lowercase();
        Self::ALL[..7]
            .iter()
            .copied()
            .find(|t| t.word() == Some(lower.as_str()))
            .unwrap_or(QuestionType::Others)
    }

    pub fn name(self) -> &'static str {
        self.word().unwrap_or("others")
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labels a question by its first token only.
pub fn label_question_type<S: AsRef<str>>(question: &[S]) -> Result<QuestionType> {
    let first = question
        .first()
        .ok_or_else(|| Error::Contract("cannot label an empty question".into()))?;
    Ok(QuestionType::of_word(first.as_ref()))
}

/// Surface-form case class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Lower,
    Capitalized,
    Upper,
    Other,
}

impl Case {
    pub const COUNT: usize = 4;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::Lower => "lower",
            Case::Capitalized => "capitalized",
            Case::Upper => "upper",
            Case::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lower" => Some(Case::Lower),
            "capitalized" => Some(Case::Capitalized),
            "upper" => Some(Case::Upper),
            "other" => Some(Case::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: String,
    pub ner: String,
    pub case: Case,
}

/// One sentence–answer–question example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub sentence: Vec<Token>,
    pub answer_start: usize,
    pub answer_len: usize,
    pub question: Vec<String>,
    pub qtype: QuestionType,
}

impl Triple {
    /// Validates the span and derives the question type.
    pub fn new(
        sentence: Vec<Token>,
        answer_start: usize,
        answer_len: usize,
        question: Vec<String>,
    ) -> Result<Self> {
        if sentence.is_empty() {
            return Err(Error::Contract("empty sentence".into()));
        }
        if let Some(t) = sentence.iter().find(|t| t.surface.is_empty()) {
            return Err(Error::Contract(format!(
                "empty token surface (pos {})",
                t.pos
            )));
        }
        if answer_len == 0 {
            return Err(Error::Contract("answer_len must be at least 1".into()));
        }
        if answer_start + answer_len > sentence.len() {
            return Err(Error::Contract(format!(
                "answer span [{answer_start}, {}) exceeds sentence length {}",
                answer_start + answer_len,
                sentence.len()
            )));
        }
        let qtype = label_question_type(&question)?;
        Ok(Triple {
            sentence,
            answer_start,
            answer_len,
            question,
            qtype,
        })
    }

    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.sentence.iter().map(|t| t.surface.as_str())
    }

    pub fn in_answer(&self, t: usize) -> bool {
        t >= self.answer_start && t < self.answer_start + self.answer_len
    }
}

/// Fraction of triples per question type, indexed by type id.
pub fn type_proportions(triples: &[Triple]) -> [f64; 8] {
    let mut counts = [0usize; 8];
    for t in triples {
        counts[t.qtype.id()] += 1;
    }
    let n = triples.len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}
