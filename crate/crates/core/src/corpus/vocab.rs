use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::Triple;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Bidirectional word ↔ id map. Ids 0..4 are the special symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from the full word list; the first four entries must be the specials.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < SPECIALS.len() || words[..4] != SPECIALS {
            return Err(Error::Contract(format!(
                "vocabulary must start with the specials {SPECIALS:?}"
            )));
        }
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Vocabulary { words, ids })
    }

    /// Specials followed by `words` in the given order.
    pub fn with_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(words.into_iter().map(Into::into));
        Vocabulary::from_words(all)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// One word per line; line number − 1 is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_words(text.lines().map(String::from).collect())
    }
}

/// Most frequent surface forms of sentences and questions, after the specials.
///
/// Ties are broken lexicographically so the result is a pure function of the
/// corpus.
pub fn build_vocabulary(triples: &[Triple], max_size: usize) -> Result<Vocabulary> {
    if max_size <= SPECIALS.len() {
        return Err(Error::Contract(format!(
            "vocabulary max_size must exceed {}, got {max_size}",
            SPECIALS.len()
        )));
    }
    if triples.is_empty() {
        return Err(Error::Contract(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in triples {
        for w in t.words().chain(t.question.iter().map(String::as_str)) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, _)| !SPECIALS.contains(w))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - SPECIALS.len());
    Vocabulary::with_words(ranked.into_iter().map(|(w, _)| w.to_string()))
}

/// Closed set of tags with a reserved unknown entry at id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
    ids: HashMap<String, usize>,
}

pub const UNK_TAG: &str = "<unk>";

impl TagSet {
    /// Sorted distinct tags after the reserved unknown entry.
    pub fn build<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<&str> = tags.into_iter().filter(|t| *t != UNK_TAG).collect();
        let mut all = vec![UNK_TAG.to_string()];
        all.extend(distinct.into_iter().map(String::from));
        TagSet::from_tags(all).expect("distinct tags")
    }

    pub fn from_tags(tags: Vec<String>) -> Result<Self> {
        if tags.first().map(String::as_str) != Some(UNK_TAG) {
            return Err(Error::Contract(format!(
                "tag set must start with `{UNK_TAG}`"
            )));
        }
        let mut ids = HashMap::new();
        for (i, t) in tags.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate tag `{t}`")));
            }
        }
        Ok(TagSet { tags, ids })
    }

    pub fn pos_of(triples: &[Triple]) -> Self {
        TagSet::build(
            triples
                .iter()
                .flat_map(|t| t.sentence.iter().map(|k| k.pos.as_str())),
        )
    }

    pub fn ner_of(triples: &[Triple]) -> Self {
        TagSet::build(
            triples
                .iter()
                .flat_map(|t| t.sentence.iter().map(|k| k.ner.as_str())),
        )
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Id of `tag`, or 0 for tags outside the set.
    pub fn id(&self, tag: &str) -> usize {
        self.ids.get(tag).copied().unwrap_or(0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text: String = self.tags.iter().map(|t| format!("{t}\n")).collect();
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TagSet::from_tags(text.lines().map(String::from).collect())
    }
}
