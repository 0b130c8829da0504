//! Rule-based stand-in for a statistical POS/NER tagger.
//!
//! POS: closed-class lexicon, then suffix rules, then `NN`. NER: numeric
//! tokens are `NUMBER`, capitalized non-function words are `ENTITY`,
//! everything else `O`.

use super::{Case, Token};

const LEXICON: &[(&str, &str)] = &[
    ("the", "DT"),
    ("a", "DT"),
    ("an", "DT"),
    ("this", "DT"),
    ("that", "DT"),
    ("these", "DT"),
    ("those", "DT"),
    ("each", "DT"),
    ("every", "DT"),
    ("some", "DT"),
    ("any", "DT"),
    ("no", "DT"),
    ("all", "DT"),
    ("in", "IN"),
    ("on", "IN"),
    ("at", "IN"),
    ("of", "IN"),
    ("for", "IN"),
    ("with", "IN"),
    ("by", "IN"),
    ("from", "IN"),
    ("into", "IN"),
    ("during", "IN"),
    ("after", "IN"),
    ("before", "IN"),
    ("about", "IN"),
    ("between", "IN"),
    ("through", "IN"),
    ("because", "IN"),
    ("as", "IN"),
    ("than", "IN"),
    ("to", "TO"),
    ("and", "CC"),
    ("or", "CC"),
    ("but", "CC"),
    ("nor", "CC"),
    ("he", "PRP"),
    ("she", "PRP"),
    ("it", "PRP"),
    ("they", "PRP"),
    ("we", "PRP"),
    ("i", "PRP"),
    ("you", "PRP"),
    ("him", "PRP"),
    ("her", "PRP$"),
    ("them", "PRP"),
    ("his", "PRP$"),
    ("its", "PRP$"),
    ("their", "PRP$"),
    ("our", "PRP$"),
    ("is", "VBZ"),
    ("has", "VBZ"),
    ("does", "VBZ"),
    ("are", "VBP"),
    ("have", "VBP"),
    ("do", "VBP"),
    ("was", "VBD"),
    ("were", "VBD"),
    ("had", "VBD"),
    ("did", "VBD"),
    ("be", "VB"),
    ("been", "VBN"),
    ("being", "VBG"),
    ("will", "MD"),
    ("would", "MD"),
    ("can", "MD"),
    ("could", "MD"),
    ("may", "MD"),
    ("might", "MD"),
    ("shall", "MD"),
    ("should", "MD"),
    ("must", "MD"),
    ("not", "RB"),
    ("very", "RB"),
    ("also", "RB"),
    ("what", "WP"),
    ("who", "WP"),
    ("whom", "WP"),
    ("which", "WDT"),
    ("whose", "WP$"),
    ("how", "WRB"),
    ("when", "WRB"),
    ("where", "WRB"),
    ("why", "WRB"),
];

const SUFFIXES: &[(&str, &str)] = &[
    ("ly", "RB"),
    ("ing", "VBG"),
    ("ed", "VBD"),
    ("tion", "NN"),
    ("sion", "NN"),
    ("ment", "NN"),
    ("ness", "NN"),
    ("ous", "JJ"),
    ("ful", "JJ"),
    ("able", "JJ"),
    ("ible", "JJ"),
    ("ive", "JJ"),
    ("al", "JJ"),
    ("ic", "JJ"),
    ("est", "JJS"),
    ("s", "NNS"),
];

fn lexicon(lower: &str) -> Option<&'static str> {
    LEXICON.iter().find(|(w, _)| *w == lower).map(|(_, t)| *t)
}

pub fn case_of(surface: &str) -> Case {
    let letters: Vec<char> = surface.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() {
        return Case::Other;
    }
    if letters.iter().all(|c| c.is_lowercase()) {
        return Case::Lower;
    }
    let first = surface.chars().next().unwrap();
    let rest_lower = letters[1..].iter().all(|c| c.is_lowercase());
    if first.is_uppercase() && rest_lower {
        return Case::Capitalized;
    }
    if letters.iter().all(|c| c.is_uppercase()) {
        return Case::Upper;
    }
    Case::Other
}

fn is_numeric(surface: &str) -> bool {
    surface.chars().any(|c| c.is_ascii_digit())
        && surface
            .chars()
            .all(|c| c.is_ascii_digit() || ".,%$:/-–".contains(c))
}

fn is_punct(surface: &str) -> bool {
    surface.chars().all(|c| c.is_ascii_punctuation())
}

fn pos_of(surface: &str, lower: &str, case: Case) -> &'static str {
    if is_punct(surface) {
        return match surface {
            "." | "?" | "!" => ".",
            "," => ",",
            _ => ":",
        };
    }
    if is_numeric(surface) {
        return "CD";
    }
    if let Some(tag) = lexicon(lower) {
        return tag;
    }
    if matches!(case, Case::Capitalized | Case::Upper) {
        return "NNP";
    }
    SUFFIXES
        .iter()
        .find(|(suf, _)| lower.len() > suf.len() + 2 && lower.ends_with(suf))
        .map(|(_, t)| *t)
        .unwrap_or("NN")
}

/// Tags a whitespace-tokenized sentence.
pub fn heuristic_tag<S: AsRef<str>>(sentence: &[S]) -> Vec<Token> {
    sentence
        .iter()
        .map(|w| {
            let surface = w.as_ref();
            let lower = surface.to_lowercase();
            let case = case_of(surface);
            let pos = pos_of(surface, &lower, case);
            let ner = if is_numeric(surface) {
                "NUMBER"
            } else if matches!(case, Case::Capitalized | Case::Upper) && lexicon(&lower).is_none() {
                "ENTITY"
            } else {
                "O"
            };
            Token {
                surface: surface.to_string(),
                pos: pos.to_string(),
                ner: ner.to_string(),
                case,
            }
        })
        .collect()
}
