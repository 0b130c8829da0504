//! Template-generated triples whose question type follows from the answer's role.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{heuristic_tag, TagSet, Triple, Vocabulary};
use crate::model::{Lexicon, ModelConfig};

const PEOPLE: &[&str] = &[
    "Alice", "Bruno", "Chen", "Dana", "Emil", "Farah", "Goran", "Hana", "Ivan", "Julia", "Kofi",
    "Lena", "Marco", "Nadia", "Omar", "Priya",
];
const COMPANIES: &[&str] = &[
    "Acme", "Borealis", "Cobalt", "Dynamo", "Everest", "Fjord", "Granite", "Helix",
];
const CITIES: &[&str] = &[
    "Paris", "Lagos", "Quito", "Oslo", "Lima", "Cairo", "Hanoi", "Perth",
];
const VEHICLES: &[&str] = &["train", "boat", "bus", "plane", "bicycle"];
const REASONS: &[&[&str]] = &[
    &["the", "drought"],
    &["a", "strike"],
    &["the", "war"],
    &["high", "taxes"],
    &["the", "flood"],
];
const OBJECTS: &[&[&str]] = &[
    &["the", "bridge"],
    &["the", "museum"],
    &["the", "school"],
    &["the", "harbor"],
    &["the", "library"],
];
const VERBS: &[&str] = &["built", "designed", "funded", "opened", "repaired"];

/// Share of year questions phrased "in what year" instead of "when".
pub const IN_WHAT_YEAR_RATE: f64 = 0.25;

struct Builder {
    tokens: Vec<String>,
}

impl Builder {
    fn new() -> Self {
        Builder { tokens: Vec::new() }
    }

    /// Appends `words` and returns their span.
    fn push(&mut self, words: &[&str]) -> (usize, usize) {
        let start = self.tokens.len();
        self.tokens.extend(words.iter().map(|w| w.to_string()));
        (start, words.len())
    }
}

fn q(parts: &[&[&str]]) -> Vec<String> {
    parts
        .iter()
        .flat_map(|p| p.iter().map(|w| w.to_string()))
        .collect()
}

fn pick<'a, T: ?Sized>(rng: &mut ChaCha8Rng, xs: &'a [&'a T]) -> &'a T {
    xs.choose(rng).expect("non-empty pool")
}

fn year_question(rng: &mut ChaCha8Rng, aux: &str, rest: &[&str]) -> Vec<String> {
    if rng.gen_bool(IN_WHAT_YEAR_RATE) {
        q(&[&["in", "what", "year", aux], rest, &["?"]])
    } else {
        q(&[&["when", aux], rest, &["?"]])
    }
}

fn project(rng: &mut ChaCha8Rng) -> (Vec<String>, (usize, usize), Vec<String>) {
    let p = pick(rng, PEOPLE);
    let past = pick(rng, VERBS);
    let obj = pick(rng, OBJECTS);
    let city = pick(rng, CITIES);
    let year = rng.gen_range(1950..2021).to_string();
    let reason = pick(rng, REASONS);
    let mut b = Builder::new();
    let sp = b.push(&[p]);
    b.push(&[past]);
    let so = b.push(obj);
    b.push(&["in"]);
    let sc = b.push(&[city]);
    b.push(&["in"]);
    let sy = b.push(&[&year]);
    b.push(&["because", "of"]);
    let sr = b.push(reason);
    b.push(&["."]);
    let (span, question) = match rng.gen_range(0..5) {
        0 => (sp, q(&[&["who", past], obj, &["in", city, "?"]])),
        1 => (so, q(&[&["what", "was", past, "by", p, "in", city, "?"]])),
        2 => (sc, q(&[&["where", "was"], obj, &[past, "?"]])),
        3 => {
            let rest: Vec<&str> = obj.iter().copied().chain([past]).collect();
            (sy, year_question(rng, "was", &rest))
        }
        _ => (sr, q(&[&["why", "was"], obj, &[past, "?"]])),
    };
    (b.tokens, span, question)
}

fn trip(rng: &mut ChaCha8Rng) -> (Vec<String>, (usize, usize), Vec<String>) {
    let p = pick(rng, PEOPLE);
    let city = pick(rng, CITIES);
    let vehicle = pick(rng, VEHICLES);
    let year = rng.gen_range(1950..2021).to_string();
    let mut b = Builder::new();
    let sp = b.push(&[p]);
    b.push(&["traveled", "to"]);
    let sc = b.push(&[city]);
    b.push(&["by"]);
    let sv = b.push(&[vehicle]);
    b.push(&["in"]);
    let sy = b.push(&[&year]);
    b.push(&["."]);
    let (span, question) = match rng.gen_range(0..4) {
        0 => (
            sp,
            q(&[&["who", "traveled", "to", city, "by", vehicle, "?"]]),
        ),
        1 => (sc, q(&[&["where", "did", p, "travel", "by", vehicle, "?"]])),
        2 => (sv, q(&[&["how", "did", p, "travel", "to", city, "?"]])),
        _ => (sy, year_question(rng, "did", &[p, "travel", "to", city])),
    };
    (b.tokens, span, question)
}

fn hiring(rng: &mut ChaCha8Rng) -> (Vec<String>, (usize, usize), Vec<String>) {
    let org = pick(rng, COMPANIES);
    let p = pick(rng, PEOPLE);
    let city = pick(rng, CITIES);
    let mut b = Builder::new();
    let so = b.push(&[org]);
    b.push(&["hired"]);
    let sp = b.push(&[p]);
    b.push(&["in"]);
    let sc = b.push(&[city]);
    b.push(&["."]);
    let (span, question) = match rng.gen_range(0..3) {
        0 => (so, q(&[&["which", "company", "hired", p, "?"]])),
        1 => (sp, q(&[&["who", "did", org, "hire", "in", city, "?"]])),
        _ => (sc, q(&[&["where", "did", org, "hire", p, "?"]])),
    };
    (b.tokens, span, question)
}

fn award(rng: &mut ChaCha8Rng) -> (Vec<String>, (usize, usize), Vec<String>) {
    let year = rng.gen_range(1950..2021).to_string();
    let (winner, wh): (&str, &[&str]) = match rng.gen_range(0..3) {
        0 => (pick(rng, PEOPLE), &["who"]),
        1 => (pick(rng, COMPANIES), &["which", "company"]),
        _ => (pick(rng, CITIES), &["where"]),
    };
    let mut b = Builder::new();
    b.push(&["the", "prize", "went", "to"]);
    let sw = b.push(&[winner]);
    b.push(&["in", &year, "."]);
    let question = if wh == ["where"] {
        q(&[&["where", "did", "the", "prize", "go", "in", &year, "?"]])
    } else {
        q(&[wh, &["won", "the", "prize", "in", &year, "?"]])
    };
    (b.tokens, sw, question)
}

/// `count` distinct triples (by sentence and answer span) drawn from `seed`.
pub fn synthetic_corpus(count: usize, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (words, (start, len), question) = match rng.gen_range(0..4) {
            0 => project(&mut rng),
            1 => trip(&mut rng),
            2 => hiring(&mut rng),
            _ => award(&mut rng),
        };
        if seen.insert((words.join(" "), start)) {
            let t = Triple::new(heuristic_tag(&words), start, len, question)
                .expect("templates produce valid spans");
            out.push(t);
        }
    }
    out
}

/// Two-example batch and matching lexicon for full gradient audits.
///
/// The model has hidden size 8 and a 20-word vocabulary; one source word is
/// out of vocabulary so the copy path carries gradient.
pub fn gradcheck_fixture() -> (Vec<Triple>, Lexicon, ModelConfig) {
    let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let triples = vec![
        Triple::new(
            heuristic_tag(&words("Ann founded Zyx in 1990 .")),
            4,
            1,
            words("when did Ann found Zyx ?"),
        )
        .expect("valid fixture"),
        Triple::new(
            heuristic_tag(&words("Bob moved to Rome by train in 1975 .")),
            3,
            3,
            words("in what year did Bob move ?"),
        )
        .expect("valid fixture"),
    ];
    let vocab = Vocabulary::with_words([
        "when", "did", "Ann", "found", "founded", "in", "what", "year", "Bob", "move", "moved",
        "to", "by", "?", ".", "train",
    ])
    .expect("distinct words");
    let lex = Lexicon {
        pos: TagSet::pos_of(&triples),
        ner: TagSet::ner_of(&triples),
        vocab,
    };
    let config = lex.model_config(&ModelConfig {
        word_dim: 6,
        feat_dim: 3,
        hidden_dim: 8,
        num_layers: 2,
        ff_dim: 8,
        vocab_size: 0,
        pos_size: 0,
        ner_size: 0,
        use_answer_hidden_states: true,
    });
    (triples, lex, config)
}
