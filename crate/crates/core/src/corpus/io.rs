//! JSON-lines triple files and pretrained embedding text files.
//!
//! Each line holds one triple:
//!
//! ```text
//! {"sentence":[{"w":"OPEC","pos":"NNP","ner":"ENTITY","case":"upper"},...],
//!  "answer_start":3,"answer_len":2,"question":["why","did",...]}
//! ```
//!
//! The question type is never stored; it is re-derived on load.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::tagger::heuristic_tag;
use super::{Case, Token, Triple};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct TokenRecord<'a> {
    w: &'a str,
    pos: &'a str,
    ner: &'a str,
    case: &'a str,
}

#[derive(Serialize)]
struct TripleRecord<'a> {
    sentence: Vec<TokenRecord<'a>>,
    answer_start: usize,
    answer_len: usize,
    question: &'a [String],
}

pub fn triples_to_jsonl(triples: &[Triple]) -> String {
    let mut out = String::new();
    for t in triples {
        let rec = TripleRecord {
            sentence: t
                .sentence
                .iter()
                .map(|k| TokenRecord {
                    w: &k.surface,
                    pos: &k.pos,
                    ner: &k.ner,
                    case: k.case.name(),
                })
                .collect(),
            answer_start: t.answer_start,
            answer_len: t.answer_len,
            question: &t.question,
        };
        let line = serde_json::to_string(&rec).expect("serializable record");
        writeln!(out, "{line}").unwrap();
    }
    out
}

pub fn write_triples(triples: &[Triple], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, triples_to_jsonl(triples)).map_err(|e| Error::io(path, e))
}

/// Reads fully tagged triples.
pub fn read_triples(path: impl AsRef<Path>) -> Result<Vec<Triple>> {
    read_with(path.as_ref(), false)
}

/// Reads triples whose tokens may be bare strings (or whose sentence may be
/// one whitespace-separated string); missing tags come from the heuristic
/// tagger.
pub fn read_raw_triples(path: impl AsRef<Path>) -> Result<Vec<Triple>> {
    read_with(path.as_ref(), true)
}

fn read_with(path: &Path, lenient: bool) -> Result<Vec<Triple>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, &name, i + 1, lenient))
        .collect()
}

struct LineCtx<'a> {
    path: &'a str,
    line: usize,
}

impl LineCtx<'_> {
    fn parse(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

fn parse_line(line: &str, path: &str, lineno: usize, lenient: bool) -> Result<Triple> {
    let ctx = LineCtx { path, line: lineno };
    let v: Value = serde_json::from_str(line)
        .map_err(|e| ctx.parse("<record>", format!("invalid JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| ctx.parse("<record>", "expected a JSON object"))?;

    let sentence = parse_sentence(obj.get("sentence"), &ctx, lenient)?;
    let index = |field: &str| -> Result<usize> {
        obj.get(field)
            .ok_or_else(|| ctx.parse(field, "missing"))?
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| ctx.parse(field, "expected a non-negative integer"))
    };
    let answer_start = index("answer_start")?;
    let answer_len = index("answer_len")?;
    let question = parse_question(obj.get("question"), &ctx)?;

    Triple::new(sentence, answer_start, answer_len, question).map_err(|e| Error::Validation {
        path: path.to_string(),
        line: lineno,
        message: match e {
            Error::Contract(m) => m,
            other => other.to_string(),
        },
    })
}

fn parse_question(v: Option<&Value>, ctx: &LineCtx) -> Result<Vec<String>> {
    let v = v.ok_or_else(|| ctx.parse("question", "missing"))?;
    let words: Vec<String> = match v {
        Value::String(s) => s.split_whitespace().map(String::from).collect(),
        Value::Array(items) => items
            .iter()
            .map(|w| {
                w.as_str()
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .ok_or_else(|| ctx.parse("question", "expected nonempty strings"))
            })
            .collect::<Result<_>>()?,
        _ => return Err(ctx.parse("question", "expected an array of strings")),
    };
    if words.is_empty() {
        return Err(ctx.parse("question", "empty question"));
    }
    Ok(words)
}

fn parse_sentence(v: Option<&Value>, ctx: &LineCtx, lenient: bool) -> Result<Vec<Token>> {
    let v = v.ok_or_else(|| ctx.parse("sentence", "missing"))?;
    let items: Vec<Value> = match v {
        Value::Array(items) => items.clone(),
        Value::String(s) if lenient => s
            .split_whitespace()
            .map(|w| Value::String(w.to_string()))
            .collect(),
        _ => return Err(ctx.parse("sentence", "expected an array of tokens")),
    };
    if items.is_empty() {
        return Err(ctx.parse("sentence", "empty sentence"));
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_token(item, i, ctx, lenient))
        .collect()
}

fn parse_token(v: &Value, i: usize, ctx: &LineCtx, lenient: bool) -> Result<Token> {
    let field = |name: &str| format!("sentence[{i}].{name}");
    if let (Value::String(w), true) = (v, lenient) {
        if w.is_empty() {
            return Err(ctx.parse(&field("w"), "empty token"));
        }
        return Ok(heuristic_tag(&[w.as_str()]).remove(0));
    }
    let obj = v
        .as_object()
        .ok_or_else(|| ctx.parse(&format!("sentence[{i}]"), "expected a token object"))?;
    let w = obj
        .get("w")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ctx.parse(&field("w"), "expected a nonempty string"))?;
    let fallback = || heuristic_tag(&[w]).remove(0);
    let text = |name: &str| -> Result<Option<String>> {
        match obj.get(name) {
            None if lenient => Ok(None),
            None => Err(ctx.parse(&field(name), "missing")),
            Some(Value::String(s)) if !s.is_empty() => Ok(Some(s.clone())),
            Some(_) => Err(ctx.parse(&field(name), "expected a nonempty string")),
        }
    };
    let pos = text("pos")?.unwrap_or_else(|| fallback().pos);
    let ner = text("ner")?.unwrap_or_else(|| fallback().ner);
    let case = match text("case")? {
        Some(c) => Case::parse(&c)
            .ok_or_else(|| ctx.parse(&field("case"), format!("unknown case class `{c}`")))?,
        None => fallback().case,
    };
    Ok(Token {
        surface: w.to_string(),
        pos,
        ner,
        case,
    })
}

/// Reads `word v1 v2 ... vd` lines, keeping only words in `wanted`.
///
/// Returns the dimension and a map word → vector.
pub fn read_pretrained(
    path: impl AsRef<Path>,
    wanted: impl Fn(&str) -> bool,
) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut dim = None;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let Some(word) = parts.next() else { continue };
        let ctx = LineCtx {
            path: &name,
            line: i + 1,
        };
        let vals: Vec<f64> = parts
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| ctx.parse("vector", format!("bad number `{s}`")))
            })
            .collect::<Result<_>>()?;
        if vals.is_empty() {
            return Err(ctx.parse("vector", "no values"));
        }
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(ctx.parse("vector", format!("expected {d} values, got {}", vals.len())))
            }
            _ => {}
        }
        if wanted(word) {
            out.insert(word.to_string(), vals);
        }
    }
    let dim = dim.ok_or_else(|| Error::Config(format!("{name}: no embeddings")))?;
    Ok((dim, out))
}
