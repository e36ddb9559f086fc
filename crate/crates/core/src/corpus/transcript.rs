//! Parenthesized transcript records:
//!
//! ```text
//! # comment
//! ((FROM AA123) (TO DFW_TWR) (TIMES 10.00 16.50) (TEXT american one twenty three contact tower))
//! ```
//!
//! `TIMES` and `TEXT` are required, `FROM`/`TO` optional, any other tagged
//! group is skipped. Malformed records are reported with their line number
//! and parsing resumes at the next record.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub from_tag: String,
    pub to_tag: String,
    pub start_s: f64,
    pub end_s: f64,
    pub text_raw: String,
    pub source_file: String,
    /// Ordinal of the record group within its file, counting malformed ones.
    pub record_index: usize,
}

impl TransmissionRecord {
    /// Renders the record in the transcript grammar. Times use the shortest
    /// representation that parses back to the same value.
    pub fn to_grammar(&self) -> String {
        let mut s = String::from("(");
        if !self.from_tag.is_empty() {
            let _ = write!(s, "(FROM {}) ", self.from_tag);
        }
        if !self.to_tag.is_empty() {
            let _ = write!(s, "(TO {}) ", self.to_tag);
        }
        let _ = write!(s, "(TIMES {:?} {:?}) (TEXT {}))", self.start_s, self.end_s, self.text_raw);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("expected '(' but found {0:?}")]
    UnexpectedToken(String),
    #[error("TIMES needs two non-negative decimals")]
    BadTimes,
    #[error("end time {end} is not after start time {start}")]
    EndBeforeStart { start: String, end: String },
    #[error("record has no {0} group")]
    MissingGroup(&'static str),
    #[error("TEXT group is empty")]
    EmptyText,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{source_file}:{line}: malformed record: {kind}")]
pub struct MalformedRecord {
    pub source_file: String,
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<TransmissionRecord>,
    pub errors: Vec<MalformedRecord>,
}

impl ParseOutcome {
    /// Record groups encountered, valid or not.
    pub fn attempted(&self) -> usize {
        self.records.len() + self.errors.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

#[derive(Debug, Clone)]
struct Token<'a> {
    tok: Tok<'a>,
    line: usize,
    /// True if only whitespace precedes this token on its line.
    line_start: bool,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut line_start = true;
    let mut depth: usize = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                line += 1;
                line_start = true;
                i += 1;
            }
            b' ' | b'\t' | b'\r' | b'\x0c' => i += 1,
            b'#' if depth == 0 => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'(' => {
                out.push(Token { tok: Tok::Open, line, line_start });
                depth += 1;
                line_start = false;
                i += 1;
            }
            b')' => {
                out.push(Token { tok: Tok::Close, line, line_start });
                depth = depth.saturating_sub(1);
                line_start = false;
                i += 1;
            }
            _ => {
                let start = i;
                while i < bytes.len() && !matches!(bytes[i], b'(' | b')' | b' ' | b'\t' | b'\r' | b'\n' | b'\x0c') {
                    i += 1;
                }
                // split on byte boundaries that are always ASCII, so this is valid UTF-8
                out.push(Token { tok: Tok::Atom(&text[start..i]), line, line_start });
                line_start = false;
            }
        }
    }
    out
}

fn parse_time(s: &str) -> Option<f64> {
    if !s.bytes().all(|b| b.is_ascii_digit() || b == b'.') || !s.bytes().any(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0)
}

struct Group<'a> {
    tag: &'a str,
    atoms: Vec<&'a str>,
}

/// Parses every record in `text`, collecting malformed ones as errors.
pub fn parse_transcript(text: &str, source_file: &str) -> ParseOutcome {
    let tokens = tokenize(text);
    let mut outcome = ParseOutcome::default();
    let mut pos = 0;
    let mut record_index = 0;

    let err = |line, kind| MalformedRecord { source_file: source_file.to_owned(), line, kind };

    while pos < tokens.len() {
        let head = &tokens[pos];
        let line = head.line;
        match &head.tok {
            Tok::Open => {}
            Tok::Close => {
                outcome.errors.push(err(line, ParseErrorKind::Unbalanced));
                record_index += 1;
                pos += 1;
                continue;
            }
            Tok::Atom(a) => {
                outcome.errors.push(err(line, ParseErrorKind::UnexpectedToken((*a).to_owned())));
                record_index += 1;
                pos = resync(&tokens, pos + 1);
                continue;
            }
        }

        match read_record(&tokens, pos + 1) {
            Ok((groups, next)) => {
                pos = next;
                match build_record(&groups, source_file, record_index) {
                    Ok(r) => outcome.records.push(r),
                    Err(kind) => outcome.errors.push(err(line, kind)),
                }
            }
            Err(kind) => {
                outcome.errors.push(err(line, kind));
                pos = resync(&tokens, pos + 1);
            }
        }
        record_index += 1;
    }
    outcome
}

/// `((` at the start of a line.
fn is_record_start(tokens: &[Token<'_>], i: usize) -> bool {
    tokens[i].line_start
        && tokens[i].tok == Tok::Open
        && tokens.get(i + 1).is_some_and(|t| t.tok == Tok::Open)
}

/// Next token that opens a record at the start of a line.
fn resync(tokens: &[Token<'_>], from: usize) -> usize {
    (from..tokens.len())
        .find(|&i| is_record_start(tokens, i))
        .unwrap_or(tokens.len())
}

/// Reads groups after a record's opening paren up to its closing paren.
fn read_record<'a>(tokens: &[Token<'a>], mut pos: usize) -> Result<(Vec<Group<'a>>, usize), ParseErrorKind> {
    let mut groups = Vec::new();
    loop {
        let Some(t) = tokens.get(pos) else {
            return Err(ParseErrorKind::Unbalanced);
        };
        match &t.tok {
            Tok::Close => return Ok((groups, pos + 1)),
            Tok::Atom(a) => return Err(ParseErrorKind::UnexpectedToken((*a).to_owned())),
            Tok::Open => {
                // a new record starting on a fresh line means this one never closed
                if is_record_start(tokens, pos) {
                    return Err(ParseErrorKind::Unbalanced);
                }
                pos += 1;
                let tag = match tokens.get(pos).map(|t| &t.tok) {
                    Some(Tok::Atom(a)) => {
                        pos += 1;
                        *a
                    }
                    Some(Tok::Close) => "",
                    Some(Tok::Open) => "",
                    None => return Err(ParseErrorKind::Unbalanced),
                };
                let mut atoms = Vec::new();
                let mut depth = 1usize;
                while depth > 0 {
                    let Some(t) = tokens.get(pos) else {
                        return Err(ParseErrorKind::Unbalanced);
                    };
                    match &t.tok {
                        Tok::Open if is_record_start(tokens, pos) => return Err(ParseErrorKind::Unbalanced),
                        Tok::Open => depth += 1,
                        Tok::Close => depth -= 1,
                        Tok::Atom(a) if depth == 1 => atoms.push(*a),
                        Tok::Atom(_) => {}
                    }
                    pos += 1;
                }
                groups.push(Group { tag, atoms });
            }
        }
    }
}

fn build_record(groups: &[Group<'_>], source_file: &str, record_index: usize) -> Result<TransmissionRecord, ParseErrorKind> {
    let mut from_tag = String::new();
    let mut to_tag = String::new();
    let mut times = None;
    let mut text = None;
    for g in groups {
        match g.tag {
            "FROM" => from_tag = g.atoms.join(" "),
            "TO" => to_tag = g.atoms.join(" "),
            "TIMES" => {
                let [a, b] = g.atoms[..] else {
                    return Err(ParseErrorKind::BadTimes);
                };
                let (start, end) = parse_time(a).zip(parse_time(b)).ok_or(ParseErrorKind::BadTimes)?;
                if end <= start {
                    return Err(ParseErrorKind::EndBeforeStart { start: a.to_owned(), end: b.to_owned() });
                }
                times = Some((start, end));
            }
            "TEXT" => text = Some(g.atoms.join(" ")),
            _ => {}
        }
    }
    let (start_s, end_s) = times.ok_or(ParseErrorKind::MissingGroup("TIMES"))?;
    let text_raw = text.ok_or(ParseErrorKind::MissingGroup("TEXT"))?;
    if text_raw.is_empty() {
        return Err(ParseErrorKind::EmptyText);
    }
    Ok(TransmissionRecord {
        from_tag,
        to_tag,
        start_s,
        end_s,
        text_raw,
        source_file: source_file.to_owned(),
        record_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let out = parse_transcript(
            "((FROM AA123) (TIMES 10.00 16.50) (TEXT american one twenty three contact tower))",
            "f1",
        );
        assert!(out.errors.is_empty());
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.from_tag, "AA123");
        assert_eq!(r.to_tag, "");
        assert_eq!(r.start_s, 10.0);
        assert_eq!(r.end_s, 16.5);
        assert_eq!(r.text_raw, "american one twenty three contact tower");
        assert_eq!(r.source_file, "f1");
    }

    #[test]
    fn end_not_after_start() {
        let out = parse_transcript("((TIMES 5.0 5.0) (TEXT x))", "f");
        assert!(out.records.is_empty());
        assert_eq!(out.errors.len(), 1);
        assert!(matches!(out.errors[0].kind, ParseErrorKind::EndBeforeStart { .. }));
    }

    #[test]
    fn recovers_after_malformed_record() {
        let text = "\
# header comment
((FROM A) (TIMES 1.0 2.0) (TEXT one))
((FROM B) (TIMES 3.0 x4) (TEXT two))
((TIMES 5.0 6.0) (TEXT three) (NOTE skipped group (nested)))
((TIMES 7.0 8.0) (TEXT unclosed
((TO TWR) (TIMES 9.0 10.5) (TEXT four))
";
        let out = parse_transcript(text, "f");
        let texts: Vec<&str> = out.records.iter().map(|r| r.text_raw.as_str()).collect();
        assert_eq!(texts, ["one", "three", "four"]);
        assert_eq!(out.errors.len(), 2);
        assert_eq!(out.errors[0].line, 3);
        assert_eq!(out.errors[0].kind, ParseErrorKind::BadTimes);
        assert_eq!(out.errors[1].line, 5);
        assert_eq!(out.errors[1].kind, ParseErrorKind::Unbalanced);
        assert_eq!(out.records[2].record_index, 4);
        assert_eq!(out.records[2].to_tag, "TWR");
    }

    #[test]
    fn missing_and_empty_groups() {
        let out = parse_transcript("((TEXT a))\n((TIMES 1 2))\n((TIMES 1 2) (TEXT))", "f");
        let kinds: Vec<_> = out.errors.iter().map(|e| e.kind.clone()).collect();
        assert_eq!(
            kinds,
            [
                ParseErrorKind::MissingGroup("TIMES"),
                ParseErrorKind::MissingGroup("TEXT"),
                ParseErrorKind::EmptyText
            ]
        );
    }

    #[test]
    fn stray_tokens() {
        let out = parse_transcript(")\nhello\n((TIMES 1 2) (TEXT ok))", "f");
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.errors.len(), 2);
        assert_eq!(out.attempted(), 3);
    }

    #[test]
    fn grammar_round_trip() {
        let r = TransmissionRecord {
            from_tag: "DAL7".into(),
            to_tag: String::new(),
            start_s: 0.1 + 0.2,
            end_s: 12.345678901,
            text_raw: "delta seven cleared to land".into(),
            source_file: "x".into(),
            record_index: 0,
        };
        let out = parse_transcript(&r.to_grammar(), "x");
        assert_eq!(out.records, vec![r]);
    }
}
