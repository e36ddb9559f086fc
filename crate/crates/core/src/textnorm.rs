//! Transcript text normalization: lowercasing, numeral expansion,
//! UNINTELLIGIBLE detection and whitespace cleanup.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextNormError {
    #[error("not a numeral: {0:?}")]
    NotANumeral(String),
    #[error("numeral too large (must be below 1,000,000): {0}")]
    TooLarge(String),
    #[error("text is empty after normalization")]
    EmptyAfterNormalization,
}

const ONES: [&str; 20] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];

const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

/// Reads a digit string as a British-style cardinal ("220" is
/// "two hundred and twenty"). Leading zeros are ignored.
pub fn number_to_words(numeral: &str) -> Result<String, TextNormError> {
    if numeral.is_empty() || !numeral.bytes().all(|b| b.is_ascii_digit()) {
        return Err(TextNormError::NotANumeral(numeral.to_owned()));
    }
    let trimmed = numeral.trim_start_matches('0');
    if trimmed.len() > 6 {
        return Err(TextNormError::TooLarge(numeral.to_owned()));
    }
    let value: u32 = if trimmed.is_empty() { 0 } else { trimmed.parse().expect("digits") };
    if value >= 1_000_000 {
        return Err(TextNormError::TooLarge(numeral.to_owned()));
    }
    Ok(cardinal(value))
}

fn below_hundred(n: u32) -> String {
    debug_assert!(n < 100);
    if n < 20 {
        ONES[n as usize].to_owned()
    } else if n.is_multiple_of(10) {
        TENS[(n / 10) as usize].to_owned()
    } else {
        format!("{} {}", TENS[(n / 10) as usize], ONES[(n % 10) as usize])
    }
}

fn below_thousand(n: u32) -> String {
    debug_assert!(n < 1000);
    let (hundreds, rest) = (n / 100, n % 100);
    match (hundreds, rest) {
        (0, r) => below_hundred(r),
        (h, 0) => format!("{} hundred", ONES[h as usize]),
        (h, r) => format!("{} hundred and {}", ONES[h as usize], below_hundred(r)),
    }
}

fn cardinal(n: u32) -> String {
    let (thousands, rest) = (n / 1000, n % 1000);
    if thousands == 0 {
        return below_thousand(rest);
    }
    let head = format!("{} thousand", below_thousand(thousands));
    match rest {
        0 => head,
        r if r < 100 => format!("{head} and {}", below_hundred(r)),
        r => format!("{head} {}", below_thousand(r)),
    }
}

/// Reads each digit separately ("220" is "two two zero").
pub fn digits_to_words(numeral: &str) -> Result<String, TextNormError> {
    if numeral.is_empty() || !numeral.bytes().all(|b| b.is_ascii_digit()) {
        return Err(TextNormError::NotANumeral(numeral.to_owned()));
    }
    Ok(numeral
        .bytes()
        .map(|b| ONES[(b - b'0') as usize])
        .collect::<Vec<_>>()
        .join(" "))
}

/// True iff `text` contains the standalone token `UNINTELLIGIBLE`, compared
/// case-insensitively. Tokens are delimited by anything that is not a
/// letter, digit or apostrophe, so bracketed markers also count.
pub fn is_unintelligible(text: &str) -> bool {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .any(|tok| tok.eq_ignore_ascii_case("unintelligible"))
}

/// Text that satisfies the normalized-transcript invariants: only `a-z`,
/// apostrophe, hyphen and single interior spaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedText(String);

impl NormalizedText {
    /// The empty transcript (zero words).
    pub fn empty() -> Self {
        NormalizedText(String::new())
    }

    /// Wraps `s` if it already satisfies the invariants.
    pub fn new_checked(s: &str) -> Option<Self> {
        is_normalized(s).then(|| NormalizedText(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn words(&self) -> Vec<&str> {
        if self.0.is_empty() {
            Vec::new()
        } else {
            self.0.split(' ').collect()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for NormalizedText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn is_kept(c: char) -> bool {
    c.is_ascii_lowercase() || c == '\'' || c == '-'
}

/// Checks the normalized-text invariants without modifying anything.
pub fn is_normalized(s: &str) -> bool {
    if s.is_empty() {
        return true;
    }
    if s.starts_with(' ') || s.ends_with(' ') || s.contains("  ") {
        return false;
    }
    s.chars().all(|c| c == ' ' || is_kept(c))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    /// Read numerals digit by digit instead of as cardinals.
    pub digit_serial: bool,
}

/// Normalizes with default options (cardinal numerals).
pub fn normalize(text: &str) -> Result<NormalizedText, TextNormError> {
    normalize_with(text, NormalizeOptions::default())
}

/// Applies, in order: lowercase, digit-run expansion, stripping of anything
/// other than letters/apostrophe/hyphen/space, whitespace collapse and trim.
///
/// Digit runs of a million or more cannot be read as cardinals and fall
/// back to digit-serial reading.
pub fn normalize_with(text: &str, opts: NormalizeOptions) -> Result<NormalizedText, TextNormError> {
    let lowered = text.to_lowercase();

    let mut expanded = String::with_capacity(lowered.len() + 16);
    let mut chars = lowered.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if c.is_ascii_digit() {
            let mut end = start + 1;
            while let Some(&(i, d)) = chars.peek() {
                if !d.is_ascii_digit() {
                    break;
                }
                end = i + 1;
                chars.next();
            }
            let run = &lowered[start..end];
            let words = if opts.digit_serial {
                digits_to_words(run)?
            } else {
                match number_to_words(run) {
                    Ok(w) => w,
                    Err(TextNormError::TooLarge(_)) => digits_to_words(run)?,
                    Err(e) => return Err(e),
                }
            };
            expanded.push(' ');
            expanded.push_str(&words);
            expanded.push(' ');
        } else {
            expanded.push(c);
        }
    }

    let mut out = String::with_capacity(expanded.len());
    let mut pending_space = false;
    for c in expanded.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else if is_kept(c) {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
        // everything else is dropped without acting as a separator
    }

    if out.is_empty() {
        return Err(TextNormError::EmptyAfterNormalization);
    }
    Ok(NormalizedText(out))
}
