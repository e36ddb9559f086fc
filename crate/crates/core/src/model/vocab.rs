//! Token id conventions.
//!
//! Source side: `PAD`, `END`, then one id per channel symbol.
//! Target side: `PAD`, `BOS`, `EOS`, `UNK`, then one id per word.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::synth::SYMBOL_COUNT;

pub const PAD: u32 = 0;
pub const SRC_END: u32 = 1;
pub const SRC_OFFSET: u32 = 2;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const WORD_OFFSET: u32 = 4;

/// Size of the source vocabulary for the synthetic symbol inventory.
pub const SRC_VOCAB: usize = (SYMBOL_COUNT + SRC_OFFSET) as usize;

/// Maps channel symbols to source ids and appends the end marker.
pub fn encode_source(symbols: &[u32]) -> Vec<u32> {
    symbols.iter().map(|s| s + SRC_OFFSET).chain([SRC_END]).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        Vocab::new(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Duplicates after the first occurrence are ignored.
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut out = Vocab { words: Vec::new(), index: HashMap::new() };
        for w in words {
            let w = w.into();
            if !out.index.contains_key(&w) {
                out.index.insert(w.clone(), WORD_OFFSET + out.words.len() as u32);
                out.words.push(w);
            }
        }
        out
    }

    /// Sorted word list of the synthetic grammar.
    pub fn synthetic() -> Self {
        let mut words = crate::corpus::synth::vocabulary();
        words.sort_unstable();
        Vocab::new(words)
    }

    /// Sorted set of every word appearing in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<&str> = texts.into_iter().flat_map(str::split_whitespace).collect();
        words.sort_unstable();
        words.dedup();
        Vocab::new(words)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Output vocabulary size including special tokens.
    pub fn size(&self) -> usize {
        self.words.len() + WORD_OFFSET as usize
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// `BOS w1 .. wn` and `w1 .. wn EOS`: decoder input and target.
    pub fn encode_target(&self, text: &str) -> (Vec<u32>, Vec<u32>) {
        let ids: Vec<u32> = text.split_whitespace().map(|w| self.id(w)).collect();
        let mut input = Vec::with_capacity(ids.len() + 1);
        input.push(BOS);
        input.extend_from_slice(&ids);
        let mut target = ids;
        target.push(EOS);
        (input, target)
    }

    /// Joins word tokens with spaces, stopping at `EOS`. Other special ids
    /// are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out: Vec<&str> = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if id >= WORD_OFFSET {
                if let Some(w) = self.words.get((id - WORD_OFFSET) as usize) {
                    out.push(w);
                }
            }
        }
        out.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let v = Vocab::new(["cleared", "land", "runway"]);
        assert_eq!(v.size(), 7);
        let (inp, tgt) = v.encode_target("runway cleared zulu");
        assert_eq!(inp, vec![BOS, 6, 4, UNK]);
        assert_eq!(tgt, vec![6, 4, UNK, EOS]);
        assert_eq!(v.decode(&tgt), "runway cleared");
        assert_eq!(encode_source(&[0, 63]), vec![2, 65, SRC_END]);
    }

    #[test]
    fn serde_as_word_list() {
        let v = Vocab::synthetic();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&s).unwrap(), v);
        assert_eq!(SRC_VOCAB, 66);
    }
}
