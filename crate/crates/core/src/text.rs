//! Caption tokenisation and the word vocabulary.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;
pub const NUM_SPECIAL: u32 = 5;

const SPECIAL_NAMES: [&str; NUM_SPECIAL as usize] = ["[PAD]", "[SOS]", "[EOS]", "[MASK]", "[UNK]"];

/// Lowercases, splits on whitespace, and splits punctuation into its own tokens.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in sentence.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() || ch == '\'' {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from captions, keeping tokens seen at least
    /// `min_freq` times. Ids are assigned by descending frequency, ties
    /// broken lexicographically, after the special tokens.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for c in captions {
            for tok in tokenize(c) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(ranked.into_iter().map(|(w, _)| w).collect())
    }

    /// Vocabulary over the given non-special words, in order.
    pub fn from_words(words: Vec<String>) -> Self {
        let mut all: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        all.extend(words);
        let mut v = Self { words: all, index: BTreeMap::new() };
        v.reindex();
        v
    }

    /// Rebuilds the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= NUM_SPECIAL as usize
    }

    pub fn words(&self) -> &[String] {
        &self.words[NUM_SPECIAL as usize..]
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        self.words.get(id as usize).map_or("[UNK]", String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIAL
    }

    /// Token ids of a sentence, without SOS/EOS.
    pub fn encode(&self, sentence: &str) -> Vec<u32> {
        tokenize(sentence).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined words, skipping special tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids.iter().filter(|&&id| !Self::is_special(id)) {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.word(id));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(tokenize("A man, running FAST."), ["a", "man", ",", "running", "fast", "."]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
    }

    #[test]
    fn ids_follow_frequency_then_lexicographic_order() {
        let v = Vocabulary::build(["b a", "a c", "a b"], 1);
        assert_eq!(v.words(), ["a", "b", "c"]);
        assert_eq!(v.id("a"), NUM_SPECIAL);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn min_frequency_drops_rare_words() {
        let v = Vocabulary::build(["x y", "x"], 2);
        assert_eq!(v.words(), ["x"]);
        assert_eq!(v.encode("x y"), [NUM_SPECIAL, UNK]);
    }

    #[test]
    fn round_trips_up_to_casing() {
        let v = Vocabulary::build(["Someone is Cooking pasta ."], 1);
        let ids = v.encode("someone is cooking pasta .");
        assert_eq!(v.decode(&ids), "someone is cooking pasta .");
        let mut with_specials = alloc::vec![SOS];
        with_specials.extend(ids);
        with_specials.push(EOS);
        assert_eq!(v.decode(&with_specials), "someone is cooking pasta .");
    }
}
