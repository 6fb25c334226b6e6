use std::collections::HashMap;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Index reserved for unknown words and unknown characters.
pub const UNKNOWN: usize = 0;

/// Word and character inventories shared by every task of a model.
///
/// Index 0 of each inventory is the unknown slot; known entries follow in
/// canonical order (descending frequency, then lexicographic).
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    chars: Vec<char>,
    char_index: HashMap<char, usize>,
}

impl Vocabulary {
    /// Builds from known entries in index order (unknown slots excluded).
    pub fn from_lists(words: Vec<String>, chars: Vec<char>) -> Result<Self> {
        let mut word_index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if word_index.insert(w.clone(), i + 1).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary word {w:?}")));
            }
        }
        let mut char_index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if char_index.insert(c, i + 1).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary char {c:?}")));
            }
        }
        Ok(Vocabulary {
            words,
            word_index,
            chars,
            char_index,
        })
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(UNKNOWN)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNKNOWN)
    }

    /// Number of word rows, including the unknown slot.
    pub fn num_words(&self) -> usize {
        self.words.len() + 1
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len() + 1
    }

    /// Known words in index order, starting at index 1.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.word_index.contains_key(word)
    }
}

fn canonical<K: Ord + Clone>(counts: HashMap<K, usize>, min_count: usize) -> Vec<K> {
    let mut entries: Vec<(K, usize)> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_count)
        .collect();
    entries.sort_by(|(a, na), (b, nb)| nb.cmp(na).then_with(|| a.cmp(b)));
    entries.into_iter().map(|(k, _)| k).collect()
}

/// Shared vocabulary over several corpora. Words seen at least `min_count`
/// times get an index; every observed character does.
pub fn build_vocab(corpora: &[&Corpus], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidArgument(
            "min_count must be at least 1".into(),
        ));
    }
    let mut word_counts: HashMap<String, usize> = HashMap::new();
    let mut char_counts: HashMap<char, usize> = HashMap::new();
    for corpus in corpora {
        for sentence in corpus.iter() {
            for token in sentence.tokens() {
                *word_counts.entry(token.clone()).or_default() += 1;
                for c in token.chars() {
                    *char_counts.entry(c).or_default() += 1;
                }
            }
        }
    }
    Vocabulary::from_lists(canonical(word_counts, min_count), canonical(char_counts, 1))
}
