//! Character vocabulary with reserved special tokens.  Index layout is
//! fixed: blank 0, sos 1, eos 2, unk 3, then the characters in insertion
//! order, so serialized models keep stable indices.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Number of reserved indices before the first character.
pub const SPECIALS: usize = 4;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub language: String,
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl Vocabulary {
    pub fn new(language: &str, chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut list = Vec::new();
        let mut index = BTreeMap::new();
        for c in chars {
            if index.insert(c, SPECIALS + list.len()).is_some() {
                return Err(Error::config(alloc::format!("vocabulary: duplicate char {c:?}")));
            }
            list.push(c);
        }
        Ok(Vocabulary { language: String::from(language), chars: list, index })
    }

    /// Total index space including the four specials.
    pub fn size(&self) -> usize {
        SPECIALS + self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn char_index(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_at(&self, idx: usize) -> Option<char> {
        idx.checked_sub(SPECIALS).and_then(|i| self.chars.get(i)).copied()
    }

    /// Encode text to character indices; unknown characters map to `UNK`.
    /// Returns the tokens and how many characters were unknown.
    pub fn encode(&self, text: &str) -> (Vec<usize>, usize) {
        let mut unk = 0;
        let tokens = text
            .chars()
            .map(|c| {
                self.char_index(c).unwrap_or_else(|| {
                    unk += 1;
                    UNK
                })
            })
            .collect();
        (tokens, unk)
    }

    /// Decode indices back to text.  Specials are dropped; unk renders as
    /// the replacement character.
    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .filter_map(|&t| match t {
                BLANK | SOS | EOS => None,
                UNK => Some('\u{fffd}'),
                _ => self.char_at(t),
            })
            .collect()
    }
}
