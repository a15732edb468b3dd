//! Token encoders. The built-in [`CharTokenizer`] is the vocabulary of the
//! reference model.

use crate::corpus::Poem;
use std::collections::{BTreeSet, HashMap};

pub type TokenId = u32;

pub trait TokenEncoder {
    fn encode(&self, text: &str) -> Vec<TokenId>;
    fn vocab_size(&self) -> usize;
}

/// One token per character. Id 0 is the unknown token; known characters
/// follow in code-point order.
#[derive(Debug, Clone, PartialEq)]
pub struct CharTokenizer {
    chars: Vec<char>,
    index: HashMap<char, TokenId>,
}

impl CharTokenizer {
    pub const UNK: TokenId = 0;

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as TokenId + 1))
            .collect();
        CharTokenizer { chars, index }
    }

    /// Vocabulary over every character of the poems' contents.
    pub fn from_poems<'a>(poems: impl IntoIterator<Item = &'a Poem>) -> Self {
        Self::from_chars(poems.into_iter().flat_map(|p| p.content.chars()))
    }

    pub fn token(&self, c: char) -> TokenId {
        self.index.get(&c).copied().unwrap_or(Self::UNK)
    }

    pub fn decode(&self, id: TokenId) -> Option<char> {
        id.checked_sub(1).and_then(|i| self.chars.get(i as usize)).copied()
    }
}

impl TokenEncoder for CharTokenizer {
    fn encode(&self, text: &str) -> Vec<TokenId> {
        text.chars().map(|c| self.token(c)).collect()
    }

    fn vocab_size(&self) -> usize {
        self.chars.len() + 1
    }
}
