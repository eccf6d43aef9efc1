//! Token/id mapping and decoder-facing token sequences.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Bidirectional token map. Ids `0..4` are reserved for the special tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from words; specials are skipped, the rest sorted
    /// and deduplicated after the reserved ids.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut content: Vec<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !SPECIALS.contains(&w.as_str()))
            .collect();
        content.sort();
        content.dedup();
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(content).collect();
        Self::try_from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Id of `token`; unknown words map to `<unk>`.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Wraps words in `<bos> ... <eos>`.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> TokenSequence {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend(words.iter().map(|w| self.lookup(w.as_ref())));
        ids.push(EOS);
        TokenSequence(ids)
    }

    /// Content words of a sequence, with every special token dropped.
    pub fn words(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id >= SPECIALS.len())
            .map(|&id| self.token(id).unwrap_or("<unk>").to_string())
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 5 {
            return Err(Error::input(format!("vocabulary needs at least 5 entries, got {}", tokens.len())));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::input(format!("vocabulary id {i} must be {s}, found {}", tokens[i])));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Token ids of one caption, possibly wrapped in `<bos>`/`<eos>` and padded.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    /// `<bos>`, the content ids, `<eos>`.
    pub fn wrap(content: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(content);
        ids.push(EOS);
        Self(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    /// The content ids: trailing `<pad>`, a leading `<bos>` and a trailing
    /// `<eos>` are removed. Interior padding is rejected.
    pub fn content(&self) -> Result<&[usize]> {
        let mut s = self.0.as_slice();
        while let [rest @ .., PAD] = s {
            s = rest;
        }
        if let [BOS, rest @ ..] = s {
            s = rest;
        }
        if let [rest @ .., EOS] = s {
            s = rest;
        }
        if s.contains(&PAD) {
            return Err(Error::input("padding inside a token sequence"));
        }
        Ok(s)
    }
}
