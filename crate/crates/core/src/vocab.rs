//! Token vocabulary with the five reserved special tokens.
//!
//! Input text is already tokenized; tokens are whitespace-separated.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const UNK: TokenId = 4;

/// Surface forms of the specials, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[BOS]", "[EOS]", "[SEP]", "[UNK]"];

pub const NUM_SPECIALS: usize = SPECIAL_TOKENS.len();

/// Bijective token <-> id map. Ids are dense; specials take ids `0..5`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary over every whitespace-separated token in `lines`.
    ///
    /// Ordering is specials first, then tokens by descending frequency with
    /// ties broken lexicographically. Tokens spelled like a special are
    /// folded into that special.
    pub fn build<I, S>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in lines {
            for tok in line.as_ref().split_whitespace() {
                if SPECIAL_TOKENS.contains(&tok) {
                    continue;
                }
                *counts.entry(tok.to_owned()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyInput("no tokens to build a vocabulary from"));
        }
        let mut by_freq: Vec<(String, usize)> = counts.into_iter().collect();
        by_freq.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
        Self::from_tokens(
            SPECIAL_TOKENS
                .iter()
                .map(|s| s.to_string())
                .chain(by_freq.into_iter().map(|(t, _)| t)),
        )
    }

    /// Rebuilds a vocabulary from its id-ordered token list, validating the
    /// special-token prefix and uniqueness.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().collect();
        if tokens.len() < NUM_SPECIALS {
            return Err(Error::EmptyInput("vocabulary is missing special tokens"));
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *special {
                return Err(Error::config(
                    "vocabulary",
                    format!("id {i} must be {special}, found {:?}", tokens[i]),
                ));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::config("vocabulary", format!("invalid token {tok:?}")));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::config("vocabulary", format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Maps a token to its id, falling back to `UNK`.
    pub fn lookup(&self, token: &str) -> TokenId {
        self.id_of(token).unwrap_or(UNK)
    }

    pub fn token_of(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, line: &str) -> Vec<TokenId> {
        line.split_whitespace().map(|t| self.lookup(t)).collect()
    }

    /// Joins ids back into a space-separated line. Out-of-range ids render as `[UNK]`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token_of(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]));
        }
        out
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for tok in &self.tokens {
            let _ = writeln!(text, "{tok}");
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned)).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}
