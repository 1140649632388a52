//! SMILES tokenizer and token vocabulary.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;

/// Splits SMILES into tokens: bracket atoms, `Cl`, `Br` and `%nn` ring
/// labels are single tokens, everything else is one character.
pub fn tokenize(smiles: &str) -> Result<Vec<String>> {
    let chars: Vec<char> = smiles.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let len = match c {
            '[' => match chars[i..].iter().position(|&x| x == ']') {
                Some(end) => end + 1,
                None => return Err(Error::UnknownToken(chars[i..].iter().collect())),
            },
            '%' => {
                if chars.len() >= i + 3 && chars[i + 1].is_ascii_digit() && chars[i + 2].is_ascii_digit() {
                    3
                } else {
                    return Err(Error::UnknownToken(chars[i..].iter().take(3).collect()));
                }
            }
            'C' if chars.get(i + 1) == Some(&'l') => 2,
            'B' if chars.get(i + 1) == Some(&'r') => 2,
            c if c.is_whitespace() => return Err(Error::UnknownToken(c.to_string())),
            _ => 1,
        };
        out.push(chars[i..i + len].iter().collect());
        i += len;
    }
    Ok(out)
}

/// Token list with the three special tokens at fixed indices 0..3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Special tokens followed by the given tokens, deduplicated, in order.
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all = vec![PAD.to_string(), BOS.to_string(), EOS.to_string()];
        for t in tokens {
            if !all.contains(&t) {
                all.push(t);
            }
        }
        Self::from_tokens(all)
    }

    /// Every token of the corpus, sorted.
    pub fn from_corpus(corpus: &[String]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in corpus {
            seen.extend(tokenize(s)?);
        }
        Self::new(seen)
    }

    /// Exact token list, as stored in checkpoints.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[PAD_ID] != PAD || tokens[BOS_ID] != BOS || tokens[EOS_ID] != EOS {
            return Err(Error::InvalidInput(
                "vocabulary must start with <pad>, <bos>, <eos> and hold at least one symbol".into(),
            ));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::InvalidInput("duplicate vocabulary token".into()));
        }
        Ok(Vocabulary { tokens, index })
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

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Token ids without begin/end markers.
    pub fn encode(&self, smiles: &str) -> Result<Vec<usize>> {
        tokenize(smiles)?
            .into_iter()
            .map(|t| self.id(&t).ok_or(Error::UnknownToken(t)))
            .collect()
    }

    /// Concatenates symbols; special tokens are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i > EOS_ID && i < self.tokens.len())
            .map(|&i| self.tokens[i].as_str())
            .collect()
    }
}
