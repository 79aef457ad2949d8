use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic_str};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Token/id mapping with `0 = PAD` and `1 = UNK` reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocabulary {
            tokens: vec![PAD.to_string(), UNK.to_string()],
            ids: HashMap::from([(PAD.to_string(), PAD_ID), (UNK.to_string(), UNK_ID)]),
        };
        for t in tokens {
            if !v.ids.contains_key(&t) {
                v.ids.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Ids are assigned by descending frequency, ties broken
    /// lexicographically. Tokens seen fewer than `min_count` times are left
    /// out and look up as UNK.
    pub fn build<'a, I, U>(utterances: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = U>,
        U: IntoIterator<Item = &'a String>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for utt in utterances {
            for tok in utt {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(entries.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids for an utterance, truncated to `max_len`; an empty utterance
    /// becomes a single PAD.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        let ids: Vec<usize> = tokens
            .iter()
            .take(max_len.max(1))
            .map(|t| self.id(t))
            .collect();
        if ids.is_empty() {
            vec![PAD_ID]
        } else {
            ids
        }
    }

    /// One token per line; line `k` holds id `k + 2`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[2..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic_str(path, &self.to_file_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("invalid vocabulary entry {line:?}"),
                });
            }
            tokens.push(line.to_string());
        }
        let vocab = Self::from_tokens(tokens.iter().cloned());
        if vocab.len() != tokens.len() + 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "duplicate or reserved tokens".into(),
            });
        }
        Ok(vocab)
    }
}
