//! Tokenization, vocabularies and word-embedding tables.

mod embeddings;
mod vocab;

pub use embeddings::{embed_utterance, load_embeddings, EmbeddingTable, DEFAULT_EMBED_DIM};
pub use vocab::{Vocabulary, PAD_ID, UNK_ID};

use crate::corpus::Corpus;

/// Lowercases, splits on whitespace, makes every `?` its own token and
/// splits trailing `.`, `,` and `!` off words.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let mut pieces = lower.split('?').peekable();
        while let Some(piece) = pieces.next() {
            push_peeled(piece, &mut out);
            if pieces.peek().is_some() {
                out.push("?".to_string());
            }
        }
    }
    out
}

fn push_peeled(piece: &str, out: &mut Vec<String>) {
    let stem = piece.trim_end_matches(['.', ',', '!']);
    if !stem.is_empty() {
        out.push(stem.to_string());
    }
    out.extend(piece[stem.len()..].chars().map(String::from));
}

/// Deletes every `?` token; labels, times and audio are untouched.
pub fn strip_question_marks(corpus: &Corpus) -> Corpus {
    corpus.retain_tokens(|t| t != "?")
}
