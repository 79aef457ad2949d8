use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic_str};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EMBED_DIM: usize = 300;
const INIT_RANGE: f64 = 0.25;

/// `|V|×d` word-vector table. Row [`PAD_ID`] is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor<f64>,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Every row drawn from `uniform(-0.25, 0.25)`, PAD zeroed.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Tensor::from_fn(&[vocab_size, dim], |_| {
            rng.gen_range(-INIT_RANGE..INIT_RANGE)
        });
        table.data_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
        EmbeddingTable {
            table,
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.table.row(id)
    }

    /// Text format: `count dim` header, then `token v1 .. vd` per line.
    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let (rows, dim) = self.table.dims2()?;
        let mut s = format!("{rows} {dim}\n");
        for (id, tok) in vocab.tokens().iter().enumerate().take(rows) {
            s.push_str(tok);
            for v in self.row(id) {
                s.push(' ');
                s.push_str(&format!("{v:e}"));
            }
            s.push('\n');
        }
        write_atomic_str(path, &s)
    }
}

/// Loads vectors for vocabulary tokens from a text embedding file. Tokens
/// absent from the file (and UNK) keep seeded `uniform(-0.25, 0.25)`
/// vectors; PAD stays zero. With no file, every row is random.
pub fn load_embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab.len(), dim, seed);
    let Some(path) = path else {
        return Ok(table);
    };
    let text = read_to_string(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty embedding file".into()))?;
    let mut fields = header.split_whitespace();
    let _count: usize = fields
        .next()
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad header {header:?}")))?;
    let file_dim: usize = fields
        .next()
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad header {header:?}")))?;
    if file_dim != dim {
        return Err(parse_err(
            1,
            format!("embedding dimension {file_dim}, expected {dim}"),
        ));
    }
    for (i, line) in lines {
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(i + 1, format!("bad value: {e}")))?;
        if values.len() != dim {
            return Err(parse_err(
                i + 1,
                format!("{} values for {token:?}, expected {dim}", values.len()),
            ));
        }
        if !vocab.contains(token) {
            continue;
        }
        let id = vocab.id(token);
        if id == PAD_ID {
            continue;
        }
        table.table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
    }
    Ok(table)
}

/// `d×T` grid whose columns are the embedding rows of `ids`.
pub fn embed_utterance<T: Scalar>(ids: &[usize], table: &Tensor<T>, max_len: usize) -> Tensor<T> {
    let d = table.shape()[1];
    let ids: Vec<usize> = if ids.is_empty() {
        vec![PAD_ID]
    } else {
        ids.iter().take(max_len.max(1)).copied().collect()
    };
    let len = ids.len();
    let mut out = Tensor::zeros(&[d, len]);
    for (t, &id) in ids.iter().enumerate() {
        for (i, &v) in table.row(id).iter().enumerate() {
            out.data_mut()[i * len + t] = v;
        }
    }
    out
}
