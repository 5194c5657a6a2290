//! Shared embedding layer: word vectors plus char-CNN vectors, combined by
//! element-wise sum so out-of-vocabulary words stay recoverable from their
//! characters. This is the only component whose weights all heads share.

mod charcnn;
mod vocab;

pub use charcnn::{CharCnn, CharCnnConfig};
pub use vocab::{char_matrix, word_matrix, Charset, PretrainedVectors, Vocab, CHAR_PAD, END, PAD, UNK};

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, Params};
use crate::tensor::{Tape, Tensor, Var};

/// One tokenized word ready for embedding: vocabulary id plus char grid.
#[derive(Debug, Clone)]
pub struct TokenRef {
    pub id: usize,
    pub grid: Vec<usize>,
}

/// Map raw tokens to ids and char grids. Special tokens get empty grids.
pub fn prepare_tokens(
    vocab: &Vocab,
    charset: &Charset,
    tokens: &[String],
    max_word_chars: usize,
) -> Vec<TokenRef> {
    tokens
        .iter()
        .map(|t| TokenRef {
            id: vocab.id(t),
            grid: charset.grid(t, max_word_chars),
        })
        .collect()
}

/// The END sentinel as an embeddable token (empty char grid).
pub fn end_token() -> TokenRef {
    TokenRef {
        id: END,
        grid: Vec::new(),
    }
}

pub struct Embedder {
    pub word_table: ParamId,
    pub char_table: ParamId,
    pub cnn: CharCnn,
}

impl Embedder {
    pub fn init(
        params: &mut Params,
        rng: &mut impl rand::Rng,
        word_matrix: Tensor,
        char_matrix: Tensor,
        cfg: CharCnnConfig,
    ) -> Result<Self> {
        if word_matrix.shape()[1] != cfg.embed_dim || char_matrix.shape()[1] != cfg.embed_dim {
            return Err(Error::Config(format!(
                "embedding tables must have {} columns, got {:?} and {:?}",
                cfg.embed_dim,
                word_matrix.shape(),
                char_matrix.shape()
            )));
        }
        let word_table = params.insert("embed.word", word_matrix);
        let char_table = params.insert("embed.char", char_matrix);
        let cnn = CharCnn::init(params, rng, "embed.cnn", cfg)?;
        Ok(Embedder {
            word_table,
            char_table,
            cnn,
        })
    }

    /// Word-table rows for a token id list: [q x d].
    pub fn embed_word_rows(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        ids: &[usize],
    ) -> Result<Var> {
        tape.gather_rows(bound.var(self.word_table), ids)
    }

    /// Combined word + char embedding for a token sequence: [q x d].
    pub fn embed(&self, tape: &mut Tape, bound: &BoundParams, tokens: &[TokenRef]) -> Result<Var> {
        let ids: Vec<usize> = tokens.iter().map(|t| t.id).collect();
        let words = self.embed_word_rows(tape, bound, &ids)?;
        if tokens.is_empty() {
            return Ok(words);
        }
        let grids: Vec<Vec<usize>> = tokens.iter().map(|t| t.grid.clone()).collect();
        let chars = self
            .cnn
            .embed_words(tape, bound, bound.var(self.char_table), &grids)?;
        combine_embeddings(tape, words, chars)
    }
}

/// Element-wise sum of word-level and char-level embeddings of equal shape.
pub fn combine_embeddings(tape: &mut Tape, word_emb: Var, char_emb: Var) -> Result<Var> {
    if tape.shape(word_emb) != tape.shape(char_emb) {
        return Err(Error::dim(format!(
            "cannot combine embeddings of shapes {:?} and {:?}",
            tape.shape(word_emb),
            tape.shape(char_emb)
        )));
    }
    tape.add(word_emb, char_emb)
}
