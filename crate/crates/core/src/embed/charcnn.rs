//! Character-level CNN word embeddings: per word, embed characters,
//! project to the convolution input channels, run one convolution +
//! max-pool per kernel width, and concatenate the pooled channels back up
//! to the word embedding dimension.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, Params};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone)]
pub struct CharCnnConfig {
    /// Character embedding dimension; equals the word embedding dimension.
    pub embed_dim: usize,
    pub kernel_widths: Vec<usize>,
    /// Channels per kernel; `kernel_widths.len() * channels == embed_dim`.
    pub channels: usize,
    /// Chars per word after padding/truncation.
    pub max_word_chars: usize,
}

impl CharCnnConfig {
    pub fn standard(embed_dim: usize, max_word_chars: usize) -> Result<Self> {
        let widths = vec![3, 4, 5];
        if embed_dim % widths.len() != 0 {
            return Err(Error::Config(format!(
                "embed dim {embed_dim} not divisible by {} kernels",
                widths.len()
            )));
        }
        let cfg = CharCnnConfig {
            embed_dim,
            channels: embed_dim / widths.len(),
            kernel_widths: widths,
            max_word_chars,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let widest = *self.kernel_widths.iter().max().unwrap_or(&0);
        if self.max_word_chars < widest {
            return Err(Error::Config(format!(
                "max word length {} is below the largest kernel width {widest}",
                self.max_word_chars
            )));
        }
        if self.channels * self.kernel_widths.len() != self.embed_dim {
            return Err(Error::Config(format!(
                "{} kernels x {} channels must equal embed dim {}",
                self.kernel_widths.len(),
                self.channels,
                self.embed_dim
            )));
        }
        Ok(())
    }
}

/// Convolution windows that fit inside the real (unpadded) characters.
/// Words shorter than the kernel keep the single window at position 0,
/// which then covers zero-embedded padding.
pub(crate) fn valid_positions(word_len: usize, width: usize) -> usize {
    word_len.max(width) - width + 1
}

struct Kernel {
    width: usize,
    weight: ParamId, // [(width * channels) x channels]
    bias: ParamId,   // [1 x channels]
}

pub struct CharCnn {
    cfg: CharCnnConfig,
    /// Bridge from embed_dim-sized char vectors to the conv input channels.
    proj: ParamId,
    kernels: Vec<Kernel>,
}

impl CharCnn {
    pub fn init(
        params: &mut Params,
        rng: &mut impl Rng,
        prefix: &str,
        cfg: CharCnnConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.channels;
        let proj = params.insert_uniform(
            rng,
            format!("{prefix}.proj"),
            &[cfg.embed_dim, ch],
            1.0 / (cfg.embed_dim as f64).sqrt(),
        );
        let kernels = cfg
            .kernel_widths
            .iter()
            .map(|&width| {
                let fan_in = width * ch;
                Kernel {
                    width,
                    weight: params.insert_uniform(
                        rng,
                        format!("{prefix}.k{width}.w"),
                        &[fan_in, ch],
                        1.0 / (fan_in as f64).sqrt(),
                    ),
                    bias: params.insert(format!("{prefix}.k{width}.b"), crate::tensor::Tensor::zeros(&[1, ch])),
                }
            })
            .collect();
        Ok(CharCnn { cfg, proj, kernels })
    }

    pub fn config(&self) -> &CharCnnConfig {
        &self.cfg
    }

    /// Embed one word from its char ids. Empty grids (special tokens)
    /// embed to zero.
    pub fn embed_word(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        char_table: Var,
        grid: &[usize],
    ) -> Result<Var> {
        if grid.is_empty() {
            return Ok(tape.zeros(&[1, self.cfg.embed_dim]));
        }
        let w = self.cfg.max_word_chars;
        let word_len = grid.len().min(w);
        let mut padded = vec![super::vocab::CHAR_PAD; w];
        padded[..word_len].copy_from_slice(&grid[..word_len]);

        let chars = tape.gather_rows(char_table, &padded)?; // [w x d]
        let x = tape.matmul(chars, bound.var(self.proj))?; // [w x ch]

        let mut pooled = Vec::with_capacity(self.kernels.len());
        for k in &self.kernels {
            let positions = valid_positions(word_len, k.width);
            let mut rows = Vec::with_capacity(positions);
            for p in 0..positions {
                let window = tape.narrow(x, 0, p, k.width)?;
                let flat = tape.reshape(window, &[1, k.width * self.cfg.channels])?;
                let conv = tape.matmul(flat, bound.var(k.weight))?;
                rows.push(tape.add(conv, bound.var(k.bias))?);
            }
            let stacked = if rows.len() == 1 {
                rows[0]
            } else {
                tape.concat(&rows, 0)?
            };
            pooled.push(tape.max_axis(stacked, 0, true)?); // [1 x ch]
        }
        tape.concat(&pooled, 1) // [1 x embed_dim]
    }

    /// Embed a word list into a [q x embed_dim] matrix.
    pub fn embed_words(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        char_table: Var,
        grids: &[Vec<usize>],
    ) -> Result<Var> {
        if grids.is_empty() {
            return Ok(tape.zeros(&[0, self.cfg.embed_dim]));
        }
        let rows = grids
            .iter()
            .map(|g| self.embed_word(tape, bound, char_table, g))
            .collect::<Result<Vec<_>>>()?;
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            tape.concat(&rows, 0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, w: usize) -> (Params, CharCnn) {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CharCnnConfig::standard(dim, w).unwrap();
        let cnn = CharCnn::init(&mut params, &mut rng, "charcnn", cfg).unwrap();
        (params, cnn)
    }

    #[test]
    fn output_shape_matches_word_embedding() {
        let (mut params, cnn) = setup(6, 8);
        let table = params.insert("chars", Tensor::ones(&[5, 6]));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let grids = vec![vec![1, 2, 3], vec![4], vec![]];
        let out = cnn
            .embed_words(&mut tape, &bound, bound.var(table), &grids)
            .unwrap();
        assert_eq!(tape.shape(out), &[3, 6]);
        // the empty grid row is exactly zero
        assert_eq!(&tape.value(out).data()[12..18], &[0.0; 6]);
    }

    #[test]
    fn zero_embeddings_and_bias_give_zero_output() {
        let (mut params, cnn) = setup(6, 8);
        let table = params.insert("chars", Tensor::zeros(&[5, 6]));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let out = cnn
            .embed_word(&mut tape, &bound, bound.var(table), &[1, 2, 3, 4])
            .unwrap();
        assert_eq!(tape.value(out).data(), &[0.0; 6]);
    }

    #[test]
    fn valid_position_counts() {
        // kernel widths 3/4/5 over a 5-char word
        assert_eq!(valid_positions(5, 3), 3);
        assert_eq!(valid_positions(5, 4), 2);
        assert_eq!(valid_positions(5, 5), 1);
        // shorter than the kernel: one window over padding
        assert_eq!(valid_positions(2, 5), 1);
    }

    #[test]
    fn padding_independence_beyond_word_length() {
        // same word, different max_word_chars: identical embedding
        let mut out_vals = Vec::new();
        for w in [8, 16] {
            let mut params = Params::new();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let cfg = CharCnnConfig::standard(6, w).unwrap();
            let cnn = CharCnn::init(&mut params, &mut rng, "charcnn", cfg).unwrap();
            let mut trng = ChaCha8Rng::seed_from_u64(12);
            let mut table = Tensor::zeros(&[6, 6]);
            for v in table.data_mut().iter_mut().skip(6) {
                *v = trng.gen_range(-1.0..1.0);
            }
            let table = params.insert("chars", table);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, |_| false);
            let out = cnn
                .embed_word(&mut tape, &bound, bound.var(table), &[1, 2, 3, 4, 5])
                .unwrap();
            out_vals.push(tape.value(out).clone());
        }
        assert_eq!(out_vals[0], out_vals[1]);
    }

    #[test]
    fn rejects_word_length_below_kernel_width() {
        assert!(CharCnnConfig::standard(6, 4).is_err());
    }
}
