//! Token and character inventories plus pretrained-vector ingestion.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reserved vocabulary slots. Padding embeds to zero permanently; END is
/// the value decoder's stop sentinel; UNK absorbs unseen inference tokens.
pub const PAD: usize = 0;
pub const END: usize = 1;
pub const UNK: usize = 2;

const SPECIALS: [&str; 3] = ["<pad>", "<end>", "<unk>"];

/// Word inventory with a fixed embedding dimension.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub dim: usize,
}

impl Vocab {
    /// Build from a token stream: specials first, then the distinct corpus
    /// tokens in sorted order (stable under example shuffling).
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, dim: usize) -> Self {
        let distinct: BTreeSet<&str> = corpus
            .into_iter()
            .filter(|t| !SPECIALS.contains(t))
            .collect();
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(distinct.into_iter().map(String::from))
            .collect();
        Self::from_tokens(tokens, dim)
    }

    fn from_tokens(tokens: Vec<String>, dim: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index, dim }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of a token, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Cache format: one token per line, in index order.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn load(r: impl BufRead, dim: usize) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            tokens.push(line?);
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Schema(format!(
                    "vocabulary cache must start with {SPECIALS:?}, found {:?} at {i}",
                    tokens.get(i)
                )));
            }
        }
        Ok(Self::from_tokens(tokens, dim))
    }
}

/// Character inventory; index 0 is the padding character and embeds to zero.
#[derive(Debug, Clone)]
pub struct Charset {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

pub const CHAR_PAD: usize = 0;

impl Charset {
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<char> = corpus.into_iter().flat_map(|t| t.chars()).collect();
        let chars: Vec<char> = std::iter::once('\0').chain(distinct).collect();
        Self::from_chars(chars)
    }

    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Charset { chars, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Char ids of a word, truncated to `max_len`. Unknown characters map
    /// to padding (they carry no signal).
    pub fn grid(&self, word: &str, max_len: usize) -> Vec<usize> {
        word.chars()
            .take(max_len)
            .map(|c| self.index.get(&c).copied().unwrap_or(CHAR_PAD))
            .collect()
    }

    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        // skip the unprintable pad char; it is implicit on load
        for c in &self.chars[1..] {
            writeln!(w, "{c}")?;
        }
        Ok(())
    }

    pub fn load(r: impl BufRead) -> Result<Self> {
        let mut chars = vec!['\0'];
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("charset lines hold exactly one char, got {line:?}"),
                    })
                }
            }
        }
        Ok(Self::from_chars(chars))
    }
}

/// A pretrained-vector file: one token followed by `dim` reals per line.
#[derive(Debug)]
pub struct PretrainedVectors {
    pub dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    pub fn load(r: impl BufRead, expect_dim: Option<usize>) -> Result<Self> {
        let mut map = HashMap::new();
        let mut dim = expect_dim;
        for (i, line) in r.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().ok_or(Error::Parse {
                line: lineno,
                msg: "empty vector line".into(),
            })?;
            let vec: Vec<f64> = fields
                .map(|f| {
                    f.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad float {f:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(vec.len()),
                Some(d) if d != vec.len() => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected {d} components, got {}", vec.len()),
                    })
                }
                _ => {}
            }
            map.insert(token.to_string(), vec);
        }
        Ok(PretrainedVectors {
            dim: dim.unwrap_or(0),
            map,
        })
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.map.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Word-embedding matrix for a vocabulary: pretrained rows where available,
/// zeros otherwise (padding, END, UNK and all out-of-source tokens).
pub fn word_matrix(vocab: &Vocab, pretrained: Option<&PretrainedVectors>) -> Result<Tensor> {
    if let Some(p) = pretrained {
        if p.dim != 0 && p.dim != vocab.dim {
            return Err(Error::Schema(format!(
                "vector file has dimension {}, vocabulary expects {}",
                p.dim, vocab.dim
            )));
        }
    }
    let mut m = Tensor::zeros(&[vocab.len(), vocab.dim]);
    if let Some(p) = pretrained {
        for i in SPECIALS.len()..vocab.len() {
            if let Some(v) = p.get(vocab.token(i)) {
                m.data_mut()[i * vocab.dim..(i + 1) * vocab.dim].copy_from_slice(v);
            }
        }
    }
    Ok(m)
}

/// Character-embedding matrix: pretrained per-char vectors where available,
/// else small uniform random (trainable); the padding row stays zero.
pub fn char_matrix(
    charset: &Charset,
    dim: usize,
    pretrained: Option<&PretrainedVectors>,
    rng: &mut impl rand::Rng,
) -> Result<Tensor> {
    if let Some(p) = pretrained {
        if p.dim != 0 && p.dim != dim {
            return Err(Error::Schema(format!(
                "char vector file has dimension {}, expected {dim}",
                p.dim
            )));
        }
    }
    let mut m = Tensor::zeros(&[charset.len(), dim]);
    for i in 1..charset.len() {
        let ch = charset.chars[i].to_string();
        if let Some(v) = pretrained.and_then(|p| p.get(&ch)) {
            m.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(v);
        } else {
            for j in 0..dim {
                m.data_mut()[i * dim + j] = rng.gen_range(-0.1..=0.1);
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    #[test]
    fn vocab_build_is_deterministic_and_special_aware() {
        let a = Vocab::build(["b", "a", "b"], 4);
        let b = Vocab::build(["a", "b", "a"], 4);
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.id("<pad>"), PAD);
        assert_eq!(a.id("<end>"), END);
        assert_eq!(a.id("missing"), UNK);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn vocab_cache_round_trip() {
        let v = Vocab::build(["wins", "many", "how"], 8);
        let mut buf = Vec::new();
        v.save(&mut buf).unwrap();
        let loaded = Vocab::load(Cursor::new(buf), 8).unwrap();
        assert_eq!(loaded.tokens, v.tokens);
    }

    #[test]
    fn pretrained_rows_and_oov_zero() {
        let file = "the 0.1 0.2 0.3\nwins 1 2 3\n";
        let p = PretrainedVectors::load(Cursor::new(file), None).unwrap();
        assert_eq!(p.dim, 3);
        let v = Vocab::build(["the", "unknown"], 3);
        let m = word_matrix(&v, Some(&p)).unwrap();
        let the = v.id("the");
        assert_eq!(&m.data()[the * 3..the * 3 + 3], &[0.1, 0.2, 0.3]);
        let unk_row = v.id("unknown");
        assert_eq!(&m.data()[unk_row * 3..unk_row * 3 + 3], &[0.0; 3]);
        // specials stay zero
        assert_eq!(&m.data()[PAD * 3..PAD * 3 + 3], &[0.0; 3]);
    }

    #[test]
    fn pretrained_rejects_ragged_lines() {
        let file = "the 0.1 0.2 0.3\nbad 0.1 0.2\n";
        let err = PretrainedVectors::load(Cursor::new(file), None).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn char_grid_truncates_and_pads_nothing() {
        let cs = Charset::build(["abc"]);
        assert_eq!(cs.grid("abc", 16).len(), 3);
        assert_eq!(cs.grid("abcabcabc", 4).len(), 4);
        // unknown char maps to padding
        assert_eq!(cs.grid("z", 16), vec![CHAR_PAD]);
    }

    #[test]
    fn char_matrix_pad_row_zero_rest_random() {
        let cs = Charset::build(["ab"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = char_matrix(&cs, 4, None, &mut rng).unwrap();
        assert_eq!(&m.data()[0..4], &[0.0; 4]);
        assert!(m.data()[4..].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn charset_cache_round_trip() {
        let cs = Charset::build(["héllo", "wörld"]);
        let mut buf = Vec::new();
        cs.save(&mut buf).unwrap();
        let loaded = Charset::load(Cursor::new(buf)).unwrap();
        assert_eq!(loaded.chars, cs.chars);
    }
}
