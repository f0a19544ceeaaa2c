//! Deterministic toy sentence encoder and caption arithmetic.
//!
//! Real pretrained sentence encoders are out of scope; what the rest of the
//! system needs from one is (a) a fixed-width embedding, (b) determinism and
//! (c) a roughly linear structure so that caption arithmetic like
//! `"a red bird" - "red" + "blue"` lands near the embedding of the edited
//! sentence. A keyed-hash bag-of-words model delivers all three: each token
//! maps to a pseudorandom unit vector that depends only on (hash seed,
//! token), a sentence is the sum of its token vectors pushed through a fixed
//! random projection, and the whole pipeline is exactly additive by
//! construction.
//!
//! Externally computed embeddings can replace this encoder through the TSV
//! seam in the companion crate; everything downstream only sees `[n, d]`
//! matrices.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{Domain, StreamRng};

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                cur.push(lc);
            }
        } else if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// FNV-1a over raw bytes; also the dataset's file checksum.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash-derived word vectors plus a fixed projection into sentence space.
pub struct TextEncoder {
    pub word_dim: usize,
    pub embed_dim: usize,
    pub hash_seed: u64,
    /// [word_dim, embed_dim], drawn once from the hash seed. The scale
    /// √(3/word_dim) gives projected coordinates roughly unit variance for a
    /// unit-norm input.
    projection: Vec<f64>,
}

impl TextEncoder {
    pub fn new(word_dim: usize, embed_dim: usize, hash_seed: u64) -> Self {
        let mut rng = StreamRng::new(hash_seed, Domain::Projection, 0);
        let scale = libm::sqrt(3.0 / word_dim as f64);
        let projection = (0..word_dim * embed_dim)
            .map(|_| (rng.uniform() * 2.0 - 1.0) * scale)
            .collect();
        TextEncoder {
            word_dim,
            embed_dim,
            hash_seed,
            projection,
        }
    }

    /// Default geometry: 300-dimensional word vectors, 256-dimensional
    /// sentence embeddings.
    pub fn with_seed(hash_seed: u64) -> Self {
        Self::new(300, 256, hash_seed)
    }

    /// Unit-norm pseudorandom vector for one token. The stream is keyed by
    /// the token's FNV-1a hash so the mapping is a pure function of
    /// (hash_seed, token) — no vocabulary, no state.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = StreamRng::new(self.hash_seed, Domain::TokenHash, fnv1a64(token.as_bytes()));
        let mut v: Vec<f64> = (0..self.word_dim)
            .map(|_| rng.uniform() * 2.0 - 1.0)
            .collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
        // A zero vector needs word_dim independent uniforms to all be zero;
        // guard anyway so the contract (unit norm) cannot silently break.
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        } else {
            v[0] = 1.0;
        }
        v
    }

    /// Sum-pool token vectors and project. Sum pooling (rather than mean) is
    /// what makes the encoder additive over token multisets, which caption
    /// arithmetic depends on.
    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Empty {
                what: "caption (no tokens)",
            });
        }
        let mut pooled = alloc::vec![0.0f64; self.word_dim];
        for t in &tokens {
            for (p, v) in pooled.iter_mut().zip(self.token_vector(t)) {
                *p += v;
            }
        }
        let mut out = alloc::vec![0.0f64; self.embed_dim];
        for (i, &p) in pooled.iter().enumerate() {
            let row = &self.projection[i * self.embed_dim..(i + 1) * self.embed_dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += p * w;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// A signed sum of quoted captions: `"a" - "b" + "c"`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArithExpr {
    pub terms: Vec<(Sign, String)>,
}

/// Parse `quoted (('+'|'-') quoted)*`. Errors carry the byte offset where
/// the parse stopped making sense.
pub fn parse_arith(input: &str) -> Result<ArithExpr> {
    let bytes = input.as_bytes();
    let mut pos = 0usize;
    let mut terms = Vec::new();

    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && (bytes[*pos] as char).is_ascii_whitespace() {
            *pos += 1;
        }
    };

    let read_quoted = |pos: &mut usize| -> Result<String> {
        if *pos >= bytes.len() || bytes[*pos] != b'"' {
            return Err(Error::Parse {
                offset: *pos,
                expected: "opening quote",
            });
        }
        let start = *pos + 1;
        let mut end = start;
        while end < bytes.len() && bytes[end] != b'"' {
            end += 1;
        }
        if end >= bytes.len() {
            return Err(Error::Parse {
                offset: end,
                expected: "closing quote",
            });
        }
        *pos = end + 1;
        // Quote bytes are ASCII, so the slice boundaries sit on character
        // boundaries and the conversion cannot fail.
        Ok(String::from(
            core::str::from_utf8(&bytes[start..end]).expect("quoted span is valid utf-8"),
        ))
    };

    skip_ws(&mut pos);
    let first = read_quoted(&mut pos)?;
    terms.push((Sign::Plus, first));
    loop {
        skip_ws(&mut pos);
        if pos >= bytes.len() {
            break;
        }
        let sign = match bytes[pos] {
            b'+' => Sign::Plus,
            b'-' => Sign::Minus,
            _ => {
                return Err(Error::Parse {
                    offset: pos,
                    expected: "'+' or '-'",
                })
            }
        };
        pos += 1;
        skip_ws(&mut pos);
        let term = read_quoted(&mut pos)?;
        terms.push((sign, term));
    }
    Ok(ArithExpr { terms })
}

/// Evaluate an expression to a single embedding: the signed sum of the
/// term embeddings.
pub fn eval_arith(expr: &ArithExpr, encoder: &TextEncoder) -> Result<Vec<f64>> {
    let mut acc = alloc::vec![0.0f64; encoder.embed_dim];
    for (idx, (sign, caption)) in expr.terms.iter().enumerate() {
        let e = encoder
            .encode(caption)
            .map_err(|_| Error::EmptyTerm { term: idx })?;
        match sign {
            Sign::Plus => {
                for (a, v) in acc.iter_mut().zip(e) {
                    *a += v;
                }
            }
            Sign::Minus => {
                for (a, v) in acc.iter_mut().zip(e) {
                    *a -= v;
                }
            }
        }
    }
    Ok(acc)
}
