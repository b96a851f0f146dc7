//! Tokenization, heuristic entity extraction, and the hashing embedder used
//! when no precomputed vectors come with the data.

use std::collections::BTreeSet;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed;

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lowercased alphanumeric runs; every other non-space character is its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

impl Tokenizer for WordPunctTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        raw_tokens(text)
            .into_iter()
            .map(|t| t.to_lowercase())
            .collect()
    }
}

/// Lowercased whitespace-separated chunks.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_lowercase).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    WordPunct,
    Whitespace,
}

impl TokenizerKind {
    pub fn build(self) -> Box<dyn Tokenizer> {
        match self {
            TokenizerKind::WordPunct => Box::new(WordPunctTokenizer),
            TokenizerKind::Whitespace => Box::new(WhitespaceTokenizer),
        }
    }
}

fn raw_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

/// Runs of capitalized words that do not open a sentence, lowercased.
pub fn heuristic_entities(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut run: Vec<&str> = Vec::new();
    let mut sentence_start = true;
    let flush = |run: &mut Vec<&str>, out: &mut BTreeSet<String>| {
        if !run.is_empty() {
            out.insert(run.join(" ").to_lowercase());
            run.clear();
        }
    };
    for tok in raw_tokens(text) {
        let word = tok.chars().next().is_some_and(char::is_alphanumeric);
        if !word {
            flush(&mut run, &mut out);
            if matches!(tok, "." | "!" | "?") {
                sentence_start = true;
            }
            continue;
        }
        if is_capitalized(tok) && (!sentence_start || !run.is_empty()) {
            run.push(tok);
        } else {
            flush(&mut run, &mut out);
        }
        sentence_start = false;
    }
    flush(&mut run, &mut out);
    out
}

/// Maps each token to a pseudo-random unit vector derived from its text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: 64, seed: 0 }
    }
}

impl HashingEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = seed::rng(seed::derive(self.seed, token));
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn token_vectors(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        tokens.iter().map(|t| self.token_vector(t)).collect()
    }

    /// Normalized mean of the token vectors; all zeros for an empty sequence.
    pub fn sentence_vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for t in tokens {
            for (a, x) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += x;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|x| *x /= norm);
        }
        acc
    }

    pub fn describe(&self) -> String {
        format!("hashing-fallback(dim={},seed={})", self.dim, self.seed)
    }
}
