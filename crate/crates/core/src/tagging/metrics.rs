//! Similarity and length measurements between the two responses of an instance.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::PreferenceInstance;

use super::text::Tokenizer;

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure over token sequences. `None` when either side is empty.
pub fn rouge_l<T: PartialEq>(a: &[T], b: &[T]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let lcs = lcs_len(a, b) as f64;
    if lcs == 0.0 {
        return Some(0.0);
    }
    let p = lcs / a.len() as f64;
    let r = lcs / b.len() as f64;
    Some(2.0 * p * r / (p + r))
}

/// ROUGE-L between two texts; empty token sequences score 0.
pub fn compute_rouge_l(a: &str, b: &str, tok: &dyn Tokenizer) -> f64 {
    rouge_l(&tok.tokenize(a), &tok.tokenize(b)).unwrap_or(0.0)
}

pub fn compute_cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::validation(format!(
            "cosine of vectors with {} and {} components",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedSimilarity("zero-norm vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Intersection over union; two empty sets are identical and score 1.
pub fn compute_entity_iou(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy-matching BERTScore F1 over token vectors, clipped to [0, 1].
///
/// With `length_adjusted` the F1 is scaled by the ratio of the shorter to the
/// longer sequence length. `None` when either sequence is empty.
pub fn compute_bertscore(ta: &[Vec<f64>], tb: &[Vec<f64>], length_adjusted: bool) -> Option<f64> {
    if ta.is_empty() || tb.is_empty() {
        return None;
    }
    let ua: Vec<Vec<f64>> = ta.iter().map(|v| unit(v)).collect();
    let ub: Vec<Vec<f64>> = tb.iter().map(|v| unit(v)).collect();
    let best = |from: &[Vec<f64>], against: &[Vec<f64>]| -> f64 {
        from.iter()
            .map(|x| {
                against
                    .iter()
                    .map(|y| dot(x, y))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = best(&ua, &ub);
    let recall = best(&ub, &ua);
    let f1 = if precision > 0.0 && recall > 0.0 {
        (2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    if length_adjusted {
        let (s, l) = (ta.len().min(tb.len()), ta.len().max(tb.len()));
        Some(f1 * s as f64 / l as f64)
    } else {
        Some(f1)
    }
}

/// Token lengths of the prompt and the two responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthMetrics {
    pub prompt_len: usize,
    pub shorter_response_len: usize,
    pub longer_response_len: usize,
    pub length_diff: usize,
}

pub fn length_metrics(inst: &PreferenceInstance, tok: &dyn Tokenizer) -> LengthMetrics {
    let p = tok.tokenize(&inst.prompt).len();
    let a = tok.tokenize(&inst.response_a).len();
    let b = tok.tokenize(&inst.response_b).len();
    LengthMetrics {
        prompt_len: p,
        shorter_response_len: a.min(b),
        longer_response_len: a.max(b),
        length_diff: a.abs_diff(b),
    }
}

#[cfg(test)]
mod tests {
    use super::super::text::WordPunctTokenizer;
    use super::*;

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rouge_examples() {
        let t = WordPunctTokenizer;
        assert_eq!(compute_rouge_l("a b c", "a b c", &t), 1.0);
        assert_eq!(compute_rouge_l("a b c", "d e f", &t), 0.0);
        let f = compute_rouge_l("the cat sat", "the cat ran", &t);
        assert!((f - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(rouge_l::<String>(&[], &["x".into()]), None);
        assert_eq!(compute_rouge_l("", "x", &t), 0.0);
    }

    #[test]
    fn cosine_examples() {
        assert!((compute_cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(compute_cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = compute_cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            compute_cosine(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::UndefinedSimilarity(_))
        ));
    }

    #[test]
    fn iou_examples() {
        assert_eq!(compute_entity_iou(&set(&["x"]), &set(&["x"])), 1.0);
        assert_eq!(compute_entity_iou(&set(&["x"]), &set(&["y"])), 0.0);
        let v = compute_entity_iou(&set(&["paris", "france"]), &set(&["paris", "berlin"]));
        assert!((v - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(compute_entity_iou(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn bertscore_examples() {
        let a = vec![vec![1.0, 2.0], vec![0.5, -1.0]];
        assert!((compute_bertscore(&a, &a, false).unwrap() - 1.0).abs() < 1e-12);
        assert!((compute_bertscore(&a, &a, true).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            compute_bertscore(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], false),
            Some(0.0)
        );
        let two = vec![vec![1.0, 1.0]; 2];
        let four = vec![vec![1.0, 1.0]; 4];
        assert!((compute_bertscore(&two, &four, false).unwrap() - 1.0).abs() < 1e-12);
        assert!((compute_bertscore(&two, &four, true).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(compute_bertscore(&[], &four, false), None);
    }

    #[test]
    fn length_examples() {
        let t = WordPunctTokenizer;
        let same = PreferenceInstance::new("1", "p", "a b", "a b");
        let m = length_metrics(&same, &t);
        assert_eq!(
            (m.length_diff, m.shorter_response_len),
            (0, m.longer_response_len)
        );
        let i = PreferenceInstance::new("2", "x", "1 2 3 4 5", "1 2 3 4 5 6 7 8 9");
        let m = length_metrics(&i, &t);
        assert_eq!(
            (m.shorter_response_len, m.longer_response_len, m.length_diff),
            (5, 9, 4)
        );
        let mut e = PreferenceInstance::new("3", "x", "a", "b");
        e.prompt.clear();
        assert_eq!(length_metrics(&e, &t).prompt_len, 0);
    }
}
