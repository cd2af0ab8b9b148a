use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::retrieval::{encode_text, EmbeddingBackend, RetrievalError};
use crate::scalar::{dot, Scalar};
use crate::tokenize::tokens;

/// Numerator used in place of a zero n-gram match count.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const BLEU_MAX_ORDER: usize = 4;

/// Mean text-generation scores against reference descriptions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TextGenMetrics {
    pub bleu: f64,
    pub rouge_l: f64,
    pub jaccard: f64,
    /// Absent when no text encoder was configured.
    pub cosine: Option<f64>,
    pub n_items: usize,
}

impl TextGenMetrics {
    /// Means of per-item scores.
    pub fn from_items(items: &[TextScores]) -> Self {
        let n = items.len();
        if n == 0 {
            return TextGenMetrics::default();
        }
        let avg = |f: &dyn Fn(&TextScores) -> f64| items.iter().map(f).sum::<f64>() / n as f64;
        let cosine = if items.iter().all(|i| i.cosine.is_some()) {
            Some(avg(&|i| i.cosine.unwrap_or(0.0)))
        } else {
            None
        };
        TextGenMetrics {
            bleu: avg(&|i| i.bleu),
            rouge_l: avg(&|i| i.rouge_l),
            jaccard: avg(&|i| i.jaccard),
            cosine,
            n_items: n,
        }
    }

    /// Mean over parts with items; `n_items` is summed.
    pub fn mean(parts: &[TextGenMetrics]) -> Self {
        let used: Vec<&TextGenMetrics> = parts.iter().filter(|p| p.n_items > 0).collect();
        if used.is_empty() {
            return TextGenMetrics::default();
        }
        let k = used.len() as f64;
        let avg = |f: fn(&TextGenMetrics) -> f64| used.iter().map(|p| f(p)).sum::<f64>() / k;
        let cosine = used
            .iter()
            .map(|p| p.cosine)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / k);
        TextGenMetrics {
            bleu: avg(|p| p.bleu),
            rouge_l: avg(|p| p.rouge_l),
            jaccard: avg(|p| p.jaccard),
            cosine,
            n_items: parts.iter().map(|p| p.n_items).sum(),
        }
    }
}

/// Scores of one generated description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub bleu: f64,
    pub rouge_l: f64,
    pub jaccard: f64,
    pub cosine: Option<f64>,
}

impl TextScores {
    pub fn compute<T: Scalar>(
        candidate: &str,
        reference: &str,
        backend: Option<&dyn EmbeddingBackend<T>>,
    ) -> Result<Self, RetrievalError> {
        Ok(TextScores {
            bleu: bleu::<f64>(candidate, reference),
            rouge_l: rouge_l::<f64>(candidate, reference),
            jaccard: jaccard::<f64>(candidate, reference),
            cosine: backend
                .map(|b| cosine_text_similarity(candidate, reference, b).map(Scalar::as_f64))
                .transpose()?,
        })
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram matches and candidate n-gram total for each order.
fn ngram_stats(candidate: &[String], reference: &[String]) -> [(usize, usize); BLEU_MAX_ORDER] {
    let mut out = [(0, 0); BLEU_MAX_ORDER];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        if candidate.len() < n {
            continue;
        }
        let c = ngram_counts(candidate, n);
        let r = ngram_counts(reference, n);
        let matches = c
            .iter()
            .map(|(g, k)| (*k).min(*r.get(g).unwrap_or(&0)))
            .sum();
        *slot = (matches, candidate.len() + 1 - n);
    }
    out
}

fn bleu_from_stats<T: Scalar>(stats: &[(usize, usize)], cand_len: usize, ref_len: usize) -> T {
    let used: Vec<&(usize, usize)> = stats.iter().filter(|(_, total)| *total > 0).collect();
    if used.is_empty() {
        return T::zero();
    }
    let w = T::one() / T::of(used.len() as f64);
    let log_p = used.iter().fold(T::zero(), |acc, &&(m, total)| {
        let num = if m == 0 {
            T::of(BLEU_EPSILON)
        } else {
            T::of(m as f64)
        };
        acc + w * (num / T::of(total as f64)).ln()
    });
    let bp = if cand_len > ref_len {
        T::one()
    } else {
        (T::one() - T::of(ref_len as f64) / T::of(cand_len as f64)).exp()
    };
    bp * log_p.exp()
}

/// Sentence BLEU over 1- to 4-grams with uniform weights and a brevity
/// penalty.
///
/// Zero match counts are replaced by [`BLEU_EPSILON`]. Orders longer than
/// the candidate are left out and the weights spread over the rest.
pub fn bleu<T: Scalar>(candidate: &str, reference: &str) -> T {
    let c = tokens(candidate);
    let r = tokens(reference);
    bleu_from_stats(&ngram_stats(&c, &r), c.len(), r.len())
}

/// BLEU over pooled n-gram counts and lengths of all pairs.
pub fn corpus_bleu<T: Scalar>(pairs: &[(&str, &str)]) -> T {
    let mut stats = [(0, 0); BLEU_MAX_ORDER];
    let (mut cl, mut rl) = (0, 0);
    for (cand, reference) in pairs {
        let c = tokens(cand);
        let r = tokens(reference);
        for (acc, s) in stats.iter_mut().zip(ngram_stats(&c, &r)) {
            acc.0 += s.0;
            acc.1 += s.1;
        }
        cl += c.len();
        rl += r.len();
    }
    bleu_from_stats(&stats, cl, rl)
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    for x in a {
        let mut cur = vec![0; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// ROUGE-L F1 over tokens.
pub fn rouge_l<T: Scalar>(candidate: &str, reference: &str) -> T {
    let c = tokens(candidate);
    let r = tokens(reference);
    let l = lcs_len(&c, &r);
    if l == 0 {
        return T::zero();
    }
    let p = T::of(l as f64) / T::of(c.len() as f64);
    let rec = T::of(l as f64) / T::of(r.len() as f64);
    T::of(2.0) * p * rec / (p + rec)
}

/// Jaccard index of the token sets. Two empty texts score 1.
pub fn jaccard<T: Scalar>(candidate: &str, reference: &str) -> T {
    let c: HashSet<String> = tokens(candidate).into_iter().collect();
    let r: HashSet<String> = tokens(reference).into_iter().collect();
    let union = c.union(&r).count();
    if union == 0 {
        return T::one();
    }
    T::of(c.intersection(&r).count() as f64) / T::of(union as f64)
}

/// Cosine of the two text embeddings, clipped to `[0, 1]`.
pub fn cosine_text_similarity<T: Scalar>(
    candidate: &str,
    reference: &str,
    backend: &dyn EmbeddingBackend<T>,
) -> Result<T, RetrievalError> {
    let a = encode_text(backend, candidate)?;
    let b = encode_text(backend, reference)?;
    let na = dot(a.vector(), a.vector()).sqrt();
    let nb = dot(b.vector(), b.vector()).sqrt();
    if na == T::zero() || nb == T::zero() {
        return Ok(T::zero());
    }
    let cos = dot(a.vector(), b.vector()) / (na * nb);
    Ok(cos.max(T::zero()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::PlantedBackend;

    #[test]
    fn identical_and_disjoint() {
        let s = "the shiny red apple";
        assert_eq!(bleu::<f64>(s, s), 1.0);
        assert_eq!(rouge_l::<f64>(s, s), 1.0);
        assert_eq!(jaccard::<f64>(s, s), 1.0);
        assert!(bleu::<f64>("a b c d", "e f g h") < 0.05);
        assert_eq!(rouge_l::<f64>("a b", "c d"), 0.0);
        assert_eq!(jaccard::<f64>("a b", "c d"), 0.0);
    }

    #[test]
    fn short_identical_candidates_score_one() {
        assert_eq!(bleu::<f64>("apple", "apple"), 1.0);
        assert_eq!(bleu::<f64>("red apple", "red apple"), 1.0);
    }

    #[test]
    fn rouge_and_jaccard_examples() {
        assert!((rouge_l::<f64>("a b c", "a c") - 0.8).abs() < 1e-15);
        assert_eq!(
            jaccard::<f64>("the shiny red apple", "the red shiny apple"),
            1.0
        );
        assert_eq!(jaccard::<f64>("a b c", "b c d"), 0.5);
    }

    #[test]
    fn corpus_bleu_of_one_pair_is_sentence_bleu() {
        let (c, r) = ("the big dog is here", "the big dog was here");
        assert!((corpus_bleu::<f64>(&[(c, r)]) - bleu::<f64>(c, r)).abs() < 1e-15);
    }

    #[test]
    fn cosine_of_planted_angles() {
        let mut b = PlantedBackend::<f64>::new("p", 2);
        b.plant_text("x", vec![1.0, 0.0]);
        b.plant_text("y", vec![0.0, 1.0]);
        b.plant_text("z", vec![0.5, 3f64.sqrt() / 2.0]);
        b.plant_text("w", vec![-1.0, 0.0]);
        assert_eq!(cosine_text_similarity("x", "x", &b).unwrap(), 1.0);
        assert_eq!(cosine_text_similarity("x", "y", &b).unwrap(), 0.0);
        assert!((cosine_text_similarity("x", "z", &b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(cosine_text_similarity("x", "w", &b).unwrap(), 0.0);
    }
}
