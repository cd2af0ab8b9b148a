use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievalResult;
use crate::scalar::Scalar;

/// Top-1 accuracy, MRR and NDCG over single-image items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub accuracy: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub n_items: usize,
    /// Items whose referent was not among the candidates.
    pub n_unresolvable: usize,
}

impl RetrievalMetrics {
    /// Metrics from 1-based referent ranks; `None` marks an unresolvable item.
    pub fn from_ranks(ranks: &[Option<usize>]) -> Self {
        RetrievalMetrics {
            accuracy: mean_by(ranks, hit::<f64>),
            mrr: mean_by(ranks, reciprocal_rank::<f64>),
            ndcg: mean_by(ranks, ndcg_at::<f64>),
            n_items: ranks.len(),
            n_unresolvable: ranks.iter().filter(|r| r.is_none()).count(),
        }
    }

    /// Arithmetic mean of the rates over parts with items; counts are summed.
    pub fn mean(parts: &[RetrievalMetrics]) -> Self {
        let used: Vec<&RetrievalMetrics> = parts.iter().filter(|p| p.n_items > 0).collect();
        let avg = |f: fn(&RetrievalMetrics) -> f64| {
            if used.is_empty() {
                0.0
            } else {
                used.iter().map(|p| f(p)).sum::<f64>() / used.len() as f64
            }
        };
        RetrievalMetrics {
            accuracy: avg(|p| p.accuracy),
            mrr: avg(|p| p.mrr),
            ndcg: avg(|p| p.ndcg),
            n_items: parts.iter().map(|p| p.n_items).sum(),
            n_unresolvable: parts.iter().map(|p| p.n_unresolvable).sum(),
        }
    }
}

fn mean_by<T: Scalar>(ranks: &[Option<usize>], f: impl Fn(Option<usize>) -> T) -> T {
    if ranks.is_empty() {
        return T::zero();
    }
    let sum = ranks.iter().fold(T::zero(), |acc, &r| acc + f(r));
    sum / T::of(ranks.len() as f64)
}

pub fn hit<T: Scalar>(rank: Option<usize>) -> T {
    if rank == Some(1) {
        T::one()
    } else {
        T::zero()
    }
}

pub fn reciprocal_rank<T: Scalar>(rank: Option<usize>) -> T {
    match rank {
        Some(r) if r > 0 => T::one() / T::of(r as f64),
        _ => T::zero(),
    }
}

/// Binary-relevance NDCG with one relevant item: `1 / log2(1 + rank)`.
pub fn ndcg_at<T: Scalar>(rank: Option<usize>) -> T {
    match rank {
        Some(r) if r > 0 => T::one() / T::of((1 + r) as f64).log2(),
        _ => T::zero(),
    }
}

fn ranks<T>(results: &[RetrievalResult<T>]) -> Vec<Option<usize>> {
    results.iter().map(|r| r.rank_of_referent).collect()
}

/// Fraction of items whose top candidate is the referent.
pub fn accuracy<T: Scalar>(results: &[RetrievalResult<T>]) -> T {
    mean_by(&ranks(results), hit)
}

pub fn mrr<T: Scalar>(results: &[RetrievalResult<T>]) -> T {
    mean_by(&ranks(results), reciprocal_rank)
}

pub fn ndcg<T: Scalar>(results: &[RetrievalResult<T>]) -> T {
    mean_by(&ranks(results), ndcg_at)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(rank: Option<usize>) -> RetrievalResult<f64> {
        RetrievalResult {
            mention_id: "m".into(),
            image_ids: vec![],
            scores: vec![],
            ranking: vec![],
            predicted: String::new(),
            rank_of_referent: rank,
        }
    }

    #[test]
    fn small_cases() {
        let rs: Vec<_> = [Some(1), Some(1), Some(3)]
            .into_iter()
            .map(result)
            .collect();
        assert!((accuracy(&rs) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mrr(&[result(Some(4))]), 0.25);
        assert_eq!(mrr(&[result(Some(1)), result(Some(2))]), 0.75);
        assert_eq!(ndcg(&[result(Some(1))]), 1.0);
        assert_eq!(ndcg(&[result(Some(3))]), 0.5);
        assert!((ndcg(&[result(Some(2))]) - 0.6309297535714574).abs() < 1e-15);
    }

    #[test]
    fn unresolvable_items_score_zero() {
        let m = RetrievalMetrics::from_ranks(&[None, None]);
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.mrr, 0.0);
        assert_eq!(m.n_unresolvable, 2);
        assert_eq!(m.n_items, 2);
    }

    #[test]
    fn mean_skips_empty_parts() {
        let a = RetrievalMetrics::from_ranks(&[Some(1)]);
        let b = RetrievalMetrics::from_ranks(&[Some(2), None]);
        let m = RetrievalMetrics::mean(&[a, b, RetrievalMetrics::default()]);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.n_items, 3);
        assert_eq!(m.n_unresolvable, 1);
    }
}
