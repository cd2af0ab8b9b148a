//! Expected scores of a uniformly random ranker.
//!
//! Generic over the number type so expectations can be computed exactly
//! with [`crate::Exact`] as well as in floating point.

use num_traits::{FromPrimitive, Num};

use super::EvalError;

fn of<T: FromPrimitive>(k: usize) -> Result<T, EvalError> {
    T::from_usize(k).ok_or(EvalError::InvalidSizes(
        "candidate set size not representable",
    ))
}

fn mean_over<T, F>(sizes: &[usize], f: F) -> Result<T, EvalError>
where
    T: Num + FromPrimitive + Clone,
    F: Fn(usize) -> Result<T, EvalError>,
{
    if sizes.is_empty() {
        return Err(EvalError::InvalidSizes("no items"));
    }
    if sizes.contains(&0) {
        return Err(EvalError::InvalidSizes("empty candidate set"));
    }
    let mut sum = T::zero();
    for &k in sizes {
        sum = sum + f(k)?;
    }
    Ok(sum / of::<T>(sizes.len())?)
}

/// Mean of `1/|C|`.
pub fn expected_random_accuracy<T: Num + FromPrimitive + Clone>(
    sizes: &[usize],
) -> Result<T, EvalError> {
    mean_over(sizes, |k| Ok(T::one() / of::<T>(k)?))
}

/// Mean of `1 / (|C|/2)`, i.e. `2/|C|`.
///
/// This is the published baseline formula; it is not the true expectation
/// of a random ranking, which [`expected_random_mrr_exact`] computes.
pub fn expected_random_mrr<T: Num + FromPrimitive + Clone>(
    sizes: &[usize],
) -> Result<T, EvalError> {
    mean_over(sizes, |k| Ok(of::<T>(2)? / of::<T>(k)?))
}

/// Mean of `H(|C|)/|C|`, the expected reciprocal rank of a uniform ranking.
pub fn expected_random_mrr_exact<T: Num + FromPrimitive + Clone>(
    sizes: &[usize],
) -> Result<T, EvalError> {
    mean_over(sizes, |k| {
        let mut h = T::zero();
        for i in 1..=k {
            h = h + T::one() / of::<T>(i)?;
        }
        Ok(h / of::<T>(k)?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Exact;

    #[test]
    fn exact_values() {
        assert_eq!(
            expected_random_accuracy::<Exact>(&[9, 9, 9]).unwrap(),
            Exact::new(1, 9)
        );
        assert_eq!(
            expected_random_mrr::<Exact>(&[9; 4]).unwrap(),
            Exact::new(2, 9)
        );
        assert_eq!(
            expected_random_accuracy::<Exact>(&[2, 4]).unwrap(),
            Exact::new(3, 8)
        );
        assert_eq!(
            expected_random_mrr::<Exact>(&[2]).unwrap(),
            Exact::from_integer(1)
        );
        // H(3)/3 = (11/6)/3
        assert_eq!(
            expected_random_mrr_exact::<Exact>(&[3]).unwrap(),
            Exact::new(11, 18)
        );
    }

    #[test]
    fn float_and_exact_agree() {
        let sizes = [9, 8, 7, 7, 5, 9];
        let e: Exact = expected_random_accuracy(&sizes).unwrap();
        let f: f64 = expected_random_accuracy(&sizes).unwrap();
        assert!((*e.numer() as f64 / *e.denom() as f64 - f).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(expected_random_accuracy::<f64>(&[]).is_err());
        assert!(expected_random_mrr::<f64>(&[3, 0]).is_err());
    }
}
