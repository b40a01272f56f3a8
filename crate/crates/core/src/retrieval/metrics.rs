use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

/// `1 − cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::contract("cosine_distance", format!("lengths {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::contract("cosine_distance", "zero-norm vector"));
    }
    Ok(cosine_with_norms(u, v, nu, nv))
}

pub(crate) fn norm(u: &[f32]) -> f64 {
    u.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

pub(crate) fn cosine_with_norms(u: &[f32], v: &[f32], nu: f64, nv: f64) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    (1.0 - dot / (nu * nv)).clamp(0.0, 2.0)
}

/// Non-interpolated average precision of a ranked relevance list, dividing by
/// `total_relevant`, as an exact fraction. `None` when there is nothing
/// relevant to find.
pub fn average_precision_exact(relevance: &[bool], total_relevant: usize) -> Option<BigRational> {
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = BigRational::zero();
    for (k, _) in relevance.iter().enumerate().filter(|(_, r)| **r) {
        hits += 1;
        sum += BigRational::new(BigInt::from(hits), BigInt::from(k + 1));
    }
    Some(sum / BigInt::from(total_relevant))
}

/// AP over the top `k` with the relevant count capped at `k`.
pub fn average_precision_at_exact(relevance: &[bool], total_relevant: usize, k: usize) -> Option<BigRational> {
    let top = &relevance[..k.min(relevance.len())];
    average_precision_exact(top, total_relevant.min(k))
}

/// Fraction relevant among the top `min(k, n)`; zero for an empty list.
pub fn precision_at_k_exact(relevance: &[bool], k: usize) -> BigRational {
    let n = k.min(relevance.len());
    if n == 0 {
        return BigRational::zero();
    }
    let hits = relevance[..n].iter().filter(|&&r| r).count();
    BigRational::new(BigInt::from(hits), BigInt::from(n))
}

/// Nearest f64 to an exact fraction.
pub(crate) fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("metric fractions lie in [0, 1]")
}

pub fn average_precision(relevance: &[bool], total_relevant: usize) -> Option<f64> {
    average_precision_exact(relevance, total_relevant).map(|r| to_f64(&r))
}

pub fn average_precision_at(relevance: &[bool], total_relevant: usize, k: usize) -> Option<f64> {
    average_precision_at_exact(relevance, total_relevant, k).map(|r| to_f64(&r))
}

pub fn precision_at_k(relevance: &[bool], k: usize) -> f64 {
    to_f64(&precision_at_k_exact(relevance, k))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn cosine_fixtures() {
        assert!(cosine_distance(&[0.3, -1.2], &[0.3, -1.2]).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        let d = cosine_distance(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-3.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_distance(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn average_precision_fixtures() {
        assert_eq!(average_precision(&[true, true, false], 2), Some(1.0));
        // Rounded once: a float running sum lands one ulp below 5/6.
        assert_eq!(average_precision(&[true, false, true], 2), Some(5.0 / 6.0));
        assert_eq!(average_precision(&[false, true, false, true], 2), Some(0.5));
        assert_eq!(average_precision(&[false, false], 0), None);
        assert_eq!(average_precision(&[true, false, false, true, false, true], 3), Some((1.0 + 0.5 + 0.5) / 3.0));
        assert_eq!(average_precision(&[false, false, true, false, true], 2), Some(11.0 / 30.0));
    }

    #[test]
    fn truncated_average_precision_caps_the_relevant_count() {
        // Top 2 of [1,0,1,1] with R=3: (1/1) / min(3, 2).
        assert_eq!(average_precision_at(&[true, false, true, true], 3, 2), Some(0.5));
        assert_eq!(average_precision_at(&[true, true, false], 2, 10), Some(1.0));
    }

    #[test]
    fn precision_fixtures() {
        assert_eq!(precision_at_k(&[true, true, true], 3), 1.0);
        assert_eq!(precision_at_k(&[true, false, true, false], 2), 0.5);
        assert_eq!(precision_at_k(&[true, false], 100), 0.5);
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval(rel in proptest::collection::vec(any::<bool>(), 1..60), k in 1usize..80) {
            let r = rel.iter().filter(|&&b| b).count();
            if let Some(ap) = average_precision(&rel, r) {
                prop_assert!((0.0..=1.0).contains(&ap));
            }
            if let Some(ap) = average_precision_at(&rel, r, k) {
                prop_assert!((0.0..=1.0).contains(&ap));
            }
            let p = precision_at_k(&rel, k);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn cosine_distance_is_bounded_and_scale_free(
            u in proptest::collection::vec(-5.0f32..5.0, 4),
            v in proptest::collection::vec(-5.0f32..5.0, 4),
            s in 0.1f32..10.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let d = cosine_distance(&u, &v).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
            let scaled: Vec<f32> = u.iter().map(|x| x * s).collect();
            prop_assert!((cosine_distance(&scaled, &v).unwrap() - d).abs() < 1e-5);
        }
    }
}
