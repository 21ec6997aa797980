use crate::error::{Error, Result};

/// Empirical CDF of `values` evaluated at `query`: the fraction of values `<= query`.
pub fn ecdf(values: &[f64], query: f64) -> Result<f64> {
    let sorted = sorted_finite(values)?;
    Ok(ecdf_sorted(&sorted, query))
}

/// The ECDF step points `(value, F(value))` for every distinct value, ascending.
pub fn ecdf_curve(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    let sorted = sorted_finite(values)?;
    let n = sorted.len() as f64;
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match curve.last_mut() {
            Some(last) if last.0 == v => last.1 = p,
            _ => curve.push((v, p)),
        }
    }
    Ok(curve)
}

/// Two-sample Kolmogorov–Smirnov statistic: the largest gap between the two ECDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let sa = sorted_finite(a)?;
    let sb = sorted_finite(b)?;
    // Both ECDFs are right-continuous steps, so the sup is attained at a sample point.
    let gap = sa
        .iter()
        .chain(&sb)
        .map(|&q| (ecdf_sorted(&sa, q) - ecdf_sorted(&sb, q)).abs())
        .fold(0.0, f64::max);
    Ok(gap)
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Data("ECDF of an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("ECDF input contains a non-finite value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

fn ecdf_sorted(sorted: &[f64], query: f64) -> f64 {
    let count = sorted.partition_point(|&v| v <= query);
    count as f64 / sorted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn direct_count() {
        assert_eq!(ecdf(&[1.0, 2.0, 3.0], 2.0).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn boundaries() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(ecdf(&v, 0.5).unwrap(), 0.0);
        assert_eq!(ecdf(&v, 3.0).unwrap(), 1.0);
        assert_eq!(ecdf(&v, f64::NEG_INFINITY).unwrap(), 0.0);
        assert_eq!(ecdf(&v, f64::INFINITY).unwrap(), 1.0);
        assert!(ecdf(&[], 1.0).is_err());
    }

    #[test]
    fn matches_brute_force_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        for _ in 0..50 {
            let q: f64 = rng.random_range(-6.0..6.0);
            let brute = values.iter().filter(|&&v| v <= q).count() as f64 / 100.0;
            assert_eq!(ecdf(&values, q).unwrap(), brute);
        }
    }

    #[test]
    fn curve_is_a_nondecreasing_step() {
        let curve = ecdf_curve(&[3.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(curve, vec![(1.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
    }

    #[test]
    fn ks_of_disjoint_samples_is_one() {
        assert_eq!(ks_statistic(&[0.0, 0.1, 0.2], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
    }
}
