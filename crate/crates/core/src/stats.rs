//! Small numeric helpers shared by the estimators.

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// One-sided p-value for `H0: theta <= 0` from a normal approximation.
///
/// A zero standard error yields 0 or 1 depending on the sign of the estimate
/// (0.5 when the estimate is exactly zero).
pub fn p_value_one_sided(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        (1.0 - normal_cdf(estimate / se)).clamp(0.0, 1.0)
    } else if estimate > 0.0 {
        0.0
    } else if estimate < 0.0 {
        1.0
    } else {
        0.5
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean computed around the first element, so a constant slice returns that
/// constant bit-exactly.
pub fn shifted_mean(xs: &[f64]) -> f64 {
    match xs.first() {
        None => f64::NAN,
        Some(&x0) => x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64,
    }
}

/// Unbiased sample variance (n - 1 denominator); zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Median of a slice (average of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Indices sorted by descending score, ties broken by ascending index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
    }

    #[test]
    fn shifted_mean_is_exact_on_constants() {
        assert_eq!(shifted_mean(&[0.4; 7]), 0.4);
        assert!((shifted_mean(&[1.0, 2.0, 6.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rank_ties_stable() {
        assert_eq!(rank_descending(&[1.0, 3.0, 3.0, 2.0]), vec![1, 2, 3, 0]);
    }

    #[test]
    fn one_sided_p_edges() {
        assert_eq!(p_value_one_sided(1.0, 0.0), 0.0);
        assert_eq!(p_value_one_sided(-1.0, 0.0), 1.0);
        assert!((p_value_one_sided(0.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
