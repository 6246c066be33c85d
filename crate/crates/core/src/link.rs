//! Logistic link functions.

/// Clipping bound for probabilities entering [`logit`].
pub const LOGIT_EPS: f64 = 1e-6;

pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of `p`, after clipping `p` into `[LOGIT_EPS, 1 - LOGIT_EPS]`.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

/// Applies [`logit`] and counts how many inputs had to be clipped.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ClippedLogit {
    pub clipped: usize,
}

impl ClippedLogit {
    pub fn apply(&mut self, p: f64) -> f64 {
        if !(LOGIT_EPS..=1.0 - LOGIT_EPS).contains(&p) {
            self.clipped += 1;
        }
        logit(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert_eq!(logit(0.5), 0.0);
        assert_eq!(expit(0.0), 0.5);
        assert!((expit(logit(0.73)) - 0.73).abs() < 1e-12);
        assert!((logit(0.75) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn clipping_is_counted() {
        let mut c = ClippedLogit::default();
        let lo = c.apply(0.0);
        let hi = c.apply(1.0);
        c.apply(0.3);
        assert_eq!(c.clipped, 2);
        assert!((lo - logit(LOGIT_EPS)).abs() < 1e-12);
        assert!((hi + lo).abs() < 1e-6);
    }

    #[test]
    fn expit_is_stable_at_extremes() {
        assert_eq!(expit(-800.0), 0.0);
        assert_eq!(expit(800.0), 1.0);
    }

    proptest! {
        #[test]
        fn expit_inverts_logit(p in LOGIT_EPS..(1.0 - LOGIT_EPS)) {
            prop_assert!((expit(logit(p)) - p).abs() < 1e-12);
        }
    }
}
