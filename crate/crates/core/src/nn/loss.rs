use ndarray::{ArrayView2, Zip};

use super::NnError;

/// Probability clip applied inside the cross-entropy.
pub const BCE_EPSILON: f64 = 1e-7;

/// Logistic function, kept strictly inside (0, 1) even when saturated.
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[inline]
fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over labels.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64, NnError> {
    if probs.len() != labels.len() {
        return Err(NnError::Dimension {
            expected: probs.len(),
            got: labels.len(),
        });
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = probs.iter().zip(labels).map(|(&p, &y)| bce_term(p, y)).sum();
    Ok(s / probs.len() as f64)
}

/// Mean binary cross-entropy over every entry of a batch.
pub fn bce_loss_matrix(probs: ArrayView2<f64>, labels: ArrayView2<f64>) -> f64 {
    assert_eq!(probs.dim(), labels.dim(), "prediction/label shape mismatch");
    let mut s = 0.0;
    Zip::from(probs)
        .and(labels)
        .for_each(|&p, &y| s += bce_term(p, y));
    s / probs.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_near_zero() {
        let l = bce_loss(&[1.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(l <= 1e-6, "{l}");
    }

    #[test]
    fn half_probability_is_ln2() {
        let l = bce_loss(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn single_term() {
        // −ln 0.9
        let l = bce_loss(&[0.9], &[1.0]).unwrap();
        assert!((l - 0.105361).abs() < 1e-6, "{l}");
    }

    #[test]
    fn length_mismatch() {
        assert!(bce_loss(&[0.5, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn sigmoid_stays_open() {
        assert!(sigmoid(1000.0) < 1.0);
        assert!(sigmoid(-1000.0) > 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
