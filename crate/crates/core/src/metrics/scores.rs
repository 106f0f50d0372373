use crate::error::{Error, Result};

/// Fraction of pairs with `a > b` (strictly).
pub fn success_score(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("score pairs"));
    }
    Ok(pairs.iter().filter(|(a, b)| a > b).count() as f64 / pairs.len() as f64)
}

/// Mean of `a − b`.
pub fn magnitude_score(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("score pairs"));
    }
    Ok(pairs.iter().map(|(a, b)| a - b).sum::<f64>() / pairs.len() as f64)
}
