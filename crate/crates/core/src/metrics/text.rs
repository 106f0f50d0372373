use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

fn ngram_entropy(texts: &[Vec<&str>], n: usize) -> f64 {
    let mut counts: BTreeMap<&[&str], usize> = BTreeMap::new();
    for tokens in texts {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    let total = counts.values().sum::<usize>() as f64;
    -counts
        .values()
        .map(|&c| {
            let f = c as f64 / total;
            f * f.log2()
        })
        .sum::<f64>()
}

/// `(1/3)·H₂ + (2/3)·H₃`, the base-2 entropies of the bigram and trigram
/// frequency distributions of whitespace tokens, counted within each text
/// and pooled over `texts`.
pub fn generation_entropy<S: AsRef<str>>(texts: &[S]) -> Result<f64> {
    let tokens: Vec<Vec<&str>> = texts.iter().map(|t| t.as_ref().split_whitespace().collect()).collect();
    if !tokens.iter().any(|t| t.len() >= 3) {
        return Err(Error::TooShort("n-gram entropy needs a text with >= 3 tokens".into()));
    }
    // −Σ f log f can come out as −0.0 for a single n-gram.
    Ok((ngram_entropy(&tokens, 2) / 3.0 + 2.0 * ngram_entropy(&tokens, 3) / 3.0).max(0.0))
}

fn term_counts(text: &str) -> BTreeMap<&str, f64> {
    let mut tf = BTreeMap::new();
    for t in text.split_whitespace() {
        *tf.entry(t).or_insert(0.0) += 1.0;
    }
    tf
}

/// Cosine similarity of unigram TF-IDF vectors of the concatenated
/// `generated` texts and the concatenated `references`.
///
/// Document frequencies come from the collection `generated ∪ references`
/// with smoothed `idf(t) = ln((1 + N) / (1 + df(t))) + 1`. Returns 0 when
/// either side has no terms.
pub fn reference_score(generated: &[String], references: &[String]) -> Result<f64> {
    if generated.is_empty() || references.is_empty() {
        return Err(Error::Empty("reference score texts"));
    }
    let docs: Vec<&String> = generated.iter().chain(references).collect();
    let n = docs.len() as f64;
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for doc in &docs {
        let terms: BTreeSet<&str> = doc.split_whitespace().collect();
        for t in terms {
            *df.entry(t).or_insert(0.0) += 1.0;
        }
    }
    let idf = |t: &str| ((1.0 + n) / (1.0 + df[t])).ln() + 1.0;
    let vector = |texts: &[String]| {
        let joined = texts.join(" ");
        let mut v: BTreeMap<String, f64> = term_counts(&joined)
            .into_iter()
            .map(|(t, c)| (t.to_string(), c * idf(t)))
            .collect();
        let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.values_mut().for_each(|x| *x /= norm);
        }
        v
    };
    let g = vector(generated);
    let r = vector(references);
    Ok(g.iter().filter_map(|(t, x)| r.get(t).map(|y| x * y)).sum::<f64>().clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ngrams_give_two_bits() {
        // Bigrams ab bc cd da twice each, trigrams abc bcd cda dab once each.
        let ge = generation_entropy(&["a b c", "b c d", "c d a", "d a b"]).unwrap();
        assert!((ge - 2.0).abs() < 1e-12, "{ge}");
    }

    #[test]
    fn repeated_token_has_zero_entropy() {
        assert_eq!(generation_entropy(&["x x x x x x"]).unwrap(), 0.0);
    }

    #[test]
    fn short_text_is_rejected() {
        assert!(generation_entropy(&["a b", "c"]).is_err());
    }

    #[test]
    fn identical_and_disjoint_texts() {
        let a = vec!["red fox jumps".to_string()];
        let b = vec!["blue owl sleeps".to_string()];
        assert!((reference_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(reference_score(&a, &b).unwrap(), 0.0);
    }
}
