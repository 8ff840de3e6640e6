//! Deterministic corpus splitting at match granularity so no session
//! leaks lines across train/validation/test.

use crate::chat::MatchSession;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("{matches} matches cannot cover {parts} non-empty split parts")]
    TooFewMatches { matches: usize, parts: usize },
}

/// Index sets into the original corpus slice, disjoint and exhaustive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl CorpusSplit {
    pub fn select<'a>(&self, corpus: &'a [MatchSession], part: &[usize]) -> Vec<&'a MatchSession> {
        part.iter().map(|&i| &corpus[i]).collect()
    }
}

/// Shuffles match indices with a seeded generator and portions them out
/// by largest remainder, so e.g. 10 matches at 0.6/0.2/0.2 always yield
/// 6/2/2 and counts always sum to the corpus size. Every part with a
/// positive fraction is guaranteed at least one match.
pub fn split_corpus(
    corpus: &[MatchSession],
    fractions: [f64; 3],
    seed: u64,
) -> Result<CorpusSplit, SplitError> {
    let total_fraction: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| f < 0.0) || (total_fraction - 1.0).abs() > 1e-9 {
        return Err(SplitError::BadFractions(fractions));
    }
    let parts = fractions.iter().filter(|&&f| f > 0.0).count();
    if corpus.len() < parts {
        return Err(SplitError::TooFewMatches { matches: corpus.len(), parts });
    }

    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let n = corpus.len() as f64;
    let mut counts = [0usize; 3];
    let mut remainders = [(0usize, 0.0f64); 3];
    for (i, &fraction) in fractions.iter().enumerate() {
        let exact = fraction * n;
        counts[i] = exact.floor() as usize;
        remainders[i] = (i, exact - exact.floor());
    }
    let mut leftover = corpus.len() - counts.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    // Top up any part that was promised matches but rounded to zero.
    for i in 0..3 {
        if fractions[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).expect("three parts");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }

    let mut cursor = indices.into_iter();
    let train: Vec<usize> = cursor.by_ref().take(counts[0]).collect();
    let val: Vec<usize> = cursor.by_ref().take(counts[1]).collect();
    let test: Vec<usize> = cursor.collect();
    Ok(CorpusSplit { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::{MatchSession, TeamSize};
    use rand::Rng;

    fn corpus(n: usize) -> Vec<MatchSession> {
        (0..n)
            .map(|i| MatchSession::new(format!("m{i}"), 2, TeamSize::Bounded(5)))
            .collect()
    }

    #[test]
    fn ten_matches_split_six_two_two() {
        let split = split_corpus(&corpus(10), [0.6, 0.2, 0.2], 7).unwrap();
        assert_eq!(split.train.len(), 6);
        assert_eq!(split.val.len(), 2);
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn split_is_a_partition_of_the_corpus() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(3..40);
            let split = split_corpus(&corpus(n), [0.7, 0.15, 0.15], rng.random()).unwrap();
            let mut all: Vec<usize> = split
                .train
                .iter()
                .chain(&split.val)
                .chain(&split.test)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn same_seed_reproduces_and_different_seed_differs() {
        let c = corpus(30);
        let a = split_corpus(&c, [0.6, 0.2, 0.2], 42).unwrap();
        let b = split_corpus(&c, [0.6, 0.2, 0.2], 42).unwrap();
        assert_eq!(a, b);
        let c2 = split_corpus(&c, [0.6, 0.2, 0.2], 43).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn each_positive_part_gets_at_least_one_match() {
        let split = split_corpus(&corpus(3), [0.98, 0.01, 0.01], 1).unwrap();
        assert_eq!(split.train.len(), 1);
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn zero_fraction_parts_stay_empty() {
        let split = split_corpus(&corpus(5), [0.8, 0.0, 0.2], 3).unwrap();
        assert!(split.val.is_empty());
        assert_eq!(split.train.len() + split.test.len(), 5);
    }

    #[test]
    fn errors_on_bad_fractions_and_too_few_matches() {
        assert!(matches!(
            split_corpus(&corpus(10), [0.5, 0.2, 0.2], 0),
            Err(SplitError::BadFractions(_))
        ));
        assert!(matches!(
            split_corpus(&corpus(2), [0.6, 0.2, 0.2], 0),
            Err(SplitError::TooFewMatches { matches: 2, parts: 3 })
        ));
    }
}
