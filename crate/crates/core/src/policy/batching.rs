use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

/// Times each dialogue appears per epoch: `round(sqrt(c_max / c_rare))`,
/// at least 1, where `c_rare` is the corpus count of the dialogue's rarest
/// gold label and `c_max` the count of the most frequent label.
pub fn oversampling_factors(gold_labels: &[Vec<usize>]) -> Vec<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for labels in gold_labels {
        for &l in labels {
            *counts.entry(l).or_default() += 1;
        }
    }
    let c_max = counts.values().copied().max().unwrap_or(1) as f64;
    gold_labels
        .iter()
        .map(|labels| {
            let rare = labels.iter().map(|l| counts[l]).min();
            match rare {
                Some(c) => ((c_max / c as f64).sqrt().round() as usize).max(1),
                None => 1,
            }
        })
        .collect()
}

/// One epoch of batches over dialogue indices `0..gold_labels.len()`:
/// oversample by [`oversampling_factors`], shuffle, chunk.
pub fn balanced_batches<R: Rng + ?Sized>(
    gold_labels: &[Vec<usize>],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let factors = oversampling_factors(gold_labels);
    let mut order: Vec<usize> = factors
        .iter()
        .enumerate()
        .flat_map(|(i, &f)| std::iter::repeat_n(i, f))
        .collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Per-label turn counts over an epoch's batches.
pub fn label_counts(gold_labels: &[Vec<usize>], batches: &[Vec<usize>]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &d in batches.iter().flatten() {
        for &l in &gold_labels[d] {
            *counts.entry(l).or_default() += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nine_to_one_becomes_at_most_three_to_one() {
        let mut labels = vec![vec![0]; 9];
        labels.push(vec![1]);
        let batches = balanced_batches(&labels, 4, &mut ChaCha8Rng::seed_from_u64(1));
        let c = label_counts(&labels, &batches);
        assert!(c[&0] <= 3 * c[&1], "{c:?}");
    }

    #[test]
    fn single_label_is_a_plain_shuffle() {
        let labels = vec![vec![2, 2]; 7];
        let batches = balanced_batches(&labels, 3, &mut ChaCha8Rng::seed_from_u64(5));
        let mut seen: Vec<usize> = batches.concat();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }
}
