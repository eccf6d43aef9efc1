//! Length-bucketed minibatches.
//!
//! Every batch holds sequences of one length, so recurrent passes run on
//! dense `[B x d]` matrices without masking.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

/// Groups example indices by `lengths[i]`, shuffles inside each group,
/// splits each group into near-equal batches of at most `batch_size`, and
/// shuffles the batch order.
pub fn length_buckets<R: Rng + ?Sized>(lengths: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &len) in lengths.iter().enumerate() {
        groups.entry(len).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in groups {
        idx.shuffle(rng);
        batches.extend(split_even(&idx, batch_size));
    }
    batches.shuffle(rng);
    batches
}

/// Same grouping without any shuffling; used for evaluation passes.
pub fn ordered_buckets(lengths: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &len) in lengths.iter().enumerate() {
        groups.entry(len).or_default().push(i);
    }
    groups.into_values().flat_map(|idx| split_even(&idx, batch_size.max(1))).collect()
}

fn split_even(idx: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let n = idx.len();
    if n == 0 {
        return Vec::new();
    }
    let k = n.div_ceil(batch_size);
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let size = base + usize::from(b < extra);
        out.push(idx[start..start + size].to_vec());
        start += size;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batches_cover_everything_once_with_uniform_lengths() {
        let lengths: Vec<usize> = (0..103).map(|i| 4 + 5 * (i % 4)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batches = length_buckets(&lengths, 16, &mut rng);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.len() <= 16 && b.len() >= 2);
            assert!(b.iter().all(|&i| lengths[i] == lengths[b[0]]));
        }
    }

    #[test]
    fn split_is_balanced() {
        let sizes: Vec<usize> = split_even(&(0..17).collect::<Vec<_>>(), 16).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![9, 8]);
    }
}
