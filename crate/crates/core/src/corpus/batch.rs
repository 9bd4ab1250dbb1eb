use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SentencePair, Vocabulary, PAD};
use crate::error::{Error, Result};

/// A pair as framed id sequences (`BOS ... EOS` on both sides).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl EncodedPair {
    pub fn encode_all(pairs: &[SentencePair], vocab: &Vocabulary) -> Vec<EncodedPair> {
        pairs
            .iter()
            .map(|p| EncodedPair {
                source: vocab.encode(&p.source),
                target: vocab.encode(&p.target),
            })
            .collect()
    }
}

/// Right-padded ids with masks, one row per example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<Vec<usize>>,
    pub source_mask: Vec<Vec<bool>>,
    pub target: Vec<Vec<usize>>,
    pub target_mask: Vec<Vec<bool>>,
    /// Positions of the examples in the input dataset.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&EncodedPair], indices: Vec<usize>) -> Self {
        let (source, source_mask) = pad(pairs.iter().map(|p| p.source.as_slice()));
        let (target, target_mask) = pad(pairs.iter().map(|p| p.target.as_slice()));
        Self {
            source,
            source_mask,
            target,
            target_mask,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Right-pads to the longest sequence; mask marks real positions.
pub fn pad_sequences(seqs: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    pad(seqs.iter().map(Vec::as_slice))
}

fn pad<'a>(seqs: impl Iterator<Item = &'a [usize]> + Clone) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    let width = seqs.clone().map(<[usize]>::len).max().unwrap_or(0);
    seqs.map(|s| {
        let mut ids = s.to_vec();
        ids.resize(width, PAD);
        let mask = (0..width).map(|i| i < s.len()).collect();
        (ids, mask)
    })
    .unzip()
}

/// Splits `data` into batches of at most `batch_size`. With a seed, the
/// order is a ChaCha8 permutation of that seed; without, input order.
pub fn batches(data: &[EncodedPair], batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|idx| {
            let pairs: Vec<&EncodedPair> = idx.iter().map(|&i| &data[i]).collect();
            Batch::from_pairs(&pairs, idx.to_vec())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn enc(n: usize) -> Vec<EncodedPair> {
        (0..n)
            .map(|i| EncodedPair {
                source: vec![1, 4 + i % 7, 2],
                target: vec![1, 4 + i % 5, 5, 2],
            })
            .collect()
    }

    #[test]
    fn sizes_64_64_2() {
        let b = batches(&enc(130), 64, Some(3)).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![64, 64, 2]);
    }

    #[test]
    fn padding_and_mask() {
        let data = vec![
            EncodedPair { source: vec![1, 4, 2], target: vec![1, 2] },
            EncodedPair { source: vec![1, 4, 5, 6, 2], target: vec![1, 2] },
        ];
        let b = &batches(&data, 8, None).unwrap()[0];
        assert_eq!(b.source[0], vec![1, 4, 2, PAD, PAD]);
        assert_eq!(b.source_mask[0], vec![true, true, true, false, false]);
        assert_eq!(b.source_mask[1], vec![true; 5]);
    }

    #[test]
    fn same_seed_same_order() {
        let d = enc(100);
        assert_eq!(batches(&d, 16, Some(9)).unwrap(), batches(&d, 16, Some(9)).unwrap());
        assert_ne!(batches(&d, 16, Some(9)).unwrap(), batches(&d, 16, Some(10)).unwrap());
    }

    #[test]
    fn zero_batch_size_is_an_error() {
        assert!(batches(&enc(3), 0, None).is_err());
    }

    proptest! {
        #[test]
        fn unshuffled_batches_cover_dataset_once(n in 0usize..200, bs in 1usize..70) {
            let d = enc(n);
            let b = batches(&d, bs, None).unwrap();
            let idx: Vec<usize> = b.iter().flat_map(|x| x.indices.clone()).collect();
            prop_assert_eq!(idx, (0..n).collect::<Vec<_>>());
            prop_assert!(b.iter().all(|x| x.len() <= bs));
        }

        #[test]
        fn shuffled_batches_are_a_permutation(n in 0usize..200, bs in 1usize..70, seed in any::<u64>()) {
            let d = enc(n);
            let mut idx: Vec<usize> = batches(&d, bs, Some(seed)).unwrap().iter().flat_map(|x| x.indices.clone()).collect();
            idx.sort_unstable();
            prop_assert_eq!(idx, (0..n).collect::<Vec<_>>());
        }
    }
}
