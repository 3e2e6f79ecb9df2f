use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::TokenSeq;
use super::vocab::PAD;
use crate::error::{Error, Result};

/// Sequences of one column padded to a common width, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedIds {
    pub ids: Vec<u32>,
    pub lens: Vec<usize>,
    pub width: usize,
}

impl PaddedIds {
    pub fn new(rows: &[&TokenSeq]) -> Self {
        let width = rows.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![PAD; rows.len() * width];
        for (r, s) in rows.iter().enumerate() {
            ids[r * width..r * width + s.len()].copy_from_slice(s.ids());
        }
        Self {
            ids,
            lens: rows.iter().map(|s| s.len()).collect(),
            width,
        }
    }

    pub fn rows(&self) -> usize {
        self.lens.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.width..r * self.width + self.lens[r]]
    }
}

/// A group of aligned rows (pairs or triples) drawn from a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Corpus row of each batch row.
    pub index: Vec<usize>,
    pub columns: Vec<PaddedIds>,
}

impl Batch {
    pub fn from_rows(columns: &[&[TokenSeq]], index: Vec<usize>) -> Self {
        let columns = columns
            .iter()
            .map(|col| PaddedIds::new(&index.iter().map(|&i| &col[i]).collect::<Vec<_>>()))
            .collect();
        Self { index, columns }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Rows times the widest column.
    pub fn padded_tokens(&self) -> usize {
        self.len() * self.columns.iter().map(|c| c.width).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batching {
    pub batches: Vec<Batch>,
    /// Rows longer than the token cap.
    pub skipped: Vec<usize>,
}

/// Groups aligned columns into batches of at most `max_tokens` padded tokens.
///
/// Rows are ordered by length (longest first, ties by row index) so padding
/// stays small and lengths descend within each batch; the batch order is then
/// shuffled with `seed`.
pub fn make_batches(columns: &[&[TokenSeq]], max_tokens: usize, seed: u64) -> Result<Batching> {
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::contract("batch columns differ in length"));
    }
    if max_tokens == 0 {
        return Err(Error::contract("max_tokens must be positive"));
    }
    let row_len = |i: usize| columns.iter().map(|c| c[i].len()).max().unwrap_or(0);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(columns[0][i].len()), std::cmp::Reverse(row_len(i)), i));
    let mut skipped = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut cur_width = 0;
    for i in order {
        let w = row_len(i);
        if w > max_tokens {
            skipped.push(i);
            continue;
        }
        let width = cur_width.max(w);
        if !cur.is_empty() && width * (cur.len() + 1) > max_tokens {
            groups.push(std::mem::take(&mut cur));
            cur_width = w;
        } else {
            cur_width = width;
        }
        cur.push(i);
    }
    if !cur.is_empty() {
        groups.push(cur);
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    skipped.sort_unstable();
    Ok(Batching {
        batches: groups.into_iter().map(|g| Batch::from_rows(columns, g)).collect(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seqs(lens: &[usize]) -> Vec<TokenSeq> {
        lens.iter()
            .enumerate()
            .map(|(i, &l)| TokenSeq::new((0..l).map(|j| 4 + (i + j) as u32 % 50).collect()).unwrap())
            .collect()
    }

    #[test]
    fn long_rows_are_skipped() {
        let src = seqs(&[3, 9, 2]);
        let b = make_batches(&[&src], 5, 0).unwrap();
        assert_eq!(b.skipped, vec![1]);
        assert_eq!(b.batches.iter().map(Batch::len).sum::<usize>(), 2);
    }

    #[test]
    fn padding_trails() {
        let src = seqs(&[2, 4]);
        let b = make_batches(&[&src], 100, 0).unwrap();
        let col = &b.batches[0].columns[0];
        assert_eq!(col.lens, vec![4, 2]);
        assert_eq!(&col.ids[4..], &[src[0].ids()[0], src[0].ids()[1], PAD, PAD]);
        assert_eq!(col.row(1), src[0].ids());
    }

    proptest! {
        #[test]
        fn batches_partition_corpus(lens in prop::collection::vec(1usize..15, 1..60), cap in 15usize..80, seed in 0u64..50) {
            let src = seqs(&lens);
            let tgt = seqs(&lens.iter().rev().copied().collect::<Vec<_>>());
            let b = make_batches(&[&src, &tgt], cap, seed).unwrap();
            let mut seen: Vec<usize> = b.batches.iter().flat_map(|x| x.index.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..lens.len()).collect::<Vec<_>>());
            for batch in &b.batches {
                prop_assert!(batch.padded_tokens() <= cap);
                let l = &batch.columns[0].lens;
                prop_assert!(l.windows(2).all(|w| w[0] >= w[1]));
                for (r, &i) in batch.index.iter().enumerate() {
                    prop_assert_eq!(batch.columns[1].row(r), tgt[i].ids());
                }
            }
            let again = make_batches(&[&src, &tgt], cap, seed).unwrap();
            prop_assert_eq!(again, b);
        }
    }
}
