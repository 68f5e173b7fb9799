//! Set partitions of `{1, ..., n}` in canonical least-element block order.

use crate::error::{Error, Result};
use std::fmt;

/// A set partition of `{1, ..., n}`. Blocks are disjoint, cover the ground
/// set, and are kept sorted internally with blocks ordered by their least
/// element, so equal partitions compare equal structurally.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    n: usize,
    blocks: Vec<Vec<u32>>,
}

impl Partition {
    /// The partition of `{1, ..., n}` into singletons.
    pub fn singletons(n: usize) -> Self {
        Partition {
            n,
            blocks: (1..=n as u32).map(|i| vec![i]).collect(),
        }
    }

    /// Build from arbitrary blocks; validates disjoint cover and canonicalizes.
    pub fn from_blocks(n: usize, mut blocks: Vec<Vec<u32>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for b in &mut blocks {
            if b.is_empty() {
                return Err(Error::Argument("empty block".into()));
            }
            b.sort_unstable();
            for &e in b.iter() {
                if e == 0 || e as usize > n {
                    return Err(Error::Argument(format!("element {e} outside 1..={n}")));
                }
                if std::mem::replace(&mut seen[e as usize - 1], true) {
                    return Err(Error::Argument(format!("element {e} appears twice")));
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Argument("blocks do not cover the ground set".into()));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Partition { n, blocks })
    }

    /// Build from labels: `labels[i]` is the block of element `i+1`; labels
    /// need not be canonical. Blocks come out in first-seen order, which is
    /// exactly least-element order.
    pub fn from_labels(labels: &[u32]) -> Self {
        let n = labels.len();
        let mut blocks: Vec<Vec<u32>> = Vec::new();
        let mut seen: Vec<u32> = Vec::new();
        for (i, &lab) in labels.iter().enumerate() {
            match seen.iter().position(|&l| l == lab) {
                Some(k) => blocks[k].push(i as u32 + 1),
                None => {
                    seen.push(lab);
                    blocks.push(vec![i as u32 + 1]);
                }
            }
        }
        Partition { n, blocks }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<u32>] {
        &self.blocks
    }

    pub fn is_singletons(&self) -> bool {
        self.blocks.len() == self.n
    }

    /// True if every block of `self` is contained in a block of `other`.
    pub fn refines(&self, other: &Partition) -> bool {
        if self.n != other.n {
            return false;
        }
        let mut label = vec![0u32; self.n];
        for (k, b) in other.blocks.iter().enumerate() {
            for &e in b {
                label[e as usize - 1] = k as u32;
            }
        }
        self.blocks
            .iter()
            .all(|b| b.iter().all(|&e| label[e as usize - 1] == label[b[0] as usize - 1]))
    }

    /// Restricted-growth-string encoding; a compact canonical key.
    pub fn rgs(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.n];
        for (k, b) in self.blocks.iter().enumerate() {
            for &e in b {
                out[e as usize - 1] = k as u8;
            }
        }
        out
    }
}

impl fmt::Display for Partition {
    /// Serialized as block-sorted `1,2|3|4`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, "|")?;
            }
            for (j, e) in b.iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{e}")?;
            }
        }
        Ok(())
    }
}

/// Merge the blocks at the given indices (into canonical block order) into
/// one, producing the canonical coarsened partition. Merging fewer than two
/// blocks returns the partition unchanged.
pub fn merge_blocks(p: &Partition, indices: &[usize]) -> Result<Partition> {
    for &i in indices {
        if i >= p.blocks.len() {
            return Err(Error::Argument(format!(
                "block index {i} out of range for {} blocks",
                p.blocks.len()
            )));
        }
    }
    let mut idx: Vec<usize> = indices.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if idx.len() < 2 {
        return Ok(p.clone());
    }
    let mut merged: Vec<u32> = Vec::new();
    let mut rest: Vec<Vec<u32>> = Vec::new();
    for (k, b) in p.blocks.iter().enumerate() {
        if idx.binary_search(&k).is_ok() {
            merged.extend_from_slice(b);
        } else {
            rest.push(b.clone());
        }
    }
    merged.sort_unstable();
    rest.push(merged);
    rest.sort_unstable_by_key(|b| b[0]);
    Ok(Partition { n: p.n, blocks: rest })
}

/// All partitions of `{1, ..., n}` in a deterministic order (singletons
/// first). Sizes are Bell numbers; intended for small `n`.
pub fn enumerate_partitions(n: usize) -> Vec<Partition> {
    // Depth-first over restricted growth strings.
    let mut out = Vec::new();
    let mut labels = vec![0u32; n];
    fn rec(i: usize, max_used: u32, labels: &mut Vec<u32>, out: &mut Vec<Partition>) {
        let n = labels.len();
        if i == n {
            out.push(Partition::from_labels(labels));
            return;
        }
        for lab in 0..=max_used + 1 {
            labels[i] = lab;
            rec(i + 1, max_used.max(lab), labels, out);
        }
    }
    if n == 0 {
        return vec![Partition { n: 0, blocks: vec![] }];
    }
    labels[0] = 0;
    rec(1, 0, &mut labels, &mut out);
    out.sort_unstable_by_key(|p| std::cmp::Reverse(p.num_blocks()));
    // Stable order: by block count descending, then lexicographic on rgs.
    out.sort_by(|a, b| {
        b.num_blocks()
            .cmp(&a.num_blocks())
            .then_with(|| a.rgs().cmp(&b.rgs()))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_examples() {
        let p = Partition::singletons(3);
        let m = merge_blocks(&p, &[0, 1]).unwrap();
        assert_eq!(m.to_string(), "1,2|3");

        assert_eq!(merge_blocks(&p, &[1]).unwrap(), p);

        let p = Partition::from_blocks(4, vec![vec![1, 3], vec![2], vec![4]]).unwrap();
        let m = merge_blocks(&p, &[0, 1, 2]).unwrap();
        assert_eq!(m.to_string(), "1,2,3,4");
    }

    #[test]
    fn merge_rejects_bad_index() {
        let p = Partition::singletons(3);
        assert!(merge_blocks(&p, &[0, 5]).is_err());
    }

    #[test]
    fn from_blocks_validates() {
        assert!(Partition::from_blocks(3, vec![vec![1, 2]]).is_err());
        assert!(Partition::from_blocks(3, vec![vec![1, 2], vec![2, 3]]).is_err());
        assert!(Partition::from_blocks(3, vec![vec![1, 2, 3, 4]]).is_err());
        let p = Partition::from_blocks(3, vec![vec![3], vec![2, 1]]).unwrap();
        assert_eq!(p.to_string(), "1,2|3");
    }

    #[test]
    fn bell_numbers() {
        assert_eq!(enumerate_partitions(1).len(), 1);
        assert_eq!(enumerate_partitions(2).len(), 2);
        assert_eq!(enumerate_partitions(3).len(), 5);
        assert_eq!(enumerate_partitions(4).len(), 15);
        assert_eq!(enumerate_partitions(5).len(), 52);
        assert_eq!(enumerate_partitions(6).len(), 203);
        assert!(enumerate_partitions(4)[0].is_singletons());
    }

    #[test]
    fn refinement_is_reflexive_and_detects_coarsening() {
        let fine = Partition::singletons(4);
        let coarse = Partition::from_blocks(4, vec![vec![1, 2], vec![3, 4]]).unwrap();
        assert!(fine.refines(&coarse));
        assert!(coarse.refines(&coarse));
        assert!(!coarse.refines(&fine));
    }
}
