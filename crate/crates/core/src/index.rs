//! Mixed-radix flattening of bounded integer coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps coordinates `0 <= c_j <= dims[j]` to `0..prod(dims[j] + 1)`, last coordinate fastest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateIndexer {
    dims: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl StateIndexer {
    /// `dims` are inclusive maxima, not counts.
    pub fn new(dims: &[usize]) -> Self {
        let mut strides = vec![1; dims.len()];
        let mut size = 1;
        for j in (0..dims.len()).rev() {
            strides[j] = size;
            size *= dims[j] + 1;
        }
        StateIndexer { dims: dims.to_vec(), strides, size }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn flatten(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims.len() {
            return Err(Error::DimensionMismatch { expected: self.dims.len(), got: coords.len() });
        }
        let mut idx = 0;
        for (j, (&c, &d)) in coords.iter().zip(&self.dims).enumerate() {
            if c > d {
                return Err(Error::IndexOutOfRange { coord: j, value: c, max: d });
            }
            idx += c * self.strides[j];
        }
        Ok(idx)
    }

    pub fn unflatten(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.size {
            return Err(Error::FlatIndexOutOfRange { index, size: self.size });
        }
        Ok(self
            .strides
            .iter()
            .zip(&self.dims)
            .map(|(&s, &d)| (index / s) % (d + 1))
            .collect())
    }
}

pub fn mixed_radix_flatten(indexer: &StateIndexer, coords: &[usize]) -> Result<usize> {
    indexer.flatten(coords)
}

pub fn mixed_radix_unflatten(indexer: &StateIndexer, index: usize) -> Result<Vec<usize>> {
    indexer.unflatten(index)
}

/// Index over `(n1, n2, l1)`, the SMDP and preemptive state space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripleIndex {
    pub x1: usize,
    pub x2: usize,
}

impl TripleIndex {
    pub fn new(x1: usize, x2: usize) -> Self {
        TripleIndex { x1, x2 }
    }

    pub fn size(&self) -> usize {
        (self.x1 + 1) * (self.x2 + 1) * 2
    }

    #[inline]
    pub fn index(&self, n1: usize, n2: usize, l1: usize) -> usize {
        debug_assert!(n1 <= self.x1 && n2 <= self.x2 && l1 < 2);
        (n1 * (self.x2 + 1) + n2) * 2 + l1
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let l1 = idx % 2;
        let rest = idx / 2;
        (rest / (self.x2 + 1), rest % (self.x2 + 1), l1)
    }

    pub fn indexer(&self) -> StateIndexer {
        StateIndexer::new(&[self.x1, self.x2, 1])
    }
}

/// Index over `(n1, n2, l1, l2)`, the non-preemptive CTMDP state space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadIndex {
    pub x1: usize,
    pub x2: usize,
}

impl QuadIndex {
    pub fn new(x1: usize, x2: usize) -> Self {
        QuadIndex { x1, x2 }
    }

    pub fn size(&self) -> usize {
        (self.x1 + 1) * (self.x2 + 1) * 6
    }

    #[inline]
    pub fn index(&self, n1: usize, n2: usize, l1: usize, l2: usize) -> usize {
        debug_assert!(n1 <= self.x1 && n2 <= self.x2 && l1 < 2 && l2 < 3);
        ((n1 * (self.x2 + 1) + n2) * 2 + l1) * 3 + l2
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize, usize) {
        let l2 = idx % 3;
        let (n1, n2, l1) = TripleIndex::new(self.x1, self.x2).coords(idx / 3);
        (n1, n2, l1, l2)
    }

    pub fn indexer(&self) -> StateIndexer {
        StateIndexer::new(&[self.x1, self.x2, 1, 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_examples() {
        let ix = StateIndexer::new(&[3, 3]);
        assert_eq!(ix.flatten(&[0, 0]).unwrap(), 0);
        assert_eq!(ix.flatten(&[1, 2]).unwrap(), 6);
        for i in 0..16 {
            assert_eq!(ix.flatten(&ix.unflatten(i).unwrap()).unwrap(), i);
        }
        assert_eq!(ix.size(), 16);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let ix = StateIndexer::new(&[3, 3]);
        assert!(matches!(ix.flatten(&[4, 0]), Err(Error::IndexOutOfRange { coord: 0, value: 4, max: 3 })));
        assert!(ix.flatten(&[1]).is_err());
        assert!(ix.unflatten(16).is_err());
    }

    #[test]
    fn exhaustive_roundtrip_large_dims() {
        let ix = StateIndexer::new(&[50, 50, 2, 3]);
        assert_eq!(ix.size(), 51 * 51 * 3 * 4);
        let mut seen = vec![false; ix.size()];
        for a in 0..=50 {
            for b in 0..=50 {
                for c in 0..=2 {
                    for d in 0..=3 {
                        let i = ix.flatten(&[a, b, c, d]).unwrap();
                        assert!(!seen[i]);
                        seen[i] = true;
                        assert_eq!(ix.unflatten(i).unwrap(), vec![a, b, c, d]);
                    }
                }
            }
        }
    }

    #[test]
    fn fixed_indexers_agree_with_generic() {
        let t = TripleIndex::new(4, 6);
        let q = QuadIndex::new(4, 6);
        let (gt, gq) = (t.indexer(), q.indexer());
        assert_eq!(t.size(), gt.size());
        assert_eq!(q.size(), gq.size());
        for n1 in 0..=4 {
            for n2 in 0..=6 {
                for l1 in 0..2 {
                    let i = t.index(n1, n2, l1);
                    assert_eq!(i, gt.flatten(&[n1, n2, l1]).unwrap());
                    assert_eq!(t.coords(i), (n1, n2, l1));
                    for l2 in 0..3 {
                        let j = q.index(n1, n2, l1, l2);
                        assert_eq!(j, gq.flatten(&[n1, n2, l1, l2]).unwrap());
                        assert_eq!(q.coords(j), (n1, n2, l1, l2));
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn roundtrip(dims in prop::collection::vec(0usize..8, 1..5), seed in any::<u64>()) {
            let ix = StateIndexer::new(&dims);
            let i = (seed as usize) % ix.size();
            let c = ix.unflatten(i).unwrap();
            prop_assert!(c.iter().zip(&dims).all(|(a, b)| a <= b));
            prop_assert_eq!(ix.flatten(&c).unwrap(), i);
        }
    }
}
