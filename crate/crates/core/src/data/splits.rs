use std::ops::Range;

use crate::error::{Error, Result};

/// Sequence counts for the three partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// 80/10/10 of `pool`, remainder to train.
    pub fn from_ratio(pool: usize) -> Self {
        let val = pool / 10;
        let test = pool / 10;
        DatasetSplit { train: pool - val - test, val, test }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous index ranges in generation order: train, then val, then test.
pub fn make_splits(pool_size: usize, spec: DatasetSplit) -> Result<SplitRanges> {
    if spec.total() > pool_size {
        return Err(Error::config(format!(
            "split {}+{}+{} exceeds pool of {}",
            spec.train, spec.val, spec.test, pool_size
        )));
    }
    let a = spec.train;
    let b = a + spec.val;
    Ok(SplitRanges { train: 0..a, val: a..b, test: b..b + spec.test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_counts() {
        let r = make_splits(2500, DatasetSplit { train: 1500, val: 500, test: 500 }).unwrap();
        assert_eq!((r.train, r.val, r.test), (0..1500, 1500..2000, 2000..2500));
    }

    #[test]
    fn ratio_on_ten() {
        let spec = DatasetSplit::from_ratio(10);
        assert_eq!(spec, DatasetSplit { train: 8, val: 1, test: 1 });
        let r = make_splits(10, spec).unwrap();
        assert_eq!((r.train, r.val, r.test), (0..8, 8..9, 9..10));
    }

    #[test]
    fn overflow() {
        assert!(matches!(
            make_splits(5, DatasetSplit { train: 4, val: 1, test: 1 }),
            Err(Error::Config(_))
        ));
    }
}
