//! Uncompressed run-length encoding of binary masks.
//!
//! Runs alternate starting with background and follow row-major order, so
//! only the first count may be zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BitMask;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

pub fn rle_encode(mask: &BitMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &b in mask.bits() {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        size: [mask.height(), mask.width()],
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BitMask> {
    let [h, w] = rle.size;
    let expected = (h * w) as u64;
    let got: u64 = rle.counts.iter().sum();
    if got != expected {
        return Err(Error::RleLength { got, expected });
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("rle size must be positive".into()));
    }
    if rle.counts.iter().skip(1).any(|&c| c == 0) {
        return Err(Error::InvalidArgument(
            "only the first rle count may be zero".into(),
        ));
    }
    let mut bits = Vec::with_capacity(h * w);
    let mut value = false;
    for &c in &rle.counts {
        bits.extend(std::iter::repeat_n(value, c as usize));
        value = !value;
    }
    BitMask::from_bits(w, h, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_cases() {
        assert_eq!(rle_encode(&BitMask::new(2, 2)).counts, vec![4]);
        assert_eq!(rle_encode(&BitMask::full(2, 2)).counts, vec![0, 4]);
        let row = BitMask::from_ascii(&[".##."]);
        let rle = rle_encode(&row);
        assert_eq!(rle.counts, vec![1, 2, 1]);
        assert_eq!(rle.size, [1, 4]);
    }

    #[test]
    fn decode_rejects_bad_sums() {
        let bad = RleMask {
            size: [2, 2],
            counts: vec![1, 2],
        };
        assert!(matches!(
            rle_decode(&bad),
            Err(Error::RleLength { got: 3, expected: 4 })
        ));
        let zero_mid = RleMask {
            size: [1, 4],
            counts: vec![2, 0, 2],
        };
        assert!(rle_decode(&zero_mid).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..24, h in 1usize..24, bits in proptest::collection::vec(any::<bool>(), 576)) {
            let m = BitMask::from_fn(w, h, |x, y| bits[y * 24 + x]);
            let rle = rle_encode(&m);
            prop_assert_eq!(rle.counts.iter().sum::<u64>(), (w * h) as u64);
            prop_assert_eq!(rle_decode(&rle).unwrap(), m);
        }
    }
}
