//! 128×128 bit-packed shape signatures.

use crate::error::{Error, Result};
use crate::raster::{nearest_index_map, BinaryMask};

pub const SIGNATURE_SIDE: u32 = 128;
pub const SIGNATURE_WORDS: usize = (SIGNATURE_SIDE * SIGNATURE_SIDE / 64) as usize;
pub const SIGNATURE_BYTES: usize = SIGNATURE_WORDS * 8;

/// A mask resized to 128×128 by nearest neighbour, packed row-major into 256 words.
#[derive(Clone, PartialEq, Eq)]
pub struct Signature {
    words: Box<[u64; SIGNATURE_WORDS]>,
    popcount: u32,
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Signature")
            .field("popcount", &self.popcount)
            .finish_non_exhaustive()
    }
}

impl Signature {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let xs = nearest_index_map(mask.width(), SIGNATURE_SIDE);
        let ys = nearest_index_map(mask.height(), SIGNATURE_SIDE);
        let mut words = Box::new([0u64; SIGNATURE_WORDS]);
        let mut i = 0usize;
        for &sy in &ys {
            for &sx in &xs {
                if mask.get(sx, sy) {
                    words[i / 64] |= 1u64 << (i % 64);
                }
                i += 1;
            }
        }
        Self::from_words(words)
    }

    fn from_words(words: Box<[u64; SIGNATURE_WORDS]>) -> Self {
        let popcount = words.iter().map(|w| w.count_ones()).sum();
        Self { words, popcount }
    }

    pub fn popcount(&self) -> u32 {
        self.popcount
    }

    pub fn words(&self) -> &[u64; SIGNATURE_WORDS] {
        &self.words
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = (y * SIGNATURE_SIDE + x) as usize;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Sum of squared differences between two binary signatures, i.e. popcount(a ⊕ b).
    #[inline]
    pub fn xor_popcount(&self, other: &Signature) -> u32 {
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(SIGNATURE_SIDE, SIGNATURE_SIDE, |x, y| self.get(x, y))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != SIGNATURE_BYTES {
            return Err(Error::Corrupt(format!(
                "signature has {} bytes, expected {SIGNATURE_BYTES}",
                bytes.len()
            )));
        }
        let mut words = Box::new([0u64; SIGNATURE_WORDS]);
        for (w, chunk) in words.iter_mut().zip(bytes.chunks_exact(8)) {
            *w = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Ok(Self::from_words(words))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::resize_nearest;

    #[test]
    fn matches_resize_nearest_bit_for_bit() {
        let m = BinaryMask::from_fn(37, 11, |x, y| (x * 3 + y * 5) % 7 < 3);
        let sig = Signature::from_mask(&m);
        assert_eq!(sig.to_mask(), resize_nearest(&m, 128, 128).unwrap());
        assert_eq!(sig.popcount() as u64, sig.to_mask().popcount());
    }

    #[test]
    fn full_vs_left_half() {
        let full = Signature::from_mask(&BinaryMask::full(10, 10));
        let half = Signature::from_mask(&BinaryMask::from_fn(10, 10, |x, _| x < 5));
        assert_eq!(full.popcount(), 16384);
        assert_eq!(half.popcount(), 8192);
        assert_eq!(full.xor_popcount(&half), 8192);
    }

    #[test]
    fn bytes_round_trip() {
        let sig = Signature::from_mask(&BinaryMask::from_fn(9, 13, |x, y| x > y));
        assert_eq!(Signature::from_bytes(&sig.to_bytes()).unwrap(), sig);
        assert!(Signature::from_bytes(&[0u8; 10]).is_err());
    }
}
