//! Fixed-width bit strings.
//!
//! Bit 0 is the least-significant bit. The textual form is MSB-first, so the
//! string `"001011"` has bits `r_0 = 1, r_1 = 1, r_2 = 0, r_3 = 1, r_4 = 0,
//! r_5 = 0`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitsError {
    #[error("invalid bit character {ch:?} at position {pos}")]
    InvalidChar { ch: char, pos: usize },
    #[error("chunk {index} of width {chunk_width} exceeds bit string of width {width}")]
    ChunkOutOfRange {
        index: usize,
        chunk_width: usize,
        width: usize,
    },
    #[error("width mismatch: {left} vs {right}")]
    WidthMismatch { left: usize, right: usize },
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn zeros(width: usize) -> Self {
        Self {
            bits: vec![false; width],
        }
    }

    /// Builds from LSB-first bits.
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// The low `width` bits of `value`. Bits above 63 are zero.
    pub fn from_u64(value: u64, width: usize) -> Self {
        let bits = (0..width)
            .map(|i| i < 64 && (value >> i) & 1 == 1)
            .collect();
        Self { bits }
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    /// LSB-first view.
    pub fn as_bits(&self) -> &[bool] {
        &self.bits
    }

    /// Integer value, or `None` when a set bit lies at index 64 or above.
    pub fn to_u64(&self) -> Option<u64> {
        let mut v = 0u64;
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                if i >= 64 {
                    return None;
                }
                v |= 1 << i;
            }
        }
        Some(v)
    }

    /// Value of the `chunk_width`-bit slice starting at bit `index * chunk_width`.
    pub fn chunk(&self, index: usize, chunk_width: usize) -> Result<u64, BitsError> {
        let start = index * chunk_width;
        if chunk_width > 64 || start + chunk_width > self.width() {
            return Err(BitsError::ChunkOutOfRange {
                index,
                chunk_width,
                width: self.width(),
            });
        }
        Ok(self.bits[start..start + chunk_width]
            .iter()
            .rev()
            .fold(0u64, |acc, &b| (acc << 1) | u64::from(b)))
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString, BitsError> {
        if self.width() != other.width() {
            return Err(BitsError::WidthMismatch {
                left: self.width(),
                right: other.width(),
            });
        }
        Ok(Self {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| a ^ b)
                .collect(),
        })
    }

    /// `self` in the high positions, `low` in the low positions.
    pub fn concat_low(&self, low: &BitString) -> BitString {
        let mut bits = low.bits.clone();
        bits.extend_from_slice(&self.bits);
        Self { bits }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl FromStr for BitString {
    type Err = BitsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bits = Vec::with_capacity(s.len());
        for (pos, ch) in s.chars().enumerate() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => return Err(BitsError::InvalidChar { ch, pos }),
            }
        }
        bits.reverse();
        Ok(Self { bits })
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in self.bits.iter().rev() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}
