use std::fmt;
use std::str::FromStr;

use crate::bits::BitString;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trit {
    Zero,
    One,
    DontCare,
}

impl Trit {
    fn from_char(ch: char) -> Option<Self> {
        match ch {
            '0' => Some(Trit::Zero),
            '1' => Some(Trit::One),
            '-' => Some(Trit::DontCare),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            Trit::Zero => '0',
            Trit::One => '1',
            Trit::DontCare => '-',
        }
    }
}

/// A string over `{0, 1, -}`. Like [`BitString`], position 0 is the
/// rightmost character of the textual form.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TernaryPattern {
    trits: Vec<Trit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvalidTrit {
    pub ch: char,
    pub pos: usize,
}

impl TernaryPattern {
    pub fn dont_care(width: usize) -> Self {
        Self {
            trits: vec![Trit::DontCare; width],
        }
    }

    /// The exact pattern for `bits`.
    pub fn exact(bits: &BitString) -> Self {
        let trits = bits
            .as_bits()
            .iter()
            .map(|&b| if b { Trit::One } else { Trit::Zero })
            .collect();
        Self { trits }
    }

    pub fn width(&self) -> usize {
        self.trits.len()
    }

    /// LSB-first view.
    pub fn trits(&self) -> &[Trit] {
        &self.trits
    }

    /// Panics when widths differ.
    pub fn matches(&self, v: &BitString) -> bool {
        assert_eq!(self.width(), v.width(), "pattern/vector width mismatch");
        self.trits.iter().zip(v.as_bits()).all(|(t, &b)| match t {
            Trit::DontCare => true,
            Trit::One => b,
            Trit::Zero => !b,
        })
    }

    /// Concrete bits with don't-cares resolved to 0.
    pub fn resolve(&self) -> BitString {
        BitString::from_bits(self.trits.iter().map(|&t| t == Trit::One).collect())
    }

    /// `self` in the high positions, `low` in the low positions.
    pub fn concat_low(&self, low: &TernaryPattern) -> TernaryPattern {
        let mut trits = low.trits.clone();
        trits.extend_from_slice(&self.trits);
        Self { trits }
    }

    pub fn is_fully_specified(&self) -> bool {
        !self.trits.contains(&Trit::DontCare)
    }

    pub(crate) fn parse_at(s: &str) -> Result<Self, InvalidTrit> {
        let mut trits = Vec::with_capacity(s.len());
        for (pos, ch) in s.chars().enumerate() {
            trits.push(Trit::from_char(ch).ok_or(InvalidTrit { ch, pos })?);
        }
        trits.reverse();
        Ok(Self { trits })
    }
}

impl FromStr for TernaryPattern {
    type Err = InvalidTrit;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_at(s)
    }
}

impl fmt::Display for TernaryPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.trits.iter().rev().map(|t| t.as_char()).collect();
        f.write_str(&s)
    }
}

impl fmt::Debug for TernaryPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TernaryPattern({self})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn matching() {
        let p: TernaryPattern = "1-0".parse().unwrap();
        assert!(p.matches(&bits("100")));
        assert!(p.matches(&bits("110")));
        assert!(!p.matches(&bits("101")));
        assert!(!p.matches(&bits("000")));
        assert!(TernaryPattern::dont_care(0).matches(&BitString::zeros(0)));
    }

    #[test]
    fn resolve_zeroes_dont_cares() {
        let p: TernaryPattern = "-1-".parse().unwrap();
        assert_eq!(p.resolve().to_string(), "010");
        assert_eq!(p.to_string(), "-1-");
    }

    #[test]
    fn concat_appends_on_the_right() {
        let p: TernaryPattern = "1-".parse().unwrap();
        let key = TernaryPattern::exact(&bits("01"));
        assert_eq!(p.concat_low(&key).to_string(), "1-01");
    }

    #[test]
    fn invalid_char_position() {
        let e = "01x-".parse::<TernaryPattern>().unwrap_err();
        assert_eq!(e, InvalidTrit { ch: 'x', pos: 2 });
    }
}
