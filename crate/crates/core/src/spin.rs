use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest chain that fits in the bitmask representation.
pub const MAX_SPINS: usize = 32;

/// A basis state in the σ_x eigenbasis. Bit `i` set means spin `i` points
/// along +x (eigenvalue +1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinConfiguration {
    pub bits: u32,
    pub n: usize,
}

impl SpinConfiguration {
    pub fn new(bits: u32, n: usize) -> Self {
        assert!(n <= MAX_SPINS, "at most {MAX_SPINS} spins");
        debug_assert!(n == MAX_SPINS || bits >> n == 0, "bits beyond chain length");
        Self { bits, n }
    }

    pub fn all_down(n: usize) -> Self {
        Self::new(0, n)
    }

    pub fn n_up(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// m_x = N_up - N_down.
    pub fn magnetization(&self) -> i32 {
        magnetization(self.bits, self.n)
    }

    /// Eigenvalue of σ_x on site `i`.
    pub fn spin(&self, i: usize) -> f64 {
        if self.bits >> i & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn flipped(&self) -> Self {
        Self::new(!self.bits & mask(self.n), self.n)
    }

    /// Site reversal i -> N-1-i.
    pub fn reversed(&self) -> Self {
        Self::new(reverse_bits(self.bits, self.n), self.n)
    }

    /// Parses a string of `u`/`d` (or ↑/↓, `1`/`0`) characters, site 1 first.
    pub fn parse(s: &str) -> Option<Self> {
        let mut bits = 0u32;
        let mut n = 0;
        for c in s.chars() {
            match c {
                'u' | 'U' | '↑' | '1' => bits |= 1 << n,
                'd' | 'D' | '↓' | '0' => {}
                _ => return None,
            }
            n += 1;
            if n > MAX_SPINS {
                return None;
            }
        }
        Some(Self::new(bits, n))
    }

    pub fn to_ud_string(&self) -> String {
        (0..self.n).map(|i| if self.bits >> i & 1 == 1 { 'u' } else { 'd' }).collect()
    }
}

impl fmt::Display for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            f.write_str(if self.bits >> i & 1 == 1 { "↑" } else { "↓" })?;
        }
        Ok(())
    }
}

pub(crate) fn mask(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

pub(crate) fn magnetization(bits: u32, n: usize) -> i32 {
    2 * bits.count_ones() as i32 - n as i32
}

pub(crate) fn reverse_bits(bits: u32, n: usize) -> u32 {
    if n == 0 {
        0
    } else {
        bits.reverse_bits() >> (32 - n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnetization_range() {
        for n in 1..=8 {
            for bits in 0..1u32 << n {
                let m = SpinConfiguration::new(bits, n).magnetization();
                assert!(m >= -(n as i32) && m <= n as i32);
                assert_eq!((m + n as i32) % 2, 0);
            }
        }
    }

    #[test]
    fn parse_and_display() {
        let s = SpinConfiguration::parse("dudddd").unwrap();
        assert_eq!(s.bits, 0b10);
        assert_eq!(s.to_string(), "↓↑↓↓↓↓");
        assert_eq!(s.magnetization(), -4);
        assert_eq!(s.reversed().to_ud_string(), "ddddud");
        assert_eq!(s.flipped().to_ud_string(), "uduuuu");
        assert!(SpinConfiguration::parse("dx").is_none());
    }
}
