//! Rotary position embedding applied head by head.

/// Rotary embedding over `head_dim`-sized head segments.
///
/// Pairs `(2i, 2i+1)` are rotated by `pos · base^(-2i/head_dim)`; with an odd
/// head size the last dimension is left untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rope {
    pub head_dim: usize,
    pub base: f64,
}

impl Rope {
    pub fn new(head_dim: usize, base: f64) -> Self {
        Self { head_dim, base }
    }

    /// Rotates every head segment of `x` in place for position `pos`.
    pub fn apply(&self, x: &mut [f64], pos: usize) {
        let pairs = self.head_dim / 2;
        if pairs == 0 {
            return;
        }
        for head in x.chunks_mut(self.head_dim) {
            for i in 0..pairs.min(head.len() / 2) {
                let freq = libm::pow(self.base, -2.0 * i as f64 / self.head_dim as f64);
                let angle = pos as f64 * freq;
                let (s, c) = (libm::sin(angle), libm::cos(angle));
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                head[2 * i] = a * c - b * s;
                head[2 * i + 1] = a * s + b * c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec::Vec;

    #[test]
    fn position_zero_is_identity() {
        let rope = Rope::new(4, 10000.0);
        let mut x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let orig = x;
        rope.apply(&mut x, 0);
        assert_eq!(x, orig);
    }

    #[test]
    fn preserves_head_norms() {
        let rope = Rope::new(6, 10000.0);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        for pos in [1usize, 7, 100, 4093] {
            let mut y = x.clone();
            rope.apply(&mut y, pos);
            for (a, b) in x.chunks(6).zip(y.chunks(6)) {
                let na: f64 = a.iter().map(|v| v * v).sum();
                let nb: f64 = b.iter().map(|v| v * v).sum();
                assert!((na.sqrt() - nb.sqrt()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn odd_head_leaves_tail_alone() {
        let rope = Rope::new(3, 10000.0);
        let mut x = [1.0, 0.0, 9.0];
        rope.apply(&mut x, 5);
        assert_eq!(x[2], 9.0);
        assert!((x[0] - 5f64.cos()).abs() < 1e-15);
    }
}
