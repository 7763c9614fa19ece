//! N:M semi-structured sparsity: pattern contract, packed binary masks,
//! magnitude-criterion selection, and mask-stability metrics.

use std::sync::Arc;

use crate::scalar::Scalar;

/// Keep exactly `n` of every `m` consecutive entries in a row.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NMPattern {
    pub n: usize,
    pub m: usize,
}

impl NMPattern {
    pub fn new(n: usize, m: usize) -> Self {
        // n = m is the degenerate dense pattern (nothing pruned)
        assert!(n >= 1 && n <= m, "pattern requires 1 ≤ n ≤ m, got {n}:{m}");
        NMPattern { n, m }
    }

    /// Fraction of entries that are pruned.
    pub fn sparsity(self) -> f64 {
        1.0 - self.n as f64 / self.m as f64
    }
}

impl std::fmt::Display for NMPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

/// Binary mask over a rows×cols matrix, bit-packed row-major into u64 words.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Mask {
    rows: usize,
    cols: usize,
    pattern: NMPattern,
    bits: Vec<u64>,
}

impl Mask {
    /// Magnitude criterion: within each group of `m` consecutive entries per
    /// row, keep the `n` largest by |w|; ties keep the lower column index.
    pub fn select_magnitude<S: Scalar>(w: &[S], rows: usize, cols: usize, pattern: NMPattern) -> Mask {
        assert_eq!(w.len(), rows * cols, "weight buffer length");
        assert!(cols % pattern.m == 0, "row length {cols} not divisible by group size {}", pattern.m);
        let mut mask = Mask::zeros(rows, cols, pattern);
        let mut order: Vec<usize> = Vec::with_capacity(pattern.m);
        for r in 0..rows {
            for g in 0..cols / pattern.m {
                let base = r * cols + g * pattern.m;
                order.clear();
                order.extend(0..pattern.m);
                order.sort_by(|&x, &y| {
                    let (ax, ay) = (w[base + x].abs(), w[base + y].abs());
                    ay.partial_cmp(&ax).expect("NaN weight in mask selection").then(x.cmp(&y))
                });
                for &o in order.iter().take(pattern.n) {
                    mask.set(r, g * pattern.m + o);
                }
            }
        }
        mask
    }

    pub fn zeros(rows: usize, cols: usize, pattern: NMPattern) -> Mask {
        Mask { rows, cols, pattern, bits: vec![0; (rows * cols).div_ceil(64)] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn pattern(&self) -> NMPattern {
        self.pattern
    }
    /// Total entry count D.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.get_flat(r * self.cols + c)
    }

    #[inline]
    pub fn get_flat(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize) {
        let i = r * self.cols + c;
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Dense 0/1 copy for graph-side mask application.
    pub fn to_dense<S: Scalar>(&self) -> Arc<Vec<S>> {
        let mut out = vec![S::ZERO; self.len()];
        for (i, v) in out.iter_mut().enumerate() {
            if self.bits[i / 64] >> (i % 64) & 1 == 1 {
                *v = S::ONE;
            }
        }
        Arc::new(out)
    }

    /// W̃ = mask ⊙ w.
    pub fn apply<S: Scalar>(&self, w: &[S]) -> Vec<S> {
        assert_eq!(w.len(), self.len(), "mask/weight shape mismatch");
        w.iter()
            .enumerate()
            .map(|(i, &v)| if self.bits[i / 64] >> (i % 64) & 1 == 1 { v } else { S::ZERO })
            .collect()
    }

    /// Visit every pruned (complement-mask) flat index in order.
    pub fn for_each_pruned(&self, mut f: impl FnMut(usize)) {
        for i in 0..self.len() {
            if self.bits[i / 64] >> (i % 64) & 1 == 0 {
                f(i);
            }
        }
    }

    /// Number of entries that differ (L1 distance of binary matrices).
    pub fn flip_count(&self, other: &Mask) -> usize {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "mask shape mismatch");
        self.bits.iter().zip(&other.bits).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }

    /// Flip rate: L1 distance divided by total entry count D.
    pub fn flip_rate(&self, other: &Mask) -> f64 {
        self.flip_count(other) as f64 / self.len() as f64
    }

    /// Exactly-n-per-group check.
    pub fn is_valid(&self) -> bool {
        if self.cols % self.pattern.m != 0 {
            return false;
        }
        for r in 0..self.rows {
            for g in 0..self.cols / self.pattern.m {
                let ones = (0..self.pattern.m).filter(|&t| self.get(r, g * self.pattern.m + t)).count();
                if ones != self.pattern.n {
                    return false;
                }
            }
        }
        true
    }

    /// Raw packed words (for checkpoint serialization).
    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    pub fn from_words(rows: usize, cols: usize, pattern: NMPattern, bits: Vec<u64>) -> Mask {
        assert_eq!(bits.len(), (rows * cols).div_ceil(64), "packed mask length");
        Mask { rows, cols, pattern, bits }
    }
}

/// Mask-stability metrics of one refresh: `flip_rate` compares to the
/// previous mask, `initial_flip_rate` to the mask at step 0.
#[derive(Clone, Copy, Debug)]
pub struct FlipStats {
    pub step: usize,
    pub flip_rate: f64,
    pub initial_flip_rate: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_of<S: Scalar>(w: &[S], cols: usize, pat: (usize, usize)) -> Mask {
        Mask::select_magnitude(w, w.len() / cols, cols, NMPattern::new(pat.0, pat.1))
    }

    fn dense(m: &Mask) -> Vec<u8> {
        (0..m.rows()).flat_map(|r| (0..m.cols()).map(move |c| m.get(r, c) as u8)).collect()
    }

    #[test]
    fn magnitude_selection_known_groups() {
        // two largest magnitudes forced
        let m = mask_of(&[0.1f64, -0.5, 0.3, 0.2], 4, (2, 4));
        assert_eq!(dense(&m), [0, 1, 1, 0]);
        // tie-break: lower column index kept first
        let m = mask_of(&[1.0f64, 1.0, 1.0, 1.0], 4, (2, 4));
        assert_eq!(dense(&m), [1, 1, 0, 0]);
    }

    /// Exhaustive oracle: all C(m,n) keep-sets in lexicographic order, first
    /// strict maximum of Σ|w| wins (matches the stated tie-break).
    fn oracle_group<S: Scalar>(w: &[S], n: usize) -> Vec<usize> {
        fn combos(m: usize, n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for first in 0..m {
                for mut rest in combos(m, n - 1) {
                    if rest.iter().all(|&x| x > first) {
                        let mut c = vec![first];
                        c.append(&mut rest);
                        out.push(c);
                    }
                }
            }
            out.sort();
            out.dedup();
            out
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for ks in combos(w.len(), n) {
            let s: f64 = ks.iter().map(|&i| w[i].abs().to_f64()).sum();
            if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
                best = Some((s, ks));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn magnitude_matches_exhaustive_oracle_4x8() {
        let w: Vec<f64> = (0..32).map(|i| ((i * 37 + 11) % 23) as f64 * 0.173 - 2.0).collect();
        let m = mask_of(&w, 8, (2, 4));
        for r in 0..4 {
            for g in 0..2 {
                let group = &w[r * 8 + g * 4..r * 8 + (g + 1) * 4];
                let keep = oracle_group(group, 2);
                for t in 0..4 {
                    assert_eq!(m.get(r, g * 4 + t), keep.contains(&t), "row {r} group {g} slot {t}");
                }
            }
        }
        assert!(m.is_valid());
    }

    #[test]
    fn apply_and_flip_rates() {
        let w = [1.0f64, 2.0, 3.0, 4.0];
        let m = mask_of(&[0.1f64, -0.5, 0.3, 0.2], 4, (2, 4));
        assert_eq!(m.apply(&w), [0.0, 2.0, 3.0, 0.0]);

        // identical masks → 0; 2-of-8 difference → 0.25
        assert_eq!(m.flip_rate(&m), 0.0);
        let a = mask_of(&[9.0f64, 8.0, 1.0, 2.0, 9.0, 8.0, 1.0, 2.0], 8, (2, 4));
        let b = mask_of(&[9.0f64, 8.0, 1.0, 2.0, 1.0, 8.0, 9.0, 2.0], 8, (2, 4));
        assert_eq!(dense(&a), [1, 1, 0, 0, 1, 1, 0, 0]);
        assert_eq!(dense(&b), [1, 1, 0, 0, 0, 1, 1, 0]);
        assert_eq!(a.flip_count(&b), 2);
        assert!((a.flip_rate(&b) - 0.25).abs() < 1e-15);

        // direct popcount oracle on a random pair
        let x = mask_of(&(0..64).map(|i| ((i * 31 + 7) % 19) as f64 - 9.0).collect::<Vec<_>>(), 16, (2, 4));
        let y = mask_of(&(0..64).map(|i| ((i * 17 + 3) % 23) as f64 - 11.0).collect::<Vec<_>>(), 16, (2, 4));
        let direct = (0..4)
            .flat_map(|r| (0..16).map(move |c| (r, c)))
            .filter(|&(r, c)| x.get(r, c) != y.get(r, c))
            .count();
        assert_eq!(x.flip_count(&y), direct);
    }

    #[test]
    fn dense_mask_roundtrip_and_words() {
        let m = mask_of(&(0..24).map(|i| (i as f64).sin()).collect::<Vec<_>>(), 8, (4, 8));
        let d = m.to_dense::<f32>();
        assert_eq!(d.iter().filter(|&&v| v == 1.0).count(), m.ones());
        let m2 = Mask::from_words(m.rows(), m.cols(), m.pattern(), m.words().to_vec());
        assert_eq!(m, m2);
    }

    #[test]
    #[should_panic(expected = "not divisible")]
    fn indivisible_row_length_is_rejected() {
        let _ = mask_of(&[1.0f64, 2.0, 3.0], 3, (1, 2));
    }
}
