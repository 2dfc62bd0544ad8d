//! The two-sided full shift on `k` symbols.
//!
//! A [`SymbolSequence`] is a short list of pieces, each a view (with an offset)
//! into an immutable eventually-periodic word. Shifting moves offsets, and
//! splicing concatenates piece lists, so neither copies symbol data.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Differences beyond this index contribute less than the smallest subnormal.
pub const METRIC_HORIZON: i64 = 1075;
const EQ_SCAN_CAP: i64 = 1 << 20;

#[derive(Debug, PartialEq, Eq)]
struct Word {
    start: i64,
    window: Vec<u8>,
    /// `left[n mod L]` for `n < start`.
    left: Vec<u8>,
    /// `right[n mod R]` for `n >= start + window.len()`.
    right: Vec<u8>,
}

impl Word {
    #[inline]
    fn at(&self, m: i64) -> u8 {
        let rel = m - self.start;
        if rel >= 0 && (rel as usize) < self.window.len() {
            self.window[rel as usize]
        } else if rel < 0 {
            self.left[m.rem_euclid(self.left.len() as i64) as usize]
        } else {
            self.right[m.rem_euclid(self.right.len() as i64) as usize]
        }
    }

    fn end(&self) -> i64 {
        self.start + self.window.len() as i64
    }
}

#[derive(Clone, Debug)]
struct Piece {
    /// First represented coordinate served by this piece.
    from: i64,
    offset: i64,
    word: Arc<Word>,
}

/// An eventually periodic bi-infinite sequence over `{0, .., k-1}`.
#[derive(Clone)]
pub struct SymbolSequence {
    alphabet: u8,
    pieces: SmallVec<[Piece; 2]>,
}

impl fmt::Debug for SymbolSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "…")?;
        for n in -8..0 {
            write!(f, "{}", self.at(n))?;
        }
        write!(f, ".")?;
        for n in 0..8 {
            write!(f, "{}", self.at(n))?;
        }
        write!(f, "…")
    }
}

impl SymbolSequence {
    fn from_word(alphabet: u8, word: Word) -> Self {
        let mut pieces = SmallVec::new();
        pieces.push(Piece {
            from: i64::MIN,
            offset: 0,
            word: Arc::new(word),
        });
        SymbolSequence { alphabet, pieces }
    }

    /// Coordinates `start .. start + window.len()` from `window`; to the left
    /// the word `left_period` repeats so that its last symbol sits at
    /// `start - 1`; to the right `right_period` repeats starting at the end
    /// of the window.
    pub fn new(
        alphabet: u8,
        start: i64,
        window: &[u8],
        left_period: &[u8],
        right_period: &[u8],
    ) -> Result<Self> {
        if alphabet == 0 {
            return Err(Error::InvalidSystem("alphabet must be nonempty".into()));
        }
        if left_period.is_empty() || right_period.is_empty() {
            return Err(Error::InvalidSystem("tail periods must be nonempty".into()));
        }
        if window.iter().chain(left_period).chain(right_period).any(|&s| s >= alphabet) {
            return Err(Error::InvalidSystem("symbol outside the alphabet".into()));
        }
        let end = start + window.len() as i64;
        let l = left_period.len() as i64;
        let r = right_period.len() as i64;
        // Rotate tails to absolute phase.
        let left = (0..l)
            .map(|j| {
                // coordinate n ≡ j (mod l), n < start: distance (start-1-n)
                let back = (start - 1 - j).rem_euclid(l);
                left_period[(l - 1 - back) as usize]
            })
            .collect();
        let right = (0..r)
            .map(|j| right_period[(j - end).rem_euclid(r) as usize])
            .collect();
        Ok(Self::from_word(
            alphabet,
            Word {
                start,
                window: window.to_vec(),
                left,
                right,
            },
        ))
    }

    /// The periodic sequence with `x_n = word[n mod len]`.
    pub fn periodic(alphabet: u8, word: &[u8]) -> Result<Self> {
        Self::new(alphabet, 0, word, word, word)
    }

    pub fn constant(alphabet: u8, symbol: u8) -> Result<Self> {
        Self::periodic(alphabet, &[symbol])
    }

    #[inline]
    pub fn alphabet(&self) -> u8 {
        self.alphabet
    }

    /// Coordinate `n`.
    #[inline]
    pub fn at(&self, n: i64) -> u8 {
        let mut p = &self.pieces[0];
        for q in &self.pieces[1..] {
            if q.from <= n {
                p = q;
            } else {
                break;
            }
        }
        p.word.at(n + p.offset)
    }

    /// Symbols at `lo..=hi`.
    pub fn word(&self, lo: i64, hi: i64) -> Vec<u8> {
        (lo..=hi).map(|n| self.at(n)).collect()
    }

    /// `sigma^t`: coordinate `n` of the result is `x_{n+t}`.
    pub fn shifted(&self, t: i64) -> Self {
        let mut out = self.clone();
        for (i, p) in out.pieces.iter_mut().enumerate() {
            if i > 0 {
                p.from -= t;
            }
            p.offset += t;
        }
        out
    }

    /// Coordinates `n < cut` from `left`, `n >= cut` from `right`.
    pub fn splice(left: &Self, right: &Self, cut: i64) -> Self {
        debug_assert_eq!(left.alphabet, right.alphabet);
        let mut pieces: SmallVec<[Piece; 2]> = SmallVec::new();
        for p in left.pieces.iter() {
            if p.from < cut {
                pieces.push(p.clone());
            }
        }
        let first = right.pieces.iter().rposition(|p| p.from <= cut).unwrap_or(0);
        for (i, p) in right.pieces.iter().enumerate().skip(first) {
            let mut q = p.clone();
            if i == first {
                q.from = cut;
            }
            let same = pieces
                .last()
                .is_some_and(|last| Arc::ptr_eq(&last.word, &q.word) && last.offset == q.offset);
            if !same {
                pieces.push(q);
            }
        }
        SymbolSequence {
            alphabet: left.alphabet,
            pieces,
        }
    }

    /// Copy with coordinate `n` replaced by `symbol`.
    pub fn with_symbol(&self, n: i64, symbol: u8) -> Self {
        assert!(symbol < self.alphabet);
        let single = SymbolSequence::from_word(
            self.alphabet,
            Word {
                start: n,
                window: alloc::vec![symbol],
                left: alloc::vec![symbol],
                right: alloc::vec![symbol],
            },
        );
        let head = SymbolSequence::splice(self, &single, n);
        SymbolSequence::splice(&head, self, n + 1)
    }

    /// Coordinate range outside which every piece is in a periodic tail, and
    /// the lcm of all tail periods.
    fn structure(&self) -> (i64, i64, i64) {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        let mut period: i64 = 1;
        for (i, p) in self.pieces.iter().enumerate() {
            let ws = p.word.start - p.offset;
            let we = p.word.end() - p.offset;
            lo = lo.min(ws);
            hi = hi.max(we);
            if i > 0 {
                lo = lo.min(p.from);
                hi = hi.max(p.from);
            }
            for len in [p.word.left.len(), p.word.right.len()] {
                period = lcm_capped(period, len as i64);
            }
        }
        (lo, hi, period)
    }

    /// `2^{-min |n|}` over differing coordinates, scanned up to
    /// [`METRIC_HORIZON`].
    pub fn distance(&self, other: &Self) -> f64 {
        match self.first_difference(other, METRIC_HORIZON) {
            Some(m) => libm::ldexp(1.0, -(m as i32)),
            None => 0.0,
        }
    }

    /// Smallest `|n| <= horizon` with `x_n != y_n`.
    pub fn first_difference(&self, other: &Self, horizon: i64) -> Option<i64> {
        if self.at(0) != other.at(0) {
            return Some(0);
        }
        (1..=horizon).find(|&m| self.at(m) != other.at(m) || self.at(-m) != other.at(-m))
    }
}

impl PartialEq for SymbolSequence {
    fn eq(&self, other: &Self) -> bool {
        if self.alphabet != other.alphabet {
            return false;
        }
        let (l1, h1, p1) = self.structure();
        let (l2, h2, p2) = other.structure();
        let period = lcm_capped(p1, p2).min(EQ_SCAN_CAP);
        let lo = l1.min(l2).saturating_sub(period);
        let hi = h1.max(h2).saturating_add(period);
        (lo..=hi).all(|n| self.at(n) == other.at(n))
    }
}

fn lcm_capped(a: i64, b: i64) -> i64 {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        let t = x % y;
        x = y;
        y = t;
    }
    (a / x).saturating_mul(b).min(EQ_SCAN_CAP)
}

/// Which leaf offsets are realized by altering symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftOptions {
    pub bracket_radius: f64,
    pub max_period: u32,
    pub max_points: u64,
    /// Half-width of the i.i.d. window of sampled sequences.
    pub sample_half_width: u32,
    /// Length of the random tail words of sampled sequences.
    pub tail_period: u32,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        ShiftOptions {
            bracket_radius: 2.0,
            max_period: 14,
            max_points: 1 << 22,
            sample_half_width: 64,
            tail_period: 61,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FullShift {
    alphabet: u8,
    pub options: ShiftOptions,
}

impl FullShift {
    pub fn new(alphabet: u8, options: ShiftOptions) -> Result<Self> {
        if alphabet < 2 {
            return Err(Error::InvalidSystem("full shift needs at least 2 symbols".into()));
        }
        Ok(FullShift { alphabet, options })
    }

    pub fn alphabet(&self) -> u8 {
        self.alphabet
    }

    pub fn check(&self, x: &SymbolSequence) -> Result<()> {
        if x.alphabet != self.alphabet {
            return Err(Error::PointMismatch);
        }
        Ok(())
    }

    /// All `k^n` words of length `n`, lexicographic, as periodic sequences.
    pub fn periodic_points(&self, n: u32) -> Result<Vec<SymbolSequence>> {
        if n == 0 || n > self.options.max_period {
            return Err(Error::BudgetExceeded {
                requested: n as u64,
                budget: self.options.max_period as u64,
            });
        }
        let k = self.alphabet as u64;
        let count = k.checked_pow(n).filter(|&c| c <= self.options.max_points).ok_or(
            Error::BudgetExceeded {
                requested: k.saturating_pow(n),
                budget: self.options.max_points,
            },
        )?;
        let mut out = Vec::with_capacity(count as usize);
        let mut word = alloc::vec![0u8; n as usize];
        for idx in 0..count {
            let mut r = idx;
            for s in word.iter_mut().rev() {
                *s = (r % k) as u8;
                r /= k;
            }
            out.push(SymbolSequence::periodic(self.alphabet, &word)?);
        }
        Ok(out)
    }

    fn symbol<R: RngCore>(&self, rng: &mut R) -> u8 {
        ((rng.next_u32() as u64 * self.alphabet as u64) >> 32) as u8
    }

    /// Bernoulli-uniform on coordinates `-w..=w`.
    pub fn sample_with_half_width<R: RngCore>(&self, rng: &mut R, w: u64) -> SymbolSequence {
        let len = 2 * w as usize + 1;
        let window: Vec<u8> = (0..len).map(|_| self.symbol(rng)).collect();
        let tp = self.options.tail_period.max(1) as usize;
        let left: Vec<u8> = (0..tp).map(|_| self.symbol(rng)).collect();
        let right: Vec<u8> = (0..tp).map(|_| self.symbol(rng)).collect();
        SymbolSequence::new(self.alphabet, -(w as i64), &window, &left, &right)
            .expect("sampled symbols are in range")
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> SymbolSequence {
        self.sample_with_half_width(rng, self.options.sample_half_width as u64)
    }

    /// Alters coordinate `-depth` (stable) or `+depth` (unstable).
    pub fn leaf_point(&self, x: &SymbolSequence, depth: u32, stable: bool) -> SymbolSequence {
        if depth == 0 {
            return x.clone();
        }
        let n = if stable { -(depth as i64) } else { depth as i64 };
        x.with_symbol(n, (x.at(n) + 1) % self.alphabet)
    }

    /// Past from `w`, future from `z`.
    pub fn bracket(&self, z: &SymbolSequence, w: &SymbolSequence) -> Result<SymbolSequence> {
        let d = z.distance(w);
        if !(d < self.options.bracket_radius) {
            return Err(Error::PointsTooFar {
                distance: d,
                radius: self.options.bracket_radius,
            });
        }
        Ok(SymbolSequence::splice(w, z, 0))
    }

    /// Periodic repetition of `y_0 .. y_{n-1}` and the residual `d(f^n y, y)`.
    pub fn shadow_point(&self, y: &SymbolSequence, n: u32) -> Result<(SymbolSequence, f64)> {
        let word = y.word(0, n as i64 - 1);
        let p = SymbolSequence::periodic(self.alphabet, &word)?;
        Ok((p, y.shifted(n as i64).distance(y)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(start: i64, window: &[u8], left: &[u8], right: &[u8]) -> SymbolSequence {
        SymbolSequence::new(2, start, window, left, right).unwrap()
    }

    #[test]
    fn tails_follow_the_rule() {
        let x = seq(-1, &[1, 0, 1], &[0, 1, 1], &[1, 0]);
        assert_eq!(x.word(-1, 1), [1, 0, 1]);
        assert_eq!(x.word(-7, -2), [0, 1, 1, 0, 1, 1]);
        assert_eq!(x.word(2, 7), [1, 0, 1, 0, 1, 0]);
    }

    #[test]
    fn shift_moves_coordinates() {
        let x = seq(1, &[1], &[0], &[0]);
        let y = x.shifted(1);
        assert_eq!(y.at(0), 1);
        assert_eq!(x.shifted(0), x);
        assert_eq!(x.at(1), 1);
    }

    #[test]
    fn metric_examples() {
        let x = SymbolSequence::constant(2, 0).unwrap();
        let y = x.with_symbol(-3, 1);
        assert_eq!(x.distance(&y), 0.125);
        assert_eq!(x.distance(&x), 0.0);
        assert_eq!(x.distance(&x.with_symbol(0, 1)), 1.0);
    }

    #[test]
    fn bracket_splices() {
        let sh = FullShift::new(2, ShiftOptions::default()).unwrap();
        let z = seq(0, &[0], &[1], &[0]);
        let w = seq(0, &[1], &[0], &[1]);
        let b = sh.bracket(&z, &w).unwrap();
        assert_eq!(b, SymbolSequence::constant(2, 0).unwrap());
    }

    #[test]
    fn periodic_words() {
        let sh = FullShift::new(2, ShiftOptions::default()).unwrap();
        let pts = sh.periodic_points(3).unwrap();
        assert_eq!(pts.len(), 8);
        for p in &pts {
            assert_eq!(&p.shifted(3), p);
        }
        for i in 0..pts.len() {
            for j in 0..i {
                assert_ne!(pts[i], pts[j]);
            }
        }
    }

    #[test]
    fn leaf_points_alter_one_coordinate() {
        let sh = FullShift::new(2, ShiftOptions::default()).unwrap();
        let x = sh.sample(&mut ChaCha8Rng::seed_from_u64(1));
        let y = sh.leaf_point(&x, 2, true);
        assert!((0..50).all(|n| x.at(n) == y.at(n)));
        assert_ne!(x.at(-2), y.at(-2));
        assert_eq!(x.distance(&y), 0.25);
        assert_eq!(sh.leaf_point(&x, 0, true), x);
    }

    #[test]
    fn shadow_word_bound() {
        let sh = FullShift::new(2, ShiftOptions::default()).unwrap();
        // y = ...(011)(011).(011)(011)... except far out.
        let y = seq(-6, &[0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1], &[0], &[0]);
        let (p, resid) = sh.shadow_point(&y, 3).unwrap();
        assert_eq!(p.word(0, 2), [0, 1, 1]);
        assert!(resid < 1.0 / 16.0);
    }

    #[test]
    fn sampling_is_balanced() {
        let sh = FullShift::new(2, ShiftOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zeros = (0..10_000).filter(|_| sh.sample(&mut rng).at(0) == 0).count();
        assert!((zeros as f64 / 1e4 - 0.5).abs() < 0.02);
    }

    fn arb_seq() -> impl Strategy<Value = SymbolSequence> {
        (
            -5i64..5,
            proptest::collection::vec(0u8..2, 0..12),
            proptest::collection::vec(0u8..2, 1..4),
            proptest::collection::vec(0u8..2, 1..4),
        )
            .prop_map(|(s, w, l, r)| SymbolSequence::new(2, s, &w, &l, &r).unwrap())
    }

    proptest! {
        #[test]
        fn group_law(x in arb_seq(), a in -30i64..=30, b in -30i64..=30) {
            prop_assert_eq!(x.shifted(a + b), x.shifted(a).shifted(b));
            prop_assert_eq!(x.shifted(a).at(3), x.at(3 + a));
        }

        #[test]
        fn metric_axioms(x in arb_seq(), y in arb_seq(), z in arb_seq()) {
            prop_assert_eq!(x.distance(&y), y.distance(&x));
            prop_assert_eq!(x.distance(&y) == 0.0, x == y);
            prop_assert!(x.distance(&y) <= x.distance(&z) + z.distance(&y));
        }

        #[test]
        fn splice_takes_each_side(x in arb_seq(), y in arb_seq(), cut in -6i64..6) {
            let s = SymbolSequence::splice(&x, &y, cut);
            for n in -20..20 {
                prop_assert_eq!(s.at(n), if n < cut { x.at(n) } else { y.at(n) });
            }
            let t = s.shifted(4);
            for n in -20..20 {
                prop_assert_eq!(t.at(n), s.at(n + 4));
            }
        }
    }
}
