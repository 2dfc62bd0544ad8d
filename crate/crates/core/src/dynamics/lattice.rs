//! Exact integer arithmetic on small square matrices: powers, Smith normal
//! form, and rational points of the torus with a common denominator.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Square integer matrix with `i128` entries, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    n: usize,
    data: Vec<i128>,
}

impl IntMatrix {
    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "integer matrix must be square");
            data.extend(r.iter().map(|&v| v as i128));
        }
        IntMatrix { n, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0; n * n];
        for i in 0..n {
            data[i * n + i] = 1;
        }
        IntMatrix { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i128 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: i128) {
        self.data[i * self.n + j] = v;
    }

    pub fn checked_mul(&self, other: &IntMatrix) -> Option<IntMatrix> {
        let n = self.n;
        let mut out = IntMatrix {
            n,
            data: vec![0; n * n],
        };
        for i in 0..n {
            for j in 0..n {
                let mut acc: i128 = 0;
                for k in 0..n {
                    acc = acc.checked_add(self.get(i, k).checked_mul(other.get(k, j))?)?;
                }
                out.set(i, j, acc);
            }
        }
        Some(out)
    }

    /// `self^e`, failing on `i128` overflow.
    pub fn checked_pow(&self, e: u32) -> Option<IntMatrix> {
        let mut acc = IntMatrix::identity(self.n);
        for _ in 0..e {
            acc = self.checked_mul(&acc)?;
        }
        Some(acc)
    }

    /// Entrywise `(self^e) mod 2^64` as wrapping `u64`, exact for every `e`.
    pub fn pow_mod_2_64(&self, e: u64) -> Vec<u64> {
        let n = self.n;
        let base: Vec<u64> = self.data.iter().map(|&v| v as i64 as u64).collect();
        let mut result = vec![0u64; n * n];
        for i in 0..n {
            result[i * n + i] = 1;
        }
        let mut b = base;
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                result = wrapping_mat_mul(n, &b, &result);
            }
            b = wrapping_mat_mul(n, &b, &b);
            e >>= 1;
        }
        result
    }

    pub fn minus_identity(&self) -> IntMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            out.set(i, i, out.get(i, i) - 1);
        }
        out
    }

    /// Exact determinant by fraction-free Bareiss elimination.
    pub fn determinant(&self) -> i128 {
        let n = self.n;
        if n == 0 {
            return 1;
        }
        let mut a = self.data.clone();
        let mut sign = 1i128;
        let mut prev = 1i128;
        for k in 0..n - 1 {
            if a[k * n + k] == 0 {
                let Some(p) = (k + 1..n).find(|&i| a[i * n + k] != 0) else {
                    return 0;
                };
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                sign = -sign;
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    a[i * n + j] = (a[i * n + j] * a[k * n + k] - a[i * n + k] * a[k * n + j]) / prev;
                }
            }
            prev = a[k * n + k];
        }
        sign * a[n * n - 1]
    }

    pub fn mul_vec_checked(&self, v: &[i128]) -> Option<Vec<i128>> {
        (0..self.n)
            .map(|i| {
                (0..self.n).try_fold(0i128, |acc, j| acc.checked_add(self.get(i, j).checked_mul(v[j])?))
            })
            .collect()
    }

    pub fn max_abs_entry(&self) -> i128 {
        self.data.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

fn wrapping_mat_mul(n: usize, a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] = out[i * n + j].wrapping_add(aik.wrapping_mul(b[k * n + j]));
            }
        }
    }
    out
}

/// `U · B · V = diag(s)` with `U`, `V` unimodular.
#[derive(Clone, Debug)]
pub struct SmithForm {
    pub u: IntMatrix,
    pub v: IntMatrix,
    pub invariants: Vec<i128>,
}

impl SmithForm {
    /// Product of the invariant factors, i.e. `|det B|`.
    pub fn order(&self) -> i128 {
        self.invariants.iter().product()
    }

    /// Least common multiple of the invariant factors; every solution of
    /// `B x ∈ ℤ^k` has this as a common denominator.
    pub fn denominator(&self) -> i128 {
        self.invariants.iter().fold(1, |acc, &s| lcm(acc, s))
    }
}

/// Smith normal form of a nonsingular integer matrix. Divisibility between
/// consecutive invariants is not enforced; only the diagonalization is used.
pub fn smith_normal_form(b: &IntMatrix) -> Result<SmithForm> {
    let n = b.n;
    let mut a = b.clone();
    let mut u = IntMatrix::identity(n);
    let mut v = IntMatrix::identity(n);
    for t in 0..n {
        loop {
            // Pivot: the smallest nonzero entry of the trailing block.
            let mut pivot: Option<(usize, usize)> = None;
            for i in t..n {
                for j in t..n {
                    let x = a.get(i, j);
                    if x != 0 && pivot.map_or(true, |(pi, pj)| x.abs() < a.get(pi, pj).abs()) {
                        pivot = Some((i, j));
                    }
                }
            }
            let Some((pi, pj)) = pivot else {
                return Err(Error::SingularLattice);
            };
            swap_rows(&mut a, &mut u, t, pi);
            swap_cols(&mut a, &mut v, t, pj);
            let p = a.get(t, t);
            let mut clean = true;
            for i in t + 1..n {
                let q = a.get(i, t).div_euclid(p);
                if q != 0 {
                    add_row_multiple(&mut a, &mut u, i, t, -q);
                }
                if a.get(i, t) != 0 {
                    clean = false;
                }
            }
            for j in t + 1..n {
                let q = a.get(t, j).div_euclid(p);
                if q != 0 {
                    add_col_multiple(&mut a, &mut v, j, t, -q);
                }
                if a.get(t, j) != 0 {
                    clean = false;
                }
            }
            if clean {
                break;
            }
        }
        if a.get(t, t) < 0 {
            for j in 0..n {
                a.set(t, j, -a.get(t, j));
                u.set(t, j, -u.get(t, j));
            }
        }
    }
    let invariants = (0..n).map(|i| a.get(i, i)).collect();
    Ok(SmithForm { u, v, invariants })
}

fn swap_rows(a: &mut IntMatrix, u: &mut IntMatrix, i: usize, j: usize) {
    if i == j {
        return;
    }
    let n = a.n;
    for k in 0..n {
        a.data.swap(i * n + k, j * n + k);
        u.data.swap(i * n + k, j * n + k);
    }
}

fn swap_cols(a: &mut IntMatrix, v: &mut IntMatrix, i: usize, j: usize) {
    if i == j {
        return;
    }
    let n = a.n;
    for k in 0..n {
        a.data.swap(k * n + i, k * n + j);
        v.data.swap(k * n + i, k * n + j);
    }
}

/// row_dst += q * row_src, mirrored on `u`.
fn add_row_multiple(a: &mut IntMatrix, u: &mut IntMatrix, dst: usize, src: usize, q: i128) {
    for k in 0..a.n {
        a.set(dst, k, a.get(dst, k) + q * a.get(src, k));
        u.set(dst, k, u.get(dst, k) + q * u.get(src, k));
    }
}

fn add_col_multiple(a: &mut IntMatrix, v: &mut IntMatrix, dst: usize, src: usize, q: i128) {
    for k in 0..a.n {
        a.set(k, dst, a.get(k, dst) + q * a.get(k, src));
        v.set(k, dst, v.get(k, dst) + q * v.get(k, src));
    }
}

pub fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn lcm(a: i128, b: i128) -> i128 {
    if a == 0 || b == 0 {
        0
    } else {
        (a / gcd(a, b) * b).abs()
    }
}

/// A point of `T^k` with rational coordinates `num_i / den`, `0 <= num_i < den`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RationalPoint {
    pub num: Vec<i128>,
    pub den: i128,
}

impl RationalPoint {
    /// Applies the integer matrix mod 1, exactly.
    pub fn apply(&self, m: &IntMatrix) -> RationalPoint {
        let num = (0..m.dim())
            .map(|i| {
                (0..m.dim()).fold(0i128, |acc, j| {
                    (acc + m.get(i, j).rem_euclid(self.den) * self.num[j]).rem_euclid(self.den)
                })
            })
            .collect();
        RationalPoint { num, den: self.den }
    }

    /// Nearest fixed-point representation with denominator `2^64`.
    pub fn to_raw(&self) -> Vec<u64> {
        self.num
            .iter()
            .map(|&n| {
                let den = self.den as u128;
                let scaled = ((n as u128) << 64) + den / 2;
                (scaled / den) as u64
            })
            .collect()
    }

    pub fn reduced(mut self) -> RationalPoint {
        let g = self.num.iter().fold(self.den, |g, &n| gcd(g, n));
        if g > 1 {
            for n in self.num.iter_mut() {
                *n /= g;
            }
            self.den /= g;
        }
        self
    }
}

/// All `x ∈ [0,1)^k` with `B x ∈ ℤ^k`, in lexicographic order of the
/// Smith coordinates. Returns exactly `|det B|` points.
pub fn lattice_solutions(b: &IntMatrix) -> Result<Vec<RationalPoint>> {
    let snf = smith_normal_form(b)?;
    let den = snf.denominator();
    let n = b.dim();
    let count = snf.order() as usize;
    let mut out = Vec::with_capacity(count);
    let mut digits = vec![0i128; n];
    loop {
        // y_i = digits_i / s_i = digits_i * (den / s_i) / den; x = V y.
        let y: Vec<i128> = (0..n)
            .map(|i| digits[i] * (den / snf.invariants[i]))
            .collect();
        let num = (0..n)
            .map(|i| {
                (0..n).fold(0i128, |acc, j| {
                    (acc + snf.v.get(i, j).rem_euclid(den) * y[j]).rem_euclid(den)
                })
            })
            .collect();
        out.push(RationalPoint { num, den });
        // odometer over digits
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < snf.invariants[i] {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// Solves `B x ≡ k (mod ℤ^k)`-style: returns `x = B^{-1} k mod 1` exactly.
pub fn solve_mod_one(b: &IntMatrix, rhs: &[i128]) -> Result<RationalPoint> {
    let snf = smith_normal_form(b)?;
    let den = snf.denominator();
    let n = b.dim();
    // B = U^{-1} S V^{-1}  =>  x = V S^{-1} U rhs
    let urhs: Vec<i128> = (0..n)
        .map(|i| (0..n).fold(0i128, |acc, j| (acc + snf.u.get(i, j).rem_euclid(den) * rhs[j].rem_euclid(den)).rem_euclid(den)))
        .collect();
    // Need (U rhs)_i / s_i exactly: work modulo den * s_i would be exact;
    // since den is a multiple of s_i, (U rhs)_i * (den / s_i) mod den is exact
    // once (U rhs)_i is known mod s_i, which holds because s_i | den.
    let y: Vec<i128> = (0..n)
        .map(|i| (urhs[i] * (den / snf.invariants[i])).rem_euclid(den))
        .collect();
    let num = (0..n)
        .map(|i| (0..n).fold(0i128, |acc, j| (acc + snf.v.get(i, j).rem_euclid(den) * y[j]).rem_euclid(den)))
        .collect();
    Ok(RationalPoint { num, den }.reduced())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cat() -> IntMatrix {
        IntMatrix::from_rows(&[vec![2, 1], vec![1, 1]])
    }

    #[test]
    fn smith_form_diagonalizes() {
        let b = cat().checked_pow(3).unwrap().minus_identity();
        let snf = smith_normal_form(&b).unwrap();
        let d = snf.u.checked_mul(&b).unwrap().checked_mul(&snf.v).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                if i != j {
                    assert_eq!(d.get(i, j), 0);
                }
            }
        }
        assert_eq!(snf.order(), b.determinant().abs());
    }

    #[test]
    fn lattice_solutions_are_fixed_and_distinct() {
        for n in 1..=8u32 {
            let m = cat().checked_pow(n).unwrap();
            let b = m.minus_identity();
            let sols = lattice_solutions(&b).unwrap();
            assert_eq!(sols.len() as i128, b.determinant().abs());
            let mut seen = alloc::collections::BTreeSet::new();
            for p in &sols {
                assert_eq!(p.apply(&m), *p);
                assert!(seen.insert(p.clone().reduced()));
            }
        }
    }

    #[test]
    fn brute_force_matches_for_period_two() {
        // (M^2 - I) = [[4,3],[3,1]], det = -5: brute-force x = j/5 grid.
        let b = cat().checked_pow(2).unwrap().minus_identity();
        let mut brute = 0;
        for a in 0..5 {
            for c in 0..5 {
                let ok = (0..2).all(|i| (b.get(i, 0) * a + b.get(i, 1) * c) % 5 == 0);
                if ok {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, 5);
        assert_eq!(lattice_solutions(&b).unwrap().len(), 5);
    }

    #[test]
    fn solve_mod_one_inverts() {
        let b = cat().checked_pow(4).unwrap().minus_identity();
        let x = solve_mod_one(&b, &[3, -7]).unwrap();
        // B x - k must be integral: B num ≡ k den (mod den)
        for i in 0..2 {
            let lhs = b.get(i, 0) * x.num[0] + b.get(i, 1) * x.num[1];
            let rhs = [3i128, -7][i] * x.den;
            assert_eq!((lhs - rhs).rem_euclid(x.den), 0);
        }
    }

    #[test]
    fn wrapping_power_matches_exact() {
        let m = cat();
        let exact = m.checked_pow(20).unwrap();
        let wrap = m.pow_mod_2_64(20);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(exact.get(i, j) as u64, wrap[i * 2 + j]);
            }
        }
    }
}
