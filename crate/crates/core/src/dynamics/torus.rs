//! Hyperbolic toral automorphisms on `T^k`, `k <= 4`.
//!
//! Points are stored as 64-bit fixed-point fractions so that iteration is
//! exact integer arithmetic modulo `2^64` and the group law holds bit for bit.

use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;

use super::lattice::{lattice_solutions, solve_mod_one, IntMatrix, RationalPoint};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

pub const MAX_TORUS_DIM: usize = 4;
const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

/// A point of `T^k`; coordinate `i` is `raw[i] / 2^64`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TorusPoint {
    raw: [u64; MAX_TORUS_DIM],
    dim: u8,
}

impl fmt::Debug for TorusPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

impl TorusPoint {
    pub fn from_raw(raw: &[u64]) -> Self {
        assert!(!raw.is_empty() && raw.len() <= MAX_TORUS_DIM, "torus dimension must be 1..=4");
        let mut r = [0u64; MAX_TORUS_DIM];
        r[..raw.len()].copy_from_slice(raw);
        TorusPoint {
            raw: r,
            dim: raw.len() as u8,
        }
    }

    /// Reduces each coordinate mod 1.
    pub fn from_coords(coords: &[f64]) -> Self {
        let raw: Vec<u64> = coords.iter().map(|&c| frac_to_raw(c)).collect();
        Self::from_raw(&raw)
    }

    pub fn origin(dim: usize) -> Self {
        Self::from_raw(&[0u64; MAX_TORUS_DIM][..dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn raw(&self) -> &[u64] {
        &self.raw[..self.dim()]
    }

    /// Coordinate `i` in `[0, 1)`.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        (self.raw[i] >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.coord(i)).collect()
    }

    /// Translation by a real vector, reduced mod 1.
    pub fn translate(&self, delta: &[f64]) -> Self {
        debug_assert_eq!(delta.len(), self.dim());
        let mut out = *self;
        for (i, &d) in delta.iter().enumerate() {
            let r = d - libm::trunc(d);
            if r >= 0.0 {
                out.raw[i] = out.raw[i].wrapping_add(scaled_raw(r));
            } else {
                out.raw[i] = out.raw[i].wrapping_sub(scaled_raw(-r));
            }
        }
        out
    }

    /// Minimal lift of `other - self`, each component in `[-1/2, 1/2)`.
    pub fn lift_difference(&self, other: &TorusPoint) -> Vec<f64> {
        (0..self.dim())
            .map(|i| other.raw[i].wrapping_sub(self.raw[i]) as i64 as f64 / TWO_POW_64)
            .collect()
    }

    /// Flat metric: Euclidean norm of the coordinate-wise wrap distances.
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let d = other.raw[i].wrapping_sub(self.raw[i]) as i64;
            let d = d.unsigned_abs() as f64 / TWO_POW_64;
            acc += d * d;
        }
        math::sqrt(acc)
    }
}

fn scaled_raw(r: f64) -> u64 {
    // r in [0, 1); rounding may hit 2^64, which wraps to 0.
    let s = libm::round(r * TWO_POW_64);
    if s >= TWO_POW_64 {
        0
    } else {
        s as u64
    }
}

fn frac_to_raw(c: f64) -> u64 {
    let f = c - math::floor(c);
    scaled_raw(f)
}

/// Data of a 2-dimensional hyperbolic matrix: signed eigenvalues and unit
/// eigenvectors.
#[derive(Clone, Debug)]
pub struct Splitting2 {
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub v_u: [f64; 2],
    pub v_s: [f64; 2],
    /// Inverse of the eigenbasis `[v_u | v_s]`.
    basis_inv: Matrix,
}

impl Splitting2 {
    fn new(m: &IntMatrix) -> Result<Self> {
        let (a, b, c, d) = (
            m.get(0, 0) as f64,
            m.get(0, 1) as f64,
            m.get(1, 0) as f64,
            m.get(1, 1) as f64,
        );
        let tr = a + d;
        let det = a * d - b * c;
        let disc = tr * tr - 4.0 * det;
        if disc <= 0.0 {
            return Err(Error::InvalidSystem("matrix has complex eigenvalues".into()));
        }
        let sq = math::sqrt(disc);
        let (e1, e2) = ((tr + sq) / 2.0, (tr - sq) / 2.0);
        let (lambda_u, lambda_s) = if e1.abs() >= e2.abs() { (e1, e2) } else { (e2, e1) };
        // Cancellation-free small root.
        let lambda_s = if lambda_s.abs() < 1.0 { det / lambda_u } else { lambda_s };
        if !(lambda_u.abs() > 1.0 + 1e-12 && lambda_s.abs() < 1.0 - 1e-12) {
            return Err(Error::InvalidSystem("matrix is not hyperbolic".into()));
        }
        let eig = |mu: f64| -> [f64; 2] {
            let (x, y) = if b.abs() + (mu - a).abs() >= (mu - d).abs() + c.abs() {
                (b, mu - a)
            } else {
                (mu - d, c)
            };
            let n = math::hypot(x, y);
            let (x, y) = (x / n, y / n);
            if x < 0.0 || (x == 0.0 && y < 0.0) {
                [-x, -y]
            } else {
                [x, y]
            }
        };
        let v_u = eig(lambda_u);
        let v_s = eig(lambda_s);
        let basis = Matrix::from_rows(&[[v_u[0], v_s[0]], [v_u[1], v_s[1]]]);
        let basis_inv = basis
            .inverse()
            .ok_or_else(|| Error::InvalidSystem("degenerate eigenbasis".into()))?;
        Ok(Splitting2 {
            lambda_u,
            lambda_s,
            v_u,
            v_s,
            basis_inv,
        })
    }

    /// Coordinates `(unstable, stable)` of a vector in the eigenbasis.
    pub fn decompose(&self, v: &[f64]) -> (f64, f64) {
        let c = self.basis_inv.mul_vec(v);
        (c[0], c[1])
    }

    /// `sqrt(2) * ||E^{-1}||_2`: bounds `|c_u| + |c_s|` by a multiple of `|v|`.
    pub fn kappa(&self) -> f64 {
        core::f64::consts::SQRT_2 * self.basis_inv.spectral_norm()
    }
}

/// Configuration knobs shared by both testbeds.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusOptions {
    pub leaf_radius: f64,
    pub bracket_radius: f64,
    pub max_period: u32,
    pub max_points: u64,
}

impl Default for TorusOptions {
    fn default() -> Self {
        TorusOptions {
            leaf_radius: 0.05,
            bracket_radius: 0.05,
            max_period: 14,
            max_points: 1 << 22,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TorusAutomorphism {
    matrix: IntMatrix,
    inverse: IntMatrix,
    wrap: Vec<u64>,
    wrap_inv: Vec<u64>,
    splitting: Option<Splitting2>,
    /// `log` of the weakest expansion/contraction modulus.
    eta: f64,
    pub options: TorusOptions,
}

impl TorusAutomorphism {
    pub fn new(rows: &[Vec<i64>], options: TorusOptions) -> Result<Self> {
        let k = rows.len();
        if k == 0 || k > MAX_TORUS_DIM || rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidSystem("torus matrix must be square of size 1..=4".into()));
        }
        let matrix = IntMatrix::from_rows(rows);
        let det = matrix.determinant();
        if det.abs() != 1 {
            return Err(Error::InvalidSystem("torus matrix must have determinant +-1".into()));
        }
        let snf = super::lattice::smith_normal_form(&matrix)?;
        // U M V = I  =>  M^{-1} = V U
        let inverse = snf.v.checked_mul(&snf.u).ok_or(Error::InvalidSystem("overflow".into()))?;
        let (splitting, eta) = if k == 2 {
            let s = Splitting2::new(&matrix)?;
            let eta = math::ln(s.lambda_u.abs());
            (Some(s), eta)
        } else {
            (None, hyperbolicity_rate(&matrix)?)
        };
        let wrap = matrix.pow_mod_2_64(1);
        let wrap_inv = inverse.pow_mod_2_64(1);
        Ok(TorusAutomorphism {
            matrix,
            inverse,
            wrap,
            wrap_inv,
            splitting,
            eta,
            options,
        })
    }

    /// The cat map `[[2,1],[1,1]]`.
    pub fn cat_map() -> Self {
        Self::new(&[alloc::vec![2, 1], alloc::vec![1, 1]], TorusOptions::default())
            .expect("cat map is hyperbolic")
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &IntMatrix {
        &self.matrix
    }

    /// The integer matrix as a real matrix (the derivative cocycle).
    pub fn real_matrix(&self) -> Matrix {
        let k = self.dim();
        let mut m = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = self.matrix.get(i, j) as f64;
            }
        }
        m
    }

    pub fn splitting(&self) -> Option<&Splitting2> {
        self.splitting.as_ref()
    }

    fn splitting_or_err(&self) -> Result<&Splitting2> {
        self.splitting
            .as_ref()
            .ok_or(Error::Unsupported("leaf geometry is implemented for T^2 only"))
    }

    /// Closing-lemma rate.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Closing-lemma constant `C`.
    pub fn closing_constant(&self) -> f64 {
        let kappa = self.splitting.as_ref().map_or(core::f64::consts::SQRT_2, |s| s.kappa());
        kappa / (1.0 - math::exp(-self.eta))
    }

    /// Leaf contraction `(C_x, tau)`: unit-speed linear leaves contract
    /// exactly at rate `log |lambda_u|`.
    pub fn leaf_contraction(&self) -> (f64, f64) {
        (1.0, self.eta)
    }

    pub fn step(&self, x: &TorusPoint) -> TorusPoint {
        apply_wrapping(&self.wrap, x)
    }

    pub fn step_back(&self, x: &TorusPoint) -> TorusPoint {
        apply_wrapping(&self.wrap_inv, x)
    }

    pub fn iterate(&self, x: &TorusPoint, n: i64) -> TorusPoint {
        match n {
            0 => *x,
            1 => self.step(x),
            -1 => self.step_back(x),
            _ => {
                let m = if n > 0 { &self.matrix } else { &self.inverse };
                let p = m.pow_mod_2_64(n.unsigned_abs());
                apply_wrapping(&p, x)
            }
        }
    }

    fn check_period(&self, n: u32) -> Result<()> {
        if n == 0 || n > self.options.max_period {
            return Err(Error::BudgetExceeded {
                requested: n as u64,
                budget: self.options.max_period as u64,
            });
        }
        Ok(())
    }

    /// Exact solutions of `f^n(p) = p`, lexicographic in Smith coordinates.
    pub fn periodic_points(&self, n: u32) -> Result<Vec<RationalPoint>> {
        self.check_period(n)?;
        let b = self
            .matrix
            .checked_pow(n)
            .ok_or(Error::PeriodTooLong(n))?
            .minus_identity();
        let count = b.determinant().unsigned_abs();
        if count == 0 {
            return Err(Error::SingularLattice);
        }
        if count > self.options.max_points as u128 {
            return Err(Error::BudgetExceeded {
                requested: count as u64,
                budget: self.options.max_points,
            });
        }
        lattice_solutions(&b)
    }

    /// Exact image of a rational point.
    pub fn step_rational(&self, p: &RationalPoint) -> RationalPoint {
        p.apply(&self.matrix)
    }

    /// Closing lemma. Returns the periodic point and the exact residual
    /// `d(f^n y, y)`.
    pub fn shadow_point(&self, y: &TorusPoint, n: u32) -> Result<(RationalPoint, f64)> {
        let mn = self.matrix.checked_pow(n).ok_or(Error::PeriodTooLong(n))?;
        let a: Vec<i128> = y.raw().iter().map(|&v| v as i128).collect();
        let ma = mn.mul_vec_checked(&a).ok_or(Error::PeriodTooLong(n))?;
        let half = 1i128 << 63;
        let mut k = Vec::with_capacity(a.len());
        let mut resid = 0.0;
        for i in 0..a.len() {
            let v = ma[i] - a[i];
            let ki = (v + half) >> 64;
            let r = (v - (ki << 64)) as f64 / TWO_POW_64;
            resid += r * r;
            k.push(ki);
        }
        let p = solve_mod_one(&mn.minus_identity(), &k)?;
        Ok((p, math::sqrt(resid)))
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> TorusPoint {
        let raw: Vec<u64> = (0..self.dim()).map(|_| rng.next_u64()).collect();
        TorusPoint::from_raw(&raw)
    }

    /// `x + s v_s`.
    pub fn stable_point(&self, x: &TorusPoint, s: f64) -> Result<TorusPoint> {
        self.check_leaf(s)?;
        let sp = self.splitting_or_err()?;
        Ok(x.translate(&[s * sp.v_s[0], s * sp.v_s[1]]))
    }

    /// `x + s v_u`.
    pub fn unstable_point(&self, x: &TorusPoint, s: f64) -> Result<TorusPoint> {
        self.check_leaf(s)?;
        let sp = self.splitting_or_err()?;
        Ok(x.translate(&[s * sp.v_u[0], s * sp.v_u[1]]))
    }

    fn check_leaf(&self, s: f64) -> Result<()> {
        if !(s.abs() <= self.options.leaf_radius) {
            return Err(Error::LeafRadiusExceeded {
                requested: s,
                radius: self.options.leaf_radius,
            });
        }
        Ok(())
    }

    /// Eigen-coordinates `(unstable, stable)` of the minimal lift of `w - z`.
    pub fn leaf_coordinates(&self, z: &TorusPoint, w: &TorusPoint) -> Result<(f64, f64)> {
        let sp = self.splitting_or_err()?;
        Ok(sp.decompose(&z.lift_difference(w)))
    }

    /// `W^s_loc(z) ∩ W^u_loc(w)`.
    pub fn bracket(&self, z: &TorusPoint, w: &TorusPoint) -> Result<TorusPoint> {
        let d = z.distance(w);
        if !(d < self.options.bracket_radius) {
            return Err(Error::PointsTooFar {
                distance: d,
                radius: self.options.bracket_radius,
            });
        }
        let sp = self.splitting_or_err()?;
        let (_, a) = sp.decompose(&z.lift_difference(w));
        Ok(z.translate(&[a * sp.v_s[0], a * sp.v_s[1]]))
    }
}

fn apply_wrapping(m: &[u64], x: &TorusPoint) -> TorusPoint {
    let k = x.dim();
    let mut raw = [0u64; MAX_TORUS_DIM];
    for i in 0..k {
        let mut acc = 0u64;
        for j in 0..k {
            acc = acc.wrapping_add(m[i * k + j].wrapping_mul(x.raw[j]));
        }
        raw[i] = acc;
    }
    TorusPoint { raw, dim: x.dim }
}

/// Smallest `|log |eigenvalue||` of an integer matrix, estimated by QR
/// iteration. Fails when some modulus is within `1e-3` of 1 in log scale.
fn hyperbolicity_rate(m: &IntMatrix) -> Result<f64> {
    let k = m.dim();
    let mut a = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = m.get(i, j) as f64;
        }
    }
    let iters = 4000;
    let mut q = Matrix::identity(k);
    let mut sums = alloc::vec![0.0f64; k];
    for _ in 0..iters {
        let qr = a.matmul(&q).qr();
        for (i, s) in sums.iter_mut().enumerate() {
            *s += math::ln(qr.r[(i, i)]);
        }
        q = qr.q;
    }
    let rate = sums
        .iter()
        .map(|s| (s / iters as f64).abs())
        .fold(f64::INFINITY, f64::min);
    if rate < 1e-3 {
        return Err(Error::InvalidSystem("matrix is not hyperbolic".into()));
    }
    Ok(rate)
}
