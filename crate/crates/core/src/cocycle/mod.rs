//! Matrix-valued maps over the base systems and their ground-truth transfer
//! maps.

pub mod product;
pub mod spectrum;

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::dynamics::{BaseSystem, Point, SymbolSequence, TorusPoint};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

pub use product::{product, product_with, ScaledProduct, DEFAULT_PRODUCT_BUDGET};
pub use spectrum::{
    lyapunov_spectrum, oseledets_frames_along, oseledets_splitting, zero_exponent_check, FrameSeries, LyapunovSpectrum,
    OseledetsFrame, SpectrumOptions, ZeroExponentReport,
};

pub const DEFAULT_CONDITION_BOUND: f64 = 1e8;

/// Fractional part of `raw / 2^64` mapped to `[-1/2, 1/2)`; phases computed
/// this way keep full precision near integers.
#[inline]
fn turns(raw: u64) -> f64 {
    raw as i64 as f64 * (1.0 / 18_446_744_073_709_551_616.0)
}

#[inline]
fn sin_turns(raw: u64) -> f64 {
    math::sin(math::TAU * turns(raw))
}

#[inline]
fn cos_turns(raw: u64) -> f64 {
    math::cos(math::TAU * turns(raw))
}

/// Angle fields `theta(x)` depending on the first torus coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum AngleField {
    /// `c sin(2 pi x_1)`; Lipschitz.
    Sine { c: f64 },
    /// `c |sin(2 pi x_1)|^nu`; `nu`-Hölder at the zeros of the sine only.
    RootSine { c: f64, nu: f64 },
    /// `c sum_{j < terms} 2^{-j nu} cos(2 pi 2^j x_1)`; `nu`-Hölder at every
    /// scale above `2^{-terms}`.
    Lacunary { c: f64, nu: f64, terms: u32 },
}

impl AngleField {
    pub fn evaluate(&self, x1: u64) -> f64 {
        match *self {
            AngleField::Sine { c } => c * sin_turns(x1),
            AngleField::RootSine { c, nu } => c * math::powf(sin_turns(x1).abs(), nu),
            AngleField::Lacunary { c, nu, terms } => {
                let mut acc = 0.0;
                let mut weight = 1.0;
                let decay = math::powf(2.0, -nu);
                for j in 0..terms {
                    acc += weight * cos_turns(x1.wrapping_shl(j));
                    weight *= decay;
                }
                c * acc
            }
        }
    }

    /// Hölder exponent of the field.
    pub fn holder_exponent(&self) -> f64 {
        match *self {
            AngleField::Sine { .. } => 1.0,
            AngleField::RootSine { nu, .. } | AngleField::Lacunary { nu, .. } => nu.min(1.0),
        }
    }
}

/// A closed-form transfer map `P`.
#[derive(Clone, Debug, PartialEq)]
pub enum GroundTruthTransfer {
    /// `P(x) = R(theta(x)) [[1, s sin 2 pi x_2], [0, 1]]` on `T^2`.
    TorusRotation { angle: AngleField, shear: f64 },
    /// `P(x) = table[x_{-q} .. x_q]` on the shift.
    Cylinder(CylinderTable),
}

impl GroundTruthTransfer {
    pub fn dim(&self) -> usize {
        match self {
            GroundTruthTransfer::TorusRotation { .. } => 2,
            GroundTruthTransfer::Cylinder(t) => t.dim,
        }
    }

    pub fn evaluate(&self, x: &Point) -> Result<Matrix> {
        match (self, x) {
            (GroundTruthTransfer::TorusRotation { angle, shear }, Point::Torus(p)) if p.dim() == 2 => {
                let theta = angle.evaluate(p.raw()[0]);
                let s = shear * sin_turns(p.raw()[1]);
                let (c, sn) = (math::cos(theta), math::sin(theta));
                Ok(Matrix::from_row_major(2, 2, &[c, c * s - sn, sn, sn * s + c]))
            }
            (GroundTruthTransfer::Cylinder(t), Point::Shift(q)) => Ok(t.lookup(q).clone()),
            _ => Err(Error::PointMismatch),
        }
    }

    /// `P(x)^{-1}` in closed form where available.
    pub fn evaluate_inverse(&self, x: &Point) -> Result<Matrix> {
        match (self, x) {
            (GroundTruthTransfer::TorusRotation { angle, shear }, Point::Torus(p)) if p.dim() == 2 => {
                let theta = angle.evaluate(p.raw()[0]);
                let s = shear * sin_turns(p.raw()[1]);
                let (c, sn) = (math::cos(theta), math::sin(theta));
                // [[1, -s], [0, 1]] R(-theta)
                Ok(Matrix::from_row_major(2, 2, &[c + s * sn, sn - s * c, -sn, c]))
            }
            (GroundTruthTransfer::Cylinder(t), Point::Shift(q)) => Ok(t.lookup_inverse(q).clone()),
            _ => Err(Error::PointMismatch),
        }
    }

    /// `T_true`, a bound on both `||P||` and `||P^{-1}||`.
    pub fn bound(&self) -> f64 {
        match self {
            GroundTruthTransfer::TorusRotation { shear, .. } => {
                let s = shear.abs();
                (s + math::sqrt(s * s + 4.0)) / 2.0
            }
            GroundTruthTransfer::Cylinder(t) => t
                .entries
                .iter()
                .zip(&t.inverses)
                .map(|(m, i)| m.spectral_norm().max(i.spectral_norm()))
                .fold(1.0, f64::max),
        }
    }

    pub fn holder_exponent(&self) -> f64 {
        match self {
            GroundTruthTransfer::TorusRotation { angle, .. } => angle.holder_exponent(),
            GroundTruthTransfer::Cylinder(_) => 1.0,
        }
    }
}

/// Matrices indexed by the central word `x_{-m} .. x_m`; index is the
/// base-`k` value of the word read left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderTable {
    pub depth: u32,
    pub alphabet: u8,
    pub dim: usize,
    entries: Vec<Matrix>,
    inverses: Vec<Matrix>,
}

impl CylinderTable {
    /// `entries[i]` for word index `i`; must have `k^(2m+1)` entries.
    pub fn new(depth: u32, alphabet: u8, entries: Vec<Matrix>) -> Result<Self> {
        let len = (alphabet as usize)
            .checked_pow(2 * depth + 1)
            .filter(|&l| l <= 1 << 20)
            .ok_or_else(|| Error::InvalidCocycle("cylinder table too large".to_string()))?;
        if entries.len() != len {
            return Err(Error::InvalidCocycle(alloc::format!(
                "cylinder table needs {len} entries, got {}",
                entries.len()
            )));
        }
        let dim = entries[0].rows();
        let mut inverses = Vec::with_capacity(len);
        for m in &entries {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.rows(),
                });
            }
            inverses.push(
                m.inverse()
                    .ok_or_else(|| Error::InvalidCocycle("singular cylinder matrix".to_string()))?,
            );
        }
        Ok(CylinderTable {
            depth,
            alphabet,
            dim,
            entries,
            inverses,
        })
    }

    /// Seeded table of rotations composed with `I + spread · noise`, noise
    /// entries uniform in `[-1, 1]`; close to conformal for small spread.
    pub fn seeded(depth: u32, alphabet: u8, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        use rand_chacha::rand_core::{RngCore, SeedableRng};
        let len = (alphabet as usize)
            .checked_pow(2 * depth + 1)
            .filter(|&l| l <= 1 << 20)
            .ok_or_else(|| Error::InvalidCocycle("cylinder table too large".to_string()))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut unit = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let entries = (0..len)
            .map(|_| {
                let mut m = Matrix::identity(dim);
                for i in 0..dim {
                    for j in 0..dim {
                        m[(i, j)] += spread * (2.0 * unit() - 1.0);
                    }
                }
                let mut rot = Matrix::identity(dim);
                // plane rotations in consecutive coordinate pairs
                for i in 0..dim.saturating_sub(1) {
                    let mut g = Matrix::identity(dim);
                    let t = math::TAU * unit();
                    let (c, sn) = (math::cos(t), math::sin(t));
                    g[(i, i)] = c;
                    g[(i, i + 1)] = -sn;
                    g[(i + 1, i)] = sn;
                    g[(i + 1, i + 1)] = c;
                    rot = g.matmul(&rot);
                }
                rot.matmul(&m)
            })
            .collect();
        Self::new(depth, alphabet, entries)
    }

    pub fn index_of(&self, x: &SymbolSequence) -> usize {
        let m = self.depth as i64;
        let k = self.alphabet as usize;
        (-m..=m).fold(0usize, |acc, j| acc * k + x.at(j) as usize)
    }

    /// Word index of a word written as a string of digits.
    pub fn index_of_word(&self, word: &[u8]) -> Option<usize> {
        if word.len() != 2 * self.depth as usize + 1 || word.iter().any(|&s| s >= self.alphabet) {
            return None;
        }
        Some(word.iter().fold(0usize, |acc, &s| acc * self.alphabet as usize + s as usize))
    }

    pub fn lookup(&self, x: &SymbolSequence) -> &Matrix {
        &self.entries[self.index_of(x)]
    }

    pub fn lookup_inverse(&self, x: &SymbolSequence) -> &Matrix {
        &self.inverses[self.index_of(x)]
    }

    pub fn entries(&self) -> &[Matrix] {
        &self.entries
    }
}

/// One term `cos(2 pi <k, x>) C + sin(2 pi <k, x>) S`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigTerm {
    pub frequency: Vec<i64>,
    pub cos: Matrix,
    pub sin: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CocycleVariant {
    Constant(Matrix),
    Coboundary(GroundTruthTransfer),
    LocallyConstant(CylinderTable),
    TorusSmooth { constant: Matrix, terms: Vec<TrigTerm> },
}

/// A Hölder map from the phase space to `GL(d, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CocycleMap {
    pub dim: usize,
    /// Declared Hölder exponent.
    pub alpha: f64,
    pub variant: CocycleVariant,
    pub condition_bound: f64,
}

impl CocycleMap {
    pub fn new(alpha: f64, variant: CocycleVariant) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidCocycle("alpha must lie in (0, 1]".to_string()));
        }
        let dim = match &variant {
            CocycleVariant::Constant(m) => {
                if !m.is_square() || m.inverse().is_none() {
                    return Err(Error::InvalidCocycle("constant matrix must be invertible".to_string()));
                }
                m.rows()
            }
            CocycleVariant::Coboundary(p) => p.dim(),
            CocycleVariant::LocallyConstant(t) => t.dim,
            CocycleVariant::TorusSmooth { constant, terms } => {
                let d = constant.rows();
                if !constant.is_square() {
                    return Err(Error::InvalidCocycle("matrix must be square".to_string()));
                }
                for t in terms {
                    for m in [&t.cos, &t.sin] {
                        if m.rows() != d || m.cols() != d {
                            return Err(Error::DimensionMismatch {
                                expected: d,
                                found: m.rows(),
                            });
                        }
                    }
                }
                d
            }
        };
        Ok(CocycleMap {
            dim,
            alpha,
            variant,
            condition_bound: DEFAULT_CONDITION_BOUND,
        })
    }

    pub fn constant(m: Matrix) -> Result<Self> {
        Self::new(1.0, CocycleVariant::Constant(m))
    }

    pub fn identity(d: usize) -> Self {
        Self::constant(Matrix::identity(d)).expect("identity is invertible")
    }

    pub fn coboundary(p: GroundTruthTransfer) -> Result<Self> {
        let alpha = p.holder_exponent();
        Self::new(alpha, CocycleVariant::Coboundary(p))
    }

    /// Rotation by `2 pi <k, x> + phase` on the torus, as a trigonometric
    /// polynomial.
    pub fn torus_rotation(frequency: Vec<i64>, phase: f64) -> Self {
        let (c, s) = (math::cos(phase), math::sin(phase));
        // R(a + phase) = cos a R(phase) + sin a R(phase + pi/2)
        let cos = Matrix::from_row_major(2, 2, &[c, -s, s, c]);
        let sin = Matrix::from_row_major(2, 2, &[-s, -c, c, -s]);
        Self::new(
            1.0,
            CocycleVariant::TorusSmooth {
                constant: Matrix::zeros(2, 2),
                terms: alloc::vec![TrigTerm { frequency, cos, sin }],
            },
        )
        .expect("rotation cocycle is well formed")
    }

    pub fn ground_truth(&self) -> Option<&GroundTruthTransfer> {
        match &self.variant {
            CocycleVariant::Coboundary(p) => Some(p),
            _ => None,
        }
    }

    /// `Some(m)` when `A(x)` depends only on `x_{-m} .. x_m` of a sequence.
    pub fn locality_depth(&self) -> Option<u32> {
        match &self.variant {
            CocycleVariant::Constant(_) => Some(0),
            CocycleVariant::LocallyConstant(t) => Some(t.depth),
            CocycleVariant::Coboundary(GroundTruthTransfer::Cylinder(t)) => Some(t.depth + 1),
            _ => None,
        }
    }

    fn raw_evaluate(&self, system: &BaseSystem, x: &Point) -> Result<Matrix> {
        match &self.variant {
            CocycleVariant::Constant(m) => Ok(m.clone()),
            CocycleVariant::Coboundary(p) => {
                let fx = system.step(x);
                Ok(p.evaluate(&fx)?.matmul(&p.evaluate_inverse(x)?))
            }
            CocycleVariant::LocallyConstant(t) => match x {
                Point::Shift(q) if q.alphabet() == t.alphabet => Ok(t.lookup(q).clone()),
                _ => Err(Error::PointMismatch),
            },
            CocycleVariant::TorusSmooth { constant, terms } => match x {
                Point::Torus(p) => Ok(evaluate_trig(constant, terms, p)),
                Point::Shift(_) => Err(Error::PointMismatch),
            },
        }
    }

    /// `A(x)`, rejecting matrices whose condition number exceeds the bound.
    pub fn evaluate(&self, system: &BaseSystem, x: &Point) -> Result<Matrix> {
        let m = self.raw_evaluate(system, x)?;
        let cond = m.condition_number();
        if !(cond <= self.condition_bound) {
            return Err(Error::IllConditioned {
                condition: cond,
                bound: self.condition_bound,
            });
        }
        Ok(m)
    }

    /// `sup_x log ||A(x)||` over the given points, at least zero.
    pub fn log_norm_scale(&self, system: &BaseSystem, points: &[Point]) -> Result<f64> {
        let mut s: f64 = 0.0;
        for x in points {
            s = s.max(math::ln(self.evaluate(system, x)?.spectral_norm()).abs());
        }
        Ok(s)
    }
}

fn evaluate_trig(constant: &Matrix, terms: &[TrigTerm], p: &TorusPoint) -> Matrix {
    let mut out = constant.clone();
    let raw = p.raw();
    for t in terms {
        let phase = t
            .frequency
            .iter()
            .zip(raw)
            .fold(0u64, |acc, (&k, &r)| acc.wrapping_add((k as u64).wrapping_mul(r)));
        let (c, s) = (cos_turns(phase), sin_turns(phase));
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out[(i, j)] += c * t.cos[(i, j)] + s * t.sin[(i, j)];
            }
        }
    }
    out
}
