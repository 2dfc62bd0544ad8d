//! Overflow-safe long products `A^n(x)`.

use crate::dynamics::{BaseSystem, Point};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

use super::CocycleMap;

pub const DEFAULT_PRODUCT_BUDGET: u64 = 10_000_000;

/// Condition bound of `R` above which [`ScaledProduct::inverse`] refuses.
const INVERSE_CONDITION_LIMIT: f64 = 1e13;

/// `e^{log_scale} Q R` with `Q` orthogonal, `R` upper triangular with
/// positive diagonal and largest entry 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledProduct {
    q: Matrix,
    r: Matrix,
    log_scale: f64,
}

impl ScaledProduct {
    pub fn identity(d: usize) -> Self {
        ScaledProduct {
            q: Matrix::identity(d),
            r: Matrix::identity(d),
            log_scale: 0.0,
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        let qr = m.qr();
        let mut out = ScaledProduct {
            q: qr.q,
            r: qr.r,
            log_scale: 0.0,
        };
        out.normalize();
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.q.rows()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    fn normalize(&mut self) {
        let c = self.r.max_abs();
        if c > 0.0 && c.is_finite() && c != 1.0 {
            self.r.scale_mut(1.0 / c);
            self.log_scale += math::ln(c);
        }
    }

    /// `self <- a · self`.
    pub fn left_mul(&mut self, a: &Matrix) {
        let qr = a.matmul(&self.q).qr();
        self.q = qr.q;
        self.r = qr.r.matmul(&self.r);
        self.normalize();
    }

    /// `self · rhs`.
    pub fn compose(&self, rhs: &ScaledProduct) -> ScaledProduct {
        let qr = self.r.matmul(&rhs.q).qr();
        let mut out = ScaledProduct {
            q: self.q.matmul(&qr.q),
            r: qr.r.matmul(&rhs.r),
            log_scale: self.log_scale + rhs.log_scale,
        };
        out.normalize();
        out
    }

    /// The represented matrix; entries overflow to infinity when the scale is
    /// beyond the `f64` range.
    pub fn to_matrix(&self) -> Matrix {
        self.q.matmul(&self.r).scaled(math::exp(self.log_scale))
    }

    /// The represented matrix divided by `e^{log_scale}`.
    pub fn unscaled(&self) -> Matrix {
        self.q.matmul(&self.r)
    }

    /// `None` when `R` is too ill-conditioned for a faithful inverse.
    pub fn inverse(&self) -> Option<ScaledProduct> {
        if self.r.condition_number() > INVERSE_CONDITION_LIMIT {
            return None;
        }
        let rinv = self.r.inverse()?;
        let mut out = ScaledProduct::from_matrix(&rinv.matmul(&self.q.transpose()));
        out.log_scale -= self.log_scale;
        Some(out)
    }

    /// `self^{-1} · rhs` by a triangular solve, without forming the inverse.
    pub fn inverse_times(&self, rhs: &ScaledProduct) -> Option<Matrix> {
        let m = self.q.tr_matmul(&rhs.q).matmul(&rhs.r);
        let x = self.r.solve(&m)?;
        let s = math::exp(rhs.log_scale - self.log_scale);
        let out = x.scaled(s);
        out.is_finite().then_some(out)
    }

    /// `ln ||·||_2`.
    pub fn log_norm(&self) -> f64 {
        self.log_scale + math::ln(self.r.spectral_norm())
    }

    pub fn norm(&self) -> f64 {
        math::exp(self.log_norm())
    }

    /// `ln ||(·)^{-1}||_2`; infinite when `R` has underflowed.
    pub fn log_inverse_norm(&self) -> f64 {
        let (lo, _) = self.r.singular_value_range();
        -self.log_scale - math::ln(lo)
    }

    /// `||· - I||_2`; infinite when the product overflows.
    pub fn defect(&self) -> f64 {
        self.to_matrix().minus_identity().spectral_norm()
    }

    /// `ln ||· - I||_2`, accurate also for products far beyond `f64` range.
    pub fn log_defect(&self) -> f64 {
        if self.log_norm() > 40.0 {
            // ||M - I|| = ||M|| (1 + O(e^{-40}))
            self.log_norm()
        } else {
            math::ln(self.defect())
        }
    }
}

/// `A^n(x)` with re-orthonormalization every step.
pub fn product(a: &CocycleMap, system: &BaseSystem, x: &Point, n: i64) -> Result<ScaledProduct> {
    product_with(a, system, x, n, 1, DEFAULT_PRODUCT_BUDGET)
}

/// `A^n(x)`; raw products of `reortho_every` factors are folded into the QR
/// representation at a time.
pub fn product_with(
    a: &CocycleMap,
    system: &BaseSystem,
    x: &Point,
    n: i64,
    reortho_every: usize,
    budget: u64,
) -> Result<ScaledProduct> {
    if n.unsigned_abs() > budget {
        return Err(Error::BudgetExceeded {
            requested: n.unsigned_abs(),
            budget,
        });
    }
    system.check(x)?;
    let k = reortho_every.max(1);
    let d = a.dim;
    let mut out = ScaledProduct::identity(d);
    let mut pending: Option<Matrix> = None;
    let mut count = 0usize;
    let mut push = |m: Matrix, out: &mut ScaledProduct| {
        pending = Some(match pending.take() {
            None => m,
            Some(p) => m.matmul(&p),
        });
        count += 1;
        if count == k {
            out.left_mul(pending.as_ref().expect("pending product"));
            pending = None;
            count = 0;
        }
    };
    let mut cur = x.clone();
    if n >= 0 {
        for _ in 0..n {
            push(a.evaluate(system, &cur)?, &mut out);
            cur = system.step(&cur);
        }
    } else {
        for _ in 0..(-n) {
            cur = system.step_back(&cur);
            let m = a.evaluate(system, &cur)?;
            push(m.inverse().ok_or(Error::Singular)?, &mut out);
        }
    }
    if let Some(p) = pending {
        out.left_mul(&p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{AngleField, CocycleVariant, GroundTruthTransfer, TrigTerm};
    use crate::dynamics::TorusPoint;
    use crate::linalg::relative_error;
    use proptest::prelude::*;

    fn direct(a: &CocycleMap, sys: &BaseSystem, x: &Point, n: i64) -> Matrix {
        let mut m = Matrix::identity(a.dim);
        let mut cur = x.clone();
        if n >= 0 {
            for _ in 0..n {
                m = a.evaluate(sys, &cur).unwrap().matmul(&m);
                cur = sys.step(&cur);
            }
        } else {
            for _ in 0..-n {
                cur = sys.step_back(&cur);
                m = a.evaluate(sys, &cur).unwrap().inverse().unwrap().matmul(&m);
            }
        }
        m
    }

    /// A generic non-coboundary cocycle with mild growth.
    fn generic() -> CocycleMap {
        CocycleMap::new(
            1.0,
            CocycleVariant::TorusSmooth {
                constant: Matrix::from_rows(&[[1.1, 0.2], [-0.1, 0.9]]),
                terms: alloc::vec![TrigTerm {
                    frequency: alloc::vec![1, 2],
                    cos: Matrix::from_rows(&[[0.1, 0.0], [0.05, -0.1]]),
                    sin: Matrix::from_rows(&[[0.0, 0.1], [0.0, 0.05]]),
                }],
            },
        )
        .unwrap()
    }

    fn coboundary() -> CocycleMap {
        CocycleMap::coboundary(GroundTruthTransfer::TorusRotation {
            angle: AngleField::Sine { c: 0.3 },
            shear: 0.2,
        })
        .unwrap()
    }

    #[test]
    fn zero_steps_is_identity() {
        let sys = BaseSystem::cat_map();
        let p = product(&generic(), &sys, &Point::Torus(TorusPoint::origin(2)), 0).unwrap();
        assert_eq!(p, ScaledProduct::identity(2));
    }

    #[test]
    fn constant_diagonal_power() {
        let sys = BaseSystem::cat_map();
        let a = CocycleMap::constant(Matrix::diag(&[2.0, 0.5])).unwrap();
        let p = product(&a, &sys, &Point::Torus(TorusPoint::origin(2)), 10).unwrap();
        assert!((p.log_scale() - 10.0 * math::ln(2.0)).abs() < 1e-12);
        assert!(relative_error(&p.to_matrix(), &Matrix::diag(&[1024.0, 1.0 / 1024.0])) < 1e-14);
    }

    #[test]
    fn huge_products_stay_finite() {
        let sys = BaseSystem::cat_map();
        let a = CocycleMap::constant(Matrix::diag(&[2.0, 0.5])).unwrap();
        let p = product(&a, &sys, &Point::Torus(TorusPoint::origin(2)), 5000).unwrap();
        assert!((p.log_norm() - 5000.0 * math::ln(2.0)).abs() < 1e-9);
        assert!((p.log_defect() - 5000.0 * math::ln(2.0)).abs() < 1e-9);
    }

    #[test]
    fn budget_enforced() {
        let sys = BaseSystem::cat_map();
        let x = Point::Torus(TorusPoint::origin(2));
        let r = product_with(&generic(), &sys, &x, 11, 1, 10);
        assert!(matches!(r, Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn blocked_reorthonormalization_agrees() {
        let sys = BaseSystem::cat_map();
        let x = sys.sample_measure(2, 1).pop().unwrap();
        let p1 = product(&generic(), &sys, &x, 37).unwrap();
        let p5 = product_with(&generic(), &sys, &x, 37, 5, DEFAULT_PRODUCT_BUDGET).unwrap();
        assert!(relative_error(&p1.to_matrix(), &p5.to_matrix()) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn round_trip_against_direct(seed in any::<u64>(), n in -40i64..=40) {
            let sys = BaseSystem::cat_map();
            let x = sys.sample_measure(seed, 1).pop().unwrap();
            for a in [generic(), coboundary()] {
                let p = product(&a, &sys, &x, n).unwrap();
                prop_assert!(relative_error(&p.to_matrix(), &direct(&a, &sys, &x, n)) < 1e-9);
                let q = p.q();
                prop_assert!(relative_error(&q.tr_matmul(q), &Matrix::identity(2)) < 1e-10);
                prop_assert!(p.r()[(0, 0)] > 0.0 && p.r()[(1, 1)] > 0.0);
            }
        }

        #[test]
        fn cocycle_identity(seed in any::<u64>(), m in -50i64..=50, n in -50i64..=50) {
            let sys = BaseSystem::cat_map();
            let x = sys.sample_measure(seed, 1).pop().unwrap();
            for a in [generic(), coboundary()] {
                let lhs = product(&a, &sys, &x, m + n).unwrap();
                let rhs = product(&a, &sys, &sys.iterate(&x, n), m).unwrap().compose(&product(&a, &sys, &x, n).unwrap());
                let (l, r) = (lhs.to_matrix(), rhs.to_matrix());
                let scale = product(&a, &sys, &sys.iterate(&x, n), m).unwrap().norm() * product(&a, &sys, &x, n).unwrap().norm();
                prop_assert!(l.sub(&r).spectral_norm() <= 1e-9 * scale.max(l.spectral_norm()));
            }
        }

        #[test]
        fn inverse_identity(seed in any::<u64>(), n in 0i64..=50) {
            let sys = BaseSystem::cat_map();
            let x = sys.sample_measure(seed, 1).pop().unwrap();
            for a in [generic(), coboundary()] {
                let lhs = product(&a, &sys, &x, -n).unwrap().to_matrix();
                let rhs = product(&a, &sys, &sys.iterate(&x, -n), n).unwrap().inverse().unwrap().to_matrix();
                prop_assert!(relative_error(&lhs, &rhs) < 1e-9);
            }
        }
    }
}
