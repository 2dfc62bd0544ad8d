//! ε-Lyapunov inner products, the comparison function `C_ε`, and the
//! regular set `{C_ε ≤ N}`.
//!
//! The inner product at `x` is assembled block by block in an Oseledets frame
//! `F_x = [E^1 | .. | E^l]`:
//!
//! ```text
//! <u, v>_x = d · Σ_i Σ_{|n| ≤ N_t} e^{-2 λ_i n - 2 ε |n|} <A^n_i c_i, A^n_i c'_i>
//! ```
//!
//! with `c = F_x^{-1} u`. The neglected tail is bounded by extrapolating the
//! decay of the retained terms at rate `ε`.

use alloc::vec::Vec;

use crate::cocycle::{lyapunov_spectrum, oseledets_frames_along, CocycleMap, FrameSeries, LyapunovSpectrum};
use crate::dynamics::{BaseSystem, Point};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

pub const DEFAULT_TRUNCATION: usize = 200;
pub const DEFAULT_BLOCK_BOUND: f64 = 25.0;

/// Tail bounds must stay below this fraction of the smallest Gram eigenvalue.
const TAIL_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovNormOptions {
    pub epsilon: f64,
    pub truncation: usize,
    /// Sweep length used to settle the Oseledets flags.
    pub warmup: usize,
    pub spectrum_iters: usize,
}

impl LyapunovNormOptions {
    pub fn new(epsilon: f64) -> Self {
        LyapunovNormOptions {
            epsilon,
            truncation: DEFAULT_TRUNCATION,
            warmup: 200,
            spectrum_iters: 2000,
        }
    }

    /// `0.05 · α · η`.
    pub fn default_epsilon(alpha: f64, eta: f64) -> f64 {
        0.05 * alpha * eta
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if self.truncation < 2 {
            return Err(Error::InvalidArgument("truncation must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LyapunovNormContext {
    pub point: Point,
    pub epsilon: f64,
    pub truncation: usize,
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// Oseledets frame at the point.
    pub frame: Matrix,
    /// Per-block Gram matrices in orthonormal block coordinates, without the
    /// factor `d`.
    pub block_grams: Vec<Matrix>,
    /// Full Gram of `<·,·>_x` in standard coordinates.
    pub gram: Matrix,
    /// Spectral bound on the neglected tail, in block coordinates including
    /// the factor `d`.
    pub tail_bound: f64,
    pub certified: bool,
}

impl LyapunovNormContext {
    pub fn dim(&self) -> usize {
        self.gram.rows()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        let gu = self.gram.mul_vec(u);
        let q: f64 = u.iter().zip(gu.iter()).map(|(a, b)| a * b).sum();
        math::sqrt(q.max(0.0))
    }

    pub fn c_epsilon(&self) -> f64 {
        let eig = self.gram.symmetric_eigen();
        math::sqrt(*eig.values.last().expect("nonempty gram"))
    }

    pub fn smallest_gram_eigenvalue(&self) -> f64 {
        self.gram.symmetric_eigen().values[0]
    }

    /// Column range of block `i` in [`Self::frame`].
    pub fn block_range(&self, i: usize) -> (usize, usize) {
        let start: usize = self.multiplicities[..i].iter().sum();
        (start, start + self.multiplicities[i])
    }

    fn inv_sqrt_gram(&self) -> Matrix {
        self.gram.symmetric_function(|v| 1.0 / math::sqrt(v))
    }
}

pub fn lyap_norm_vector(ctx: &LyapunovNormContext, u: &[f64]) -> f64 {
    ctx.norm(u)
}

pub fn c_epsilon(ctx: &LyapunovNormContext) -> f64 {
    ctx.c_epsilon()
}

/// `sup ||B u||_y / ||u||_x`.
pub fn lyap_norm_operator(ctx_x: &LyapunovNormContext, ctx_y: &LyapunovNormContext, b: &Matrix) -> f64 {
    let gx = ctx_x.inv_sqrt_gram();
    let m = gx.matmul(&b.tr_matmul(&ctx_y.gram.matmul(b))).matmul(&gx).symmetrized();
    math::sqrt(m.symmetric_eigen().values.last().expect("nonempty").max(0.0))
}

/// Context at `x`; fails with [`Error::TailNotCertified`] if the truncation
/// is too short.
pub fn lyap_gram(a: &CocycleMap, system: &BaseSystem, x: &Point, opts: &LyapunovNormOptions) -> Result<LyapunovNormContext> {
    let orbit = lyap_contexts_along(a, system, x, 0, 0, opts)?;
    let ctx = orbit.contexts.into_iter().next().expect("one context");
    if !ctx.certified {
        return Err(Error::TailNotCertified {
            truncation: ctx.truncation,
        });
    }
    Ok(ctx)
}

/// Contexts at `f^t x`, `lo <= t <= hi`, sharing one spectrum and one pair
/// of flag sweeps.
#[derive(Clone, Debug)]
pub struct OrbitNorms {
    pub lo: i64,
    pub spectrum: LyapunovSpectrum,
    pub contexts: Vec<LyapunovNormContext>,
}

impl OrbitNorms {
    pub fn at(&self, t: i64) -> &LyapunovNormContext {
        &self.contexts[(t - self.lo) as usize]
    }
}

pub fn lyap_contexts_along(
    a: &CocycleMap,
    system: &BaseSystem,
    x: &Point,
    lo: i64,
    hi: i64,
    opts: &LyapunovNormOptions,
) -> Result<OrbitNorms> {
    let mut contexts = Vec::with_capacity((hi - lo + 1).max(0) as usize);
    let spectrum = for_each_context(a, system, x, lo, hi, opts, |ctx| contexts.push(ctx))?;
    Ok(OrbitNorms {
        lo,
        spectrum,
        contexts,
    })
}

/// `C_ε(f^t x)` for `lo <= t <= hi`, `None` where the tail is not certified.
pub fn c_epsilon_along(
    a: &CocycleMap,
    system: &BaseSystem,
    x: &Point,
    lo: i64,
    hi: i64,
    opts: &LyapunovNormOptions,
) -> Result<(LyapunovSpectrum, Vec<Option<f64>>)> {
    let mut out = Vec::with_capacity((hi - lo + 1).max(0) as usize);
    let spectrum = for_each_context(a, system, x, lo, hi, opts, |ctx| {
        out.push(ctx.certified.then(|| ctx.c_epsilon()))
    })?;
    Ok((spectrum, out))
}

fn for_each_context(
    a: &CocycleMap,
    system: &BaseSystem,
    x: &Point,
    lo: i64,
    hi: i64,
    opts: &LyapunovNormOptions,
    mut sink: impl FnMut(LyapunovNormContext),
) -> Result<LyapunovSpectrum> {
    opts.validate()?;
    if hi < lo {
        return Err(Error::InvalidArgument("empty orbit range".into()));
    }
    let spectrum = lyapunov_spectrum(a, system, x, opts.spectrum_iters)?;
    let nt = opts.truncation as i64;
    let series = oseledets_frames_along(
        a,
        system,
        x,
        lo - nt,
        hi + nt,
        &spectrum.multiplicities,
        opts.warmup,
    )?;
    let blocks = BlockTransitions::new(&series, &spectrum.exponents)?;
    let d = a.dim as f64;
    for t in lo..=hi {
        let c = series.index(t);
        let mut block_grams = Vec::with_capacity(spectrum.exponents.len());
        let mut tail: f64 = 0.0;
        for i in 0..spectrum.exponents.len() {
            let (g, tl) = blocks.gram(i, c, opts.truncation, opts.epsilon);
            block_grams.push(g);
            tail = tail.max(tl);
        }
        let tail_bound = d * tail;
        let smallest = block_grams
            .iter()
            .map(|g| g.symmetric_eigen().values[0])
            .fold(f64::INFINITY, f64::min)
            * d;
        let frame = series.frames[c].clone();
        let finv = frame.inverse().ok_or(Error::Singular)?;
        let mut diag = Matrix::zeros(a.dim, a.dim);
        let mut off = 0;
        for g in &block_grams {
            for r in 0..g.rows() {
                for s in 0..g.cols() {
                    diag[(off + r, off + s)] = d * g[(r, s)];
                }
            }
            off += g.rows();
        }
        let gram = finv.tr_matmul(&diag.matmul(&finv)).symmetrized();
        sink(LyapunovNormContext {
            point: series.points[c].clone(),
            epsilon: opts.epsilon,
            truncation: opts.truncation,
            exponents: spectrum.exponents.clone(),
            multiplicities: spectrum.multiplicities.clone(),
            frame,
            block_grams,
            gram,
            tail_bound,
            certified: tail_bound.is_finite() && tail_bound < TAIL_FRACTION * smallest,
        });
    }
    Ok(spectrum)
}

/// Normalized diagonal blocks `e^{-λ_i} (F_{t+1}^{-1} A F_t)_{ii}` and their
/// inverses along a frame series.
struct BlockTransitions {
    forward: Vec<Vec<Matrix>>,
    backward: Vec<Vec<Matrix>>,
}

impl BlockTransitions {
    fn new(series: &FrameSeries, exponents: &[f64]) -> Result<Self> {
        let ranges = series.block_ranges();
        let steps = series.len() - 1;
        let mut forward = alloc::vec![Vec::with_capacity(steps); ranges.len()];
        let mut backward = alloc::vec![Vec::with_capacity(steps); ranges.len()];
        for t in 0..steps {
            let c = series.transition(t)?;
            for (i, &(s, e)) in ranges.iter().enumerate() {
                let blk = c.row_block(s, e).columns(s, e).scaled(math::exp(-exponents[i]));
                backward[i].push(blk.inverse().ok_or(Error::Singular)?);
                forward[i].push(blk);
            }
        }
        Ok(BlockTransitions { forward, backward })
    }

    /// Gram of block `i` centred at series index `c`, and its tail bound.
    fn gram(&self, i: usize, c: usize, n: usize, eps: f64) -> (Matrix, f64) {
        let m = self.forward[i][0].rows();
        let mut gram = Matrix::identity(m);
        let mut tail = 0.0;
        for dir in [1i64, -1] {
            let mut pi = Matrix::identity(m);
            let mut c_hat: f64 = 0.0;
            for k in 1..=n {
                pi = if dir > 0 {
                    self.forward[i][c + k - 1].matmul(&pi)
                } else {
                    self.backward[i][c - k].matmul(&pi)
                };
                let w = math::exp(-2.0 * eps * k as f64);
                let term = pi.tr_matmul(&pi);
                gram = gram.add(&term.scaled(w));
                if 2 * k >= n {
                    let norm = pi.spectral_norm();
                    c_hat = c_hat.max(norm * norm * w * math::exp(eps * k as f64));
                }
            }
            tail += c_hat * math::exp(-eps * (n + 1) as f64) / (1.0 - math::exp(-eps));
        }
        (gram.symmetrized(), tail)
    }
}

/// `C_ε(x) <= N` together with the value of `C_ε(x)`; an uncertified
/// truncation counts as outside.
pub fn regular_block_membership(
    a: &CocycleMap,
    system: &BaseSystem,
    x: &Point,
    opts: &LyapunovNormOptions,
    bound: f64,
) -> Result<(bool, f64)> {
    let ctx = lyap_contexts_along(a, system, x, 0, 0, opts)?
        .contexts
        .pop()
        .expect("one context");
    let c = ctx.c_epsilon();
    Ok((ctx.certified && c <= bound, c))
}

#[derive(Clone, Debug)]
pub struct RegularSetCriteria {
    pub epsilon: f64,
    pub bound: f64,
    /// Sampled points with `C_ε`, or `None` where the tail was not certified.
    pub cache: Vec<(Point, Option<f64>)>,
}

impl RegularSetCriteria {
    pub fn new(epsilon: f64, bound: f64) -> Self {
        RegularSetCriteria {
            epsilon,
            bound,
            cache: Vec::new(),
        }
    }

    pub fn record(&mut self, ctx: &LyapunovNormContext) -> bool {
        let c = ctx.certified.then(|| ctx.c_epsilon());
        self.cache.push((ctx.point.clone(), c));
        self.admits(c)
    }

    pub fn admits(&self, c: Option<f64>) -> bool {
        matches!(c, Some(v) if v <= self.bound)
    }

    pub fn with_bound(&self, bound: f64) -> Self {
        RegularSetCriteria {
            bound,
            ..self.clone()
        }
    }

    /// Fraction of cached points in the regular set.
    pub fn fraction(&self) -> f64 {
        if self.cache.is_empty() {
            return 0.0;
        }
        let inside = self.cache.iter().filter(|(_, c)| self.admits(*c)).count();
        inside as f64 / self.cache.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{AngleField, GroundTruthTransfer};
    use crate::dynamics::TorusPoint;
    use crate::linalg::relative_error;
    use proptest::prelude::*;

    fn coth(x: f64) -> f64 {
        1.0 / math::tanh(x)
    }

    fn origin() -> Point {
        Point::Torus(TorusPoint::origin(2))
    }

    fn rotation() -> CocycleMap {
        CocycleMap::constant(Matrix::rotation(0.7)).unwrap()
    }

    #[test]
    fn orthogonal_closed_form() {
        let sys = BaseSystem::cat_map();
        let ctx = lyap_gram(&rotation(), &sys, &origin(), &LyapunovNormOptions::new(0.1)).unwrap();
        let expect = math::sqrt(2.0 * coth(0.1));
        assert!((ctx.norm(&[1.0, 0.0]) / expect - 1.0).abs() < 1e-9);
        assert!((ctx.c_epsilon() / expect - 1.0).abs() < 1e-9);
        assert_eq!(ctx.norm(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn diagonal_closed_form() {
        let sys = BaseSystem::cat_map();
        let a = CocycleMap::constant(Matrix::diag(&[2.0, 0.5])).unwrap();
        let ctx = lyap_gram(&a, &sys, &origin(), &LyapunovNormOptions::new(0.1)).unwrap();
        assert_eq!(ctx.multiplicities, [1, 1]);
        let n = ctx.norm(&[1.0, 0.0]);
        assert!((n - math::sqrt(2.0 * coth(0.1))).abs() < 1e-6, "{n}");
        assert!((n - 4.4796).abs() < 1e-4);
        // one step of the diagonal cocycle
        let op = lyap_norm_operator(&ctx, &ctx, &Matrix::diag(&[2.0, 0.5]));
        assert!(op <= math::exp(math::ln(2.0) + 0.1) * (1.0 + 1e-9));
    }

    #[test]
    fn large_epsilon_keeps_only_the_centre() {
        let sys = BaseSystem::cat_map();
        for a in [rotation(), CocycleMap::identity(2)] {
            let ctx = lyap_gram(&a, &sys, &origin(), &LyapunovNormOptions::new(5.0)).unwrap();
            assert!((ctx.c_epsilon() - math::sqrt(2.0)).abs() < 1e-3);
            assert!((ctx.norm(&[0.6, 0.8]) - math::sqrt(2.0)).abs() < 1e-3);
        }
    }

    #[test]
    fn operator_norm_units() {
        let sys = BaseSystem::cat_map();
        let ctx = lyap_gram(&rotation(), &sys, &origin(), &LyapunovNormOptions::new(0.1)).unwrap();
        let i = Matrix::identity(2);
        assert!((lyap_norm_operator(&ctx, &ctx, &i) - 1.0).abs() < 1e-12);
        let two = lyap_norm_operator(&ctx, &ctx, &i.scaled(2.0));
        assert!((two - 2.0).abs() < 1e-12);
    }

    #[test]
    fn membership_cutoffs() {
        let sys = BaseSystem::cat_map();
        let opts = LyapunovNormOptions::new(0.1);
        let (inside, c) = regular_block_membership(&rotation(), &sys, &origin(), &opts, 10.0).unwrap();
        assert!(inside);
        assert!((c - 4.48).abs() < 0.01);
        assert!(!regular_block_membership(&rotation(), &sys, &origin(), &opts, 2.0).unwrap().0);
        assert!(regular_block_membership(&CocycleMap::identity(2), &sys, &origin(), &opts, 1e9).unwrap().0);
    }

    #[test]
    fn short_truncation_is_not_certified() {
        let sys = BaseSystem::cat_map();
        let opts = LyapunovNormOptions {
            truncation: 4,
            ..LyapunovNormOptions::new(0.01)
        };
        assert!(matches!(
            lyap_gram(&rotation(), &sys, &origin(), &opts),
            Err(Error::TailNotCertified { truncation: 4 })
        ));
    }

    #[test]
    fn membership_is_monotone_in_bound() {
        let sys = BaseSystem::cat_map();
        let opts = LyapunovNormOptions::new(0.05);
        let a = cob();
        let x = sys.sample_measure(5, 1).pop().unwrap();
        let orbit = lyap_contexts_along(&a, &sys, &x, 0, 20, &opts).unwrap();
        let mut crit = RegularSetCriteria::new(0.05, 5.0);
        for ctx in &orbit.contexts {
            crit.record(ctx);
        }
        let mut prev = 0.0;
        for b in [1.0, 2.0, 5.0, 10.0, 25.0, 100.0] {
            let f = crit.with_bound(b).fraction();
            assert!(f >= prev);
            prev = f;
        }
    }

    fn cob() -> CocycleMap {
        CocycleMap::coboundary(GroundTruthTransfer::TorusRotation {
            angle: AngleField::Sine { c: 0.3 },
            shear: 0.4,
        })
        .unwrap()
    }

    fn cat_derivative() -> CocycleMap {
        match BaseSystem::cat_map() {
            BaseSystem::Torus(t) => CocycleMap::constant(t.real_matrix()).unwrap(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn growth_along_orbit() {
        let sys = BaseSystem::cat_map();
        let x = sys.sample_measure(11, 1).pop().unwrap();
        let eps = 0.05;
        let opts = LyapunovNormOptions::new(eps);
        for a in [cob(), cat_derivative()] {
            let orbit = lyap_contexts_along(&a, &sys, &x, 0, 20, &opts).unwrap();
            let c0 = orbit.at(0).c_epsilon();
            for n in 1..=20 {
                let cn = orbit.at(n).c_epsilon();
                let r = math::exp(eps * n as f64);
                assert!(cn <= c0 * r * (1.0 + 1e-6) && cn >= c0 / r * (1.0 - 1e-6), "n={n}");
            }
        }
    }

    #[test]
    fn cocycle_bounded_on_regular_blocks() {
        // zero exponents: ||A^n(z)|| <= C_ε(z) e^{ε|n|}
        let sys = BaseSystem::cat_map();
        let eps = 0.05;
        let a = cob();
        let x = sys.sample_measure(21, 1).pop().unwrap();
        let orbit = lyap_contexts_along(&a, &sys, &x, 0, 30, &LyapunovNormOptions::new(eps)).unwrap();
        for t in 0..=30 {
            let ctx = orbit.at(t);
            let z = &ctx.point;
            for n in -15i64..=15 {
                let p = crate::cocycle::product::product(&a, &sys, z, n).unwrap().norm();
                let slack = 1.0 + ctx.tail_bound;
                assert!(p <= ctx.c_epsilon() * math::exp(eps * n.abs() as f64) * slack);
            }
        }
    }

    #[test]
    fn frame_matches_reconstruction() {
        let sys = BaseSystem::cat_map();
        let ctx = lyap_gram(&cat_derivative(), &sys, &origin(), &LyapunovNormOptions::new(0.05)).unwrap();
        // G = F^{-T} D F^{-1}  <=>  F^T G F = D
        let d = ctx.frame.tr_matmul(&ctx.gram.matmul(&ctx.frame));
        let expect = Matrix::diag(&[2.0 * ctx.block_grams[0][(0, 0)], 2.0 * ctx.block_grams[1][(0, 0)]]);
        assert!(relative_error(&d, &expect) < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn sandwich_and_growth(seed in any::<u64>(), u0 in -1.0f64..1.0, u1 in -1.0f64..1.0) {
            let sys = BaseSystem::cat_map();
            let x = sys.sample_measure(seed, 1).pop().unwrap();
            let eps = 0.05;
            for a in [cob(), cat_derivative()] {
                let orbit = lyap_contexts_along(&a, &sys, &x, -15, 15, &LyapunovNormOptions::new(eps)).unwrap();
                let ctx = orbit.at(0);
                prop_assert!(ctx.certified);
                let u = [u0, u1];
                let e = math::hypot(u0, u1);
                let nx = ctx.norm(&u);
                prop_assert!(e <= nx * (1.0 + 1e-12));
                prop_assert!(nx <= ctx.c_epsilon() * e * (1.0 + 1e-12));
                let cx = ctx.c_epsilon();
                for n in -15i64..=15 {
                    let an = crate::cocycle::product::product(&a, &sys, &x, n).unwrap().to_matrix();
                    let v = an.mul_vec(&u);
                    let top = orbit.spectrum.top();
                    prop_assert!(math::hypot(v[0], v[1]) <= cx * math::exp((top + eps) * n.abs() as f64) * e * (1.0 + 1e-9));
                    let cy = orbit.at(n);
                    let op = lyap_norm_operator(ctx, cy, &an);
                    let plain = an.spectral_norm();
                    prop_assert!(op >= plain / cx * (1.0 - 1e-9));
                    prop_assert!(op <= plain * cy.c_epsilon() * (1.0 + 1e-9));
                    for i in 0..ctx.exponents.len() {
                        let (s, _) = ctx.block_range(i);
                        let w = ctx.frame.column(s);
                        let aw = an.mul_vec(&w);
                        let lam = ctx.exponents[i];
                        let k = n.abs() as f64;
                        let slack = 1.0 + 10.0 * ctx.tail_bound.max(cy.tail_bound) + 1e-9;
                        let lhs = cy.norm(&aw);
                        let base = ctx.norm(&w);
                        let sgn = if n >= 0 { 1.0 } else { -1.0 };
                        let lo_rate = sgn * lam * k - eps * k;
                        let hi_rate = sgn * lam * k + eps * k;
                        prop_assert!(lhs <= math::exp(hi_rate) * base * slack, "upper n={n} block={i}");
                        prop_assert!(lhs >= math::exp(lo_rate) * base / slack, "lower n={n} block={i}");
                    }
                }
            }
        }
    }
}
