//! Base systems: a hyperbolic toral automorphism and the full shift.

pub mod lattice;
pub mod shift;
pub mod torus;

use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use lattice::RationalPoint;
pub use shift::{FullShift, ShiftOptions, SymbolSequence};
pub use torus::{TorusAutomorphism, TorusOptions, TorusPoint};

#[derive(Clone, Debug, PartialEq)]
pub enum Point {
    Torus(TorusPoint),
    Shift(SymbolSequence),
}

impl Point {
    pub fn as_torus(&self) -> Option<&TorusPoint> {
        match self {
            Point::Torus(p) => Some(p),
            Point::Shift(_) => None,
        }
    }

    pub fn as_shift(&self) -> Option<&SymbolSequence> {
        match self {
            Point::Shift(s) => Some(s),
            Point::Torus(_) => None,
        }
    }

    /// Coordinates for reports: torus coordinates, or the central word
    /// `x_{-2..2}` of a sequence.
    pub fn summary(&self) -> Vec<f64> {
        match self {
            Point::Torus(p) => p.coords(),
            Point::Shift(s) => (-2..=2).map(|n| s.at(n) as f64).collect(),
        }
    }
}

impl From<TorusPoint> for Point {
    fn from(p: TorusPoint) -> Self {
        Point::Torus(p)
    }
}

impl From<SymbolSequence> for Point {
    fn from(s: SymbolSequence) -> Self {
        Point::Shift(s)
    }
}

/// Offset along a local leaf: arclength on the torus, disagreement depth on
/// the shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LeafParam {
    Arclength(f64),
    Depth(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LeafDirection {
    Stable,
    Unstable,
}

impl LeafDirection {
    pub fn name(self) -> &'static str {
        match self {
            LeafDirection::Stable => "stable",
            LeafDirection::Unstable => "unstable",
        }
    }
}

#[derive(Clone, Debug)]
pub enum BaseSystem {
    Torus(TorusAutomorphism),
    Shift(FullShift),
}

/// A point of `Fix(f^n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOrbit {
    pub base_point: Point,
    pub period: u32,
    /// Exact coordinates on the torus.
    pub exact: Option<RationalPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowResult {
    pub periodic_point: Point,
    pub period: u32,
    pub h: f64,
    pub bound_constant: f64,
    pub rate: f64,
    /// `d(f^i y, f^i p)` for `i = 0..=n`.
    pub per_step_distances: Vec<f64>,
}

impl ShadowResult {
    pub fn bound(&self, i: usize) -> f64 {
        let m = i.min(self.period as usize - i) as f64;
        self.h * self.bound_constant * math::exp(-self.rate * m)
    }

    pub fn holds(&self) -> bool {
        self.per_step_distances
            .iter()
            .enumerate()
            .all(|(i, &d)| d <= self.bound(i))
    }

    /// Largest rate `eta` for which `d_i <= h C e^{-eta min(i, n-i)}` holds at
    /// every interior step. `None` when there is no interior step or all
    /// interior distances vanish.
    pub fn fitted_rate(&self) -> Option<f64> {
        let n = self.period as usize;
        let hc = self.h * self.bound_constant;
        let mut best: Option<f64> = None;
        for (i, &d) in self.per_step_distances.iter().enumerate() {
            let m = i.min(n - i);
            if m == 0 || d <= 0.0 {
                continue;
            }
            let r = math::ln(hc / d) / m as f64;
            best = Some(best.map_or(r, |b: f64| b.min(r)));
        }
        best
    }
}

impl BaseSystem {
    pub fn cat_map() -> Self {
        BaseSystem::Torus(TorusAutomorphism::cat_map())
    }

    pub fn full_shift(k: u8) -> Result<Self> {
        Ok(BaseSystem::Shift(FullShift::new(k, ShiftOptions::default())?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaseSystem::Torus(_) => "torus_automorphism",
            BaseSystem::Shift(_) => "full_shift",
        }
    }

    pub fn check(&self, x: &Point) -> Result<()> {
        match (self, x) {
            (BaseSystem::Torus(t), Point::Torus(p)) if p.dim() == t.dim() => Ok(()),
            (BaseSystem::Shift(s), Point::Shift(q)) => s.check(q),
            _ => Err(Error::PointMismatch),
        }
    }

    pub fn iterate(&self, x: &Point, n: i64) -> Point {
        match (self, x) {
            (BaseSystem::Torus(t), Point::Torus(p)) => Point::Torus(t.iterate(p, n)),
            (BaseSystem::Shift(_), Point::Shift(s)) => Point::Shift(s.shifted(n)),
            _ => panic!("point does not belong to this system"),
        }
    }

    #[inline]
    pub fn step(&self, x: &Point) -> Point {
        match (self, x) {
            (BaseSystem::Torus(t), Point::Torus(p)) => Point::Torus(t.step(p)),
            _ => self.iterate(x, 1),
        }
    }

    #[inline]
    pub fn step_back(&self, x: &Point) -> Point {
        match (self, x) {
            (BaseSystem::Torus(t), Point::Torus(p)) => Point::Torus(t.step_back(p)),
            _ => self.iterate(x, -1),
        }
    }

    /// `x, f(x), .., f^{len-1}(x)`.
    pub fn orbit(&self, x: &Point, len: usize) -> Vec<Point> {
        let mut out = Vec::with_capacity(len);
        let mut cur = x.clone();
        for _ in 0..len {
            let next = self.step(&cur);
            out.push(cur);
            cur = next;
        }
        out
    }

    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        match (a, b) {
            (Point::Torus(p), Point::Torus(q)) => p.distance(q),
            (Point::Shift(p), Point::Shift(q)) => p.distance(q),
            _ => panic!("points belong to different systems"),
        }
    }

    /// Every point of `Fix(f^n)`.
    pub fn enumerate_periodic(&self, n: u32) -> Result<Vec<PeriodicOrbit>> {
        match self {
            BaseSystem::Torus(t) => Ok(t
                .periodic_points(n)?
                .into_iter()
                .map(|p| PeriodicOrbit {
                    base_point: Point::Torus(TorusPoint::from_raw(&p.to_raw())),
                    period: n,
                    exact: Some(p),
                })
                .collect()),
            BaseSystem::Shift(s) => Ok(s
                .periodic_points(n)?
                .into_iter()
                .map(|p| PeriodicOrbit {
                    base_point: Point::Shift(p),
                    period: n,
                    exact: None,
                })
                .collect()),
        }
    }

    /// The orbit `p, f(p), .., f^{n-1}(p)`, computed exactly on the torus so
    /// that rounding never accumulates.
    pub fn periodic_orbit_points(&self, orbit: &PeriodicOrbit) -> Vec<Point> {
        match (self, &orbit.exact) {
            (BaseSystem::Torus(t), Some(exact)) => {
                let mut out = Vec::with_capacity(orbit.period as usize);
                let mut cur = exact.clone();
                for _ in 0..orbit.period {
                    out.push(Point::Torus(TorusPoint::from_raw(&cur.to_raw())));
                    cur = t.step_rational(&cur);
                }
                out
            }
            _ => self.orbit(&orbit.base_point, orbit.period as usize),
        }
    }

    /// Exact check `f^n(p) = p`.
    pub fn is_periodic(&self, orbit: &PeriodicOrbit) -> bool {
        match (self, &orbit.exact, &orbit.base_point) {
            (BaseSystem::Torus(t), Some(exact), _) => {
                let mut cur = exact.clone();
                for _ in 0..orbit.period {
                    cur = t.step_rational(&cur);
                }
                cur == *exact
            }
            (_, _, p) => self.iterate(p, orbit.period as i64) == *p,
        }
    }

    pub fn closing_constant(&self) -> f64 {
        match self {
            BaseSystem::Torus(t) => t.closing_constant(),
            BaseSystem::Shift(_) => 1.0,
        }
    }

    /// The closing-lemma (and hyperbolicity) rate `eta`.
    pub fn eta(&self) -> f64 {
        match self {
            BaseSystem::Torus(t) => t.eta(),
            BaseSystem::Shift(_) => core::f64::consts::LN_2,
        }
    }

    /// `beta(h) = h / (2C)`.
    pub fn beta(&self, h: f64) -> f64 {
        h / (2.0 * self.closing_constant())
    }

    /// `(C, tau)` with `d(f^n y, f^n z) <= C e^{-tau n} d(y, z)` on local
    /// stable leaves.
    pub fn leaf_contraction(&self) -> (f64, f64) {
        match self {
            BaseSystem::Torus(t) => t.leaf_contraction(),
            BaseSystem::Shift(_) => (1.0, core::f64::consts::LN_2),
        }
    }

    pub fn bracket_radius(&self) -> f64 {
        match self {
            BaseSystem::Torus(t) => t.options.bracket_radius,
            BaseSystem::Shift(s) => s.options.bracket_radius,
        }
    }

    /// Constant `K` with `chain length <= K d(x, y)` for the deterministic
    /// bracket chain.
    pub fn chain_constant(&self) -> f64 {
        match self {
            BaseSystem::Torus(t) => t
                .splitting()
                .map_or(f64::INFINITY, |s| s.kappa()),
            BaseSystem::Shift(_) => 4.0,
        }
    }

    pub fn max_period(&self) -> u32 {
        match self {
            BaseSystem::Torus(t) => t.options.max_period,
            BaseSystem::Shift(s) => s.options.max_period,
        }
    }

    /// Closing lemma for the segment `y, .., f^n(y)` at scale `h`.
    pub fn shadow(&self, y: &Point, n: u32, h: f64) -> Result<ShadowResult> {
        if n == 0 {
            return Err(Error::InvalidSystem("shadow period must be positive".into()));
        }
        let beta = self.beta(h);
        let (p, orbit_p, resid) = match (self, y) {
            (BaseSystem::Torus(t), Point::Torus(ty)) => {
                let (p, resid) = t.shadow_point(ty, n)?;
                let mut pts = Vec::with_capacity(n as usize + 1);
                let mut cur = p.clone();
                for _ in 0..=n {
                    pts.push(Point::Torus(TorusPoint::from_raw(&cur.to_raw())));
                    cur = t.step_rational(&cur);
                }
                (pts[0].clone(), pts, resid)
            }
            (BaseSystem::Shift(s), Point::Shift(sy)) => {
                let (p, resid) = s.shadow_point(sy, n)?;
                let p = Point::Shift(p);
                let pts = self.orbit(&p, n as usize + 1);
                (p, pts, resid)
            }
            _ => return Err(Error::PointMismatch),
        };
        if !(resid < beta) {
            return Err(Error::NotRecurrent {
                distance: resid,
                beta,
            });
        }
        let orbit_y = self.orbit(y, n as usize + 1);
        let per_step_distances = orbit_y
            .iter()
            .zip(&orbit_p)
            .map(|(a, b)| self.distance(a, b))
            .collect();
        Ok(ShadowResult {
            periodic_point: p,
            period: n,
            h,
            bound_constant: self.closing_constant(),
            rate: self.eta(),
            per_step_distances,
        })
    }

    fn leaf_point(&self, x: &Point, s: LeafParam, dir: LeafDirection) -> Result<Point> {
        match (self, x, s) {
            (BaseSystem::Torus(t), Point::Torus(p), LeafParam::Arclength(a)) => Ok(Point::Torus(match dir {
                LeafDirection::Stable => t.stable_point(p, a)?,
                LeafDirection::Unstable => t.unstable_point(p, a)?,
            })),
            (BaseSystem::Shift(sh), Point::Shift(q), LeafParam::Depth(m)) => Ok(Point::Shift(
                sh.leaf_point(q, m, dir == LeafDirection::Stable),
            )),
            (BaseSystem::Shift(_), Point::Shift(q), LeafParam::Arclength(a)) if a == 0.0 => {
                Ok(Point::Shift(q.clone()))
            }
            (_, _, LeafParam::Arclength(_) | LeafParam::Depth(_)) => {
                self.check(x)?;
                Err(Error::Unsupported("leaf parameter kind does not match the system"))
            }
        }
    }

    pub fn local_stable_point(&self, x: &Point, s: LeafParam) -> Result<Point> {
        self.leaf_point(x, s, LeafDirection::Stable)
    }

    pub fn local_unstable_point(&self, x: &Point, s: LeafParam) -> Result<Point> {
        self.leaf_point(x, s, LeafDirection::Unstable)
    }

    pub fn bracket(&self, z: &Point, w: &Point) -> Result<Point> {
        match (self, z, w) {
            (BaseSystem::Torus(t), Point::Torus(a), Point::Torus(b)) => Ok(Point::Torus(t.bracket(a, b)?)),
            (BaseSystem::Shift(s), Point::Shift(a), Point::Shift(b)) => Ok(Point::Shift(s.bracket(a, b)?)),
            _ => Err(Error::PointMismatch),
        }
    }

    /// `count` i.i.d. samples of the invariant measure (Lebesgue, resp.
    /// uniform Bernoulli).
    pub fn sample_measure(&self, seed: u64, count: usize) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample_with(&mut rng)).collect()
    }

    pub fn sample_with(&self, rng: &mut ChaCha8Rng) -> Point {
        match self {
            BaseSystem::Torus(t) => Point::Torus(t.sample(rng)),
            BaseSystem::Shift(s) => Point::Shift(s.sample(rng)),
        }
    }

    /// A measure-random point whose orbit of length `horizon` (both time
    /// directions) stays typical. On the shift the i.i.d. window is widened
    /// to cover the horizon.
    pub fn sample_anchor(&self, seed: u64, horizon: u64) -> Point {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            BaseSystem::Torus(t) => Point::Torus(t.sample(&mut rng)),
            BaseSystem::Shift(s) => {
                let w = s.options.sample_half_width as u64 + horizon;
                Point::Shift(s.sample_with_half_width(&mut rng, w))
            }
        }
    }
}

/// Two points on one local leaf, with an orbit rule that keeps them on it.
///
/// On the torus the second point is stored as an offset along the leaf, so
/// iterates never pick up the expanding component of rounding error.
#[derive(Clone, Debug)]
pub struct LeafPair {
    pub y: Point,
    pub z: Point,
    pub direction: LeafDirection,
    /// Leaf coordinate of `z - y` on the torus.
    offset: f64,
}

/// Largest admissible transverse component when testing leaf membership.
pub const LEAF_TOLERANCE: f64 = 1e-12;

impl LeafPair {
    pub fn new(system: &BaseSystem, y: &Point, z: &Point, direction: LeafDirection) -> Result<Self> {
        system.check(y)?;
        system.check(z)?;
        let offset = match (system, y, z) {
            (BaseSystem::Torus(t), Point::Torus(a), Point::Torus(b)) => {
                let (cu, cs) = t.leaf_coordinates(a, b)?;
                let (along, across) = match direction {
                    LeafDirection::Stable => (cs, cu),
                    LeafDirection::Unstable => (cu, cs),
                };
                if across.abs() > LEAF_TOLERANCE || along.abs() > t.options.leaf_radius {
                    return Err(Error::NotOnLeaf(direction.name()));
                }
                along
            }
            (BaseSystem::Shift(_), Point::Shift(a), Point::Shift(b)) => {
                let same = match direction {
                    LeafDirection::Stable => (0..=shift::METRIC_HORIZON).all(|n| a.at(n) == b.at(n)),
                    LeafDirection::Unstable => (1..=shift::METRIC_HORIZON).all(|n| a.at(-n) == b.at(-n)),
                };
                if !same {
                    return Err(Error::NotOnLeaf(direction.name()));
                }
                0.0
            }
            _ => return Err(Error::PointMismatch),
        };
        Ok(LeafPair {
            y: y.clone(),
            z: z.clone(),
            direction,
            offset,
        })
    }

    pub fn leaf_offset(&self) -> f64 {
        self.offset
    }

    /// The pair `(f^j y, f^j z)`, still tracked along the leaf. Not
    /// revalidated: on the torus an unstable pair leaves the local leaf for
    /// large positive `j`.
    pub fn advanced(&self, system: &BaseSystem, j: i64) -> LeafPair {
        let (y, z) = self.iterate(system, j);
        let offset = match system {
            BaseSystem::Torus(t) => {
                let sp = t.splitting().expect("leaf pairs exist only on T^2");
                let lambda = match self.direction {
                    LeafDirection::Stable => sp.lambda_s,
                    LeafDirection::Unstable => sp.lambda_u,
                };
                self.offset * math::powf(lambda.abs(), j as f64) * sign_pow(lambda, j)
            }
            BaseSystem::Shift(_) => 0.0,
        };
        LeafPair {
            y,
            z,
            direction: self.direction,
            offset,
        }
    }

    /// `(f^j y, f^j z)`.
    pub fn iterate(&self, system: &BaseSystem, j: i64) -> (Point, Point) {
        match (system, &self.y) {
            (BaseSystem::Torus(t), Point::Torus(y)) => {
                let sp = t.splitting().expect("leaf pairs exist only on T^2");
                let (lambda, v) = match self.direction {
                    LeafDirection::Stable => (sp.lambda_s, sp.v_s),
                    LeafDirection::Unstable => (sp.lambda_u, sp.v_u),
                };
                let yj = t.iterate(y, j);
                let a = self.offset * math::powf(lambda.abs(), j as f64) * sign_pow(lambda, j);
                let zj = yj.translate(&[a * v[0], a * v[1]]);
                (Point::Torus(yj), Point::Torus(zj))
            }
            _ => (system.iterate(&self.y, j), system.iterate(&self.z, j)),
        }
    }
}

fn sign_pow(lambda: f64, j: i64) -> f64 {
    if lambda < 0.0 && j.rem_euclid(2) == 1 {
        -1.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerate_counts_both_systems() {
        let cat = BaseSystem::cat_map();
        let pts = cat.enumerate_periodic(2).unwrap();
        assert_eq!(pts.len(), 5);
        assert!(pts.iter().all(|p| cat.is_periodic(p)));
        let sh = BaseSystem::full_shift(2).unwrap();
        for n in 1..=8u32 {
            let pts = sh.enumerate_periodic(n).unwrap();
            assert_eq!(pts.len(), 1 << n);
            assert!(pts.iter().all(|p| sh.is_periodic(p)));
        }
    }

    #[test]
    fn shadow_on_cat_map_near_period_two() {
        let cat = BaseSystem::cat_map();
        let y = Point::Torus(TorusPoint::from_coords(&[0.1003, 0.2001]));
        let h = 0.05;
        // (0.1003, 0.2001) is not near a period-2 return, so expect rejection
        // or a verified bound.
        match cat.shadow(&y, 2, h) {
            Ok(r) => assert!(r.holds()),
            Err(e) => assert!(matches!(e, Error::NotRecurrent { .. })),
        }
        let orbits = cat.enumerate_periodic(2).unwrap();
        let p = orbits[1].base_point.as_torus().unwrap();
        let t = match &cat {
            BaseSystem::Torus(t) => t,
            _ => unreachable!(),
        };
        let y = Point::Torus(t.unstable_point(&t.stable_point(p, 1e-3).unwrap(), 1e-4).unwrap());
        let r = cat.shadow(&y, 2, h).unwrap();
        assert!(r.holds());
        assert!(r.periodic_point.as_torus().unwrap().distance(p) < 1e-15);
    }

    #[test]
    fn leaf_pair_iterates_stay_on_leaf() {
        let cat = BaseSystem::cat_map();
        let y = cat.sample_measure(3, 1).pop().unwrap();
        let z = cat.local_stable_point(&y, LeafParam::Arclength(0.01)).unwrap();
        let pair = LeafPair::new(&cat, &y, &z, LeafDirection::Stable).unwrap();
        let (c, tau) = cat.leaf_contraction();
        for n in 0..=20 {
            let (yn, zn) = pair.iterate(&cat, n);
            let bound = c * math::exp(-tau * n as f64) * cat.distance(&y, &z);
            assert!(cat.distance(&yn, &zn) <= bound * (1.0 + 1e-9) + 1e-18);
            LeafPair::new(&cat, &yn, &zn, LeafDirection::Stable).unwrap();
        }
        let w = cat.local_unstable_point(&y, LeafParam::Arclength(0.01)).unwrap();
        assert!(LeafPair::new(&cat, &y, &w, LeafDirection::Stable).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_uniform() {
        let cat = BaseSystem::cat_map();
        assert_eq!(cat.sample_measure(9, 1), cat.sample_measure(9, 1));
        let pts = cat.sample_measure(11, 100_000);
        for i in 0..2 {
            let mean: f64 = pts.iter().map(|p| p.as_torus().unwrap().coord(i)).sum::<f64>() / 1e5;
            assert!((mean - 0.5).abs() < 0.01);
        }
    }
}
