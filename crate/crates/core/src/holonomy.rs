//! Domination, stable and unstable holonomies, bracket chains, and Hölder
//! estimates for transfer maps.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cocycle::{product, CocycleMap, ScaledProduct, DEFAULT_PRODUCT_BUDGET};
use crate::dynamics::{BaseSystem, LeafDirection, LeafPair, Point};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::livsic::{GridIndex, TransferTable};
use crate::math;
use crate::regression::{decade_envelopes, decade_of, fit_line, median, DecadeEnvelope, LineFit};

#[derive(Clone, Debug, PartialEq)]
pub struct DominationOptions {
    /// Block length `N`.
    pub block: usize,
    pub theta: f64,
    pub k_max: usize,
}

impl Default for DominationOptions {
    fn default() -> Self {
        DominationOptions {
            block: 10,
            theta: 0.1,
            k_max: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DominationReport {
    pub point: Point,
    pub block: usize,
    pub theta: f64,
    pub k_max: usize,
    /// `ln Π_{j<k} ||A^N(f^{jN}x)|| ||A^N(f^{jN}x)^{-1}||` for `k = 1..=k_max`.
    pub forward: Vec<f64>,
    /// The same for the inverse cocycle over `f^{-1}`.
    pub backward: Vec<f64>,
    /// `(k, dual)` of the first violated bound.
    pub first_failure: Option<(usize, bool)>,
    pub pass: bool,
}

pub fn domination_check(a: &CocycleMap, system: &BaseSystem, x: &Point, opts: &DominationOptions) -> Result<DominationReport> {
    let total = (opts.block as u64).saturating_mul(opts.k_max as u64);
    if total > DEFAULT_PRODUCT_BUDGET {
        return Err(Error::BudgetExceeded {
            requested: total,
            budget: DEFAULT_PRODUCT_BUDGET,
        });
    }
    let n = opts.block as i64;
    let sweep = |sign: i64| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(opts.k_max);
        let mut cur = x.clone();
        let mut acc = 0.0;
        for _ in 0..opts.k_max {
            let p = product(a, system, &cur, sign * n)?;
            acc += p.log_norm() + p.log_inverse_norm();
            out.push(acc);
            cur = system.iterate(&cur, sign * n);
        }
        Ok(out)
    };
    let forward = sweep(1)?;
    let backward = sweep(-1)?;
    let limit = |k: usize| opts.theta * (k * opts.block) as f64 + 1e-12;
    let mut first_failure = None;
    for k in 1..=opts.k_max {
        if forward[k - 1] > limit(k) {
            first_failure = Some((k, false));
            break;
        }
        if backward[k - 1] > limit(k) {
            first_failure = Some((k, true));
            break;
        }
    }
    Ok(DominationReport {
        point: x.clone(),
        block: opts.block,
        theta: opts.theta,
        k_max: opts.k_max,
        forward,
        backward,
        first_failure,
        pass: first_failure.is_none(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolonomyOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub domination: DominationOptions,
}

impl Default for HolonomyOptions {
    fn default() -> Self {
        HolonomyOptions {
            tol: 1e-10,
            max_iter: 500,
            domination: DominationOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolonomyMatrix {
    pub y: Point,
    pub z: Point,
    pub direction: LeafDirection,
    pub distance: f64,
    pub matrix: Matrix,
    /// First `n` with `||H_{n+1} - H_n|| < tol`.
    pub n_converged: usize,
    /// `||H_{n+1} - H_n||` for `n = 0..=n_converged`.
    pub residuals: Vec<f64>,
    /// Geometric bound on the remaining change with ratio `e^{-(τ - 2θ)}`;
    /// infinite without a domination margin.
    pub tail_bound: f64,
    pub dominated: bool,
}

pub fn stable_holonomy(a: &CocycleMap, system: &BaseSystem, pair: &LeafPair, opts: &HolonomyOptions) -> Result<HolonomyMatrix> {
    if pair.direction != LeafDirection::Stable {
        return Err(Error::NotOnLeaf("stable"));
    }
    holonomy(a, system, pair, opts)
}

pub fn unstable_holonomy(a: &CocycleMap, system: &BaseSystem, pair: &LeafPair, opts: &HolonomyOptions) -> Result<HolonomyMatrix> {
    if pair.direction != LeafDirection::Unstable {
        return Err(Error::NotOnLeaf("unstable"));
    }
    holonomy(a, system, pair, opts)
}

/// `lim A^n(z)^{-1} A^n(y)` along stable pairs, `lim A^{-n}(z)^{-1} A^{-n}(y)`
/// along unstable ones.
pub fn holonomy(a: &CocycleMap, system: &BaseSystem, pair: &LeafPair, opts: &HolonomyOptions) -> Result<HolonomyMatrix> {
    let d = a.dim;
    let distance = system.distance(&pair.y, &pair.z);
    let dominated = domination_check(a, system, &pair.y, &opts.domination)?.pass;
    let (_, tau) = system.leaf_contraction();
    let margin = tau - 2.0 * opts.domination.theta;
    let ratio = if margin > 0.0 { math::exp(-margin) } else { f64::INFINITY };
    let finish = |matrix: Matrix, n_converged: usize, residuals: Vec<f64>| {
        let last = residuals.last().copied().unwrap_or(0.0);
        let tail_bound = if ratio < 1.0 { last * ratio / (1.0 - ratio) } else { f64::INFINITY };
        HolonomyMatrix {
            y: pair.y.clone(),
            z: pair.z.clone(),
            direction: pair.direction,
            distance,
            matrix,
            n_converged,
            residuals,
            tail_bound,
            dominated,
        }
    };
    if distance == 0.0 {
        return Ok(finish(Matrix::identity(d), 0, Vec::new()));
    }
    let stable = pair.direction == LeafDirection::Stable;
    let mut py = ScaledProduct::identity(d);
    let mut pz = ScaledProduct::identity(d);
    let mut prev = Matrix::identity(d);
    let mut residuals = Vec::new();
    for n in 0..opts.max_iter {
        if stable {
            let (yn, zn) = pair.iterate(system, n as i64);
            py.left_mul(&a.evaluate(system, &yn)?);
            pz.left_mul(&a.evaluate(system, &zn)?);
        } else {
            let (yn, zn) = pair.iterate(system, -(n as i64) - 1);
            py.left_mul(&a.evaluate(system, &yn)?.inverse().ok_or(Error::Singular)?);
            pz.left_mul(&a.evaluate(system, &zn)?.inverse().ok_or(Error::Singular)?);
        }
        let h = pz.inverse_times(&py).ok_or(Error::Singular)?;
        let change = h.sub(&prev).spectral_norm();
        residuals.push(change);
        if change < opts.tol {
            return Ok(finish(h, n, residuals));
        }
        prev = h;
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        last_change: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// A four-leg path `x -u- x1 -s- x3 -u- x2 -s- y` and the transport of
/// `P(x)` along it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainReconstruction {
    pub x: Point,
    pub y: Point,
    pub x1: Point,
    pub x2: Point,
    pub x3: Point,
    pub distance: f64,
    /// `[H^u_{x x1}, H^s_{x1 x3}, H^u_{x3 x2}, H^s_{x2 y}]`.
    pub holonomies: Vec<HolonomyMatrix>,
    pub leg_lengths: [f64; 4],
    pub chain_length: f64,
    pub chain_constant: f64,
    pub chain_ok: bool,
    pub p_hat: Matrix,
    /// `||P_hat(y) - P(y)||`.
    pub error: f64,
}

/// Leaf points of the chain from `x` to `y`: `x1` on the unstable leaf of
/// `x`, `x2` on the stable leaf of `y`, `x3 = [x1, x2]`.
pub fn chain_points(system: &BaseSystem, x: &Point, y: &Point) -> Result<(Point, Point, Point)> {
    match (system, x, y) {
        (BaseSystem::Torus(t), Point::Torus(px), Point::Torus(py)) => {
            let (cu, cs) = t.leaf_coordinates(px, py)?;
            let x1 = Point::Torus(t.unstable_point(px, 0.5 * cu)?);
            let x2 = Point::Torus(t.stable_point(py, -0.5 * cs)?);
            let x3 = system.bracket(&x1, &x2)?;
            Ok((x1, x2, x3))
        }
        (BaseSystem::Shift(_), Point::Shift(_), Point::Shift(_)) => {
            // Past of x, future of y: the unstable and stable legs meet at once.
            let x1 = system.bracket(y, x)?;
            Ok((x1.clone(), x1.clone(), x1))
        }
        _ => Err(Error::PointMismatch),
    }
}

/// Transport `P(x)` to `y` along the bracket chain; both are table entries.
pub fn holonomy_chain(
    a: &CocycleMap,
    system: &BaseSystem,
    table: &TransferTable,
    ix: usize,
    iy: usize,
    opts: &HolonomyOptions,
) -> Result<ChainReconstruction> {
    let x = &table.entries[ix].point;
    let y = &table.entries[iy].point;
    let distance = system.distance(x, y);
    let radius = 0.5 * system.bracket_radius();
    if !(distance < radius) {
        return Err(Error::PointsTooFar { distance, radius });
    }
    let (x1, x2, x3) = chain_points(system, x, y)?;
    let legs = [
        (x, &x1, LeafDirection::Unstable),
        (&x1, &x3, LeafDirection::Stable),
        (&x3, &x2, LeafDirection::Unstable),
        (&x2, y, LeafDirection::Stable),
    ];
    let mut holonomies = Vec::with_capacity(4);
    let mut leg_lengths = [0.0; 4];
    let mut p_hat = table.entries[ix].p.to_matrix();
    for (k, (from, to, dir)) in legs.into_iter().enumerate() {
        let pair = LeafPair::new(system, from, to, dir)?;
        let h = holonomy(a, system, &pair, opts)?;
        leg_lengths[k] = h.distance;
        p_hat = h.matrix.matmul(&p_hat);
        holonomies.push(h);
    }
    let chain_length: f64 = leg_lengths.iter().sum();
    let chain_constant = system.chain_constant();
    let error = p_hat.sub(&table.entries[iy].p.to_matrix()).spectral_norm();
    Ok(ChainReconstruction {
        x: x.clone(),
        y: y.clone(),
        x1,
        x2,
        x3,
        distance,
        holonomies,
        leg_lengths,
        chain_length,
        chain_constant,
        chain_ok: chain_length <= chain_constant * distance * (1.0 + 1e-9),
        p_hat,
        error,
    })
}

/// Table entries in `G` that also pass the domination check.
pub fn admitted_block(a: &CocycleMap, system: &BaseSystem, table: &TransferTable, opts: &DominationOptions) -> Result<Vec<bool>> {
    table
        .entries
        .iter()
        .map(|e| Ok(e.in_g && domination_check(a, system, &e.point, opts)?.pass))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolderOptions {
    pub pair_budget: usize,
    /// Pairs closer than this are sampled; defaults to half the bracket
    /// radius.
    pub radius: Option<f64>,
    pub min_entries: usize,
    /// Accepted slopes `[alpha - below, alpha + above]`.
    pub band: (f64, f64),
    pub seed: u64,
}

impl Default for HolderOptions {
    fn default() -> Self {
        HolderOptions {
            pair_budget: 2000,
            radius: None,
            min_entries: 1000,
            band: (0.15, 0.15),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderPair {
    pub i: usize,
    pub j: usize,
    pub dist: f64,
    pub pdiff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolderEstimate {
    pub pairs: Vec<HolderPair>,
    /// Qualifying pairs before subsampling.
    pub candidates: usize,
    pub noise_floor: f64,
    pub slope: Option<LineFit>,
    /// Intercept of the log-log fit.
    pub log_c: Option<f64>,
    /// `max pdiff / dist^alpha`.
    pub c_envelope: f64,
    pub envelopes: Vec<DecadeEnvelope>,
    /// All differences below the noise floor: `P` is constant on the block.
    pub degenerate: bool,
    pub alpha: f64,
    pub pass: bool,
}

pub fn holder_estimate(
    system: &BaseSystem,
    table: &TransferTable,
    block: &[bool],
    alpha: f64,
    opts: &HolderOptions,
) -> Result<HolderEstimate> {
    assert_eq!(block.len(), table.len());
    let members: Vec<usize> = (0..table.len()).filter(|&i| block[i]).collect();
    if members.len() < opts.min_entries {
        return Err(Error::InsufficientPairs {
            found: members.len(),
            required: opts.min_entries,
        });
    }
    let radius = opts.radius.unwrap_or(0.5 * system.bracket_radius());
    let grid = GridIndex::new(members.iter().map(|&i| &table.entries[i].point), radius);
    let mut by_decade: Vec<(i32, Vec<(usize, usize, f64)>)> = Vec::new();
    let mut candidates = 0;
    for (a, &i) in members.iter().enumerate() {
        for b in grid.candidates(&table.entries[i].point) {
            if b <= a {
                continue;
            }
            let j = members[b];
            let dist = system.distance(&table.entries[i].point, &table.entries[j].point);
            if !(dist < radius) || dist == 0.0 {
                continue;
            }
            candidates += 1;
            let dec = decade_of(dist);
            match by_decade.iter_mut().find(|e| e.0 == dec) {
                Some(e) => e.1.push((i, j, dist)),
                None => by_decade.push((dec, alloc::vec![(i, j, dist)])),
            }
        }
    }
    if candidates < 2 {
        return Err(Error::InsufficientPairs {
            found: candidates,
            required: 2,
        });
    }
    by_decade.sort_by_key(|e| e.0);
    let per_decade = (opts.pair_budget / by_decade.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut chosen = Vec::new();
    for (_, mut v) in by_decade {
        let k = per_decade.min(v.len());
        let (pick, _) = v.partial_shuffle(&mut rng, k);
        chosen.extend_from_slice(pick);
    }
    chosen.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let pairs: Vec<HolderPair> = chosen
        .into_iter()
        .map(|(i, j, dist)| HolderPair {
            i,
            j,
            dist,
            pdiff: table.entries[i]
                .p
                .to_matrix()
                .sub(&table.entries[j].p.to_matrix())
                .spectral_norm(),
        })
        .collect();
    let noise_floor = 10.0 * f64::EPSILON * table.t_bound.max(1.0) * math::sqrt(table.len() as f64);
    let usable: Vec<&HolderPair> = pairs.iter().filter(|p| p.pdiff > noise_floor).collect();
    let degenerate = usable.len() < 2;
    let lx: Vec<f64> = usable.iter().map(|p| math::ln(p.dist)).collect();
    let ly: Vec<f64> = usable.iter().map(|p| math::ln(p.pdiff)).collect();
    let slope = if degenerate { None } else { fit_line(&lx, &ly) };
    let dists: Vec<f64> = usable.iter().map(|p| p.dist).collect();
    let diffs: Vec<f64> = usable.iter().map(|p| p.pdiff).collect();
    let envelopes = decade_envelopes(&dists, &diffs, alpha);
    let c_envelope = envelopes.iter().map(|e| e.envelope).fold(0.0, f64::max);
    let pass = slope.is_some_and(|s| s.slope >= alpha - opts.band.0 && s.slope <= alpha + opts.band.1);
    Ok(HolderEstimate {
        pairs,
        candidates,
        noise_floor,
        log_c: slope.map(|s| s.intercept),
        slope,
        c_envelope,
        envelopes,
        degenerate,
        alpha,
        pass,
    })
}

/// Deviations at or below this are roundoff and do not enter the fit of `L`.
pub const ENVELOPE_FLOOR: f64 = 1e-10;

/// Run-level `L` in `||H - I|| <= L d^alpha`: the median of the per-decade
/// envelopes over deviations above [`ENVELOPE_FLOOR`]; ratios above `3L` are
/// outliers.
#[derive(Clone, Debug, PartialEq)]
pub struct HolonomyEnvelope {
    pub l: f64,
    pub envelopes: Vec<DecadeEnvelope>,
    pub outliers: usize,
    pub count: usize,
}

pub fn holonomy_envelope(dists: &[f64], deviations: &[f64], alpha: f64) -> HolonomyEnvelope {
    let keep: Vec<(f64, f64)> = dists
        .iter()
        .zip(deviations)
        .filter(|(d, _)| **d > 0.0)
        .map(|(d, v)| (*d, *v))
        .collect();
    let (ds, vs): (Vec<f64>, Vec<f64>) = keep.iter().filter(|p| p.1 > ENVELOPE_FLOOR).copied().unzip();
    let envelopes = decade_envelopes(&ds, &vs, alpha);
    let mut env: Vec<f64> = envelopes.iter().map(|e| e.envelope).collect();
    let l = median(&mut env).unwrap_or(0.0);
    let outliers = keep
        .iter()
        .filter(|(d, v)| *v > 3.0 * l * math::powf(*d, alpha))
        .count();
    HolonomyEnvelope {
        l,
        envelopes,
        outliers,
        count: keep.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{AngleField, CocycleVariant, CylinderTable, GroundTruthTransfer, TrigTerm};
    use crate::dynamics::{LeafParam, SymbolSequence};
    use crate::linalg::relative_error;
    use crate::livsic::{build_transfer, choose_anchor, TransferOptions};
    use proptest::prelude::*;

    fn shift() -> BaseSystem {
        BaseSystem::full_shift(2).unwrap()
    }

    fn locally_constant(depth: u32, seed: u64) -> CocycleMap {
        CocycleMap::new(
            1.0,
            CocycleVariant::LocallyConstant(CylinderTable::seeded(depth, 2, 2, 0.05, seed).unwrap()),
        )
        .unwrap()
    }

    /// Rotation by `2 pi x_1` plus a small non-conformal perturbation.
    fn torus_smooth() -> CocycleMap {
        let base = CocycleMap::torus_rotation(alloc::vec![1, 0], 0.3);
        let CocycleVariant::TorusSmooth { mut terms, .. } = base.variant else {
            unreachable!()
        };
        terms.push(TrigTerm {
            frequency: alloc::vec![0, 1],
            cos: Matrix::from_rows(&[[0.03, 0.0], [0.0, -0.02]]),
            sin: Matrix::from_rows(&[[0.0, 0.02], [0.01, 0.0]]),
        });
        CocycleMap::new(
            1.0,
            CocycleVariant::TorusSmooth {
                constant: Matrix::zeros(2, 2),
                terms,
            },
        )
        .unwrap()
    }

    fn sine_truth() -> GroundTruthTransfer {
        GroundTruthTransfer::TorusRotation {
            angle: AngleField::Sine { c: 0.3 },
            shear: 0.2,
        }
    }

    fn direct(a: &CocycleMap, sys: &BaseSystem, x: &Point, n: usize) -> Matrix {
        let mut m = Matrix::identity(a.dim);
        let mut cur = x.clone();
        for _ in 0..n {
            m = a.evaluate(sys, &cur).unwrap().matmul(&m);
            cur = sys.step(&cur);
        }
        m
    }

    #[test]
    fn domination_examples() {
        let sys = BaseSystem::cat_map();
        let x = sys.sample_measure(1, 1).pop().unwrap();
        let opts = DominationOptions::default();
        let r = domination_check(&CocycleMap::identity(2), &sys, &x, &opts).unwrap();
        assert!(r.pass && r.forward.iter().all(|&v| v.abs() < 1e-12));
        let truth = sine_truth();
        let t = truth.bound();
        let cob = CocycleMap::coboundary(truth).unwrap();
        let theta = 4.0 * math::ln(t) / opts.block as f64 + 0.01;
        let r = domination_check(&cob, &sys, &x, &DominationOptions { theta, ..opts.clone() }).unwrap();
        assert!(r.pass);
        let diag = CocycleMap::constant(Matrix::diag(&[2.0, 0.5])).unwrap();
        let r = domination_check(&diag, &sys, &x, &DominationOptions { theta: 1.3, ..opts.clone() }).unwrap();
        assert_eq!(r.first_failure, Some((1, false)));
        assert!((r.forward[2] - 3.0 * 10.0 * 2.0 * math::ln(2.0)).abs() < 1e-9);
        assert!(domination_check(&diag, &sys, &x, &DominationOptions { theta: 1.4, ..opts }).unwrap().pass);
    }

    #[test]
    fn trivial_pairs_give_identity() {
        let sys = BaseSystem::cat_map();
        let x = sys.sample_measure(2, 1).pop().unwrap();
        let pair = LeafPair::new(&sys, &x, &x, LeafDirection::Stable).unwrap();
        let h = stable_holonomy(&torus_smooth(), &sys, &pair, &HolonomyOptions::default()).unwrap();
        assert_eq!(h.matrix, Matrix::identity(2));
        assert_eq!(h.n_converged, 0);
        let pair = LeafPair::new(&sys, &x, &x, LeafDirection::Unstable).unwrap();
        assert!(stable_holonomy(&torus_smooth(), &sys, &pair, &HolonomyOptions::default()).is_err());
        assert_eq!(
            unstable_holonomy(&torus_smooth(), &sys, &pair, &HolonomyOptions::default()).unwrap().matrix,
            Matrix::identity(2)
        );
    }

    #[test]
    fn locally_constant_exactness() {
        let sys = shift();
        let opts = HolonomyOptions::default();
        for (depth, seed) in [(1u32, 3u64), (2, 4), (3, 5)] {
            let a = locally_constant(depth, seed);
            for y in sys.sample_measure(seed, 10) {
                // differ at -1 only
                let z = y.as_shift().unwrap().with_symbol(-1, 1 - y.as_shift().unwrap().at(-1));
                let z = Point::Shift(z);
                let pair = LeafPair::new(&sys, &y, &z, LeafDirection::Stable).unwrap();
                let h = stable_holonomy(&a, &sys, &pair, &opts).unwrap();
                assert_eq!(h.n_converged, depth as usize);
                let oracle = direct(&a, &sys, &z, depth as usize)
                    .inverse()
                    .unwrap()
                    .matmul(&direct(&a, &sys, &y, depth as usize));
                assert!(h.matrix.sub(&oracle).max_abs() <= 1e-12);
                // differ at +1: backward images leave the window after depth - 1 steps
                let w = sys.local_unstable_point(&y, LeafParam::Depth(1)).unwrap();
                let pair = LeafPair::new(&sys, &y, &w, LeafDirection::Unstable).unwrap();
                let h = unstable_holonomy(&a, &sys, &pair, &opts).unwrap();
                assert_eq!(h.n_converged, depth as usize - 1);
            }
        }
        // depth 1, difference at -2 only: products cancel
        let a = locally_constant(1, 8);
        let y = sys.sample_measure(8, 1).pop().unwrap();
        let z = sys.local_stable_point(&y, LeafParam::Depth(2)).unwrap();
        let h = stable_holonomy(&a, &sys, &LeafPair::new(&sys, &y, &z, LeafDirection::Stable).unwrap(), &opts).unwrap();
        assert!(h.matrix.sub(&Matrix::identity(2)).max_abs() < 1e-14 && h.n_converged == 0);
    }

    #[test]
    fn coboundary_unstable_holonomy_matches_truth() {
        let sys = BaseSystem::cat_map();
        let truth = sine_truth();
        let a = CocycleMap::coboundary(truth.clone()).unwrap();
        for y in sys.sample_measure(5, 20) {
            let z = sys.local_unstable_point(&y, LeafParam::Arclength(0.01)).unwrap();
            let pair = LeafPair::new(&sys, &y, &z, LeafDirection::Unstable).unwrap();
            let h = unstable_holonomy(&a, &sys, &pair, &HolonomyOptions::default()).unwrap();
            let oracle = truth.evaluate(&z).unwrap().matmul(&truth.evaluate_inverse(&y).unwrap());
            assert!(relative_error(&h.matrix, &oracle) < 1e-8);
            assert!(h.dominated && h.tail_bound < 1e-9);
        }
    }

    #[test]
    fn shift_chain_is_exact_for_cylinder_coboundaries() {
        let sys = shift();
        let table = CylinderTable::seeded(1, 2, 2, 0.3, 11).unwrap();
        let truth = GroundTruthTransfer::Cylinder(table);
        let a = CocycleMap::coboundary(truth.clone()).unwrap();
        let x0 = choose_anchor(&sys, 3, 5000);
        let mut o = TransferOptions::new(1500, 0.03);
        o.zero_exponent_iters = 2000;
        let t = build_transfer(&a, &sys, &x0, &o).unwrap();
        let mut checked = 0;
        for i in 0..t.len() {
            for j in (i + 1)..t.len().min(i + 200) {
                if sys.distance(&t.entries[i].point, &t.entries[j].point) < 0.25 {
                    let c = holonomy_chain(&a, &sys, &t, i, j, &HolonomyOptions::default()).unwrap();
                    assert!(c.error <= 1e-10, "{}", c.error);
                    assert!(c.chain_ok);
                    checked += 1;
                }
            }
            if checked > 50 {
                break;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn degenerate_chain() {
        let sys = BaseSystem::cat_map();
        let a = CocycleMap::coboundary(sine_truth()).unwrap();
        let x0 = choose_anchor(&sys, 3, 3000);
        let mut o = TransferOptions::new(10, 0.05);
        o.zero_exponent_iters = 2000;
        let t = build_transfer(&a, &sys, &x0, &o).unwrap();
        let c = holonomy_chain(&a, &sys, &t, 3, 3, &HolonomyOptions::default()).unwrap();
        assert_eq!(c.chain_length, 0.0);
        assert_eq!(c.p_hat, t.entries[3].p.to_matrix());
        assert!(matches!(
            holonomy_chain(&a, &sys, &t, 0, 1, &HolonomyOptions::default()),
            Err(Error::PointsTooFar { .. }) | Ok(_)
        ));
    }

    #[test]
    fn identity_holder_is_degenerate() {
        let sys = BaseSystem::cat_map();
        let x0 = choose_anchor(&sys, 3, 5000);
        let mut o = TransferOptions::new(1200, 0.05);
        o.zero_exponent_iters = 2000;
        let a = CocycleMap::identity(2);
        let t = build_transfer(&a, &sys, &x0, &o).unwrap();
        let block = alloc::vec![true; t.len()];
        let h = holder_estimate(&sys, &t, &block, 1.0, &HolderOptions::default()).unwrap();
        assert!(h.degenerate && h.slope.is_none() && !h.pass);
        let few = alloc::vec![false; t.len()];
        assert!(matches!(
            holder_estimate(&sys, &t, &few, 1.0, &HolderOptions::default()),
            Err(Error::InsufficientPairs { .. })
        ));
    }

    #[test]
    fn envelope_counts_outliers() {
        let d = [1e-4, 2e-4, 1e-3, 5e-3, 1e-2, 2e-2];
        let v: Vec<f64> = d.iter().map(|x| 2.0 * x).collect();
        let e = holonomy_envelope(&d, &v, 1.0);
        assert!((e.l - 2.0).abs() < 1e-12 && e.outliers == 0);
        let mut w = v.clone();
        w[2] = 100.0 * d[2];
        let e = holonomy_envelope(&d, &w, 1.0);
        assert_eq!(e.outliers, 1);
        // exact identities at small distances do not drag L to zero
        let mut z = v.clone();
        z[0] = 1e-15;
        z[1] = 0.0;
        let e = holonomy_envelope(&d, &z, 1.0);
        assert!((e.l - 2.0).abs() < 1e-12 && e.outliers == 0 && e.count == 6);
    }

    fn torus_stable_pair(sys: &BaseSystem, y: &Point, s: f64) -> LeafPair {
        let z = sys.local_stable_point(y, LeafParam::Arclength(s)).unwrap();
        LeafPair::new(sys, y, &z, LeafDirection::Stable).unwrap()
    }

    fn torus_unstable_pair(sys: &BaseSystem, y: &Point, s: f64) -> LeafPair {
        let z = sys.local_unstable_point(y, LeafParam::Arclength(s)).unwrap();
        LeafPair::new(sys, y, &z, LeafDirection::Unstable).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn equivariance(seed in any::<u64>(), s in -0.01f64..0.01, j in 1i64..=5) {
            let sys = BaseSystem::cat_map();
            let a = torus_smooth();
            let opts = HolonomyOptions::default();
            let y = sys.sample_measure(seed, 1).pop().unwrap();
            // stable: forward images stay on the local leaf
            let pair = torus_stable_pair(&sys, &y, s);
            let h0 = stable_holonomy(&a, &sys, &pair, &opts).unwrap().matrix;
            let hj = stable_holonomy(&a, &sys, &pair.advanced(&sys, j), &opts).unwrap().matrix;
            let (yj, zj) = pair.iterate(&sys, 0);
            let ay = product(&a, &sys, &yj, j).unwrap().to_matrix();
            let az = product(&a, &sys, &zj, j).unwrap().to_matrix();
            let rhs = az.matmul(&h0).matmul(&ay.inverse().unwrap());
            prop_assert!(relative_error(&hj, &rhs) < 1e-8);
            // unstable: backward images
            let pair = torus_unstable_pair(&sys, &y, s);
            let h0 = unstable_holonomy(&a, &sys, &pair, &opts).unwrap().matrix;
            let hj = unstable_holonomy(&a, &sys, &pair.advanced(&sys, -j), &opts).unwrap().matrix;
            let ay = product(&a, &sys, &pair.y, -j).unwrap().to_matrix();
            let az = product(&a, &sys, &pair.z, -j).unwrap().to_matrix();
            let rhs = az.matmul(&h0).matmul(&ay.inverse().unwrap());
            prop_assert!(relative_error(&hj, &rhs) < 1e-8);
        }

        #[test]
        fn groupoid(seed in any::<u64>(), s in -0.01f64..0.01, t in -0.01f64..0.01) {
            let sys = BaseSystem::cat_map();
            let a = torus_smooth();
            let opts = HolonomyOptions::default();
            let y = sys.sample_measure(seed, 1).pop().unwrap();
            for stable in [true, false] {
                let mk = |p: &Point, q: &Point| {
                    let dir = if stable { LeafDirection::Stable } else { LeafDirection::Unstable };
                    holonomy(&a, &sys, &LeafPair::new(&sys, p, q, dir).unwrap(), &opts).unwrap().matrix
                };
                let leaf = |p: &Point, u: f64| if stable {
                    sys.local_stable_point(p, LeafParam::Arclength(u)).unwrap()
                } else {
                    sys.local_unstable_point(p, LeafParam::Arclength(u)).unwrap()
                };
                let z = leaf(&y, s);
                let w = leaf(&y, t);
                prop_assert_eq!(mk(&y, &y), Matrix::identity(2));
                let hyz = mk(&y, &z);
                prop_assert!(relative_error(&mk(&z, &w).matmul(&hyz), &mk(&y, &w)) < 1e-8);
                prop_assert!(relative_error(&mk(&z, &y), &hyz.inverse().unwrap()) < 1e-8);
            }
        }
    }

    #[test]
    fn shift_pairs_reject_wrong_leaf() {
        let sys = shift();
        let y = sys.sample_measure(1, 1).pop().unwrap();
        let s = y.as_shift().unwrap();
        let z = Point::Shift(s.with_symbol(3, 1 - s.at(3)));
        assert!(matches!(LeafPair::new(&sys, &y, &z, LeafDirection::Stable), Err(Error::NotOnLeaf(_))));
        let _ = SymbolSequence::constant(2, 0).unwrap();
    }
}
