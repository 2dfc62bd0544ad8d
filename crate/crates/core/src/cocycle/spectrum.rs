//! Lyapunov exponents by QR iteration and Oseledets frames as intersections
//! of forward and backward flags.

use alloc::vec::Vec;

use crate::dynamics::{BaseSystem, Point};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

use super::CocycleMap;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumOptions {
    /// Largest admissible Cesàro drift over the final 10% window.
    pub drift_tol: f64,
    /// Exponents closer than `resolution_factor / n_iters` are merged.
    pub resolution_factor: f64,
    /// Steps discarded before averaging starts.
    pub warmup: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            drift_tol: 1e-3,
            resolution_factor: 10.0,
            warmup: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovSpectrum {
    /// Block exponents, strictly decreasing.
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// The `d` unmerged exponents, decreasing.
    pub raw_exponents: Vec<f64>,
    pub n_iters: usize,
    /// Per-block drift of the running averages over the final 10% window.
    pub drift: Vec<f64>,
    pub resolution: f64,
    pub converged: bool,
}

impl LyapunovSpectrum {
    pub fn top(&self) -> f64 {
        self.exponents[0]
    }

    pub fn bottom(&self) -> f64 {
        *self.exponents.last().expect("nonempty spectrum")
    }

    pub fn is_degenerate(&self) -> bool {
        self.exponents.len() == 1
    }
}

/// A fixed, generic orthonormal starting frame; coordinate axes are avoided
/// because they are invariant for diagonal cocycles.
fn generic_frame(d: usize) -> Matrix {
    let mut h = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] = math::sin(1.7 * i as f64 + 2.3 * j as f64 + 0.5) + if i == j { 2.0 } else { 0.0 };
        }
    }
    h.qr().q
}

pub fn lyapunov_spectrum(a: &CocycleMap, system: &BaseSystem, x: &Point, n_iters: usize) -> Result<LyapunovSpectrum> {
    lyapunov_spectrum_with(a, system, x, n_iters, &SpectrumOptions::default())
}

pub fn lyapunov_spectrum_with(
    a: &CocycleMap,
    system: &BaseSystem,
    x: &Point,
    n_iters: usize,
    opts: &SpectrumOptions,
) -> Result<LyapunovSpectrum> {
    if n_iters < 1000 {
        return Err(Error::InvalidArgument("spectrum needs at least 1000 iterations".into()));
    }
    system.check(x)?;
    let d = a.dim;
    let mut q = generic_frame(d);
    let mut sums = alloc::vec![0.0f64; d];
    let mut lo = alloc::vec![f64::INFINITY; d];
    let mut hi = alloc::vec![f64::NEG_INFINITY; d];
    let window_start = n_iters - n_iters / 10;
    let mut cur = x.clone();
    for _ in 0..opts.warmup {
        q = a.evaluate(system, &cur)?.matmul(&q).qr().q;
        cur = system.step(&cur);
    }
    for t in 1..=n_iters {
        let m = a.evaluate(system, &cur)?;
        let qr = m.matmul(&q).qr();
        for i in 0..d {
            sums[i] += math::ln(qr.r[(i, i)]);
        }
        q = qr.q;
        cur = system.step(&cur);
        if t >= window_start {
            for i in 0..d {
                let avg = sums[i] / t as f64;
                lo[i] = lo[i].min(avg);
                hi[i] = hi[i].max(avg);
            }
        }
    }
    let mut raw: Vec<(f64, f64)> = (0..d)
        .map(|i| (sums[i] / n_iters as f64, hi[i] - lo[i]))
        .collect();
    raw.sort_by(|p, q| q.0.total_cmp(&p.0));
    let resolution = opts.resolution_factor / n_iters as f64;
    let mut exponents = Vec::new();
    let mut multiplicities: Vec<usize> = Vec::new();
    let mut drift = Vec::new();
    let mut block_sum = 0.0;
    for (idx, &(lam, dr)) in raw.iter().enumerate() {
        let merge = idx > 0 && raw[idx - 1].0 - lam < resolution;
        if merge {
            let k = multiplicities.last_mut().expect("open block");
            *k += 1;
            block_sum += lam;
            *exponents.last_mut().expect("open block") = block_sum / *k as f64;
            let last = drift.last_mut().expect("open block");
            *last = f64::max(*last, dr);
        } else {
            exponents.push(lam);
            multiplicities.push(1);
            drift.push(dr);
            block_sum = lam;
        }
    }
    let converged = drift.iter().all(|&v| v <= opts.drift_tol);
    Ok(LyapunovSpectrum {
        exponents,
        multiplicities,
        raw_exponents: raw.iter().map(|p| p.0).collect(),
        n_iters,
        drift,
        resolution,
        converged,
    })
}

/// Oseledets data at one point.
#[derive(Clone, Debug)]
pub struct OseledetsFrame {
    pub point: Point,
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// Orthonormal basis of each `E^i_x` (`d x m_i`).
    pub blocks: Vec<Matrix>,
    /// Sum of the discarded intersection eigenvalues: zero when forward and
    /// backward flags meet exactly.
    pub agreement: f64,
    /// `max_{i != j} ||proj_j A(x) E^i|| / ||A(x)||`.
    pub equivariance_defect: f64,
    /// All exponents merged into a single block; the frame is the identity.
    pub degenerate: bool,
}

impl OseledetsFrame {
    pub fn matrix(&self) -> Matrix {
        Matrix::hstack(&self.blocks)
    }
}

/// Frames at `f^t x` for `t` in `lo..=hi`.
#[derive(Clone, Debug)]
pub struct FrameSeries {
    pub lo: i64,
    pub multiplicities: Vec<usize>,
    /// `F_t = [E^1 | .. | E^l]`, orthonormal within each block.
    pub frames: Vec<Matrix>,
    pub agreement: Vec<f64>,
    /// `A(f^t x)` for `t` in `lo..=hi`.
    pub matrices: Vec<Matrix>,
    pub points: Vec<Point>,
}

impl FrameSeries {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn index(&self, t: i64) -> usize {
        (t - self.lo) as usize
    }

    /// Column ranges of the blocks.
    pub fn block_ranges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.multiplicities.len());
        let mut start = 0;
        for &m in &self.multiplicities {
            out.push((start, start + m));
            start += m;
        }
        out
    }

    /// Coordinates of `A(f^t x)` from the frame at `t` to the frame at `t+1`.
    pub fn transition(&self, idx: usize) -> Result<Matrix> {
        let finv = self.frames[idx + 1].inverse().ok_or(Error::Singular)?;
        Ok(finv.matmul(&self.matrices[idx]).matmul(&self.frames[idx]))
    }

    /// Largest off-diagonal block of [`Self::transition`], relative to
    /// `||A||`.
    pub fn equivariance_defect(&self, idx: usize) -> Result<f64> {
        let c = self.transition(idx)?;
        let ranges = self.block_ranges();
        let norm = self.matrices[idx].spectral_norm();
        let mut worst: f64 = 0.0;
        for (i, &(ci0, ci1)) in ranges.iter().enumerate() {
            for (j, &(cj0, cj1)) in ranges.iter().enumerate() {
                if i == j {
                    continue;
                }
                let blk = c.row_block(cj0, cj1).columns(ci0, ci1);
                worst = worst.max(blk.spectral_norm() / norm);
            }
        }
        Ok(worst)
    }
}

/// Forward and backward QR sweeps along the orbit of `x` over
/// `lo - warmup ..= hi + warmup`, intersected at each `t` in `lo..=hi`.
pub fn oseledets_frames_along(
    a: &CocycleMap,
    system: &BaseSystem,
    x: &Point,
    lo: i64,
    hi: i64,
    multiplicities: &[usize],
    warmup: usize,
) -> Result<FrameSeries> {
    assert!(lo <= hi);
    let d = a.dim;
    if multiplicities.iter().sum::<usize>() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: multiplicities.iter().sum(),
        });
    }
    let w = warmup as i64;
    let total = (hi - lo + 2 * w + 1) as usize;
    let mut points = Vec::with_capacity(total);
    let mut cur = system.iterate(x, lo - w);
    for _ in 0..total {
        let next = system.step(&cur);
        points.push(cur);
        cur = next;
    }
    let mats: Vec<Matrix> = points
        .iter()
        .map(|p| a.evaluate(system, p))
        .collect::<Result<_>>()?;
    let len = (hi - lo + 1) as usize;
    let offset = warmup;
    if multiplicities.len() == 1 {
        return Ok(FrameSeries {
            lo,
            multiplicities: multiplicities.to_vec(),
            frames: alloc::vec![Matrix::identity(d); len],
            agreement: alloc::vec![0.0; len],
            matrices: mats[offset..offset + len].to_vec(),
            points: points[offset..offset + len].to_vec(),
        });
    }
    // forward[k]: frame at points[k] pushed from the past.
    let mut forward = Vec::with_capacity(len);
    let mut q = generic_frame(d);
    for (k, m) in mats.iter().enumerate().take(offset + len) {
        if k >= offset {
            forward.push(q.clone());
        }
        q = m.matmul(&q).qr().q;
    }
    let mut backward = alloc::vec![Matrix::zeros(0, 0); len];
    let mut q = generic_frame(d);
    for k in (offset..total).rev() {
        if k < offset + len {
            backward[k - offset] = q.clone();
        }
        if k == offset {
            break;
        }
        let inv = mats[k - 1].inverse().ok_or(Error::Singular)?;
        q = inv.matmul(&q).qr().q;
    }
    let mut frames = Vec::with_capacity(len);
    let mut agreement = Vec::with_capacity(len);
    for t in 0..len {
        let (f, res) = intersect_flags(&forward[t], &backward[t], multiplicities);
        frames.push(f);
        agreement.push(res);
    }
    Ok(FrameSeries {
        lo,
        multiplicities: multiplicities.to_vec(),
        frames,
        agreement,
        matrices: mats[offset..offset + len].to_vec(),
        points: points[offset..offset + len].to_vec(),
    })
}

/// `E^i = U_i ∩ V_i`, where `U_i` spans the first `m_1 + .. + m_i` forward
/// columns and `V_i` the first `m_i + .. + m_l` backward columns.
fn intersect_flags(forward: &Matrix, backward: &Matrix, mult: &[usize]) -> (Matrix, f64) {
    let d = forward.rows();
    let mut blocks = Vec::with_capacity(mult.len());
    let mut residual = 0.0;
    let mut before = 0;
    for &m in mult {
        let u = forward.columns(0, before + m);
        let v = backward.columns(0, d - before);
        let uv = u.tr_matmul(&v);
        let mtx = Matrix::identity(before + m).sub(&uv.matmul(&uv.transpose())).symmetrized();
        let eig = mtx.symmetric_eigen();
        residual += eig.values[..m].iter().map(|v| v.abs()).sum::<f64>();
        blocks.push(u.matmul(&eig.vectors.columns(0, m)));
        before += m;
    }
    (Matrix::hstack(&blocks), residual)
}

/// Oseledets splitting at `x` from `n` iterations: the spectrum fixes the
/// block structure, sweeps of length `n` fix the flags.
pub fn oseledets_splitting(a: &CocycleMap, system: &BaseSystem, x: &Point, n: usize) -> Result<OseledetsFrame> {
    let spec = lyapunov_spectrum(a, system, x, n)?;
    let series = oseledets_frames_along(a, system, x, 0, 1, &spec.multiplicities, n)?;
    let f = &series.frames[0];
    let blocks = series
        .block_ranges()
        .iter()
        .map(|&(s, e)| f.columns(s, e))
        .collect();
    Ok(OseledetsFrame {
        point: x.clone(),
        exponents: spec.exponents.clone(),
        multiplicities: spec.multiplicities.clone(),
        blocks,
        agreement: series.agreement[0],
        equivariance_defect: series.equivariance_defect(0)?,
        degenerate: spec.is_degenerate(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroExponentReport {
    /// `(lambda_1, lambda_l)` per sample.
    pub per_sample: Vec<(f64, f64)>,
    pub max_abs: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Necessary condition for a coboundary: extreme exponents vanish.
pub fn zero_exponent_check(
    a: &CocycleMap,
    system: &BaseSystem,
    samples: &[Point],
    n_iters: usize,
) -> Result<ZeroExponentReport> {
    let scale = a.log_norm_scale(system, samples)?;
    let threshold = 1e-3 * scale.max(1.0);
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut max_abs: f64 = 0.0;
    for x in samples {
        let s = lyapunov_spectrum(a, system, x, n_iters)?;
        let (t, b) = (s.top(), s.bottom());
        max_abs = max_abs.max(t.abs()).max(b.abs());
        per_sample.push((t, b));
    }
    Ok(ZeroExponentReport {
        per_sample,
        max_abs,
        threshold,
        pass: max_abs <= threshold,
    })
}
