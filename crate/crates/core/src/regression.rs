//! Least squares fits and per-decade envelopes for log-log scaling laws.

use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub count: usize,
}

/// Ordinary least squares `y ≈ slope · x + intercept`; `None` with fewer than
/// two distinct abscissae.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        count: n,
    })
}

/// `y ≈ b1 · x1 + b2 · x2 + c`; returns `(b1, b2, c)`.
pub fn fit_plane(x1: &[f64], x2: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = y.len();
    if n < 3 || x1.len() != n || x2.len() != n {
        return None;
    }
    // Centre, then solve the 2x2 normal equations.
    let m = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (m1, m2, my) = (m(x1), m(x2), m(y));
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b, c) = (x1[i] - m1, x2[i] - m2, y[i] - my);
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        s1y += a * c;
        s2y += b * c;
    }
    let g = Matrix::from_rows(&[[s11, s12], [s12, s22]]);
    let rhs = Matrix::from_rows(&[[s1y], [s2y]]);
    if !(g.condition_number() < 1e14) {
        return None;
    }
    let sol = g.solve(&rhs)?;
    let (b1, b2) = (sol[(0, 0)], sol[(1, 0)]);
    Some((b1, b2, my - b1 * m1 - b2 * m2))
}

/// `floor(log10 h)`.
pub fn decade_of(h: f64) -> i32 {
    math::floor(math::log10(h)) as i32
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecadeEnvelope {
    /// Samples have `10^decade <= h < 10^{decade+1}`.
    pub decade: i32,
    /// Largest `value / h^alpha` in the decade.
    pub envelope: f64,
    pub count: usize,
}

/// Per-decade maxima of `value / h^alpha`, ascending by decade.
pub fn decade_envelopes(h: &[f64], value: &[f64], alpha: f64) -> Vec<DecadeEnvelope> {
    let mut out: Vec<DecadeEnvelope> = Vec::new();
    for (&hi, &v) in h.iter().zip(value) {
        let d = decade_of(hi);
        let r = v / math::powf(hi, alpha);
        match out.iter_mut().find(|e| e.decade == d) {
            Some(e) => {
                e.envelope = e.envelope.max(r);
                e.count += 1;
            }
            None => out.push(DecadeEnvelope {
                decade: d,
                envelope: r,
                count: 1,
            }),
        }
    }
    out.sort_by_key(|e| e.decade);
    out
}

/// Ratio of the largest to the smallest envelope.
pub fn envelope_spread(env: &[DecadeEnvelope]) -> f64 {
    let hi = env.iter().map(|e| e.envelope).fold(f64::NEG_INFINITY, f64::max);
    let lo = env.iter().map(|e| e.envelope).fold(f64::INFINITY, f64::min);
    hi / lo
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert!(fit_line(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }

    #[test]
    fn plane_separates_covariates() {
        let x1: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let x2: Vec<f64> = (0..20).map(|i| i as f64 * 100.0).collect();
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.5 * a + 0.69 * b - 3.0).collect();
        let (b1, b2, c) = fit_plane(&x1, &x2, &y).unwrap();
        assert!((b1 - 0.5).abs() < 1e-9 && (b2 - 0.69).abs() < 1e-12 && (c + 3.0).abs() < 1e-8);
    }

    #[test]
    fn envelopes_by_decade() {
        let h = [2e-4, 5e-4, 3e-3, 9e-3];
        let v = [4e-4, 5e-4, 3e-3, 18e-3];
        let env = decade_envelopes(&h, &v, 1.0);
        assert_eq!(env.len(), 2);
        assert_eq!(env[0].decade, -4);
        assert!((env[0].envelope - 2.0).abs() < 1e-12);
        assert!((env[1].envelope - 2.0).abs() < 1e-12);
        assert!((envelope_spread(&env) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    proptest! {
        #[test]
        fn slope_recovers_power_law(alpha in 0.1f64..2.0, c in 0.01f64..100.0) {
            let h: Vec<f64> = (0..30).map(|i| 1e-4 * 10f64.powf(i as f64 / 15.0)).collect();
            let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
            let y: Vec<f64> = h.iter().map(|v| (c * v.powf(alpha)).ln()).collect();
            let f = fit_line(&x, &y).unwrap();
            prop_assert!((f.slope - alpha).abs() < 1e-9);
            let env = decade_envelopes(&h, &h.iter().map(|v| c * v.powf(alpha)).collect::<Vec<_>>(), alpha);
            prop_assert!((envelope_spread(&env) - 1.0).abs() < 1e-9);
        }
    }
}
