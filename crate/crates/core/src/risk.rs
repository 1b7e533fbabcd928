//! Tail-risk functionals over the empirical distribution of peak ages:
//! value at risk, conditional value at risk and entropic value at risk.
//!
//! Conventions on `n` samples at failure probability `ε`:
//! * VaR is the `⌈(1−ε)n⌉`-th order statistic (smallest `x` with at most
//!   `εn` samples above it).
//! * CVaR is the mean of the `⌈εn⌉` largest samples.
//! * EVaR is `inf_{z>0} (ln E[e^{zX}] − ln ε) / z`. The search range for `z`
//!   is scaled by the sample spread, so the result is translation
//!   equivariant and positively homogeneous.

use thiserror::Error;

use crate::num::{compensated_sum, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("no samples")]
    Empty,
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("epsilon must lie in (0, 1], got {0}")]
    Epsilon(f64),
    #[error("invalid search settings: {0}")]
    Search(String),
}

/// Failure probability plus the EVaR search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec<T> {
    pub epsilon: T,
    /// Search range for `z`, in units of `1 / (max − min)`.
    pub z_lo: T,
    pub z_hi: T,
    /// Log-spaced points of the coarse scan.
    pub z_points: usize,
    /// Width, in `ln z`, at which the golden-section refinement stops.
    pub tol: T,
}

impl<T: Real> RiskSpec<T> {
    pub fn new(epsilon: T) -> Result<Self, RiskError> {
        let spec = Self {
            epsilon,
            z_lo: T::lit(1e-6),
            z_hi: T::lit(1e3),
            z_points: 64,
            tol: T::lit(1e-9).max(T::lit(16.0) * T::epsilon()),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        check_epsilon(self.epsilon)?;
        if !(self.z_lo > T::zero() && self.z_hi > self.z_lo && self.z_hi.is_finite()) {
            return Err(RiskError::Search(format!("z range [{}, {}]", self.z_lo, self.z_hi)));
        }
        if self.z_points < 2 {
            return Err(RiskError::Search("need at least two grid points".into()));
        }
        if !(self.tol > T::zero()) {
            return Err(RiskError::Search("tol must be > 0".into()));
        }
        Ok(())
    }

    /// Absolute `z` range used for `samples`; `None` when all samples are equal.
    pub fn z_range(&self, samples: &[T]) -> Option<(T, T)> {
        let (lo, hi) = min_max(samples)?;
        let spread = hi - lo;
        (spread > T::zero()).then(|| (self.z_lo / spread, self.z_hi / spread))
    }
}

fn check_epsilon<T: Real>(epsilon: T) -> Result<(), RiskError> {
    if epsilon > T::zero() && epsilon <= T::one() {
        Ok(())
    } else {
        Err(RiskError::Epsilon(epsilon.as_f64()))
    }
}

fn check_samples<T: Real>(samples: &[T]) -> Result<(), RiskError> {
    if samples.is_empty() {
        return Err(RiskError::Empty);
    }
    match samples.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(RiskError::NonFinite { index }),
        None => Ok(()),
    }
}

fn min_max<T: Real>(samples: &[T]) -> Option<(T, T)> {
    let first = *samples.first()?;
    Some(
        samples
            .iter()
            .fold((first, first), |(lo, hi), &x| (lo.min(x), hi.max(x))),
    )
}

/// `εn` snapped to the nearest integer when it is one up to rounding, so
/// that e.g. `0.1 * 30` counts as exactly three samples.
fn tail_mass<T: Real>(epsilon: T, n: usize) -> f64 {
    let m = epsilon.as_f64() * n as f64;
    let r = m.round();
    if (m - r).abs() <= 1e-9 * m.max(1.0) {
        r
    } else {
        m
    }
}

fn sorted<T: Real>(samples: &[T]) -> Vec<T> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    v
}

/// Mean of the samples, accumulated relative to the maximum.
pub fn mean<T: Real>(samples: &[T]) -> Result<T, RiskError> {
    check_samples(samples)?;
    let (_, hi) = min_max(samples).unwrap();
    Ok(shifted_mean(samples.iter().copied(), hi, samples.len()))
}

fn shifted_mean<T: Real>(xs: impl Iterator<Item = T>, hi: T, n: usize) -> T {
    let s = compensated_sum(xs.map(|x| x - hi));
    (hi + s / T::from_usize(n).unwrap()).min(hi)
}

pub fn var<T: Real>(samples: &[T], epsilon: T) -> Result<T, RiskError> {
    check_samples(samples)?;
    check_epsilon(epsilon)?;
    let v = sorted(samples);
    Ok(var_sorted(&v, epsilon))
}

fn var_sorted<T: Real>(v: &[T], epsilon: T) -> T {
    let n = v.len();
    let above = tail_mass(epsilon, n).floor() as usize;
    let rank = n.saturating_sub(above).max(1);
    v[rank - 1]
}

pub fn cvar<T: Real>(samples: &[T], epsilon: T) -> Result<T, RiskError> {
    check_samples(samples)?;
    check_epsilon(epsilon)?;
    let n = samples.len();
    let k = (tail_mass(epsilon, n).ceil() as usize).clamp(1, n);
    if k == n {
        return mean(samples);
    }
    let v = sorted(samples);
    let hi = v[n - 1];
    let tail = shifted_mean(v[n - k..].iter().copied(), hi, k);
    Ok(tail.max(var_sorted(&v, epsilon)))
}

/// `ln((1/n) Σ exp(z x))`, shifted by the maximum so nothing overflows.
pub fn log_mgf<T: Real>(samples: &[T], z: T) -> Result<T, RiskError> {
    check_samples(samples)?;
    if !(z > T::zero() && z.is_finite()) {
        return Err(RiskError::Search(format!("z must be positive and finite, got {z}")));
    }
    let (_, hi) = min_max(samples).unwrap();
    Ok(z * hi + shifted_log_mgf(samples, hi, z))
}

fn shifted_log_mgf<T: Real>(samples: &[T], hi: T, z: T) -> T {
    let s = compensated_sum(samples.iter().map(|&x| (z * (x - hi)).exp()));
    (s / T::from_usize(samples.len()).unwrap()).ln()
}

/// Entropic value at risk at `spec.epsilon`.
///
/// The objective tends to the maximum as `z → ∞`, so the result never exceeds
/// it; at `ε = 1` it tends to the mean as `z → 0` and the mean is returned.
pub fn evar<T: Real>(samples: &[T], spec: &RiskSpec<T>) -> Result<T, RiskError> {
    check_samples(samples)?;
    spec.validate()?;
    if spec.epsilon == T::one() {
        return mean(samples);
    }
    let Some((z_lo, z_hi)) = spec.z_range(samples) else {
        return Ok(samples[0]);
    };
    let (_, hi) = min_max(samples).unwrap();
    let neg_ln_eps = -spec.epsilon.ln();
    let objective = |u: T| {
        let z = u.exp();
        (shifted_log_mgf(samples, hi, z) + neg_ln_eps) / z
    };

    let (u_lo, u_hi) = (z_lo.ln(), z_hi.ln());
    let steps = T::from_usize(spec.z_points - 1).unwrap();
    let grid = |i: usize| u_lo + (u_hi - u_lo) * T::from_usize(i).unwrap() / steps;
    let mut best = (0, objective(grid(0)));
    for i in 1..spec.z_points {
        let f = objective(grid(i));
        if f < best.1 {
            best = (i, f);
        }
    }
    let i = best.0;
    let a = grid(i.saturating_sub(1));
    let b = grid((i + 1).min(spec.z_points - 1));
    let refined = golden_section(objective, a, b, spec.tol);
    Ok((hi + best.1.min(refined)).min(hi))
}

/// Minimum value of a unimodal `f` on `[a, b]`.
fn golden_section<T: Real>(f: impl Fn(T) -> T, mut a: T, mut b: T, tol: T) -> T {
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = fc.min(fd);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            best = best.min(fc);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            best = best.min(fd);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

    fn evar_at(samples: &[f64], eps: f64) -> f64 {
        evar(samples, &RiskSpec::new(eps).unwrap()).unwrap()
    }

    #[test]
    fn small_set_values() {
        assert_eq!(var(&S, 0.5).unwrap(), 2.0);
        assert_eq!(var(&S, 1.0).unwrap(), 1.0);
        assert_eq!(var(&S, 0.01).unwrap(), 4.0);
        assert_eq!(cvar(&S, 0.5).unwrap(), 3.5);
        assert_eq!(cvar(&S, 1.0).unwrap(), 2.5);
        assert_eq!(cvar(&S, 0.25).unwrap(), 4.0);
        assert_eq!(evar_at(&S, 1.0), 2.5);
        let e = evar_at(&S, 0.5);
        assert!((3.5..=4.0).contains(&e), "{e}");
    }

    #[test]
    fn evar_matches_fine_scan_on_small_set() {
        let e = evar_at(&S, 0.5);
        let brute = (0..200_000)
            .map(|i| {
                let z = 1e-3 * (1e7f64).powf(i as f64 / 199_999.0);
                (log_mgf(&S, z).unwrap() - 0.5f64.ln()) / z
            })
            .fold(f64::INFINITY, f64::min);
        assert!((e - brute).abs() <= 1e-9 * brute, "{e} vs {brute}");
    }

    #[test]
    fn degenerate_inputs() {
        for eps in [0.01, 0.3, 1.0] {
            assert_eq!(var(&[7.0; 5], eps).unwrap(), 7.0);
            assert_eq!(cvar(&[7.0; 5], eps).unwrap(), 7.0);
            assert_eq!(evar_at(&[7.0; 5], eps), 7.0);
        }
        assert_eq!(log_mgf(&[2.0], 3.0).unwrap(), 6.0);
        assert_eq!(log_mgf(&[0.0, 0.0], 5.0).unwrap(), 0.0);
        assert!((log_mgf(&[0.0, 2f64.ln()], 1.0).unwrap() - 1.5f64.ln()).abs() < 1e-15);
        assert!(log_mgf(&[1e4f64, 0.0], 1.0).unwrap().is_finite());
    }

    #[test]
    fn errors() {
        assert_eq!(var::<f64>(&[], 0.5), Err(RiskError::Empty));
        assert_eq!(cvar(&S, 0.0), Err(RiskError::Epsilon(0.0)));
        assert_eq!(cvar(&S, 1.5), Err(RiskError::Epsilon(1.5)));
        assert!(RiskSpec::new(0.0f64).is_err());
        assert!(matches!(mean(&[1.0, f64::NAN]), Err(RiskError::NonFinite { index: 1 })));
        assert!(log_mgf(&S, 0.0).is_err());
    }

    #[test]
    fn rounding_of_tail_counts() {
        // 0.1 * 30 is 3.0000000000000004 in floating point
        let v: Vec<f64> = (1..=30).map(f64::from).collect();
        assert_eq!(var(&v, 0.1).unwrap(), 27.0);
        assert_eq!(cvar(&v, 0.1).unwrap(), 29.0);
    }

    #[test]
    fn single_precision() {
        let s: Vec<f32> = S.iter().map(|&x| x as f32).collect();
        assert_eq!(cvar(&s, 0.5f32).unwrap(), 3.5);
        let e = evar(&s, &RiskSpec::new(0.5f32).unwrap()).unwrap();
        assert!((3.5..=4.0).contains(&e));
        assert_eq!(evar(&s, &RiskSpec::new(1.0f32).unwrap()).unwrap(), 2.5);
    }

    fn samples() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..50.0f64, 1..200)
    }

    proptest! {
        #[test]
        fn dominance_chain(x in samples(), eps in 0.001..1.0f64) {
            let v = var(&x, eps).unwrap();
            let c = cvar(&x, eps).unwrap();
            let e = evar_at(&x, eps);
            let m = mean(&x).unwrap();
            let (lo, hi) = min_max(&x).unwrap();
            prop_assert!(e >= c && c >= v && c >= m, "{e} {c} {v} {m}");
            prop_assert!(lo <= v && e <= hi);
        }

        #[test]
        fn monotone_in_epsilon(x in samples(), a in 0.001..1.0f64, b in 0.001..1.0f64) {
            let (e1, e2) = (a.min(b), a.max(b));
            prop_assert!(var(&x, e1).unwrap() >= var(&x, e2).unwrap());
            prop_assert!(cvar(&x, e1).unwrap() >= cvar(&x, e2).unwrap());
            let (h1, h2) = (evar_at(&x, e1), evar_at(&x, e2));
            prop_assert!(h1 >= h2 - 1e-9 * h1.abs().max(1.0), "{h1} < {h2}");
        }

        #[test]
        fn translation_and_scale(x in samples(), eps in 0.01..1.0f64, a in -20.0..20.0f64, l in 0.1..10.0f64) {
            let y: Vec<f64> = x.iter().map(|v| l * v + a).collect();
            let close = |p: f64, q: f64| (p - q).abs() <= 1e-9 * (p.abs() + q.abs()).max(1.0);
            prop_assert!(close(cvar(&y, eps).unwrap(), l * cvar(&x, eps).unwrap() + a));
            prop_assert!(close(evar_at(&y, eps), l * evar_at(&x, eps) + a));
        }
    }
}
