//! Borel sums over enumerated poles, order estimation by counting-function
//! regression, and detection of the dominant multiplicity.

use serde::{Deserialize, Serialize};

use crate::complex::pairwise_sum;
use crate::error::{Error, Result};
use crate::families::PoleRecord;

/// Minimum number of poles for a regression.
pub const MIN_POLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BorelSum {
    pub exponent_t: f64,
    pub max_modulus: f64,
    pub partial_sum: f64,
    pub term_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateMethod {
    CountingRegression,
    SumRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub rho_hat: f64,
    pub ci_halfwidth: f64,
    pub method: EstimateMethod,
    pub sample_range: (f64, f64),
    /// Intercept of the fit: `n(r) ~ exp(log_prefactor) r^rho_hat`.
    pub log_prefactor: f64,
}

impl ExponentEstimate {
    /// Fitted counting function `n(r)`.
    pub fn count_at(&self, r: f64) -> f64 {
        (self.log_prefactor + self.rho_hat * r.ln()).exp()
    }

    /// Integral tail `sum_{|a| > r} |a|^{-s} ~ C rho r^(rho - s) / (s - rho)`
    /// from the fitted counting function; infinite when `s <= rho_hat`.
    pub fn tail_sum(&self, r: f64, s: f64) -> f64 {
        let rho = self.rho_hat;
        if s <= rho {
            return f64::INFINITY;
        }
        self.log_prefactor.exp() * rho * r.powf(rho - s) / (s - rho)
    }
}

/// `sum |a|^{-t}` over poles with `|a| >= 1`, optionally only one multiplicity.
pub fn borel_partial_sum(poles: &[PoleRecord], t: f64, restrict_mult: Option<u32>) -> BorelSum {
    let mut max_modulus: f64 = 0.0;
    let terms: Vec<f64> = poles
        .iter()
        .filter(|p| restrict_mult.map_or(true, |m| p.multiplicity == m))
        .map(|p| p.location.norm())
        .filter(|r| *r >= 1.0)
        .map(|r| {
            max_modulus = max_modulus.max(r);
            r.powf(-t)
        })
        .collect();
    BorelSum { exponent_t: t, max_modulus, partial_sum: pairwise_sum(&terms), term_count: terms.len() }
}

/// Sorted moduli, ignoring the input order.
fn sorted_moduli(poles: &[PoleRecord]) -> Vec<f64> {
    let mut r: Vec<f64> = poles.iter().map(|p| p.location.norm()).collect();
    r.sort_by(f64::total_cmp);
    r
}

/// Least-squares slope of `log n(r)` against `log r` at checkpoints spaced by a
/// factor `sqrt 2`, starting where the count reaches `max(10, n/20)`.
pub fn estimate_order(poles: &[PoleRecord]) -> Result<ExponentEstimate> {
    if poles.len() < MIN_POLES {
        return Err(Error::InsufficientData(format!("{} poles, need {MIN_POLES}", poles.len())));
    }
    let r = sorted_moduli(poles);
    let n = r.len();
    let floor = (n / 20).max(10);
    let r_lo = r[floor - 1].max(1.0);
    let r_hi = r[n - 1];
    if !(r_hi > r_lo) {
        return Err(Error::InsufficientData("poles do not spread in modulus".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut cp = r_hi;
    while cp >= r_lo {
        let count = r.partition_point(|x| *x <= cp);
        xs.push(cp.ln());
        ys.push((count as f64).ln());
        cp /= std::f64::consts::SQRT_2;
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!("only {} checkpoints", xs.len())));
    }
    let (slope, intercept, se) = linear_fit(&xs, &ys);
    if !(slope > 0.0) {
        return Err(Error::InsufficientData(format!("non-positive counting slope {slope}")));
    }
    Ok(ExponentEstimate {
        rho_hat: slope,
        ci_halfwidth: 2.0 * se,
        method: EstimateMethod::CountingRegression,
        sample_range: (r_lo, r_hi),
        log_prefactor: intercept,
    })
}

/// Ordinary least squares; returns slope, intercept and the slope's standard error.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = if xs.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, intercept, se)
}

/// Largest multiplicity whose sub-family has counting exponent within 0.1 of
/// `rho`; falls back to the largest multiplicity with at least 50 members.
pub fn detect_mult_star(poles: &[PoleRecord], rho: f64) -> Result<u32> {
    if !(rho > 0.0) {
        return Err(Error::DomainError(format!("rho must be positive, got {rho}")));
    }
    let mut mults: Vec<u32> = poles.iter().map(|p| p.multiplicity).collect();
    mults.sort_unstable();
    mults.dedup();
    let mut fallback = None;
    for &m in mults.iter().rev() {
        let sub: Vec<PoleRecord> = poles.iter().filter(|p| p.multiplicity == m).copied().collect();
        if sub.len() < MIN_POLES {
            continue;
        }
        fallback.get_or_insert(m);
        // exponentially sparse sub-families fail the regression; they have exponent 0
        let exp = estimate_order(&sub).map(|e| e.rho_hat).unwrap_or(0.0);
        if (exp - rho).abs() <= 0.1 {
            return Ok(m);
        }
    }
    fallback.ok_or_else(|| Error::InsufficientData(format!("no multiplicity with {MIN_POLES} poles")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{enumerate_poles, FamilyDescriptor};
    use num_complex::Complex64;

    fn synthetic(locs: impl Iterator<Item = (f64, u32)>) -> Vec<PoleRecord> {
        let mut v: Vec<PoleRecord> = locs
            .map(|(r, m)| PoleRecord { location: Complex64::new(r, 0.0), multiplicity: m, laurent_coeff: Complex64::new(1.0, 0.0), index: 0 })
            .collect();
        v.sort_by(|a, b| a.location.re.total_cmp(&b.location.re));
        v
    }

    #[test]
    fn zsinz_cubic_sum() {
        let p = enumerate_poles(&FamilyDescriptor::z_sin_z(), 100.0).unwrap();
        let s = borel_partial_sum(&p, 3.0, None);
        let oracle: f64 = 2.0 * (1..=31).map(|n| (n as f64 * std::f64::consts::PI).powi(-3)).sum::<f64>();
        assert!((s.partial_sum - oracle).abs() < 1e-15);
        assert!((s.partial_sum - 0.0775039).abs() < 1e-7, "{}", s.partial_sum);
        assert_eq!(s.term_count, 62);
        assert_eq!(borel_partial_sum(&p, 3.0, Some(7)).partial_sum, 0.0);
    }

    #[test]
    fn synthetic_square_order() {
        let p = synthetic((1..=1000).map(|n| ((n * n) as f64, 1)));
        let e = estimate_order(&p).unwrap();
        assert!((e.rho_hat - 0.5).abs() < 0.02, "{}", e.rho_hat);
        assert!(estimate_order(&p[..40]).is_err());
    }

    #[test]
    fn mixed_multiplicities() {
        let p = synthetic((1..=500).map(|n| (n as f64, 2)).chain((1..=60).map(|n| (2f64.powi(n), 5))));
        assert_eq!(detect_mult_star(&p, 1.0).unwrap(), 2);
    }
}
