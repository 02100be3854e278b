//! Non-autonomous conformal iterated function systems: partition sums, lower
//! pressure, Bowen parameter by bisection, and structural audits.
//!
//! Level `n` holds maps `X_n -> X_{n-1}`; a word `w_1 .. w_n` is the composite
//! `phi^(1)_{w_1} o .. o phi^(n)_{w_n}` on `X_n`.

use std::fmt::Debug;
use std::sync::Arc;

use num_complex::Complex64;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{log_sum_exp, pairwise_sum, ComplexPoint, Disk};
use crate::error::{Error, Result};
use crate::families::{evaluate, InverseBranch, RegularBranch};

/// Distortion constant used when none is configured: `((1 + 1/2)/(1 - 1/2))^4`.
pub const DEFAULT_KOEBE_K: f64 = 81.0;
pub const DEFAULT_WORD_CAP: u64 = 2_000_000;
pub const DEFAULT_BISECTION_TOL: f64 = 1e-4;
/// Boundary samples per word in the exact enumeration.
pub const WORD_SAMPLES: usize = 64;

/// A holomorphic injection with value and derivative at a point.
pub trait Contraction: Send + Sync + Debug {
    fn eval(&self, w: ComplexPoint) -> Result<(ComplexPoint, ComplexPoint)>;

    /// Elementary maps in application order; a non-composite map is its own single step.
    fn steps(&self) -> Vec<&dyn Contraction>;

    /// The forward map this branch inverts, when it is an inverse branch of some `f_n`.
    fn forward(&self, _z: ComplexPoint) -> Option<Result<ComplexPoint>> {
        None
    }
}

impl Contraction for InverseBranch {
    fn eval(&self, w: ComplexPoint) -> Result<(ComplexPoint, ComplexPoint)> {
        InverseBranch::eval(self, w)
    }

    fn steps(&self) -> Vec<&dyn Contraction> {
        vec![self]
    }

    fn forward(&self, z: ComplexPoint) -> Option<Result<ComplexPoint>> {
        Some(evaluate(&self.family, &self.perturbation, z))
    }
}

impl Contraction for RegularBranch {
    fn eval(&self, w: ComplexPoint) -> Result<(ComplexPoint, ComplexPoint)> {
        RegularBranch::eval(self, w)
    }

    fn steps(&self) -> Vec<&dyn Contraction> {
        vec![self]
    }

    fn forward(&self, z: ComplexPoint) -> Option<Result<ComplexPoint>> {
        Some(evaluate(&self.family, &self.perturbation, z))
    }
}

/// `w -> to + ratio (w - from)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub from: ComplexPoint,
    pub to: ComplexPoint,
    pub ratio: ComplexPoint,
}

impl Contraction for Similarity {
    fn eval(&self, w: ComplexPoint) -> Result<(ComplexPoint, ComplexPoint)> {
        Ok((self.to + self.ratio * (w - self.from), self.ratio))
    }

    fn steps(&self) -> Vec<&dyn Contraction> {
        vec![self]
    }

    fn forward(&self, z: ComplexPoint) -> Option<Result<ComplexPoint>> {
        Some(Ok(self.from + (z - self.to) / self.ratio))
    }
}

/// Composite applying `parts[0]` first.
#[derive(Debug, Clone)]
pub struct Composite {
    pub parts: Vec<Arc<dyn Contraction>>,
}

impl Contraction for Composite {
    fn eval(&self, w: ComplexPoint) -> Result<(ComplexPoint, ComplexPoint)> {
        let mut z = w;
        let mut d = Complex64::new(1.0, 0.0);
        for p in &self.parts {
            let (zn, dp) = p.eval(z)?;
            z = zn;
            d *= dp;
        }
        Ok((z, d))
    }

    fn steps(&self) -> Vec<&dyn Contraction> {
        self.parts.iter().flat_map(|p| p.steps()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct NcifsLevel {
    pub index_n: usize,
    /// `X_n`
    pub domain: Disk,
    /// `X_{n-1}`
    pub codomain: Disk,
    pub branches: Vec<Arc<dyn Contraction>>,
}

impl NcifsLevel {
    /// `ln sup |phi'|` per branch over `samples` boundary points of the domain.
    pub fn branch_log_norms(&self, samples: usize) -> Result<Vec<f64>> {
        let pts = self.domain.boundary(samples);
        let one = |b: &Arc<dyn Contraction>| -> Result<f64> {
            let mut m = f64::NEG_INFINITY;
            for p in &pts {
                let (_, d) = b.eval(*p)?;
                let l = d.norm().ln();
                if !l.is_finite() {
                    return Err(Error::NonFiniteValue(format!("branch derivative at {p}")));
                }
                m = m.max(l);
            }
            Ok(m)
        };
        #[cfg(feature = "parallel")]
        {
            self.branches.par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.branches.iter().map(one).collect()
        }
    }

    /// `(ln inf |phi'|, ln sup |phi'|)` per branch over `samples` boundary points.
    /// Both extrema of `|phi'|` on the closed disk sit on the boundary, so the
    /// ratio bounds the distortion of each branch over its domain.
    pub fn branch_log_extrema(&self, samples: usize) -> Result<Vec<(f64, f64)>> {
        let pts = self.domain.boundary(samples);
        let one = |b: &Arc<dyn Contraction>| -> Result<(f64, f64)> {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in &pts {
                let l = b.eval(*p)?.1.norm().ln();
                if !l.is_finite() {
                    return Err(Error::NonFiniteValue(format!("branch derivative at {p}")));
                }
                lo = lo.min(l);
                hi = hi.max(l);
            }
            Ok((lo, hi))
        };
        #[cfg(feature = "parallel")]
        {
            self.branches.par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.branches.iter().map(one).collect()
        }
    }

    /// Checks that every branch maps `samples` boundary points and
    /// the center of the domain into the closed codomain.
    pub fn audit_maps_into(&self, samples: usize) -> Result<bool> {
        let mut pts = self.domain.boundary(samples);
        pts.push(self.domain.center);
        for b in &self.branches {
            for p in &pts {
                if !self.codomain.contains_closed(b.eval(*p)?.0) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Clone)]
pub struct NcifsSystem {
    /// Generated prefix of levels `1..=levels.len()`; a stationary system repeats `levels[0]`.
    pub levels: Vec<Arc<NcifsLevel>>,
    pub koebe_k: f64,
    pub stationary: bool,
}

impl NcifsSystem {
    pub fn new(levels: Vec<NcifsLevel>, koebe_k: f64) -> Result<Self> {
        if !(koebe_k >= 1.0) {
            return Err(Error::DomainError(format!("distortion constant must be >= 1, got {koebe_k}")));
        }
        Ok(NcifsSystem { levels: levels.into_iter().map(Arc::new).collect(), koebe_k, stationary: false })
    }

    pub fn stationary(level: NcifsLevel, koebe_k: f64) -> Result<Self> {
        let mut s = Self::new(vec![level], koebe_k)?;
        s.stationary = true;
        Ok(s)
    }

    /// Autonomous similarity system on the unit disk, one map per ratio.
    pub fn similarity(ratios: &[f64]) -> Result<Self> {
        let unit = Disk::new(Complex64::new(0.0, 0.0), 1.0)?;
        let n = ratios.len().max(1) as f64;
        let branches = ratios
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let to = Complex64::from_polar(1.0 - r, std::f64::consts::TAU * i as f64 / n);
                Arc::new(Similarity { from: unit.center, to, ratio: Complex64::new(*r, 0.0) }) as Arc<dyn Contraction>
            })
            .collect();
        Self::stationary(NcifsLevel { index_n: 1, domain: unit, codomain: unit, branches }, 1.0)
    }

    pub fn with_koebe_k(mut self, k: f64) -> Self {
        self.koebe_k = k;
        self
    }

    /// Level `n >= 1`.
    pub fn level(&self, n: usize) -> Result<&NcifsLevel> {
        if n == 0 {
            return Err(Error::InvalidAddress("levels start at 1".into()));
        }
        if self.stationary {
            return Ok(&self.levels[0]);
        }
        self.levels
            .get(n - 1)
            .map(|l| l.as_ref())
            .ok_or_else(|| Error::InvalidAddress(format!("level {n} beyond generated prefix {}", self.levels.len())))
    }

    pub fn depth_available(&self) -> usize {
        if self.stationary {
            usize::MAX
        } else {
            self.levels.len()
        }
    }

    /// Number of words of length `n`, saturating.
    pub fn word_count(&self, n: usize) -> Result<u128> {
        let mut c: u128 = 1;
        for k in 1..=n {
            c = c.saturating_mul(self.level(k)?.branches.len() as u128);
        }
        Ok(c)
    }

    /// `ln sup |phi_w'|` over `X_n` for every word of length `n`.
    pub fn word_log_norms(&self, n: usize, word_cap: u64, samples: usize) -> Result<Vec<f64>> {
        let words = self.word_count(n)?;
        if words > word_cap as u128 {
            return Err(Error::WordBudgetExceeded { words, cap: word_cap });
        }
        if words == 0 {
            return Ok(vec![]);
        }
        let inner = self.level(n)?;
        let pts = inner.domain.boundary(samples);
        let acc = vec![0.0; samples];
        let start = |b: &Arc<dyn Contraction>| -> Result<Vec<f64>> {
            let mut out = Vec::new();
            let mut p2 = Vec::with_capacity(samples);
            let mut a2 = Vec::with_capacity(samples);
            for (p, a) in pts.iter().zip(&acc) {
                let (z, d) = b.eval(*p)?;
                p2.push(z);
                a2.push(a + d.norm().ln());
            }
            self.descend(n - 1, &p2, &a2, &mut out)?;
            Ok(out)
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<Result<Vec<f64>>> = inner.branches.par_iter().map(start).collect();
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<Result<Vec<f64>>> = inner.branches.iter().map(start).collect();
        let mut all = Vec::with_capacity(words as usize);
        for p in parts {
            all.extend(p?);
        }
        Ok(all)
    }

    fn descend(&self, k: usize, pts: &[ComplexPoint], acc: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if k == 0 {
            let m = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Err(Error::NonFiniteValue("composite derivative".into()));
            }
            out.push(m);
            return Ok(());
        }
        let level = self.level(k)?;
        let mut p2 = vec![Complex64::new(0.0, 0.0); pts.len()];
        let mut a2 = vec![0.0; pts.len()];
        for b in &level.branches {
            for i in 0..pts.len() {
                let (z, d) = b.eval(pts[i])?;
                p2[i] = z;
                a2[i] = acc[i] + d.norm().ln();
            }
            self.descend(k - 1, &p2, &a2, out)?;
        }
        Ok(())
    }

    /// Precomputes the per-level and per-word log sup norms needed for pressures up
    /// to `max_depth`; depths over `word_cap` keep only the level data.
    pub fn spectrum(&self, max_depth: usize, word_cap: u64) -> Result<WordSpectrum> {
        if max_depth > self.depth_available() {
            return Err(Error::InvalidAddress(format!("depth {max_depth} beyond generated prefix {}", self.levels.len())));
        }
        let mut level_log_norms: Vec<Vec<f64>> = Vec::with_capacity(max_depth);
        for k in 1..=max_depth {
            if self.stationary && k > 1 {
                let first: Vec<f64> = level_log_norms[0].clone();
                level_log_norms.push(first);
            } else {
                level_log_norms.push(self.level(k)?.branch_log_norms(WORD_SAMPLES)?);
            }
        }
        let mut word_log_norms = Vec::with_capacity(max_depth);
        for n in 1..=max_depth {
            match self.word_log_norms(n, word_cap, WORD_SAMPLES) {
                Ok(v) => word_log_norms.push(Some(v)),
                Err(Error::WordBudgetExceeded { .. }) => word_log_norms.push(None),
                Err(e) => return Err(e),
            }
        }
        Ok(WordSpectrum { level_log_norms, word_log_norms, log_k: self.koebe_k.ln() })
    }
}

/// Cached log sup norms; partition sums at any `t` are log-sum-exps over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSpectrum {
    /// Entry `k - 1` holds level `k`.
    pub level_log_norms: Vec<Vec<f64>>,
    /// Entry `n - 1` holds all words of length `n`, when enumerated.
    pub word_log_norms: Vec<Option<Vec<f64>>>,
    pub log_k: f64,
}

impl WordSpectrum {
    pub fn max_depth(&self) -> usize {
        self.level_log_norms.len()
    }

    pub fn log_level_sum(&self, k: usize, t: f64) -> f64 {
        scaled_lse(&self.level_log_norms[k - 1], t)
    }

    pub fn log_exact(&self, n: usize, t: f64) -> Option<f64> {
        self.word_log_norms[n - 1].as_ref().map(|v| scaled_lse(v, t))
    }

    pub fn log_product(&self, n: usize, t: f64) -> f64 {
        let mut s = -(n as f64) * t * self.log_k;
        for k in 1..=n {
            s += self.log_level_sum(k, t);
        }
        s
    }

    /// Pressure trace over depths `1..=max_depth`; exact where enumerated.
    pub fn pressure(&self, t: f64) -> PressureEstimate {
        let depths: Vec<usize> = (1..=self.max_depth()).collect();
        let mut vals = Vec::with_capacity(depths.len());
        let mut methods = Vec::with_capacity(depths.len());
        for &n in &depths {
            match self.log_exact(n, t) {
                Some(v) => {
                    vals.push(v / n as f64);
                    methods.push(PressureMethod::ExactEnumeration);
                }
                None => {
                    vals.push(self.log_product(n, t) / n as f64);
                    methods.push(PressureMethod::ProductLowerBound);
                }
            }
        }
        let tail = vals.len().saturating_sub(3);
        let lower = vals[tail..].iter().cloned().fold(f64::INFINITY, f64::min);
        let method = if methods[tail..].iter().all(|m| *m == PressureMethod::ExactEnumeration) {
            PressureMethod::ExactEnumeration
        } else {
            PressureMethod::ProductLowerBound
        };
        PressureEstimate { t, depths, log_zn_over_n: vals, lower_pressure: lower, method, depth_methods: methods }
    }
}

fn scaled_lse(xs: &[f64], t: f64) -> f64 {
    if t == 0.0 {
        return (xs.len() as f64).ln();
    }
    let v: Vec<f64> = xs.iter().map(|x| t * x).collect();
    log_sum_exp(&v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PressureMethod {
    ExactEnumeration,
    ProductLowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureEstimate {
    pub t: f64,
    pub depths: Vec<usize>,
    #[serde(rename = "log_Zn_over_n")]
    pub log_zn_over_n: Vec<f64>,
    pub lower_pressure: f64,
    /// Method of the last three depths: exact only if all of them were enumerated.
    pub method: PressureMethod,
    pub depth_methods: Vec<PressureMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub bowen_bracket: (f64, f64),
    pub t_grid: Vec<f64>,
    pub pressures: Vec<PressureEstimate>,
    pub system_provenance: serde_json::Value,
    pub theoretical_target: Option<f64>,
}

/// `sum_i sup |phi_i'|^t` over the level's branches.
pub fn level_sum(level: &NcifsLevel, t: f64) -> Result<f64> {
    if level.branches.is_empty() {
        return Ok(0.0);
    }
    let logs = level.branch_log_norms(WORD_SAMPLES)?;
    Ok(pairwise_sum(&logs.iter().map(|l| (t * l).exp()).collect::<Vec<_>>()))
}

/// Full enumeration of `Z_n(t)`.
pub fn exact_zn(system: &NcifsSystem, n: usize, t: f64, word_cap: u64) -> Result<f64> {
    let v = system.word_log_norms(n, word_cap, WORD_SAMPLES)?;
    Ok(pairwise_sum(&v.iter().map(|l| (t * l).exp()).collect::<Vec<_>>()))
}

/// `K^{-nt} Z_(1)(t) .. Z_(n)(t)`.
pub fn product_lower_bound(system: &NcifsSystem, n: usize, t: f64) -> Result<f64> {
    let mut p = system.koebe_k.powf(-(n as f64) * t);
    for k in 1..=n {
        p *= level_sum(system.level(k)?, t)?;
    }
    Ok(p)
}

pub fn lower_pressure(system: &NcifsSystem, t: f64, max_depth: usize, word_cap: u64) -> Result<PressureEstimate> {
    if max_depth < 4 {
        return Err(Error::DomainError(format!("max_depth must be at least 4, got {max_depth}")));
    }
    Ok(system.spectrum(max_depth, word_cap)?.pressure(t))
}

/// Bisection on the sign of the lower pressure.
pub fn bowen_dimension(
    system: &NcifsSystem,
    t_lo: f64,
    t_hi: f64,
    tol: f64,
    max_depth: usize,
    word_cap: u64,
) -> Result<DimensionReport> {
    if max_depth < 4 {
        return Err(Error::DomainError(format!("max_depth must be at least 4, got {max_depth}")));
    }
    if !(t_lo >= 0.0 && t_hi > t_lo && tol > 0.0) {
        return Err(Error::DomainError(format!("invalid bracket [{t_lo}, {t_hi}] or tolerance {tol}")));
    }
    let single = (1..=max_depth).all(|k| system.level(k).map(|l| l.branches.len() == 1).unwrap_or(false));
    if single {
        return Ok(DimensionReport {
            bowen_bracket: (0.0, 0.0),
            t_grid: vec![],
            pressures: vec![],
            system_provenance: serde_json::Value::Null,
            theoretical_target: None,
        });
    }
    let spec = system.spectrum(max_depth, word_cap)?;
    bisect_spectrum(&spec, t_lo, t_hi, tol)
}

/// Bisection against a precomputed spectrum.
pub fn bisect_spectrum(spec: &WordSpectrum, t_lo: f64, t_hi: f64, tol: f64) -> Result<DimensionReport> {
    let mut lo = t_lo;
    let mut hi = t_hi;
    let mut grid = Vec::new();
    let mut pressures = Vec::new();
    let plo = spec.pressure(lo);
    let phi = spec.pressure(hi);
    let (a, b) = (plo.lower_pressure, phi.lower_pressure);
    grid.push(lo);
    pressures.push(plo);
    grid.push(hi);
    pressures.push(phi);
    if !(a >= 0.0 && b <= 0.0) {
        return Err(Error::NoSignChange { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let p = spec.pressure(mid);
        let v = p.lower_pressure;
        grid.push(mid);
        pressures.push(p);
        if v >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DimensionReport {
        bowen_bracket: (lo, hi),
        t_grid: grid,
        pressures,
        system_provenance: serde_json::Value::Null,
        theoretical_target: None,
    })
}

/// Outer image enclosures `B(phi(c), K r |phi'(c)|)` are pairwise disjoint.
pub fn audit_open_set_condition(level: &NcifsLevel, koebe_k: f64) -> Result<bool> {
    let mut disks = Vec::with_capacity(level.branches.len());
    for b in &level.branches {
        let (z, d) = b.eval(level.domain.center)?;
        disks.push((z, koebe_k * level.domain.radius * d.norm()));
    }
    disks.sort_by(|a, b| (a.0.re - a.1).total_cmp(&(b.0.re - b.1)));
    // sweep on the real projection
    for i in 0..disks.len() {
        let (zi, ri) = disks[i];
        for &(zj, rj) in &disks[i + 1..] {
            if zj.re - rj > zi.re + ri {
                break;
            }
            if (zi - zj).norm() < ri + rj {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubexpAudit {
    /// Smallest `C` with `#I^(n) <= C n` over the prefix.
    pub c_bound: f64,
    pub max_log_ratio: f64,
}

pub fn audit_subexponential(system: &NcifsSystem, depth: usize) -> Result<SubexpAudit> {
    let mut c: f64 = 0.0;
    let mut lr: f64 = 0.0;
    for n in 1..=depth {
        let k = system.level(n)?.branches.len() as f64;
        c = c.max(k / n as f64);
        lr = lr.max(k.max(1.0).ln() / n as f64);
    }
    Ok(SubexpAudit { c_bound: c, max_log_ratio: lr })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionAudit {
    /// Recorded contraction rate.
    pub beta: f64,
    /// Depth from which `sup |phi_w'| < beta^m` holds.
    pub m0: usize,
    pub passed: bool,
}

/// Uses the per-depth maxima of a spectrum (exact depths only).
pub fn audit_contraction(spec: &WordSpectrum) -> ContractionAudit {
    let rates: Vec<(usize, f64)> = spec
        .word_log_norms
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            v.as_ref().map(|v| (i + 1, (v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / (i + 1) as f64).exp()))
        })
        .collect();
    let m0 = rates.iter().rev().take_while(|(_, r)| *r < 1.0).last().map(|(m, _)| *m).unwrap_or(usize::MAX);
    let beta = rates.iter().filter(|(m, _)| *m >= m0).map(|(_, r)| *r).fold(0.0, f64::max);
    ContractionAudit { beta, m0, passed: m0 != usize::MAX && beta < 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sums_of_similarities() {
        let s = NcifsSystem::similarity(&[0.25, 0.25, 0.25]).unwrap();
        let l = s.level(1).unwrap();
        assert!((level_sum(l, 1.0).unwrap() - 0.75).abs() < 1e-15);
        let t = 3f64.ln() / 4f64.ln();
        assert!((level_sum(l, t).unwrap() - 1.0).abs() < 1e-12);
        let empty = NcifsLevel { index_n: 1, domain: l.domain, codomain: l.codomain, branches: vec![] };
        assert_eq!(level_sum(&empty, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn exact_and_product() {
        let s = NcifsSystem::similarity(&[0.5, 1.0 / 3.0]).unwrap();
        assert!((exact_zn(&s, 2, 1.0, 100).unwrap() - 25.0 / 36.0).abs() < 1e-14);
        assert!((exact_zn(&s, 1, 0.7, 100).unwrap() - level_sum(s.level(1).unwrap(), 0.7).unwrap()).abs() < 1e-15);
        let p = product_lower_bound(&s, 3, 0.6).unwrap();
        let e = exact_zn(&s, 3, 0.6, 100).unwrap();
        assert!((p - e).abs() <= 1e-14 * e);
        assert!(matches!(exact_zn(&s, 30, 1.0, 1000), Err(Error::WordBudgetExceeded { .. })));
    }

    #[test]
    fn product_with_distortion() {
        // level sums 3 and 5 at t = 0.5 from unit-ratio similarities
        let unit = Disk::new(Complex64::new(0.0, 0.0), 1.0).unwrap();
        let mk = |k: usize| NcifsLevel {
            index_n: 1,
            domain: unit,
            codomain: unit,
            branches: (0..k)
                .map(|_| Arc::new(Similarity { from: unit.center, to: unit.center, ratio: Complex64::new(1.0, 0.0) }) as Arc<dyn Contraction>)
                .collect(),
        };
        let s = NcifsSystem::new(vec![mk(3), mk(5)], 12.0).unwrap();
        assert!((product_lower_bound(&s, 2, 0.5).unwrap() - 1.25).abs() < 1e-14);
    }

    #[test]
    fn moran_bisection() {
        let s = NcifsSystem::similarity(&[0.25; 3]).unwrap();
        let r = bowen_dimension(&s, 0.1, 1.5, 1e-6, 4, DEFAULT_WORD_CAP).unwrap();
        let t = 3f64.ln() / 4f64.ln();
        assert!(r.bowen_bracket.0 <= t + 1e-12 && t <= r.bowen_bracket.1 + 1e-12);
        assert!(r.bowen_bracket.1 - r.bowen_bracket.0 <= 1e-6);
        let s = NcifsSystem::similarity(&[0.5, 0.25]).unwrap();
        let r = bowen_dimension(&s, 0.1, 1.5, 1e-6, 4, DEFAULT_WORD_CAP).unwrap();
        let golden = ((1.0 + 5f64.sqrt()) / 2.0).ln() / 2f64.ln();
        assert!((r.bowen_bracket.0 - golden).abs() < 2e-6);
        let s = NcifsSystem::similarity(&[0.3]).unwrap();
        assert_eq!(bowen_dimension(&s, 0.1, 1.0, 1e-4, 4, 100).unwrap().bowen_bracket, (0.0, 0.0));
        let s = NcifsSystem::similarity(&[0.25; 3]).unwrap();
        assert!(matches!(bowen_dimension(&s, 0.9, 1.5, 1e-4, 4, 100), Err(Error::NoSignChange { .. })));
    }

    #[test]
    fn single_branch_pressure() {
        let s = NcifsSystem::similarity(&[0.3]).unwrap();
        let p = lower_pressure(&s, 0.8, 5, 100).unwrap();
        assert!((p.lower_pressure - 0.8 * 0.3f64.ln()).abs() < 1e-12);
        assert!(lower_pressure(&s, 0.8, 3, 100).is_err());
    }

    #[test]
    fn open_set_condition() {
        let s = NcifsSystem::similarity(&[0.25; 3]).unwrap();
        assert!(audit_open_set_condition(s.level(1).unwrap(), 1.0).unwrap());
        let l = s.level(1).unwrap();
        let mut dup = l.clone();
        dup.branches.push(l.branches[0].clone());
        assert!(!audit_open_set_condition(&dup, 1.0).unwrap());
    }

    #[test]
    fn contraction_and_growth_audits() {
        let s = NcifsSystem::similarity(&[0.25; 3]).unwrap();
        let spec = s.spectrum(4, 1000).unwrap();
        let a = audit_contraction(&spec);
        assert!(a.passed && (a.beta - 0.25).abs() < 1e-12 && a.m0 == 1);
        assert_eq!(audit_subexponential(&s, 4).unwrap().c_bound, 3.0);
    }
}
