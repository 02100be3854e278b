//! Upper bound for the dimension of escaping points: cover sums over pullbacks
//! of small pole neighbourhoods, and the tail radius `R3` that makes the
//! per-level factor at most 1.

use serde::{Deserialize, Serialize};

use super::{point_set_diameter, pstar_poles, KuGeometry};
use crate::complex::{boundary_points, pairwise_sum, ComplexPoint, Disk};
use crate::error::{Error, Result};
use crate::families::{FamilyDescriptor, InverseBranch, PerturbationSequence, PerturbationStep, PoleRecord};
use crate::poles::{estimate_order, ExponentEstimate};

/// Largest number of pullback chains enumerated directly per level.
pub const ENUMERATION_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSumReport {
    pub t: f64,
    pub levels: Vec<usize>,
    /// Chained bound `L^t (2/S)^{t/M} factor^n` per level.
    pub sigma_n: Vec<f64>,
    /// `M K^t sum_{a in I} |a|^{-t(beta+M+1)/M}`.
    pub per_level_factor: f64,
    /// Direct sums of `diam^t` over composite pullbacks, where enumerated.
    pub sigma_enumerated: Vec<Option<f64>>,
    pub alphabet_size: usize,
    pub k_comp: f64,
    pub l_diam: f64,
    pub s: f64,
    pub m_bound: u32,
}

impl CoverSumReport {
    /// Whether every enumerated sum respects the chained bound (relative slack `rel`).
    pub fn enumeration_within_bound(&self, rel: f64) -> bool {
        self.sigma_enumerated
            .iter()
            .zip(&self.sigma_n)
            .all(|(e, b)| e.map_or(true, |e| e <= b * (1.0 + rel)))
    }
}

/// Cover sums for levels `1..=n_max` over the alphabet `I`.
///
/// Pullback chains `f^{-1}_{1,a0<-a1} o .. o f^{-1}_{n,a_{n-1}<-a_n}` of the
/// component `B_{a_n}(R/2)` are enumerated directly for `n <= 3` when at most
/// [`ENUMERATION_CAP`] chains exist; a chain that fails to evaluate leaves that
/// level unenumerated.
pub fn escape_cover_sum(
    fam: &FamilyDescriptor,
    t: f64,
    s: f64,
    alphabet: &[PoleRecord],
    n_max: usize,
    perturb: &PerturbationSequence,
    geom: &KuGeometry,
) -> CoverSumReport {
    let m = geom.m_bound;
    let mf = m as f64;
    let e = t * (fam.beta + mf + 1.0) / mf;
    let terms: Vec<f64> = alphabet.iter().map(|a| a.location.norm().powf(-e)).collect();
    let factor = mf * geom.k_comp.powf(t) * pairwise_sum(&terms);
    let pre = geom.l_diam.powf(t) * (2.0 / s).powf(t / mf);
    let levels: Vec<usize> = (1..=n_max).collect();
    let sigma_n: Vec<f64> = levels.iter().map(|&n| if alphabet.is_empty() { 0.0 } else { pre * factor.powi(n as i32) }).collect();
    let sigma_enumerated = levels
        .iter()
        .map(|&n| {
            if alphabet.is_empty() {
                return Some(0.0);
            }
            let branches = (alphabet.len() as f64).powi(n as i32 + 1) * mf.powi(n as i32);
            if n > 3 || branches > ENUMERATION_CAP as f64 {
                return None;
            }
            enumerate_cover(fam, t, alphabet, n, perturb).ok()
        })
        .collect();
    CoverSumReport {
        t,
        levels,
        sigma_n,
        per_level_factor: factor,
        sigma_enumerated,
        alphabet_size: alphabet.len(),
        k_comp: geom.k_comp,
        l_diam: geom.l_diam,
        s,
        m_bound: m,
    }
}

fn enumerate_cover(fam: &FamilyDescriptor, t: f64, alphabet: &[PoleRecord], n: usize, perturb: &PerturbationSequence) -> Result<f64> {
    let r3 = alphabet.iter().map(|a| a.location.norm()).fold(f64::INFINITY, f64::min);
    // R > 2 R4 and R4 > 4 R3
    let radius = 0.5 * 2.01 * 4.01 * r3;
    let mut total = 0.0;
    let k = alphabet.len();
    let mut idx = vec![0usize; n + 1];
    loop {
        // innermost set: the component at a_n, then pull back through levels n .. 1
        let a_n = &alphabet[idx[n]];
        let mut sets: Vec<Vec<ComplexPoint>> = vec![component_boundary(fam, a_n, radius)?];
        for lvl in (1..=n).rev() {
            let target = &alphabet[idx[lvl - 1]];
            let step = perturb.step(lvl);
            let mut next = Vec::new();
            for pts in &sets {
                for j in 1..=target.multiplicity {
                    let br = InverseBranch {
                        source_disk: Disk::new(alphabet[idx[lvl]].location, 1.0)?,
                        target_pole: *target,
                        branch_index: j,
                        perturbation: step,
                        family: *fam,
                    };
                    next.push(pts.iter().map(|w| br.value(*w)).collect::<Result<Vec<_>>>()?);
                }
            }
            sets = next;
        }
        for pts in &sets {
            total += point_set_diameter(pts).powf(t);
        }
        // odometer over I^{n+1}
        let mut p = 0;
        loop {
            idx[p] += 1;
            if idx[p] < k {
                break;
            }
            idx[p] = 0;
            p += 1;
            if p > n {
                return Ok(total);
            }
        }
    }
}

fn component_boundary(fam: &FamilyDescriptor, a: &PoleRecord, radius: f64) -> Result<Vec<ComplexPoint>> {
    let mut pts = Vec::new();
    for j in 1..=a.multiplicity {
        let br = InverseBranch {
            source_disk: Disk::new(ComplexPoint::new(radius, 0.0), 0.5 * radius)?,
            target_pole: *a,
            branch_index: j,
            perturbation: PerturbationStep::identity(),
            family: *fam,
        };
        for w in boundary_points(ComplexPoint::new(0.0, 0.0), radius, 32) {
            pts.push(br.value(w)?);
        }
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R3Selection {
    pub t: f64,
    pub r3: f64,
    /// `R3` lies beyond the catalogue and comes from the fitted tail alone.
    pub extrapolated: bool,
    /// `M K^t (catalogue tail + integral tail)` at `R3`.
    pub lhs: f64,
    pub exponent: f64,
    pub rho_hat: f64,
    pub ci_halfwidth: f64,
    pub catalog_size: usize,
}

/// Moduli of a pole catalogue together with the fitted counting exponent,
/// reusable across exponents `t`.
#[derive(Debug, Clone)]
pub struct TailCatalog {
    moduli: Vec<f64>,
    pub estimate: ExponentEstimate,
    m_bound: u32,
    beta: f64,
    k_comp: f64,
    r_min: f64,
}

impl TailCatalog {
    pub fn new(fam: &FamilyDescriptor, pole_budget: usize, geom: &KuGeometry) -> Result<Self> {
        let poles = pstar_poles(fam, 1.0, None, pole_budget)?;
        let estimate = estimate_order(&poles)?;
        Ok(TailCatalog {
            moduli: poles.iter().map(|p| p.location.norm()).collect(),
            estimate,
            m_bound: geom.m_bound,
            beta: fam.beta,
            k_comp: geom.k_comp,
            r_min: geom.r2,
        })
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    pub fn select(&self, t: f64) -> Result<R3Selection> {
        if !(t > 0.0) {
            return Err(Error::NotSupercritical { t, reason: "t must be positive".into() });
        }
        let m = self.m_bound as f64;
        let s = t * (self.beta + m + 1.0) / m;
        let est = &self.estimate;
        let rho = est.rho_hat;
        if s <= rho + est.ci_halfwidth {
            return Err(Error::NotSupercritical {
                t,
                reason: format!("tail exponent {s} does not exceed fitted order {rho} + {}", est.ci_halfwidth),
            });
        }
        let pre = m * self.k_comp.powf(t);
        let r_max = *self.moduli.last().expect("catalogue is non-empty");
        let int_tail = est.tail_sum(r_max, s);
        // suffix[i] = sum over catalogue entries i..
        let mut suffix = vec![0.0; self.moduli.len() + 1];
        for i in (0..self.moduli.len()).rev() {
            suffix[i] = suffix[i + 1] + self.moduli[i].powf(-s);
        }
        for (i, &r) in self.moduli.iter().enumerate() {
            if r < self.r_min {
                continue;
            }
            // poles strictly beyond r
            let j = i + self.moduli[i..].partition_point(|x| *x <= r);
            let lhs = pre * (suffix[j] + int_tail);
            if lhs <= 1.0 {
                return Ok(self.selection(t, r, false, lhs, s));
            }
        }
        let c = est.log_prefactor.exp();
        let r3 = (pre * c * rho / (s - rho)).powf(1.0 / (s - rho)).max(r_max);
        let lhs = pre * est.tail_sum(r3, s);
        Ok(self.selection(t, r3, true, lhs, s))
    }

    fn selection(&self, t: f64, r3: f64, extrapolated: bool, lhs: f64, s: f64) -> R3Selection {
        R3Selection {
            t,
            r3,
            extrapolated,
            lhs,
            exponent: s,
            rho_hat: self.estimate.rho_hat,
            ci_halfwidth: self.estimate.ci_halfwidth,
            catalog_size: self.moduli.len(),
        }
    }
}

/// Least tail radius `R3 >= R2` with `M K^t sum_{|a| > R3} |a|^{-t(beta+M+1)/M} <= 1`.
pub fn select_r3(fam: &FamilyDescriptor, t: f64, pole_budget: usize, geom: &KuGeometry) -> Result<R3Selection> {
    TailCatalog::new(fam, pole_budget, geom)?.select(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    /// First scanned exponent where a finite `R3` exists.
    pub transition: Option<f64>,
    pub samples: Vec<(f64, bool)>,
}

/// Scans `t = lo, lo + step, ..` up to `hi` and reports where `R3` first exists.
pub fn transition_scan(
    fam: &FamilyDescriptor,
    lo: f64,
    hi: f64,
    step: f64,
    pole_budget: usize,
    geom: &KuGeometry,
) -> Result<TransitionReport> {
    if !(step > 0.0 && hi >= lo) {
        return Err(Error::DomainError(format!("invalid scan {lo}:{hi}:{step}")));
    }
    let cat = TailCatalog::new(fam, pole_budget, geom)?;
    let mut samples = Vec::new();
    let mut transition = None;
    let n = ((hi - lo) / step).round() as usize;
    for i in 0..=n {
        let t = lo + step * i as f64;
        let ok = match cat.select(t) {
            Ok(_) => true,
            Err(Error::NotSupercritical { .. }) => false,
            Err(e) => return Err(e),
        };
        if ok && transition.is_none() {
            transition = Some(t);
        }
        samples.push((t, ok));
    }
    Ok(TransitionReport { transition, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::{ku_geometry, ConstantLedger};

    fn zsinz() -> (FamilyDescriptor, KuGeometry) {
        let f = FamilyDescriptor::z_sin_z();
        let g = ku_geometry(&f, None, None, None, &mut ConstantLedger::default()).unwrap();
        (f, g)
    }

    #[test]
    fn empty_alphabet_is_zero() {
        let (f, g) = zsinz();
        let r = escape_cover_sum(&f, 0.4, g.s, &[], 3, &PerturbationSequence::zero(), &g);
        assert_eq!(r.per_level_factor, 0.0);
        assert!(r.sigma_n.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn r3_dichotomy() {
        let (f, g) = zsinz();
        let cat = TailCatalog::new(&f, 20_000, &g).unwrap();
        let sel = cat.select(0.5).unwrap();
        assert!(sel.lhs <= 1.0 && sel.r3 >= g.r2);
        assert!(matches!(cat.select(1.0 / 3.0), Err(Error::NotSupercritical { .. })));
        let fast = cat.select(2.0).unwrap();
        assert!(fast.r3 <= sel.r3 && !fast.extrapolated);
        assert!(!sel.extrapolated);
    }

    #[test]
    fn enumerated_sums_below_chained_bound() {
        let (f, g) = zsinz();
        let sel = select_r3(&f, 0.5, 20_000, &g).unwrap();
        let alphabet = pstar_poles(&f, sel.r3, None, 6).unwrap();
        let r = escape_cover_sum(&f, 0.5, g.s, &alphabet, 3, &PerturbationSequence::zero(), &g);
        assert!(r.sigma_enumerated[0].is_some() && r.sigma_enumerated[1].is_some());
        assert!(r.enumeration_within_bound(1e-12), "{:?} vs {:?}", r.sigma_enumerated, r.sigma_n);
    }
}
