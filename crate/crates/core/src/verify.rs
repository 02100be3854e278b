//! Independent checks on constructed systems: limit points at symbolic
//! addresses, forward orbits, derivative blowup along pullback chains, escape
//! audits for the escaping construction, and the Moran equation for similarity
//! systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::{is_finite, ComplexPoint};
use crate::constructions::KuEscapeSystem;
use crate::error::{Error, Result};
use crate::families::{derivative, evaluate, FamilyDescriptor, PerturbationSequence};
use crate::ncifs::NcifsSystem;

/// Relative mismatch tolerated between a pullback point and the forward image of its successor.
pub const FORWARD_RESIDUAL_TOL: f64 = 1e-8;
/// Final forward derivative modulus required by the blowup audit.
pub const BLOWUP_THRESHOLD: f64 = 1e3;
/// Relative slack on disk containment of chain points.
const CONTAINMENT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicAddress {
    /// `word[k - 1]` indexes a branch of level `k`.
    pub word: Vec<usize>,
    pub depth: usize,
}

impl SymbolicAddress {
    pub fn new(word: Vec<usize>) -> Self {
        let depth = word.len();
        SymbolicAddress { word, depth }
    }

    /// Constant address `(i, i, ..)` of length `depth`.
    pub fn constant(i: usize, depth: usize) -> Self {
        Self::new(vec![i; depth])
    }

    pub fn prefix(&self, depth: usize) -> Self {
        Self::new(self.word[..depth.min(self.depth)].to_vec())
    }

    fn validate(&self, system: &NcifsSystem) -> Result<()> {
        if self.word.len() != self.depth {
            return Err(Error::InvalidAddress(format!("word length {} differs from depth {}", self.word.len(), self.depth)));
        }
        if self.depth > system.depth_available() {
            return Err(Error::InvalidAddress(format!("depth {} beyond generated prefix {}", self.depth, system.levels.len())));
        }
        for (k, &w) in self.word.iter().enumerate() {
            let len = system.level(k + 1)?.branches.len();
            if w >= len {
                return Err(Error::InvalidAddress(format!("index {w} outside level {} alphabet of size {len}", k + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitTrace {
    pub start: ComplexPoint,
    /// `F^j(z)` for `j = 0 ..`; entry 0 is the start.
    pub iterates: Vec<ComplexPoint>,
    /// `|(F^j)'(z)|`, entry 0 is 1.
    pub derivative_moduli: Vec<f64>,
    /// `min_j |F^j(z)|` when it exceeds the requested radius.
    pub escaped_past: Option<f64>,
    /// The orbit stopped early at a pole or a non-finite value.
    pub truncated: bool,
}

/// One point of a pullback chain together with the elementary map that produced it.
#[derive(Debug, Clone, Copy)]
struct ChainPoint {
    point: ComplexPoint,
    /// `|(f^{-1})'|` of the step producing `point`; 1 for the starting center.
    inverse_deriv: f64,
}

/// Elementary pullback chain of `addr`: the center of `X_n`, then the image
/// after every elementary step of `phi^(n)`, `phi^(n-1)`, .., `phi^(1)`.
/// Also returns the chain index of the point landing in `X_{k}` for `k = n-1 .. 0`.
fn pullback_chain(system: &NcifsSystem, addr: &SymbolicAddress) -> Result<(Vec<ChainPoint>, Vec<usize>)> {
    addr.validate(system)?;
    let start = if addr.depth == 0 { system.level(1)?.codomain.center } else { system.level(addr.depth)?.domain.center };
    let mut chain = vec![ChainPoint { point: start, inverse_deriv: 1.0 }];
    let mut marks = Vec::with_capacity(addr.depth);
    for n in (1..=addr.depth).rev() {
        let branch = &system.level(n)?.branches[addr.word[n - 1]];
        for step in branch.steps() {
            let (z, d) = step.eval(chain.last().expect("non-empty").point)?;
            if !is_finite(z) || !d.norm().is_finite() {
                return Err(Error::NonFiniteValue(format!("pullback at level {n}")));
            }
            chain.push(ChainPoint { point: z, inverse_deriv: d.norm() });
        }
        marks.push(chain.len() - 1);
    }
    Ok((chain, marks))
}

/// `phi_w` applied to the center of `X_n`; depth 0 gives the center of `X_0`.
pub fn sample_limit_point(system: &NcifsSystem, addr: &SymbolicAddress) -> Result<ComplexPoint> {
    Ok(pullback_chain(system, addr)?.0.last().expect("non-empty").point)
}

/// Limit-point samples of every prefix of `addr`, depth 0 first.
pub fn prefix_limit_points(system: &NcifsSystem, addr: &SymbolicAddress) -> Result<Vec<ComplexPoint>> {
    (0..=addr.depth).map(|d| sample_limit_point(system, &addr.prefix(d))).collect()
}

/// Whether every intermediate point of the pullback of `addr` lies in the
/// closed disk `X_k` it is supposed to land in, so that each depth's sample
/// lies in the previous depth's cylinder image.
pub fn nested_containment(system: &NcifsSystem, addr: &SymbolicAddress) -> Result<bool> {
    let (chain, marks) = pullback_chain(system, addr)?;
    for (i, &m) in marks.iter().enumerate() {
        let n = addr.depth - i;
        let x = system.level(n)?.codomain;
        if (chain[m].point - x.center).norm() > x.radius * (1.0 + CONTAINMENT_SLACK) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `F^j(z0)` for `j = 0 ..= steps` with `F^j = f_j o .. o f_1`, plus the chain-rule
/// derivative moduli. A pole hit or non-finite value ends the trace early.
/// `escape_radius` is the threshold compared against `min_j |F^j(z0)|`.
pub fn forward_orbit(
    fam: &FamilyDescriptor,
    perturb: &PerturbationSequence,
    z0: ComplexPoint,
    steps: usize,
    escape_radius: f64,
) -> Result<OrbitTrace> {
    fam.numeric()?;
    let mut iterates = vec![z0];
    let mut moduli = vec![1.0];
    let mut truncated = false;
    let mut z = z0;
    let mut d = 1.0;
    for j in 1..=steps {
        let st = perturb.step(j);
        let next = evaluate(fam, &st, z).and_then(|w| Ok((w, derivative(fam, &st, z)?.norm())));
        match next {
            Ok((w, dz)) if is_finite(w) && (d * dz).is_finite() => {
                d *= dz;
                z = w;
                iterates.push(z);
                moduli.push(d);
            }
            Ok(_) | Err(Error::PoleHit) | Err(Error::NonFiniteValue(_)) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let least = iterates.iter().map(|w| w.norm()).fold(f64::INFINITY, f64::min);
    Ok(OrbitTrace {
        start: z0,
        iterates,
        derivative_moduli: moduli,
        escaped_past: (least > escape_radius).then_some(least),
        truncated,
    })
}

/// Forward data along the pullback chain of one address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOrbit {
    pub address: SymbolicAddress,
    /// `F^j(z)` for `j = 0 ..= T`, where `z` is the limit point and `T` the number of elementary steps.
    pub iterates: Vec<ComplexPoint>,
    /// `|(F^j)'(z)|` from the family derivative.
    pub derivative_moduli: Vec<f64>,
    /// `|(F^{T(k)})'(z)|` at the end of each level `k = 1 ..= depth`.
    pub level_moduli: Vec<f64>,
    /// Largest `|f(p_{j}) - p_{j+1}| / max(1, |p_{j+1}|)` along the chain.
    pub forward_residual: f64,
    /// Largest relative deviation of `|f'| |(f^{-1})'|` from 1.
    pub derivative_residual: f64,
    /// Every level endpoint lies in its closed disk `X_k`.
    pub inside_disks: bool,
}

/// Recovers the forward orbit of the limit point at `addr` from its pullback
/// chain and recomputes each step with the family map `f_j = lambda_j f0 + c_j`.
pub fn chain_orbit(
    system: &NcifsSystem,
    addr: &SymbolicAddress,
    fam: &FamilyDescriptor,
    perturb: &PerturbationSequence,
) -> Result<ChainOrbit> {
    let (chain, marks) = pullback_chain(system, addr)?;
    let total = chain.len() - 1;
    let iterates: Vec<ComplexPoint> = chain.iter().rev().map(|c| c.point).collect();
    let mut moduli = vec![1.0];
    let mut forward_residual: f64 = 0.0;
    let mut derivative_residual: f64 = 0.0;
    for j in 1..=total {
        // forward time j inverts the chain step producing chain[total - j + 1]
        let st = perturb.step(j);
        let x = iterates[j - 1];
        let fx = evaluate(fam, &st, x)?;
        let dfx = derivative(fam, &st, x)?.norm();
        forward_residual = forward_residual.max((fx - iterates[j]).norm() / iterates[j].norm().max(1.0));
        derivative_residual = derivative_residual.max((dfx * chain[total - j + 1].inverse_deriv - 1.0).abs());
        moduli.push(moduli[j - 1] * dfx);
    }
    let mut inside_disks = true;
    let mut level_moduli = Vec::with_capacity(addr.depth);
    for k in 1..=addr.depth {
        // the chain point after level k lands in X_{k-1}
        let x = system.level(k)?.codomain;
        if (chain[marks[addr.depth - k]].point - x.center).norm() > x.radius * (1.0 + CONTAINMENT_SLACK) {
            inside_disks = false;
        }
        // the orbit reaches X_k at forward time total - (chain index of that point)
        let in_xk = if k == addr.depth { 0 } else { marks[addr.depth - k - 1] };
        level_moduli.push(moduli[total - in_xk]);
    }
    Ok(ChainOrbit {
        address: addr.clone(),
        iterates,
        derivative_moduli: moduli,
        level_moduli,
        forward_residual,
        derivative_residual,
        inside_disks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub passed: bool,
    /// Level-end forward derivative moduli per address.
    pub level_moduli: Vec<Vec<f64>>,
    pub failures: Vec<String>,
}

/// Forward derivative growth along the orbits of sampled limit points: the
/// level-end moduli must increase strictly beyond depth 2 and exceed
/// [`BLOWUP_THRESHOLD`] at the final depth while the orbit stays in the
/// construction's disks and agrees with the family maps.
pub fn derivative_blowup_report(
    system: &NcifsSystem,
    addresses: &[SymbolicAddress],
    fam: &FamilyDescriptor,
    perturb: &PerturbationSequence,
) -> BlowupReport {
    let mut failures = Vec::new();
    let mut level_moduli = Vec::with_capacity(addresses.len());
    for addr in addresses {
        if addr.depth < 4 {
            failures.push(format!("{:?}: depth {} below 4", addr.word, addr.depth));
            continue;
        }
        let orbit = match chain_orbit(system, addr, fam, perturb) {
            Ok(o) => o,
            Err(e) => {
                failures.push(format!("{:?}: {e}", addr.word));
                continue;
            }
        };
        let lm = &orbit.level_moduli;
        if orbit.forward_residual > FORWARD_RESIDUAL_TOL || orbit.derivative_residual > 1e-6 {
            failures.push(format!(
                "{:?}: chain disagrees with the family maps (residuals {:e}, {:e})",
                addr.word, orbit.forward_residual, orbit.derivative_residual
            ));
        } else if !orbit.inside_disks {
            failures.push(format!("{:?}: orbit leaves the construction disks", addr.word));
        } else if lm[1..].windows(2).any(|w| !(w[1] > w[0])) {
            failures.push(format!("{:?}: moduli not increasing beyond depth 2: {lm:?}", addr.word));
        } else if !(lm[lm.len() - 1] > BLOWUP_THRESHOLD) {
            failures.push(format!("{:?}: final modulus {} below {BLOWUP_THRESHOLD}", addr.word, lm[lm.len() - 1]));
        }
        level_moduli.push(orbit.level_moduli);
    }
    BlowupReport { passed: failures.is_empty(), level_moduli, failures }
}

pub fn derivative_blowup_audit(
    system: &NcifsSystem,
    addresses: &[SymbolicAddress],
    fam: &FamilyDescriptor,
    perturb: &PerturbationSequence,
) -> bool {
    derivative_blowup_report(system, addresses, fam, perturb).passed
}

/// Escape audit of one limit point of the escaping construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeAudit {
    pub address: SymbolicAddress,
    /// `F^j(z)` for `j = 0 ..= T`.
    pub iterates: Vec<ComplexPoint>,
    /// Scheduled pole for each iterate.
    pub scheduled_poles: Vec<ComplexPoint>,
    pub min_modulus: f64,
    pub max_pole_distance: f64,
    pub forward_residual: f64,
    pub r2: f64,
    pub s: f64,
    pub passed: bool,
}

/// Checks `|F^j(z)| > R2` and `|F^j(z) - a_{(j)}| < S` for the scheduled poles
/// along the whole orbit of the limit point at `addr`, and that the orbit is
/// reproduced by the perturbed family maps.
///
/// The orbit is read off the pullback chain: plain forward iteration loses all
/// accuracy after a couple of steps since `|f'|` is of order `|a|^2` near the poles.
pub fn escape_audit(sys: &KuEscapeSystem, addr: &SymbolicAddress) -> Result<EscapeAudit> {
    let orbit = chain_orbit(&sys.system, addr, &sys.family, &sys.perturb)?;
    let poles: Vec<ComplexPoint> = sys.chain_poles(&addr.word)?.iter().rev().map(|&i| sys.poles[i].location).collect();
    if poles.len() != orbit.iterates.len() {
        return Err(Error::InvalidAddress(format!(
            "schedule lists {} poles for an orbit of {} points",
            poles.len(),
            orbit.iterates.len()
        )));
    }
    let min_modulus = orbit.iterates.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let max_pole_distance = orbit.iterates.iter().zip(&poles).map(|(z, a)| (z - a).norm()).fold(0.0, f64::max);
    let g = &sys.geometry;
    let passed = min_modulus > g.r2 && max_pole_distance < g.s && orbit.forward_residual <= FORWARD_RESIDUAL_TOL;
    Ok(EscapeAudit {
        address: addr.clone(),
        iterates: orbit.iterates,
        scheduled_poles: poles,
        min_modulus,
        max_pole_distance,
        forward_residual: orbit.forward_residual,
        r2: g.r2,
        s: g.s,
        passed,
    })
}

/// `count` addresses of length `depth`: a Weyl lattice in each coordinate,
/// rotated by a seeded random shift per level.
pub fn sample_addresses(system: &NcifsSystem, depth: usize, count: usize, seed: u64) -> Result<Vec<SymbolicAddress>> {
    if depth > system.depth_available() {
        return Err(Error::InvalidAddress(format!("depth {depth} beyond generated prefix {}", system.levels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut lens = Vec::with_capacity(depth);
    let mut shifts = Vec::with_capacity(depth);
    for k in 1..=depth {
        let len = system.level(k)?.branches.len();
        if len == 0 {
            return Err(Error::InvalidAddress(format!("level {k} has no branches")));
        }
        lens.push(len);
        shifts.push(rng.gen::<f64>());
    }
    Ok((0..count)
        .map(|i| {
            let word = (0..depth)
                .map(|k| {
                    let u = (shifts[k] + golden * (i as f64 + 1.0) * (k as f64 + 1.0)).fract();
                    ((u * lens[k] as f64) as usize).min(lens[k] - 1)
                })
                .collect();
            SymbolicAddress::new(word)
        })
        .collect())
}

/// Root `t` of `sum r_i^t = 1`, the dimension of a self-similar set with
/// separated pieces of ratios `r_i`, by bisection to 1e-12.
pub fn moran_oracle(ratios: &[f64]) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::DomainError("at least one ratio is required".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::DomainError(format!("ratio {r} outside (0, 1)")));
    }
    if ratios.len() == 1 {
        return Ok(0.0);
    }
    let g = |t: f64| ratios.iter().map(|r| r.powf(t)).sum::<f64>() - 1.0;
    let r_max = ratios.iter().cloned().fold(0.0, f64::max);
    // n r_max^t = 1 bounds the root from above
    let (mut lo, mut hi) = (0.0, (ratios.len() as f64).ln() / -r_max.ln());
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::Disk;
    use crate::ncifs::{NcifsLevel, Similarity};
    use num_complex::Complex64;
    use std::sync::Arc;

    #[test]
    fn moran_examples() {
        let r = moran_oracle(&[0.25; 3]).unwrap();
        assert!((r - 3f64.ln() / 4f64.ln()).abs() < 1e-11);
        let golden = (0.5 * (1.0 + 5f64.sqrt())).log2();
        assert!((moran_oracle(&[0.5, 0.25]).unwrap() - golden).abs() < 1e-11);
        assert_eq!(moran_oracle(&[0.3]).unwrap(), 0.0);
        assert!(matches!(moran_oracle(&[0.5, 1.0]), Err(Error::DomainError(_))));
        assert!(matches!(moran_oracle(&[]), Err(Error::DomainError(_))));
    }

    #[test]
    fn moran_fixed_point_and_depth_zero() {
        let sys = NcifsSystem::similarity(&[0.25; 3]).unwrap();
        let z = sample_limit_point(&sys, &SymbolicAddress::constant(0, 20)).unwrap();
        // branch 0 is w -> 3/4 + w/4, fixed at 1
        assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        assert_eq!(sample_limit_point(&sys, &SymbolicAddress::new(vec![])).unwrap(), Complex64::new(0.0, 0.0));
        assert!(matches!(sample_limit_point(&sys, &SymbolicAddress::new(vec![3])), Err(Error::InvalidAddress(_))));
        let pts = prefix_limit_points(&sys, &SymbolicAddress::new(vec![1, 2, 0, 1, 2])).unwrap();
        for w in pts.windows(3) {
            assert!((w[2] - w[1]).norm() <= 0.25 * (w[1] - w[0]).norm() + 1e-15);
        }
        assert!(nested_containment(&sys, &SymbolicAddress::new(vec![1, 2, 0, 1, 2])).unwrap());
    }

    #[test]
    fn empty_orbit_and_attracting_basin() {
        let fam = FamilyDescriptor::tan_power(Complex64::new(0.5, 0.0), 1).unwrap();
        let z0 = Complex64::new(0.3, 0.1);
        let tr = forward_orbit(&fam, &PerturbationSequence::zero(), z0, 0, 1.0).unwrap();
        assert_eq!(tr.iterates, vec![z0]);
        // 0 attracts with multiplier 1/2
        let tr = forward_orbit(&fam, &PerturbationSequence::zero(), z0, 60, 1.0).unwrap();
        assert!(tr.escaped_past.is_none() && !tr.truncated);
        assert!(tr.iterates.last().unwrap().norm() < 1e-12);
    }

    #[test]
    fn identity_system_does_not_blow_up() {
        let unit = Disk::new(Complex64::new(0.0, 0.0), 1.0).unwrap();
        let id = Similarity { from: unit.center, to: unit.center, ratio: Complex64::new(1.0, 0.0) };
        let level = NcifsLevel { index_n: 1, domain: unit, codomain: unit, branches: vec![Arc::new(id)] };
        let sys = NcifsSystem::stationary(level, 1.0).unwrap();
        let fam = FamilyDescriptor::tan_power(Complex64::new(1.0, 0.0), 1).unwrap();
        let addrs = vec![SymbolicAddress::constant(0, 6)];
        assert!(!derivative_blowup_audit(&sys, &addrs, &fam, &PerturbationSequence::zero()));
    }

    #[test]
    fn weyl_addresses_cover_alphabet() {
        let sys = NcifsSystem::similarity(&[0.2; 5]).unwrap();
        let a = sample_addresses(&sys, 3, 50, 7).unwrap();
        assert_eq!(a, sample_addresses(&sys, 3, 50, 7).unwrap());
        for k in 0..3 {
            let mut seen = [false; 5];
            a.iter().for_each(|x| seen[x.word[k]] = true);
            assert!(seen.iter().all(|s| *s));
        }
    }
}
