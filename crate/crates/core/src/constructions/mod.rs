//! Builders for the three pole-based systems (Mayer b-point system, escaping
//! KU system, affine KU system) and the cover-sum upper bound for escaping sets.
//!
//! Every builder records the constants it resolved in a [`ConstantLedger`] with
//! their provenance, and fails with `ConfigInfeasible` rather than emitting a
//! system whose audits do not pass.

pub mod cover;
pub mod ku_affine;
pub mod ku_escape;
pub mod mayer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::complex::{boundary_points, ComplexPoint, Disk};
use crate::error::{Error, Result};
use crate::families::{
    branch_comparability, enumerate_poles_count, theoretical_dimension, FamilyDescriptor, InverseBranch,
    PerturbationSequence, PerturbationStep, PoleRecord,
};
use crate::ncifs::NcifsSystem;

pub use cover::{escape_cover_sum, select_r3, transition_scan, CoverSumReport, R3Selection};
pub use ku_affine::{build_ku_affine, KuAffineConfig, KuAffineSystem};
pub use ku_escape::{build_ku_escape, EscapeLevel, EscapeSchedule, KuEscapeConfig, KuEscapeSystem};
pub use mayer::{audited_mayer_k, build_mayer, MayerConfig, MayerSystem};

/// Safety factor applied to every audited constant.
pub const AUDIT_INFLATION: f64 = 1.5;
/// Poles examined per stagnation window of the schedule searches.
pub const STAGNATION_WINDOW: usize = 1024;
/// Relative improvement below which a window counts as stagnant.
pub const STAGNATION_REL: f64 = 1e-6;
/// Default pole budget for the schedule searches.
pub const DEFAULT_POLE_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Audited,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Resolved constants and audit outcomes of one construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantLedger {
    pub constants: BTreeMap<String, Constant>,
    pub audits: Vec<AuditRecord>,
}

impl ConstantLedger {
    pub fn set(&mut self, name: &str, value: f64, provenance: Provenance) {
        self.constants.insert(name.to_string(), Constant { value, provenance });
    }

    /// Records `user` when the value was given, else `fallback`.
    pub fn set_from(&mut self, name: &str, value: f64, given: bool, fallback: Provenance) {
        self.set(name, value, if given { Provenance::User } else { fallback });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.constants.get(name).map(|c| c.value)
    }

    pub fn audit(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.audits.push(AuditRecord { name: name.to_string(), passed, detail: detail.into() });
    }

    /// Records the audit and turns a failure into `ConfigInfeasible`.
    pub fn require(&mut self, name: &str, passed: bool, detail: impl Into<String>) -> Result<()> {
        let detail = detail.into();
        self.audit(name, passed, detail.clone());
        if passed {
            Ok(())
        } else {
            Err(Error::ConfigInfeasible(format!("{name}: {detail}")))
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Geometry shared by the two KU builders and the cover sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KuGeometry {
    /// Largest admissible stand-off radius: `dist(Sing, P*) > 2 R*`.
    pub stand_off: f64,
    /// `R*` used by the construction (`S*/2`).
    pub r_star: f64,
    /// Separation radius `R†`.
    pub r_dagger: f64,
    pub s_star: f64,
    pub s: f64,
    /// Single audited radius replacing the `R0 .. R4` ladder.
    pub r2: f64,
    /// Comparability constant of the inverse-branch derivative estimate.
    pub k_comp: f64,
    /// Diameter constant for the components `B_a(R)`.
    pub l_diam: f64,
    pub m_bound: u32,
    pub m_star: u32,
    /// `rho M*/(beta + M* + 1)`.
    pub rho_star: f64,
}

impl KuGeometry {
    /// Exponent `t (beta + m + 1)/m` of the Borel sums for multiplicity `m`.
    pub fn sum_exponent(&self, fam: &FamilyDescriptor, t: f64, m: u32) -> f64 {
        let m = m as f64;
        t * (fam.beta + m + 1.0) / m
    }
}

/// Resolves `R*, R†, S*, S, R2, K, L` for a family, auditing every derived value.
pub fn ku_geometry(
    fam: &FamilyDescriptor,
    s: Option<f64>,
    s_star: Option<f64>,
    r2: Option<f64>,
    ledger: &mut ConstantLedger,
) -> Result<KuGeometry> {
    fam.numeric()?;
    let stand_off = fam.stand_off()?;
    let r_dagger = 0.98 * fam.separation()?;
    let s_star_max = (2.0 * stand_off).min(r_dagger);
    let s_star = match s_star {
        Some(v) => {
            ledger.require("S_star_admissible", v > 0.0 && v <= s_star_max, format!("S* = {v}, max {s_star_max}"))?;
            v
        }
        None => s_star_max,
    };
    ledger.set("R_star_max", stand_off, Provenance::Audited);
    ledger.set("R_dagger", r_dagger, Provenance::Audited);
    ledger.set_from("S_star", s_star, s_star_max != s_star, Provenance::Audited);
    let r_star = 0.5 * s_star;
    ledger.set("R_star", r_star, Provenance::Analytic);
    let s = s.unwrap_or(0.2 * s_star);
    ledger.require("S_range", s > 0.0 && s < 0.5 * s_star, format!("need 0 < S = {s} < S*/2 = {}", 0.5 * s_star))?;
    ledger.set("S", s, Provenance::Analytic);

    // B_R inside f0(B(a, S*)) as soon as R exceeds max |f0| on the circle |z - a| = S*
    let sample: Vec<PoleRecord> = pstar_poles(fam, 0.0, None, 64)?;
    let mut cover: f64 = 0.0;
    for a in &sample {
        for z in boundary_points(a.location, s_star, 64) {
            cover = cover.max(fam.f0(z)?.norm());
        }
    }
    let r_cover = AUDIT_INFLATION * cover;
    ledger.set("R_cover", r_cover, Provenance::Audited);
    let r2_min = s_star.max(r_dagger).max(r_cover).max(1.0);
    let r2 = match r2 {
        Some(v) => {
            ledger.require("R2_admissible", v >= r2_min, format!("R2 = {v} below audited minimum {r2_min}"))?;
            v
        }
        None => r2_min,
    };
    ledger.set_from("R2", r2, r2 != r2_min, Provenance::Audited);

    let m_star = fam.mult_star;
    let alphabet = pstar_poles(fam, 2.0 * r2, Some(m_star), 1001)?;
    let mut targets: Vec<PoleRecord> = alphabet.iter().take(24).copied().collect();
    targets.extend([alphabet[200], alphabet[1000]]);
    let mut sources: Vec<ComplexPoint> = alphabet.iter().take(6).map(|p| p.location).collect();
    sources.push(alphabet[500].location);
    let k_raw = branch_comparability(fam, &targets, &sources, s, 32)?;
    let k_comp = AUDIT_INFLATION * k_raw;
    ledger.set("K", k_comp, Provenance::Audited);

    let mut l_raw: f64 = 1.0;
    let probe: Vec<PoleRecord> = alphabet.iter().take(16).copied().chain([alphabet[200]]).collect();
    for a in &probe {
        let m = a.multiplicity as f64;
        for mult in [2.0, 4.0, 16.0, 128.0] {
            let radius = mult * r2;
            let d = component_diameter(fam, a, radius)?;
            let model = radius.powf(-1.0 / m) * a.location.norm().powf(-fam.beta / m);
            l_raw = l_raw.max(d / model);
        }
    }
    let l_diam = AUDIT_INFLATION * l_raw;
    ledger.set("L", l_diam, Provenance::Audited);
    let rho_star = theoretical_dimension(fam.order_rho, fam.beta, m_star)?;
    ledger.set("M", fam.mult_bound as f64, Provenance::Analytic);
    ledger.set("M_star", m_star as f64, Provenance::Analytic);
    Ok(KuGeometry {
        stand_off,
        r_star,
        r_dagger,
        s_star,
        s,
        r2,
        k_comp,
        l_diam,
        m_bound: fam.mult_bound,
        m_star,
        rho_star,
    })
}

/// Diameter of the component of `f0^{-1}({|w| > radius})` at pole `a`,
/// from the images of 64 points of the circle `|w| = radius` under every root branch.
pub fn component_diameter(fam: &FamilyDescriptor, a: &PoleRecord, radius: f64) -> Result<f64> {
    let mut pts = Vec::new();
    for j in 1..=a.multiplicity {
        let br = InverseBranch {
            source_disk: Disk::new(ComplexPoint::new(radius, 0.0), 0.5 * radius)?,
            target_pole: *a,
            branch_index: j,
            perturbation: PerturbationStep::identity(),
            family: *fam,
        };
        for w in boundary_points(ComplexPoint::new(0.0, 0.0), radius, 64) {
            pts.push(br.value(w)?);
        }
    }
    Ok(point_set_diameter(&pts))
}

pub fn point_set_diameter(pts: &[ComplexPoint]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, p) in pts.iter().enumerate() {
        for q in &pts[i + 1..] {
            d = d.max((p - q).norm());
        }
    }
    d
}

/// First `count` poles of the co-finite subset with `|a| > r_min`, optionally of one multiplicity.
pub fn pstar_poles(fam: &FamilyDescriptor, r_min: f64, mult: Option<u32>, count: usize) -> Result<Vec<PoleRecord>> {
    let mut s = PoleStream::new(fam, r_min, mult);
    s.take(count)
}

/// Lazily extended, modulus-ordered list of admissible poles.
#[derive(Debug, Clone)]
pub struct PoleStream {
    fam: FamilyDescriptor,
    r_min: f64,
    mult: Option<u32>,
    cache: Vec<PoleRecord>,
    raw: usize,
}

impl PoleStream {
    pub fn new(fam: &FamilyDescriptor, r_min: f64, mult: Option<u32>) -> Self {
        PoleStream { fam: *fam, r_min, mult, cache: Vec::new(), raw: 0 }
    }

    fn admit(&self, p: &PoleRecord) -> bool {
        self.fam.in_pstar(p) && p.location.norm() > self.r_min && self.mult.map_or(true, |m| p.multiplicity == m)
    }

    /// Pole `i` (0-based) of the stream.
    pub fn get(&mut self, i: usize) -> Result<PoleRecord> {
        while i >= self.cache.len() {
            let want = (2 * self.raw).max(2 * i + 64);
            let all = enumerate_poles_count(&self.fam, want)?;
            if all.len() <= self.raw {
                return Err(Error::InsufficientData(format!("pole enumeration stalled at {} poles", all.len())));
            }
            self.raw = all.len();
            let admitted: Vec<PoleRecord> = all.into_iter().filter(|p| self.admit(p)).collect();
            self.cache = admitted;
        }
        Ok(self.cache[i])
    }

    pub fn take(&mut self, count: usize) -> Result<Vec<PoleRecord>> {
        if count == 0 {
            return Ok(vec![]);
        }
        self.get(count - 1)?;
        Ok(self.cache[..count].to_vec())
    }
}

/// Adds `|a_i|^{-s}` for `i = start, start+1, ..` until the running sum reaches
/// `threshold`; returns the last index used and the sum.
///
/// Stops with `ScheduleInfeasible` once index `budget` is reached, or when a
/// window of [`STAGNATION_WINDOW`] poles improves the sum by less than
/// [`STAGNATION_REL`] relative.
pub fn accumulate_until(stream: &mut PoleStream, start: usize, s: f64, threshold: f64, budget: usize) -> Result<(usize, f64)> {
    let mut sum = 0.0;
    let mut window_start = 0.0;
    let mut i = start;
    loop {
        if i >= budget {
            return Err(Error::ScheduleInfeasible {
                reason: format!("pole budget {budget} exhausted"),
                achieved: sum,
                needed: threshold,
            });
        }
        sum += stream.get(i)?.location.norm().powf(-s);
        if sum >= threshold {
            return Ok((i, sum));
        }
        if (i + 1 - start) % STAGNATION_WINDOW == 0 {
            if sum - window_start < STAGNATION_REL * sum {
                return Err(Error::ScheduleInfeasible {
                    reason: format!("partial sums stagnated after {} poles", i + 1 - start),
                    achieved: sum,
                    needed: threshold,
                });
            }
            window_start = sum;
        }
        i += 1;
    }
}

/// Observed `sup |c_n|` and `sup max(|lambda_n - 1|, |1/lambda_n - 1|)` over steps `1..=n`.
pub fn observed_perturbation(perturb: &PerturbationSequence, n: usize) -> (f64, f64) {
    let one = ComplexPoint::new(1.0, 0.0);
    let mut eps: f64 = 0.0;
    let mut del: f64 = 0.0;
    for k in 1..=n {
        let st = perturb.step(k);
        eps = eps.max(st.c.norm());
        del = del.max((st.lambda - one).norm()).max((one / st.lambda - one).norm());
    }
    (eps, del)
}

/// Largest `sup |phi'| / inf |phi'|` over all branches of levels `1..=depth`.
pub fn audit_distortion(system: &NcifsSystem, depth: usize, samples: usize) -> Result<f64> {
    let levels = if system.stationary { 1 } else { depth.min(system.levels.len()) };
    let mut worst: f64 = 1.0;
    for k in 1..=levels {
        for (lo, hi) in system.level(k)?.branch_log_extrema(samples)? {
            worst = worst.max((hi - lo).exp());
        }
    }
    Ok(worst)
}

/// Sets the system's distortion constant to the inflated audited value and
/// checks the open set condition at every generated level.
pub(crate) fn finish_system(system: &mut NcifsSystem, depth: usize, ledger: &mut ConstantLedger) -> Result<()> {
    let raw = audit_distortion(system, depth, 64)?;
    let k = AUDIT_INFLATION * raw;
    system.koebe_k = k;
    ledger.set("system_distortion_K", k, Provenance::Audited);
    let levels = if system.stationary { 1 } else { depth.min(system.levels.len()) };
    for n in 1..=levels {
        let ok = crate::ncifs::audit_open_set_condition(system.level(n)?, k)?;
        ledger.require(&format!("open_set_condition_level_{n}"), ok, "image enclosures pairwise disjoint")?;
    }
    Ok(())
}
