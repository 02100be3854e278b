//! Stationary two-step system on `B(a0, S)`: each branch goes out to a pole `a`
//! of the alphabet and comes straight back to `a0`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    accumulate_until, finish_system, ku_geometry, observed_perturbation, ConstantLedger, KuGeometry, PoleStream,
    Provenance, DEFAULT_POLE_BUDGET,
};
use crate::complex::{ComplexPoint, Disk};
use crate::error::{Error, Result};
use crate::families::{local_branch, FamilyDescriptor, PerturbationMode, PerturbationSequence, PoleRecord};
use crate::ncifs::{level_sum, Composite, Contraction, NcifsLevel, NcifsSystem, DEFAULT_KOEBE_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KuAffineConfig {
    pub fam: FamilyDescriptor,
    pub s: Option<f64>,
    pub s_star: Option<f64>,
    pub r2: Option<f64>,
    pub t_target: f64,
    /// Alphabet size; the least one meeting the branch-count threshold when absent.
    pub n_t: Option<usize>,
    pub epsilon_t: Option<f64>,
    pub delta_t: Option<f64>,
    pub perturb: PerturbationSequence,
    pub pole_budget: usize,
    /// Levels generated for a perturbed system.
    pub levels: usize,
}

impl KuAffineConfig {
    pub fn new(fam: FamilyDescriptor, t_target: f64) -> Self {
        KuAffineConfig {
            fam,
            s: None,
            s_star: None,
            r2: None,
            t_target,
            n_t: None,
            epsilon_t: None,
            delta_t: None,
            perturb: PerturbationSequence::zero(),
            pole_budget: DEFAULT_POLE_BUDGET,
            levels: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KuAffineSystem {
    pub system: NcifsSystem,
    pub family: FamilyDescriptor,
    pub ledger: ConstantLedger,
    pub geometry: KuGeometry,
    pub a0: PoleRecord,
    /// `a_1 .. a_{N_t}`.
    pub alphabet: Vec<PoleRecord>,
    pub n_t: usize,
    pub epsilon_t: f64,
    pub delta_t: f64,
    /// Probe `lambda_{2n} a0 + c_{2n}` of level `n` at index `n - 1`.
    pub probes: Vec<ComplexPoint>,
    pub theoretical_target: f64,
}

impl KuAffineSystem {
    /// `sum_a |(phi_a^(n))'(w^(n))|^t` at the level's probe point.
    pub fn probe_level_sum(&self, n: usize, t: f64) -> Result<f64> {
        let w = *self
            .probes
            .get(if self.system.stationary { 0 } else { n.saturating_sub(1) })
            .ok_or_else(|| Error::InvalidAddress(format!("no probe for level {n}")))?;
        let mut s = 0.0;
        for b in &self.system.level(n)?.branches {
            s += b.eval(w)?.1.norm().powf(t);
        }
        Ok(s)
    }
}

/// Root bound on `delta_t` for the largest alphabet modulus; it makes
/// `(1+d) d (1+|a|) < S*/2` but ignores the `S` term of the disk condition.
pub fn delta_root_bound(s_star: f64, a_max: f64) -> f64 {
    0.5 * (-1.0 + (1.0 + 2.0 * s_star / (1.0 + a_max)).sqrt())
}

/// Positive root of `(1+d)(d(1+|a|) + S) = S*/2`, the exact end of the
/// admissible range of the disk condition.
pub fn delta_disk_bound(s_star: f64, s: f64, a_max: f64) -> f64 {
    let qa = 1.0 + a_max;
    let qb = 1.0 + a_max + s;
    let qc = s - 0.5 * s_star;
    (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
}

pub fn build_ku_affine(cfg: &KuAffineConfig) -> Result<KuAffineSystem> {
    let fam = &cfg.fam;
    let mut ledger = ConstantLedger::default();
    let g = ku_geometry(fam, cfg.s, cfg.s_star, cfg.r2, &mut ledger)?;
    let t = cfg.t_target;
    if !(t >= 0.0) {
        return Err(Error::ConfigInfeasible(format!("t_target = {t} must be nonnegative")));
    }
    ledger.set("t_target", t, Provenance::User);
    let mut stream = PoleStream::new(fam, 2.0 * g.r2, Some(g.m_star));
    let a0 = stream.get(0)?;
    let s_exp = g.sum_exponent(fam, t, g.m_star);
    let threshold = 2.0 * g.k_comp.powf(3.0 * g.rho_star) * a0.location.norm().powf(fam.order_rho);
    let n_t = match cfg.n_t {
        Some(n) => n,
        None if t == 0.0 => 1,
        None => accumulate_until(&mut stream, 1, s_exp, threshold, cfg.pole_budget)?.0,
    };
    if n_t == 0 {
        return Err(Error::ConfigInfeasible("N_t must be at least 1".into()));
    }
    ledger.set_from("N_t", n_t as f64, cfg.n_t.is_some(), Provenance::Audited);
    let alphabet: Vec<PoleRecord> = stream.take(n_t + 1)?[1..].to_vec();
    let lhs: f64 = alphabet.iter().map(|a| a.location.norm().powf(-s_exp)).sum();
    ledger.audit("branch_count_threshold", lhs >= threshold || t == 0.0, format!("sum {lhs} vs threshold {threshold}"));

    let perturbed = cfg.perturb.mode != PerturbationMode::Zero;
    let levels = if perturbed { cfg.levels.max(1) } else { 1 };
    let a_max = alphabet.last().map_or(0.0, |a| a.location.norm());
    let root = delta_root_bound(g.s_star, a_max);
    let ratio_bound = (g.s_star - 2.0 * g.s) / (2.0 * g.s);
    let (eo, dobs) = observed_perturbation(&cfg.perturb, 2 * levels);
    let delta_t = match cfg.delta_t {
        Some(d) => d,
        None if perturbed => dobs.max(eo * (1.0 + 1e-9)) * (1.0 + 1e-9),
        None => 0.9 * root.min(ratio_bound).min(delta_disk_bound(g.s_star, g.s, a_max)),
    };
    let epsilon_t = match cfg.epsilon_t {
        Some(e) => e,
        None if perturbed => eo * (1.0 + 1e-9),
        None => 0.9 * delta_t,
    };
    let prov = if perturbed { Provenance::Audited } else { Provenance::Analytic };
    ledger.set_from("delta_t", delta_t, cfg.delta_t.is_some(), prov);
    ledger.set_from("epsilon_t", epsilon_t, cfg.epsilon_t.is_some(), prov);
    ledger.require("epsilon_below_delta", epsilon_t < delta_t, format!("epsilon_t = {epsilon_t}, delta_t = {delta_t}"))?;
    ledger.require("delta_ratio_bound", delta_t < ratio_bound, format!("delta_t = {delta_t}, (S*-2S)/(2S) = {ratio_bound}"))?;
    ledger.require("delta_root_bound", delta_t < root, format!("delta_t = {delta_t}, root bound {root}"))?;
    let disk = (1.0 + delta_t) * (delta_t * (1.0 + a_max) + g.s);
    ledger.require("delta_disk_condition", disk < 0.5 * g.s_star, format!("(1+d)(d(1+|a|)+S) = {disk}, S*/2 = {}", 0.5 * g.s_star))?;
    if perturbed {
        for n in 1..=2 * levels {
            let st = cfg.perturb.step(n);
            if !st.admissible(epsilon_t, delta_t) {
                ledger.require("steps_admissible", false, format!("step {n}: c = {}, lambda = {}", st.c, st.lambda))?;
            }
            // pulled-back disks stay inside B(a, S*) for every pole used
            for a in std::iter::once(&a0).chain(alphabet.iter()) {
                let r = (st.unshift(a.location) - a.location).norm() + g.s / st.lambda.norm();
                if r >= g.s_star {
                    ledger.require("pullback_containment", false, format!("step {n}, pole {}: radius {r}", a.location))?;
                }
            }
        }
        ledger.audit("steps_admissible", true, format!("{} steps", 2 * levels));
        ledger.audit("pullback_containment", true, "all poles");
    }

    let x = Disk::new(a0.location, g.s)?;
    let mut built = Vec::with_capacity(levels);
    for n in 1..=levels {
        let s_odd = cfg.perturb.step(2 * n - 1);
        let s_even = cfg.perturb.step(2 * n);
        let mut branches: Vec<Arc<dyn Contraction>> = Vec::with_capacity(alphabet.len());
        for a in &alphabet {
            let out = local_branch(fam, &s_even, a, 1, x)?;
            let back = local_branch(fam, &s_odd, &a0, 1, Disk::new(a.location, g.s)?)?;
            branches.push(Arc::new(Composite { parts: vec![Arc::new(out), Arc::new(back)] }));
        }
        let level = NcifsLevel { index_n: n, domain: x, codomain: x, branches };
        let ok = level.audit_maps_into(16)?;
        ledger.require(&format!("maps_into_level_{n}"), ok, "images inside closed B(a0, S)")?;
        built.push(level);
    }
    let mut system = if perturbed {
        NcifsSystem::new(built, DEFAULT_KOEBE_K)?
    } else {
        NcifsSystem::stationary(built.pop().expect("one level"), DEFAULT_KOEBE_K)?
    };
    finish_system(&mut system, levels, &mut ledger)?;

    let e = (g.rho_star - t) * (fam.beta + g.m_star as f64 + 1.0) / g.m_star as f64;
    let bound = 2.0 * g.k_comp.powf(3.0 * g.rho_star - 2.0 * t) * a0.location.norm().powf(e);
    let z1 = level_sum(system.level(1)?, t)?;
    ledger.audit("level_sum_lower_bound", z1 >= bound, format!("Z_(1)({t}) = {z1}, bound {bound}"));
    let probes = (1..=levels)
        .map(|n| {
            let st = cfg.perturb.step(2 * n);
            st.lambda * a0.location + st.c
        })
        .collect();
    Ok(KuAffineSystem {
        system,
        family: *fam,
        ledger,
        geometry: g,
        a0,
        alphabet,
        n_t,
        epsilon_t,
        delta_t,
        probes,
        theoretical_target: g.rho_star,
    })
}
