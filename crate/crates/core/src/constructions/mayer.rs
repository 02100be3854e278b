//! Systems of b-point returns `gamma_m = psi_m o phi_m` on a small disk about a
//! pole `b`: `phi_m` pulls `U0 = B(b, s0)` back to the b-point `z_m`, `psi_m`
//! returns from there to `U1 = B(b, s1)` through the pole.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{finish_system, observed_perturbation, ConstantLedger, Provenance, AUDIT_INFLATION};
use crate::complex::{boundary_points, ComplexPoint, Disk};
use crate::error::{Error, Result};
use crate::families::{
    local_branch, mayer_dimension, FamilyDescriptor, InverseBranch, PerturbationMode, PerturbationSequence,
    PerturbationStep, PoleRecord, RegularBranch,
};
use crate::ncifs::{Composite, Contraction, NcifsLevel, NcifsSystem, DEFAULT_KOEBE_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MayerConfig {
    pub fam: FamilyDescriptor,
    /// Distinguished pole `b`; the family default when absent.
    pub pole_b: Option<PoleRecord>,
    pub s0: Option<f64>,
    pub s1: Option<f64>,
    /// First admissible b-point index; the least audited one when absent.
    pub m1: Option<usize>,
    /// Branches per level are `m = M1 ..= M1 + N_t`.
    pub n_t: usize,
    pub t_target: f64,
    pub perturb: PerturbationSequence,
    /// Distortion constant in `s1 < s0/(16 K^2)`; 81 when absent.
    pub koebe_k: Option<f64>,
    /// Levels generated for a perturbed system.
    pub levels: usize,
}

impl MayerConfig {
    pub fn new(fam: FamilyDescriptor, n_t: usize) -> Self {
        MayerConfig {
            fam,
            pole_b: None,
            s0: None,
            s1: None,
            m1: None,
            n_t,
            t_target: 0.0,
            perturb: PerturbationSequence::zero(),
            koebe_k: None,
            levels: 6,
        }
    }
}

/// Value of the branch-count condition `sum |z_m|^{-t(alpha+1+1/q)} >= 2^{1+2(4+2/q)} K^2 Q^2 L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchCountPredicate {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct MayerSystem {
    pub system: NcifsSystem,
    pub family: FamilyDescriptor,
    pub ledger: ConstantLedger,
    pub b: PoleRecord,
    pub s0: f64,
    pub s1: f64,
    pub m1: usize,
    pub n_t: usize,
    /// `z_m` for `m = M1 ..= M1 + N_t`.
    pub b_points: Vec<ComplexPoint>,
    /// Probe `lambda_{2n} b + c_{2n}` of level `n` at index `n - 1`.
    pub probes: Vec<ComplexPoint>,
    pub theoretical_target: f64,
}

impl MayerSystem {
    pub fn branch_count_predicate(&self, t: f64) -> BranchCountPredicate {
        let fam = &self.family;
        let q = self.b.multiplicity as f64;
        let e = t * (fam.mayer_alpha + 1.0 + 1.0 / q);
        let lhs: f64 = self.b_points.iter().map(|z| z.norm().powf(-e)).sum();
        let k = self.ledger.get("K").unwrap_or(DEFAULT_KOEBE_K);
        let qg = self.ledger.get("Q").unwrap_or(fam.mayer_growth);
        let l = self.ledger.get("L").unwrap_or(1.0);
        let rhs = 2f64.powf(1.0 + 2.0 * (4.0 + 2.0 / q)) * k * k * qg * qg * l;
        BranchCountPredicate { t, lhs, rhs, holds: lhs >= rhs }
    }

    /// `sum_m |(gamma_m^(n))'(w^(n))|^t` at the level's probe point.
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

/// Distortion of the b-point branches `phi_m` on `B(b, s0/2)`, inflated by 1.5,
/// over the first 16 b-points beyond `|z| = 10` and a few far ones.
pub fn audited_mayer_k(fam: &FamilyDescriptor, b: &PoleRecord, s0: f64) -> Result<f64> {
    let pts = fam.b_points(b.location, 10.0, 4000.0)?;
    let picks: Vec<ComplexPoint> = pts.iter().take(16).chain(pts.iter().rev().take(4)).copied().collect();
    let mut worst: f64 = 1.0;
    for z in picks {
        let phi = RegularBranch::new(fam, z, PerturbationStep::identity())?;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for w in boundary_points(b.location, 0.5 * s0, 64) {
            let d = phi.eval(w)?.1.norm();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        worst = worst.max(hi / lo);
    }
    Ok(AUDIT_INFLATION * worst)
}

/// `L` with `L^{-1} <= |f0'(w)| / |f0(w)|^{1+1/q} <= L` on `B(b, s0)`, sampled
/// on circles of radius `s0 2^{-j}`, inflated by 1.5.
fn audited_comparability(fam: &FamilyDescriptor, b: &PoleRecord, s0: f64) -> Result<f64> {
    let e = 1.0 + 1.0 / b.multiplicity as f64;
    let mut worst: f64 = 1.0;
    for j in 0..12 {
        for w in boundary_points(b.location, s0 * 0.5f64.powi(j), 64) {
            let r = fam.df0(w)?.norm() / fam.f0(w)?.norm().powf(e);
            worst = worst.max(r).max(1.0 / r);
        }
    }
    Ok(AUDIT_INFLATION * worst)
}

/// Enclosure radius of `phi_m(U0)` from the distortion bound.
fn enclosure_radius(fam: &FamilyDescriptor, z: ComplexPoint, k: f64, s0: f64) -> Result<f64> {
    Ok(k * s0 / fam.df0(z)?.norm())
}

pub fn build_mayer(cfg: &MayerConfig) -> Result<MayerSystem> {
    let fam = &cfg.fam;
    fam.numeric()?;
    let mut ledger = ConstantLedger::default();
    let b = match cfg.pole_b {
        Some(p) => p,
        None => fam.default_mayer_pole()?,
    };
    let q = b.multiplicity;
    ledger.set_from("b_re", b.location.re, cfg.pole_b.is_some(), Provenance::Analytic);
    ledger.set_from("b_im", b.location.im, cfg.pole_b.is_some(), Provenance::Analytic);
    ledger.set("q", q as f64, Provenance::Analytic);

    let s0 = match cfg.s0 {
        Some(v) => v,
        None => fam.default_s0()?,
    };
    ledger.set_from("s0", s0, cfg.s0.is_some(), Provenance::Audited);
    let sing = fam.singular_values();
    let d_sing = sing.distance(b.location);
    ledger.require("U_star_free_of_singular_values", d_sing > 2.0 * s0, format!("dist(Sing, b) = {d_sing}, 2 s0 = {}", 2.0 * s0))?;
    let spacing = 2.0 * fam.separation()?;
    ledger.require("U0_isolates_b", s0 < spacing, format!("s0 = {s0}, pole spacing {spacing}"))?;

    let k = cfg.koebe_k.unwrap_or(DEFAULT_KOEBE_K);
    ledger.set_from("K", k, cfg.koebe_k.is_some(), Provenance::Analytic);
    let s1_max = s0 / (16.0 * k * k);
    let s1 = cfg.s1.unwrap_or(0.9 * s1_max);
    ledger.require("s1_range", s1 > 0.0 && s1 < s1_max, format!("need 0 < s1 = {s1} < s0/(16K^2) = {s1_max}"))?;
    ledger.set_from("s1", s1, cfg.s1.is_some(), Provenance::Analytic);
    ledger.set("Q", fam.mayer_growth, Provenance::Analytic);
    let l = audited_comparability(fam, &b, s0)?;
    ledger.set("L", l, Provenance::Audited);

    // R1: the return branch sends all of {|w| > R1} into U1
    let psi0 = InverseBranch {
        source_disk: Disk::new(ComplexPoint::new(1.0, 0.0), 0.5)?,
        target_pole: b,
        branch_index: 1,
        perturbation: PerturbationStep::identity(),
        family: *fam,
    };
    let mut r1 = AUDIT_INFLATION * b.laurent_coeff.norm() / s1.powi(q as i32);
    let mut r1_ok = false;
    for _ in 0..30 {
        let mut worst: f64 = 0.0;
        for jb in 1..=q {
            let br = InverseBranch { branch_index: jb, ..psi0 };
            for w in boundary_points(ComplexPoint::new(0.0, 0.0), r1, 64) {
                worst = worst.max((br.value(w)? - b.location).norm());
            }
        }
        if worst < s1 {
            r1_ok = true;
            break;
        }
        r1 *= 2.0;
    }
    ledger.require("R1_return_into_U1", r1_ok, format!("R1 = {r1}"))?;
    ledger.set("R1", r1, Provenance::Audited);
    let r2 = 3.0 * r1;
    ledger.set("R2", r2, Provenance::Analytic);

    let perturbed = cfg.perturb.mode != PerturbationMode::Zero;
    let levels = if perturbed { cfg.levels.max(1) } else { 1 };
    if perturbed {
        cfg.perturb.validate(2 * levels)?;
        let (eo, dobs) = observed_perturbation(&cfg.perturb, 2 * levels);
        let eps = eo * (1.0 + 1e-9);
        let del = dobs.max(eps) * (1.0 + 1e-9);
        ledger.set("epsilon", eps, Provenance::Audited);
        ledger.set("delta", del, Provenance::Audited);
        let bn = b.location.norm();
        let dmax = (s0 / (8.0 * bn)).min(s0 / 8.0).min(0.5);
        ledger.require("delta_small", del < dmax, format!("delta = {del}, bound {dmax}"))?;
        let lhs = (1.0 + del) * (s1 + del * (1.0 + bn));
        ledger.require("delta_disk_condition", lhs < s0, format!("(1+d)(s1+d(1+|b|)) = {lhs}, s0 = {s0}"))?;
        let emax = (0.5 * s1).min(del).min(r1);
        ledger.require("epsilon_small", eps < emax, format!("epsilon = {eps}, bound {emax}"))?;
        let mut worst: f64 = 0.0;
        for n in 1..=2 * levels {
            let st = cfg.perturb.step(n);
            let c = st.unshift(b.location);
            worst = worst.max((c - b.location).norm() + s1 / st.lambda.norm());
        }
        ledger.require("shifted_U1_inside_U0", worst < s0, format!("max radius {worst}, s0 = {s0}"))?;
    }

    // b-points and M1
    let mut r_hi = 2.0 * r2 + 64.0;
    let (m1, pts) = loop {
        let pts = fam.b_points(b.location, 0.0, r_hi)?;
        let mut last_bad: Option<usize> = None;
        for (i, z) in pts.iter().enumerate() {
            if z.norm() - enclosure_radius(fam, *z, k, s0)? <= r2 {
                last_bad = Some(i);
            }
        }
        let m1_min = last_bad.map_or(0, |i| i + 1);
        let m1 = match cfg.m1 {
            Some(m) => {
                ledger.require("M1_admissible", m >= m1_min, format!("M1 = {m}, least admissible {m1_min}"))?;
                m
            }
            None => m1_min,
        };
        if m1 + cfg.n_t < pts.len() {
            break (m1, pts);
        }
        r_hi *= 2.0;
    };
    ledger.set_from("M1", m1 as f64, cfg.m1.is_some(), Provenance::Audited);
    ledger.set("N_t", cfg.n_t as f64, Provenance::User);
    let chosen: Vec<ComplexPoint> = pts[m1..=m1 + cfg.n_t].to_vec();

    let u0 = Disk::new(b.location, s0)?;
    let u1 = Disk::new(b.location, s1)?;
    // phi_m(U0) inside {|z| > R2}, checked on the boundary
    for z in &chosen {
        let phi = RegularBranch::new(fam, *z, PerturbationStep::identity())?;
        for w in u0.boundary(32) {
            let img = phi.eval(w)?.0;
            if img.norm() <= r2 {
                ledger.require("b_point_images_escape", false, format!("phi({w}) = {img} inside |z| <= {r2}"))?;
            }
        }
    }
    ledger.audit("b_point_images_escape", true, format!("{} branches", chosen.len()));

    let mut built = Vec::with_capacity(levels);
    for n in 1..=levels {
        let s_odd = cfg.perturb.step(2 * n - 1);
        let s_even = cfg.perturb.step(2 * n);
        let mut branches: Vec<Arc<dyn Contraction>> = Vec::with_capacity(chosen.len());
        for z in &chosen {
            let phi = RegularBranch::new(fam, *z, s_even)?;
            let enc = Disk::new(*z, enclosure_radius(fam, *z, k, s0)?)?;
            let psi = local_branch(fam, &s_odd, &b, 1, enc)?;
            branches.push(Arc::new(Composite { parts: vec![Arc::new(phi), Arc::new(psi)] }));
        }
        let level = NcifsLevel { index_n: n, domain: u1, codomain: u1, branches };
        let ok = level.audit_maps_into(32)?;
        ledger.require(&format!("maps_into_U1_level_{n}"), ok, "gamma images inside closed U1")?;
        built.push(level);
    }
    let mut system = if perturbed {
        NcifsSystem::new(built, k)?
    } else {
        NcifsSystem::stationary(built.pop().expect("one level"), k)?
    };
    finish_system(&mut system, levels, &mut ledger)?;
    let probes = (1..=levels)
        .map(|n| {
            let st = cfg.perturb.step(2 * n);
            st.lambda * b.location + st.c
        })
        .collect();
    let theoretical_target = mayer_dimension(fam.order_rho, fam.mayer_alpha, q)?;
    Ok(MayerSystem {
        system,
        ledger,
        b,
        s0,
        s1,
        m1,
        n_t: cfg.n_t,
        b_points: chosen,
        probes,
        theoretical_target,
        family: *fam,
    })
}
