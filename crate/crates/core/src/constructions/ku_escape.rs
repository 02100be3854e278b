//! Non-stationary system whose limit points escape: the orbit visits the poles
//! `a_k` in blocks, bouncing through a growing alphabet of far poles in between.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{accumulate_until, finish_system, ku_geometry, ConstantLedger, KuGeometry, PoleStream, Provenance, DEFAULT_POLE_BUDGET};
use crate::complex::Disk;
use crate::error::{Error, Result};
use crate::families::{local_branch, FamilyDescriptor, PerturbationSequence, PoleRecord};
use crate::ncifs::{level_sum, Composite, Contraction, NcifsLevel, NcifsSystem, DEFAULT_KOEBE_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KuEscapeConfig {
    pub fam: FamilyDescriptor,
    pub s: Option<f64>,
    pub s_star: Option<f64>,
    /// Bound on `|c_n|`; derived from the perturbation when absent.
    pub epsilon: Option<f64>,
    pub r2: Option<f64>,
    pub t_target: f64,
    /// Explicit schedule `xi_1 < xi_2 < ..`; computed when absent.
    pub xi: Option<Vec<usize>>,
    pub perturb: PerturbationSequence,
    pub pole_budget: usize,
    /// Number of levels to generate.
    pub depth: usize,
}

impl KuEscapeConfig {
    pub fn new(fam: FamilyDescriptor, t_target: f64, depth: usize) -> Self {
        KuEscapeConfig {
            fam,
            s: None,
            s_star: None,
            epsilon: None,
            r2: None,
            t_target,
            xi: None,
            perturb: PerturbationSequence::zero(),
            pole_budget: DEFAULT_POLE_BUDGET,
            depth,
        }
    }
}

/// Placement of one level in the block schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscapeLevel {
    pub n: usize,
    /// Block index `k` with `alpha_k <= n < alpha_{k+1}`.
    pub block: usize,
    /// Offset `j = n - alpha_k`.
    pub offset: usize,
    /// Iteration count `T(n) = 2n + k`.
    pub time: usize,
    /// Inclusive range of pole indices forming the alphabet.
    pub alphabet: (usize, usize),
    /// Pole index at the center of `X_n`.
    pub domain_pole: usize,
    /// Pole index at the center of `X_{n-1}`.
    pub codomain_pole: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeSchedule {
    /// `xi[0] = 0 < xi[1] < ..`.
    pub xi: Vec<usize>,
    /// `alpha[k]` for `k >= 1`; `alpha[0]` is unused and 0.
    pub alpha: Vec<usize>,
    /// Achieved block sums and their thresholds, entry `k - 1` for `xi_k`.
    pub block_sums: Vec<(f64, f64)>,
    pub levels: Vec<EscapeLevel>,
}

impl EscapeSchedule {
    /// Places levels `1..=depth` given enough of the `xi` sequence; `None`
    /// when more `xi` values are needed.
    fn place(xi: &[usize], depth: usize) -> Result<Option<(Vec<usize>, Vec<EscapeLevel>)>> {
        // alpha_1 = 1, alpha_k = xi_{k+1} - xi_2 for k >= 2
        let mut alpha = vec![0, 1];
        let mut k = 2;
        while k + 1 < xi.len() {
            alpha.push(xi[k + 1] - xi[2]);
            if alpha[k] <= alpha[k - 1] {
                return Err(Error::ConfigInfeasible(format!("schedule gap gamma_{k} too small: alpha_{k} = {}", alpha[k])));
            }
            if alpha[k] > depth {
                break;
            }
            k += 1;
        }
        if *alpha.last().unwrap() <= depth {
            return Ok(None);
        }
        let mut levels = Vec::with_capacity(depth);
        for n in 1..=depth {
            let k = (1..alpha.len() - 1).rev().find(|&k| alpha[k] <= n).unwrap_or(1);
            let j = n - alpha[k];
            let alphabet = if k == 1 {
                (1, xi[1] + j.max(1))
            } else if j == 0 {
                (xi[k - 1] + 1, xi[k])
            } else {
                (xi[k - 1] + 1, xi[k] + j)
            };
            levels.push(EscapeLevel {
                n,
                block: k,
                offset: j,
                time: 2 * n + k,
                alphabet,
                domain_pole: k,
                codomain_pole: if j == 0 { k - 1 } else { k },
            });
        }
        Ok(Some((alpha, levels)))
    }
}

#[derive(Debug, Clone)]
pub struct KuEscapeSystem {
    pub system: NcifsSystem,
    pub family: FamilyDescriptor,
    pub ledger: ConstantLedger,
    pub geometry: KuGeometry,
    /// `a_0, a_1, ..` as far as the schedule uses them.
    pub poles: Vec<PoleRecord>,
    pub schedule: EscapeSchedule,
    pub perturb: PerturbationSequence,
    pub theoretical_target: f64,
}

impl KuEscapeSystem {
    /// Scheduled pole index of every point of the pullback chain of `word`
    /// (innermost first, starting at the center of `X_n`), matching the
    /// points produced by applying the word's elementary steps in order.
    pub fn chain_poles(&self, word: &[usize]) -> Result<Vec<usize>> {
        let depth = word.len();
        let mut out = Vec::new();
        let first = self.schedule.levels.get(depth.max(1) - 1).ok_or_else(|| Error::InvalidAddress(format!("depth {depth}")))?;
        out.push(if depth == 0 { 0 } else { first.domain_pole });
        for n in (1..=depth).rev() {
            let lv = &self.schedule.levels[n - 1];
            let i = lv.alphabet.0 + word[n - 1];
            if i > lv.alphabet.1 {
                return Err(Error::InvalidAddress(format!("index {} outside level {n} alphabet", word[n - 1])));
            }
            out.push(i);
            out.push(lv.block);
            if lv.offset == 0 {
                out.push(lv.block - 1);
            }
        }
        Ok(out)
    }
}

pub fn build_ku_escape(cfg: &KuEscapeConfig) -> Result<KuEscapeSystem> {
    let fam = &cfg.fam;
    let mut ledger = ConstantLedger::default();
    if !cfg.perturb.is_additive() {
        return Err(Error::ConfigInfeasible("escape construction accepts additive perturbations only (lambda = 1)".into()));
    }
    if cfg.depth == 0 {
        return Err(Error::ConfigInfeasible("depth must be at least 1".into()));
    }
    let g = ku_geometry(fam, cfg.s, cfg.s_star, cfg.r2, &mut ledger)?;
    let t = cfg.t_target;
    ledger.set("t_target", t, Provenance::User);
    let gap = g.s_star - 2.0 * g.s;

    let mut stream = PoleStream::new(fam, 2.0 * g.r2, Some(g.m_star));
    let s_exp = g.sum_exponent(fam, t, g.m_star);
    let kfac = 2.0 * g.k_comp.powf(4.0 * g.rho_star);
    let mut xi = vec![0usize];
    let mut block_sums = Vec::new();
    let (alpha, levels) = loop {
        if xi.len() >= 3 {
            if let Some(p) = EscapeSchedule::place(&xi, cfg.depth)? {
                break p;
            }
        }
        let k = xi.len();
        let needed = kfac * stream.get(k)?.location.norm().powf(2.0 * fam.order_rho);
        let (last, achieved) = match &cfg.xi {
            Some(user) => {
                let v = *user.get(k - 1).ok_or_else(|| Error::ConfigInfeasible(format!("schedule needs xi_{k}")))?;
                if v <= xi[k - 1] {
                    return Err(Error::ConfigInfeasible(format!("xi_{k} = {v} not increasing")));
                }
                let mut s = 0.0;
                for i in xi[k - 1] + 1..=v {
                    s += stream.get(i)?.location.norm().powf(-s_exp);
                }
                (v, s)
            }
            None => accumulate_until(&mut stream, xi[k - 1] + 1, s_exp, needed, cfg.pole_budget)?,
        };
        ledger.audit(&format!("xi_{k}_threshold"), achieved >= needed, format!("block sum {achieved} vs {needed}"));
        xi.push(last);
        block_sums.push((achieved, needed));
    };
    for (k, v) in xi.iter().enumerate().skip(1) {
        ledger.set(&format!("xi_{k}"), *v as f64, if cfg.xi.is_some() { Provenance::User } else { Provenance::Audited });
    }
    let max_time = levels.last().map_or(0, |l| l.time);
    let max_pole = levels.iter().map(|l| l.alphabet.1).max().unwrap_or(0).max(levels.last().map_or(0, |l| l.block));
    let poles = stream.take(max_pole + 1)?;

    let (eo, _) = super::observed_perturbation(&cfg.perturb, max_time);
    let epsilon = match cfg.epsilon {
        Some(e) => e,
        None if eo > 0.0 => eo * (1.0 + 1e-9),
        None => 0.9 * gap,
    };
    ledger.set_from("epsilon", epsilon, cfg.epsilon.is_some(), if eo > 0.0 { Provenance::Audited } else { Provenance::Analytic });
    ledger.require("epsilon_gap", epsilon < gap, format!("epsilon = {epsilon}, S* - 2S = {gap}"))?;
    for n in 1..=max_time {
        let c = cfg.perturb.step(n).c.norm();
        if c > 0.0 && c >= epsilon {
            ledger.require("shift_sizes", false, format!("|c_{n}| = {c} >= epsilon"))?;
        }
    }
    ledger.audit("shift_sizes", true, format!("{max_time} steps"));

    let disk = |i: usize| Disk::new(poles[i].location, g.s);
    let mut built = Vec::with_capacity(levels.len());
    for lv in &levels {
        let k = lv.block;
        let tt = lv.time;
        let mut branches: Vec<Arc<dyn Contraction>> = Vec::new();
        for i in lv.alphabet.0..=lv.alphabet.1 {
            let mut parts: Vec<Arc<dyn Contraction>> = vec![
                Arc::new(local_branch(fam, &cfg.perturb.step(tt), &poles[i], 1, disk(k)?)?),
                Arc::new(local_branch(fam, &cfg.perturb.step(tt - 1), &poles[k], 1, disk(i)?)?),
            ];
            if lv.offset == 0 {
                parts.push(Arc::new(local_branch(fam, &cfg.perturb.step(tt - 2), &poles[k - 1], 1, disk(k)?)?));
            }
            branches.push(Arc::new(Composite { parts }));
        }
        let level = NcifsLevel { index_n: lv.n, domain: disk(lv.domain_pole)?, codomain: disk(lv.codomain_pole)?, branches };
        let ok = level.audit_maps_into(16)?;
        ledger.require(&format!("maps_into_level_{}", lv.n), ok, "composite images inside the codomain disk")?;
        built.push(level);
    }
    let mut system = NcifsSystem::new(built, DEFAULT_KOEBE_K)?;
    finish_system(&mut system, levels.len(), &mut ledger)?;
    for n in 1..=levels.len() {
        let z = level_sum(system.level(n)?, t)?;
        ledger.audit(&format!("level_sum_at_least_2_level_{n}"), z >= 2.0, format!("Z_({n})({t}) = {z}"));
    }
    Ok(KuEscapeSystem {
        system,
        family: *fam,
        ledger,
        geometry: g,
        poles,
        schedule: EscapeSchedule { xi, alpha, block_sums, levels },
        perturb: cfg.perturb.clone(),
        theoretical_target: g.rho_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn placement_follows_blocks() {
        let xi = vec![0, 5, 9, 14, 30];
        let (alpha, lv) = EscapeSchedule::place(&xi, 8).unwrap().unwrap();
        // alpha_2 = xi_3 - xi_2 = 5, alpha_3 = xi_4 - xi_2 = 21
        assert_eq!(&alpha[1..], &[1, 5, 21]);
        assert_eq!(lv[0].alphabet, (1, 6));
        assert_eq!(lv[0].time, 3);
        assert_eq!(lv[1].alphabet, (1, 6));
        assert_eq!(lv[3].alphabet, (1, 8));
        assert_eq!((lv[4].block, lv[4].offset, lv[4].alphabet), (2, 0, (6, 9)));
        assert_eq!(lv[4].time, 12);
        assert_eq!(lv[5].alphabet, (6, 10));
        assert_eq!(lv[4].codomain_pole, 1);
        assert_eq!(lv[5].codomain_pole, 2);
        // times are contiguous: level n uses T(n-1)+1 ..= T(n)
        for w in lv.windows(2) {
            let steps = if w[1].offset == 0 { 3 } else { 2 };
            assert_eq!(w[1].time - steps, w[0].time);
        }
        assert!(EscapeSchedule::place(&xi[..4], 8).unwrap().is_none());
    }

    #[test]
    fn multiplicative_perturbation_rejected() {
        let mut cfg = KuEscapeConfig::new(FamilyDescriptor::z_sin_z(), 0.1, 3);
        cfg.perturb = PerturbationSequence::random_in_ball(0.01, 0.01, 1);
        assert!(matches!(build_ku_escape(&cfg), Err(Error::ConfigInfeasible(_))));
        cfg.perturb = PerturbationSequence::constant_shift(Complex64::new(0.0, 0.0), 0.0);
        cfg.perturb.constant.lambda = Complex64::new(1.01, 0.0);
        assert!(matches!(build_ku_escape(&cfg), Err(Error::ConfigInfeasible(_))));
    }

    #[test]
    fn supercritical_target_is_infeasible() {
        let mut cfg = KuEscapeConfig::new(FamilyDescriptor::z_sin_z(), 0.34, 3);
        cfg.pole_budget = 20_000;
        assert!(matches!(build_ku_escape(&cfg), Err(Error::ScheduleInfeasible { .. })));
    }

    #[test]
    fn zsinz_small_target_builds() {
        let sys = build_ku_escape(&KuEscapeConfig::new(FamilyDescriptor::z_sin_z(), 0.1, 3)).unwrap();
        let s = &sys.schedule;
        assert!(s.xi.len() >= 4 && s.xi.windows(2).all(|w| w[0] < w[1]));
        assert!(s.block_sums.iter().all(|(a, n)| a >= n));
        assert_eq!(sys.system.levels.len(), 3);
        let sizes: Vec<usize> = (1..=3).map(|n| sys.system.level(n).unwrap().branches.len()).collect();
        assert!(sizes.windows(2).all(|w| w[1] <= w[0] + 1));
        let chain = sys.chain_poles(&[0, 1, 2]).unwrap();
        assert_eq!(chain.len(), 1 + 3 + 2 + 2);
        assert_eq!(chain[0], 1);
        assert_eq!(*chain.last().unwrap(), 0);
    }
}
