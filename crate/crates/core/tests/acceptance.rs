//! Acceptance suite: one PASS/FAIL line per criterion with its runtime.
//!
//! Runs without the libtest harness. The process fails only when a criterion
//! outside `EXPECTED_FAILURES` fails, so known desk-scale limits stay visible in
//! the output without breaking the workspace test run.

use std::time::Instant;

use bowenlab::constructions::{
    audited_mayer_k, build_ku_affine, build_ku_escape, build_mayer, escape_cover_sum, ku_geometry, pstar_poles,
    select_r3, transition_scan, ConstantLedger, KuAffineConfig, KuEscapeConfig, MayerConfig,
};
use bowenlab::families::{
    enumerate_poles_count, mayer_dimension, theoretical_dimension, FamilyDescriptor, PerturbationSequence,
};
use bowenlab::ncifs::{bowen_dimension, exact_zn, lower_pressure, product_lower_bound, NcifsSystem, DEFAULT_WORD_CAP};
use bowenlab::poles::estimate_order;
use bowenlab::verify::{escape_audit, moran_oracle, sample_addresses};
use bowenlab::{ComplexPoint, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that cannot pass at desk scale; they still run and print FAIL.
const EXPECTED_FAILURES: &[usize] = &[];

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within_time(o: Outcome, secs: f64, limit: f64) -> Outcome {
    if secs > limit {
        check(false, format!("{} [runtime {secs:.1} s over {limit} s]", o.detail))
    } else {
        o
    }
}

fn audited_k(fam: &FamilyDescriptor) -> Result<f64, Error> {
    audited_mayer_k(fam, &fam.default_mayer_pole()?, fam.default_s0()?)
}

fn mid(b: (f64, f64)) -> f64 {
    0.5 * (b.0 + b.1)
}

fn moran() -> Result<Outcome, Error> {
    let exact = 3f64.ln() / 4f64.ln();
    let d = bowen_dimension(&NcifsSystem::similarity(&[0.25; 3])?, 0.0, 1.0, 1e-9, 4, DEFAULT_WORD_CAP)?;
    let first = (mid(d.bowen_bracket) - exact).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.gen_range(2..=6);
        let r: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..=0.45)).collect();
        let d = bowen_dimension(&NcifsSystem::similarity(&r)?, 0.0, 3.0, 1e-9, 4, DEFAULT_WORD_CAP)?;
        worst = worst.max((mid(d.bowen_bracket) - moran_oracle(&r)?).abs());
    }
    Ok(check(first < 1e-6 && worst < 1e-6, format!("3x(1/4) error {first:.1e}; 50 random systems max error {worst:.1e}")))
}

fn dichotomy(fam: FamilyDescriptor, above: f64, below: f64, window: (f64, f64), factor_check: bool) -> Result<Outcome, Error> {
    let budget = 100_000;
    let g = ku_geometry(&fam, None, None, None, &mut ConstantLedger::default())?;
    let sel = select_r3(&fam, above, budget, &g)?;
    let sub = select_r3(&fam, below, budget, &g);
    let sub_ok = matches!(sub, Err(Error::NotSupercritical { .. }));
    let scan = transition_scan(&fam, window.0 - 0.06, window.1 + 0.06, 0.01, budget, &g)?;
    let tr = scan.transition;
    let tr_ok = tr.is_some_and(|t| t >= window.0 - 1e-9 && t <= window.1 + 1e-9);
    let mut detail = format!("R3({above}) = {:.4e}; t={below}: {}; transition {}", sel.r3, if sub_ok { "NotSupercritical" } else { "selected" }, tr.map_or("none".into(), |t| format!("{t:.2}")));
    let mut passed = sub_ok && tr_ok && sel.lhs <= 1.0;
    if factor_check {
        let alphabet = pstar_poles(&fam, sel.r3, None, 10_000)?;
        let none = PerturbationSequence::zero();
        let hi = escape_cover_sum(&fam, above, g.s, &alphabet, 1, &none, &g).per_level_factor;
        let lo = escape_cover_sum(&fam, below, g.s, &alphabet, 1, &none, &g).per_level_factor;
        passed &= hi <= 1.0 && lo > 1.0;
        detail += &format!("; per-level factor over 1e4 poles {hi:.3} at {above}, {lo:.3} at {below}");
    }
    Ok(check(passed, detail))
}

fn order_recovery() -> Result<Outcome, Error> {
    let tan = FamilyDescriptor::tan_power(ComplexPoint::new(1.0, 0.0), 1)?;
    let rt = estimate_order(&enumerate_poles_count(&tan, 2000)?)?.rho_hat;
    let rc = estimate_order(&enumerate_poles_count(&FamilyDescriptor::z_cos_sqrt_z(), 2000)?)?.rho_hat;
    Ok(check((rt - 1.0).abs() <= 0.05 && (rc - 0.5).abs() <= 0.05, format!("tan {rt:.4}, 1/(z cos sqrt z) {rc:.4} from 2000 poles")))
}

fn ku_affine_lower_bound() -> Result<Outcome, Error> {
    let sys = build_ku_affine(&KuAffineConfig::new(FamilyDescriptor::z_sin_z(), 0.3))?;
    let p = lower_pressure(&sys.system, 0.3, 6, DEFAULT_WORD_CAP)?;
    let d = bowen_dimension(&sys.system, 0.3, 1.0, 1e-4, 6, DEFAULT_WORD_CAP)?;
    Ok(check(
        p.lower_pressure > 0.0 && d.bowen_bracket.0 >= 0.3,
        format!("N_t = {}, lower pressure(0.30) = {:.4} at depth 6, bracket {:?}", sys.n_t, p.lower_pressure, d.bowen_bracket),
    ))
}

fn mayer_monotone() -> Result<Outcome, Error> {
    let tan = FamilyDescriptor::tan_power(ComplexPoint::new(1.0, 0.0), 1)?;
    let mut brackets = Vec::new();
    let mut preds = Vec::new();
    for n in [8, 16, 32, 64] {
        let sys = build_mayer(&MayerConfig::new(tan, n))?;
        let d = bowen_dimension(&sys.system, 0.0, 0.5, 1e-4, 4, DEFAULT_WORD_CAP)?;
        brackets.push(d.bowen_bracket);
        preds.push(sys.branch_count_predicate(mid(d.bowen_bracket)));
    }
    let increasing = brackets.windows(2).all(|w| w[1].0 > w[0].1);
    let below = brackets.iter().all(|b| b.1 < 0.51);
    // evaluated at a common exponent so only N_t varies
    let t = mid(brackets[0]);
    let mut lhs = Vec::new();
    let mut holds = Vec::new();
    for n in [8, 16, 32, 64] {
        let p = build_mayer(&MayerConfig::new(tan, n))?.branch_count_predicate(t);
        lhs.push(p.lhs);
        holds.push(p.holds);
    }
    let monotone = lhs.windows(2).all(|w| w[1] >= w[0]) && holds.windows(2).all(|w| !w[0] || w[1]);
    let b: Vec<String> = brackets.iter().map(|b| format!("{:.4}", mid(*b))).collect();
    Ok(check(
        increasing && below && monotone,
        format!("brackets {}; predicate holds {holds:?} (lhs/rhs at N=64: {:.2e})", b.join(" < "), preds[3].lhs / preds[3].rhs),
    ))
}

fn perturbation_stability() -> Result<Outcome, Error> {
    let (eps, delta) = (0.01, 0.01);
    let pert = PerturbationSequence::random_in_ball(eps, delta, 42);
    let ts = [0.2, 0.4, 0.6];
    let mut worst_ratio: (f64, f64) = (f64::INFINITY, 0.0);
    let mut inside = true;
    let mut record = |r: f64, t: f64| {
        let lo = (1.0 - delta).powf(2.0 * t) * 0.95;
        let hi = (1.0 + delta).powf(2.0 * t) * 1.05;
        inside &= r >= lo && r <= hi;
        worst_ratio = (worst_ratio.0.min(r), worst_ratio.1.max(r));
    };
    let levels = 6;

    let fam = FamilyDescriptor::tan_power(ComplexPoint::new(10.0, 0.0), 1)?;
    let mut cfg = MayerConfig::new(fam, 8);
    cfg.koebe_k = Some(audited_k(&fam)?);
    let base = build_mayer(&cfg)?;
    cfg.perturb = pert.clone();
    cfg.levels = levels;
    let moved = build_mayer(&cfg)?;
    for n in 1..=levels {
        for t in ts {
            record(moved.probe_level_sum(n, t)? / base.probe_level_sum(n, t)?, t);
        }
    }
    let mb = bowen_dimension(&base.system, 0.0, 1.0, 1e-4, levels, DEFAULT_WORD_CAP)?.bowen_bracket;
    let mp = bowen_dimension(&moved.system, 0.0, 1.0, 1e-4, levels, DEFAULT_WORD_CAP)?.bowen_bracket;

    let mut kc = KuAffineConfig::new(FamilyDescriptor::z_sin_z(), 0.1);
    let kb = build_ku_affine(&kc)?;
    kc.perturb = pert;
    kc.levels = levels;
    let kp = build_ku_affine(&kc)?;
    for n in 1..=levels {
        for t in ts {
            record(kp.probe_level_sum(n, t)? / kb.probe_level_sum(n, t)?, t);
        }
    }
    let ab = bowen_dimension(&kb.system, 0.0, 1.0, 1e-4, levels, DEFAULT_WORD_CAP)?.bowen_bracket;
    let ap = bowen_dimension(&kp.system, 0.0, 1.0, 1e-4, levels, DEFAULT_WORD_CAP)?.bowen_bracket;
    let shift = (mid(mb) - mid(mp)).abs().max((mid(ab) - mid(ap)).abs());
    Ok(check(
        inside && shift <= 0.02,
        format!(
            "level-sum ratios in [{:.4}, {:.4}]; Bowen shift {shift:.2e} (Mayer {:.4} -> {:.4}, KU affine {:.4} -> {:.4})",
            worst_ratio.0,
            worst_ratio.1,
            mid(mb),
            mid(mp),
            mid(ab),
            mid(ap)
        ),
    ))
}

fn escape_realization() -> Result<Outcome, Error> {
    let sys = build_ku_escape(&KuEscapeConfig::new(FamilyDescriptor::z_sin_z(), 0.1, 6))?;
    let addrs = sample_addresses(&sys.system, 6, 32, 42)?;
    let mut failed = 0;
    let mut min_mod = f64::INFINITY;
    let mut max_dist: f64 = 0.0;
    let mut steps = 0;
    for a in &addrs {
        let au = escape_audit(&sys, a)?;
        failed += usize::from(!au.passed);
        min_mod = min_mod.min(au.min_modulus);
        max_dist = max_dist.max(au.max_pole_distance);
        steps = au.iterates.len() - 1;
    }
    Ok(check(
        failed == 0,
        format!(
            "t_target 0.1: {failed}/32 failed; {steps} forward steps, min |F^j| = {min_mod:.3} > R2 = {:.3}, max pole distance {max_dist:.3} < S = {:.3}",
            sys.geometry.r2, sys.geometry.s
        ),
    ))
}

fn distortion_grid() -> Result<Outcome, Error> {
    let tan = FamilyDescriptor::tan_power(ComplexPoint::new(1.0, 0.0), 1)?;
    let tan10 = FamilyDescriptor::tan_power(ComplexPoint::new(10.0, 0.0), 1)?;
    let mut systems: Vec<(&str, NcifsSystem)> = vec![("similarity", NcifsSystem::similarity(&[0.3, 0.2, 0.4])?)];
    systems.push(("mayer", build_mayer(&MayerConfig::new(tan, 3))?.system));
    let mut pm = MayerConfig::new(tan10, 3);
    pm.koebe_k = Some(audited_k(&tan10)?);
    pm.perturb = PerturbationSequence::random_in_ball(0.01, 0.01, 42);
    pm.levels = 5;
    systems.push(("perturbed mayer", build_mayer(&pm)?.system));
    let mut ka = KuAffineConfig::new(FamilyDescriptor::z_sin_z(), 0.1);
    ka.n_t = Some(3);
    systems.push(("ku affine", build_ku_affine(&ka)?.system));
    systems.push(("ku escape", build_ku_escape(&KuEscapeConfig::new(FamilyDescriptor::z_sin_z(), 0.1, 5))?.system));
    let mut cells = 0;
    let mut skipped = 0;
    let mut violations = 0;
    for (_, sys) in &systems {
        for n in 1..=5 {
            if sys.word_count(n)? > 200_000 {
                skipped += 5;
                continue;
            }
            for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let exact = exact_zn(sys, n, t, DEFAULT_WORD_CAP)?;
                let prod = product_lower_bound(sys, n, t)?;
                cells += 1;
                violations += usize::from(prod > exact * (1.0 + 1e-12));
            }
        }
    }
    Ok(check(
        violations == 0,
        format!("{} systems, {cells} cells, {violations} violations ({skipped} cells over the enumeration budget)", systems.len()),
    ))
}

fn formulas() -> Result<Outcome, Error> {
    let close = |a: f64, b: f64| (a - b).abs() <= 4.0 * f64::EPSILON * b.abs();
    let mut ok = close(theoretical_dimension(1.0, 1.0, 1)?, 1.0 / 3.0);
    ok &= close(theoretical_dimension(0.5, 0.5, 1)?, 0.2);
    for q in 1..=8 {
        let q_f = q as f64;
        ok &= close(theoretical_dimension(2.0, 0.0, q)?, 2.0 * q_f / (q_f + 1.0));
        ok &= close(mayer_dimension(1.0, 0.0, q)?, q_f / (q_f + 1.0));
    }
    for d in 1..=10 {
        let d = d as f64;
        ok &= close(theoretical_dimension(d / 2.0 + 1.0, d / 2.0, 1)?, (d + 2.0) / (d + 4.0));
    }
    Ok(check(ok, "all closed forms within 4 ulp"))
}

fn main() {
    type Criterion = (usize, &'static str, f64, fn() -> Result<Outcome, Error>);
    let criteria: [Criterion; 10] = [
        (1, "moran oracle equivalence", 10.0, moran),
        (2, "threshold dichotomy 1/(z sin z)", 60.0, || {
            dichotomy(FamilyDescriptor::z_sin_z(), 0.40, 0.30, (0.31, 0.36), true)
        }),
        (3, "threshold dichotomy 1/(z cos sqrt z)", 60.0, || {
            dichotomy(FamilyDescriptor::z_cos_sqrt_z(), 0.25, 0.15, (0.18, 0.23), false)
        }),
        (4, "order recovery", 5.0, order_recovery),
        (5, "ku affine lower bound", 120.0, ku_affine_lower_bound),
        (6, "mayer monotonicity", 300.0, mayer_monotone),
        (7, "perturbation stability", f64::INFINITY, perturbation_stability),
        (8, "escape realization", 30.0, escape_realization),
        (9, "distortion inequality", f64::INFINITY, distortion_grid),
        (10, "formula suite", 1.0, formulas),
    ];
    let mut unexpected = Vec::new();
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let res = std::panic::catch_unwind(f);
        let secs = start.elapsed().as_secs_f64();
        let o = match res {
            Ok(Ok(o)) => within_time(o, secs, limit),
            Ok(Err(e)) => check(false, format!("error {}: {e}", e.kind())),
            Err(_) => check(false, "panicked"),
        };
        println!("{} {id:>2} {name}: {} ({secs:.2} s)", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed && !EXPECTED_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
