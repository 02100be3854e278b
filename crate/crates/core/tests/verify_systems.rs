use bowenlab::constructions::{build_ku_affine, build_ku_escape, build_mayer, KuAffineConfig, KuEscapeConfig, MayerConfig};
use bowenlab::families::{FamilyDescriptor, PerturbationSequence};
use bowenlab::verify::*;
use bowenlab::ComplexPoint;

fn tan() -> FamilyDescriptor {
    FamilyDescriptor::tan_power(ComplexPoint::new(1.0, 0.0), 1).unwrap()
}

#[test]
fn mayer_limit_points_stay_near_b_and_blow_up() {
    let sys = build_mayer(&MayerConfig::new(tan(), 4)).unwrap();
    let addrs = sample_addresses(&sys.system, 10, 32, 3).unwrap();
    for a in &addrs {
        let z = sample_limit_point(&sys.system, &a.prefix(8)).unwrap();
        assert!((z - sys.b.location).norm() <= sys.s1, "{z}");
        assert!(nested_containment(&sys.system, a).unwrap());
    }
    let rep = derivative_blowup_report(&sys.system, &addrs, &sys.family, &PerturbationSequence::zero());
    assert!(rep.passed, "{:?}", rep.failures);
}

#[test]
fn ku_affine_orbits_blow_up() {
    let sys = build_ku_affine(&KuAffineConfig::new(FamilyDescriptor::z_sin_z(), 0.2)).unwrap();
    let addrs = sample_addresses(&sys.system, 8, 16, 5).unwrap();
    assert!(derivative_blowup_audit(&sys.system, &addrs, &sys.family, &PerturbationSequence::zero()));
    // a shorter address is outside the audit's scope
    assert!(!derivative_blowup_audit(&sys.system, &[addrs[0].prefix(3)], &sys.family, &PerturbationSequence::zero()));
}

#[test]
fn escaping_limit_points_follow_schedule() {
    let sys = build_ku_escape(&KuEscapeConfig::new(FamilyDescriptor::z_sin_z(), 0.1, 4)).unwrap();
    for a in sample_addresses(&sys.system, 4, 8, 11).unwrap() {
        let audit = escape_audit(&sys, &a).unwrap();
        assert!(audit.passed, "{:?}: min |F^j| = {}, max dist = {}, residual {:e}", a.word, audit.min_modulus, audit.max_pole_distance, audit.forward_residual);
        let expected = sys.schedule.levels[3].time + 1;
        assert_eq!(audit.iterates.len(), expected);
    }
}

#[test]
fn naive_iteration_of_escaping_point_departs_quickly() {
    // the chain reproduces the orbit; plain iteration amplifies rounding by |f'| per step
    let sys = build_ku_escape(&KuEscapeConfig::new(FamilyDescriptor::z_sin_z(), 0.1, 3)).unwrap();
    let a = SymbolicAddress::new(vec![0, 0, 0]);
    let audit = escape_audit(&sys, &a).unwrap();
    let tr = forward_orbit(&sys.family, &sys.perturb, audit.iterates[0], 2, 0.0).unwrap();
    assert!((tr.iterates[1] - audit.iterates[1]).norm() < 1e-6 * audit.iterates[1].norm());
}
