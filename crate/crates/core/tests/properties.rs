//! Property tests for invariants that hold for every admissible input.

use std::sync::OnceLock;

use bowenlab::complex::{log_sum_exp, pairwise_sum, Disk};
use bowenlab::constructions::{build_mayer, MayerConfig, MayerSystem};
use bowenlab::families::{
    enumerate_poles_count, evaluate, local_branch, mayer_dimension, theoretical_dimension, FamilyDescriptor,
    PerturbationSequence,
};
use bowenlab::ncifs::{bowen_dimension, exact_zn, product_lower_bound, NcifsSystem};
use bowenlab::verify::{moran_oracle, nested_containment, sample_addresses, sample_limit_point, SymbolicAddress};
use bowenlab::ComplexPoint;
use proptest::prelude::*;

fn tan_system() -> &'static MayerSystem {
    static SYS: OnceLock<MayerSystem> = OnceLock::new();
    SYS.get_or_init(|| {
        build_mayer(&MayerConfig::new(FamilyDescriptor::tan_power(ComplexPoint::new(1.0, 0.0), 1).unwrap(), 3)).unwrap()
    })
}

fn ratio_list() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..0.45, 2..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn moran_root_solves_equation(r in ratio_list()) {
        let t = moran_oracle(&r).unwrap();
        let s: f64 = r.iter().map(|x| x.powf(t)).sum();
        prop_assert!((s - 1.0).abs() < 1e-10);
        let r_max = r.iter().cloned().fold(0.0, f64::max);
        let r_min = r.iter().cloned().fold(1.0, f64::min);
        let n = r.len() as f64;
        // n r_min^t <= 1 <= n r_max^t
        prop_assert!(t <= n.ln() / -r_max.ln() + 1e-12 && t >= n.ln() / -r_min.ln() - 1e-12);
    }

    #[test]
    fn engine_matches_moran(r in ratio_list()) {
        let d = bowen_dimension(&NcifsSystem::similarity(&r).unwrap(), 0.0, 3.0, 1e-9, 4, 2_000_000).unwrap();
        let mid = 0.5 * (d.bowen_bracket.0 + d.bowen_bracket.1);
        prop_assert!((mid - moran_oracle(&r).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn pairwise_matches_naive(xs in prop::collection::vec(0.0f64..1e3, 0..3000)) {
        let naive: f64 = xs.iter().sum();
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-12 * naive.max(1.0));
    }

    #[test]
    fn log_sum_exp_bounds(xs in prop::collection::vec(-800.0f64..800.0, 1..200)) {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = log_sum_exp(&xs);
        prop_assert!(l >= m - 1e-12 && l <= m + (xs.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn closed_forms_are_ordered(rho in 0.1f64..4.0, beta in 0.0f64..3.0, m in 1u32..8) {
        let d = theoretical_dimension(rho, beta, m).unwrap();
        prop_assert!(d > 0.0 && d < rho);
        prop_assert!(theoretical_dimension(rho, beta, m + 1).unwrap() > d);
        prop_assert!(theoretical_dimension(rho, beta + 0.5, m).unwrap() < d);
        let q = mayer_dimension(rho, beta, m).unwrap();
        prop_assert!(q > 0.0 && q < rho && mayer_dimension(rho, beta, m + 1).unwrap() > q);
    }

    #[test]
    fn random_steps_are_admissible_and_reproducible(eps in 1e-4f64..0.1, delta in 0.0f64..0.1, seed in any::<u64>(), n in 1usize..500) {
        let p = PerturbationSequence::random_in_ball(eps, delta, seed);
        let s = p.step(n);
        prop_assert!(s.admissible(eps, delta.max(1e-300)));
        prop_assert_eq!(s, p.step(n));
        prop_assert!(p.validate(8).is_ok());
    }

    #[test]
    fn inverse_branch_round_trip(k in 0usize..40, ang in 0.0f64..std::f64::consts::TAU, rad in 0.0f64..0.9) {
        let fam = FamilyDescriptor::z_sin_z();
        let poles = enumerate_poles_count(&fam, 41).unwrap();
        let pole = poles.iter().filter(|p| p.location.norm() > 1.0).nth(k).unwrap();
        let domain = Disk::new(ComplexPoint::new(60.0, 0.0), 5.0).unwrap();
        let br = local_branch(&fam, &PerturbationSequence::zero().step(1), pole, 1, domain).unwrap();
        let w = domain.center + ComplexPoint::from_polar(rad * domain.radius, ang);
        let (z, d) = br.eval(w).unwrap();
        let back = evaluate(&fam, &br.perturbation, z).unwrap();
        prop_assert!((back - w).norm() < 1e-9 * w.norm());
        prop_assert!((d * fam.df0(z).unwrap() - 1.0).norm() < 1e-9);
        prop_assert!((z - pole.location).norm() < 0.1);
    }

    #[test]
    fn product_bound_below_exact(n in 1usize..4, t in 0.0f64..1.0) {
        let sys = &tan_system().system;
        let exact = exact_zn(sys, n, t, 2_000_000).unwrap();
        let prod = product_lower_bound(sys, n, t).unwrap();
        prop_assert!(prod <= exact * (1.0 + 1e-12));
    }

    #[test]
    fn similarity_limit_points_nest(r in ratio_list(), seed in any::<u64>()) {
        let sys = NcifsSystem::similarity(&r).unwrap();
        for a in sample_addresses(&sys, 7, 6, seed).unwrap() {
            prop_assert!(nested_containment(&sys, &a).unwrap());
            prop_assert!(sample_limit_point(&sys, &a).unwrap().norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn mayer_limit_points_lie_in_u1(word in prop::collection::vec(0usize..4, 1..9)) {
        let sys = tan_system();
        let z = sample_limit_point(&sys.system, &SymbolicAddress::new(word)).unwrap();
        prop_assert!((z - sys.b.location).norm() <= sys.s1);
    }
}
