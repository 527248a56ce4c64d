use equirate::domain::CompactDomain;
use equirate::function::{Basis, RegressionFunction};
use equirate::gp::{CoefficientPrior, FeatureKind, GpSpec, Kernel, SigmaPrior};
use equirate::klrate::Theta;
use equirate::sieve::{prior_sieve_complement_mass, sieve_member, SieveSpec};
use proptest::prelude::*;

fn dom() -> CompactDomain {
    CompactDomain::unit(1)
}

fn theta(c: &[f64], log_sigma: f64) -> Theta {
    let eta = RegressionFunction::expansion(dom(), Basis::cosine(&dom(), c.len()), c.to_vec()).unwrap();
    Theta::new(eta, log_sigma.exp()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn nested_in_n(c in proptest::collection::vec(-30.0f64..30.0, 4), ls in -4.0f64..4.0, n in 1u64..500, beta in 0.01f64..3.0) {
        let th = theta(&c, ls);
        let a = sieve_member(&th, &SieveSpec::new(beta, n).unwrap(), 32).unwrap().is_member();
        let b = sieve_member(&th, &SieveSpec::new(beta, n + 1).unwrap(), 32).unwrap().is_member();
        prop_assert!(!a || b);
    }

    #[test]
    fn monotone_in_beta(c in proptest::collection::vec(-30.0f64..30.0, 4), ls in -4.0f64..4.0, beta in 0.01f64..3.0, up in 1.0f64..4.0) {
        let th = theta(&c, ls);
        let a = sieve_member(&th, &SieveSpec::new(beta, 10).unwrap(), 32).unwrap().is_member();
        let b = sieve_member(&th, &SieveSpec::new(beta * up, 10).unwrap(), 32).unwrap().is_member();
        prop_assert!(!a || b);
    }
}

#[test]
fn complement_mass_ignores_worker_count() {
    let spec = GpSpec::centered(dom(), Kernel::matern(2.5, 1.0, 0.2).unwrap()).unwrap();
    let prior = CoefficientPrior::from_spec(&spec, 8, FeatureKind::Cosine).unwrap();
    let sp = SigmaPrior::default();
    let s = SieveSpec::new(0.1, 5).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| prior_sieve_complement_mass(&prior, &sp, &s, 10_000, 9, 16).unwrap())
    };
    assert_eq!(run(1), run(3));
    assert!(prior_sieve_complement_mass(&prior, &sp, &s, 100, 9, 16).is_err());
}
