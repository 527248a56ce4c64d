use equirate::domain::{make_design, CompactDomain, DesignKind, MeasureQ};
use equirate::equipartition::simulate;
use equirate::function::RegressionFunction;
use equirate::gp::{CoefficientPrior, FeatureKind, GpSpec, Kernel, SigmaPrior};
use equirate::klrate::{Theta, TrueModel};
use equirate::noise::NoiseFamily;
use equirate::posterior::{
    discrete_posterior, discrete_set_mass, mcmc_posterior, posterior_set_mass, ChainConfig, DiscreteThetaSpace, ModelPrior, PosteriorSamples,
};

fn dom() -> CompactDomain {
    CompactDomain::unit(1)
}

fn truth(fam: NoiseFamily) -> TrueModel {
    TrueModel::new(RegressionFunction::sinusoid(dom(), 0, 0.6, 1.0).unwrap(), 0.5, fam).unwrap()
}

#[test]
fn discrete_weights_are_probabilities() {
    let q = MeasureQ::uniform(dom());
    let t = truth(NoiseFamily::Laplace);
    let atoms: Vec<Theta> = [0.0, 0.2, 0.5]
        .iter()
        .map(|d| Theta::new(t.eta0().shifted(*d), 0.5).unwrap())
        .collect();
    let space = DiscreteThetaSpace::uniform(atoms, &NoiseFamily::Laplace, &t, &q).unwrap();
    assert_eq!(space.h_inf(), 0.0);
    let design = make_design(&q, DesignKind::IidFromQ { seed: 1 }, 500).unwrap();
    let ds = simulate(&t, &design, 2).unwrap();
    let post = discrete_posterior(&space, &ds, &NoiseFamily::Laplace, &t, &[10, 100, 500]).unwrap();
    for row in 0..3 {
        let w = post.weights(row);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|p| *p >= 0.0));
    }
    assert!(post.weights(2)[0] > post.weights(0)[0]);
    let m = discrete_set_mass(&space, &post, 2, |_, h| h > 0.0).unwrap();
    assert!((m.mass - post.weights(2)[1] - post.weights(2)[2]).abs() < 1e-12);
}

fn chain(length: usize) -> ChainConfig {
    ChainConfig {
        length,
        burnin: length / 10,
        thin: 1,
        step: 1.0,
    }
}

#[test]
fn longer_chains_agree() {
    let q = MeasureQ::uniform(dom());
    let t = truth(NoiseFamily::Normal);
    let spec = GpSpec::centered(dom(), Kernel::matern(2.5, 1.0, 0.2).unwrap()).unwrap();
    let prior = ModelPrior {
        coefficients: CoefficientPrior::from_spec(&spec, 6, FeatureKind::Cosine).unwrap(),
        sigma: SigmaPrior::default(),
    };
    let design = make_design(&q, DesignKind::IidFromQ { seed: 3 }, 100).unwrap();
    let ds = simulate(&t, &design, 4).unwrap();
    let a = mcmc_posterior(&prior, &ds, &NoiseFamily::Normal, chain(10_000), 5).unwrap();
    let b = mcmc_posterior(&prior, &ds, &NoiseFamily::Normal, chain(20_000), 6).unwrap();
    let (ma, ea, _) = PosteriorSamples::mean_with_error(&a.sigma_chain());
    let (mb, eb, _) = PosteriorSamples::mean_with_error(&b.sigma_chain());
    assert!((ma - mb).abs() <= 4.0 * (ea * ea + eb * eb).sqrt(), "{ma} ± {ea} vs {mb} ± {eb}");
    let (w0, e0, _) = PosteriorSamples::mean_with_error(&a.coefficient_chain(0));
    let (w1, e1, _) = PosteriorSamples::mean_with_error(&b.coefficient_chain(0));
    assert!((w0 - w1).abs() <= 4.0 * (e0 * e0 + e1 * e1).sqrt());

    let again = mcmc_posterior(&prior, &ds, &NoiseFamily::Normal, chain(10_000), 5).unwrap();
    assert_eq!(a.sigma_chain(), again.sigma_chain());

    let near = posterior_set_mass(&a, |th| Ok((th.sigma - 0.5).abs() < 0.2)).unwrap();
    assert!(near.mass > 0.5 && near.error > 0.0);
}

#[test]
fn short_chain_is_rejected() {
    let t = truth(NoiseFamily::Normal);
    let q = MeasureQ::uniform(dom());
    let design = make_design(&q, DesignKind::IidFromQ { seed: 3 }, 20).unwrap();
    let ds = simulate(&t, &design, 4).unwrap();
    let prior = ModelPrior {
        coefficients: CoefficientPrior::mean_only(t.eta0().clone()),
        sigma: SigmaPrior::default(),
    };
    let bad = ChainConfig {
        length: 500,
        burnin: 100,
        thin: 1,
        step: 1.0,
    };
    assert!(mcmc_posterior(&prior, &ds, &NoiseFamily::Normal, bad, 1).is_err());
}

#[test]
fn coarse_laplace_grid_is_refined() {
    use equirate::posterior::{posterior_predictive_density, predictive_distance, Mixture, YGrid};
    use equirate::Error;
    let mix = Mixture {
        family: NoiseFamily::Laplace,
        components: vec![(0.0, 0.05, 0.5), (0.3, 2.0, 0.5)],
    };
    let grid = YGrid::covering(&[&mix], 2001).unwrap();
    assert!(matches!(posterior_predictive_density(&mix, &grid), Err(Error::GridTooCoarse { .. })));
    let t = TrueModel::new(RegressionFunction::zero(dom()), 1.0, NoiseFamily::Laplace).unwrap();
    let r = predictive_distance(&t, &[0.5], &mix, 1, 2001).unwrap();
    assert!((r.mass - 1.0).abs() <= 1e-6);
    assert!(r.hellinger_sq > 0.0 && r.tv < 1.0);
}
