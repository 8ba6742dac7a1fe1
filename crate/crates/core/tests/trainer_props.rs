use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sizedl1::losses::{Compensation, SizedConfig};
use sizedl1::synth::{NoiseModel, SizeDistribution};
use sizedl1::trainer::{
    objective, sgd_step, Branch, Dataset, LossVariant, LrSchedule, ModelGrad, RefinementModel,
    TrainConfig,
};
use sizedl1::Exec;

fn dataset(seed: u64) -> Dataset {
    Dataset::generate(seed, 4, 5, &SizeDistribution::default(), &NoiseModel::absolute(0.01)).unwrap()
}

fn config(variant: LossVariant, compensation: Compensation) -> TrainConfig {
    TrainConfig {
        loss_variant: variant,
        sized: SizedConfig::with_compensation(compensation),
        ..TrainConfig::default()
    }
}

fn perturbed_model(seed: u64) -> RefinementModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = RefinementModel::identity();
    m.weights.iter_mut().flatten().for_each(|w| *w = rng.random_range(-1e-3..1e-3));
    m
}

fn loss_and_grad(
    model: &RefinementModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> (f64, ModelGrad) {
    let (inits, targets) = (data.inits(), data.targets());
    let branch = Branch { inits: &inits, targets: &targets, kind: cfg.l1_kind(cfg.loss_variant), weight: 1.0 };
    objective(model, &[branch], cfg, Exec::Sequential).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn model_gradient_matches_finite_differences(
        seed in 0u64..10_000,
        sized in any::<bool>(),
        batch_mean in any::<bool>(),
    ) {
        let data = dataset(seed);
        let variant = if sized { LossVariant::SizedL1 } else { LossVariant::PlainL1 };
        let comp = if batch_mean { Compensation::BatchMean } else { Compensation::None };
        let cfg = config(variant, comp);
        let model = perturbed_model(seed);
        let (_, grad) = loss_and_grad(&model, &data, &cfg);
        let h = 1e-8;
        for r in 0..4 {
            for k in 0..5 {
                let mut plus = model;
                let mut minus = model;
                plus.weights[r][k] += h;
                minus.weights[r][k] -= h;
                let fd = (loss_and_grad(&plus, &data, &cfg).0 - loss_and_grad(&minus, &data, &cfg).0) / (2.0 * h);
                let err = (fd - grad[r][k]).abs() / fd.abs().max(grad[r][k].abs()).max(1.0);
                prop_assert!(err <= 1e-4, "weight ({r}, {k}): fd {fd} vs analytic {}", grad[r][k]);
            }
        }
    }

    #[test]
    fn small_steps_descend(seed in 0u64..10_000, sized in any::<bool>()) {
        let data = dataset(seed);
        let variant = if sized { LossVariant::SizedL1 } else { LossVariant::PlainL1 };
        let cfg = TrainConfig { learning_rate: 1e-10, ..config(variant, Compensation::BatchMean) };
        let model = perturbed_model(seed);
        let (inits, targets) = (data.inits(), data.targets());
        let branch = Branch { inits: &inits, targets: &targets, kind: cfg.l1_kind(variant), weight: 1.0 };
        let out = sgd_step(&model, &[branch], &cfg, 0, Exec::Sequential).unwrap();
        let after = loss_and_grad(&out.model, &data, &cfg).0;
        prop_assert!(after < out.loss, "{after} >= {}", out.loss);
    }
}

#[test]
fn cosine_schedule_decays_to_zero() {
    let cfg = TrainConfig { learning_rate: 0.2, lr_schedule: LrSchedule::Cosine, ..TrainConfig::default() };
    assert_eq!(cfg.rate_at(0, 10), 0.2);
    assert!((cfg.rate_at(5, 10) - 0.1).abs() < 1e-15);
    assert!(cfg.rate_at(10, 10).abs() < 1e-15);
    let rates: Vec<f64> = (0..=10).map(|s| cfg.rate_at(s, 10)).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn constant_schedule_is_flat() {
    let cfg = TrainConfig { learning_rate: 0.2, ..TrainConfig::default() };
    assert!((0..10).all(|s| cfg.rate_at(s, 10) == 0.2));
}
