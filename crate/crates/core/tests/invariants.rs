use proptest::prelude::*;

use gan_likelihood::experiments::{model_from_str, model_to_string, GeneratorKind};
use gan_likelihood::gan::{EntropicGanModel, TrainConfig};
use gan_likelihood::gaussian::LinearGaussianOracle;
use gan_likelihood::inference::{latent_posterior, WeightMode};
use gan_likelihood::likelihood::{
    surrogate_log_likelihood, ConstantMode, EntropyMode, Histogram, LikelihoodOptions,
};
use gan_likelihood::ot::{cost_matrix, sinkhorn, sinkhorn_loss, LossKind, SinkhornOptions};
use gan_likelihood::rng::SeededRng;
use gan_likelihood::{SampleBatch, Tensor};

fn model(kind: GeneratorKind, r: usize, d: usize, seed: u64) -> EntropicGanModel {
    let mut cfg = TrainConfig::new(kind.spec(r, d, &[6, 5]).unwrap());
    cfg.discriminator_hidden = vec![5];
    cfg.lambda = 0.3;
    cfg.seed = seed;
    EntropicGanModel::init(&cfg, d, 50).unwrap()
}

fn simplex(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sinkhorn_plans_have_the_requested_marginals(
        n in 1usize..8, m in 1usize..8, lambda in 0.05f64..2.0, seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let (a, b) = (simplex(&mut rng, n), simplex(&mut rng, m));
        let p = SampleBatch::new(Tensor::matrix(n, 2, rng.normals(2 * n)).unwrap()).unwrap();
        let q = SampleBatch::new(Tensor::matrix(m, 2, rng.normals(2 * m)).unwrap()).unwrap();
        let cost = cost_matrix(LossKind::HalfSquaredL2, &p, &q).unwrap();
        let s = sinkhorn(&cost, &a, &b, lambda, SinkhornOptions::default()).unwrap();
        prop_assert!(s.coupling.plan.data().iter().all(|&v| v >= 0.0));
        prop_assert!(s.coupling.marginal_violation() <= 1e-8);
    }

    #[test]
    fn sinkhorn_loss_vanishes_on_identical_inputs(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let p = SampleBatch::new(Tensor::matrix(n, 3, rng.normals(3 * n)).unwrap()).unwrap();
        let w = sinkhorn_loss(&p, &p, LossKind::L2Norm, 0.5).unwrap();
        prop_assert!(w.abs() < 1e-12);
    }

    #[test]
    fn model_file_round_trips_bit_exactly(seed in any::<u64>(), leaky in any::<bool>(), d in 1usize..4) {
        let kind = if leaky { GeneratorKind::Leaky } else { GeneratorKind::Linear };
        let m = model(kind, d, d, seed);
        let text = model_to_string(&m).unwrap();
        let back = model_from_str(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(model_to_string(&back).unwrap(), text);
    }

    #[test]
    fn report_total_is_the_sum_of_its_terms(seed in any::<u64>(), mode in 0usize..4) {
        let m = model(GeneratorKind::Leaky, 2, 2, seed);
        let mut opts = if mode % 2 == 0 {
            LikelihoodOptions::discrete(64, seed)
        } else {
            LikelihoodOptions::differential(64, seed)
        };
        opts.constant_mode = [ConstantMode::Standard, ConstantMode::Dimensional, ConstantMode::PerSample, ConstantMode::None][mode];
        let r = surrogate_log_likelihood(&[0.3, -0.7], &m, &opts).unwrap();
        prop_assert!((r.total - (r.cost + r.entropy + r.prior + r.constant)).abs() <= 1e-9 * (1.0 + r.total.abs()));
        prop_assert!(r.std_error >= 0.0);
        if opts.entropy_mode == EntropyMode::Discrete {
            // discrete weight entropy lies in [0, ln n]
            prop_assert!(r.entropy >= -1e-12 && r.entropy <= (64f64).ln() + 1e-12);
        }
    }

    #[test]
    fn histogram_counts_every_value(values in prop::collection::vec(-300.0f64..50.0, 1..200), bins in 1usize..40) {
        let h = Histogram::from_values(&values, bins, (-200.0, 10.0)).unwrap();
        prop_assert_eq!(h.total(), values.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// The gap is a KL divergence: its estimate may dip below zero only by
    /// Monte-Carlo noise.
    #[test]
    fn approximation_gap_is_nonnegative_up_to_noise(seed in any::<u64>(), d in 1usize..4) {
        let m = model(GeneratorKind::Linear, d, d, seed);
        let (g, c) = m.generator.affine_map().unwrap();
        let oracle = LinearGaussianOracle::with_offset(&g, &c, m.lambda).unwrap();
        let y = oracle.sample_data(1, seed ^ 1).unwrap();
        let post = latent_posterior(y.point(0), &m, 4000, seed ^ 2, WeightMode::Snis).unwrap();
        let gap = oracle.approximation_gap(y.point(0), &post).unwrap();
        prop_assert!(gap.kl >= -3.0 * gap.std_error, "kl {} se {}", gap.kl, gap.std_error);
    }
}
