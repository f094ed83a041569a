use h2t2::baselines::{offline_best_two_threshold_naive, pair_loss, PairDomain};
use h2t2::datagen::{gen_calibrated, gen_mixture, MixtureSpec, ScoreLaw};
use h2t2::domain::CostModel;
use h2t2::h2t2::{ExpertGrid, H2t2Policy, PseudoLossVariant};
use h2t2::harness::{realize_betas, run, run_with_betas, Choice, Policy, RoundInput, SimRng};

#[test]
fn full_feedback_argmax_is_the_hindsight_best() {
    let data = gen_calibrated(&ScoreLaw::uniform(4).unwrap(), 5000, 2).unwrap();
    let costs = CostModel::fixed(0.7, 1.0, 0.3).unwrap();
    let betas = realize_betas(&data, &costs, 0).unwrap();
    let mut policy = H2t2Policy::new(4, 0.2, 1.0, PseudoLossVariant::Unbiased).unwrap();
    run_with_betas(&mut policy, &data, &costs, &betas, 0).unwrap();
    let best =
        offline_best_two_threshold_naive(&data, &costs, &betas, PairDomain::Experts).unwrap();
    let chosen = pair_loss(policy.grid().argmax_pair(), &data, &betas, &costs);
    assert!(
        (chosen - best.loss).abs() < 1e-9,
        "{chosen} vs {}",
        best.loss
    );
}

#[test]
fn log_weights_stay_finite_over_a_million_rounds() {
    let data = gen_mixture(&MixtureSpec::reference(), 1_000_000, 4, 6).unwrap();
    let costs = CostModel::fixed(0.7, 1.0, 0.3).unwrap();
    let mut policy = H2t2Policy::new(4, 1.0, 0.05, PseudoLossVariant::Unbiased).unwrap();
    let trace = run(&mut policy, &data, &costs, 6).unwrap();
    assert_eq!(trace.horizon(), 1_000_000);
    assert!(policy.grid().log_weights().iter().all(|w| w.is_finite()));
    assert!(policy.grid().normalized_weights().iter().sum::<f64>() > 0.999_999);
}

#[test]
fn huge_learning_rate_is_numerically_safe() {
    let data = gen_mixture(&MixtureSpec::reference(), 5000, 4, 7).unwrap();
    let costs = CostModel::fixed(0.7, 1.0, 0.3).unwrap();
    let mut policy = H2t2Policy::new(4, 1e3, 0.05, PseudoLossVariant::Unbiased).unwrap();
    let trace = run(&mut policy, &data, &costs, 7).unwrap();
    assert!(trace.total_loss().is_finite());
    assert!(policy.grid().log_weights().iter().all(|w| w.is_finite()));
}

/// Samples from a fresh uniform grid every round and never learns.
struct UniformReplay {
    inner: H2t2Policy,
}

impl Policy for UniformReplay {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn decide(&mut self, input: &RoundInput, rng: &mut SimRng) -> Choice {
        self.inner.decide(input, rng)
    }

    fn learn(
        &mut self,
        _: &RoundInput,
        _: &Choice,
        _: Option<h2t2::domain::Label>,
        _: &CostModel,
    ) -> h2t2::Result<()> {
        Ok(())
    }
}

#[test]
fn tiny_learning_rate_behaves_like_static_uniform_weights() {
    let data = gen_mixture(&MixtureSpec::reference(), 3000, 4, 8).unwrap();
    let costs = CostModel::fixed(0.7, 1.0, 0.3).unwrap();
    let mut slow = H2t2Policy::new(4, 1e-12, 0.1, PseudoLossVariant::Unbiased).unwrap();
    let mut frozen = UniformReplay {
        inner: H2t2Policy::new(4, 1e-12, 0.1, PseudoLossVariant::Unbiased).unwrap(),
    };
    let a = run(&mut slow, &data, &costs, 8).unwrap();
    let b = run(&mut frozen, &data, &costs, 8).unwrap();
    let same = a
        .records
        .iter()
        .zip(&b.records)
        .filter(|(x, y)| x.decision == y.decision)
        .count();
    assert!(same >= 2990, "{same} of 3000 decisions agree");
}

#[test]
fn literal_variant_ignores_local_rounds() {
    let data = gen_mixture(&MixtureSpec::reference(), 500, 3, 9).unwrap();
    let costs = CostModel::fixed(0.7, 1.0, 0.3).unwrap();
    let mut policy = H2t2Policy::new(3, 0.5, 0.1, PseudoLossVariant::Literal).unwrap();
    let mut rng = <SimRng as rand::SeedableRng>::seed_from_u64(1);
    for (t, s) in data.samples().iter().enumerate() {
        let input = RoundInput {
            t,
            score: s.score,
            beta: 0.3,
        };
        let before = policy.grid().log_weights().to_vec();
        let choice = policy.decide(&input, &mut rng);
        let offloaded = choice.decision.is_offload();
        policy
            .learn(&input, &choice, offloaded.then_some(s.rdl_label), &costs)
            .unwrap();
        if !offloaded {
            assert_eq!(before, policy.grid().log_weights());
        }
    }
}

#[test]
fn region_masses_partition_the_weight() {
    let mut grid = ExpertGrid::new(5, 1.0, 0.1, PseudoLossVariant::Unbiased).unwrap();
    let lw: Vec<f64> = (0..grid.pairs().len())
        .map(|k| -((k * 7919 % 101) as f64) / 10.0)
        .collect();
    grid.set_log_weights(lw).unwrap();
    for i in 0..32 {
        let m = grid.region_masses(h2t2::domain::Score::new(i, 5).unwrap());
        assert!((m.q + m.p + m.r - 1.0).abs() < 1e-12);
        assert!(m.q >= 0.0 && m.p >= 0.0 && m.r >= 0.0);
    }
}
