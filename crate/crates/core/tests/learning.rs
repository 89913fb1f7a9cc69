//! The learner has to actually learn: a one-step, two-armed problem where
//! arm 0 pays 1 and arm 1 pays 0.

use rand::{Rng, SeedableRng};

use malthus::learner::{act, log_softmax, Network, OptimizerConfig, PolicySpec, Profile, SpeciesLearner, Trajectory};
use malthus::pomg::{IslandId, Observation};
use malthus::rng::SimRng;

#[test]
fn two_armed_bandit_is_learned() {
    let net = Network::new(PolicySpec::new(Profile::Tiny, 2)).unwrap();
    let mut rng = SimRng::seed_from_u64(3);
    let mut learner = SpeciesLearner::new(0, net.init_params(&mut rng));
    let cfg = OptimizerConfig {
        learning_rate: 0.005,
        ..OptimizerConfig::default()
    };
    let obs = Observation {
        pixels: (0..Observation::LEN).map(|_| rng.gen()).collect(),
        last_reward: 0.0,
    };
    let p_best = |params: &[f64]| {
        let (logits, _, _) = net.forward(params, &obs, &net.initial_state()).unwrap();
        log_softmax(&logits)[0].exp()
    };
    let start = p_best(&learner.params);
    let mut reached = None;
    for update in 1..=2000 {
        let batch: Vec<Trajectory> = (0..cfg.batch_size)
            .map(|_| {
                let (a, logp, _) = act(&net, &learner.params, &obs, &net.initial_state(), &mut rng).unwrap();
                Trajectory {
                    species: 0,
                    island: IslandId::Archipelago(0),
                    observations: vec![obs.clone()],
                    actions: vec![a as u8],
                    behavior_logp: vec![logp],
                    rewards: vec![if a == 0 { 1.0 } else { 0.0 }],
                    initial_state: net.initial_state(),
                    bootstrap: None,
                }
            })
            .collect();
        learner.update(&net, &batch, &cfg).unwrap();
        if p_best(&learner.params) > 0.95 {
            reached = Some(update);
            break;
        }
    }
    assert!(
        reached.is_some(),
        "π(best) went from {start:.3} to {:.3} in 2000 updates",
        p_best(&learner.params)
    );
}
