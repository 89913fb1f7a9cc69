//! Species learners: one recurrent actor-critic network per species,
//! trained with v-trace targets and RMSProp on batches of trajectory
//! segments drawn only from that species.

mod checkpoint;
mod network;
pub mod scripted;
mod vtrace;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomg::{IslandId, Observation};
use crate::rng::categorical;

pub use checkpoint::{load_params, save_params, spec_hash, ParamsFile};
pub use network::{log_softmax, Network, PolicySpec, Profile, RecurrentState, Unroll};
pub use vtrace::{vtrace_targets, VTrace};

pub const UNROLL_LENGTH: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub rmsprop_epsilon: f64,
    pub rmsprop_decay: f64,
    pub batch_size: usize,
    pub discount: f64,
    pub entropy_cost: f64,
    pub baseline_cost: f64,
    pub unroll_length: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0007,
            rmsprop_epsilon: 1e-4,
            rmsprop_decay: 0.99,
            batch_size: 32,
            discount: 0.99,
            entropy_cost: 0.003,
            baseline_cost: 0.5,
            unroll_length: UNROLL_LENGTH,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learner.optimizer.rmsprop_epsilon", self.rmsprop_epsilon),
            ("learner.optimizer.rmsprop_decay", self.rmsprop_decay),
            ("learner.optimizer.discount", self.discount),
            ("learner.optimizer.baseline_cost", self.baseline_cost),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        for (key, v) in [
            ("learner.optimizer.learning_rate", self.learning_rate),
            ("learner.optimizer.entropy_cost", self.entropy_cost),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, "must be non-negative"));
            }
        }
        if self.discount >= 1.0 {
            return Err(Error::config("learner.optimizer.discount", "must be below 1"));
        }
        if self.rmsprop_decay >= 1.0 {
            return Err(Error::config("learner.optimizer.rmsprop_decay", "must be below 1"));
        }
        if self.batch_size == 0 || self.unroll_length == 0 {
            return Err(Error::config("learner.optimizer.batch_size", "batch size and unroll length must be positive"));
        }
        Ok(())
    }
}

/// One unroll of experience from a single individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub species: usize,
    pub island: IslandId,
    pub observations: Vec<Observation>,
    pub actions: Vec<u8>,
    pub behavior_logp: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Recurrent state before the first observation.
    pub initial_state: RecurrentState,
    /// Observation after the last step; `None` when the episode ended.
    pub bootstrap: Option<Observation>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, num_actions: usize) -> Result<()> {
        let n = self.actions.len();
        if n == 0 || self.observations.len() != n || self.behavior_logp.len() != n || self.rewards.len() != n {
            return Err(Error::integrity(format!(
                "malformed trajectory: {} observations, {} actions, {} log-probs, {} rewards",
                self.observations.len(),
                n,
                self.behavior_logp.len(),
                self.rewards.len()
            )));
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a as usize >= num_actions) {
            return Err(Error::integrity(format!("trajectory action {a} outside the action set")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub policy: f64,
    pub baseline: f64,
    pub entropy: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &OptimizerConfig) -> Self {
        Self {
            policy: 1.0,
            baseline: cfg.baseline_cost,
            entropy: cfg.entropy_cost,
        }
    }
}

/// Per-step loss terms summed over a trajectory or batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Σ −log π(a) · advantage.
    pub policy: f64,
    /// Σ ½ (v_s − V)².
    pub value: f64,
    /// Σ H(π).
    pub entropy: f64,
    /// Weighted total that is actually minimized.
    pub total: f64,
    pub steps: usize,
}

impl LossTerms {
    fn add(&mut self, o: &LossTerms) {
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
        self.total += o.total;
        self.steps += o.steps;
    }

    /// Per-step means.
    pub fn mean(&self) -> LossTerms {
        let n = self.steps.max(1) as f64;
        LossTerms {
            policy: self.policy / n,
            value: self.value / n,
            entropy: self.entropy / n,
            total: self.total / n,
            steps: self.steps,
        }
    }
}

fn unroll_with_bootstrap(net: &Network, params: &[f64], traj: &Trajectory) -> Result<(Unroll, f64)> {
    match &traj.bootstrap {
        Some(obs) => {
            let mut all = traj.observations.clone();
            all.push(obs.clone());
            let mut u = net.unroll(params, &all, &traj.initial_state)?;
            let last = u.steps.pop().expect("bootstrap step present");
            Ok((u, last.value))
        }
        None => Ok((net.unroll(params, &traj.observations, &traj.initial_state)?, 0.0)),
    }
}

fn targets_from_unroll(u: &Unroll, bootstrap: f64, traj: &Trajectory, discount: f64) -> Result<VTrace> {
    let values: Vec<f64> = u.steps.iter().map(|s| s.value).collect();
    let target_logp: Vec<f64> = u
        .steps
        .iter()
        .zip(&traj.actions)
        .map(|(s, &a)| log_softmax(&s.logits)[a as usize])
        .collect();
    vtrace_targets(&traj.rewards, &values, bootstrap, &traj.behavior_logp, &target_logp, discount)
}

/// V-trace targets under the current parameters.
pub fn compute_targets(net: &Network, params: &[f64], traj: &Trajectory, discount: f64) -> Result<VTrace> {
    traj.validate(net.spec.num_actions)?;
    let (u, boot) = unroll_with_bootstrap(net, params, traj)?;
    targets_from_unroll(&u, boot, traj, discount)
}

fn loss_from_unroll(
    net: &Network,
    params: &[f64],
    u: &Unroll,
    traj: &Trajectory,
    targets: &VTrace,
    w: LossWeights,
    grad: Option<&mut [f64]>,
) -> LossTerms {
    let mut terms = LossTerms {
        steps: traj.len(),
        ..LossTerms::default()
    };
    let mut dlogits = Vec::with_capacity(traj.len());
    let mut dvalues = Vec::with_capacity(traj.len());
    for (t, step) in u.steps.iter().enumerate() {
        let logp = log_softmax(&step.logits);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let a = traj.actions[t] as usize;
        let adv = targets.advantages[t];
        let neg_entropy: f64 = probs.iter().zip(&logp).map(|(p, l)| p * l).sum();
        let err = step.value - targets.values[t];
        terms.policy += -logp[a] * adv;
        terms.value += 0.5 * err * err;
        terms.entropy += -neg_entropy;

        let dl: Vec<f64> = (0..probs.len())
            .map(|j| {
                let onehot = if j == a { 1.0 } else { 0.0 };
                w.policy * adv * (probs[j] - onehot) + w.entropy * probs[j] * (logp[j] - neg_entropy)
            })
            .collect();
        dlogits.push(dl);
        dvalues.push(w.baseline * err);
    }
    terms.total = w.policy * terms.policy + w.baseline * terms.value - w.entropy * terms.entropy;
    if let Some(g) = grad {
        net.backward(params, u, &dlogits, &dvalues, g);
    }
    terms
}

/// Summed loss of one trajectory against frozen `targets`; accumulates the
/// gradient into `grad` when given.
pub fn trajectory_loss(
    net: &Network,
    params: &[f64],
    traj: &Trajectory,
    targets: &VTrace,
    weights: LossWeights,
    grad: Option<&mut [f64]>,
) -> Result<LossTerms> {
    traj.validate(net.spec.num_actions)?;
    let u = net.unroll(params, &traj.observations, &traj.initial_state)?;
    Ok(loss_from_unroll(net, params, &u, traj, targets, weights, grad))
}

/// RMSProp with the epsilon inside the square root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(num_params: usize) -> Self {
        Self {
            mean_square: vec![0.0; num_params],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], cfg: &OptimizerConfig) {
        let d = cfg.rmsprop_decay;
        for ((p, ms), &g) in params.iter_mut().zip(self.mean_square.iter_mut()).zip(grad) {
            *ms = d * *ms + (1.0 - d) * g * g;
            *p -= cfg.learning_rate * g / (*ms + cfg.rmsprop_epsilon).sqrt();
        }
    }
}

/// Loss diagnostics of one update, as per-step means.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub steps: usize,
}

/// Averaged gradient of the batch loss; errors if any trajectory belongs to
/// a species other than `species`.
pub fn batch_gradient(
    net: &Network,
    params: &[f64],
    species: usize,
    batch: &[Trajectory],
    cfg: &OptimizerConfig,
) -> Result<(Vec<f64>, LossTerms)> {
    batch_gradient_on(net, params, species, batch, cfg, true)
}

/// [`batch_gradient`] with the per-trajectory work optionally kept on the
/// calling thread. Both paths sum in batch order and agree bit for bit.
pub fn batch_gradient_on(
    net: &Network,
    params: &[f64],
    species: usize,
    batch: &[Trajectory],
    cfg: &OptimizerConfig,
    parallel: bool,
) -> Result<(Vec<f64>, LossTerms)> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if let Some(t) = batch.iter().find(|t| t.species != species) {
        return Err(Error::integrity(format!(
            "trajectory of species {} in a batch for species {species}",
            t.species
        )));
    }
    let weights = LossWeights::from_config(cfg);
    let one = |traj: &Trajectory| -> Result<(Vec<f64>, LossTerms)> {
        traj.validate(net.spec.num_actions)?;
        let (u, boot) = unroll_with_bootstrap(net, params, traj)?;
        let targets = targets_from_unroll(&u, boot, traj, cfg.discount)?;
        let mut g = vec![0.0; params.len()];
        let terms = loss_from_unroll(net, params, &u, traj, &targets, weights, Some(&mut g));
        Ok((g, terms))
    };
    let parts: Vec<(Vec<f64>, LossTerms)> = if parallel {
        batch.par_iter().map(one).collect::<Result<_>>()?
    } else {
        batch.iter().map(one).collect::<Result<_>>()?
    };
    let mut grad = vec![0.0; params.len()];
    let mut terms = LossTerms::default();
    for (g, t) in &parts {
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        terms.add(t);
    }
    let n = terms.steps as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((grad, terms))
}

/// One RMSProp step on the batch-averaged loss.
pub fn species_update(
    net: &Network,
    params: &mut [f64],
    optimizer: &mut RmsProp,
    species: usize,
    batch: &[Trajectory],
    cfg: &OptimizerConfig,
    parallel: bool,
) -> Result<UpdateStats> {
    let (grad, terms) = batch_gradient_on(net, params, species, batch, cfg, parallel)?;
    optimizer.apply(params, &grad, cfg);
    let m = terms.mean();
    Ok(UpdateStats {
        policy_loss: m.policy,
        value_loss: m.value,
        entropy: m.entropy,
        total_loss: m.total,
        steps: terms.steps,
    })
}

/// Samples an action from π(·|obs); returns `(action, log π(action), state')`.
pub fn act<R: Rng + ?Sized>(
    net: &Network,
    params: &[f64],
    obs: &Observation,
    state: &RecurrentState,
    rng: &mut R,
) -> Result<(usize, f64, RecurrentState)> {
    let (logits, _, next) = net.forward(params, obs, state)?;
    let logp = log_softmax(&logits);
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let a = categorical(rng, &probs);
    Ok((a, logp[a], next))
}

/// Process-owned learning state of one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesLearner {
    pub species: usize,
    pub params: Vec<f64>,
    pub optimizer: RmsProp,
    pub updates: u64,
    pub last_stats: Option<UpdateStats>,
}

impl SpeciesLearner {
    pub fn new(species: usize, params: Vec<f64>) -> Self {
        let n = params.len();
        Self {
            species,
            params,
            optimizer: RmsProp::new(n),
            updates: 0,
            last_stats: None,
        }
    }

    pub fn update(&mut self, net: &Network, batch: &[Trajectory], cfg: &OptimizerConfig) -> Result<UpdateStats> {
        self.update_on(net, batch, cfg, true)
    }

    pub fn update_on(&mut self, net: &Network, batch: &[Trajectory], cfg: &OptimizerConfig, parallel: bool) -> Result<UpdateStats> {
        let stats = species_update(net, &mut self.params, &mut self.optimizer, self.species, batch, cfg, parallel)?;
        self.updates += 1;
        self.last_stats = Some(stats);
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn random_obs(rng: &mut SimRng) -> Observation {
        Observation {
            pixels: (0..Observation::LEN).map(|_| rng.gen()).collect(),
            last_reward: rng.gen_range(-1.0..1.0),
        }
    }

    fn random_traj(net: &Network, params: &[f64], len: usize, bootstrap: bool, rng: &mut SimRng) -> Trajectory {
        let mut state = net.initial_state();
        let initial_state = state.clone();
        let mut t = Trajectory {
            species: 0,
            island: IslandId::Archipelago(0),
            observations: Vec::new(),
            actions: Vec::new(),
            behavior_logp: Vec::new(),
            rewards: Vec::new(),
            initial_state,
            bootstrap: None,
        };
        for _ in 0..len {
            let obs = random_obs(rng);
            let (a, logp, next) = act(net, params, &obs, &state, rng).unwrap();
            state = next;
            t.observations.push(obs);
            t.actions.push(a as u8);
            // Off-policy behaviour log-probs so the ratios vary.
            t.behavior_logp.push(logp + rng.gen_range(-0.5..0.5));
            t.rewards.push(rng.gen_range(-1.0..1.0));
        }
        if bootstrap {
            t.bootstrap = Some(random_obs(rng));
        }
        t
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let net = Network::new(PolicySpec::new(Profile::Tiny, 4)).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        let mut p = net.init_params(&mut rng);
        let before = p.clone();
        let batch: Vec<_> = (0..3).map(|_| random_traj(&net, &p, 5, true, &mut rng)).collect();
        let cfg = OptimizerConfig {
            learning_rate: 0.0,
            ..OptimizerConfig::default()
        };
        let mut opt = RmsProp::new(p.len());
        let stats = species_update(&net, &mut p, &mut opt, 0, &batch, &cfg, false).unwrap();
        assert_eq!(p, before);
        assert_eq!(stats.steps, 15);
        assert!(stats.entropy > 0.0);
    }

    #[test]
    fn identical_batch_matches_single() {
        let net = Network::new(PolicySpec::new(Profile::Tiny, 4)).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let p = net.init_params(&mut rng);
        let t = random_traj(&net, &p, 6, false, &mut rng);
        let cfg = OptimizerConfig::default();
        let (g1, _) = batch_gradient(&net, &p, 0, std::slice::from_ref(&t), &cfg).unwrap();
        let (g32, _) = batch_gradient(&net, &p, 0, &vec![t; 32], &cfg).unwrap();
        for (a, b) in g1.iter().zip(&g32) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn mixed_species_batch_rejected() {
        let net = Network::new(PolicySpec::new(Profile::Tiny, 4)).unwrap();
        let mut rng = SimRng::seed_from_u64(2);
        let mut p = net.init_params(&mut rng);
        let a = random_traj(&net, &p, 3, false, &mut rng);
        let mut b = a.clone();
        b.species = 1;
        let mut opt = RmsProp::new(p.len());
        let err = species_update(&net, &mut p, &mut opt, 0, &[a, b], &OptimizerConfig::default(), true).unwrap_err();
        assert!(matches!(err, Error::DataIntegrity(_)));
    }

    #[test]
    fn act_statistics() {
        let net = Network::new(PolicySpec::new(Profile::Tiny, 6)).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        let mut p = net.init_params(&mut rng);
        net.zero_policy_head(&mut p);
        let obs = random_obs(&mut rng);
        let s = net.initial_state();
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            let (a, logp, _) = act(&net, &p, &obs, &s, &mut rng).unwrap();
            assert!((logp - (1.0f64 / 6.0).ln()).abs() < 1e-12);
            counts[a] += 1;
        }
        let q = 1.0 / 6.0;
        let se = (q * (1.0 - q) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - q).abs() <= 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn act_logp_is_log_softmax_of_sampled_action() {
        let net = Network::new(PolicySpec::new(Profile::Tiny, 6)).unwrap();
        let mut rng = SimRng::seed_from_u64(4);
        let p: Vec<f64> = net.init_params(&mut rng).iter().map(|x| x * 30.0).collect();
        let obs = random_obs(&mut rng);
        let s = net.initial_state();
        let (logits, _, _) = net.forward(&p, &obs, &s).unwrap();
        for _ in 0..50 {
            let (a, logp, _) = act(&net, &p, &obs, &s, &mut rng).unwrap();
            assert_eq!(logp, log_softmax(&logits)[a]);
        }
    }

    #[test]
    fn dominant_logit_is_always_chosen() {
        let net = Network::new(PolicySpec::new(Profile::Tiny, 6)).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let mut p = net.init_params(&mut rng);
        net.zero_policy_head(&mut p);
        // The policy bias sits just before the value head (8 weights + 1 bias).
        let n = p.len();
        p[n - 9 - 6 + 2] = 1000.0;
        let obs = random_obs(&mut rng);
        for _ in 0..1000 {
            let (a, _, _) = act(&net, &p, &obs, &net.initial_state(), &mut rng).unwrap();
            assert_eq!(a, 2);
        }
    }

    #[test]
    fn rmsprop_step_matches_hand_computation() {
        let cfg = OptimizerConfig::default();
        let mut opt = RmsProp::new(1);
        let mut p = vec![1.0];
        opt.apply(&mut p, &[2.0], &cfg);
        let ms = 0.01 * 4.0;
        assert!((p[0] - (1.0 - 0.0007 * 2.0 / (ms + 1e-4f64).sqrt())).abs() < 1e-15);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for e in crate::oracle::loss_gradient_errors(11) {
            assert!(e <= 1e-3, "{e}");
        }
    }
}
