//! Self-checks against independent references: finite differences, the
//! closed-form stationary distribution, brute-force discounted returns.
//! Shared by the test suite and the `oracle` command.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};

use crate::learner::{self, LossWeights, Network, PolicySpec, Profile, Trajectory};
use crate::pomg::{IslandId, Observation};
use crate::population::{
    aggregate_fitness, gibbs_stationary, population_gradient, sample_allocation, total_variation, update_weights,
    IndividualId, PopulationConfig, SpeciesDistribution,
};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Central differences of `Σ μ φ + η H(μ)` from the raw softmax formula.
pub fn fd_population_gradient(weights: &[f64], fitness: &[f64], eta: f64, h: f64) -> Vec<f64> {
    let objective = |w: &[f64]| {
        let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = w.iter().map(|x| (x - m).exp()).sum();
        w.iter()
            .zip(fitness)
            .map(|(x, phi)| {
                let mu = (x - m).exp() / z;
                mu * phi - eta * mu * mu.ln()
            })
            .sum::<f64>()
    };
    (0..weights.len())
        .map(|j| {
            let mut up = weights.to_vec();
            let mut down = weights.to_vec();
            up[j] += h;
            down[j] -= h;
            (objective(&up) - objective(&down)) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise error relative to the largest gradient entry.
fn scaled_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1e-12f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn population_gradient_oracle(instances: usize, seed: u64) -> OracleReport {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(2..=8);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let phi: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let eta = rng.gen_range(0.0..3.0);
        let g = population_gradient(&w, &phi, eta).expect("valid inputs");
        worst = worst.max(scaled_error(&g, &fd_population_gradient(&w, &phi, eta, 1e-5)));
    }
    OracleReport {
        name: "population gradient vs finite differences",
        passed: worst <= 1e-5,
        detail: format!("{instances} instances, worst relative error {worst:.2e} (limit 1e-5)"),
    }
}

/// Iterations `update_weights` needs from uniform weights to come within
/// `tol` total variation of the stationary distribution, if it does within
/// `max_iters`.
pub fn gibbs_iterations(fitness: &[f64], eta: f64, alpha: f64, tol: f64, max_iters: usize) -> Option<usize> {
    let target = gibbs_stationary(fitness, eta).ok()?;
    let cfg = PopulationConfig::new(alpha, eta, 1, 1).ok()?;
    let mut dist = SpeciesDistribution::from_weights(0, vec![0.0; fitness.len()]).ok()?;
    for it in 0..=max_iters {
        if total_variation(&dist.probabilities(), &target) <= tol {
            return Some(it);
        }
        dist = update_weights(&dist, fitness, &cfg).ok()?;
    }
    None
}

pub fn gibbs_oracle(vectors: usize, seed: u64) -> OracleReport {
    let mut rng = SimRng::seed_from_u64(seed);
    let etas = [0.1, 0.3, 1.5];
    let mut worst = 0;
    let mut failures = 0;
    for k in 0..vectors {
        let n = rng.gen_range(2..=8);
        let phi: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        match gibbs_iterations(&phi, etas[k % 3], 0.1, 1e-3, 100_000) {
            Some(it) => worst = worst.max(it),
            None => failures += 1,
        }
    }
    OracleReport {
        name: "Gibbs fixed point",
        passed: failures == 0,
        detail: format!("{vectors} fitness vectors, {failures} failed, slowest needed {worst} iterations (limit 100000)"),
    }
}

pub fn conservation_oracle(calls: usize, seed: u64) -> OracleReport {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..calls {
        let islands = rng.gen_range(1..=12);
        let species = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=64);
        let dists: Vec<_> = (0..species)
            .map(|l| {
                let w = (0..islands).map(|_| rng.gen_range(-6.0..6.0)).collect();
                SpeciesDistribution::from_weights(l, w).expect("finite weights")
            })
            .collect();
        let cfg = PopulationConfig::new(0.1, 0.1, m, species).expect("valid config");
        let alloc = sample_allocation(&dists, &cfg, &mut rng).expect("valid shapes");
        if (0..species).any(|l| alloc.species_total(l) != m) {
            violations += 1;
        }
        let returns: BTreeMap<_, _> = (0..species)
            .flat_map(|l| (0..m).map(move |k| IndividualId::new(l, k)))
            .map(|id| (id, 1.0 + id.label as f64))
            .collect();
        let fitness = aggregate_fitness(&returns, &alloc).expect("complete returns");
        for (l, row) in fitness.iter().enumerate() {
            for (i, &phi) in row.iter().enumerate() {
                if alloc.count(l, i) == 0 && phi.to_bits() != 0.0f64.to_bits() {
                    violations += 1;
                }
            }
        }
    }
    OracleReport {
        name: "conservation of compute",
        passed: violations == 0,
        detail: format!("{calls} allocations, {violations} violations"),
    }
}

/// `Σ_{t≥s} γ^{t−s} r_t + γ^{n−s} bootstrap`, summed directly.
pub fn discounted_return(rewards: &[f64], bootstrap: f64, discount: f64, s: usize) -> f64 {
    let n = rewards.len();
    let mut total = 0.0;
    for (k, r) in rewards[s..].iter().enumerate() {
        total += discount.powi(k as i32) * r;
    }
    total + discount.powi((n - s) as i32) * bootstrap
}

pub fn vtrace_oracle(sequences: usize, seed: u64) -> OracleReport {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut zero_ratio_exact = true;
    for _ in 0..sequences {
        let n = rng.gen_range(1..=20);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let logp: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let boot = rng.gen_range(-5.0..5.0);
        let v = learner::vtrace_targets(&rewards, &values, boot, &logp, &logp, 0.99).expect("equal lengths");
        for s in 0..n {
            worst = worst.max((v.values[s] - discounted_return(&rewards, boot, 0.99, s)).abs());
        }
        let never = vec![f64::NEG_INFINITY; n];
        let z = learner::vtrace_targets(&rewards, &values, boot, &logp, &never, 0.99).expect("equal lengths");
        zero_ratio_exact &= z.values == values;
    }
    OracleReport {
        name: "v-trace on-policy reduction",
        passed: worst <= 1e-9 && zero_ratio_exact,
        detail: format!(
            "{sequences} sequences, worst |v_s - return| {worst:.2e} (limit 1e-9), zero-ratio exact: {zero_ratio_exact}"
        ),
    }
}

pub fn random_observation<R: Rng + ?Sized>(rng: &mut R) -> Observation {
    Observation {
        pixels: (0..Observation::LEN).map(|_| rng.gen()).collect(),
        last_reward: rng.gen_range(-1.0..1.0),
    }
}

/// A trajectory of random observations and rewards acted by `params`, with
/// perturbed behaviour log-probabilities so importance ratios vary.
pub fn random_trajectory<R: Rng + ?Sized>(net: &Network, params: &[f64], len: usize, bootstrap: bool, rng: &mut R) -> Trajectory {
    let mut state = net.initial_state();
    let mut t = Trajectory {
        species: 0,
        island: IslandId::Archipelago(0),
        observations: Vec::new(),
        actions: Vec::new(),
        behavior_logp: Vec::new(),
        rewards: Vec::new(),
        initial_state: state.clone(),
        bootstrap: None,
    };
    for _ in 0..len {
        let obs = random_observation(rng);
        let (a, logp, next) = learner::act(net, params, &obs, &state, rng).expect("valid shapes");
        state = next;
        t.observations.push(obs);
        t.actions.push(a as u8);
        t.behavior_logp.push(logp + rng.gen_range(-0.5..0.5));
        t.rewards.push(rng.gen_range(-1.0..1.0));
    }
    if bootstrap {
        t.bootstrap = Some(random_observation(rng));
    }
    t
}

/// Worst relative error of each loss term's analytic gradient against
/// central differences, targets held fixed: `[policy, value, entropy]`.
pub fn loss_gradient_errors(seed: u64) -> [f64; 3] {
    let net = Network::new(PolicySpec::new(Profile::Tiny, 5)).expect("tiny spec is valid");
    let mut rng = SimRng::seed_from_u64(seed);
    let p: Vec<f64> = net
        .init_params(&mut rng)
        .iter()
        .map(|x| x + 0.05 * rng.gen_range(-1.0..1.0))
        .collect();
    let traj = random_trajectory(&net, &p, 6, true, &mut rng);
    let targets = learner::compute_targets(&net, &p, &traj, 0.99).expect("valid trajectory");
    let weights = [
        LossWeights { policy: 1.0, baseline: 0.0, entropy: 0.0 },
        LossWeights { policy: 0.0, baseline: 1.0, entropy: 0.0 },
        LossWeights { policy: 0.0, baseline: 0.0, entropy: 1.0 },
    ];
    weights.map(|w| {
        let mut g = vec![0.0; p.len()];
        learner::trajectory_loss(&net, &p, &traj, &targets, w, Some(&mut g)).expect("valid trajectory");
        let mut q = p.clone();
        let h = 1e-6;
        let fd: Vec<f64> = (0..p.len())
            .map(|j| {
                q[j] = p[j] + h;
                let up = learner::trajectory_loss(&net, &q, &traj, &targets, w, None).expect("valid").total;
                q[j] = p[j] - h;
                let down = learner::trajectory_loss(&net, &q, &traj, &targets, w, None).expect("valid").total;
                q[j] = p[j];
                (up - down) / (2.0 * h)
            })
            .collect();
        scaled_error(&g, &fd)
    })
}

pub fn learner_gradient_oracle(seeds: u64) -> OracleReport {
    let mut worst = [0.0f64; 3];
    for seed in 0..seeds {
        let e = loss_gradient_errors(seed);
        for k in 0..3 {
            worst[k] = worst[k].max(e[k]);
        }
    }
    OracleReport {
        name: "learner loss gradients vs finite differences",
        passed: worst.iter().all(|&e| e <= 1e-3),
        detail: format!(
            "{seeds} tiny networks, worst relative error policy {:.2e}, value {:.2e}, entropy {:.2e} (limit 1e-3)",
            worst[0], worst[1], worst[2]
        ),
    }
}

/// The quick oracle suite.
pub fn run_all(seed: u64) -> Vec<OracleReport> {
    vec![
        population_gradient_oracle(1000, seed),
        gibbs_oracle(20, seed),
        conservation_oracle(10_000, seed),
        vtrace_oracle(1000, seed),
        learner_gradient_oracle(3),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discounted_return_examples() {
        assert!((discounted_return(&[1.0, 1.0], 0.0, 0.99, 0) - 1.99).abs() < 1e-12);
        assert!((discounted_return(&[0.0], 2.0, 0.5, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gibbs_two_islands() {
        let it = gibbs_iterations(&[1.0, 0.0], 1.0, 0.1, 1e-3, 100_000).unwrap();
        assert!(it > 0);
    }

    #[test]
    fn quick_suite_passes() {
        for r in run_all(1) {
            assert!(r.passed, "{r}");
        }
    }
}
