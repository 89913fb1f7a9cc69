//! Ecological-timescale dynamics.
//!
//! Each species keeps a weight vector over islands; its distribution over
//! the archipelago is the softmax of those weights. Every ecological step
//! the species' `M` individuals are scattered across islands by sampling that
//! distribution, the returns they earn are averaged per island, and the
//! weights take one entropy-regularized policy-gradient step toward the
//! islands that paid best.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::categorical;

/// The island index set of an archipelago.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchipelagoShape {
    num_islands: usize,
}

impl ArchipelagoShape {
    pub fn new(num_islands: usize) -> Result<Self> {
        if num_islands == 0 {
            return Err(Error::arg("an archipelago needs at least one island"));
        }
        Ok(Self { num_islands })
    }

    pub fn num_islands(&self) -> usize {
        self.num_islands
    }

    pub fn island_ids(&self) -> impl Iterator<Item = usize> {
        0..self.num_islands
    }
}

/// One individual of one species. Labels are reassigned every ecological
/// step and carry no state between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndividualId {
    pub species: usize,
    pub label: usize,
}

impl IndividualId {
    pub fn new(species: usize, label: usize) -> Self {
        Self { species, label }
    }
}

/// Softmax weights of one species over the islands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesDistribution {
    pub species_id: usize,
    weights: Vec<f64>,
}

impl SpeciesDistribution {
    /// Zero weights, i.e. the uniform distribution.
    pub fn uniform(species_id: usize, shape: ArchipelagoShape) -> Self {
        Self {
            species_id,
            weights: vec![0.0; shape.num_islands()],
        }
    }

    pub fn from_weights(species_id: usize, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        Ok(Self {
            species_id,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_islands(&self) -> usize {
        self.weights.len()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax_distribution(&self.weights).expect("weights validated at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    /// Adaptation rate of the island weights.
    pub alpha: f64,
    /// Entropy regularization weight.
    pub eta: f64,
    pub individuals_per_species: usize,
    pub num_species: usize,
}

impl PopulationConfig {
    pub fn new(alpha: f64, eta: f64, individuals_per_species: usize, num_species: usize) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::arg(format!("alpha must be finite and non-negative, got {alpha}")));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::arg(format!("eta must be finite and non-negative, got {eta}")));
        }
        if individuals_per_species == 0 || num_species == 0 {
            return Err(Error::arg("individuals per species and species count must be positive"));
        }
        Ok(Self {
            alpha,
            eta,
            individuals_per_species,
            num_species,
        })
    }

    /// Splits a total headcount `K` evenly over `L` species.
    pub fn from_total(alpha: f64, eta: f64, total_individuals: usize, num_species: usize) -> Result<Self> {
        if num_species == 0 || total_individuals % num_species != 0 {
            return Err(Error::arg(format!(
                "{total_individuals} individuals cannot be split evenly over {num_species} species"
            )));
        }
        Self::new(alpha, eta, total_individuals / num_species, num_species)
    }

    pub fn total_individuals(&self) -> usize {
        self.individuals_per_species * self.num_species
    }
}

/// Headcounts and member labels of every (species, island) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    /// `members[species][island]` lists the individual labels on that island.
    members: Vec<Vec<Vec<usize>>>,
}

impl Allocation {
    pub fn from_members(members: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        let islands = members.first().map_or(0, Vec::len);
        if members.iter().any(|row| row.len() != islands) {
            return Err(Error::integrity("ragged allocation: species disagree on island count"));
        }
        Ok(Self { members })
    }

    pub fn num_species(&self) -> usize {
        self.members.len()
    }

    pub fn num_islands(&self) -> usize {
        self.members.first().map_or(0, Vec::len)
    }

    pub fn members(&self, species: usize, island: usize) -> &[usize] {
        &self.members[species][island]
    }

    pub fn count(&self, species: usize, island: usize) -> usize {
        self.members[species][island].len()
    }

    pub fn counts(&self) -> Vec<Vec<usize>> {
        self.members
            .iter()
            .map(|row| row.iter().map(Vec::len).collect())
            .collect()
    }

    pub fn species_total(&self, species: usize) -> usize {
        self.members[species].iter().map(Vec::len).sum()
    }

    pub fn island_population(&self, island: usize) -> usize {
        self.members.iter().map(|row| row[island].len()).sum()
    }

    /// Everyone on `island`, sorted by (species, label).
    pub fn island_roster(&self, island: usize) -> Vec<IndividualId> {
        let mut roster: Vec<IndividualId> = self
            .members
            .iter()
            .enumerate()
            .flat_map(|(species, row)| row[island].iter().map(move |&label| IndividualId::new(species, label)))
            .collect();
        roster.sort_unstable();
        roster
    }
}

/// Returns of one ecological step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub per_individual: BTreeMap<IndividualId, f64>,
    /// `per_island_species[species][island]`, zero on empty cells.
    pub per_island_species: Vec<Vec<f64>>,
    pub ecological_step: u64,
}

impl FitnessReport {
    pub fn new(per_individual: BTreeMap<IndividualId, f64>, allocation: &Allocation, ecological_step: u64) -> Result<Self> {
        let per_island_species = aggregate_fitness(&per_individual, allocation)?;
        Ok(Self {
            per_individual,
            per_island_species,
            ecological_step,
        })
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::arg("weight vector is empty"));
    }
    if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::arg(format!("non-finite weight {bad}")));
    }
    Ok(())
}

/// Numerically stable `log softmax(weights)`.
pub fn log_softmax(weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights)?;
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + weights.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
    Ok(weights.iter().map(|w| w - log_z).collect())
}

pub fn softmax_distribution(weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights)?;
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Averages individual returns over each (species, island) cell; empty
/// cells score exactly zero.
pub fn aggregate_fitness(per_individual: &BTreeMap<IndividualId, f64>, allocation: &Allocation) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; allocation.num_islands()]; allocation.num_species()];
    for (species, row) in out.iter_mut().enumerate() {
        for (island, cell) in row.iter_mut().enumerate() {
            let members = allocation.members(species, island);
            if members.is_empty() {
                continue;
            }
            let mut sum = 0.0;
            for &label in members {
                let id = IndividualId::new(species, label);
                sum += per_individual
                    .get(&id)
                    .ok_or_else(|| Error::integrity(format!("no fitness recorded for individual {id:?}")))?;
            }
            *cell = sum / members.len() as f64;
        }
    }
    Ok(out)
}

/// Gradient of `sum_i mu(i) (fitness_i - eta log mu(i))` with respect to the
/// softmax weights.
///
/// With `a_i = fitness_i - eta log mu(i)` and the softmax Jacobian
/// `d mu(i) / d w_j = mu(i) (delta_ij - mu(j))` the sum collapses to
/// `g_j = mu(j) (a_j - sum_i mu(i) a_i)`.
pub fn population_gradient(weights: &[f64], island_fitness: &[f64], eta: f64) -> Result<Vec<f64>> {
    if weights.len() != island_fitness.len() {
        return Err(Error::arg(format!(
            "{} weights but {} island fitness values",
            weights.len(),
            island_fitness.len()
        )));
    }
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::arg(format!("eta must be non-negative, got {eta}")));
    }
    let log_mu = log_softmax(weights)?;
    let mu: Vec<f64> = log_mu.iter().map(|l| l.exp()).collect();
    let advantage: Vec<f64> = island_fitness
        .iter()
        .zip(&log_mu)
        .map(|(phi, l)| phi - eta * l)
        .collect();
    let baseline: f64 = mu.iter().zip(&advantage).map(|(m, a)| m * a).sum();
    Ok(mu.iter().zip(&advantage).map(|(m, a)| m * (a - baseline)).collect())
}

pub fn update_weights(dist: &SpeciesDistribution, island_fitness: &[f64], config: &PopulationConfig) -> Result<SpeciesDistribution> {
    let grad = population_gradient(dist.weights(), island_fitness, config.eta)?;
    let weights = dist
        .weights()
        .iter()
        .zip(&grad)
        .map(|(w, g)| w + config.alpha * g)
        .collect();
    SpeciesDistribution::from_weights(dist.species_id, weights)
}

/// Fixed point of the regularized dynamics: `softmax(fitness / eta)`.
pub fn gibbs_stationary(island_fitness: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::arg(format!("eta must be positive, got {eta}")));
    }
    let scaled: Vec<f64> = island_fitness.iter().map(|phi| phi / eta).collect();
    softmax_distribution(&scaled)
}

/// Draws `M` islands per species. Individual `k` of a species takes the
/// `k`-th draw, so labels are a pure function of the random stream.
pub fn sample_allocation<R: RngCore + ?Sized>(
    distributions: &[SpeciesDistribution],
    config: &PopulationConfig,
    rng: &mut R,
) -> Result<Allocation> {
    if distributions.len() != config.num_species {
        return Err(Error::arg(format!(
            "{} distributions for {} species",
            distributions.len(),
            config.num_species
        )));
    }
    let islands = distributions[0].num_islands();
    if distributions.iter().any(|d| d.num_islands() != islands) {
        return Err(Error::arg("species distributions disagree on island count"));
    }
    let mut members = vec![vec![Vec::new(); islands]; distributions.len()];
    for (row, dist) in members.iter_mut().zip(distributions) {
        let probs = dist.probabilities();
        for label in 0..config.individuals_per_species {
            row[categorical(rng, &probs)].push(label);
        }
    }
    Allocation::from_members(members)
}

/// Round-robin assignment used when island populations are held fixed:
/// individual `k` of every species lives on island `k mod N_I`.
pub fn fixed_allocation(num_islands: usize, config: &PopulationConfig) -> Result<Allocation> {
    if num_islands == 0 {
        return Err(Error::arg("fixed allocation over zero islands"));
    }
    let members = (0..config.num_species)
        .map(|_| {
            let mut row = vec![Vec::new(); num_islands];
            for label in 0..config.individuals_per_species {
                row[label % num_islands].push(label);
            }
            row
        })
        .collect();
    Allocation::from_members(members)
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
