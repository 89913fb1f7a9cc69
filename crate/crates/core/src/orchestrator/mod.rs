//! The ecological loop: allocate, play one episode per island, feed the
//! learners, update the species distributions.

mod episode;
mod queue;
mod run;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use episode::{run_episode, EpisodeJob, EpisodeResult};
pub use queue::{SharedQueue, TrajectoryQueue};
pub use run::{latest_checkpoint, run_experiment, RunOptions, RunSummary};

use crate::config::{ExperimentConfig, Mode, Scheduler};
use crate::error::{Error, Result};
use crate::learner::{Network, SpeciesLearner, UpdateStats};
use crate::metrics::{island_reductions, CsvShape, MetricsRow};
use crate::pomg::{EpisodeLog, IslandId};
use crate::population::{
    fixed_allocation, sample_allocation, update_weights, Allocation, ArchipelagoShape, FitnessReport, IndividualId,
    PopulationConfig, SpeciesDistribution,
};
use crate::rng::{derive_seed, derived_rng, Stream};

/// Loop state between ecological steps.
#[derive(Debug, Serialize, Deserialize, Clone, PartialEq)]
pub struct EcologyState {
    pub ecological_step: u64,
    pub weights: Vec<Vec<f64>>,
    pub queues: Vec<TrajectoryQueue>,
}

/// What one ecological step produced.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub row: MetricsRow,
    pub allocation: Option<Allocation>,
    pub fitness: Option<FitnessReport>,
    /// `solitary_returns[species][replica]`.
    pub solitary_returns: Vec<Vec<f64>>,
    pub logs: Vec<EpisodeLog>,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub net: Network,
    pub population: PopulationConfig,
    pub ecological_step: u64,
    pub distributions: Vec<SpeciesDistribution>,
    pub learners: Vec<SpeciesLearner>,
    pub queues: Vec<TrajectoryQueue>,
}

struct IslandTask {
    island: IslandId,
    roster: Vec<IndividualId>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let population = config.population()?;
        let net = Network::new(config.policy_spec())?;
        let l = config.num_species;
        let distributions = if config.protocol.num_islands > 0 {
            let shape = ArchipelagoShape::new(config.protocol.num_islands)?;
            (0..l).map(|s| SpeciesDistribution::uniform(s, shape)).collect()
        } else {
            Vec::new()
        };
        let learners = (0..l)
            .map(|s| SpeciesLearner::new(s, net.init_params(&mut derived_rng(config.seed, Stream::Init, &[s as u64]))))
            .collect();
        let queues = (0..l)
            .map(|s| TrajectoryQueue::new(s, config.learner.queue_capacity))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            net,
            population,
            ecological_step: 0,
            distributions,
            learners,
            queues,
        })
    }

    /// Rebuilds an experiment from saved learners and ecology state.
    pub fn restore(config: ExperimentConfig, learners: Vec<SpeciesLearner>, ecology: EcologyState) -> Result<Self> {
        let mut exp = Self::new(config)?;
        let l = exp.config.num_species;
        if learners.len() != l || ecology.queues.len() != l || learners.iter().enumerate().any(|(s, x)| x.species != s) {
            return Err(Error::Checkpoint("checkpoint does not match the species count".into()));
        }
        if ecology.weights.len() != exp.distributions.len() {
            return Err(Error::Checkpoint("checkpoint does not match the archipelago".into()));
        }
        exp.distributions = ecology
            .weights
            .into_iter()
            .enumerate()
            .map(|(s, w)| {
                if w.len() != exp.config.protocol.num_islands {
                    return Err(Error::Checkpoint("checkpoint does not match the island count".into()));
                }
                SpeciesDistribution::from_weights(s, w)
            })
            .collect::<Result<_>>()?;
        for (s, q) in ecology.queues.iter().enumerate() {
            if q.species() != s || q.capacity() != exp.config.learner.queue_capacity {
                return Err(Error::Checkpoint(format!("queue {s} does not match the configuration")));
            }
        }
        exp.learners = learners;
        exp.queues = ecology.queues;
        exp.ecological_step = ecology.ecological_step;
        Ok(exp)
    }

    pub fn ecology_state(&self) -> EcologyState {
        EcologyState {
            ecological_step: self.ecological_step,
            weights: self.distributions.iter().map(|d| d.weights().to_vec()).collect(),
            queues: self.queues.clone(),
        }
    }

    pub fn csv_shape(&self) -> CsvShape {
        CsvShape {
            num_species: self.config.num_species,
            num_islands: self.config.protocol.num_islands,
            solitary: self.config.protocol.solitary_per_species() > 0,
            switching: self.config.game.key() == "allelopathy",
        }
    }

    /// Current μ, `[species][island]`.
    pub fn mu(&self) -> Vec<Vec<f64>> {
        self.distributions.iter().map(|d| d.probabilities()).collect()
    }

    fn allocation(&self) -> Result<Option<Allocation>> {
        let n = self.config.protocol.num_islands;
        match self.config.protocol.mode {
            Mode::SingleAgent => Ok(None),
            Mode::FixedPopulation => fixed_allocation(n, &self.population).map(Some),
            Mode::Malthusian => {
                let mut rng = derived_rng(self.config.seed, Stream::Allocation, &[self.ecological_step]);
                sample_allocation(&self.distributions, &self.population, &mut rng).map(Some)
            }
        }
    }

    fn tasks(&self, allocation: Option<&Allocation>) -> Vec<IslandTask> {
        let mut tasks = Vec::new();
        if let Some(a) = allocation {
            for i in 0..a.num_islands() {
                tasks.push(IslandTask {
                    island: IslandId::Archipelago(i),
                    roster: a.island_roster(i),
                });
            }
        }
        for species in 0..self.config.num_species {
            for replica in 0..self.config.protocol.solitary_per_species() {
                tasks.push(IslandTask {
                    island: IslandId::Solitary { species, replica },
                    roster: vec![IndividualId::new(species, replica)],
                });
            }
        }
        tasks
    }

    fn job<'a>(&'a self, task: &IslandTask) -> EpisodeJob<'a> {
        let mut path = vec![self.ecological_step];
        path.extend(task.island.seed_path());
        EpisodeJob {
            game: &self.config.game,
            island: task.island,
            roster: task.roster.clone(),
            env_seed: derive_seed(self.config.seed, Stream::Environment, &path),
            act_seed: derive_seed(self.config.seed, Stream::Acting, &path),
            net: &self.net,
            scripted: self.config.learner.scripted,
            unroll_length: self.config.learner.optimizer.unroll_length,
            record_log: self.config.episode_logs,
        }
    }

    /// Runs one ecological step. On error the distributions and step
    /// counter are left as they were.
    pub fn step(&mut self) -> Result<StepReport> {
        let allocation = self.allocation()?;
        let tasks = self.tasks(allocation.as_ref());
        let (results, step_stats) = match self.config.scheduler {
            Scheduler::Sequential => self.play_sequential(&tasks)?,
            Scheduler::Parallel => self.play_parallel(&tasks)?,
        };
        self.finish_step(allocation, results, step_stats)
    }

    fn play_sequential(&mut self, tasks: &[IslandTask]) -> Result<(Vec<EpisodeResult>, Vec<Option<UpdateStats>>)> {
        let snapshot: Vec<Arc<Vec<f64>>> = self.learners.iter().map(|l| Arc::new(l.params.clone())).collect();
        let mut results = Vec::with_capacity(tasks.len());
        for task in tasks {
            let r = run_episode(&self.job(task), &snapshot).map_err(|e| wrap(task.island, e))?;
            results.push(r);
        }
        let cfg = self.config.learner.optimizer.clone();
        let mut stats = vec![None; self.learners.len()];
        for r in results.iter_mut() {
            for seg in r.segments.drain(..) {
                self.queues[seg.species].enqueue(seg)?;
            }
            for (s, (queue, learner)) in self.queues.iter_mut().zip(self.learners.iter_mut()).enumerate() {
                while let Some(batch) = queue.dequeue_batch(cfg.batch_size) {
                    stats[s] = Some(learner.update_on(&self.net, &batch, &cfg, false)?);
                }
            }
        }
        Ok((results, stats))
    }

    fn play_parallel(&mut self, tasks: &[IslandTask]) -> Result<(Vec<EpisodeResult>, Vec<Option<UpdateStats>>)> {
        let cfg = self.config.learner.optimizer.clone();
        let shared: Vec<SharedQueue> = std::mem::take(&mut self.queues).into_iter().map(SharedQueue::new).collect();
        let mut learners = std::mem::take(&mut self.learners);
        let snapshots: Vec<RwLock<Arc<Vec<f64>>>> =
            learners.iter().map(|l| RwLock::new(Arc::new(l.params.clone()))).collect();
        let jobs: Vec<EpisodeJob<'_>> = tasks.iter().map(|t| self.job(t)).collect();
        let net = &self.net;

        let (results, updates) = std::thread::scope(|scope| {
            let handles: Vec<_> = learners
                .iter_mut()
                .zip(&shared)
                .zip(&snapshots)
                .map(|((learner, queue), snapshot)| {
                    let cfg = &cfg;
                    scope.spawn(move || -> Result<Option<UpdateStats>> {
                        let mut last = None;
                        while let Some(batch) = queue.dequeue_batch(cfg.batch_size) {
                            last = Some(learner.update(net, &batch, cfg)?);
                            *snapshot.write().expect("snapshot lock poisoned") = Arc::new(learner.params.clone());
                        }
                        Ok(last)
                    })
                })
                .collect();
            let results: Vec<Result<EpisodeResult>> = jobs
                .par_iter()
                .map(|job| {
                    let params: Vec<Arc<Vec<f64>>> = snapshots
                        .iter()
                        .map(|s| Arc::clone(&s.read().expect("snapshot lock poisoned")))
                        .collect();
                    let mut r = run_episode(job, &params).map_err(|e| wrap(job.island, e))?;
                    for seg in r.segments.drain(..) {
                        shared[seg.species].enqueue(seg)?;
                    }
                    Ok(r)
                })
                .collect();
            for q in &shared {
                q.close();
            }
            let updates: Vec<Result<Option<UpdateStats>>> =
                handles.into_iter().map(|h| h.join().expect("updater thread panicked")).collect();
            (results, updates)
        });
        drop(jobs);
        self.learners = learners;
        self.queues = shared.into_iter().map(SharedQueue::into_inner).collect();
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let stats = updates.into_iter().collect::<Result<Vec<_>>>()?;
        Ok((results, stats))
    }

    fn finish_step(
        &mut self,
        allocation: Option<Allocation>,
        results: Vec<EpisodeResult>,
        step_stats: Vec<Option<UpdateStats>>,
    ) -> Result<StepReport> {
        let l = self.config.num_species;
        let n = self.config.protocol.num_islands;
        let mut per_individual = BTreeMap::new();
        let mut switch_counts = vec![None; n];
        let mut solitary_returns = vec![Vec::new(); l];
        let mut logs = Vec::new();
        for r in results {
            match r.island {
                IslandId::Archipelago(i) => {
                    for (id, ret) in r.roster.iter().zip(&r.returns) {
                        per_individual.insert(*id, *ret);
                    }
                    switch_counts[i] = r.switch_counts.clone();
                }
                IslandId::Solitary { species, .. } => solitary_returns[species].push(r.returns[0]),
            }
            logs.extend(r.log);
        }

        let (fitness, islands) = match &allocation {
            Some(a) => {
                let report = FitnessReport::new(per_individual, a, self.ecological_step)?;
                let reductions = island_reductions(&report, a, &switch_counts)?;
                (Some(report), Some(reductions))
            }
            None => (None, None),
        };
        if self.config.protocol.mode == Mode::Malthusian {
            let report = fitness.as_ref().expect("malthusian steps allocate");
            let updated = self
                .distributions
                .iter()
                .zip(&report.per_island_species)
                .map(|(d, phi)| update_weights(d, phi, &self.population))
                .collect::<Result<Vec<_>>>()?;
            self.distributions = updated;
        }

        let row = MetricsRow {
            ecological_step: self.ecological_step,
            mu: self.mu(),
            population: allocation.as_ref().map(|a| a.counts()).unwrap_or_default(),
            islands,
            solitary: solitary_returns
                .iter()
                .map(|r| (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64))
                .collect(),
            learner_updates: self.learners.iter().map(|l| l.updates).collect(),
            losses: step_stats,
        };
        self.ecological_step += 1;
        Ok(StepReport {
            row,
            allocation,
            fitness,
            solitary_returns,
            logs,
        })
    }
}

fn wrap(island: IslandId, e: Error) -> Error {
    Error::Episode {
        island: island.to_string(),
        source: Box::new(e),
    }
}
