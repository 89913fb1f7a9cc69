//! Runs one island episode and cuts each agent's experience into segments.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::games::Game;
use crate::learner::scripted::{uniform_scripts, ScriptKind};
use crate::learner::{act, Network, RecurrentState, Trajectory};
use crate::pomg::{observe_all, step_in_place, Action, EpisodeLog, IslandId};
use crate::population::IndividualId;
use crate::rng::SimRng;
use rand::SeedableRng;

/// Everything an island worker needs; parameters are snapshots taken when
/// the episode starts.
pub struct EpisodeJob<'a> {
    pub game: &'a Game,
    pub island: IslandId,
    pub roster: Vec<IndividualId>,
    pub env_seed: u64,
    pub act_seed: u64,
    pub net: &'a Network,
    pub scripted: Option<ScriptKind>,
    pub unroll_length: usize,
    pub record_log: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub island: IslandId,
    pub roster: Vec<IndividualId>,
    pub returns: Vec<f64>,
    /// In completion order; segment boundaries every `unroll_length` steps.
    pub segments: Vec<Trajectory>,
    pub switch_counts: Option<Vec<u32>>,
    pub log: Option<EpisodeLog>,
}

fn fresh_segment(species: usize, island: IslandId, initial_state: RecurrentState) -> Trajectory {
    Trajectory {
        species,
        island,
        observations: Vec::new(),
        actions: Vec::new(),
        behavior_logp: Vec::new(),
        rewards: Vec::new(),
        initial_state,
        bootstrap: None,
    }
}

/// `params[l]` is the snapshot of species `l`.
pub fn run_episode(job: &EpisodeJob<'_>, params: &[Arc<Vec<f64>>]) -> Result<EpisodeResult> {
    if job.unroll_length == 0 {
        return Err(Error::arg("unroll length must be positive"));
    }
    let game = job.game;
    let mut state = game.reset(job.island, &job.roster, job.env_seed)?;
    let n = job.roster.len();
    let mut log = job
        .record_log
        .then(|| EpisodeLog::new(game.clone(), job.island, job.env_seed, job.roster.clone()));
    let mut returns = vec![0.0; n];
    let mut segments = Vec::new();

    let mut scripts = match job.scripted {
        Some(kind) => Some(uniform_scripts(kind, game, n, job.act_seed)?),
        None => None,
    };
    let mut rng = SimRng::seed_from_u64(job.act_seed);
    let mut memory: Vec<RecurrentState> = vec![job.net.initial_state(); n];
    let mut open: Vec<Trajectory> = job
        .roster
        .iter()
        .map(|id| fresh_segment(id.species, job.island, job.net.initial_state()))
        .collect();

    while !state.is_done() {
        let actions: Vec<Action> = if let Some(scripts) = scripts.as_mut() {
            scripts.iter_mut().enumerate().map(|(slot, p)| p.act(&state, slot)).collect()
        } else {
            let observations = observe_all(game, &state);
            let mut actions = Vec::with_capacity(n);
            for (slot, obs) in observations.into_iter().enumerate() {
                let species = job.roster[slot].species;
                if open[slot].len() == job.unroll_length {
                    let next = fresh_segment(species, job.island, memory[slot].clone());
                    let mut done = std::mem::replace(&mut open[slot], next);
                    done.bootstrap = Some(obs.clone());
                    segments.push(done);
                }
                let (a, logp, next_state) = act(job.net, &params[species], &obs, &memory[slot], &mut rng)?;
                memory[slot] = next_state;
                let seg = &mut open[slot];
                seg.observations.push(obs);
                seg.actions.push(a as u8);
                seg.behavior_logp.push(logp);
                actions.push(Action::from_code(a as u8).expect("network emits codes in the action set"));
            }
            actions
        };
        let (rewards, _) = step_in_place(game, &mut state, &actions)?;
        for (slot, r) in rewards.iter().enumerate() {
            returns[slot] += r;
            if scripts.is_none() {
                open[slot].rewards.push(*r);
            }
        }
        if let Some(log) = log.as_mut() {
            log.record(&state, &actions, &rewards);
        }
    }
    segments.extend(open.into_iter().filter(|s| !s.is_empty()));
    Ok(EpisodeResult {
        island: job.island,
        roster: job.roster.clone(),
        returns,
        segments,
        switch_counts: game.switch_counts(&state),
        log,
    })
}
