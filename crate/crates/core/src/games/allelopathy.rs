//! Allelopathy: two shrub types that suppress each other's regrowth, and
//! foragers rewarded for eating long runs of a single type.
//!
//! Walking onto a grown shrub eats it and leaves a seed of the same type.
//! A seed regrows each step with probability `p0 / (1 + n)`, where `n` is the
//! number of grown shrubs of the other type within the suppression radius.
//! The harvest reward is the current run length of same-type harvests,
//! capped per type; eating a different type resets the run to 1 and counts
//! one switching cost.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomg::{GridState, IslandId, Payload, Pos, Rgb, Terrain};
use crate::population::IndividualId;
use crate::rng::unit_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShrubType {
    A,
    B,
}

impl ShrubType {
    pub fn other(self) -> Self {
        match self {
            ShrubType::A => ShrubType::B,
            ShrubType::B => ShrubType::A,
        }
    }
}

pub(super) fn shrub_color(t: ShrubType) -> Rgb {
    match t {
        ShrubType::A => [60, 180, 75],
        ShrubType::B => [255, 225, 25],
    }
}

pub(super) fn seed_color(t: ShrubType) -> Rgb {
    match t {
        ShrubType::A => [78, 96, 48],
        ShrubType::B => [128, 104, 36],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Unbiased,
    Biased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllelopathyConfig {
    pub variant: Variant,
    pub width: usize,
    pub height: usize,
    pub episode_length: u32,
    pub base_regrowth_probability: f64,
    /// Chebyshev radius within which other-type shrubs suppress a seed.
    pub suppression_radius: usize,
    /// Fraction of cells holding a plant at reset.
    pub initial_density: f64,
    /// Overrides the variant's type-A plant share.
    pub type_a_frequency: Option<f64>,
    /// Override the variant's reward caps.
    pub cap_a: Option<u32>,
    pub cap_b: Option<u32>,
}

impl Default for AllelopathyConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Unbiased,
            width: 60,
            height: 36,
            episode_length: 1000,
            base_regrowth_probability: 0.05,
            suppression_radius: 2,
            initial_density: 0.25,
            type_a_frequency: None,
            cap_a: None,
            cap_b: None,
        }
    }
}

impl AllelopathyConfig {
    pub fn biased() -> Self {
        Self {
            variant: Variant::Biased,
            ..Self::default()
        }
    }

    /// Reward caps `(A, B)`.
    pub fn caps(&self) -> (u32, u32) {
        let (a, b) = match self.variant {
            Variant::Unbiased => (250, 250),
            Variant::Biased => (8, 250),
        };
        (self.cap_a.unwrap_or(a), self.cap_b.unwrap_or(b))
    }

    pub fn cap(&self, t: ShrubType) -> u32 {
        let (a, b) = self.caps();
        match t {
            ShrubType::A => a,
            ShrubType::B => b,
        }
    }

    /// Share of plants that are type A; type B takes the rest.
    pub fn frequency_a(&self) -> f64 {
        self.type_a_frequency.unwrap_or(match self.variant {
            Variant::Unbiased => 0.5,
            Variant::Biased => 0.8,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("game.width", "map dimensions must be positive"));
        }
        if self.episode_length == 0 {
            return Err(Error::config("game.episode_length", "must be positive"));
        }
        let (a, b) = self.caps();
        if a == 0 || b == 0 {
            return Err(Error::config("game.cap_a", "reward caps must be positive"));
        }
        let f = self.frequency_a();
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::config("game.type_a_frequency", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.initial_density) {
            return Err(Error::config("game.initial_density", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.base_regrowth_probability) {
            return Err(Error::config("game.base_regrowth_probability", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DigestivePayload {
    pub last_type: Option<ShrubType>,
    pub streak: u32,
    pub switch_count: u32,
}

/// Reward for eating `harvested` given the forager's digestive state.
pub fn harvest_reward(payload: DigestivePayload, harvested: ShrubType, config: &AllelopathyConfig) -> (f64, DigestivePayload) {
    let mut next = payload;
    match payload.last_type {
        Some(t) if t != harvested => {
            next.streak = 1;
            next.switch_count += 1;
        }
        Some(_) => next.streak += 1,
        None => next.streak = 1,
    }
    next.last_type = Some(harvested);
    (next.streak.min(config.cap(harvested)) as f64, next)
}

/// Switching costs incurred by a harvest sequence.
pub fn count_switches(harvests: &[ShrubType]) -> u32 {
    harvests.windows(2).filter(|w| w[0] != w[1]).count() as u32
}

/// Per-agent switching-cost counters of a (finished) episode.
pub fn count_switching_costs(state: &GridState) -> Vec<u32> {
    state
        .agents
        .iter()
        .map(|a| match &a.payload {
            Payload::Forager(d) => d.switch_count,
            _ => 0,
        })
        .collect()
}

/// Regrowth probability of the seed at `cell`.
pub fn regrowth_probability(state: &GridState, cell: Pos, config: &AllelopathyConfig) -> Result<f64> {
    let Terrain::Seed(t) = state.terrain(cell) else {
        return Err(Error::arg(format!("cell {cell:?} holds no seed")));
    };
    Ok(regrowth_from_neighbours(suppressors(state, cell, t, config.suppression_radius), config))
}

fn regrowth_from_neighbours(n_other: usize, config: &AllelopathyConfig) -> f64 {
    config.base_regrowth_probability / (1.0 + n_other as f64)
}

fn suppressors(state: &GridState, cell: Pos, t: ShrubType, radius: usize) -> usize {
    count_other(&state.cells, state.height, state.width, cell, t, radius)
}

fn count_other(cells: &[Terrain], height: usize, width: usize, cell: Pos, t: ShrubType, radius: usize) -> usize {
    let r = radius as isize;
    let wanted = Terrain::Shrub(t.other());
    let mut n = 0;
    for dr in -r..=r {
        for dc in -r..=r {
            if let Some(p) = cell.offset(dr, dc, height, width) {
                n += usize::from(cells[p.row * width + p.col] == wanted);
            }
        }
    }
    n
}

pub fn reset(config: &AllelopathyConfig, island: IslandId, roster: &[IndividualId], seed: u64) -> Result<GridState> {
    config.validate()?;
    let mut state = GridState::blank(config.width, config.height, config.episode_length, island, seed)?;
    let freq_a = config.frequency_a();
    for idx in 0..state.cells.len() {
        if unit_f64(&mut state.rng) < config.initial_density {
            let t = if unit_f64(&mut state.rng) < freq_a { ShrubType::A } else { ShrubType::B };
            state.cells[idx] = Terrain::Shrub(t);
        }
    }
    let mut empty: Vec<Pos> = state.positions().filter(|&p| state.terrain(p) == Terrain::Empty).collect();
    empty.shuffle(&mut state.rng);
    state.place_agents(roster, &empty, || Payload::Forager(DigestivePayload::default()))?;
    Ok(state)
}

/// Harvest by contact, then stochastic regrowth against a snapshot of the
/// grown shrubs.
pub fn allelopathy_step_phase(config: &AllelopathyConfig, state: &mut GridState) -> Vec<f64> {
    let mut rewards = vec![0.0; state.agents.len()];
    for slot in 0..state.agents.len() {
        let pos = state.agents[slot].position;
        if let Terrain::Shrub(t) = state.terrain(pos) {
            if let Payload::Forager(d) = state.agents[slot].payload {
                let (r, next) = harvest_reward(d, t, config);
                rewards[slot] = r;
                state.agents[slot].payload = Payload::Forager(next);
                state.set_terrain(pos, Terrain::Seed(t));
            }
        }
    }

    let snapshot = state.cells.clone();
    for (idx, terrain) in snapshot.iter().enumerate() {
        if let Terrain::Seed(t) = *terrain {
            let pos = Pos::new(idx / state.width, idx % state.width);
            let n = count_other(&snapshot, state.height, state.width, pos, t, config.suppression_radius);
            if unit_f64(&mut state.rng) < regrowth_from_neighbours(n, config) {
                state.cells[idx] = Terrain::Shrub(t);
            }
        }
    }
    rewards
}

pub(super) fn resolve_phase(config: &AllelopathyConfig, state: &mut GridState) -> Vec<f64> {
    allelopathy_step_phase(config, state)
}
