//! Clamity: an exploration game with an attractive local optimum.
//!
//! Agents start as swimming larvae near the map centre. The settle action
//! fixes an agent in place for the rest of the episode; its shell then grows
//! one ring every `shell_growth_period` steps up to `max_shell_radius`, never
//! into cells that touch another clam's shell. A healthy clam earns
//! `filter_reward_per_cell_per_step` per shell cell per step plus
//! `nutrient_bonus_per_step` per nutrient cell its shell covers. Any clam
//! whose shell touches another's (8-neighbourhood) earns nothing.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomg::{Action, GridState, Image, IslandId, Payload, Pos, Rgb, Terrain};
use crate::population::IndividualId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClamityConfig {
    pub width: usize,
    pub height: usize,
    pub episode_length: u32,
    pub num_nutrient_patches: usize,
    /// Side of each square nutrient patch.
    pub patch_size: usize,
    /// Every patch cell is strictly farther than this (Chebyshev) from the
    /// spawn centre.
    pub nutrient_min_distance: usize,
    /// ... and no farther than this.
    pub nutrient_max_distance: usize,
    pub max_shell_radius: usize,
    pub shell_growth_period: u32,
    pub filter_reward_per_cell_per_step: f64,
    pub nutrient_bonus_per_step: f64,
    /// Side of the square spawn region at the map centre.
    pub spawn_size: usize,
}

impl Default for ClamityConfig {
    fn default() -> Self {
        Self {
            width: 60,
            height: 36,
            episode_length: 250,
            num_nutrient_patches: 4,
            patch_size: 2,
            nutrient_min_distance: 10,
            nutrient_max_distance: 14,
            max_shell_radius: 2,
            shell_growth_period: 5,
            filter_reward_per_cell_per_step: 0.04,
            nutrient_bonus_per_step: 3.0,
            spawn_size: 4,
        }
    }
}

impl ClamityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("game.width", "map dimensions must be positive"));
        }
        if self.episode_length == 0 {
            return Err(Error::config("game.episode_length", "must be positive"));
        }
        if self.shell_growth_period == 0 {
            return Err(Error::config("game.shell_growth_period", "must be positive"));
        }
        if self.spawn_size == 0 {
            return Err(Error::config("game.spawn_size", "must be positive"));
        }
        if self.num_nutrient_patches > 0 && (self.patch_size == 0 || self.nutrient_max_distance <= self.nutrient_min_distance) {
            return Err(Error::config(
                "game.nutrient_max_distance",
                "patches need a positive size and max distance above the min distance",
            ));
        }
        for (key, v) in [
            ("game.filter_reward_per_cell_per_step", self.filter_reward_per_cell_per_step),
            ("game.nutrient_bonus_per_step", self.nutrient_bonus_per_step),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn spawn_center(&self) -> Pos {
        Pos::new(self.height / 2, self.width / 2)
    }

    /// Shell cell count `age` steps after settling, absent obstruction.
    pub fn unobstructed_shell_size(&self, age: u32) -> usize {
        let rings = ((age / self.shell_growth_period) as usize).min(self.max_shell_radius);
        (2 * rings + 1).pow(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClamStage {
    Trochophore,
    Settled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClamPayload {
    pub stage: ClamStage,
    pub shell_cells: Vec<Pos>,
    pub settle_step: Option<u32>,
}

impl ClamPayload {
    pub fn swimming() -> Self {
        Self {
            stage: ClamStage::Trochophore,
            shell_cells: Vec::new(),
            settle_step: None,
        }
    }

    pub fn is_settled(&self) -> bool {
        self.stage == ClamStage::Settled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShellHealth {
    Healthy,
    Unhealthy,
}

fn clam(state: &GridState, slot: usize) -> Option<&ClamPayload> {
    match &state.agents.get(slot)?.payload {
        Payload::Clam(p) => Some(p),
        _ => None,
    }
}

fn clam_mut(state: &mut GridState, slot: usize) -> Option<&mut ClamPayload> {
    match &mut state.agents.get_mut(slot)?.payload {
        Payload::Clam(p) => Some(p),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Free,
    One(usize),
    Many,
}

/// Shell ownership per cell.
struct OwnerMap {
    width: usize,
    height: usize,
    cells: Vec<Owner>,
}

impl OwnerMap {
    fn build(state: &GridState) -> Self {
        let mut map = Self {
            width: state.width,
            height: state.height,
            cells: vec![Owner::Free; state.width * state.height],
        };
        for agent in &state.agents {
            if let Payload::Clam(p) = &agent.payload {
                for &cell in &p.shell_cells {
                    map.claim(cell, agent.slot);
                }
            }
        }
        map
    }

    fn claim(&mut self, cell: Pos, slot: usize) {
        let c = &mut self.cells[cell.row * self.width + cell.col];
        *c = match *c {
            Owner::Free => Owner::One(slot),
            Owner::One(o) if o == slot => Owner::One(o),
            _ => Owner::Many,
        };
    }

    fn get(&self, cell: Pos) -> Owner {
        self.cells[cell.row * self.width + cell.col]
    }

    /// True when `cell` or any of its 8 neighbours belongs to a clam other
    /// than `slot`.
    fn touches_other(&self, cell: Pos, slot: usize) -> bool {
        (-1..=1).any(|dr| {
            (-1..=1).any(|dc| {
                cell.offset(dr, dc, self.height, self.width)
                    .is_some_and(|n| match self.get(n) {
                        Owner::Free => false,
                        Owner::One(o) => o != slot,
                        Owner::Many => true,
                    })
            })
        })
    }
}

fn ring(center: Pos, radius: usize, height: usize, width: usize) -> Vec<Pos> {
    let r = radius as isize;
    let mut cells = Vec::with_capacity(8 * radius.max(1));
    for dr in -r..=r {
        for dc in -r..=r {
            if dr.abs().max(dc.abs()) == r {
                if let Some(p) = center.offset(dr, dc, height, width) {
                    cells.push(p);
                }
            }
        }
    }
    cells
}

fn spawn_cells(config: &ClamityConfig, n: usize, rng: &mut impl Rng) -> Result<Vec<Pos>> {
    let total = config.width * config.height;
    if n > total {
        return Err(Error::config(
            "agents",
            format!("{n} agents do not fit on a {}x{} map", config.height, config.width),
        ));
    }
    let mut side = config.spawn_size;
    while side * side < n {
        side += 1;
    }
    loop {
        let center = config.spawn_center();
        let top = center.row.saturating_sub(side / 2);
        let left = center.col.saturating_sub(side / 2);
        let bottom = (top + side).min(config.height);
        let right = (left + side).min(config.width);
        let mut cells: Vec<Pos> = (top..bottom).flat_map(|r| (left..right).map(move |c| Pos::new(r, c))).collect();
        if cells.len() >= n {
            cells.shuffle(rng);
            cells.truncate(n);
            return Ok(cells);
        }
        side += 1;
    }
}

fn place_patches(config: &ClamityConfig, state: &mut GridState) -> Result<()> {
    let center = config.spawn_center();
    let ps = config.patch_size;
    for k in 0..config.num_nutrient_patches {
        let (north, west) = match k % 4 {
            0 => (true, true),
            1 => (true, false),
            2 => (false, true),
            _ => (false, false),
        };
        let rows = if north { 0..center.row } else { center.row..config.height };
        let cols = if west { 0..center.col } else { center.col..config.width };
        let mut candidates = Vec::new();
        for r0 in rows.clone() {
            for c0 in cols.clone() {
                if r0 + ps > rows.end || c0 + ps > cols.end {
                    continue;
                }
                let fits = (r0..r0 + ps).all(|r| {
                    (c0..c0 + ps).all(|c| {
                        let p = Pos::new(r, c);
                        let d = p.chebyshev(center);
                        d > config.nutrient_min_distance && d <= config.nutrient_max_distance && state.terrain(p) == Terrain::Empty
                    })
                });
                if fits {
                    candidates.push(Pos::new(r0, c0));
                }
            }
        }
        let Some(&origin) = candidates.choose(&mut state.rng) else {
            return Err(Error::config(
                "game.nutrient_min_distance",
                format!("no room for nutrient patch {k} on a {}x{} map", config.height, config.width),
            ));
        };
        for r in origin.row..origin.row + ps {
            for c in origin.col..origin.col + ps {
                state.set_terrain(Pos::new(r, c), Terrain::Nutrient);
            }
        }
    }
    Ok(())
}

pub fn reset(config: &ClamityConfig, island: IslandId, roster: &[IndividualId], seed: u64) -> Result<GridState> {
    config.validate()?;
    let mut state = GridState::blank(config.width, config.height, config.episode_length, island, seed)?;
    place_patches(config, &mut state)?;
    let spawns = spawn_cells(config, roster.len(), &mut state.rng)?;
    state.place_agents(roster, &spawns, || Payload::Clam(ClamPayload::swimming()))?;
    Ok(state)
}

/// Turns a swimming agent into a clam at its current cell. Settling twice
/// is a no-op.
pub fn apply_settle(state: &mut GridState, slot: usize) -> Result<()> {
    let step = state.step_index;
    let pos = state
        .agents
        .get(slot)
        .ok_or_else(|| Error::arg(format!("no agent in slot {slot}")))?
        .position;
    let payload = clam_mut(state, slot).ok_or_else(|| Error::arg(format!("agent {slot} is not a clamity agent")))?;
    if payload.is_settled() {
        return Ok(());
    }
    payload.stage = ClamStage::Settled;
    payload.settle_step = Some(step);
    payload.shell_cells = vec![pos];
    Ok(())
}

/// Adds the next ring to every clam whose age is a positive multiple of the
/// growth period, visiting clams in a random order.
pub fn grow_shells(config: &ClamityConfig, state: &mut GridState) {
    let now = state.step_index;
    let mut due: Vec<(usize, usize)> = state
        .agents
        .iter()
        .filter_map(|a| match &a.payload {
            Payload::Clam(p) => {
                let age = now - p.settle_step?;
                let ring = (age / config.shell_growth_period) as usize;
                (age > 0 && age % config.shell_growth_period == 0 && ring <= config.max_shell_radius).then_some((a.slot, ring))
            }
            _ => None,
        })
        .collect();
    if due.is_empty() {
        return;
    }
    due.shuffle(&mut state.rng);
    let mut owners = OwnerMap::build(state);
    for (slot, radius) in due {
        let center = state.agents[slot].position;
        let claimed: Vec<Pos> = ring(center, radius, state.height, state.width)
            .into_iter()
            .filter(|&cell| owners.get(cell) == Owner::Free && !owners.touches_other(cell, slot))
            .collect();
        for &cell in &claimed {
            owners.claim(cell, slot);
        }
        if let Some(p) = clam_mut(state, slot) {
            p.shell_cells.extend(claimed);
        }
    }
}

fn health_with(owners: &OwnerMap, payload: &ClamPayload, slot: usize) -> ShellHealth {
    if payload.shell_cells.iter().any(|&c| owners.touches_other(c, slot)) {
        ShellHealth::Unhealthy
    } else {
        ShellHealth::Healthy
    }
}

pub fn shell_health(state: &GridState, slot: usize) -> Result<ShellHealth> {
    let payload = clam(state, slot).ok_or_else(|| Error::arg(format!("agent {slot} is not a clamity agent")))?;
    if !payload.is_settled() {
        return Err(Error::arg(format!("agent {slot} has not settled")));
    }
    Ok(health_with(&OwnerMap::build(state), payload, slot))
}

pub fn compute_rewards(config: &ClamityConfig, state: &GridState) -> Vec<f64> {
    let owners = OwnerMap::build(state);
    state
        .agents
        .iter()
        .map(|agent| match &agent.payload {
            Payload::Clam(p) if p.is_settled() => {
                if health_with(&owners, p, agent.slot) == ShellHealth::Unhealthy {
                    return 0.0;
                }
                let engulfed = p.shell_cells.iter().filter(|&&c| state.terrain(c) == Terrain::Nutrient).count();
                config.filter_reward_per_cell_per_step * p.shell_cells.len() as f64
                    + config.nutrient_bonus_per_step * engulfed as f64
            }
            _ => 0.0,
        })
        .collect()
}

pub(super) fn resolve_phase(config: &ClamityConfig, state: &mut GridState, actions: &[Action]) -> Vec<f64> {
    for (slot, action) in actions.iter().enumerate() {
        if *action == Action::Settle {
            apply_settle(state, slot).expect("clamity agents carry clam payloads");
        }
    }
    grow_shells(config, state);
    compute_rewards(config, state)
}

/// Episode return of a lone clam that settles at step `settle_step` far
/// from any nutrient, summed step by step in simulation order.
pub fn analytic_settle_return(settle_step: u32, config: &ClamityConfig) -> f64 {
    (settle_step..config.episode_length)
        .map(|t| config.filter_reward_per_cell_per_step * config.unobstructed_shell_size(t - settle_step) as f64)
        .fold(0.0, |acc, r| acc + r)
}

fn shade(c: Rgb, f: f64) -> Rgb {
    c.map(|u| (u as f64 * f).round() as u8)
}

pub(super) fn paint_shells(state: &GridState, img: &mut Image) {
    for agent in &state.agents {
        if let Payload::Clam(p) = &agent.payload {
            for &cell in &p.shell_cells {
                img.set(cell.row, cell.col, shade(agent.color, 0.6));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomg::{reset as pomg_reset, step_in_place, Orientation};
    use crate::games::Game;

    fn lone(config: &ClamityConfig) -> (Game, GridState) {
        let game = Game::Clamity(config.clone());
        let state = pomg_reset(&game, IslandId::Solitary { species: 0, replica: 0 }, &[IndividualId::new(0, 0)], 5).unwrap();
        (game, state)
    }

    fn settled_at(state: &mut GridState, slot: usize, pos: Pos, radius: usize) {
        state.agents[slot].position = pos;
        let mut cells = vec![pos];
        for r in 1..=radius {
            cells.extend(ring(pos, r, state.height, state.width));
        }
        state.agents[slot].payload = Payload::Clam(ClamPayload {
            stage: ClamStage::Settled,
            shell_cells: cells,
            settle_step: Some(0),
        });
    }

    fn sizes(state: &GridState) -> Vec<usize> {
        state
            .agents
            .iter()
            .map(|a| match &a.payload {
                Payload::Clam(p) => p.shell_cells.len(),
                _ => 0,
            })
            .collect()
    }

    #[test]
    fn settle_fixes_the_agent() {
        let (game, mut state) = lone(&ClamityConfig::default());
        let start = state.agents[0].position;
        step_in_place(&game, &mut state, &[Action::Settle]).unwrap();
        assert_eq!(sizes(&state), vec![1]);
        let o = state.agents[0].orientation;
        for a in [Action::MoveUp, Action::MoveLeft, Action::RotateLeft, Action::Settle] {
            step_in_place(&game, &mut state, &[a]).unwrap();
        }
        assert_eq!(state.agents[0].position, start);
        assert_eq!(state.agents[0].orientation, o);
        let Payload::Clam(p) = &state.agents[0].payload else { panic!() };
        assert_eq!(p.settle_step, Some(0));
    }

    #[test]
    fn lone_shell_grows_by_rings() {
        let (game, mut state) = lone(&ClamityConfig::default());
        let mut seen = Vec::new();
        for t in 0..20 {
            let a = if t == 0 { Action::Settle } else { Action::RotateRight };
            step_in_place(&game, &mut state, &[a]).unwrap();
            seen.push(sizes(&state)[0]);
        }
        assert_eq!(seen[0], 1);
        assert_eq!(seen[4], 1);
        assert_eq!(seen[5], 9);
        assert_eq!(seen[10], 25);
        assert_eq!(seen[19], 25, "radius cap");
        for (age, &s) in seen.iter().enumerate() {
            assert_eq!(s, ClamityConfig::default().unobstructed_shell_size(age as u32));
        }
    }

    #[test]
    fn surrounded_clam_cannot_grow() {
        let config = ClamityConfig {
            num_nutrient_patches: 0,
            ..ClamityConfig::default()
        };
        let game = Game::Clamity(config.clone());
        let roster: Vec<_> = (0..9).map(|k| IndividualId::new(0, k)).collect();
        let mut state = pomg_reset(&game, IslandId::Archipelago(0), &roster, 1).unwrap();
        let center = Pos::new(18, 30);
        settled_at(&mut state, 0, center, 0);
        // Eight neighbours at distance 2, each with a single-cell shell.
        let mut k = 1;
        for dr in [-2isize, 0, 2] {
            for dc in [-2isize, 0, 2] {
                if dr == 0 && dc == 0 {
                    continue;
                }
                settled_at(&mut state, k, center.offset(dr, dc, 36, 60).unwrap(), 0);
                k += 1;
            }
        }
        state.step_index = 5;
        grow_shells(&config, &mut state);
        assert_eq!(sizes(&state)[0], 1);
    }

    #[test]
    fn health_rules() {
        let config = ClamityConfig {
            num_nutrient_patches: 0,
            ..ClamityConfig::default()
        };
        let game = Game::Clamity(config.clone());
        let roster: Vec<_> = (0..2).map(|k| IndividualId::new(0, k)).collect();
        let mut state = pomg_reset(&game, IslandId::Archipelago(0), &roster, 2).unwrap();

        settled_at(&mut state, 0, Pos::new(10, 10), 1);
        state.agents[1].position = Pos::new(30, 50);
        assert_eq!(shell_health(&state, 0).unwrap(), ShellHealth::Healthy);
        assert!(shell_health(&state, 1).is_err(), "trochophore");

        // Radius-1 shells with three free cells between them: exhaustive
        // check confirms no cell pair within Chebyshev 1.
        settled_at(&mut state, 1, Pos::new(10, 14), 1);
        let a = match &state.agents[0].payload { Payload::Clam(p) => p.shell_cells.clone(), _ => unreachable!() };
        let b = match &state.agents[1].payload { Payload::Clam(p) => p.shell_cells.clone(), _ => unreachable!() };
        assert!(a.iter().all(|x| b.iter().all(|y| x.chebyshev(*y) > 1)));
        assert_eq!(shell_health(&state, 0).unwrap(), ShellHealth::Healthy);
        assert_eq!(shell_health(&state, 1).unwrap(), ShellHealth::Healthy);

        // Touching shells: both unhealthy and both earn nothing.
        settled_at(&mut state, 1, Pos::new(10, 13), 1);
        assert_eq!(shell_health(&state, 0).unwrap(), ShellHealth::Unhealthy);
        assert_eq!(shell_health(&state, 1).unwrap(), ShellHealth::Unhealthy);
        assert_eq!(compute_rewards(&config, &state), vec![0.0, 0.0]);
    }

    #[test]
    fn adjacent_settlers_both_settle_and_sicken() {
        let config = ClamityConfig {
            num_nutrient_patches: 0,
            ..ClamityConfig::default()
        };
        let game = Game::Clamity(config);
        let roster: Vec<_> = (0..2).map(|k| IndividualId::new(0, k)).collect();
        let mut state = pomg_reset(&game, IslandId::Archipelago(0), &roster, 2).unwrap();
        state.agents[0].position = Pos::new(5, 5);
        state.agents[1].position = Pos::new(5, 6);
        let (rewards, _) = step_in_place(&game, &mut state, &[Action::Settle, Action::Settle]).unwrap();
        assert_eq!(rewards, vec![0.0, 0.0]);
        assert!(state.agents.iter().all(|a| !game.is_mobile(a)));
    }

    #[test]
    fn reward_examples() {
        let config = ClamityConfig {
            filter_reward_per_cell_per_step: 0.1,
            num_nutrient_patches: 0,
            ..ClamityConfig::default()
        };
        let game = Game::Clamity(config.clone());
        let roster: Vec<_> = (0..2).map(|k| IndividualId::new(0, k)).collect();
        let mut state = pomg_reset(&game, IslandId::Archipelago(0), &roster, 2).unwrap();
        settled_at(&mut state, 0, Pos::new(10, 10), 1);
        state.agents[1].position = Pos::new(30, 50);
        let r = compute_rewards(&config, &state);
        assert!((r[0] - 0.9).abs() < 1e-12);
        assert_eq!(r[1], 0.0);

        state.set_terrain(Pos::new(9, 9), Terrain::Nutrient);
        state.set_terrain(Pos::new(11, 11), Terrain::Nutrient);
        let r = compute_rewards(&config, &state);
        assert!((r[0] - (0.9 + 2.0 * config.nutrient_bonus_per_step)).abs() < 1e-12);
    }

    #[test]
    fn analytic_return_matches_simulation() {
        let config = ClamityConfig::default();
        assert_eq!(analytic_settle_return(config.episode_length, &config), 0.0);
        assert_eq!(analytic_settle_return(config.episode_length + 3, &config), 0.0);
        assert!((analytic_settle_return(0, &config) - 242.0).abs() < 1e-9);
        for ts in [0u32, 1, 7, 120, 249] {
            let (game, mut state) = lone(&config);
            let mut total = 0.0;
            for t in 0..config.episode_length {
                let a = if t == ts { Action::Settle } else { Action::RotateLeft };
                let (r, _) = step_in_place(&game, &mut state, &[a]).unwrap();
                total += r[0];
            }
            assert!((total - analytic_settle_return(ts, &config)).abs() < 1e-9, "t_s = {ts}");
        }
        let returns: Vec<f64> = (1..config.episode_length).map(|t| analytic_settle_return(t, &config)).collect();
        assert!(returns.windows(2).all(|w| w[0] > w[1]));
        assert!(analytic_settle_return(0, &config) > analytic_settle_return(10, &config));
    }

    #[test]
    fn patches_respect_distance_band() {
        let config = ClamityConfig::default();
        for seed in 0..20 {
            let game = Game::Clamity(config.clone());
            let state = pomg_reset(&game, IslandId::Archipelago(0), &[], seed).unwrap();
            let patch: Vec<Pos> = state.positions().filter(|&p| state.terrain(p) == Terrain::Nutrient).collect();
            assert_eq!(patch.len(), 16);
            for p in patch {
                let d = p.chebyshev(config.spawn_center());
                assert!(d > 10 && d <= 14);
            }
        }
    }

    #[test]
    fn spawn_region_and_orientation() {
        let config = ClamityConfig::default();
        let game = Game::Clamity(config.clone());
        let roster: Vec<_> = (0..16).map(|k| IndividualId::new(0, k)).collect();
        let state = pomg_reset(&game, IslandId::Archipelago(0), &roster, 4).unwrap();
        let mut cells: Vec<Pos> = state.agents.iter().map(|a| a.position).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 16);
        assert!(cells.iter().all(|p| (16..20).contains(&p.row) && (28..32).contains(&p.col)));
        assert!(state.agents.iter().all(|a| Orientation::ALL.contains(&a.orientation)));

        // Larger crowds widen the region rather than failing.
        let roster: Vec<_> = (0..40).map(|k| IndividualId::new(0, k)).collect();
        assert!(pomg_reset(&game, IslandId::Archipelago(0), &roster, 4).is_ok());
    }
}
