//! A one-armed bandit per island: every agent on archipelago island `i`
//! receives `payoffs[i]` on the final step, whatever it does. Solitary
//! islands pay nothing. Useful for checking the population dynamics in
//! isolation from learning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomg::{GridState, IslandId, Payload};
use crate::population::IndividualId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub payoffs: Vec<f64>,
    pub episode_length: u32,
    pub width: usize,
    pub height: usize,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            payoffs: vec![1.0, 0.0],
            episode_length: 1,
            width: 15,
            height: 15,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode_length == 0 {
            return Err(Error::config("game.episode_length", "must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("game.width", "map dimensions must be positive"));
        }
        if self.payoffs.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("game.payoffs", "payoffs must be finite"));
        }
        Ok(())
    }

    pub fn payoff(&self, island: IslandId) -> f64 {
        match island {
            IslandId::Archipelago(i) => self.payoffs.get(i).copied().unwrap_or(0.0),
            IslandId::Solitary { .. } => 0.0,
        }
    }
}

pub fn reset(config: &BanditConfig, island: IslandId, roster: &[IndividualId], seed: u64) -> Result<GridState> {
    config.validate()?;
    let mut state = GridState::blank(config.width, config.height, config.episode_length, island, seed)?;
    let mut cells: Vec<_> = state.positions().collect();
    cells.shuffle(&mut state.rng);
    state.place_agents(roster, &cells, || Payload::None)?;
    Ok(state)
}

pub(super) fn resolve_phase(config: &BanditConfig, state: &GridState) -> Vec<f64> {
    // Called before the step counter advances.
    let last = state.step_index + 1 == state.episode_length;
    let r = if last { config.payoff(state.island) } else { 0.0 };
    vec![r; state.agents.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::Game;
    use crate::pomg::{reset as pomg_reset, step_in_place, Action};

    #[test]
    fn pays_on_final_step_only() {
        let game = Game::Bandit(BanditConfig {
            payoffs: vec![0.5, 2.0],
            episode_length: 3,
            ..BanditConfig::default()
        });
        let roster = vec![IndividualId::new(0, 0), IndividualId::new(1, 0)];
        let mut state = pomg_reset(&game, IslandId::Archipelago(1), &roster, 0).unwrap();
        let acts = [Action::MoveUp, Action::MoveDown];
        assert_eq!(step_in_place(&game, &mut state, &acts).unwrap().0, vec![0.0, 0.0]);
        assert_eq!(step_in_place(&game, &mut state, &acts).unwrap().0, vec![0.0, 0.0]);
        assert_eq!(step_in_place(&game, &mut state, &acts).unwrap(), (vec![2.0, 2.0], true));

        let mut solo = pomg_reset(&game, IslandId::Solitary { species: 0, replica: 0 }, &roster[..1], 0).unwrap();
        for _ in 0..3 {
            assert_eq!(step_in_place(&game, &mut solo, &acts[..1]).unwrap().0, vec![0.0]);
        }
    }
}
