//! Game rules plugged into the gridworld engine.

pub mod allelopathy;
pub mod bandit;
pub mod clamity;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pomg::{Action, AgentBody, GridState, Image, IslandId, Payload, Rgb, Terrain};
use crate::population::IndividualId;

use allelopathy::AllelopathyConfig;
use bandit::BanditConfig;
use clamity::ClamityConfig;

/// A game and its constants, selected in configs by `"kind"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Game {
    Clamity(ClamityConfig),
    Allelopathy(AllelopathyConfig),
    /// Fixed per-island payoff; a test fixture for the ecological dynamics.
    Bandit(BanditConfig),
}

impl Game {
    pub fn key(&self) -> &'static str {
        match self {
            Game::Clamity(_) => "clamity",
            Game::Allelopathy(_) => "allelopathy",
            Game::Bandit(_) => "bandit",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Game::Clamity(c) => c.validate(),
            Game::Allelopathy(c) => c.validate(),
            Game::Bandit(c) => c.validate(),
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Game::Clamity(_) => Action::UNIVERSAL + 1,
            Game::Allelopathy(_) | Game::Bandit(_) => Action::UNIVERSAL,
        }
    }

    pub fn episode_length(&self) -> u32 {
        match self {
            Game::Clamity(c) => c.episode_length,
            Game::Allelopathy(c) => c.episode_length,
            Game::Bandit(c) => c.episode_length,
        }
    }

    pub fn reset(&self, island: IslandId, roster: &[IndividualId], seed: u64) -> Result<GridState> {
        match self {
            Game::Clamity(c) => clamity::reset(c, island, roster, seed),
            Game::Allelopathy(c) => allelopathy::reset(c, island, roster, seed),
            Game::Bandit(c) => bandit::reset(c, island, roster, seed),
        }
    }

    /// Whether movement and rotation actions still apply to `agent`.
    pub fn is_mobile(&self, agent: &AgentBody) -> bool {
        !matches!(&agent.payload, Payload::Clam(p) if p.is_settled())
    }

    /// Game-specific phase after movement; returns per-agent rewards.
    pub fn resolve_phase(&self, state: &mut GridState, actions: &[Action]) -> Vec<f64> {
        match self {
            Game::Clamity(c) => clamity::resolve_phase(c, state, actions),
            Game::Allelopathy(c) => allelopathy::resolve_phase(c, state),
            Game::Bandit(c) => bandit::resolve_phase(c, state),
        }
    }

    pub fn background_color(&self) -> Rgb {
        match self {
            Game::Clamity(_) => [16, 48, 96],
            Game::Allelopathy(_) => [96, 72, 40],
            Game::Bandit(_) => [64, 64, 64],
        }
    }

    pub fn terrain_color(&self, terrain: Terrain) -> Rgb {
        match terrain {
            Terrain::Empty => self.background_color(),
            Terrain::Nutrient => [255, 215, 0],
            Terrain::Seed(t) => allelopathy::seed_color(t),
            Terrain::Shrub(t) => allelopathy::shrub_color(t),
        }
    }

    pub fn paint_overlay(&self, state: &GridState, img: &mut Image) {
        if let Game::Clamity(_) = self {
            clamity::paint_shells(state, img);
        }
    }

    /// Per-agent switching-cost counters, for games that have them.
    pub fn switch_counts(&self, state: &GridState) -> Option<Vec<u32>> {
        match self {
            Game::Allelopathy(_) => Some(allelopathy::count_switching_costs(state)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let games = [
            Game::Clamity(ClamityConfig::default()),
            Game::Allelopathy(AllelopathyConfig::default()),
            Game::Bandit(BanditConfig::default()),
        ];
        for g in games {
            let text = serde_json::to_string(&g).unwrap();
            assert_eq!(serde_json::from_str::<Game>(&text).unwrap(), g);
        }
    }

    #[test]
    fn partial_config_fills_defaults_and_rejects_typos() {
        let g: Game = serde_json::from_str(r#"{"kind":"clamity","width":24,"height":12}"#).unwrap();
        let Game::Clamity(c) = g else { panic!() };
        assert_eq!(c.episode_length, 250);
        assert!(serde_json::from_str::<Game>(r#"{"kind":"clamity","widht":24}"#).is_err());
        let g: Game = serde_json::from_str(r#"{"kind":"allelopathy","variant":"biased"}"#).unwrap();
        let Game::Allelopathy(a) = g else { panic!() };
        assert_eq!(a.caps(), (8, 250));
    }
}
