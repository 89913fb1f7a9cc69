//! Hand-written reference policies. They read the full state rather than
//! an observation, and are used for environment oracles and baselines.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::allelopathy::ShrubType;
use crate::games::Game;
use crate::pomg::{step_in_place, Action, GridState, IslandId, Payload, Pos, Terrain};
use crate::population::IndividualId;
use crate::rng::SimRng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScriptKind {
    SettleImmediately,
    /// Idle (rotating) until `step`, then settle in place.
    SettleAt { step: u32 },
    /// Walk to the nearest free nutrient cell and settle on it.
    SeekNutrient,
    /// Walk to a lattice point `spacing` cells from its neighbours and settle.
    Disperse { spacing: usize },
    /// Harvest only `shrub`, never stepping on the other type.
    PureForager { shrub: ShrubType },
    UniformRandom,
}

impl fmt::Display for ScriptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptKind::SettleImmediately => write!(f, "settle-immediately"),
            ScriptKind::SettleAt { step } => write!(f, "settle-at:{step}"),
            ScriptKind::SeekNutrient => write!(f, "seek-nutrient"),
            ScriptKind::Disperse { spacing } => write!(f, "disperse:{spacing}"),
            ScriptKind::PureForager { shrub: ShrubType::A } => write!(f, "pure-a"),
            ScriptKind::PureForager { shrub: ShrubType::B } => write!(f, "pure-b"),
            ScriptKind::UniformRandom => write!(f, "uniform-random"),
        }
    }
}

impl FromStr for ScriptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |what: &str| -> Result<u64> {
            arg.ok_or_else(|| Error::arg(format!("`{head}` needs `:{what}`")))?
                .parse()
                .map_err(|_| Error::arg(format!("bad {what} in `{s}`")))
        };
        Ok(match head {
            "settle-immediately" => ScriptKind::SettleImmediately,
            "settle-at" => ScriptKind::SettleAt { step: num("step")? as u32 },
            "seek-nutrient" => ScriptKind::SeekNutrient,
            "disperse" => ScriptKind::Disperse {
                spacing: arg.map_or(Ok(6), |_| num("spacing"))? as usize,
            },
            "pure-a" => ScriptKind::PureForager { shrub: ShrubType::A },
            "pure-b" => ScriptKind::PureForager { shrub: ShrubType::B },
            "uniform-random" => ScriptKind::UniformRandom,
            _ => return Err(Error::arg(format!("unknown scripted policy `{s}`"))),
        })
    }
}

pub trait ScriptedPolicy: Send {
    fn act(&mut self, state: &GridState, slot: usize) -> Action;
}

pub fn scripted_policy(kind: ScriptKind, game: &Game, seed: u64) -> Result<Box<dyn ScriptedPolicy>> {
    let mismatch = |needs: &str| {
        Err(Error::config(
            "policy",
            format!("scripted policy `{kind}` needs the {needs} game, not {}", game.key()),
        ))
    };
    Ok(match kind {
        ScriptKind::SettleImmediately | ScriptKind::SettleAt { .. } | ScriptKind::SeekNutrient | ScriptKind::Disperse { .. } => {
            if !matches!(game, Game::Clamity(_)) {
                return mismatch("clamity");
            }
            match kind {
                ScriptKind::SettleImmediately => Box::new(SettleAt(0)),
                ScriptKind::SettleAt { step } => Box::new(SettleAt(step)),
                ScriptKind::SeekNutrient => Box::new(SeekNutrient),
                ScriptKind::Disperse { spacing } => {
                    if spacing == 0 {
                        return Err(Error::config("policy", "disperse spacing must be positive"));
                    }
                    Box::new(Disperse { spacing, targets: None })
                }
                _ => unreachable!(),
            }
        }
        ScriptKind::PureForager { shrub } => {
            if !matches!(game, Game::Allelopathy(_)) {
                return mismatch("allelopathy");
            }
            Box::new(PureForager {
                shrub,
                rng: SimRng::seed_from_u64(seed),
            })
        }
        ScriptKind::UniformRandom => Box::new(UniformRandom {
            num_actions: game.num_actions(),
            rng: SimRng::seed_from_u64(seed),
        }),
    })
}

const MOVES: [Action; 4] = [Action::MoveUp, Action::MoveDown, Action::MoveLeft, Action::MoveRight];

fn neighbours(state: &GridState, p: Pos) -> impl Iterator<Item = (Action, Pos)> + '_ {
    MOVES.into_iter().filter_map(move |a| {
        let (dr, dc) = a.displacement().expect("moves displace");
        p.offset(dr, dc, state.height, state.width).map(|q| (a, q))
    })
}

/// First move of a shortest path from `slot`'s cell to a goal cell, and the
/// path length. Other agents block; so do cells rejected by `passable`.
pub fn shortest_path_step(
    state: &GridState,
    slot: usize,
    is_goal: impl Fn(Pos) -> bool,
    passable: impl Fn(Pos) -> bool,
) -> Option<(Option<Action>, usize)> {
    let start = state.agents[slot].position;
    if is_goal(start) {
        return Some((None, 0));
    }
    let mut blocked = vec![false; state.width * state.height];
    for a in &state.agents {
        if a.slot != slot {
            blocked[state.index(a.position)] = true;
        }
    }
    let mut first: Vec<Option<(Action, usize)>> = vec![None; state.width * state.height];
    let mut seen = vec![false; state.width * state.height];
    seen[state.index(start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        let here = first[state.index(p)];
        for (a, q) in neighbours(state, p) {
            let qi = state.index(q);
            if seen[qi] || blocked[qi] || !passable(q) {
                continue;
            }
            seen[qi] = true;
            let (step, dist) = match here {
                Some((s, d)) => (s, d + 1),
                None => (a, 1),
            };
            if is_goal(q) {
                return Some((Some(step), dist));
            }
            first[qi] = Some((step, dist));
            queue.push_back(q);
        }
    }
    None
}

fn is_settled(state: &GridState, slot: usize) -> bool {
    matches!(&state.agents[slot].payload, Payload::Clam(p) if p.is_settled())
}

struct SettleAt(u32);

impl ScriptedPolicy for SettleAt {
    fn act(&mut self, state: &GridState, _slot: usize) -> Action {
        if state.step_index >= self.0 {
            Action::Settle
        } else {
            Action::RotateLeft
        }
    }
}

struct SeekNutrient;

impl ScriptedPolicy for SeekNutrient {
    fn act(&mut self, state: &GridState, slot: usize) -> Action {
        if is_settled(state, slot) {
            return Action::RotateLeft;
        }
        let path = shortest_path_step(state, slot, |p| state.terrain(p) == Terrain::Nutrient, |_| true);
        match path {
            Some((Some(step), _)) => step,
            _ => Action::Settle,
        }
    }
}

struct Disperse {
    spacing: usize,
    targets: Option<Vec<Pos>>,
}

impl Disperse {
    fn lattice(&self, state: &GridState) -> Vec<Pos> {
        let n = state.agents.len();
        let side = (1..).find(|s| s * s >= n).unwrap_or(1);
        let (cr, cc) = (state.height as isize / 2, state.width as isize / 2);
        let half = (side as isize - 1) * self.spacing as isize / 2;
        (0..n)
            .map(|k| {
                let r = cr - half + (k / side) as isize * self.spacing as isize;
                let c = cc - half + (k % side) as isize * self.spacing as isize;
                Pos::new(
                    r.clamp(0, state.height as isize - 1) as usize,
                    c.clamp(0, state.width as isize - 1) as usize,
                )
            })
            .collect()
    }
}

impl ScriptedPolicy for Disperse {
    fn act(&mut self, state: &GridState, slot: usize) -> Action {
        if is_settled(state, slot) {
            return Action::RotateLeft;
        }
        if self.targets.is_none() {
            self.targets = Some(self.lattice(state));
        }
        let target = self.targets.as_ref().expect("targets set")[slot];
        let deadline = 2 * (state.width + state.height) as u32;
        if state.agents[slot].position == target || state.step_index >= deadline {
            return Action::Settle;
        }
        match shortest_path_step(state, slot, |p| p == target, |_| true) {
            Some((Some(step), _)) => step,
            _ => Action::RotateLeft,
        }
    }
}

struct PureForager {
    shrub: ShrubType,
    rng: SimRng,
}

impl ScriptedPolicy for PureForager {
    fn act(&mut self, state: &GridState, slot: usize) -> Action {
        let avoid = Terrain::Shrub(self.shrub.other());
        let want = Terrain::Shrub(self.shrub);
        let path = shortest_path_step(state, slot, |p| state.terrain(p) == want, |p| state.terrain(p) != avoid);
        if let Some((Some(step), _)) = path {
            return step;
        }
        let here = state.agents[slot].position;
        let options: Vec<Action> = neighbours(state, here)
            .filter(|&(_, q)| state.terrain(q) != avoid && state.agent_at(q).is_none())
            .map(|(a, _)| a)
            .collect();
        if options.is_empty() {
            Action::RotateLeft
        } else {
            options[self.rng.gen_range(0..options.len())]
        }
    }
}

struct UniformRandom {
    num_actions: usize,
    rng: SimRng,
}

impl ScriptedPolicy for UniformRandom {
    fn act(&mut self, _state: &GridState, _slot: usize) -> Action {
        Action::from_code(self.rng.gen_range(0..self.num_actions) as u8).expect("code within action set")
    }
}

/// Plays one episode with a scripted policy per agent slot and returns each
/// agent's episode return alongside the final state.
pub fn run_scripted_episode(
    game: &Game,
    island: IslandId,
    roster: &[IndividualId],
    seed: u64,
    policies: &mut [Box<dyn ScriptedPolicy>],
) -> Result<(Vec<f64>, GridState)> {
    if policies.len() != roster.len() {
        return Err(Error::arg(format!("{} policies for {} agents", policies.len(), roster.len())));
    }
    let mut state = game.reset(island, roster, seed)?;
    let mut returns = vec![0.0; roster.len()];
    while !state.is_done() {
        let actions: Vec<Action> = policies.iter_mut().enumerate().map(|(slot, p)| p.act(&state, slot)).collect();
        let (rewards, _) = step_in_place(game, &mut state, &actions)?;
        returns.iter_mut().zip(&rewards).for_each(|(a, r)| *a += r);
    }
    Ok((returns, state))
}

/// Same script for every slot.
pub fn uniform_scripts(kind: ScriptKind, game: &Game, n: usize, seed: u64) -> Result<Vec<Box<dyn ScriptedPolicy>>> {
    (0..n).map(|k| scripted_policy(kind, game, seed.wrapping_add(k as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::allelopathy::AllelopathyConfig;
    use crate::games::clamity::{analytic_settle_return, ClamityConfig};

    fn solo() -> (IslandId, Vec<IndividualId>) {
        (IslandId::Solitary { species: 0, replica: 0 }, vec![IndividualId::new(0, 0)])
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["settle-immediately", "settle-at:10", "seek-nutrient", "disperse:6", "pure-a", "pure-b", "uniform-random"] {
            assert_eq!(s.parse::<ScriptKind>().unwrap().to_string(), s);
        }
        assert!("settle-at".parse::<ScriptKind>().is_err());
        assert!("fly".parse::<ScriptKind>().is_err());
    }

    #[test]
    fn game_mismatch_is_a_config_error() {
        let g = Game::Allelopathy(AllelopathyConfig::default());
        assert!(matches!(scripted_policy(ScriptKind::SeekNutrient, &g, 0), Err(Error::Config { .. })));
        let g = Game::Clamity(ClamityConfig::default());
        assert!(scripted_policy(ScriptKind::PureForager { shrub: ShrubType::A }, &g, 0).is_err());
        assert!(scripted_policy(ScriptKind::UniformRandom, &g, 0).is_ok());
    }

    #[test]
    fn settle_immediately_matches_analytic() {
        let cfg = ClamityConfig {
            num_nutrient_patches: 0,
            ..ClamityConfig::default()
        };
        let game = Game::Clamity(cfg.clone());
        let (island, roster) = solo();
        let mut p = uniform_scripts(ScriptKind::SettleImmediately, &game, 1, 0).unwrap();
        let (r, _) = run_scripted_episode(&game, island, &roster, 5, &mut p).unwrap();
        assert!((r[0] - analytic_settle_return(0, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn seek_nutrient_walks_a_shortest_path() {
        let cfg = ClamityConfig::default();
        let game = Game::Clamity(cfg.clone());
        let (island, roster) = solo();
        for seed in 0..5 {
            let mut state = game.reset(island, &roster, seed).unwrap();
            let start = state.agents[0].position;
            let nearest = state
                .positions()
                .filter(|&p| state.terrain(p) == Terrain::Nutrient)
                .map(|p| p.manhattan(start))
                .min()
                .unwrap();
            let mut policy = SeekNutrient;
            let mut steps = 0;
            while state.terrain(state.agents[0].position) != Terrain::Nutrient {
                let a = policy.act(&state, 0);
                step_in_place(&game, &mut state, &[a]).unwrap();
                steps += 1;
            }
            assert_eq!(steps, nearest);
            assert!(steps <= cfg.width + cfg.height);
            let a = policy.act(&state, 0);
            assert_eq!(a, Action::Settle);
        }
    }

    #[test]
    fn uniform_random_replays() {
        let game = Game::Clamity(ClamityConfig::default());
        let state = game.reset(IslandId::Archipelago(0), &[IndividualId::new(0, 0)], 0).unwrap();
        let mut a = scripted_policy(ScriptKind::UniformRandom, &game, 9).unwrap();
        let mut b = scripted_policy(ScriptKind::UniformRandom, &game, 9).unwrap();
        let xs: Vec<_> = (0..50).map(|_| a.act(&state, 0)).collect();
        let ys: Vec<_> = (0..50).map(|_| b.act(&state, 0)).collect();
        assert_eq!(xs, ys);
        assert!(xs.contains(&Action::Settle));
    }

    #[test]
    fn pure_forager_never_switches() {
        let game = Game::Allelopathy(AllelopathyConfig {
            width: 20,
            height: 12,
            episode_length: 300,
            ..AllelopathyConfig::default()
        });
        let roster = vec![IndividualId::new(0, 0), IndividualId::new(1, 0)];
        let mut p: Vec<Box<dyn ScriptedPolicy>> = vec![
            scripted_policy(ScriptKind::PureForager { shrub: ShrubType::A }, &game, 1).unwrap(),
            scripted_policy(ScriptKind::PureForager { shrub: ShrubType::B }, &game, 2).unwrap(),
        ];
        let (returns, state) = run_scripted_episode(&game, IslandId::Archipelago(0), &roster, 4, &mut p).unwrap();
        assert_eq!(game.switch_counts(&state).unwrap(), vec![0, 0]);
        assert!(returns.iter().all(|&r| r > 10.0), "{returns:?}");
    }
}
